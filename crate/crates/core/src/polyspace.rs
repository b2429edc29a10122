//! Scaled monomial bases on cells and faces, the Nédélec space and the
//! L2-orthogonal projectors onto them.
//!
//! Cell monomials are `((x - x_T)/h_T)^a ((y - y_T)/h_T)^b`, ordered by total
//! degree and, within a degree, by decreasing `a`. The ordering is
//! hierarchical: the first `dim(m)` functions of a degree-`m'` basis span
//! `P^m` for every `m <= m'`, so lower-degree coefficient vectors embed by
//! zero padding.
//!
//! Vector- and tensor-valued coefficient vectors are stored component-major:
//! component `c` of a `P^m` field occupies entries `c * dim(m) .. (c + 1) * dim(m)`.
//! Tensor components are ordered `(0,0), (0,1), (1,0), (1,1)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::mesh::{CellGeometry, FaceGeometry, Point};
use crate::quadrature::{cell_quadrature, face_quadrature};

/// Dimension of `P^m` in two variables; `P^{-1} = {0}`.
pub fn dim(m: isize) -> usize {
    if m < 0 {
        0
    } else {
        let m = m as usize;
        (m + 1) * (m + 2) / 2
    }
}

/// Dimension of `P^m` on a face.
pub fn face_dim(m: usize) -> usize {
    m + 1
}

/// Dimension of the Nédélec space `N^k(T) = grad P^k (+) x^perp P^{k-1}`.
pub fn nedelec_dim(k: usize) -> usize {
    if k == 0 {
        0
    } else {
        dim(k as isize) - 1 + dim(k as isize - 1)
    }
}

/// Position of the monomial `xi^a eta^b` in the hierarchical ordering.
pub fn monomial_index(a: usize, b: usize) -> usize {
    let d = a + b;
    dim(d as isize - 1) + (d - a)
}

/// Exponents `(a, b)` of the monomials spanning `P^m`.
pub fn exponents(m: usize) -> Vec<(usize, usize)> {
    (0..=m)
        .flat_map(|d| (0..=d).rev().map(move |a| (a, d - a)))
        .collect()
}

/// Scaled monomial basis of `P^m(T)`.
#[derive(Clone, Debug)]
pub struct CellBasis {
    center: Point,
    scale: f64,
    degree: usize,
    exps: Vec<(usize, usize)>,
}

impl CellBasis {
    pub fn new(cell: &CellGeometry, degree: usize) -> Self {
        Self::with_frame(cell.centroid, cell.diameter, degree)
    }

    pub fn with_frame(center: Point, scale: f64, degree: usize) -> Self {
        Self {
            center,
            scale,
            degree,
            exps: exponents(degree),
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn center(&self) -> Point {
        self.center
    }

    fn powers(&self, x: &Point) -> (Vec<f64>, Vec<f64>) {
        let s = (x - self.center) / self.scale;
        let mut px = vec![1.0; self.degree + 1];
        let mut py = vec![1.0; self.degree + 1];
        for i in 1..=self.degree {
            px[i] = px[i - 1] * s.x;
            py[i] = py[i - 1] * s.y;
        }
        (px, py)
    }

    pub fn values(&self, x: &Point) -> DVector<f64> {
        let (px, py) = self.powers(x);
        DVector::from_iterator(self.len(), self.exps.iter().map(|&(a, b)| px[a] * py[b]))
    }

    /// Physical gradients `(d/dx, d/dy)` of every basis function.
    pub fn gradients(&self, x: &Point) -> (DVector<f64>, DVector<f64>) {
        let (px, py) = self.powers(x);
        let inv = 1.0 / self.scale;
        let gx = self.exps.iter().map(|&(a, b)| {
            if a == 0 {
                0.0
            } else {
                a as f64 * px[a - 1] * py[b] * inv
            }
        });
        let gy = self.exps.iter().map(|&(a, b)| {
            if b == 0 {
                0.0
            } else {
                b as f64 * px[a] * py[b - 1] * inv
            }
        });
        (
            DVector::from_iterator(self.len(), gx),
            DVector::from_iterator(self.len(), gy),
        )
    }
}

/// Scaled monomial basis of `P^m(F)` in the arclength coordinate
/// `s = (x - x_F) . t_F / |F|`.
#[derive(Clone, Debug)]
pub struct FaceBasis {
    midpoint: Point,
    tangent: Point,
    length: f64,
    degree: usize,
}

impl FaceBasis {
    pub fn new(face: &FaceGeometry, degree: usize) -> Self {
        Self {
            midpoint: face.midpoint,
            tangent: face.tangent,
            length: face.length,
            degree,
        }
    }

    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self, x: &Point) -> DVector<f64> {
        let s = (x - self.midpoint).dot(&self.tangent) / self.length;
        let mut v = DVector::from_element(self.len(), 1.0);
        for i in 1..self.len() {
            v[i] = v[i - 1] * s;
        }
        v
    }
}

/// Coefficients of the gradient of each `P^m` monomial, expressed in `P^{m-1}^2`.
///
/// Column `j` holds the gradient of basis function `j`; derivatives are taken
/// with respect to the scaled coordinates and divided by `scale`, so passing
/// the cell diameter gives physical gradients.
pub fn gradient_map(m: usize, scale: f64) -> DMatrix<f64> {
    let lower = dim(m as isize - 1);
    let mut g = DMatrix::zeros(2 * lower, dim(m as isize));
    for (j, &(a, b)) in exponents(m).iter().enumerate() {
        if a > 0 {
            g[(monomial_index(a - 1, b), j)] = a as f64 / scale;
        }
        if b > 0 {
            g[(lower + monomial_index(a, b - 1), j)] = b as f64 / scale;
        }
    }
    g
}

/// Coefficients of `xi^perp phi` in `P^m^2` for each monomial `phi` of
/// `P^{m-1}`, with `(y1, y2)^perp = (y2, -y1)` (rotation by -pi/2).
pub fn perp_map(m: usize) -> DMatrix<f64> {
    let n = dim(m as isize);
    let lower = if m == 0 { 0 } else { dim(m as isize - 1) };
    let mut p = DMatrix::zeros(2 * n, lower);
    if m == 0 {
        return p;
    }
    for (j, &(a, b)) in exponents(m - 1).iter().enumerate() {
        p[(monomial_index(a, b + 1), j)] = 1.0;
        p[(n + monomial_index(a + 1, b), j)] = -1.0;
    }
    p
}

/// Zero-pads component-major coefficient rows from `P^from` to `P^to`.
pub fn embed(coeffs: &DMatrix<f64>, components: usize, from: usize, to: usize) -> DMatrix<f64> {
    let (nf, nt) = (dim(from as isize), dim(to as isize));
    assert_eq!(coeffs.nrows(), components * nf);
    let mut out = DMatrix::zeros(components * nt, coeffs.ncols());
    for c in 0..components {
        out.rows_mut(c * nt, nf.min(nt))
            .copy_from(&coeffs.rows(c * nf, nf.min(nt)));
    }
    out
}

/// Nédélec basis of `N^k(T)`, stored as its embedding into `P^k(T)^2`.
///
/// The first `dim(k) - 1` functions are the scaled gradients of the
/// non-constant monomials of `P^k`; the remaining `dim(k-1)` are
/// `xi^perp P^{k-1}`.
#[derive(Clone, Debug)]
pub struct NedelecBasis {
    degree: usize,
    embedding: DMatrix<f64>,
}

impl NedelecBasis {
    pub fn new(k: usize) -> Self {
        let n = dim(k as isize);
        let mut embedding = DMatrix::zeros(2 * n, nedelec_dim(k));
        if k > 0 {
            let grads = embed(&gradient_map(k, 1.0), 2, k - 1, k);
            embedding
                .columns_mut(0, n - 1)
                .copy_from(&grads.columns(1, n - 1));
            embedding
                .columns_mut(n - 1, dim(k as isize - 1))
                .copy_from(&perp_map(k));
        }
        Self {
            degree: k,
            embedding,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.embedding.ncols() == 0
    }

    /// Matrix mapping Nédélec coefficients to `P^k(T)^2` coefficients.
    pub fn embedding(&self) -> &DMatrix<f64> {
        &self.embedding
    }
}

/// Cholesky factorisation of a Gram matrix.
#[derive(Clone, Debug)]
pub struct GramFactor {
    chol: Option<Cholesky<f64, Dyn>>,
    condition_estimate: f64,
}

impl GramFactor {
    /// Factorises `gram`; `cell` only labels the error.
    pub fn new(gram: DMatrix<f64>, cell: usize) -> Result<Self> {
        if gram.nrows() == 0 {
            return Ok(Self {
                chol: None,
                condition_estimate: 1.0,
            });
        }
        let chol = Cholesky::new(gram).ok_or(Error::SingularGram { cell })?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| {
            (lo.min(d), hi.max(d))
        });
        if !(lo > 0.0) || !lo.is_finite() {
            return Err(Error::SingularGram { cell });
        }
        Ok(Self {
            chol: Some(chol),
            condition_estimate: (hi / lo).powi(2),
        })
    }

    /// Cheap lower bound for the spectral condition number, from the
    /// Cholesky diagonal.
    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.chol {
            Some(c) => c.solve(rhs),
            None => DMatrix::zeros(0, rhs.ncols()),
        }
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            Some(c) => c.solve(rhs),
            None => DVector::zeros(0),
        }
    }
}

/// Block-diagonal replication of a scalar matrix over `n` components.
pub fn block_diag(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(n * r, n * c);
    for i in 0..n {
        out.view_mut((i * r, i * c), (r, c)).copy_from(m);
    }
    out
}

/// Default quadrature degree for non-polynomial integrands against `P^m`.
pub fn nonpolynomial_degree(m: usize) -> usize {
    2 * (m + 1) + 4
}

/// L2-orthogonal projection of an `N`-component field onto `P^m(T)^N`.
///
/// Returns component-major coefficients in the [`CellBasis`] of `cell`.
pub fn l2_project_cell<const N: usize>(
    cell: &CellGeometry,
    cell_id: usize,
    m: usize,
    f: impl Fn(&Point) -> [f64; N],
    quad_degree: usize,
) -> Result<DVector<f64>> {
    let basis = CellBasis::new(cell, m);
    let quad = cell_quadrature(cell, quad_degree.max(2 * m))?;
    let n = basis.len();
    let mut gram = DMatrix::zeros(n, n);
    let mut rhs = DMatrix::zeros(n, N);
    for (x, w) in quad.iter() {
        let phi = basis.values(x);
        gram.ger(w, &phi, &phi, 1.0);
        let fx = f(x);
        for c in 0..N {
            rhs.column_mut(c).axpy(w * fx[c], &phi, 1.0);
        }
    }
    let coeffs = GramFactor::new(gram, cell_id)?.solve(&rhs);
    Ok(DVector::from_iterator(N * n, coeffs.iter().copied()))
}

/// L2-orthogonal projection of an `N`-component field onto `P^k(F)^N`.
pub fn l2_project_face<const N: usize>(
    face: &FaceGeometry,
    face_id: usize,
    k: usize,
    f: impl Fn(&Point) -> [f64; N],
    quad_degree: usize,
) -> Result<DVector<f64>> {
    let basis = FaceBasis::new(face, k);
    let quad = face_quadrature(face, quad_degree.max(2 * k))?;
    let n = basis.len();
    let mut gram = DMatrix::zeros(n, n);
    let mut rhs = DMatrix::zeros(n, N);
    for (x, w) in quad.iter() {
        let psi = basis.values(x);
        gram.ger(w, &psi, &psi, 1.0);
        let fx = f(x);
        for c in 0..N {
            rhs.column_mut(c).axpy(w * fx[c], &psi, 1.0);
        }
    }
    let coeffs = GramFactor::new(gram, face_id)?.solve(&rhs);
    Ok(DVector::from_iterator(N * n, coeffs.iter().copied()))
}

/// Gram matrix of the Nédélec basis, `E^T diag(M, M) E` with `M` the `P^k`
/// mass matrix.
pub fn nedelec_gram(nedelec: &NedelecBasis, mass_k: &DMatrix<f64>) -> DMatrix<f64> {
    let e = nedelec.embedding();
    e.transpose() * block_diag(mass_k, 2) * e
}

/// L2-orthogonal projection of a vector field onto `N^k(T)`.
///
/// Returns coefficients in the [`NedelecBasis`]; empty for `k = 0`.
pub fn nedelec_project(
    cell: &CellGeometry,
    cell_id: usize,
    k: usize,
    v: impl Fn(&Point) -> [f64; 2],
    quad_degree: usize,
) -> Result<DVector<f64>> {
    let nedelec = NedelecBasis::new(k);
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    let basis = CellBasis::new(cell, k);
    let quad = cell_quadrature(cell, quad_degree.max(2 * k))?;
    let n = basis.len();
    let mut mass = DMatrix::zeros(n, n);
    let mut moments = DVector::zeros(2 * n);
    for (x, w) in quad.iter() {
        let phi = basis.values(x);
        mass.ger(w, &phi, &phi, 1.0);
        let vx = v(x);
        moments.rows_mut(0, n).axpy(w * vx[0], &phi, 1.0);
        moments.rows_mut(n, n).axpy(w * vx[1], &phi, 1.0);
    }
    let gram = nedelec_gram(&nedelec, &mass);
    let rhs = nedelec.embedding().transpose() * moments;
    Ok(GramFactor::new(gram, cell_id)?.solve_vec(&rhs))
}

/// Evaluates component-major `P^m(T)^N` coefficients at `x`.
pub fn eval_cell<const N: usize>(basis: &CellBasis, coeffs: &DVector<f64>, x: &Point) -> [f64; N] {
    let phi = basis.values(x);
    let n = basis.len();
    let per = coeffs.len() / N;
    std::array::from_fn(|c| (0..per.min(n)).map(|i| coeffs[c * per + i] * phi[i]).sum())
}
