//! Element-level reconstruction operators.
//!
//! Every operator is stored as a dense matrix acting on the local degrees of
//! freedom of one cell (see [`LocalDofLayout`]) and producing coefficients in
//! the scaled monomial bases of [`crate::polyspace`].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{CellGeometry, Mesh, Point};
use crate::polyspace::{
    block_diag, dim, embed, face_dim, gradient_map, l2_project_face, nedelec_dim, nedelec_project,
    nonpolynomial_degree, perp_map, CellBasis, FaceBasis, GramFactor, NedelecBasis,
};
use crate::quadrature::{cell_quadrature, face_quadrature};

/// Polynomial degrees supported by the discretisation.
pub const SUPPORTED_DEGREES: [usize; 3] = [0, 1, 2];

/// Ordering of the local unknowns of a cell.
///
/// The element block (Nédélec coefficients) comes first, followed by one
/// block of `2 (k + 1)` coefficients per face in loop order. Each face block
/// is component-major.
#[derive(Clone, Debug)]
pub struct LocalDofLayout {
    pub k: usize,
    pub num_faces: usize,
}

impl LocalDofLayout {
    pub fn new(k: usize, num_faces: usize) -> Self {
        Self { k, num_faces }
    }

    pub fn element_len(&self) -> usize {
        nedelec_dim(self.k)
    }

    pub fn face_block(&self) -> usize {
        2 * face_dim(self.k)
    }

    pub fn face_offset(&self, j: usize) -> usize {
        self.element_len() + j * self.face_block()
    }

    /// Local index of coefficient `i` of component `c` on face `j`.
    pub fn face_dof(&self, j: usize, c: usize, i: usize) -> usize {
        self.face_offset(j) + c * face_dim(self.k) + i
    }

    pub fn len(&self) -> usize {
        self.element_len() + self.num_faces * self.face_block()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weights of the face values in the derived element value used for `k = 0`:
/// `v_T = sum_F w_F v_F` with `w_F = |F| d_TF / (2 |T|)`, which sum to one.
pub fn k0_face_weights(g: &CellGeometry) -> Vec<f64> {
    g.faces
        .iter()
        .map(|f| f.length * f.distance / (2.0 * g.area))
        .collect()
}

/// A quadrature node of a cell with the basis data needed by the nonlinear
/// terms, the norms and the load vectors.
#[derive(Clone, Debug)]
pub struct CellNode {
    pub x: Point,
    pub w: f64,
    /// Values of the `P^{k+1}` basis (the `P^k` basis is the prefix).
    pub phi: DVector<f64>,
    /// Physical gradients of the `P^k` basis.
    pub grad_x: DVector<f64>,
    pub grad_y: DVector<f64>,
}

/// A quadrature node on one face of a cell.
#[derive(Clone, Debug)]
pub struct FaceNode {
    pub x: Point,
    pub w: f64,
    /// Values of the face basis of `P^k(F)`.
    pub psi: DVector<f64>,
    /// Values of the cell `P^k` basis.
    pub phi: DVector<f64>,
}

/// All local operators of one cell for a fixed degree `k`.
#[derive(Clone, Debug)]
pub struct LocalOperators {
    pub cell: usize,
    pub k: usize,
    pub geometry: CellGeometry,
    pub layout: LocalDofLayout,
    /// Basis of `P^{k+1}(T)`.
    pub basis: CellBasis,
    pub face_bases: Vec<FaceBasis>,
    pub nedelec: NedelecBasis,
    /// Mass matrix of the `P^{k+1}(T)` basis.
    pub mass: DMatrix<f64>,
    /// Mass matrices of the face bases.
    pub face_mass: Vec<DMatrix<f64>>,
    /// Element velocity `v_T` in `P^k(T)^2` (derived from faces for `k = 0`).
    pub element_value: DMatrix<f64>,
    /// `G_T^k` in `P^k(T)^{2x2}`.
    pub gradient: DMatrix<f64>,
    /// `D_T^k = tr G_T^k` in `P^k(T)`.
    pub divergence: DMatrix<f64>,
    /// `P_{s,T}^{k+1}` in `P^{k+1}(T)^2`.
    pub stokes_potential: DMatrix<f64>,
    /// `Delta_{dT}^k` restricted to each face, in `P^k(F)^2`.
    pub boundary_difference: Vec<DMatrix<f64>>,
    /// `P_{d,T}^k` in `P^k(T)^2`.
    pub darcy_velocity: DMatrix<f64>,
    /// `pi^{N,k}(P_d - v_T)` in Nédélec coefficients.
    pub darcy_stab_volume: DMatrix<f64>,
    /// `(P_d - v_F)` on each face, in `P^k(F)^2`.
    pub darcy_stab_faces: Vec<DMatrix<f64>>,
    /// Matrix of the Darcy bilinear form `a_{d,T}` (without `nu_T`).
    pub darcy_matrix: DMatrix<f64>,
    /// Matrix of `b_T(., q)` for `q` in `P^k(T)`: `-int_T D_T v q`.
    pub pressure_coupling: DMatrix<f64>,
    /// Integrals of the `P^k(T)` basis functions.
    pub basis_integrals: DVector<f64>,
    pub beta: f64,
    pub lambda: f64,
    /// Quadrature for non-polynomial integrands.
    pub cell_nodes: Vec<CellNode>,
    pub face_nodes: Vec<Vec<FaceNode>>,
}

/// Precomputed integrals of the cell basis used to assemble the operators.
struct CellIntegrals {
    mass: DMatrix<f64>,
    /// `d[j][(a, b)] = int_T d_j phi_a phi_b`.
    d: [DMatrix<f64>; 2],
    stiffness: DMatrix<f64>,
    means: DVector<f64>,
}

impl CellIntegrals {
    fn new(g: &CellGeometry, basis: &CellBasis) -> Result<Self> {
        let n = basis.len();
        let quad = cell_quadrature(g, 2 * basis.degree())?;
        let mut out = Self {
            mass: DMatrix::zeros(n, n),
            d: [DMatrix::zeros(n, n), DMatrix::zeros(n, n)],
            stiffness: DMatrix::zeros(n, n),
            means: DVector::zeros(n),
        };
        for (x, w) in quad.iter() {
            let phi = basis.values(x);
            let (gx, gy) = basis.gradients(x);
            out.mass.ger(w, &phi, &phi, 1.0);
            out.d[0].ger(w, &gx, &phi, 1.0);
            out.d[1].ger(w, &gy, &phi, 1.0);
            out.stiffness.ger(w, &gx, &gx, 1.0);
            out.stiffness.ger(w, &gy, &gy, 1.0);
            out.means.axpy(w, &phi, 1.0);
        }
        Ok(out)
    }
}

fn dense_lu_solve(
    lhs: DMatrix<f64>,
    rhs: &DMatrix<f64>,
    cell: usize,
    what: &'static str,
) -> Result<DMatrix<f64>> {
    lhs.lu()
        .solve(rhs)
        .ok_or(Error::SingularLocalSystem { cell, what })
}

impl LocalOperators {
    pub fn build(mesh: &Mesh, cell: usize, k: usize) -> Result<Self> {
        if !SUPPORTED_DEGREES.contains(&k) {
            return Err(Error::UnsupportedDegree(k));
        }
        let g = mesh.try_cell_geometry(cell)?.clone();
        let layout = LocalDofLayout::new(k, g.num_faces());
        let nloc = layout.len();
        let (nk, nk1, nf) = (dim(k as isize), dim(k as isize + 1), face_dim(k));
        let n_ned = nedelec_dim(k);
        let h = g.diameter;

        let basis = CellBasis::new(&g, k + 1);
        let ints = CellIntegrals::new(&g, &basis)?;
        let mass0 = ints.mass.view((0, 0), (nk, nk)).into_owned();
        let mass0_factor = GramFactor::new(mass0.clone(), cell)?;

        // Face bases, mass matrices and traces of the cell basis.
        let mut face_bases = Vec::with_capacity(g.num_faces());
        let mut face_mass = Vec::with_capacity(g.num_faces());
        let mut face_mass_factor = Vec::with_capacity(g.num_faces());
        let mut traces = Vec::with_capacity(g.num_faces());
        for cf in &g.faces {
            let fg = mesh.face_geometry(cf.face);
            let fb = FaceBasis::new(fg, k);
            let fq = face_quadrature(fg, 2 * k + 2)?;
            let mut mf = DMatrix::zeros(nf, nf);
            let mut tf = DMatrix::zeros(nf, nk1);
            for (x, w) in fq.iter() {
                let psi = fb.values(x);
                mf.ger(w, &psi, &psi, 1.0);
                tf.ger(w, &psi, &basis.values(x), 1.0);
            }
            face_mass_factor.push(GramFactor::new(mf.clone(), cell)?);
            face_mass.push(mf);
            traces.push(tf);
            face_bases.push(fb);
        }

        // Selection of the face unknowns, one (2 nf x nloc) block per face.
        let select_face = |j: usize| {
            let mut s = DMatrix::zeros(2 * nf, nloc);
            s.view_mut((0, layout.face_offset(j)), (2 * nf, 2 * nf))
                .fill_with_identity();
            s
        };

        let nedelec = NedelecBasis::new(k);
        let e = nedelec.embedding().clone();

        // Element value v_T.
        let mut element_value = DMatrix::zeros(2 * nk, nloc);
        if k > 0 {
            element_value
                .view_mut((0, 0), (2 * nk, n_ned))
                .copy_from(&e);
        } else {
            for (j, w) in k0_face_weights(&g).into_iter().enumerate() {
                for c in 0..2 {
                    element_value[(c, layout.face_dof(j, c, 0))] = w;
                }
            }
        }

        // Gradient G_T^k.
        let mut rhs = DMatrix::zeros(4 * nk, nloc);
        for i in 0..2 {
            let vt_i = element_value.rows(i * nk, nk);
            for j in 0..2 {
                let row = (2 * i + j) * nk;
                let dj = ints.d[j].view((0, 0), (nk, nk));
                let mut block = rhs.rows_mut(row, nk);
                block -= dj * vt_i;
                for (fj, cf) in g.faces.iter().enumerate() {
                    let nj = cf.normal[j];
                    for c in 0..nf {
                        let col = layout.face_dof(fj, i, c);
                        for a in 0..nk {
                            block[(a, col)] += nj * traces[fj][(c, a)];
                        }
                    }
                }
            }
        }
        let mut gradient = DMatrix::zeros(4 * nk, nloc);
        for b in 0..4 {
            let sol = mass0_factor.solve(&rhs.rows(b * nk, nk).into_owned());
            gradient.rows_mut(b * nk, nk).copy_from(&sol);
        }
        let divergence = gradient.rows(0, nk) + gradient.rows(3 * nk, nk);

        // Stokes potential P_{s,T}^{k+1}.
        let beta = 1.0 / (h * h * g.area);
        let stiff = &ints.stiffness + beta * &ints.means * ints.means.transpose();
        let stiff_factor =
            GramFactor::new(stiff, cell).map_err(|_| Error::SingularLocalSystem {
                cell,
                what: "Stokes potential",
            })?;
        let mut stokes_potential = DMatrix::zeros(2 * nk1, nloc);
        for i in 0..2 {
            let mut rhs = DMatrix::zeros(nk1, nloc);
            for j in 0..2 {
                let dj = ints.d[j].view((0, 0), (nk1, nk));
                rhs += dj * gradient.rows((2 * i + j) * nk, nk);
            }
            let mean_vt = ints.means.rows(0, nk).transpose() * element_value.rows(i * nk, nk);
            rhs += beta * &ints.means * mean_vt;
            stokes_potential
                .rows_mut(i * nk1, nk1)
                .copy_from(&stiff_factor.solve(&rhs));
        }

        // L2 projection onto N^k(T) of P^m(T)^2 coefficients, m in {k, k+1}.
        let ned_factor = if k > 0 {
            Some(GramFactor::new(
                crate::polyspace::nedelec_gram(&nedelec, &mass0),
                cell,
            )?)
        } else {
            None
        };
        let nedelec_projection = |c: &DMatrix<f64>, m: usize| -> DMatrix<f64> {
            match &ned_factor {
                None => DMatrix::zeros(0, c.ncols()),
                Some(f) => {
                    let nm = dim(m as isize);
                    let cross = ints.mass.view((0, 0), (nk, nm)).into_owned();
                    f.solve(&(e.transpose() * block_diag(&cross, 2) * c))
                }
            }
        };

        // Boundary difference operator.
        let diff = &stokes_potential - embed(&element_value, 2, k, k + 1);
        let corrected =
            &stokes_potential - embed(&(&e * nedelec_projection(&diff, k + 1)), 2, k, k + 1);
        let mut boundary_difference = Vec::with_capacity(g.num_faces());
        for j in 0..g.num_faces() {
            let mut d = DMatrix::zeros(2 * nf, nloc);
            for c in 0..2 {
                let tr = &traces[j] * corrected.rows(c * nk1, nk1);
                d.rows_mut(c * nf, nf)
                    .copy_from(&face_mass_factor[j].solve(&tr));
            }
            boundary_difference.push(d - select_face(j));
        }

        // Darcy velocity P_{d,T}^k, tested against h grad P^{k+1} (+) xi^perp P^{k-1}.
        let grad_tests = gradient_map(k + 1, 1.0);
        let n_grad = nk1 - 1;
        let n_perp = dim(k as isize - 1);
        let mut tests = DMatrix::zeros(2 * nk, n_grad + n_perp);
        tests
            .columns_mut(0, n_grad)
            .copy_from(&grad_tests.columns(1, n_grad));
        if n_perp > 0 {
            tests.columns_mut(n_grad, n_perp).copy_from(&perp_map(k));
        }
        let mass0_vec = block_diag(&mass0, 2);
        let lhs = tests.transpose() * &mass0_vec;
        let mut rhs = DMatrix::zeros(n_grad + n_perp, nloc);
        {
            // -int_T D (h phi_a) + sum_F int_F (v_F . n_TF) (h phi_a), a >= 1.
            let m = ints.mass.view((1, 0), (n_grad, nk));
            rhs.rows_mut(0, n_grad).copy_from(&(-h * (m * &divergence)));
            for (fj, cf) in g.faces.iter().enumerate() {
                for i in 0..2 {
                    let ni = cf.normal[i];
                    for c in 0..nf {
                        let col = layout.face_dof(fj, i, c);
                        for a in 1..nk1 {
                            rhs[(a - 1, col)] += h * ni * traces[fj][(c, a)];
                        }
                    }
                }
            }
            if n_perp > 0 {
                let perp = tests.columns(n_grad, n_perp).transpose() * &mass0_vec * &element_value;
                rhs.rows_mut(n_grad, n_perp).copy_from(&perp);
            }
        }
        let darcy_velocity = dense_lu_solve(lhs, &rhs, cell, "Darcy velocity")?;

        // Darcy stabilisation.
        let lambda = h * h * g.num_faces() as f64 / g.area;
        let darcy_stab_volume = nedelec_projection(&(&darcy_velocity - &element_value), k);
        let mut darcy_matrix = darcy_velocity.transpose() * &mass0_vec * &darcy_velocity;
        if k > 0 {
            let gram_n = crate::polyspace::nedelec_gram(&nedelec, &mass0);
            darcy_matrix += lambda * darcy_stab_volume.transpose() * gram_n * &darcy_stab_volume;
        }
        let mut darcy_stab_faces = Vec::with_capacity(g.num_faces());
        for (j, cf) in g.faces.iter().enumerate() {
            let mut r = DMatrix::zeros(2 * nf, nloc);
            let tr0 = traces[j].columns(0, nk);
            for c in 0..2 {
                let tr = tr0 * darcy_velocity.rows(c * nk, nk);
                r.rows_mut(c * nf, nf)
                    .copy_from(&face_mass_factor[j].solve(&tr));
            }
            let r = r - select_face(j);
            if !cf.is_boundary {
                darcy_matrix += h * r.transpose() * block_diag(&face_mass[j], 2) * &r;
            }
            darcy_stab_faces.push(r);
        }
        // Symmetrise away round-off.
        let darcy_matrix = 0.5 * (&darcy_matrix + darcy_matrix.transpose());

        let pressure_coupling = -(&mass0 * &divergence);
        let basis_integrals = ints.means.rows(0, nk).into_owned();

        // Quadrature nodes for non-polynomial integrands.
        let qdeg = nonpolynomial_degree(k);
        let basis_k = CellBasis::new(&g, k);
        let cell_nodes = cell_quadrature(&g, qdeg)?
            .iter()
            .map(|(x, w)| {
                let (gx, gy) = basis_k.gradients(x);
                CellNode {
                    x: *x,
                    w,
                    phi: basis.values(x),
                    grad_x: gx,
                    grad_y: gy,
                }
            })
            .collect();
        let mut face_nodes = Vec::with_capacity(g.num_faces());
        for (cf, fb) in g.faces.iter().zip(&face_bases) {
            let fq = face_quadrature(mesh.face_geometry(cf.face), qdeg)?;
            face_nodes.push(
                fq.iter()
                    .map(|(x, w)| FaceNode {
                        x: *x,
                        w,
                        psi: fb.values(x),
                        phi: basis_k.values(x),
                    })
                    .collect(),
            );
        }

        Ok(Self {
            cell,
            k,
            geometry: g,
            layout,
            basis,
            face_bases,
            nedelec,
            mass: ints.mass,
            face_mass,
            element_value,
            gradient,
            divergence,
            stokes_potential,
            boundary_difference,
            darcy_velocity,
            darcy_stab_volume,
            darcy_stab_faces,
            darcy_matrix,
            pressure_coupling,
            basis_integrals,
            beta,
            lambda,
            cell_nodes,
            face_nodes,
        })
    }

    pub fn num_local_dofs(&self) -> usize {
        self.layout.len()
    }

    /// Dimension of `P^k(T)`.
    pub fn scalar_dim(&self) -> usize {
        dim(self.k as isize)
    }

    pub fn mass_k(&self) -> DMatrix<f64> {
        let nk = self.scalar_dim();
        self.mass.view((0, 0), (nk, nk)).into_owned()
    }

    /// Builds the local interpolate of `u`: Nédélec projection on the cell
    /// and L2 projections on the faces.
    pub fn interpolate(
        &self,
        mesh: &Mesh,
        u: impl Fn(&Point) -> [f64; 2],
        quad_degree: usize,
    ) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(self.num_local_dofs());
        let ne = self.layout.element_len();
        if ne > 0 {
            let c = nedelec_project(&self.geometry, self.cell, self.k, &u, quad_degree)?;
            v.rows_mut(0, ne).copy_from(&c);
        }
        for (j, cf) in self.geometry.faces.iter().enumerate() {
            let c = l2_project_face(
                mesh.face_geometry(cf.face),
                cf.face,
                self.k,
                &u,
                quad_degree,
            )?;
            v.rows_mut(self.layout.face_offset(j), self.layout.face_block())
                .copy_from(&c);
        }
        Ok(v)
    }

    /// `max_Psi |int_T (P_d v - v_T) . Psi|` over the monomial basis of
    /// `P^{k-1}(T)^2`; zero for `k = 0`.
    pub fn darcy_orthogonality_residual(&self, v: &DVector<f64>) -> f64 {
        if self.k == 0 {
            return 0.0;
        }
        let nk = self.scalar_dim();
        let nlow = dim(self.k as isize - 1);
        let diff = (&self.darcy_velocity - &self.element_value) * v;
        let mass = self.mass_k();
        let mut max: f64 = 0.0;
        for c in 0..2 {
            let m = mass.rows(0, nlow) * diff.rows(c * nk, nk);
            max = m.iter().fold(max, |acc, x| acc.max(x.abs()));
        }
        max
    }
}

/// Builds the local operators of every cell, in parallel.
pub fn build_all(mesh: &Mesh, k: usize) -> Result<Vec<LocalOperators>> {
    (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| LocalOperators::build(mesh, c, k))
        .collect()
}
