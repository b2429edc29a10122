//! Global unknowns, assembly of the nonlinear residual and its Jacobian, and
//! the Newton solver.
//!
//! The global vector is laid out as
//! `[element velocity blocks | interior face blocks | pressure blocks | multiplier]`.
//! Boundary faces carry prescribed (Dirichlet) values and are not unknowns.
//! The scalar multiplier enforces the zero-mean pressure constraint and keeps
//! the saddle-point Jacobian square and symmetric.

mod law;
mod newton;

use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

pub use law::{dsigma, dsigma_flat, sigma, sigma_flat, Exponent, JACOBIAN_EPS};
pub use newton::{
    bordered_solve, newton_solve, solve, LinearSolveStats, SolveReport, SolverOptions,
};

use crate::error::{Error, Result};
use crate::localops::{build_all, LocalOperators};
use crate::mesh::{Mesh, Point};
use crate::polyspace::{
    dim, face_dim, l2_project_face, nedelec_dim, nonpolynomial_degree, CellBasis,
};
use crate::quadrature::cell_quadrature;

/// Numbering of the global unknowns.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub k: usize,
    num_cells: usize,
    /// Global offset of each face block; `None` for boundary faces.
    face_offsets: Vec<Option<usize>>,
    num_velocity: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh, k: usize) -> Self {
        let ne = nedelec_dim(k);
        let fb = 2 * face_dim(k);
        let mut next = mesh.num_cells() * ne;
        let face_offsets = mesh
            .faces()
            .iter()
            .map(|f| {
                if f.is_boundary() {
                    None
                } else {
                    let o = next;
                    next += fb;
                    Some(o)
                }
            })
            .collect();
        Self {
            k,
            num_cells: mesh.num_cells(),
            face_offsets,
            num_velocity: next,
        }
    }

    pub fn element_offset(&self, cell: usize) -> usize {
        cell * nedelec_dim(self.k)
    }

    pub fn face_offset(&self, face: usize) -> Option<usize> {
        self.face_offsets[face]
    }

    pub fn num_velocity(&self) -> usize {
        self.num_velocity
    }

    pub fn num_pressure(&self) -> usize {
        self.num_cells * dim(self.k as isize)
    }

    pub fn pressure_offset(&self, cell: usize) -> usize {
        self.num_velocity + cell * dim(self.k as isize)
    }

    pub fn multiplier_index(&self) -> usize {
        self.num_velocity + self.num_pressure()
    }

    pub fn len(&self) -> usize {
        self.multiplier_index() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Global index of each local velocity unknown of `ops`' cell.
    pub fn local_to_global(&self, ops: &LocalOperators) -> Vec<Option<usize>> {
        let ne = ops.layout.element_len();
        let fb = ops.layout.face_block();
        let mut out = Vec::with_capacity(ops.num_local_dofs());
        let eo = self.element_offset(ops.cell);
        out.extend((0..ne).map(|i| Some(eo + i)));
        for cf in &ops.geometry.faces {
            match self.face_offsets[cf.face] {
                Some(o) => out.extend((0..fb).map(|i| Some(o + i))),
                None => out.extend(std::iter::repeat_n(None, fb)),
            }
        }
        out
    }
}

/// Free velocity unknowns: element blocks followed by interior-face blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridVector(pub DVector<f64>);

/// Broken `P^k` pressure coefficients and the zero-mean multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct PressureVector {
    pub coeffs: DVector<f64>,
    pub multiplier: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteState {
    pub velocity: HybridVector,
    pub pressure: PressureVector,
}

impl DiscreteState {
    pub fn zeros(dofs: &DofMap) -> Self {
        Self {
            velocity: HybridVector(DVector::zeros(dofs.num_velocity())),
            pressure: PressureVector {
                coeffs: DVector::zeros(dofs.num_pressure()),
                multiplier: 0.0,
            },
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let (nv, np) = (self.velocity.0.len(), self.pressure.coeffs.len());
        let mut x = DVector::zeros(nv + np + 1);
        x.rows_mut(0, nv).copy_from(&self.velocity.0);
        x.rows_mut(nv, np).copy_from(&self.pressure.coeffs);
        x[nv + np] = self.pressure.multiplier;
        x
    }

    pub fn from_vector(dofs: &DofMap, x: &DVector<f64>) -> Self {
        let (nv, np) = (dofs.num_velocity(), dofs.num_pressure());
        Self {
            velocity: HybridVector(x.rows(0, nv).into_owned()),
            pressure: PressureVector {
                coeffs: x.rows(nv, np).into_owned(),
                multiplier: x[nv + np],
            },
        }
    }
}

/// Piecewise-constant coefficients and the flow exponent.
#[derive(Clone, Debug)]
pub struct Coefficients {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub r: Exponent,
}

impl Coefficients {
    pub fn uniform(mesh: &Mesh, mu: f64, nu: f64, r: f64) -> Result<Self> {
        Self::new(vec![mu; mesh.num_cells()], vec![nu; mesh.num_cells()], r)
    }

    pub fn new(mu: Vec<f64>, nu: Vec<f64>, r: f64) -> Result<Self> {
        let r = Exponent::new(r)?;
        if mu.len() != nu.len() {
            return Err(Error::InvalidParameters("mu and nu lengths differ".into()));
        }
        if mu.iter().chain(&nu).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameters(
                "mu and nu must be finite and non-negative".into(),
            ));
        }
        if mu.iter().zip(&nu).any(|(m, n)| *m == 0.0 && *n == 0.0) {
            return Err(Error::InvalidParameters(
                "mu and nu cannot both vanish".into(),
            ));
        }
        Ok(Self { mu, nu, r })
    }

    /// Smallest viscosity, the lower bound entering the error constant.
    pub fn mu_min(&self) -> f64 {
        self.mu.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Prescribed values on boundary faces (`P^k(F)^2` coefficients).
#[derive(Clone, Debug)]
pub struct DirichletData {
    pub blocks: Vec<Option<DVector<f64>>>,
}

impl DirichletData {
    pub fn homogeneous(mesh: &Mesh, k: usize) -> Self {
        let fb = 2 * face_dim(k);
        Self {
            blocks: mesh
                .faces()
                .iter()
                .map(|f| f.is_boundary().then(|| DVector::zeros(fb)))
                .collect(),
        }
    }

    /// Face L2 projections of `u` on the boundary faces.
    pub fn from_field(
        mesh: &Mesh,
        k: usize,
        u: impl Fn(&Point) -> [f64; 2],
        quad_degree: usize,
    ) -> Result<Self> {
        let blocks = mesh
            .faces()
            .iter()
            .enumerate()
            .map(|(f, face)| {
                if face.is_boundary() {
                    l2_project_face(mesh.face_geometry(f), f, k, &u, quad_degree).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    /// Largest coefficient magnitude over all boundary blocks.
    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .flat_map(|b| b.iter())
            .fold(0.0, |a: f64, x| a.max(x.abs()))
    }
}

/// Jacobian `[[A, c], [c^T, 0]]` with the multiplier border kept apart.
///
/// `A` is singular (constant pressures lie in its kernel); `anchor` is a
/// pressure unknown whose unit vector is not orthogonal to that kernel.
#[derive(Clone, Debug)]
pub struct BorderedJacobian {
    pub block: SparseColMat<usize, f64>,
    pub border: DVector<f64>,
    pub anchor: usize,
}

/// Local residual (and optionally Jacobian) contributions of one cell.
struct LocalContribution {
    velocity: DVector<f64>,
    pressure: DVector<f64>,
    jacobian: Option<DMatrix<f64>>,
}

/// The discrete power-law Brinkman problem on a fixed mesh.
#[derive(Clone, Debug)]
pub struct BrinkmanSystem<'m> {
    mesh: &'m Mesh,
    k: usize,
    ops: Vec<LocalOperators>,
    dofs: DofMap,
    l2g: Vec<Vec<Option<usize>>>,
    coeffs: Coefficients,
    /// `int_T f . P_d phi_i` for each local velocity unknown.
    load: Vec<DVector<f64>>,
    /// `int_T g q_a` for the `P^k(T)` basis.
    mass_load: Vec<DVector<f64>>,
    dirichlet: DirichletData,
}

impl<'m> BrinkmanSystem<'m> {
    /// Builds the local operators and an unforced problem with homogeneous
    /// boundary conditions.
    pub fn new(mesh: &'m Mesh, k: usize, coeffs: Coefficients) -> Result<Self> {
        let ops = build_all(mesh, k)?;
        Self::with_operators(mesh, k, ops, coeffs)
    }

    pub fn with_operators(
        mesh: &'m Mesh,
        k: usize,
        ops: Vec<LocalOperators>,
        coeffs: Coefficients,
    ) -> Result<Self> {
        if coeffs.mu.len() != mesh.num_cells() {
            return Err(Error::InvalidParameters(format!(
                "{} coefficient values for {} cells",
                coeffs.mu.len(),
                mesh.num_cells()
            )));
        }
        let dofs = DofMap::new(mesh, k);
        let l2g = ops.iter().map(|o| dofs.local_to_global(o)).collect();
        let load = ops
            .iter()
            .map(|o| DVector::zeros(o.num_local_dofs()))
            .collect();
        let mass_load = ops.iter().map(|o| DVector::zeros(o.scalar_dim())).collect();
        Ok(Self {
            mesh,
            k,
            ops,
            dofs,
            l2g,
            coeffs,
            load,
            mass_load,
            dirichlet: DirichletData::homogeneous(mesh, k),
        })
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.mesh
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn operators(&self) -> &[LocalOperators] {
        &self.ops
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coeffs
    }

    pub fn dirichlet(&self) -> &DirichletData {
        &self.dirichlet
    }

    pub fn set_exponent(&mut self, r: Exponent) {
        self.coeffs.r = r;
    }

    pub fn set_dirichlet(&mut self, data: DirichletData) {
        self.dirichlet = data;
    }

    /// Sets the momentum source `f` (tested against `P_{d,h}^k v`) and the
    /// mass source `g`.
    pub fn set_sources(
        &mut self,
        f: impl Fn(&Point) -> [f64; 2] + Sync,
        g: impl Fn(&Point) -> f64 + Sync,
    ) {
        let (load, mass_load): (Vec<_>, Vec<_>) = self
            .ops
            .par_iter()
            .map(|o| {
                let nk = o.scalar_dim();
                let basis = CellBasis::new(&o.geometry, o.k);
                let nodes = cell_quadrature(&o.geometry, self.source_degree())
                    .expect("source quadrature degree is supported");
                let mut fm = DVector::zeros(2 * nk);
                let mut gm = DVector::zeros(nk);
                for (x, w) in nodes.iter() {
                    let phi = basis.values(x);
                    let fx = f(x);
                    fm.rows_mut(0, nk).axpy(w * fx[0], &phi, 1.0);
                    fm.rows_mut(nk, nk).axpy(w * fx[1], &phi, 1.0);
                    gm.axpy(w * g(x), &phi, 1.0);
                }
                (o.darcy_velocity.transpose() * fm, gm)
            })
            .unzip();
        self.load = load;
        self.mass_load = mass_load;
    }

    /// Local velocity vector of `cell`, combining free unknowns and boundary data.
    pub fn local_velocity(&self, cell: usize, velocity: &[f64]) -> DVector<f64> {
        let ops = &self.ops[cell];
        let mut v = DVector::zeros(ops.num_local_dofs());
        for (i, g) in self.l2g[cell].iter().enumerate() {
            if let Some(g) = g {
                v[i] = velocity[*g];
            }
        }
        let fb = ops.layout.face_block();
        for (j, cf) in ops.geometry.faces.iter().enumerate() {
            if let Some(b) = &self.dirichlet.blocks[cf.face] {
                v.rows_mut(ops.layout.face_offset(j), fb).copy_from(b);
            }
        }
        v
    }

    fn local(&self, cell: usize, x: &DVector<f64>, with_jacobian: bool) -> LocalContribution {
        let ops = &self.ops[cell];
        let v = self.local_velocity(cell, x.as_slice());
        let nk = ops.scalar_dim();
        let nf = face_dim(self.k);
        let nloc = ops.num_local_dofs();
        let (mu, nu, r) = (
            self.coeffs.mu[cell],
            self.coeffs.nu[cell],
            self.coeffs.r.value(),
        );
        let po = self.dofs.pressure_offset(cell);
        let p = x.rows(po, nk);
        let lambda = x[self.dofs.multiplier_index()];

        let mut res = DVector::zeros(nloc);
        let mut jac = with_jacobian.then(|| DMatrix::zeros(nloc, nloc));

        if mu > 0.0 {
            // Consistent term int_T sigma(G v) : G w.
            let gv = &ops.gradient * &v;
            let mut rc = DVector::zeros(4 * nk);
            let mut kc = with_jacobian.then(|| DMatrix::zeros(4 * nk, 4 * nk));
            for node in &ops.cell_nodes {
                let phi = node.phi.rows(0, nk);
                let tau: [f64; 4] = std::array::from_fn(|c| gv.rows(c * nk, nk).dot(&phi));
                let s = sigma_flat(&tau, mu, r);
                for c in 0..4 {
                    rc.rows_mut(c * nk, nk).axpy(node.w * s[c], &phi, 1.0);
                }
                if let Some(kc) = kc.as_mut() {
                    let ds = dsigma_flat(&tau, mu, r);
                    let pp = &phi * phi.transpose();
                    for a in 0..4 {
                        for b in 0..4 {
                            let mut blk = kc.view_mut((a * nk, b * nk), (nk, nk));
                            blk += (node.w * ds[a][b]) * &pp;
                        }
                    }
                }
            }
            res += ops.gradient.transpose() * &rc;
            if let (Some(j), Some(kc)) = (jac.as_mut(), kc.as_ref()) {
                *j += ops.gradient.transpose() * kc * &ops.gradient;
            }

            // Stabilisation h_T^{1-r} int_dT sigma(Delta v) . Delta w.
            let scale = ops.geometry.diameter.powf(1.0 - r);
            for (dop, nodes) in ops.boundary_difference.iter().zip(&ops.face_nodes) {
                let dv = dop * &v;
                let mut rf = DVector::zeros(2 * nf);
                let mut kf = with_jacobian.then(|| DMatrix::zeros(2 * nf, 2 * nf));
                for node in nodes {
                    let psi = &node.psi;
                    let delta: [f64; 2] = std::array::from_fn(|c| dv.rows(c * nf, nf).dot(psi));
                    let s = sigma_flat(&delta, mu, r);
                    for c in 0..2 {
                        rf.rows_mut(c * nf, nf).axpy(node.w * s[c], psi, 1.0);
                    }
                    if let Some(kf) = kf.as_mut() {
                        let ds = dsigma_flat(&delta, mu, r);
                        let pp = psi * psi.transpose();
                        for a in 0..2 {
                            for b in 0..2 {
                                let mut blk = kf.view_mut((a * nf, b * nf), (nf, nf));
                                blk += (node.w * ds[a][b]) * &pp;
                            }
                        }
                    }
                }
                res += scale * dop.transpose() * rf;
                if let (Some(j), Some(kf)) = (jac.as_mut(), kf.as_ref()) {
                    *j += scale * dop.transpose() * kf * dop;
                }
            }
        }

        if nu > 0.0 {
            res += nu * &ops.darcy_matrix * &v;
            if let Some(j) = jac.as_mut() {
                *j += nu * &ops.darcy_matrix;
            }
        }
        res += ops.pressure_coupling.transpose() * p;
        res -= &self.load[cell];

        let pressure =
            &ops.pressure_coupling * &v + &self.mass_load[cell] + lambda * &ops.basis_integrals;

        LocalContribution {
            velocity: res,
            pressure,
            jacobian: jac,
        }
    }

    fn contributions(&self, x: &DVector<f64>, with_jacobian: bool) -> Vec<LocalContribution> {
        assert_eq!(
            x.len(),
            self.dofs.len(),
            "state vector has the wrong length"
        );
        (0..self.ops.len())
            .into_par_iter()
            .map(|c| self.local(c, x, with_jacobian))
            .collect()
    }

    fn gather_residual(&self, x: &DVector<f64>, locals: &[LocalContribution]) -> DVector<f64> {
        let mut r = DVector::zeros(self.dofs.len());
        let mi = self.dofs.multiplier_index();
        for (cell, lc) in locals.iter().enumerate() {
            for (i, g) in self.l2g[cell].iter().enumerate() {
                if let Some(g) = g {
                    r[*g] += lc.velocity[i];
                }
            }
            let po = self.dofs.pressure_offset(cell);
            let nk = lc.pressure.len();
            let mut rp = r.rows_mut(po, nk);
            rp += &lc.pressure;
            r[mi] += self.ops[cell].basis_integrals.dot(&x.rows(po, nk));
        }
        r
    }

    /// Residual of the discrete problem at the flattened state `x`.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let locals = self.contributions(x, false);
        self.gather_residual(x, &locals)
    }

    pub fn assemble_residual(&self, state: &DiscreteState) -> DVector<f64> {
        self.residual(&state.to_vector())
    }

    fn jacobian_triplets(
        &self,
        locals: &[LocalContribution],
        with_multiplier: bool,
    ) -> Vec<Triplet<usize, usize, f64>> {
        let mut triplets = Vec::new();
        let mi = self.dofs.multiplier_index();
        for (cell, lc) in locals.iter().enumerate() {
            let l2g = &self.l2g[cell];
            let ops = &self.ops[cell];
            let jac = lc.jacobian.as_ref().expect("jacobian requested");
            for (j, gj) in l2g.iter().enumerate() {
                let Some(gj) = gj else { continue };
                for (i, gi) in l2g.iter().enumerate() {
                    if let Some(gi) = gi {
                        let v = jac[(i, j)];
                        if v != 0.0 {
                            triplets.push(Triplet::new(*gi, *gj, v));
                        }
                    }
                }
            }
            let po = self.dofs.pressure_offset(cell);
            let b = &ops.pressure_coupling;
            for (j, gj) in l2g.iter().enumerate() {
                let Some(gj) = gj else { continue };
                for a in 0..b.nrows() {
                    let v = b[(a, j)];
                    if v != 0.0 {
                        triplets.push(Triplet::new(po + a, *gj, v));
                        triplets.push(Triplet::new(*gj, po + a, v));
                    }
                }
            }
            if with_multiplier {
                for (a, m) in ops.basis_integrals.iter().enumerate() {
                    triplets.push(Triplet::new(po + a, mi, *m));
                    triplets.push(Triplet::new(mi, po + a, *m));
                }
            }
        }
        triplets
    }

    /// Residual and Jacobian at `x`.
    pub fn residual_and_jacobian(
        &self,
        x: &DVector<f64>,
    ) -> Result<(DVector<f64>, SparseColMat<usize, f64>)> {
        let locals = self.contributions(x, true);
        let r = self.gather_residual(x, &locals);
        let n = self.dofs.len();
        let jac = SparseColMat::try_new_from_triplets(n, n, &self.jacobian_triplets(&locals, true))
            .map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
        Ok((r, jac))
    }

    /// Residual and the Jacobian split as `[[A, c], [c^T, 0]]`, where the
    /// border `c` is the (dense) multiplier column and `A` is sparse.
    pub fn residual_and_bordered_jacobian(
        &self,
        x: &DVector<f64>,
    ) -> Result<(DVector<f64>, BorderedJacobian)> {
        let locals = self.contributions(x, true);
        let r = self.gather_residual(x, &locals);
        let n = self.dofs.len() - 1;
        let block =
            SparseColMat::try_new_from_triplets(n, n, &self.jacobian_triplets(&locals, false))
                .map_err(|e| Error::LinearSolve(format!("{e:?}")))?;
        let mut border = DVector::zeros(n);
        for o in &self.ops {
            let po = self.dofs.pressure_offset(o.cell);
            border
                .rows_mut(po, o.scalar_dim())
                .copy_from(&o.basis_integrals);
        }
        Ok((
            r,
            BorderedJacobian {
                block,
                border,
                anchor: self.dofs.num_velocity(),
            },
        ))
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> Result<SparseColMat<usize, f64>> {
        Ok(self.residual_and_jacobian(x)?.1)
    }

    pub fn assemble_jacobian(&self, state: &DiscreteState) -> Result<SparseColMat<usize, f64>> {
        self.jacobian(&state.to_vector())
    }

    /// `int_Omega p_h`.
    pub fn pressure_integral(&self, x: &DVector<f64>) -> f64 {
        self.ops
            .iter()
            .map(|o| {
                let po = self.dofs.pressure_offset(o.cell);
                o.basis_integrals.dot(&x.rows(po, o.scalar_dim()))
            })
            .sum()
    }

    /// Largest coefficient of `D_T^k u_T - pi_T^k g` over all cells.
    pub fn mass_defect(&self, x: &DVector<f64>) -> f64 {
        self.ops
            .iter()
            .map(|o| {
                let v = self.local_velocity(o.cell, x.as_slice());
                let div = &o.divergence * v;
                let pig = o
                    .mass_k()
                    .cholesky()
                    .expect("P^k mass matrix is SPD")
                    .solve(&self.mass_load[o.cell]);
                (div - pig).amax()
            })
            .fold(0.0, f64::max)
    }

    /// Default quadrature degree for data and non-polynomial integrands.
    pub fn data_degree(&self) -> usize {
        nonpolynomial_degree(self.k)
    }

    /// Quadrature degree of the source loads. Set above the data degree so
    /// that the discrete compatibility gap of smooth data is negligible.
    fn source_degree(&self) -> usize {
        nonpolynomial_degree(self.k) + 6
    }
}

/// Converts a faer sparse matrix into a dense nalgebra one (testing aid).
pub fn to_dense(m: &SparseColMat<usize, f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for (j, col) in (0..m.ncols()).map(|j| (j, m.as_ref().col_range(j))) {
        let rows = m.as_ref().symbolic().row_idx();
        let vals = m.as_ref().val();
        for p in col {
            d[(rows[p], j)] += vals[p];
        }
    }
    d
}
