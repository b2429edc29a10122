//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use hho_brinkman::harness::{mesh_files, shipped_hexagonal_dir, ManufacturedCase};
use hho_brinkman::localops::build_all;
use hho_brinkman::mesh::{generate_cartesian, generate_hexagonal, generate_triangular};
use hho_brinkman::polyspace::{dim, l2_project_cell, monomial_index};
use hho_brinkman::system::{sigma, to_dense, BrinkmanSystem, Coefficients, DirichletData};
use hho_brinkman::{Mesh, Point};
use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A polynomial in the global coordinates, `sum c_ab x^a y^b` over `a + b <= degree`.
#[derive(Clone, Debug)]
pub struct Poly {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

impl Poly {
    /// Deterministic generic coefficients; `seed` picks a different polynomial.
    pub fn generic(degree: usize, seed: usize) -> Self {
        let coeffs = (0..dim(degree as isize))
            .map(|i| (1.3 + 0.7 * i as f64 + 2.1 * seed as f64).sin())
            .collect();
        Self { degree, coeffs }
    }

    fn terms(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..=self.degree).flat_map(move |m| {
            (0..=m).map(move |b| {
                let a = m - b;
                (a, b, self.coeffs[monomial_index(a, b)])
            })
        })
    }

    pub fn value(&self, p: &Point) -> f64 {
        self.terms()
            .map(|(a, b, c)| c * p.x.powi(a as i32) * p.y.powi(b as i32))
            .sum()
    }

    pub fn gradient(&self, p: &Point) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (a, b, c) in self.terms() {
            if a > 0 {
                g[0] += c * a as f64 * p.x.powi(a as i32 - 1) * p.y.powi(b as i32);
            }
            if b > 0 {
                g[1] += c * b as f64 * p.x.powi(a as i32) * p.y.powi(b as i32 - 1);
            }
        }
        g
    }
}

/// A vector field with polynomial components.
#[derive(Clone, Debug)]
pub struct PolyField(pub Poly, pub Poly);

impl PolyField {
    pub fn generic(degree: usize, seed: usize) -> Self {
        Self(
            Poly::generic(degree, 2 * seed),
            Poly::generic(degree, 2 * seed + 1),
        )
    }

    pub fn value(&self, p: &Point) -> [f64; 2] {
        [self.0.value(p), self.1.value(p)]
    }

    /// Row-major gradient `[d_x w_0, d_y w_0, d_x w_1, d_y w_1]`.
    pub fn gradient(&self, p: &Point) -> [f64; 4] {
        let (a, b) = (self.0.gradient(p), self.1.gradient(p));
        [a[0], a[1], b[0], b[1]]
    }
}

/// Defect measured against the size of the reference coefficients.
fn relative(defect: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    defect.amax() / reference.amax()
}

/// Largest violation of each local operator identity over a mesh, relative
/// to the magnitude of the quantities compared.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityDefects {
    /// `G_T I_T w - pi_T grad w`.
    pub gradient: f64,
    /// `D_T I_T w - pi_T div w`.
    pub divergence: f64,
    /// `D_T - tr G_T`.
    pub trace: f64,
    /// `Delta_dT I_T q` for `q` in `P^{k+1}(T)^2`.
    pub boundary: f64,
    /// Moments of `P_d v - v_T` against `P^{k-1}(T)^2`.
    pub orthogonality: f64,
    /// `P_d I_T c - c` for constant `c`.
    pub constants: f64,
}

impl IdentityDefects {
    pub fn max(&self) -> f64 {
        [
            self.gradient,
            self.divergence,
            self.trace,
            self.boundary,
            self.orthogonality,
            self.constants,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn merge(&mut self, o: &Self) {
        self.gradient = self.gradient.max(o.gradient);
        self.divergence = self.divergence.max(o.divergence);
        self.trace = self.trace.max(o.trace);
        self.boundary = self.boundary.max(o.boundary);
        self.orthogonality = self.orthogonality.max(o.orthogonality);
        self.constants = self.constants.max(o.constants);
    }
}

/// Checks all local operator identities on every cell of `mesh`.
pub fn identity_defects(mesh: &Mesh, k: usize) -> IdentityDefects {
    const QUAD: usize = 14;
    let w = PolyField::generic(5, 1);
    let q = PolyField::generic(k + 1, 2);
    let c = [0.7, -1.9];
    let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
    let mut out = IdentityDefects::default();
    for ops in build_all(mesh, k).expect("operators") {
        let g = &ops.geometry;
        let nk = ops.scalar_dim();

        // Test fields in the scaled coordinates of the cell, so every
        // comparison involves coefficients of unit size.
        let (xt, h) = (g.centroid, g.diameter);
        let local = move |p: &Point| (p - xt) / h;
        let wv = |p: &Point| w.value(&local(p));
        let wg = |p: &Point| w.gradient(&local(p)).map(|d| d / h);

        let iw = ops.interpolate(mesh, wv, QUAD).unwrap();
        let gw = &ops.gradient * &iw;
        let pg = l2_project_cell::<4>(g, ops.cell, k, wg, QUAD).unwrap();
        out.gradient = out.gradient.max(relative(&(gw - &pg), &pg));

        let dw = &ops.divergence * &iw;
        let pd = l2_project_cell::<1>(
            g,
            ops.cell,
            k,
            |p| {
                let d = wg(p);
                [d[0] + d[3]]
            },
            QUAD,
        )
        .unwrap();
        out.divergence = out.divergence.max(relative(&(dw - &pd), &pg));

        let tr = ops.gradient.rows(0, nk) + ops.gradient.rows(3 * nk, nk);
        out.trace = out.trace.max((&ops.divergence - &tr).amax() / tr.amax());

        let iq = ops.interpolate(mesh, |p| q.value(&local(p)), QUAD).unwrap();
        for delta in &ops.boundary_difference {
            out.boundary = out.boundary.max((delta * &iq).amax() / iq.amax());
        }

        out.orthogonality = out.orthogonality.max(ops.darcy_orthogonality_residual(&iw));
        for _ in 0..3 {
            let v = DVector::from_fn(ops.num_local_dofs(), |_, _| rng.random_range(-1.0..1.0));
            out.orthogonality = out.orthogonality.max(ops.darcy_orthogonality_residual(&v));
        }

        let ic = ops.interpolate(mesh, |_| c, QUAD).unwrap();
        let mut pc = &ops.darcy_velocity * &ic;
        pc[0] -= c[0];
        pc[nk] -= c[1];
        out.constants = out.constants.max(pc.amax());
    }
    out
}

/// Generated meshes of every family plus the shipped hexagonal files.
pub fn test_meshes() -> Vec<(String, Mesh)> {
    let mut out = Vec::new();
    for n in [1, 2, 4, 8] {
        out.push((format!("triangular n={n}"), generate_triangular(n).unwrap()));
        out.push((format!("cartesian n={n}"), generate_cartesian(n).unwrap()));
        out.push((format!("hexagonal n={n}"), generate_hexagonal(n).unwrap()));
    }
    for path in shipped_mesh_files() {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.push((name, Mesh::load(&path).unwrap()));
    }
    out
}

pub fn shipped_mesh_files() -> Vec<std::path::PathBuf> {
    mesh_files(&shipped_hexagonal_dir()).expect("shipped mesh directory")
}

/// `-div sigma(grad u) + nu u + grad p` with the stress divergence taken by
/// central differences of the analytic gradient.
pub fn source_by_differences(case: &ManufacturedCase, p: &Point, step: f64) -> [f64; 2] {
    let stress = |x: &Point| sigma(&case.velocity_gradient(x), case.mu, case.r);
    let mut div = [0.0; 2];
    for j in 0..2 {
        let mut e = Point::zeros();
        e[j] = step;
        let d: Matrix2<f64> = (stress(&(p + e)) - stress(&(p - e))) / (2.0 * step);
        for (i, di) in div.iter_mut().enumerate() {
            *di += d[(i, j)];
        }
    }
    let u = case.velocity(p);
    let gp = case.pressure_gradient(p);
    std::array::from_fn(|i| -div[i] + case.nu * u[i] + gp[i])
}

/// Largest relative deviation of the analytic source from the difference
/// construction over `n` random points of the open unit square.
pub fn source_oracle_error(case: &ManufacturedCase, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let p = Point::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95));
            let a = case.momentum_source(&p);
            let b = source_by_differences(case, &p, 1e-6);
            let diff = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            diff / (a[0].powi(2) + a[1].powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}

pub fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Relative deviation of the assembled Jacobian from central differences of
/// the residual at `states` random states, along `directions` random directions.
pub fn jacobian_fd_error(
    system: &BrinkmanSystem,
    states: usize,
    directions: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = system.dofs().len();
    let step = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..states {
        let x = random_vector(n, &mut rng);
        let jac = system.jacobian(&x).unwrap();
        let jac = to_dense(&jac);
        for _ in 0..directions {
            let d = random_vector(n, &mut rng);
            let fd = (system.residual(&(&x + step * &d)) - system.residual(&(&x - step * &d)))
                / (2.0 * step);
            let jd = &jac * &d;
            worst = worst.max((&fd - &jd).norm() / jd.norm());
        }
    }
    worst
}

/// A small manufactured problem ready to solve.
pub fn manufactured_system<'m>(
    mesh: &'m Mesh,
    k: usize,
    case: &ManufacturedCase,
) -> BrinkmanSystem<'m> {
    let coeffs = Coefficients::uniform(mesh, case.mu, case.nu, case.r).unwrap();
    let mut sys = BrinkmanSystem::new(mesh, k, coeffs).unwrap();
    let degree = sys.data_degree();
    let c = case.clone();
    let c2 = case.clone();
    sys.set_sources(move |p| c.momentum_source(p), move |p| c2.mass_source(p));
    sys.set_dirichlet(DirichletData::from_field(mesh, k, |p| case.velocity(p), degree).unwrap());
    sys
}

/// Solves the linearisation at the zero state directly with a dense LU,
/// bypassing the Newton driver and the sparse solver.
pub fn dense_linear_solve(system: &BrinkmanSystem) -> DVector<f64> {
    let n = system.dofs().len();
    let x0 = DVector::zeros(n);
    let jac: DMatrix<f64> = to_dense(&system.jacobian(&x0).unwrap());
    let rhs = -system.residual(&x0);
    jac.lu().solve(&rhs).expect("nonsingular linear system")
}
