//! Manufactured solutions and convergence studies.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::{DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    classify_regimes, convergence_rates, interpolate_locals, monitored_error, pressure_error,
    MonitoredError, RegimeClassification,
};
use crate::error::{Error, Result};
use crate::localops::{build_all, SUPPORTED_DEGREES};
use crate::mesh::{generate_cartesian, generate_hexagonal, generate_triangular, Mesh, Point};
use crate::quadrature::face_quadrature;
use crate::system::{
    solve, BrinkmanSystem, Coefficients, DirichletData, Exponent, SolveReport, SolverOptions,
};

/// Below this gradient norm the power-law part of the source is dropped.
const GRADIENT_FLOOR: f64 = 1e-12;

/// The smooth test case on the unit square: `p = sin(pi x) sin(pi y)` and
/// `u = chi u_S + (1 - chi) u_D`, with the divergence-free
/// `u_S = (sin(pi x) cos(pi y), -cos(pi x) sin(pi y))`, `u_D = -grad p / nu`
/// and `chi = exp(-nu / mu)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ManufacturedCase {
    pub r: f64,
    pub mu: f64,
    pub nu: f64,
    pub chi: f64,
}

/// Values and first and second derivatives of a planar vector field.
struct Jet {
    u: [f64; 2],
    /// `grad[i][j] = d_j u_i`.
    grad: [[f64; 2]; 2],
    /// `hess[i][j][l] = d_j d_l u_i`.
    hess: [[[f64; 2]; 2]; 2],
}

impl Jet {
    fn scaled_add(&mut self, t: f64, o: &Jet) {
        for i in 0..2 {
            self.u[i] += t * o.u[i];
            for j in 0..2 {
                self.grad[i][j] += t * o.grad[i][j];
                for l in 0..2 {
                    self.hess[i][j][l] += t * o.hess[i][j][l];
                }
            }
        }
    }

    fn zero() -> Self {
        Self {
            u: [0.0; 2],
            grad: [[0.0; 2]; 2],
            hess: [[[0.0; 2]; 2]; 2],
        }
    }
}

/// `(sin(pi x) cos(pi y), -cos(pi x) sin(pi y))`.
fn stokes_jet(p: &Point) -> Jet {
    let (sx, cx) = (PI * p.x).sin_cos();
    let (sy, cy) = (PI * p.y).sin_cos();
    let q = PI * PI;
    Jet {
        u: [sx * cy, -cx * sy],
        grad: [[PI * cx * cy, -PI * sx * sy], [PI * sx * sy, -PI * cx * cy]],
        hess: [
            [[-q * sx * cy, -q * cx * sy], [-q * cx * sy, -q * sx * cy]],
            [[q * cx * sy, q * sx * cy], [q * sx * cy, q * cx * sy]],
        ],
    }
}

/// `grad p / pi = (cos(pi x) sin(pi y), sin(pi x) cos(pi y))`.
fn pressure_gradient_jet(p: &Point) -> Jet {
    let (sx, cx) = (PI * p.x).sin_cos();
    let (sy, cy) = (PI * p.y).sin_cos();
    let q = PI * PI;
    Jet {
        u: [cx * sy, sx * cy],
        grad: [[-PI * sx * sy, PI * cx * cy], [PI * cx * cy, -PI * sx * sy]],
        hess: [
            [[-q * cx * sy, -q * sx * cy], [-q * sx * cy, -q * cx * sy]],
            [[-q * sx * cy, -q * cx * sy], [-q * cx * sy, -q * sx * cy]],
        ],
    }
}

impl ManufacturedCase {
    pub fn new(r: f64, mu: f64, nu: f64) -> Result<Self> {
        Exponent::new(r)?;
        if !(mu.is_finite() && nu.is_finite() && mu >= 0.0 && nu >= 0.0) {
            return Err(Error::InvalidParameters(
                "mu and nu must be finite and non-negative".into(),
            ));
        }
        if mu == 0.0 && nu == 0.0 {
            return Err(Error::InvalidParameters(
                "mu and nu cannot both vanish".into(),
            ));
        }
        Ok(Self {
            r,
            mu,
            nu,
            chi: (-Self::friction(mu, nu)).exp(),
        })
    }

    fn friction(mu: f64, nu: f64) -> f64 {
        if mu == 0.0 {
            f64::INFINITY
        } else {
            nu / mu
        }
    }

    /// Global friction coefficient `nu / mu`.
    pub fn cf_omega(&self) -> f64 {
        Self::friction(self.mu, self.nu)
    }

    fn jet(&self, p: &Point) -> Jet {
        let mut j = Jet::zero();
        if self.chi > 0.0 {
            j.scaled_add(self.chi, &stokes_jet(p));
        }
        if self.chi < 1.0 && self.nu > 0.0 {
            j.scaled_add(-(1.0 - self.chi) * PI / self.nu, &pressure_gradient_jet(p));
        }
        j
    }

    pub fn pressure(&self, p: &Point) -> f64 {
        (PI * p.x).sin() * (PI * p.y).sin()
    }

    pub fn pressure_gradient(&self, p: &Point) -> [f64; 2] {
        let g = pressure_gradient_jet(p).u;
        [PI * g[0], PI * g[1]]
    }

    /// Mean value of the pressure over the unit square.
    pub fn pressure_mean(&self) -> f64 {
        4.0 / (PI * PI)
    }

    pub fn velocity(&self, p: &Point) -> [f64; 2] {
        self.jet(p).u
    }

    pub fn stokes_velocity(&self, p: &Point) -> [f64; 2] {
        stokes_jet(p).u
    }

    /// `-grad p / nu`, or zero when `nu = 0`.
    pub fn darcy_velocity(&self, p: &Point) -> [f64; 2] {
        if self.nu == 0.0 {
            return [0.0; 2];
        }
        let g = self.pressure_gradient(p);
        [-g[0] / self.nu, -g[1] / self.nu]
    }

    /// `grad u`, with `(i, j)` entry `d_j u_i`.
    pub fn velocity_gradient(&self, p: &Point) -> Matrix2<f64> {
        let g = self.jet(p).grad;
        Matrix2::new(g[0][0], g[0][1], g[1][0], g[1][1])
    }

    /// Hessian of velocity component `i`.
    pub fn velocity_hessian(&self, p: &Point, i: usize) -> Matrix2<f64> {
        let h = self.jet(p).hess[i];
        Matrix2::new(h[0][0], h[0][1], h[1][0], h[1][1])
    }

    /// `g = div u`.
    pub fn mass_source(&self, p: &Point) -> f64 {
        let g = self.jet(p).grad;
        g[0][0] + g[1][1]
    }

    /// `div sigma(grad u)`.
    pub fn stress_divergence(&self, p: &Point) -> [f64; 2] {
        let jet = self.jet(p);
        let g = jet.grad;
        let n = g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        if n < GRADIENT_FLOOR || self.mu == 0.0 {
            return [0.0; 2];
        }
        let r = self.r;
        let a = self.mu * n.powf(r - 2.0);
        let b = self.mu * (r - 2.0) * n.powf(r - 4.0);
        // (G : d_j G) for j = 0, 1.
        let gdg: [f64; 2] = std::array::from_fn(|j| {
            (0..2)
                .flat_map(|i| (0..2).map(move |l| (i, l)))
                .map(|(i, l)| g[i][l] * jet.hess[i][l][j])
                .sum()
        });
        std::array::from_fn(|i| {
            let lap = jet.hess[i][0][0] + jet.hess[i][1][1];
            a * lap + b * (gdg[0] * g[i][0] + gdg[1] * g[i][1])
        })
    }

    /// `f = -div sigma(grad u) + nu u + grad p`.
    pub fn momentum_source(&self, p: &Point) -> [f64; 2] {
        let d = self.stress_divergence(p);
        let u = self.velocity(p);
        let gp = self.pressure_gradient(p);
        std::array::from_fn(|i| -d[i] + self.nu * u[i] + gp[i])
    }
}

/// Alias matching the operation name used by the CLI.
pub fn build_case(r: f64, mu: f64, nu: f64) -> Result<ManufacturedCase> {
    ManufacturedCase::new(r, mu, nu)
}

/// `(int_Omega g, int_dOmega u . n)` computed with face and cell quadrature.
pub fn compatibility_integrals(
    mesh: &Mesh,
    case: &ManufacturedCase,
    degree: usize,
) -> Result<(f64, f64)> {
    let mut vol = 0.0;
    for c in 0..mesh.num_cells() {
        let q = crate::quadrature::cell_quadrature(mesh.cell_geometry(c), degree)?;
        vol += q.integrate(|p| case.mass_source(p));
    }
    let mut flux = 0.0;
    for (f, face) in mesh.faces().iter().enumerate() {
        if !face.is_boundary() {
            continue;
        }
        let cell = face.cells[0];
        let cf = mesh
            .cell_geometry(cell)
            .faces
            .iter()
            .find(|cf| cf.face == f)
            .expect("boundary face belongs to its cell");
        let q = face_quadrature(mesh.face_geometry(f), degree)?;
        flux += q.integrate(|p| {
            let u = case.velocity(p);
            u[0] * cf.normal.x + u[1] * cf.normal.y
        });
    }
    Ok((vol, flux))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFamily {
    Triangular,
    Cartesian,
    Hexagonal,
    File,
}

impl std::str::FromStr for MeshFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triangular" => Ok(Self::Triangular),
            "cartesian" => Ok(Self::Cartesian),
            "hexagonal" => Ok(Self::Hexagonal),
            "file" => Ok(Self::File),
            other => Err(Error::InvalidConfig(format!(
                "unknown mesh family '{other}'"
            ))),
        }
    }
}

/// Directory of the hexagonal meshes shipped with the crate.
pub fn shipped_hexagonal_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("meshes")
        .join("hexagonal")
}

/// Subdivision count of generated level-`level` meshes.
pub fn level_subdivisions(level: usize) -> usize {
    1 << (level + 1)
}

/// Mesh files of a directory, sorted by name.
pub fn mesh_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::MeshIo {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub family: MeshFamily,
    pub mesh_dir: Option<PathBuf>,
    pub first_level: usize,
    pub levels: usize,
    pub k: usize,
    pub r: f64,
    pub mu: f64,
    pub nu: f64,
    pub solver: SolverOptions,
    /// Output directory for the CSV files.
    pub out: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            family: MeshFamily::Triangular,
            mesh_dir: None,
            first_level: 0,
            levels: 3,
            k: 1,
            r: 2.0,
            mu: 1.0,
            nu: 1.0,
            solver: SolverOptions::default(),
            out: None,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        Exponent::new(self.r)?;
        ManufacturedCase::new(self.r, self.mu, self.nu)?;
        if !SUPPORTED_DEGREES.contains(&self.k) {
            return Err(Error::UnsupportedDegree(self.k));
        }
        if self.levels == 0 {
            return bad("at least one level is required".into());
        }
        if !(self.solver.tol > 0.0 && self.solver.tol.is_finite()) {
            return bad("tolerance must be positive".into());
        }
        if self.solver.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        if self.solver.continuation && !(self.solver.continuation_step > 0.0) {
            return bad("continuation step must be positive".into());
        }
        match (self.family, &self.mesh_dir) {
            (MeshFamily::File, None) => bad("family 'file' needs a mesh directory".into()),
            (MeshFamily::File, Some(dir)) => {
                let n = mesh_files(dir)?.len();
                if n < self.first_level + self.levels {
                    bad(format!(
                        "{} contains {n} meshes, {} requested",
                        dir.display(),
                        self.first_level + self.levels
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn mesh(&self, level: usize) -> Result<Mesh> {
        let n = level_subdivisions(level);
        match self.family {
            MeshFamily::Triangular => generate_triangular(n),
            MeshFamily::Cartesian => generate_cartesian(n),
            MeshFamily::Hexagonal => generate_hexagonal(n),
            MeshFamily::File => {
                let dir = self
                    .mesh_dir
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("missing mesh directory".into()))?;
                let files = mesh_files(dir)?;
                let path = files.get(level).ok_or_else(|| {
                    Error::InvalidConfig(format!("no mesh for level {level} in {}", dir.display()))
                })?;
                Mesh::load(path)
            }
        }
    }
}

/// Outcome of one refinement level.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: usize,
    pub h: f64,
    pub num_cells: usize,
    pub ndof_velocity: usize,
    pub ndof_pressure: usize,
    pub newton_iters: usize,
    pub converged: bool,
    pub failure: Option<String>,
    pub errors: Option<MonitoredError>,
    pub pressure_error: Option<f64>,
    /// Largest `|D_T u_T - pi_T g|` coefficient.
    pub mass_defect: Option<f64>,
    pub regimes: RegimeClassification,
    pub solve: Option<SolveReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorReport {
    pub config: StudyConfig,
    pub levels: Vec<LevelResult>,
    /// Rates of the monitored error between consecutive levels.
    pub rates: Vec<Option<f64>>,
}

impl ErrorReport {
    pub fn all_converged(&self) -> bool {
        self.levels.iter().all(|l| l.converged)
    }

    pub fn last_rate(&self) -> Option<f64> {
        self.rates.last().copied().flatten()
    }
}

/// Solves the manufactured problem on one mesh and measures the error.
pub fn run_level(config: &StudyConfig, level: usize, mesh: &Mesh) -> Result<LevelResult> {
    let case = ManufacturedCase::new(config.r, config.mu, config.nu)?;
    let ops = build_all(mesh, config.k)?;
    let coeffs = Coefficients::uniform(mesh, config.mu, config.nu, config.r)?;
    let mut system = BrinkmanSystem::with_operators(mesh, config.k, ops, coeffs)?;
    let degree = system.data_degree();
    system.set_sources(|p| case.momentum_source(p), |p| case.mass_source(p));
    system.set_dirichlet(DirichletData::from_field(
        mesh,
        config.k,
        |p| case.velocity(p),
        degree,
    )?);

    let mu = &system.coefficients().mu;
    let nu = &system.coefficients().nu;
    let regimes = classify_regimes(system.operators(), mu, nu, config.r, |p| {
        case.velocity_gradient(p)
    });
    let dofs = system.dofs().clone();
    let mut result = LevelResult {
        level,
        h: mesh.meshsize(),
        num_cells: mesh.num_cells(),
        ndof_velocity: dofs.num_velocity(),
        ndof_pressure: dofs.num_pressure(),
        newton_iters: 0,
        converged: false,
        failure: None,
        errors: None,
        pressure_error: None,
        mass_defect: None,
        regimes,
        solve: None,
    };

    let (x, report) = match solve(&mut system, &config.solver) {
        Ok(v) => v,
        Err(Error::NonConvergence { reason, report }) => {
            warn!("level {level}: {reason}");
            result.newton_iters = report.iterations;
            result.failure = Some(reason);
            result.solve = Some(*report);
            return Ok(result);
        }
        Err(e @ Error::LinearSolve(_)) => {
            warn!("level {level}: {e}");
            result.failure = Some(e.to_string());
            return Ok(result);
        }
        Err(e) => return Err(e),
    };
    let ops = system.operators();
    let discrete: Vec<DVector<f64>> = ops
        .iter()
        .map(|o| system.local_velocity(o.cell, x.as_slice()))
        .collect();
    let interp = interpolate_locals(mesh, ops, |p| case.velocity(p))?;
    let mu = &system.coefficients().mu;
    let nu = &system.coefficients().nu;
    let errors = monitored_error(ops, &discrete, &interp, mu, nu, config.r);
    let pressure: Vec<DVector<f64>> = ops
        .iter()
        .map(|o| {
            x.rows(dofs.pressure_offset(o.cell), o.scalar_dim())
                .into_owned()
        })
        .collect();
    let r_conj = Exponent::new(config.r)?.conjugate();
    result.pressure_error = Some(pressure_error(
        ops,
        &pressure,
        |p| case.pressure(p),
        r_conj,
    )?);
    result.mass_defect = Some(system.mass_defect(&x));
    result.errors = Some(errors);
    result.newton_iters = report.iterations;
    result.converged = true;
    result.solve = Some(report);
    Ok(result)
}

/// Runs every level of the study; solver failures are recorded and the study
/// moves on. Writes the CSV files when an output directory is configured.
pub fn run_study(config: &StudyConfig) -> Result<ErrorReport> {
    config.validate()?;
    let mut levels = Vec::with_capacity(config.levels);
    for level in config.first_level..config.first_level + config.levels {
        let mesh = config.mesh(level)?;
        let res = run_level(config, level, &mesh)?;
        match &res.errors {
            Some(e) => info!(
                "level {level}: h = {:.4e}, {} cells, {} Newton iterations, monitored error {:.4e}",
                res.h, res.num_cells, res.newton_iters, e.monitored
            ),
            None => warn!("level {level}: no solution"),
        }
        levels.push(res);
    }
    let rates = level_rates(&levels);
    let report = ErrorReport {
        config: config.clone(),
        levels,
        rates,
    };
    if let Some(out) = &config.out {
        write_artifacts(&report, out)?;
    }
    Ok(report)
}

fn level_rates(levels: &[LevelResult]) -> Vec<Option<f64>> {
    let pairs: Vec<(f64, f64)> = levels
        .iter()
        .map(|l| (l.h, l.errors.map_or(f64::NAN, |e| e.monitored)))
        .collect();
    convergence_rates(&pairs)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// CSV of the per-level errors.
pub fn errors_csv(report: &ErrorReport) -> String {
    let mut s = String::from(
        "level,h,ndof_velocity,ndof_pressure,newton_iters,err_mu_r,err_nu,err_monitored,err_pressure_lr,rate_monitored\n",
    );
    for (i, l) in report.levels.iter().enumerate() {
        let rate = if i == 0 { None } else { report.rates[i - 1] };
        let iters = if l.converged {
            l.newton_iters.to_string()
        } else {
            String::new()
        };
        writeln!(
            s,
            "{},{:e},{},{},{},{},{},{},{},{}",
            l.level,
            l.h,
            l.ndof_velocity,
            l.ndof_pressure,
            iters,
            opt(l.errors.map(|e| e.mu_r)),
            opt(l.errors.map(|e| e.nu)),
            opt(l.errors.map(|e| e.monitored)),
            opt(l.pressure_error),
            opt(rate),
        )
        .expect("writing to a String");
    }
    s
}

/// CSV of the friction coefficients of one level.
pub fn friction_csv(level: &LevelResult) -> String {
    let mut s = String::from("level,cell_id,h_T,C_f_T,regime\n");
    let r = &level.regimes;
    for (c, ((h, f), reg)) in r.h.iter().zip(&r.friction).zip(&r.regime).enumerate() {
        writeln!(s, "{},{c},{h:e},{f:e},{}", level.level, reg.as_str())
            .expect("writing to a String");
    }
    s
}

pub fn write_artifacts(report: &ErrorReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("errors.csv"), errors_csv(report))?;
    for l in &report.levels {
        fs::write(
            out.join(format!("friction_level{}.csv", l.level)),
            friction_csv(l),
        )?;
    }
    Ok(())
}

/// Plain-text table of errors and rates.
pub fn rate_table(report: &ErrorReport) -> String {
    let mut s = format!(
        "{:>5} {:>11} {:>8} {:>6} {:>12} {:>12} {:>12} {:>7} {:>7}\n",
        "level", "h", "cells", "iters", "err_mu_r", "err_nu", "monitored", "rate", "darcy%"
    );
    for (i, l) in report.levels.iter().enumerate() {
        let rate = if i == 0 { None } else { report.rates[i - 1] };
        let e = |v: Option<f64>| v.map_or("failed".to_string(), |x| format!("{x:.4e}"));
        writeln!(
            s,
            "{:>5} {:>11.4e} {:>8} {:>6} {:>12} {:>12} {:>12} {:>7} {:>7.1}",
            l.level,
            l.h,
            l.num_cells,
            l.newton_iters,
            e(l.errors.map(|x| x.mu_r)),
            e(l.errors.map(|x| x.nu)),
            e(l.errors.map(|x| x.monitored)),
            rate.map_or("-".to_string(), |r| format!("{r:.2}")),
            100.0 * l.regimes.darcy_fraction(),
        )
        .expect("writing to a String");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(x: f64, y: f64) -> Point {
        Vector2::new(x, y)
    }

    #[test]
    fn stokes_case_values() {
        let c = build_case(2.0, 1.0, 0.0).unwrap();
        assert_eq!(c.chi, 1.0);
        let u = c.velocity(&pt(0.5, 0.5));
        assert!(u[0].abs() < 1e-15 && u[1].abs() < 1e-15);
        assert!((c.pressure(&pt(0.5, 0.5)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn large_viscosity_tends_to_stokes() {
        let c = build_case(3.0, 1e8, 1.0).unwrap();
        assert!((c.chi - 1.0).abs() < 1e-7);
        let p = pt(0.3, 0.7);
        let (u, us) = (c.velocity(&p), c.stokes_velocity(&p));
        assert!((u[0] - us[0]).abs() < 1e-6 && (u[1] - us[1]).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_case(2.0, 0.0, 0.0).is_err());
        assert!(build_case(0.9, 1.0, 1.0)
            .unwrap_err()
            .to_string()
            .contains("r must exceed 1"));
        assert!(build_case(2.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn structural_identities() {
        let c = build_case(3.0, 1.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = pt(rng.random(), rng.random());
            let gs = stokes_jet(&p).grad;
            assert!((gs[0][0] + gs[1][1]).abs() <= 1e-13);
            let ud = c.darcy_velocity(&p);
            let gp = c.pressure_gradient(&p);
            assert!((c.nu * ud[0] + gp[0]).abs() <= 1e-13 && (c.nu * ud[1] + gp[1]).abs() <= 1e-13);
            // Jet derivatives against central differences.
            let h = 1e-6;
            for j in 0..2 {
                let e = if j == 0 { pt(h, 0.0) } else { pt(0.0, h) };
                let (up, um) = (c.velocity(&(p + e)), c.velocity(&(p - e)));
                let g = c.velocity_gradient(&p);
                let (gpl, gmi) = (c.velocity_gradient(&(p + e)), c.velocity_gradient(&(p - e)));
                for i in 0..2 {
                    assert!(((up[i] - um[i]) / (2.0 * h) - g[(i, j)]).abs() < 1e-7);
                    let hs = c.velocity_hessian(&p, i);
                    for l in 0..2 {
                        let fd = (gpl[(i, l)] - gmi[(i, l)]) / (2.0 * h);
                        assert!((fd - hs[(l, j)]).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn compatibility_identity() {
        let mesh = generate_triangular(8).unwrap();
        for (mu, nu) in [(1.0, 1.0), (1e-6, 1.0), (1.0, 0.0)] {
            let c = build_case(3.0, mu, nu).unwrap();
            let (vol, flux) = compatibility_integrals(&mesh, &c, 20).unwrap();
            assert!((vol - flux).abs() < 1e-10, "{vol} vs {flux}");
            let exact = if nu > 0.0 {
                8.0 * (1.0 - c.chi) / nu
            } else {
                0.0
            };
            assert!((flux - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = StudyConfig::default();
        assert!(c.validate().is_ok());
        c.r = 1.0;
        assert!(c.validate().is_err());
        c = StudyConfig {
            family: MeshFamily::File,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c = StudyConfig {
            k: 3,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c = StudyConfig {
            levels: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn family_parsing() {
        assert_eq!(
            "hexagonal".parse::<MeshFamily>().unwrap(),
            MeshFamily::Hexagonal
        );
        assert!("voronoi".parse::<MeshFamily>().is_err());
    }
}
