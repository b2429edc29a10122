//! Discrete norms, friction coefficients, the monitored error quantity and
//! convergence rates.

use nalgebra::{DVector, Matrix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::localops::LocalOperators;
use crate::mesh::{Mesh, Point};
use crate::polyspace::{l2_project_cell, nonpolynomial_degree};
use crate::system::{DofMap, HybridVector};

/// Local interpolates of `u` on every cell.
pub fn interpolate_locals(
    mesh: &Mesh,
    ops: &[LocalOperators],
    u: impl Fn(&Point) -> [f64; 2] + Sync,
) -> Result<Vec<DVector<f64>>> {
    ops.par_iter()
        .map(|o| o.interpolate(mesh, &u, nonpolynomial_degree(o.k)))
        .collect()
}

/// Global interpolate `I_h u` restricted to the free (element and interior
/// face) unknowns.
pub fn interpolate_global(
    mesh: &Mesh,
    ops: &[LocalOperators],
    dofs: &DofMap,
    u: impl Fn(&Point) -> [f64; 2] + Sync,
) -> Result<HybridVector> {
    let locals = interpolate_locals(mesh, ops, u)?;
    let mut out = DVector::zeros(dofs.num_velocity());
    for (o, v) in ops.iter().zip(&locals) {
        for (i, g) in dofs.local_to_global(o).iter().enumerate() {
            if let Some(g) = g {
                out[*g] = v[i];
            }
        }
    }
    Ok(HybridVector(out))
}

/// Values of `v_T` at a point given its `P^k` basis values.
fn element_at(vt: &DVector<f64>, phi_k: &DVector<f64>) -> [f64; 2] {
    let nk = phi_k.len();
    [vt.rows(0, nk).dot(phi_k), vt.rows(nk, nk).dot(phi_k)]
}

/// `||grad v_T||_{L^q(T)}^q + h_T^{1-q} ||v_dT - v_T||_{L^q(dT)}^q`.
pub fn norm_1q_t_pow(ops: &LocalOperators, v: &DVector<f64>, q: f64) -> f64 {
    let nk = ops.scalar_dim();
    let nf = ops.layout.face_block() / 2;
    let vt = &ops.element_value * v;
    let mut vol = 0.0;
    for node in &ops.cell_nodes {
        let g = Matrix2::new(
            vt.rows(0, nk).dot(&node.grad_x),
            vt.rows(0, nk).dot(&node.grad_y),
            vt.rows(nk, nk).dot(&node.grad_x),
            vt.rows(nk, nk).dot(&node.grad_y),
        );
        vol += node.w * g.norm().powf(q);
    }
    let mut bnd = 0.0;
    for (j, nodes) in ops.face_nodes.iter().enumerate() {
        let vf = v.rows(ops.layout.face_offset(j), 2 * nf);
        for node in nodes {
            let e = element_at(&vt, &node.phi);
            let d0 = vf.rows(0, nf).dot(&node.psi) - e[0];
            let d1 = vf.rows(nf, nf).dot(&node.psi) - e[1];
            bnd += node.w * d0.hypot(d1).powf(q);
        }
    }
    vol + ops.geometry.diameter.powf(1.0 - q) * bnd
}

/// The local `W^{1,q}`-like seminorm `||v||_{1,q,T}`.
pub fn norm_1q_t(ops: &LocalOperators, v: &DVector<f64>, q: f64) -> f64 {
    norm_1q_t_pow(ops, v, q).powf(1.0 / q)
}

/// Discrete L2 norm `(||v_T||^2 + h_T ||v_dT - v_T||^2_{dT})^{1/2}`.
pub fn norm_02_t(ops: &LocalOperators, v: &DVector<f64>) -> f64 {
    let nf = ops.layout.face_block() / 2;
    let vt = &ops.element_value * v;
    let vol = vt.dot(&(crate::polyspace::block_diag(&ops.mass_k(), 2) * &vt));
    let mut bnd = 0.0;
    for (j, nodes) in ops.face_nodes.iter().enumerate() {
        let vf = v.rows(ops.layout.face_offset(j), 2 * nf);
        for node in nodes {
            let e = element_at(&vt, &node.phi);
            let d0 = vf.rows(0, nf).dot(&node.psi) - e[0];
            let d1 = vf.rows(nf, nf).dot(&node.psi) - e[1];
            bnd += node.w * (d0 * d0 + d1 * d1);
        }
    }
    (vol + ops.geometry.diameter * bnd).max(0.0).sqrt()
}

/// Local Darcy norm `a_{d,T}(v, v)^{1/2}`.
pub fn norm_d_t(ops: &LocalOperators, v: &DVector<f64>) -> f64 {
    v.dot(&(&ops.darcy_matrix * v)).max(0.0).sqrt()
}

/// `||v||_{mu,r,h} = (sum_T mu_T ||v_T||_{1,r,T}^r)^{1/r}`.
pub fn norm_mu_r(ops: &[LocalOperators], locals: &[DVector<f64>], mu: &[f64], r: f64) -> f64 {
    let s: f64 = ops
        .par_iter()
        .zip(locals)
        .map(|(o, v)| mu[o.cell] * norm_1q_t_pow(o, v, r))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    s.powf(1.0 / r)
}

/// `||v||_{nu,h} = (sum_T nu_T ||v_T||_{d,T}^2)^{1/2}`.
pub fn norm_nu(ops: &[LocalOperators], locals: &[DVector<f64>], nu: &[f64]) -> f64 {
    ops.iter()
        .zip(locals)
        .map(|(o, v)| nu[o.cell] * norm_d_t(o, v).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Exponent `q_r` of the viscous part of the monitored quantity.
pub fn q_r(r: f64) -> f64 {
    if r < 2.0 {
        2.0
    } else {
        r
    }
}

/// Weight `alpha_mu` of the viscous part of the monitored quantity.
pub fn alpha_mu(mu_min: f64, r: f64) -> f64 {
    if r < 2.0 {
        mu_min.powf((2.0 - r) / (r * (r - 1.0)))
    } else {
        1.0
    }
}

/// Components of the monitored error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitoredError {
    pub mu_r: f64,
    pub nu: f64,
    pub monitored: f64,
}

/// `alpha_mu ||e||_{mu,r,h}^{q_r} + ||e||_{nu,h}^2` for `e = u_h - I_h u`,
/// both given as local vectors.
pub fn monitored_error(
    ops: &[LocalOperators],
    discrete: &[DVector<f64>],
    interpolate: &[DVector<f64>],
    mu: &[f64],
    nu: &[f64],
    r: f64,
) -> MonitoredError {
    let e: Vec<_> = discrete
        .iter()
        .zip(interpolate)
        .map(|(a, b)| a - b)
        .collect();
    let mu_r = norm_mu_r(ops, &e, mu, r);
    let nu_n = norm_nu(ops, &e, nu);
    let mu_min = mu.iter().copied().fold(f64::INFINITY, f64::min);
    MonitoredError {
        mu_r,
        nu: nu_n,
        monitored: alpha_mu(mu_min, r) * mu_r.powf(q_r(r)) + nu_n * nu_n,
    }
}

/// `||p_h - (pi_h p - mean)||_{L^{r'}}`, where the mean of `pi_h p` is removed
/// so that both sides have zero average.
pub fn pressure_error(
    ops: &[LocalOperators],
    pressure: &[DVector<f64>],
    p: impl Fn(&Point) -> f64 + Sync,
    r_conj: f64,
) -> Result<f64> {
    let proj: Vec<DVector<f64>> = ops
        .par_iter()
        .map(|o| {
            l2_project_cell(
                &o.geometry,
                o.cell,
                o.k,
                |x| [p(x)],
                nonpolynomial_degree(o.k),
            )
        })
        .collect::<Result<_>>()?;
    let area: f64 = ops.iter().map(|o| o.geometry.area).sum();
    let mean = ops
        .iter()
        .zip(&proj)
        .map(|(o, c)| o.basis_integrals.dot(c))
        .sum::<f64>()
        / area;
    let s: f64 = ops
        .iter()
        .zip(pressure.iter().zip(&proj))
        .map(|(o, (ph, pp))| {
            let nk = o.scalar_dim();
            let d = ph - pp;
            o.cell_nodes
                .iter()
                .map(|n| n.w * (d.dot(&n.phi.rows(0, nk)) + mean).abs().powf(r_conj))
                .sum::<f64>()
        })
        .sum();
    Ok(s.powf(1.0 / r_conj))
}

/// Flow regime of a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Stokes,
    Darcy,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Stokes => "stokes",
            Regime::Darcy => "darcy",
        }
    }
}

/// Per-cell friction coefficients `C_{f,T} = nu_T h_T^2 / kappa_T`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegimeClassification {
    pub h: Vec<f64>,
    pub friction: Vec<f64>,
    pub regime: Vec<Regime>,
}

/// Sampled values of `|grad u|^{r-2}` above this bound count as unbounded.
const UNBOUNDED: f64 = 1e12;

impl RegimeClassification {
    pub fn num_darcy(&self) -> usize {
        self.regime.iter().filter(|r| **r == Regime::Darcy).count()
    }

    pub fn darcy_fraction(&self) -> f64 {
        self.num_darcy() as f64 / self.regime.len().max(1) as f64
    }

    pub fn median_friction(&self) -> f64 {
        let mut v = self.friction.clone();
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    /// Counts of `log10 C_{f,T}` per unit-width bin `[lo, lo + 1)`, from
    /// `lo = min_decade` to `max_decade`; values outside go to the end bins.
    pub fn histogram(&self, min_decade: i32, max_decade: i32) -> Vec<(i32, usize)> {
        let mut bins: Vec<(i32, usize)> = (min_decade..=max_decade).map(|d| (d, 0)).collect();
        for c in &self.friction {
            let d = if *c <= 0.0 {
                min_decade
            } else {
                (c.log10().floor() as i32).clamp(min_decade, max_decade)
            };
            bins[(d - min_decade) as usize].1 += 1;
        }
        bins
    }
}

/// Friction coefficient of one cell from the sampled `max |grad u|^{r-2}`.
pub fn friction_coefficient(mu: f64, nu: f64, h: f64, max_pow: f64) -> f64 {
    if mu > 0.0 && max_pow > UNBOUNDED {
        return 0.0;
    }
    let kappa = mu * max_pow;
    if kappa == 0.0 {
        f64::INFINITY
    } else {
        nu * h * h / kappa
    }
}

/// Classifies every cell as Stokes- or Darcy-dominated.
///
/// The supremum of `|grad u|^{r-2}` over a cell is sampled at its quadrature
/// nodes and vertices.
pub fn classify_regimes(
    ops: &[LocalOperators],
    mu: &[f64],
    nu: &[f64],
    r: f64,
    grad_u: impl Fn(&Point) -> Matrix2<f64> + Sync,
) -> RegimeClassification {
    let friction: Vec<f64> = ops
        .par_iter()
        .map(|o| {
            let samples = o
                .cell_nodes
                .iter()
                .map(|n| n.x)
                .chain(o.geometry.vertices.iter().copied());
            let max_pow = samples
                .map(|x| grad_u(&x).norm().powf(r - 2.0))
                .fold(0.0, f64::max);
            friction_coefficient(mu[o.cell], nu[o.cell], o.geometry.diameter, max_pow)
        })
        .collect();
    let regime = friction
        .iter()
        .map(|c| {
            if *c >= 1.0 {
                Regime::Darcy
            } else {
                Regime::Stokes
            }
        })
        .collect();
    RegimeClassification {
        h: ops.iter().map(|o| o.geometry.diameter).collect(),
        friction,
        regime,
    }
}

/// Slopes `log(e_i / e_{i+1}) / log(h_i / h_{i+1})` between consecutive
/// levels; `None` when either error vanishes or is not finite.
pub fn convergence_rates(levels: &[(f64, f64)]) -> Vec<Option<f64>> {
    levels
        .windows(2)
        .map(|w| {
            let ((h0, e0), (h1, e1)) = (w[0], w[1]);
            let ok = |e: f64| e.is_finite() && e > 0.0;
            (ok(e0) && ok(e1) && h0 != h1).then(|| (e0 / e1).ln() / (h0 / h1).ln())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localops::build_all;
    use crate::mesh::{generate_cartesian, generate_triangular};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn q_r_and_alpha() {
        assert_eq!(q_r(1.5), 2.0);
        assert_eq!(q_r(3.0), 3.0);
        assert_eq!(alpha_mu(1e-3, 3.0), 1.0);
        assert!((alpha_mu(0.5, 1.5) - 0.5f64.powf(2.0 / 3.0)).abs() < 1e-15);
        assert!((alpha_mu(0.5, 1.5) - 0.62996).abs() < 1e-5);
    }

    #[test]
    fn rates() {
        let r = convergence_rates(&[(1.0, 1.0), (0.5, 0.25), (0.25, 0.0625)]);
        assert!(r.iter().all(|s| (s.unwrap() - 2.0).abs() < 1e-14));
        let c = convergence_rates(&[(1.0, 3.0), (0.5, 3.0)]);
        assert_eq!(c, vec![Some(0.0)]);
        let hs = [0.5, 0.25, 0.125, 0.0625];
        let lv: Vec<_> = hs.iter().map(|h: &f64| (*h, h.powf(4.5))).collect();
        assert!(convergence_rates(&lv)
            .iter()
            .all(|s| (s.unwrap() - 4.5).abs() < 1e-12));
        assert_eq!(convergence_rates(&[(1.0, 0.0), (0.5, 1.0)]), vec![None]);
    }

    #[test]
    fn zero_vector_norms() {
        let mesh = generate_triangular(2).unwrap();
        let ops = build_all(&mesh, 1).unwrap();
        let z: Vec<_> = ops
            .iter()
            .map(|o| DVector::zeros(o.num_local_dofs()))
            .collect();
        let mu = vec![1.0; mesh.num_cells()];
        assert_eq!(norm_mu_r(&ops, &z, &mu, 3.0), 0.0);
        assert_eq!(norm_nu(&ops, &z, &mu), 0.0);
    }

    #[test]
    fn darcy_norm_vanishes_without_friction() {
        let mesh = generate_triangular(2).unwrap();
        let ops = build_all(&mesh, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<_> = ops
            .iter()
            .map(|o| DVector::from_fn(o.num_local_dofs(), |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        assert_eq!(norm_nu(&ops, &v, &vec![0.0; mesh.num_cells()]), 0.0);
    }

    #[test]
    fn unit_square_seminorms_by_hand() {
        let mesh = generate_cartesian(1).unwrap();
        let ops = build_all(&mesh, 1).unwrap();
        // (x, 0) is not in N^1(T): v_T is the constant (1/2, 0), and only the
        // face term h^{-1} sum_F |x - 1/2|^2 = (2/12 + 2/4) / sqrt(2) remains.
        let v = interpolate_locals(&mesh, &ops, |p| [p.x, 0.0]).unwrap();
        let n = norm_mu_r(&ops, &v, &[1.0], 2.0);
        assert!((n * n - 2f64.sqrt() / 3.0).abs() < 1e-12, "{n}");
        // The rotation (y, -x) lies in N^1(T) and its traces match.
        let v = interpolate_locals(&mesh, &ops, |p| [p.y, -p.x]).unwrap();
        let n = norm_mu_r(&ops, &v, &[1.0], 2.0);
        assert!((n - 2f64.sqrt()).abs() < 1e-12, "{n}");
        // At k = 2, (x, 0) = grad(x^2 / 2) is reproduced and the norm is 1.
        let ops = build_all(&mesh, 2).unwrap();
        let v = interpolate_locals(&mesh, &ops, |p| [p.x, 0.0]).unwrap();
        let n = norm_mu_r(&ops, &v, &[1.0], 2.0);
        assert!((n - 1.0).abs() < 1e-12, "{n}");
    }

    #[test]
    fn interpolate_zero_and_commutation() {
        let mesh = generate_triangular(2).unwrap();
        let ops = build_all(&mesh, 1).unwrap();
        let dofs = DofMap::new(&mesh, 1);
        let z = interpolate_global(&mesh, &ops, &dofs, |_| [0.0, 0.0]).unwrap();
        assert_eq!(z.0.amax(), 0.0);
        let v = interpolate_locals(&mesh, &ops, |p| [2.0 * p.x + p.y, p.x - 3.0 * p.y]).unwrap();
        for (o, v) in ops.iter().zip(&v) {
            let d = &o.divergence * v;
            assert!((d[0] + 1.0).abs() < 1e-11 && d.rows(1, d.len() - 1).amax() < 1e-11);
        }
    }

    #[test]
    fn friction_conventions() {
        let mesh = generate_triangular(2).unwrap();
        let ops = build_all(&mesh, 0).unwrap();
        let n = mesh.num_cells();
        let grad = |p: &Point| Matrix2::new(p.x, 0.0, 0.0, -p.x);
        let c = classify_regimes(&ops, &vec![2.0; n], &vec![3.0; n], 2.0, grad);
        for (o, f) in ops.iter().zip(&c.friction) {
            let exact = 3.0 * o.geometry.diameter.powi(2) / 2.0;
            assert!((f - exact).abs() <= 1e-15 * exact);
        }
        let c = classify_regimes(&ops, &vec![0.0; n], &vec![1.0; n], 3.0, grad);
        assert!(c.friction.iter().all(|f| f.is_infinite()));
        assert_eq!(c.num_darcy(), n);
        // Unbounded |grad u|^{r-2} for r < 2 at the zero of grad u.
        assert_eq!(friction_coefficient(1.0, 1.0, 0.1, 1e13), 0.0);
    }

    #[test]
    fn r2_partition_is_mesh_monotone() {
        let grad = |_: &Point| Matrix2::identity();
        let mut prev = f64::INFINITY;
        for n in [2, 4, 8] {
            let mesh = generate_triangular(n).unwrap();
            let ops = build_all(&mesh, 0).unwrap();
            let m = mesh.num_cells();
            let c = classify_regimes(&ops, &vec![1e-2; m], &vec![1.0; m], 2.0, grad);
            assert!(c.darcy_fraction() <= prev);
            prev = c.darcy_fraction();
        }
    }

    #[test]
    fn l2_norm_bounded_by_darcy_norm() {
        // Same random sample on interior cells of successive meshes.
        for k in 0..=2 {
            let mut prev = f64::INFINITY;
            for n in [4, 8, 16] {
                let mesh = generate_triangular(n).unwrap();
                let ops = build_all(&mesh, k).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(9);
                let mut worst = 0.0f64;
                let interior = ops
                    .iter()
                    .filter(|o| o.geometry.faces.iter().all(|f| !f.is_boundary));
                for o in interior.take(2) {
                    for _ in 0..50 {
                        let v = DVector::from_fn(o.num_local_dofs(), |_, _| {
                            rng.random_range(-1.0..1.0)
                        });
                        worst = worst.max(norm_02_t(o, &v) / norm_d_t(o, &v));
                    }
                }
                assert!(
                    worst.is_finite() && worst <= 1.1 * prev,
                    "k={k} n={n}: {worst} vs {prev}"
                );
                prev = worst;
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn norms_scale_covariantly(t in -5.0f64..5.0, seed in 0u64..1000) {
            let mesh = generate_triangular(2).unwrap();
            let ops = build_all(&mesh, 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<_> = ops
                .iter()
                .map(|o| DVector::from_fn(o.num_local_dofs(), |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let tv: Vec<_> = v.iter().map(|x| x * t).collect();
            let mu = vec![1.0; mesh.num_cells()];
            let (a, b) = (norm_mu_r(&ops, &v, &mu, 3.0), norm_mu_r(&ops, &tv, &mu, 3.0));
            prop_assert!((b - t.abs() * a).abs() <= 1e-12 * a.max(1.0));
            let (c, d) = (norm_nu(&ops, &v, &mu), norm_nu(&ops, &tv, &mu));
            prop_assert!((d * d - t * t * c * c).abs() <= 1e-11 * (c * c).max(1.0));
        }
    }
}
