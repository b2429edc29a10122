//! Damped Newton iteration with optional continuation in the flow exponent.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, SymmetricOrdering,
};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat, Par, Side};
use log::{debug, info};
use nalgebra::{DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::{BorderedJacobian, BrinkmanSystem, Exponent};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Absolute tolerance on the Euclidean norm of the residual.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Solve a sequence of problems starting from `r = 2`.
    pub continuation: bool,
    pub continuation_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            max_halvings: 30,
            continuation: false,
            continuation_step: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LinearSolveStats {
    pub solves: usize,
    /// Largest number of stored entries in a factorisation.
    pub max_nnz: usize,
    /// Largest `|J dx + R| / |R|` observed.
    pub max_relative_residual: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolveReport {
    /// Newton iterations summed over all continuation stages.
    pub iterations: usize,
    /// Residual norm at the start and after each iteration of the final stage.
    pub residual_history: Vec<f64>,
    pub halvings: usize,
    /// Exponents of the continuation stages, ending with the target value.
    pub stages: Vec<f64>,
    pub stage_iterations: Vec<usize>,
    pub linear: LinearSolveStats,
    pub converged: bool,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }
}

fn continuation_path(target: f64, step: f64) -> Vec<f64> {
    let mut path = Vec::new();
    if step > 0.0 {
        let mut r = 2.0;
        while (target - r).abs() > step {
            path.push(r);
            r += step * (target - r).signum();
        }
        if (target - r).abs() > 1e-14 {
            path.push(r);
        }
    }
    path.push(target);
    path
}

fn spmv(a: &SparseColMat<usize, f64>, x: &DVector<f64>) -> DVector<f64> {
    let a = a.as_ref();
    let rows = a.symbolic().row_idx();
    let vals = a.val();
    let mut y = DVector::zeros(a.nrows());
    for j in 0..a.ncols() {
        for p in a.col_range(j) {
            y[rows[p]] += vals[p] * x[j];
        }
    }
    y
}

/// `[[A, c], [c^T, 0]] z`.
fn bordered_apply(jac: &BorderedJacobian, z: &DVector<f64>) -> DVector<f64> {
    let n = jac.border.len();
    let x = z.rows(0, n).into_owned();
    let mut y = DVector::zeros(n + 1);
    y.rows_mut(0, n)
        .copy_from(&(spmv(&jac.block, &x) + z[n] * &jac.border));
    y[n] = jac.border.dot(&x);
    y
}

/// Copy of `a` with `w` added to the diagonal entry `(p0, p0)`, inserting it
/// if it is not stored.
fn add_to_diagonal(
    a: &SparseColMat<usize, f64>,
    p0: usize,
    w: f64,
) -> Result<SparseColMat<usize, f64>> {
    let r = a.as_ref();
    let rows = r.symbolic().row_idx();
    if let Some(p) = r.col_range(p0).find(|&p| rows[p] == p0) {
        let mut m = a.clone();
        m.val_mut()[p] += w;
        return Ok(m);
    }
    let n = a.nrows();
    let mut t: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(r.compute_nnz() + 1);
    for j in 0..n {
        for p in r.col_range(j) {
            t.push(Triplet::new(rows[p], j, r.val()[p]));
        }
    }
    t.push(Triplet::new(p0, p0, w));
    SparseColMat::try_new_from_triplets(n, n, &t).map_err(|e| Error::LinearSolve(format!("{e:?}")))
}

/// Bordered solve given a solver for `A + w e e^T`. Returns the solution and
/// its relative residual after iterative refinement.
fn bordered_with(
    jac: &BorderedJacobian,
    rhs: &DVector<f64>,
    w: f64,
    mut solve: impl FnMut(&mut Mat<f64>),
) -> Result<(DVector<f64>, f64)> {
    let n = jac.border.len();
    let p0 = jac.anchor;
    let mut aux = Mat::zeros(n, 2);
    aux[(p0, 0)] = 1.0;
    for i in 0..n {
        aux[(i, 1)] = jac.border[i];
    }
    solve(&mut aux);
    let ye = DVector::from_fn(n, |i, _| aux[(i, 0)]);
    let yc = DVector::from_fn(n, |i, _| aux[(i, 1)]);
    let m = Matrix2::new(
        1.0 - w * ye[p0],
        w * yc[p0],
        jac.border.dot(&ye),
        -jac.border.dot(&yc),
    );
    let minv = m
        .try_inverse()
        .ok_or_else(|| Error::LinearSolve("singular bordered system".into()))?;

    let mut apply_inverse = |b: &DVector<f64>| -> DVector<f64> {
        let mut bm = Mat::from_fn(n, 1, |i, _| b[i]);
        solve(&mut bm);
        let yb = DVector::from_fn(n, |i, _| bm[(i, 0)]);
        let sl = minv * Vector2::new(w * yb[p0], b[n] - jac.border.dot(&yb));
        let (s, lambda) = (sl[0], sl[1]);
        let mut z = DVector::zeros(n + 1);
        z.rows_mut(0, n).copy_from(&(yb + s * &ye - lambda * &yc));
        z[n] = lambda;
        z
    };

    let rn = rhs.norm();
    if rn == 0.0 {
        return Ok((DVector::zeros(n + 1), 0.0));
    }
    let mut z = apply_inverse(rhs);
    let mut rel = (rhs - bordered_apply(jac, &z)).norm() / rn;
    for _ in 0..REFINEMENT_STEPS {
        if rel <= 1e-14 || !rel.is_finite() {
            break;
        }
        let res = rhs - bordered_apply(jac, &z);
        let candidate = &z + apply_inverse(&res);
        let next = (rhs - bordered_apply(jac, &candidate)).norm() / rn;
        if !(next < rel) {
            break;
        }
        let stalled = next > 0.5 * rel;
        z = candidate;
        rel = next;
        if stalled {
            break;
        }
    }
    Ok((z, rel))
}

const REFINEMENT_STEPS: usize = 20;

/// Regularisation of the pivots, relative to the largest matrix entry.
const PIVOT_REGULARISATION: f64 = 1e-14;

/// Refinement result above which the LDL^T path is abandoned for LU.
const FALLBACK_RESIDUAL: f64 = 1e-10;

/// Solves `[[A, c], [c^T, 0]] z = rhs` for symmetric `A` whose rows are
/// velocity unknowns before `jac.anchor` and pressure unknowns from there on.
///
/// The dense border would destroy the sparsity of a direct factorisation, so
/// only `A + w e e^T` is factorised (`e` the anchor unit vector), and the
/// rank-two correction is resolved through a 2x2 system. The factorisation is
/// a fill-reducing sparse LDL^T with pivots kept away from zero with the sign
/// of their block, followed by iterative refinement. A sparse LU is used if
/// refinement does not reach a small residual.
pub fn bordered_solve(
    jac: &BorderedJacobian,
    rhs: &DVector<f64>,
    stats: &mut LinearSolveStats,
) -> Result<DVector<f64>> {
    let n = jac.border.len();
    if rhs.len() != n + 1 {
        return Err(Error::LinearSolve(format!(
            "right-hand side has length {}, expected {}",
            rhs.len(),
            n + 1
        )));
    }
    let p0 = jac.anchor;

    let w = -1.0;
    let anchored = add_to_diagonal(&jac.block, p0, w)?;
    let mut outcome = ldlt_solve(jac, &anchored, rhs, w);
    if let Ok((_, rel, _)) = &outcome {
        if !(*rel <= FALLBACK_RESIDUAL) {
            debug!("LDL^T refinement stalled at {rel:.3e}, falling back to LU");
            outcome = Err(Error::LinearSolve("refinement stalled".into()));
        }
    }
    let (z, rel, nnz) = match outcome {
        Ok(found) => found,
        Err(e) => {
            debug!("sparse LDL^T unavailable ({e}), using LU");
            let lu = anchored
                .sp_lu()
                .map_err(|e| Error::LinearSolve(format!("sparse LU failed: {e:?}")))?;
            let (z, rel) = bordered_with(jac, rhs, w, |b| {
                let x = lu.solve(&*b);
                b.copy_from(&x);
            })?;
            (z, rel, anchored.compute_nnz())
        }
    };
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearSolve("non-finite Newton update".into()));
    }
    stats.max_relative_residual = stats.max_relative_residual.max(rel);
    stats.solves += 1;
    stats.max_nnz = stats.max_nnz.max(nnz);
    Ok(z)
}

fn ldlt_solve(
    jac: &BorderedJacobian,
    anchored: &SparseColMat<usize, f64>,
    rhs: &DVector<f64>,
    w: f64,
) -> Result<(DVector<f64>, f64, usize)> {
    let n = anchored.nrows();
    let symbolic = factorize_symbolic_cholesky(
        anchored.symbolic(),
        Side::Lower,
        SymmetricOrdering::Amd,
        CholeskySymbolicParams::default(),
    )
    .map_err(|e| Error::LinearSolve(format!("symbolic factorisation failed: {e:?}")))?;
    let signs: Vec<i8> = (0..n)
        .map(|i| if i < jac.anchor { 1 } else { -1 })
        .collect();
    let scale = anchored.val().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let regularisation = LdltRegularization {
        dynamic_regularization_signs: Some(&signs),
        dynamic_regularization_delta: PIVOT_REGULARISATION * scale,
        dynamic_regularization_epsilon: PIVOT_REGULARISATION * scale,
    };
    let mut values = vec![0.0; symbolic.len_val()];
    let mut mem = MemBuffer::try_new(
        symbolic
            .factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default())
            .or(symbolic.solve_in_place_scratch::<f64>(2, Par::Seq)),
    )
    .map_err(|_| Error::LinearSolve("out of memory for the factorisation workspace".into()))?;
    let ldlt = symbolic
        .factorize_numeric_ldlt(
            &mut values,
            anchored.as_ref(),
            Side::Lower,
            regularisation,
            Par::Seq,
            MemStack::new(&mut mem),
            Default::default(),
        )
        .map_err(|e| Error::LinearSolve(format!("LDL^T failed: {e:?}")))?;
    let (z, rel) = bordered_with(jac, rhs, w, |b| {
        ldlt.solve_in_place_with_conj(Conj::No, b.as_mut(), Par::Seq, MemStack::new(&mut mem));
    })?;
    Ok((z, rel, symbolic.len_val()))
}

/// Newton iteration for the current exponent; `Ok(false)` when the
/// iteration limit is hit.
fn newton_stage(
    system: &BrinkmanSystem,
    x: &mut DVector<f64>,
    opts: &SolverOptions,
    report: &mut SolveReport,
) -> Result<bool> {
    report.residual_history.clear();
    let mut res = system.residual(x);
    let mut norm = res.norm();
    report.residual_history.push(norm);
    let mut iters = 0;
    while norm > opts.tol {
        if iters == opts.max_iter {
            report.iterations += iters;
            report.stage_iterations.push(iters);
            return Ok(false);
        }
        let (_, jac) = system.residual_and_bordered_jacobian(x)?;
        let dx = bordered_solve(&jac, &(-&res), &mut report.linear)?;
        let mut t = 1.0;
        let mut halvings = 0;
        loop {
            let trial = &*x + t * &dx;
            let r_trial = system.residual(&trial);
            let n_trial = r_trial.norm();
            if n_trial.is_finite() && n_trial < norm {
                *x = trial;
                res = r_trial;
                norm = n_trial;
                break;
            }
            if halvings == opts.max_halvings {
                report.iterations += iters;
                report.stage_iterations.push(iters);
                return Err(Error::NonConvergence {
                    reason: format!("line search stagnated after {halvings} step halvings"),
                    report: Box::new(report.clone()),
                });
            }
            t *= 0.5;
            halvings += 1;
        }
        report.halvings += halvings;
        iters += 1;
        report.residual_history.push(norm);
        debug!("newton iter {iters}: |R| = {norm:.3e}, step {t}");
    }
    report.iterations += iters;
    report.stage_iterations.push(iters);
    Ok(true)
}

/// Solves the nonlinear system from the initial state `x0`.
///
/// With continuation enabled the exponent is moved from 2 towards its target
/// in steps of `continuation_step`, each stage starting from the previous
/// solution. The system's exponent is restored to the target on return.
pub fn newton_solve(
    system: &mut BrinkmanSystem,
    x0: DVector<f64>,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, SolveReport)> {
    if x0.len() != system.dofs().len() {
        return Err(Error::InvalidParameters(format!(
            "initial state has length {}, expected {}",
            x0.len(),
            system.dofs().len()
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameters(
            "tolerance must be positive".into(),
        ));
    }
    let target = system.coefficients().r;
    let path = if opts.continuation {
        continuation_path(target.value(), opts.continuation_step)
    } else {
        vec![target.value()]
    };
    let mut report = SolveReport {
        stages: path.clone(),
        ..Default::default()
    };
    let mut x = x0;
    let mut outcome = Ok(true);
    for r in &path {
        system.set_exponent(Exponent::new(*r)?);
        outcome = newton_stage(system, &mut x, opts, &mut report);
        match outcome {
            Ok(true) => info!("r = {r}: converged, |R| = {:.3e}", report.final_residual()),
            _ => break,
        }
    }
    system.set_exponent(target);
    match outcome? {
        true => {
            report.converged = true;
            Ok((x, report))
        }
        false => Err(Error::NonConvergence {
            reason: format!("no convergence within {} iterations", opts.max_iter),
            report: Box::new(report),
        }),
    }
}

/// [`newton_solve`] from the zero state.
pub fn solve(
    system: &mut BrinkmanSystem,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, SolveReport)> {
    let x0 = DVector::zeros(system.dofs().len());
    newton_solve(system, x0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuation_paths() {
        assert_eq!(continuation_path(2.0, 0.5), vec![2.0]);
        assert_eq!(continuation_path(3.0, 0.5), vec![2.0, 2.5, 3.0]);
        assert_eq!(continuation_path(1.5, 0.5), vec![2.0, 1.5]);
        assert_eq!(continuation_path(1.25, 0.5), vec![2.0, 1.5, 1.25]);
        assert_eq!(continuation_path(4.0, 0.5), vec![2.0, 2.5, 3.0, 3.5, 4.0]);
    }
}
