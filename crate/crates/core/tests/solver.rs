mod common;

use common::{dense_linear_solve, jacobian_fd_error, manufactured_system};
use hho_brinkman::mesh::{generate_hexagonal, generate_triangular};
use hho_brinkman::system::solve;
use hho_brinkman::{build_case, SolverOptions};

#[test]
fn linear_problem_matches_an_independent_dense_solve() {
    let mesh = generate_triangular(4).unwrap();
    let case = build_case(2.0, 1.0, 1.0).unwrap();
    for k in 0..=2 {
        let mut sys = manufactured_system(&mesh, k, &case);
        let reference = dense_linear_solve(&sys);
        let (x, report) = solve(&mut sys, &SolverOptions::default()).unwrap();
        assert_eq!(report.iterations, 1, "k={k}");
        let diff = (&x - &reference).amax() / reference.amax();
        assert!(diff <= 1e-10, "k={k}: {diff:e}");
    }
}

#[test]
fn mass_and_mean_constraints_hold_after_the_solve() {
    for mesh in [
        generate_triangular(4).unwrap(),
        generate_hexagonal(4).unwrap(),
    ] {
        for (r, mu, nu) in [
            (2.0, 1.0, 1.0),
            (3.0, 1.0, 1.0),
            (3.0, 1e-2, 1.0),
            (4.0, 1e-4, 1.0),
        ] {
            let case = build_case(r, mu, nu).unwrap();
            for k in 0..=2 {
                let mut sys = manufactured_system(&mesh, k, &case);
                assert!(sys.dirichlet().max_abs() > 0.1);
                let (x, report) = solve(&mut sys, &SolverOptions::default()).unwrap();
                assert!(report.converged);
                let defect = sys.mass_defect(&x);
                let mean = sys.pressure_integral(&x);
                assert!(defect <= 1e-9, "r={r}, mu={mu}, k={k}: {defect:e}");
                assert!(mean.abs() <= 1e-10, "r={r}, mu={mu}, k={k}: {mean:e}");
            }
        }
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    for mesh in [
        generate_triangular(2).unwrap(),
        generate_hexagonal(2).unwrap(),
    ] {
        for r in [2.0, 3.0, 4.0] {
            let case = build_case(r, 0.7, 1.3).unwrap();
            for k in 0..=2 {
                let sys = manufactured_system(&mesh, k, &case);
                let err = jacobian_fd_error(&sys, 5, 2, 11 + k as u64);
                assert!(err <= 1e-5, "r={r}, k={k}: {err:e}");
            }
        }
    }
}

#[test]
fn newton_residual_history_decreases_to_tolerance() {
    let mesh = generate_hexagonal(4).unwrap();
    let case = build_case(3.0, 1.0, 1.0).unwrap();
    let mut sys = manufactured_system(&mesh, 1, &case);
    let opts = SolverOptions::default();
    let (_, report) = solve(&mut sys, &opts).unwrap();
    assert!(report.final_residual() <= opts.tol);
    assert!(report.linear.max_relative_residual <= 1e-10);
    let h = &report.residual_history;
    assert!(h.windows(2).all(|w| w[1] < w[0]), "{h:?}");
}

#[test]
fn continuation_reaches_the_same_solution() {
    let mesh = generate_triangular(4).unwrap();
    let case = build_case(4.0, 1.0, 1.0).unwrap();
    let mut plain = manufactured_system(&mesh, 1, &case);
    let (x, _) = solve(&mut plain, &SolverOptions::default()).unwrap();
    let mut cont = manufactured_system(&mesh, 1, &case);
    let opts = SolverOptions {
        continuation: true,
        ..SolverOptions::default()
    };
    let (y, report) = solve(&mut cont, &opts).unwrap();
    assert_eq!(report.stages.last().copied(), Some(4.0));
    assert!(report.stages.len() > 1);
    assert!((&x - &y).amax() <= 1e-8 * x.amax());
}
