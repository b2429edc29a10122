//! Fixtures shared by the benchmarks.

use hho_brinkman::harness::ManufacturedCase;
use hho_brinkman::mesh::{generate_hexagonal, generate_triangular};
use hho_brinkman::system::DirichletData;
use hho_brinkman::{BrinkmanSystem, Coefficients, Mesh};
use nalgebra::DVector;

pub fn triangular(n: usize) -> Mesh {
    generate_triangular(n).expect("valid generated mesh")
}

pub fn hexagonal(n: usize) -> Mesh {
    generate_hexagonal(n).expect("valid generated mesh")
}

/// Manufactured r = 3 problem on `mesh` with a deterministic non-zero state.
pub fn power_law_problem(mesh: &Mesh, k: usize) -> (BrinkmanSystem<'_>, DVector<f64>) {
    let case = ManufacturedCase::new(3.0, 1.0, 1.0).expect("valid case");
    let coeffs = Coefficients::uniform(mesh, 1.0, 1.0, 3.0).expect("valid coefficients");
    let mut sys = BrinkmanSystem::new(mesh, k, coeffs).expect("local operators");
    sys.set_sources(|p| case.momentum_source(p), |p| case.mass_source(p));
    let data = DirichletData::from_field(mesh, k, |p| case.velocity(p), sys.data_degree())
        .expect("boundary data");
    sys.set_dirichlet(data);
    let n = sys.dofs().len();
    let x = DVector::from_fn(n, |i, _| ((i * 7919) % 1000) as f64 * 1e-3 - 0.5);
    (sys, x)
}
