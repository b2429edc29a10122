//! The power-law stress `sigma(tau) = mu |tau|^{r-2} tau` and its derivative.
//!
//! Both functions act on flat arrays so that the same code serves 2x2
//! tensors (`N = 4`, row-major) and vectors (`N = 2`).

use nalgebra::{Matrix2, Matrix4};

use crate::error::{Error, Result};

/// Regularisation of `|tau|` inside the Jacobian only.
pub const JACOBIAN_EPS: f64 = 1e-10;

/// Flow exponent `r > 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exponent(f64);

impl Exponent {
    pub fn new(r: f64) -> Result<Self> {
        if r.is_finite() && r > 1.0 {
            Ok(Self(r))
        } else {
            Err(Error::InvalidParameters("r must exceed 1".into()))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Conjugate exponent `r / (r - 1)`.
    pub fn conjugate(self) -> f64 {
        self.0 / (self.0 - 1.0)
    }
}

fn norm<const N: usize>(t: &[f64; N]) -> f64 {
    t.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `mu |tau|^{r-2} tau`, with `sigma(0) = 0`.
pub fn sigma_flat<const N: usize>(tau: &[f64; N], mu: f64, r: f64) -> [f64; N] {
    let n = norm(tau);
    if n == 0.0 {
        return [0.0; N];
    }
    let s = mu * n.powf(r - 2.0);
    tau.map(|t| s * t)
}

/// Matrix of `eta -> mu |tau|^{r-2} eta + mu (r-2) |tau|^{r-4} (tau : eta) tau`.
///
/// When `|tau| < JACOBIAN_EPS`, `|tau|` is replaced by
/// `sqrt(|tau|^2 + JACOBIAN_EPS^2)`.
pub fn dsigma_flat<const N: usize>(tau: &[f64; N], mu: f64, r: f64) -> [[f64; N]; N] {
    let mut n = norm(tau);
    if n < JACOBIAN_EPS {
        n = (n * n + JACOBIAN_EPS * JACOBIAN_EPS).sqrt();
    }
    let a = mu * n.powf(r - 2.0);
    let b = mu * (r - 2.0) * n.powf(r - 4.0);
    let mut d = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            d[i][j] = b * tau[i] * tau[j];
        }
        d[i][i] += a;
    }
    d
}

pub fn sigma(tau: &Matrix2<f64>, mu: f64, r: f64) -> Matrix2<f64> {
    let s = sigma_flat(&[tau[(0, 0)], tau[(0, 1)], tau[(1, 0)], tau[(1, 1)]], mu, r);
    Matrix2::new(s[0], s[1], s[2], s[3])
}

/// Derivative of [`sigma`] as a matrix acting on row-major flattened tensors.
pub fn dsigma(tau: &Matrix2<f64>, mu: f64, r: f64) -> Matrix4<f64> {
    let d = dsigma_flat(&[tau[(0, 0)], tau[(0, 1)], tau[(1, 0)], tau[(1, 1)]], mu, r);
    Matrix4::from_fn(|i, j| d[i][j])
}
