//! Quadrature rules on segments, triangles and polygons.
//!
//! Triangle rules are collapsed (Duffy) tensor products of Gauss-Legendre
//! rules; polygons are fan-triangulated from their centroid.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::mesh::{CellGeometry, FaceGeometry, Point};

/// Highest polynomial degree for which rules are tabulated.
pub const MAX_DEGREE: usize = 40;

#[derive(Clone, Debug)]
pub struct Quadrature {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    /// Polynomials of total degree up to this value are integrated exactly.
    pub degree: usize,
}

impl Quadrature {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point, f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, f: impl Fn(&Point) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// Gauss-Legendre rule with `n` points on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Legendre polynomial `P_n` and its derivative at `x`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Reference rule on the triangle (0,0), (1,0), (0,1): `([xi, eta], weight)`.
type ReferenceRule = Vec<([f64; 2], f64)>;

fn reference_triangle(degree: usize) -> &'static ReferenceRule {
    static TABLE: OnceLock<Vec<ReferenceRule>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        (0..=MAX_DEGREE)
            .map(|d| {
                // The Duffy Jacobian (1 - u) adds one degree in u.
                let (nu, nv) = ((d + 2).div_ceil(2), (d + 1).div_ceil(2));
                let (xu, wu) = gauss_legendre(nu);
                let (xv, wv) = gauss_legendre(nv);
                let mut rule = Vec::with_capacity(nu * nv);
                for (u, a) in xu.iter().zip(&wu) {
                    for (v, b) in xv.iter().zip(&wv) {
                        rule.push(([*u, v * (1.0 - u)], a * b * (1.0 - u)));
                    }
                }
                rule
            })
            .collect()
    });
    &table[degree]
}

fn check_degree(degree: usize) -> Result<()> {
    if degree > MAX_DEGREE {
        Err(Error::QuadratureDegree {
            requested: degree,
            max: MAX_DEGREE,
        })
    } else {
        Ok(())
    }
}

/// Rule of the given degree on the triangle `(a, b, c)`.
pub fn triangle_quadrature(a: Point, b: Point, c: Point, degree: usize) -> Result<Quadrature> {
    check_degree(degree)?;
    let mut q = Quadrature {
        points: Vec::new(),
        weights: Vec::new(),
        degree,
    };
    push_triangle(&mut q, a, b, c);
    Ok(q)
}

fn push_triangle(q: &mut Quadrature, a: Point, b: Point, c: Point) {
    let (e1, e2) = (b - a, c - a);
    let jac = (e1.x * e2.y - e1.y * e2.x).abs();
    for ([xi, eta], w) in reference_triangle(q.degree) {
        q.points.push(a + e1 * *xi + e2 * *eta);
        q.weights.push(w * jac);
    }
}

/// Rule of the given degree on a polygonal cell.
///
/// Polygons with more than three vertices are split into the triangles
/// joining each face to the centroid; triangles are integrated directly.
pub fn cell_quadrature(cell: &CellGeometry, degree: usize) -> Result<Quadrature> {
    check_degree(degree)?;
    let mut q = Quadrature {
        points: Vec::new(),
        weights: Vec::new(),
        degree,
    };
    let v = &cell.vertices;
    if v.len() == 3 {
        push_triangle(&mut q, v[0], v[1], v[2]);
    } else {
        for i in 0..v.len() {
            push_triangle(&mut q, cell.centroid, v[i], v[(i + 1) % v.len()]);
        }
    }
    Ok(q)
}

/// Gauss rule of the given degree on a face.
pub fn face_quadrature(face: &FaceGeometry, degree: usize) -> Result<Quadrature> {
    check_degree(degree)?;
    let (x, w) = gauss_legendre((degree + 1).div_ceil(2).max(1));
    let start = face.midpoint - face.tangent * (0.5 * face.length);
    Ok(Quadrature {
        points: x
            .iter()
            .map(|s| start + face.tangent * (s * face.length))
            .collect(),
        weights: w.iter().map(|w| w * face.length).collect(),
        degree,
    })
}
