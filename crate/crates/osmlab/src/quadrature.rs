//! Gauss quadrature on the unit interval and the reference triangle.
//!
//! Triangle rules are collapsed tensor products: with the Duffy substitution
//! `(x, y) = (u, t(1-u))` the integral over the reference triangle
//! `{x >= 0, y >= 0, x + y <= 1}` becomes a weighted square integral, and a
//! Gauss-Legendre product rule with the `(1-u)` factor absorbed into the
//! weights integrates any total degree `p` polynomial exactly once each
//! direction has `floor(p/2) + 1` points.

use crate::geom::Vec2;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Chebyshev-style initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (_, d2) = legendre_with_derivative(n, x);
                dp = d2;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        weights[i] = w;
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    (
        x.iter().map(|&t| 0.5 * (t + 1.0)).collect(),
        w.iter().map(|&t| 0.5 * t).collect(),
    )
}

/// A quadrature rule on the reference triangle `{(0,0), (1,0), (0,1)}`.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
    /// Total polynomial degree integrated exactly.
    pub exact_degree: usize,
}

impl TriangleRule {
    /// Rule exact for all polynomials of total degree `<= degree`.
    pub fn with_exactness(degree: usize) -> TriangleRule {
        let n = degree / 2 + 1;
        let (u, wu) = gauss_legendre_unit(n);
        let (t, wt) = gauss_legendre_unit(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                points.push(Vec2::new(u[i], t[j] * (1.0 - u[i])));
                weights.push(wu[i] * wt[j] * (1.0 - u[i]));
            }
        }
        TriangleRule {
            points,
            weights,
            exact_degree: degree,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Exact integral of `x^a y^b` over the reference triangle.
pub fn monomial_integral(a: u32, b: u32) -> f64 {
    // a! b! / (a + b + 2)!
    let mut value = 1.0;
    for k in 1..=b {
        value *= k as f64;
    }
    for k in (a + 1)..=(a + b + 2) {
        value /= k as f64;
    }
    value
}
