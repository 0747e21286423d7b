//! Quadrature on the reference triangle (0,0),(1,0),(0,1) and on [0,1].
//!
//! All triangle rules have strictly positive weights summing to the
//! reference area 1/2. Degrees 1 and 2 use the classic centroid and
//! three-interior-point rules; higher degrees use a tensor Gauss rule mapped
//! through the Duffy transform, which keeps weights positive at every degree.

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct TriQuadrature {
    pub degree: usize,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LineQuadrature {
    /// Nodes in (0,1).
    pub points: Vec<f64>,
    /// Weights summing to 1.
    pub weights: Vec<f64>,
}

/// Gauss-Legendre rule with `n` nodes on [0,1], exact to degree 2n-1.
/// Nodes and weights are computed by Newton iteration on the Legendre
/// polynomial, which is reproducible and accurate to machine precision.
pub fn gauss_legendre_unit(n: usize) -> LineQuadrature {
    assert!(n >= 1);
    let mut points = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        // Initial guess (Chebyshev-like), then Newton on P_n over [-1,1].
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map [-1,1] -> [0,1]; cos() above descends, so reverse for ascending nodes.
        points.push(0.5 * (1.0 - x));
        weights.push(0.5 * w);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
    LineQuadrature {
        points: idx.iter().map(|&i| points[i]).collect(),
        weights: idx.iter().map(|&i| weights[i]).collect(),
    }
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Rule on the reference triangle exact for total degree `d`, 1 <= d <= 12.
pub fn triangle_rule(d: usize) -> Result<TriQuadrature> {
    if d < 1 || d > 12 {
        return Err(Error::BadQuadratureDegree(d));
    }
    let (points, weights) = match d {
        1 => (vec![[1.0 / 3.0, 1.0 / 3.0]], vec![0.5]),
        2 => (
            vec![
                [1.0 / 6.0, 1.0 / 6.0],
                [2.0 / 3.0, 1.0 / 6.0],
                [1.0 / 6.0, 2.0 / 3.0],
            ],
            vec![1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0],
        ),
        _ => duffy_rule(d),
    };
    Ok(TriQuadrature {
        degree: d,
        points,
        weights,
    })
}

/// Tensor Gauss rule through the Duffy map (x, y) = (s, t(1-s)):
/// integral over the triangle of f = integral over the unit square of
/// f(s, t(1-s)) (1-s) ds dt. For total degree d the integrand has degree
/// <= d+1 in s and <= d in t.
fn duffy_rule(d: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
    let ns = (d + 3) / 2; // exact for s-degree d+1
    let nt = (d + 2) / 2; // exact for t-degree d
    let gs = gauss_legendre_unit(ns);
    let gt = gauss_legendre_unit(nt);
    let mut points = Vec::with_capacity(ns * nt);
    let mut weights = Vec::with_capacity(ns * nt);
    for (i, &s) in gs.points.iter().enumerate() {
        for (j, &t) in gt.points.iter().enumerate() {
            points.push([s, t * (1.0 - s)]);
            weights.push(gs.weights[i] * gt.weights[j] * (1.0 - s));
        }
    }
    (points, weights)
}
