//! Bundled benchmark problems with closed-form solutions and manufactured
//! sources, addressable by name from run configurations.
//!
//! All three live on the unit square with Dirichlet data taken from the
//! exact solution:
//!
//! * `hump`: unsteady moving-hump layer problem (eps = 1e-6, b = (2,3),
//!   alpha = 1) on I = (0, 0.5];
//! * `tanh_layer`: steady interior-layer problem (eps = 1e-6,
//!   b = (1,2)/sqrt(5), alpha = 1, r(u) = u^2);
//! * `smooth_manufactured`: steady linear problem with a smooth solution
//!   (eps = 1e-2), used for estimator-exactness checks.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::problem::{ExactSolution, ProblemSpec, Reaction};
use crate::{Error, Result};

#[derive(Clone)]
pub struct Benchmark {
    pub name: &'static str,
    pub steady: bool,
    /// End time of the unsteady problems (unused for steady ones).
    pub t_end: f64,
    pub spec: ProblemSpec,
    /// Analytic value of the volume mean of the exact solution, where a
    /// quadrature evaluation would be inaccurate or wasteful.
    pub volume_mean_ref: Option<f64>,
    /// Analytic/high-accuracy value of the terminal mean.
    pub terminal_mean_ref: Option<f64>,
}

impl Benchmark {
    /// Exact solution at fixed time as a spatial closure (steady problems
    /// ignore the time argument).
    pub fn exact_at(&self, t: f64) -> Option<Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>> {
        let exact = self.spec.exact.clone()?;
        let value = exact.value.clone();
        Some(Arc::new(move |x| value(x, t)))
    }
}

pub fn by_name(name: &str) -> Result<Benchmark> {
    match name {
        "hump" => Ok(hump()),
        "tanh_layer" => Ok(tanh_layer()),
        "smooth_manufactured" => Ok(smooth_manufactured()),
        other => Err(Error::Config(format!(
            "unknown problem {other:?} (available: hump, tanh_layer, smooth_manufactured)"
        ))),
    }
}

const HUMP_EPS: f64 = 1e-6;
const HUMP_Z0: f64 = 0.25;
const HUMP_CENTER: [f64; 2] = [0.5, 0.5];

/// Common factors of the hump solution at one space point:
/// (g, A, P, q) with g the polynomial bump, A = pi/2 + atan(a q),
/// q = z0^2 - rho^2 and P = 1 + a^2 q^2.
fn hump_parts(x: [f64; 2]) -> (f64, f64, f64, f64) {
    let a = 2.0 / HUMP_EPS.sqrt();
    let g = x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
    let dx = x[0] - HUMP_CENTER[0];
    let dy = x[1] - HUMP_CENTER[1];
    let q = HUMP_Z0 * HUMP_Z0 - (dx * dx + dy * dy);
    let aq = a * q;
    let big_a = 0.5 * PI + aq.atan();
    let p = 1.0 + aq * aq;
    (g, big_a, p, q)
}

fn hump_value(x: [f64; 2], t: f64) -> f64 {
    let (g, big_a, _, _) = hump_parts(x);
    (16.0 / PI) * (PI * t).sin() * g * big_a
}

fn hump_gradient(x: [f64; 2], t: f64) -> [f64; 2] {
    let a = 2.0 / HUMP_EPS.sqrt();
    let s = (16.0 / PI) * (PI * t).sin();
    let (_, big_a, p, _) = hump_parts(x);
    let g1 = x[0] * (1.0 - x[0]);
    let g2 = x[1] * (1.0 - x[1]);
    let dg = [(1.0 - 2.0 * x[0]) * g2, g1 * (1.0 - 2.0 * x[1])];
    let da = [
        -2.0 * a * (x[0] - HUMP_CENTER[0]) / p,
        -2.0 * a * (x[1] - HUMP_CENTER[1]) / p,
    ];
    let g = g1 * g2;
    [
        s * (dg[0] * big_a + g * da[0]),
        s * (dg[1] * big_a + g * da[1]),
    ]
}

/// Source obtained by applying du/dt + b.grad u - eps lap u + u to the
/// closed form (b = (2,3)).
fn hump_source(x: [f64; 2], t: f64) -> f64 {
    let a = 2.0 / HUMP_EPS.sqrt();
    let (g, big_a, p, q) = hump_parts(x);
    let g1 = x[0] * (1.0 - x[0]);
    let g2 = x[1] * (1.0 - x[1]);
    let dg = [(1.0 - 2.0 * x[0]) * g2, g1 * (1.0 - 2.0 * x[1])];
    let dx = x[0] - HUMP_CENTER[0];
    let dy = x[1] - HUMP_CENTER[1];
    let da = [-2.0 * a * dx / p, -2.0 * a * dy / p];
    let rho2 = dx * dx + dy * dy;
    let lap_a = -4.0 * a / p - 8.0 * a.powi(3) * q * rho2 / (p * p);
    let lap_g = -2.0 * g2 - 2.0 * g1;

    let s = (16.0 / PI) * (PI * t).sin();
    let st = 16.0 * (PI * t).cos();
    let u = s * g * big_a;
    let grad = [
        s * (dg[0] * big_a + g * da[0]),
        s * (dg[1] * big_a + g * da[1]),
    ];
    let lap = s * (lap_g * big_a + 2.0 * (dg[0] * da[0] + dg[1] * da[1]) + g * lap_a);
    let u_t = st * g * big_a;
    u_t + 2.0 * grad[0] + 3.0 * grad[1] - HUMP_EPS * lap + u
}

pub fn hump() -> Benchmark {
    let spec = ProblemSpec {
        eps: HUMP_EPS,
        b: Arc::new(|_| [2.0, 3.0]),
        alpha: 1.0,
        reaction: Reaction::none(),
        f: Arc::new(hump_source),
        u0: Arc::new(|_, _| 0.0),
        g: Arc::new(|_, _| 0.0),
        exact: Some(ExactSolution {
            value: Arc::new(hump_value),
            gradient: Arc::new(hump_gradient),
        }),
    };
    Benchmark {
        name: "hump",
        steady: false,
        t_end: 0.5,
        spec,
        volume_mean_ref: None,
        terminal_mean_ref: Some(hump_terminal_mean_reference()),
    }
}

const TANH_EPS: f64 = 1e-6;

fn tanh_theta(x: [f64; 2]) -> f64 {
    (2.0 * x[0] - x[1] - 0.25) / (5.0 * TANH_EPS).sqrt()
}

fn tanh_value(x: [f64; 2]) -> f64 {
    0.5 * (1.0 - tanh_theta(x).tanh())
}

fn tanh_gradient(x: [f64; 2]) -> [f64; 2] {
    let sech = 1.0 / tanh_theta(x).cosh();
    let c = -0.5 * sech * sech / (5.0 * TANH_EPS).sqrt();
    [2.0 * c, -c]
}

/// Since b = (1,2)/sqrt(5) is orthogonal to grad u, the source reduces to
/// f = u + u^2 - sech^2(theta) tanh(theta).
fn tanh_source(x: [f64; 2]) -> f64 {
    let th = tanh_theta(x);
    let u = 0.5 * (1.0 - th.tanh());
    let sech = 1.0 / th.cosh();
    u + u * u - sech * sech * th.tanh()
}

pub fn tanh_layer() -> Benchmark {
    let sqrt5 = 5.0_f64.sqrt();
    let spec = ProblemSpec {
        eps: TANH_EPS,
        b: Arc::new(move |_| [1.0 / sqrt5, 2.0 / sqrt5]),
        alpha: 1.0,
        reaction: Reaction::square(),
        f: Arc::new(|x, _| tanh_source(x)),
        u0: Arc::new(|x, _| tanh_value(x)),
        g: Arc::new(|x, _| tanh_value(x)),
        exact: Some(ExactSolution {
            value: Arc::new(|x, _| tanh_value(x)),
            gradient: Arc::new(|x, _| tanh_gradient(x)),
        }),
    };
    Benchmark {
        name: "tanh_layer",
        steady: true,
        t_end: 0.0,
        spec,
        // The layer splits the square into a region where u = 1 (area 3/8
        // by elementary geometry) and one where u = 0; the odd layer tails
        // cancel, leaving 0.375 up to terms far below machine precision.
        volume_mean_ref: Some(0.375),
        terminal_mean_ref: None,
    }
}

const SMOOTH_EPS: f64 = 1e-2;

pub fn smooth_manufactured() -> Benchmark {
    let sqrt5 = 5.0_f64.sqrt();
    let value = |x: [f64; 2]| (PI * x[0]).sin() * (PI * x[1]).sin();
    let spec = ProblemSpec {
        eps: SMOOTH_EPS,
        b: Arc::new(move |_| [1.0 / sqrt5, 2.0 / sqrt5]),
        alpha: 1.0,
        reaction: Reaction::none(),
        f: Arc::new(move |x, _| {
            let sx = (PI * x[0]).sin();
            let cx = (PI * x[0]).cos();
            let sy = (PI * x[1]).sin();
            let cy = (PI * x[1]).cos();
            (PI / sqrt5) * (cx * sy + 2.0 * sx * cy) + (2.0 * PI * PI * SMOOTH_EPS + 1.0) * sx * sy
        }),
        u0: Arc::new(move |x, _| value(x)),
        g: Arc::new(|_, _| 0.0),
        exact: Some(ExactSolution {
            value: Arc::new(move |x, _| value(x)),
            gradient: Arc::new(|x, _| {
                [
                    PI * (PI * x[0]).cos() * (PI * x[1]).sin(),
                    PI * (PI * x[0]).sin() * (PI * x[1]).cos(),
                ]
            }),
        }),
    };
    Benchmark {
        name: "smooth_manufactured",
        steady: true,
        t_end: 0.0,
        spec,
        // Integral of sin(pi x) sin(pi y) over the unit square.
        volume_mean_ref: Some(4.0 / (PI * PI)),
        terminal_mean_ref: None,
    }
}

fn gauss_panel(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let rule = crate::quadrature::gauss_legendre_unit(n);
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(&x, &w)| (a + (b - a) * x, (b - a) * w))
        .collect()
}

/// Terminal mean of the hump solution at t = 0.5.
///
/// The arctan factor is radially symmetric about the square's center, so
/// up to radius 1/2 the angular integral of the polynomial bump is exact:
///   G(rho) = 2 - 8 rho^2 + 4 rho^4,
/// and the terminal mean splits into a 1D radial integral (with Gauss
/// panels refined around the layer radius 1/4) plus four smooth corner
/// caps handled in polar coordinates.
pub fn hump_terminal_mean_reference() -> f64 {
    hump_terminal_mean_with(40)
}

/// Implementation with an explicit Gauss order, so tests can check
/// Richardson-style stability under refinement.
pub fn hump_terminal_mean_with(n_gauss: usize) -> f64 {
    let a_const = 2.0 / HUMP_EPS.sqrt();
    let big_a = |rho: f64| 0.5 * PI + (a_const * (HUMP_Z0 * HUMP_Z0 - rho * rho)).atan();

    // Radial panels clustered around the layer at rho = 0.25.
    let breaks = [
        0.0, 0.15, 0.22, 0.24, 0.2475, 0.2495, 0.25, 0.2505, 0.2525, 0.26, 0.28, 0.35, 0.5,
    ];
    let mut disk = 0.0;
    for w in breaks.windows(2) {
        for (rho, wt) in gauss_panel(w[0], w[1], n_gauss) {
            let g_ang = 2.0 - 8.0 * rho * rho + 4.0 * rho.powi(4);
            disk += wt * big_a(rho) * g_ang * rho;
        }
    }

    // One corner cap (x, y in [1/2, 1]^2 outside the inscribed disk),
    // exploiting the diagonal symmetry: theta in [0, pi/4], doubled.
    let mut corner = 0.0;
    for (theta, wt) in gauss_panel(0.0, 0.25 * PI, n_gauss) {
        let (s, c) = theta.sin_cos();
        let r_max = 0.5 / c;
        let mut inner = 0.0;
        for (rho, wr) in gauss_panel(0.5, r_max, n_gauss) {
            let gx = 0.25 - rho * rho * c * c;
            let gy = 0.25 - rho * rho * s * s;
            inner += wr * big_a(rho) * gx * gy * rho;
        }
        corner += wt * inner;
    }
    corner *= 2.0 * 16.0 / PI;

    disk + 4.0 * corner
}
