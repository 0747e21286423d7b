//! Stabilization parameters: SUPG cell parameter `delta_K` and the
//! shock-capturing (crosswind diffusion) factor `tau_K`.
//!
//! Both are cellwise scalars. `delta_K` weights the streamline test
//! perturbation `b . grad(phi)`, `tau_K` scales an added crosswind
//! diffusion `tau_K <D grad(u), grad(phi)>` where `D` projects onto the
//! complement of the flow direction.

use crate::mesh::CellGeometry;

/// Tunable constants for both stabilization terms.
///
/// All fields are nonnegative scale factors; `kappa` must be strictly
/// positive since it guards a division.
#[derive(Debug, Clone, Copy)]
pub struct StabilizationConfig {
    /// Scale applied to the min-formula for `delta_K`.
    pub c_delta: f64,
    /// Inverse-inequality constant entering the diffusive bound of `delta_K`.
    pub mu_inv: f64,
    /// Shock-capturing length scale factor.
    pub l0: f64,
    /// Shock-capturing threshold constant.
    pub beta: f64,
    /// Regularization added to the `H1` seminorm in the scaled residual.
    pub kappa: f64,
    /// Scale applied to the dual problem's `delta_K`.
    pub dual_delta_scale: f64,
    /// Whether the dual solve adds its own shock-capturing term.
    pub dual_shock_capturing: bool,
}

impl Default for StabilizationConfig {
    fn default() -> Self {
        StabilizationConfig {
            c_delta: 1.0,
            mu_inv: 1.0,
            l0: 0.5,
            beta: 1.0,
            kappa: 1e-12,
            dual_delta_scale: 1.0,
            dual_shock_capturing: false,
        }
    }
}

impl StabilizationConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let nonneg = [
            ("c_delta", self.c_delta),
            ("mu_inv", self.mu_inv),
            ("l0", self.l0),
            ("beta", self.beta),
            ("dual_delta_scale", self.dual_delta_scale),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(crate::Error::Config(format!(
                    "stabilization constant {name} must be >= 0, got {v}"
                )));
            }
        }
        if !(self.kappa > 0.0) {
            return Err(crate::Error::Config(format!(
                "stabilization constant kappa must be > 0, got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// SUPG parameter for the steady problem:
/// `c_delta * min{ h/(p|b|), h^2/(p^4 mu_inv^2 eps), 1/(alpha+r0), (alpha+r0)/L_r^2 }`.
///
/// Terms with a zero denominator are omitted from the min; if every term is
/// omitted the result is 0. `b_norm` is the sup over quadrature points of
/// the Euclidean norm of the velocity on the cell.
pub fn delta_k_steady(
    geo: &CellGeometry,
    b_norm: f64,
    eps: f64,
    alpha: f64,
    r0: f64,
    l_r: f64,
    p: usize,
    config: &StabilizationConfig,
) -> f64 {
    let h = geo.h;
    let pf = p as f64;
    let mut best = f64::INFINITY;
    if b_norm > 0.0 {
        best = best.min(h / (pf * b_norm));
    }
    if config.mu_inv > 0.0 && eps > 0.0 {
        best = best.min(h * h / (pf.powi(4) * config.mu_inv * config.mu_inv * eps));
    }
    let sigma = alpha + r0;
    if sigma > 0.0 {
        best = best.min(1.0 / sigma);
        if l_r > 0.0 {
            best = best.min(sigma / (l_r * l_r));
        }
    }
    if best.is_finite() {
        config.c_delta * best
    } else {
        0.0
    }
}

/// SUPG parameter for one time step of length `k_m`:
/// `c_delta * min{ h/(p|b|), h^2/(p^4 eps), 1/(k_m+alpha), (k_m+alpha)/alpha^2 }`.
///
/// The last term is omitted when `alpha = 0`; zero-denominator terms are
/// omitted as in the steady variant.
pub fn delta_k_unsteady(
    geo: &CellGeometry,
    b_norm: f64,
    eps: f64,
    alpha: f64,
    k_m: f64,
    p: usize,
    config: &StabilizationConfig,
) -> f64 {
    let h = geo.h;
    let pf = p as f64;
    let mut best = f64::INFINITY;
    if b_norm > 0.0 {
        best = best.min(h / (pf * b_norm));
    }
    if eps > 0.0 {
        best = best.min(h * h / (pf.powi(4) * eps));
    }
    if k_m + alpha > 0.0 {
        best = best.min(1.0 / (k_m + alpha));
    }
    if alpha > 0.0 {
        best = best.min((k_m + alpha) / (alpha * alpha));
    }
    if best.is_finite() {
        config.c_delta * best
    } else {
        0.0
    }
}

/// Crosswind projector `D = I - b b^T / |b|^2`, or the zero matrix for
/// `b = 0`. Row-major 2x2.
pub fn crosswind_projector(b: [f64; 2]) -> [[f64; 2]; 2] {
    let n2 = b[0] * b[0] + b[1] * b[1];
    if n2 == 0.0 {
        return [[0.0, 0.0], [0.0, 0.0]];
    }
    [
        [1.0 - b[0] * b[0] / n2, -b[0] * b[1] / n2],
        [-b[0] * b[1] / n2, 1.0 - b[1] * b[1] / n2],
    ]
}

/// Shock-capturing factor `tau_K = l_K * Rhat_K` built from the cell
/// residual norm `res_l2 = ||R(u_h)||_{L2(K)}` and the seminorm
/// `semi_h1 = |u_h|_{H1(K)}`:
///
/// `Rhat = res_l2 / (semi_h1 + kappa)`,
/// `l_K  = l0 * h * max{0, beta - 2 eps / (h * Rhat)}`.
///
/// Returns 0 when the residual vanishes or diffusion dominates the
/// threshold.
pub fn tau_k(
    geo: &CellGeometry,
    res_l2: f64,
    semi_h1: f64,
    eps: f64,
    config: &StabilizationConfig,
) -> f64 {
    if res_l2 <= 0.0 {
        return 0.0;
    }
    let rhat = res_l2 / (semi_h1 + config.kappa);
    if rhat <= 0.0 {
        return 0.0;
    }
    let h = geo.h;
    let l_k = config.l0 * h * (config.beta - 2.0 * eps / (h * rhat)).max(0.0);
    l_k * rhat
}
