//! Problem data for the convection-diffusion-reaction equation
//!
//!   du/dt + b . grad(u) - div(eps grad(u)) + alpha u + r(u) = f
//!
//! with Dirichlet data `g` on the whole boundary and initial datum `u0`.
//! The steady variant drops the time derivative. Coefficients are shared
//! closures so problem specs can be cloned across solver stages.

use std::sync::Arc;

use crate::{Error, Result};

pub type ScalarField = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;
pub type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Nonlinear reaction term `r(u)` with its derivative and the two
/// constants the stabilization parameter needs: a monotonicity lower
/// bound `r0 <= r'(s)` and a Lipschitz bound `l_r >= |r'(s)|` over the
/// solution range.
#[derive(Clone)]
pub struct Reaction {
    pub r: ScalarMap,
    pub r_prime: ScalarMap,
    pub r0: f64,
    pub l_r: f64,
}

impl Reaction {
    pub fn none() -> Self {
        Reaction {
            r: Arc::new(|_| 0.0),
            r_prime: Arc::new(|_| 0.0),
            r0: 0.0,
            l_r: 0.0,
        }
    }

    /// r(u) = u^2 with bounds valid for solutions in [0, 1].
    pub fn square() -> Self {
        Reaction {
            r: Arc::new(|u| u * u),
            r_prime: Arc::new(|u| 2.0 * u),
            r0: 0.0,
            l_r: 2.0,
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.l_r == 0.0 && (self.r)(1.0) == 0.0 && (self.r)(-1.0) == 0.0
    }
}

/// Closed-form reference solution for manufactured benchmarks.
#[derive(Clone)]
pub struct ExactSolution {
    pub value: ScalarField,
    pub gradient: Arc<dyn Fn([f64; 2], f64) -> [f64; 2] + Send + Sync>,
}

/// Full coefficient set for one problem instance.
#[derive(Clone)]
pub struct ProblemSpec {
    pub eps: f64,
    pub b: VectorField,
    pub alpha: f64,
    pub reaction: Reaction,
    /// Source term f(x, t); steady solvers evaluate it at t = 0.
    pub f: ScalarField,
    pub u0: ScalarField,
    /// Dirichlet boundary data g(x, t).
    pub g: ScalarField,
    pub exact: Option<ExactSolution>,
}

impl ProblemSpec {
    /// Linear steady problem with constant velocity, homogeneous Dirichlet
    /// data, and no reaction beyond `alpha u`. Handy for tests.
    pub fn linear_steady(
        eps: f64,
        b: [f64; 2],
        alpha: f64,
        f: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ProblemSpec {
            eps,
            b: Arc::new(move |_| b),
            alpha,
            reaction: Reaction::none(),
            f: Arc::new(move |x, _| f(x)),
            u0: Arc::new(|_, _| 0.0),
            g: Arc::new(|_, _| 0.0),
            exact: None,
        }
    }

    /// Sampled well-posedness checks: eps > 0, alpha >= 0, r(0) = 0 and
    /// r'(s) >= r0 >= 0 on a fixed sample grid.
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "diffusion eps must be > 0, got {}",
                self.eps
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "reaction constant alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if self.reaction.r0 < 0.0 {
            return Err(Error::Config(format!(
                "reaction bound r0 must be >= 0, got {}",
                self.reaction.r0
            )));
        }
        let r_at_zero = (self.reaction.r)(0.0);
        if r_at_zero.abs() > 1e-12 {
            return Err(Error::Config(format!(
                "reaction must satisfy r(0) = 0, got r(0) = {r_at_zero}"
            )));
        }
        // Monotonicity is required on the solution range; all bundled
        // problems have u in [0, 1].
        let mut s = 0.0;
        while s <= 1.0 + 1e-9 {
            let rp = (self.reaction.r_prime)(s);
            if rp < self.reaction.r0 - 1e-12 {
                return Err(Error::Config(format!(
                    "reaction derivative r'({s}) = {rp} violates lower bound r0 = {}",
                    self.reaction.r0
                )));
            }
            s += 0.0625;
        }
        Ok(())
    }

    /// Supremum of |b| over a point set (quadrature points of one cell).
    pub fn b_sup_norm(&self, points: &[[f64; 2]]) -> f64 {
        let mut sup: f64 = 0.0;
        for &x in points {
            let bv = (self.b)(x);
            sup = sup.max((bv[0] * bv[0] + bv[1] * bv[1]).sqrt());
        }
        sup
    }
}
