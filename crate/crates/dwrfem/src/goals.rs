//! Goal functionals driving the adaptive runs: mean values, terminal mean
//! values, a weighted L2-error functional, and a regularized point value.
//!
//! Every goal is used through a frozen density pair (volumetric j, terminal
//! j_T) so that the functional is linear during one adaptive iteration:
//! J(u) = <<j, u>> + <j_T, u(T)>. The L2-error goal freezes its weight
//! e/||e|| at the current iterate, the point value goal freezes the
//! discrete ball measure of the current mesh.

use std::sync::Arc;

use crate::quadrature::triangle_rule;
use crate::space::{FeFunction, FeSpace};
use crate::{Error, Result};

/// Quadrature degree used for goal evaluation and density pairings.
pub const GOAL_QUAD_DEGREE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalKind {
    TerminalMean,
    VolumeMean,
    WeightedL2Error,
    PointValueRegularized,
}

impl GoalKind {
    pub fn name(self) -> &'static str {
        match self {
            GoalKind::TerminalMean => "terminal_mean",
            GoalKind::VolumeMean => "volume_mean",
            GoalKind::WeightedL2Error => "weighted_l2_error",
            GoalKind::PointValueRegularized => "point_value_regularized",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "terminal_mean" => Ok(GoalKind::TerminalMean),
            "volume_mean" => Ok(GoalKind::VolumeMean),
            "weighted_l2_error" => Ok(GoalKind::WeightedL2Error),
            "point_value_regularized" => Ok(GoalKind::PointValueRegularized),
            other => Err(Error::Config(format!("unknown goal kind {other:?}"))),
        }
    }
}

/// Config-level goal description (before freezing).
#[derive(Debug, Clone, Copy)]
pub struct GoalSpec {
    pub kind: GoalKind,
    /// Control point of the regularized point value.
    pub x_e: [f64; 2],
    /// Ball radius of the regularized point value.
    pub radius: f64,
}

impl GoalSpec {
    pub fn new(kind: GoalKind) -> Self {
        GoalSpec {
            kind,
            x_e: [3.0 / 16.0, 1.0 / 8.0],
            radius: 1.0 / 64.0,
        }
    }

    /// The regularization ball must lie strictly inside the unit square.
    pub fn validate(&self) -> Result<()> {
        if self.kind == GoalKind::PointValueRegularized {
            if !(self.radius > 0.0) {
                return Err(Error::Config(format!(
                    "point value radius must be > 0, got {}",
                    self.radius
                )));
            }
            let [x, y] = self.x_e;
            let r = self.radius;
            if x - r <= 0.0 || x + r >= 1.0 || y - r <= 0.0 || y + r >= 1.0 {
                return Err(Error::Config(format!(
                    "regularization ball (center ({x}, {y}), radius {r}) \
                     must lie strictly inside the unit square"
                )));
            }
        }
        Ok(())
    }
}

/// Spatial density, evaluable at a physical point together with the cell
/// and reference coordinates of the reference view it was frozen on (the
/// error weight needs them to evaluate the frozen iterate).
#[derive(Clone)]
pub enum Density {
    Zero,
    Constant(f64),
    BallIndicator {
        center: [f64; 2],
        radius: f64,
        inv_measure: f64,
    },
    /// j = (u_exact - u_h)/||u_exact - u_h||, frozen.
    ScaledError {
        u_h: FeFunction,
        exact: Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>,
        inv_norm: f64,
    },
}

impl Density {
    pub fn is_zero(&self) -> bool {
        matches!(self, Density::Zero)
    }

    /// Value at physical point `x`. For `ScaledError`, `(cell, l)` must
    /// address the same point on the frozen iterate's view.
    pub fn eval(&self, cell: usize, l: [f64; 2], x: [f64; 2]) -> f64 {
        match self {
            Density::Zero => 0.0,
            Density::Constant(c) => *c,
            Density::BallIndicator {
                center,
                radius,
                inv_measure,
            } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                if dx * dx + dy * dy <= radius * radius {
                    *inv_measure
                } else {
                    0.0
                }
            }
            Density::ScaledError {
                u_h,
                exact,
                inv_norm,
            } => {
                let (v, _) = u_h.value_grad(cell, l);
                (exact(x) - v) * inv_norm
            }
        }
    }

    /// Rebuilds the density so that its `(cell, l)` addressing is valid on
    /// `space`. For the error weight this re-expresses the frozen iterate
    /// by nodal sampling, which is exact whenever `space` lives on a
    /// refinement of the frozen mesh with at least the frozen degree.
    pub fn on_space(
        &self,
        forest: &crate::mesh::MeshForest,
        space: &Arc<FeSpace>,
    ) -> Density {
        match self {
            Density::ScaledError {
                u_h,
                exact,
                inv_norm,
            } => {
                if Arc::ptr_eq(&u_h.space, space) {
                    return self.clone();
                }
                Density::ScaledError {
                    u_h: u_h.transfer(forest, space),
                    exact: exact.clone(),
                    inv_norm: *inv_norm,
                }
            }
            other => other.clone(),
        }
    }
}

/// Goal with densities frozen for one adaptive iteration.
#[derive(Clone)]
pub struct FrozenGoal {
    pub kind: GoalKind,
    pub j: Density,
    pub j_terminal: Density,
}

/// Freezes the goal densities. `u_h` is the current iterate (required by
/// the error-weight goal, whose density view becomes `u_h`'s view);
/// `exact` is the closed-form solution (steady: evaluated as given).
pub fn freeze_goal(
    goal: &GoalSpec,
    u_h: Option<&FeFunction>,
    exact: Option<&Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>>,
) -> Result<FrozenGoal> {
    goal.validate()?;
    match goal.kind {
        GoalKind::TerminalMean => Ok(FrozenGoal {
            kind: goal.kind,
            j: Density::Zero,
            j_terminal: Density::Constant(1.0),
        }),
        GoalKind::VolumeMean => Ok(FrozenGoal {
            kind: goal.kind,
            j: Density::Constant(1.0),
            j_terminal: Density::Zero,
        }),
        GoalKind::WeightedL2Error => {
            let u_h = u_h.ok_or_else(|| {
                Error::Config("weighted_l2_error needs the current iterate".into())
            })?;
            let exact = exact.ok_or_else(|| {
                Error::Config("weighted_l2_error needs an exact solution".into())
            })?;
            let norm = error_l2_norm(u_h, exact.as_ref());
            if norm < 1e-14 {
                return Err(Error::Config(
                    "weighted_l2_error is degenerate: the error vanishes".into(),
                ));
            }
            Ok(FrozenGoal {
                kind: goal.kind,
                j: Density::ScaledError {
                    u_h: u_h.clone(),
                    exact: exact.clone(),
                    inv_norm: 1.0 / norm,
                },
                j_terminal: Density::Zero,
            })
        }
        GoalKind::PointValueRegularized => {
            let u_h = u_h.ok_or_else(|| {
                Error::Config("point_value_regularized needs a mesh context".into())
            })?;
            let measure = ball_measure(&u_h.space, goal.x_e, goal.radius)?;
            Ok(FrozenGoal {
                kind: goal.kind,
                j: Density::BallIndicator {
                    center: goal.x_e,
                    radius: goal.radius,
                    inv_measure: 1.0 / measure,
                },
                j_terminal: Density::Zero,
            })
        }
    }
}

/// Discrete measure of the ball: the quadrature mass of its indicator on
/// the given mesh. Using the same rule in `evaluate_goal` makes constants
/// reproduce exactly.
pub fn ball_measure(space: &Arc<FeSpace>, center: [f64; 2], radius: f64) -> Result<f64> {
    let rule = triangle_rule(GOAL_QUAD_DEGREE)?;
    let view = &space.view;
    let mut measure = 0.0;
    for c in 0..view.cell_ids.len() {
        let detj = 2.0 * view.geo[c].area;
        for (q, &l) in rule.points.iter().enumerate() {
            let x = view.map_ref(c, l);
            let dx = x[0] - center[0];
            let dy = x[1] - center[1];
            if dx * dx + dy * dy <= radius * radius {
                measure += rule.weights[q] * detj;
            }
        }
    }
    if measure <= 0.0 {
        return Err(Error::Config(format!(
            "no quadrature point hits the ball at ({}, {}) with radius {}; \
             the mesh is too coarse for this goal",
            center[0], center[1], radius
        )));
    }
    Ok(measure)
}

/// L2 norm of `exact - u_h` by fixed high-order quadrature.
pub fn error_l2_norm(u_h: &FeFunction, exact: &(dyn Fn([f64; 2]) -> f64 + Sync)) -> f64 {
    let rule = triangle_rule(GOAL_QUAD_DEGREE).expect("degree supported");
    let view = &u_h.space.view;
    let tab = u_h.space.reference.tabulate(&rule.points);
    let mut acc = 0.0;
    for c in 0..view.cell_ids.len() {
        let detj = 2.0 * view.geo[c].area;
        for (q, &l) in rule.points.iter().enumerate() {
            let x = view.map_ref(c, l);
            let (v, _) = u_h.value_grad_tab(c, &tab[q]);
            let e = exact(x) - v;
            acc += rule.weights[q] * detj * e * e;
        }
    }
    acc.sqrt()
}

/// <j, u> over u's mesh. For the error-weight density, u must live on the
/// view the density was frozen on.
pub fn pair_density(density: &Density, u: &FeFunction) -> f64 {
    if density.is_zero() {
        return 0.0;
    }
    let rule = triangle_rule(GOAL_QUAD_DEGREE).expect("degree supported");
    let view = &u.space.view;
    let tab = u.space.reference.tabulate(&rule.points);
    let mut acc = 0.0;
    for c in 0..view.cell_ids.len() {
        let detj = 2.0 * view.geo[c].area;
        for (q, &l) in rule.points.iter().enumerate() {
            let x = view.map_ref(c, l);
            let jv = density.eval(c, l, x);
            if jv != 0.0 {
                let (v, _) = u.value_grad_tab(c, &tab[q]);
                acc += rule.weights[q] * detj * jv * v;
            }
        }
    }
    acc
}

/// <j, w> for a closed-form field `w` over the cells of `space`'s view.
/// Used to evaluate goals at exact solutions.
pub fn pair_density_with(
    density: &Density,
    space: &Arc<FeSpace>,
    w: &(dyn Fn([f64; 2]) -> f64 + Sync),
) -> f64 {
    if density.is_zero() {
        return 0.0;
    }
    let rule = triangle_rule(GOAL_QUAD_DEGREE).expect("degree supported");
    let view = &space.view;
    let mut acc = 0.0;
    for c in 0..view.cell_ids.len() {
        let detj = 2.0 * view.geo[c].area;
        for (q, &l) in rule.points.iter().enumerate() {
            let x = view.map_ref(c, l);
            let jv = density.eval(c, l, x);
            if jv != 0.0 {
                acc += rule.weights[q] * detj * jv * w(x);
            }
        }
    }
    acc
}

/// Goal value of a stationary state: <j, u>.
pub fn evaluate_goal_steady(goal: &FrozenGoal, u: &FeFunction) -> f64 {
    pair_density(&goal.j, u)
}

/// Spurious-oscillation measure: max - min over the mesh vertices.
pub fn var_metric(u: &FeFunction) -> f64 {
    u.vertex_variation()
}
