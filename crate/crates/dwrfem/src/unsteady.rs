//! Time stepping: piecewise-constant-in-time primal sweeps (equivalent to
//! backward Euler with the stabilized spatial form) and the
//! continuous-piecewise-linear dual solved backward on the union mesh
//! (equivalent to Crank-Nicolson steps of the adjoint equation).

use std::collections::HashMap;
use std::sync::Arc;

use crate::assembly::{coupling_pattern, Assembler, AssemblyMode};
use crate::goals::{Density, FrozenGoal, GOAL_QUAD_DEGREE};
use crate::mesh::{dot, MeshForest};
use crate::problem::ProblemSpec;
use crate::quadrature::triangle_rule;
use crate::space::{build_space, FeFunction, FeSpace};
use crate::sparse::{check_residual, ConstrainedMatrix, CsrMatrix, Factorization, SparseSystem};
use crate::stabilization::{delta_k_unsteady, StabilizationConfig};
use crate::{Error, Result};

/// Time knots t_0 < t_1 < ... < t_M; interval m (0-based) covers
/// (knots[m], knots[m+1]].
#[derive(Debug, Clone, PartialEq)]
pub struct TimePartition {
    pub knots: Vec<f64>,
}

impl TimePartition {
    pub fn uniform(t_end: f64, m: usize) -> Self {
        assert!(m >= 1 && t_end > 0.0);
        let knots = (0..=m).map(|i| t_end * i as f64 / m as f64).collect();
        TimePartition { knots }
    }

    pub fn n_intervals(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn t_end(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Length of interval `m`.
    pub fn k(&self, m: usize) -> f64 {
        self.knots[m + 1] - self.knots[m]
    }

    /// Splits interval `m` at its midpoint.
    pub fn split(&mut self, m: usize) {
        let mid = 0.5 * (self.knots[m] + self.knots[m + 1]);
        self.knots.insert(m + 1, mid);
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.len() < 2 {
            return Err(Error::Config("time partition needs at least one interval".into()));
        }
        if self.knots[0] != 0.0 {
            return Err(Error::Config("time partition must start at t = 0".into()));
        }
        if self.knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("time knots must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Knot values of a space-time function. The primal solution is
/// piecewise constant in time (`time_continuous = false`): `values[m+1]`
/// lives on interval m's space and is the value throughout
/// (t_m, t_{m+1}]; `values[0]` is the initial datum's interpolant on
/// interval 0's space. The dual is continuous piecewise linear
/// (`time_continuous = true`) with all knot values on one union space.
pub struct SpaceTimeSolution {
    pub partition: TimePartition,
    pub values: Vec<FeFunction>,
    pub time_continuous: bool,
}

impl SpaceTimeSolution {
    /// Value at (x, t). Piecewise-constant solutions take the value of
    /// the interval containing t (right-continuous from the left knot:
    /// t in (t_m, t_{m+1}] maps to values[m+1]); continuous ones
    /// interpolate linearly between knots.
    pub fn eval(&self, forest: &MeshForest, x: [f64; 2], t: f64) -> Result<f64> {
        let knots = &self.partition.knots;
        if t <= knots[0] {
            return self.values[0].value_at(forest, x);
        }
        let m = interval_of(knots, t);
        if self.time_continuous {
            let lo = self.values[m].value_at(forest, x)?;
            let hi = self.values[m + 1].value_at(forest, x)?;
            let s = (t - knots[m]) / (knots[m + 1] - knots[m]);
            Ok(lo + s * (hi - lo))
        } else {
            self.values[m + 1].value_at(forest, x)
        }
    }

    pub fn terminal(&self) -> &FeFunction {
        self.values.last().unwrap()
    }
}

/// Index m with t in (knots[m], knots[m+1]]; t beyond the end clamps to
/// the last interval.
fn interval_of(knots: &[f64], t: f64) -> usize {
    let mut m = knots.len() - 2;
    for i in 0..knots.len() - 1 {
        if t <= knots[i + 1] {
            m = i;
            break;
        }
    }
    m
}

/// Builds one finite-element space per time interval, sharing the space
/// object across consecutive intervals with identical active cell sets.
pub fn interval_spaces(
    forest: &MeshForest,
    partition: &TimePartition,
    degree: usize,
) -> Result<Vec<Arc<FeSpace>>> {
    if forest.n_intervals() != partition.n_intervals() {
        return Err(Error::Mesh(format!(
            "forest has {} interval meshes but the partition has {} intervals",
            forest.n_intervals(),
            partition.n_intervals()
        )));
    }
    let mut spaces: Vec<Arc<FeSpace>> = Vec::with_capacity(partition.n_intervals());
    for m in 0..partition.n_intervals() {
        if m > 0 && forest.per_interval_active[m] == forest.per_interval_active[m - 1] {
            spaces.push(spaces[m - 1].clone());
        } else {
            spaces.push(build_space(Arc::new(forest.view(m)), degree)?);
        }
    }
    Ok(spaces)
}

/// Sweeps the implicit primal steps forward over all intervals.
/// Factorizations are reused across steps with the same space and step
/// size, which covers uniform stretches of the partition.
pub fn solve_unsteady_primal(
    forest: &MeshForest,
    partition: &TimePartition,
    degree: usize,
    spec: &ProblemSpec,
    config: &StabilizationConfig,
    mode: AssemblyMode,
) -> Result<SpaceTimeSolution> {
    partition.validate()?;
    let spaces = interval_spaces(forest, partition, degree)?;
    let n = partition.n_intervals();

    let mut values = Vec::with_capacity(n + 1);
    values.push(spaces[0].interpolate(|x| (spec.u0)(x, 0.0)));

    type CacheEntry = (Arc<ConstrainedMatrix>, Arc<Factorization>);
    let mut cache: HashMap<(usize, u64), CacheEntry> = HashMap::new();

    for m in 0..n {
        let space = &spaces[m];
        let k_m = partition.k(m);
        let t_next = partition.knots[m + 1];
        let asm = Assembler::new(space, spec, config, mode)?;

        let u_prev = if Arc::ptr_eq(&values[m].space, space) {
            values[m].clone()
        } else {
            values[m].transfer(forest, space)
        };

        let key = (Arc::as_ptr(space) as usize, k_m.to_bits());
        let (constrained, fact) = match cache.get(&key) {
            Some(entry) => entry.clone(),
            None => {
                let matrix = asm.unsteady_step_matrix(k_m);
                let cm = Arc::new(ConstrainedMatrix::new(matrix, &space.boundary_dofs));
                let fact = Arc::new(Factorization::new(&cm.matrix)?);
                cache.insert(key, (cm.clone(), fact.clone()));
                (cm, fact)
            }
        };

        let mut rhs = asm.unsteady_step_rhs(&u_prev, t_next, k_m);
        let bc = asm.unsteady_constraints(t_next);
        constrained.constrain_rhs(&mut rhs, &bc);
        let sol = fact.solve(&rhs);
        check_residual(
            &SparseSystem {
                matrix: constrained.matrix.clone(),
                rhs,
                constrained: bc,
            },
            &sol,
        )?;
        values.push(space.function_from(sol));
    }

    Ok(SpaceTimeSolution {
        partition: partition.clone(),
        values,
        time_continuous: false,
    })
}

/// Space shared by all dual knot values: the union mesh of every
/// interval, at the dual degree.
pub fn union_dual_space(forest: &MeshForest, degree: usize) -> Result<Arc<FeSpace>> {
    let union = forest.union_mesh();
    build_space(Arc::new(forest.view_of(union)), degree)
}

/// Per-cell data of one dual step that depends on the primal iterate:
/// the linearized reaction coefficient alpha + r'(u) at quadrature
/// points.
fn reaction_coefficients(
    space: &Arc<FeSpace>,
    spec: &ProblemSpec,
    tab: &[crate::space::BasisEval],
    u_on_union: &FeFunction,
) -> Vec<Vec<f64>> {
    (0..space.view.n_cells())
        .map(|k| {
            tab.iter()
                .map(|basis| {
                    let (uv, _) = u_on_union.value_grad_tab(k, basis);
                    spec.alpha + (spec.reaction.r_prime)(uv)
                })
                .collect()
        })
        .collect()
}

/// Assembles matrix and rhs of one backward dual step of length `k`:
///   <(Z^m - Z^{m+1})/k, v> + (a*(Z^m, v) + a*(Z^{m+1}, v))/2 = <j, v>
/// with the adjoint form a*(z, v) = <-b.grad z, v> + eps <grad z, grad v>
/// + <coef z, v>, plus a streamline term testing the full step residual
/// against (-b).grad v. Homogeneous Dirichlet rows are recorded by the
/// caller.
struct DualStepAssembler {
    space: Arc<FeSpace>,
    spec: ProblemSpec,
    config: StabilizationConfig,
    rule: crate::quadrature::TriQuadrature,
    tab: Vec<crate::space::BasisEval>,
    b_sup: Vec<f64>,
}

impl DualStepAssembler {
    fn new(space: &Arc<FeSpace>, spec: &ProblemSpec, config: &StabilizationConfig) -> Result<Self> {
        let rule = triangle_rule((2 * space.degree + 2).max(GOAL_QUAD_DEGREE))?;
        let tab = space.reference.tabulate(&rule.points);
        let b_sup = (0..space.view.n_cells())
            .map(|k| {
                rule.points
                    .iter()
                    .map(|&l| {
                        let bv = (spec.b)(space.view.map_ref(k, l));
                        (bv[0] * bv[0] + bv[1] * bv[1]).sqrt()
                    })
                    .fold(0.0_f64, f64::max)
            })
            .collect();
        Ok(DualStepAssembler {
            space: space.clone(),
            spec: spec.clone(),
            config: *config,
            rule,
            tab,
            b_sup,
        })
    }

    fn delta(&self, k_cell: usize, k_m: f64) -> f64 {
        self.config.dual_delta_scale
            * delta_k_unsteady(
                &self.space.view.geo[k_cell],
                self.b_sup[k_cell],
                self.spec.eps,
                self.spec.alpha,
                k_m,
                self.space.degree,
                &self.config,
            )
    }

    fn matrix(&self, k_m: f64, coef: &[Vec<f64>]) -> CsrMatrix {
        let space = &self.space;
        let mut matrix = CsrMatrix::from_pattern(coupling_pattern(space));
        let n_local = space.reference.n_local();
        let inv_k = 1.0 / k_m;
        let mut grads = vec![[0.0; 2]; n_local];
        let mut laps = vec![0.0; n_local];
        for k in 0..space.view.n_cells() {
            let geo = &space.view.geo[k];
            let detj = 2.0 * geo.area;
            let dofs = &space.cell_dofs[k];
            let delta = self.delta(k, k_m);
            for (q, &l) in self.rule.points.iter().enumerate() {
                let x = space.view.map_ref(k, l);
                let w = self.rule.weights[q] * detj;
                let basis = &self.tab[q];
                for i in 0..n_local {
                    grads[i] = geo.push_gradient(basis.grad[i]);
                    if space.degree == 1 {
                        laps[i] = 0.0;
                    } else {
                        let hp = geo.push_hessian(basis.hess[i]);
                        laps[i] = hp[0] + hp[2];
                    }
                }
                let bv = (self.spec.b)(x);
                let cf = coef[k][q];
                for i in 0..n_local {
                    let phi_i = basis.phi[i];
                    let test = -(bv[0] * grads[i][0] + bv[1] * grads[i][1]);
                    for jj in 0..n_local {
                        let phi_j = basis.phi[jj];
                        let conv = bv[0] * grads[jj][0] + bv[1] * grads[jj][1];
                        let strong = cf * phi_j - conv - self.spec.eps * laps[jj];
                        let mut a = inv_k * phi_j * phi_i
                            + 0.5
                                * (self.spec.eps * dot(grads[jj], grads[i]) - conv * phi_i
                                    + cf * phi_j * phi_i);
                        a += delta * (inv_k * phi_j + 0.5 * strong) * test;
                        matrix.add(dofs[i], dofs[jj], w * a);
                    }
                }
            }
        }
        matrix
    }

    fn rhs(&self, k_m: f64, coef: &[Vec<f64>], z_next: &FeFunction, j: &Density) -> Vec<f64> {
        let space = &self.space;
        let mut rhs = vec![0.0; space.n_dofs];
        let n_local = space.reference.n_local();
        let inv_k = 1.0 / k_m;
        let mut grads = vec![[0.0; 2]; n_local];
        for k in 0..space.view.n_cells() {
            let geo = &space.view.geo[k];
            let detj = 2.0 * geo.area;
            let dofs = &space.cell_dofs[k];
            let delta = self.delta(k, k_m);
            for (q, &l) in self.rule.points.iter().enumerate() {
                let x = space.view.map_ref(k, l);
                let w = self.rule.weights[q] * detj;
                let basis = &self.tab[q];
                for i in 0..n_local {
                    grads[i] = geo.push_gradient(basis.grad[i]);
                }
                let bv = (self.spec.b)(x);
                let cf = coef[k][q];
                let jv = j.eval(k, l, x);
                let (zv, zg) = z_next.value_grad_tab(k, basis);
                let zl = z_next.laplacian_tab(k, basis);
                let conv_z = bv[0] * zg[0] + bv[1] * zg[1];
                let strong_z = cf * zv - conv_z - self.spec.eps * zl;
                for i in 0..n_local {
                    let phi_i = basis.phi[i];
                    let test = -(bv[0] * grads[i][0] + bv[1] * grads[i][1]);
                    let galerkin = inv_k * zv * phi_i
                        - 0.5
                            * (self.spec.eps * dot(zg, grads[i]) - conv_z * phi_i
                                + cf * zv * phi_i)
                        + jv * phi_i;
                    let streamline = (inv_k * zv - 0.5 * strong_z + jv) * test;
                    rhs[dofs[i]] += w * (galerkin + delta * streamline);
                }
            }
        }
        rhs
    }
}

/// Solves the dual problem backward from the terminal condition
/// Z^M = interpolant of the terminal density (all dofs, including
/// boundary ones), stepping with homogeneous Dirichlet values. All knot
/// values live on the union space and march on the primal partition.
pub fn solve_unsteady_dual(
    forest: &MeshForest,
    dual_space: &Arc<FeSpace>,
    spec: &ProblemSpec,
    config: &StabilizationConfig,
    primal: &SpaceTimeSolution,
    goal: &FrozenGoal,
) -> Result<SpaceTimeSolution> {
    solve_unsteady_dual_on(forest, dual_space, spec, config, primal, goal, &primal.partition)
}

/// [`solve_unsteady_dual`] on an explicit time partition, which may
/// subdivide the primal one (for reference duals that are nearly exact
/// in time). The linearized reaction of a step comes from the primal
/// interval containing the step's midpoint.
pub fn solve_unsteady_dual_on(
    forest: &MeshForest,
    dual_space: &Arc<FeSpace>,
    spec: &ProblemSpec,
    config: &StabilizationConfig,
    primal: &SpaceTimeSolution,
    goal: &FrozenGoal,
    partition: &TimePartition,
) -> Result<SpaceTimeSolution> {
    let primal_degree = primal.values[0].space.degree;
    if dual_space.degree <= primal_degree {
        return Err(Error::DualDegreeTooLow {
            primal: primal_degree,
            dual: dual_space.degree,
        });
    }
    partition.validate()?;
    let n = partition.n_intervals();

    let j_here = goal.j.on_space(forest, dual_space);
    let j_terminal = goal.j_terminal.on_space(forest, dual_space);

    // Terminal condition: nodal interpolant of the terminal density.
    let mut z_terminal = dual_space.zero_function();
    for d in 0..dual_space.n_dofs {
        let (k, l) = dual_space.dof_owner[d];
        z_terminal.coeffs[d] = j_terminal.eval(k, l, dual_space.dof_coords[d]);
    }

    let assembler = DualStepAssembler::new(dual_space, spec, config)?;
    let trivial_reaction = spec.reaction.is_trivial();
    let constant_coef: Vec<Vec<f64>> = if trivial_reaction {
        (0..dual_space.view.n_cells())
            .map(|_| vec![spec.alpha; assembler.rule.points.len()])
            .collect()
    } else {
        Vec::new()
    };

    type CacheEntry = (Arc<ConstrainedMatrix>, Arc<Factorization>);
    let mut cache: HashMap<u64, CacheEntry> = HashMap::new();

    let mut values = vec![z_terminal];
    for m in (0..n).rev() {
        let k_m = partition.k(m);
        let z_next = values.last().unwrap();

        // Linearized reaction at the primal value of this interval; the
        // matrix is cacheable per step size only when that coefficient
        // is constant.
        let coef_storage;
        let coef: &[Vec<f64>] = if trivial_reaction {
            &constant_coef
        } else {
            let mid = 0.5 * (partition.knots[m] + partition.knots[m + 1]);
            let pm = interval_of(&primal.partition.knots, mid);
            let u_m = primal.values[pm + 1].transfer(forest, dual_space);
            coef_storage = reaction_coefficients(dual_space, spec, &assembler.tab, &u_m);
            &coef_storage
        };

        let (constrained, fact) = if trivial_reaction {
            let key = k_m.to_bits();
            match cache.get(&key) {
                Some(entry) => entry.clone(),
                None => {
                    let matrix = assembler.matrix(k_m, coef);
                    let cm = Arc::new(ConstrainedMatrix::new(matrix, &dual_space.boundary_dofs));
                    let fact = Arc::new(Factorization::new(&cm.matrix)?);
                    cache.insert(key, (cm.clone(), fact.clone()));
                    (cm, fact)
                }
            }
        } else {
            let matrix = assembler.matrix(k_m, coef);
            let cm = Arc::new(ConstrainedMatrix::new(matrix, &dual_space.boundary_dofs));
            let fact = Arc::new(Factorization::new(&cm.matrix)?);
            (cm, fact)
        };

        let mut rhs = assembler.rhs(k_m, coef, z_next, &j_here);
        let bc: Vec<(usize, f64)> =
            dual_space.boundary_dofs.iter().map(|&d| (d, 0.0)).collect();
        constrained.constrain_rhs(&mut rhs, &bc);
        let sol = fact.solve(&rhs);
        check_residual(
            &SparseSystem {
                matrix: constrained.matrix.clone(),
                rhs,
                constrained: bc,
            },
            &sol,
        )?;
        values.push(dual_space.function_from(sol));
    }

    values.reverse();
    Ok(SpaceTimeSolution {
        partition: partition.clone(),
        values,
        time_continuous: true,
    })
}
