//! Space-time goal-oriented error indicators, cell/interval marking, and
//! the adaptive solve-estimate-mark-refine loops.
//!
//! The indicator of interval m and primal cell K is the weighted
//! residual rho(u)(z) localized to cells, split around psi, the
//! interval average in time of the spatially interpolated dual weight
//! I_h z (with its Dirichlet values dropped, so psi is an admissible
//! test function of the step):
//!
//!   eta_K^m = int_{I_m} [ <R(u), z - psi>_K - <E, z - I_h z>_{dK} ] dt
//!             - <[u]_{m-1}, z(t_{m-1}) - psi>_K
//!             + <int_{I_m} f dt - k_m f(t_m), psi>_K
//!             + delta_K k_m <R_step(u), b . grad psi>_K
//!
//! where R is the strong residual without a time derivative (the ansatz
//! is piecewise constant in time), E the averaged flux jump, [u] the
//! solution jump at the left knot ([u]_0 pairs against the exact initial
//! datum), f(t_m) the source at the interval's right endpoint, and
//! R_step = [u]_{m-1}/k_m + b . grad u + alpha u + r(u) - eps lap u
//! - f(t_m) the full strong residual of the backward step. The first two
//! lines pair the residual with z - psi; the last two lines equal the
//! residual at psi itself, because testing the step equations with psi
//! leaves exactly the right-endpoint source sampling and the streamline
//! stabilization behind. The sum therefore reproduces the full weighted
//! residual, pricing the temporal error alongside the spatial one, and
//! is exact for linear problems up to the dual approximation. In the
//! flux term the time integral of z - psi coincides with that of
//! z - I_h z. Everything is integrated on the union mesh and attributed
//! to primal ancestor cells; time integrals use two-point Gauss per dual
//! subinterval, where the weight is linear in time.

use std::sync::Arc;

use crate::assembly::{Assembler, AssemblyMode};
use crate::goals::{
    evaluate_goal_steady, freeze_goal, pair_density, pair_density_with, var_metric, FrozenGoal,
    GoalKind, GoalSpec,
};
use crate::mesh::{dot, sub, CellId, MeshForest};
use crate::problem::ProblemSpec;
use crate::quadrature::{gauss_legendre_unit, triangle_rule};
use crate::space::{build_space, FeFunction};
use crate::stabilization::StabilizationConfig;
use crate::steady::{
    build_dual_space, effectivity, solve_steady_dual, solve_steady_primal, steady_indicators,
};
use crate::unsteady::{
    solve_unsteady_dual, solve_unsteady_primal, union_dual_space, SpaceTimeSolution, TimePartition,
};
use crate::{Error, Result};

/// Localized error indicators of one space-time solve: one signed value
/// per (interval, primal cell of that interval).
#[derive(Clone, Debug)]
pub struct IndicatorField {
    /// `per_interval[m][k]` belongs to cell k of interval m's mesh.
    pub per_interval: Vec<Vec<f64>>,
    /// Signed per-interval sums.
    pub interval_sums: Vec<f64>,
    /// The global estimate: sum of all indicators in ascending
    /// (interval, cell) order, so reruns are bit-identical.
    pub eta: f64,
}

impl IndicatorField {
    /// Per-interval sums of |eta_K^m|, the quantity time marking reads.
    pub fn abs_interval_sums(&self) -> Vec<f64> {
        self.per_interval
            .iter()
            .map(|cells| cells.iter().map(|v| v.abs()).sum())
            .collect()
    }
}

/// Index of each primal knot within the dual partition. The dual
/// partition must contain every primal knot (equal partitions are the
/// common case; a time-refined dual is allowed).
fn embed_knots(primal: &TimePartition, dual: &TimePartition) -> Result<Vec<usize>> {
    let pk = &primal.knots;
    let dk = &dual.knots;
    let mut out = Vec::with_capacity(pk.len());
    let mut j = 0usize;
    for &t in pk {
        let tol = 1e-12 * (1.0 + t.abs());
        while j < dk.len() && dk[j] < t - tol {
            j += 1;
        }
        if j >= dk.len() || (dk[j] - t).abs() > tol {
            return Err(Error::Config(
                "the dual time partition does not contain the primal knots".into(),
            ));
        }
        out.push(j);
    }
    Ok(out)
}

/// Evaluates the localized indicators of an unsteady solve. The dual
/// trajectory must be continuous in time, live on a space whose mesh
/// refines every interval's primal mesh (the union mesh qualifies), and
/// march on a partition containing the primal knots.
pub fn unsteady_indicators(
    forest: &MeshForest,
    spec: &ProblemSpec,
    config: &StabilizationConfig,
    mode: AssemblyMode,
    primal: &SpaceTimeSolution,
    dual: &SpaceTimeSolution,
) -> Result<IndicatorField> {
    if primal.values.len() != primal.partition.knots.len()
        || dual.values.len() != dual.partition.knots.len()
    {
        return Err(Error::Config(
            "trajectory length does not match its time partition".into(),
        ));
    }
    if !dual.time_continuous {
        return Err(Error::Config(
            "the dual trajectory must be continuous in time".into(),
        ));
    }
    let knot_index = embed_knots(&primal.partition, &dual.partition)?;

    let union_space = dual.values[0].space.clone();
    let union_view = &union_space.view;
    let n_union = union_view.n_cells();
    let m_total = primal.partition.n_intervals();

    let rule = triangle_rule(2 * union_space.degree + 2)?;
    let tab = union_space.reference.tabulate(&rule.points);
    let nq = rule.points.len();
    let tgauss = gauss_legendre_unit(2);
    let line = gauss_legendre_unit(4);

    let mut per_interval = Vec::with_capacity(m_total);

    for m in 0..m_total {
        let u_next = &primal.values[m + 1];
        let s_m = u_next.space.clone();
        let n_primal = s_m.view.n_cells();
        let k_m = primal.partition.k(m);

        let asm = Assembler::new(&s_m, spec, config, mode)?;
        let deltas: Vec<f64> = (0..n_primal).map(|c| asm.delta_unsteady(c, k_m)).collect();

        // Primal ancestor of every union cell in this interval's mesh.
        let mut ancestor = Vec::with_capacity(n_union);
        for ku in 0..n_union {
            let anc = forest
                .active_ancestor(&s_m.view.cell_ids, union_view.cell_ids[ku])
                .ok_or_else(|| {
                    Error::Mesh(format!(
                        "the dual mesh does not refine the primal mesh of interval {m}"
                    ))
                })?;
            ancestor.push(s_m.view.local_index(anc).expect("ancestor is active"));
        }

        let u_m = u_next.transfer(forest, &union_space);
        let prev = if m > 0 {
            Some(primal.values[m].transfer(forest, &union_space))
        } else {
            None
        };

        // Dual knots spanning this interval, with I_h z at each knot:
        // interpolate onto the interval's primal space, drop the
        // Dirichlet values so the average below is an admissible test
        // function, then re-express on the union mesh where the weight
        // subtraction is exact.
        let (a, b) = (knot_index[m], knot_index[m + 1]);
        let knots = &dual.partition.knots[a..=b];
        let nk = knots.len();
        let t_right = primal.partition.knots[m + 1];
        let zs: Vec<&FeFunction> = (a..=b).map(|i| &dual.values[i]).collect();
        let phis: Vec<FeFunction> = (a..=b)
            .map(|i| {
                let mut p = dual.values[i].transfer(forest, &s_m);
                for &dof in &s_m.boundary_dofs {
                    p.coeffs[dof] = 0.0;
                }
                p.transfer(forest, &union_space)
            })
            .collect();

        let mut cells = vec![0.0; n_primal];

        for ku in 0..n_union {
            let kp = ancestor[ku];
            let delta = deltas[kp];
            let detj = 2.0 * union_view.geo[ku].area;
            let mut acc = 0.0;

            // Time-constant data per quadrature point.
            let mut xs = vec![[0.0; 2]; nq];
            let mut ws = vec![0.0; nq];
            let mut r0s = vec![0.0; nq];
            let mut bvs = vec![[0.0; 2]; nq];
            let mut uvs = vec![0.0; nq];
            let mut f_end = vec![0.0; nq];
            for (q, &l) in rule.points.iter().enumerate() {
                let x = union_view.map_ref(ku, l);
                let basis = &tab[q];
                let (uv, ug) = u_m.value_grad_tab(ku, basis);
                let ul = u_m.laplacian_tab(ku, basis);
                let bv = (spec.b)(x);
                xs[q] = x;
                ws[q] = rule.weights[q] * detj;
                r0s[q] = spec.eps * ul
                    - (bv[0] * ug[0] + bv[1] * ug[1])
                    - spec.alpha * uv
                    - (spec.reaction.r)(uv);
                bvs[q] = bv;
                uvs[q] = uv;
                f_end[q] = (spec.f)(x, t_right);
            }

            // Knot traces of z and I_h z on this cell.
            let mut zk = vec![vec![0.0; nq]; nk];
            let mut pv_k = vec![vec![0.0; nq]; nk];
            let mut pg_k = vec![vec![[0.0; 2]; nq]; nk];
            for i in 0..nk {
                for (q, basis) in tab.iter().enumerate() {
                    zk[i][q] = zs[i].value_grad_tab(ku, basis).0;
                    let (pv, pg) = phis[i].value_grad_tab(ku, basis);
                    pv_k[i][q] = pv;
                    pg_k[i][q] = pg;
                }
            }

            // Interval average psi of the interpolated weight.
            let mut psv = vec![0.0; nq];
            let mut psg = vec![[0.0; 2]; nq];
            for d in 0..nk - 1 {
                let half = 0.5 * (knots[d + 1] - knots[d]) / k_m;
                for q in 0..nq {
                    psv[q] += half * (pv_k[d][q] + pv_k[d + 1][q]);
                    psg[q][0] += half * (pg_k[d][q][0] + pg_k[d + 1][q][0]);
                    psg[q][1] += half * (pg_k[d][q][1] + pg_k[d + 1][q][1]);
                }
            }

            // Interior residual against z - psi; the accumulated source
            // integral feeds the sampling defect below.
            let mut fint = vec![0.0; nq];
            for d in 0..nk - 1 {
                let k_d = knots[d + 1] - knots[d];
                for (&gs, &gw) in tgauss.points.iter().zip(&tgauss.weights) {
                    let t = knots[d] + gs * k_d;
                    let wt = gw * k_d;
                    for q in 0..nq {
                        let fv = (spec.f)(xs[q], t);
                        let zv = (1.0 - gs) * zk[d][q] + gs * zk[d + 1][q];
                        acc += wt * ws[q] * (fv + r0s[q]) * (zv - psv[q]);
                        fint[q] += wt * fv;
                    }
                }
            }

            // Knot terms: the solution jump against the weight at the
            // left knot (the first interval pairs against the exact
            // initial datum), the source-sampling defect, and the
            // streamline term with the full step residual.
            for q in 0..nq {
                let prev_v = match &prev {
                    Some(fun) => fun.value_grad_tab(ku, &tab[q]).0,
                    None => (spec.u0)(xs[q], 0.0),
                };
                let jump = uvs[q] - prev_v;
                acc -= ws[q] * jump * (zk[0][q] - psv[q]);
                acc += ws[q] * (fint[q] - k_m * f_end[q]) * psv[q];
                acc += ws[q] * delta * (jump - k_m * (r0s[q] + f_end[q])) * dot(bvs[q], psg[q]);
            }

            cells[kp] += acc;
        }

        // Diffusive flux jumps across union edges separating distinct
        // primal ancestors; each adjacent cell receives -<E, z - I_h z>.
        // The flux is constant in time over the interval and the weight
        // linear per dual subinterval, so the per-subinterval trapezoid
        // integrates the time pairing exactly.
        for edge in &union_view.edges {
            if edge.cells.len() != 2 {
                continue;
            }
            let (ka, kb) = (edge.cells[0], edge.cells[1]);
            let (pa, pb) = (ancestor[ka], ancestor[kb]);
            if pa == pb {
                continue;
            }
            let (hi, lo) = if union_view.cell_ids[ka] > union_view.cell_ids[kb] {
                (ka, kb)
            } else {
                (kb, ka)
            };
            let p0 = union_view.vertices[edge.v[0]];
            let p1 = union_view.vertices[edge.v[1]];
            let mut val = 0.0;
            for (&s, &ws_e) in line.points.iter().zip(&line.weights) {
                let x = [p0[0] + s * (p1[0] - p0[0]), p0[1] + s * (p1[1] - p0[1])];
                let (_, g_hi) = u_m.value_grad(hi, union_view.map_phys(hi, x));
                let (_, g_lo) = u_m.value_grad(lo, union_view.map_phys(lo, x));
                let e_flux = 0.5 * spec.eps * dot(edge.normal, sub(g_hi, g_lo));
                let l_a = union_view.map_phys(ka, x);
                let wk: Vec<f64> = (0..nk)
                    .map(|i| zs[i].value_grad(ka, l_a).0 - phis[i].value_grad(ka, l_a).0)
                    .collect();
                let mut tw = 0.0;
                for d in 0..nk - 1 {
                    tw += 0.5 * (knots[d + 1] - knots[d]) * (wk[d] + wk[d + 1]);
                }
                val += ws_e * edge.length * e_flux * tw;
            }
            cells[pa] -= val;
            cells[pb] -= val;
        }

        per_interval.push(cells);
    }

    let interval_sums: Vec<f64> = per_interval.iter().map(|c| c.iter().sum()).collect();
    let eta = interval_sums.iter().sum();
    Ok(IndicatorField {
        per_interval,
        interval_sums,
        eta,
    })
}

/// Doerfler marking: the smallest set of cells, by descending |eta_K|
/// (ties broken by ascending index), whose cumulative |eta_K| reaches
/// theta times the total. All-zero indicators mark nothing; zero
/// indicators are never marked.
pub fn mark_space(indicators: &[f64], theta: f64) -> Vec<usize> {
    assert!(theta > 0.0 && theta <= 1.0, "theta must lie in (0, 1]");
    let total: f64 = indicators.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..indicators.len()).collect();
    order.sort_by(|&a, &b| {
        indicators[b]
            .abs()
            .total_cmp(&indicators[a].abs())
            .then(a.cmp(&b))
    });
    let mut out = Vec::new();
    let mut acc = 0.0;
    for &i in &order {
        if indicators[i] == 0.0 {
            break;
        }
        out.push(i);
        acc += indicators[i].abs();
        if acc >= theta * total {
            break;
        }
    }
    out.sort_unstable();
    out
}

/// Flags intervals whose |eta| mass exceeds `factor` times the mean
/// interval mass; flagged intervals are halved at their midpoint. A
/// uniform distribution flags nothing for factor > 1.
pub fn mark_time(interval_abs_sums: &[f64], factor: f64) -> Vec<usize> {
    assert!(factor > 0.0, "factor must be positive");
    if interval_abs_sums.is_empty() {
        return Vec::new();
    }
    let mean = interval_abs_sums.iter().sum::<f64>() / interval_abs_sums.len() as f64;
    (0..interval_abs_sums.len())
        .filter(|&m| interval_abs_sums[m] > factor * mean)
        .collect()
}

/// Knobs of the adaptive loop. `max_iters` counts refinements, so a
/// budget of n yields n+1 history rows unless the loop stops early.
#[derive(Clone, Copy, Debug)]
pub struct AdaptParams {
    pub theta_space: f64,
    pub time_factor: f64,
    pub max_iters: usize,
    pub max_dofs: usize,
    pub drop_tol: f64,
}

impl Default for AdaptParams {
    fn default() -> Self {
        AdaptParams {
            theta_space: 0.5,
            time_factor: 1.5,
            max_iters: 10,
            max_dofs: usize::MAX,
            drop_tol: 1e-12,
        }
    }
}

impl AdaptParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_space > 0.0 && self.theta_space <= 1.0) {
            return Err(Error::Config(format!(
                "theta_space must lie in (0, 1], got {}",
                self.theta_space
            )));
        }
        if !(self.time_factor > 0.0) {
            return Err(Error::Config(format!(
                "time_factor must be positive, got {}",
                self.time_factor
            )));
        }
        if !(self.drop_tol >= 0.0) {
            return Err(Error::Config(format!(
                "drop_tol must be nonnegative, got {}",
                self.drop_tol
            )));
        }
        Ok(())
    }
}

/// One adaptive iteration's record. `j_exact`, `true_err` and `i_eff`
/// are present only when a reference value is known.
#[derive(Clone, Copy, Debug)]
pub struct HistoryRow {
    pub iter: usize,
    pub dofs_at_t: usize,
    pub n_intervals: usize,
    pub j_uh: f64,
    pub eta: f64,
    pub j_exact: Option<f64>,
    pub true_err: Option<f64>,
    pub i_eff: Option<f64>,
    pub var_t: f64,
}

/// Per-iteration state handed to the observer (snapshot writers). For
/// unsteady runs `u` and `indicators` belong to the terminal interval
/// and `z` is the dual state at t = 0 on the union mesh; the dual may
/// live on a different mesh than `u` in either regime.
pub struct Snapshot<'a> {
    pub iter: usize,
    pub u: &'a FeFunction,
    pub z: &'a FeFunction,
    pub indicators: &'a [f64],
}

/// The adaptive loop's outcome. A solver failure stops the loop and is
/// reported here next to the history recorded so far.
#[derive(Debug)]
pub struct AdaptiveRun {
    pub history: Vec<HistoryRow>,
    pub failure: Option<String>,
}

fn is_solver_failure(e: &Error) -> bool {
    matches!(e, Error::LinearSolve(_) | Error::Nonlinear(_))
}

/// A steady adaptive run: problem, goal, discretization and budget.
pub struct SteadySetup {
    pub spec: ProblemSpec,
    pub goal: GoalSpec,
    pub stab: StabilizationConfig,
    pub mode: AssemblyMode,
    pub degree: usize,
    pub dual_degree: usize,
    /// Extra uniform refinements of the dual mesh below the primal one.
    pub dual_refine: usize,
    pub adapt: AdaptParams,
    /// Externally known exact goal value, preferred over quadrature of
    /// `exact` when present.
    pub reference: Option<f64>,
    /// Closed-form solution, used to freeze error-weighted goals and to
    /// compute reference goal values.
    pub exact: Option<Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>>,
}

fn steady_reference(setup: &SteadySetup, frozen: &FrozenGoal, u: &FeFunction) -> Option<f64> {
    if let Some(r) = setup.reference {
        return Some(r);
    }
    let exact = setup.exact.as_ref()?;
    Some(pair_density_with(&frozen.j, &u.space, &|x| exact(x)))
}

/// Runs solve-estimate-mark-refine on a steady problem until the budget
/// is exhausted, the estimate drops below `drop_tol`, or marking returns
/// nothing. Newton restarts from the previous iterate transferred to the
/// refined mesh.
pub fn adaptive_steady(
    forest: &mut MeshForest,
    setup: &SteadySetup,
    observe: &mut dyn FnMut(&Snapshot<'_>) -> Result<()>,
) -> Result<AdaptiveRun> {
    setup.adapt.validate()?;
    setup.stab.validate()?;
    setup.spec.validate()?;
    setup.goal.validate()?;
    if setup.goal.kind == GoalKind::TerminalMean {
        return Err(Error::Config(
            "terminal_mean needs an unsteady run".into(),
        ));
    }

    let mut history = Vec::new();
    let mut failure = None;
    let mut warm: Option<FeFunction> = None;

    for iter in 0..=setup.adapt.max_iters {
        let space = build_space(Arc::new(forest.view(0)), setup.degree)?;
        let initial = warm.take().map(|w| w.transfer(forest, &space));
        let report = match solve_steady_primal(
            &space,
            &setup.spec,
            &setup.stab,
            setup.mode,
            initial.as_ref(),
        ) {
            Ok(r) => r,
            Err(e) if is_solver_failure(&e) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let u = report.u;

        let frozen = freeze_goal(&setup.goal, Some(&u), setup.exact.as_ref())?;
        let (dual_forest, dual_space) =
            build_dual_space(forest, 0, setup.dual_degree, setup.dual_refine)?;
        let z = match solve_steady_dual(
            &dual_forest,
            &dual_space,
            &setup.spec,
            &setup.stab,
            &u,
            &frozen.j,
        ) {
            Ok(z) => z,
            Err(e) if is_solver_failure(&e) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let ind = steady_indicators(&dual_forest, &u, &z, &setup.spec, &setup.stab, setup.mode)?;

        let j_uh = evaluate_goal_steady(&frozen, &u);
        let j_exact = steady_reference(setup, &frozen, &u);
        let true_err = j_exact.map(|j| j - j_uh);
        let i_eff = true_err.map(|e| effectivity(ind.eta, e));
        history.push(HistoryRow {
            iter,
            dofs_at_t: space.n_dofs,
            n_intervals: 1,
            j_uh,
            eta: ind.eta,
            j_exact,
            true_err,
            i_eff,
            var_t: var_metric(&u),
        });
        observe(&Snapshot {
            iter,
            u: &u,
            z: &z,
            indicators: &ind.per_cell,
        })?;

        if iter == setup.adapt.max_iters
            || ind.eta.abs() < setup.adapt.drop_tol
            || space.n_dofs >= setup.adapt.max_dofs
        {
            break;
        }
        let marked = mark_space(&ind.per_cell, setup.adapt.theta_space);
        if marked.is_empty() {
            break;
        }
        let ids: Vec<CellId> = marked.iter().map(|&l| space.view.cell_ids[l]).collect();
        forest.refine(0, &ids)?;
        warm = Some(u);
    }

    Ok(AdaptiveRun { history, failure })
}

/// An unsteady adaptive run. `exact_terminal` is the closed-form
/// solution at the final time, used for terminal-goal references.
pub struct UnsteadySetup {
    pub spec: ProblemSpec,
    pub goal: GoalSpec,
    pub stab: StabilizationConfig,
    pub mode: AssemblyMode,
    pub degree: usize,
    pub dual_degree: usize,
    pub adapt: AdaptParams,
    pub reference: Option<f64>,
    pub exact_terminal: Option<Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>>,
}

/// J(u_kh) of the piecewise-constant trajectory: the time integral of
/// the volumetric pairing plus the terminal pairing.
pub fn evaluate_goal_unsteady(
    forest: &MeshForest,
    goal: &FrozenGoal,
    primal: &SpaceTimeSolution,
) -> f64 {
    let mut j = 0.0;
    if !goal.j.is_zero() {
        for m in 0..primal.partition.n_intervals() {
            let u_m = &primal.values[m + 1];
            let jm = goal.j.on_space(forest, &u_m.space);
            j += primal.partition.k(m) * pair_density(&jm, u_m);
        }
    }
    if !goal.j_terminal.is_zero() {
        let terminal = primal.terminal();
        let jt = goal.j_terminal.on_space(forest, &terminal.space);
        j += pair_density(&jt, terminal);
    }
    j
}

fn unsteady_reference(
    forest: &MeshForest,
    setup: &UnsteadySetup,
    frozen: &FrozenGoal,
    primal: &SpaceTimeSolution,
) -> Option<f64> {
    if let Some(r) = setup.reference {
        return Some(r);
    }
    // Without an external reference only terminal goals can be paired
    // against the exact terminal state.
    if frozen.j_terminal.is_zero() {
        return None;
    }
    let exact = setup.exact_terminal.as_ref()?;
    let space = &primal.terminal().space;
    let jt = frozen.j_terminal.on_space(forest, space);
    Some(pair_density_with(&jt, space, &|x| exact(x)))
}

/// Runs space-time solve-estimate-mark-refine. Space marking is applied
/// per interval; intervals carrying more than `time_factor` times the
/// mean |eta| mass are halved at their midpoint together with their mesh
/// slot. The forest and partition are advanced in place.
pub fn adaptive_unsteady(
    forest: &mut MeshForest,
    partition: &mut TimePartition,
    setup: &UnsteadySetup,
    observe: &mut dyn FnMut(&Snapshot<'_>) -> Result<()>,
) -> Result<AdaptiveRun> {
    setup.adapt.validate()?;
    setup.stab.validate()?;
    setup.spec.validate()?;
    setup.goal.validate()?;
    partition.validate()?;
    if forest.n_intervals() != partition.n_intervals() {
        return Err(Error::Config(format!(
            "forest has {} interval meshes but the partition has {} intervals",
            forest.n_intervals(),
            partition.n_intervals()
        )));
    }

    let mut history = Vec::new();
    let mut failure = None;

    for iter in 0..=setup.adapt.max_iters {
        let primal = match solve_unsteady_primal(
            forest,
            partition,
            setup.degree,
            &setup.spec,
            &setup.stab,
            setup.mode,
        ) {
            Ok(p) => p,
            Err(e) if is_solver_failure(&e) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };

        let frozen = freeze_goal(
            &setup.goal,
            Some(primal.terminal()),
            setup.exact_terminal.as_ref(),
        )?;
        let dual_space = union_dual_space(forest, setup.dual_degree)?;
        let dual = match solve_unsteady_dual(
            forest,
            &dual_space,
            &setup.spec,
            &setup.stab,
            &primal,
            &frozen,
        ) {
            Ok(d) => d,
            Err(e) if is_solver_failure(&e) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let field = unsteady_indicators(forest, &setup.spec, &setup.stab, setup.mode, &primal, &dual)?;

        let j_uh = evaluate_goal_unsteady(forest, &frozen, &primal);
        let j_exact = unsteady_reference(forest, setup, &frozen, &primal);
        let true_err = j_exact.map(|j| j - j_uh);
        let i_eff = true_err.map(|e| effectivity(field.eta, e));
        let terminal = primal.terminal();
        history.push(HistoryRow {
            iter,
            dofs_at_t: terminal.space.n_dofs,
            n_intervals: partition.n_intervals(),
            j_uh,
            eta: field.eta,
            j_exact,
            true_err,
            i_eff,
            var_t: var_metric(terminal),
        });
        observe(&Snapshot {
            iter,
            u: terminal,
            z: &dual.values[0],
            indicators: field.per_interval.last().expect("at least one interval"),
        })?;

        if iter == setup.adapt.max_iters
            || field.eta.abs() < setup.adapt.drop_tol
            || terminal.space.n_dofs >= setup.adapt.max_dofs
        {
            break;
        }

        let time_marks = mark_time(&field.abs_interval_sums(), setup.adapt.time_factor);
        let mut any = false;
        for m in 0..partition.n_intervals() {
            let marked = mark_space(&field.per_interval[m], setup.adapt.theta_space);
            if marked.is_empty() {
                continue;
            }
            let view_cells = &primal.values[m + 1].space.view.cell_ids;
            let ids: Vec<CellId> = marked.iter().map(|&l| view_cells[l]).collect();
            forest.refine(m, &ids)?;
            any = true;
        }
        // Highest index first so earlier indices stay valid.
        for &m in time_marks.iter().rev() {
            partition.split(m);
            forest.split_interval(m);
            any = true;
        }
        if !any {
            break;
        }
    }

    Ok(AdaptiveRun { history, failure })
}
