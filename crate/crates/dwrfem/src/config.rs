//! Run configurations: the TOML schema consumed by the command line
//! front end, its validation report, and the batch driver that executes
//! an adaptive study and writes history, summary and snapshot artifacts.
//!
//! The schema is strict: unknown keys are parse errors, so typos like
//! `thetaspace` fail loudly instead of silently running with defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::assembly::AssemblyMode;
use crate::benchmarks::{by_name, Benchmark};
use crate::dwr::{
    adaptive_steady, adaptive_unsteady, AdaptParams, AdaptiveRun, HistoryRow, Snapshot,
    SteadySetup, UnsteadySetup,
};
use crate::goals::{GoalKind, GoalSpec};
use crate::mesh::MeshForest;
use crate::stabilization::StabilizationConfig;
use crate::unsteady::TimePartition;
use crate::vtk::write_vtk;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Steady,
    Unsteady,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Benchmark name: hump, tanh_layer or smooth_manufactured.
    pub problem: String,
    pub mode: RunMode,
    pub p_primal: usize,
    pub p_dual: usize,
    #[serde(default)]
    pub stabilization: StabilizationBlock,
    pub goal: GoalBlock,
    #[serde(default)]
    pub time: TimeBlock,
    #[serde(default)]
    pub adapt: AdaptBlock,
    #[serde(default)]
    pub mesh: MeshBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilizationBlock {
    pub c_delta: f64,
    pub mu_inv: f64,
    pub l0: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Overrides the benchmark's Lipschitz bound on the reaction
    /// derivative when present.
    pub l_r: Option<f64>,
    pub dual_delta_scale: f64,
    pub dual_shock_capturing: bool,
    /// Adds the nonlinear shock-capturing term to steady primal solves.
    /// Unsteady steps are streamline-stabilized only.
    pub shock_capturing: bool,
}

impl Default for StabilizationBlock {
    fn default() -> Self {
        let base = StabilizationConfig::default();
        StabilizationBlock {
            c_delta: base.c_delta,
            mu_inv: base.mu_inv,
            l0: base.l0,
            beta: base.beta,
            kappa: base.kappa,
            l_r: None,
            dual_delta_scale: base.dual_delta_scale,
            dual_shock_capturing: base.dual_shock_capturing,
            shock_capturing: true,
        }
    }
}

impl StabilizationBlock {
    fn to_config(&self) -> StabilizationConfig {
        StabilizationConfig {
            c_delta: self.c_delta,
            mu_inv: self.mu_inv,
            l0: self.l0,
            beta: self.beta,
            kappa: self.kappa,
            dual_delta_scale: self.dual_delta_scale,
            dual_shock_capturing: self.dual_shock_capturing,
        }
    }

    fn mode(&self) -> AssemblyMode {
        if self.shock_capturing {
            AssemblyMode::SupgShockCapturing
        } else {
            AssemblyMode::Supg
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalBlock {
    /// terminal_mean, volume_mean, weighted_l2_error or
    /// point_value_regularized.
    pub kind: String,
    pub x_e: Option<[f64; 2]>,
    pub radius: Option<f64>,
}

impl GoalBlock {
    fn to_spec(&self) -> Result<GoalSpec> {
        let mut goal = GoalSpec::new(GoalKind::parse(&self.kind)?);
        if let Some(x_e) = self.x_e {
            goal.x_e = x_e;
        }
        if let Some(r) = self.radius {
            goal.radius = r;
        }
        Ok(goal)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeBlock {
    /// End time; defaults to the benchmark's.
    pub t_end: Option<f64>,
    /// Initial number of uniform intervals.
    pub m0: usize,
}

impl Default for TimeBlock {
    fn default() -> Self {
        TimeBlock { t_end: None, m0: 4 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptBlock {
    pub max_iters: usize,
    pub theta_space: f64,
    pub time_factor: f64,
    pub max_dofs: Option<usize>,
    pub drop_tol: f64,
}

impl Default for AdaptBlock {
    fn default() -> Self {
        let base = AdaptParams::default();
        AdaptBlock {
            max_iters: base.max_iters,
            theta_space: base.theta_space,
            time_factor: base.time_factor,
            max_dofs: None,
            drop_tol: base.drop_tol,
        }
    }
}

impl AdaptBlock {
    fn to_params(&self) -> AdaptParams {
        AdaptParams {
            theta_space: self.theta_space,
            time_factor: self.time_factor,
            max_iters: self.max_iters,
            max_dofs: self.max_dofs.unwrap_or(usize::MAX),
            drop_tol: self.drop_tol,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshBlock {
    /// Root mesh: resolution x resolution blocks of four triangles.
    pub resolution: usize,
    /// Extra uniform refinements of the steady dual mesh.
    pub dual_refine: usize,
}

impl Default for MeshBlock {
    fn default() -> Self {
        MeshBlock {
            resolution: 8,
            dual_refine: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config error: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Every violated invariant, in schema order. Empty iff a run would
    /// start.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let bench = match by_name(&self.problem) {
            Ok(b) => Some(b),
            Err(e) => {
                out.push(e.to_string());
                None
            }
        };
        if let Some(b) = &bench {
            let steady = self.mode == RunMode::Steady;
            if b.steady != steady {
                let (is, needs) = if b.steady {
                    ("steady", "unsteady")
                } else {
                    ("unsteady", "steady")
                };
                out.push(format!(
                    "problem {} is {is} but mode requests an {needs} run",
                    b.name
                ));
            }
        }

        if !(1..=4).contains(&self.p_primal) {
            out.push(format!(
                "p_primal must lie in 1..=4, got {}",
                self.p_primal
            ));
        }
        if !(1..=4).contains(&self.p_dual) {
            out.push(format!("p_dual must lie in 1..=4, got {}", self.p_dual));
        }
        if self.p_dual <= self.p_primal {
            out.push(format!(
                "the dual degree must exceed the primal degree (p_dual {} vs p_primal {}); equal degrees make the estimate vanish identically",
                self.p_dual, self.p_primal
            ));
        }

        let s = &self.stabilization;
        for (name, v) in [
            ("c_delta", s.c_delta),
            ("mu_inv", s.mu_inv),
            ("l0", s.l0),
            ("beta", s.beta),
            ("dual_delta_scale", s.dual_delta_scale),
        ] {
            if !(v >= 0.0) {
                out.push(format!("stabilization.{name} must be >= 0, got {v}"));
            }
        }
        if !(s.kappa > 0.0) {
            out.push(format!("stabilization.kappa must be > 0, got {}", s.kappa));
        }
        if let Some(l_r) = s.l_r {
            if !(l_r >= 0.0) {
                out.push(format!("stabilization.l_r must be >= 0, got {l_r}"));
            }
        }

        match self.goal.to_spec() {
            Ok(goal) => {
                if let Err(e) = goal.validate() {
                    out.push(e.to_string());
                }
                let kind = goal.kind;
                if kind == GoalKind::TerminalMean && self.mode == RunMode::Steady {
                    out.push("goal terminal_mean needs an unsteady run".into());
                }
                if self.mode == RunMode::Unsteady
                    && matches!(
                        kind,
                        GoalKind::WeightedL2Error | GoalKind::PointValueRegularized
                    )
                {
                    out.push(format!("goal {} needs a steady run", kind.name()));
                }
            }
            Err(e) => out.push(e.to_string()),
        }

        if self.mode == RunMode::Unsteady {
            if let Some(t) = self.time.t_end {
                if !(t > 0.0) {
                    out.push(format!("time.t_end must be > 0, got {t}"));
                }
            }
            if self.time.m0 == 0 {
                out.push("time.m0 must be >= 1".into());
            }
        }

        let a = &self.adapt;
        if !(a.theta_space > 0.0 && a.theta_space <= 1.0) {
            out.push(format!(
                "adapt.theta_space must lie in (0, 1], got {}",
                a.theta_space
            ));
        }
        if !(a.time_factor > 0.0) {
            out.push(format!(
                "adapt.time_factor must be > 0, got {}",
                a.time_factor
            ));
        }
        if !(a.drop_tol >= 0.0) {
            out.push(format!("adapt.drop_tol must be >= 0, got {}", a.drop_tol));
        }

        if self.mesh.resolution == 0 {
            out.push("mesh.resolution must be >= 1".into());
        }

        out
    }

    fn checked(&self) -> Result<Benchmark> {
        let violations = self.violations();
        if !violations.is_empty() {
            return Err(Error::Config(violations.join("; ")));
        }
        by_name(&self.problem)
    }
}

/// A finished run: the recorded history, the failure that stopped it (if
/// any), and where the artifacts went.
pub struct RunOutcome {
    pub history: Vec<HistoryRow>,
    pub failure: Option<String>,
    pub out_dir: PathBuf,
}

fn float_cell(v: f64) -> String {
    format!("{v:.16e}")
}

fn option_cell(v: Option<f64>) -> String {
    v.map(float_cell).unwrap_or_default()
}

/// Renders history.csv. Reference-dependent columns are empty when no
/// exact value is known.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("iter,dofs_at_T,n_intervals,J_uh,eta,J_exact,true_err,I_eff,var_T\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iter,
            r.dofs_at_t,
            r.n_intervals,
            float_cell(r.j_uh),
            float_cell(r.eta),
            option_cell(r.j_exact),
            option_cell(r.true_err),
            option_cell(r.i_eff),
            float_cell(r.var_t)
        )
        .unwrap();
    }
    out
}

fn summary_text(cfg: &RunConfig, outcome: &AdaptiveRun) -> String {
    let mut out = String::new();
    writeln!(out, "problem: {}", cfg.problem).unwrap();
    writeln!(out, "goal: {}", cfg.goal.kind).unwrap();
    let mode = match cfg.mode {
        RunMode::Steady => "steady",
        RunMode::Unsteady => "unsteady",
    };
    writeln!(out, "mode: {mode}").unwrap();
    writeln!(out, "iterations: {}", outcome.history.len()).unwrap();
    if let Some(last) = outcome.history.last() {
        writeln!(out, "final dofs at T: {}", last.dofs_at_t).unwrap();
        writeln!(out, "final intervals: {}", last.n_intervals).unwrap();
        writeln!(out, "final J: {}", float_cell(last.j_uh)).unwrap();
        writeln!(out, "final eta: {}", float_cell(last.eta)).unwrap();
        let ieff = last
            .i_eff
            .map(float_cell)
            .unwrap_or_else(|| "unavailable (no reference)".into());
        writeln!(out, "final I_eff: {ieff}").unwrap();
        writeln!(out, "final var_T: {}", float_cell(last.var_t)).unwrap();
    }
    match &outcome.failure {
        Some(f) => writeln!(out, "status: solver failure: {f}").unwrap(),
        None => writeln!(out, "status: completed").unwrap(),
    }
    out
}

fn steady_setup(cfg: &RunConfig, bench: &Benchmark) -> Result<SteadySetup> {
    let goal = cfg.goal.to_spec()?;
    let mut spec = bench.spec.clone();
    if let Some(l_r) = cfg.stabilization.l_r {
        spec.reaction.l_r = l_r;
    }
    let reference = match goal.kind {
        GoalKind::VolumeMean => bench.volume_mean_ref,
        _ => None,
    };
    Ok(SteadySetup {
        spec,
        goal,
        stab: cfg.stabilization.to_config(),
        mode: cfg.stabilization.mode(),
        degree: cfg.p_primal,
        dual_degree: cfg.p_dual,
        dual_refine: cfg.mesh.dual_refine,
        adapt: cfg.adapt.to_params(),
        reference,
        exact: bench.exact_at(0.0),
    })
}

fn unsteady_setup(cfg: &RunConfig, bench: &Benchmark, t_end: f64) -> Result<UnsteadySetup> {
    let goal = cfg.goal.to_spec()?;
    let mut spec = bench.spec.clone();
    if let Some(l_r) = cfg.stabilization.l_r {
        spec.reaction.l_r = l_r;
    }
    let reference = match goal.kind {
        GoalKind::TerminalMean if (t_end - bench.t_end).abs() < 1e-12 => bench.terminal_mean_ref,
        _ => None,
    };
    Ok(UnsteadySetup {
        spec,
        goal,
        stab: cfg.stabilization.to_config(),
        mode: cfg.stabilization.mode(),
        degree: cfg.p_primal,
        dual_degree: cfg.p_dual,
        adapt: cfg.adapt.to_params(),
        reference,
        exact_terminal: bench.exact_at(t_end),
    })
}

/// Runs the configured study and writes history.csv, summary.txt and
/// per-iteration snapshots under the output directory. Reruns of the
/// same configuration produce identical files. The returned outcome
/// carries the failure string when a solver broke the loop; deciding
/// the process exit code is the caller's job.
pub fn execute(cfg: &RunConfig, quiet: bool) -> Result<RunOutcome> {
    let bench = cfg.checked()?;
    let out_dir = cfg.output.dir.clone();
    let snap_dir = out_dir.join("snapshots");
    std::fs::create_dir_all(&snap_dir)?;

    let mut on_snapshot = |snap: &Snapshot<'_>| -> Result<()> {
        let solution = snap_dir.join(format!("solution_{:03}.vtk", snap.iter));
        write_vtk(
            &solution,
            &format!("solution iteration {}", snap.iter),
            &snap.u.space.view,
            &[("solution", snap.u)],
            &[("indicator", snap.indicators)],
        )?;
        let dual = snap_dir.join(format!("dual_{:03}.vtk", snap.iter));
        write_vtk(
            &dual,
            &format!("dual iteration {}", snap.iter),
            &snap.z.space.view,
            &[("dual", snap.z)],
            &[],
        )?;
        Ok(())
    };

    let outcome = match cfg.mode {
        RunMode::Steady => {
            let setup = steady_setup(cfg, &bench)?;
            let mut forest = MeshForest::unit_square_crisscross(cfg.mesh.resolution);
            adaptive_steady(&mut forest, &setup, &mut on_snapshot)?
        }
        RunMode::Unsteady => {
            let t_end = cfg.time.t_end.unwrap_or(bench.t_end);
            let setup = unsteady_setup(cfg, &bench, t_end)?;
            let mut forest = MeshForest::unit_square_crisscross(cfg.mesh.resolution);
            forest.replicate_interval(cfg.time.m0);
            let mut partition = TimePartition::uniform(t_end, cfg.time.m0);
            adaptive_unsteady(&mut forest, &mut partition, &setup, &mut on_snapshot)?
        }
    };

    std::fs::write(out_dir.join("history.csv"), history_csv(&outcome.history))?;
    std::fs::write(out_dir.join("summary.txt"), summary_text(cfg, &outcome))?;

    if !quiet {
        for r in &outcome.history {
            let ieff = r
                .i_eff
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "-".into());
            println!(
                "iter {:3}  dofs {:7}  intervals {:4}  eta {:+.6e}  I_eff {ieff}",
                r.iter, r.dofs_at_t, r.n_intervals, r.eta
            );
        }
        if let Some(f) = &outcome.failure {
            println!("stopped by solver failure: {f}");
        }
        println!("artifacts in {}", out_dir.display());
    }

    Ok(RunOutcome {
        history: outcome.history,
        failure: outcome.failure,
        out_dir,
    })
}
