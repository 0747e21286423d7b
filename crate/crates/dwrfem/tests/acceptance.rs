//! Acceptance suite. Each test drives a full adaptive run on one of the
//! bundled benchmark problems (or replays the oracle checks) and prints
//! a single summary line with the measured figures; run with
//! `--nocapture` to see them on success.

mod common;

use std::collections::HashSet;
use std::time::Instant;

use dwrfem::assembly::AssemblyMode;
use dwrfem::benchmarks::by_name;
use dwrfem::dwr::{
    adaptive_steady, adaptive_unsteady, AdaptParams, AdaptiveRun, Snapshot, SteadySetup,
    UnsteadySetup,
};
use dwrfem::goals::{GoalKind, GoalSpec};
use dwrfem::mesh::MeshForest;
use dwrfem::stabilization::StabilizationConfig;
use dwrfem::unsteady::TimePartition;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn history_table(run: &AdaptiveRun) -> String {
    let mut s = String::new();
    for r in &run.history {
        s.push_str(&format!(
            "    iter {:2}  dofs {:6}  intervals {:3}  eta {:+.4e}  true {}  I_eff {}  var {:.4}\n",
            r.iter,
            r.dofs_at_t,
            r.n_intervals,
            r.eta,
            r.true_err.map_or("n/a".into(), |e| format!("{e:+.4e}")),
            r.i_eff.map_or("n/a".into(), |i| format!("{i:.4}")),
            r.var_t,
        ));
    }
    s
}

fn no_failure(run: &AdaptiveRun) {
    if let Some(f) = &run.failure {
        panic!("solver failure during adaptive run: {f}\n{}", history_table(run));
    }
}

fn tanh_weighted_l2_setup(
    degree: usize,
    dual_degree: usize,
    dual_sc: bool,
    max_dofs: usize,
    max_iters: usize,
) -> SteadySetup {
    let bench = by_name("tanh_layer").unwrap();
    let exact = bench.exact_at(0.0);
    let mut stab = StabilizationConfig::default();
    stab.dual_shock_capturing = dual_sc;
    SteadySetup {
        spec: bench.spec,
        goal: GoalSpec::new(GoalKind::WeightedL2Error),
        stab,
        mode: AssemblyMode::SupgShockCapturing,
        degree,
        dual_degree,
        dual_refine: 0,
        adapt: AdaptParams {
            max_iters,
            max_dofs,
            ..Default::default()
        },
        reference: None,
        exact,
    }
}

/// Linear problem, linear goal: the error representation has no
/// linearization remainder, so a dual two degrees up on a twice-refined
/// mesh must price the error almost exactly.
#[test]
fn estimator_is_near_exact_for_a_linear_problem_and_goal() {
    let start = Instant::now();
    let bench = by_name("smooth_manufactured").unwrap();
    let exact = bench.exact_at(0.0);
    let setup = SteadySetup {
        spec: bench.spec,
        goal: GoalSpec::new(GoalKind::VolumeMean),
        stab: StabilizationConfig::default(),
        mode: AssemblyMode::Supg,
        degree: 1,
        dual_degree: 3,
        dual_refine: 2,
        adapt: AdaptParams {
            max_iters: 4,
            ..Default::default()
        },
        reference: bench.volume_mean_ref,
        exact,
    };
    let mut forest = MeshForest::unit_square_crisscross(8);
    let run = adaptive_steady(&mut forest, &setup, &mut |_| Ok(())).unwrap();
    no_failure(&run);
    let elapsed = start.elapsed().as_secs_f64();

    let last = run.history.last().unwrap();
    let i_eff = last.i_eff.expect("reference value known");
    println!(
        "estimator exactness: I_eff {:.4} at {} dofs, {:.1}s\n{}",
        i_eff,
        last.dofs_at_t,
        elapsed,
        history_table(&run)
    );
    assert!(elapsed < 30.0, "run took {elapsed:.1}s, budget 30s");
    assert!(
        (0.95..=1.05).contains(&i_eff),
        "I_eff {i_eff} outside [0.95, 1.05]\n{}",
        history_table(&run)
    );
}

/// Interior-layer problem under the error-weighted goal: the effectivity
/// index must trend toward one as the mesh resolves the layer and sit in
/// the [0.85, 1.15] band once the run reaches the dof budget.
#[test]
fn layer_error_effectivity_improves_into_the_unit_band() {
    let start = Instant::now();
    let setup = tanh_weighted_l2_setup(1, 2, false, 40_000, 30);
    let mut forest = MeshForest::unit_square_crisscross(8);
    let run = adaptive_steady(&mut forest, &setup, &mut |_| Ok(())).unwrap();
    no_failure(&run);
    let elapsed = start.elapsed().as_secs_f64();

    let devs: Vec<f64> = run
        .history
        .iter()
        .map(|r| (r.i_eff.expect("exact solution known") - 1.0).abs())
        .collect();
    let last = run.history.last().unwrap();
    println!(
        "layer effectivity trend: I_eff {:.4} -> {:.4} over {} iterations, {} dofs, {:.0}s\n{}",
        run.history[0].i_eff.unwrap(),
        last.i_eff.unwrap(),
        run.history.len(),
        last.dofs_at_t,
        elapsed,
        history_table(&run)
    );

    assert!(elapsed < 600.0, "run took {elapsed:.0}s, budget 600s");
    let final_i = last.i_eff.unwrap();
    assert!(
        (0.85..=1.15).contains(&final_i),
        "final I_eff {final_i} outside [0.85, 1.15]\n{}",
        history_table(&run)
    );
    let landed = run
        .history
        .iter()
        .find(|r| (0.85..=1.15).contains(&r.i_eff.unwrap()))
        .expect("some row reaches the band");
    assert!(
        landed.dofs_at_t <= 66_000,
        "band first reached at {} dofs, expected by roughly 6e4",
        landed.dofs_at_t
    );
    assert!(
        devs.last().unwrap() < devs.first().unwrap(),
        "no net improvement: |I_eff-1| {:.3} -> {:.3}\n{}",
        devs.first().unwrap(),
        devs.last().unwrap(),
        history_table(&run)
    );
    let worsening = devs.windows(2).filter(|w| w[1] > w[0] + 0.05).count();
    assert!(
        worsening == 0,
        "effectivity deviation grew by more than 0.05 on {worsening} steps\n{}",
        history_table(&run)
    );
}

/// Point-value goal: refinement must concentrate near the control point
/// and leave the remote part of the layer coarse, and the estimate must
/// stay within a factor of five of the true error.
#[test]
fn point_goal_refines_near_its_control_point() {
    let bench = by_name("tanh_layer").unwrap();
    let exact = bench.exact_at(0.0);
    let stab = StabilizationConfig::default();
    let goal = GoalSpec::new(GoalKind::PointValueRegularized);
    let x_e = goal.x_e;
    let setup = SteadySetup {
        spec: bench.spec,
        goal,
        stab,
        mode: AssemblyMode::SupgShockCapturing,
        degree: 1,
        dual_degree: 2,
        dual_refine: 0,
        adapt: AdaptParams {
            max_iters: 20,
            max_dofs: 40_000,
            ..Default::default()
        },
        reference: None,
        exact,
    };

    // (id, centroid, h) of every active cell, one entry per iteration.
    let mut meshes: Vec<Vec<(usize, [f64; 2], f64)>> = Vec::new();
    let mut forest = MeshForest::unit_square_crisscross(8);
    let run = adaptive_steady(&mut forest, &setup, &mut |snap: &Snapshot<'_>| {
        let view = &snap.u.space.view;
        meshes.push(
            (0..view.cell_vertices.len())
                .map(|c| (view.cell_ids[c], view.map_ref(c, [1.0 / 3.0, 1.0 / 3.0]), view.geo[c].h))
                .collect(),
        );
        Ok(())
    })
    .unwrap();
    no_failure(&run);

    let mut refined_total = 0usize;
    let mut refined_near = 0usize;
    for pair in meshes.windows(2) {
        let next_ids: HashSet<usize> = pair[1].iter().map(|&(id, _, _)| id).collect();
        for &(id, centroid, _) in &pair[0] {
            if !next_ids.contains(&id) {
                refined_total += 1;
                if dist(centroid, x_e) <= 0.2 {
                    refined_near += 1;
                }
            }
        }
    }
    let fraction = refined_near as f64 / refined_total as f64;

    // The layer runs along 2x - y = 1/4; (0.5, 0.75) sits on it far from
    // the control point.
    let far_point = [0.5, 0.75];
    let final_mesh = meshes.last().unwrap();
    let min_h = |p: [f64; 2]| {
        final_mesh
            .iter()
            .filter(|&&(_, c, _)| dist(c, p) <= 0.1)
            .map(|&(_, _, h)| h)
            .fold(f64::INFINITY, f64::min)
    };
    let near_h = min_h(x_e);
    let far_h = min_h(far_point);

    let last = run.history.last().unwrap();
    let i_eff = last.i_eff.expect("exact solution known");
    println!(
        "point goal focus: {refined_near}/{refined_total} refined cells within 0.2 of ({:.4}, {:.4}), \
         min h {:.2e} near vs {:.2e} on the far layer, I_eff {:.3}\n{}",
        x_e[0],
        x_e[1],
        near_h,
        far_h,
        i_eff,
        history_table(&run)
    );

    assert!(
        fraction >= 0.60,
        "only {:.0}% of refined cells near the control point\n{}",
        100.0 * fraction,
        history_table(&run)
    );
    assert!(
        far_h >= 3.0 * near_h,
        "far layer not left coarse: near h {near_h:.3e}, far h {far_h:.3e}"
    );
    assert!(
        (0.2..=5.0).contains(&i_eff.abs()),
        "I_eff {i_eff} outside factor-5 sanity band\n{}",
        history_table(&run)
    );
}

/// Moving-hump problem: adaptivity must beat uniform-mesh overshoot
/// figures (terminal variation close to the exact 0.9975 at a fraction
/// of the dofs) while the estimator stays within ten percent.
#[test]
fn moving_hump_controls_overshoot_and_estimates_within_ten_percent() {
    let start = Instant::now();
    let bench = by_name("hump").unwrap();
    let exact_terminal = bench.exact_at(bench.t_end);
    let setup = UnsteadySetup {
        spec: bench.spec,
        goal: GoalSpec::new(GoalKind::TerminalMean),
        stab: StabilizationConfig::default(),
        mode: AssemblyMode::Supg,
        degree: 1,
        dual_degree: 2,
        adapt: AdaptParams {
            max_iters: 8,
            max_dofs: 40_000,
            ..Default::default()
        },
        reference: bench.terminal_mean_ref,
        exact_terminal,
    };
    let mut forest = MeshForest::unit_square_crisscross(8);
    forest.replicate_interval(10);
    let mut partition = TimePartition::uniform(bench.t_end, 10);
    let run = adaptive_unsteady(&mut forest, &mut partition, &setup, &mut |_| Ok(())).unwrap();
    no_failure(&run);
    let elapsed = start.elapsed().as_secs_f64();

    let within_budget = run
        .history
        .iter()
        .filter(|r| r.dofs_at_t <= 40_000)
        .next_back()
        .expect("at least one row within the dof budget");
    let tail: Vec<f64> = run
        .history
        .iter()
        .rev()
        .take(3)
        .map(|r| r.i_eff.expect("terminal reference known"))
        .collect();
    println!(
        "moving hump: var(T) {:.4} at {} dofs, last I_eff {:?}, {:.0}s\n{}",
        within_budget.var_t,
        within_budget.dofs_at_t,
        tail,
        elapsed,
        history_table(&run)
    );

    assert!(elapsed < 1800.0, "run took {elapsed:.0}s, budget 1800s");
    assert!(
        within_budget.var_t <= 1.15,
        "var(T) {:.4} exceeds 1.15 at {} dofs\n{}",
        within_budget.var_t,
        within_budget.dofs_at_t,
        history_table(&run)
    );
    assert!(run.history.len() >= 3, "need at least three recorded iterations");
    for (k, i) in tail.iter().enumerate() {
        assert!(
            (0.9..=1.1).contains(i),
            "I_eff {i:.4} of final-minus-{k} row outside [0.9, 1.1]\n{}",
            history_table(&run)
        );
    }
}

/// Replay of the oracle suite; no benchmark runs involved.
#[test]
fn oracle_checks_hold_without_benchmark_runs() {
    common::check_dense_assembly_equivalence();
    common::check_local_matrices_analytic();
    common::check_backward_euler_equivalence();
    common::check_crank_nicolson_equivalence();
    common::check_trapezoid_identity_on_cubics();
    common::check_manufactured_sources_against_fd();
    common::check_p1_l2_rate();
    println!("oracle checks: dense assembly, local matrices, both time steppers, trapezoid identity, sources, P1 rate");
}

/// Two discretization studies on the layer problem: a shock-captured
/// dual must not move the final error by more than ten percent, and the
/// higher-order pairing must reach the low-order run's final accuracy
/// with fewer unknowns.
#[test]
fn dual_shock_capturing_is_neutral_and_higher_order_pays_off() {
    let budget = 30_000;

    let mut f_a = MeshForest::unit_square_crisscross(8);
    let run_a = adaptive_steady(
        &mut f_a,
        &tanh_weighted_l2_setup(1, 2, false, budget, 14),
        &mut |_| Ok(()),
    )
    .unwrap();
    no_failure(&run_a);
    let err_a = run_a.history.last().unwrap().true_err.unwrap().abs();

    let mut f_b = MeshForest::unit_square_crisscross(8);
    let run_b = adaptive_steady(
        &mut f_b,
        &tanh_weighted_l2_setup(1, 2, true, budget, 14),
        &mut |_| Ok(()),
    )
    .unwrap();
    no_failure(&run_b);
    let err_b = run_b.history.last().unwrap().true_err.unwrap().abs();
    let change = (err_b - err_a).abs() / err_a;

    let mut f_c = MeshForest::unit_square_crisscross(8);
    let run_c = adaptive_steady(
        &mut f_c,
        &tanh_weighted_l2_setup(2, 4, false, budget, 14),
        &mut |_| Ok(()),
    )
    .unwrap();
    no_failure(&run_c);
    let dofs_a = run_a.history.last().unwrap().dofs_at_t;
    let reached = run_c
        .history
        .iter()
        .find(|r| r.true_err.unwrap().abs() <= err_a);

    println!(
        "study: final error {err_a:.4e} (supg dual) vs {err_b:.4e} (shock-captured dual), change {:.1}%; \
         p=2 reaches {err_a:.4e} at {} dofs vs {} dofs\n  p1/p2 supg dual:\n{}  p1/p2 sc dual:\n{}  p2/p4:\n{}",
        100.0 * change,
        reached.map_or("n/a".into(), |r| r.dofs_at_t.to_string()),
        dofs_a,
        history_table(&run_a),
        history_table(&run_b),
        history_table(&run_c)
    );

    assert!(
        change < 0.10,
        "dual shock capturing moved the final error by {:.1}% (|{err_b:.4e}| vs |{err_a:.4e}|)",
        100.0 * change
    );
    let reached = reached.unwrap_or_else(|| {
        panic!(
            "p=2/p_dual=4 never reached the p=1 final error {err_a:.3e}\n{}",
            history_table(&run_c)
        )
    });
    assert!(
        reached.dofs_at_t < dofs_a,
        "higher order needed {} dofs, low order {} dofs, for error {err_a:.3e}",
        reached.dofs_at_t,
        dofs_a
    );
}
