//! Steady primal and adjoint solves plus the goal-oriented error
//! indicators of one adaptive iteration.
//!
//! The adjoint problem reverses the convection and linearizes the
//! reaction at the computed primal iterate, so its zero-order coefficient
//! alpha + r'(u_h(x)) varies in space; it gets its own assembler here
//! rather than reusing the primal one. The dual space may live on the
//! same mesh as the primal one or on a refinement of it (same forest);
//! either way its polynomial degree must exceed the primal degree, since
//! the indicator weight z - I_h z vanishes otherwise.

use std::sync::Arc;

use crate::assembly::{coupling_pattern, newton_solve, Assembler, AssemblyMode, NewtonReport};
use crate::goals::{Density, GOAL_QUAD_DEGREE};
use crate::mesh::{dot, sub, MeshForest};
use crate::problem::ProblemSpec;
use crate::quadrature::{gauss_legendre_unit, triangle_rule};
use crate::space::{build_space, FeFunction, FeSpace};
use crate::sparse::{sparse_solve, SparseSystem};
use crate::stabilization::{crosswind_projector, delta_k_steady, tau_k, StabilizationConfig};
use crate::{Error, Result};

/// Solves the stabilized primal problem by Newton iteration. The
/// tolerance leaves the algebraic error orders below any error estimate
/// while staying reachable for the shock-capturing term, which is
/// Lipschitz but not differentiable and drops the iteration to a linear
/// rate near the root.
pub fn solve_steady_primal(
    space: &Arc<FeSpace>,
    spec: &ProblemSpec,
    config: &StabilizationConfig,
    mode: AssemblyMode,
    initial: Option<&FeFunction>,
) -> Result<NewtonReport> {
    let assembler = Assembler::new(space, spec, config, mode)?;
    newton_solve(&assembler, initial, 1e-9, 250)
}

/// Builds a dual space of the given degree on a copy of the primal mesh
/// refined `refine_levels` times (every level bisects all active cells).
/// The returned forest shares the primal forest's ancestry, so transfers
/// and ancestor lookups between the two meshes work against it.
pub fn build_dual_space(
    forest: &MeshForest,
    interval: usize,
    degree: usize,
    refine_levels: usize,
) -> Result<(MeshForest, Arc<FeSpace>)> {
    let mut dual_forest = forest.clone();
    for _ in 0..refine_levels {
        dual_forest.refine_uniform(interval);
    }
    let view = Arc::new(dual_forest.view(interval));
    let space = build_space(view, degree)?;
    Ok((dual_forest, space))
}

/// Assembles the adjoint system at a frozen primal iterate.
///
/// Weak form: a*(z, v) = <-b.grad z, v> + eps <grad z, grad v>
/// + <(alpha + r'(u_h)) z, v>, with the streamline test weight following
/// the reversed convection (-b) and delta scaled by `dual_delta_scale`.
/// `taus` supplies per-cell crosswind diffusion factors (Picard-frozen);
/// pass an empty slice to omit shock capturing. Constraints (homogeneous
/// Dirichlet) are recorded but not applied.
fn assemble_dual(
    dual_space: &Arc<FeSpace>,
    spec: &ProblemSpec,
    config: &StabilizationConfig,
    u_on_dual: &FeFunction,
    j: &Density,
    taus: &[f64],
) -> Result<SparseSystem> {
    let space = dual_space;
    let p = space.degree;
    let rule = triangle_rule((2 * p + 2).max(GOAL_QUAD_DEGREE))?;
    let tab = space.reference.tabulate(&rule.points);
    let n_local = space.reference.n_local();
    let mut matrix = crate::sparse::CsrMatrix::from_pattern(coupling_pattern(space));
    let mut rhs = vec![0.0; space.n_dofs];

    let mut grads = vec![[0.0; 2]; n_local];
    let mut laps = vec![0.0; n_local];
    for k in 0..space.view.n_cells() {
        let geo = &space.view.geo[k];
        let detj = 2.0 * geo.area;
        let dofs = &space.cell_dofs[k];

        // Streamline factor from the cell-sup of |b|, as in the primal
        // assembler, rescaled for the dual problem.
        let b_sup = rule
            .points
            .iter()
            .map(|&l| {
                let bv = (spec.b)(space.view.map_ref(k, l));
                (bv[0] * bv[0] + bv[1] * bv[1]).sqrt()
            })
            .fold(0.0_f64, f64::max);
        let delta = config.dual_delta_scale
            * delta_k_steady(
                geo,
                b_sup,
                spec.eps,
                spec.alpha,
                spec.reaction.r0,
                spec.reaction.l_r,
                p,
                config,
            );
        let tau = taus.get(k).copied().unwrap_or(0.0);

        for (q, &l) in rule.points.iter().enumerate() {
            let x = space.view.map_ref(k, l);
            let w = rule.weights[q] * detj;
            let basis = &tab[q];
            for i in 0..n_local {
                grads[i] = geo.push_gradient(basis.grad[i]);
                if p == 1 {
                    laps[i] = 0.0;
                } else {
                    let hp = geo.push_hessian(basis.hess[i]);
                    laps[i] = hp[0] + hp[2];
                }
            }
            let bv = (spec.b)(x);
            let (uv, _) = u_on_dual.value_grad_tab(k, basis);
            let coef = spec.alpha + (spec.reaction.r_prime)(uv);
            let jv = j.eval(k, l, x);
            let d = crosswind_projector(bv);

            for i in 0..n_local {
                let phi_i = basis.phi[i];
                let test = -(bv[0] * grads[i][0] + bv[1] * grads[i][1]);
                rhs[dofs[i]] += w * jv * (phi_i + delta * test);
                for jj in 0..n_local {
                    let phi_j = basis.phi[jj];
                    let conv = bv[0] * grads[jj][0] + bv[1] * grads[jj][1];
                    let mut a = spec.eps * dot(grads[jj], grads[i]) - conv * phi_i
                        + coef * phi_j * phi_i;
                    a += delta * (coef * phi_j - conv - spec.eps * laps[jj]) * test;
                    if tau > 0.0 {
                        let dg = [
                            d[0][0] * grads[jj][0] + d[0][1] * grads[jj][1],
                            d[1][0] * grads[jj][0] + d[1][1] * grads[jj][1],
                        ];
                        a += tau * dot(dg, grads[i]);
                    }
                    matrix.add(dofs[i], dofs[jj], w * a);
                }
            }
        }
    }

    let constrained = space.boundary_dofs.iter().map(|&d| (d, 0.0)).collect();
    Ok(SparseSystem {
        matrix,
        rhs,
        constrained,
    })
}

/// Crosswind factors of the adjoint equation frozen at iterate `z`:
/// the strong residual is j + b.grad z + eps lap z - (alpha + r'(u_h)) z.
fn dual_taus(
    dual_space: &Arc<FeSpace>,
    spec: &ProblemSpec,
    config: &StabilizationConfig,
    u_on_dual: &FeFunction,
    j: &Density,
    z: &FeFunction,
) -> Result<Vec<f64>> {
    let space = dual_space;
    let rule = triangle_rule((2 * space.degree + 2).max(GOAL_QUAD_DEGREE))?;
    let tab = space.reference.tabulate(&rule.points);
    let mut taus = Vec::with_capacity(space.view.n_cells());
    for k in 0..space.view.n_cells() {
        let geo = &space.view.geo[k];
        let detj = 2.0 * geo.area;
        let mut res_sq = 0.0;
        let mut semi_sq = 0.0;
        for (q, &l) in rule.points.iter().enumerate() {
            let x = space.view.map_ref(k, l);
            let w = rule.weights[q] * detj;
            let bv = (spec.b)(x);
            let (uv, _) = u_on_dual.value_grad_tab(k, &tab[q]);
            let coef = spec.alpha + (spec.reaction.r_prime)(uv);
            let (zv, zg) = z.value_grad_tab(k, &tab[q]);
            let zl = z.laplacian_tab(k, &tab[q]);
            let r = j.eval(k, l, x) + bv[0] * zg[0] + bv[1] * zg[1] + spec.eps * zl - coef * zv;
            res_sq += w * r * r;
            semi_sq += w * dot(zg, zg);
        }
        taus.push(tau_k(geo, res_sq.sqrt(), semi_sq.sqrt(), spec.eps, config));
    }
    Ok(taus)
}

/// Solves the adjoint problem for the frozen goal density `j`, with
/// homogeneous Dirichlet values. `dual_forest` must share ancestry with
/// `u_h`'s mesh (see [`build_dual_space`]).
pub fn solve_steady_dual(
    dual_forest: &MeshForest,
    dual_space: &Arc<FeSpace>,
    spec: &ProblemSpec,
    config: &StabilizationConfig,
    u_h: &FeFunction,
    j: &Density,
) -> Result<FeFunction> {
    if dual_space.degree <= u_h.space.degree {
        return Err(Error::DualDegreeTooLow {
            primal: u_h.space.degree,
            dual: dual_space.degree,
        });
    }
    let u_on_dual = u_h.transfer(dual_forest, dual_space);
    let j_local = j.on_space(dual_forest, dual_space);

    let solve_once = |taus: &[f64]| -> Result<FeFunction> {
        let mut system = assemble_dual(dual_space, spec, config, &u_on_dual, &j_local, taus)?;
        system.apply_constraints();
        let sol = sparse_solve(&system)?;
        Ok(dual_space.function_from(sol))
    };

    let mut z = solve_once(&[])?;
    if config.dual_shock_capturing {
        // Picard: refreeze the crosswind factor at the new iterate until
        // it settles (a handful of passes suffices in practice).
        for _ in 0..5 {
            let taus = dual_taus(dual_space, spec, config, &u_on_dual, &j_local, &z)?;
            let z_new = solve_once(&taus)?;
            let diff = z_new
                .coeffs
                .iter()
                .zip(&z.coeffs)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            let scale = z.coeffs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            z = z_new;
            if diff <= 1e-8 * (1.0 + scale) {
                break;
            }
        }
    }
    Ok(z)
}

/// Signed goal-error indicators of one steady iteration.
pub struct SteadyIndicators {
    /// One signed indicator per primal view cell.
    pub per_cell: Vec<f64>,
    /// Their sum: the error estimate for J(u) - J(u_h).
    pub eta: f64,
}

/// Evaluates the localized dual-weighted residual
///   eta_K = <R(u_h), z - I_h z>_K - delta_K <R(u_h), b.grad I_h z>_K
///           + tau_K <D grad u_h, grad I_h z>_K - <E(u_h), z - I_h z>_dK
/// with R the strong residual, E the half flux jump across interior
/// edges, and I_h nodal interpolation onto the primal space. All terms
/// are integrated over the dual mesh's cells and edges and attributed to
/// their primal ancestors, so a refined dual mesh is handled naturally.
pub fn steady_indicators(
    dual_forest: &MeshForest,
    u_h: &FeFunction,
    z: &FeFunction,
    spec: &ProblemSpec,
    config: &StabilizationConfig,
    mode: AssemblyMode,
) -> Result<SteadyIndicators> {
    let primal_space = &u_h.space;
    let dual_space = &z.space;
    let primal_view = &primal_space.view;
    let dual_view = &dual_space.view;
    let n_primal = primal_view.n_cells();

    // Stabilization factors exactly as in the primal solve.
    let asm = Assembler::new(primal_space, spec, config, mode)?;
    let deltas: Vec<f64> = (0..n_primal).map(|c| asm.delta_steady(c)).collect();
    let taus: Vec<f64> = if mode.shock_capturing() {
        (0..n_primal).map(|c| asm.tau_frozen(c, u_h)).collect()
    } else {
        vec![0.0; n_primal]
    };

    // I_h z on the primal space, then both it and u_h re-expressed on the
    // dual mesh (exact: dual cells subdivide primal cells, higher degree).
    let ihz = z.transfer(dual_forest, primal_space);
    let ihz_d = ihz.transfer(dual_forest, dual_space);
    let u_d = u_h.transfer(dual_forest, dual_space);

    // Primal ancestor of every dual cell.
    let mut ancestor = Vec::with_capacity(dual_view.n_cells());
    for kd in 0..dual_view.n_cells() {
        let anc = dual_forest
            .active_ancestor(&primal_view.cell_ids, dual_view.cell_ids[kd])
            .ok_or_else(|| {
                Error::Mesh("dual mesh does not refine the primal mesh".into())
            })?;
        ancestor.push(primal_view.local_index(anc).expect("ancestor is active"));
    }

    let rule = triangle_rule(2 * dual_space.degree + 2)?;
    let tab = dual_space.reference.tabulate(&rule.points);
    let mut per_cell = vec![0.0; n_primal];

    for kd in 0..dual_view.n_cells() {
        let kp = ancestor[kd];
        let geo = &dual_view.geo[kd];
        let detj = 2.0 * geo.area;
        let delta = deltas[kp];
        let tau = taus[kp];
        let mut acc = 0.0;
        for (q, &l) in rule.points.iter().enumerate() {
            let x = dual_view.map_ref(kd, l);
            let w = rule.weights[q] * detj;
            let basis = &tab[q];
            let (uv, ug) = u_d.value_grad_tab(kd, basis);
            let ul = u_d.laplacian_tab(kd, basis);
            let bv = (spec.b)(x);
            let resid = (spec.f)(x, 0.0) + spec.eps * ul
                - (bv[0] * ug[0] + bv[1] * ug[1])
                - spec.alpha * uv
                - (spec.reaction.r)(uv);
            let (zv, _) = z.value_grad_tab(kd, basis);
            let (pv, pg) = ihz_d.value_grad_tab(kd, basis);
            acc += w * resid * (zv - pv);
            acc -= w * delta * resid * (bv[0] * pg[0] + bv[1] * pg[1]);
            if tau > 0.0 {
                let d = crosswind_projector(bv);
                let dg = [
                    d[0][0] * ug[0] + d[0][1] * ug[1],
                    d[1][0] * ug[0] + d[1][1] * ug[1],
                ];
                acc += w * tau * dot(dg, pg);
            }
        }
        per_cell[kp] += acc;
    }

    // Flux-jump terms over interior dual edges separating distinct primal
    // ancestors (edges inside one primal cell carry no jump). Each
    // adjacent primal cell receives -<E, z - I_h z> over the edge.
    let line = gauss_legendre_unit(4);
    for edge in &dual_view.edges {
        if edge.cells.len() != 2 {
            continue;
        }
        let (ka, kb) = (edge.cells[0], edge.cells[1]);
        let (pa, pb) = (ancestor[ka], ancestor[kb]);
        if pa == pb {
            continue;
        }
        // Gradient jump in the direction of the edge normal, which points
        // from the higher adjacent forest cell into the lower.
        let (hi, lo) = if dual_view.cell_ids[ka] > dual_view.cell_ids[kb] {
            (ka, kb)
        } else {
            (kb, ka)
        };
        let a = dual_view.vertices[edge.v[0]];
        let b = dual_view.vertices[edge.v[1]];
        let mut val = 0.0;
        for (s, ws) in line.points.iter().zip(&line.weights) {
            let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
            let (_, g_hi) = u_d.value_grad(hi, dual_view.map_phys(hi, x));
            let (_, g_lo) = u_d.value_grad(lo, dual_view.map_phys(lo, x));
            let jump = dot(edge.normal, sub(g_hi, g_lo));
            let e_flux = 0.5 * spec.eps * jump;
            let l_a = dual_view.map_phys(ka, x);
            let (zv, _) = z.value_grad(ka, l_a);
            let (pv, _) = ihz_d.value_grad(ka, l_a);
            val += ws * edge.length * e_flux * (zv - pv);
        }
        per_cell[pa] -= val;
        per_cell[pb] -= val;
    }

    let eta = per_cell.iter().sum();
    Ok(SteadyIndicators { per_cell, eta })
}

/// Ratio of estimate to true error; infinite when the true error is zero.
pub fn effectivity(eta: f64, true_err: f64) -> f64 {
    if true_err == 0.0 {
        f64::INFINITY
    } else {
        eta / true_err
    }
}
