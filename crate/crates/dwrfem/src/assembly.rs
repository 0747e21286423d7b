//! Global assembly of the stabilized convection-diffusion-reaction forms
//! and the Newton iteration for the steady nonlinear problem.
//!
//! The steady weak form tested with phi is
//!
//!   a(u, phi) = <eps grad u, grad phi> + <b . grad u, phi>
//!             + <alpha u + r(u), phi>
//!
//! plus, depending on the mode, the streamline term
//!   sum_K delta_K <R(u), b . grad phi>_K,
//!   R(u) = alpha u + b . grad u - eps lap(u) + r(u) - f,
//! and the crosswind diffusion term
//!   sum_K tau_K(u) <D grad u, grad phi>_K.
//!
//! `assemble_raw` produces the Newton system: the matrix is the Jacobian
//! at the linearization state (`r` via `r'`, `tau_K` frozen), the right-hand
//! side the negative nonlinear residual, so the solution is the Newton
//! increment. Dirichlet constraints prescribe `g - u_lin` at boundary dofs.

use std::sync::Arc;

use crate::mesh::CellGeometry;
use crate::problem::ProblemSpec;
use crate::quadrature::{triangle_rule, TriQuadrature};
use crate::space::{BasisEval, FeFunction, FeSpace};
use crate::sparse::{CsrMatrix, SparseSystem};
use crate::stabilization::{
    crosswind_projector, delta_k_steady, delta_k_unsteady, tau_k, StabilizationConfig,
};
use crate::{Error, Result};

/// Which stabilization terms enter the form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssemblyMode {
    Galerkin,
    Supg,
    SupgShockCapturing,
}

impl AssemblyMode {
    pub fn supg(self) -> bool {
        !matches!(self, AssemblyMode::Galerkin)
    }

    pub fn shock_capturing(self) -> bool {
        matches!(self, AssemblyMode::SupgShockCapturing)
    }
}

/// Sparsity pattern induced by cell couplings.
pub fn coupling_pattern(space: &FeSpace) -> Vec<Vec<usize>> {
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); space.n_dofs];
    for dofs in &space.cell_dofs {
        for &i in dofs {
            for &j in dofs {
                rows[i].push(j);
            }
        }
    }
    rows
}

/// Reusable assembler for one space/problem pair. Precomputes the
/// quadrature rule (degree 2p+2), the tabulated reference basis, physical
/// quadrature points, and velocity values per cell.
pub struct Assembler {
    pub space: Arc<FeSpace>,
    pub spec: ProblemSpec,
    pub config: StabilizationConfig,
    pub mode: AssemblyMode,
    rule: TriQuadrature,
    tab: Vec<BasisEval>,
    xq: Vec<Vec<[f64; 2]>>,
    bq: Vec<Vec<[f64; 2]>>,
    b_sup: Vec<f64>,
    template: CsrMatrix,
}

impl Assembler {
    pub fn new(
        space: &Arc<FeSpace>,
        spec: &ProblemSpec,
        config: &StabilizationConfig,
        mode: AssemblyMode,
    ) -> Result<Self> {
        let rule = triangle_rule(2 * space.degree + 2)?;
        let tab = space.reference.tabulate(&rule.points);
        let n_cells = space.view.cell_ids.len();
        let mut xq = Vec::with_capacity(n_cells);
        let mut bq = Vec::with_capacity(n_cells);
        let mut b_sup = Vec::with_capacity(n_cells);
        for c in 0..n_cells {
            let pts: Vec<[f64; 2]> = rule.points.iter().map(|&l| space.view.map_ref(c, l)).collect();
            let bs: Vec<[f64; 2]> = pts.iter().map(|&x| (spec.b)(x)).collect();
            let sup = bs
                .iter()
                .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
                .fold(0.0_f64, f64::max);
            xq.push(pts);
            bq.push(bs);
            b_sup.push(sup);
        }
        let template = CsrMatrix::from_pattern(coupling_pattern(space));
        Ok(Assembler {
            space: space.clone(),
            spec: spec.clone(),
            config: *config,
            mode,
            rule,
            tab,
            xq,
            bq,
            b_sup,
            template,
        })
    }

    pub fn delta_steady(&self, c: usize) -> f64 {
        if !self.mode.supg() {
            return 0.0;
        }
        delta_k_steady(
            &self.space.view.geo[c],
            self.b_sup[c],
            self.spec.eps,
            self.spec.alpha,
            self.spec.reaction.r0,
            self.spec.reaction.l_r,
            self.space.degree,
            &self.config,
        )
    }

    pub fn delta_unsteady(&self, c: usize, k_m: f64) -> f64 {
        if !self.mode.supg() {
            return 0.0;
        }
        delta_k_unsteady(
            &self.space.view.geo[c],
            self.b_sup[c],
            self.spec.eps,
            self.spec.alpha,
            k_m,
            self.space.degree,
            &self.config,
        )
    }

    /// Physical Laplacians of all local basis functions at quad point `q`.
    fn basis_laplacians(&self, geo: &CellGeometry, q: usize, out: &mut [f64]) {
        if self.space.degree == 1 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        for (i, lap) in out.iter_mut().enumerate() {
            let hp = geo.push_hessian(self.tab[q].hess[i]);
            *lap = hp[0] + hp[2];
        }
    }

    /// Shock-capturing factor for cell `c` frozen at `u_lin`:
    /// tau_K = l_K * ||R(u_lin)||_K / (|u_lin|_{H1(K)} + kappa).
    pub fn tau_frozen(&self, c: usize, u_lin: &FeFunction) -> f64 {
        let geo = &self.space.view.geo[c];
        let detj = 2.0 * geo.area;
        let mut res_sq = 0.0;
        let mut semi_sq = 0.0;
        for q in 0..self.rule.points.len() {
            let (uv, ug) = u_lin.value_grad_tab(c, &self.tab[q]);
            let ul = u_lin.laplacian_tab(c, &self.tab[q]);
            let b = self.bq[c][q];
            let fv = (self.spec.f)(self.xq[c][q], 0.0);
            let r = self.spec.alpha * uv + b[0] * ug[0] + b[1] * ug[1] - self.spec.eps * ul
                + (self.spec.reaction.r)(uv)
                - fv;
            let w = self.rule.weights[q] * detj;
            res_sq += w * r * r;
            semi_sq += w * (ug[0] * ug[0] + ug[1] * ug[1]);
        }
        tau_k(
            geo,
            res_sq.sqrt(),
            semi_sq.sqrt(),
            self.spec.eps,
            &self.config,
        )
    }

    /// Newton system at `u_lin`: Jacobian matrix, rhs = negative residual,
    /// boundary constraints prescribing `g - u_lin` (not yet applied).
    pub fn assemble_raw(&self, u_lin: &FeFunction) -> SparseSystem {
        assert!(
            Arc::ptr_eq(&u_lin.space, &self.space),
            "linearization state must live on the assembler's space"
        );
        let mut matrix = self.template.clone();
        matrix.set_zero();
        let mut rhs = vec![0.0; self.space.n_dofs];
        let nq = self.rule.points.len();
        let nloc = self.space.reference.n_local();
        let mut local = vec![0.0; nloc * nloc];
        let mut local_rhs = vec![0.0; nloc];
        let mut laps = vec![0.0; nloc];

        for c in 0..self.space.view.cell_ids.len() {
            let geo = &self.space.view.geo[c];
            let detj = 2.0 * geo.area;
            let delta = self.delta_steady(c);
            let tau = if self.mode.shock_capturing() {
                self.tau_frozen(c, u_lin)
            } else {
                0.0
            };
            local.iter_mut().for_each(|v| *v = 0.0);
            local_rhs.iter_mut().for_each(|v| *v = 0.0);

            for q in 0..nq {
                let w = self.rule.weights[q] * detj;
                let b = self.bq[c][q];
                let fv = (self.spec.f)(self.xq[c][q], 0.0);
                let (uv, ug) = u_lin.value_grad_tab(c, &self.tab[q]);
                let ul = u_lin.laplacian_tab(c, &self.tab[q]);
                let rv = (self.spec.reaction.r)(uv);
                let rp = (self.spec.reaction.r_prime)(uv);
                let sigma = self.spec.alpha + rp;
                let d = crosswind_projector(b);
                self.basis_laplacians(geo, q, &mut laps);

                // Physical gradients of all local basis functions.
                let tabq = &self.tab[q];
                let grads: Vec<[f64; 2]> =
                    (0..nloc).map(|i| geo.push_gradient(tabq.grad[i])).collect();

                // Strong residual of the current iterate.
                let resid = self.spec.alpha * uv + b[0] * ug[0] + b[1] * ug[1]
                    - self.spec.eps * ul
                    + rv
                    - fv;

                for i in 0..nloc {
                    let pi = tabq.phi[i];
                    let gi = grads[i];
                    let bgi = b[0] * gi[0] + b[1] * gi[1];
                    let dug = [
                        d[0][0] * ug[0] + d[0][1] * ug[1],
                        d[1][0] * ug[0] + d[1][1] * ug[1],
                    ];
                    // Weak residual tested with phi_i.
                    let mut f_i = self.spec.eps * (ug[0] * gi[0] + ug[1] * gi[1])
                        + (b[0] * ug[0] + b[1] * ug[1]) * pi
                        + (self.spec.alpha * uv + rv - fv) * pi;
                    if delta != 0.0 {
                        f_i += delta * resid * bgi;
                    }
                    if tau != 0.0 {
                        f_i += tau * (dug[0] * gi[0] + dug[1] * gi[1]);
                    }
                    local_rhs[i] -= w * f_i;

                    for j in 0..nloc {
                        let pj = tabq.phi[j];
                        let gj = grads[j];
                        let bgj = b[0] * gj[0] + b[1] * gj[1];
                        let mut a_ij = self.spec.eps * (gj[0] * gi[0] + gj[1] * gi[1])
                            + bgj * pi
                            + sigma * pj * pi;
                        if delta != 0.0 {
                            a_ij += delta
                                * (sigma * pj + bgj - self.spec.eps * laps[j])
                                * bgi;
                        }
                        if tau != 0.0 {
                            let dgj = [
                                d[0][0] * gj[0] + d[0][1] * gj[1],
                                d[1][0] * gj[0] + d[1][1] * gj[1],
                            ];
                            a_ij += tau * (dgj[0] * gi[0] + dgj[1] * gi[1]);
                        }
                        local[i * nloc + j] += w * a_ij;
                    }
                }
            }

            let dofs = &self.space.cell_dofs[c];
            for i in 0..nloc {
                rhs[dofs[i]] += local_rhs[i];
                for j in 0..nloc {
                    matrix.add(dofs[i], dofs[j], local[i * nloc + j]);
                }
            }
        }

        let constrained = self
            .space
            .boundary_dofs
            .iter()
            .map(|&d| {
                let x = self.space.dof_coords[d];
                (d, (self.spec.g)(x, 0.0) - u_lin.coeffs[d])
            })
            .collect();
        SparseSystem {
            matrix,
            rhs,
            constrained,
        }
    }

    /// System matrix of one implicit time step of length `k_m`:
    /// (1/k) mass + convection + diffusion + alpha mass, plus the
    /// streamline stabilization of the full step residual. Linear (no r).
    pub fn unsteady_step_matrix(&self, k_m: f64) -> CsrMatrix {
        assert!(k_m > 0.0);
        let mut matrix = self.template.clone();
        matrix.set_zero();
        let nq = self.rule.points.len();
        let nloc = self.space.reference.n_local();
        let mut local = vec![0.0; nloc * nloc];
        let mut laps = vec![0.0; nloc];
        let inv_k = 1.0 / k_m;

        for c in 0..self.space.view.cell_ids.len() {
            let geo = &self.space.view.geo[c];
            let detj = 2.0 * geo.area;
            let delta = self.delta_unsteady(c, k_m);
            local.iter_mut().for_each(|v| *v = 0.0);
            for q in 0..nq {
                let w = self.rule.weights[q] * detj;
                let b = self.bq[c][q];
                let tabq = &self.tab[q];
                self.basis_laplacians(geo, q, &mut laps);
                let grads: Vec<[f64; 2]> =
                    (0..nloc).map(|i| geo.push_gradient(tabq.grad[i])).collect();
                for i in 0..nloc {
                    let pi = tabq.phi[i];
                    let gi = grads[i];
                    let bgi = b[0] * gi[0] + b[1] * gi[1];
                    for j in 0..nloc {
                        let pj = tabq.phi[j];
                        let gj = grads[j];
                        let bgj = b[0] * gj[0] + b[1] * gj[1];
                        let mut a_ij = inv_k * pj * pi
                            + self.spec.eps * (gj[0] * gi[0] + gj[1] * gi[1])
                            + bgj * pi
                            + self.spec.alpha * pj * pi;
                        if delta != 0.0 {
                            a_ij += delta
                                * (inv_k * pj + self.spec.alpha * pj + bgj
                                    - self.spec.eps * laps[j])
                                * bgi;
                        }
                        local[i * nloc + j] += w * a_ij;
                    }
                }
            }
            let dofs = &self.space.cell_dofs[c];
            for i in 0..nloc {
                for j in 0..nloc {
                    matrix.add(dofs[i], dofs[j], local[i * nloc + j]);
                }
            }
        }
        matrix
    }

    /// Right-hand side of the step ending at `t_m`: source at the interval
    /// endpoint plus the previous state, both also entering the streamline
    /// term. `u_prev` must already live on this assembler's space.
    pub fn unsteady_step_rhs(&self, u_prev: &FeFunction, t_m: f64, k_m: f64) -> Vec<f64> {
        assert!(Arc::ptr_eq(&u_prev.space, &self.space));
        let mut rhs = vec![0.0; self.space.n_dofs];
        let nq = self.rule.points.len();
        let nloc = self.space.reference.n_local();
        let inv_k = 1.0 / k_m;
        for c in 0..self.space.view.cell_ids.len() {
            let geo = &self.space.view.geo[c];
            let detj = 2.0 * geo.area;
            let delta = self.delta_unsteady(c, k_m);
            let dofs = &self.space.cell_dofs[c];
            for q in 0..nq {
                let w = self.rule.weights[q] * detj;
                let b = self.bq[c][q];
                let tabq = &self.tab[q];
                let fv = (self.spec.f)(self.xq[c][q], t_m);
                let (upv, _) = u_prev.value_grad_tab(c, &self.tab[q]);
                for i in 0..nloc {
                    let pi = tabq.phi[i];
                    let gi = geo.push_gradient(tabq.grad[i]);
                    let bgi = b[0] * gi[0] + b[1] * gi[1];
                    let mut v = (fv + inv_k * upv) * pi;
                    if delta != 0.0 {
                        v += delta * (inv_k * upv + fv) * bgi;
                    }
                    rhs[dofs[i]] += w * v;
                }
            }
        }
        rhs
    }

    /// Boundary constraint list for a step ending at `t_m`.
    pub fn unsteady_constraints(&self, t_m: f64) -> Vec<(usize, f64)> {
        self.space
            .boundary_dofs
            .iter()
            .map(|&d| (d, (self.spec.g)(self.space.dof_coords[d], t_m)))
            .collect()
    }
}

/// One-call steady Newton system with constraints applied.
pub fn assemble_steady(
    space: &Arc<FeSpace>,
    spec: &ProblemSpec,
    config: &StabilizationConfig,
    mode: AssemblyMode,
    u_lin: &FeFunction,
) -> Result<SparseSystem> {
    let assembler = Assembler::new(space, spec, config, mode)?;
    let mut sys = assembler.assemble_raw(u_lin);
    sys.apply_constraints();
    Ok(sys)
}

#[derive(Debug)]
pub struct NewtonReport {
    pub u: FeFunction,
    pub iterations: usize,
    pub residual: f64,
}

pub enum NewtonOutcome {
    Converged(NewtonReport),
    /// No convergence within the budget; carries the last iterate.
    Diverged { last: FeFunction, residual: f64 },
}

/// Euclidean norm of the constrained residual: the assembled negative
/// residual on free dofs plus the boundary mismatch on constrained dofs.
fn constrained_residual_norm(sys: &SparseSystem) -> f64 {
    let mut flags = vec![false; sys.rhs.len()];
    let mut acc = 0.0;
    for &(d, v) in &sys.constrained {
        flags[d] = true;
        acc += v * v;
    }
    for (i, &r) in sys.rhs.iter().enumerate() {
        if !flags[i] {
            acc += r * r;
        }
    }
    acc.sqrt()
}

/// Newton iteration with halving line search on the residual norm.
/// Boundary values are imposed on the initial guess, so line-searched
/// steps never disturb them.
pub fn newton_iterate(
    assembler: &Assembler,
    initial: Option<&FeFunction>,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonOutcome> {
    assert!(tol > 0.0);
    let space = &assembler.space;
    let mut u = match initial {
        Some(f) => {
            assert!(Arc::ptr_eq(&f.space, space));
            f.clone()
        }
        None => space.zero_function(),
    };
    for &d in &space.boundary_dofs {
        u.coeffs[d] = (assembler.spec.g)(space.dof_coords[d], 0.0);
    }

    let mut sys = assembler.assemble_raw(&u);
    let mut norm = constrained_residual_norm(&sys);
    for it in 0..=max_iter {
        if norm < tol {
            return Ok(NewtonOutcome::Converged(NewtonReport {
                u,
                iterations: it,
                residual: norm,
            }));
        }
        if it == max_iter {
            break;
        }
        sys.apply_constraints();
        let update = crate::sparse::sparse_solve(&sys)?;

        // Halving line search: accept the first strict decrease.
        let mut s = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let mut trial = u.clone();
            for (c, w) in trial.coeffs.iter_mut().zip(&update) {
                *c += s * w;
            }
            for &d in &space.boundary_dofs {
                trial.coeffs[d] = (assembler.spec.g)(space.dof_coords[d], 0.0);
            }
            let trial_sys = assembler.assemble_raw(&trial);
            let trial_norm = constrained_residual_norm(&trial_sys);
            if trial_norm < norm {
                accepted = Some((trial, trial_sys, trial_norm));
                break;
            }
            s *= 0.5;
        }
        match accepted {
            Some((trial, trial_sys, trial_norm)) => {
                u = trial;
                sys = trial_sys;
                norm = trial_norm;
            }
            None => {
                return Ok(NewtonOutcome::Diverged { last: u, residual: norm });
            }
        }
    }
    Ok(NewtonOutcome::Diverged { last: u, residual: norm })
}

/// Newton solve that turns divergence into an error.
pub fn newton_solve(
    assembler: &Assembler,
    initial: Option<&FeFunction>,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonReport> {
    match newton_iterate(assembler, initial, tol, max_iter)? {
        NewtonOutcome::Converged(report) => Ok(report),
        NewtonOutcome::Diverged { residual, .. } => Err(Error::Nonlinear(format!(
            "Newton failed to reach tol {tol:.3e} within {max_iter} iterations \
             (last residual {residual:.3e})"
        ))),
    }
}
