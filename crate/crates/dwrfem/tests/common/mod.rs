//! Independent numerical oracles shared between the oracle suite and
//! the acceptance suite: dense mirrors of the Newton assembly and both
//! time-stepping schemes, analytic local matrices, the scalar trapezoid
//! identity behind the error representation, manufactured-source
//! consistency, and the P1 convergence rate. Each check panics with a
//! diagnostic on failure and none requires a benchmark run.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dwrfem::assembly::{Assembler, AssemblyMode};
use dwrfem::goals::{freeze_goal, GoalKind, GoalSpec};
use dwrfem::mesh::MeshForest;
use dwrfem::problem::{ProblemSpec, Reaction};
use dwrfem::quadrature::{gauss_legendre_unit, triangle_rule};
use dwrfem::space::{build_space, FeFunction, FeSpace};
use dwrfem::stabilization::{
    crosswind_projector, delta_k_steady, delta_k_unsteady, tau_k, StabilizationConfig,
};
use dwrfem::unsteady::{
    solve_unsteady_dual, solve_unsteady_primal, union_dual_space, TimePartition,
};

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Dense mirror of the steady Newton system: same weak form, same
/// quadrature, straightforward dense accumulation.
fn dense_newton_system(
    space: &Arc<FeSpace>,
    spec: &ProblemSpec,
    config: &StabilizationConfig,
    mode: AssemblyMode,
    u_lin: &FeFunction,
) -> (DMatrix<f64>, DVector<f64>) {
    let p = space.degree;
    let rule = triangle_rule(2 * p + 2).unwrap();
    let tab = space.reference.tabulate(&rule.points);
    let n = space.n_dofs;
    let nloc = space.reference.n_local();
    let mut mat = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);

    for c in 0..space.view.cell_vertices.len() {
        let geo = &space.view.geo[c];
        let detj = 2.0 * geo.area;
        let xs: Vec<[f64; 2]> = rule.points.iter().map(|&l| space.view.map_ref(c, l)).collect();
        let bs: Vec<[f64; 2]> = xs.iter().map(|&x| (spec.b)(x)).collect();
        let b_sup = bs.iter().map(|v| dot(*v, *v).sqrt()).fold(0.0_f64, f64::max);

        let delta = if mode.supg() {
            delta_k_steady(
                geo,
                b_sup,
                spec.eps,
                spec.alpha,
                spec.reaction.r0,
                spec.reaction.l_r,
                p,
                config,
            )
        } else {
            0.0
        };
        let tau = if mode.shock_capturing() {
            let mut res_sq = 0.0;
            let mut semi_sq = 0.0;
            for q in 0..rule.points.len() {
                let (uv, ug) = u_lin.value_grad_tab(c, &tab[q]);
                let ul = u_lin.laplacian_tab(c, &tab[q]);
                let r = spec.alpha * uv + dot(bs[q], ug) - spec.eps * ul
                    + (spec.reaction.r)(uv)
                    - (spec.f)(xs[q], 0.0);
                let w = rule.weights[q] * detj;
                res_sq += w * r * r;
                semi_sq += w * dot(ug, ug);
            }
            tau_k(geo, res_sq.sqrt(), semi_sq.sqrt(), spec.eps, config)
        } else {
            0.0
        };

        let dofs = &space.cell_dofs[c];
        for q in 0..rule.points.len() {
            let w = rule.weights[q] * detj;
            let b = bs[q];
            let fv = (spec.f)(xs[q], 0.0);
            let (uv, ug) = u_lin.value_grad_tab(c, &tab[q]);
            let ul = u_lin.laplacian_tab(c, &tab[q]);
            let rv = (spec.reaction.r)(uv);
            let sigma = spec.alpha + (spec.reaction.r_prime)(uv);
            let d = crosswind_projector(b);
            let grads: Vec<[f64; 2]> = (0..nloc).map(|i| geo.push_gradient(tab[q].grad[i])).collect();
            let laps: Vec<f64> = (0..nloc)
                .map(|i| {
                    if p == 1 {
                        0.0
                    } else {
                        let hp = geo.push_hessian(tab[q].hess[i]);
                        hp[0] + hp[2]
                    }
                })
                .collect();
            let resid = spec.alpha * uv + dot(b, ug) - spec.eps * ul + rv - fv;
            let dug = [
                d[0][0] * ug[0] + d[0][1] * ug[1],
                d[1][0] * ug[0] + d[1][1] * ug[1],
            ];

            for i in 0..nloc {
                let pi = tab[q].phi[i];
                let gi = grads[i];
                let bgi = dot(b, gi);
                let mut f_i = spec.eps * dot(ug, gi)
                    + dot(b, ug) * pi
                    + (spec.alpha * uv + rv - fv) * pi
                    + delta * resid * bgi;
                if tau != 0.0 {
                    f_i += tau * dot(dug, gi);
                }
                rhs[dofs[i]] -= w * f_i;
                for j in 0..nloc {
                    let pj = tab[q].phi[j];
                    let gj = grads[j];
                    let bgj = dot(b, gj);
                    let mut a_ij = spec.eps * dot(gj, gi) + bgj * pi + sigma * pj * pi
                        + delta * (sigma * pj + bgj - spec.eps * laps[j]) * bgi;
                    if tau != 0.0 {
                        let dgj = [
                            d[0][0] * gj[0] + d[0][1] * gj[1],
                            d[1][0] * gj[0] + d[1][1] * gj[1],
                        ];
                        a_ij += tau * dot(dgj, gi);
                    }
                    mat[(dofs[i], dofs[j])] += w * a_ij;
                }
            }
        }
    }
    (mat, rhs)
}

fn nonlinear_spec() -> ProblemSpec {
    ProblemSpec {
        eps: 0.05,
        b: Arc::new(|x| [1.0 + x[0], 2.0 - x[1]]),
        alpha: 0.7,
        reaction: Reaction::square(),
        f: Arc::new(|x, _| 1.0 + x[0] - 0.5 * x[1]),
        u0: Arc::new(|_, _| 0.0),
        g: Arc::new(|_, _| 0.0),
        exact: None,
    }
}

pub fn check_dense_assembly_equivalence() {
    let spec = nonlinear_spec();
    let config = StabilizationConfig::default();

    // A refined crisscross mesh keeps the cell count at eight or fewer
    // while exercising the conforming closure.
    let mut refined = MeshForest::unit_square_crisscross(1);
    let seed = refined.view(0).cell_ids[0];
    refined.refine(0, &[seed]).unwrap();

    let cases: Vec<(MeshForest, usize, AssemblyMode)> = vec![
        (MeshForest::single_triangle(), 2, AssemblyMode::Supg),
        (MeshForest::unit_square_crisscross(1), 1, AssemblyMode::SupgShockCapturing),
        (refined, 2, AssemblyMode::Supg),
        (MeshForest::unit_square_crisscross(1), 2, AssemblyMode::Galerkin),
    ];

    for (forest, degree, mode) in cases {
        let view = Arc::new(forest.view(0));
        assert!(view.cell_vertices.len() <= 8);
        let space = build_space(view, degree).unwrap();
        let u_lin = space.interpolate(|x| 0.3 + x[0] - 0.5 * x[1] + 0.1 * x[0] * x[1]);

        let assembler = Assembler::new(&space, &spec, &config, mode).unwrap();
        let sys = assembler.assemble_raw(&u_lin);
        let (dense, rhs) = dense_newton_system(&space, &spec, &config, mode, &u_lin);

        for i in 0..space.n_dofs {
            assert!(
                (sys.rhs[i] - rhs[i]).abs() < 1e-12,
                "rhs[{i}] sparse {} dense {} (p={degree}, {mode:?})",
                sys.rhs[i],
                rhs[i]
            );
            for j in 0..space.n_dofs {
                let diff = (sys.matrix.get(i, j) - dense[(i, j)]).abs();
                assert!(
                    diff < 1e-12,
                    "entry ({i},{j}) differs by {diff} (p={degree}, {mode:?})"
                );
            }
        }
    }
}

pub fn check_local_matrices_analytic() {
    let forest = MeshForest::single_triangle();
    let space = build_space(Arc::new(forest.view(0)), 1).unwrap();
    let config = StabilizationConfig::default();

    // Unit right triangle, right-angle vertex first: area 1/2,
    // grad phi = (-1,-1), (1,0), (0,1).
    let galerkin = |spec: &ProblemSpec| {
        let asm = Assembler::new(&space, spec, &config, AssemblyMode::Galerkin).unwrap();
        asm.assemble_raw(&space.zero_function())
    };

    let mut mass_spec = ProblemSpec::linear_steady(1.0, [0.0, 0.0], 1.0, |_| 0.0);
    mass_spec.eps = 0.0;
    let mass = galerkin(&mass_spec);
    let m_ref = [
        [2.0 / 24.0, 1.0 / 24.0, 1.0 / 24.0],
        [1.0 / 24.0, 2.0 / 24.0, 1.0 / 24.0],
        [1.0 / 24.0, 1.0 / 24.0, 2.0 / 24.0],
    ];

    let stiff = galerkin(&ProblemSpec::linear_steady(1.0, [0.0, 0.0], 0.0, |_| 0.0));
    let k_ref = [
        [1.0, -0.5, -0.5],
        [-0.5, 0.5, 0.0],
        [-0.5, 0.0, 0.5],
    ];

    // <b.grad phi_j, phi_i> = (b.grad phi_j) * area/3 for P1.
    let mut conv_spec = ProblemSpec::linear_steady(1.0, [1.0, 2.0], 0.0, |_| 0.0);
    conv_spec.eps = 0.0;
    let conv = galerkin(&conv_spec);
    let c_cols = [-0.5, 1.0 / 6.0, 1.0 / 3.0];

    for i in 0..3 {
        for j in 0..3 {
            assert!((mass.matrix.get(i, j) - m_ref[i][j]).abs() < 1e-14, "mass ({i},{j})");
            assert!((stiff.matrix.get(i, j) - k_ref[i][j]).abs() < 1e-14, "stiffness ({i},{j})");
            assert!((conv.matrix.get(i, j) - c_cols[j]).abs() < 1e-14, "convection ({i},{j})");
        }
    }
}

fn dirichlet_rows(mat: &mut DMatrix<f64>, rhs: &mut DVector<f64>, rows: &[(usize, f64)]) {
    for &(d, v) in rows {
        for j in 0..mat.ncols() {
            mat[(d, j)] = 0.0;
        }
        mat[(d, d)] = 1.0;
        rhs[d] = v;
    }
}

/// The implicit dG(0) sweep must coincide with a hand-rolled dense
/// backward Euler march of the same stabilized weak form.
pub fn check_backward_euler_equivalence() {
    let spec = ProblemSpec {
        eps: 0.05,
        b: Arc::new(|_| [1.0, 2.0]),
        alpha: 0.3,
        reaction: Reaction::none(),
        f: Arc::new(|x, t| 1.0 + t + x[0]),
        u0: Arc::new(|x, _| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])),
        g: Arc::new(|x, t| 0.1 * t * x[0] * x[1]),
        exact: None,
    };
    let config = StabilizationConfig::default();

    let mut forest = MeshForest::unit_square_crisscross(2);
    forest.replicate_interval(3);
    // Uneven steps force fresh factorizations each step.
    let partition = TimePartition {
        knots: vec![0.0, 0.1, 0.25, 0.5],
    };
    let primal =
        solve_unsteady_primal(&forest, &partition, 1, &spec, &config, AssemblyMode::Supg).unwrap();

    let space = build_space(Arc::new(forest.view(0)), 1).unwrap();
    let rule = triangle_rule(4).unwrap();
    let tab = space.reference.tabulate(&rule.points);
    let n = space.n_dofs;

    let mut u = DVector::from_iterator(n, space.interpolate(|x| (spec.u0)(x, 0.0)).coeffs);
    assert_eq!(primal.values[0].coeffs.as_slice(), u.as_slice());

    for m in 0..partition.n_intervals() {
        let k_m = partition.k(m);
        let t_m = partition.knots[m + 1];
        let inv_k = 1.0 / k_m;
        let mut mat = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);

        for c in 0..space.view.cell_vertices.len() {
            let geo = &space.view.geo[c];
            let detj = 2.0 * geo.area;
            let xs: Vec<[f64; 2]> = rule.points.iter().map(|&l| space.view.map_ref(c, l)).collect();
            let b_sup = xs
                .iter()
                .map(|&x| {
                    let b = (spec.b)(x);
                    dot(b, b).sqrt()
                })
                .fold(0.0_f64, f64::max);
            let delta = delta_k_unsteady(geo, b_sup, spec.eps, spec.alpha, k_m, 1, &config);
            let dofs = &space.cell_dofs[c];
            for q in 0..rule.points.len() {
                let w = rule.weights[q] * detj;
                let b = (spec.b)(xs[q]);
                let fv = (spec.f)(xs[q], t_m);
                let grads: Vec<[f64; 2]> =
                    (0..3).map(|i| geo.push_gradient(tab[q].grad[i])).collect();
                let upv: f64 = (0..3).map(|i| u[dofs[i]] * tab[q].phi[i]).sum();
                for i in 0..3 {
                    let pi = tab[q].phi[i];
                    let bgi = dot(b, grads[i]);
                    rhs[dofs[i]] += w * ((fv + inv_k * upv) * pi + delta * (inv_k * upv + fv) * bgi);
                    for j in 0..3 {
                        let pj = tab[q].phi[j];
                        let bgj = dot(b, grads[j]);
                        let a_ij = inv_k * pj * pi
                            + spec.eps * dot(grads[j], grads[i])
                            + bgj * pi
                            + spec.alpha * pj * pi
                            + delta * (inv_k * pj + spec.alpha * pj + bgj) * bgi;
                        mat[(dofs[i], dofs[j])] += w * a_ij;
                    }
                }
            }
        }

        let bc: Vec<(usize, f64)> = space
            .boundary_dofs
            .iter()
            .map(|&d| (d, (spec.g)(space.dof_coords[d], t_m)))
            .collect();
        dirichlet_rows(&mut mat, &mut rhs, &bc);
        u = mat.lu().solve(&rhs).expect("dense step solvable");

        let lib = &primal.values[m + 1].coeffs;
        let worst = lib
            .iter()
            .zip(u.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(worst < 1e-12, "step {m}: max deviation {worst}");
    }
}

/// The backward dual sweep must coincide with a dense Crank-Nicolson
/// march of the adjoint form, including the streamline term and the
/// terminal interpolation.
pub fn check_crank_nicolson_equivalence() {
    let spec = ProblemSpec {
        eps: 0.08,
        b: Arc::new(|_| [1.0, -0.5]),
        alpha: 0.4,
        reaction: Reaction::none(),
        f: Arc::new(|_, _| 1.0),
        u0: Arc::new(|_, _| 0.0),
        g: Arc::new(|_, _| 0.0),
        exact: None,
    };
    let config = StabilizationConfig::default();

    let mut forest = MeshForest::unit_square_crisscross(2);
    forest.replicate_interval(3);
    let partition = TimePartition::uniform(0.3, 3);
    let primal =
        solve_unsteady_primal(&forest, &partition, 1, &spec, &config, AssemblyMode::Supg).unwrap();
    let goal = freeze_goal(&GoalSpec::new(GoalKind::TerminalMean), None, None).unwrap();
    let dual_space = union_dual_space(&forest, 2).unwrap();
    let dual = solve_unsteady_dual(&forest, &dual_space, &spec, &config, &primal, &goal).unwrap();

    let space = &dual_space;
    let p = space.degree;
    let rule = triangle_rule((2 * p + 2).max(10)).unwrap();
    let tab = space.reference.tabulate(&rule.points);
    let n = space.n_dofs;
    let nloc = space.reference.n_local();

    // Terminal value: nodal interpolant of the terminal density 1.
    let mut z = DVector::from_element(n, 1.0);
    assert_eq!(dual.values[3].coeffs.as_slice(), z.as_slice());

    for m in (0..3).rev() {
        let k_m = partition.k(m);
        let inv_k = 1.0 / k_m;
        let mut mat = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);

        for c in 0..space.view.cell_vertices.len() {
            let geo = &space.view.geo[c];
            let detj = 2.0 * geo.area;
            let xs: Vec<[f64; 2]> = rule.points.iter().map(|&l| space.view.map_ref(c, l)).collect();
            let b_sup = xs
                .iter()
                .map(|&x| {
                    let b = (spec.b)(x);
                    dot(b, b).sqrt()
                })
                .fold(0.0_f64, f64::max);
            let delta = config.dual_delta_scale
                * delta_k_unsteady(geo, b_sup, spec.eps, spec.alpha, k_m, p, &config);
            let dofs = &space.cell_dofs[c];
            for q in 0..rule.points.len() {
                let w = rule.weights[q] * detj;
                let b = (spec.b)(xs[q]);
                let cf = spec.alpha;
                let grads: Vec<[f64; 2]> =
                    (0..nloc).map(|i| geo.push_gradient(tab[q].grad[i])).collect();
                let laps: Vec<f64> = (0..nloc)
                    .map(|i| {
                        let hp = geo.push_hessian(tab[q].hess[i]);
                        hp[0] + hp[2]
                    })
                    .collect();
                let zv: f64 = (0..nloc).map(|i| z[dofs[i]] * tab[q].phi[i]).sum();
                let zg = (0..nloc).fold([0.0; 2], |acc, i| {
                    [
                        acc[0] + z[dofs[i]] * grads[i][0],
                        acc[1] + z[dofs[i]] * grads[i][1],
                    ]
                });
                let zl: f64 = (0..nloc).map(|i| z[dofs[i]] * laps[i]).sum();
                let conv_z = dot(b, zg);
                let strong_z = cf * zv - conv_z - spec.eps * zl;

                for i in 0..nloc {
                    let pi = tab[q].phi[i];
                    let test = -dot(b, grads[i]);
                    let galerkin = inv_k * zv * pi
                        - 0.5 * (spec.eps * dot(zg, grads[i]) - conv_z * pi + cf * zv * pi);
                    let streamline = (inv_k * zv - 0.5 * strong_z) * test;
                    rhs[dofs[i]] += w * (galerkin + delta * streamline);
                    for j in 0..nloc {
                        let pj = tab[q].phi[j];
                        let conv_j = dot(b, grads[j]);
                        let strong_j = cf * pj - conv_j - spec.eps * laps[j];
                        let a_ij = inv_k * pj * pi
                            + 0.5
                                * (spec.eps * dot(grads[j], grads[i]) - conv_j * pi
                                    + cf * pj * pi)
                            + delta * (inv_k * pj + 0.5 * strong_j) * test;
                        mat[(dofs[i], dofs[j])] += w * a_ij;
                    }
                }
            }
        }

        let bc: Vec<(usize, f64)> = space.boundary_dofs.iter().map(|&d| (d, 0.0)).collect();
        dirichlet_rows(&mut mat, &mut rhs, &bc);
        z = mat.lu().solve(&rhs).expect("dense dual step solvable");

        let lib = &dual.values[m].coeffs;
        let worst = lib
            .iter()
            .zip(z.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        assert!(worst < 1e-12, "dual step {m}: max deviation {worst}");
    }
}

/// Scalar model of the error representation's algebraic backbone: for
/// L(x) = x^3 the trapezoid expansion
///   L(x_c) - L(x_d) = 1/2 L'(x_d) e + 1/2 L'(x_c) e + R,
///   R = 1/2 int_0^1 L'''(x_d + s e)(e,e,e) s (s - 1) ds
/// with e = x_c - x_d closes exactly, and R evaluates to -e^3/2.
pub fn check_trapezoid_identity_on_cubics() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let gauss = gauss_legendre_unit(5);
    for _ in 0..20 {
        let x_c: f64 = rng.gen_range(-2.0..2.0);
        let x_d: f64 = rng.gen_range(-2.0..2.0);
        let e = x_c - x_d;

        let remainder: f64 = gauss
            .points
            .iter()
            .zip(&gauss.weights)
            .map(|(&s, &w)| 0.5 * w * 6.0 * e * e * e * s * (s - 1.0))
            .sum();
        assert!(
            (remainder + 0.5 * e * e * e).abs() < 1e-12 * (1.0 + e.abs().powi(3)),
            "closed-form remainder"
        );

        let lhs = x_c.powi(3) - x_d.powi(3);
        let rhs = 0.5 * 3.0 * x_d * x_d * e + 0.5 * 3.0 * x_c * x_c * e + remainder;
        assert!(
            (lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()),
            "identity violated: lhs {lhs} rhs {rhs}"
        );
    }
}

fn fd_apply_operator(bench: &dwrfem::benchmarks::Benchmark, x: [f64; 2], t: f64, h: f64) -> f64 {
    let spec = &bench.spec;
    let u = &spec.exact.as_ref().unwrap().value;
    let ux = (u([x[0] + h, x[1]], t) - u([x[0] - h, x[1]], t)) / (2.0 * h);
    let uy = (u([x[0], x[1] + h], t) - u([x[0], x[1] - h], t)) / (2.0 * h);
    let uxx = (u([x[0] + h, x[1]], t) - 2.0 * u(x, t) + u([x[0] - h, x[1]], t)) / (h * h);
    let uyy = (u([x[0], x[1] + h], t) - 2.0 * u(x, t) + u([x[0], x[1] - h], t)) / (h * h);
    let ut = if bench.steady {
        0.0
    } else {
        (u(x, t + h) - u(x, t - h)) / (2.0 * h)
    };
    let b = (spec.b)(x);
    ut + b[0] * ux + b[1] * uy - spec.eps * (uxx + uyy)
        + spec.alpha * u(x, t)
        + (spec.reaction.r)(u(x, t))
}

pub fn check_manufactured_sources_against_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for name in ["hump", "tanh_layer", "smooth_manufactured"] {
        let bench = dwrfem::benchmarks::by_name(name).unwrap();
        // The step balances truncation against the roundoff floor of the
        // second difference: small against the layer width of the sharp
        // problems, near eps_mach^(1/4) for the smooth one.
        let h = if name == "smooth_manufactured" { 1e-4 } else { 1e-7 };
        let mut worst = 0.0_f64;
        for _ in 0..200 {
            let x = [
                0.05 + 0.9 * rng.gen::<f64>(),
                0.05 + 0.9 * rng.gen::<f64>(),
            ];
            let t = if bench.steady {
                0.0
            } else {
                bench.t_end * (0.1 + 0.8 * rng.gen::<f64>())
            };
            let fd = fd_apply_operator(&bench, x, t, h);
            let exact = (bench.spec.f)(x, t);
            worst = worst.max((fd - exact).abs() / (1.0 + exact.abs()));
        }
        assert!(worst < 1e-5, "{name}: worst relative deviation {worst}");
    }
}

pub fn check_p1_l2_rate() {
    let exact = |x: [f64; 2]| (PI * x[0]).sin() * (PI * x[1]).sin();
    let spec = ProblemSpec::linear_steady(1.0, [1.0, 2.0], 1.0, move |x| {
        let sx = (PI * x[0]).sin();
        let cx = (PI * x[0]).cos();
        let sy = (PI * x[1]).sin();
        let cy = (PI * x[1]).cos();
        (2.0 * PI * PI + 1.0) * sx * sy + PI * (cx * sy + 2.0 * sx * cy)
    });
    let config = StabilizationConfig::default();

    let mut errors = Vec::new();
    for n in [4, 8, 16] {
        let forest = MeshForest::unit_square_crisscross(n);
        let space = build_space(Arc::new(forest.view(0)), 1).unwrap();
        let report = dwrfem::steady::solve_steady_primal(
            &space,
            &spec,
            &config,
            AssemblyMode::Galerkin,
            None,
        )
        .unwrap();

        let rule = triangle_rule(8).unwrap();
        let tab = space.reference.tabulate(&rule.points);
        let mut err_sq = 0.0;
        for c in 0..space.view.cell_vertices.len() {
            let geo = &space.view.geo[c];
            let detj = 2.0 * geo.area;
            for (q, &l) in rule.points.iter().enumerate() {
                let x = space.view.map_ref(c, l);
                let (uv, _) = report.u.value_grad_tab(c, &tab[q]);
                err_sq += rule.weights[q] * detj * (uv - exact(x)).powi(2);
            }
        }
        errors.push(err_sq.sqrt());
    }

    for w in errors.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(
            (rate - 2.0).abs() <= 0.2,
            "L2 rate {rate} outside 2.0 +- 0.2 (errors {errors:?})"
        );
    }
}
