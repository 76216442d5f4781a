//! Property and invariant suite over small instances, plus the
//! finite-difference oracles it shares with the unit tests. The `check` CLI
//! subcommand runs [`run_all`] and prints one line per property.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::benchmarks::{self, DatasetOptions, Method, SystemId};
use crate::cli::{ExperimentConfig, SeedSpec};
use crate::dynamics::{self, IntegratorOptions, VectorField};
use crate::kernels::{self, FunctionalLayout, KernelSpec, PointSet};
use crate::linalg::{self, RegularizedSystem, Ridge};
use crate::one_step::{self, AnchorPolicy, GradientMode, OneStepProblem, SlackVariables};
use crate::representer;
use crate::Ridges;

/// Independent finite-difference oracles. These never call the analytic
/// derivative paths they are used to validate.
pub mod fd {
    use super::*;

    /// Central difference of the kernel value in the first argument.
    pub fn grad_first_fd(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for a in 0..x.len() {
            let h = 1e-5 * (1.0 + x[a].abs());
            let mut xp = x.to_vec();
            xp[a] += h;
            let mut xm = x.to_vec();
            xm[a] -= h;
            out[a] = (spec.eval(&xp, y).unwrap() - spec.eval(&xm, y).unwrap()) / (2.0 * h);
        }
        out
    }

    /// Nested central differences for the matrix of mixed second derivatives.
    pub fn cross_hessian_fd(spec: &KernelSpec, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let mut out = DMatrix::zeros(n, n);
        for a in 0..n {
            let ha = 1e-4 * (1.0 + x[a].abs());
            for b in 0..n {
                let hb = 1e-4 * (1.0 + y[b].abs());
                let mut xp = x.to_vec();
                xp[a] += ha;
                let mut xm = x.to_vec();
                xm[a] -= ha;
                let mut yp = y.to_vec();
                yp[b] += hb;
                let mut ym = y.to_vec();
                ym[b] -= hb;
                let pp = spec.eval(&xp, &yp).unwrap();
                let pm = spec.eval(&xp, &ym).unwrap();
                let mp = spec.eval(&xm, &yp).unwrap();
                let mm = spec.eval(&xm, &ym).unwrap();
                out[(a, b)] = (pp - pm - mp + mm) / (4.0 * ha * hb);
            }
        }
        out
    }

    /// Assembles the derivative-functional Gram matrix entry by entry from
    /// nested finite differences of the kernel value.
    pub fn derivative_gram_fd(
        spec: &KernelSpec,
        states: &PointSet,
        layout: FunctionalLayout,
    ) -> DMatrix<f64> {
        let total = layout.total();
        let mut out = DMatrix::zeros(total, total);
        for i in 0..total {
            let (si, ci) = layout.state_component(i);
            let yi: Vec<f64> = kernels::point(states, si).to_vec();
            for j in 0..total {
                let (sj, cj) = layout.state_component(j);
                let yj: Vec<f64> = kernels::point(states, sj).to_vec();
                let hi = 1e-4 * (1.0 + yi[ci].abs());
                let hj = 1e-4 * (1.0 + yj[cj].abs());
                let eval = |da: f64, db: f64| -> f64 {
                    let mut a = yi.clone();
                    a[ci] += da;
                    let mut b = yj.clone();
                    b[cj] += db;
                    spec.eval(&a, &b).unwrap()
                };
                out[(i, j)] = (eval(hi, hj) - eval(hi, -hj) - eval(-hi, hj) + eval(-hi, -hj))
                    / (4.0 * hi * hj);
            }
        }
        out
    }

    /// Relative ∞-norm error between the analytic reduced gradient and a full
    /// central-difference gradient of the objective (including the Gram
    /// matrix's dependence on the reconstructed states).
    pub fn reduced_gradient_fd_error(problem: &OneStepProblem, slack: &SlackVariables) -> f64 {
        let layout = problem.layout();
        let grad = problem.reduced_gradient(slack).expect("gradient evaluable");
        let z0 = slack.flatten(layout);
        let mut grad_fd = DVector::zeros(layout.total());
        for k in 0..layout.total() {
            let h = 1e-5 * (1.0 + z0[k].abs());
            let mut zp = z0.clone();
            zp[k] += h;
            let mut zm = z0.clone();
            zm[k] -= h;
            let fp = problem
                .objective(&SlackVariables::unflatten(&zp, layout))
                .expect("objective evaluable");
            let fm = problem
                .objective(&SlackVariables::unflatten(&zm, layout))
                .expect("objective evaluable");
            grad_fd[k] = (fp - fm) / (2.0 * h);
        }
        (grad - &grad_fd).amax() / grad_fd.amax().max(1e-12)
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn pass(name: &'static str, detail: String) -> Self {
        CheckReport {
            name,
            passed: true,
            detail,
        }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        CheckReport {
            name,
            passed: false,
            detail,
        }
    }
}

/// Runs the whole property suite on small instances.
pub fn run_all() -> Vec<CheckReport> {
    vec![
        check_kernel_derivatives(),
        check_norm_identity(),
        check_reduced_gradient(),
        check_integrator_accuracy(),
        check_energy_drift(),
        check_frozen_convex_minimize(),
        check_determinism(),
    ]
}

/// Analytic kernel gradient and cross-Hessian against finite differences,
/// 200 random cases per family, scale-relative error below 1e-5.
fn check_kernel_derivatives() -> CheckReport {
    const NAME: &str = "kernel-derivatives-vs-finite-differences";
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cases: Vec<(KernelSpec, usize)> = vec![
        (KernelSpec::gaussian_time(1.0).unwrap(), 1),
        (KernelSpec::gaussian_state(1.0).unwrap(), 4),
        (KernelSpec::separable_polynomial(3, 1.0).unwrap(), 4),
        (KernelSpec::additive_poly_gaussian(1.0, 3, 1.0).unwrap(), 4),
    ];
    let mut worst: f64 = 0.0;
    for (spec, dim) in &cases {
        for _ in 0..200 {
            let x: Vec<f64> = (0..*dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let y: Vec<f64> = (0..*dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let grad = spec.grad_first(&x, &y).unwrap();
            let grad_fd = fd::grad_first_fd(spec, &x, &y);
            let scale = grad_fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
            for (a, b) in grad.iter().zip(&grad_fd) {
                worst = worst.max((a - b).abs() / scale);
            }
            let hess = spec.cross_hessian(&x, &y).unwrap();
            let hess_fd = fd::cross_hessian_fd(spec, &x, &y);
            let scale = hess_fd.abs().max().max(1e-8);
            worst = worst.max((&hess - &hess_fd).abs().max() / scale);
        }
    }
    let detail = format!("max scale-relative error {worst:.3e} (bound 1e-5)");
    if worst < 1e-5 {
        CheckReport::pass(NAME, detail)
    } else {
        CheckReport::fail(NAME, detail)
    }
}

/// RKHS norm identity `‖f‖² + residual²/λ = ξᵀ(K+λI)⁻¹ξ` on random Gaussian
/// Grams up to size 30.
fn check_norm_identity() -> CheckReport {
    const NAME: &str = "representer-norm-identity";
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let kernel = KernelSpec::gaussian_time(1.0).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let n = rng.gen_range(2..=30);
        let mut times = Vec::with_capacity(n);
        let mut t = 0.0;
        for _ in 0..n {
            t += rng.gen_range(0.05..0.6);
            times.push(t);
        }
        let anchors = kernels::times_as_points(&times);
        let xi = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let lambda = 10f64.powi(rng.gen_range(-4..0));
        match linalg::norm_identity_check(&kernel, &anchors, lambda, &xi) {
            Ok((lhs, rhs)) => worst = worst.max((lhs - rhs).abs() / (1.0 + rhs.abs())),
            Err(e) => return CheckReport::fail(NAME, format!("solve failed: {e}")),
        }
    }
    let detail = format!("max relative identity gap {worst:.3e} (bound 1e-8)");
    if worst < 1e-8 {
        CheckReport::pass(NAME, detail)
    } else {
        CheckReport::fail(NAME, detail)
    }
}

/// Analytic reduced-objective gradient (full state dependence) against
/// central differences on mass-spring instances with N ≤ 30.
fn check_reduced_gradient() -> CheckReport {
    const NAME: &str = "reduced-objective-gradient";
    let time_kernel = KernelSpec::gaussian_time(1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut worst: f64 = 0.0;
    for (n, state_kernel) in [
        (10, KernelSpec::gaussian_state(1.0).unwrap()),
        (20, KernelSpec::separable_polynomial(3, 1.0).unwrap()),
        (30, KernelSpec::gaussian_state(1.0).unwrap()),
    ] {
        let opts = DatasetOptions {
            n_points: n,
            t_final: 8.0,
            ..DatasetOptions::default()
        };
        let dataset = match benchmarks::generate_dataset(SystemId::MassSpring, 0.5, 7, &opts) {
            Ok(d) => d,
            Err(e) => return CheckReport::fail(NAME, format!("dataset failed: {e}")),
        };
        let problem = match OneStepProblem::new(
            &dataset,
            &time_kernel,
            &state_kernel,
            &Ridges::default(),
            GradientMode::Full,
        ) {
            Ok(p) => p,
            Err(e) => return CheckReport::fail(NAME, format!("problem failed: {e}")),
        };
        for _ in 0..7 {
            let mut slack = SlackVariables::zeros(n, 1);
            for v in slack.q_dot.iter_mut().chain(slack.p_dot.iter_mut()) {
                *v = rng.gen_range(-0.8..0.8);
            }
            worst = worst.max(fd::reduced_gradient_fd_error(&problem, &slack));
        }
    }
    let detail = format!("max relative gradient error {worst:.3e} (bound 1e-4)");
    if worst < 1e-4 {
        CheckReport::pass(NAME, detail)
    } else {
        CheckReport::fail(NAME, detail)
    }
}

/// Integrated mass-spring trajectory against the analytic solution on the
/// doubled horizon.
fn check_integrator_accuracy() -> CheckReport {
    const NAME: &str = "integrator-vs-analytic-solution";
    let field = VectorField::Analytic(SystemId::MassSpring);
    let ts: Vec<f64> = (0..801).map(|i| i as f64 * 0.1).collect();
    let out =
        match dynamics::integrate(&field, 0.0, &[0.0, 1.0], &ts, &IntegratorOptions::default()) {
            Ok(out) => out,
            Err(e) => return CheckReport::fail(NAME, format!("integration failed: {e}")),
        };
    let mut worst: f64 = 0.0;
    for (r, &t) in ts.iter().enumerate() {
        worst = worst.max((out[(r, 0)] - t.sin()).abs());
        worst = worst.max((out[(r, 1)] - t.cos()).abs());
    }
    let detail = format!("max-abs trajectory error {worst:.3e} on [0, 80] (bound 1e-7)");
    if worst < 1e-7 {
        CheckReport::pass(NAME, detail)
    } else {
        CheckReport::fail(NAME, detail)
    }
}

/// Energy conservation of ground-truth generation across all four systems.
fn check_energy_drift() -> CheckReport {
    const NAME: &str = "ground-truth-energy-drift";
    let opts = DatasetOptions::default();
    let mut worst: f64 = 0.0;
    let mut worst_system = "";
    for system in SystemId::all() {
        let dataset = match benchmarks::generate_dataset(system, 0.0, 0, &opts) {
            Ok(d) => d,
            Err(e) => return CheckReport::fail(NAME, format!("dataset failed: {e}")),
        };
        let y0 = system.initial_state();
        let drift = dynamics::energy_drift(system, &y0, &dataset.y_col)
            .max(dynamics::energy_drift(system, &y0, &dataset.y_ext));
        if drift > worst {
            worst = drift;
            worst_system = system.name();
        }
    }
    let detail = format!("max drift {worst:.3e} ({worst_system}) over [0, 80] (bound 1e-7)");
    if worst < 1e-7 {
        CheckReport::pass(NAME, detail)
    } else {
        CheckReport::fail(NAME, detail)
    }
}

/// With pinned anchor states the reduced problem is convex quadratic; the
/// quasi-Newton minimizer must land on the direct linear-solve solution.
fn check_frozen_convex_minimize() -> CheckReport {
    const NAME: &str = "frozen-state-convex-subproblem";
    let time_kernel = KernelSpec::gaussian_time(1.0).unwrap();
    let state_kernel = KernelSpec::gaussian_state(1.0).unwrap();
    let opts = DatasetOptions {
        n_points: 12,
        t_final: 6.0,
        ..DatasetOptions::default()
    };
    let dataset = match benchmarks::generate_dataset(SystemId::MassSpring, 0.5, 11, &opts) {
        Ok(d) => d,
        Err(e) => return CheckReport::fail(NAME, format!("dataset failed: {e}")),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let n = dataset.n();
    let states = DMatrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0));
    let (ridge_q, ridge_p, ridge_h) = (1e-5, 1e-5, 1e-3);
    let (q_obs, p_obs) = dataset.observed_values();
    let problem = match OneStepProblem::from_parts(
        dataset.observed_times(),
        q_obs.clone(),
        p_obs.clone(),
        dataset.t_col.clone(),
        &time_kernel,
        &state_kernel,
        (ridge_q, ridge_p, ridge_h),
        GradientMode::Full,
        AnchorPolicy::Pinned(states.clone()),
    ) {
        Ok(p) => p,
        Err(e) => return CheckReport::fail(NAME, format!("problem failed: {e}")),
    };

    // direct solve of the stationarity system, assembled independently
    let s = dataset.observed_times();
    let ns = s.len();
    let gram_ext = match representer::extended_gram(&time_kernel, &s, &dataset.t_col) {
        Ok(g) => g,
        Err(e) => return CheckReport::fail(NAME, format!("gram failed: {e}")),
    };
    let eye_ext = DMatrix::identity(ns + n, ns + n);
    let inv_q = RegularizedSystem::new(&gram_ext, &Ridge::Scalar(ridge_q))
        .unwrap()
        .solve(&eye_ext);
    let inv_p = RegularizedSystem::new(&gram_ext, &Ridge::Scalar(ridge_p))
        .unwrap()
        .solve(&eye_ext);
    let layout = problem.layout();
    let gram_h = kernels::gram_derivative_functionals(&state_kernel, &states, layout).unwrap();
    let inv_h = RegularizedSystem::new(&gram_h, &Ridge::Scalar(ridge_h))
        .unwrap()
        .solve(&DMatrix::identity(2 * n, 2 * n));

    let mut lhs = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..2 * n {
        for j in 0..2 * n {
            let sign = if (i < n) == (j < n) { 1.0 } else { -1.0 };
            lhs[(i, j)] = sign * inv_h[(i, j)];
        }
    }
    for i in 0..n {
        for j in 0..n {
            lhs[(i, j)] += inv_q[(ns + i, ns + j)];
            lhs[(n + i, n + j)] += inv_p[(ns + i, ns + j)];
        }
    }
    let mut rhs = DVector::zeros(2 * n);
    let a_q = {
        let mut a = DVector::zeros(ns + n);
        for i in 0..ns {
            a[i] = q_obs[(i, 0)];
        }
        &inv_q * a
    };
    let a_p = {
        let mut a = DVector::zeros(ns + n);
        for i in 0..ns {
            a[i] = p_obs[(i, 0)];
        }
        &inv_p * a
    };
    for i in 0..n {
        rhs[i] = -a_q[ns + i];
        rhs[n + i] = -a_p[ns + i];
    }
    let direct = match lhs.lu().solve(&rhs) {
        Some(x) => x,
        None => return CheckReport::fail(NAME, "direct solve singular".into()),
    };

    let init = SlackVariables::zeros(n, 1);
    let (best, _) = match one_step::minimize(&problem, init, &one_step::MinimizeOptions::default())
    {
        Ok(r) => r,
        Err(e) => return CheckReport::fail(NAME, format!("minimize failed: {e}")),
    };
    let found = best.flatten(layout);
    let gap = (&found - &direct).amax();
    let detail = format!("iterate vs direct solve gap {gap:.3e} (bound 1e-6)");
    if gap < 1e-6 {
        CheckReport::pass(NAME, detail)
    } else {
        CheckReport::fail(NAME, detail)
    }
}

/// Running the same single-cell sweep twice must produce byte-identical
/// errors files.
fn check_determinism() -> CheckReport {
    const NAME: &str = "single-cell-determinism";
    let config = ExperimentConfig {
        systems: vec![SystemId::MassSpring],
        kernels: vec![KernelSpec::gaussian_state(1.0).unwrap()],
        methods: vec![Method::TwoStep],
        sparsities: vec![0.5],
        seeds: SeedSpec::List(vec![0, 1]),
        ridges: Ridges::default(),
        n_points: 40,
        t_final: 10.0,
        random_time_grid: false,
        gradient_mode: GradientMode::Full,
        integrator: crate::cli::IntegratorSettings::default(),
        output_dir: None,
        dump_trajectories: false,
    };
    let base = std::env::temp_dir().join(format!("hamlearn-check-{}", std::process::id()));
    let dir_a = base.join("a");
    let dir_b = base.join("b");
    let run = |dir: &std::path::Path| -> Result<Vec<u8>, String> {
        crate::cli::run_sweep(&config, Some(1), dir, 0).map_err(|e| e.to_string())?;
        std::fs::read(dir.join("errors.csv")).map_err(|e| e.to_string())
    };
    let result = (|| -> Result<bool, String> {
        let a = run(&dir_a)?;
        let b = run(&dir_b)?;
        Ok(a == b)
    })();
    let _ = std::fs::remove_dir_all(&base);
    match result {
        Ok(true) => CheckReport::pass(NAME, "repeated runs byte-identical".into()),
        Ok(false) => CheckReport::fail(NAME, "errors.csv differs between runs".into()),
        Err(e) => CheckReport::fail(NAME, format!("run failed: {e}")),
    }
}
