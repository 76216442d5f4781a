//! Desk-scale end-to-end tests across the recovery pipelines.

use hamlearn::benchmarks::{self, DatasetOptions, Method, SystemId};
use hamlearn::dynamics::{self, IntegratorOptions};
use hamlearn::kernels::KernelSpec;
use hamlearn::one_step::{self, GradientMode, OneStepProblem};
use hamlearn::two_step;
use hamlearn::Ridges;

fn desk_options(n_points: usize, t_final: f64) -> benchmarks::ExperimentOptions {
    benchmarks::ExperimentOptions {
        dataset: DatasetOptions {
            n_points,
            t_final,
            ..DatasetOptions::default()
        },
        ..benchmarks::ExperimentOptions::default()
    }
}

#[test]
fn near_perfect_model_forecasts_the_true_trajectory() {
    // mass-spring at zero sparsity with tight ridges in the polynomial span:
    // the learned field reproduces the truth within a small tolerance
    let opts = DatasetOptions {
        n_points: 80,
        t_final: 10.0,
        ..DatasetOptions::default()
    };
    let dataset = benchmarks::generate_dataset(SystemId::MassSpring, 0.0, 0, &opts).unwrap();
    let ridges = Ridges {
        lambda_q: 1e-10,
        lambda_p: 1e-10,
        lambda1: 1e-9,
        lambda2: 1e-9,
        lambda: 1e-9,
    };
    let time_kernel = KernelSpec::gaussian_time(1.0).unwrap();
    let poly = KernelSpec::separable_polynomial(3, 1.0).unwrap();
    let (q_star, p_star, model) =
        two_step::fit_two_step(&dataset, &time_kernel, &poly, &ridges).unwrap();
    let y0 = [q_star.eval(&[0.0])[(0, 0)], p_star.eval(&[0.0])[(0, 0)]];
    let outcome = dynamics::forecast(
        &model,
        &y0,
        0.0,
        &dataset.t_ext,
        &IntegratorOptions::default(),
    )
    .unwrap();
    assert!(outcome.failure.is_none());
    let mut worst: f64 = 0.0;
    for r in 0..dataset.t_ext.len() {
        for c in 0..2 {
            worst = worst.max((outcome.states[(r, c)] - dataset.y_ext[(r, c)]).abs());
        }
    }
    assert!(worst < 1e-3, "forecast deviation {worst}");
}

#[test]
fn zero_hamiltonian_model_forecasts_a_constant() {
    use hamlearn::kernels::FunctionalLayout;
    use nalgebra::{DMatrix, DVector};
    let layout = FunctionalLayout::new(2, 1);
    let states = DMatrix::from_column_slice(2, 2, &[0.0, 1.0, 0.5, -0.5]);
    let model = two_step::LearnedHamiltonian::from_parts(
        KernelSpec::gaussian_state(1.0).unwrap(),
        states,
        layout,
        DVector::zeros(4),
        (1e-3, 1e-3),
        0.0,
    )
    .unwrap();
    let grid = [0.5, 1.0, 2.0];
    let outcome = dynamics::forecast(
        &model,
        &[0.3, -0.7],
        0.0,
        &grid,
        &IntegratorOptions::default(),
    )
    .unwrap();
    for r in 0..grid.len() {
        assert_eq!(outcome.states[(r, 0)], 0.3);
        assert_eq!(outcome.states[(r, 1)], -0.7);
    }
}

#[test]
fn one_step_beats_two_step_on_sparse_pendulum() {
    let kernel = KernelSpec::additive_poly_gaussian(1.0, 3, 1.0).unwrap();
    let seeds: Vec<u64> = (0..3).collect();
    let opts = desk_options(60, 20.0);
    let two = benchmarks::run_experiment(
        SystemId::Pendulum,
        &kernel,
        Method::TwoStep,
        0.6,
        &seeds,
        &Ridges::default(),
        &opts,
    )
    .unwrap();
    let one = benchmarks::run_experiment(
        SystemId::Pendulum,
        &kernel,
        Method::OneStep,
        0.6,
        &seeds,
        &Ridges::default(),
        &opts,
    )
    .unwrap();
    assert!(
        one.interp_q.mean < two.interp_q.mean,
        "one-step interpolation {} should beat two-step {}",
        one.interp_q.mean,
        two.interp_q.mean
    );
    assert!(
        one.extrap_q.mean < two.extrap_q.mean,
        "one-step extrapolation {} should beat two-step {}",
        one.extrap_q.mean,
        two.extrap_q.mean
    );
}

#[test]
fn one_step_interpolation_bound_at_full_observation() {
    // with every collocation point observed the one-step interpolation
    // error stays below 0.02 at default ridges
    let cell = benchmarks::run_experiment(
        SystemId::MassSpring,
        &KernelSpec::gaussian_state(1.0).unwrap(),
        Method::OneStep,
        0.0,
        &[0],
        &Ridges::default(),
        &benchmarks::ExperimentOptions::default(),
    )
    .unwrap();
    assert!(
        cell.interp_q.mean <= 0.02,
        "one-step interpolation RE {} exceeds 0.02",
        cell.interp_q.mean
    );
}

#[test]
fn one_step_sparse_mass_spring_rows_stay_accurate() {
    // ten-seed one-step rows on mass-spring with the polynomial kernel: the
    // mean forecast error stays below 0.5 at sparsity 0.5 and below 1.0 at
    // sparsity 0.8 (reference rows: 0.160 ± 0.186 and 0.286 ± 0.243)
    let seeds: Vec<u64> = (0..10).collect();
    let poly = KernelSpec::separable_polynomial(3, 1.0).unwrap();
    let opts = benchmarks::ExperimentOptions::default();
    let half = benchmarks::run_experiment(
        SystemId::MassSpring,
        &poly,
        Method::OneStep,
        0.5,
        &seeds,
        &Ridges::default(),
        &opts,
    )
    .unwrap();
    assert!(
        half.extrap_q.mean <= 0.5,
        "sparsity 0.5 forecast RE {} exceeds 0.5",
        half.extrap_q.mean
    );
    let dense_gaps = benchmarks::run_experiment(
        SystemId::MassSpring,
        &poly,
        Method::OneStep,
        0.8,
        &seeds,
        &Ridges::default(),
        &opts,
    )
    .unwrap();
    assert!(
        dense_gaps.extrap_q.mean <= 1.0,
        "sparsity 0.8 forecast RE {} exceeds 1.0",
        dense_gaps.extrap_q.mean
    );
}

#[test]
fn one_step_objective_decreases_from_warm_start() {
    let opts = DatasetOptions {
        n_points: 40,
        t_final: 10.0,
        ..DatasetOptions::default()
    };
    let dataset = benchmarks::generate_dataset(SystemId::MassSpring, 0.6, 2, &opts).unwrap();
    let time_kernel = KernelSpec::gaussian_time(1.0).unwrap();
    let state_kernel = KernelSpec::gaussian_state(1.0).unwrap();
    let ridges = Ridges::default();
    let (q_star, p_star, _) =
        two_step::fit_two_step(&dataset, &time_kernel, &state_kernel, &ridges).unwrap();
    let problem = OneStepProblem::new(
        &dataset,
        &time_kernel,
        &state_kernel,
        &ridges,
        GradientMode::Full,
    )
    .unwrap();
    let warm = one_step::warm_start(&q_star, &p_star, &dataset.t_col);
    let f0 = problem.objective(&warm).unwrap();
    let (_, diagnostics) =
        one_step::minimize(&problem, warm, &one_step::MinimizeOptions::default()).unwrap();
    assert!(diagnostics.final_value <= f0);
    assert!(diagnostics.iterations > 0);
}

#[test]
fn frozen_state_mode_still_improves_on_the_warm_start() {
    let opts = DatasetOptions {
        n_points: 40,
        t_final: 10.0,
        ..DatasetOptions::default()
    };
    let dataset = benchmarks::generate_dataset(SystemId::MassSpring, 0.6, 4, &opts).unwrap();
    let time_kernel = KernelSpec::gaussian_time(1.0).unwrap();
    let state_kernel = KernelSpec::separable_polynomial(3, 1.0).unwrap();
    let ridges = Ridges::default();
    let (q_star, p_star, _) =
        two_step::fit_two_step(&dataset, &time_kernel, &state_kernel, &ridges).unwrap();
    let problem = OneStepProblem::new(
        &dataset,
        &time_kernel,
        &state_kernel,
        &ridges,
        GradientMode::FrozenState,
    )
    .unwrap();
    let warm = one_step::warm_start(&q_star, &p_star, &dataset.t_col);
    let f0 = problem.objective(&warm).unwrap();
    let (_, diagnostics) =
        one_step::minimize(&problem, warm, &one_step::MinimizeOptions::default()).unwrap();
    assert!(
        diagnostics.final_value < f0,
        "frozen-state mode made no progress"
    );
}

#[test]
fn random_time_grid_pipeline_runs() {
    let mut opts = desk_options(50, 12.0);
    opts.dataset.grid = benchmarks::GridKind::RandomUniform;
    let cell = benchmarks::run_experiment(
        SystemId::MassSpring,
        &KernelSpec::gaussian_state(1.0).unwrap(),
        Method::TwoStep,
        0.5,
        &[0, 1],
        &Ridges::default(),
        &opts,
    )
    .unwrap();
    assert_eq!(cell.n_seeds, 2);
    assert!(cell.interp_q.mean.is_finite());
}

#[test]
fn sparsity_zero_collapses_to_one_deterministic_seed() {
    let opts = desk_options(30, 8.0);
    let seeds: Vec<u64> = (0..5).collect();
    let cell = benchmarks::run_experiment(
        SystemId::MassSpring,
        &KernelSpec::gaussian_state(1.0).unwrap(),
        Method::TwoStep,
        0.0,
        &seeds,
        &Ridges::default(),
        &opts,
    )
    .unwrap();
    assert_eq!(cell.n_seeds, 1);
    assert_eq!(cell.interp_q.std, 0.0);
    assert_eq!(cell.extrap_q.std, 0.0);
}
