//! Benchmark Hamiltonian systems, dataset generation with sparsity
//! subsampling, the relative-error metric, and the repeated-seed experiment
//! protocol behind the error tables.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, DynamicsError, IntegratorOptions, VectorField};
use crate::kernels::KernelSpec;
use crate::one_step::{self, GradientMode, OneStepError, OneStepProblem};
use crate::representer::RepresenterError;
use crate::two_step::{self, TwoStepError};
use crate::Ridges;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("sparsity must lie in [0, 1), got {0}")]
    InvalidSparsity(f64),
    #[error("need at least two collocation points, got {0}")]
    GridTooSmall(usize),
    #[error("prediction and truth shapes differ: {pred} vs {truth}")]
    ShapeMismatch { pred: String, truth: String },
    #[error("relative error undefined: truth has zero norm on the evaluation set")]
    ZeroNormTruth,
    #[error("ground-truth integration failed: {0}")]
    GroundTruth(#[from] DynamicsError),
    #[error("all {0} seeds failed; first error: {1}")]
    AllSeedsFailed(usize, String),
}

/// The four benchmark systems with their closed-form Hamiltonians.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemId {
    MassSpring,
    TwoMassThreeSpring,
    HenonHeiles,
    Pendulum,
}

impl SystemId {
    pub fn all() -> [SystemId; 4] {
        [
            SystemId::MassSpring,
            SystemId::TwoMassThreeSpring,
            SystemId::HenonHeiles,
            SystemId::Pendulum,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemId::MassSpring => "mass_spring",
            SystemId::TwoMassThreeSpring => "two_mass_three_spring",
            SystemId::HenonHeiles => "henon_heiles",
            SystemId::Pendulum => "pendulum",
        }
    }

    /// Degrees of freedom `m`; states are `2m`-dimensional.
    pub fn dof(&self) -> usize {
        match self {
            SystemId::MassSpring | SystemId::Pendulum => 1,
            SystemId::TwoMassThreeSpring | SystemId::HenonHeiles => 2,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.dof()
    }

    pub fn initial_state(&self) -> Vec<f64> {
        match self {
            SystemId::MassSpring => vec![0.0, 1.0],
            SystemId::TwoMassThreeSpring | SystemId::HenonHeiles => vec![0.2, -0.1, 0.1, -0.1],
            SystemId::Pendulum => vec![0.95 * std::f64::consts::PI, 0.0],
        }
    }

    /// Exact analytic Hamiltonian value.
    pub fn hamiltonian(&self, y: &[f64]) -> f64 {
        match self {
            SystemId::MassSpring => 0.5 * (y[0] * y[0] + y[1] * y[1]),
            SystemId::TwoMassThreeSpring => {
                let (q1, q2, p1, p2) = (y[0], y[1], y[2], y[3]);
                0.5 * (p1 * p1 + p2 * p2) + 0.5 * (q1 * q1 + q2 * q2 + (q2 - q1) * (q2 - q1))
            }
            SystemId::HenonHeiles => {
                let (q1, q2, p1, p2) = (y[0], y[1], y[2], y[3]);
                0.5 * (p1 * p1 + p2 * p2) + 0.5 * (q1 * q1 + q2 * q2) + q1 * q1 * q2
                    - q2 * q2 * q2 / 3.0
            }
            SystemId::Pendulum => 0.5 * y[1] * y[1] - y[0].cos(),
        }
    }

    /// Gradient of the Hamiltonian in the `(q, p)` state layout.
    pub fn grad_hamiltonian(&self, y: &[f64]) -> Vec<f64> {
        match self {
            SystemId::MassSpring => vec![y[0], y[1]],
            SystemId::TwoMassThreeSpring => {
                let (q1, q2, p1, p2) = (y[0], y[1], y[2], y[3]);
                vec![2.0 * q1 - q2, 2.0 * q2 - q1, p1, p2]
            }
            SystemId::HenonHeiles => {
                let (q1, q2, p1, p2) = (y[0], y[1], y[2], y[3]);
                vec![q1 + 2.0 * q1 * q2, q2 + q1 * q1 - q2 * q2, p1, p2]
            }
            SystemId::Pendulum => vec![y[0].sin(), y[1]],
        }
    }

    /// State-kernel families appropriate for this system's Hamiltonian.
    pub fn admissible_state_kernels(&self) -> Vec<&'static str> {
        match self {
            SystemId::MassSpring | SystemId::TwoMassThreeSpring | SystemId::HenonHeiles => {
                vec![
                    "gaussian_state",
                    "separable_polynomial",
                    "additive_poly_gaussian",
                ]
            }
            SystemId::Pendulum => vec!["gaussian_state", "additive_poly_gaussian"],
        }
    }
}

/// Recovery pipeline selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TwoStep,
    OneStep,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::TwoStep => "two_step",
            Method::OneStep => "one_step",
        }
    }
}

/// Collocation/observation layout for dataset generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Equispaced,
    RandomUniform,
}

#[derive(Debug, Clone, Copy)]
pub struct DatasetOptions {
    pub n_points: usize,
    pub t_final: f64,
    pub grid: GridKind,
    pub integrator: IntegratorOptions,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            n_points: 200,
            t_final: 40.0,
            grid: GridKind::Equispaced,
            integrator: IntegratorOptions::default(),
        }
    }
}

/// Number of extrapolation sample times regardless of collocation size.
const EXTRAPOLATION_POINTS: usize = 200;

/// One system/seed/sparsity draw: the full collocation grid with ground
/// truth, the observed index subset, and the extrapolation grid with truth
/// for evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub system: SystemId,
    pub sparsity: f64,
    pub seed: u64,
    pub t_col: Vec<f64>,
    /// Ground truth at `t_col`, one row per time, columns `(q, p)`.
    pub y_col: DMatrix<f64>,
    /// Sorted indices into `t_col` of the observed subset.
    pub observed: Vec<usize>,
    pub t_ext: Vec<f64>,
    /// Ground truth at `t_ext`.
    pub y_ext: DMatrix<f64>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.t_col.len()
    }

    pub fn dof(&self) -> usize {
        self.system.dof()
    }

    pub fn n_obs(&self) -> usize {
        self.observed.len()
    }

    pub fn observed_times(&self) -> Vec<f64> {
        self.observed.iter().map(|&i| self.t_col[i]).collect()
    }

    /// Observed `(q, p)` values, one row per observed time.
    pub fn observed_values(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = self.dof();
        let q = DMatrix::from_fn(self.n_obs(), m, |r, c| self.y_col[(self.observed[r], c)]);
        let p = DMatrix::from_fn(self.n_obs(), m, |r, c| {
            self.y_col[(self.observed[r], m + c)]
        });
        (q, p)
    }

    /// Indices of the unobserved collocation times.
    pub fn interior_indices(&self) -> Vec<usize> {
        let mut flags = vec![true; self.n()];
        for &i in &self.observed {
            flags[i] = false;
        }
        flags
            .iter()
            .enumerate()
            .filter_map(|(i, &unobserved)| unobserved.then_some(i))
            .collect()
    }

    pub fn interior_times(&self) -> Vec<f64> {
        self.interior_indices()
            .iter()
            .map(|&i| self.t_col[i])
            .collect()
    }
}

fn equispaced(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Integrates the analytic system and subsamples observations. The
/// subsampling generator is keyed to the seed alone, so a dataset is
/// reproducible bit-for-bit across runs and platforms.
pub fn generate_dataset(
    system: SystemId,
    sparsity: f64,
    seed: u64,
    opts: &DatasetOptions,
) -> Result<Dataset, BenchmarkError> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(BenchmarkError::InvalidSparsity(sparsity));
    }
    if opts.n_points < 2 {
        return Err(BenchmarkError::GridTooSmall(opts.n_points));
    }
    let n = opts.n_points;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (t_col, t_ext) = match opts.grid {
        GridKind::Equispaced => {
            let t_col = equispaced(0.0, opts.t_final, n);
            let step = opts.t_final / EXTRAPOLATION_POINTS as f64;
            let t_ext: Vec<f64> = (0..EXTRAPOLATION_POINTS)
                .map(|i| opts.t_final + (i + 1) as f64 * step)
                .collect();
            (t_col, t_ext)
        }
        GridKind::RandomUniform => {
            use rand::Rng;
            let mut t_col: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..opts.t_final)).collect();
            t_col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut t_ext: Vec<f64> = (0..EXTRAPOLATION_POINTS)
                .map(|_| rng.gen_range(opts.t_final..2.0 * opts.t_final))
                .collect();
            t_ext.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (t_col, t_ext)
        }
    };

    let y0 = system.initial_state();
    let field = VectorField::Analytic(system);
    let mut grid = t_col.clone();
    grid.extend_from_slice(&t_ext);
    let states = dynamics::integrate(&field, 0.0, &y0, &grid, &opts.integrator)?;
    let y_col = states.rows(0, n).into_owned();
    let y_ext = states.rows(n, t_ext.len()).into_owned();

    let n_obs = ((1.0 - sparsity) * n as f64).floor() as usize;
    let observed = if n_obs >= n {
        (0..n).collect()
    } else {
        let mut picked = rand::seq::index::sample(&mut rng, n, n_obs).into_vec();
        picked.sort_unstable();
        picked
    };

    Ok(Dataset {
        system,
        sparsity,
        seed,
        t_col,
        y_col,
        observed,
        t_ext,
        y_ext,
    })
}

/// Relative error: `‖truth − pred‖ / ‖truth‖` over paired sample rows, as a
/// raw fraction. An empty sample set has error 0 by convention.
pub fn relative_error(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64, BenchmarkError> {
    if pred.shape() != truth.shape() {
        return Err(BenchmarkError::ShapeMismatch {
            pred: format!("{}×{}", pred.nrows(), pred.ncols()),
            truth: format!("{}×{}", truth.nrows(), truth.ncols()),
        });
    }
    if truth.nrows() == 0 {
        return Ok(0.0);
    }
    let denom = truth.iter().map(|v| v * v).sum::<f64>();
    if denom == 0.0 {
        return Err(BenchmarkError::ZeroNormTruth);
    }
    let num = pred
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>();
    Ok((num / denom).sqrt())
}

/// Everything a single experiment cell needs beyond its identifying tuple.
#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub dataset: DatasetOptions,
    pub time_kernel: KernelSpec,
    pub forecast_integrator: IntegratorOptions,
    pub gradient_mode: GradientMode,
    pub minimize: one_step::MinimizeOptions,
    /// Retain per-seed trajectory tables for dumping.
    pub keep_trajectories: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            dataset: DatasetOptions::default(),
            time_kernel: KernelSpec::GaussianTime { lengthscale: 1.0 },
            forecast_integrator: IntegratorOptions::default(),
            gradient_mode: GradientMode::Full,
            minimize: one_step::MinimizeOptions::default(),
            keep_trajectories: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellStats {
    pub mean: f64,
    pub std: f64,
}

fn aggregate(values: &[f64]) -> CellStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    CellStats {
        mean,
        std: var.sqrt(),
    }
}

/// Per-seed predictions on the collocation and extrapolation grids, kept for
/// trajectory dumps.
#[derive(Debug, Clone)]
pub struct SeedTrajectory {
    pub seed: u64,
    pub t_col: Vec<f64>,
    pub truth_col: DMatrix<f64>,
    pub pred_col: DMatrix<f64>,
    pub observed: Vec<usize>,
    pub t_ext: Vec<f64>,
    pub truth_ext: DMatrix<f64>,
    /// NaN rows past the point where a diverged forecast stopped.
    pub pred_ext: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub interp_q: f64,
    pub interp_p: f64,
    pub extrap_q: f64,
    pub extrap_p: f64,
    pub diverged: bool,
    pub trajectory: Option<SeedTrajectory>,
}

/// Aggregated statistics for one (system, kernel, method, sparsity) cell.
#[derive(Debug, Clone)]
pub struct CellReport {
    pub system: SystemId,
    pub kernel: KernelSpec,
    pub method: Method,
    pub sparsity: f64,
    pub interp_q: CellStats,
    pub interp_p: CellStats,
    pub extrap_q: CellStats,
    pub extrap_p: CellStats,
    pub n_seeds: usize,
    pub n_diverged: usize,
    /// Seeds whose fit failed outright, with the failure text.
    pub failures: Vec<(u64, String)>,
    pub trajectories: Vec<SeedTrajectory>,
}

#[derive(Debug, Error)]
pub enum SeedError {
    #[error(transparent)]
    TwoStep(#[from] TwoStepError),
    #[error(transparent)]
    OneStep(#[from] OneStepError),
    #[error(transparent)]
    Representer(#[from] RepresenterError),
    #[error(transparent)]
    Benchmark(#[from] Box<BenchmarkError>),
}

/// Runs one seed of one cell: generate, fit, evaluate interpolation on the
/// unobserved collocation times (or the full grid when none are unobserved)
/// via the fitted interpolants, and extrapolation by forecasting with the
/// learned Hamiltonian from the reconstructed initial state.
pub fn run_single(
    system: SystemId,
    state_kernel: &KernelSpec,
    method: Method,
    sparsity: f64,
    seed: u64,
    ridges: &Ridges,
    opts: &ExperimentOptions,
) -> Result<SeedOutcome, SeedError> {
    let dataset = generate_dataset(system, sparsity, seed, &opts.dataset).map_err(Box::new)?;
    let m = dataset.dof();

    let (q_star, p_star, model) = match method {
        Method::TwoStep => {
            two_step::fit_two_step(&dataset, &opts.time_kernel, state_kernel, ridges)?
        }
        Method::OneStep => {
            let (q_warm, p_warm, _) =
                two_step::fit_two_step(&dataset, &opts.time_kernel, state_kernel, ridges)?;
            let problem = OneStepProblem::new(
                &dataset,
                &opts.time_kernel,
                state_kernel,
                ridges,
                opts.gradient_mode,
            )?;
            let warm = one_step::warm_start(&q_warm, &p_warm, &dataset.t_col);
            let (slack, _diag) = one_step::minimize(&problem, warm, &opts.minimize)?;
            one_step::extract_model(&problem, &slack)?
        }
    };

    // interpolation phase: interpolant predictions on the unobserved times
    let interior = dataset.interior_indices();
    let eval_indices: Vec<usize> = if interior.is_empty() {
        (0..dataset.n()).collect()
    } else {
        interior
    };
    let eval_times: Vec<f64> = eval_indices.iter().map(|&i| dataset.t_col[i]).collect();
    let pred_q_int = q_star.eval(&eval_times);
    let pred_p_int = p_star.eval(&eval_times);
    let truth_q_int = DMatrix::from_fn(eval_indices.len(), m, |r, c| {
        dataset.y_col[(eval_indices[r], c)]
    });
    let truth_p_int = DMatrix::from_fn(eval_indices.len(), m, |r, c| {
        dataset.y_col[(eval_indices[r], m + c)]
    });
    let interp_q = relative_error(&pred_q_int, &truth_q_int).map_err(Box::new)?;
    let interp_p = relative_error(&pred_p_int, &truth_p_int).map_err(Box::new)?;

    // extrapolation phase: forecast with the learned Hamiltonian from the
    // reconstructed state at the first collocation time
    let t0 = dataset.t_col[0];
    let q0 = q_star.eval(&[t0]);
    let p0 = p_star.eval(&[t0]);
    let mut y0 = Vec::with_capacity(2 * m);
    y0.extend(q0.row(0).iter());
    y0.extend(p0.row(0).iter());
    let outcome =
        match dynamics::forecast(&model, &y0, t0, &dataset.t_ext, &opts.forecast_integrator) {
            Ok(outcome) => outcome,
            Err(_) => dynamics::IntegrationOutcome {
                states: DMatrix::from_element(dataset.t_ext.len(), 2 * m, f64::NAN),
                filled: 0,
                failure: Some(dynamics::StopReason::StepSizeUnderflow),
                t_last: t0,
            },
        };
    let diverged = outcome.failure.is_some();
    let filled = outcome.filled;
    let pred_q_ext = outcome.states.view((0, 0), (filled, m)).into_owned();
    let pred_p_ext = outcome.states.view((0, m), (filled, m)).into_owned();
    let truth_q_ext = dataset.y_ext.view((0, 0), (filled, m)).into_owned();
    let truth_p_ext = dataset.y_ext.view((0, m), (filled, m)).into_owned();
    let extrap_q = relative_error(&pred_q_ext, &truth_q_ext).map_err(Box::new)?;
    let extrap_p = relative_error(&pred_p_ext, &truth_p_ext).map_err(Box::new)?;

    let trajectory = opts.keep_trajectories.then(|| {
        let pred_q_col = q_star.eval(&dataset.t_col);
        let pred_p_col = p_star.eval(&dataset.t_col);
        let mut pred_col = DMatrix::zeros(dataset.n(), 2 * m);
        for r in 0..dataset.n() {
            for c in 0..m {
                pred_col[(r, c)] = pred_q_col[(r, c)];
                pred_col[(r, m + c)] = pred_p_col[(r, c)];
            }
        }
        SeedTrajectory {
            seed,
            t_col: dataset.t_col.clone(),
            truth_col: dataset.y_col.clone(),
            pred_col,
            observed: dataset.observed.clone(),
            t_ext: dataset.t_ext.clone(),
            truth_ext: dataset.y_ext.clone(),
            pred_ext: outcome.states,
        }
    });

    Ok(SeedOutcome {
        seed,
        interp_q,
        interp_p,
        extrap_q,
        extrap_p,
        diverged,
        trajectory,
    })
}

/// Runs all seeds of a cell and aggregates mean ± population std per variable
/// and phase. A sparsity of exactly 0 has no subsampling randomness, so only
/// the first seed runs and the std is exactly 0. Per-seed failures are
/// recorded, not propagated, unless every seed fails.
pub fn run_experiment(
    system: SystemId,
    state_kernel: &KernelSpec,
    method: Method,
    sparsity: f64,
    seeds: &[u64],
    ridges: &Ridges,
    opts: &ExperimentOptions,
) -> Result<CellReport, BenchmarkError> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(BenchmarkError::InvalidSparsity(sparsity));
    }
    let effective_seeds: Vec<u64> = if sparsity == 0.0 {
        seeds.iter().take(1).copied().collect()
    } else {
        seeds.to_vec()
    };
    let results: Vec<(u64, Result<SeedOutcome, SeedError>)> = effective_seeds
        .par_iter()
        .map(|&seed| {
            (
                seed,
                run_single(system, state_kernel, method, sparsity, seed, ridges, opts),
            )
        })
        .collect();

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (seed, result) in results {
        match result {
            Ok(outcome) => outcomes.push(outcome),
            Err(err) => failures.push((seed, err.to_string())),
        }
    }
    if outcomes.is_empty() {
        let first = failures
            .first()
            .map(|(_, e)| e.clone())
            .unwrap_or_else(|| "no seeds supplied".into());
        return Err(BenchmarkError::AllSeedsFailed(effective_seeds.len(), first));
    }

    let collect = |f: fn(&SeedOutcome) -> f64| -> Vec<f64> { outcomes.iter().map(f).collect() };
    let interp_q = aggregate(&collect(|o| o.interp_q));
    let interp_p = aggregate(&collect(|o| o.interp_p));
    let extrap_q = aggregate(&collect(|o| o.extrap_q));
    let extrap_p = aggregate(&collect(|o| o.extrap_p));
    let n_diverged = outcomes.iter().filter(|o| o.diverged).count();
    let n_seeds = outcomes.len();
    let trajectories = outcomes
        .iter_mut()
        .filter_map(|o| o.trajectory.take())
        .collect();
    Ok(CellReport {
        system,
        kernel: *state_kernel,
        method,
        sparsity,
        interp_q,
        interp_p,
        extrap_q,
        extrap_p,
        n_seeds,
        n_diverged,
        failures,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hamiltonian_values_at_initial_states() {
        assert_relative_eq!(
            SystemId::MassSpring.hamiltonian(&[0.0, 1.0]),
            0.5,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            SystemId::TwoMassThreeSpring.hamiltonian(&[0.2, -0.1, 0.1, -0.1]),
            0.08,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            SystemId::HenonHeiles.hamiltonian(&[0.2, -0.1, 0.1, -0.1]),
            0.01 + 0.025 - 0.004 + 0.001 / 3.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            SystemId::Pendulum.hamiltonian(&SystemId::Pendulum.initial_state()),
            -(0.95 * std::f64::consts::PI).cos(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn dataset_zero_sparsity_observes_everything() {
        let opts = DatasetOptions {
            n_points: 50,
            t_final: 10.0,
            ..DatasetOptions::default()
        };
        let ds = generate_dataset(SystemId::MassSpring, 0.0, 1, &opts).unwrap();
        assert_eq!(ds.observed, (0..50).collect::<Vec<_>>());
        assert!(ds.interior_indices().is_empty());
        assert_eq!(ds.t_ext.len(), EXTRAPOLATION_POINTS);
        assert_relative_eq!(ds.t_col[0], 0.0);
        assert_relative_eq!(*ds.t_col.last().unwrap(), 10.0);
        assert!(ds.t_ext[0] > 10.0);
        assert_relative_eq!(*ds.t_ext.last().unwrap(), 20.0, max_relative = 1e-12);
    }

    #[test]
    fn dataset_sparsity_half_floors_the_count() {
        let opts = DatasetOptions {
            n_points: 200,
            t_final: 40.0,
            ..DatasetOptions::default()
        };
        let ds = generate_dataset(SystemId::MassSpring, 0.5, 3, &opts).unwrap();
        assert_eq!(ds.n_obs(), 100);
        assert_eq!(ds.interior_indices().len(), 100);
        let opts_odd = DatasetOptions {
            n_points: 11,
            t_final: 4.0,
            ..DatasetOptions::default()
        };
        let ds = generate_dataset(SystemId::MassSpring, 0.5, 3, &opts_odd).unwrap();
        assert_eq!(ds.n_obs(), 5);
    }

    #[test]
    fn dataset_is_deterministic_per_seed() {
        let opts = DatasetOptions {
            n_points: 64,
            t_final: 12.0,
            ..DatasetOptions::default()
        };
        let a = generate_dataset(SystemId::Pendulum, 0.7, 42, &opts).unwrap();
        let b = generate_dataset(SystemId::Pendulum, 0.7, 42, &opts).unwrap();
        assert_eq!(a.observed, b.observed);
        assert_eq!(a.y_col, b.y_col);
        let c = generate_dataset(SystemId::Pendulum, 0.7, 43, &opts).unwrap();
        assert_ne!(a.observed, c.observed);
    }

    #[test]
    fn dataset_rejects_bad_sparsity() {
        let opts = DatasetOptions::default();
        assert!(generate_dataset(SystemId::MassSpring, 1.0, 0, &opts).is_err());
        assert!(generate_dataset(SystemId::MassSpring, -0.1, 0, &opts).is_err());
    }

    #[test]
    fn ground_truth_conserves_energy() {
        let opts = DatasetOptions {
            n_points: 100,
            t_final: 40.0,
            ..DatasetOptions::default()
        };
        for system in SystemId::all() {
            let ds = generate_dataset(system, 0.0, 0, &opts).unwrap();
            let y0 = system.initial_state();
            let drift_col = crate::dynamics::energy_drift(system, &y0, &ds.y_col);
            let drift_ext = crate::dynamics::energy_drift(system, &y0, &ds.y_ext);
            assert!(
                drift_col.max(drift_ext) < 1e-7,
                "{}: drift {}",
                system.name(),
                drift_col.max(drift_ext)
            );
        }
    }

    #[test]
    fn random_grid_is_sorted_and_in_range() {
        let opts = DatasetOptions {
            n_points: 40,
            t_final: 10.0,
            grid: GridKind::RandomUniform,
            ..DatasetOptions::default()
        };
        let ds = generate_dataset(SystemId::MassSpring, 0.5, 9, &opts).unwrap();
        assert!(ds.t_col.windows(2).all(|w| w[0] <= w[1]));
        assert!(ds.t_col.iter().all(|&t| (0.0..10.0).contains(&t)));
        assert!(ds.t_ext.iter().all(|&t| (10.0..=20.0).contains(&t)));
    }

    #[test]
    fn relative_error_basics() {
        let truth = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0]);
        assert_eq!(relative_error(&truth, &truth).unwrap(), 0.0);
        let zeros = DMatrix::zeros(3, 1);
        assert_relative_eq!(
            relative_error(&zeros, &truth).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        let double = &truth * 2.0;
        assert_relative_eq!(
            relative_error(&double, &truth).unwrap(),
            1.0,
            max_relative = 1e-15
        );
        assert_eq!(
            relative_error(&DMatrix::zeros(0, 1), &DMatrix::zeros(0, 1)).unwrap(),
            0.0
        );
        assert!(relative_error(&truth, &zeros).is_err());
        assert!(relative_error(&zeros, &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn relative_error_invariant_under_joint_reindexing() {
        let truth = DMatrix::from_column_slice(4, 1, &[1.0, -2.0, 3.0, 0.5]);
        let pred = DMatrix::from_column_slice(4, 1, &[1.1, -1.9, 2.8, 0.6]);
        let base = relative_error(&pred, &truth).unwrap();
        let perm = [2usize, 0, 3, 1];
        let truth_p = DMatrix::from_fn(4, 1, |r, _| truth[(perm[r], 0)]);
        let pred_p = DMatrix::from_fn(4, 1, |r, _| pred[(perm[r], 0)]);
        assert_relative_eq!(
            relative_error(&pred_p, &truth_p).unwrap(),
            base,
            max_relative = 1e-15
        );
    }

    #[test]
    fn aggregate_population_std() {
        let stats = aggregate(&[1.0, 3.0]);
        assert_relative_eq!(stats.mean, 2.0);
        assert_relative_eq!(stats.std, 1.0);
        let single = aggregate(&[4.2]);
        assert_eq!(single.std, 0.0);
    }
}
