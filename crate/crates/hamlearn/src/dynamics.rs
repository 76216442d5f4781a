//! Hamiltonian vector fields and a high-precision adaptive ODE integrator
//! (embedded Runge-Kutta 5(4), Dormand-Prince coefficients, PI step control,
//! dense output) used for data generation and forecasting.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::benchmarks::SystemId;
use crate::two_step::LearnedHamiltonian;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("time grid must be sorted ascending and start at or after t0")]
    InvalidGrid,
    #[error("integrator tolerances must be positive")]
    InvalidTolerances,
    #[error("integration failed at t = {t_last:.6}: {reason}")]
    IntegrationFailure { t_last: f64, reason: StopReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    StepSizeUnderflow,
    BlowUp,
    MaxStepsExceeded,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::StepSizeUnderflow => write!(f, "step size underflow"),
            StopReason::BlowUp => write!(f, "solution norm exceeded the blow-up guard"),
            StopReason::MaxStepsExceeded => write!(f, "maximum step count exceeded"),
        }
    }
}

/// Autonomous first-order dynamics `dy/dt = f(y)`.
pub trait Dynamics {
    fn dim(&self) -> usize;
    fn field(&self, y: &[f64], dy: &mut [f64]);
}

/// Hamiltonian vector field from an analytic benchmark system or a learned
/// Hamiltonian model: `dy/dt = (∂_p H, −∂_q H)`.
pub enum VectorField<'a> {
    Analytic(SystemId),
    Learned(&'a LearnedHamiltonian),
}

impl VectorField<'_> {
    /// Applies the symplectic pairing to a state-gradient of `H` laid out
    /// `(∂_q H, ∂_p H)`.
    pub fn pair_gradient(grad: &[f64], dy: &mut [f64]) {
        let m = grad.len() / 2;
        for j in 0..m {
            dy[j] = grad[m + j];
            dy[m + j] = -grad[j];
        }
    }
}

impl Dynamics for VectorField<'_> {
    fn dim(&self) -> usize {
        match self {
            VectorField::Analytic(system) => system.dim(),
            VectorField::Learned(model) => model.dim(),
        }
    }

    fn field(&self, y: &[f64], dy: &mut [f64]) {
        match self {
            VectorField::Analytic(system) => {
                let grad = system.grad_hamiltonian(y);
                Self::pair_gradient(&grad, dy);
            }
            VectorField::Learned(model) => {
                let grad = model.grad(y);
                Self::pair_gradient(&grad, dy);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Upper bound on the step size; `None` leaves the controller free.
    pub max_step: Option<f64>,
    /// Sample output through dense interpolation of the accepted steps. When
    /// disabled the stepper lands on every requested grid time exactly.
    pub dense_output: bool,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rtol: 1e-9,
            atol: 1e-9,
            max_step: None,
            dense_output: true,
        }
    }
}

/// Abort threshold on `‖y‖∞`; learned fields at high sparsity can be unstable.
const BLOW_UP_GUARD: f64 = 1e6;
const MAX_STEPS: usize = 5_000_000;

/// Result of an integration that may have stopped early: `states` rows beyond
/// `filled` are NaN and `failure` records why.
pub struct IntegrationOutcome {
    pub states: DMatrix<f64>,
    pub filled: usize,
    pub failure: Option<StopReason>,
    pub t_last: f64,
}

/// Integrates from `(t0, y0)` and samples the dense solution at `grid`
/// (sorted ascending, all entries ≥ `t0`). Rows of the result follow `grid`.
pub fn integrate<F: Dynamics>(
    f: &F,
    t0: f64,
    y0: &[f64],
    grid: &[f64],
    opts: &IntegratorOptions,
) -> Result<DMatrix<f64>, DynamicsError> {
    let out = integrate_with_prefix(f, t0, y0, grid, opts)?;
    match out.failure {
        None => Ok(out.states),
        Some(reason) => Err(DynamicsError::IntegrationFailure {
            t_last: out.t_last,
            reason,
        }),
    }
}

/// Like [`integrate`] but returns the prefix produced before any failure;
/// forecasting callers record a failure as a diverged run.
pub fn integrate_with_prefix<F: Dynamics>(
    f: &F,
    t0: f64,
    y0: &[f64],
    grid: &[f64],
    opts: &IntegratorOptions,
) -> Result<IntegrationOutcome, DynamicsError> {
    let dim = f.dim();
    assert_eq!(y0.len(), dim, "initial state dimension mismatch");
    if !(opts.rtol > 0.0) || !(opts.atol > 0.0) {
        return Err(DynamicsError::InvalidTolerances);
    }
    if grid.windows(2).any(|w| w[1] < w[0]) || grid.first().is_some_and(|&g| g < t0 - 1e-12) {
        return Err(DynamicsError::InvalidGrid);
    }
    let mut states = DMatrix::from_element(grid.len(), dim, f64::NAN);
    let mut filled = 0;
    // grid points coincident with t0 take the initial state directly
    while filled < grid.len() && (grid[filled] - t0).abs() <= 1e-12 * (1.0 + t0.abs()) {
        for c in 0..dim {
            states[(filled, c)] = y0[c];
        }
        filled += 1;
    }
    if filled == grid.len() {
        return Ok(IntegrationOutcome {
            states,
            filled,
            failure: None,
            t_last: t0,
        });
    }
    let t_end = *grid.last().unwrap();

    let mut stepper = Dopri5::new(f, t0, y0.to_vec(), opts, t_end);
    let failure = loop {
        match stepper.step() {
            Ok(()) => {
                while filled < grid.len() && grid[filled] <= stepper.t + 1e-14 {
                    let row = if opts.dense_output || grid[filled] < stepper.t {
                        stepper.dense_eval(grid[filled])
                    } else {
                        stepper.y.clone()
                    };
                    for c in 0..dim {
                        states[(filled, c)] = row[c];
                    }
                    filled += 1;
                }
                if filled == grid.len() {
                    break None;
                }
            }
            Err(reason) => break Some(reason),
        }
    };
    Ok(IntegrationOutcome {
        states,
        filled,
        failure,
        t_last: stepper.t,
    })
}

/// Forecasts a learned model from the reconstructed initial state.
pub fn forecast(
    model: &LearnedHamiltonian,
    y0_reconstructed: &[f64],
    t0: f64,
    grid: &[f64],
    opts: &IntegratorOptions,
) -> Result<IntegrationOutcome, DynamicsError> {
    let field = VectorField::Learned(model);
    integrate_with_prefix(&field, t0, y0_reconstructed, grid, opts)
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
// difference between the 5th- and embedded 4th-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// dense-output weights for the degree-4 interpolating polynomial
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

struct Dopri5<'a, F: Dynamics> {
    f: &'a F,
    dim: usize,
    t: f64,
    y: Vec<f64>,
    k: [Vec<f64>; 7],
    h: f64,
    t_end: f64,
    rtol: f64,
    atol: f64,
    max_step: f64,
    fac_old: f64,
    steps: usize,
    // dense coefficients for the last accepted step
    t_old: f64,
    h_old: f64,
    cont: [Vec<f64>; 5],
}

impl<'a, F: Dynamics> Dopri5<'a, F> {
    fn new(f: &'a F, t0: f64, y0: Vec<f64>, opts: &IntegratorOptions, t_end: f64) -> Self {
        let dim = f.dim();
        let mut k0 = vec![0.0; dim];
        f.field(&y0, &mut k0);
        let max_step = opts
            .max_step
            .unwrap_or(f64::INFINITY)
            .min((t_end - t0).abs().max(1e-12));
        let h = initial_step(f, t0, &y0, &k0, opts.rtol, opts.atol, max_step);
        Dopri5 {
            f,
            dim,
            t: t0,
            y: y0,
            k: [
                k0,
                vec![0.0; dim],
                vec![0.0; dim],
                vec![0.0; dim],
                vec![0.0; dim],
                vec![0.0; dim],
                vec![0.0; dim],
            ],
            h,
            t_end,
            rtol: opts.rtol,
            atol: opts.atol,
            max_step,
            fac_old: 1e-4,
            steps: 0,
            t_old: t0,
            h_old: 0.0,
            cont: std::array::from_fn(|_| vec![0.0; dim]),
        }
    }

    /// Advances by one accepted step, retrying with smaller steps on error
    /// test failures.
    fn step(&mut self) -> Result<(), StopReason> {
        const SAFETY: f64 = 0.9;
        const BETA: f64 = 0.04;
        const EXPO: f64 = 0.2 - BETA * 0.75;
        const FAC_MIN: f64 = 0.2; // strongest shrink per retry
        const FAC_MAX: f64 = 10.0; // strongest growth per step

        let mut ytmp = vec![0.0; self.dim];
        let mut ynew = vec![0.0; self.dim];
        loop {
            self.steps += 1;
            if self.steps > MAX_STEPS {
                return Err(StopReason::MaxStepsExceeded);
            }
            let h = self.h.min(self.max_step).min(self.t_end - self.t);
            if !(h > 0.0) || h < 1e-14 * (1.0 + self.t.abs()) {
                return Err(StopReason::StepSizeUnderflow);
            }
            // stages 2..7; k1 carried over (FSAL)
            let mut finite = true;
            'stages: for s in 0..6 {
                for i in 0..self.dim {
                    let mut acc = 0.0;
                    for (j, a) in A[s].iter().enumerate().take(s + 1) {
                        acc += a * self.k[j][i];
                    }
                    ytmp[i] = self.y[i] + h * acc;
                    if !ytmp[i].is_finite() {
                        finite = false;
                        break 'stages;
                    }
                }
                let target = if s < 5 { s + 1 } else { 6 };
                if s == 5 {
                    ynew.copy_from_slice(&ytmp);
                }
                self.f.field(&ytmp, &mut self.k[target]);
                let _ = C;
            }
            let err = if finite {
                let mut acc = 0.0;
                for i in 0..self.dim {
                    let sc = self.atol + self.rtol * self.y[i].abs().max(ynew[i].abs());
                    let e: f64 = h * E
                        .iter()
                        .enumerate()
                        .map(|(j, w)| w * self.k[j][i])
                        .sum::<f64>();
                    acc += (e / sc) * (e / sc);
                }
                (acc / self.dim as f64).sqrt()
            } else {
                f64::INFINITY
            };

            if err <= 1.0 {
                // accept: build dense coefficients, then advance with FSAL
                let ydiff: Vec<f64> = (0..self.dim).map(|i| ynew[i] - self.y[i]).collect();
                for i in 0..self.dim {
                    let bspl = h * self.k[0][i] - ydiff[i];
                    self.cont[0][i] = self.y[i];
                    self.cont[1][i] = ydiff[i];
                    self.cont[2][i] = bspl;
                    self.cont[3][i] = ydiff[i] - h * self.k[6][i] - bspl;
                    self.cont[4][i] = h * D
                        .iter()
                        .enumerate()
                        .map(|(j, w)| w * self.k[j][i])
                        .sum::<f64>();
                }
                self.t_old = self.t;
                self.h_old = h;
                self.t += h;
                self.y.copy_from_slice(&ynew);
                self.k.swap(0, 6);

                if self.y.iter().any(|v| v.abs() > BLOW_UP_GUARD) {
                    return Err(StopReason::BlowUp);
                }
                let err_bounded = err.max(1e-4);
                let fac = (err_bounded.powf(EXPO) / self.fac_old.powf(BETA) / SAFETY)
                    .clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                self.h = h / fac;
                self.fac_old = err_bounded;
                return Ok(());
            }
            // reject: shrink and retry
            let fac = (err.powf(EXPO) / SAFETY).max(1.0 / FAC_MAX);
            self.h = h / fac.min(1.0 / FAC_MIN);
            if !finite {
                self.h = h * FAC_MIN;
            }
        }
    }

    /// Degree-4 interpolation over the last accepted step.
    fn dense_eval(&self, t: f64) -> Vec<f64> {
        let theta = if self.h_old == 0.0 {
            0.0
        } else {
            (t - self.t_old) / self.h_old
        };
        let th1 = 1.0 - theta;
        (0..self.dim)
            .map(|i| {
                self.cont[0][i]
                    + theta
                        * (self.cont[1][i]
                            + th1
                                * (self.cont[2][i]
                                    + theta * (self.cont[3][i] + th1 * self.cont[4][i])))
            })
            .collect()
    }
}

fn rms_norm(v: &[f64], y: &[f64], rtol: f64, atol: f64) -> f64 {
    let acc: f64 = v
        .iter()
        .zip(y)
        .map(|(vi, yi)| {
            let sc = atol + rtol * yi.abs();
            (vi / sc) * (vi / sc)
        })
        .sum();
    (acc / v.len() as f64).sqrt()
}

/// Standard starting-step heuristic from the field magnitude and a trial
/// explicit Euler step.
fn initial_step<F: Dynamics>(
    f: &F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    rtol: f64,
    atol: f64,
    max_step: f64,
) -> f64 {
    let d0 = rms_norm(y0, y0, rtol, atol);
    let d1 = rms_norm(f0, y0, rtol, atol);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    f.field(&y1, &mut f1);
    let df: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms_norm(&df, y0, rtol, atol) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    h0.min(100.0 * h0.min(h1))
        .min(max_step)
        .max(1e-12 * (1.0 + t0.abs()))
}

/// Maximum energy drift `max_t |H(y(t)) − H(y_0)|` along sampled states.
pub fn energy_drift(system: SystemId, y0: &[f64], states: &DMatrix<f64>) -> f64 {
    let e0 = system.hamiltonian(y0);
    let mut worst: f64 = 0.0;
    for r in 0..states.nrows() {
        let row: Vec<f64> = states.row(r).iter().copied().collect();
        worst = worst.max((system.hamiltonian(&row) - e0).abs());
    }
    worst
}
