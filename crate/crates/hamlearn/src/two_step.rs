//! Sequential recovery pipeline: interpolate the observed trajectories,
//! differentiate the interpolants at the collocation times, then
//! kernel-ridge-fit the Hamiltonian against the resulting derivative
//! functionals.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::benchmarks::Dataset;
use crate::kernels::{self, FunctionalLayout, KernelError, KernelSpec, PointSet};
use crate::linalg::{LinalgError, RegularizedSystem, Ridge};
use crate::representer::{self, Interpolant, RepresenterError};
use crate::Ridges;

#[derive(Debug, Error)]
pub enum TwoStepError {
    #[error("dataset has no observations")]
    NoObservations,
    #[error("Hamiltonian kernel must be a state kernel, got {0}")]
    NotAStateKernel(&'static str),
    #[error("coefficient vector length {got} does not match layout total {expected}")]
    CoefficientMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Representer(#[from] RepresenterError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A recovered Hamiltonian: anchor states, the derivative-functional layout
/// over them, and the coefficient vector of the kernel expansion. Evaluation
/// and gradients are linear in the coefficients.
#[derive(Debug, Clone)]
pub struct LearnedHamiltonian {
    kernel: KernelSpec,
    /// One anchor state per column, laid out `(q, p)`.
    anchor_states: PointSet,
    layout: FunctionalLayout,
    coefficients: DVector<f64>,
    ridge: (f64, f64),
    jitter: f64,
}

impl LearnedHamiltonian {
    pub fn from_parts(
        kernel: KernelSpec,
        anchor_states: PointSet,
        layout: FunctionalLayout,
        coefficients: DVector<f64>,
        ridge: (f64, f64),
        jitter: f64,
    ) -> Result<Self, TwoStepError> {
        if !kernel.is_state_kernel() {
            return Err(TwoStepError::NotAStateKernel(kernel.family_name()));
        }
        if coefficients.len() != layout.total() {
            return Err(TwoStepError::CoefficientMismatch {
                expected: layout.total(),
                got: coefficients.len(),
            });
        }
        Ok(LearnedHamiltonian {
            kernel,
            anchor_states,
            layout,
            coefficients,
            ridge,
            jitter,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn anchor_states(&self) -> &PointSet {
        &self.anchor_states
    }

    pub fn layout(&self) -> FunctionalLayout {
        self.layout
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn ridge(&self) -> (f64, f64) {
        self.ridge
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// State dimension `2m`.
    pub fn dim(&self) -> usize {
        2 * self.layout.dof()
    }

    /// Functional weight vector at anchor `i`: the coefficient of each
    /// first-argument derivative component, in `(q, p)` component order.
    fn anchor_weights(&self, i: usize, w: &mut [f64]) {
        let m = self.layout.dof();
        for j in 0..m {
            w[j] = self.coefficients[self.layout.position_index(i, j)];
            w[m + j] = self.coefficients[self.layout.momentum_index(i, j)];
        }
    }

    /// Recovered Hamiltonian value `H(x)`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let m = self.layout.dof();
        let mut w = vec![0.0; 2 * m];
        let mut grad = vec![0.0; 2 * m];
        let mut acc = 0.0;
        for i in 0..self.layout.n_states() {
            self.anchor_weights(i, &mut w);
            self.kernel
                .grad_first_into(kernels::point(&self.anchor_states, i), x, &mut grad);
            acc += w.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }

    /// Gradient `∇H(x)` in the `(q, p)` state layout.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let m = self.layout.dof();
        let mut w = vec![0.0; 2 * m];
        let mut contrib = vec![0.0; 2 * m];
        let mut out = vec![0.0; 2 * m];
        for i in 0..self.layout.n_states() {
            self.anchor_weights(i, &mut w);
            self.kernel.hessian_apply_first_into(
                kernels::point(&self.anchor_states, i),
                x,
                &w,
                &mut contrib,
            );
            for (o, c) in out.iter_mut().zip(&contrib) {
                *o += c;
            }
        }
        out
    }
}

/// Builds the anchor state set from interpolants evaluated on the full
/// collocation grid, one state per column.
pub(crate) fn states_from_interpolants(
    q_star: &Interpolant,
    p_star: &Interpolant,
    times: &[f64],
) -> PointSet {
    let m = q_star.components();
    let q = q_star.eval(times);
    let p = p_star.eval(times);
    DMatrix::from_fn(2 * m, times.len(), |r, c| {
        if r < m {
            q[(c, r)]
        } else {
            p[(c, r - m)]
        }
    })
}

/// Stacks derivative targets in functional-layout order: interpolated
/// `q̇` against the momentum block, `−ṗ` against the position block.
pub(crate) fn stack_targets(
    q_dot: &DMatrix<f64>,
    p_dot: &DMatrix<f64>,
    layout: FunctionalLayout,
) -> DVector<f64> {
    let mut z = DVector::zeros(layout.total());
    for i in 0..layout.n_states() {
        for j in 0..layout.dof() {
            z[layout.momentum_index(i, j)] = q_dot[(i, j)];
            z[layout.position_index(i, j)] = -p_dot[(i, j)];
        }
    }
    z
}

/// Runs the full two-step pipeline on a dataset.
pub fn fit_two_step(
    dataset: &Dataset,
    time_kernel: &KernelSpec,
    state_kernel: &KernelSpec,
    ridges: &Ridges,
) -> Result<(Interpolant, Interpolant, LearnedHamiltonian), TwoStepError> {
    if dataset.n_obs() == 0 {
        return Err(TwoStepError::NoObservations);
    }
    if !state_kernel.is_state_kernel() {
        return Err(TwoStepError::NotAStateKernel(state_kernel.family_name()));
    }
    let s_times = dataset.observed_times();
    let (q_obs, p_obs) = dataset.observed_values();
    let q_star = representer::fit_values(time_kernel, &s_times, &q_obs, ridges.lambda_q)?;
    let p_star = representer::fit_values(time_kernel, &s_times, &p_obs, ridges.lambda_p)?;

    let model = fit_hamiltonian_from_interpolants(
        &q_star,
        &p_star,
        &dataset.t_col,
        state_kernel,
        ridges.lambda1,
        ridges.lambda2,
    )?;
    Ok((q_star, p_star, model))
}

/// Second stage in isolation: reconstruct anchor states and derivative
/// targets from the interpolants on `times`, then solve the block-ridge
/// regression for the Hamiltonian coefficients.
pub fn fit_hamiltonian_from_interpolants(
    q_star: &Interpolant,
    p_star: &Interpolant,
    times: &[f64],
    state_kernel: &KernelSpec,
    lambda1: f64,
    lambda2: f64,
) -> Result<LearnedHamiltonian, TwoStepError> {
    let m = q_star.components();
    let layout = FunctionalLayout::new(times.len(), m);
    let states = states_from_interpolants(q_star, p_star, times);
    let q_dot = q_star.eval_derivative(times);
    let p_dot = p_star.eval_derivative(times);
    let z = stack_targets(&q_dot, &p_dot, layout);

    let gram = kernels::gram_derivative_functionals(state_kernel, &states, layout)?;
    let nm = layout.n_states() * layout.dof();
    let mut diag = DVector::zeros(layout.total());
    for i in 0..layout.total() {
        diag[i] = if i < nm { lambda1 } else { lambda2 };
    }
    let sys = RegularizedSystem::new(&gram, &Ridge::Diagonal(diag))?;
    let coefficients = sys.solve_vec(&z);
    LearnedHamiltonian::from_parts(
        *state_kernel,
        states,
        layout,
        coefficients,
        (lambda1, lambda2),
        sys.jitter(),
    )
}
