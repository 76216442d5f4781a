//! Joint recovery pipeline: latent time-derivative slack variables couple the
//! trajectory fits to the Hamiltonian fit through a reduced nonconvex
//! objective, minimized by L-BFGS from a warm start at the two-step output.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::benchmarks::Dataset;
use crate::kernels::{self, FunctionalLayout, KernelError, KernelSpec, PointSet};
use crate::linalg::{LinalgError, RegularizedSystem, Ridge};
use crate::optim;
use crate::representer::{self, Interpolant, RepresenterError};
use crate::two_step::{LearnedHamiltonian, TwoStepError};
use crate::Ridges;

pub use crate::optim::{
    LbfgsOptions as MinimizeOptions, LbfgsReport as MinimizeDiagnostics, Termination,
};

#[derive(Debug, Error)]
pub enum OneStepError {
    #[error("slack shape mismatch: expected {expected}, got {got}")]
    SlackShape { expected: String, got: String },
    #[error("state kernel required, got {0}")]
    NotAStateKernel(&'static str),
    #[error("objective not evaluable at the initial slack: {0}")]
    BadStart(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Representer(#[from] RepresenterError),
    #[error(transparent)]
    TwoStep(#[from] TwoStepError),
}

/// Latent slack estimates of the trajectory time-derivatives at the
/// collocation times, one row per time.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackVariables {
    pub q_dot: DMatrix<f64>,
    pub p_dot: DMatrix<f64>,
}

impl SlackVariables {
    pub fn zeros(n: usize, m: usize) -> Self {
        SlackVariables {
            q_dot: DMatrix::zeros(n, m),
            p_dot: DMatrix::zeros(n, m),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.q_dot.shape()
    }

    /// Flattens to the optimizer layout: `q_dot` entries state-major then
    /// `p_dot` entries state-major.
    pub fn flatten(&self, layout: FunctionalLayout) -> DVector<f64> {
        let mut out = DVector::zeros(layout.total());
        for i in 0..layout.n_states() {
            for j in 0..layout.dof() {
                out[layout.momentum_index(i, j)] = self.q_dot[(i, j)];
                out[layout.position_index(i, j)] = self.p_dot[(i, j)];
            }
        }
        out
    }

    pub fn unflatten(v: &DVector<f64>, layout: FunctionalLayout) -> Self {
        let (n, m) = (layout.n_states(), layout.dof());
        let mut slack = SlackVariables::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                slack.q_dot[(i, j)] = v[layout.momentum_index(i, j)];
                slack.p_dot[(i, j)] = v[layout.position_index(i, j)];
            }
        }
        slack
    }
}

/// Whether the gradient follows the dependence of the derivative-functional
/// Gram matrix on the reconstructed states (`Full`) or ignores it
/// (`FrozenState`, an approximation that keeps the objective exact).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Full,
    FrozenState,
}

/// Where the Hamiltonian-term anchor states come from: reconstructed from the
/// current slack through the cached propagation operators (the literal
/// objective), or pinned to a fixed set, which makes the problem convex
/// quadratic in the slack (used by tests and diagnostics).
#[derive(Debug, Clone)]
pub enum AnchorPolicy {
    Reconstructed,
    Pinned(PointSet),
}

/// The reduced problem with its per-run caches. The extended trajectory Gram
/// factors and the propagation operators depend only on the time sets, never
/// on the slack, so they are factored once.
pub struct OneStepProblem {
    s_times: Vec<f64>,
    t_times: Vec<f64>,
    q_obs: DMatrix<f64>,
    p_obs: DMatrix<f64>,
    time_kernel: KernelSpec,
    state_kernel: KernelSpec,
    ridge_q: f64,
    ridge_p: f64,
    ridge_h: f64,
    layout: FunctionalLayout,
    gradient_mode: GradientMode,
    anchor_policy: AnchorPolicy,
    chol_q: RegularizedSystem,
    chol_p: RegularizedSystem,
    /// `N×(N_obs+N)` operators mapping stacked (values; slack) right-hand
    /// sides to reconstructed trajectory values on the collocation grid.
    w_q: DMatrix<f64>,
    w_p: DMatrix<f64>,
}

impl OneStepProblem {
    pub fn new(
        dataset: &Dataset,
        time_kernel: &KernelSpec,
        state_kernel: &KernelSpec,
        ridges: &Ridges,
        gradient_mode: GradientMode,
    ) -> Result<Self, OneStepError> {
        let (q_obs, p_obs) = dataset.observed_values();
        Self::from_parts(
            dataset.observed_times(),
            q_obs,
            p_obs,
            dataset.t_col.clone(),
            time_kernel,
            state_kernel,
            (ridges.lambda_q, ridges.lambda_p, ridges.lambda),
            gradient_mode,
            AnchorPolicy::Reconstructed,
        )
    }

    /// Direct construction from raw pieces. `s_times` may be empty (pure
    /// physics regularization); times are used in the order given.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        s_times: Vec<f64>,
        q_obs: DMatrix<f64>,
        p_obs: DMatrix<f64>,
        t_times: Vec<f64>,
        time_kernel: &KernelSpec,
        state_kernel: &KernelSpec,
        (ridge_q, ridge_p, ridge_h): (f64, f64, f64),
        gradient_mode: GradientMode,
        anchor_policy: AnchorPolicy,
    ) -> Result<Self, OneStepError> {
        if !state_kernel.is_state_kernel() {
            return Err(OneStepError::NotAStateKernel(state_kernel.family_name()));
        }
        let m = q_obs.ncols().max(p_obs.ncols()).max(1);
        if q_obs.nrows() != s_times.len() || p_obs.nrows() != s_times.len() {
            return Err(OneStepError::SlackShape {
                expected: format!("{} observation rows", s_times.len()),
                got: format!("{}/{}", q_obs.nrows(), p_obs.nrows()),
            });
        }
        let layout = FunctionalLayout::new(t_times.len(), m);

        let gram_ext = representer::extended_gram(time_kernel, &s_times, &t_times)?;
        let chol_q = RegularizedSystem::new(&gram_ext, &Ridge::Scalar(ridge_q))?;
        let chol_p = RegularizedSystem::new(&gram_ext, &Ridge::Scalar(ridge_p))?;

        // evaluation operator of the extended expansion on the collocation
        // grid, one row per collocation time
        let ns = s_times.len();
        let nt = t_times.len();
        let mut eval_op = DMatrix::zeros(nt, ns + nt);
        for (i, &t) in t_times.iter().enumerate() {
            for (j, &s) in s_times.iter().enumerate() {
                eval_op[(i, j)] = time_kernel.eval_unchecked(&[s], &[t]);
            }
            for (l, &a) in t_times.iter().enumerate() {
                eval_op[(i, ns + l)] = representer::k10(time_kernel, a, t);
            }
        }
        let w_q = chol_q.solve(&eval_op.transpose()).transpose();
        let w_p = chol_p.solve(&eval_op.transpose()).transpose();

        Ok(OneStepProblem {
            s_times,
            t_times,
            q_obs,
            p_obs,
            time_kernel: *time_kernel,
            state_kernel: *state_kernel,
            ridge_q,
            ridge_p,
            ridge_h,
            layout,
            gradient_mode,
            anchor_policy,
            chol_q,
            chol_p,
            w_q,
            w_p,
        })
    }

    pub fn layout(&self) -> FunctionalLayout {
        self.layout
    }

    pub fn collocation_times(&self) -> &[f64] {
        &self.t_times
    }

    pub fn gradient_mode(&self) -> GradientMode {
        self.gradient_mode
    }

    fn check_slack(&self, slack: &SlackVariables) -> Result<(), OneStepError> {
        let want = (self.layout.n_states(), self.layout.dof());
        if slack.q_dot.shape() != want || slack.p_dot.shape() != want {
            return Err(OneStepError::SlackShape {
                expected: format!("{}×{}", want.0, want.1),
                got: format!("{}×{}", slack.q_dot.nrows(), slack.q_dot.ncols()),
            });
        }
        if slack
            .q_dot
            .iter()
            .chain(slack.p_dot.iter())
            .any(|v| !v.is_finite())
        {
            return Err(OneStepError::SlackShape {
                expected: "finite slack entries".into(),
                got: "non-finite entries".into(),
            });
        }
        Ok(())
    }

    fn stacked(&self, obs: &DMatrix<f64>, slack: &DMatrix<f64>) -> DMatrix<f64> {
        let ns = obs.nrows();
        let nt = slack.nrows();
        let m = slack.ncols();
        let mut u = DMatrix::zeros(ns + nt, m);
        u.rows_mut(0, ns).copy_from(obs);
        u.rows_mut(ns, nt).copy_from(slack);
        u
    }

    /// Reconstructed states on the collocation grid implied by the slack,
    /// one state per column.
    pub fn reconstruct_states(&self, slack: &SlackVariables) -> PointSet {
        let m = self.layout.dof();
        let q_hat = &self.w_q * self.stacked(&self.q_obs, &slack.q_dot);
        let p_hat = &self.w_p * self.stacked(&self.p_obs, &slack.p_dot);
        DMatrix::from_fn(2 * m, self.layout.n_states(), |r, c| {
            if r < m {
                q_hat[(c, r)]
            } else {
                p_hat[(c, r - m)]
            }
        })
    }

    fn anchor_states(&self, slack: &SlackVariables) -> PointSet {
        match &self.anchor_policy {
            AnchorPolicy::Reconstructed => self.reconstruct_states(slack),
            AnchorPolicy::Pinned(states) => states.clone(),
        }
    }

    fn hamiltonian_targets(&self, slack: &SlackVariables) -> DVector<f64> {
        let mut v = DVector::zeros(self.layout.total());
        for i in 0..self.layout.n_states() {
            for j in 0..self.layout.dof() {
                v[self.layout.momentum_index(i, j)] = slack.q_dot[(i, j)];
                v[self.layout.position_index(i, j)] = -slack.p_dot[(i, j)];
            }
        }
        v
    }

    /// The three quadratic-form terms of the reduced objective: the two
    /// trajectory terms and the Hamiltonian term whose Gram matrix is
    /// assembled at the current anchor states.
    pub fn objective_terms(&self, slack: &SlackVariables) -> Result<(f64, f64, f64), OneStepError> {
        self.check_slack(slack)?;
        let u_q = self.stacked(&self.q_obs, &slack.q_dot);
        let u_p = self.stacked(&self.p_obs, &slack.p_dot);
        let term_q = self.chol_q.solve(&u_q).dot(&u_q);
        let term_p = self.chol_p.solve(&u_p).dot(&u_p);

        let states = self.anchor_states(slack);
        let gram = kernels::gram_derivative_functionals(&self.state_kernel, &states, self.layout)?;
        let sys = RegularizedSystem::new(&gram, &Ridge::Scalar(self.ridge_h))?;
        let v = self.hamiltonian_targets(slack);
        let term_h = sys.solve_vec(&v).dot(&v);
        Ok((term_q, term_p, term_h))
    }

    pub fn objective(&self, slack: &SlackVariables) -> Result<f64, OneStepError> {
        let (a, b, c) = self.objective_terms(slack)?;
        Ok(a + b + c)
    }

    /// Objective and its gradient with respect to the flattened slack. The
    /// trajectory terms and the direct slack path of the Hamiltonian term are
    /// analytic; in [`GradientMode::Full`] the chain path through the anchor
    /// states of the Gram matrix is included.
    pub fn objective_and_gradient(
        &self,
        slack: &SlackVariables,
    ) -> Result<(f64, DVector<f64>), OneStepError> {
        self.check_slack(slack)?;
        let (n, m) = (self.layout.n_states(), self.layout.dof());
        let ns = self.s_times.len();

        let u_q = self.stacked(&self.q_obs, &slack.q_dot);
        let u_p = self.stacked(&self.p_obs, &slack.p_dot);
        let x_q = self.chol_q.solve(&u_q);
        let x_p = self.chol_p.solve(&u_p);
        let term_q = x_q.dot(&u_q);
        let term_p = x_p.dot(&u_p);

        let states = self.anchor_states(slack);
        let gram = kernels::gram_derivative_functionals(&self.state_kernel, &states, self.layout)?;
        let sys = RegularizedSystem::new(&gram, &Ridge::Scalar(self.ridge_h))?;
        let v = self.hamiltonian_targets(slack);
        let beta = sys.solve_vec(&v);
        let term_h = v.dot(&beta);

        let mut grad_q = x_q.rows(ns, n) * 2.0;
        let mut grad_p = x_p.rows(ns, n) * 2.0;
        for i in 0..n {
            for j in 0..m {
                grad_q[(i, j)] += 2.0 * beta[self.layout.momentum_index(i, j)];
                grad_p[(i, j)] -= 2.0 * beta[self.layout.position_index(i, j)];
            }
        }

        let follow_states = matches!(self.gradient_mode, GradientMode::Full)
            && matches!(self.anchor_policy, AnchorPolicy::Reconstructed);
        if follow_states {
            // weights of the derivative functionals at each anchor state
            let mut weights = vec![0.0; 2 * m * n];
            for i in 0..n {
                for j in 0..m {
                    weights[2 * m * i + j] = beta[self.layout.position_index(i, j)];
                    weights[2 * m * i + m + j] = beta[self.layout.momentum_index(i, j)];
                }
            }
            // gradient of the Hamiltonian term with respect to each anchor
            // state, using the symmetry of the Gram matrix in its two anchors
            let mut state_grad = DMatrix::zeros(2 * m, n);
            let mut contrib = vec![0.0; 2 * m];
            for i in 0..n {
                let wi = &weights[2 * m * i..2 * m * (i + 1)];
                let yi = kernels::point(&states, i);
                for jj in 0..n {
                    let wj = &weights[2 * m * jj..2 * m * (jj + 1)];
                    self.state_kernel.hessian_weighted_grad_into(
                        yi,
                        kernels::point(&states, jj),
                        wi,
                        wj,
                        &mut contrib,
                    );
                    for r in 0..2 * m {
                        state_grad[(r, i)] -= 2.0 * contrib[r];
                    }
                }
            }
            // chain through the linear reconstruction operators
            let w_q_tail = self.w_q.columns(ns, n);
            let w_p_tail = self.w_p.columns(ns, n);
            let g_states_q = DMatrix::from_fn(n, m, |r, c| state_grad[(c, r)]);
            let g_states_p = DMatrix::from_fn(n, m, |r, c| state_grad[(m + c, r)]);
            grad_q += w_q_tail.transpose() * g_states_q;
            grad_p += w_p_tail.transpose() * g_states_p;
        }

        let grad = SlackVariables {
            q_dot: grad_q,
            p_dot: grad_p,
        }
        .flatten(self.layout);
        Ok((term_q + term_p + term_h, grad))
    }

    /// Gradient of the reduced objective with respect to the flattened slack.
    pub fn reduced_gradient(&self, slack: &SlackVariables) -> Result<DVector<f64>, OneStepError> {
        Ok(self.objective_and_gradient(slack)?.1)
    }
}

/// Slack initialization from the two-step interpolants' analytic derivatives
/// at the collocation times.
pub fn warm_start(q_star: &Interpolant, p_star: &Interpolant, t_times: &[f64]) -> SlackVariables {
    SlackVariables {
        q_dot: q_star.eval_derivative(t_times),
        p_dot: p_star.eval_derivative(t_times),
    }
}

/// Minimizes the reduced objective from `init`. Line-search failure returns
/// the best iterate with the warning flag set rather than erroring; an
/// objective that cannot be evaluated at `init` is an error.
pub fn minimize(
    problem: &OneStepProblem,
    init: SlackVariables,
    opts: &MinimizeOptions,
) -> Result<(SlackVariables, MinimizeDiagnostics), OneStepError> {
    problem
        .objective(&init)
        .map_err(|e| OneStepError::BadStart(e.to_string()))?;
    let x0 = init.flatten(problem.layout());
    let mut closure = |x: &DVector<f64>, g: &mut DVector<f64>| -> f64 {
        let slack = SlackVariables::unflatten(x, problem.layout());
        match problem.objective_and_gradient(&slack) {
            Ok((f, grad)) => {
                g.copy_from(&grad);
                f
            }
            Err(_) => {
                g.fill(0.0);
                f64::INFINITY
            }
        }
    };
    let (x, report) = optim::minimize(&mut closure, x0, opts);
    debug_assert!(report.final_value <= report.initial_value * (1.0 + 1e-12) + 1e-300);
    Ok((SlackVariables::unflatten(&x, problem.layout()), report))
}

/// Extracts the fitted trajectory interpolants and the learned Hamiltonian at
/// the given slack.
pub fn extract_model(
    problem: &OneStepProblem,
    slack: &SlackVariables,
) -> Result<(Interpolant, Interpolant, LearnedHamiltonian), OneStepError> {
    problem.check_slack(slack)?;
    let q_star = representer::fit_values_and_derivatives(
        &problem.time_kernel,
        &problem.s_times,
        &problem.q_obs,
        &problem.t_times,
        &slack.q_dot,
        problem.ridge_q,
    )?;
    let p_star = representer::fit_values_and_derivatives(
        &problem.time_kernel,
        &problem.s_times,
        &problem.p_obs,
        &problem.t_times,
        &slack.p_dot,
        problem.ridge_p,
    )?;
    let states = problem.anchor_states(slack);
    let gram =
        kernels::gram_derivative_functionals(&problem.state_kernel, &states, problem.layout)?;
    let sys = RegularizedSystem::new(&gram, &Ridge::Scalar(problem.ridge_h))?;
    let coefficients = sys.solve_vec(&problem.hamiltonian_targets(slack));
    let model = LearnedHamiltonian::from_parts(
        problem.state_kernel,
        states,
        problem.layout,
        coefficients,
        (problem.ridge_h, problem.ridge_h),
        sys.jitter(),
    )?;
    Ok((q_star, p_star, model))
}
