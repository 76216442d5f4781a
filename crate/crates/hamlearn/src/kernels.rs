//! Positive-definite kernel families with analytic value, gradient and
//! cross-Hessian evaluation, plus assembly of plain and derivative-functional
//! Gram matrices.
//!
//! Point sets are dense matrices with one point per column, so a state is a
//! contiguous slice. State vectors are laid out `(q_1..q_m, p_1..p_m)`.
//! All derivatives are closed-form; the finite-difference oracles used to
//! validate them live in [`crate::checks`] and the unit tests.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: usize,
    },
    #[error("invalid kernel hyperparameter: {0}")]
    InvalidHyperparameter(String),
}

/// Declarative description of a kernel: family plus hyperparameters.
///
/// `gaussian_time` acts on scalar times; the other three act on full
/// `2m`-dimensional states. The polynomial families use `offset` as the
/// additive constant inside the power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `exp(-(t-t')^2 / 2θ^2)` on scalar times.
    GaussianTime { lengthscale: f64 },
    /// `exp(-‖x-x'‖^2 / 2θ^2)` on the concatenated state, equal to the
    /// product of per-block Gaussians with shared lengthscale.
    GaussianState { lengthscale: f64 },
    /// `(q·q' + c)^d + (p·p' + c)^d`.
    SeparablePolynomial { degree: u32, offset: f64 },
    /// `exp(-‖q-q'‖^2 / 2θ^2) + (p·p' + c)^d`.
    AdditivePolyGaussian {
        lengthscale: f64,
        degree: u32,
        offset: f64,
    },
}

impl KernelSpec {
    pub fn gaussian_time(lengthscale: f64) -> Result<Self, KernelError> {
        let spec = KernelSpec::GaussianTime { lengthscale };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian_state(lengthscale: f64) -> Result<Self, KernelError> {
        let spec = KernelSpec::GaussianState { lengthscale };
        spec.validate()?;
        Ok(spec)
    }

    pub fn separable_polynomial(degree: u32, offset: f64) -> Result<Self, KernelError> {
        let spec = KernelSpec::SeparablePolynomial { degree, offset };
        spec.validate()?;
        Ok(spec)
    }

    pub fn additive_poly_gaussian(
        lengthscale: f64,
        degree: u32,
        offset: f64,
    ) -> Result<Self, KernelError> {
        let spec = KernelSpec::AdditivePolyGaussian {
            lengthscale,
            degree,
            offset,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Rejects degenerate hyperparameters (θ ≤ 0, d < 1). Needed after serde
    /// deserialization, which bypasses the checked constructors.
    pub fn validate(&self) -> Result<(), KernelError> {
        let check_theta = |theta: f64| {
            if theta > 0.0 && theta.is_finite() {
                Ok(())
            } else {
                Err(KernelError::InvalidHyperparameter(format!(
                    "lengthscale must be positive and finite, got {theta}"
                )))
            }
        };
        let check_degree = |d: u32| {
            if d >= 1 {
                Ok(())
            } else {
                Err(KernelError::InvalidHyperparameter(
                    "polynomial degree must be at least 1".into(),
                ))
            }
        };
        let check_offset = |c: f64| {
            if c.is_finite() {
                Ok(())
            } else {
                Err(KernelError::InvalidHyperparameter(
                    "polynomial offset must be finite".into(),
                ))
            }
        };
        match *self {
            KernelSpec::GaussianTime { lengthscale } => check_theta(lengthscale),
            KernelSpec::GaussianState { lengthscale } => check_theta(lengthscale),
            KernelSpec::SeparablePolynomial { degree, offset } => {
                check_degree(degree)?;
                check_offset(offset)
            }
            KernelSpec::AdditivePolyGaussian {
                lengthscale,
                degree,
                offset,
            } => {
                check_theta(lengthscale)?;
                check_degree(degree)?;
                check_offset(offset)
            }
        }
    }

    /// Token used in config files and result CSVs.
    pub fn family_name(&self) -> &'static str {
        match self {
            KernelSpec::GaussianTime { .. } => "gaussian_time",
            KernelSpec::GaussianState { .. } => "gaussian_state",
            KernelSpec::SeparablePolynomial { .. } => "separable_polynomial",
            KernelSpec::AdditivePolyGaussian { .. } => "additive_poly_gaussian",
        }
    }

    pub fn is_state_kernel(&self) -> bool {
        !matches!(self, KernelSpec::GaussianTime { .. })
    }

    fn check_point(&self, x: &[f64], context: &'static str) -> Result<(), KernelError> {
        match self {
            KernelSpec::GaussianTime { .. } => {
                if x.len() != 1 {
                    return Err(KernelError::DimensionMismatch {
                        context,
                        expected: "1 (scalar time)".into(),
                        got: x.len(),
                    });
                }
            }
            _ => {
                if x.len() < 2 || x.len() % 2 != 0 {
                    return Err(KernelError::DimensionMismatch {
                        context,
                        expected: "even state dimension 2m".into(),
                        got: x.len(),
                    });
                }
            }
        }
        Ok(())
    }

    fn check_pair(&self, x: &[f64], y: &[f64], context: &'static str) -> Result<(), KernelError> {
        self.check_point(x, context)?;
        if x.len() != y.len() {
            return Err(KernelError::DimensionMismatch {
                context,
                expected: x.len().to_string(),
                got: y.len(),
            });
        }
        Ok(())
    }

    /// Kernel value `K(x, x')`; symmetric in its arguments.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        self.check_pair(x, y, "eval")?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Gradient of `K` with respect to the first argument.
    pub fn grad_first(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, KernelError> {
        self.check_pair(x, y, "grad_first")?;
        let mut out = vec![0.0; x.len()];
        self.grad_first_into(x, y, &mut out);
        Ok(out)
    }

    /// Matrix of second derivatives `[∂²K/∂x_a ∂x'_b]`.
    pub fn cross_hessian(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>, KernelError> {
        self.check_pair(x, y, "cross_hessian")?;
        let n = x.len();
        let mut out = DMatrix::zeros(n, n);
        self.cross_hessian_into(x, y, &mut out);
        Ok(out)
    }

    /// `Hᵀ w` where `H` is the cross-Hessian at `(x, x')`: the gradient in
    /// `x'` of the directional first-argument derivative `w·∇_x K`.
    pub fn cross_hessian_apply_first(
        &self,
        x: &[f64],
        y: &[f64],
        w: &[f64],
    ) -> Result<Vec<f64>, KernelError> {
        self.check_pair(x, y, "cross_hessian_apply_first")?;
        if w.len() != x.len() {
            return Err(KernelError::DimensionMismatch {
                context: "cross_hessian_apply_first weights",
                expected: x.len().to_string(),
                got: w.len(),
            });
        }
        let mut out = vec![0.0; x.len()];
        self.hessian_apply_first_into(x, y, w, &mut out);
        Ok(out)
    }

    /// Gradient in the first argument of the bilinear form `w1ᵀ H(x,x') w2`,
    /// `H` the cross-Hessian. This is the third-derivative contraction used
    /// when differentiating derivative-functional Gram matrices through
    /// their anchor states.
    pub fn hessian_weighted_grad_first(
        &self,
        x: &[f64],
        y: &[f64],
        w1: &[f64],
        w2: &[f64],
    ) -> Result<Vec<f64>, KernelError> {
        self.check_pair(x, y, "hessian_weighted_grad_first")?;
        if w1.len() != x.len() || w2.len() != x.len() {
            return Err(KernelError::DimensionMismatch {
                context: "hessian_weighted_grad_first weights",
                expected: x.len().to_string(),
                got: w1.len().max(w2.len()),
            });
        }
        let mut out = vec![0.0; x.len()];
        self.hessian_weighted_grad_into(x, y, w1, w2, &mut out);
        Ok(out)
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::GaussianTime { lengthscale }
            | KernelSpec::GaussianState { lengthscale } => gaussian_eval(lengthscale, x, y),
            KernelSpec::SeparablePolynomial { degree, offset } => {
                let m = x.len() / 2;
                poly_eval(degree, offset, &x[..m], &y[..m])
                    + poly_eval(degree, offset, &x[m..], &y[m..])
            }
            KernelSpec::AdditivePolyGaussian {
                lengthscale,
                degree,
                offset,
            } => {
                let m = x.len() / 2;
                gaussian_eval(lengthscale, &x[..m], &y[..m])
                    + poly_eval(degree, offset, &x[m..], &y[m..])
            }
        }
    }

    pub(crate) fn grad_first_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match *self {
            KernelSpec::GaussianTime { lengthscale }
            | KernelSpec::GaussianState { lengthscale } => {
                gaussian_grad_first(lengthscale, x, y, out);
            }
            KernelSpec::SeparablePolynomial { degree, offset } => {
                let m = x.len() / 2;
                poly_grad_first(degree, offset, &x[..m], &y[..m], &mut out[..m]);
                poly_grad_first(degree, offset, &x[m..], &y[m..], &mut out[m..]);
            }
            KernelSpec::AdditivePolyGaussian {
                lengthscale,
                degree,
                offset,
            } => {
                let m = x.len() / 2;
                gaussian_grad_first(lengthscale, &x[..m], &y[..m], &mut out[..m]);
                poly_grad_first(degree, offset, &x[m..], &y[m..], &mut out[m..]);
            }
        }
    }

    pub(crate) fn cross_hessian_into(&self, x: &[f64], y: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        match *self {
            KernelSpec::GaussianTime { lengthscale }
            | KernelSpec::GaussianState { lengthscale } => {
                gaussian_cross_hessian(lengthscale, x, y, 0, out);
            }
            KernelSpec::SeparablePolynomial { degree, offset } => {
                let m = x.len() / 2;
                poly_cross_hessian(degree, offset, &x[..m], &y[..m], 0, out);
                poly_cross_hessian(degree, offset, &x[m..], &y[m..], m, out);
            }
            KernelSpec::AdditivePolyGaussian {
                lengthscale,
                degree,
                offset,
            } => {
                let m = x.len() / 2;
                gaussian_cross_hessian(lengthscale, &x[..m], &y[..m], 0, out);
                poly_cross_hessian(degree, offset, &x[m..], &y[m..], m, out);
            }
        }
    }

    pub(crate) fn hessian_apply_first_into(
        &self,
        x: &[f64],
        y: &[f64],
        w: &[f64],
        out: &mut [f64],
    ) {
        match *self {
            KernelSpec::GaussianTime { lengthscale }
            | KernelSpec::GaussianState { lengthscale } => {
                gaussian_hessian_apply_first(lengthscale, x, y, w, out);
            }
            KernelSpec::SeparablePolynomial { degree, offset } => {
                let m = x.len() / 2;
                poly_hessian_apply_first(degree, offset, &x[..m], &y[..m], &w[..m], &mut out[..m]);
                poly_hessian_apply_first(degree, offset, &x[m..], &y[m..], &w[m..], &mut out[m..]);
            }
            KernelSpec::AdditivePolyGaussian {
                lengthscale,
                degree,
                offset,
            } => {
                let m = x.len() / 2;
                gaussian_hessian_apply_first(lengthscale, &x[..m], &y[..m], &w[..m], &mut out[..m]);
                poly_hessian_apply_first(degree, offset, &x[m..], &y[m..], &w[m..], &mut out[m..]);
            }
        }
    }

    pub(crate) fn hessian_weighted_grad_into(
        &self,
        x: &[f64],
        y: &[f64],
        w1: &[f64],
        w2: &[f64],
        out: &mut [f64],
    ) {
        match *self {
            KernelSpec::GaussianTime { lengthscale }
            | KernelSpec::GaussianState { lengthscale } => {
                gaussian_hessian_weighted_grad(lengthscale, x, y, w1, w2, out);
            }
            KernelSpec::SeparablePolynomial { degree, offset } => {
                let m = x.len() / 2;
                poly_hessian_weighted_grad(
                    degree,
                    offset,
                    &x[..m],
                    &y[..m],
                    &w1[..m],
                    &w2[..m],
                    &mut out[..m],
                );
                poly_hessian_weighted_grad(
                    degree,
                    offset,
                    &x[m..],
                    &y[m..],
                    &w1[m..],
                    &w2[m..],
                    &mut out[m..],
                );
            }
            KernelSpec::AdditivePolyGaussian {
                lengthscale,
                degree,
                offset,
            } => {
                let m = x.len() / 2;
                gaussian_hessian_weighted_grad(
                    lengthscale,
                    &x[..m],
                    &y[..m],
                    &w1[..m],
                    &w2[..m],
                    &mut out[..m],
                );
                poly_hessian_weighted_grad(
                    degree,
                    offset,
                    &x[m..],
                    &y[m..],
                    &w1[m..],
                    &w2[m..],
                    &mut out[m..],
                );
            }
        }
    }
}

// --- closed forms per family -------------------------------------------------

fn gaussian_eval(theta: f64, x: &[f64], y: &[f64]) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-sq / (2.0 * theta * theta)).exp()
}

fn gaussian_grad_first(theta: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
    let k = gaussian_eval(theta, x, y);
    let t2 = theta * theta;
    for (o, (a, b)) in out.iter_mut().zip(x.iter().zip(y)) {
        *o = -k * (a - b) / t2;
    }
}

fn gaussian_cross_hessian(theta: f64, x: &[f64], y: &[f64], off: usize, out: &mut DMatrix<f64>) {
    let k = gaussian_eval(theta, x, y);
    let t2 = theta * theta;
    let t4 = t2 * t2;
    for a in 0..x.len() {
        let da = x[a] - y[a];
        for b in 0..x.len() {
            let db = x[b] - y[b];
            let kron = if a == b { 1.0 / t2 } else { 0.0 };
            out[(off + a, off + b)] = k * (kron - da * db / t4);
        }
    }
}

fn gaussian_hessian_apply_first(theta: f64, x: &[f64], y: &[f64], w: &[f64], out: &mut [f64]) {
    // (Hᵀw)_b = K (w_b/θ² − (w·d) d_b/θ⁴)
    let k = gaussian_eval(theta, x, y);
    let t2 = theta * theta;
    let t4 = t2 * t2;
    let wd: f64 = w
        .iter()
        .zip(x.iter().zip(y))
        .map(|(w, (a, b))| w * (a - b))
        .sum();
    for b in 0..x.len() {
        let db = x[b] - y[b];
        out[b] = k * (w[b] / t2 - wd * db / t4);
    }
}

fn gaussian_hessian_weighted_grad(
    theta: f64,
    x: &[f64],
    y: &[f64],
    w1: &[f64],
    w2: &[f64],
    out: &mut [f64],
) {
    // ∇_x [w1ᵀ H w2] with H the Gaussian cross-Hessian:
    //   K [ −d (w1·w2)/θ⁴ + d (w1·d)(w2·d)/θ⁶ − (w1 (w2·d) + w2 (w1·d))/θ⁴ ]
    let k = gaussian_eval(theta, x, y);
    let t2 = theta * theta;
    let t4 = t2 * t2;
    let t6 = t4 * t2;
    let mut w12 = 0.0;
    let mut w1d = 0.0;
    let mut w2d = 0.0;
    for i in 0..x.len() {
        let d = x[i] - y[i];
        w12 += w1[i] * w2[i];
        w1d += w1[i] * d;
        w2d += w2[i] * d;
    }
    for i in 0..x.len() {
        let d = x[i] - y[i];
        out[i] = k * (-d * w12 / t4 + d * w1d * w2d / t6 - (w1[i] * w2d + w2[i] * w1d) / t4);
    }
}

fn poly_eval(degree: u32, offset: f64, x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot + offset).powi(degree as i32)
}

fn poly_grad_first(degree: u32, offset: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
    let d = degree as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let base = (dot + offset).powi(degree as i32 - 1);
    for (o, b) in out.iter_mut().zip(y) {
        *o = d * base * b;
    }
}

fn poly_cross_hessian(
    degree: u32,
    offset: f64,
    x: &[f64],
    y: &[f64],
    off: usize,
    out: &mut DMatrix<f64>,
) {
    let d = degree as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let lin = d * (dot + offset).powi(degree as i32 - 1);
    let quad = if degree >= 2 {
        d * (d - 1.0) * (dot + offset).powi(degree as i32 - 2)
    } else {
        0.0
    };
    for a in 0..x.len() {
        for b in 0..x.len() {
            let kron = if a == b { lin } else { 0.0 };
            out[(off + a, off + b)] = quad * y[a] * x[b] + kron;
        }
    }
}

fn poly_hessian_apply_first(
    degree: u32,
    offset: f64,
    x: &[f64],
    y: &[f64],
    w: &[f64],
    out: &mut [f64],
) {
    // (Hᵀw)_b = d(d−1)(u+c)^{d−2} (w·y) x_b + d(u+c)^{d−1} w_b
    let d = degree as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let lin = d * (dot + offset).powi(degree as i32 - 1);
    let quad = if degree >= 2 {
        d * (d - 1.0) * (dot + offset).powi(degree as i32 - 2)
    } else {
        0.0
    };
    let wy: f64 = w.iter().zip(y).map(|(w, b)| w * b).sum();
    for b in 0..x.len() {
        out[b] = quad * wy * x[b] + lin * w[b];
    }
}

fn poly_hessian_weighted_grad(
    degree: u32,
    offset: f64,
    x: &[f64],
    y: &[f64],
    w1: &[f64],
    w2: &[f64],
    out: &mut [f64],
) {
    // ∇_x [w1ᵀ H w2] =
    //   d(d−1)(d−2)(u+c)^{d−3} (w1·y)(w2·x) y
    // + d(d−1)(u+c)^{d−2} [(w1·y) w2 + (w1·w2) y]
    let d = degree as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let c2 = if degree >= 2 {
        d * (d - 1.0) * (dot + offset).powi(degree as i32 - 2)
    } else {
        0.0
    };
    let c3 = if degree >= 3 {
        d * (d - 1.0) * (d - 2.0) * (dot + offset).powi(degree as i32 - 3)
    } else {
        0.0
    };
    let mut w1y = 0.0;
    let mut w2x = 0.0;
    let mut w12 = 0.0;
    for i in 0..x.len() {
        w1y += w1[i] * y[i];
        w2x += w2[i] * x[i];
        w12 += w1[i] * w2[i];
    }
    for i in 0..x.len() {
        out[i] = c3 * w1y * w2x * y[i] + c2 * (w1y * w2[i] + w12 * y[i]);
    }
}

// --- derivative-functional layout ---------------------------------------------

/// Index convention for the stacked derivative functionals at the collocation
/// states: the first `N·m` entries are momentum derivatives `∂/∂p_j`, the
/// second `N·m` are position derivatives `∂/∂q_j`, each block state-major
/// then component-minor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FunctionalLayout {
    n_states: usize,
    dof: usize,
}

impl FunctionalLayout {
    pub fn new(n_states: usize, dof: usize) -> Self {
        FunctionalLayout { n_states, dof }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn total(&self) -> usize {
        2 * self.n_states * self.dof
    }

    pub fn momentum_index(&self, state: usize, comp: usize) -> usize {
        state * self.dof + comp
    }

    pub fn position_index(&self, state: usize, comp: usize) -> usize {
        self.n_states * self.dof + state * self.dof + comp
    }

    /// Maps a functional index to `(state, component)` where the component
    /// indexes the `(q, p)` state layout: `m + j` for momentum functionals,
    /// `j` for position functionals.
    pub fn state_component(&self, idx: usize) -> (usize, usize) {
        let nm = self.n_states * self.dof;
        if idx < nm {
            (idx / self.dof, self.dof + idx % self.dof)
        } else {
            let r = idx - nm;
            (r / self.dof, r % self.dof)
        }
    }
}

// --- Gram assembly --------------------------------------------------------------

/// One point per column.
pub type PointSet = DMatrix<f64>;

/// Builds a 1×n point set from scalar times.
pub fn times_as_points(times: &[f64]) -> PointSet {
    DMatrix::from_row_slice(1, times.len(), times)
}

pub(crate) fn point(set: &PointSet, i: usize) -> &[f64] {
    let n = set.nrows();
    &set.as_slice()[i * n..(i + 1) * n]
}

/// Plain Gram matrix: entry `(i, j) = K(X_i, Y_j)`.
pub fn gram(spec: &KernelSpec, xs: &PointSet, ys: &PointSet) -> Result<DMatrix<f64>, KernelError> {
    let same = std::ptr::eq(xs, ys) || xs == ys;
    let (nx, ny) = (xs.ncols(), ys.ncols());
    let mut out = DMatrix::zeros(nx, ny);
    if nx == 0 || ny == 0 {
        return Ok(out);
    }
    spec.check_pair(point(xs, 0), point(ys, 0), "gram")?;
    if same {
        for i in 0..nx {
            for j in i..ny {
                let v = spec.eval_unchecked(point(xs, i), point(ys, j));
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
    } else {
        for i in 0..nx {
            for j in 0..ny {
                out[(i, j)] = spec.eval_unchecked(point(xs, i), point(ys, j));
            }
        }
    }
    Ok(out)
}

/// Gram matrix of the stacked derivative functionals: the 2×2 block matrix of
/// second kernel derivatives over all state pairs, in [`FunctionalLayout`]
/// ordering. Symmetric by construction.
pub fn gram_derivative_functionals(
    spec: &KernelSpec,
    states: &PointSet,
    layout: FunctionalLayout,
) -> Result<DMatrix<f64>, KernelError> {
    let n = states.ncols();
    let m = layout.dof();
    if !spec.is_state_kernel() {
        return Err(KernelError::DimensionMismatch {
            context: "gram_derivative_functionals",
            expected: "state kernel family".into(),
            got: 1,
        });
    }
    if n == 0 || n != layout.n_states() {
        return Err(KernelError::DimensionMismatch {
            context: "gram_derivative_functionals states",
            expected: format!("{} nonzero states", layout.n_states()),
            got: n,
        });
    }
    if states.nrows() != 2 * m {
        return Err(KernelError::DimensionMismatch {
            context: "gram_derivative_functionals state dim",
            expected: (2 * m).to_string(),
            got: states.nrows(),
        });
    }
    spec.check_point(point(states, 0), "gram_derivative_functionals")?;

    let mut out = DMatrix::zeros(layout.total(), layout.total());
    let mut hess = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..n {
        for j in i..n {
            spec.cross_hessian_into(point(states, i), point(states, j), &mut hess);
            for jc in 0..m {
                for kc in 0..m {
                    let rows = [
                        (layout.momentum_index(i, jc), m + jc),
                        (layout.position_index(i, jc), jc),
                    ];
                    let cols = [
                        (layout.momentum_index(j, kc), m + kc),
                        (layout.position_index(j, kc), kc),
                    ];
                    for &(r, a) in &rows {
                        for &(c, b) in &cols {
                            let v = hess[(a, b)];
                            out[(r, c)] = v;
                            out[(c, r)] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Vector of first kernel derivatives `∂_a K(y_i, x)` over all anchor states
/// and components, in [`FunctionalLayout`] ordering.
pub fn cross_derivative_functionals(
    spec: &KernelSpec,
    states: &PointSet,
    layout: FunctionalLayout,
    x: &[f64],
) -> Result<DVector<f64>, KernelError> {
    let n = states.ncols();
    let m = layout.dof();
    if n != layout.n_states() || n == 0 {
        return Err(KernelError::DimensionMismatch {
            context: "cross_derivative_functionals states",
            expected: format!("{} nonzero states", layout.n_states()),
            got: n,
        });
    }
    spec.check_pair(point(states, 0), x, "cross_derivative_functionals")?;
    let mut out = DVector::zeros(layout.total());
    let mut grad = vec![0.0; 2 * m];
    for i in 0..n {
        spec.grad_first_into(point(states, i), x, &mut grad);
        for jc in 0..m {
            out[layout.momentum_index(i, jc)] = grad[m + jc];
            out[layout.position_index(i, jc)] = grad[jc];
        }
    }
    Ok(out)
}
