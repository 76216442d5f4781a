//! Kernel interpolants and regressors for trajectory components: fitting from
//! values (and optionally first derivatives), evaluation, and analytic
//! time-derivative evaluation.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::kernels::{self, KernelError, KernelSpec};
use crate::linalg::{LinalgError, RegularizedSystem, Ridge};

/// Times closer than this are rejected as duplicate anchors.
const DUPLICATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RepresenterError {
    #[error("anchor times {0} and {1} are closer than the duplicate tolerance")]
    DuplicateAnchors(f64, f64),
    #[error("need at least one value anchor")]
    EmptyAnchorSet,
    #[error("value rows ({values}) do not match anchor count ({anchors})")]
    ShapeMismatch { anchors: usize, values: usize },
    #[error("time kernel must act on scalar times, got {0}")]
    NotATimeKernel(&'static str),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A fitted kernel expansion for one trajectory block (all `m` components
/// share the anchor set and factorization). Anchors are point evaluations at
/// `value_anchors` plus, for joint value/derivative fits, first-derivative
/// evaluations at `derivative_anchors`.
#[derive(Debug, Clone)]
pub struct Interpolant {
    kernel: KernelSpec,
    value_anchors: Vec<f64>,
    derivative_anchors: Vec<f64>,
    coefficients: DMatrix<f64>,
    ridge: f64,
    jitter: f64,
}

fn check_time_kernel(kernel: &KernelSpec) -> Result<(), RepresenterError> {
    if kernel.is_state_kernel() {
        Err(RepresenterError::NotATimeKernel(kernel.family_name()))
    } else {
        Ok(())
    }
}

/// Sorts `(times, rows)` jointly by time and rejects near-duplicate times.
fn sorted_anchor_rows(
    times: &[f64],
    values: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>), RepresenterError> {
    if values.nrows() != times.len() {
        return Err(RepresenterError::ShapeMismatch {
            anchors: times.len(),
            values: values.nrows(),
        });
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    for pair in sorted.windows(2) {
        if (pair[1] - pair[0]).abs() < DUPLICATE_TOLERANCE {
            return Err(RepresenterError::DuplicateAnchors(pair[0], pair[1]));
        }
    }
    let mut rows = DMatrix::zeros(values.nrows(), values.ncols());
    for (dst, &src) in order.iter().enumerate() {
        rows.set_row(dst, &values.row(src));
    }
    Ok((sorted, rows))
}

// 1-D kernel derivative helpers. `k10` differentiates the first argument,
// `k01` the second, `k11` both.
pub(crate) fn k10(kernel: &KernelSpec, s: f64, t: f64) -> f64 {
    let mut out = [0.0];
    kernel.grad_first_into(&[s], &[t], &mut out);
    out[0]
}

fn k01(kernel: &KernelSpec, s: f64, t: f64) -> f64 {
    k10(kernel, t, s)
}

fn k11(kernel: &KernelSpec, s: f64, t: f64) -> f64 {
    let mut out = DMatrix::zeros(1, 1);
    kernel.cross_hessian_into(&[s], &[t], &mut out);
    out[(0, 0)]
}

/// Gram matrix of the extended anchor set: value functionals at `s`, first
/// derivative functionals at `t`, as the symmetric block matrix
/// `[K(S,S), ∂₂K(S,T); ∂₁K(T,S), ∂₁∂₂K(T,T)]`.
pub fn extended_gram(
    kernel: &KernelSpec,
    s: &[f64],
    t: &[f64],
) -> Result<DMatrix<f64>, RepresenterError> {
    check_time_kernel(kernel)?;
    let (ns, nt) = (s.len(), t.len());
    let mut g = DMatrix::zeros(ns + nt, ns + nt);
    for i in 0..ns {
        for j in i..ns {
            let v = kernel.eval(&[s[i]], &[s[j]])?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    for i in 0..ns {
        for l in 0..nt {
            let v = k01(kernel, s[i], t[l]);
            g[(i, ns + l)] = v;
            g[(ns + l, i)] = v;
        }
    }
    for l in 0..nt {
        for r in l..nt {
            let v = k11(kernel, t[l], t[r]);
            g[(ns + l, ns + r)] = v;
            g[(ns + r, ns + l)] = v;
        }
    }
    Ok(g)
}

/// Minimum-norm (ridge-regularized) fit through values at `times`.
pub fn fit_values(
    kernel: &KernelSpec,
    times: &[f64],
    values: &DMatrix<f64>,
    ridge: f64,
) -> Result<Interpolant, RepresenterError> {
    check_time_kernel(kernel)?;
    if times.is_empty() {
        return Err(RepresenterError::EmptyAnchorSet);
    }
    let (anchors, rows) = sorted_anchor_rows(times, values)?;
    let pts = kernels::times_as_points(&anchors);
    let g = kernels::gram(kernel, &pts, &pts)?;
    let sys = RegularizedSystem::new(&g, &Ridge::Scalar(ridge))?;
    let coefficients = sys.solve(&rows);
    Ok(Interpolant {
        kernel: *kernel,
        value_anchors: anchors,
        derivative_anchors: Vec::new(),
        coefficients,
        ridge,
        jitter: sys.jitter(),
    })
}

/// Joint fit through values at `s_times` and first derivatives at `t_times`
/// over the extended anchor set. An empty derivative set degenerates to
/// [`fit_values`].
pub fn fit_values_and_derivatives(
    kernel: &KernelSpec,
    s_times: &[f64],
    values: &DMatrix<f64>,
    t_times: &[f64],
    derivative_values: &DMatrix<f64>,
    ridge: f64,
) -> Result<Interpolant, RepresenterError> {
    check_time_kernel(kernel)?;
    if s_times.is_empty() {
        return Err(RepresenterError::EmptyAnchorSet);
    }
    if t_times.is_empty() {
        return fit_values(kernel, s_times, values, ridge);
    }
    let (s_anchors, value_rows) = sorted_anchor_rows(s_times, values)?;
    let (t_anchors, deriv_rows) = sorted_anchor_rows(t_times, derivative_values)?;
    if value_rows.ncols() != deriv_rows.ncols() {
        return Err(RepresenterError::ShapeMismatch {
            anchors: value_rows.ncols(),
            values: deriv_rows.ncols(),
        });
    }
    let g = extended_gram(kernel, &s_anchors, &t_anchors)?;
    let mut rhs = DMatrix::zeros(s_anchors.len() + t_anchors.len(), value_rows.ncols());
    rhs.rows_mut(0, s_anchors.len()).copy_from(&value_rows);
    rhs.rows_mut(s_anchors.len(), t_anchors.len())
        .copy_from(&deriv_rows);
    let sys = RegularizedSystem::new(&g, &Ridge::Scalar(ridge))?;
    let coefficients = sys.solve(&rhs);
    Ok(Interpolant {
        kernel: *kernel,
        value_anchors: s_anchors,
        derivative_anchors: t_anchors,
        coefficients,
        ridge,
        jitter: sys.jitter(),
    })
}

impl Interpolant {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn value_anchors(&self) -> &[f64] {
        &self.value_anchors
    }

    pub fn derivative_anchors(&self) -> &[f64] {
        &self.derivative_anchors
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Number of trajectory components fitted (columns).
    pub fn components(&self) -> usize {
        self.coefficients.ncols()
    }

    /// Evaluates all components at the given times; rows follow `times`.
    pub fn eval(&self, times: &[f64]) -> DMatrix<f64> {
        let ns = self.value_anchors.len();
        let m = self.coefficients.ncols();
        let mut out = DMatrix::zeros(times.len(), m);
        for (row, &t) in times.iter().enumerate() {
            for c in 0..m {
                let mut acc = 0.0;
                for (i, &s) in self.value_anchors.iter().enumerate() {
                    acc += self.coefficients[(i, c)] * self.kernel.eval_unchecked(&[s], &[t]);
                }
                for (l, &a) in self.derivative_anchors.iter().enumerate() {
                    acc += self.coefficients[(ns + l, c)] * k10(&self.kernel, a, t);
                }
                out[(row, c)] = acc;
            }
        }
        out
    }

    /// Analytic time derivative of [`Interpolant::eval`].
    pub fn eval_derivative(&self, times: &[f64]) -> DMatrix<f64> {
        let ns = self.value_anchors.len();
        let m = self.coefficients.ncols();
        let mut out = DMatrix::zeros(times.len(), m);
        for (row, &t) in times.iter().enumerate() {
            for c in 0..m {
                let mut acc = 0.0;
                for (i, &s) in self.value_anchors.iter().enumerate() {
                    acc += self.coefficients[(i, c)] * k01(&self.kernel, s, t);
                }
                for (l, &a) in self.derivative_anchors.iter().enumerate() {
                    acc += self.coefficients[(ns + l, c)] * k11(&self.kernel, a, t);
                }
                out[(row, c)] = acc;
            }
        }
        out
    }

    /// RKHS norm proxy `Σ_c α_cᵀ G α_c` over the (unregularized) anchor Gram.
    pub fn rkhs_norm_squared(&self) -> Result<f64, RepresenterError> {
        let g = extended_gram(&self.kernel, &self.value_anchors, &self.derivative_anchors)?;
        let mut total = 0.0;
        for c in 0..self.coefficients.ncols() {
            let col = self.coefficients.column(c);
            total += (&g * col).dot(&col.into_owned());
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn gauss() -> KernelSpec {
        KernelSpec::gaussian_time(1.0).unwrap()
    }

    #[test]
    fn single_anchor_reproduces_value() {
        let interp = fit_values(&gauss(), &[0.0], &DMatrix::from_element(1, 1, 5.0), 0.0).unwrap();
        assert_relative_eq!(interp.eval(&[0.0])[(0, 0)], 5.0, max_relative = 1e-12);
    }

    #[test]
    fn interpolates_sine_samples_exactly_at_zero_ridge() {
        let times = [0.0, 1.0];
        let values = DMatrix::from_column_slice(2, 1, &[0.0f64.sin(), 1.0f64.sin()]);
        let interp = fit_values(&gauss(), &times, &values, 0.0).unwrap();
        let fitted = interp.eval(&times);
        assert_relative_eq!(fitted[(0, 0)], 0.0, epsilon = 1e-8);
        assert_relative_eq!(fitted[(1, 0)], 1.0f64.sin(), max_relative = 1e-8);
    }

    #[test]
    fn rejects_duplicates_and_shape_mismatch() {
        let v = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        assert!(matches!(
            fit_values(&gauss(), &[0.5, 0.5 + 1e-12], &v, 0.0),
            Err(RepresenterError::DuplicateAnchors(..))
        ));
        assert!(matches!(
            fit_values(&gauss(), &[0.0], &v, 0.0),
            Err(RepresenterError::ShapeMismatch { .. })
        ));
        assert!(fit_values(&gauss(), &[], &DMatrix::zeros(0, 1), 0.0).is_err());
    }

    #[test]
    fn rejects_state_kernels() {
        let state = KernelSpec::gaussian_state(1.0).unwrap();
        let v = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(
            fit_values(&state, &[0.0], &v, 0.0),
            Err(RepresenterError::NotATimeKernel(_))
        ));
    }

    #[test]
    fn ridge_residual_shrinks_with_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let times: Vec<f64> = (0..12).map(|i| i as f64 * 0.8).collect();
        let values = DMatrix::from_fn(12, 1, |i, _| (times[i]).sin());
        let mut prev = f64::INFINITY;
        for lambda in [1e-3, 1e-6, 1e-9] {
            let interp = fit_values(&gauss(), &times, &values, lambda).unwrap();
            let resid = (interp.eval(&times) - &values).abs().max();
            assert!(
                resid <= prev * (1.0 + 1e-9),
                "residual not shrinking: {resid} vs {prev}"
            );
            prev = resid;
        }
        assert!(
            prev < 1e-7,
            "near-interpolation expected at tiny ridge, got {prev}"
        );
        let _ = &mut rng;
    }

    #[test]
    fn value_and_derivative_hand_system() {
        // one value anchor (f(0) = 0) plus one derivative anchor (f'(0) = 1):
        // extended Gram is the 2×2 identity for a unit-lengthscale Gaussian
        let interp = fit_values_and_derivatives(
            &gauss(),
            &[0.0],
            &DMatrix::from_element(1, 1, 0.0),
            &[0.0],
            &DMatrix::from_element(1, 1, 1.0),
            0.0,
        )
        .unwrap();
        assert_relative_eq!(interp.eval(&[0.0])[(0, 0)], 0.0, epsilon = 1e-10);
        assert_relative_eq!(
            interp.eval_derivative(&[0.0])[(0, 0)],
            1.0,
            max_relative = 1e-8
        );
        assert_relative_eq!(interp.coefficients()[(0, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(interp.coefficients()[(1, 0)], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn in_span_derivative_data_recovered_exactly() {
        // target already lies in the span of kernel sections at the anchors
        let centers = [0.5, 2.0];
        let weights = [1.25, -0.75];
        let f = |t: f64| -> f64 {
            weights
                .iter()
                .zip(&centers)
                .map(|(w, c)| w * (-(t - c) * (t - c) / 2.0).exp())
                .sum()
        };
        let df = |t: f64| -> f64 {
            weights
                .iter()
                .zip(&centers)
                .map(|(w, c)| -w * (t - c) * (-(t - c) * (t - c) / 2.0).exp())
                .sum()
        };
        let s = [0.5, 2.0];
        let t = [0.0, 1.0, 3.0];
        let values = DMatrix::from_fn(2, 1, |i, _| f(s[i]));
        let derivs = DMatrix::from_fn(3, 1, |i, _| df(t[i]));
        let interp = fit_values_and_derivatives(&gauss(), &s, &values, &t, &derivs, 0.0).unwrap();
        for probe in [0.25, 1.5, 2.75] {
            assert_relative_eq!(interp.eval(&[probe])[(0, 0)], f(probe), epsilon = 1e-7);
        }
    }

    #[test]
    fn empty_derivative_set_degenerates_to_value_fit() {
        let times = [0.0, 1.0, 2.0];
        let values = DMatrix::from_column_slice(3, 1, &[0.1, -0.4, 0.9]);
        let a = fit_values(&gauss(), &times, &values, 1e-8).unwrap();
        let b =
            fit_values_and_derivatives(&gauss(), &times, &values, &[], &DMatrix::zeros(0, 1), 1e-8)
                .unwrap();
        let probe = [0.3, 1.7];
        assert_relative_eq!(a.eval(&probe), b.eval(&probe), max_relative = 1e-12);
    }

    #[test]
    fn eval_matches_direct_summation() {
        let times = [0.0, 0.7, 1.9, 3.1];
        let values = DMatrix::from_column_slice(4, 1, &[0.2, -0.3, 0.5, 0.1]);
        let interp = fit_values(&gauss(), &times, &values, 1e-10).unwrap();
        let t = 1.234;
        let direct: f64 = interp
            .value_anchors()
            .iter()
            .enumerate()
            .map(|(i, &s)| interp.coefficients()[(i, 0)] * (-(t - s) * (t - s) / 2.0).exp())
            .sum();
        assert_relative_eq!(interp.eval(&[t])[(0, 0)], direct, max_relative = 1e-13);
    }

    #[test]
    fn eval_decays_far_from_anchors() {
        let times = [0.0, 1.0, 2.0];
        let values = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 1.5]);
        let interp = fit_values(&gauss(), &times, &values, 0.0).unwrap();
        let far = 30.0;
        let alpha_l1: f64 = interp.coefficients().iter().map(|c| c.abs()).sum();
        let tail = (-(far - 2.0) * (far - 2.0) / 2.0f64).exp();
        assert!(interp.eval(&[far])[(0, 0)].abs() <= alpha_l1 * tail * (1.0 + 1e-12));
    }

    #[test]
    fn derivative_of_single_anchor_vanishes_at_anchor() {
        let interp = fit_values(&gauss(), &[1.5], &DMatrix::from_element(1, 1, 2.0), 0.0).unwrap();
        assert_eq!(interp.eval_derivative(&[1.5])[(0, 0)], 0.0);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let times: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        let values = DMatrix::from_fn(10, 2, |i, c| {
            if c == 0 {
                times[i].sin()
            } else {
                times[i].cos()
            }
        });
        let interp = fit_values(&gauss(), &times, &values, 1e-9).unwrap();
        for _ in 0..100 {
            let t: f64 = rng.gen_range(-1.0..6.0);
            let h = 1e-6 * (1.0 + t.abs());
            let plus = interp.eval(&[t + h]);
            let minus = interp.eval(&[t - h]);
            let deriv = interp.eval_derivative(&[t]);
            for c in 0..2 {
                let fdv = (plus[(0, c)] - minus[(0, c)]) / (2.0 * h);
                assert_relative_eq!(deriv[(0, c)], fdv, max_relative = 1e-6, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn eval_is_linear_in_fitted_values() {
        let times = [0.0, 0.9, 2.1, 3.0];
        let v1 = DMatrix::from_column_slice(4, 1, &[0.5, -0.2, 0.8, 0.0]);
        let v2 = DMatrix::from_column_slice(4, 1, &[-0.1, 0.4, 0.3, -0.9]);
        let sum = &v1 + &v2;
        let probe = [0.4, 1.5, 2.8];
        let ia = fit_values(&gauss(), &times, &v1, 1e-8).unwrap();
        let ib = fit_values(&gauss(), &times, &v2, 1e-8).unwrap();
        let is = fit_values(&gauss(), &times, &sum, 1e-8).unwrap();
        let lhs = ia.eval(&probe) + ib.eval(&probe);
        assert_relative_eq!(lhs, is.eval(&probe), max_relative = 1e-9, epsilon = 1e-12);
        let dlhs = ia.eval_derivative(&probe) + ib.eval_derivative(&probe);
        assert_relative_eq!(
            dlhs,
            is.eval_derivative(&probe),
            max_relative = 1e-9,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rkhs_norm_nonincreasing_in_ridge() {
        let times: Vec<f64> = (0..15).map(|i| i as f64 * 0.6).collect();
        let values = DMatrix::from_fn(15, 1, |i, _| times[i].sin());
        let mut prev = f64::INFINITY;
        for lambda in [1e-8, 1e-5, 1e-3, 1e-1] {
            let interp = fit_values(&gauss(), &times, &values, lambda).unwrap();
            let norm = interp.rkhs_norm_squared().unwrap();
            assert!(
                norm <= prev * (1.0 + 1e-9),
                "norm increased: {norm} vs {prev}"
            );
            prev = norm;
        }
    }

    #[test]
    fn interpolation_exact_for_separated_anchor_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let n = rng.gen_range(3..12);
            let mut times: Vec<f64> = Vec::new();
            let mut t = 0.0;
            for _ in 0..n {
                t += rng.gen_range(0.05..1.0);
                times.push(t);
            }
            let values = DMatrix::from_fn(n, 1, |i, _| (1.3 * times[i]).sin());
            let interp = fit_values(&gauss(), &times, &values, 0.0).unwrap();
            let resid = (interp.eval(&times) - &values).abs().max();
            let scale = values.abs().max().max(1.0);
            assert!(resid <= 1e-8 * scale, "resid {resid}");
        }
    }
}
