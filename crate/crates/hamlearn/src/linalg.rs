//! Regularized symmetric solves with deterministic jitter escalation, and the
//! representer quadratic form used throughout the recovery pipelines.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::kernels::{self, KernelError, KernelSpec, PointSet};

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not symmetric: max |A - Aᵀ| = {asymmetry:.3e}")]
    NotSymmetric { asymmetry: f64 },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error(
        "singular system: {n}×{n} matrix failed factorization at maximum jitter \
         {max_jitter:.3e} (ridge {ridge:.3e}, diagonal range [{diag_min:.3e}, {diag_max:.3e}])"
    )]
    SingularSystem {
        n: usize,
        ridge: f64,
        max_jitter: f64,
        diag_min: f64,
        diag_max: f64,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Requested regularization: a scalar ridge or a per-row diagonal (used for
/// block ridges on derivative-functional systems).
#[derive(Debug, Clone)]
pub enum Ridge {
    Scalar(f64),
    Diagonal(DVector<f64>),
}

impl Ridge {
    fn apply(&self, a: &mut DMatrix<f64>) {
        match self {
            Ridge::Scalar(l) => {
                for i in 0..a.nrows() {
                    a[(i, i)] += l;
                }
            }
            Ridge::Diagonal(d) => {
                for i in 0..a.nrows() {
                    a[(i, i)] += d[i];
                }
            }
        }
    }

    fn len_ok(&self, n: usize) -> bool {
        match self {
            Ridge::Scalar(_) => true,
            Ridge::Diagonal(d) => d.len() == n,
        }
    }
}

/// Relative jitter rungs applied on top of the requested ridge when a
/// factorization fails, scaled by `tr(A)/n`. Deterministic: the same matrix
/// always climbs the same ladder.
const JITTER_RUNGS: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// A symmetric system `A + ridge` held in factored form.
pub struct RegularizedSystem {
    chol: Cholesky<f64, Dyn>,
    n: usize,
    jitter: f64,
}

impl RegularizedSystem {
    /// Symmetrizes `A`, applies the ridge and factors, escalating jitter on
    /// failure. `A` must be symmetric to within `1e-12` relative max-abs.
    pub fn new(a: &DMatrix<f64>, ridge: &Ridge) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LinalgError::ShapeMismatch {
                expected: format!("{n}×{n}"),
                got: format!("{}×{}", a.nrows(), a.ncols()),
            });
        }
        if !ridge.len_ok(n) {
            return Err(LinalgError::ShapeMismatch {
                expected: format!("ridge diagonal of length {n}"),
                got: "mismatched ridge diagonal".into(),
            });
        }
        let scale = a.abs().max();
        let asymmetry = (a - a.transpose()).abs().max();
        if asymmetry > 1e-12 * (1.0 + scale) {
            return Err(LinalgError::NotSymmetric { asymmetry });
        }
        let sym = (a + a.transpose()) * 0.5;
        let trace_scale = if n > 0 { sym.trace() / n as f64 } else { 0.0 };

        let mut base = sym.clone();
        ridge.apply(&mut base);
        for rung in JITTER_RUNGS {
            let jitter = rung * trace_scale;
            let mut attempt = base.clone();
            for i in 0..n {
                attempt[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(attempt) {
                return Ok(RegularizedSystem { chol, n, jitter });
            }
        }
        let (mut diag_min, mut diag_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            diag_min = diag_min.min(base[(i, i)]);
            diag_max = diag_max.max(base[(i, i)]);
        }
        Err(LinalgError::SingularSystem {
            n,
            ridge: match ridge {
                Ridge::Scalar(l) => *l,
                Ridge::Diagonal(d) => d.max(),
            },
            max_jitter: JITTER_RUNGS[JITTER_RUNGS.len() - 1] * trace_scale,
            diag_min,
            diag_max,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Extra jitter added beyond the requested ridge (0 when the first
    /// factorization succeeded).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }
}

/// Solves `(A + λ_eff I) X = B` for symmetric `A`, returning the solution and
/// the effective ridge `λ_eff = λ + jitter`.
pub fn solve_ridge(
    a: &DMatrix<f64>,
    lambda: f64,
    b: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, f64), LinalgError> {
    if b.nrows() != a.nrows() {
        return Err(LinalgError::ShapeMismatch {
            expected: format!("{} right-hand-side rows", a.nrows()),
            got: format!("{}", b.nrows()),
        });
    }
    let sys = RegularizedSystem::new(a, &Ridge::Scalar(lambda))?;
    Ok((sys.solve(b), lambda + sys.jitter()))
}

/// The representer quadratic form `ξᵀ (A + λ_eff I)⁻¹ ξ`.
pub fn quadratic_form(
    a: &DMatrix<f64>,
    lambda: f64,
    xi: &DVector<f64>,
) -> Result<f64, LinalgError> {
    if xi.len() != a.nrows() {
        return Err(LinalgError::ShapeMismatch {
            expected: format!("vector of length {}", a.nrows()),
            got: format!("{}", xi.len()),
        });
    }
    let sys = RegularizedSystem::new(a, &Ridge::Scalar(lambda))?;
    Ok(xi.dot(&sys.solve_vec(xi)))
}

/// Test helper for the RKHS norm identity: fits coefficients
/// `α = (K + λI)⁻¹ ξ` on the anchor Gram and returns
/// `(αᵀKα + residual²/λ, ξᵀ(K + λI)⁻¹ξ)`. With `λ = 0` the residual term is
/// dropped (exact interpolation branch). The two values agree to roundoff.
pub fn norm_identity_check(
    spec: &KernelSpec,
    anchors: &PointSet,
    lambda: f64,
    xi: &DVector<f64>,
) -> Result<(f64, f64), LinalgError> {
    let k = kernels::gram(spec, anchors, anchors)?;
    let sys = RegularizedSystem::new(&k, &Ridge::Scalar(lambda))?;
    let alpha = sys.solve_vec(xi);
    let k_alpha = &k * &alpha;
    let norm_sq = alpha.dot(&k_alpha);
    let lhs = if lambda > 0.0 {
        let resid = &k_alpha - xi;
        norm_sq + resid.norm_squared() / lambda
    } else {
        norm_sq
    };
    let rhs = quadratic_form(&k, lambda, xi)?;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::times_as_points;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn identity_solve() {
        let a = DMatrix::identity(2, 2);
        let (x, eff) = solve_ridge(&a, 0.0, &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(x, DMatrix::identity(2, 2), max_relative = 1e-14);
        assert_eq!(eff, 0.0);
    }

    #[test]
    fn hand_solve_with_ridge() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let b = DMatrix::from_column_slice(2, 1, &[3.0, 6.0]);
        let (x, _) = solve_ridge(&a, 1.0, &b).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0, max_relative = 1e-14);
        assert_relative_eq!(x[(1, 0)], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn residual_small_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.gen_range(2..=20);
            let a = random_spd(&mut rng, n);
            let lambda = 10f64.powi(rng.gen_range(-8..0));
            let b = DMatrix::from_fn(n, 3, |_, _| rng.gen_range(-2.0..2.0));
            let (x, eff) = solve_ridge(&a, lambda, &b).unwrap();
            let mut reg = a.clone();
            for i in 0..n {
                reg[(i, i)] += eff;
            }
            let resid = (&reg * &x - &b).abs().max();
            assert!(resid < 1e-10 * (1.0 + b.abs().max()), "residual {resid}");
        }
    }

    #[test]
    fn residual_bounded_at_larger_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 400;
        let a = random_spd(&mut rng, n);
        let b = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-2.0..2.0));
        let (x, eff) = solve_ridge(&a, 1e-6, &b).unwrap();
        let mut reg = a.clone();
        for i in 0..n {
            reg[(i, i)] += eff;
        }
        let resid = (&reg * &x - &b).abs().max();
        assert!(resid < 1e-8 * (1.0 + b.abs().max()), "residual {resid}");
    }

    #[test]
    fn rejects_asymmetric_input() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(
            RegularizedSystem::new(&a, &Ridge::Scalar(0.0)),
            Err(LinalgError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn singular_without_any_regularization_errors() {
        let a = DMatrix::zeros(3, 3);
        let b = DMatrix::identity(3, 3);
        assert!(matches!(
            solve_ridge(&a, 0.0, &b),
            Err(LinalgError::SingularSystem { .. })
        ));
    }

    #[test]
    fn jitter_ladder_rescues_rank_deficient_gram() {
        // two identical anchor points make the Gram exactly singular
        let k = KernelSpec::gaussian_time(1.0).unwrap();
        let pts = times_as_points(&[0.5, 0.5, 1.0]);
        let g = kernels::gram(&k, &pts, &pts).unwrap();
        let sys = RegularizedSystem::new(&g, &Ridge::Scalar(0.0)).unwrap();
        assert!(sys.jitter() > 0.0);
    }

    #[test]
    fn jitter_escalation_is_deterministic() {
        let k = KernelSpec::gaussian_time(1.0).unwrap();
        let pts = times_as_points(&[0.5, 0.5, 1.0]);
        let g = kernels::gram(&k, &pts, &pts).unwrap();
        let j1 = RegularizedSystem::new(&g, &Ridge::Scalar(0.0))
            .unwrap()
            .jitter();
        let j2 = RegularizedSystem::new(&g, &Ridge::Scalar(0.0))
            .unwrap()
            .jitter();
        assert_eq!(j1, j2);
    }

    #[test]
    fn quadratic_form_examples() {
        let a = DMatrix::identity(2, 2);
        let xi = DVector::from_column_slice(&[3.0, 4.0]);
        assert_relative_eq!(
            quadratic_form(&a, 0.0, &xi).unwrap(),
            25.0,
            max_relative = 1e-12
        );

        let a = DMatrix::zeros(1, 1);
        let xi = DVector::from_column_slice(&[4.0]);
        assert_relative_eq!(
            quadratic_form(&a, 2.0, &xi).unwrap(),
            8.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn quadratic_form_consistent_with_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let n = rng.gen_range(2..=15);
            let a = random_spd(&mut rng, n);
            let xi = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let qf = quadratic_form(&a, 0.5, &xi).unwrap();
            assert!(qf >= 0.0);
            let (x, _) =
                solve_ridge(&a, 0.5, &DMatrix::from_column_slice(n, 1, xi.as_slice())).unwrap();
            let direct = xi.dot(&x.column(0).into_owned());
            assert_relative_eq!(qf, direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn norm_identity_hand_case() {
        let k = KernelSpec::gaussian_time(1.0).unwrap();
        let anchors = times_as_points(&[0.0]);
        let xi = DVector::from_column_slice(&[2.0]);
        let (lhs, rhs) = norm_identity_check(&k, &anchors, 1.0, &xi).unwrap();
        assert_relative_eq!(lhs, 2.0, max_relative = 1e-12);
        assert_relative_eq!(rhs, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn norm_identity_interpolation_branch() {
        let k = KernelSpec::gaussian_time(1.0).unwrap();
        let anchors = times_as_points(&[0.0, 1.2, 2.5]);
        let xi = DVector::from_column_slice(&[1.0, -0.5, 0.25]);
        let (lhs, rhs) = norm_identity_check(&k, &anchors, 0.0, &xi).unwrap();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-8);
    }

    #[test]
    fn norm_identity_random_gaussian_grams() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = KernelSpec::gaussian_time(1.0).unwrap();
        for _ in 0..20 {
            let n = rng.gen_range(2..=30);
            let mut times: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            times.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            let anchors = times_as_points(&times);
            let xi = DVector::from_fn(times.len(), |_, _| rng.gen_range(-1.0..1.0));
            let lambda = 10f64.powi(rng.gen_range(-4..0));
            let (lhs, rhs) = norm_identity_check(&k, &anchors, lambda, &xi).unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()),
                "identity violated: lhs {lhs} rhs {rhs}"
            );
        }
    }
}
