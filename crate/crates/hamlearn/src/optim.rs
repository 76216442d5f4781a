//! Limited-memory BFGS with a strong-Wolfe line search, for the smooth
//! unconstrained minimization inside the joint recovery pipeline.

use nalgebra::DVector;
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when `‖g‖∞ < grad_tolerance · (1 + |f|)`.
    pub grad_tolerance: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search_evals: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iterations: 500,
            grad_tolerance: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_evals: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailure,
    StepTooSmall,
    NonFiniteStart,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let text = match self {
            Termination::GradientTolerance => "gradient tolerance reached",
            Termination::MaxIterations => "iteration limit reached",
            Termination::LineSearchFailure => "line search failed to make progress",
            Termination::StepTooSmall => "step shrank below resolution",
            Termination::NonFiniteStart => "objective not finite at the start point",
        };
        write!(f, "{text}")
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsReport {
    pub iterations: usize,
    pub f_evals: usize,
    pub initial_value: f64,
    pub final_value: f64,
    pub grad_norm_inf: f64,
    pub termination: Termination,
    /// Set when the search stopped for any reason other than meeting the
    /// gradient tolerance.
    pub warning: bool,
}

struct Evaluator<'a, F> {
    f: &'a mut F,
    evals: usize,
    best_f: f64,
    best_x: DVector<f64>,
    best_g: DVector<f64>,
}

impl<'a, F> Evaluator<'a, F>
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    fn eval(&mut self, x: &DVector<f64>, g: &mut DVector<f64>) -> f64 {
        self.evals += 1;
        let v = (self.f)(x, g);
        let v = if v.is_finite() { v } else { f64::INFINITY };
        if v < self.best_f && g.iter().all(|gi| gi.is_finite()) {
            self.best_f = v;
            self.best_x.copy_from(x);
            self.best_g.copy_from(g);
        }
        v
    }
}

/// Minimizes `f`, which must fill the gradient and return the value. Returns
/// the best iterate ever evaluated, so the reported value never exceeds the
/// starting value.
pub fn minimize<F>(f: &mut F, x0: DVector<f64>, opts: &LbfgsOptions) -> (DVector<f64>, LbfgsReport)
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    let n = x0.len();
    let mut g = DVector::zeros(n);
    let mut eval = Evaluator {
        f,
        evals: 0,
        best_f: f64::INFINITY,
        best_x: x0.clone(),
        best_g: DVector::zeros(n),
    };
    let mut x = x0;
    let mut fx = eval.eval(&x, &mut g);
    let f0 = fx;
    if !fx.is_finite() {
        let report = LbfgsReport {
            iterations: 0,
            f_evals: eval.evals,
            initial_value: f0,
            final_value: fx,
            grad_norm_inf: f64::INFINITY,
            termination: Termination::NonFiniteStart,
            warning: true,
        };
        return (x, report);
    }

    let mut s_hist: VecDeque<DVector<f64>> = VecDeque::with_capacity(opts.memory);
    let mut y_hist: VecDeque<DVector<f64>> = VecDeque::with_capacity(opts.memory);
    let mut rho_hist: VecDeque<f64> = VecDeque::with_capacity(opts.memory);

    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    for _ in 0..opts.max_iterations {
        let gnorm = g.amax();
        if gnorm < opts.grad_tolerance * (1.0 + fx.abs()) {
            termination = Termination::GradientTolerance;
            break;
        }
        // two-loop recursion for the search direction
        let mut d = -g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for ((s, y), rho) in s_hist.iter().zip(&y_hist).zip(&rho_hist).rev() {
            let a = rho * s.dot(&d);
            d.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let (Some(s), Some(y)) = (s_hist.back(), y_hist.back()) {
            let gamma = s.dot(y) / y.dot(y);
            d *= gamma;
        }
        for (((s, y), rho), a) in s_hist
            .iter()
            .zip(&y_hist)
            .zip(&rho_hist)
            .zip(alphas.into_iter().rev())
        {
            let b = rho * y.dot(&d);
            d.axpy(a - b, s, 1.0);
        }
        let mut dg = g.dot(&d);
        if !(dg < 0.0) {
            // not a descent direction: reset the memory and fall back to
            // steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = -g.clone();
            dg = g.dot(&d);
            if !(dg < 0.0) {
                termination = Termination::LineSearchFailure;
                break;
            }
        }

        match strong_wolfe(&mut eval, &x, fx, &d, dg, opts) {
            Some(step) => {
                iterations += 1;
                let s = &step.x - &x;
                let y = &step.g - &g;
                let sy = s.dot(&y);
                if sy > 1e-10 * s.norm() * y.norm() {
                    if s_hist.len() == opts.memory {
                        s_hist.pop_front();
                        y_hist.pop_front();
                        rho_hist.pop_front();
                    }
                    rho_hist.push_back(1.0 / sy);
                    s_hist.push_back(s);
                    y_hist.push_back(y);
                }
                let step_inf = (&step.x - &x).amax();
                x = step.x;
                g = step.g;
                fx = step.f;
                if step_inf < 1e-14 * (1.0 + x.amax()) {
                    termination = Termination::StepTooSmall;
                    break;
                }
            }
            None => {
                termination = Termination::LineSearchFailure;
                break;
            }
        }
    }

    // return the best point seen anywhere, including line-search probes
    if eval.best_f < fx {
        x = eval.best_x.clone();
        g = eval.best_g.clone();
        fx = eval.best_f;
    }
    let warning =
        termination != Termination::GradientTolerance && termination != Termination::MaxIterations;
    let report = LbfgsReport {
        iterations,
        f_evals: eval.evals,
        initial_value: f0,
        final_value: fx,
        grad_norm_inf: g.amax(),
        termination,
        warning,
    };
    (x, report)
}

struct AcceptedStep {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
}

/// Strong-Wolfe line search (bracket + zoom with bisection/interpolation).
/// Returns `None` when no acceptable step is found within the evaluation
/// budget and no probe improved on the start.
fn strong_wolfe<F>(
    eval: &mut Evaluator<'_, F>,
    x: &DVector<f64>,
    f0: f64,
    d: &DVector<f64>,
    dg0: f64,
    opts: &LbfgsOptions,
) -> Option<AcceptedStep>
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    let probe = |eval: &mut Evaluator<'_, F>, g: &mut DVector<f64>, alpha: f64| -> (f64, f64) {
        let xa = x + d * alpha;
        let fa = eval.eval(&xa, g);
        let da = if fa.is_finite() {
            g.dot(d)
        } else {
            f64::INFINITY
        };
        (fa, da)
    };

    let mut best: Option<AcceptedStep> = None;
    let consider =
        |xa: DVector<f64>, fa: f64, ga: DVector<f64>, best: &mut Option<AcceptedStep>| {
            if fa < best.as_ref().map_or(f0, |b| b.f) {
                *best = Some(AcceptedStep {
                    x: xa,
                    f: fa,
                    g: ga,
                });
            }
        };

    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut d_prev = dg0;
    let mut alpha = 1.0;
    let mut budget = opts.max_line_search_evals;
    let mut bracket: Option<(f64, f64, f64, f64, f64, f64)> = None; // (lo, f_lo, d_lo, hi, f_hi, d_hi)

    // bracketing phase
    while budget > 0 {
        budget -= 1;
        let (fa, da) = probe(eval, &mut g, alpha);
        if fa.is_finite() {
            consider(x + d * alpha, fa, g.clone(), &mut best);
        }
        if !fa.is_finite() || fa > f0 + opts.c1 * alpha * dg0 || (alpha_prev > 0.0 && fa >= f_prev)
        {
            bracket = Some((alpha_prev, f_prev, d_prev, alpha, fa, da));
            break;
        }
        if da.abs() <= -opts.c2 * dg0 {
            return Some(AcceptedStep {
                x: x + d * alpha,
                f: fa,
                g: g.clone(),
            });
        }
        if da >= 0.0 {
            bracket = Some((alpha, fa, da, alpha_prev, f_prev, d_prev));
            break;
        }
        alpha_prev = alpha;
        f_prev = fa;
        d_prev = da;
        alpha *= 2.0;
        if alpha > 1e6 {
            return best;
        }
    }

    // zoom phase
    let (mut lo, mut f_lo, mut d_lo, mut hi, mut f_hi, mut _d_hi) = bracket?;
    for _ in 0..budget {
        // cubic-style interpolation via the secant of derivatives, guarded by
        // bisection
        let mut trial = if d_lo.is_finite() && f_hi.is_finite() {
            let span = hi - lo;
            let denom = f_hi - f_lo - d_lo * span;
            if denom.abs() > 1e-16 {
                lo - d_lo * span * span / (2.0 * denom)
            } else {
                0.5 * (lo + hi)
            }
        } else {
            0.5 * (lo + hi)
        };
        let (lo_b, hi_b) = if lo < hi { (lo, hi) } else { (hi, lo) };
        let margin = 0.1 * (hi_b - lo_b);
        if !(trial.is_finite()) || trial < lo_b + margin || trial > hi_b - margin {
            trial = 0.5 * (lo + hi);
        }
        if (hi - lo).abs() * d.amax() < 1e-16 * (1.0 + x.amax()) {
            break;
        }
        let (ft, dt) = probe(eval, &mut g, trial);
        if ft.is_finite() {
            consider(x + d * trial, ft, g.clone(), &mut best);
        }
        if !ft.is_finite() || ft > f0 + opts.c1 * trial * dg0 || ft >= f_lo {
            hi = trial;
            f_hi = ft;
            _d_hi = dt;
        } else {
            if dt.abs() <= -opts.c2 * dg0 {
                return Some(AcceptedStep {
                    x: x + d * trial,
                    f: ft,
                    g: g.clone(),
                });
            }
            if dt * (hi - lo) >= 0.0 {
                hi = lo;
                f_hi = f_lo;
                _d_hi = d_lo;
            }
            lo = trial;
            f_lo = ft;
            d_lo = dt;
        }
    }
    best
}
