//! One-dimensional numerics shared by the solver modules: the principal
//! branch of the Lambert-W function and bracketed bisection for monotone
//! functions.

use thiserror::Error;

/// Default absolute tolerance on root brackets.
pub const DEFAULT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScalarError {
    #[error("argument {x} outside function domain: {reason}")]
    DomainError { x: f64, reason: &'static str },
    #[error("no sign change on bracket: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    NoSignChange { f_lo: f64, f_hi: f64 },
}

/// Outcome of a bracketed root search.
#[derive(Debug, Clone, PartialEq)]
pub struct RootResult {
    pub root: f64,
    pub iterations: u32,
    pub bracket: (f64, f64),
    pub residual: f64,
}

/// Principal branch `W_0` of the Lambert-W function: the inverse of
/// `w -> w * exp(w)` on `w >= -1`, defined for `x >= -1/e`.
///
/// Halley iteration from a branch-aware initial guess, with a bisection
/// fallback if the iteration ever leaves the domain. Relative accuracy is
/// driven to machine precision, comfortably inside the 1e-12 contract.
pub fn lambert_w0(x: f64) -> Result<f64, ScalarError> {
    if !x.is_finite() {
        return Err(ScalarError::DomainError { x, reason: "not finite" });
    }
    let branch_point = -(-1.0f64).exp(); // -1/e
    if x < branch_point - 1e-12 {
        return Err(ScalarError::DomainError { x, reason: "below -1/e" });
    }
    if x <= branch_point {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }

    let mut w = initial_guess(x, branch_point);
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            return Ok(w);
        }
        let d1 = ew * (w + 1.0);
        let d2 = ew * (w + 2.0);
        let step = f / (d1 - f * d2 / (2.0 * d1));
        let next = w - step;
        if !next.is_finite() || next < -1.0 {
            return bisect_w(x);
        }
        w = next;
        if step.abs() <= 2.0 * f64::EPSILON * (1.0 + w.abs()) {
            break;
        }
    }
    if (w * w.exp() - x).abs() > 1e-11 * x.abs().max(1.0) {
        return bisect_w(x);
    }
    Ok(w)
}

fn initial_guess(x: f64, branch_point: f64) -> f64 {
    if x < 0.0 {
        // series around the branch point in p = sqrt(2 (e x + 1))
        let p = (2.0 * (x / branch_point.abs() + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 * p * p * p / 72.0
    } else if x > std::f64::consts::E {
        let l = x.ln();
        l - l.ln()
    } else {
        x.ln_1p()
    }
}

fn bisect_w(x: f64) -> Result<f64, ScalarError> {
    let hi = if x > 0.0 { x.ln_1p().max(1.0) } else { 0.0 };
    let result = bisect_root(|w| w * w.exp() - x, -1.0, hi, 1e-15)?;
    Ok(result.root)
}

/// Bisection on a monotone function with a sign-changing bracket.
///
/// Returns the bracket midpoint once the bracket width drops to `tol`.
/// The residual of the returned root is recorded but not thresholded; for a
/// monotone `f` it is bounded by the bracket endpoints' values.
pub fn bisect_root<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<RootResult, ScalarError> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(ScalarError::DomainError { x: lo, reason: "invalid bracket" });
    }
    if !(tol > 0.0) {
        return Err(ScalarError::DomainError { x: tol, reason: "tolerance must be positive" });
    }
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(RootResult { root: lo, iterations: 0, bracket: (lo, lo), residual: 0.0 });
    }
    if f_hi == 0.0 {
        return Ok(RootResult { root: hi, iterations: 0, bracket: (hi, hi), residual: 0.0 });
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(ScalarError::NoSignChange { f_lo, f_hi });
    }

    let mut lo = lo;
    let mut hi = hi;
    let mut f_lo = f_lo;
    let mut iterations = 0u32;
    while hi - lo > tol && iterations < 200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // bracket at floating-point resolution
        }
        let f_mid = f(mid);
        iterations += 1;
        if f_mid == 0.0 {
            return Ok(RootResult { root: mid, iterations, bracket: (mid, mid), residual: 0.0 });
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    Ok(RootResult { root, iterations, bracket: (lo, hi), residual: f(root) })
}
