//! The optimal semi-separable mechanism.
//!
//! The mechanism family is parametrized by `gamma in [0, 1]`. Item `j` is
//! allocated with probability `(gamma ln(v_j / hi_j) + 1)^+`; its payment is
//! thresholded for items whose relative support is wide
//! (`ln(lo_j / hi_j) < -1/gamma`, the *active set* `S(gamma)`) and supported
//! on the full range otherwise:
//!
//! ```text
//! t_j(v) = gamma (v - e^{-1/gamma} hi_j)^+                     j in S(gamma)
//! t_j(v) = gamma v + lo_j (gamma (ln(lo_j/hi_j) - 1) + 1)      otherwise
//! ```
//!
//! The worst-case ratio of the family is maximized at the unique root
//! `gamma*` of the increasing function
//!
//! ```text
//! phi(gamma) = gamma e^{-1/gamma} sum_{j in S} hi_j
//!            - sum_{j not in S} lo_j (gamma ln(lo_j/hi_j) - gamma + 1)
//! ```
//!
//! and that root is itself the competitive ratio achieved. The mechanism is
//! implementable item by item as a randomized posted price with density
//! `gamma / p` above the threshold plus an atom at the lower bound.

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    Instance, ItemPriceLaw, Mechanism, MechanismQuote, PriceAtom, PriceLaw, Valuation,
};
use crate::scalar::{self, bisect_root, lambert_w0};

/// Relative tolerance deciding active-set membership: ties of
/// `ln(lo/hi) + 1/gamma` within this fraction of `1/gamma` fall to the
/// not-in-S branch, matching the `>=` case of the direction-vector split.
pub const MEMBERSHIP_REL_TOL: f64 = 1e-12;

/// Lower end of the root bracket for `gamma*`.
const GAMMA_BRACKET_LO: f64 = 1e-9;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SemiSepError {
    #[error("gamma = {gamma} outside {domain}")]
    DomainError { gamma: f64, domain: &'static str },
    #[error("valuation outside the support box")]
    OutOfSupport,
    #[error("expected {expected} items, found {found}")]
    ShapeMismatch { expected: &'static str, found: usize },
    #[error("instance admits no revenue guarantee (all lower bounds zero)")]
    DegenerateInstance,
}

/// Root of `phi` with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaSolution {
    /// Optimal threshold parameter; equals the optimal competitive ratio.
    pub gamma_star: f64,
    /// Items in `S(gamma*)` (original indices, ascending).
    pub active_set: Vec<usize>,
    pub phi_residual: f64,
    pub iterations: u32,
    /// All lower bounds are zero: `gamma* = 0` and the mechanism is empty.
    pub degenerate: bool,
    /// Bracket guard tripped (cannot occur for valid instances).
    pub clamped: bool,
}

/// Active-set membership for one item. Items with a zero lower bound are
/// always members; the log-ratio of other items never reaches -infinity, so
/// the comparison is safe in floating point.
pub(crate) fn in_active_set(gamma: f64, lower: f64, upper: f64) -> bool {
    if lower == 0.0 {
        return true;
    }
    if gamma <= 0.0 {
        return false;
    }
    let d = (lower / upper).ln() + 1.0 / gamma;
    d < -(MEMBERSHIP_REL_TOL / gamma)
}

/// Indices of `S(gamma)` in ascending order.
pub fn active_set(gamma: f64, instance: &Instance) -> Vec<usize> {
    (0..instance.len())
        .filter(|&j| in_active_set(gamma, instance.lower(j), instance.upper(j)))
        .collect()
}

fn check_gamma_range(gamma: f64, lo_open: bool) -> Result<(), SemiSepError> {
    let lo_ok = if lo_open { gamma > 0.0 } else { gamma >= 0.0 };
    if !gamma.is_finite() || !lo_ok || gamma > 1.0 + 1e-12 {
        let domain = if lo_open { "(0, 1]" } else { "[0, 1]" };
        return Err(SemiSepError::DomainError { gamma, domain });
    }
    Ok(())
}

/// The monotone scalar function whose root is the optimal ratio.
pub fn phi(gamma: f64, instance: &Instance) -> Result<f64, SemiSepError> {
    check_gamma_range(gamma, true)?;
    let mut active_upper_sum = 0.0;
    let mut inactive_term = 0.0;
    for item in instance.items() {
        if in_active_set(gamma, item.lower, item.upper) {
            active_upper_sum += item.upper;
        } else {
            inactive_term +=
                item.lower * (gamma * (item.lower / item.upper).ln() - gamma + 1.0);
        }
    }
    Ok(gamma * (-1.0 / gamma).exp() * active_upper_sum - inactive_term)
}

/// Unique root of `phi` on `(0, 1]` by bisection.
///
/// Instances whose lower bounds are all zero have `phi > 0` everywhere; they
/// resolve to `gamma* = 0` flagged degenerate rather than an error, since
/// zero is the true value of the game.
pub fn solve_gamma_star(instance: &Instance, tol: f64) -> GammaSolution {
    if instance.is_degenerate() {
        return GammaSolution {
            gamma_star: 0.0,
            active_set: (0..instance.len()).collect(),
            phi_residual: 0.0,
            iterations: 0,
            degenerate: true,
            clamped: false,
        };
    }
    let tol = if tol > 0.0 { tol } else { scalar::DEFAULT_TOL };
    let f = |g: f64| phi(g, instance).expect("gamma within bracket");
    match bisect_root(f, GAMMA_BRACKET_LO, 1.0, tol) {
        Ok(root) => GammaSolution {
            gamma_star: root.root,
            active_set: active_set(root.root, instance),
            phi_residual: root.residual,
            iterations: root.iterations,
            degenerate: false,
            clamped: false,
        },
        // phi(eps) < 0 whenever some lower bound is positive and phi(1) >= 0,
        // so a missing sign change cannot occur; guarded regardless.
        Err(_) => GammaSolution {
            gamma_star: 1.0,
            active_set: active_set(1.0, instance),
            phi_residual: f(1.0),
            iterations: 0,
            degenerate: false,
            clamped: true,
        },
    }
}

fn item_quote(gamma: f64, lower: f64, upper: f64, v: f64) -> (f64, f64) {
    if gamma == 0.0 {
        return (0.0, 0.0);
    }
    let q = if v <= 0.0 {
        0.0
    } else {
        (gamma * (v / upper).ln() + 1.0).clamp(0.0, 1.0)
    };
    let t = if in_active_set(gamma, lower, upper) {
        gamma * (v - (-1.0 / gamma).exp() * upper).max(0.0)
    } else {
        gamma * v + lower * (gamma * ((lower / upper).ln() - 1.0) + 1.0)
    };
    (q, t)
}

/// Per-item allocation probabilities of the mechanism at `v`.
pub fn allocation(gamma: f64, instance: &Instance, v: &[f64]) -> Result<Vec<f64>, SemiSepError> {
    check_gamma_range(gamma, false)?;
    if instance.validate_valuation(v).is_err() {
        return Err(SemiSepError::OutOfSupport);
    }
    Ok(instance
        .items()
        .iter()
        .zip(v)
        .map(|(item, &x)| item_quote(gamma, item.lower, item.upper, x).0)
        .collect())
}

/// Total payment of the mechanism at `v`.
pub fn payment(gamma: f64, instance: &Instance, v: &[f64]) -> Result<f64, SemiSepError> {
    check_gamma_range(gamma, false)?;
    if instance.validate_valuation(v).is_err() {
        return Err(SemiSepError::OutOfSupport);
    }
    Ok(instance
        .items()
        .iter()
        .zip(v)
        .map(|(item, &x)| item_quote(gamma, item.lower, item.upper, x).1)
        .sum())
}

/// Worst-case performance ratio of the mechanism and its minimizing
/// valuation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstCase {
    pub ratio: f64,
    pub argmin: Valuation,
}

/// Worst-case ratio of `M_gamma` over the support box.
///
/// The ratio's partial derivative carries the sign of `phi(gamma)` in every
/// coordinate: nonpositive `phi` pushes the minimizer to the upper corner,
/// positive `phi` to the thresholds for active items and lower bounds for
/// the rest. At `gamma = gamma*` the ratio equals `gamma*`.
pub fn worst_case_ratio(gamma: f64, instance: &Instance) -> Result<WorstCase, SemiSepError> {
    check_gamma_range(gamma, false)?;
    if gamma == 0.0 {
        let lowers = instance.lowers();
        if lowers.iter().sum::<f64>() <= 0.0 {
            return Err(SemiSepError::DegenerateInstance);
        }
        return Ok(WorstCase { ratio: 0.0, argmin: Valuation(lowers) });
    }
    let phi_value = phi(gamma, instance)?;
    let argmin: Vec<f64> = if phi_value <= 0.0 {
        instance.uppers()
    } else {
        instance
            .items()
            .iter()
            .map(|item| {
                if in_active_set(gamma, item.lower, item.upper) {
                    (-1.0 / gamma).exp() * item.upper
                } else {
                    item.lower
                }
            })
            .collect()
    };
    let total: f64 = argmin.iter().sum();
    if total <= 0.0 {
        return Err(SemiSepError::DegenerateInstance);
    }
    let ratio = payment(gamma, instance, &argmin)? / total;
    Ok(WorstCase { ratio, argmin: Valuation(argmin) })
}

/// Randomized posted-price implementation of `M_gamma`: per item a density
/// `gamma / p` on `[max(lo, e^{-1/gamma} hi), hi]` plus, for inactive items,
/// an atom of mass `1 + gamma ln(lo/hi)` at the lower bound.
pub fn price_law(gamma: f64, instance: &Instance) -> Result<PriceLaw, SemiSepError> {
    check_gamma_range(gamma, true)?;
    let threshold_scale = (-1.0 / gamma).exp();
    let items = instance
        .items()
        .iter()
        .map(|item| {
            let threshold = threshold_scale * item.upper;
            let support_lo = item.lower.max(threshold);
            let atom = if in_active_set(gamma, item.lower, item.upper) {
                None
            } else {
                Some(PriceAtom {
                    location: item.lower,
                    mass: 1.0 + gamma * (item.lower / item.upper).ln(),
                })
            };
            ItemPriceLaw {
                name: item.name.clone(),
                gamma,
                support: (support_lo, item.upper),
                atom,
            }
        })
        .collect();
    Ok(PriceLaw::new(items).expect("masses sum to one by construction"))
}

/// Which closed-form branch applies to a two-item instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TwoItemCase {
    /// Wide first item: its low valuations are excluded and the ratio takes
    /// the Lambert-W form.
    Thresholded,
    /// Comparable ranges: prices reach down to both lower bounds.
    LowerBounds,
}

impl TwoItemCase {
    pub fn index(self) -> u8 {
        match self {
            TwoItemCase::Thresholded => 1,
            TwoItemCase::LowerBounds => 2,
        }
    }
}

/// Closed-form `gamma*` for two items (sorted internally by `lower/upper`):
///
/// - thresholded case `ln(lo2 hi1 / (hi2 lo1)) - 1 > lo1/lo2`:
///   `gamma = (W(hi1 / (e hi2)) + ln(hi2/lo2) + 1)^-1`
/// - otherwise `gamma = (lo1 + lo2) / (lo1 (1 + ln(hi1/lo1)) + lo2 (1 + ln(hi2/lo2)))`
pub fn two_item_closed_form(instance: &Instance) -> Result<(f64, TwoItemCase), SemiSepError> {
    if instance.len() != 2 {
        return Err(SemiSepError::ShapeMismatch { expected: "2", found: instance.len() });
    }
    let order = instance.sorted_order();
    let (lo1, hi1) = (instance.lower(order[0]), instance.upper(order[0]));
    let (lo2, hi2) = (instance.lower(order[1]), instance.upper(order[1]));

    if lo2 == 0.0 {
        // both lower bounds zero: the thresholded form's limit is zero
        return Ok((0.0, TwoItemCase::Thresholded));
    }
    let thresholded = if lo1 == 0.0 {
        true
    } else {
        (lo2 * hi1 / (hi2 * lo1)).ln() - 1.0 > lo1 / lo2
    };
    if thresholded {
        let w = lambert_w0(hi1 / (std::f64::consts::E * hi2))
            .expect("argument is positive, inside the domain");
        Ok((1.0 / (w + (hi2 / lo2).ln() + 1.0), TwoItemCase::Thresholded))
    } else {
        let num = lo1 + lo2;
        let den = lo1 * (1.0 + (hi1 / lo1).ln()) + lo2 * (1.0 + (hi2 / lo2).ln());
        Ok((num / den, TwoItemCase::LowerBounds))
    }
}

/// Ratio of the separable baseline to the semi-separable optimum when exactly
/// one item has a positive lower bound:
/// `(1 + r_J W(sum_hi / (e hi_J))) / (1 + sum_hi / lo_J)` with `sum_hi` over
/// the zero-lower items. Tends to zero as `sum_hi / lo_J` grows.
pub fn gap_vs_separable(instance: &Instance) -> Result<f64, SemiSepError> {
    let positive: Vec<usize> =
        (0..instance.len()).filter(|&j| instance.lower(j) > 0.0).collect();
    if positive.len() != 1 {
        return Err(SemiSepError::ShapeMismatch { expected: "exactly one positive lower bound", found: positive.len() });
    }
    let j = positive[0];
    let r_j = 1.0 / (1.0 + (instance.upper(j) / instance.lower(j)).ln());
    let sum_hi: f64 = (0..instance.len()).filter(|&k| k != j).map(|k| instance.upper(k)).sum();
    let w = lambert_w0(sum_hi / (std::f64::consts::E * instance.upper(j)))
        .expect("argument is nonnegative");
    Ok((1.0 + r_j * w) / (1.0 + sum_hi / instance.lower(j)))
}

/// `M_gamma` as a quotable mechanism.
#[derive(Debug, Clone)]
pub struct SemiSeparableMechanism {
    gamma: f64,
    instance: Instance,
}

impl SemiSeparableMechanism {
    pub fn new(gamma: f64, instance: &Instance) -> Result<Self, SemiSepError> {
        check_gamma_range(gamma, false)?;
        Ok(SemiSeparableMechanism { gamma, instance: instance.clone() })
    }

    /// The mechanism at the optimal parameter `gamma*`.
    pub fn optimal(instance: &Instance, tol: f64) -> Self {
        let gamma = solve_gamma_star(instance, tol).gamma_star;
        SemiSeparableMechanism { gamma, instance: instance.clone() }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Mechanism for SemiSeparableMechanism {
    fn quote(&self, v: &[f64]) -> MechanismQuote {
        let mut allocation = Vec::with_capacity(v.len());
        let mut payment = 0.0;
        for (item, &x) in self.instance.items().iter().zip(v) {
            let (q, t) = item_quote(self.gamma, item.lower, item.upper, x);
            allocation.push(q);
            payment += t;
        }
        MechanismQuote { allocation, payment }
    }

    fn item_parts(&self, v: &[f64]) -> Option<Vec<(f64, f64)>> {
        Some(
            self.instance
                .items()
                .iter()
                .zip(v)
                .map(|(item, &x)| item_quote(self.gamma, item.lower, item.upper, x))
                .collect(),
        )
    }
}
