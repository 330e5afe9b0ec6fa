//! Nature's worst-case strategy: a co-monotonic ray distribution.
//!
//! Valuations are supported on the projection of the ray `v = xi * omega`
//! onto the box, `v_j(xi) = min(omega_j xi, hi_j)` for a scaling factor
//! `xi >= 1`. The direction is pinned by a parameter `eta`:
//!
//! ```text
//! omega_j = hi_j e^{-1/eta}   if ln(lo_j/hi_j) < -1/eta
//! omega_j = lo_j              otherwise
//! ```
//!
//! The scaling factor follows the law `G` with `G(1) = 0` and
//! `dG/dxi = zeta sum_j v_j(xi) / xi^2`, normalized by
//! `zeta = (sum_j (omega_j ln(hi_j/omega_j) + omega_j))^-1`. Under this law
//! the seller's best response is simply to post price `omega_j` per item,
//! earning the expected ratio `zeta * sum_j omega_j`; minimizing over `eta`
//! reproduces the mechanism side's optimal ratio, closing the saddle point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::{Instance, Valuation};
use crate::scalar::bisect_root;
use crate::semi_separable::{self, in_active_set, TwoItemCase};

/// Scaling factors are capped here when inverting the far tail; the residual
/// probability mass beyond the cap is `zeta * sum hi / XI_CAP`.
pub const XI_CAP: f64 = 1e12;

/// Relative tolerance merging coincident cap points into one segment
/// boundary.
const BREAKPOINT_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AdversaryError {
    #[error("parameter {value} outside {domain}")]
    DomainError { value: f64, domain: &'static str },
    #[error("expected a two-item instance, found {found} items")]
    ShapeMismatch { found: usize },
    #[error("direction vector invalid: {reason}")]
    InvalidDirection { reason: &'static str },
    #[error("instance admits no ray distribution (zero direction)")]
    DegenerateInstance,
}

#[derive(Debug, Clone)]
struct Segment {
    start: f64,
    /// G at the segment start.
    cdf_at_start: f64,
    /// Sum of omega over items still uncapped on this segment.
    active_omega: f64,
    /// Sum of upper bounds over items already capped.
    capped_upper: f64,
}

/// The worst-case ray distribution `F_eta` (or a warm-up variant with an
/// explicit direction vector).
#[derive(Debug, Clone)]
pub struct AdversaryDistribution {
    eta: Option<f64>,
    omega: Vec<f64>,
    zeta: f64,
    /// Ray vertices: `xi = 1` followed by the distinct cap points
    /// `hi_j / omega_j` in ascending order.
    breakpoints: Vec<f64>,
    segments: Vec<Segment>,
    upper_sum: f64,
    instance: Instance,
}

/// Builds `F_eta` for `eta in (0, 1]`.
pub fn build(eta: f64, instance: &Instance) -> Result<AdversaryDistribution, AdversaryError> {
    if !eta.is_finite() || eta <= 0.0 || eta > 1.0 + 1e-12 {
        return Err(AdversaryError::DomainError { value: eta, domain: "(0, 1]" });
    }
    let scale = (-1.0 / eta).exp();
    let omega: Vec<f64> = instance
        .items()
        .iter()
        .map(|item| {
            if in_active_set(eta, item.lower, item.upper) {
                item.upper * scale
            } else {
                item.lower
            }
        })
        .collect();
    let mut dist = AdversaryDistribution::with_direction(omega, instance)?;
    dist.eta = Some(eta);
    Ok(dist)
}

impl AdversaryDistribution {
    /// Builds the ray distribution for an explicit direction `omega`
    /// (componentwise in `[lo_j, hi_j]`, strictly positive).
    pub fn with_direction(
        omega: Vec<f64>,
        instance: &Instance,
    ) -> Result<Self, AdversaryError> {
        if omega.len() != instance.len() {
            return Err(AdversaryError::InvalidDirection { reason: "length mismatch" });
        }
        for (j, &w) in omega.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(AdversaryError::InvalidDirection { reason: "components must be positive" });
            }
            let slack = 1e-9 * instance.upper(j);
            if w < instance.lower(j) - slack || w > instance.upper(j) + slack {
                return Err(AdversaryError::InvalidDirection { reason: "component outside support bounds" });
            }
        }
        let norm: f64 = omega
            .iter()
            .zip(instance.items())
            .map(|(&w, item)| w * (item.upper / w).ln() + w)
            .sum();
        if !(norm > 0.0) {
            return Err(AdversaryError::DegenerateInstance);
        }
        let zeta = 1.0 / norm;

        let mut caps: Vec<f64> =
            omega.iter().zip(instance.items()).map(|(&w, item)| item.upper / w).collect();
        caps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut breakpoints = vec![1.0];
        for c in caps {
            let last = *breakpoints.last().unwrap();
            if c > last * (1.0 + BREAKPOINT_REL_TOL) {
                breakpoints.push(c);
            }
        }

        let upper_sum: f64 = instance.items().iter().map(|i| i.upper).sum();
        let mut segments = Vec::with_capacity(breakpoints.len());
        let mut cum = 0.0;
        for (k, &start) in breakpoints.iter().enumerate() {
            let mut active_omega = 0.0;
            let mut capped_upper = 0.0;
            for (&w, item) in omega.iter().zip(instance.items()) {
                if item.upper / w > start * (1.0 + BREAKPOINT_REL_TOL) {
                    active_omega += w;
                } else {
                    capped_upper += item.upper;
                }
            }
            segments.push(Segment { start, cdf_at_start: cum, active_omega, capped_upper });
            if k + 1 < breakpoints.len() {
                let end = breakpoints[k + 1];
                cum += zeta
                    * (active_omega * (end / start).ln()
                        + capped_upper * (1.0 / start - 1.0 / end));
            }
        }

        Ok(AdversaryDistribution {
            eta: None,
            omega,
            zeta,
            breakpoints,
            segments,
            upper_sum,
            instance: instance.clone(),
        })
    }

    pub fn eta(&self) -> Option<f64> {
        self.eta
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    /// Point on the ray at scaling factor `xi >= 1`.
    pub fn valuation_at(&self, xi: f64) -> Result<Valuation, AdversaryError> {
        if !xi.is_finite() || xi < 1.0 - 1e-12 {
            return Err(AdversaryError::DomainError { value: xi, domain: "[1, inf)" });
        }
        Ok(Valuation(
            self.omega
                .iter()
                .zip(self.instance.items())
                .map(|(&w, item)| (w * xi).min(item.upper))
                .collect(),
        ))
    }

    /// CDF of the scaling factor. Piecewise closed form: on a segment whose
    /// uncapped set is `A`, the antiderivative of the density is
    /// `zeta (sum_A omega ln xi - sum_{capped} hi / xi)`; past the last cap
    /// point the tail is `1 - zeta sum_j hi_j / xi`.
    pub fn cdf(&self, xi: f64) -> f64 {
        if xi <= 1.0 {
            return 0.0;
        }
        let last = *self.breakpoints.last().unwrap();
        if xi >= last {
            return 1.0 - self.zeta * self.upper_sum / xi;
        }
        let k = match self
            .breakpoints
            .binary_search_by(|b| b.partial_cmp(&xi).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let seg = &self.segments[k];
        seg.cdf_at_start
            + self.zeta
                * (seg.active_omega * (xi / seg.start).ln()
                    + seg.capped_upper * (1.0 / seg.start - 1.0 / xi))
    }

    /// Deterministic inverse-CDF sampling of the scaling factor.
    ///
    /// The tail segment inverts in closed form, `xi = zeta sum hi / (1 - u)`
    /// capped at [`XI_CAP`]; interior segments invert by bisection.
    pub fn sample_xi(&self, count: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = *self.breakpoints.last().unwrap();
        let tail_start_cdf = self.cdf(last);
        (0..count)
            .map(|_| {
                let u: f64 = rng.gen();
                if u >= tail_start_cdf {
                    (self.zeta * self.upper_sum / (1.0 - u)).min(XI_CAP)
                } else {
                    let k = self
                        .segments
                        .partition_point(|s| s.cdf_at_start <= u)
                        .saturating_sub(1);
                    let lo = self.breakpoints[k];
                    let hi = self.breakpoints[k + 1];
                    bisect_root(|xi| self.cdf(xi) - u, lo, hi, (hi - lo) * 1e-14)
                        .map(|r| r.root)
                        .unwrap_or(lo)
                }
            })
            .collect()
    }

    /// Valuation samples along the ray.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<Valuation> {
        self.sample_xi(count, seed)
            .into_iter()
            .map(|xi| self.valuation_at(xi).expect("sampled xi >= 1"))
            .collect()
    }

    /// The seller's best achievable expected ratio under this distribution:
    /// `zeta * sum_j omega_j`, attained by posting price `omega_j` per item.
    pub fn best_response_value(&self) -> f64 {
        self.zeta * self.omega.iter().sum::<f64>()
    }

    /// The prices attaining the best response.
    pub fn optimal_posted_prices(&self) -> &[f64] {
        &self.omega
    }

    /// Discretized best-response oracle: per item, maximize the marginal
    /// value `v_j(xi) zeta / xi` of allocating at `xi` over a log-spaced
    /// grid, then sum. Matches `zeta * sum omega` because the maximand is
    /// constant at `zeta omega_j` until the item caps and decays after.
    pub fn best_response_grid_oracle(&self, xi_points: usize) -> f64 {
        let last = *self.breakpoints.last().unwrap();
        let hi = (last * 10.0).max(10.0);
        let n = xi_points.max(2);
        let mut total = 0.0;
        for (j, &w) in self.omega.iter().enumerate() {
            let cap = self.instance.upper(j);
            let mut best = f64::NEG_INFINITY;
            for i in 0..n {
                let xi = hi.powf(i as f64 / (n - 1) as f64); // log-spaced from 1
                let value = (w * xi).min(cap) * self.zeta / xi;
                if value > best {
                    best = value;
                }
            }
            total += best;
        }
        total
    }
}

/// Nature's optimal parameter: the root of `phi`, shared with the mechanism
/// side. Returns 0 for instances with all-zero lower bounds.
pub fn eta_star(instance: &Instance, tol: f64) -> f64 {
    let sol = semi_separable::solve_gamma_star(instance, tol);
    if sol.degenerate {
        return 0.0;
    }
    let eta = sol.gamma_star;
    debug_assert!(
        {
            let dist = build(eta, instance).expect("eta in (0, 1]");
            (dist.best_response_value() - eta).abs() <= (100.0 * tol).max(1e-8)
        },
        "best response at eta* must equal eta*"
    );
    eta
}

fn sorted_two_item(instance: &Instance) -> Result<((f64, f64), (f64, f64)), AdversaryError> {
    if instance.len() != 2 {
        return Err(AdversaryError::ShapeMismatch { found: instance.len() });
    }
    let order = instance.sorted_order();
    Ok((
        (instance.lower(order[0]), instance.upper(order[0])),
        (instance.lower(order[1]), instance.upper(order[1])),
    ))
}

/// Seller's best ratio under the two-item warm-up ray with direction
/// `(omega1, lo2)`:
/// `(omega1 + lo2) / (omega1 ln(hi1/omega1) + omega1 + lo2 ln(hi2/lo2) + lo2)`.
pub fn two_item_ratio(omega1: f64, instance: &Instance) -> Result<f64, AdversaryError> {
    let ((lo1, hi1), (lo2, hi2)) = sorted_two_item(instance)?;
    if lo2 <= 0.0 {
        return Err(AdversaryError::DegenerateInstance);
    }
    let upper_limit = hi1 * lo2 / hi2;
    if omega1 < lo1 - 1e-9 * hi1 || omega1 > upper_limit + 1e-9 * hi1 {
        return Err(AdversaryError::DomainError { value: omega1, domain: "[lo1, hi1 lo2 / hi2]" });
    }
    let norm = omega1 * (hi1 / omega1).ln() + omega1 + lo2 * (hi2 / lo2).ln() + lo2;
    Ok((omega1 + lo2) / norm)
}

/// Nature's optimal two-item direction component.
///
/// The ratio's derivative in `omega1` carries the sign of
/// `omega1 + lo2 (ln(hi2 omega1 / (lo2 hi1)) + 1)`, an increasing function.
/// Nonnegative at `omega1 = lo1` means the ratio is increasing on the whole
/// admissible range and the lower bound is optimal; otherwise the interior
/// first-order condition is bracketed and solved.
pub fn two_item_optimal_omega1(
    instance: &Instance,
) -> Result<(f64, TwoItemCase), AdversaryError> {
    let ((lo1, hi1), (lo2, hi2)) = sorted_two_item(instance)?;
    if lo2 <= 0.0 {
        return Err(AdversaryError::DegenerateInstance);
    }
    let foc = |w: f64| w + lo2 * ((hi2 * w / (lo2 * hi1)).ln() + 1.0);
    if foc(lo1) >= 0.0 {
        return Ok((lo1, TwoItemCase::LowerBounds));
    }
    let upper_limit = hi1 * lo2 / hi2;
    let root = bisect_root(foc, lo1, upper_limit, 1e-13 * upper_limit)
        .expect("FOC is negative at lo1 and positive at the cap");
    Ok((root.root, TwoItemCase::Thresholded))
}

/// Summary of a distribution for reporting.
#[derive(Debug, Clone, Serialize)]
pub struct AdversarySummary {
    pub eta: Option<f64>,
    pub omega: Vec<f64>,
    pub zeta: f64,
    pub breakpoints: Vec<f64>,
    pub best_response_value: f64,
}

impl AdversaryDistribution {
    pub fn summary(&self) -> AdversarySummary {
        AdversarySummary {
            eta: self.eta,
            omega: self.omega.clone(),
            zeta: self.zeta,
            breakpoints: self.breakpoints.clone(),
            best_response_value: self.best_response_value(),
        }
    }
}
