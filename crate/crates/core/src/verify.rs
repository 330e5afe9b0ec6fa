//! Numerical certification of the saddle point.
//!
//! Three independent checks close the loop around `gamma*`:
//! feasibility (IC/IR of the quoted mechanism on valuation grids), the
//! mechanism side (the grid minimum of `t(v) / sum v` cannot fall below
//! `gamma*`), and the distribution side (no mechanism can beat `gamma*`
//! in expectation under the worst-case ray law, witnessed by the posted-price
//! best response). Grids are geometric in every dimension because the
//! mechanism's structure is logarithmic; exact corners and analytic
//! candidate minimizers are appended so the known minimizer is always
//! represented exactly.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::adversary::{self, AdversaryDistribution};
use crate::model::{Instance, Mechanism, MechanismQuote, Valuation};
use crate::semi_separable::{self, SemiSeparableMechanism};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum VerifyError {
    #[error("grid too large: {points} points ({reason})")]
    TooLarge { points: usize, reason: &'static str },
    #[error("grid needs at least two points per dimension, got {0}")]
    InvalidGrid(usize),
    #[error("instance admits no certificate (all lower bounds zero)")]
    DegenerateInstance,
    #[error("mechanism error: {0}")]
    Mechanism(String),
}

impl From<semi_separable::SemiSepError> for VerifyError {
    fn from(e: semi_separable::SemiSepError) -> Self {
        VerifyError::Mechanism(e.to_string())
    }
}

impl From<adversary::AdversaryError> for VerifyError {
    fn from(e: adversary::AdversaryError) -> Self {
        VerifyError::Mechanism(e.to_string())
    }
}

/// Worst observed feasibility violations over a valuation grid. Values are
/// raw maxima of the violation expressions; feasible mechanisms keep both at
/// zero up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IcIrReport {
    pub max_ic_violation: f64,
    pub max_ir_violation: f64,
}

/// Grid minimum of the pointwise performance ratio and where it is attained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridMin {
    pub ratio: f64,
    pub argmin: Valuation,
}

/// Monte-Carlo estimate of an expected ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Saddle-point certificate: the three checks and their verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaddleReport {
    pub gamma_star: f64,
    pub grid_min_ratio: f64,
    pub best_response_value: f64,
    pub max_ic_violation: f64,
    pub max_ir_violation: f64,
    pub grid_resolution: usize,
    pub verdict: Verdict,
}

/// A closed halfspace `normal . v <= offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

const EXHAUSTIVE_MAX_POINTS: usize = 46_000;
const EXHAUSTIVE_MAX_PER_DIM: usize = 40;
const EXHAUSTIVE_MAX_DIMS: usize = 4;
const TENSOR_MAX_POINTS: usize = 250_000_000;
const GENERIC_MAX_POINTS: usize = 10_000_000;

/// Geometric grid on one item's support with exact corners and extra
/// candidate coordinates appended. A zero lower bound starts the geometric
/// part at `1e-6 * upper` and keeps the exact zero corner.
fn axis_grid(lower: f64, upper: f64, n: usize, extras: &[f64]) -> Vec<f64> {
    let mut vals: Vec<f64> = Vec::with_capacity(n + extras.len() + 2);
    if upper > lower {
        let lo_eff = if lower > 0.0 { lower } else { upper * 1e-6 };
        let ratio = upper / lo_eff;
        for i in 0..n {
            vals.push(lo_eff * ratio.powf(i as f64 / (n - 1) as f64));
        }
    }
    vals.push(lower);
    vals.push(upper);
    for &x in extras {
        if x >= lower - 1e-12 && x <= upper * (1.0 + 1e-12) {
            vals.push(x.clamp(lower, upper));
        }
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals.dedup();
    vals
}

fn instance_axes(instance: &Instance, n: usize, extras: &[Valuation]) -> Vec<Vec<f64>> {
    (0..instance.len())
        .map(|j| {
            let coords: Vec<f64> = extras.iter().map(|v| v[j]).collect();
            axis_grid(instance.lower(j), instance.upper(j), n, &coords)
        })
        .collect()
}

fn total_points(axes: &[Vec<f64>]) -> usize {
    axes.iter().fold(1usize, |acc, a| acc.saturating_mul(a.len()))
}

/// Maximum incentive-compatibility and individual-rationality violations of
/// a mechanism over a tensor grid: the largest gain from misreporting
/// `max_{v,v'} [u(v'|v) - u(v|v)]` and the largest participation loss
/// `max_v [-u(v)]`.
///
/// Mechanisms exposing a per-item decomposition are checked dimension by
/// dimension, which is exact for them and runs in `J n^2`; everything else
/// falls back to the full pairwise grid, guarded in size.
pub fn check_ic_ir<M: Mechanism + ?Sized>(
    mechanism: &M,
    instance: &Instance,
    grid_points_per_dim: usize,
) -> Result<IcIrReport, VerifyError> {
    if grid_points_per_dim < 2 {
        return Err(VerifyError::InvalidGrid(grid_points_per_dim));
    }
    let probe = instance.uppers();
    if mechanism.item_parts(&probe).is_some() {
        check_ic_ir_per_dimension(mechanism, instance, grid_points_per_dim)
    } else {
        check_ic_ir_exhaustive(mechanism, instance, grid_points_per_dim)
    }
}

fn check_ic_ir_per_dimension<M: Mechanism + ?Sized>(
    mechanism: &M,
    instance: &Instance,
    n: usize,
) -> Result<IcIrReport, VerifyError> {
    let axes = instance_axes(instance, n, &[]);
    let base = instance.uppers();
    let mut max_ic = 0.0f64;
    let mut max_ir = 0.0f64;
    for (j, axis) in axes.iter().enumerate() {
        let parts: Vec<(f64, f64)> = axis
            .iter()
            .map(|&x| {
                let mut v = base.clone();
                v[j] = x;
                mechanism.item_parts(&v).expect("decomposition probed above")[j]
            })
            .collect();
        for (a_idx, &a) in axis.iter().enumerate() {
            let (q_a, t_a) = parts[a_idx];
            let truthful = q_a * a - t_a;
            max_ir = max_ir.max(-truthful);
            for &(q_b, t_b) in &parts {
                max_ic = max_ic.max(q_b * a - t_b - truthful);
            }
        }
    }
    Ok(IcIrReport { max_ic_violation: max_ic, max_ir_violation: max_ir })
}

/// Full pairwise IC/IR grid check, independent of any mechanism structure.
pub fn check_ic_ir_exhaustive<M: Mechanism + ?Sized>(
    mechanism: &M,
    instance: &Instance,
    grid_points_per_dim: usize,
) -> Result<IcIrReport, VerifyError> {
    if grid_points_per_dim < 2 {
        return Err(VerifyError::InvalidGrid(grid_points_per_dim));
    }
    if instance.len() > EXHAUSTIVE_MAX_DIMS || grid_points_per_dim > EXHAUSTIVE_MAX_PER_DIM {
        return Err(VerifyError::TooLarge {
            points: grid_points_per_dim.pow(instance.len() as u32),
            reason: "pairwise IC grid",
        });
    }
    let axes = instance_axes(instance, grid_points_per_dim, &[]);
    let points = total_points(&axes);
    if points > EXHAUSTIVE_MAX_POINTS {
        return Err(VerifyError::TooLarge { points, reason: "pairwise IC grid" });
    }

    let dims = axes.len();
    let mut valuations: Vec<f64> = Vec::with_capacity(points * dims);
    let mut index = vec![0usize; dims];
    loop {
        for (j, &i) in index.iter().enumerate() {
            valuations.push(axes[j][i]);
        }
        if !advance(&mut index, &axes) {
            break;
        }
    }
    let quotes: Vec<MechanismQuote> = (0..points)
        .into_par_iter()
        .map(|i| mechanism.quote(&valuations[i * dims..(i + 1) * dims]))
        .collect();

    let max_ir = quotes
        .par_iter()
        .enumerate()
        .map(|(i, q)| -q.utility(&valuations[i * dims..(i + 1) * dims]))
        .reduce(|| f64::NEG_INFINITY, f64::max);

    let max_ic = (0..points)
        .into_par_iter()
        .map(|i| {
            let v = &valuations[i * dims..(i + 1) * dims];
            let truthful = quotes[i].utility(v);
            let mut worst = f64::NEG_INFINITY;
            for q in &quotes {
                let gain = q.utility(v) - truthful;
                if gain > worst {
                    worst = gain;
                }
            }
            worst
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);

    Ok(IcIrReport { max_ic_violation: max_ic, max_ir_violation: max_ir })
}

fn advance(index: &mut [usize], axes: &[Vec<f64>]) -> bool {
    for j in (0..index.len()).rev() {
        index[j] += 1;
        if index[j] < axes[j].len() {
            return true;
        }
        index[j] = 0;
    }
    false
}

/// Minimum of `t(v) / sum(v)` over the tensor grid (geometric points, exact
/// corners, and the supplied candidate valuations), with the minimizer.
/// Points with zero total valuation are excluded.
pub fn grid_min_ratio<M: Mechanism + ?Sized>(
    mechanism: &M,
    instance: &Instance,
    grid_points_per_dim: usize,
    extra_candidates: &[Valuation],
) -> Result<GridMin, VerifyError> {
    if grid_points_per_dim < 2 {
        return Err(VerifyError::InvalidGrid(grid_points_per_dim));
    }
    let axes = instance_axes(instance, grid_points_per_dim, extra_candidates);
    let points = total_points(&axes);
    let probe = instance.uppers();
    let decomposed = mechanism.item_parts(&probe).is_some();
    let cap = if decomposed { TENSOR_MAX_POINTS } else { GENERIC_MAX_POINTS };
    if points > cap {
        return Err(VerifyError::TooLarge { points, reason: "ratio grid" });
    }

    let (best_ratio, best_flat) = if decomposed {
        // per-axis payment tables, then a flat scan accumulating sums
        let base = instance.uppers();
        let tables: Vec<Vec<(f64, f64)>> = axes
            .iter()
            .enumerate()
            .map(|(j, axis)| {
                axis.iter()
                    .map(|&x| {
                        let mut v = base.clone();
                        v[j] = x;
                        let t = mechanism.item_parts(&v).expect("probed above")[j].1;
                        (x, t)
                    })
                    .collect()
            })
            .collect();
        scan_tensor_tables(&axes, &tables)
    } else {
        scan_tensor_quotes(mechanism, &axes)
    };

    if best_flat == usize::MAX {
        return Err(VerifyError::DegenerateInstance);
    }
    let argmin = unflatten(best_flat, &axes);
    Ok(GridMin { ratio: best_ratio, argmin: Valuation(argmin) })
}

fn strides(axes: &[Vec<f64>]) -> Vec<usize> {
    let mut strides = vec![1usize; axes.len()];
    for j in (0..axes.len().saturating_sub(1)).rev() {
        strides[j] = strides[j + 1] * axes[j + 1].len();
    }
    strides
}

fn unflatten(flat: usize, axes: &[Vec<f64>]) -> Vec<f64> {
    let strides = strides(axes);
    axes.iter()
        .zip(&strides)
        .map(|(axis, &s)| axis[(flat / s) % axis.len()])
        .collect()
}

fn combine_min(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
        b
    } else {
        a
    }
}

fn scan_tensor_tables(axes: &[Vec<f64>], tables: &[Vec<(f64, f64)>]) -> (f64, usize) {
    let first_len = axes[0].len();
    let tail_points: usize = axes[1..].iter().map(|a| a.len()).product();
    (0..first_len)
        .into_par_iter()
        .map(|i0| {
            let (v0, t0) = tables[0][i0];
            let mut best = (f64::INFINITY, usize::MAX);
            let mut index = vec![0usize; axes.len() - 1];
            for flat_tail in 0..tail_points {
                let mut total = v0;
                let mut payment = t0;
                for (j, &i) in index.iter().enumerate() {
                    let (v, t) = tables[j + 1][i];
                    total += v;
                    payment += t;
                }
                if total > 0.0 {
                    let ratio = payment / total;
                    best = combine_min(best, (ratio, i0 * tail_points + flat_tail));
                }
                advance_tail(&mut index, &axes[1..]);
            }
            best
        })
        .reduce(|| (f64::INFINITY, usize::MAX), combine_min)
}

fn scan_tensor_quotes<M: Mechanism + ?Sized>(
    mechanism: &M,
    axes: &[Vec<f64>],
) -> (f64, usize) {
    let first_len = axes[0].len();
    let tail_points: usize = axes[1..].iter().map(|a| a.len()).product();
    (0..first_len)
        .into_par_iter()
        .map(|i0| {
            let mut best = (f64::INFINITY, usize::MAX);
            let mut index = vec![0usize; axes.len() - 1];
            let mut v = vec![0.0; axes.len()];
            v[0] = axes[0][i0];
            for flat_tail in 0..tail_points {
                for (j, &i) in index.iter().enumerate() {
                    v[j + 1] = axes[j + 1][i];
                }
                let total: f64 = v.iter().sum();
                if total > 0.0 {
                    let ratio = mechanism.quote(&v).payment / total;
                    best = combine_min(best, (ratio, i0 * tail_points + flat_tail));
                }
                advance_tail(&mut index, &axes[1..]);
            }
            best
        })
        .reduce(|| (f64::INFINITY, usize::MAX), combine_min)
}

fn advance_tail(index: &mut [usize], axes: &[Vec<f64>]) {
    for j in (0..index.len()).rev() {
        index[j] += 1;
        if index[j] < axes[j].len() {
            return;
        }
        index[j] = 0;
    }
}

/// Certificate at the solved optimum.
pub fn saddle_certificate(
    instance: &Instance,
    tol: f64,
    grid_points_per_dim: usize,
    xi_grid: usize,
) -> Result<SaddleReport, VerifyError> {
    if instance.is_degenerate() {
        return Err(VerifyError::DegenerateInstance);
    }
    let solution = semi_separable::solve_gamma_star(instance, (tol * 1e-3).min(1e-12));
    saddle_certificate_at(instance, solution.gamma_star, tol, grid_points_per_dim, xi_grid)
}

/// Certificate for an arbitrary `gamma` (used to detect planted or stale
/// parameters: the grid minimum drops below `gamma` whenever `gamma` exceeds
/// the true optimum).
pub fn saddle_certificate_at(
    instance: &Instance,
    gamma: f64,
    tol: f64,
    grid_points_per_dim: usize,
    xi_grid: usize,
) -> Result<SaddleReport, VerifyError> {
    if instance.is_degenerate() {
        return Err(VerifyError::DegenerateInstance);
    }
    if !(gamma > 0.0) {
        return Err(VerifyError::Mechanism("gamma must be positive".into()));
    }
    let mechanism = SemiSeparableMechanism::new(gamma, instance)?;
    let worst = semi_separable::worst_case_ratio(gamma, instance)?;
    let mut extras = vec![worst.argmin.clone(), Valuation(instance.uppers())];
    if instance.lowers().iter().sum::<f64>() > 0.0 {
        extras.push(Valuation(instance.lowers()));
    }
    let grid = grid_min_ratio(&mechanism, instance, grid_points_per_dim, &extras)?;
    let dist = adversary::build(gamma, instance)?;
    let best_response = dist.best_response_value();
    let oracle = dist.best_response_grid_oracle(xi_grid);
    debug_assert!((oracle - best_response).abs() <= 1e-6);
    let feasibility = check_ic_ir(&mechanism, instance, grid_points_per_dim.min(200))?;

    let pass = grid.ratio >= gamma - tol
        && best_response <= gamma + tol
        && feasibility.max_ic_violation <= tol
        && feasibility.max_ir_violation <= tol;
    Ok(SaddleReport {
        gamma_star: gamma,
        grid_min_ratio: grid.ratio,
        best_response_value: best_response,
        max_ic_violation: feasibility.max_ic_violation,
        max_ir_violation: feasibility.max_ir_violation,
        grid_resolution: grid_points_per_dim,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
    })
}

/// Certifies that the worst-case distribution's support lies inside the
/// convex region cut out by the halfspaces.
///
/// The support is the piecewise-linear ray `v(xi)`; checking its vertices
/// (entry point, every cap point, and the upper corner) certifies the whole
/// path by convexity. With the support contained, the mechanism stays
/// robustly optimal for any ambiguity set between this region's
/// distributions and the full box family.
pub fn support_containment(dist: &AdversaryDistribution, halfspaces: &[Halfspace]) -> bool {
    let mut vertices: Vec<Valuation> = dist
        .breakpoints()
        .iter()
        .map(|&xi| dist.valuation_at(xi).expect("breakpoints start at 1"))
        .collect();
    vertices.push(Valuation(dist.instance().uppers()));
    for h in halfspaces {
        debug_assert_eq!(h.normal.len(), dist.instance().len());
        for v in &vertices {
            let value: f64 = h.normal.iter().zip(v.iter()).map(|(a, x)| a * x).sum();
            let scale: f64 =
                1.0 + h.offset.abs() + h.normal.iter().zip(v.iter()).map(|(a, x)| (a * x).abs()).sum::<f64>();
            if value > h.offset + 1e-12 * scale {
                return false;
            }
        }
    }
    true
}

/// Sample-average pointwise ratio `t(v) / sum(v)` of a mechanism under a
/// given distribution. Deterministic for a fixed seed.
pub fn monte_carlo_ratio<M: Mechanism + ?Sized>(
    mechanism: &M,
    dist: &AdversaryDistribution,
    count: usize,
    seed: u64,
) -> McEstimate {
    if count == 0 {
        return McEstimate { mean: f64::NAN, stderr: f64::NAN };
    }
    let samples = dist.sample(count, seed);
    let ratios: Vec<f64> = samples
        .par_iter()
        .map(|v| mechanism.quote(v).payment / v.total())
        .collect();
    let mean = ratios.iter().sum::<f64>() / count as f64;
    let stderr = if count < 2 {
        0.0
    } else {
        let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (count - 1) as f64;
        (var / count as f64).sqrt()
    };
    McEstimate { mean, stderr }
}

/// Sells nothing; trivially feasible with zero revenue.
#[derive(Debug, Clone, Copy)]
pub struct ZeroMechanism {
    pub items: usize,
}

impl Mechanism for ZeroMechanism {
    fn quote(&self, _v: &[f64]) -> MechanismQuote {
        MechanismQuote { allocation: vec![0.0; self.items], payment: 0.0 }
    }

    fn item_parts(&self, _v: &[f64]) -> Option<Vec<(f64, f64)>> {
        Some(vec![(0.0, 0.0); self.items])
    }
}

/// Posts a single take-it-or-leave-it price for the whole bundle.
#[derive(Debug, Clone, Copy)]
pub struct PostedBundlePrice {
    pub price: f64,
}

impl Mechanism for PostedBundlePrice {
    fn quote(&self, v: &[f64]) -> MechanismQuote {
        let total: f64 = v.iter().sum();
        if total >= self.price {
            MechanismQuote { allocation: vec![1.0; v.len()], payment: self.price }
        } else {
            MechanismQuote { allocation: vec![0.0; v.len()], payment: 0.0 }
        }
    }
}

/// Wraps a mechanism and shifts its payment by a constant; used to plant
/// individual-rationality faults that the grid checks must detect.
#[derive(Debug, Clone)]
pub struct PerturbedPayment<M> {
    pub inner: M,
    pub offset: f64,
}

impl<M: Mechanism> Mechanism for PerturbedPayment<M> {
    fn quote(&self, v: &[f64]) -> MechanismQuote {
        let mut quote = self.inner.quote(v);
        quote.payment += self.offset;
        quote
    }

    fn item_parts(&self, v: &[f64]) -> Option<Vec<(f64, f64)>> {
        let mut parts = self.inner.item_parts(v)?;
        if let Some(first) = parts.first_mut() {
            first.1 += self.offset;
        }
        Some(parts)
    }
}
