//! Shared domain types: problem instances, valuations, mechanism quotes,
//! randomized price laws and bundle partitions, plus their validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack used when checking that a valuation lies in the support box
/// or that a quote satisfies individual rationality. Covers accumulated
/// floating-point noise only, never a modelling tolerance.
pub const SUPPORT_REL_TOL: f64 = 1e-9;

/// Errors raised by instance, valuation and quote validation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("instance has no items")]
    EmptyInstance,
    #[error("item {item}: upper bound must be positive")]
    NonPositiveUpper { item: String },
    #[error("item {item}: lower bound must be nonnegative")]
    NegativeLower { item: String },
    #[error("item {item}: lower bound exceeds upper bound")]
    LowerExceedsUpper { item: String },
    #[error("item {item}: bound is not finite")]
    NonFiniteBound { item: String },
    #[error("valuation component {index} = {value} lies outside the support box")]
    OutOfSupport { index: usize, value: f64 },
    #[error("valuation has {found} components, instance has {expected} items")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("allocation component {index} = {value} outside [0, 1]")]
    AllocationOutOfRange { index: usize, value: f64 },
    #[error("quote violates individual rationality: payment {payment} > surplus {surplus}")]
    IrViolation { payment: f64, surplus: f64 },
    #[error("price law total mass {mass} deviates from 1 beyond tolerance")]
    MassMismatch { mass: f64 },
}

/// One product: a name and its valuation support `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl Item {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Item { name: name.into(), lower, upper }
    }

    fn validate(&self) -> Result<(), ModelError> {
        let item = self.name.clone();
        if !self.lower.is_finite() || !self.upper.is_finite() {
            return Err(ModelError::NonFiniteBound { item });
        }
        if self.upper <= 0.0 {
            return Err(ModelError::NonPositiveUpper { item });
        }
        if self.lower < 0.0 {
            return Err(ModelError::NegativeLower { item });
        }
        if self.lower > self.upper {
            return Err(ModelError::LowerExceedsUpper { item });
        }
        Ok(())
    }
}

/// A validated problem instance: the support box `V`.
///
/// Items keep their user-supplied order; solvers that need the items sorted
/// by relative support width `lower/upper` obtain a stable permutation from
/// [`Instance::sorted_order`] and report results against original indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance")]
pub struct Instance {
    items: Vec<Item>,
}

#[derive(Deserialize)]
struct RawInstance {
    items: Vec<Item>,
}

impl TryFrom<RawInstance> for Instance {
    type Error = ModelError;
    fn try_from(raw: RawInstance) -> Result<Self, ModelError> {
        Instance::new(raw.items)
    }
}

impl Instance {
    /// Validates every item bound and returns the instance.
    pub fn new(items: Vec<Item>) -> Result<Self, ModelError> {
        if items.is_empty() {
            return Err(ModelError::EmptyInstance);
        }
        for item in &items {
            item.validate()?;
        }
        Ok(Instance { items })
    }

    /// Convenience constructor from `(lower, upper)` pairs with generated names.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self, ModelError> {
        let items = bounds
            .iter()
            .enumerate()
            .map(|(i, &(lower, upper))| Item::new(format!("item{}", i + 1), lower, upper))
            .collect();
        Instance::new(items)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn lower(&self, j: usize) -> f64 {
        self.items[j].lower
    }

    pub fn upper(&self, j: usize) -> f64 {
        self.items[j].upper
    }

    pub fn lowers(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.lower).collect()
    }

    pub fn uppers(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.upper).collect()
    }

    /// True when every lower bound is zero: no revenue guarantee is possible
    /// and the optimal ratio degenerates to zero.
    pub fn is_degenerate(&self) -> bool {
        self.items.iter().all(|i| i.lower == 0.0)
    }

    /// Stable permutation of item indices by increasing `lower/upper`.
    /// Ties keep original index order.
    pub fn sorted_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.sort_by(|&a, &b| {
            let ra = self.items[a].lower / self.items[a].upper;
            let rb = self.items[b].lower / self.items[b].upper;
            ra.partial_cmp(&rb).expect("validated bounds are finite")
        });
        order
    }

    /// Componentwise support membership with floating-point slack.
    pub fn contains(&self, v: &[f64]) -> bool {
        v.len() == self.items.len()
            && self.items.iter().zip(v).all(|(item, &x)| {
                x >= item.lower - SUPPORT_REL_TOL * item.lower.max(1.0)
                    && x <= item.upper + SUPPORT_REL_TOL * item.upper.max(1.0)
            })
    }

    pub fn validate_valuation(&self, v: &[f64]) -> Result<(), ModelError> {
        if v.len() != self.items.len() {
            return Err(ModelError::DimensionMismatch { expected: self.items.len(), found: v.len() });
        }
        for (index, (item, &value)) in self.items.iter().zip(v).enumerate() {
            if value < item.lower - SUPPORT_REL_TOL * item.lower.max(1.0)
                || value > item.upper + SUPPORT_REL_TOL * item.upper.max(1.0)
            {
                return Err(ModelError::OutOfSupport { index, value });
            }
        }
        Ok(())
    }
}

/// A buyer valuation profile, one value per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Valuation(pub Vec<f64>);

impl Valuation {
    /// Validates membership in the instance's support box.
    pub fn checked(values: Vec<f64>, instance: &Instance) -> Result<Self, ModelError> {
        instance.validate_valuation(&values)?;
        Ok(Valuation(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl std::ops::Deref for Valuation {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Valuation {
    fn from(values: Vec<f64>) -> Self {
        Valuation(values)
    }
}

/// Allocation probabilities and the expected payment quoted at one valuation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismQuote {
    pub allocation: Vec<f64>,
    pub payment: f64,
}

impl MechanismQuote {
    /// Checked constructor: allocations in `[0, 1]` and individual
    /// rationality (`payment <= allocation . v`) at the quoting valuation,
    /// both up to floating-point slack.
    pub fn new(allocation: Vec<f64>, payment: f64, at: &[f64]) -> Result<Self, ModelError> {
        for (index, &q) in allocation.iter().enumerate() {
            if !(-SUPPORT_REL_TOL..=1.0 + SUPPORT_REL_TOL).contains(&q) {
                return Err(ModelError::AllocationOutOfRange { index, value: q });
            }
        }
        let surplus: f64 = allocation.iter().zip(at).map(|(q, v)| q * v).sum();
        if payment > surplus + SUPPORT_REL_TOL * surplus.abs().max(1.0) {
            return Err(ModelError::IrViolation { payment, surplus });
        }
        Ok(MechanismQuote { allocation, payment })
    }

    /// Buyer surplus `allocation . v - payment` at valuation `v`.
    pub fn utility(&self, v: &[f64]) -> f64 {
        self.allocation.iter().zip(v).map(|(q, x)| q * x).sum::<f64>() - self.payment
    }
}

/// A direct mechanism: quotes an allocation and payment at any valuation in
/// the support box.
///
/// Mechanisms whose payment is a sum of single-dimensional terms additionally
/// expose the per-item decomposition, which lets feasibility checks run
/// per dimension instead of over the full valuation grid.
pub trait Mechanism: Sync {
    /// Quote at `v`; callers guarantee `v` lies in the support box.
    fn quote(&self, v: &[f64]) -> MechanismQuote;

    /// Per-item `(allocation_j, payment_j)` terms when the mechanism is a sum
    /// of one-dimensional mechanisms, `None` otherwise.
    fn item_parts(&self, _v: &[f64]) -> Option<Vec<(f64, f64)>> {
        None
    }
}

/// Atom of a randomized posted-price law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceAtom {
    pub location: f64,
    pub mass: f64,
}

/// Randomized posted-price law for one item: a continuous density
/// `gamma / p` on `[support.0, support.1]` plus an optional atom at the lower
/// support bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemPriceLaw {
    pub name: String,
    pub gamma: f64,
    pub support: (f64, f64),
    pub atom: Option<PriceAtom>,
}

impl ItemPriceLaw {
    pub fn density_at(&self, price: f64) -> f64 {
        if price >= self.support.0 && price <= self.support.1 && price > 0.0 {
            self.gamma / price
        } else {
            0.0
        }
    }

    pub fn continuous_mass(&self) -> f64 {
        if self.support.1 > self.support.0 && self.support.0 > 0.0 {
            self.gamma * (self.support.1 / self.support.0).ln()
        } else {
            0.0
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.continuous_mass() + self.atom.as_ref().map_or(0.0, |a| a.mass)
    }
}

/// Per-item price laws implementing a semi-separable mechanism.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceLaw {
    pub items: Vec<ItemPriceLaw>,
}

/// Tolerance on each item law's total probability mass.
pub const PRICE_MASS_TOL: f64 = 1e-9;

impl PriceLaw {
    /// Checks that every item's continuous mass plus atom mass is 1.
    pub fn new(items: Vec<ItemPriceLaw>) -> Result<Self, ModelError> {
        for law in &items {
            let mass = law.total_mass();
            if (mass - 1.0).abs() > PRICE_MASS_TOL {
                return Err(ModelError::MassMismatch { mass });
            }
        }
        Ok(PriceLaw { items })
    }
}

/// One bundle: member item indices (0-based) and bounds on the bundle's
/// total valuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleBounds {
    pub members: Vec<usize>,
    pub lower: f64,
    pub upper: f64,
}

impl BundleBounds {
    pub fn new(members: Vec<usize>, lower: f64, upper: f64) -> Self {
        BundleBounds { members, lower, upper }
    }
}

/// A partition of the item set into bundles with bundle-sum bounds.
/// Exclusivity and coverage are validated by the bundle solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub bundles: Vec<BundleBounds>,
}

impl PartitionSpec {
    pub fn new(bundles: Vec<BundleBounds>) -> Self {
        PartitionSpec { bundles }
    }

    /// Item count implied by the largest member index.
    pub fn n_items(&self) -> usize {
        self.bundles
            .iter()
            .flat_map(|b| b.members.iter())
            .max()
            .map_or(0, |&m| m + 1)
    }
}

/// A collection of candidate subsets with bundle-sum bounds; partitions of
/// the item set are searched within it. `n_items` may exceed the largest
/// member index to mark uncoverable items explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionSpec {
    #[serde(default)]
    pub n_items: Option<usize>,
    pub subsets: Vec<BundleBounds>,
}

impl CollectionSpec {
    pub fn new(subsets: Vec<BundleBounds>) -> Self {
        CollectionSpec { n_items: None, subsets }
    }

    pub fn with_n_items(n_items: usize, subsets: Vec<BundleBounds>) -> Self {
        CollectionSpec { n_items: Some(n_items), subsets }
    }

    pub fn resolved_n_items(&self) -> usize {
        self.n_items.unwrap_or_else(|| {
            self.subsets
                .iter()
                .flat_map(|b| b.members.iter())
                .max()
                .map_or(0, |&m| m + 1)
        })
    }
}
