//! Generalized semi-separable mechanisms over bundle partitions.
//!
//! Given bounds on the *sum* of valuations within each bundle of a partition,
//! treating every bundle as a single product reduces the problem to the
//! box case: the bundle-level instance is solved for its `gamma*`, all items
//! of a bundle share the bundle's allocation probability, and the payment is
//! the bundle-level threshold payment of the bundle sums. When the seller
//! knows bounds for a whole collection of subsets, every exact cover of the
//! item set by collection members is enumerated and the best partition-level
//! guarantee is reported.

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    BundleBounds, CollectionSpec, Instance, Item, MechanismQuote, ModelError, PartitionSpec,
    PriceLaw, Valuation,
};
use crate::scalar::DEFAULT_TOL;
use crate::semi_separable::{self, GammaSolution};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BundleError {
    #[error("item {item} appears in more than one bundle")]
    OverlappingBundles { item: usize },
    #[error("item {item} is not covered by any bundle")]
    UncoveredItem { item: usize },
    #[error("bundle {bundle} is empty")]
    EmptyBundle { bundle: usize },
    #[error("bundle bounds invalid: {0}")]
    InvalidBounds(#[from] ModelError),
    #[error("collection too large: {subsets} subsets over {items} items")]
    TooLarge { subsets: usize, items: usize },
    #[error("no partition of the item set exists within the collection")]
    NoPartitionExists,
    #[error("bundle {bundle} sum {sum} outside its bounds")]
    BundleSumOutOfRange { bundle: usize, sum: f64 },
    #[error("valuation has {found} components, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Checks exclusivity and coverage; returns the item count.
fn validate_partition(partition: &PartitionSpec) -> Result<usize, BundleError> {
    let n = partition.n_items();
    let mut owner = vec![None::<usize>; n];
    for (b, bundle) in partition.bundles.iter().enumerate() {
        if bundle.members.is_empty() {
            return Err(BundleError::EmptyBundle { bundle: b });
        }
        for &item in &bundle.members {
            if owner[item].is_some() {
                return Err(BundleError::OverlappingBundles { item });
            }
            owner[item] = Some(b);
        }
    }
    if let Some(item) = owner.iter().position(|o| o.is_none()) {
        return Err(BundleError::UncoveredItem { item });
    }
    Ok(n)
}

/// Bundle-level instance: one item per bundle, named by its members.
pub fn bundle_instance(partition: &PartitionSpec) -> Result<Instance, BundleError> {
    validate_partition(partition)?;
    let items = partition
        .bundles
        .iter()
        .map(|b| {
            let name = b
                .members
                .iter()
                .map(|m| m.to_string())
                .collect::<Vec<_>>()
                .join("+");
            Item::new(name, b.lower, b.upper)
        })
        .collect();
    Ok(Instance::new(items)?)
}

/// Solved partition: the bundle-level root and its implementation.
#[derive(Debug, Clone, Serialize)]
pub struct BundleSolution {
    pub partition: PartitionSpec,
    pub bundle_instance: Instance,
    pub gamma: GammaSolution,
    /// Bundle indices in the bundle-level active set.
    pub active_bundles: Vec<usize>,
    /// Per-bundle randomized posted-price law (absent for the degenerate
    /// all-zero-lower case).
    pub price_law: Option<PriceLaw>,
}

/// Solves the bundle-level problem for one partition.
pub fn solve_partition(partition: &PartitionSpec) -> Result<BundleSolution, BundleError> {
    let instance = bundle_instance(partition)?;
    let gamma = semi_separable::solve_gamma_star(&instance, DEFAULT_TOL);
    let price_law = if gamma.degenerate {
        None
    } else {
        Some(
            semi_separable::price_law(gamma.gamma_star, &instance)
                .expect("gamma* lies in (0, 1]"),
        )
    };
    Ok(BundleSolution {
        partition: partition.clone(),
        bundle_instance: instance,
        active_bundles: gamma.active_set.clone(),
        gamma,
        price_law,
    })
}

impl BundleSolution {
    pub fn n_items(&self) -> usize {
        self.partition.n_items()
    }

    /// Sum of `v` over each bundle, in bundle order.
    pub fn bundle_sums(&self, v: &[f64]) -> Result<Vec<f64>, BundleError> {
        if v.len() != self.n_items() {
            return Err(BundleError::DimensionMismatch { expected: self.n_items(), found: v.len() });
        }
        Ok(self
            .partition
            .bundles
            .iter()
            .map(|b| b.members.iter().map(|&m| v[m]).sum())
            .collect())
    }

    /// Quote of the generalized mechanism at an item-level valuation.
    ///
    /// Only the bundle sums are constrained (the feasible set is a polytope,
    /// not a box): each sum must lie within its bundle's bounds. All items of
    /// a bundle share the bundle's allocation probability.
    pub fn quote(&self, v: &[f64]) -> Result<MechanismQuote, BundleError> {
        let sums = self.bundle_sums(v)?;
        for (b, (&sum, bounds)) in sums.iter().zip(&self.partition.bundles).enumerate() {
            let slack = 1e-9 * bounds.upper.max(1.0);
            if sum < bounds.lower - slack || sum > bounds.upper + slack {
                return Err(BundleError::BundleSumOutOfRange { bundle: b, sum });
            }
        }
        let g = self.gamma.gamma_star;
        let bundle_alloc = semi_separable::allocation(g, &self.bundle_instance, &sums)
            .expect("bundle sums validated against bundle bounds");
        let payment = semi_separable::payment(g, &self.bundle_instance, &sums)
            .expect("bundle sums validated against bundle bounds");
        let mut allocation = vec![0.0; self.n_items()];
        for (bundle, &q) in self.partition.bundles.iter().zip(&bundle_alloc) {
            for &m in &bundle.members {
                allocation[m] = q;
            }
        }
        Ok(MechanismQuote { allocation, payment })
    }

    /// The worst point of the bundle-sum polytope, lifted to item space by
    /// assigning each bundle's worst sum to its first member.
    pub fn worst_case(&self) -> Result<(f64, Valuation), BundleError> {
        let wc = semi_separable::worst_case_ratio(self.gamma.gamma_star, &self.bundle_instance)
            .map_err(|_| BundleError::NoPartitionExists)?;
        let mut v = vec![0.0; self.n_items()];
        for (bundle, &sum) in self.partition.bundles.iter().zip(wc.argmin.iter()) {
            v[bundle.members[0]] = sum;
        }
        Ok((wc.ratio, Valuation(v)))
    }
}

/// Size guard for the exact-cover search.
const MAX_SUBSETS: usize = 20;
const MAX_ITEMS: usize = 15;

/// Deduplicates subsets with identical membership, keeping the tighter
/// bounds (max lower, min upper).
fn dedup_subsets(subsets: &[BundleBounds]) -> Result<Vec<BundleBounds>, BundleError> {
    let mut out: Vec<BundleBounds> = Vec::new();
    for (i, s) in subsets.iter().enumerate() {
        if s.members.is_empty() {
            return Err(BundleError::EmptyBundle { bundle: i });
        }
        let mut members = s.members.clone();
        members.sort_unstable();
        members.dedup();
        let merged = BundleBounds { members, lower: s.lower, upper: s.upper };
        if let Some(existing) = out.iter_mut().find(|e| e.members == merged.members) {
            existing.lower = existing.lower.max(merged.lower);
            existing.upper = existing.upper.min(merged.upper);
            if existing.lower > existing.upper {
                return Err(BundleError::InvalidBounds(ModelError::LowerExceedsUpper {
                    item: format!("bundle {:?}", existing.members),
                }));
            }
        } else {
            out.push(merged);
        }
    }
    Ok(out)
}

/// Every exact cover of the item set by members of the collection.
///
/// Depth-first search branching on the least-covered uncovered item (ties to
/// the highest index), trying candidate subsets in collection order; results
/// are therefore deterministic. Each partition lists its bundles sorted by
/// smallest member.
pub fn enumerate_partitions(
    collection: &CollectionSpec,
) -> Result<Vec<PartitionSpec>, BundleError> {
    let n = collection.resolved_n_items();
    if collection.subsets.len() > MAX_SUBSETS && n > MAX_ITEMS {
        return Err(BundleError::TooLarge { subsets: collection.subsets.len(), items: n });
    }
    let subsets = dedup_subsets(&collection.subsets)?;
    for s in &subsets {
        if let Some(&m) = s.members.iter().find(|&&m| m >= n) {
            return Err(BundleError::UncoveredItem { item: m });
        }
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    let mut covered = vec![false; n];
    let mut chosen: Vec<usize> = Vec::new();
    let mut results: Vec<PartitionSpec> = Vec::new();
    search(&subsets, &mut covered, &mut chosen, &mut results);

    debug_assert!(results
        .iter()
        .all(|p| validate_partition(p).map(|items| items == n).unwrap_or(false)));
    Ok(results)
}

fn search(
    subsets: &[BundleBounds],
    covered: &mut Vec<bool>,
    chosen: &mut Vec<usize>,
    results: &mut Vec<PartitionSpec>,
) {
    let target = match pick_item(subsets, covered, chosen) {
        PickedItem::AllCovered => {
            let mut bundles: Vec<BundleBounds> =
                chosen.iter().map(|&i| subsets[i].clone()).collect();
            bundles.sort_by_key(|b| b.members[0]);
            results.push(PartitionSpec::new(bundles));
            return;
        }
        PickedItem::Dead => return,
        PickedItem::Item(j) => j,
    };
    for (i, s) in subsets.iter().enumerate() {
        if !s.members.contains(&target) {
            continue;
        }
        if s.members.iter().any(|&m| covered[m]) {
            continue;
        }
        for &m in &s.members {
            covered[m] = true;
        }
        chosen.push(i);
        search(subsets, covered, chosen, results);
        chosen.pop();
        for &m in &s.members {
            covered[m] = false;
        }
    }
}

enum PickedItem {
    AllCovered,
    Dead,
    Item(usize),
}

/// Uncovered item covered by the fewest compatible subsets; ties resolve to
/// the highest index.
fn pick_item(subsets: &[BundleBounds], covered: &[bool], chosen: &[usize]) -> PickedItem {
    let _ = chosen;
    let mut best: Option<(usize, usize)> = None; // (count, item)
    for (item, &is_covered) in covered.iter().enumerate() {
        if is_covered {
            continue;
        }
        let count = subsets
            .iter()
            .filter(|s| s.members.contains(&item) && s.members.iter().all(|&m| !covered[m]))
            .count();
        if count == 0 {
            return PickedItem::Dead;
        }
        match best {
            Some((c, _)) if count > c => {}
            _ => best = Some((count, item)),
        }
    }
    match best {
        None => PickedItem::AllCovered,
        Some((_, item)) => PickedItem::Item(item),
    }
}

/// Best-partition search result. The winning value is a guarantee (a lower
/// bound on what the collection's information supports), not a proven
/// optimum over the collection's full polytope.
#[derive(Debug, Clone, Serialize)]
pub struct BestPartition {
    pub best: BundleSolution,
    pub candidates: Vec<(PartitionSpec, f64)>,
}

/// Solves every enumerated partition and returns the one with the largest
/// bundle-level `gamma*`. Ties prefer fewer bundles, then the
/// lexicographically smaller bundle list.
pub fn best_partition(collection: &CollectionSpec) -> Result<BestPartition, BundleError> {
    let partitions = enumerate_partitions(collection)?;
    if partitions.is_empty() {
        return Err(BundleError::NoPartitionExists);
    }
    let mut solved: Vec<(PartitionSpec, BundleSolution)> = Vec::with_capacity(partitions.len());
    for p in partitions {
        let solution = solve_partition(&p)?;
        solved.push((p, solution));
    }
    let mut best_index = 0;
    for i in 1..solved.len() {
        let (cur, best) = (&solved[i], &solved[best_index]);
        let decided = cur.1.gamma.gamma_star.partial_cmp(&best.1.gamma.gamma_star).unwrap();
        let better = match decided {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => {
                let by_len = cur.0.bundles.len().cmp(&best.0.bundles.len());
                match by_len {
                    std::cmp::Ordering::Less => true,
                    std::cmp::Ordering::Greater => false,
                    std::cmp::Ordering::Equal => {
                        bundle_key(&cur.0) < bundle_key(&best.0)
                    }
                }
            }
        };
        if better {
            best_index = i;
        }
    }
    let candidates: Vec<(PartitionSpec, f64)> =
        solved.iter().map(|(p, s)| (p.clone(), s.gamma.gamma_star)).collect();
    let best = solved.swap_remove(best_index).1;
    debug_assert!(candidates.iter().all(|(_, g)| best.gamma.gamma_star >= *g));
    Ok(BestPartition { best, candidates })
}

fn bundle_key(p: &PartitionSpec) -> Vec<Vec<usize>> {
    p.bundles.iter().map(|b| b.members.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finest(bounds: &[(f64, f64)]) -> PartitionSpec {
        PartitionSpec::new(
            bounds
                .iter()
                .enumerate()
                .map(|(i, &(lo, hi))| BundleBounds::new(vec![i], lo, hi))
                .collect(),
        )
    }

    #[test]
    fn finest_partition_matches_item_level_solution() {
        let bounds = [(1.0, 100.0), (10.0, 20.0)];
        let instance = Instance::from_bounds(&bounds).unwrap();
        let item_level = semi_separable::solve_gamma_star(&instance, DEFAULT_TOL);
        let solution = solve_partition(&finest(&bounds)).unwrap();
        assert_eq!(solution.gamma.gamma_star, item_level.gamma_star);
        assert_eq!(solution.gamma.active_set, item_level.active_set);
    }

    #[test]
    fn pair_and_singleton_partition() {
        // bundle {0,1} with sum in [2,4], item {2} in [1,2]
        let p = PartitionSpec::new(vec![
            BundleBounds::new(vec![0, 1], 2.0, 4.0),
            BundleBounds::new(vec![2], 1.0, 2.0),
        ]);
        let solution = solve_partition(&p).unwrap();
        let two_item = Instance::from_bounds(&[(2.0, 4.0), (1.0, 2.0)]).unwrap();
        let expect = semi_separable::solve_gamma_star(&two_item, DEFAULT_TOL);
        assert_eq!(solution.gamma.gamma_star, expect.gamma_star);
        assert!((solution.gamma.gamma_star - 0.59061610914964125).abs() < 1e-9);
    }

    #[test]
    fn grand_bundle_reduces_to_single_item() {
        let p = PartitionSpec::new(vec![BundleBounds::new(vec![0, 1, 2], 2.0, 10.0)]);
        let solution = solve_partition(&p).unwrap();
        assert!((solution.gamma.gamma_star - 1.0 / (1.0 + 5.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn partition_validation_errors() {
        let overlapping = PartitionSpec::new(vec![
            BundleBounds::new(vec![0, 1], 1.0, 2.0),
            BundleBounds::new(vec![1], 0.5, 1.0),
        ]);
        assert!(matches!(
            solve_partition(&overlapping),
            Err(BundleError::OverlappingBundles { item: 1 })
        ));
        let gap = PartitionSpec::new(vec![
            BundleBounds::new(vec![0], 1.0, 2.0),
            BundleBounds::new(vec![2], 0.5, 1.0),
        ]);
        assert!(matches!(solve_partition(&gap), Err(BundleError::UncoveredItem { item: 1 })));
    }

    #[test]
    fn quote_shares_allocation_within_bundle() {
        let p = PartitionSpec::new(vec![
            BundleBounds::new(vec![0, 1], 2.0, 4.0),
            BundleBounds::new(vec![2], 1.0, 2.0),
        ]);
        let solution = solve_partition(&p).unwrap();

        // all bundle sums at their upper bounds: every allocation is 1
        let quote = solution.quote(&[1.0, 3.0, 2.0]).unwrap();
        assert!(quote.allocation.iter().all(|&q| (q - 1.0).abs() < 1e-12));

        // lower corner: payment sums the bundle-level lower-bound payments
        let g = solution.gamma.gamma_star;
        let quote = solution.quote(&[1.0, 1.0, 1.0]).unwrap();
        let expect = 2.0 * (g * (2.0f64 / 4.0).ln() + 1.0) + 1.0 * (g * (1.0f64 / 2.0).ln() + 1.0);
        assert!((quote.payment - expect).abs() < 1e-12);
        assert_eq!(quote.allocation[0], quote.allocation[1]);

        // out-of-range bundle sum is rejected even if items are individually small
        assert!(matches!(
            solution.quote(&[0.1, 0.1, 1.0]),
            Err(BundleError::BundleSumOutOfRange { bundle: 0, .. })
        ));
    }

    #[test]
    fn thresholded_bundle_pays_nothing_at_threshold() {
        // wide bundle is thresholded at e^{-1/gamma} hi
        let p = PartitionSpec::new(vec![
            BundleBounds::new(vec![0, 1], 0.02, 2.0),
            BundleBounds::new(vec![2], 1.0, 2.0),
        ]);
        let solution = solve_partition(&p).unwrap();
        let g = solution.gamma.gamma_star;
        let threshold = (-1.0 / g).exp() * 2.0;
        let quote = solution.quote(&[threshold / 2.0, threshold / 2.0, 1.5]).unwrap();
        assert!(quote.allocation[0].abs() < 1e-9);
        assert!(quote.allocation[1].abs() < 1e-9);
        // only the narrow bundle pays
        let narrow = Instance::from_bounds(&[(1.0, 2.0)]).unwrap();
        let expect = semi_separable::payment(g, &narrow, &[1.5]).unwrap();
        assert!((quote.payment - expect).abs() < 1e-12);
    }

    #[test]
    fn bundle_mechanism_is_feasible() {
        // reduction: the generalized mechanism is the one-dimensional
        // threshold mechanism applied to bundle sums, so feasibility is the
        // bundle-level grid check
        let p = PartitionSpec::new(vec![
            BundleBounds::new(vec![0, 1], 0.05, 2.0),
            BundleBounds::new(vec![2], 1.0, 2.0),
        ]);
        let solution = solve_partition(&p).unwrap();
        let mech = crate::semi_separable::SemiSeparableMechanism::new(
            solution.gamma.gamma_star,
            &solution.bundle_instance,
        )
        .unwrap();
        let report = crate::verify::check_ic_ir(&mech, &solution.bundle_instance, 50).unwrap();
        assert!(report.max_ic_violation <= 1e-10);
        assert!(report.max_ir_violation <= 1e-10);

        // item-level quotes with in-range bundle sums satisfy IR directly
        for v in [[0.5, 1.0, 1.2], [0.03, 0.02, 1.0], [1.0, 1.0, 2.0]] {
            let quote = solution.quote(&v).unwrap();
            assert!(quote.utility(&v) >= -1e-12);
        }
    }

    #[test]
    fn documented_collection_enumeration_order() {
        let c = CollectionSpec::new(vec![
            BundleBounds::new(vec![0], 1.0, 2.0),
            BundleBounds::new(vec![1], 1.0, 2.0),
            BundleBounds::new(vec![2], 1.0, 2.0),
            BundleBounds::new(vec![0, 1], 2.0, 4.0),
            BundleBounds::new(vec![1, 2], 2.0, 4.0),
            BundleBounds::new(vec![0, 1, 2], 3.0, 6.0),
        ]);
        let parts = enumerate_partitions(&c).unwrap();
        let keys: Vec<Vec<Vec<usize>>> = parts.iter().map(bundle_key).collect();
        assert_eq!(
            keys,
            vec![
                vec![vec![0], vec![1], vec![2]],
                vec![vec![0, 1], vec![2]],
                vec![vec![0], vec![1, 2]],
                vec![vec![0, 1, 2]],
            ]
        );
    }

    #[test]
    fn enumeration_edge_cases() {
        let c = CollectionSpec::new(vec![
            BundleBounds::new(vec![0], 1.0, 2.0),
            BundleBounds::new(vec![1], 1.0, 2.0),
        ]);
        assert_eq!(enumerate_partitions(&c).unwrap().len(), 1);

        let c = CollectionSpec::with_n_items(3, vec![BundleBounds::new(vec![0, 1], 1.0, 2.0)]);
        assert!(enumerate_partitions(&c).unwrap().is_empty());
        assert!(matches!(best_partition(&c), Err(BundleError::NoPartitionExists)));
    }

    #[test]
    fn duplicate_subsets_keep_tighter_bounds() {
        let c = CollectionSpec::new(vec![
            BundleBounds::new(vec![0], 1.0, 5.0),
            BundleBounds::new(vec![0], 2.0, 4.0),
        ]);
        let parts = enumerate_partitions(&c).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].bundles[0].lower, 2.0);
        assert_eq!(parts[0].bundles[0].upper, 4.0);
    }

    #[test]
    fn best_partition_prefers_tight_pair_bounds() {
        // negatively correlated pair: its sum is far tighter than the box
        let c = CollectionSpec::new(vec![
            BundleBounds::new(vec![0], 0.01, 1.0),
            BundleBounds::new(vec![1], 0.01, 1.0),
            BundleBounds::new(vec![2], 0.5, 1.0),
            BundleBounds::new(vec![0, 1], 0.9, 1.1),
            BundleBounds::new(vec![1, 2], 0.51, 2.0),
            BundleBounds::new(vec![0, 1, 2], 1.0, 2.5),
        ]);
        let result = best_partition(&c).unwrap();
        assert_eq!(result.candidates.len(), 4);
        assert_eq!(
            bundle_key(&result.best.partition),
            vec![vec![0, 1], vec![2]]
        );
        for (_, g) in &result.candidates {
            assert!(result.best.gamma.gamma_star >= *g);
        }
    }

    #[test]
    fn best_partition_trivial_collection() {
        let c = CollectionSpec::new(vec![
            BundleBounds::new(vec![0], 1.0, 4.0),
            BundleBounds::new(vec![1], 2.0, 3.0),
        ]);
        let result = best_partition(&c).unwrap();
        assert_eq!(result.candidates.len(), 1);
        assert_eq!(bundle_key(&result.best.partition), vec![vec![0], vec![1]]);
    }

    #[test]
    fn oversized_collection_is_rejected() {
        let subsets: Vec<BundleBounds> =
            (0..21).map(|i| BundleBounds::new(vec![i], 0.1, 1.0)).collect();
        let c = CollectionSpec::with_n_items(21, subsets);
        assert!(matches!(enumerate_partitions(&c), Err(BundleError::TooLarge { .. })));
    }
}
