//! Bound sweeps: vary one item's lower or upper bound over a geometric grid
//! and report the separable baseline against the semi-separable optimum at
//! every point.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{Instance, Item, ModelError};
use crate::scalar::DEFAULT_TOL;
use crate::semi_separable::solve_gamma_star;
use crate::separable::joint_ratio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweptBound {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SweepError {
    #[error("sweep range [{from}, {to}] must be positive and finite")]
    InvalidRange { from: f64, to: f64 },
    #[error("item index {item} out of range for {len} items")]
    ItemOutOfRange { item: usize, len: usize },
    #[error("swept instance invalid: {0}")]
    Model(#[from] ModelError),
}

/// One sweep sample: the swept bound value and the two competitive ratios.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: f64,
    pub separable_ratio: f64,
    pub semi_separable_ratio: f64,
}

/// Sweeps one bound of one item over a geometric grid of `points` values
/// from `from` to `to` (inclusive), solving both mechanisms at every point.
pub fn sweep_bound(
    base: &Instance,
    item: usize,
    bound: SweptBound,
    from: f64,
    to: f64,
    points: usize,
) -> Result<Vec<SweepRow>, SweepError> {
    if item >= base.len() {
        return Err(SweepError::ItemOutOfRange { item, len: base.len() });
    }
    if !(from > 0.0) || !(to > 0.0) || !from.is_finite() || !to.is_finite() || points < 2 {
        return Err(SweepError::InvalidRange { from, to });
    }
    let ratio = to / from;
    let values: Vec<f64> =
        (0..points).map(|i| from * ratio.powf(i as f64 / (points - 1) as f64)).collect();

    let instances: Vec<(f64, Instance)> = values
        .into_iter()
        .map(|value| {
            let items: Vec<Item> = base
                .items()
                .iter()
                .enumerate()
                .map(|(j, it)| {
                    let mut item_j = it.clone();
                    if j == item {
                        match bound {
                            SweptBound::Lower => item_j.lower = value,
                            SweptBound::Upper => item_j.upper = value,
                        }
                    }
                    item_j
                })
                .collect();
            Ok((value, Instance::new(items)?))
        })
        .collect::<Result<_, SweepError>>()?;

    Ok(instances
        .par_iter()
        .map(|(value, instance)| SweepRow {
            parameter: *value,
            separable_ratio: joint_ratio(instance).ratio,
            semi_separable_ratio: solve_gamma_star(instance, DEFAULT_TOL).gamma_star,
        })
        .collect())
}
