//! Distributing a freeze budget over layers.
//!
//! Given the weight count of every layer and the total number of weights to
//! freeze, decide how many weights each layer loses. The default
//! [`staggered_allocate`] removes weights from the largest layer until it
//! matches the next-smaller one, then from both equally, and so on, so that
//! small layers are only touched once everything above them has been cut
//! down to their size. [`proportional_allocate`] is the simpler
//! size-proportional alternative, and [`plan_from_layer_connectivities`]
//! builds the explicit two-layer plans of the last-layer connectivity scan.
//!
//! All arithmetic is on exact integers.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("no layers given")]
    EmptyLayerList,
    #[error("asked to freeze {requested} weights but the layers hold only {available}")]
    BudgetExceedsWeights { requested: u64, available: u64 },
    #[error("invalid layer sizes: {0}")]
    InvalidLayerSizes(String),
    #[error("invalid combination: first layer would keep {keep_first} of {first_size}, last layer {keep_last}")]
    InvalidCombination {
        keep_first: i64,
        first_size: u64,
        keep_last: i64,
    },
    #[error("last-layer connectivity must lie in (0, 1], got {0}")]
    ConnectivityOutOfRange(f64),
    #[error("expected exactly two layers, got {0}")]
    NotTwoLayers(usize),
    #[error("plan is inconsistent: {0}")]
    InconsistentPlan(String),
}

/// Named per-layer weight counts (biases excluded).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSizes {
    names: Vec<String>,
    counts: Vec<u64>,
}

impl LayerSizes {
    pub fn new(names: Vec<String>, counts: Vec<u64>) -> Result<Self, AllocError> {
        if counts.is_empty() {
            return Err(AllocError::EmptyLayerList);
        }
        if names.len() != counts.len() {
            return Err(AllocError::InvalidLayerSizes(format!(
                "{} names for {} counts",
                names.len(),
                counts.len()
            )));
        }
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(AllocError::InvalidLayerSizes(format!(
                "layer '{}' has no weights",
                names[i]
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(AllocError::InvalidLayerSizes(format!(
                    "duplicate layer name '{n}'"
                )));
            }
        }
        Ok(Self { names, counts })
    }

    /// Layers named `layer0`, `layer1`, ...
    pub fn from_counts(counts: &[u64]) -> Result<Self, AllocError> {
        let names = (0..counts.len()).map(|i| format!("layer{i}")).collect();
        Self::new(names, counts.to_vec())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Indices sorted by count, largest first; equal counts keep input order.
    pub fn descending_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.counts.len()).collect();
        order.sort_by(|&a, &b| self.counts[b].cmp(&self.counts[a]));
        order
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerAllocation {
    pub name: String,
    pub size: u64,
    pub freeze: u64,
}

impl LayerAllocation {
    pub fn keep(&self) -> u64 {
        self.size - self.freeze
    }

    /// Fraction of the layer's weights that stay trainable.
    pub fn connectivity(&self) -> f64 {
        self.keep() as f64 / self.size as f64
    }
}

/// Per-layer freeze counts, in the caller's layer order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationPlan {
    layers: Vec<LayerAllocation>,
    total_frozen: u64,
}

impl AllocationPlan {
    pub fn new(sizes: &LayerSizes, freeze: Vec<u64>) -> Result<Self, AllocError> {
        if freeze.len() != sizes.len() {
            return Err(AllocError::InconsistentPlan(format!(
                "{} freeze counts for {} layers",
                freeze.len(),
                sizes.len()
            )));
        }
        let mut layers = Vec::with_capacity(freeze.len());
        for ((name, &size), &f) in sizes.names.iter().zip(&sizes.counts).zip(&freeze) {
            if f > size {
                return Err(AllocError::InconsistentPlan(format!(
                    "layer '{name}' freezes {f} of {size} weights"
                )));
            }
            layers.push(LayerAllocation {
                name: name.clone(),
                size,
                freeze: f,
            });
        }
        Ok(Self {
            total_frozen: freeze.iter().sum(),
            layers,
        })
    }

    /// A plan that freezes nothing.
    pub fn dense(sizes: &LayerSizes) -> Self {
        Self::new(sizes, vec![0; sizes.len()]).expect("zero freeze is always valid")
    }

    pub fn layers(&self) -> &[LayerAllocation] {
        &self.layers
    }

    pub fn freeze_counts(&self) -> Vec<u64> {
        self.layers.iter().map(|l| l.freeze).collect()
    }

    pub fn keep_counts(&self) -> Vec<u64> {
        self.layers.iter().map(LayerAllocation::keep).collect()
    }

    pub fn total_frozen(&self) -> u64 {
        self.total_frozen
    }

    pub fn total_kept(&self) -> u64 {
        self.layers.iter().map(LayerAllocation::keep).sum()
    }

    pub fn per_layer_connectivity(&self) -> Vec<f64> {
        self.layers.iter().map(LayerAllocation::connectivity).collect()
    }

    /// Kept weights over all weights.
    pub fn overall_connectivity(&self) -> f64 {
        let total: u64 = self.layers.iter().map(|l| l.size).sum();
        self.total_kept() as f64 / total as f64
    }

    pub fn is_dense(&self) -> bool {
        self.total_frozen == 0
    }
}

#[derive(Serialize, Deserialize)]
struct LayerWire {
    name: String,
    size: u64,
    freeze: u64,
    connectivity: f64,
}

#[derive(Serialize, Deserialize)]
struct PlanWire {
    layers: Vec<LayerWire>,
    total_frozen: u64,
}

impl Serialize for AllocationPlan {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PlanWire {
            layers: self
                .layers
                .iter()
                .map(|l| LayerWire {
                    name: l.name.clone(),
                    size: l.size,
                    freeze: l.freeze,
                    connectivity: l.connectivity(),
                })
                .collect(),
            total_frozen: self.total_frozen,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AllocationPlan {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let wire = PlanWire::deserialize(d)?;
        let sizes = LayerSizes::new(
            wire.layers.iter().map(|l| l.name.clone()).collect(),
            wire.layers.iter().map(|l| l.size).collect(),
        )
        .map_err(D::Error::custom)?;
        let plan = AllocationPlan::new(&sizes, wire.layers.iter().map(|l| l.freeze).collect())
            .map_err(D::Error::custom)?;
        if plan.total_frozen != wire.total_frozen {
            return Err(D::Error::custom(format!(
                "total_frozen {} does not match the layer sum {}",
                wire.total_frozen, plan.total_frozen
            )));
        }
        Ok(plan)
    }
}

fn check_budget(sizes: &LayerSizes, total_to_freeze: u64) -> Result<(), AllocError> {
    if sizes.is_empty() {
        return Err(AllocError::EmptyLayerList);
    }
    let available = sizes.total();
    if total_to_freeze >= available {
        return Err(AllocError::BudgetExceedsWeights {
            requested: total_to_freeze,
            available,
        });
    }
    Ok(())
}

/// Cumulative freeze totals at which the next-smaller layer joins the
/// sparsification, for counts sorted in descending order. Entry `k - 1` is the
/// amount needed to bring the `k` largest layers down to the size of layer `k`.
pub fn staggered_limits(sorted_desc: &[u64]) -> Vec<u64> {
    let mut lims = Vec::with_capacity(sorted_desc.len().saturating_sub(1));
    let mut acc = 0u64;
    for (k, w) in sorted_desc.windows(2).enumerate() {
        acc += (k as u64 + 1) * (w[0] - w[1]);
        lims.push(acc);
    }
    lims
}

/// Staggered ("water-filling") allocation.
///
/// Within the range covered by [`staggered_limits`] the result is exactly the
/// reference procedure: the involved layers are first cut down to the size of
/// the smallest involved layer, the rest is split evenly and the indivisible
/// remainder goes to the largest layer. Past the last limit every layer is
/// involved and the same rule applies. If the remainder would push the largest
/// layer below zero remaining weights (only possible with several tiny, equal
/// layers), the excess spills to the next layers in size order.
pub fn staggered_allocate(
    sizes: &LayerSizes,
    total_to_freeze: u64,
) -> Result<AllocationPlan, AllocError> {
    check_budget(sizes, total_to_freeze)?;
    let order = sizes.descending_order();
    let sorted: Vec<u64> = order.iter().map(|&i| sizes.counts[i]).collect();
    let lims = staggered_limits(&sorted);

    let lim_ind = lims
        .iter()
        .position(|&l| l >= total_to_freeze)
        .unwrap_or(sorted.len() - 1);
    let involved = lim_ind + 1;
    let floor_size = sorted[lim_ind];

    let mut freeze_sorted = vec![0u64; sorted.len()];
    let base_sum: u64 = sorted[..involved].iter().map(|w| w - floor_size).sum();
    let rest_tot = total_to_freeze - base_sum;
    let rest = rest_tot / involved as u64;
    for l in 0..involved {
        freeze_sorted[l] = sorted[l] - floor_size + rest;
    }
    freeze_sorted[0] += rest_tot - rest * involved as u64;

    let mut carry = 0u64;
    for l in 0..involved {
        if freeze_sorted[l] > sorted[l] {
            carry += freeze_sorted[l] - sorted[l];
            freeze_sorted[l] = sorted[l];
        } else if carry > 0 {
            let take = carry.min(sorted[l] - freeze_sorted[l]);
            freeze_sorted[l] += take;
            carry -= take;
        }
    }
    debug_assert_eq!(carry, 0);

    let mut freeze = vec![0u64; sorted.len()];
    for (pos, &i) in order.iter().enumerate() {
        freeze[i] = freeze_sorted[pos];
    }
    AllocationPlan::new(sizes, freeze)
}

/// Freeze counts proportional to layer size: `floor(T * c_i / sum(c))`, with
/// the rounding remainder handed out one weight at a time, largest layer first.
pub fn proportional_allocate(
    sizes: &LayerSizes,
    total_to_freeze: u64,
) -> Result<AllocationPlan, AllocError> {
    check_budget(sizes, total_to_freeze)?;
    let total = sizes.total() as u128;
    let mut freeze: Vec<u64> = sizes
        .counts
        .iter()
        .map(|&c| (total_to_freeze as u128 * c as u128 / total) as u64)
        .collect();
    let mut remainder = total_to_freeze - freeze.iter().sum::<u64>();
    for i in sizes.descending_order() {
        if remainder == 0 {
            break;
        }
        if freeze[i] < sizes.counts[i] {
            freeze[i] += 1;
            remainder -= 1;
        }
    }
    AllocationPlan::new(sizes, freeze)
}

/// Two-layer plan with a prescribed connectivity for the last layer and the
/// remainder of `keep_total` assigned to the first layer.
pub fn plan_from_layer_connectivities(
    sizes: &LayerSizes,
    keep_total: u64,
    last_layer_connectivity: f64,
) -> Result<AllocationPlan, AllocError> {
    if sizes.len() != 2 {
        return Err(AllocError::NotTwoLayers(sizes.len()));
    }
    if !(last_layer_connectivity > 0.0 && last_layer_connectivity <= 1.0) {
        return Err(AllocError::ConnectivityOutOfRange(last_layer_connectivity));
    }
    let first = sizes.counts[0];
    let last = sizes.counts[1];
    let keep_last = (last_layer_connectivity * last as f64).round() as i64;
    let keep_first = keep_total as i64 - keep_last;
    if keep_first <= 0 || keep_first > first as i64 || keep_last <= 0 {
        return Err(AllocError::InvalidCombination {
            keep_first,
            first_size: first,
            keep_last,
        });
    }
    AllocationPlan::new(
        sizes,
        vec![first - keep_first as u64, last - keep_last as u64],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(c: &[u64]) -> LayerSizes {
        LayerSizes::from_counts(c).unwrap()
    }

    #[test]
    fn staggered_worked_examples() {
        let s = sizes(&[10, 6, 3]);
        assert_eq!(staggered_allocate(&s, 0).unwrap().freeze_counts(), [0, 0, 0]);
        assert_eq!(staggered_allocate(&s, 7).unwrap().freeze_counts(), [6, 1, 0]);
        let p = staggered_allocate(&s, 10).unwrap();
        assert_eq!(p.freeze_counts(), [7, 3, 0]);
        assert_eq!(p.keep_counts(), [3, 3, 3]);
    }

    #[test]
    fn staggered_mnist_width_80() {
        let s = LayerSizes::new(vec!["fc1".into(), "fc2".into()], vec![62720, 800]).unwrap();
        let p = staggered_allocate(&s, 59550).unwrap();
        assert_eq!(p.freeze_counts(), [59550, 0]);
        assert_eq!(p.total_kept(), 3970);
        assert!((p.per_layer_connectivity()[0] - 3170.0 / 62720.0).abs() < 1e-15);
        assert!((p.per_layer_connectivity()[0] - 0.0505).abs() < 1e-3);
    }

    #[test]
    fn staggered_reports_in_caller_order() {
        let s = sizes(&[3, 10, 6]);
        assert_eq!(staggered_allocate(&s, 7).unwrap().freeze_counts(), [0, 6, 1]);
    }

    #[test]
    fn staggered_extension_past_last_limit() {
        // limits for [10, 6, 3] are [4, 10]; beyond 10 all three layers shrink evenly
        let s = sizes(&[10, 6, 3]);
        let p = staggered_allocate(&s, 13).unwrap();
        assert_eq!(p.keep_counts(), [2, 2, 2]);
        let p = staggered_allocate(&s, 14).unwrap();
        assert_eq!(p.freeze_counts(), [9, 4, 1]);
        let p = staggered_allocate(&s, 18).unwrap();
        assert_eq!(p.total_kept(), 1);
    }

    #[test]
    fn single_layer() {
        let s = sizes(&[5]);
        assert_eq!(staggered_allocate(&s, 4).unwrap().freeze_counts(), [4]);
        assert_eq!(proportional_allocate(&s, 4).unwrap().freeze_counts(), [4]);
    }

    #[test]
    fn remainder_spills_when_largest_layer_is_exhausted() {
        // reference rule would give the first layer 3 of its 2 weights
        let s = sizes(&[2, 2, 2, 2, 1]);
        let p = staggered_allocate(&s, 3).unwrap();
        assert_eq!(p.freeze_counts(), [2, 1, 0, 0, 0]);
    }

    #[test]
    fn budget_errors() {
        let s = sizes(&[10, 6, 3]);
        assert_eq!(
            staggered_allocate(&s, 19),
            Err(AllocError::BudgetExceedsWeights {
                requested: 19,
                available: 19
            })
        );
        assert!(matches!(
            proportional_allocate(&s, 100),
            Err(AllocError::BudgetExceedsWeights { .. })
        ));
        assert_eq!(
            LayerSizes::from_counts(&[]).unwrap_err(),
            AllocError::EmptyLayerList
        );
        assert!(LayerSizes::from_counts(&[3, 0]).is_err());
        assert!(LayerSizes::new(vec!["a".into(), "a".into()], vec![1, 2]).is_err());
        assert!(LayerSizes::new(vec!["a".into()], vec![1, 2]).is_err());
    }

    #[test]
    fn proportional_examples() {
        assert_eq!(
            proportional_allocate(&sizes(&[100, 100]), 50).unwrap().freeze_counts(),
            [25, 25]
        );
        assert_eq!(
            proportional_allocate(&sizes(&[10, 6, 3]), 7).unwrap().freeze_counts(),
            [4, 2, 1]
        );
        assert_eq!(
            proportional_allocate(&sizes(&[62720, 800]), 59550).unwrap().freeze_counts(),
            [58800, 750]
        );
    }

    #[test]
    fn last_layer_connectivity_plans() {
        let w5 = sizes(&[3920, 50]);
        assert_eq!(
            plan_from_layer_connectivities(&w5, 3970, 1.0).unwrap().freeze_counts(),
            [0, 0]
        );
        let w80 = sizes(&[62720, 800]);
        let p = plan_from_layer_connectivities(&w80, 3970, 0.9).unwrap();
        assert_eq!(p.keep_counts(), [3250, 720]);
        assert_eq!(
            plan_from_layer_connectivities(&w5, 3970, 0.1),
            Err(AllocError::InvalidCombination {
                keep_first: 3965,
                first_size: 3920,
                keep_last: 5
            })
        );
        assert!(matches!(
            plan_from_layer_connectivities(&w5, 3970, 0.0),
            Err(AllocError::ConnectivityOutOfRange(_))
        ));
        assert!(matches!(
            plan_from_layer_connectivities(&sizes(&[1, 2, 3]), 3, 0.5),
            Err(AllocError::NotTwoLayers(3))
        ));
    }

    #[test]
    fn json_shape() {
        let s = LayerSizes::new(vec!["fc1".into(), "fc2".into()], vec![62720, 800]).unwrap();
        let p = staggered_allocate(&s, 59550).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["total_frozen"], 59550);
        assert_eq!(v["layers"][0]["name"], "fc1");
        assert_eq!(v["layers"][0]["size"], 62720);
        assert_eq!(v["layers"][1]["freeze"], 0);
        assert_eq!(v["layers"][1]["connectivity"], 1.0);
        let back: AllocationPlan = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);

        let bad = r#"{"layers":[{"name":"a","size":3,"freeze":1,"connectivity":0.6}],"total_frozen":2}"#;
        assert!(serde_json::from_str::<AllocationPlan>(bad).is_err());
    }
}
