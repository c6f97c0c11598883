//! Relevance metrics (MAP, nDCG@K) over display orders and utility metrics
//! (#Click, CTR, Revenue@K) under the oracle click model.

use crate::click::{expected_clicks, ClickModelConfig};
use crate::data::Dataset;
use crate::error::{CrumError, Result};
use crate::perm::Permutation;
use crate::scalar::{upcast, Scalar};
use serde::{Deserialize, Serialize};

/// Average precision of a binary label sequence in display order: the mean
/// over relevant ranks `r` of precision-at-`r`. Zero when nothing is
/// relevant.
pub fn average_precision(labels_in_display_order: &[u8]) -> f64 {
    let mut hits = 0u32;
    let mut sum = 0.0;
    for (rank0, &label) in labels_in_display_order.iter().enumerate() {
        if label > 0 {
            hits += 1;
            sum += f64::from(hits) / (rank0 + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / f64::from(hits)
    }
}

/// nDCG@k with gain equal to the label and `1/log2(position + 1)` discounts,
/// normalized by the ideal ordering of the same labels; zero when nothing is
/// relevant, and `k` beyond the list length truncates to the list.
pub fn ndcg_at_k(labels_in_display_order: &[u8], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(CrumError::Domain("nDCG cutoff must be at least 1".into()));
    }
    let discount = |rank0: usize| 1.0 / ((rank0 + 2) as f64).log2();
    let dcg_at_k = |labels: &[u8]| -> f64 {
        labels
            .iter()
            .take(k)
            .enumerate()
            .map(|(r, &l)| f64::from(l) * discount(r))
            .sum()
    };
    let dcg = dcg_at_k(labels_in_display_order);

    let mut sorted = labels_in_display_order.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let ideal = dcg_at_k(&sorted);
    if ideal == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg / ideal)
}

/// Reorders per-item binary labels into display order under `perm`.
pub fn labels_in_display_order<S: Scalar>(
    items: &[crate::data::Item<S>],
    perm: &Permutation,
) -> Vec<u8> {
    perm.order().iter().map(|&i| items[i].binary_label).collect()
}

/// Exact utility metrics under the oracle click model: `#Click` is the mean
/// over requests of the summed click marginals, `CTR` the mean click
/// probability per displayed item.
pub fn oracle_utility_metrics<S: Scalar>(
    dataset: &Dataset<S>,
    permutations: &[Permutation],
    config: &ClickModelConfig,
) -> Result<(f64, f64)> {
    if dataset.len() != permutations.len() {
        return Err(CrumError::Domain(format!(
            "{} permutations for {} requests",
            permutations.len(),
            dataset.len()
        )));
    }
    if dataset.is_empty() {
        return Err(CrumError::Domain(
            "utility metrics need at least one request".into(),
        ));
    }
    let mut prob_mass = 0.0;
    let mut item_count = 0usize;
    for (request, perm) in dataset.requests.iter().zip(permutations) {
        let probs = expected_clicks(request, perm, config, &request.relevance_probs())?;
        prob_mass += probs.iter().sum::<f64>();
        item_count += probs.len();
    }
    let clicks_per_list = prob_mass / dataset.len() as f64;
    let ctr = prob_mass / item_count as f64;
    Ok((clicks_per_list, ctr))
}

/// Average over requests of the bid-weighted logged clicks in the top-`k`
/// display positions: `(1/|R|) Σ_r Σ_{pos ≤ k} bid · click`.
pub fn revenue_at_k<S: Scalar>(
    dataset: &Dataset<S>,
    permutations: &[Permutation],
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(CrumError::Domain("revenue cutoff must be at least 1".into()));
    }
    if dataset.len() != permutations.len() {
        return Err(CrumError::Domain(format!(
            "{} permutations for {} requests",
            permutations.len(),
            dataset.len()
        )));
    }
    if dataset.is_empty() {
        return Err(CrumError::Domain("revenue needs at least one request".into()));
    }
    let mut total = 0.0;
    for (request, perm) in dataset.requests.iter().zip(permutations) {
        let clicks = request.clicks.as_ref().ok_or_else(|| {
            CrumError::Domain(format!(
                "request {} has no logged clicks for revenue",
                request.request_id
            ))
        })?;
        for &i in perm.order().iter().take(k) {
            total += upcast(request.items[i].bid) * f64::from(clicks[i]);
        }
    }
    Ok(total / dataset.len() as f64)
}

/// Aggregate metrics of one ranking variant over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub map: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
    pub clicks_per_list: f64,
    pub ctr: f64,
    /// Revenue@K keyed by K in {3, 5, 10, 20}; absent when the dataset has
    /// no logged clicks.
    pub revenue: Vec<(usize, f64)>,
    pub request_count: usize,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let values = [
            self.map,
            self.ndcg_at_5,
            self.ndcg_at_10,
            self.clicks_per_list,
            self.ctr,
        ];
        if values.iter().any(|v| !v.is_finite()) || self.revenue.iter().any(|(_, v)| !v.is_finite())
        {
            return Err(CrumError::Numeric(format!(
                "metrics for variant '{}' contain non-finite values",
                self.variant
            )));
        }
        if !(0.0..=1.0).contains(&self.ctr) {
            return Err(CrumError::Numeric(format!(
                "CTR {} outside [0, 1] for variant '{}'",
                self.ctr, self.variant
            )));
        }
        Ok(())
    }
}

/// Revenue cutoffs reported by default.
pub const REVENUE_CUTOFFS: [usize; 4] = [3, 5, 10, 20];

/// Computes the full metric set of one variant's permutations on a dataset.
///
/// Revenue is included only when every request carries logged clicks.
pub fn compute_metrics_report<S: Scalar>(
    variant: &str,
    dataset: &Dataset<S>,
    permutations: &[Permutation],
    config: &ClickModelConfig,
) -> Result<MetricsReport> {
    if dataset.len() != permutations.len() {
        return Err(CrumError::Domain(format!(
            "{} permutations for {} requests",
            permutations.len(),
            dataset.len()
        )));
    }
    if dataset.is_empty() {
        return Err(CrumError::Domain("metrics need at least one request".into()));
    }

    let mut map_sum = 0.0;
    let mut ndcg5_sum = 0.0;
    let mut ndcg10_sum = 0.0;
    for (request, perm) in dataset.requests.iter().zip(permutations) {
        let labels = labels_in_display_order(&request.items, perm);
        map_sum += average_precision(&labels);
        ndcg5_sum += ndcg_at_k(&labels, 5)?;
        ndcg10_sum += ndcg_at_k(&labels, 10)?;
    }
    let (clicks_per_list, ctr) = oracle_utility_metrics(dataset, permutations, config)?;

    let n = dataset.len() as f64;
    let revenue = if dataset.requests.iter().all(|r| r.clicks.is_some()) {
        REVENUE_CUTOFFS
            .iter()
            .map(|&k| Ok((k, revenue_at_k(dataset, permutations, k)?)))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let report = MetricsReport {
        variant: variant.to_string(),
        map: map_sum / n,
        ndcg_at_5: ndcg5_sum / n,
        ndcg_at_10: ndcg10_sum / n,
        clicks_per_list,
        ctr,
        revenue,
        request_count: dataset.len(),
    };
    report.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Item, RankedRequest};

    fn item(binary: u8, bid: f64) -> Item<f64> {
        Item {
            features: vec![f64::from(binary), bid],
            bid,
            graded_label: binary * 4,
            binary_label: binary,
        }
    }

    fn one_request_dataset(
        binaries: &[u8],
        bids: &[f64],
        clicks: Option<Vec<u8>>,
    ) -> Dataset<f64> {
        let items: Vec<Item<f64>> =
            binaries.iter().zip(bids).map(|(&b, &p)| item(b, p)).collect();
        let n = items.len();
        Dataset::new(
            vec![RankedRequest {
                request_id: "q".into(),
                items,
                initial_positions: Permutation::identity(n),
                clicks,
            }],
            2,
            n,
        )
        .unwrap()
    }

    #[test]
    fn average_precision_matches_hand_computations() {
        assert_eq!(average_precision(&[1, 1, 1]), 1.0);
        assert!((average_precision(&[1, 0, 1]) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((average_precision(&[1, 0, 1]) - 0.833333).abs() < 1e-6);
        assert_eq!(average_precision(&[0, 0, 0]), 0.0);
        assert_eq!(average_precision(&[]), 0.0);
        assert!((average_precision(&[0, 1]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ndcg_matches_hand_computations() {
        // [1,0,1] at k=2: DCG = 1, IDCG = 1 + 1/log2(3).
        let expected = 1.0 / (1.0 + 1.0 / 3f64.log2());
        assert!((ndcg_at_k(&[1, 0, 1], 2).unwrap() - expected).abs() < 1e-12);
        assert!((ndcg_at_k(&[1, 0, 1], 2).unwrap() - 0.613147).abs() < 1e-6);

        assert_eq!(ndcg_at_k(&[1, 1, 0], 3).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&[0, 0], 2).unwrap(), 0.0);
        // k beyond the list truncates.
        assert_eq!(
            ndcg_at_k(&[1, 0, 1], 50).unwrap(),
            ndcg_at_k(&[1, 0, 1], 3).unwrap()
        );
        assert_eq!(ndcg_at_k(&[1], 0).unwrap_err().category(), "domain");
    }

    #[test]
    fn metric_ranges_hold_on_random_labels() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(1..=12);
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let ap = average_precision(&labels);
            assert!((0.0..=1.0).contains(&ap));
            for k in [1, 3, 10] {
                let v = ndcg_at_k(&labels, k).unwrap();
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn ndcg_rewards_moving_relevance_up() {
        let worse = ndcg_at_k(&[0, 1, 1], 3).unwrap();
        let better = ndcg_at_k(&[1, 1, 0], 3).unwrap();
        assert!(better > worse);
        assert_eq!(better, 1.0);
    }

    #[test]
    fn oracle_metrics_reproduce_the_two_item_constant() {
        // Two identical relevant items: marginals [1, 2^-0.7].
        let ds = one_request_dataset(&[1, 1], &[1.0, 1.0], None);
        // Force identical features so similarity is 1.
        let mut ds = ds;
        for it in &mut ds.requests[0].items {
            it.features = vec![1.0, 1.0];
        }
        let (clicks, ctr) = oracle_utility_metrics(
            &ds,
            &[Permutation::identity(2)],
            &ClickModelConfig::default(),
        )
        .unwrap();
        assert!((clicks - 1.6156).abs() < 1e-4);
        assert!((ctr - 0.8078).abs() < 1e-4);
    }

    #[test]
    fn all_irrelevant_metrics_are_zero() {
        let ds = one_request_dataset(&[0, 0, 0], &[1.0; 3], None);
        let (clicks, ctr) = oracle_utility_metrics(
            &ds,
            &[Permutation::identity(3)],
            &ClickModelConfig::default(),
        )
        .unwrap();
        assert_eq!((clicks, ctr), (0.0, 0.0));
    }

    #[test]
    fn revenue_counts_only_topk_clicked_bids() {
        let ds = one_request_dataset(&[1, 1, 0], &[2.0, 1.5, 1.0], Some(vec![1, 0, 1]));
        let perm = Permutation::identity(3);
        // Position 1 holds item 0 (clicked, bid 2); position 3 holds item 2
        // (clicked, bid 1).
        assert_eq!(revenue_at_k(&ds, std::slice::from_ref(&perm), 1).unwrap(), 2.0);
        assert_eq!(revenue_at_k(&ds, std::slice::from_ref(&perm), 2).unwrap(), 2.0);
        assert_eq!(revenue_at_k(&ds, std::slice::from_ref(&perm), 3).unwrap(), 3.0);
        // k past the list end equals the full-list sum.
        assert_eq!(revenue_at_k(&ds, std::slice::from_ref(&perm), 10).unwrap(), 3.0);
        assert_eq!(revenue_at_k(&ds, &[perm], 0).unwrap_err().category(), "domain");
    }

    #[test]
    fn revenue_is_monotone_in_k() {
        let ds = one_request_dataset(&[1, 0, 1, 1], &[1.0, 2.0, 0.5, 3.0], Some(vec![1, 0, 0, 1]));
        let perm = Permutation::from_positions(vec![3, 1, 4, 2]).unwrap();
        let mut last = 0.0;
        for k in 1..=4 {
            let r = revenue_at_k(&ds, std::slice::from_ref(&perm), k).unwrap();
            assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn no_clicks_anywhere_is_zero_revenue() {
        let ds = one_request_dataset(&[1, 1], &[2.0, 3.0], Some(vec![0, 0]));
        assert_eq!(revenue_at_k(&ds, &[Permutation::identity(2)], 2).unwrap(), 0.0);
    }

    #[test]
    fn report_includes_revenue_only_with_logged_clicks() {
        let with = one_request_dataset(&[1, 0], &[1.0, 1.0], Some(vec![1, 0]));
        let without = one_request_dataset(&[1, 0], &[1.0, 1.0], None);
        let perms = vec![Permutation::identity(2)];
        let cfg = ClickModelConfig::default();
        let a = compute_metrics_report("x", &with, &perms, &cfg).unwrap();
        let b = compute_metrics_report("x", &without, &perms, &cfg).unwrap();
        assert_eq!(a.revenue.len(), REVENUE_CUTOFFS.len());
        assert!(b.revenue.is_empty());
        assert_eq!(a.map, b.map);
    }

    #[test]
    fn report_is_deterministic() {
        let ds = one_request_dataset(&[1, 0, 1], &[1.0, 0.5, 2.0], Some(vec![1, 0, 0]));
        let perms = vec![Permutation::from_positions(vec![2, 3, 1]).unwrap()];
        let cfg = ClickModelConfig::default();
        let a = compute_metrics_report("v", &ds, &perms, &cfg).unwrap();
        let b = compute_metrics_report("v", &ds, &perms, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
