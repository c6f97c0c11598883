//! Seeded synthetic dataset generation at desk scale.

use super::{Dataset, Item, RankedRequest};
use crate::error::Result;
use crate::perm::Permutation;
use crate::scalar::{lit, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Weight of the feature-driven component in the graded label; the remainder
/// is seeded noise, so neither the initial ranker nor the evaluator can
/// recover labels exactly from features.
const LABEL_SIGNAL_WEIGHT: f64 = 0.65;

/// Generates `n_requests` lists of `n_items` items with `d`-dimensional
/// features, deterministically in the seed.
///
/// Features are uniform in `[0, 1]^d`. Graded labels in `0..=4` come from a
/// fixed seeded distribution correlated with a hidden linear score of the
/// features. Bids are uniform in `[0.5, 1.5]` and independent of relevance,
/// so click-optimal and revenue-optimal orders differ.
pub fn generate_synthetic<S: Scalar>(
    n_requests: usize,
    n_items: usize,
    d: usize,
    seed: u64,
) -> Result<Dataset<S>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // Hidden linear scorer shared by the whole dataset.
    let weights: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    // Features are uniform in [0,1], so the linear score x . w has mean
    // sum(w)/2 and variance sum(w^2)/12; standardizing it makes the label
    // distribution independent of the drawn weights.
    let score_mean: f64 = weights.iter().sum::<f64>() / 2.0;
    let score_std: f64 = (weights.iter().map(|w| w * w).sum::<f64>() / 12.0).sqrt().max(1e-12);

    let mut requests = Vec::with_capacity(n_requests);
    for q in 0..n_requests {
        let mut items = Vec::with_capacity(n_items);
        for _ in 0..n_items {
            let features: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let score: f64 = features.iter().zip(&weights).map(|(x, w)| x * w).sum();
            let standardized = (score - score_mean) / score_std;
            // Squash the standardized score to (0, 1) and mix with uniform
            // noise; five equal bins give the graded label.
            let signal = 1.0 / (1.0 + (-1.7 * standardized).exp());
            let noise: f64 = rng.random_range(0.0..1.0);
            let mix = LABEL_SIGNAL_WEIGHT * signal + (1.0 - LABEL_SIGNAL_WEIGHT) * noise;
            let graded_label = ((mix * 5.0).floor() as u8).min(4);
            let bid: f64 = rng.random_range(0.5..1.5);
            items.push(Item {
                features: features.into_iter().map(lit).collect(),
                bid: lit(bid),
                graded_label,
                binary_label: 0,
            });
        }
        requests.push(RankedRequest {
            request_id: format!("s{q:05}"),
            items,
            initial_positions: Permutation::identity(n_items),
            clicks: None,
        });
    }

    Dataset::new(requests, d, n_items.max(1))
}
