//! Initial rankers: a pointwise feed-forward scorer trained on binary
//! labels, plus seeded-random and reversed variants for robustness studies.

use crate::autodiff::Tape;
use crate::data::{Dataset, RankedRequest};
use crate::error::{CrumError, Result};
use crate::nn::{Activation, Adam, Mlp, ParamSet};
use crate::perm::Permutation;
use crate::scalar::{upcast, Scalar};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Which initial list a request gets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankerKind {
    /// Descending trained-scorer order.
    Pointwise,
    /// Uniform random permutation, seeded.
    Random,
    /// The trained-scorer order inverted.
    Reverse,
}

/// Training setup of the pointwise scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of requests held out (from the shuffled tail) to pick the
    /// best-validation checkpoint.
    pub validation_fraction: f64,
}

impl Default for PointwiseTrainConfig {
    fn default() -> Self {
        PointwiseTrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 60,
            patience: 8,
            validation_fraction: 0.1,
        }
    }
}

impl PointwiseTrainConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(CrumError::Config("learning rate must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(CrumError::Config(
                "batch size and epoch count must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(CrumError::Config(
                "validation fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Scorer architecture: `d -> 64 -> 32 -> 1` logits.
pub fn pointwise_mlp(feature_dim: usize) -> Mlp {
    Mlp::new("init", vec![feature_dim, 64, 32, 1], Activation::Relu)
        .expect("static architecture is well-formed")
}

/// Trains the pointwise scorer by mini-batch Adam on per-item binary
/// cross-entropy and returns the parameters at the best validation loss.
///
/// A validation item pool is carved from the tail of a seeded request
/// shuffle; with `validation_fraction = 0` the final parameters win.
pub fn train_pointwise<S: Scalar>(
    dataset: &Dataset<S>,
    config: &PointwiseTrainConfig,
    seed: u64,
) -> Result<ParamSet<S>> {
    config.validate()?;
    if dataset.is_empty() || dataset.item_count() == 0 {
        return Err(CrumError::Training(
            "pointwise training needs at least one item".into(),
        ));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mlp = pointwise_mlp(dataset.feature_dim);
    let mut params: ParamSet<S> = mlp.init(&mut rng);

    // Request-level validation carve so list structure never leaks across.
    let mut request_ids: Vec<usize> = (0..dataset.len()).collect();
    request_ids.shuffle(&mut rng);
    let val_requests = ((dataset.len() as f64) * config.validation_fraction).floor() as usize;
    let (train_reqs, val_reqs) = request_ids.split_at(dataset.len() - val_requests);

    let flatten = |reqs: &[usize]| -> (Array2<S>, Array2<S>) {
        let rows: usize = reqs.iter().map(|&r| dataset.requests[r].len()).sum();
        let mut x = Array2::zeros((rows, dataset.feature_dim));
        let mut y = Array2::zeros((rows, 1));
        let mut row = 0;
        for &r in reqs {
            for item in &dataset.requests[r].items {
                for (j, &f) in item.features.iter().enumerate() {
                    x[[row, j]] = f;
                }
                y[[row, 0]] = crate::scalar::lit(f64::from(item.binary_label));
                row += 1;
            }
        }
        (x, y)
    };
    let (train_x, train_y) = flatten(train_reqs);
    let (val_x, val_y) = flatten(val_reqs);

    let mut adam = Adam::new();
    let mut best: Option<(f64, ParamSet<S>)> = None;
    let mut since_best = 0usize;
    let n_train = train_x.nrows();

    for _epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let xb = gather_rows(&train_x, chunk);
            let yb = gather_rows(&train_y, chunk);

            let mut tape = Tape::new();
            let handles = params.register(&mut tape);
            let x = tape.leaf(xb);
            let y = tape.leaf(yb);
            let logits = mlp.forward(&mut tape, &handles, x);
            let loss = bce_mean(&mut tape, logits, y);
            let mut grads = tape.backward(loss);
            let by_name = handles.collect_grads(&tape, &mut grads);
            adam.step(&mut params, &by_name, config.learning_rate);
        }

        if val_x.nrows() > 0 {
            let val_loss = evaluate_bce(&mlp, &params, &val_x, &val_y);
            if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
                best = Some((val_loss, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
    }

    Ok(best.map(|(_, p)| p).unwrap_or(params))
}

/// Mean binary cross-entropy from logits, in the stable
/// `softplus(z) − y·z` form.
fn bce_mean<S: Scalar>(
    tape: &mut Tape<S>,
    logits: crate::autodiff::Var,
    labels: crate::autodiff::Var,
) -> crate::autodiff::Var {
    let sp = tape.softplus(logits);
    let yz = tape.mul(labels, logits);
    let diff = tape.sub(sp, yz);
    tape.mean_all(diff)
}

fn evaluate_bce<S: Scalar>(mlp: &Mlp, params: &ParamSet<S>, x: &Array2<S>, y: &Array2<S>) -> f64 {
    let mut tape = Tape::new();
    let handles = params.register(&mut tape);
    let xv = tape.leaf(x.clone());
    let yv = tape.leaf(y.clone());
    let logits = mlp.forward(&mut tape, &handles, xv);
    let loss = bce_mean(&mut tape, logits, yv);
    upcast(tape.value(loss)[[0, 0]])
}

fn gather_rows<S: Scalar>(src: &Array2<S>, rows: &[usize]) -> Array2<S> {
    let mut out = Array2::zeros((rows.len(), src.ncols()));
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).assign(&src.row(i));
    }
    out
}

/// Scores one request's items with the trained scorer (logits).
pub fn score_request<S: Scalar>(
    params: &ParamSet<S>,
    request: &RankedRequest<S>,
    feature_dim: usize,
) -> Result<Vec<S>> {
    if request.items.iter().any(|it| it.features.len() != feature_dim) {
        return Err(CrumError::Domain(format!(
            "request {} has items outside the {feature_dim}-dim feature space",
            request.request_id
        )));
    }
    let mlp = pointwise_mlp(feature_dim);
    let mut x = Array2::zeros((request.len(), feature_dim));
    for (i, item) in request.items.iter().enumerate() {
        for (j, &f) in item.features.iter().enumerate() {
            x[[i, j]] = f;
        }
    }
    let mut tape = Tape::new();
    let handles = params.register(&mut tape);
    let xv = tape.leaf(x);
    let logits = mlp.forward(&mut tape, &handles, xv);
    Ok(tape.value(logits).column(0).to_vec())
}

/// Display order by descending score, ties broken by item index.
pub fn rank_by_scores<S: Scalar>(scores: &[S]) -> Permutation {
    Permutation::from_scores_desc(scores, |i| i)
}

/// Uniform random permutation of `n` items.
pub fn rank_random(n: usize, rng: &mut ChaCha20Rng) -> Permutation {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Permutation::from_order(&order).expect("shuffled order is a bijection")
}

/// Rewrites every request's `initial_positions` according to the ranker
/// kind. `Pointwise` and `Reverse` need trained scorer parameters; `Random`
/// draws one permutation per request from a seeded stream.
pub fn apply_initial_ranker<S: Scalar>(
    dataset: &Dataset<S>,
    kind: RankerKind,
    params: Option<&ParamSet<S>>,
    seed: u64,
) -> Result<Dataset<S>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = dataset.clone();
    for request in &mut out.requests {
        let perm = match kind {
            RankerKind::Random => rank_random(request.len(), &mut rng),
            RankerKind::Pointwise | RankerKind::Reverse => {
                let params = params.ok_or_else(|| {
                    CrumError::Config(
                        "pointwise and reverse rankers need trained scorer parameters".into(),
                    )
                })?;
                let scores = score_request(params, request, dataset.feature_dim)?;
                let ranked = rank_by_scores(&scores);
                if kind == RankerKind::Reverse {
                    ranked.reversed()
                } else {
                    ranked
                }
            }
        };
        request.initial_positions = perm;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Item;
    use crate::metrics::{average_precision, labels_in_display_order};
    use rand::Rng;

    /// Two Gaussian blobs separated along both feature axes.
    fn separable_dataset(requests: usize, per_request: usize, seed: u64) -> Dataset<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let reqs = (0..requests)
            .map(|q| {
                let items = (0..per_request)
                    .map(|_| {
                        let label = rng.random_range(0..2u8);
                        let center = if label == 1 { 1.5 } else { -1.5 };
                        Item {
                            features: vec![
                                center + rng.random_range(-0.5..0.5),
                                center + rng.random_range(-0.5..0.5),
                            ],
                            bid: 1.0,
                            graded_label: label * 4,
                            binary_label: label,
                        }
                    })
                    .collect();
                RankedRequest {
                    request_id: format!("q{q}"),
                    items,
                    initial_positions: Permutation::identity(per_request),
                    clicks: None,
                }
            })
            .collect();
        Dataset::new(reqs, 2, per_request).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let ds = separable_dataset(10, 5, 1);
        let cfg = PointwiseTrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            validation_fraction: 0.0,
            ..PointwiseTrainConfig::default()
        };
        let trained = train_pointwise(&ds, &cfg, 7).unwrap();

        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let init: ParamSet<f64> = pointwise_mlp(2).init(&mut rng);
        assert_eq!(trained, init);
    }

    #[test]
    fn separable_set_trains_to_low_loss() {
        let ds = separable_dataset(40, 8, 2);
        let cfg = PointwiseTrainConfig {
            epochs: 200,
            patience: 200,
            validation_fraction: 0.0,
            ..PointwiseTrainConfig::default()
        };
        let trained = train_pointwise(&ds, &cfg, 3).unwrap();

        // Training loss after convergence on a separable set.
        let mlp = pointwise_mlp(2);
        let rows: usize = ds.item_count();
        let mut x = Array2::zeros((rows, 2));
        let mut y = Array2::zeros((rows, 1));
        let mut row = 0;
        for r in &ds.requests {
            for it in &r.items {
                x[[row, 0]] = it.features[0];
                x[[row, 1]] = it.features[1];
                y[[row, 0]] = f64::from(it.binary_label);
                row += 1;
            }
        }
        let loss = evaluate_bce(&mlp, &trained, &x, &y);
        assert!(loss < 0.05, "converged loss {loss}");
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let ds = separable_dataset(12, 6, 4);
        let cfg = PointwiseTrainConfig {
            epochs: 5,
            ..PointwiseTrainConfig::default()
        };
        let a = train_pointwise(&ds, &cfg, 11).unwrap();
        let b = train_pointwise(&ds, &cfg, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_is_a_training_error() {
        let ds = Dataset::<f64>::new(vec![], 2, 5).unwrap();
        let err = train_pointwise(&ds, &PointwiseTrainConfig::default(), 0).unwrap_err();
        assert_eq!(err.category(), "training");
    }

    #[test]
    fn descending_sort_with_index_ties() {
        let perm = rank_by_scores(&[0.2, 0.9, 0.5]);
        // item1 -> position 1, item2 -> 2, item0 -> 3.
        assert_eq!(perm.positions(), &[3, 1, 2]);

        let tied = rank_by_scores(&[0.5, 0.5, 0.5]);
        assert_eq!(tied.positions(), &[1, 2, 3]);
    }

    #[test]
    fn reverse_inverts_and_double_reverse_restores() {
        let base = Permutation::from_positions(vec![1, 2, 3]).unwrap();
        assert_eq!(base.reversed().positions(), &[3, 2, 1]);
        let any = Permutation::from_positions(vec![2, 4, 1, 3]).unwrap();
        assert_eq!(any.reversed().reversed(), any);
    }

    #[test]
    fn random_ranker_is_seeded() {
        let mut a_rng = ChaCha20Rng::seed_from_u64(5);
        let mut b_rng = ChaCha20Rng::seed_from_u64(5);
        let a = rank_random(6, &mut a_rng);
        let b = rank_random(6, &mut b_rng);
        assert_eq!(a, b);
    }

    #[test]
    fn trained_ranker_beats_random_map() {
        let ds = separable_dataset(30, 8, 6);
        let cfg = PointwiseTrainConfig {
            epochs: 120,
            patience: 120,
            validation_fraction: 0.0,
            ..PointwiseTrainConfig::default()
        };
        let params = train_pointwise(&ds, &cfg, 8).unwrap();

        let ranked = apply_initial_ranker(&ds, RankerKind::Pointwise, Some(&params), 0).unwrap();
        let shuffled = apply_initial_ranker(&ds, RankerKind::Random, None, 0).unwrap();
        let map_of = |d: &Dataset<f64>| -> f64 {
            d.requests
                .iter()
                .map(|r| {
                    average_precision(&labels_in_display_order(&r.items, &r.initial_positions))
                })
                .sum::<f64>()
                / d.len() as f64
        };
        let trained_map = map_of(&ranked);
        let random_map = map_of(&shuffled);
        assert!(
            trained_map > random_map,
            "trained MAP {trained_map} vs random {random_map}"
        );
    }

    #[test]
    fn reverse_kind_inverts_the_pointwise_order() {
        let ds = separable_dataset(5, 6, 9);
        let cfg = PointwiseTrainConfig {
            epochs: 10,
            validation_fraction: 0.0,
            ..PointwiseTrainConfig::default()
        };
        let params = train_pointwise(&ds, &cfg, 1).unwrap();
        let fwd = apply_initial_ranker(&ds, RankerKind::Pointwise, Some(&params), 0).unwrap();
        let rev = apply_initial_ranker(&ds, RankerKind::Reverse, Some(&params), 0).unwrap();
        for (a, b) in fwd.requests.iter().zip(&rev.requests) {
            assert_eq!(a.initial_positions.reversed(), b.initial_positions);
        }
    }

    #[test]
    fn feature_dim_mismatch_is_a_domain_error() {
        let ds = separable_dataset(2, 3, 10);
        let params = {
            let mut rng = ChaCha20Rng::seed_from_u64(0);
            pointwise_mlp(4).init::<f64>(&mut rng)
        };
        // Params expect 4 features; the request has 2.
        let err = score_request(&params, &ds.requests[0], 4).unwrap_err();
        assert_eq!(err.category(), "domain");
    }
}
