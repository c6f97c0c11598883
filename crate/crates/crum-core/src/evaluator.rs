//! Counterfactual click evaluator: a peephole Bi-LSTM over the display-order
//! item sequence feeding an MLP click-probability head, trained jointly with
//! the graph embedding on logged clicks, plus the listwise utility
//! estimators built on it.

use crate::autodiff::{sigmoid_scalar, Tape, Var};
use crate::click::ClickLog;
use crate::data::{Dataset, RankedRequest};
use crate::error::{CrumError, Result};
use crate::graph::{Gat, GraphEmbedding, PositionEncoding};
use crate::lstm::BiLstm;
use crate::nn::{Activation, Adam, Mlp, ParamSet, TapeParams};
use crate::perm::Permutation;
use crate::scalar::{lit, upcast, Scalar};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Logged click probabilities below this floor are clamped when used as
/// importance-weight denominators.
pub const PROPENSITY_FLOOR: f64 = 1e-3;

/// Evaluator architecture. The sequence input per item is
/// `w_i = [x_i ⊕ p_{π(i)} ⊕ h_i]`; the click head consumes `[x_i ⊕ q_i]`
/// with the Bi-LSTM state, or `w_i` directly when the sequence layer is
/// disabled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorArch {
    pub feature_dim: usize,
    pub n_max: usize,
    /// Graph embedding width appended to each item (0 when disabled).
    pub graph_width: usize,
    /// Bi-LSTM hidden width per direction.
    pub hidden: usize,
    /// Hidden widths of the click-head MLP.
    pub mlp_hidden: Vec<usize>,
    /// Sequence-context ablation: `false` feeds `w_i` straight to the MLP.
    pub use_lstm: bool,
    /// Graph ablation: `false` drops `h_i` from the item input.
    pub use_graph: bool,
}

impl EvaluatorArch {
    /// Width of one item's sequence input `w_i`.
    pub fn item_input_width(&self) -> usize {
        let graph = if self.use_graph { self.graph_width } else { 0 };
        self.feature_dim + self.n_max + graph
    }

    /// Width of the click-head input.
    pub fn head_input_width(&self) -> usize {
        if self.use_lstm {
            self.feature_dim + 2 * self.hidden
        } else {
            self.item_input_width()
        }
    }
}

/// The evaluator's sequence layer and click head.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub arch: EvaluatorArch,
    lstm: Option<BiLstm>,
    mlp: Mlp,
}

impl Evaluator {
    pub fn new(arch: EvaluatorArch) -> Result<Self> {
        if arch.feature_dim == 0 || arch.n_max == 0 {
            return Err(CrumError::Config(
                "evaluator needs positive feature and position widths".into(),
            ));
        }
        if arch.use_graph && arch.graph_width == 0 {
            return Err(CrumError::Config(
                "graph input enabled with zero graph width".into(),
            ));
        }
        if arch.use_lstm && arch.hidden == 0 {
            return Err(CrumError::Config(
                "sequence layer enabled with zero hidden width".into(),
            ));
        }
        let lstm = arch
            .use_lstm
            .then(|| BiLstm::new("eval.lstm", arch.item_input_width(), arch.hidden));
        let mut dims = vec![arch.head_input_width()];
        dims.extend(&arch.mlp_hidden);
        dims.push(1);
        let mlp = Mlp::new("eval.mlp", dims, Activation::Relu)?;
        Ok(Evaluator { arch, lstm, mlp })
    }

    /// Fresh Xavier-initialized evaluator parameters (sequence layer plus
    /// click head; graph parameters live in their own set).
    pub fn init<S: Scalar>(&self, rng: &mut ChaCha20Rng) -> ParamSet<S> {
        let mut params = ParamSet::new();
        if let Some(lstm) = &self.lstm {
            for (name, value) in lstm.init::<S>(rng).iter() {
                params.insert(name, value.clone());
            }
        }
        for (name, value) in self.mlp.init::<S>(rng).iter() {
            params.insert(name, value.clone());
        }
        params
    }

    /// Batched forward over entries that all have the same list length.
    ///
    /// Output is `(B·n, 1)` logits with row `e·n + i` holding item `i` of
    /// entry `e`. The per-step batch gathers rows `e·n + order_e[t]` from the
    /// stacked item matrix; head inputs gather the state rows back to item
    /// order via `(π_e(i) − 1)·B + e`.
    pub fn forward_entries<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        handles: &TapeParams,
        entries: &[EvalEntry<'_>],
    ) -> Result<Var> {
        let first = entries
            .first()
            .ok_or_else(|| CrumError::Domain("empty evaluator batch".into()))?;
        let n = first.permutation.len();
        if n == 0 {
            return Err(CrumError::Domain("evaluator batch with empty lists".into()));
        }
        let b = entries.len();
        let encoding = PositionEncoding::new(self.arch.n_max);

        let mut w_parts = Vec::with_capacity(b);
        for entry in entries {
            if entry.permutation.len() != n {
                return Err(CrumError::Domain(
                    "evaluator batch mixes list lengths".into(),
                ));
            }
            if tape.value(entry.features).dim() != (n, self.arch.feature_dim) {
                return Err(CrumError::Config(format!(
                    "entry features {:?} do not match (n, d) = ({n}, {})",
                    tape.value(entry.features).dim(),
                    self.arch.feature_dim
                )));
            }
            let pos = tape.leaf(encoding.matrix::<S>(entry.permutation)?);
            let w = match (self.arch.use_graph, entry.graph) {
                (true, Some(h)) => {
                    if tape.value(h).dim() != (n, self.arch.graph_width) {
                        return Err(CrumError::Config(format!(
                            "entry graph rows {:?} do not match (n, m) = ({n}, {})",
                            tape.value(h).dim(),
                            self.arch.graph_width
                        )));
                    }
                    tape.concat_cols(&[entry.features, pos, h])
                }
                (true, None) => {
                    return Err(CrumError::Config(
                        "graph input enabled but the entry has no embedding".into(),
                    ))
                }
                (false, _) => tape.concat_cols(&[entry.features, pos]),
            };
            w_parts.push(w);
        }
        let w_all = tape.concat_rows(&w_parts);

        let head_input = if let Some(lstm) = &self.lstm {
            let orders: Vec<Vec<usize>> = entries.iter().map(|e| e.permutation.order()).collect();
            let steps: Vec<Var> = (0..n)
                .map(|t| {
                    let idx: Vec<usize> = (0..b).map(|e| e * n + orders[e][t]).collect();
                    tape.select_rows(w_all, &idx)
                })
                .collect();
            let states = lstm.run(tape, handles, &steps);
            let q_all = tape.concat_rows(&states);
            // Row (t, e) of q_all is t·B + e; item i of entry e sits at
            // display position π_e(i).
            let item_idx: Vec<usize> = entries
                .iter()
                .enumerate()
                .flat_map(|(e, entry)| {
                    (0..n).map(move |i| (entry.permutation.position_of(i) - 1) * b + e)
                })
                .collect();
            let q_items = tape.select_rows(q_all, &item_idx);
            let x_all = {
                let parts: Vec<Var> = entries.iter().map(|e| e.features).collect();
                tape.concat_rows(&parts)
            };
            tape.concat_cols(&[x_all, q_items])
        } else {
            w_all
        };

        Ok(self.mlp.forward(tape, handles, head_input))
    }
}

/// One (request, permutation) pair inside a batched forward. `features` and
/// `graph` may be shared tape vars across entries of the same request.
#[derive(Debug, Clone, Copy)]
pub struct EvalEntry<'a> {
    /// `(n, d)` item features.
    pub features: Var,
    /// `(n, graph_width)` embedding rows; `None` under the graph ablation.
    pub graph: Option<Var>,
    /// Counterfactual display order.
    pub permutation: &'a Permutation,
}

/// Click probabilities for one request under one counterfactual permutation.
///
/// `graph` must come from the *initial* positions; only the position one-hots
/// track the counterfactual order.
pub fn predict_click_probs<S: Scalar>(
    evaluator: &Evaluator,
    params: &ParamSet<S>,
    request: &RankedRequest<S>,
    permutation: &Permutation,
    graph: Option<&GraphEmbedding<S>>,
) -> Result<Vec<S>> {
    let batch = predict_click_probs_batch(evaluator, params, request, &[permutation], graph)?;
    Ok(batch.into_iter().next().expect("one permutation in, one out"))
}

/// Click probabilities for one request under many permutations, sharing one
/// forward tape. Returns one probability vector per permutation, item-indexed.
pub fn predict_click_probs_batch<S: Scalar>(
    evaluator: &Evaluator,
    params: &ParamSet<S>,
    request: &RankedRequest<S>,
    permutations: &[&Permutation],
    graph: Option<&GraphEmbedding<S>>,
) -> Result<Vec<Vec<S>>> {
    if permutations.is_empty() {
        return Ok(Vec::new());
    }
    let n = request.len();
    for perm in permutations {
        if perm.len() != n {
            return Err(CrumError::Domain(format!(
                "permutation of length {} for a {n}-item request",
                perm.len()
            )));
        }
    }
    let mut tape = Tape::new();
    let handles = params.register(&mut tape);
    let features = tape.leaf(request.features_matrix());
    let graph_var = graph.map(|g| tape.leaf(g.vectors.clone()));
    let entries: Vec<EvalEntry> = permutations
        .iter()
        .map(|perm| EvalEntry {
            features,
            graph: graph_var,
            permutation: perm,
        })
        .collect();
    let logits = evaluator.forward_entries(&mut tape, &handles, &entries)?;
    let values = tape.value(logits);
    Ok((0..permutations.len())
        .map(|e| (0..n).map(|i| sigmoid_scalar(values[[e * n + i, 0]])).collect())
        .collect())
}

/// Expected listwise utility `Σ_i prob_i · bid_i`.
pub fn list_utility<S: Scalar>(click_probs: &[S], bids: &[S]) -> S {
    assert_eq!(click_probs.len(), bids.len());
    click_probs
        .iter()
        .zip(bids)
        .map(|(&p, &b)| p * b)
        .fold(S::zero(), |acc, x| acc + x)
}

/// Running count of propensity clamps, for run diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClampStats {
    /// Clicked items whose logged propensity sat below the floor.
    pub clamped: usize,
    /// Clicked items seen.
    pub total: usize,
}

/// Importance-weighted utility from logged clicks and two probability
/// vectors: `Σ_i c_i · P_π(i) / max(P_logged(i), floor) · b_i`.
///
/// Only the denominator is clamped, so sampling clicks from the clamped
/// logged propensities makes this estimator exactly unbiased for
/// `list_utility` under `π`.
pub fn unbiased_utility_from_probs<S: Scalar>(
    clicks: &[u8],
    bids: &[S],
    counterfactual_probs: &[S],
    logged_probs: &[S],
    mut stats: Option<&mut ClampStats>,
) -> S {
    let floor: S = lit(PROPENSITY_FLOOR);
    let mut u = S::zero();
    for i in 0..clicks.len() {
        if clicks[i] == 0 {
            continue;
        }
        let denom = if logged_probs[i] < floor {
            if let Some(stats) = stats.as_deref_mut() {
                stats.clamped += 1;
            }
            floor
        } else {
            logged_probs[i]
        };
        if let Some(stats) = stats.as_deref_mut() {
            stats.total += 1;
        }
        u += counterfactual_probs[i] / denom * bids[i];
    }
    u
}

/// Unbiased utility of `permutation` estimated from the request's logged
/// clicks, with both probability vectors produced by the evaluator.
pub fn unbiased_utility<S: Scalar>(
    evaluator: &Evaluator,
    params: &ParamSet<S>,
    request: &RankedRequest<S>,
    permutation: &Permutation,
    log: &ClickLog,
    graph: Option<&GraphEmbedding<S>>,
    stats: Option<&mut ClampStats>,
) -> Result<S> {
    validate_log(request, log)?;
    let probs = predict_click_probs_batch(
        evaluator,
        params,
        request,
        &[permutation, &log.permutation],
        graph,
    )?;
    Ok(unbiased_utility_from_probs(
        &log.clicks,
        &request.bids(),
        &probs[0],
        &probs[1],
        stats,
    ))
}

/// Utility change when items `i` and `j` swap display positions in the
/// logged permutation: `u_swapped − u_logged`. Zero for `i = j`.
pub fn delta_utility<S: Scalar>(
    evaluator: &Evaluator,
    params: &ParamSet<S>,
    request: &RankedRequest<S>,
    log: &ClickLog,
    graph: Option<&GraphEmbedding<S>>,
    i: usize,
    j: usize,
) -> Result<S> {
    validate_log(request, log)?;
    let n = request.len();
    if i >= n || j >= n {
        return Err(CrumError::Domain(format!(
            "swap ({i}, {j}) outside a {n}-item list"
        )));
    }
    if i == j {
        return Ok(S::zero());
    }
    let swapped = log.permutation.swap_items(i, j);
    let probs = predict_click_probs_batch(
        evaluator,
        params,
        request,
        &[&swapped, &log.permutation],
        graph,
    )?;
    let bids = request.bids();
    let u_swapped =
        unbiased_utility_from_probs(&log.clicks, &bids, &probs[0], &probs[1], None);
    let u_logged =
        unbiased_utility_from_probs(&log.clicks, &bids, &probs[1], &probs[1], None);
    Ok(u_swapped - u_logged)
}

fn validate_log<S: Scalar>(request: &RankedRequest<S>, log: &ClickLog) -> Result<()> {
    if log.clicks.len() != request.len() || log.permutation.len() != request.len() {
        return Err(CrumError::Domain(format!(
            "click log for request {} does not match its {} items",
            request.request_id,
            request.len()
        )));
    }
    Ok(())
}

/// Precomputed pairwise utility changes for every request of a dataset.
///
/// `deltas[r]` maps an unordered pair `(i, j)` with `i < j` to
/// `u_swap(i,j) − u_logged` for request `r`; requests without clicks have an
/// empty map since every estimate is zero there.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaCache<S: Scalar> {
    pub deltas: Vec<BTreeMap<(usize, usize), S>>,
    /// Unbiased utility of each request's logged permutation.
    pub base_utility: Vec<S>,
    pub clamp_stats: ClampStats,
}

impl<S: Scalar> DeltaCache<S> {
    /// Delta for an ordered pair, looked up in the unordered store.
    pub fn get(&self, request_index: usize, i: usize, j: usize) -> S {
        if i == j {
            return S::zero();
        }
        let key = (i.min(j), i.max(j));
        self.deltas[request_index]
            .get(&key)
            .copied()
            .unwrap_or(S::zero())
    }
}

/// Computes every pairwise delta by batching all swaps of one request into a
/// single forward pass (1 logged + n(n−1)/2 swapped permutations).
pub fn precompute_deltas<S: Scalar>(
    evaluator: &Evaluator,
    params: &ParamSet<S>,
    dataset: &Dataset<S>,
    logs: &[ClickLog],
    graphs: &[Option<GraphEmbedding<S>>],
) -> Result<DeltaCache<S>> {
    if logs.len() != dataset.len() || graphs.len() != dataset.len() {
        return Err(CrumError::Domain(format!(
            "{} logs and {} embeddings for {} requests",
            logs.len(),
            graphs.len(),
            dataset.len()
        )));
    }
    let mut deltas = Vec::with_capacity(dataset.len());
    let mut base_utility = Vec::with_capacity(dataset.len());
    let mut clamp_stats = ClampStats::default();

    for (r, request) in dataset.requests.iter().enumerate() {
        let log = &logs[r];
        validate_log(request, log)?;
        let n = request.len();

        if log.click_count() == 0 {
            deltas.push(BTreeMap::new());
            base_utility.push(S::zero());
            continue;
        }

        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        let swapped: Vec<Permutation> = pairs
            .iter()
            .map(|&(i, j)| log.permutation.swap_items(i, j))
            .collect();
        let mut perms: Vec<&Permutation> = vec![&log.permutation];
        perms.extend(swapped.iter());

        let probs = predict_click_probs_batch(
            evaluator,
            params,
            request,
            &perms,
            graphs[r].as_ref(),
        )?;
        let bids = request.bids();
        let logged_probs = &probs[0];
        let base = unbiased_utility_from_probs(
            &log.clicks,
            &bids,
            logged_probs,
            logged_probs,
            Some(&mut clamp_stats),
        );
        let mut map = BTreeMap::new();
        for (p, &pair) in pairs.iter().enumerate() {
            let u_swap = unbiased_utility_from_probs(
                &log.clicks,
                &bids,
                &probs[1 + p],
                logged_probs,
                None,
            );
            map.insert(pair, u_swap - base);
        }
        deltas.push(map);
        base_utility.push(base);
    }
    Ok(DeltaCache {
        deltas,
        base_utility,
        clamp_stats,
    })
}

/// Training setup for the joint graph + evaluator fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorTrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Fraction of requests held out for best-checkpoint selection.
    pub validation_fraction: f64,
}

impl Default for EvaluatorTrainConfig {
    fn default() -> Self {
        EvaluatorTrainConfig {
            learning_rate: 3e-4,
            batch_size: 128,
            epochs: 40,
            patience: 6,
            validation_fraction: 0.1,
        }
    }
}

impl EvaluatorTrainConfig {
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

/// Jointly trains the graph embedding and the evaluator on logged clicks by
/// mini-batch Adam on per-item binary cross-entropy, and returns the merged
/// parameter set (graph + evaluator) at the best validation loss.
///
/// `gat` is `None` under the graph ablation. Click logs must align with the
/// dataset: same request ids in order, one display permutation and click
/// vector per request.
pub fn train_evaluator<S: Scalar>(
    evaluator: &Evaluator,
    gat: Option<&Gat>,
    dataset: &Dataset<S>,
    logs: &[ClickLog],
    config: &EvaluatorTrainConfig,
    seed: u64,
) -> Result<ParamSet<S>> {
    config.validate()?;
    if dataset.is_empty() || logs.is_empty() {
        return Err(CrumError::Training(
            "evaluator training needs at least one click log".into(),
        ));
    }
    align_logs(dataset, logs)?;
    if evaluator.arch.use_graph != gat.is_some() {
        return Err(CrumError::Config(
            "graph usage flag and graph architecture presence disagree".into(),
        ));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params: ParamSet<S> = evaluator.init(&mut rng);
    if let Some(gat) = gat {
        for (name, value) in gat.init::<S>(&mut rng).iter() {
            params.insert(name, value.clone());
        }
    }

    // Request-level validation carve.
    let mut request_ids: Vec<usize> = (0..dataset.len()).collect();
    request_ids.shuffle(&mut rng);
    let val_count = ((dataset.len() as f64) * config.validation_fraction).floor() as usize;
    let (train_reqs, val_reqs) = request_ids.split_at(dataset.len() - val_count);
    if train_reqs.is_empty() {
        return Err(CrumError::Training(
            "validation carve left no training requests".into(),
        ));
    }
    let train_reqs = train_reqs.to_vec();
    let val_batches = bucket_batches(dataset, val_reqs, config.batch_size);

    let mut adam = Adam::new();
    let mut best: Option<(f64, ParamSet<S>)> = None;
    let mut since_best = 0usize;

    for _epoch in 0..config.epochs {
        let mut order = train_reqs.clone();
        order.shuffle(&mut rng);
        let mut batches = bucket_batches(dataset, &order, config.batch_size);
        batches.shuffle(&mut rng);

        for batch in &batches {
            let mut tape = Tape::new();
            let handles = params.register(&mut tape);
            let (logits, labels) =
                batch_forward(evaluator, gat, dataset, logs, batch, &mut tape, &handles)?;
            let loss = bce_mean(&mut tape, logits, labels);
            let mut grads = tape.backward(loss);
            let by_name = handles.collect_grads(&tape, &mut grads);
            adam.step(&mut params, &by_name, config.learning_rate);
        }

        if !val_batches.is_empty() {
            let val_loss = dataset_bce(evaluator, gat, dataset, logs, &val_batches, &params)?;
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

/// Groups request indices by list length and chunks each group.
fn bucket_batches<S: Scalar>(
    dataset: &Dataset<S>,
    requests: &[usize],
    batch_size: usize,
) -> Vec<Vec<usize>> {
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &r in requests {
        let n = dataset.requests[r].len();
        if n > 0 {
            by_len.entry(n).or_default().push(r);
        }
    }
    by_len
        .values()
        .flat_map(|group| group.chunks(batch_size).map(<[usize]>::to_vec))
        .collect()
}

/// Builds one batched forward with per-request graph embeddings computed on
/// the same tape, returning `(logits, labels)` aligned row-for-row.
fn batch_forward<S: Scalar>(
    evaluator: &Evaluator,
    gat: Option<&Gat>,
    dataset: &Dataset<S>,
    logs: &[ClickLog],
    batch: &[usize],
    tape: &mut Tape<S>,
    handles: &TapeParams,
) -> Result<(Var, Var)> {
    let n = dataset.requests[batch[0]].len();
    let mut entries = Vec::with_capacity(batch.len());
    let mut labels = Array2::zeros((batch.len() * n, 1));
    for (e, &r) in batch.iter().enumerate() {
        let request = &dataset.requests[r];
        let features = tape.leaf(request.features_matrix());
        let graph = match gat {
            Some(gat) => Some(
                gat.forward(tape, handles, features, &request.initial_positions)?
                    .embedding,
            ),
            None => None,
        };
        entries.push(EvalEntry {
            features,
            graph,
            permutation: &logs[r].permutation,
        });
        for (i, &c) in logs[r].clicks.iter().enumerate() {
            labels[[e * n + i, 0]] = lit(f64::from(c));
        }
    }
    let logits = evaluator.forward_entries(tape, handles, &entries)?;
    let labels = tape.leaf(labels);
    Ok((logits, labels))
}

/// Mean binary cross-entropy from logits in the stable
/// `softplus(z) − y·z` form.
fn bce_mean<S: Scalar>(tape: &mut Tape<S>, logits: Var, labels: Var) -> Var {
    let sp = tape.softplus(logits);
    let yz = tape.mul(labels, logits);
    let diff = tape.sub(sp, yz);
    tape.mean_all(diff)
}

/// Forward-only mean BCE over a batch list, weighted by item counts.
fn dataset_bce<S: Scalar>(
    evaluator: &Evaluator,
    gat: Option<&Gat>,
    dataset: &Dataset<S>,
    logs: &[ClickLog],
    batches: &[Vec<usize>],
    params: &ParamSet<S>,
) -> Result<f64> {
    let mut loss_sum = 0.0;
    let mut items = 0usize;
    for batch in batches {
        let mut tape = Tape::new();
        let handles = params.register(&mut tape);
        let (logits, labels) =
            batch_forward(evaluator, gat, dataset, logs, batch, &mut tape, &handles)?;
        let loss = bce_mean(&mut tape, logits, labels);
        let rows = tape.value(logits).nrows();
        loss_sum += upcast(tape.value(loss)[[0, 0]]) * rows as f64;
        items += rows;
    }
    Ok(loss_sum / items.max(1) as f64)
}

/// Checks that click logs line up with the dataset's requests. The logged
/// display permutation may differ from the initial ranking (the logging
/// policy may have explored) but must cover the same items.
pub fn align_logs<S: Scalar>(dataset: &Dataset<S>, logs: &[ClickLog]) -> Result<()> {
    if logs.len() != dataset.len() {
        return Err(CrumError::Domain(format!(
            "{} click logs for {} requests",
            logs.len(),
            dataset.len()
        )));
    }
    for (request, log) in dataset.requests.iter().zip(logs) {
        if request.request_id != log.request_id {
            return Err(CrumError::Domain(format!(
                "click log for '{}' paired with request '{}'",
                log.request_id, request.request_id
            )));
        }
        if log.permutation.len() != request.len() {
            return Err(CrumError::Domain(format!(
                "click log for '{}' displays {} items for a {}-item request",
                log.request_id,
                log.permutation.len(),
                request.len()
            )));
        }
        if log.clicks.len() != request.len() {
            return Err(CrumError::Domain(format!(
                "click log for '{}' has {} bits for {} items",
                log.request_id,
                log.clicks.len(),
                request.len()
            )));
        }
    }
    Ok(())
}
