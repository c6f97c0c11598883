//! Oracle click model: relevance x position decay x similarity to the most
//! recently clicked item.
//!
//! The model both samples clicks (training logs) and computes exact per-item
//! click marginals by dynamic programming over the Markov state "identity of
//! the most recently clicked item, or none", scanned in display order.

use crate::data::RankedRequest;
use crate::error::{CrumError, Result};
use crate::perm::Permutation;
use crate::scalar::{upcast, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Parameters of the oracle click model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClickModelConfig {
    /// Position-decay exponent; observation probability is `1 / pos^eta`.
    pub eta: f64,
    /// Binarization threshold for graded labels (relevant iff grade >=
    /// threshold + 1).
    pub threshold: u8,
    /// When false, the similarity factor is forced to 1 and click
    /// probabilities factorize as relevance x decay.
    #[serde(default = "default_true")]
    pub similarity: bool,
    /// Logging-policy knob, read only when generating training logs: the
    /// fraction of lists displayed under a seeded uniform-random permutation
    /// instead of the initial ranking. Position and relevance are perfectly
    /// confounded in purely ranked logs; a little exploration makes them
    /// separable. The click process itself is unaffected.
    #[serde(default)]
    pub exploration: f64,
}

fn default_true() -> bool {
    true
}

impl Default for ClickModelConfig {
    fn default() -> Self {
        ClickModelConfig {
            eta: 0.7,
            threshold: 1,
            similarity: true,
            exploration: 0.0,
        }
    }
}

impl ClickModelConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.eta < 0.0 || !self.eta.is_finite() {
            return Err(CrumError::Config(format!(
                "decay exponent must be finite and nonnegative, got {}",
                self.eta
            )));
        }
        if !(0.0..=1.0).contains(&self.exploration) {
            return Err(CrumError::Config(format!(
                "exploration fraction must lie in [0, 1], got {}",
                self.exploration
            )));
        }
        Ok(())
    }
}

/// Clicks recorded for one request under one display permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickLog {
    pub request_id: String,
    /// Display permutation the clicks were generated under.
    pub permutation: Permutation,
    /// Per-item click bit, indexed like the request's items.
    pub clicks: Vec<u8>,
}

impl ClickLog {
    /// Number of clicked items.
    pub fn click_count(&self) -> usize {
        self.clicks.iter().map(|&c| c as usize).sum()
    }
}

/// Observation probability `1 / position^eta` for a 1-based position.
pub fn position_decay(position: usize, eta: f64) -> Result<f64> {
    if position < 1 {
        return Err(CrumError::Domain(format!(
            "display positions are 1-based, got {position}"
        )));
    }
    Ok((position as f64).powf(-eta))
}

/// Cosine similarity clamped to `[0, 1]`; zero vectors on either side give 0.
pub fn cosine_clamped<S: Scalar>(a: &[S], b: &[S]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CrumError::Domain(format!(
            "cosine of {}-dim and {}-dim vectors",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (upcast(x), upcast(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 1.0))
}

/// Similarity factor for the item being browsed: cosine to the most recently
/// clicked item's features, or 1 when nothing was clicked yet.
pub fn similarity_prob<S: Scalar>(current: &[S], last_clicked: Option<&[S]>) -> Result<f64> {
    match last_clicked {
        None => Ok(1.0),
        Some(prev) => cosine_clamped(current, prev),
    }
}

fn check_inputs<S: Scalar>(
    request: &RankedRequest<S>,
    permutation: &Permutation,
    config: &ClickModelConfig,
    relevance_probs: &[f64],
) -> Result<()> {
    config.validate()?;
    if permutation.len() != request.len() {
        return Err(CrumError::Domain(format!(
            "permutation of length {} for a {}-item request",
            permutation.len(),
            request.len()
        )));
    }
    if relevance_probs.len() != request.len() {
        return Err(CrumError::Domain(format!(
            "{} relevance probabilities for a {}-item request",
            relevance_probs.len(),
            request.len()
        )));
    }
    if relevance_probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(CrumError::Domain(
            "relevance probabilities must lie in [0, 1]".into(),
        ));
    }
    Ok(())
}

/// Samples one click log: items are browsed in display order and clicked with
/// probability `relevance x decay(position) x similarity(current, last
/// clicked)`; a click moves the similarity anchor to the clicked item.
pub fn sample_clicks<S: Scalar>(
    request: &RankedRequest<S>,
    permutation: &Permutation,
    config: &ClickModelConfig,
    relevance_probs: &[f64],
    seed: u64,
) -> Result<ClickLog> {
    check_inputs(request, permutation, config, relevance_probs)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut clicks = vec![0u8; request.len()];
    let mut last_clicked: Option<usize> = None;

    for (t, &i) in permutation.order().iter().enumerate() {
        let position = t + 1;
        let decay = position_decay(position, config.eta)?;
        let sim = if config.similarity {
            similarity_prob(
                &request.items[i].features,
                last_clicked.map(|j| request.items[j].features.as_slice()),
            )?
        } else {
            1.0
        };
        let p = relevance_probs[i] * decay * sim;
        if rng.random_range(0.0..1.0) < p {
            clicks[i] = 1;
            last_clicked = Some(i);
        }
    }

    Ok(ClickLog {
        request_id: request.request_id.clone(),
        permutation: permutation.clone(),
        clicks,
    })
}

/// Exact per-item click marginals under the model, by dynamic programming.
///
/// The browsing process is Markov in the most recently clicked item, so the
/// state space at any prefix is `{none} + {items displayed so far}` and the
/// scan costs `O(n^2)` for `n` items.
pub fn expected_clicks<S: Scalar>(
    request: &RankedRequest<S>,
    permutation: &Permutation,
    config: &ClickModelConfig,
    relevance_probs: &[f64],
) -> Result<Vec<f64>> {
    check_inputs(request, permutation, config, relevance_probs)?;
    let n = request.len();
    // state[0] = P(no click yet); state[1 + j] = P(item j was clicked most
    // recently).
    let mut state = vec![0.0f64; n + 1];
    state[0] = 1.0;
    let mut marginals = vec![0.0f64; n];

    for (t, &i) in permutation.order().iter().enumerate() {
        let decay = position_decay(t + 1, config.eta)?;
        let mut clicked_mass = 0.0f64;
        for (s, slot) in state.iter_mut().enumerate() {
            let mass = *slot;
            if mass == 0.0 {
                continue;
            }
            let sim = if !config.similarity || s == 0 {
                1.0
            } else {
                cosine_clamped(&request.items[i].features, &request.items[s - 1].features)?
            };
            let p = relevance_probs[i] * decay * sim;
            let clicked = mass * p;
            clicked_mass += clicked;
            *slot = mass - clicked;
        }
        state[1 + i] += clicked_mass;
        marginals[i] = clicked_mass;
    }

    Ok(marginals)
}

/// On-disk archive of click logs for one dataset split.
#[derive(Debug, Serialize, Deserialize)]
pub struct ClickLogArchive {
    pub format: String,
    pub version: u32,
    pub logs: Vec<ClickLog>,
}

const CLICKLOG_FORMAT: &str = "crum-clicklog";
const CLICKLOG_VERSION: u32 = 1;

/// Writes click logs as a JSON archive.
pub fn save_click_logs(logs: &[ClickLog], path: &std::path::Path) -> Result<()> {
    let archive = ClickLogArchive {
        format: CLICKLOG_FORMAT.to_string(),
        version: CLICKLOG_VERSION,
        logs: logs.to_vec(),
    };
    std::fs::write(path, serde_json::to_string(&archive)?)?;
    Ok(())
}

/// Reads a click log archive.
pub fn load_click_logs(path: &std::path::Path) -> Result<Vec<ClickLog>> {
    let text = std::fs::read_to_string(path)?;
    let archive: ClickLogArchive = serde_json::from_str(&text)?;
    if archive.format != CLICKLOG_FORMAT || archive.version != CLICKLOG_VERSION {
        return Err(CrumError::Schema(format!(
            "expected {CLICKLOG_FORMAT} v{CLICKLOG_VERSION}, found '{}' v{}",
            archive.format, archive.version
        )));
    }
    Ok(archive.logs)
}
