//! Dataset types and ingestion: LETOR parsing, label binarization, list
//! truncation, deterministic splits, synthetic generation, and the JSON
//! archive consumed by the pipeline stages.

mod letor;
mod synthetic;

pub use letor::{parse_letor, parse_letor_with_dim, to_letor_string};
pub use synthetic::generate_synthetic;

use crate::error::{CrumError, Result};
use crate::perm::Permutation;
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One candidate item of a ranked list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct Item<S: Scalar> {
    /// Dense feature vector of the dataset-wide dimension `d`.
    pub features: Vec<S>,
    /// Nonnegative utility value (bid price analogue).
    pub bid: S,
    /// Graded relevance label in `0..=4`.
    pub graded_label: u8,
    /// Binarized relevance label in `{0, 1}`.
    pub binary_label: u8,
}

/// One query's candidate list with its logged display order and clicks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct RankedRequest<S: Scalar> {
    pub request_id: String,
    pub items: Vec<Item<S>>,
    /// Display position of each item in the initial ranked list.
    pub initial_positions: Permutation,
    /// Logged click per item, when present. The display order the clicks
    /// were generated under lives in the accompanying click log; it is the
    /// initial ranking unless the logging policy explored.
    pub clicks: Option<Vec<u8>>,
}

impl<S: Scalar> RankedRequest<S> {
    /// Number of items in the list.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Binary relevance per item as probabilities in `{0.0, 1.0}`.
    pub fn relevance_probs(&self) -> Vec<f64> {
        self.items.iter().map(|it| f64::from(it.binary_label)).collect()
    }

    /// Bids per item.
    pub fn bids(&self) -> Vec<S> {
        self.items.iter().map(|it| it.bid).collect()
    }

    /// Item features stacked as an `(n, d)` matrix.
    pub fn features_matrix(&self) -> ndarray::Array2<S> {
        let d = self.items.first().map_or(0, |it| it.features.len());
        let mut x = ndarray::Array2::zeros((self.items.len(), d));
        for (i, item) in self.items.iter().enumerate() {
            for (j, &f) in item.features.iter().enumerate() {
                x[[i, j]] = f;
            }
        }
        x
    }

    fn validate(&self, feature_dim: usize, n_max: usize) -> Result<()> {
        if self.items.len() > n_max {
            return Err(CrumError::Schema(format!(
                "request {} has {} items, above n_max {}",
                self.request_id,
                self.items.len(),
                n_max
            )));
        }
        if self.initial_positions.len() != self.items.len() {
            return Err(CrumError::Schema(format!(
                "request {} has {} positions for {} items",
                self.request_id,
                self.initial_positions.len(),
                self.items.len()
            )));
        }
        if let Some(clicks) = &self.clicks {
            if clicks.len() != self.items.len() || clicks.iter().any(|&c| c > 1) {
                return Err(CrumError::Schema(format!(
                    "request {} has an invalid click vector",
                    self.request_id
                )));
            }
        }
        for item in &self.items {
            if item.features.len() != feature_dim {
                return Err(CrumError::Schema(format!(
                    "request {} has a {}-dim item in a {}-dim dataset",
                    self.request_id,
                    item.features.len(),
                    feature_dim
                )));
            }
            if item.bid < S::zero() {
                return Err(CrumError::Schema(format!(
                    "request {} has a negative bid",
                    self.request_id
                )));
            }
        }
        Ok(())
    }
}

/// A collection of ranked requests sharing one feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct Dataset<S: Scalar> {
    pub requests: Vec<RankedRequest<S>>,
    pub feature_dim: usize,
    pub n_max: usize,
}

impl<S: Scalar> Dataset<S> {
    /// Builds a dataset and checks the shared-dimension and length invariants.
    pub fn new(requests: Vec<RankedRequest<S>>, feature_dim: usize, n_max: usize) -> Result<Self> {
        for r in &requests {
            r.validate(feature_dim, n_max)?;
        }
        Ok(Dataset {
            requests,
            feature_dim,
            n_max,
        })
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Total number of items across requests.
    pub fn item_count(&self) -> usize {
        self.requests.iter().map(|r| r.items.len()).sum()
    }
}

/// Sets `binary_label = [graded_label >= threshold + 1]` on every item.
///
/// With threshold 1 the relevant grade set is `{2, 3, 4}`.
pub fn binarize_labels<S: Scalar>(dataset: &Dataset<S>, threshold: u8) -> Dataset<S> {
    let mut out = dataset.clone();
    for request in &mut out.requests {
        for item in &mut request.items {
            item.binary_label = u8::from(item.graded_label > threshold);
        }
    }
    out
}

/// Truncates every list to the items displayed at positions `1..=n_max` and
/// splits requests into train/validation/test by the given ratios.
///
/// The split is a seeded uniform shuffle of request indices; the three parts
/// partition the dataset. Ratios must sum to 1.
pub fn truncate_and_split<S: Scalar>(
    dataset: &Dataset<S>,
    n_max: usize,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset<S>, Dataset<S>, Dataset<S>)> {
    if n_max < 1 {
        return Err(CrumError::Config("n_max must be at least 1".into()));
    }
    let sum = ratios.0 + ratios.1 + ratios.2;
    if (sum - 1.0).abs() > 1e-9 || ratios.0 < 0.0 || ratios.1 < 0.0 || ratios.2 < 0.0 {
        return Err(CrumError::Config(format!(
            "split ratios must be nonnegative and sum to 1, got {ratios:?}"
        )));
    }

    let truncated: Vec<RankedRequest<S>> = dataset
        .requests
        .iter()
        .map(|r| truncate_request(r, n_max))
        .collect();

    let mut indices: Vec<usize> = (0..truncated.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let total = indices.len();
    let n_train = (ratios.0 * total as f64).floor() as usize;
    let n_val = (ratios.1 * total as f64).floor() as usize;

    let pick = |slice: &[usize]| -> Result<Dataset<S>> {
        let mut ordered: Vec<usize> = slice.to_vec();
        // Requests keep their original dataset order inside each split so the
        // split content, not the shuffle order, is what downstream sees.
        ordered.sort_unstable();
        let requests = ordered.iter().map(|&i| truncated[i].clone()).collect();
        Dataset::new(requests, dataset.feature_dim, n_max)
    };

    let train = pick(&indices[..n_train])?;
    let val = pick(&indices[n_train..n_train + n_val])?;
    let test = pick(&indices[n_train + n_val..])?;
    Ok((train, val, test))
}

fn truncate_request<S: Scalar>(request: &RankedRequest<S>, n_max: usize) -> RankedRequest<S> {
    let n = request.items.len();
    if n <= n_max {
        return request.clone();
    }
    // Keep the items displayed at positions 1..=n_max; surviving items keep
    // their positions, which are exactly {1..n_max}.
    let keep: Vec<usize> = (0..n)
        .filter(|&i| request.initial_positions.position_of(i) <= n_max)
        .collect();
    let items = keep.iter().map(|&i| request.items[i].clone()).collect();
    let positions = keep
        .iter()
        .map(|&i| request.initial_positions.position_of(i))
        .collect();
    let clicks = request
        .clicks
        .as_ref()
        .map(|c| keep.iter().map(|&i| c[i]).collect());
    RankedRequest {
        request_id: request.request_id.clone(),
        items,
        initial_positions: Permutation::from_positions(positions)
            .expect("surviving positions are exactly 1..=n_max"),
        clicks,
    }
}

/// On-disk dataset archive: a format header plus the per-request records.
#[derive(Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
struct DatasetArchive<S: Scalar> {
    format: String,
    version: u32,
    feature_dim: usize,
    n_max: usize,
    request_count: usize,
    requests: Vec<RankedRequest<S>>,
}

const DATASET_FORMAT: &str = "crum-dataset";
const DATASET_VERSION: u32 = 1;

/// Writes a dataset archive as JSON.
pub fn save_dataset<S: Scalar + Serialize>(dataset: &Dataset<S>, path: &Path) -> Result<()> {
    let archive = DatasetArchive {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        feature_dim: dataset.feature_dim,
        n_max: dataset.n_max,
        request_count: dataset.requests.len(),
        requests: dataset.requests.clone(),
    };
    let json = serde_json::to_string(&archive)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Reads a dataset archive and revalidates its invariants.
pub fn load_dataset<S: Scalar + for<'de> Deserialize<'de>>(path: &Path) -> Result<Dataset<S>> {
    let text = std::fs::read_to_string(path)?;
    let archive: DatasetArchive<S> = serde_json::from_str(&text)?;
    if archive.format != DATASET_FORMAT {
        return Err(CrumError::Schema(format!(
            "expected {DATASET_FORMAT} archive, found '{}'",
            archive.format
        )));
    }
    if archive.version != DATASET_VERSION {
        return Err(CrumError::Schema(format!(
            "unsupported dataset archive version {}",
            archive.version
        )));
    }
    Dataset::new(archive.requests, archive.feature_dim, archive.n_max)
}
