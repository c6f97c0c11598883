//! Staged pipeline from raw lists to evaluated rerankings.
//!
//! Seven sequential stages, each writing its artifacts plus a manifest into
//! its own directory under the run's output root. A stage loads upstream
//! artifacts only after checking the upstream manifest exists and carries
//! the same config hash, so stale or missing inputs fail loudly instead of
//! silently mixing runs. Every stage derives its random stream from the
//! master seed and its own name, so any stage can be re-run in isolation
//! and reproduce its outputs bit for bit.

use crate::click::{sample_clicks, ClickLog};
use crate::config::{AblationConfig, DataSource, RunConfig};
use crate::data::{
    binarize_labels, load_dataset, parse_letor, save_dataset, truncate_and_split, Dataset,
};
use crate::error::{CrumError, Result};
use crate::evaluator::Evaluator;
use crate::graph::{embed_request, Gat, GraphEmbedding};
use crate::metrics::{compute_metrics_report, MetricsReport};
use crate::nn::ParamSet;
use crate::oracle::enumerate_best_permutation;
use crate::perm::Permutation;
use crate::ranker::{apply_initial_ranker, rank_random, train_pointwise, RankerKind};
use crate::rerank::{
    greedy_rerank, prepare_guidance, rerank_dataset, train_reranker, Reranker,
};
use crate::scalar::upcast;
use crate::store::{unix_timestamp, ParameterStore, StoreMeta};
use crate::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// The pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Prepare,
    TrainInitial,
    SimulateClicks,
    TrainEvaluator,
    TrainReranker,
    Evaluate,
    OracleCheck,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Prepare,
        Stage::TrainInitial,
        Stage::SimulateClicks,
        Stage::TrainEvaluator,
        Stage::TrainReranker,
        Stage::Evaluate,
        Stage::OracleCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::TrainInitial => "train-initial",
            Stage::SimulateClicks => "simulate-clicks",
            Stage::TrainEvaluator => "train-evaluator",
            Stage::TrainReranker => "train-reranker",
            Stage::Evaluate => "evaluate",
            Stage::OracleCheck => "oracle-check",
        }
    }

    pub fn parse(name: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| {
                let known: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
                CrumError::Config(format!(
                    "unknown stage '{name}'; known stages: {}",
                    known.join(", ")
                ))
            })
    }
}

/// Record of one completed stage, written next to its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    /// The stage's derived seed, not the master seed.
    pub seed: u64,
    /// Unix seconds at write time; informational only, excluded from
    /// determinism guarantees.
    pub timestamp: u64,
    /// Artifacts read, as paths relative to the output root.
    pub inputs: Vec<String>,
    /// Artifacts written, as paths relative to the output root.
    pub outputs: Vec<String>,
}

/// First eight little-endian bytes of `sha256(base || label)`.
fn derive_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// The random stream a stage runs on, derived from the master seed and the
/// stage name so stages never share a stream.
pub fn stage_seed(master: u64, stage: Stage) -> u64 {
    derive_seed(master, stage.name())
}

/// Per-request click stream, derived from the stage seed and the request id
/// so adding or reordering requests never shifts another request's clicks.
pub fn request_click_seed(stage_seed: u64, request_id: &str) -> u64 {
    derive_seed(stage_seed, request_id)
}

pub fn stage_dir(out_dir: &Path, stage: Stage) -> PathBuf {
    out_dir.join(stage.name())
}

pub fn manifest_path(out_dir: &Path, stage: Stage) -> PathBuf {
    stage_dir(out_dir, stage).join("manifest.json")
}

pub fn artifact_path(out_dir: &Path, stage: Stage, file: &str) -> PathBuf {
    stage_dir(out_dir, stage).join(file)
}

/// Row label of the trained reranker in reports: the plain name for the
/// full model, suffixed with the ablation for reduced variants.
pub fn reranked_row_name(ablation: &AblationConfig) -> String {
    match ablation.variant_name() {
        "full" => "reranked".to_string(),
        variant => format!("reranked-{variant}"),
    }
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string(value)?)?;
    Ok(())
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Relative artifact path used in manifests.
fn rel(stage: Stage, file: &str) -> String {
    format!("{}/{file}", stage.name())
}

/// Checks that an upstream stage has completed under the current config.
fn require_stage(
    out_dir: &Path,
    upstream: Stage,
    requested: Stage,
    config_hash: &str,
) -> Result<StageManifest> {
    let path = manifest_path(out_dir, upstream);
    if !path.exists() {
        return Err(CrumError::Dependency {
            requested: requested.name().to_string(),
            missing: upstream.name().to_string(),
            message: format!("no manifest at {}", path.display()),
        });
    }
    let manifest: StageManifest = load_json(&path)?;
    if manifest.config_hash != config_hash {
        return Err(CrumError::Config(format!(
            "artifacts of stage '{}' belong to config {} but the current config is {}; re-run '{}'",
            upstream.name(),
            manifest.config_hash,
            config_hash,
            upstream.name()
        )));
    }
    Ok(manifest)
}

/// Path of an upstream artifact, with a dependency error if it is gone.
fn require_artifact(
    out_dir: &Path,
    upstream: Stage,
    file: &str,
    requested: Stage,
) -> Result<PathBuf> {
    let path = artifact_path(out_dir, upstream, file);
    if !path.exists() {
        return Err(CrumError::Dependency {
            requested: requested.name().to_string(),
            missing: upstream.name().to_string(),
            message: format!("missing artifact {}", path.display()),
        });
    }
    Ok(path)
}

fn write_manifest(
    out_dir: &Path,
    stage: Stage,
    config: &RunConfig,
    seed: u64,
    inputs: Vec<String>,
    outputs: &[String],
) -> Result<()> {
    let manifest = StageManifest {
        stage: stage.name().to_string(),
        config_hash: config.config_hash(),
        seed,
        timestamp: unix_timestamp(),
        inputs,
        outputs: outputs.to_vec(),
    };
    save_json(&manifest_path(out_dir, stage), &manifest)
}

fn store_meta(stage: Stage, config: &RunConfig, seed: u64, d: usize) -> StoreMeta {
    let mut extra = BTreeMap::new();
    extra.insert(
        "variant".to_string(),
        config.ablation.variant_name().to_string(),
    );
    extra.insert("feature_dim".to_string(), d.to_string());
    StoreMeta {
        stage: stage.name().to_string(),
        config_hash: config.config_hash(),
        seed,
        timestamp: unix_timestamp(),
        extra,
    }
}

/// Models shared by the stages that consume the trained evaluator.
struct EvaluatorModels {
    evaluator: Evaluator,
    gat: Option<Gat>,
    frozen: ParamSet<Real>,
}

fn load_evaluator_models(
    out_dir: &Path,
    config: &RunConfig,
    feature_dim: usize,
    requested: Stage,
) -> Result<EvaluatorModels> {
    let path = require_artifact(out_dir, Stage::TrainEvaluator, "evaluator.json", requested)?;
    let store: ParameterStore<Real> = ParameterStore::load(&path, Some(&config.config_hash()))?;
    let frozen = ParamSet::from_store(&store)?;
    let gat = if config.ablation.disable_gat {
        None
    } else {
        Some(config.gat_model(feature_dim)?)
    };
    let evaluator = config.evaluator_model(feature_dim)?;
    Ok(EvaluatorModels {
        evaluator,
        gat,
        frozen,
    })
}

/// Context vectors for every request, or `None` per request when the run
/// has no graph component.
fn embed_all(
    gat: Option<&Gat>,
    params: &ParamSet<Real>,
    dataset: &Dataset<Real>,
) -> Result<Vec<Option<GraphEmbedding<Real>>>> {
    match gat {
        Some(g) => dataset
            .requests
            .iter()
            .map(|r| embed_request(g, params, r).map(Some))
            .collect(),
        None => Ok(vec![None; dataset.len()]),
    }
}

/// Oracle utility of one display order: expected clicks under the click
/// model, weighted by bids.
fn oracle_list_utility(
    request: &crate::data::RankedRequest<Real>,
    permutation: &Permutation,
    config: &RunConfig,
) -> Result<f64> {
    let marginals = crate::click::expected_clicks(
        request,
        permutation,
        &config.click,
        &request.relevance_probs(),
    )?;
    Ok(marginals
        .iter()
        .zip(&request.items)
        .map(|(m, item)| m * upcast(item.bid))
        .sum())
}

fn run_prepare(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let stage = Stage::Prepare;
    let seed = stage_seed(config.run.seed, stage);
    let dir = stage_dir(out_dir, stage);
    std::fs::create_dir_all(&dir)?;

    let raw: Dataset<Real> = match config.data.source {
        DataSource::Synthetic => crate::data::generate_synthetic(
            config.data.requests,
            config.data.items_per_request,
            config.data.feature_dim,
            derive_seed(seed, "generate"),
        )?,
        DataSource::Letor => {
            let path = config
                .data
                .path
                .as_ref()
                .ok_or_else(|| CrumError::Config("letor source needs a file path".into()))?;
            let text = std::fs::read_to_string(path)?;
            parse_letor(&text)?
        }
    };
    let binarized = binarize_labels(&raw, config.click.threshold);
    let [train_ratio, tuning_ratio, test_ratio] = config.data.split;
    let (train, tuning, test) = truncate_and_split(
        &binarized,
        config.data.n_max,
        (train_ratio, tuning_ratio, test_ratio),
        derive_seed(seed, "split"),
    )?;
    if train.is_empty() {
        return Err(CrumError::Config(
            "the split leaves no training requests; raise the request count or the train fraction"
                .into(),
        ));
    }

    let config_path = out_dir.join("config.toml");
    std::fs::write(&config_path, config.to_toml_string()?)?;
    save_dataset(&train, &dir.join("train.json"))?;
    save_dataset(&tuning, &dir.join("tuning.json"))?;
    save_dataset(&test, &dir.join("test.json"))?;

    let outputs = vec![
        "config.toml".to_string(),
        rel(stage, "train.json"),
        rel(stage, "tuning.json"),
        rel(stage, "test.json"),
    ];
    write_manifest(out_dir, stage, config, seed, Vec::new(), &outputs)?;
    Ok(outputs.iter().map(|o| out_dir.join(o)).collect())
}

fn run_train_initial(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let stage = Stage::TrainInitial;
    let seed = stage_seed(config.run.seed, stage);
    let hash = config.config_hash();
    require_stage(out_dir, Stage::Prepare, stage, &hash)?;
    let train_path = require_artifact(out_dir, Stage::Prepare, "train.json", stage)?;
    let dir = stage_dir(out_dir, stage);
    std::fs::create_dir_all(&dir)?;

    // A random first pass has nothing to learn; an empty checkpoint keeps
    // the stage chain uniform.
    let params: ParamSet<Real> = if config.initial.kind == RankerKind::Random {
        ParamSet::new()
    } else {
        let train: Dataset<Real> = load_dataset(&train_path)?;
        train_pointwise(&train, &config.initial.train_config(), seed)?
    };
    let store = params.to_store(store_meta(stage, config, seed, config.data.feature_dim))?;
    store.save(&dir.join("scorer.json"))?;

    let outputs = vec![rel(stage, "scorer.json")];
    write_manifest(
        out_dir,
        stage,
        config,
        seed,
        vec![rel(Stage::Prepare, "train.json")],
        &outputs,
    )?;
    Ok(outputs.iter().map(|o| out_dir.join(o)).collect())
}

fn run_simulate_clicks(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let stage = Stage::SimulateClicks;
    let seed = stage_seed(config.run.seed, stage);
    let hash = config.config_hash();
    require_stage(out_dir, Stage::Prepare, stage, &hash)?;
    require_stage(out_dir, Stage::TrainInitial, stage, &hash)?;
    let train_path = require_artifact(out_dir, Stage::Prepare, "train.json", stage)?;
    let test_path = require_artifact(out_dir, Stage::Prepare, "test.json", stage)?;
    let scorer_path = require_artifact(out_dir, Stage::TrainInitial, "scorer.json", stage)?;
    let dir = stage_dir(out_dir, stage);
    std::fs::create_dir_all(&dir)?;

    let train: Dataset<Real> = load_dataset(&train_path)?;
    let test: Dataset<Real> = load_dataset(&test_path)?;
    let scorer_store: ParameterStore<Real> = ParameterStore::load(&scorer_path, Some(&hash))?;
    let scorer: Option<ParamSet<Real>> = if config.initial.kind == RankerKind::Random {
        None
    } else {
        Some(ParamSet::from_store(&scorer_store)?)
    };

    let mut ranked_train = apply_initial_ranker(
        &train,
        config.initial.kind,
        scorer.as_ref(),
        derive_seed(seed, "rank-train"),
    )?;
    let ranked_test = apply_initial_ranker(
        &test,
        config.initial.kind,
        scorer.as_ref(),
        derive_seed(seed, "rank-test"),
    )?;

    // Logged display: the initial ranking, except that an `exploration`
    // fraction of lists is shown in a seeded random order so that position
    // and relevance stay separable in the logs.
    let logs: Vec<ClickLog> = ranked_train
        .requests
        .iter()
        .map(|r| {
            let click_seed = request_click_seed(seed, &r.request_id);
            let mut policy_rng =
                ChaCha20Rng::seed_from_u64(derive_seed(click_seed, "explore"));
            let display = if policy_rng.random::<f64>() < config.click.exploration {
                rank_random(r.len(), &mut policy_rng)
            } else {
                r.initial_positions.clone()
            };
            sample_clicks(
                r,
                &display,
                &config.click,
                &r.relevance_probs(),
                click_seed,
            )
        })
        .collect::<Result<_>>()?;
    for (request, log) in ranked_train.requests.iter_mut().zip(&logs) {
        request.clicks = Some(log.clicks.clone());
    }

    save_dataset(&ranked_train, &dir.join("ranked-train.json"))?;
    save_dataset(&ranked_test, &dir.join("ranked-test.json"))?;
    save_json(&dir.join("logs.json"), &logs)?;

    let outputs = vec![
        rel(stage, "ranked-train.json"),
        rel(stage, "ranked-test.json"),
        rel(stage, "logs.json"),
    ];
    write_manifest(
        out_dir,
        stage,
        config,
        seed,
        vec![
            rel(Stage::Prepare, "train.json"),
            rel(Stage::Prepare, "test.json"),
            rel(Stage::TrainInitial, "scorer.json"),
        ],
        &outputs,
    )?;
    Ok(outputs.iter().map(|o| out_dir.join(o)).collect())
}

fn run_train_evaluator(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let stage = Stage::TrainEvaluator;
    let seed = stage_seed(config.run.seed, stage);
    let hash = config.config_hash();
    require_stage(out_dir, Stage::SimulateClicks, stage, &hash)?;
    let train_path = require_artifact(out_dir, Stage::SimulateClicks, "ranked-train.json", stage)?;
    let logs_path = require_artifact(out_dir, Stage::SimulateClicks, "logs.json", stage)?;
    let dir = stage_dir(out_dir, stage);
    std::fs::create_dir_all(&dir)?;

    let ranked_train: Dataset<Real> = load_dataset(&train_path)?;
    let logs: Vec<ClickLog> = load_json(&logs_path)?;
    let d = ranked_train.feature_dim;

    let gat = if config.ablation.disable_gat {
        None
    } else {
        Some(config.gat_model(d)?)
    };
    let evaluator = config.evaluator_model(d)?;
    let params = crate::evaluator::train_evaluator(
        &evaluator,
        gat.as_ref(),
        &ranked_train,
        &logs,
        &config.evaluator.train_config(),
        seed,
    )?;
    let store = params.to_store(store_meta(stage, config, seed, d))?;
    store.save(&dir.join("evaluator.json"))?;

    let outputs = vec![rel(stage, "evaluator.json")];
    write_manifest(
        out_dir,
        stage,
        config,
        seed,
        vec![
            rel(Stage::SimulateClicks, "ranked-train.json"),
            rel(Stage::SimulateClicks, "logs.json"),
        ],
        &outputs,
    )?;
    Ok(outputs.iter().map(|o| out_dir.join(o)).collect())
}

fn run_train_reranker(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let stage = Stage::TrainReranker;
    let seed = stage_seed(config.run.seed, stage);
    let hash = config.config_hash();
    require_stage(out_dir, Stage::SimulateClicks, stage, &hash)?;
    require_stage(out_dir, Stage::TrainEvaluator, stage, &hash)?;
    let train_path = require_artifact(out_dir, Stage::SimulateClicks, "ranked-train.json", stage)?;
    let logs_path = require_artifact(out_dir, Stage::SimulateClicks, "logs.json", stage)?;
    let dir = stage_dir(out_dir, stage);
    std::fs::create_dir_all(&dir)?;

    let ranked_train: Dataset<Real> = load_dataset(&train_path)?;
    let logs: Vec<ClickLog> = load_json(&logs_path)?;
    let d = ranked_train.feature_dim;
    let models = load_evaluator_models(out_dir, config, d, stage)?;

    let reranker = config.reranker_model(d)?;
    let guidance = prepare_guidance(
        &models.evaluator,
        models.gat.as_ref(),
        &models.frozen,
        &ranked_train,
        &logs,
    )?;
    let params = train_reranker(
        &reranker,
        &models.evaluator,
        &models.frozen,
        &ranked_train,
        &logs,
        &guidance,
        &config.reranker.train_config(),
        seed,
    )?;
    let store = params.to_store(store_meta(stage, config, seed, d))?;
    store.save(&dir.join("reranker.json"))?;

    let outputs = vec![rel(stage, "reranker.json")];
    write_manifest(
        out_dir,
        stage,
        config,
        seed,
        vec![
            rel(Stage::SimulateClicks, "ranked-train.json"),
            rel(Stage::SimulateClicks, "logs.json"),
            rel(Stage::TrainEvaluator, "evaluator.json"),
        ],
        &outputs,
    )?;
    Ok(outputs.iter().map(|o| out_dir.join(o)).collect())
}

/// Display orders of the three evaluated variants on the test split.
struct TestRankings {
    ranked_test: Dataset<Real>,
    initial: Vec<Permutation>,
    greedy: Vec<Permutation>,
    reranked: Vec<Permutation>,
}

fn compute_test_rankings(
    config: &RunConfig,
    out_dir: &Path,
    requested: Stage,
) -> Result<TestRankings> {
    let hash = config.config_hash();
    require_stage(out_dir, Stage::SimulateClicks, requested, &hash)?;
    require_stage(out_dir, Stage::TrainEvaluator, requested, &hash)?;
    require_stage(out_dir, Stage::TrainReranker, requested, &hash)?;
    let test_path =
        require_artifact(out_dir, Stage::SimulateClicks, "ranked-test.json", requested)?;
    let reranker_path =
        require_artifact(out_dir, Stage::TrainReranker, "reranker.json", requested)?;

    let ranked_test: Dataset<Real> = load_dataset(&test_path)?;
    if ranked_test.is_empty() {
        return Err(CrumError::Domain(
            "the test split is empty; adjust [data] split or request count".into(),
        ));
    }
    let d = ranked_test.feature_dim;
    let models = load_evaluator_models(out_dir, config, d, requested)?;
    let reranker: Reranker = config.reranker_model(d)?;
    let reranker_store: ParameterStore<Real> = ParameterStore::load(&reranker_path, Some(&hash))?;
    let reranker_params = ParamSet::from_store(&reranker_store)?;

    let graphs = embed_all(models.gat.as_ref(), &models.frozen, &ranked_test)?;
    let initial: Vec<Permutation> = ranked_test
        .requests
        .iter()
        .map(|r| r.initial_positions.clone())
        .collect();
    let greedy: Vec<Permutation> = ranked_test
        .requests
        .iter()
        .zip(&graphs)
        .map(|(r, g)| greedy_rerank(&models.evaluator, &models.frozen, r, g.as_ref()))
        .collect::<Result<_>>()?;
    let reranked = rerank_dataset(&reranker, &reranker_params, &ranked_test, &graphs)?;
    Ok(TestRankings {
        ranked_test,
        initial,
        greedy,
        reranked,
    })
}

fn run_evaluate(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let stage = Stage::Evaluate;
    let seed = stage_seed(config.run.seed, stage);
    let rankings = compute_test_rankings(config, out_dir, stage)?;
    let dir = stage_dir(out_dir, stage);
    std::fs::create_dir_all(&dir)?;

    let rows: [(&str, &Vec<Permutation>); 3] = [
        ("initial", &rankings.initial),
        ("greedy", &rankings.greedy),
        (&reranked_row_name(&config.ablation), &rankings.reranked),
    ];
    let mut reports: Vec<MetricsReport> = Vec::new();
    for (name, perms) in rows {
        let report = compute_metrics_report(name, &rankings.ranked_test, perms, &config.click)?;
        report.validate()?;
        reports.push(report);
    }
    save_json(&dir.join("metrics.json"), &reports)?;

    let outputs = vec![rel(stage, "metrics.json")];
    write_manifest(
        out_dir,
        stage,
        config,
        seed,
        vec![
            rel(Stage::SimulateClicks, "ranked-test.json"),
            rel(Stage::TrainEvaluator, "evaluator.json"),
            rel(Stage::TrainReranker, "reranker.json"),
        ],
        &outputs,
    )?;
    Ok(outputs.iter().map(|o| out_dir.join(o)).collect())
}

/// Outcome of the exhaustive-search audit on short test lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckSummary {
    /// Test lists short enough to enumerate.
    pub requests_checked: usize,
    /// Test lists longer than the cap.
    pub requests_skipped: usize,
    pub mean_initial_utility: f64,
    pub mean_reranked_utility: f64,
    pub mean_best_utility: f64,
    /// Mean of reranked / best over checked lists with positive best.
    pub mean_fraction_of_best: f64,
    pub reranked_beats_initial: bool,
}

fn run_oracle_check(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let stage = Stage::OracleCheck;
    let seed = stage_seed(config.run.seed, stage);
    let rankings = compute_test_rankings(config, out_dir, stage)?;
    let dir = stage_dir(out_dir, stage);
    std::fs::create_dir_all(&dir)?;

    let cap = config.run.oracle_n_cap;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut sum_initial = 0.0;
    let mut sum_reranked = 0.0;
    let mut sum_best = 0.0;
    let mut fraction_sum = 0.0;
    let mut fraction_count = 0usize;
    for ((request, initial), reranked) in rankings
        .ranked_test
        .requests
        .iter()
        .zip(&rankings.initial)
        .zip(&rankings.reranked)
    {
        let n = request.len();
        if n > cap {
            skipped += 1;
            continue;
        }
        // Validate the inputs once so the closure below cannot fail.
        let initial_utility = oracle_list_utility(request, initial, config)?;
        let reranked_utility = oracle_list_utility(request, reranked, config)?;
        let oracle = enumerate_best_permutation(
            n,
            |perm| {
                oracle_list_utility(request, perm, config)
                    .expect("utility is defined on every permutation of a validated request")
            },
            cap,
        )?;
        checked += 1;
        sum_initial += initial_utility;
        sum_reranked += reranked_utility;
        sum_best += oracle.best_utility;
        if oracle.best_utility > 0.0 {
            fraction_sum += reranked_utility / oracle.best_utility;
            fraction_count += 1;
        }
    }

    let denom = checked.max(1) as f64;
    let summary = OracleCheckSummary {
        requests_checked: checked,
        requests_skipped: skipped,
        mean_initial_utility: sum_initial / denom,
        mean_reranked_utility: sum_reranked / denom,
        mean_best_utility: sum_best / denom,
        mean_fraction_of_best: fraction_sum / (fraction_count.max(1) as f64),
        reranked_beats_initial: sum_reranked >= sum_initial - 1e-9,
    };
    save_json(&dir.join("oracle.json"), &summary)?;

    let outputs = vec![rel(stage, "oracle.json")];
    write_manifest(
        out_dir,
        stage,
        config,
        seed,
        vec![
            rel(Stage::SimulateClicks, "ranked-test.json"),
            rel(Stage::TrainEvaluator, "evaluator.json"),
            rel(Stage::TrainReranker, "reranker.json"),
        ],
        &outputs,
    )?;
    Ok(outputs.iter().map(|o| out_dir.join(o)).collect())
}

/// Runs one stage, writing its artifacts and manifest under `out_dir`.
pub fn run_stage(stage: Stage, config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    match stage {
        Stage::Prepare => run_prepare(config, out_dir),
        Stage::TrainInitial => run_train_initial(config, out_dir),
        Stage::SimulateClicks => run_simulate_clicks(config, out_dir),
        Stage::TrainEvaluator => run_train_evaluator(config, out_dir),
        Stage::TrainReranker => run_train_reranker(config, out_dir),
        Stage::Evaluate => run_evaluate(config, out_dir),
        Stage::OracleCheck => run_oracle_check(config, out_dir),
    }
}

/// Runs every stage in order; returns all artifact paths.
pub fn run_all(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut outputs = Vec::new();
    for stage in Stage::ALL {
        outputs.extend(run_stage(stage, config, out_dir)?);
    }
    Ok(outputs)
}

/// Loads the evaluation rows a completed run produced.
pub fn load_metrics(out_dir: &Path) -> Result<Vec<MetricsReport>> {
    let path = artifact_path(out_dir, Stage::Evaluate, "metrics.json");
    if !path.exists() {
        return Err(CrumError::Dependency {
            requested: "report".to_string(),
            missing: Stage::Evaluate.name().to_string(),
            message: format!("no metrics at {}", path.display()),
        });
    }
    load_json(&path)
}

/// Loads the exhaustive-search audit a completed run produced.
pub fn load_oracle_summary(out_dir: &Path) -> Result<OracleCheckSummary> {
    let path = artifact_path(out_dir, Stage::OracleCheck, "oracle.json");
    if !path.exists() {
        return Err(CrumError::Dependency {
            requested: "report".to_string(),
            missing: Stage::OracleCheck.name().to_string(),
            message: format!("no oracle summary at {}", path.display()),
        });
    }
    load_json(&path)
}
