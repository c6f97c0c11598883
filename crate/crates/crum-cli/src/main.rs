//! Command-line driver: one subcommand per pipeline stage, plus `run-all`
//! and `report`. Success prints the written artifact paths; failure prints
//! one JSON object `{"category", "message"}` to stderr and exits with the
//! error's stable nonzero code.

use clap::{Args, Parser, Subcommand};
use crum_core::config::RunConfig;
use crum_core::pipeline::{self, Stage};
use crum_core::report::{emit_report, MetricSweep};
use crum_core::Result;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "crum",
    version,
    about = "Counterfactual utility reranking: simulate clicks, train the evaluator and reranker, evaluate, report"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override; takes precedence over the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Root directory for artifacts and manifests.
    #[arg(long, default_value = "runs/default")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Load or generate the dataset, binarize labels, write the split.
    Prepare(RunArgs),
    /// Train the first-pass pointwise scorer.
    TrainInitial(RunArgs),
    /// Apply the initial ranker and sample clicks for the training split.
    SimulateClicks(RunArgs),
    /// Train the context-aware click evaluator on the logged lists.
    TrainEvaluator(RunArgs),
    /// Train the pairwise reranker under the frozen evaluator.
    TrainReranker(RunArgs),
    /// Score initial, greedy, and reranked lists on the test split.
    Evaluate(RunArgs),
    /// Audit short test lists against the exhaustive permutation optimum.
    OracleCheck(RunArgs),
    /// Run every stage in order.
    RunAll(RunArgs),
    /// Emit the comparison table and charts from a completed run.
    Report {
        /// Root directory of the completed run.
        #[arg(long, default_value = "runs/default")]
        out_dir: PathBuf,
        /// Where the report files go; defaults to <out-dir>/report.
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn run_stage_command(stage: Stage, args: &RunArgs) -> Result<()> {
    let config = load_config(args)?;
    let paths = pipeline::run_stage(stage, &config, &args.out_dir)?;
    for path in paths {
        println!("{}", path.display());
    }
    Ok(())
}

fn run_all_command(args: &RunArgs) -> Result<()> {
    let config = load_config(args)?;
    let paths = pipeline::run_all(&config, &args.out_dir)?;
    for path in paths {
        println!("{}", path.display());
    }
    Ok(())
}

fn report_command(out_dir: &PathBuf, report_dir: Option<PathBuf>) -> Result<()> {
    let rows = pipeline::load_metrics(out_dir)?;
    let mut by_ctr = rows.clone();
    by_ctr.sort_by(|a, b| a.ctr.total_cmp(&b.ctr));
    // One chart per metric across the run's variants, weakest to strongest.
    let sweep = MetricSweep {
        name: "variants".to_string(),
        x_label: "ranking variant".to_string(),
        x_ticks: by_ctr.iter().map(|m| m.variant.clone()).collect(),
        series: vec![("this run".to_string(), by_ctr)],
    };
    let dir = report_dir.unwrap_or_else(|| out_dir.join("report"));
    let files = emit_report(&rows, &[sweep], &dir)?;
    println!("{}", files.table_csv.display());
    println!("{}", files.table_json.display());
    for plot in files.plots {
        println!("{}", plot.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare(args) => run_stage_command(Stage::Prepare, args),
        Command::TrainInitial(args) => run_stage_command(Stage::TrainInitial, args),
        Command::SimulateClicks(args) => run_stage_command(Stage::SimulateClicks, args),
        Command::TrainEvaluator(args) => run_stage_command(Stage::TrainEvaluator, args),
        Command::TrainReranker(args) => run_stage_command(Stage::TrainReranker, args),
        Command::Evaluate(args) => run_stage_command(Stage::Evaluate, args),
        Command::OracleCheck(args) => run_stage_command(Stage::OracleCheck, args),
        Command::RunAll(args) => run_all_command(args),
        Command::Report {
            out_dir,
            report_dir,
        } => report_command(out_dir, report_dir.clone()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            let payload = serde_json::json!({
                "category": error.category(),
                "message": error.to_string(),
            });
            eprintln!("{payload}");
            ExitCode::from(error.exit_code().clamp(1, 255) as u8)
        }
    }
}
