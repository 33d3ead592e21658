mod commands;
mod data;
mod exit;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Segmentation-derived VQA datasets, shape descriptors and MoE fusion
/// checks for multiparametric brain MRI.
///
/// Exit codes: 0 success, 2 configuration or path error, 3 data error,
/// 4 numeric failure. Every command prints a reproducibility stanza (version,
/// command, seed, configuration hash) to stderr and writes a
/// `*.manifest.json` beside its outputs.
#[derive(Debug, Parser)]
#[command(name = "mpvqa", version)]
struct Cli {
    /// Worker threads; outputs do not depend on this value.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic data directory: studies, atlas, region map and label names.
    Fixture(FixtureArgs),
    /// Compute task descriptors for every (study, label) pair.
    Describe(DescribeArgs),
    /// Sample six question-answer records per (study, label).
    Generate(GenerateArgs),
    /// Label-frequency table over generated records.
    Stats(StatsArgs),
    /// Study-level 80/10/10 split of generated records.
    Split(SplitArgs),
    /// Score predictions against gold records.
    Eval(EvalArgs),
    /// Finite-difference gradient check of the fusion block and heads.
    MoeCheck(MoeCheckArgs),
    /// Train the fusion block on the bundled separable fixture.
    MoeDemo(MoeDemoArgs),
    /// Correlation heatmap of high-level routing weights across template prompts.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub studies: usize,
    #[arg(long)]
    pub seed: u64,
}

/// Inputs shared by `describe` and `generate` when working from volumes.
#[derive(Debug, Args, Serialize, Clone)]
pub struct VolumeInputs {
    /// Directory with one subdirectory per study.
    #[arg(long, env = "MPVQA_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// `value = name` lines naming the labels to describe.
    #[arg(long)]
    pub labels_config: Option<PathBuf>,
    /// Atlas label volume (NIfTI).
    #[arg(long)]
    pub atlas: Option<PathBuf>,
    /// `atlas value = region` lines.
    #[arg(long)]
    pub region_map: Option<PathBuf>,
    /// Minimum overlap, in voxels, for a region to be reported.
    #[arg(long)]
    pub min_overlap: Option<usize>,
    /// Working grid spacing in mm: one value or `x,y,z`.
    #[arg(long, default_value = "1")]
    pub spacing: String,
}

#[derive(Debug, Args, Serialize)]
pub struct DescribeArgs {
    #[command(flatten)]
    pub inputs: VolumeInputs,
    /// Descriptor JSONL output.
    #[arg(long)]
    pub out: PathBuf,
    /// Failure report; defaults to `<out>.failures.json`.
    #[arg(long)]
    pub failures: Option<PathBuf>,
    /// Directory for one OFF surface mesh per described label.
    #[arg(long)]
    pub mesh_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub inputs: VolumeInputs,
    /// Precomputed descriptor JSONL instead of volumes.
    #[arg(long, conflicts_with_all = ["data_dir", "stub_studies"])]
    pub descriptors: Option<PathBuf>,
    /// Metadata-only synthetic descriptors for this many studies.
    #[arg(long)]
    pub stub_studies: Option<usize>,
    /// Comma-separated label names for stub descriptors.
    #[arg(long, default_value = "ET,NETC,SNFH,RC")]
    pub stub_labels: String,
    /// Template bank file; the bundled bank when absent.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    /// Leave the split field empty.
    #[arg(long)]
    pub no_split: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Frequency table CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Monte-Carlo trials for the protocol-predicted Unspecified rate; 0 skips it.
    #[arg(long, default_value_t = 0)]
    pub predict_trials: usize,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Gold dataset records (JSONL).
    #[arg(long)]
    pub gold: PathBuf,
    /// Prediction records (JSONL).
    #[arg(long)]
    pub pred: PathBuf,
    /// Second annotator's predictions; adds Cohen's kappa against `--pred`.
    #[arg(long)]
    pub kappa: Option<PathBuf>,
    #[arg(long, default_value_t = mpvqa::eval::DEFAULT_RESAMPLES)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metrics report (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MoeShape {
    /// High-level experts N.
    #[arg(long, default_value_t = 16)]
    pub experts: usize,
    /// Modalities N_m.
    #[arg(long, default_value_t = 4)]
    pub modalities: usize,
    /// Image embedding width d_I.
    #[arg(long, default_value_t = 32)]
    pub d_i: usize,
    /// Language embedding width d_T.
    #[arg(long, default_value_t = 32)]
    pub d_t: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct MoeCheckArgs {
    #[command(flatten)]
    pub shape: MoeShape,
    /// Image tokens per modality N_I.
    #[arg(long, default_value_t = 2)]
    pub tokens: usize,
    #[arg(long, default_value_t = 8)]
    pub vocab: usize,
    /// Entries probed per tensor, evenly spaced; 0 probes every entry.
    #[arg(long, default_value_t = 32)]
    pub per_group: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional JSON copy of the error table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MoeDemoArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    /// Stop once the training loss falls below this value.
    #[arg(long, default_value_t = 0.05)]
    pub target_loss: f64,
    /// Trailing window for the smoothed loss column.
    #[arg(long, default_value_t = 50)]
    pub smooth: usize,
    /// Loss curve CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Save the trained model here.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub shape: MoeShape,
    /// Comma-separated label names substituted into the templates.
    #[arg(long, default_value = "Enhancing Tissue,Non-Enhancing Tumor Core,Surrounding FLAIR Hyperintensity,Resection Cavity")]
    pub labels: String,
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Route with a saved model instead of a freshly initialised one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(exit::usage("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Fixture(a) => commands::fixture(&a),
        Command::Describe(a) => commands::describe(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::Split(a) => commands::split(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::MoeCheck(a) => commands::moe_check(&a),
        Command::MoeDemo(a) => commands::moe_demo(&a),
        Command::Heatmap(a) => commands::heatmap(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::classify(&e).code())
        }
    }
}
