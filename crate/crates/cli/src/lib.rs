//! The `bofex` command line: synthetic data, codebooks, models, alarms,
//! explanations, cross-validated evaluation and HTML reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{Ctx, Layout};
use crate::config::FileConfig;
use crate::error::{CliError, CliResult, EXIT_INTERNAL, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "bofex", version, about = "Interpretable drilling accident alarms")]
pub struct Cli {
    /// TOML file with one table per command; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding default artifact paths.
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic wells, accidents and expert references.
    Gen(GenArgs),
    /// Fit per-channel k-means codebooks.
    TrainCodebooks(TrainCodebooksArgs),
    /// Extract labeled bag-of-features training windows.
    Featurize(FeaturizeArgs),
    /// Train one boosted-tree alarm model per accident type.
    TrainGbm(TrainGbmArgs),
    /// Train one attention model per accident type.
    TrainFcmh(TrainFcmhArgs),
    /// Score every moment of every well.
    Predict(PredictArgs),
    /// Explain alarms with Shapley values and highlighted intervals.
    Explain(ExplainArgs),
    /// Cross-validated alarm and explanation metrics.
    Evaluate(EvaluateArgs),
    /// t-SNE consistency view of one explained accident.
    Tsne(TsneArgs),
    /// Render the HTML report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub wells: Option<usize>,
    #[arg(long)]
    pub hours: Option<f64>,
    /// Output data directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainCodebooksArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub codebooks: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainGbmArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Model directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Accident types to train; all labeled types by default.
    #[arg(long)]
    pub kind: Vec<String>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainFcmhArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub kind: Vec<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub codebooks: Option<PathBuf>,
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub codebooks: Option<PathBuf>,
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Alarm threshold for every type instead of fitted ones.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub m_percent: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TsneArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub evaluation: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Index of the explained case to embed.
    #[arg(long)]
    pub case: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub evaluation: Option<PathBuf>,
    #[arg(long)]
    pub tsne: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    let root = cli
        .workdir
        .clone()
        .or_else(|| cfg.workdir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = Ctx {
        cfg,
        layout: Layout { root },
    };
    match &cli.command {
        Command::Gen(a) => commands::gen(&ctx, a),
        Command::TrainCodebooks(a) => commands::train_codebooks_cmd(&ctx, a),
        Command::Featurize(a) => commands::featurize_cmd(&ctx, a),
        Command::TrainGbm(a) => commands::train_gbm_cmd(&ctx, a),
        Command::TrainFcmh(a) => commands::train_fcmh_cmd(&ctx, a),
        Command::Predict(a) => commands::predict_cmd(&ctx, a),
        Command::Explain(a) => commands::explain_cmd(&ctx, a),
        Command::Evaluate(a) => commands::evaluate_cmd(&ctx, a),
        Command::Tsne(a) => commands::tsne_cmd(&ctx, a),
        Command::Report(a) => commands::report_cmd(&ctx, a),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = std::panic::catch_unwind(|| execute(&cli))
        .unwrap_or_else(|_| Err(CliError::internal("internal error (panic)")));
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            debug_assert!(e.code != EXIT_OK);
            if e.code == EXIT_INTERNAL {
                eprintln!("this is a bug; please report it");
            }
            e.code
        }
    }
}
