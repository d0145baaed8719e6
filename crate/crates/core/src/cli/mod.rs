//! Command-line front end.
//!
//! Option values resolve in three layers: explicit flags, then the matching
//! section of the `--config` JSON file, then built-in defaults. Usage and
//! validation problems exit with status 2, failures while doing the work
//! with status 1.

mod commands;
pub mod options;

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use options::*;

#[derive(Debug, Parser)]
#[command(name = "anisoseg", version, about = "Affinity-graph segmentation for anisotropic volumes")]
pub struct Cli {
    /// Worker threads for parallel stages; outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON run configuration; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate ground truth and noisy affinities.
    Synth(SynthOpts),
    /// MALIS loss and gradient of affinities against ground truth.
    MalisGrad(MalisGradOpts),
    /// Over-segment affinities with the thresholded watershed.
    Watershed(WatershedOpts),
    /// Absorb or drop segments below a size threshold.
    SizeFilter(SizeFilterOpts),
    /// Write the region adjacency graph as an edge CSV.
    BuildRag(BuildRagOpts),
    /// Fit a logistic boundary scorer against ground truth.
    Train(TrainOpts),
    /// Merge supervoxels best-first down to a threshold.
    Agglomerate(AgglomerateOpts),
    /// Replay a merge tree at a threshold.
    ApplyThreshold(ApplyThresholdOpts),
    /// Print split variation of information as vi_under,vi_over.
    Eval(EvalOpts),
    /// Split-VI over a threshold sweep of a merge tree, as CSV.
    Curve(CurveOpts),
    /// Tile a volume into overlapping blocks and write a manifest.
    Partition(PartitionOpts),
    /// Join block labelings listed in a manifest.
    Stitch(StitchOpts),
    /// Watershed, agglomeration and evaluation in one run.
    Pipeline(PipelineOpts),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut report = Vec::new();
    let result = execute(cli, &mut report);
    let _ = io::stdout().write_all(&report);
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let Some(path) = &cli.config else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))
}

/// Runs a parsed command, writing its report to `out`.
pub fn execute(cli: Cli, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let config = load_config(&cli)?;
    let threads = cli.threads.or(config.threads);
    if threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    pool.install(|| dispatch(cli.command, config, out))
}

fn dispatch(command: Command, c: RunConfig, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    use commands::*;
    match command {
        Command::Synth(o) => synth(o.overlay(c.synth.unwrap_or_default()), out),
        Command::MalisGrad(o) => malis_grad(o.overlay(c.malis_grad.unwrap_or_default()), out),
        Command::Watershed(o) => watershed(o.overlay(c.watershed.unwrap_or_default()), out),
        Command::SizeFilter(o) => size_filter(o.overlay(c.size_filter.unwrap_or_default()), out),
        Command::BuildRag(o) => build_rag(o.overlay(c.build_rag.unwrap_or_default()), out),
        Command::Train(o) => train(o.overlay(c.train.unwrap_or_default()), out),
        Command::Agglomerate(o) => agglomerate(o.overlay(c.agglomerate.unwrap_or_default()), out),
        Command::ApplyThreshold(o) => apply_threshold(o.overlay(c.apply_threshold.unwrap_or_default()), out),
        Command::Eval(o) => eval(o.overlay(c.eval.unwrap_or_default()), out),
        Command::Curve(o) => curve(o.overlay(c.curve.unwrap_or_default()), out),
        Command::Partition(o) => partition(o.overlay(c.partition.unwrap_or_default()), out),
        Command::Stitch(o) => stitch(o.overlay(c.stitch.unwrap_or_default()), out),
        Command::Pipeline(o) => pipeline(o.overlay(c.pipeline.unwrap_or_default()), out),
    }
}
