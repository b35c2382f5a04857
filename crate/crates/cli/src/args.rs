use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "skfcpd", version, about = "Online changepoint detection for temporally correlated series")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Flat `key = value` file with defaults for the subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the detector over each entity of a series CSV.
    Detect(DetectArgs),
    /// Draw replicates of a changepoint scenario, or a labelled cohort.
    Simulate(SimulateArgs),
    /// Fit range and nugget by maximum integrated likelihood.
    Estimate(EstimateArgs),
    /// Calibrate detectors to a target ARL and score them on a scenario.
    Evaluate(EvaluateArgs),
    /// Detection with screening and 7-day positive windows.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    /// matern12 (exponential) or matern52.
    #[arg(long, default_value = "matern12")]
    pub kernel: String,
    /// Range parameter; estimated from the training points when absent.
    #[arg(long)]
    pub range: Option<f64>,
    /// Nugget ratio; estimated from the training points when absent.
    #[arg(long)]
    pub nugget: Option<f64>,
}

#[derive(Debug, Args)]
pub struct HazardArgs {
    /// Constant hazard.
    #[arg(long, conflicts_with = "hazard_file")]
    pub hazard: Option<f64>,
    /// CSV `time,hazard` with a value for every monitored time.
    #[arg(long, value_name = "FILE")]
    pub hazard_file: Option<PathBuf>,
    /// Multiplier applied to the hazard file values.
    #[arg(long, default_value_t = 1.0)]
    pub hazard_scale: f64,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub hazard: HazardArgs,
    /// Leading points used for estimation; no detections are reported there.
    #[arg(long, default_value_t = 0)]
    pub train: usize,
    /// Keep every candidate after a detection.
    #[arg(long)]
    pub no_truncate: bool,
    #[arg(long, default_value_t = 2)]
    pub min_segment: usize,
    /// Values are probabilities; apply the logit first.
    #[arg(long)]
    pub logit: bool,
    /// Only process this entity.
    #[arg(long)]
    pub entity: Option<String>,
    /// Posterior heatmap CSV `step,candidate,weight` (one entity only).
    #[arg(long, value_name = "FILE")]
    pub heatmap: Option<PathBuf>,
    /// JSON results; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// mean-shift, variance-shift or range-shift.
    #[arg(long, default_value = "mean-shift")]
    pub scenario: String,
    #[arg(long, default_value = "matern52")]
    pub kernel: String,
    #[arg(long, default_value_t = 4.0)]
    pub range: f64,
    #[arg(long, default_value_t = 0.1)]
    pub nugget: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub pre_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub pre_var: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub post_mean: Option<f64>,
    #[arg(long)]
    pub post_var: Option<f64>,
    #[arg(long)]
    pub post_range: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Changepoint indices (1-based), comma separated.
    #[arg(long, value_delimiter = ',', default_value = "50")]
    pub cp: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Master seed; falls back to SKFCPD_SEED, then 1.
    #[arg(long, env = "SKFCPD_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Entities for `--scenario cohort`.
    #[arg(long, default_value_t = 200)]
    pub entities: usize,
    #[arg(long, default_value_t = 100)]
    pub days: usize,
    #[arg(long, default_value_t = 50)]
    pub train: usize,
    #[arg(long, default_value_t = 0.05)]
    pub positive_fraction: f64,
    /// Logit-scale level shift for cohort positives.
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    pub shift: f64,
    #[arg(long, default_value_t = 10)]
    pub shift_days: usize,
    /// Output directory for series.csv and truth.csv.
    #[arg(long, value_name = "DIR")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, default_value = "matern12")]
    pub kernel: String,
    /// Leading points of each entity to use; all when absent.
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub logit: bool,
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_delimiter = ',', default_value = "skf,bocpd,cusum")]
    pub detectors: Vec<String>,
    #[arg(long, default_value_t = 50.0)]
    pub target_arl: f64,
    /// Change-free replicates per calibration step.
    #[arg(long, default_value_t = 200)]
    pub cal_reps: usize,
    /// Training and warmup length; defaults to the first changepoint minus one.
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Give the detector the simulation kernel instead of estimating it.
    #[arg(long)]
    pub known_kernel: bool,
    /// Metric table, CSV or JSON by extension; stdout CSV when absent.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[command(flatten)]
    pub hazard: HazardArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Training points per entity.
    #[arg(long, default_value_t = 50)]
    pub train: usize,
    /// Days after a changepoint during which it may still be screened.
    #[arg(long, default_value_t = 7.0)]
    pub recency: f64,
    /// Mark a window for every detection without testing.
    #[arg(long)]
    pub no_screen: bool,
    /// Values are already on the real line.
    #[arg(long)]
    pub raw: bool,
    /// Also report the best fixed-threshold classifier.
    #[arg(long)]
    pub threshold_baseline: bool,
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}
