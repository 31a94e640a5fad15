use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "prescribe", version, about = "Prescriptive process monitoring with orthogonal random forests")]
pub struct Cli {
    /// Log filter, e.g. `info` or `prescribe=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and clean a raw event log.
    Clean(CleanArgs),
    /// Cut, label and encode prefixes into a dataset directory.
    Featurize(FeaturizeArgs),
    /// Fit the forest on the training split.
    Train(TrainArgs),
    /// Qini and net-value curves on the test split.
    Evaluate(EvaluateArgs),
    /// Select a treatment policy from evaluation curves.
    Policy(PolicyArgs),
    /// Bias frontier and covariate influence points.
    Sensitivity(SensitivityArgs),
    /// Generate a synthetic log with ground truth.
    Synth(SynthArgs),
    /// Run the recommendation service.
    Serve(ServeArgs),
    /// Feed a log through the recommendation engine.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CleanArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Column mapping, optionally with `clean.*` rule keys.
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FeaturizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Column mapping; defaults to `mapping.txt` beside the log.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub treatment: String,
    #[arg(long, default_value = "presence")]
    pub polarity: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of most recent values kept for last-state attributes.
    #[arg(long, default_value_t = 1)]
    pub last_state_window: usize,
    /// Features or source attributes excluded from the confounder set.
    #[arg(long, value_delimiter = ',')]
    pub w_exclude: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub trees: usize,
    #[arg(long, default_value_t = 20)]
    pub min_leaf: usize,
    #[arg(long, default_value_t = 30)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 0.4)]
    pub subsample: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    /// Tree groups used for the confidence interval.
    #[arg(long, default_value_t = 20)]
    pub bags: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train even if the positivity diagnostic fails.
    #[arg(long)]
    pub override_positivity: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Benefit-to-cost ratios for the net-value curves.
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.5,1.0")]
    pub vc: Vec<f64>,
    /// Grid step in percent.
    #[arg(long, default_value_t = 1.0)]
    pub grid_step: f64,
    /// Shuffles for the permutation test; 0 skips it.
    #[arg(long, default_value_t = 1000)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
#[command(group = clap::ArgGroup::new("rule").required(true).args(["auto", "target_gain"]))]
pub struct PolicyArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// Largest net gain.
    #[arg(long)]
    pub auto: bool,
    /// Smallest treated share whose net gain reaches this value.
    #[arg(long)]
    pub target_gain: Option<f64>,
    /// Value of one day of cycle-time reduction.
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    /// Cost of treating one case.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value = "cli")]
    pub author: String,
    #[arg(long, default_value = "")]
    pub reason: String,
    /// Defaults to `policy.json` in the report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Bias to guard against, in days, or `auto` for the mean estimate.
    #[arg(long, default_value = "auto")]
    pub bias: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Encoder file; defaults to the one saved beside the model.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Directory for the journal and audit log.
    #[arg(long)]
    pub state_dir: Option<PathBuf>,
    /// Events a case needs before it is scored.
    #[arg(long, default_value_t = 1)]
    pub min_prefix: usize,
    /// Activities that close a case.
    #[arg(long, value_delimiter = ',')]
    pub end_activities: Vec<String>,
    /// Evaluation report directory served at `/curves`.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Column mapping; defaults to `mapping.txt` beside the log.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Time compression factor; `inf` never sleeps.
    #[arg(long, default_value = "inf")]
    pub speed: f64,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Score every case instead of only the test split.
    #[arg(long)]
    pub all_cases: bool,
    /// Ground-truth table (or synth output directory) for the gain summary.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Write one JSON transition per line here.
    #[arg(long)]
    pub transitions: Option<PathBuf>,
    /// Serve the HTTP API on this port during and after the replay.
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}
