mod commands;
mod render;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use curvescan::backend::{ENV_BACKEND_URL, ENV_CACHE_DIR};

use settings::CliError;

/// Zero-shot machine-generated text detection by perturbation discrepancy.
#[derive(Debug, Parser)]
#[command(name = "curvescan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score one passage and decide whether it looks model-generated.
    Detect(DetectArgs),
    /// Build a human/machine corpus and report per-method AUROC.
    Evaluate(EvaluateArgs),
    /// DetectGPT AUROC as a function of the number of perturbations.
    SweepK(SweepKArgs),
    /// Detection AUROC after replacing a fraction of each machine passage.
    SweepParaphrase(SweepParaphraseArgs),
    /// AUROC for every (source model, scoring model) combination.
    CrossMatrix(CrossMatrixArgs),
    /// Check the finite-difference Hutchinson estimator on a known field.
    CurvatureCheck(CurvatureArgs),
    /// Full pipeline on twin Markov chains, in process.
    SynthBench(SynthBenchArgs),
    /// Serve the synthetic chains over the HTTP wire protocol.
    ServeSynthetic(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// `synthetic`, `synthetic:<seed>`, or the base URL of an HTTP backend.
    #[arg(long, env = ENV_BACKEND_URL)]
    pub backend_url: String,
    /// Directory for the persistent response cache.
    #[arg(long, env = ENV_CACHE_DIR)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 8)]
    pub max_in_flight: usize,
    #[arg(long, default_value_t = 3)]
    pub retry_budget: usize,
}

/// Experiment settings. Unset flags fall back to the `--config` file, then
/// to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// JSON file with `ExperimentConfig` fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub source_model: Option<String>,
    #[arg(long)]
    pub scorer_model: Option<String>,
    #[arg(long)]
    pub filler_model: Option<String>,
    #[arg(long)]
    pub n_examples: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub mask_rate: Option<f64>,
    #[arg(long)]
    pub span_length: Option<usize>,
    /// Comma-separated list of logp, rank, logrank, entropy, detectgpt, or `all`.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_words: Option<usize>,
    #[arg(long)]
    pub n_prompt_tokens: Option<usize>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long, conflicts_with_all = ["top_p", "temperature"])]
    pub top_k: Option<usize>,
    #[arg(long, conflicts_with = "temperature")]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Keep human and machine passages at their own lengths.
    #[arg(long)]
    pub no_equalize: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    /// JSONL file of `{"id": ..., "text": ...}` human passages.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Print a machine-readable summary instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Passage file; `-` or omitted reads stdin.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Scoring model; the filler is set with `--filler-model`.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub filler_model: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub mask_rate: Option<f64>,
    #[arg(long)]
    pub span_length: Option<usize>,
    #[arg(long, default_value_t = curvescan::detector::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also report the four baseline scores.
    #[arg(long)]
    pub all_methods: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Also write AUROC within three length bins.
    #[arg(long)]
    pub length_bins: bool,
}

#[derive(Debug, Args)]
pub struct SweepKArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 5, 10, 25, 50, 100])]
    pub k_values: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct SweepParaphraseArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])]
    pub r_values: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct CrossMatrixArgs {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub sources: Vec<String>,
    /// Defaults to the source list.
    #[arg(long, value_delimiter = ',')]
    pub scorers: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CurvatureArgs {
    /// `quadratic` (diag(1..dim)) or `sinusoid`.
    #[arg(long)]
    pub field: String,
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
    #[arg(long, default_value_t = 10_000)]
    pub probes: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthBenchArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub n_pairs: usize,
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    #[arg(long, default_value_t = 80)]
    pub length: usize,
    /// Write result files here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, env = ENV_CACHE_DIR)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Seed of the twin chains.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Detect(a) => commands::detect(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::SweepK(a) => commands::sweep_k(a),
        Command::SweepParaphrase(a) => commands::sweep_paraphrase(a),
        Command::CrossMatrix(a) => commands::cross_matrix(a),
        Command::CurvatureCheck(a) => commands::curvature_check(a),
        Command::SynthBench(a) => commands::synth_bench(a),
        Command::ServeSynthetic(a) => commands::serve_synthetic(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return if usage_error {
                ExitCode::from(settings::EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
