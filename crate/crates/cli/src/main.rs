mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use assertlora::Error;

/// Exit 1 for bad invocations, 2 for unusable inputs, 3 for broken internal
/// invariants.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Invariant(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Invariant(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::UnknownGroup(_) | Error::UnknownModule(_) => CliError::Usage(msg),
            Error::Shape(_) | Error::Invariant(_) => CliError::Invariant(msg),
            _ => CliError::Data(msg),
        }
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Parser)]
#[command(name = "assertlora", version, about = "Train and evaluate LoRA adapters that write SystemVerilog assertions")]
struct Cli {
    /// Flat TOML file whose keys mirror the long flag names.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic Verilog/SVA corpus.
    MakeData(MakeDataArgs),
    /// Fine-tune adapters on a corpus.
    Train(TrainArgs),
    /// Write an assertion for one Verilog module.
    Generate(GenerateArgs),
    /// Score a checkpoint on one split of a corpus.
    Eval(EvalArgs),
    /// Count trainable adapter parameters.
    CountParams(CountArgs),
    /// Run the rank × alpha × module-group grid.
    Ablate(AblateArgs),
}

#[derive(Args)]
pub struct MakeDataArgs {
    /// Number of pairs.
    #[arg(long)]
    pub n: Option<usize>,
    /// Generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus JSON to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Corpus JSON written by make-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Adapter rank [default: 16].
    #[arg(long)]
    pub r: Option<usize>,
    /// Adapter scaling numerator [default: 16].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// attention, ffn or all.
    #[arg(long)]
    pub modules: Option<String>,
    /// [default: 2000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Constant AdamW learning rate [default: 2e-4].
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 8]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Adapter-path dropout [default: 0].
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Derives the split, init and data-order seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GenerateArgs {
    /// adapter.ckpt written by train.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Verilog file, or `-` for stdin.
    #[arg(long)]
    pub input: Option<String>,
    /// Generation budget in characters [default: 256].
    #[arg(long)]
    pub max_new: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// adapter.ckpt written by train.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Corpus JSON written by make-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// train, validation or test.
    #[arg(long)]
    pub split: Option<String>,
    /// Must match the training seed to reproduce its split.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generation budget in characters [default: 256].
    #[arg(long)]
    pub max_new: Option<usize>,
    /// Score the references against themselves; no checkpoint needed.
    #[arg(long)]
    pub oracle: bool,
    /// Directory for metrics.csv, predictions.json and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CountArgs {
    /// llama3-8b or toy.
    #[arg(long)]
    pub geometry: Option<String>,
    /// [default: 16]
    #[arg(long)]
    pub r: Option<usize>,
    /// attention, ffn or all [default: all].
    #[arg(long)]
    pub modules: Option<String>,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Corpus JSON written by make-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Only `default` (r 8/16/32 × alpha 8/16/32 × attention/ffn/all).
    #[arg(long)]
    pub grid: Option<String>,
    /// Override the rank axis, e.g. `8,16`.
    #[arg(long, value_delimiter = ',')]
    pub ranks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub groups: Option<Vec<String>>,
    /// Training steps per cell [default: 200].
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Shared by every cell.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_new: Option<usize>,
    /// Directory for ablation.csv and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();

    let result = config::Config::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::MakeData(a) => commands::make_data(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Generate(a) => commands::generate(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::CountParams(a) => commands::count_params(&cfg, a),
        Command::Ablate(a) => commands::ablate(&cfg, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
