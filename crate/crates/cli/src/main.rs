//! `exbl`: the exemplary explanation-based learning pipeline.
//!
//! Every subcommand prints its result as JSON on stdout. Diagnostics go to
//! stderr, and failures end with one JSON error line on stderr and exit code
//! 2 (bad input) or 3 (runtime failure).

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use error::{CliError, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "exbl", version, about = "Exemplary explanation-based learning pipeline")]
struct Cli {
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic decoy dataset.
    GenData(GenData),
    /// Build train/val/test bundles from a radiography image folder.
    Prepare(Prepare),
    /// Train the unrefined classifier with cross-entropy.
    Train(Train),
    /// Choose the good and bad exemplars, automatically or by id.
    SelectExemplars(SelectExemplars),
    /// Refine a trained run with the explanation loss.
    Refine(Refine),
    /// Evaluate a run on one split.
    Evaluate(Evaluate),
    /// Compare two runs and render explanation panels.
    Compare(Compare),
    /// Write the cam and overlay of one sample.
    Explain(Explain),
    /// Start the HTTP review service.
    Serve(Serve),
}

#[derive(Debug, Args)]
pub struct GenData {
    /// Decoy specification (TOML or JSON); defaults apply to missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the generator seed from --spec.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct Prepare {
    /// Folder with `<class>/images/*.png` and `<class>/masks/*.png`.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 800)]
    pub per_class_train: usize,
    /// Validation images over all classes.
    #[arg(long, default_value_t = 1200)]
    pub val: usize,
    /// Test images over all classes.
    #[arg(long, default_value_t = 800)]
    pub test: usize,
    #[arg(long, default_value_t = 224)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep images without a mask instead of failing.
    #[arg(long)]
    pub allow_unmasked: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct Train {
    #[arg(long)]
    pub data: PathBuf,
    /// Run configuration (flat TOML); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SelectExemplars {
    #[arg(long)]
    pub run: PathBuf,
    /// Dataset directory; defaults to the one the run was trained on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long, requires = "bad")]
    pub good: Option<String>,
    #[arg(long, requires = "good")]
    pub bad: Option<String>,
    /// Output directory; defaults to `<run>/exemplars`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace a different pair already stored in the output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct Refine {
    #[arg(long)]
    pub run: PathBuf,
    /// Exemplar directory; defaults to `<run>/exemplars`.
    #[arg(long)]
    pub exemplars: Option<PathBuf>,
    /// Run configuration; defaults to the base run's configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct Evaluate {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args)]
pub struct Compare {
    /// Reference (unrefined) run.
    #[arg(long)]
    pub a: PathBuf,
    /// Refined run.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Number of samples rendered as panels.
    #[arg(long, default_value_t = 4)]
    pub panels: usize,
    /// Output directory; defaults to `<b>/compare_<split>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExplainClass {
    Truth,
    Predicted,
}

#[derive(Debug, Args)]
pub struct Explain {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub sample: String,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Split holding the sample; train, val and test are searched when omitted.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, value_enum, default_value_t = ExplainClass::Truth)]
    pub class: ExplainClass,
    /// Output directory; defaults to `<run>/explain`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Serve {
    #[arg(long, env = "EXBL_RUNS_DIR", default_value = "runs")]
    pub runs: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, env = "EXBL_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Built review UI to serve at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Allowed browser origin; any origin when omitted.
    #[arg(long)]
    pub cors_origin: Option<String>,
}

fn init_logging(quiet: bool) {
    let default = if quiet { "warn" } else { "info" };
    let filter = tracing_subscriber::EnvFilter::try_from_env("EXBL_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(filter)
        .with_target(false)
        .init();
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Prepare(a) => commands::prepare(a),
        Command::Train(a) => commands::train(a),
        Command::SelectExemplars(a) => commands::select_exemplars(a),
        Command::Refine(a) => commands::refine(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare(a),
        Command::Explain(a) => commands::explain(a),
        Command::Serve(a) => commands::serve(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", CliError::validation("usage", first).to_line());
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    init_logging(cli.quiet);
    match run(cli) {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            use std::io::Write;
            let text = serde_json::to_string_pretty(&v).expect("serializable payload");
            // A closed reader (e.g. `| head`) is not a failure of the command.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.code as u8)
        }
    }
}
