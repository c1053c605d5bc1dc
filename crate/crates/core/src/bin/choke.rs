use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use choke::certainty::MetricId;
use choke::config::EngineConfig;
use choke::pipeline::{Command, Pipeline, RunOptions};
use choke::record::ParseMode;
use choke::ChokeError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Validate,
    Label,
    Score,
    Threshold,
    Detect,
    Consistency,
    Mitigate,
    Report,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Validate => Command::Validate,
            Cmd::Label => Command::Label,
            Cmd::Score => Command::Score,
            Cmd::Threshold => Command::Threshold,
            Cmd::Detect => Command::Detect,
            Cmd::Consistency => Command::Consistency,
            Cmd::Mitigate => Command::Mitigate,
            Cmd::Report => Command::Report,
        }
    }
}

/// Detect and analyze high-certainty hallucinations in generation logs.
#[derive(Debug, Parser)]
#[command(name = "choke", version)]
struct Cli {
    /// Pipeline stage to run.
    #[arg(value_enum)]
    command: Cmd,

    /// Engine config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,

    /// JSONL generation logs; repeat for several corpora.
    #[arg(long = "input", num_args = 1..)]
    inputs: Vec<PathBuf>,

    /// Output directory for artifacts.
    #[arg(long = "out")]
    out: PathBuf,

    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Restrict to these metrics; repeatable.
    #[arg(long = "metric", value_parser = parse_metric)]
    metrics: Vec<MetricId>,

    /// Abort on the first bad input line (default).
    #[arg(long, conflicts_with = "lenient")]
    strict: bool,

    /// Skip bad input lines instead of aborting.
    #[arg(long)]
    lenient: bool,

    /// Run the consistency test on hallucinations shared by both settings.
    #[arg(long)]
    shared_only: bool,
}

fn parse_metric(s: &str) -> Result<MetricId, String> {
    s.parse().map_err(|e: ChokeError| e.to_string())
}

fn build(cli: &Cli) -> choke::Result<Pipeline> {
    let mut cfg = match &cli.config {
        Some(path) => EngineConfig::load(path)?,
        None => EngineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if !cli.metrics.is_empty() {
        cfg.metrics = cli.metrics.clone();
    }
    cfg.check()?;
    let opts = RunOptions {
        inputs: cli.inputs.clone(),
        out_dir: cli.out.clone(),
        parse_mode: if cli.lenient { ParseMode::Lenient } else { ParseMode::Strict },
        shared_only: cli.shared_only,
    };
    Ok(Pipeline::new(cfg, opts))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CHOKE_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    let result = build(&cli).and_then(|p| p.run(cli.command.into()));
    match result {
        Ok(summary) => {
            for a in &summary.artifacts {
                log::info!("wrote {}", a.display());
            }
            if summary.problems > 0 {
                eprintln!("choke: {} data problems found", summary.problems);
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e @ ChokeError::Config(_)) => {
            eprintln!("choke: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("choke: {e}");
            ExitCode::from(1)
        }
    }
}
