mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::PipelineConfig;

/// Multi-reference citation text generation pipeline:
/// build -> split -> kg-merge -> prompts -> generate -> evaluate -> report.
#[derive(Debug, Parser)]
#[command(name = "citegen", version, propagate_version = true)]
struct Cli {
    /// TOML configuration file; command-line flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true, value_name = "FILE")]
    run_manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract multi-reference citation samples from a corpus.
    Build(commands::BuildArgs),
    /// Print the dataset statistics table.
    Stats(commands::StatsArgs),
    /// Seeded train/validation/test split.
    Split(commands::SplitArgs),
    /// Attach knowledge-graph triplets to dataset samples.
    KgMerge(commands::KgMergeArgs),
    /// Render fine-tuning or inference prompts.
    Prompts(commands::PromptsArgs),
    /// Query a generation endpoint for every prompt.
    Generate(commands::GenerateArgs),
    /// Score generations against reference citations.
    Evaluate(commands::EvaluateArgs),
    /// Quantization and optimizer numerics.
    Numerics(commands::NumericsArgs),
    /// Render evaluation reports as a results table.
    Report(commands::ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Build(_) => "build",
            Command::Stats(_) => "stats",
            Command::Split(_) => "split",
            Command::KgMerge(_) => "kg-merge",
            Command::Prompts(_) => "prompts",
            Command::Generate(_) => "generate",
            Command::Evaluate(_) => "evaluate",
            Command::Numerics(_) => "numerics",
            Command::Report(_) => "report",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<u8> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(commands::invalid)?,
        None => PipelineConfig::default(),
    };
    let name = cli.command.name();
    let mut log = match cli.command {
        Command::Build(a) => commands::build(a, &config)?,
        Command::Stats(a) => commands::stats(a, &config)?,
        Command::Split(a) => commands::split(a, &config)?,
        Command::KgMerge(a) => commands::kg_merge(a, &config)?,
        Command::Prompts(a) => commands::prompts(a, &config)?,
        Command::Generate(a) => commands::generate(a, &config)?,
        Command::Evaluate(a) => commands::evaluate(a, &config)?,
        Command::Numerics(a) => commands::numerics(a)?,
        Command::Report(a) => commands::report(a, &config)?,
    };
    if let Some(path) = &cli.config {
        log.inputs.insert(0, path.clone());
    }
    let code = log.exit_code;
    let manifest = cli
        .run_manifest
        .or_else(|| log.manifest_path.clone())
        .unwrap_or_else(|| PathBuf::from(format!("citegen-{name}.run.json")));
    log.write(name, &manifest)?;
    Ok(code)
}
