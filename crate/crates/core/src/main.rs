//! Thin command-line front end for the annotation pipeline. All logic lives
//! in the library; this binary only parses flags, loads the config, and maps
//! errors to exit codes (1 validation, 2 runtime).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use antisocial::analysis::ExportFormat;
use antisocial::pipeline::{self, AnalyzeKind, Command, PipelineConfig, RunOptions};

#[derive(Parser)]
#[command(
    name = "antisocial",
    about = "Annotate social-media corpora for antisocial behavior and export the analyses",
    version
)]
struct Cli {
    /// JSON pipeline configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Worker threads for per-record stages.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    workers: usize,

    /// Override the training seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Single-worker reproducible mode; two runs produce identical bytes.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Record cap for smoke runs.
    #[arg(long, global = true, value_name = "N")]
    limit: Option<usize>,

    /// Export format for analyze subcommands.
    #[arg(long, global = true, default_value = "csv", value_name = "csv|json|dot")]
    format: ExportFormat,

    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Commands>,
}

#[derive(Subcommand)]
enum Commands {
    /// Read raw post files into the filtered, sorted corpus store.
    Ingest,
    /// Merge term lists, apply the stoplist, and frequency-filter.
    BuildLexicon,
    /// Train the skip-gram embedding model over the corpus store.
    TrainEmbedding,
    /// Expand the basic lexicon by embedding similarity.
    ExpandLexicon,
    /// Label records against the basic+extended lexicons (resumable).
    Annotate,
    /// Score records with the configured toxicity scorer (resumable).
    Score,
    /// Fuse lexicon and toxicity labels into the annotation store.
    Combine,
    /// Produce analysis exports from the annotation store.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCommands,
    },
    /// Write the summary table (CSV and JSON).
    Report,
}

#[derive(Subcommand)]
enum AnalyzeCommands {
    /// High-frequency antisocial n-grams.
    Ngram {
        /// n-gram size, 1 through 4.
        #[arg(long, default_value_t = 1)]
        n: usize,
    },
    /// Neighbor graph around a target term.
    Graph {
        /// Target term (vocabulary form, e.g. "china").
        #[arg(long)]
        target: String,
    },
    /// Daily antisocial-proportion series with spike flags.
    Temporal,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();

    let config = match &cli.config {
        Some(path) => match PipelineConfig::load(path) {
            Ok(config) => config,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        },
        None => PipelineConfig::default(),
    };

    if cli.print_config {
        match serde_json::to_string_pretty(&config) {
            Ok(rendered) => {
                println!("{rendered}");
                return ExitCode::SUCCESS;
            }
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    }

    let Some(command) = &cli.command else {
        eprintln!("error: no subcommand given (try --help)");
        return ExitCode::from(1);
    };

    let command = match command {
        Commands::Ingest => Command::Ingest,
        Commands::BuildLexicon => Command::BuildLexicon,
        Commands::TrainEmbedding => Command::TrainEmbedding,
        Commands::ExpandLexicon => Command::ExpandLexicon,
        Commands::Annotate => Command::Annotate,
        Commands::Score => Command::Score,
        Commands::Combine => Command::Combine,
        Commands::Analyze { what } => Command::Analyze(match what {
            AnalyzeCommands::Ngram { n } => AnalyzeKind::Ngram { n: *n },
            AnalyzeCommands::Graph { target } => AnalyzeKind::Graph {
                target: target.clone(),
            },
            AnalyzeCommands::Temporal => AnalyzeKind::Temporal,
        }),
        Commands::Report => Command::Report,
    };

    let opts = RunOptions {
        workers: cli.workers,
        seed: cli.seed,
        deterministic: cli.deterministic,
        limit: cli.limit,
        format: cli.format,
    };

    match pipeline::run(&command, &config, &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
