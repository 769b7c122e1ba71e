use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

use error::CliError;

#[derive(Parser)]
#[command(
    name = "medrag",
    version,
    about = "Retrieval-augmented multiple-choice QA toolkit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args, Clone, Default)]
pub struct Common {
    /// Run-config JSON file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Validate and print the plan without calling any provider.
    #[arg(long)]
    pub dry_run: bool,
    /// `wall` or `virtual` (overrides `timing`).
    #[arg(long)]
    pub timing: Option<String>,
    /// Concurrent items toward providers (overrides `max_in_flight`).
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

/// Single-configuration selection and retrieval overrides.
#[derive(Args, Clone, Default)]
pub struct Select {
    #[arg(long)]
    pub index: Option<String>,
    #[arg(long)]
    pub llm: Option<String>,
    /// `zero_shot` or `cot`.
    #[arg(long)]
    pub prompt_mode: Option<String>,
    /// Skip retrieval entirely.
    #[arg(long)]
    pub no_rag: bool,
    /// `dense` or `hybrid`.
    #[arg(long)]
    pub retrieval_mode: Option<String>,
    /// `on` or `off`.
    #[arg(long)]
    pub coarse: Option<String>,
    #[arg(long)]
    pub reranker: Option<String>,
    #[arg(long)]
    pub reformulation: Option<String>,
    #[arg(long)]
    pub k_sections: Option<usize>,
    #[arg(long)]
    pub n_candidates: Option<usize>,
    #[arg(long)]
    pub top_passages: Option<usize>,
    #[arg(long)]
    pub context_token_budget: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, segment and chunk the corpus into `<out>/chunks.jsonl`.
    Ingest {
        #[command(flatten)]
        common: Common,
    },
    /// Build dense, sparse and section indexes for each configured embedder.
    Index {
        #[command(flatten)]
        common: Common,
        /// Only these indexes (default: all).
        #[arg(long = "index")]
        only: Vec<String>,
    },
    /// Run retrieval for one question and print evidence and trace as JSON.
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: Select,
        #[arg(long)]
        question: String,
    },
    /// Answer one question end to end.
    Ask {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: Select,
        /// Question from the dataset.
        #[arg(long, conflicts_with = "question")]
        qid: Option<String>,
        #[arg(long)]
        question: Option<String>,
        /// Option as `A=text`; repeat per option.
        #[arg(long = "option")]
        options: Vec<String>,
    },
    /// Evaluate one configuration over the dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        select: Select,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run the configured experiment grid.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Simulate a kill after this many newly evaluated items.
        #[arg(long, hide = true)]
        stop_after_items: Option<usize>,
    },
    /// Regenerate report tables from persisted results only.
    Report {
        #[command(flatten)]
        common: Common,
        /// Results CSV (default: `<out>/results.csv`).
        #[arg(long)]
        results: Option<PathBuf>,
        /// Directory holding `runs/` item logs (default: the output directory).
        #[arg(long)]
        runs: Option<PathBuf>,
        /// Items per run, for CIs and throughput when no item logs exist.
        #[arg(long)]
        n_items: Option<usize>,
        /// `wald` or `wilson`.
        #[arg(long)]
        ci: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let result = match cli.cmd {
        Command::Ingest { common } => commands::ingest(&common),
        Command::Index { common, only } => commands::index(&common, &only),
        Command::Retrieve {
            common,
            select,
            question,
        } => commands::retrieve(&common, &select, &question),
        Command::Ask {
            common,
            select,
            qid,
            question,
            options,
        } => commands::ask(
            &common,
            &select,
            qid.as_deref(),
            question.as_deref(),
            &options,
        ),
        Command::Eval {
            common,
            select,
            dataset,
        } => commands::eval(&common, &select, dataset),
        Command::Grid {
            common,
            dataset,
            stop_after_items,
        } => commands::grid(&common, dataset, stop_after_items),
        Command::Report {
            common,
            results,
            runs,
            n_items,
            ci,
        } => commands::report(&common, results, runs, n_items, ci.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &CliError) -> ExitCode {
    eprintln!("{e}");
    ExitCode::from(e.kind.code() as u8)
}
