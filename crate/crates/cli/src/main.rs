mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{usage, Settings, UsageError};

const EXIT_FAILURE: u8 = 2;
const EXIT_USAGE: u8 = 64;

/// Scientific keyphrase tagging with graph-based semi-supervised training.
#[derive(Parser, Debug)]
#[command(name = "keyphrase", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Settings file of `key = value` lines; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed of the single random generator [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// error, warn, info, debug or trace [default: info]
    #[arg(long, global = true)]
    log_level: Option<String>,
    /// Directory receiving all artifacts [default: .]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a directory of BRAT `.txt`/`.ann` pairs to one column file
    Convert {
        brat_dir: PathBuf,
        output: PathBuf,
    },
    /// Supervised training; writes model.bin and metrics.tsv
    Train(commands::TrainArgs),
    /// Semi-supervised training; writes model.bin, graph.bin, rounds.tsv and metrics.tsv
    SslTrain(commands::SslArgs),
    /// Viterbi-decode a corpus to a column file
    Tag(commands::TagArgs),
    /// Score predictions against gold; writes metrics.tsv and metrics.txt
    Eval(commands::EvalArgs),
    /// Build the token graph and its CRF marginals; writes graph.bin
    BuildGraph(commands::GraphArgs),
    /// Propagate label distributions over a graph; writes graph.bin
    Propagate(commands::PropagateArgs),
}

pub struct Context {
    pub seed: u64,
    pub out: PathBuf,
}

fn init(global: Global, settings: &mut Settings) -> Result<Context> {
    let level = settings.get_or("log-level", global.log_level, "info".to_string())?;
    let filter: log::LevelFilter = level.parse().map_err(|_| usage(format!("unknown log level `{level}`")))?;
    env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp(None)
        .try_init()
        .ok();
    if let Some(n) = settings.get::<usize>("threads", global.threads)? {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let seed = settings.get_or("seed", global.seed, 0)?;
    let out = settings.get_or("out", global.out, PathBuf::from("."))?;
    Ok(Context { seed, out })
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = match &cli.global.config {
        Some(path) => Settings::load(path).map_err(|e| match e.downcast::<UsageError>() {
            Ok(u) => u.into(),
            Err(e) => usage(format!("{e:#}")),
        })?,
        None => Settings::default(),
    };
    let ctx = init(cli.global, &mut settings)?;
    match cli.command {
        Command::Convert { brat_dir, output } => {
            settings.finish()?;
            commands::convert(&brat_dir, &output)
        }
        Command::Train(args) => commands::train(&ctx, args, settings),
        Command::SslTrain(args) => commands::ssl_train(&ctx, args, settings),
        Command::Tag(args) => commands::tag(&ctx, args, settings),
        Command::Eval(args) => commands::eval(&ctx, args, settings),
        Command::BuildGraph(args) => commands::build_graph(&ctx, args, settings),
        Command::Propagate(args) => commands::propagate(&ctx, args, settings),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            eprintln!("run `keyphrase --help` for usage");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
