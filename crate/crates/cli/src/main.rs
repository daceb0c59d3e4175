mod commands;
mod data;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use molevers::ranklab::DEFAULT_PAIR_CAP;

#[derive(Parser)]
#[command(name = "molevers", version, about = "Two-stage molecular pretraining and small-data evaluation")]
struct Cli {
    /// Override the run seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Validate inputs and exit without training or writing outputs.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a SMILES list, XYZ, property/pair CSV, config or checkpoint
    /// and print statistics.
    Parse { file: PathBuf },
    /// Stage 1: masked-atom prediction plus branching denoising.
    Pretrain1 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Metrics log; defaults to `<out>.metrics.jsonl`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Stage 2: auxiliary property regression; drops the denoising branch.
    Pretrain2 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Finetune on one labeled set, optionally with gated ranking pairs.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run the split protocol over a directory of assay CSVs.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        assays: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Earlier `results.json` files to include in `wins.csv`.
        #[arg(long)]
        compare: Vec<PathBuf>,
    },
    /// Mock ranking labels for every pair of training molecules.
    Rankgen {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        descriptor: String,
        #[arg(long, default_value_t = 0.0)]
        flip: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PAIR_CAP)]
        cap: usize,
    },
}

fn set_threads() -> error::Result<()> {
    let Ok(v) = std::env::var("MOLEVERS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| error::CliError::format(format!("MOLEVERS_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| error::CliError::format(e.to_string()))
}

fn run(cli: Cli) -> error::Result<()> {
    set_threads()?;
    let opts = commands::Opts {
        seed: cli.seed,
        dry_run: cli.dry_run,
    };
    match cli.cmd {
        Cmd::Parse { file } => commands::parse(&opts, &file),
        Cmd::Pretrain1 { config, out, metrics } => commands::pretrain1(&opts, &config, &out, metrics),
        Cmd::Pretrain2 {
            config,
            init,
            labels,
            out,
            metrics,
        } => commands::pretrain2(&opts, &config, &init, &labels, &out, metrics),
        Cmd::Finetune {
            config,
            init,
            train,
            pairs,
            out,
            metrics,
        } => commands::finetune(&opts, &config, &init, &train, pairs.as_deref(), &out, metrics),
        Cmd::Eval {
            config,
            model,
            assays,
            out,
            compare,
        } => commands::eval(&opts, &config, &model, &assays, &out, &compare),
        Cmd::Rankgen {
            train,
            descriptor,
            flip,
            out,
            cap,
        } => commands::rankgen(&opts, &train, &descriptor, flip, &out, cap),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
