//! `skeleton-attack`: dataset generation, training, attacks, transfer and
//! analysis as reproducible file-to-file pipelines.
//!
//! Every subcommand prints a one-line JSON summary as its last line of
//! standard output. Errors go to standard error with a nonzero exit code.

mod commands;
mod results;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "skeleton-attack", version, about = "Perceptual adversarial attacks on skeletal motion classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Linear,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData {
        /// Dataset spec JSON; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a classifier on a dataset's train split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        arch: Arch,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Attack every correctly classified motion of a split.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// ab, abn:N, sa:CLASS or sa:random.
        #[arg(long)]
        strategy: String,
        /// Attack config JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Attack surrogates and replay the results against black-box targets.
    Transfer {
        #[arg(long, value_delimiter = ',', required = true)]
        surrogate: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// ab, abn:N or sa:CLASS.
        #[arg(long, default_value = "ab")]
        strategy: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Correlation and deviation statistics over an attack results directory.
    Analyze {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to motions of one class.
        #[arg(long)]
        class: Option<usize>,
    },
    /// Flatten an attack results directory into one table.
    Export {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: ExportFormat,
        /// Defaults to `export.csv` or `export.json` inside the results directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenData { spec, out, seed } => commands::gen_data(spec.as_deref(), &out, seed),
        Command::Train {
            data,
            arch,
            out,
            seed,
            epochs,
            batch_size,
        } => commands::train(&data, arch.into(), &out, seed, epochs, batch_size),
        Command::Attack {
            model,
            data,
            strategy,
            config,
            out,
            split,
            seed,
        } => commands::attack(&model, &data, &strategy, config.as_deref(), &out, split.into(), seed),
        Command::Transfer {
            surrogate,
            targets,
            data,
            strategy,
            config,
            out,
            split,
            seed,
        } => commands::transfer(&surrogate, &targets, &data, &strategy, config.as_deref(), &out, split.into(), seed),
        Command::Analyze { results, out, class } => commands::analyze(&results, &out, class),
        Command::Export { results, format, out } => commands::export(&results, format, out.as_deref()),
    };
    match outcome {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

impl From<Arch> for skeleton_attack::models::Architecture {
    fn from(a: Arch) -> Self {
        match a {
            Arch::Linear => Self::LinearSoftmax,
            Arch::Mlp => Self::MlpPooled,
        }
    }
}

impl From<SplitArg> for skeleton_attack::data::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Self::Train,
            SplitArg::Val => Self::Val,
            SplitArg::Test => Self::Test,
        }
    }
}
