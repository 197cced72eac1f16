//! `augsubset` command-line driver.
//!
//! Exit codes: 0 success, 1 oracle failure, 2 usage or input error,
//! 3 numerical error.

mod commands;
mod config;
mod oracle;

use std::path::PathBuf;
use std::process::ExitCode;

use augsubset::selection::PolicyKind;
use augsubset::ScoreMetric;
use clap::{Parser, Subcommand, ValueEnum};

use crate::oracle::Suite;

#[derive(Parser, Debug)]
#[command(
    name = "augsubset",
    version,
    about = "Score-driven subset selection for data augmentation"
)]
struct Cli {
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a two-class task from IDX files and write it out.
    ///
    /// Writes train.csv (label then pixel features in [0, 1]) and the chosen
    /// images as train-images-idx3-ubyte / train-labels-idx1-ubyte. With
    /// --n-test, test.csv and test IDX files are drawn from the leftover pool.
    Ingest {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Two digit classes, first is +1: e.g. 3,8
        #[arg(long, value_delimiter = ',', required = true)]
        classes: Vec<u8>,
        #[arg(long)]
        n_train: usize,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Expand every image of an IDX file into its augmentation family and
    /// write the augmented feature CSV (origin_id, member_index, features).
    Augment {
        #[arg(long)]
        images: PathBuf,
        /// Preset (mnist-translate, mnist-rotate, mnist-crop, cifar-translate,
        /// norb-translate, small-rotate, cifar-crop) or translate:OFFSET,
        /// rotate:DEG,DEG,... or crop:B,B,...
        #[arg(long)]
        transform: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model on a feature CSV and write one score per example.
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        metric: MetricArg,
        /// Logistic regression C (loss and influence).
        #[arg(long, default_value_t = 10.0)]
        c: f64,
        /// SVM C grid searched by cross-validation (margin metrics).
        #[arg(long, value_delimiter = ',')]
        svm_grid: Option<Vec<f64>>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Choose k points to augment from a score CSV and/or feature CSV.
    Select {
        #[arg(long, value_enum)]
        policy: PolicyArg,
        /// Subset size; VSV ignores it and returns all support vectors.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Feature CSV; required by stratified_cluster, kdpp and vsv.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Use 1/(s + eps) in place of the scores.
        #[arg(long)]
        invert: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment from a TOML config and write its outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Bound on concurrently running repeats; overrides the config.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Summarize the report.json of a finished run.
    Report {
        /// Output directory of `augsubset run`.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run the brute-force reference checks at desk scale.
    Oracle {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum MetricArg {
    Loss,
    Influence,
    MarginAbs,
    MarginInv,
}

impl From<MetricArg> for ScoreMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Loss => ScoreMetric::Loss,
            MetricArg::Influence => ScoreMetric::Influence,
            MetricArg::MarginAbs => ScoreMetric::MarginAbs,
            MetricArg::MarginInv => ScoreMetric::MarginInv,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum PolicyArg {
    BaselineUniform,
    RandomProportional,
    DeterministicTopk,
    Vsv,
    StratifiedCluster,
    Kdpp,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::BaselineUniform => PolicyKind::BaselineUniform,
            PolicyArg::RandomProportional => PolicyKind::RandomProportional,
            PolicyArg::DeterministicTopk => PolicyKind::DeterministicTopk,
            PolicyArg::Vsv => PolicyKind::Vsv,
            PolicyArg::StratifiedCluster => PolicyKind::StratifiedCluster,
            PolicyArg::Kdpp => PolicyKind::Kdpp,
        }
    }
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<augsubset::Error> for CliError {
    fn from(e: augsubset::Error) -> Self {
        CliError {
            code: if e.is_numerical() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Ingest {
            images,
            labels,
            classes,
            n_train,
            n_test,
            seed,
            out_dir,
        } => match classes[..] {
            [a, b] => commands::ingest(&images, &labels, [a, b], n_train, n_test, seed, &out_dir),
            _ => Err(CliError::input(
                "--classes takes exactly two labels, e.g. 3,8",
            )),
        },
        Command::Augment {
            images,
            transform,
            out,
        } => commands::augment(&images, &transform, &out),
        Command::Score {
            data,
            metric,
            c,
            svm_grid,
            folds,
            seed,
            out,
        } => commands::score(
            &data,
            metric.into(),
            c,
            svm_grid,
            folds,
            seed,
            out.as_deref(),
        ),
        Command::Select {
            policy,
            k,
            scores,
            data,
            invert,
            seed,
            out,
        } => commands::select(&commands::SelectArgs {
            policy: policy.into(),
            k,
            scores: scores.as_deref(),
            data: data.as_deref(),
            invert,
            seed,
            out: out.as_deref(),
        }),
        Command::Run {
            config,
            out,
            threads,
        } => commands::run(&config, &out, threads),
        Command::Report { dir } => commands::report(&dir),
        Command::Oracle { suite } => oracle::run(suite),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
