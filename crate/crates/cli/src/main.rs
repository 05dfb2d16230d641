//! `latentg` command-line pipeline.
//!
//! Every subcommand reads and writes one output directory. Exit status is 0 on
//! success, 1 when the input, configuration or artifact set is invalid, and 2
//! when a run fails at runtime (i/o, divergence, numeric trouble).

mod commands;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use latentg::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "latentg", version, about = "Teacher-student text classification pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
pub struct Common {
    /// Output directory shared by all subcommands.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base settings the config file and flags are applied on.
    #[arg(long, global = true, default_value = "desk", value_parser = ["desk", "full"])]
    preset: String,
    /// Override one setting, e.g. `--set loss.alpha=0.5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run seed; overrides `seed` from every other source.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the seeded synthetic corpus to corpus.csv.
    Synth {
        /// Number of documents (default `synth.n`).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Clean a raw CSV corpus and split it into train and test parts.
    Prep {
        /// Raw CSV (default: corpus.csv in the output directory).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Class counts and length histogram of the cleaned corpus.
    Stats,
    /// TF-IDF matrices for the train and test parts.
    Tfidf,
    /// Build the vocabulary and train the teacher network.
    TrainTeacher,
    /// Extract teacher features and fit the mixture.
    Algorithm1,
    /// Train the student against the teacher features and mixture.
    TrainStudent,
    /// Score a trained network on the test part.
    Evaluate {
        #[arg(long, default_value = "student", value_parser = ["teacher", "student"])]
        model: String,
    },
    /// Stratified k-fold run of the whole chain on the cleaned corpus.
    Kfold {
        /// Number of folds (default `split.k_folds`).
        #[arg(long)]
        k: Option<usize>,
    },
    /// Logistic regression and naive Bayes on the train/test parts.
    Baseline,
}

/// An input or precondition problem; maps to exit status 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::preset(&common.preset)?;
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Invalid(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli.common)?;
    let mut ws = workspace::Workspace::open(&cli.common.out, &cfg)?;
    match cli.command {
        Command::Synth { n } => commands::synth(&mut ws, &cfg, n),
        Command::Prep { input } => commands::prep(&mut ws, &cfg, input),
        Command::Stats => commands::stats(&mut ws, &cfg),
        Command::Tfidf => commands::tfidf(&mut ws, &cfg),
        Command::TrainTeacher => commands::train_teacher(&mut ws, &cfg),
        Command::Algorithm1 => commands::algorithm1(&mut ws, &cfg),
        Command::TrainStudent => commands::train_student(&mut ws, &cfg),
        Command::Evaluate { model } => commands::evaluate(&mut ws, &cfg, &model),
        Command::Kfold { k } => commands::kfold(&mut ws, &cfg, k),
        Command::Baseline => commands::baseline(&mut ws, &cfg),
    }?;
    ws.finish()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use latentg::Error as E;
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io { .. } | E::Csv(_) | E::Json(_) | E::Divergence(_) | E::Numeric(_) | E::Format(_) | E::Fit(_) => 2,
                _ => 1,
            };
        }
    }
    2
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
