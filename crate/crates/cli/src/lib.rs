//! The `sake` command-line tool: data generation, teacher pretraining,
//! student fine-tuning, probing, hashing, evaluation and analysis, each
//! reading and writing plain files.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sake_core::retrieval::Metric;
use sake_core::Error;

use crate::commands::EvalArgs;
use crate::config::{ObjectiveName, RunConfig};

/// Exit status for bad input or configuration.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for numeric failure (non-finite values, divergence).
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "sake", version, about = "Semantic-aware knowledge preservation for zero-shot sketch retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON config with flat dotted keys (nested objects also accepted).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epochs=5`. Repeatable; later wins.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    /// Seed for every stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn all_sets(&self) -> Vec<String> {
        let mut sets = self.sets.clone();
        if let Some(s) = self.seed {
            sets.push(format!("seed={s}"));
        }
        sets
    }

    fn resolve(&self, extra: &[String]) -> Result<RunConfig, Error> {
        let mut sets = self.all_sets();
        sets.extend_from_slice(extra);
        RunConfig::resolve(self.config.as_deref(), &sets)
    }
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Generate a synthetic photo/sketch dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the teacher on original-class photos.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fine-tune a student from a teacher checkpoint on the source classes.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        objective: Option<ObjectiveName>,
        #[arg(long)]
        lambda_sake: Option<f64>,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Linear-probe accuracy on held-out original-class photos.
    Probe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fit ITQ on source-set embeddings and write binary codes.
    Hash {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        bits: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Zero-shot retrieval metrics on the target classes.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// ITQ codec; switches evaluation to binary codes.
        #[arg(long)]
        codec: Option<PathBuf>,
        #[arg(long)]
        metric: Option<Metric>,
        /// Expected code length of the codec.
        #[arg(long)]
        bits: Option<usize>,
        /// Cut-offs for mAP@K and Prec@K.
        #[arg(long = "k", value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        /// Photo queries against the photo gallery instead of sketch queries.
        #[arg(long)]
        photo_queries: bool,
        /// Also write the target-set embeddings as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Group target classes by improvement over a baseline and compare the
    /// teacher's confidence and taxonomy similarity per group.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train and evaluate one student per point of a config grid.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// One axis, `key=v1,v2,..`. Repeatable.
        #[arg(long = "vary", value_name = "KEY=V1,V2")]
        axes: Vec<String>,
        /// Runs launched at once.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn opt_set<T: std::fmt::Display>(key: &str, v: Option<T>) -> Option<String> {
    v.map(|v| format!("{key}={v}"))
}

pub fn execute(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::GenData { out, cfg } => commands::gen_data(&cfg.resolve(&[])?, &out),
        Cmd::Pretrain { data, out, epochs, cfg } => {
            let extra: Vec<String> = opt_set("pretrain.epochs", epochs).into_iter().collect();
            commands::pretrain(cfg.resolve(&extra)?, &data, &out)
        }
        Cmd::Train {
            data,
            teacher,
            out,
            objective,
            lambda_sake,
            lambda1,
            lambda2,
            epochs,
            cfg,
        } => {
            let objective = objective.map(|o| serde_json::to_string(&o).expect("enum serializes"));
            let extra: Vec<String> = [
                opt_set("objective", objective),
                opt_set("train.loss.lambda_sake", lambda_sake),
                opt_set("train.loss.lambda1", lambda1),
                opt_set("train.loss.lambda2", lambda2),
                opt_set("train.epochs", epochs),
            ]
            .into_iter()
            .flatten()
            .collect();
            commands::train(cfg.resolve(&extra)?, &data, &teacher, &out)
        }
        Cmd::Probe { data, model, out, cfg } => {
            commands::probe(cfg.resolve(&[])?, &data, &model, out.as_deref()).map(|_| ())
        }
        Cmd::Hash {
            data,
            model,
            out,
            bits,
            cfg,
        } => {
            let extra: Vec<String> = opt_set("itq.bits", bits).into_iter().collect();
            commands::hash(cfg.resolve(&extra)?, &data, &model, &out)
        }
        Cmd::Eval {
            data,
            model,
            codec,
            metric,
            bits,
            ks,
            photo_queries,
            csv,
            out,
            cfg,
        } => {
            let args = EvalArgs {
                codec,
                metric,
                bits,
                ks,
                photo_queries,
                csv,
            };
            commands::eval(cfg.resolve(&[])?, &data, &model, &args, out.as_deref()).map(|_| ())
        }
        Cmd::Analyze {
            data,
            teacher,
            student,
            baseline,
            out,
            cfg,
        } => commands::analyze(cfg.resolve(&[])?, &data, &teacher, &student, &baseline, out.as_deref()).map(|_| ()),
        Cmd::Sweep {
            data,
            teacher,
            out,
            axes,
            jobs,
            cfg,
        } => {
            let resolved = cfg.resolve(&[])?;
            let base = cfg.all_sets();
            commands::sweep(&resolved, cfg.config.as_deref(), &base, &data, &teacher, &axes, jobs, &out).map(|_| ())
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
