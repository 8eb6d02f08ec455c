//! The `dds` command line.

mod ablate;
mod commands;
mod config;
mod plot;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

pub use ablate::{ablate, apply_variant, shared_hash, table_csv, AblationRow, VARIANTS};
pub use commands::{
    checkpoint_dir, eval, gen_data, make_split, open_data, train, train_videos, TrainOutcome, VideoSet,
};
pub use config::{check_model_corpus, DataConfig, RunConfig, SplitSection};
pub use plot::plot;

use crate::dataset::TripletClass;
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "dds", version, about = "Dynamic scene-graph detection on synthetic video")]
pub struct Cli {
    /// Run configuration (TOML). Missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output location; its meaning depends on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Videos {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus into --out (default: data.corpus).
    GenData,
    /// Build a compositional split; written to --out (default: data.split).
    MakeSplit {
        /// Corpus directory (default: data.corpus).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Hold out this many classes, rarest first.
        #[arg(long, conflicts_with = "holdout")]
        holdout_count: Option<usize>,
        /// Hold out a class given as subject,object,relation. Repeatable.
        #[arg(long, value_parser = parse_class)]
        holdout: Vec<TripletClass>,
    },
    /// Train into --out (default: runs/train).
    Train {
        /// Continue from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides train.steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint; reports go to --out (default: <checkpoint>/eval).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        videos: Videos,
    },
    /// Train and evaluate each variant into --out (default: runs/ablation).
    Ablate {
        /// Variant names, e.g. `--variants base dds mixture:0.3 depth:3,2`.
        #[arg(long, num_args = 1.., required = true)]
        variants: Vec<String>,
    },
    /// Draw one SVG per metric from loss logs, ablation tables or reports.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn parse_class(s: &str) -> std::result::Result<TripletClass, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| format!("{s:?}: {e}"))?;
    match nums[..] {
        [a, b, c] => Ok(TripletClass::new(a, b, c)),
        _ => Err(format!("{s:?}: expected subject,object,relation")),
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            if !p.exists() {
                return Err(Error::config(format!("config file {} does not exist", p.display())));
            }
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_or(cli: &Cli, default: impl AsRef<Path>) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| default.as_ref().to_path_buf())
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<Vec<String>>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::config(e.to_string()))?;
    run(&cli)
}

/// Runs a parsed command line and returns the lines to print.
pub fn run(cli: &Cli) -> Result<Vec<String>> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::GenData => {
            let out = out_or(cli, &cfg.data.corpus);
            let h = gen_data(&cfg.resolve()?, &out)?;
            Ok(vec![format!(
                "wrote {} videos to {}",
                h.generator.num_videos,
                out.display()
            )])
        }
        Command::MakeSplit {
            corpus,
            holdout_count,
            holdout,
        } => {
            if let Some(n) = holdout_count {
                cfg.split.holdout_count = *n;
                cfg.split.holdout_classes.clear();
            }
            if !holdout.is_empty() {
                cfg.split.holdout_classes = holdout.iter().map(|c| [c.subject, c.object, c.relation]).collect();
            }
            let cfg = cfg.resolve()?;
            let corpus = corpus.clone().unwrap_or_else(|| cfg.data.corpus.clone());
            let out = out_or(cli, &cfg.data.split);
            let spec = make_split(&cfg, &corpus, &out)?;
            Ok(vec![format!(
                "{}: {} train, {} test, {} discarded videos; {} unseen classes",
                out.display(),
                spec.train.len(),
                spec.test.len(),
                spec.discarded.len(),
                spec.unseen.len()
            )])
        }
        Command::Train { resume, steps } => {
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
            let cfg = cfg.resolve()?;
            let out = out_or(cli, "runs/train");
            let run = train(&cfg, &out, resume.as_deref())?;
            let last = run.losses.last().map_or("n/a".into(), |b| format!("{:.6}", b.total));
            Ok(vec![format!(
                "trained to step {} (final loss {last}); checkpoint in {}",
                run.step,
                out.join("final").display()
            )])
        }
        Command::Eval {
            checkpoint,
            corpus,
            split,
            videos,
        } => {
            let cfg = cfg.resolve()?;
            let corpus = corpus.clone().unwrap_or_else(|| cfg.data.corpus.clone());
            let split = split.clone().unwrap_or_else(|| cfg.data.split.clone());
            let out = out_or(cli, checkpoint.join("eval"));
            let set = match videos {
                Videos::Train => VideoSet::Train,
                Videos::Test => VideoSet::Test,
            };
            let report = eval(checkpoint, &corpus, &split, &cfg.eval, set, &out)?;
            let mut lines: Vec<String> = report
                .recall
                .iter()
                .map(|r| format!("R@{}: {:?}", r.k, r.scores.full))
                .collect();
            lines.push(format!("mAP: {:?}", report.map.full));
            lines.push(format!("reports in {}", out.display()));
            Ok(lines)
        }
        Command::Ablate { variants } => {
            let cfg = cfg.resolve()?;
            let out = out_or(cli, "runs/ablation");
            let rows = ablate(&cfg, variants, &out)?;
            Ok(table_csv(&rows).lines().map(str::to_string).collect())
        }
        Command::Plot { inputs } => {
            let out = out_or(cli, "plots");
            Ok(plot(inputs, &out)?.iter().map(|p| format!("wrote {}", p.display())).collect())
        }
    }
}
