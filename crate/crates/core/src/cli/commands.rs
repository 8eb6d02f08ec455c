use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::config::{check_model_corpus, RunConfig};
use crate::dataset::{check_split, make_compositional_split, write_corpus, Corpus, CorpusHeader, SplitSpec};
use crate::error::{Error, Result};
use crate::inference::write_predictions;
use crate::metrics::{EvalOptions, EvalReport};
use crate::model::{config_diff, load_checkpoint, save_checkpoint, CheckpointMeta, Dds, CHECKPOINT_VERSION};
use crate::pipeline::{evaluate_videos, load_split, save_split};
use crate::criterion::LossBreakdown;
use crate::train::{loss_log_line, AdamW, Objective, Trainer, VideoSample, LOSS_LOG_HEADER};

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::config(format!("{what} {} does not exist", path.display())))
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<CorpusHeader> {
    write_corpus(out, &cfg.generate, cfg.seed)
}

/// Builds a split for the corpus in `corpus_dir` and writes it to `out`.
pub fn make_split(cfg: &RunConfig, corpus_dir: &Path, out: &Path) -> Result<SplitSpec> {
    require(corpus_dir, "corpus")?;
    let corpus = Corpus::open(corpus_dir)?;
    let spec = make_compositional_split(
        &corpus.annotations,
        &cfg.split.holdout(),
        &cfg.split.split_config(),
        cfg.seed,
    )?;
    check_split(&corpus.annotations, &spec)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save_split(out, &spec)?;
    Ok(spec)
}

/// Opens the configured corpus and split and checks them against the model.
pub fn open_data(cfg: &RunConfig) -> Result<(Corpus, SplitSpec)> {
    require(&cfg.data.corpus, "corpus")?;
    require(&cfg.data.split, "split file")?;
    let corpus = Corpus::open(&cfg.data.corpus)?;
    cfg.check_corpus(&corpus.header)?;
    let split = load_split(&cfg.data.split)?;
    check_split(&corpus.annotations, &split)?;
    Ok((corpus, split))
}

#[derive(Debug, Serialize)]
struct Timing {
    started_unix: f64,
    finished_unix: f64,
    steps_run: usize,
    seconds: f64,
}

pub struct TrainOutcome {
    pub model: Dds,
    /// Steps completed by the run, resumed steps included.
    pub step: usize,
    /// Losses of the steps run by this invocation.
    pub losses: Vec<LossBreakdown>,
}

pub fn checkpoint_dir(out: &Path, step: usize) -> PathBuf {
    out.join("checkpoints").join(format!("step-{step:06}"))
}

fn save_run(trainer: &Trainer, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        model: cfg.model.clone(),
        step: trainer.step as u64,
        seed: cfg.seed,
        run: cfg.resume_key()?,
        params_sha256: String::new(),
    };
    save_checkpoint(dir, &trainer.model, &meta, Some(&trainer.optimizer.to_flat()))
}

/// Keeps the header and the rows of steps `1..=step`.
fn truncate_log(path: &Path, step: usize) -> Result<()> {
    let mut kept = vec![LOSS_LOG_HEADER.to_string()];
    if path.exists() {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        for line in BufReader::new(file).lines().skip(1) {
            let line = line.map_err(|e| Error::io(path, e))?;
            let n: usize = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::invalid(format!("{}: malformed row {line:?}", path.display())))?;
            if n <= step {
                kept.push(line);
            }
        }
    }
    write_text(path, &(kept.join("\n") + "\n"))
}

fn resume_trainer(cfg: &RunConfig, dir: &Path, objective: Objective) -> Result<Trainer> {
    let (model, meta, opt) = load_checkpoint(dir)?;
    let key = cfg.resume_key()?;
    if meta.run != key {
        let diff = config_diff(&meta.run, &key)?;
        return Err(Error::Incompatible(format!("(checkpoint != run)\n{}", diff.join("\n"))));
    }
    let opt = opt.ok_or_else(|| Error::Incompatible(format!("{} holds no optimizer state", dir.display())))?;
    let step = meta.step as usize;
    if step > cfg.train.steps {
        return Err(Error::config(format!(
            "checkpoint is at step {step}, past train.steps = {}",
            cfg.train.steps
        )));
    }
    let mut trainer = Trainer::new(model, cfg.train.clone(), objective, cfg.seed)?;
    trainer.optimizer = AdamW::from_flat(trainer.model.params(), &opt)?;
    trainer.step = step;
    Ok(trainer)
}

/// Trains on the given videos, writing `config.toml`, `loss.csv`,
/// periodic checkpoints, `final/` and a `timing.json` sidecar under `out`.
pub fn train_videos(cfg: &RunConfig, data: &[VideoSample], out: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    create_dir(out)?;
    cfg.save(&out.join("config.toml"))?;
    let started = (unix_now(), Instant::now());
    let probe = Dds::new(cfg.model.clone(), cfg.seed)?;
    let objective = Objective::for_model(&probe, cfg.loss, cfg.matching);
    let log_path = out.join("loss.csv");
    let mut trainer = match resume {
        Some(dir) => {
            require(dir, "checkpoint")?;
            let t = resume_trainer(cfg, dir, objective)?;
            truncate_log(&log_path, t.step)?;
            t
        }
        None => {
            write_text(&log_path, &format!("{LOSS_LOG_HEADER}\n"))?;
            Trainer::new(probe, cfg.train.clone(), objective, cfg.seed)?
        }
    };
    let first = trainer.step;
    let mut log = OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut losses = Vec::new();
    while trainer.step < cfg.train.steps {
        let b = trainer.train_step(data)?;
        writeln!(log, "{}", loss_log_line(trainer.step, &b)).map_err(|e| Error::io(&log_path, e))?;
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        losses.push(b);
        let every = cfg.train.checkpoint_every;
        if every > 0 && trainer.step % every == 0 {
            save_run(&trainer, cfg, &checkpoint_dir(out, trainer.step))?;
        }
    }
    save_run(&trainer, cfg, &out.join("final"))?;
    let timing = Timing {
        started_unix: started.0,
        finished_unix: unix_now(),
        steps_run: trainer.step - first,
        seconds: started.1.elapsed().as_secs_f64(),
    };
    write_text(&out.join("timing.json"), &(serde_json::to_string_pretty(&timing)? + "\n"))?;
    Ok(TrainOutcome {
        step: trainer.step,
        model: trainer.model,
        losses,
    })
}

pub fn train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    let (corpus, split) = open_data(cfg)?;
    let data = corpus.samples(&split.train)?;
    train_videos(cfg, &data, out, resume)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VideoSet {
    Train,
    Test,
}

/// Evaluates a checkpoint on one side of the split and writes
/// `report.txt`, `report.json`, `classes.csv` and `predictions.jsonl`.
pub fn eval(
    checkpoint: &Path,
    corpus_dir: &Path,
    split_path: &Path,
    opts: &EvalOptions,
    videos: VideoSet,
    out: &Path,
) -> Result<EvalReport> {
    require(checkpoint, "checkpoint")?;
    require(corpus_dir, "corpus")?;
    require(split_path, "split file")?;
    let (model, _, _) = load_checkpoint(checkpoint)?;
    let corpus = Corpus::open(corpus_dir)?;
    check_model_corpus(model.config(), &corpus.header)?;
    let split = load_split(split_path)?;
    check_split(&corpus.annotations, &split)?;
    let ids = match videos {
        VideoSet::Train => &split.train,
        VideoSet::Test => &split.test,
    };
    let samples = corpus.samples(ids)?;
    let ev = evaluate_videos(&model, &samples, Some(&split), opts)?;
    create_dir(out)?;
    let h = &corpus.header;
    write_text(&out.join("report.txt"), &ev.report.to_text(&h.object_names, &h.relation_names))?;
    write_text(&out.join("report.json"), &(serde_json::to_string_pretty(&ev.report)? + "\n"))?;
    write_text(&out.join("classes.csv"), &ev.report.to_csv())?;
    write_predictions(&out.join("predictions.jsonl"), &ev.records)?;
    Ok(ev.report)
}
