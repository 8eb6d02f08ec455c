//! Model-to-report plumbing shared by the command line, tests and bindings.

use std::fs;
use std::path::Path;

use crate::dataset::{FrameAnnotation, SplitSpec};
use crate::error::{Error, Result};
use crate::inference::{compose_triplets, top_k, PredictionRecord, TripletPrediction};
use crate::metrics::{evaluate, EvalOptions, EvalReport};
use crate::model::Dds;
use crate::train::VideoSample;

/// Candidates worth keeping per frame for the given options.
pub fn keep_per_frame(opts: &EvalOptions) -> usize {
    opts.recall_ks.iter().copied().chain([opts.map_top_k]).max().unwrap_or(1).max(1)
}

/// Runs the model over one video and returns the best `keep` triplets of
/// every frame.
pub fn predict_video(model: &Dds, video: &VideoSample, keep: usize) -> Result<Vec<Vec<TripletPrediction>>> {
    let subject = model.config().subject_fixed;
    model
        .forward_video(&video.frames)?
        .iter()
        .enumerate()
        .map(|(t, p)| top_k(compose_triplets(p, subject, t), keep))
        .collect()
}

pub struct Evaluation {
    pub report: EvalReport,
    pub records: Vec<PredictionRecord>,
}

/// Predicts every video and scores all frames together.
pub fn evaluate_videos(
    model: &Dds,
    videos: &[VideoSample],
    split: Option<&SplitSpec>,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    let mut opts = opts.clone();
    opts.subject_fixed = model.config().subject_fixed.is_some();
    opts.validate()?;
    let keep = keep_per_frame(&opts);
    let mut preds = Vec::new();
    let mut gts: Vec<FrameAnnotation> = Vec::new();
    let mut records = Vec::new();
    for v in videos {
        let frames = predict_video(model, v, keep)?;
        for f in &frames {
            records.extend(f.iter().map(|p| PredictionRecord::new(&v.id, p)));
        }
        preds.extend(frames);
        gts.extend(v.annotations.iter().cloned());
    }
    let report = evaluate(&preds, &gts, split, &opts)?;
    Ok(Evaluation { report, records })
}

pub fn load_split(path: &Path) -> Result<SplitSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_split(path: &Path, spec: &SplitSpec) -> Result<()> {
    let text = serde_json::to_string_pretty(spec)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
