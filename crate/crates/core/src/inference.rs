//! Turning raw head outputs into scored relationship triplets.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::prediction::PredictionView;

/// A scored ⟨subject, object, relation⟩ detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletPrediction {
    pub subject_box: BBox,
    pub subject_label: usize,
    pub object_box: BBox,
    pub object_label: usize,
    pub relation: usize,
    pub score: f64,
    pub frame: usize,
    /// Source query slot.
    pub query: usize,
}

/// Index and value of the most probable real class (the trailing
/// no-triplet entry is skipped).
fn best_real_class(probs: &[f64], num_real: usize) -> (usize, f64) {
    let mut best = (0, probs[0]);
    for (i, &p) in probs.iter().enumerate().take(num_real).skip(1) {
        if p > best.1 {
            best = (i, p);
        }
    }
    best
}

/// Pairs the q-th subject with the q-th object and emits one candidate per
/// (query, relation) scored `rP[q][r] · sP_max[q] · oP_max[q]`. With a fixed
/// subject class the subject probabilities are not read and count as 1.
/// The relation-region head is never read.
pub fn compose_triplets<P: PredictionView + ?Sized>(
    pred: &P,
    subject_fixed: Option<usize>,
    frame: usize,
) -> Vec<TripletPrediction> {
    let n_o = pred.num_object_classes();
    let n_r = pred.num_relations();
    let mut out = Vec::with_capacity(pred.num_queries() * n_r);
    for q in 0..pred.num_queries() {
        let (subject_label, s_max) = match subject_fixed {
            Some(agent) => (agent, 1.0),
            None => best_real_class(pred.subject_probs(q), n_o),
        };
        let (object_label, o_max) = best_real_class(pred.object_probs(q), n_o);
        let subject_box = pred.subject_box(q).clamped();
        let object_box = pred.object_box(q).clamped();
        for (relation, &p) in pred.relation_probs(q).iter().enumerate() {
            out.push(TripletPrediction {
                subject_box,
                subject_label,
                object_box,
                object_label,
                relation,
                score: p * s_max * o_max,
                frame,
                query: q,
            });
        }
    }
    out
}

fn rank(a: &TripletPrediction, b: &TripletPrediction) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.query.cmp(&b.query))
        .then(a.relation.cmp(&b.relation))
}

/// Highest-scoring `k` candidates, ties broken by query then relation.
pub fn top_k(mut candidates: Vec<TripletPrediction>, k: usize) -> Result<Vec<TripletPrediction>> {
    if k == 0 {
        return Err(Error::invalid("top-k needs k >= 1"));
    }
    candidates.sort_by(rank);
    candidates.truncate(k);
    Ok(candidates)
}

/// One line of a prediction dump. Boxes are normalized corners
/// `[x0, y0, x1, y1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub video: String,
    pub frame: usize,
    pub subject_box: [f64; 4],
    pub subject_label: usize,
    pub object_box: [f64; 4],
    pub object_label: usize,
    pub relation: usize,
    pub score: f64,
}

impl PredictionRecord {
    pub fn new(video: &str, p: &TripletPrediction) -> Self {
        PredictionRecord {
            video: video.to_string(),
            frame: p.frame,
            subject_box: p.subject_box.corners(),
            subject_label: p.subject_label,
            object_box: p.object_box.corners(),
            object_label: p.object_label,
            relation: p.relation,
            score: p.score,
        }
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r)?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
