//! Scene-graph detection metrics: Recall@K and per-class average precision
//! over seen / unseen / full triplet-class partitions.
//!
//! Every relation of an annotated pair is its own ground-truth instance. A
//! prediction hits an instance when both boxes reach the IoU threshold and
//! subject, object and relation labels agree; each instance can be claimed
//! once, by the highest-scoring prediction that reaches it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{FrameAnnotation, SplitSpec, TripletClass};
use crate::error::{Error, Result};
use crate::inference::{top_k, TripletPrediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    /// Cut-offs for Recall@K.
    pub recall_ks: Vec<usize>,
    /// Candidates kept per frame before AP ranking.
    pub map_top_k: usize,
    /// Subjects are a fixed agent whose box is not predicted; only the
    /// object box is compared.
    pub subject_fixed: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            iou_threshold: 0.5,
            recall_ks: vec![20, 50],
            map_top_k: 100,
            subject_fixed: false,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::config(format!(
                "iou_threshold must lie in (0, 1], got {}",
                self.iou_threshold
            )));
        }
        if self.recall_ks.contains(&0) || self.map_top_k == 0 {
            return Err(Error::config("recall cut-offs and map_top_k must be >= 1"));
        }
        Ok(())
    }
}

/// Marks which (triplet, relation) instances of a frame are taken.
#[derive(Debug, Clone)]
pub struct Claims {
    taken: Vec<Vec<bool>>,
}

impl Claims {
    pub fn new(gt: &FrameAnnotation) -> Self {
        Claims {
            taken: gt.triplets.iter().map(|t| vec![false; t.relations.len()]).collect(),
        }
    }
}

/// Finds the best unclaimed ground-truth instance hit by `pred` and claims
/// it. Returns `(triplet index, relation position)`. Among several hits the
/// one with the largest smaller-of-two IoUs wins, then the lowest index.
pub fn match_prediction(
    pred: &TripletPrediction,
    gt: &FrameAnnotation,
    claims: &mut Claims,
    opts: &EvalOptions,
) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (i, t) in gt.triplets.iter().enumerate() {
        if t.subject_label != pred.subject_label || t.object_label != pred.object_label {
            continue;
        }
        let Some(r) = t.relations.iter().position(|&r| r == pred.relation) else {
            continue;
        };
        if claims.taken[i][r] {
            continue;
        }
        let o_iou = pred.object_box.iou(&t.object_box);
        let s_iou = if opts.subject_fixed {
            1.0
        } else {
            pred.subject_box.iou(&t.subject_box)
        };
        let q = o_iou.min(s_iou);
        if q >= opts.iou_threshold && best.is_none_or(|b| q > b.2) {
            best = Some((i, r, q));
        }
    }
    let (i, r, _) = best?;
    claims.taken[i][r] = true;
    Some((i, r))
}

/// Matched and total ground-truth instances per triplet class at cut-off
/// `k`.
pub fn recall_counts(
    preds: &[Vec<TripletPrediction>],
    gts: &[FrameAnnotation],
    k: usize,
    opts: &EvalOptions,
) -> Result<BTreeMap<TripletClass, (usize, usize)>> {
    if k == 0 {
        return Err(Error::invalid("Recall@K needs K >= 1"));
    }
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!(
            "{} prediction frames for {} annotated frames",
            preds.len(),
            gts.len()
        )));
    }
    let mut counts: BTreeMap<TripletClass, (usize, usize)> = BTreeMap::new();
    for (p, gt) in preds.iter().zip(gts) {
        for c in gt.classes() {
            counts.entry(c).or_default().1 += 1;
        }
        let mut claims = Claims::new(gt);
        for cand in top_k(p.clone(), k)? {
            if let Some((i, r)) = match_prediction(&cand, gt, &mut claims, opts) {
                let t = &gt.triplets[i];
                let c = TripletClass::new(t.subject_label, t.object_label, t.relations[r]);
                counts.entry(c).or_default().0 += 1;
            }
        }
    }
    Ok(counts)
}

fn micro(counts: &BTreeMap<TripletClass, (usize, usize)>, keep: impl Fn(&TripletClass) -> bool) -> Option<f64> {
    let (hit, total) = counts
        .iter()
        .filter(|(c, _)| keep(c))
        .fold((0, 0), |acc, (_, &(h, t))| (acc.0 + h, acc.1 + t));
    (total > 0).then(|| hit as f64 / total as f64)
}

/// Recall@K micro-averaged over all ground-truth instances; 0 when there
/// are none.
pub fn recall_at_k(
    preds: &[Vec<TripletPrediction>],
    gts: &[FrameAnnotation],
    k: usize,
    opts: &EvalOptions,
) -> Result<f64> {
    Ok(micro(&recall_counts(preds, gts, k, opts)?, |_| true).unwrap_or(0.0))
}

/// All-point interpolated area under the precision/recall curve of a
/// ranked hit list.
pub fn average_precision(hits: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// AP of every triplet class with at least one ground-truth instance.
/// Candidates are cut to the per-frame top `opts.map_top_k` first.
pub fn class_average_precision(
    preds: &[Vec<TripletPrediction>],
    gts: &[FrameAnnotation],
    opts: &EvalOptions,
) -> Result<BTreeMap<TripletClass, (usize, f64)>> {
    if preds.len() != gts.len() {
        return Err(Error::invalid("prediction and annotation frame counts differ"));
    }
    let mut num_gt: BTreeMap<TripletClass, usize> = BTreeMap::new();
    for gt in gts {
        for c in gt.classes() {
            *num_gt.entry(c).or_default() += 1;
        }
    }
    // (score, frame, query, relation, prediction) per class
    let mut ranked: BTreeMap<TripletClass, Vec<(f64, usize, TripletPrediction)>> = BTreeMap::new();
    for (f, p) in preds.iter().enumerate() {
        for cand in top_k(p.clone(), opts.map_top_k)? {
            let c = TripletClass::new(cand.subject_label, cand.object_label, cand.relation);
            if num_gt.contains_key(&c) {
                ranked.entry(c).or_default().push((cand.score, f, cand));
            }
        }
    }
    let mut out = BTreeMap::new();
    for (&c, &n) in &num_gt {
        let mut list = ranked.remove(&c).unwrap_or_default();
        list.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.query.cmp(&b.2.query))
        });
        let mut claims: BTreeMap<usize, Claims> = BTreeMap::new();
        let hits: Vec<bool> = list
            .iter()
            .map(|(_, f, cand)| {
                let cl = claims.entry(*f).or_insert_with(|| Claims::new(&gts[*f]));
                match_prediction(cand, &gts[*f], cl, opts).is_some()
            })
            .collect();
        out.insert(c, (n, average_precision(&hits, n)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Seen,
    Unseen,
    /// Present in the evaluated frames but listed in neither set of the
    /// split; left out of every mean.
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionScores {
    pub full: Option<f64>,
    pub seen: Option<f64>,
    pub unseen: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub k: usize,
    pub scores: PartitionScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: TripletClass,
    pub partition: Partition,
    pub gt_count: usize,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub gt_instances: usize,
    pub recall: Vec<RecallRow>,
    pub map: PartitionScores,
    pub classes: Vec<ClassRow>,
}

fn classify(split: Option<&SplitSpec>) -> impl Fn(&TripletClass) -> Partition + '_ {
    let sets = split.map(|s| {
        (
            s.seen.iter().copied().collect::<BTreeSet<_>>(),
            s.unseen.iter().copied().collect::<BTreeSet<_>>(),
        )
    });
    move |c| match &sets {
        None => Partition::Seen,
        Some((seen, unseen)) => {
            if unseen.contains(c) {
                Partition::Unseen
            } else if seen.contains(c) {
                Partition::Seen
            } else {
                Partition::Other
            }
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Full evaluation. Without a split every class counts as seen.
pub fn evaluate(
    preds: &[Vec<TripletPrediction>],
    gts: &[FrameAnnotation],
    split: Option<&SplitSpec>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    opts.validate()?;
    let part = classify(split);
    let mut recall = Vec::new();
    for &k in &opts.recall_ks {
        let counts = recall_counts(preds, gts, k, opts)?;
        recall.push(RecallRow {
            k,
            scores: PartitionScores {
                full: micro(&counts, |c| part(c) != Partition::Other),
                seen: micro(&counts, |c| part(c) == Partition::Seen),
                unseen: micro(&counts, |c| part(c) == Partition::Unseen),
            },
        });
    }
    let aps = class_average_precision(preds, gts, opts)?;
    let classes: Vec<ClassRow> = aps
        .iter()
        .map(|(&class, &(gt_count, ap))| ClassRow {
            class,
            partition: part(&class),
            gt_count,
            ap,
        })
        .collect();
    let pick = |want: &dyn Fn(Partition) -> bool| mean(classes.iter().filter(|r| want(r.partition)).map(|r| r.ap));
    let map = PartitionScores {
        full: pick(&|p| p != Partition::Other),
        seen: pick(&|p| p == Partition::Seen),
        unseen: pick(&|p| p == Partition::Unseen),
    };
    Ok(EvalReport {
        frames: gts.len(),
        gt_instances: gts.iter().map(FrameAnnotation::instance_count).sum(),
        recall,
        map,
        classes,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

impl EvalReport {
    /// Human-readable summary.
    pub fn to_text(&self, object_names: &[String], relation_names: &[String]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames: {}", self.frames);
        let _ = writeln!(s, "ground-truth instances: {}", self.gt_instances);
        let _ = writeln!(s, "\n[recall]");
        let _ = writeln!(s, "{:>6}  {:>10}  {:>10}  {:>10}", "K", "full", "seen", "unseen");
        for r in &self.recall {
            let _ = writeln!(
                s,
                "{:>6}  {:>10}  {:>10}  {:>10}",
                r.k,
                fmt_opt(r.scores.full),
                fmt_opt(r.scores.seen),
                fmt_opt(r.scores.unseen)
            );
        }
        let _ = writeln!(s, "\n[mAP]");
        let _ = writeln!(s, "full   {}", fmt_opt(self.map.full));
        let _ = writeln!(s, "seen   {}", fmt_opt(self.map.seen));
        let _ = writeln!(s, "unseen {}", fmt_opt(self.map.unseen));
        let n_class = |p| self.classes.iter().filter(|r| r.partition == p).count();
        let _ = writeln!(
            s,
            "classes: {} seen, {} unseen, {} outside the split",
            n_class(Partition::Seen),
            n_class(Partition::Unseen),
            n_class(Partition::Other)
        );
        let name = |v: &[String], i: usize| v.get(i).cloned().unwrap_or_else(|| i.to_string());
        let _ = writeln!(s, "\n[unseen classes]");
        for r in self.classes.iter().filter(|r| r.partition == Partition::Unseen) {
            let _ = writeln!(
                s,
                "{} {} {}: gt {} ap {:.6}",
                name(object_names, r.class.subject),
                name(relation_names, r.class.relation),
                name(object_names, r.class.object),
                r.gt_count,
                r.ap
            );
        }
        s
    }

    /// One row per class: subject, object, relation, partition, GT count, AP.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("subject,object,relation,partition,gt_count,ap\n");
        for r in &self.classes {
            let p = match r.partition {
                Partition::Seen => "seen",
                Partition::Unseen => "unseen",
                Partition::Other => "other",
            };
            let _ = writeln!(
                s,
                "{},{},{},{p},{},{:.9}",
                r.class.subject, r.class.object, r.class.relation, r.gt_count, r.ap
            );
        }
        s
    }

    pub fn recall_at(&self, k: usize) -> Option<&PartitionScores> {
        self.recall.iter().find(|r| r.k == k).map(|r| &r.scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_of_ranked_lists() {
        assert_eq!(average_precision(&[true], 1), 1.0);
        assert_eq!(average_precision(&[false, true], 1), 0.5);
        assert_eq!(average_precision(&[], 3), 0.0);
        // hits at ranks 1 and 3 of 2 GT: 0.5·1 + 0.5·(2/3)
        assert!((average_precision(&[true, false, true], 2) - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
        // precision envelope lifts the first hit's level
        assert!((average_precision(&[false, true, true], 2) - 2.0 / 3.0).abs() < 1e-15);
    }
}
