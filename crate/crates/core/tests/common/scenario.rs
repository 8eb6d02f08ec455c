//! Hand-built metric scenarios stored under `tests/data/metrics`.

use std::path::{Path, PathBuf};

use dds_core::dataset::{FrameAnnotation, SplitSpec, Triplet, TripletClass};
use dds_core::geometry::BBox;
use dds_core::inference::TripletPrediction;
use dds_core::metrics::{evaluate, recall_at_k, EvalOptions, EvalReport, PartitionScores};
use serde::Deserialize;

#[derive(Deserialize)]
struct GtRow {
    s: [f64; 4],
    sl: usize,
    o: [f64; 4],
    ol: usize,
    r: Vec<usize>,
}

#[derive(Deserialize)]
struct PredRow {
    s: [f64; 4],
    sl: usize,
    o: [f64; 4],
    ol: usize,
    r: usize,
    score: f64,
}

#[derive(Deserialize)]
struct FrameRow {
    gt: Vec<GtRow>,
    pred: Vec<PredRow>,
}

#[derive(Deserialize)]
struct Expected {
    full: Option<f64>,
    seen: Option<f64>,
    unseen: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    name: String,
    #[serde(default)]
    seen: Vec<[usize; 3]>,
    #[serde(default)]
    unseen: Vec<[usize; 3]>,
    frames: Vec<FrameRow>,
    recall: Vec<(usize, f64)>,
    #[serde(default)]
    recall_seen: Vec<(usize, f64)>,
    #[serde(default)]
    recall_unseen: Vec<(usize, f64)>,
    ap: Vec<(usize, usize, usize, f64)>,
    map: Expected,
}

pub struct Scenario {
    pub name: String,
    pub split: Option<SplitSpec>,
    pub gts: Vec<FrameAnnotation>,
    pub preds: Vec<Vec<TripletPrediction>>,
    raw: Raw,
}

fn bbox(a: [f64; 4]) -> BBox {
    BBox::new(a[0], a[1], a[2], a[3]).unwrap()
}

fn class(a: [usize; 3]) -> TripletClass {
    TripletClass::new(a[0], a[1], a[2])
}

pub fn dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/metrics")
}

pub fn load_all() -> Vec<Scenario> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load(p)).collect()
}

pub fn load(path: &Path) -> Scenario {
    let raw: Raw = serde_json::from_str(&std::fs::read_to_string(path).unwrap())
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let split = (!raw.seen.is_empty() || !raw.unseen.is_empty()).then(|| SplitSpec {
        seen: raw.seen.iter().copied().map(class).collect(),
        unseen: raw.unseen.iter().copied().map(class).collect(),
        train: vec![],
        test: vec![],
        discarded: vec![],
    });
    let gts = raw
        .frames
        .iter()
        .map(|f| {
            FrameAnnotation::new(
                f.gt.iter()
                    .map(|g| Triplet {
                        subject_box: bbox(g.s),
                        subject_label: g.sl,
                        object_box: bbox(g.o),
                        object_label: g.ol,
                        relations: g.r.clone(),
                    })
                    .collect(),
            )
        })
        .collect();
    let preds = raw
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            f.pred
                .iter()
                .enumerate()
                .map(|(q, p)| TripletPrediction {
                    subject_box: bbox(p.s),
                    subject_label: p.sl,
                    object_box: bbox(p.o),
                    object_label: p.ol,
                    relation: p.r,
                    score: p.score,
                    frame: t,
                    query: q,
                })
                .collect()
        })
        .collect();
    Scenario {
        name: raw.name.clone(),
        split,
        gts,
        preds,
        raw,
    }
}

fn same(a: Option<f64>, b: Option<f64>) -> bool {
    a == b
}

impl Scenario {
    pub fn report(&self) -> EvalReport {
        let opts = EvalOptions {
            recall_ks: self.raw.recall.iter().map(|r| r.0).collect(),
            ..EvalOptions::default()
        };
        evaluate(&self.preds, &self.gts, self.split.as_ref(), &opts).unwrap()
    }

    /// Every mismatch between the computed and the hand-derived values.
    pub fn mismatches(&self) -> Vec<String> {
        let mut out = Vec::new();
        let opts = EvalOptions::default();
        let report = self.report();
        for &(k, want) in &self.raw.recall {
            let got = recall_at_k(&self.preds, &self.gts, k, &opts).unwrap();
            if got != want {
                out.push(format!("recall@{k}: {got} != {want}"));
            }
            let row = report.recall_at(k).unwrap();
            if self.split.is_some() && row.full != Some(want) {
                out.push(format!("report recall@{k}: {:?} != {want}", row.full));
            }
        }
        let part = |rows: &[(usize, f64)], pick: fn(&PartitionScores) -> Option<f64>, out: &mut Vec<String>| {
            for &(k, want) in rows {
                let got = pick(report.recall_at(k).unwrap());
                if got != Some(want) {
                    out.push(format!("partition recall@{k}: {got:?} != {want}"));
                }
            }
        };
        part(&self.raw.recall_seen, |s| s.seen, &mut out);
        part(&self.raw.recall_unseen, |s| s.unseen, &mut out);
        let got_ap: Vec<(usize, usize, usize, f64)> = report
            .classes
            .iter()
            .map(|r| (r.class.subject, r.class.object, r.class.relation, r.ap))
            .collect();
        if got_ap != self.raw.ap {
            out.push(format!("ap table {got_ap:?} != {:?}", self.raw.ap));
        }
        let m = &self.raw.map;
        if !same(report.map.full, m.full) || !same(report.map.seen, m.seen) || !same(report.map.unseen, m.unseen) {
            out.push(format!("map {:?} != ({:?}, {:?}, {:?})", report.map, m.full, m.seen, m.unseen));
        }
        out
    }
}
