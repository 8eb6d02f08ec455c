//! Prediction/ground-truth matching cost and optimal bipartite assignment.

use serde::{Deserialize, Serialize};

use crate::dataset::FrameAnnotation;
use crate::error::{Error, Result};
use crate::geometry::{relation_region, BBox, RegionMode};
use crate::prediction::PredictionView;

/// Ground-truth counts above this are refused by [`brute_force_match`].
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// `η_b`, `η_o`, `η_r`. The defaults of 1.0 are not taken from any
/// published setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchWeights {
    pub boxes: f64,
    pub class: f64,
    pub relation: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        MatchWeights {
            boxes: 1.0,
            class: 1.0,
            relation: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostOptions {
    pub weights: MatchWeights,
    pub region: RegionMode,
    /// When false the relation-region term is left out of the box cost.
    pub skip_relation_region: bool,
    /// Subject boxes and subject classes are never read.
    pub subject_fixed: bool,
}

/// `n_pred × n_gt` matrix of finite costs, `n_gt <= n_pred`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n_pred: usize,
    n_gt: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n_pred: usize, n_gt: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_pred * n_gt {
            return Err(Error::invalid(format!(
                "cost data has {} entries, expected {n_pred}x{n_gt}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite cost {bad}")));
        }
        Ok(CostMatrix { n_pred, n_gt, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_gt = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_gt) {
            return Err(Error::invalid("ragged cost rows"));
        }
        CostMatrix::new(rows.len(), n_gt, rows.concat())
    }

    pub fn n_pred(&self) -> usize {
        self.n_pred
    }
    pub fn n_gt(&self) -> usize {
        self.n_gt
    }

    #[inline]
    pub fn get(&self, pred: usize, gt: usize) -> f64 {
        self.data[pred * self.n_gt + gt]
    }

    pub fn scaled(&self, c: f64) -> CostMatrix {
        CostMatrix {
            n_pred: self.n_pred,
            n_gt: self.n_gt,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }
}

/// Ground truth `j` is matched to prediction `pairs[k].0` for the pair
/// `(pred, gt)`; predictions not listed are assigned the no-triplet class.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(p, g)| cost.get(p, g)).sum()
    }

    /// Per-prediction matched ground truth.
    pub fn by_prediction(&self, n_pred: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_pred];
        for &(p, g) in &self.pairs {
            out[p] = Some(g);
        }
        out
    }

    /// Checks the assignment is injective and covers every ground truth.
    pub fn validate(&self, n_pred: usize, n_gt: usize) -> Result<()> {
        let mut seen_p = vec![false; n_pred];
        let mut seen_g = vec![false; n_gt];
        for &(p, g) in &self.pairs {
            if p >= n_pred || g >= n_gt {
                return Err(Error::invalid(format!(
                    "assignment pair ({p}, {g}) outside {n_pred}x{n_gt}"
                )));
            }
            if seen_p[p] || seen_g[g] {
                return Err(Error::invalid(format!("assignment pair ({p}, {g}) repeats an index")));
            }
            seen_p[p] = true;
            seen_g[g] = true;
        }
        if seen_g.iter().any(|s| !s) {
            return Err(Error::invalid("assignment leaves a ground truth unmatched"));
        }
        Ok(())
    }
}

/// L1 distance over center-form coordinates plus `1 − gIoU`.
pub fn box_match_cost(pred: &BBox, gt: &BBox) -> f64 {
    let p = pred.to_array();
    let g = gt.to_array();
    let l1: f64 = p.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum();
    l1 + (1.0 - pred.giou(gt))
}

/// `−p(label)`.
pub fn class_match_cost(probs: &[f64], label: usize) -> Result<f64> {
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("class probabilities sum to {sum}")));
    }
    probs
        .get(label)
        .map(|p| -p)
        .ok_or_else(|| Error::invalid(format!("label {label} outside {} classes", probs.len())))
}

/// Negated mean probability over the ground-truth relations.
pub fn relation_match_cost(probs: &[f64], gt_relations: &[usize]) -> Result<f64> {
    if gt_relations.is_empty() {
        return Err(Error::invalid("empty ground-truth relation set"));
    }
    let mut sum = 0.0;
    for &r in gt_relations {
        sum += probs
            .get(r)
            .ok_or_else(|| Error::invalid(format!("relation {r} outside {}", probs.len())))?;
    }
    Ok(-sum / gt_relations.len() as f64)
}

/// Weighted composite cost
/// `η_b (C_sb + C_ob + C_rb) + η_o C_o + η_r C_r` for every
/// (prediction, ground truth) pair. `C_o` sums the subject and object label
/// costs; subject-fixed mode drops `C_sb` and the subject half of `C_o`.
pub fn build_cost_matrix<P: PredictionView + ?Sized>(
    pred: &P,
    gt: &FrameAnnotation,
    opts: &CostOptions,
) -> Result<CostMatrix> {
    let n_q = pred.num_queries();
    let n_gt = gt.len();
    let w = opts.weights;
    let regions = if opts.skip_relation_region {
        Vec::new()
    } else {
        gt.triplets
            .iter()
            .map(|t| relation_region(&t.subject_box, &t.object_box, opts.region))
            .collect::<Result<Vec<_>>>()?
    };
    let mut data = Vec::with_capacity(n_q * n_gt);
    for q in 0..n_q {
        let ob = pred.object_box(q);
        let op = pred.object_probs(q);
        let rp = pred.relation_probs(q);
        let (sb, sp) = if opts.subject_fixed {
            (None, None)
        } else {
            (Some(pred.subject_box(q)), Some(pred.subject_probs(q)))
        };
        let rb = (!opts.skip_relation_region).then(|| pred.relation_box(q));
        for (j, t) in gt.triplets.iter().enumerate() {
            let mut boxes = box_match_cost(&ob, &t.object_box);
            let mut class = class_match_cost(op, t.object_label)?;
            if let (Some(sb), Some(sp)) = (sb, sp) {
                boxes += box_match_cost(&sb, &t.subject_box);
                class += class_match_cost(sp, t.subject_label)?;
            }
            if let Some(rb) = rb {
                boxes += box_match_cost(&rb, &regions[j]);
            }
            let rel = relation_match_cost(rp, &t.relations)?;
            data.push(w.boxes * boxes + w.class * class + w.relation * rel);
        }
    }
    CostMatrix::new(n_q, n_gt, data)
}

/// Minimum-cost injective assignment of every ground truth to a distinct
/// prediction (shortest augmenting paths with potentials, O(n_gt² · n_pred)).
/// Among equal-cost alternatives the lower prediction index wins.
pub fn hungarian(cost: &CostMatrix) -> Result<Assignment> {
    let n = cost.n_gt;
    let m = cost.n_pred;
    if n > m {
        return Err(Error::invalid(format!(
            "{n} ground truths cannot be matched to {m} predictions"
        )));
    }
    if n == 0 {
        return Ok(Assignment::default());
    }
    // rows = ground truths (1-based), columns = predictions (1-based)
    let a = |i: usize, j: usize| cost.get(j - 1, i - 1);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| (j - 1, p[j] - 1))
        .collect();
    pairs.sort_by_key(|&(_, g)| g);
    Ok(Assignment { pairs })
}

/// Exhaustive search over all injective assignments; the test oracle for
/// [`hungarian`].
pub fn brute_force_match(cost: &CostMatrix) -> Result<Assignment> {
    let n = cost.n_gt;
    let m = cost.n_pred;
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            n_gt: n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if n > m {
        return Err(Error::invalid(format!(
            "{n} ground truths cannot be matched to {m} predictions"
        )));
    }

    fn search(
        cost: &CostMatrix,
        gt: usize,
        used: &mut [bool],
        current: &mut Vec<usize>,
        partial: f64,
        best: &mut (f64, Vec<usize>),
    ) {
        if gt == cost.n_gt {
            if partial < best.0 {
                *best = (partial, current.clone());
            }
            return;
        }
        for pred in 0..cost.n_pred {
            if used[pred] {
                continue;
            }
            used[pred] = true;
            current.push(pred);
            search(cost, gt + 1, used, current, partial + cost.get(pred, gt), best);
            current.pop();
            used[pred] = false;
        }
    }

    let mut best = (f64::INFINITY, Vec::new());
    search(cost, 0, &mut vec![false; m], &mut Vec::new(), 0.0, &mut best);
    Ok(Assignment {
        pairs: best.1.into_iter().enumerate().map(|(g, p)| (p, g)).collect(),
    })
}
