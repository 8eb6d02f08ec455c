//! Set-prediction training loss over matched prediction/ground-truth pairs.
//!
//! Matched queries are supervised on subject, object and relation-region
//! boxes (L1 + gIoU), on subject/object classes (cross-entropy) and on the
//! multi-hot relation vector (binary cross-entropy). Unmatched queries are
//! pushed toward the no-triplet class and an all-zero relation vector.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::dataset::{FrameAnnotation, Triplet};
use crate::error::{Error, Result};
use crate::geometry::{relation_region, RegionMode};
use crate::matching::Assignment;
use crate::prediction::PredictionSet;
use crate::tensor::Matrix;

/// `λ_g`, `λ_l`, `λ_o`, `λ_r`; defaults follow the usual DETR-family
/// settings rather than any value stated for this model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossCoefficients {
    pub giou: f64,
    pub l1: f64,
    pub obj: f64,
    pub rel: f64,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        LossCoefficients {
            giou: 1.0,
            l1: 2.5,
            obj: 1.0,
            rel: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub coeffs: LossCoefficients,
    /// Weight of no-triplet cross-entropy terms.
    pub no_object_weight: f64,
    pub region: RegionMode,
    /// Train the relation-region head.
    pub relation_region: bool,
    pub subject_fixed: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            coeffs: LossCoefficients::default(),
            no_object_weight: 0.1,
            region: RegionMode::Union,
            relation_region: true,
            subject_fixed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_giou: f64,
    pub l_l1: f64,
    pub l_obj: f64,
    pub l_rel: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add_assign(&mut self, other: &LossBreakdown) {
        self.l_giou += other.l_giou;
        self.l_l1 += other.l_l1;
        self.l_obj += other.l_obj;
        self.l_rel += other.l_rel;
        self.total += other.total;
    }

    pub fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            l_giou: self.l_giou * s,
            l_l1: self.l_l1 * s,
            l_obj: self.l_obj * s,
            l_rel: self.l_rel * s,
            total: self.total * s,
        }
    }
}

/// A ground-truth slot after padding to the query count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PaddedTarget<'a> {
    Triplet(&'a Triplet),
    NoTriplet,
}

pub fn pad_ground_truth(gt: &FrameAnnotation, n_q: usize) -> Result<Vec<PaddedTarget<'_>>> {
    if gt.len() > n_q {
        return Err(Error::Capacity {
            needed: gt.len(),
            capacity: n_q,
        });
    }
    let mut out: Vec<_> = gt.triplets.iter().map(PaddedTarget::Triplet).collect();
    out.resize(n_q, PaddedTarget::NoTriplet);
    Ok(out)
}

/// Graph nodes of one frame's head outputs. Boxes are `n_q × 4` sigmoid
/// outputs in center form; logits are pre-softmax / pre-sigmoid.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub subject_boxes: Var,
    pub object_boxes: Var,
    pub relation_boxes: Var,
    pub subject_logits: Var,
    pub object_logits: Var,
    pub relation_logits: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub l_giou: Var,
    pub l_l1: Var,
    pub l_obj: Var,
    pub l_rel: Var,
}

impl LossVars {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        LossBreakdown {
            l_giou: g.scalar(self.l_giou),
            l_l1: g.scalar(self.l_l1),
            l_obj: g.scalar(self.l_obj),
            l_rel: g.scalar(self.l_rel),
            total: g.scalar(self.total),
        }
    }
}

fn box_matrix(rows: impl Iterator<Item = [f64; 4]>) -> Matrix {
    let data: Vec<f64> = rows.flat_map(|r| r.into_iter()).collect();
    Matrix::from_vec(data.len() / 4, 4, data)
}

/// Records the loss of one frame on `g`.
pub fn loss_on_graph(
    g: &mut Graph,
    heads: &HeadVars,
    gt: &FrameAnnotation,
    assignment: &Assignment,
    cfg: &LossConfig,
) -> Result<LossVars> {
    let n_q = g.value(heads.object_logits).rows();
    let num_classes = g.value(heads.object_logits).cols();
    let no_object = num_classes - 1;
    let n_rel = g.value(heads.relation_logits).cols();
    assignment.validate(n_q, gt.len())?;
    let per_query = assignment.by_prediction(n_q);
    let padded = pad_ground_truth(gt, n_q)?;

    let norm = gt.len().max(1) as f64;
    let mut l1_terms = Vec::new();
    let mut giou_terms = Vec::new();
    if !assignment.pairs.is_empty() {
        let preds: Vec<usize> = assignment.pairs.iter().map(|&(p, _)| p).collect();
        let targets: Vec<&Triplet> = assignment
            .pairs
            .iter()
            .map(|&(_, j)| match padded[j] {
                PaddedTarget::Triplet(t) => Ok(t),
                PaddedTarget::NoTriplet => Err(Error::invalid("assignment hits padding")),
            })
            .collect::<Result<_>>()?;
        let mut groups: Vec<(Var, Matrix)> = Vec::with_capacity(3);
        if !cfg.subject_fixed {
            let t = box_matrix(targets.iter().map(|t| t.subject_box.to_array()));
            groups.push((heads.subject_boxes, t));
        }
        let t = box_matrix(targets.iter().map(|t| t.object_box.to_array()));
        groups.push((heads.object_boxes, t));
        if cfg.relation_region {
            let regions = targets
                .iter()
                .map(|t| relation_region(&t.subject_box, &t.object_box, cfg.region).map(|b| b.to_array()))
                .collect::<Result<Vec<_>>>()?;
            groups.push((heads.relation_boxes, box_matrix(regions.into_iter())));
        }
        for (var, target) in groups {
            let picked = g.gather_rows(var, &preds);
            l1_terms.push((g.l1(picked, target.clone(), norm), 1.0));
            giou_terms.push((g.giou_loss(picked, target, norm), 1.0));
        }
    }
    let l_l1 = g.weighted_sum(&l1_terms);
    let l_giou = g.weighted_sum(&giou_terms);

    let mut weights = Vec::with_capacity(n_q);
    let mut obj_targets = Vec::with_capacity(n_q);
    let mut sub_targets = Vec::with_capacity(n_q);
    let mut rel_targets = Matrix::zeros(n_q, n_rel);
    for (q, m) in per_query.iter().enumerate() {
        match m.map(|j| padded[j]) {
            Some(PaddedTarget::Triplet(t)) => {
                weights.push(1.0);
                obj_targets.push(t.object_label);
                sub_targets.push(t.subject_label);
                for &r in &t.relations {
                    rel_targets.set(q, r, 1.0);
                }
            }
            _ => {
                weights.push(cfg.no_object_weight);
                obj_targets.push(no_object);
                sub_targets.push(no_object);
            }
        }
    }
    let weight_sum: f64 = weights.iter().sum();
    let mut obj_terms = vec![(
        g.cross_entropy(heads.object_logits, &obj_targets, &weights, weight_sum),
        1.0,
    )];
    if !cfg.subject_fixed {
        obj_terms.push((
            g.cross_entropy(heads.subject_logits, &sub_targets, &weights, weight_sum),
            1.0,
        ));
    }
    let l_obj = g.weighted_sum(&obj_terms);
    let l_rel = g.bce_with_logits(heads.relation_logits, rel_targets, n_q as f64);

    let c = cfg.coeffs;
    let total = g.weighted_sum(&[
        (l_giou, c.giou),
        (l_l1, c.l1),
        (l_obj, c.obj),
        (l_rel, c.rel),
    ]);
    Ok(LossVars {
        total,
        l_giou,
        l_l1,
        l_obj,
        l_rel,
    })
}

/// Loss of a materialized prediction set under a fixed assignment.
pub fn compute_loss(
    pred: &PredictionSet,
    gt: &FrameAnnotation,
    assignment: &Assignment,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let heads = HeadVars {
        subject_boxes: g.constant(pred.subject_boxes.clone()),
        object_boxes: g.constant(pred.object_boxes.clone()),
        relation_boxes: g.constant(pred.relation_boxes.clone()),
        subject_logits: g.constant(pred.subject_logits.clone()),
        object_logits: g.constant(pred.object_logits.clone()),
        relation_logits: g.constant(pred.relation_logits.clone()),
    };
    Ok(loss_on_graph(&mut g, &heads, gt, assignment, cfg)?.breakdown(&g))
}
