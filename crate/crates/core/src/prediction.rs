//! Per-frame raw head outputs.

use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, softmax_in_place};
use crate::geometry::BBox;
use crate::tensor::Matrix;

/// Read access to one frame of head outputs. Matching, losses and triplet
/// composition only go through this trait, which lets tests observe exactly
/// which outputs a routine touches.
pub trait PredictionView {
    fn num_queries(&self) -> usize;
    /// Real object classes; the no-triplet class sits at this index.
    fn num_object_classes(&self) -> usize;
    fn num_relations(&self) -> usize;
    fn subject_box(&self, q: usize) -> BBox;
    fn object_box(&self, q: usize) -> BBox;
    fn relation_box(&self, q: usize) -> BBox;
    /// Distribution over `num_object_classes() + 1` classes.
    fn subject_probs(&self, q: usize) -> &[f64];
    fn object_probs(&self, q: usize) -> &[f64];
    /// Independent per-relation probabilities.
    fn relation_probs(&self, q: usize) -> &[f64];
}

/// Head outputs for one frame: `n_q` rows each of subject/object/relation
/// boxes (raw sigmoid center form), class logits over `N_o + 1` classes and
/// relation logits over `N_r` relations, with the matching probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub subject_boxes: Matrix,
    pub object_boxes: Matrix,
    pub relation_boxes: Matrix,
    pub subject_logits: Matrix,
    pub object_logits: Matrix,
    pub relation_logits: Matrix,
    pub subject_probs: Matrix,
    pub object_probs: Matrix,
    pub relation_probs: Matrix,
}

impl PredictionSet {
    /// Builds a set from box rows and logits, deriving the probabilities.
    pub fn from_logits(
        subject_boxes: Matrix,
        object_boxes: Matrix,
        relation_boxes: Matrix,
        subject_logits: Matrix,
        object_logits: Matrix,
        relation_logits: Matrix,
    ) -> Self {
        let softmax = |m: &Matrix| {
            let mut p = m.clone();
            for i in 0..p.rows() {
                softmax_in_place(p.row_mut(i));
            }
            p
        };
        PredictionSet {
            subject_probs: softmax(&subject_logits),
            object_probs: softmax(&object_logits),
            relation_probs: relation_logits.map(sigmoid),
            subject_boxes,
            object_boxes,
            relation_boxes,
            subject_logits,
            object_logits,
            relation_logits,
        }
    }
}

fn box_row(m: &Matrix, q: usize) -> BBox {
    let r = m.row(q);
    BBox::from_raw([r[0], r[1], r[2], r[3]])
}

impl PredictionView for PredictionSet {
    fn num_queries(&self) -> usize {
        self.subject_boxes.rows()
    }
    fn num_object_classes(&self) -> usize {
        self.object_logits.cols() - 1
    }
    fn num_relations(&self) -> usize {
        self.relation_logits.cols()
    }
    fn subject_box(&self, q: usize) -> BBox {
        box_row(&self.subject_boxes, q)
    }
    fn object_box(&self, q: usize) -> BBox {
        box_row(&self.object_boxes, q)
    }
    fn relation_box(&self, q: usize) -> BBox {
        box_row(&self.relation_boxes, q)
    }
    fn subject_probs(&self, q: usize) -> &[f64] {
        self.subject_probs.row(q)
    }
    fn object_probs(&self, q: usize) -> &[f64] {
        self.object_probs.row(q)
    }
    fn relation_probs(&self, q: usize) -> &[f64] {
        self.relation_probs.row(q)
    }
}
