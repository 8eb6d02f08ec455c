#![allow(dead_code)]

use std::cell::RefCell;

use dds_core::dataset::{FrameAnnotation, Triplet};
use dds_core::geometry::BBox;
use dds_core::prediction::{PredictionSet, PredictionView};
use dds_core::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box(r: &mut ChaCha8Rng) -> BBox {
    let w = r.random_range(0.05..0.5);
    let h = r.random_range(0.05..0.5);
    let cx = r.random_range(w / 2.0..1.0 - w / 2.0);
    let cy = r.random_range(h / 2.0..1.0 - h / 2.0);
    BBox::new(cx, cy, w, h).unwrap()
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-scale..scale)).collect())
}

fn box_rows(r: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, 4);
    for q in 0..n {
        m.row_mut(q).copy_from_slice(&random_box(r).to_array());
    }
    m
}

pub fn random_prediction(r: &mut ChaCha8Rng, n_q: usize, n_o: usize, n_r: usize) -> PredictionSet {
    PredictionSet::from_logits(
        box_rows(r, n_q),
        box_rows(r, n_q),
        box_rows(r, n_q),
        random_matrix(r, n_q, n_o + 1, 3.0),
        random_matrix(r, n_q, n_o + 1, 3.0),
        random_matrix(r, n_q, n_r, 3.0),
    )
}

pub fn random_triplet(r: &mut ChaCha8Rng, n_o: usize, n_r: usize) -> Triplet {
    let k = r.random_range(1..=n_r.min(3));
    let mut rels: Vec<usize> = (0..n_r).collect();
    for i in 0..k {
        let j = r.random_range(i..n_r);
        rels.swap(i, j);
    }
    let mut relations = rels[..k].to_vec();
    relations.sort();
    Triplet {
        subject_box: random_box(r),
        subject_label: r.random_range(0..n_o),
        object_box: random_box(r),
        object_label: r.random_range(0..n_o),
        relations,
    }
}

pub fn random_frame(r: &mut ChaCha8Rng, n: usize, n_o: usize, n_r: usize) -> FrameAnnotation {
    FrameAnnotation::new((0..n).map(|_| random_triplet(r, n_o, n_r)).collect())
}

/// Wraps a view and records which outputs are read.
pub struct Spy<'a> {
    pub inner: &'a PredictionSet,
    pub reads: RefCell<Vec<&'static str>>,
}

impl<'a> Spy<'a> {
    pub fn new(inner: &'a PredictionSet) -> Self {
        Spy {
            inner,
            reads: RefCell::new(Vec::new()),
        }
    }

    pub fn read(&self, what: &str) -> bool {
        self.reads.borrow().iter().any(|r| *r == what)
    }
}

impl PredictionView for Spy<'_> {
    fn num_queries(&self) -> usize {
        self.inner.num_queries()
    }
    fn num_object_classes(&self) -> usize {
        self.inner.num_object_classes()
    }
    fn num_relations(&self) -> usize {
        self.inner.num_relations()
    }
    fn subject_box(&self, q: usize) -> BBox {
        self.reads.borrow_mut().push("subject_box");
        self.inner.subject_box(q)
    }
    fn object_box(&self, q: usize) -> BBox {
        self.reads.borrow_mut().push("object_box");
        self.inner.object_box(q)
    }
    fn relation_box(&self, q: usize) -> BBox {
        self.reads.borrow_mut().push("relation_box");
        self.inner.relation_box(q)
    }
    fn subject_probs(&self, q: usize) -> &[f64] {
        self.reads.borrow_mut().push("subject_probs");
        self.inner.subject_probs(q)
    }
    fn object_probs(&self, q: usize) -> &[f64] {
        self.reads.borrow_mut().push("object_probs");
        self.inner.object_probs(q)
    }
    fn relation_probs(&self, q: usize) -> &[f64] {
        self.reads.borrow_mut().push("relation_probs");
        self.inner.relation_probs(q)
    }
}

pub mod scenario;
