use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Graph, ParamId, Var};
use crate::tensor::Matrix;

/// Optimizer groups with independent learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Transformer,
}

/// Flat registry of every trainable tensor of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    values: Vec<Matrix>,
    names: Vec<String>,
    groups: Vec<ParamGroup>,
}

impl ParamStore {
    pub(crate) fn new() -> Self {
        ParamStore {
            values: Vec::new(),
            names: Vec::new(),
            groups: Vec::new(),
        }
    }

    pub(crate) fn add(&mut self, name: String, group: ParamGroup, value: Matrix) -> ParamId {
        self.values.push(value);
        self.names.push(name);
        self.groups.push(group);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.groups[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// All parameters concatenated in registration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|m| m.data().iter().copied()).collect()
    }

    /// Inverse of [`ParamStore::flatten`]; returns false on length mismatch.
    pub fn load_flat(&mut self, flat: &[f64]) -> bool {
        if flat.len() != self.scalar_count() {
            return false;
        }
        let mut off = 0;
        for m in &mut self.values {
            let n = m.len();
            m.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        true
    }
}

/// Registers parameters with deterministic initial values.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    pub group: ParamGroup,
}

impl Init<'_> {
    /// Xavier-uniform `rows × cols`.
    pub fn xavier(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        self.store.add(name, self.group, Matrix::from_vec(rows, cols, data))
    }

    pub fn normal(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| StandardNormal.sample(&mut *self.rng))
            .collect();
        self.store.add(name, self.group, Matrix::from_vec(rows, cols, data))
    }

    pub fn constant(&mut self, name: String, rows: usize, cols: usize, v: f64) -> ParamId {
        self.store.add(name, self.group, Matrix::filled(rows, cols, v))
    }
}

/// A graph under construction plus the parameter values it reads. Each
/// parameter enters the graph once, however often it is used.
pub struct Ctx<'a> {
    pub g: &'a mut Graph,
    store: &'a ParamStore,
    cache: Vec<Option<Var>>,
}

impl<'a> Ctx<'a> {
    pub fn new(g: &'a mut Graph, store: &'a ParamStore) -> Self {
        Ctx {
            g,
            store,
            cache: vec![None; store.len()],
        }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.cache[id.0] {
            return v;
        }
        let v = self.g.param(id, self.store.get(id));
        self.cache[id.0] = Some(v);
        v
    }
}
