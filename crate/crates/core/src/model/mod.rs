//! The dual-branch spatio-temporal scene-graph network.
//!
//! A strided convolutional backbone turns each frame into a token map with
//! a fixed sinusoidal positional embedding. A relation encoder and an
//! object encoder re-encode that map independently. Each branch owns a set
//! of learnable queries which first attend to the previous frame's output
//! embeddings (temporal decoder) and then to the branch's encoded map
//! (spatial decoder). Object embeddings feed subject/object box and class
//! heads; relation embeddings feed relation-class and relation-region heads.

mod checkpoint;
mod config;
mod layers;
mod params;

pub use checkpoint::{config_diff, load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use config::{BranchLayout, ModelConfig, QuerySharing};
pub use params::{Ctx, ParamGroup, ParamStore};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamId, Var};
use crate::criterion::HeadVars;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::prediction::PredictionSet;
use crate::tensor::Matrix;

use layers::{DecoderLayer, EncoderLayer, Linear, Mlp, TemporalLayer};
use params::Init;

/// Backbone output: `height · width` tokens of width `d` with the
/// positional embedding already added.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub tokens: Matrix,
    pub height: usize,
    pub width: usize,
}

/// Decoder outputs of one frame, handed to the next frame's temporal
/// decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub relation: Matrix,
    pub object: Matrix,
    pub frame: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    Relation,
    Object,
}

/// Object-head outputs for `n_q` queries.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectHeadOutput {
    pub subject_boxes: Matrix,
    pub object_boxes: Matrix,
    pub subject_probs: Matrix,
    pub object_probs: Matrix,
}

/// Relation-head outputs for `n_q` queries.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationHeadOutput {
    pub relation_probs: Matrix,
    pub relation_boxes: Matrix,
}

/// Graph nodes produced for one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameVars {
    pub heads: HeadVars,
    pub relation_embeddings: Var,
    pub object_embeddings: Var,
}

#[derive(Debug, Clone)]
struct Branch {
    queries: ParamId,
    query_pos: ParamId,
    temporal: Vec<TemporalLayer>,
    decoder: Vec<DecoderLayer>,
}

#[derive(Debug, Clone)]
struct Heads {
    subject_box: Mlp,
    object_box: Mlp,
    subject_class: Linear,
    object_class: Linear,
    relation_class: Linear,
    relation_box: Mlp,
}

#[derive(Debug, Clone)]
pub struct Dds {
    config: ModelConfig,
    store: ParamStore,
    stages: Vec<Linear>,
    input_proj: Linear,
    object_encoder: Vec<EncoderLayer>,
    relation_encoder: Option<Vec<EncoderLayer>>,
    object_branch: Branch,
    relation_branch: Option<Branch>,
    heads: Heads,
    pos_embed: Matrix,
}

impl Dds {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let (heads, hidden) = (config.num_heads, config.ffn_dim);

        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
            group: ParamGroup::Backbone,
        };
        let mut c_in = config.image_channels;
        let mut stages = Vec::new();
        for (i, &c_out) in config.backbone_channels.iter().enumerate() {
            stages.push(Linear::new(&mut init, &format!("backbone.stage{i}"), 4 * c_in, c_out));
            c_in = c_out;
        }
        init.group = ParamGroup::Transformer;
        let input_proj = Linear::new(&mut init, "input_proj", c_in, d);

        let encoder = |init: &mut Init<'_>, name: &str| -> Vec<EncoderLayer> {
            (0..config.encoder_layers)
                .map(|i| EncoderLayer::new(init, &format!("{name}.{i}"), d, heads, hidden))
                .collect()
        };
        let object_encoder = encoder(&mut init, "encoder.object");
        let relation_encoder = (config.layout == BranchLayout::Decoupled)
            .then(|| encoder(&mut init, "encoder.relation"));

        let branch = |init: &mut Init<'_>, name: &str, depth: usize| -> Branch {
            Branch {
                queries: init.normal(format!("{name}.queries"), config.num_queries, d),
                query_pos: init.normal(format!("{name}.query_pos"), config.num_queries, d),
                temporal: (0..config.temporal_layers)
                    .map(|i| TemporalLayer::new(init, &format!("{name}.temporal.{i}"), d, heads, hidden))
                    .collect(),
                decoder: (0..depth)
                    .map(|i| DecoderLayer::new(init, &format!("{name}.decoder.{i}"), d, heads, hidden))
                    .collect(),
            }
        };
        let object_branch = branch(&mut init, "branch.object", config.object_decoder_layers);
        let relation_branch = (config.layout != BranchLayout::Single)
            .then(|| branch(&mut init, "branch.relation", config.relation_decoder_layers));

        let n_cls = config.num_objects + 1;
        let heads = Heads {
            subject_box: Mlp::new(&mut init, "head.subject_box", d, 4, 3),
            object_box: Mlp::new(&mut init, "head.object_box", d, 4, 3),
            subject_class: Linear::new(&mut init, "head.subject_class", d, n_cls),
            object_class: Linear::new(&mut init, "head.object_class", d, n_cls),
            relation_class: Linear::new(&mut init, "head.relation_class", d, config.num_relations),
            relation_box: Mlp::new(&mut init, "head.relation_box", d, 4, 3),
        };
        let pos_embed = sine_position_embedding(config.feature_height(), config.feature_width(), d);

        Ok(Dds {
            config,
            store,
            stages,
            input_proj,
            object_encoder,
            relation_encoder,
            object_branch,
            relation_branch,
            heads,
            pos_embed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Fixed positional embedding added to the backbone tokens.
    pub fn position_embedding(&self) -> &Matrix {
        &self.pos_embed
    }

    fn branch(&self, kind: BranchKind) -> &Branch {
        match kind {
            BranchKind::Object => &self.object_branch,
            BranchKind::Relation => self.relation_branch.as_ref().unwrap_or(&self.object_branch),
        }
    }

    /// Learnable queries of a branch (`n_q × d`).
    pub fn queries(&self, kind: BranchKind) -> &Matrix {
        self.store.get(self.branch(kind).queries)
    }

    pub fn query_param(&self, kind: BranchKind) -> ParamId {
        self.branch(kind).queries
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let c = &self.config;
        if image.channels != c.image_channels {
            return Err(Error::config(format!(
                "frame has {} channels, model expects {}",
                image.channels, c.image_channels
            )));
        }
        if image.height != c.image_height || image.width != c.image_width {
            return Err(Error::config(format!(
                "frame is {}x{}, model expects {}x{}",
                image.height, image.width, c.image_height, c.image_width
            )));
        }
        Ok(())
    }

    // ---- graph-level pieces -------------------------------------------

    fn features_var(&self, ctx: &mut Ctx<'_>, image: &Image) -> Var {
        let mut x = ctx.g.constant(image.to_tokens());
        let (mut h, mut w) = (image.height, image.width);
        for stage in &self.stages {
            let p = ctx.g.patches(x, h, w, 2);
            let y = stage.forward(ctx, p);
            x = ctx.g.gelu(y);
            h /= 2;
            w /= 2;
        }
        let proj = self.input_proj.forward(ctx, x);
        let pos = ctx.g.constant(self.pos_embed.clone());
        ctx.g.add(proj, pos)
    }

    fn encoder_var(layers: &[EncoderLayer], ctx: &mut Ctx<'_>, f: Var) -> Var {
        layers.iter().fold(f, |x, l| l.forward(ctx, x))
    }

    /// `(relation memory, object memory)`.
    fn encode_var(&self, ctx: &mut Ctx<'_>, f: Var) -> (Var, Var) {
        let o = Self::encoder_var(&self.object_encoder, ctx, f);
        let r = match &self.relation_encoder {
            Some(layers) => Self::encoder_var(layers, ctx, f),
            None => o,
        };
        (r, o)
    }

    fn temporal_var(&self, ctx: &mut Ctx<'_>, kind: BranchKind, queries: Var, prev: Option<Var>) -> Var {
        match prev {
            None => queries,
            Some(prev) => self
                .branch(kind)
                .temporal
                .iter()
                .fold(queries, |x, l| l.forward(ctx, x, prev)),
        }
    }

    fn spatial_var(&self, ctx: &mut Ctx<'_>, kind: BranchKind, memory: Var, aggregated: Var) -> Var {
        let b = self.branch(kind);
        let pos = ctx.p(b.query_pos);
        b.decoder
            .iter()
            .fold(aggregated, |x, l| l.forward(ctx, x, pos, memory))
    }

    fn branch_var(
        &self,
        ctx: &mut Ctx<'_>,
        kind: BranchKind,
        memory: Var,
        queries: Var,
        prev: Option<Var>,
    ) -> Var {
        let a = self.temporal_var(ctx, kind, queries, prev);
        self.spatial_var(ctx, kind, memory, a)
    }

    fn heads_var(&self, ctx: &mut Ctx<'_>, object_emb: Var, relation_emb: Var) -> HeadVars {
        let h = &self.heads;
        let sb = h.subject_box.forward(ctx, object_emb);
        let ob = h.object_box.forward(ctx, object_emb);
        let rb = h.relation_box.forward(ctx, relation_emb);
        HeadVars {
            subject_boxes: ctx.g.sigmoid(sb),
            object_boxes: ctx.g.sigmoid(ob),
            relation_boxes: ctx.g.sigmoid(rb),
            subject_logits: h.subject_class.forward(ctx, object_emb),
            object_logits: h.object_class.forward(ctx, object_emb),
            relation_logits: h.relation_class.forward(ctx, relation_emb),
        }
    }

    /// Records one frame. `prev` holds the previous frame's
    /// `(relation, object)` embeddings, `None` on the first frame.
    pub fn forward_frame_var(
        &self,
        ctx: &mut Ctx<'_>,
        image: &Image,
        prev: Option<(Var, Var)>,
    ) -> Result<FrameVars> {
        self.check_image(image)?;
        let f = self.features_var(ctx, image);
        let (r_mem, o_mem) = self.encode_var(ctx, f);
        let (prev_r, prev_o) = match prev {
            Some((r, o)) => (Some(r), Some(o)),
            None => (None, None),
        };
        let (r_emb, o_emb) = if self.relation_branch.is_none() {
            let q = ctx.p(self.object_branch.queries);
            let e = self.branch_var(ctx, BranchKind::Object, o_mem, q, prev_o);
            (e, e)
        } else {
            match self.config.query_sharing {
                QuerySharing::None => {
                    let oq = ctx.p(self.object_branch.queries);
                    let o = self.branch_var(ctx, BranchKind::Object, o_mem, oq, prev_o);
                    let rq = ctx.p(self.branch(BranchKind::Relation).queries);
                    let r = self.branch_var(ctx, BranchKind::Relation, r_mem, rq, prev_r);
                    (r, o)
                }
                QuerySharing::ObjectToRelation => {
                    let oq = ctx.p(self.object_branch.queries);
                    let o = self.branch_var(ctx, BranchKind::Object, o_mem, oq, prev_o);
                    let r = self.branch_var(ctx, BranchKind::Relation, r_mem, o, prev_r);
                    (r, o)
                }
                QuerySharing::RelationToObject => {
                    let rq = ctx.p(self.branch(BranchKind::Relation).queries);
                    let r = self.branch_var(ctx, BranchKind::Relation, r_mem, rq, prev_r);
                    let o = self.branch_var(ctx, BranchKind::Object, o_mem, r, prev_o);
                    (r, o)
                }
            }
        };
        let heads = self.heads_var(ctx, o_emb, r_emb);
        Ok(FrameVars {
            heads,
            relation_embeddings: r_emb,
            object_embeddings: o_emb,
        })
    }

    /// Embeddings handed to the next frame, cut from the graph unless
    /// temporal backpropagation is enabled.
    pub fn carry(&self, g: &mut Graph, frame: &FrameVars) -> (Var, Var) {
        if self.config.temporal_backprop {
            (frame.relation_embeddings, frame.object_embeddings)
        } else {
            let r = g.detach(frame.relation_embeddings);
            let o = if frame.object_embeddings == frame.relation_embeddings {
                r
            } else {
                g.detach(frame.object_embeddings)
            };
            (r, o)
        }
    }

    // ---- value-level operations ---------------------------------------

    pub fn backbone_extract(&self, image: &Image) -> Result<FeatureMap> {
        self.check_image(image)?;
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &self.store);
        let f = self.features_var(&mut ctx, image);
        Ok(FeatureMap {
            tokens: g.value(f).clone(),
            height: self.config.feature_height(),
            width: self.config.feature_width(),
        })
    }

    /// `(relation-encoded, object-encoded)` feature maps.
    pub fn encode(&self, f: &FeatureMap) -> Result<(FeatureMap, FeatureMap)> {
        if f.tokens.cols() != self.config.d_model || f.tokens.rows() != f.height * f.width {
            return Err(Error::invalid("feature map shape does not match the model"));
        }
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &self.store);
        let x = ctx.g.constant(f.tokens.clone());
        let (r, o) = self.encode_var(&mut ctx, x);
        let wrap = |v: Var| FeatureMap {
            tokens: g.value(v).clone(),
            height: f.height,
            width: f.width,
        };
        Ok((wrap(r), wrap(o)))
    }

    fn check_embeddings(&self, m: &Matrix, what: &str) -> Result<()> {
        let want = (self.config.num_queries, self.config.d_model);
        if m.shape() != want {
            return Err(Error::invalid(format!(
                "{what} has shape {:?}, expected {want:?}",
                m.shape()
            )));
        }
        Ok(())
    }

    /// Aggregates `queries` with the previous frame's embeddings; on the
    /// first frame (`prev == None`) the queries pass through unchanged.
    pub fn temporal_decode(&self, kind: BranchKind, queries: &Matrix, prev: Option<&Matrix>) -> Result<Matrix> {
        self.check_embeddings(queries, "queries")?;
        let Some(prev) = prev else {
            return Ok(queries.clone());
        };
        self.check_embeddings(prev, "previous embeddings")?;
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &self.store);
        let q = ctx.g.constant(queries.clone());
        let p = ctx.g.constant(prev.clone());
        let out = self.temporal_var(&mut ctx, kind, q, Some(p));
        Ok(g.value(out).clone())
    }

    pub fn spatial_decode(&self, kind: BranchKind, encoded: &FeatureMap, aggregated: &Matrix) -> Result<Matrix> {
        self.check_embeddings(aggregated, "aggregated queries")?;
        if encoded.tokens.cols() != self.config.d_model {
            return Err(Error::invalid("encoded map width does not match d_model"));
        }
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &self.store);
        let m = ctx.g.constant(encoded.tokens.clone());
        let a = ctx.g.constant(aggregated.clone());
        let out = self.spatial_var(&mut ctx, kind, m, a);
        Ok(g.value(out).clone())
    }

    pub fn object_head(&self, embeddings: &Matrix) -> Result<ObjectHeadOutput> {
        self.check_embeddings(embeddings, "object embeddings")?;
        let p = self.heads_from_values(embeddings, embeddings);
        Ok(ObjectHeadOutput {
            subject_boxes: p.subject_boxes,
            object_boxes: p.object_boxes,
            subject_probs: p.subject_probs,
            object_probs: p.object_probs,
        })
    }

    pub fn relation_head(&self, embeddings: &Matrix) -> Result<RelationHeadOutput> {
        self.check_embeddings(embeddings, "relation embeddings")?;
        let p = self.heads_from_values(embeddings, embeddings);
        Ok(RelationHeadOutput {
            relation_probs: p.relation_probs,
            relation_boxes: p.relation_boxes,
        })
    }

    fn heads_from_values(&self, object_emb: &Matrix, relation_emb: &Matrix) -> PredictionSet {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, &self.store);
        let o = ctx.g.constant(object_emb.clone());
        let r = ctx.g.constant(relation_emb.clone());
        let h = self.heads_var(&mut ctx, o, r);
        prediction_from_vars(&g, &h)
    }

    /// Runs a video frame by frame and returns each frame's predictions and
    /// output embeddings.
    pub fn forward_video_with_embeddings(&self, frames: &[Image]) -> Result<Vec<(PredictionSet, EmbeddingSet)>> {
        if frames.is_empty() {
            return Err(Error::invalid("empty frame sequence"));
        }
        let mut out = Vec::with_capacity(frames.len());
        let mut prev: Option<EmbeddingSet> = None;
        for (t, image) in frames.iter().enumerate() {
            // one graph per frame: inference never backpropagates
            let mut g = Graph::new();
            let mut ctx = Ctx::new(&mut g, &self.store);
            let carried = prev.as_ref().map(|e| {
                let r = ctx.g.constant(e.relation.clone());
                let o = ctx.g.constant(e.object.clone());
                (r, o)
            });
            let fv = self.forward_frame_var(&mut ctx, image, carried)?;
            let pred = prediction_from_vars(&g, &fv.heads);
            let emb = EmbeddingSet {
                relation: g.value(fv.relation_embeddings).clone(),
                object: g.value(fv.object_embeddings).clone(),
                frame: t,
            };
            prev = Some(emb.clone());
            out.push((pred, emb));
        }
        Ok(out)
    }

    pub fn forward_video(&self, frames: &[Image]) -> Result<Vec<PredictionSet>> {
        Ok(self
            .forward_video_with_embeddings(frames)?
            .into_iter()
            .map(|(p, _)| p)
            .collect())
    }
}

pub fn prediction_from_vars(g: &Graph, h: &HeadVars) -> PredictionSet {
    PredictionSet::from_logits(
        g.value(h.subject_boxes).clone(),
        g.value(h.object_boxes).clone(),
        g.value(h.relation_boxes).clone(),
        g.value(h.subject_logits).clone(),
        g.value(h.object_logits).clone(),
        g.value(h.relation_logits).clone(),
    )
}

/// 2-D sine/cosine embedding over an `h × w` grid: the first `d/2`
/// channels encode the row, the rest the column, with normalized
/// coordinates scaled to `2π` and temperature 10000.
pub fn sine_position_embedding(h: usize, w: usize, d: usize) -> Matrix {
    let npf = d / 2;
    let scale = 2.0 * std::f64::consts::PI;
    let eps = 1e-6;
    let dim_t: Vec<f64> = (0..npf)
        .map(|i| 10000f64.powf(2.0 * (i / 2) as f64 / npf as f64))
        .collect();
    let mut m = Matrix::zeros(h * w, d);
    for y in 0..h {
        for x in 0..w {
            let ye = (y + 1) as f64 / (h as f64 + eps) * scale;
            let xe = (x + 1) as f64 / (w as f64 + eps) * scale;
            let row = m.row_mut(y * w + x);
            for i in 0..npf {
                let (vy, vx) = (ye / dim_t[i], xe / dim_t[i]);
                if i % 2 == 0 {
                    row[i] = vy.sin();
                    row[npf + i] = vx.sin();
                } else {
                    row[i] = vy.cos();
                    row[npf + i] = vx.cos();
                }
            }
        }
    }
    m
}
