//! Per-video loss recording, AdamW and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, ParamId, Var};
use crate::criterion::{loss_on_graph, LossBreakdown, LossConfig, LossVars};
use crate::dataset::FrameAnnotation;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::matching::{build_cost_matrix, hungarian, Assignment, CostOptions, MatchWeights};
use crate::model::{prediction_from_vars, Ctx, Dds, ParamGroup, ParamStore};
use crate::tensor::Matrix;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Optimizer steps to run.
    pub steps: usize,
    pub lr: f64,
    pub backbone_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Both learning rates are multiplied by 0.1 from this step on
    /// (0: never).
    pub lr_drop_step: usize,
    /// Global gradient-norm clip (0: off).
    pub grad_clip: f64,
    /// Videos averaged per optimizer step.
    pub videos_per_step: usize,
    /// Save a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 300,
            lr: 1e-3,
            backbone_lr: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lr_drop_step: 0,
            grad_clip: 1.0,
            videos_per_step: 4,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr", self.lr),
            ("backbone_lr", self.backbone_lr),
            ("weight_decay", self.weight_decay),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in rates {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.videos_per_step == 0 {
            return Err(Error::config("videos_per_step must be at least 1"));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::config(format!("grad_clip must be finite and >= 0, got {}", self.grad_clip)));
        }
        Ok(())
    }

    pub fn learning_rate(&self, group: ParamGroup, step: usize) -> f64 {
        let base = match group {
            ParamGroup::Backbone => self.backbone_lr,
            ParamGroup::Transformer => self.lr,
        };
        if self.lr_drop_step > 0 && step >= self.lr_drop_step {
            base * 0.1
        } else {
            base
        }
    }
}

/// One training video: frames and their annotations, same length.
#[derive(Debug, Clone)]
pub struct VideoSample {
    pub id: String,
    pub frames: Vec<Image>,
    pub annotations: Vec<FrameAnnotation>,
}

/// Loss and matching settings aligned with a model's configuration.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub loss: LossConfig,
    pub matching: CostOptions,
}

impl Objective {
    /// Subject-fixed and relation-region switches follow the model config.
    pub fn for_model(model: &Dds, loss: LossConfig, weights: MatchWeights) -> Self {
        let cfg = model.config();
        let loss = LossConfig {
            subject_fixed: cfg.subject_fixed.is_some(),
            relation_region: cfg.relation_region,
            ..loss
        };
        Objective {
            loss,
            matching: CostOptions {
                weights,
                region: loss.region,
                skip_relation_region: !cfg.relation_region,
                subject_fixed: loss.subject_fixed,
            },
        }
    }
}

pub struct VideoLoss {
    /// Mean of the per-frame totals.
    pub total: Var,
    pub frames: Vec<LossVars>,
    pub assignments: Vec<Assignment>,
}

/// Records a whole video on `ctx`, frame after frame. Assignments are
/// computed by Hungarian matching unless `frozen` supplies them.
pub fn record_video_loss(
    model: &Dds,
    ctx: &mut Ctx<'_>,
    video: &VideoSample,
    objective: &Objective,
    frozen: Option<&[Assignment]>,
) -> Result<VideoLoss> {
    if video.frames.is_empty() || video.frames.len() != video.annotations.len() {
        return Err(Error::invalid(format!(
            "video {}: {} frames but {} annotations",
            video.id,
            video.frames.len(),
            video.annotations.len()
        )));
    }
    if let Some(f) = frozen {
        if f.len() != video.frames.len() {
            return Err(Error::invalid("one frozen assignment per frame required"));
        }
    }
    let mut prev = None;
    let mut frames = Vec::with_capacity(video.frames.len());
    let mut assignments = Vec::with_capacity(video.frames.len());
    for (t, (image, gt)) in video.frames.iter().zip(&video.annotations).enumerate() {
        let fv = model.forward_frame_var(ctx, image, prev)?;
        let assignment = match frozen {
            Some(f) => f[t].clone(),
            None => {
                let pred = prediction_from_vars(ctx.g, &fv.heads);
                let cost = build_cost_matrix(&pred, gt, &objective.matching).map_err(|e| match e {
                    // diverged outputs poison the cost matrix before the loss is formed
                    Error::InvalidInput(m) if m.starts_with("non-finite") => Error::Numerical(format!("frame {t}: {m}")),
                    e => e,
                })?;
                hungarian(&cost)?
            }
        };
        frames.push(loss_on_graph(ctx.g, &fv.heads, gt, &assignment, &objective.loss)?);
        assignments.push(assignment);
        prev = Some(model.carry(ctx.g, &fv));
    }
    let w = 1.0 / frames.len() as f64;
    let terms: Vec<(Var, f64)> = frames.iter().map(|l| (l.total, w)).collect();
    let total = ctx.g.weighted_sum(&terms);
    Ok(VideoLoss {
        total,
        frames,
        assignments,
    })
}

/// Mean per-frame loss breakdown of a recorded video.
pub fn video_breakdown(g: &Graph, loss: &VideoLoss) -> LossBreakdown {
    let mut acc = LossBreakdown::default();
    for f in &loss.frames {
        acc.add_assign(&f.breakdown(g));
    }
    acc.scaled(1.0 / loss.frames.len() as f64)
}

/// Loss and parameter gradients of a batch of videos (mean over videos).
pub fn batch_gradients(
    model: &Dds,
    batch: &[&VideoSample],
    objective: &Objective,
) -> Result<(LossBreakdown, Gradients)> {
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, model.params());
    let mut totals = Vec::with_capacity(batch.len());
    let mut parts = Vec::with_capacity(batch.len());
    for v in batch {
        let vl = record_video_loss(model, &mut ctx, v, objective, None)?;
        totals.push((vl.total, 1.0 / batch.len() as f64));
        parts.push(vl);
    }
    let loss = ctx.g.weighted_sum(&totals);
    let mut breakdown = LossBreakdown::default();
    for p in &parts {
        breakdown.add_assign(&video_breakdown(&g, p));
    }
    let breakdown = breakdown.scaled(1.0 / batch.len() as f64);
    if !g.scalar(loss).is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss (giou {}, l1 {}, obj {}, rel {})",
            breakdown.l_giou, breakdown.l_l1, breakdown.l_obj, breakdown.l_rel
        )));
    }
    Ok((breakdown, g.backward(loss)))
}

/// AdamW with decoupled weight decay and per-group learning rates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = store
            .ids()
            .map(|id| {
                let (r, c) = store.get(id).shape();
                Matrix::zeros(r, c)
            })
            .collect();
        AdamW {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update; returns the gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, cfg: &TrainConfig, step: usize) -> Result<f64> {
        let norm = grads.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Numerical(format!("non-finite gradient norm at step {step}")));
        }
        let clip = if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            cfg.grad_clip / norm
        } else {
            1.0
        };
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let lr = cfg.learning_rate(store.group(id), step);
            let p = store.get_mut(id).data_mut();
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let g = grads.get(id).map(Matrix::data);
            for k in 0..p.len() {
                let gk = g.map_or(0.0, |g| g[k] * clip);
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
                let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + cfg.adam_eps);
                p[k] -= lr * (update + cfg.weight_decay * p[k]);
            }
        }
        Ok(norm)
    }

    /// `[t, m…, v…]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = vec![self.t as f64];
        for m in self.m.iter().chain(&self.v) {
            out.extend_from_slice(m.data());
        }
        out
    }

    pub fn from_flat(store: &ParamStore, flat: &[f64]) -> Result<Self> {
        let mut opt = AdamW::new(store);
        let n = store.scalar_count();
        if flat.len() != 1 + 2 * n {
            return Err(Error::Incompatible(format!(
                "optimizer state has {} values, expected {}",
                flat.len(),
                1 + 2 * n
            )));
        }
        opt.t = flat[0] as u64;
        let mut off = 1;
        for m in opt.m.iter_mut().chain(opt.v.iter_mut()) {
            let len = m.len();
            m.data_mut().copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(opt)
    }
}

/// Video indices used at `step`: consecutive slices of per-epoch seeded
/// permutations, so any step's batch is known without replaying earlier
/// ones.
pub fn batch_indices(num_videos: usize, batch: usize, seed: u64, step: usize) -> Vec<usize> {
    let mut cached: Option<(usize, Vec<usize>)> = None;
    (0..batch)
        .map(|b| {
            let i = step * batch + b;
            let epoch = i / num_videos;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                let mut perm: Vec<usize> = (0..num_videos).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(epoch as u64);
                perm.shuffle(&mut rng);
                cached = Some((epoch, perm));
            }
            cached.as_ref().unwrap().1[i % num_videos]
        })
        .collect()
}

/// Model, optimizer and step counter of a run.
pub struct Trainer {
    pub model: Dds,
    pub optimizer: AdamW,
    pub config: TrainConfig,
    pub objective: Objective,
    pub seed: u64,
    pub step: usize,
}

impl Trainer {
    pub fn new(model: Dds, config: TrainConfig, objective: Objective, seed: u64) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(model.params());
        Ok(Trainer {
            model,
            optimizer,
            config,
            objective,
            seed,
            step: 0,
        })
    }

    /// Runs one optimizer step on the batch scheduled for the current step.
    pub fn train_step(&mut self, data: &[VideoSample]) -> Result<LossBreakdown> {
        if data.is_empty() {
            return Err(Error::invalid("no training videos"));
        }
        let idx = batch_indices(data.len(), self.config.videos_per_step, self.seed, self.step);
        let batch: Vec<&VideoSample> = idx.iter().map(|&i| &data[i]).collect();
        let (breakdown, grads) = batch_gradients(&self.model, &batch, &self.objective)
            .map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("step {}: {m}", self.step + 1)),
                other => other,
            })?;
        self.optimizer
            .step(self.model.params_mut(), &grads, &self.config, self.step)?;
        self.step += 1;
        Ok(breakdown)
    }
}

/// One CSV line of the loss log.
pub fn loss_log_line(step: usize, b: &LossBreakdown) -> String {
    format!(
        "{step},{},{},{},{},{}",
        b.total, b.l_giou, b.l_l1, b.l_obj, b.l_rel
    )
}

pub const LOSS_LOG_HEADER: &str = "step,total,giou,l1,obj,rel";
