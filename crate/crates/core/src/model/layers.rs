//! Transformer building blocks recorded onto a [`Ctx`] graph.

use crate::autograd::{ParamId, Var};

use super::params::{Ctx, Init};

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, name: &str, d_in: usize, d_out: usize) -> Self {
        Linear {
            w: init.xavier(format!("{name}.weight"), d_in, d_out),
            b: init.constant(format!("{name}.bias"), 1, d_out, 0.0),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Var {
        let w = ctx.p(self.w);
        let b = ctx.p(self.b);
        let y = ctx.g.matmul(x, w);
        ctx.g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init<'_>, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: init.constant(format!("{name}.gamma"), 1, d, 1.0),
            beta: init.constant(format!("{name}.beta"), 1, d, 0.0),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Var {
        let g = ctx.p(self.gamma);
        let b = ctx.p(self.beta);
        ctx.g.layer_norm(x, g, b)
    }
}

/// Two-layer position-wise feed-forward block with GELU.
#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(init: &mut Init<'_>, name: &str, d: usize, hidden: usize) -> Self {
        FeedForward {
            up: Linear::new(init, &format!("{name}.up"), d, hidden),
            down: Linear::new(init, &format!("{name}.down"), hidden, d),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Var {
        let h = self.up.forward(ctx, x);
        let h = ctx.g.gelu(h);
        self.down.forward(ctx, h)
    }
}

/// Box regression MLP: `d → d → d → 4`, GELU between layers.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(init: &mut Init<'_>, name: &str, d: usize, out: usize, depth: usize) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let d_out = if i + 1 == depth { out } else { d };
                Linear::new(init, &format!("{name}.{i}"), d, d_out)
            })
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Var {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(ctx, h);
            if i + 1 < self.layers.len() {
                h = ctx.g.gelu(h);
            }
        }
        h
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Init<'_>, name: &str, d: usize, heads: usize) -> Self {
        MultiHeadAttention {
            q: Linear::new(init, &format!("{name}.q"), d, d),
            k: Linear::new(init, &format!("{name}.k"), d, d),
            v: Linear::new(init, &format!("{name}.v"), d, d),
            out: Linear::new(init, &format!("{name}.out"), d, d),
            heads,
        }
    }

    /// Scaled dot-product attention of `query` rows over `key`/`value` rows.
    pub fn forward(&self, ctx: &mut Ctx<'_>, query: Var, key: Var, value: Var) -> Var {
        let q = self.q.forward(ctx, query);
        let k = self.k.forward(ctx, key);
        let v = self.v.forward(ctx, value);
        let d = ctx.g.value(q).cols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    ctx.g.slice_cols(q, h * dh, dh),
                    ctx.g.slice_cols(k, h * dh, dh),
                    ctx.g.slice_cols(v, h * dh, dh),
                )
            };
            let s = ctx.g.matmul_t(qh, kh);
            let s = ctx.g.scale(s, scale);
            let a = ctx.g.softmax_rows(s);
            outs.push(ctx.g.matmul(a, vh));
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            ctx.g.concat_cols(&outs)
        };
        self.out.forward(ctx, cat)
    }
}

/// Post-norm self-attention encoder layer.
#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(init: &mut Init<'_>, name: &str, d: usize, heads: usize, hidden: usize) -> Self {
        EncoderLayer {
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), d, heads),
            norm1: LayerNorm::new(init, &format!("{name}.norm1"), d),
            ffn: FeedForward::new(init, &format!("{name}.ffn"), d, hidden),
            norm2: LayerNorm::new(init, &format!("{name}.norm2"), d),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, src: Var) -> Var {
        let a = self.attn.forward(ctx, src, src, src);
        let x = ctx.g.add(src, a);
        let x = self.norm1.forward(ctx, x);
        let f = self.ffn.forward(ctx, x);
        let x2 = ctx.g.add(x, f);
        self.norm2.forward(ctx, x2)
    }
}

/// Self-attention over queries, cross-attention into the encoded frame, FFN.
#[derive(Debug, Clone)]
pub(crate) struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn new(init: &mut Init<'_>, name: &str, d: usize, heads: usize, hidden: usize) -> Self {
        DecoderLayer {
            self_attn: MultiHeadAttention::new(init, &format!("{name}.self_attn"), d, heads),
            norm1: LayerNorm::new(init, &format!("{name}.norm1"), d),
            cross_attn: MultiHeadAttention::new(init, &format!("{name}.cross_attn"), d, heads),
            norm2: LayerNorm::new(init, &format!("{name}.norm2"), d),
            ffn: FeedForward::new(init, &format!("{name}.ffn"), d, hidden),
            norm3: LayerNorm::new(init, &format!("{name}.norm3"), d),
        }
    }

    /// `tgt`: current query states; `query_pos`: learnable positional
    /// embeddings; `memory`: encoded frame tokens.
    pub fn forward(&self, ctx: &mut Ctx<'_>, tgt: Var, query_pos: Var, memory: Var) -> Var {
        let qk = ctx.g.add(tgt, query_pos);
        let a = self.self_attn.forward(ctx, qk, qk, tgt);
        let x = ctx.g.add(tgt, a);
        let x = self.norm1.forward(ctx, x);
        let q = ctx.g.add(x, query_pos);
        let c = self.cross_attn.forward(ctx, q, memory, memory);
        let x2 = ctx.g.add(x, c);
        let x2 = self.norm2.forward(ctx, x2);
        let f = self.ffn.forward(ctx, x2);
        let x3 = ctx.g.add(x2, f);
        self.norm3.forward(ctx, x3)
    }
}

/// Cross-attention of current-frame queries over previous-frame embeddings,
/// followed by an FFN.
#[derive(Debug, Clone)]
pub(crate) struct TemporalLayer {
    pub cross_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl TemporalLayer {
    pub fn new(init: &mut Init<'_>, name: &str, d: usize, heads: usize, hidden: usize) -> Self {
        TemporalLayer {
            cross_attn: MultiHeadAttention::new(init, &format!("{name}.cross_attn"), d, heads),
            norm1: LayerNorm::new(init, &format!("{name}.norm1"), d),
            ffn: FeedForward::new(init, &format!("{name}.ffn"), d, hidden),
            norm2: LayerNorm::new(init, &format!("{name}.norm2"), d),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, queries: Var, prev: Var) -> Var {
        let c = self.cross_attn.forward(ctx, queries, prev, prev);
        let x = ctx.g.add(queries, c);
        let x = self.norm1.forward(ctx, x);
        let f = self.ffn.forward(ctx, x);
        let x2 = ctx.g.add(x, f);
        self.norm2.forward(ctx, x2)
    }
}
