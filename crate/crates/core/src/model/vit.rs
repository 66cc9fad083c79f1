//! Space-time patch transformer for next-step prediction.
//!
//! A context window `[k, C_in, S...]` is cut into non-overlapping
//! space-time patches by a strided convolution, the resulting tokens pass a
//! stack of pre-norm encoder layers, each token is read out to patch
//! features, a transposed convolution rebuilds a `[C', S..., k]` volume and
//! a pointwise head maps its last time slice to the `C` state channels.

use serde::{Deserialize, Serialize};

use super::params::{trunc_normal, Params};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const PER_LAYER: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViTConfig {
    pub spatial: Vec<usize>,
    /// Patch extents: one per spatial axis, then time.
    pub patch: Vec<usize>,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// State channels plus parameter channels plus the time channel.
    pub in_channels: usize,
    pub out_channels: usize,
    pub context: usize,
    /// Channels of the reconstructed volume before the head.
    pub recon_channels: usize,
}

/// `[32, 1]` in 1D and `[8, 8, 1]` in 2D, shrunk to the grid if smaller.
pub fn default_patch(spatial: &[usize]) -> Vec<usize> {
    let p = if spatial.len() == 1 { 32 } else { 8 };
    let mut out: Vec<usize> = spatial.iter().map(|&s| p.min(s)).collect();
    out.push(1);
    out
}

impl ViTConfig {
    /// Four layers, hidden size 256, four heads, MLP ratio 4.
    pub fn new(spatial: &[usize], in_channels: usize, out_channels: usize, context: usize) -> Self {
        ViTConfig {
            spatial: spatial.to_vec(),
            patch: default_patch(spatial),
            hidden: 256,
            layers: 4,
            heads: 4,
            mlp_ratio: 4,
            in_channels,
            out_channels,
            context,
            recon_channels: in_channels,
        }
    }

    pub fn with_size(mut self, layers: usize, hidden: usize) -> Self {
        self.layers = layers;
        self.hidden = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.spatial.len();
        let bad = |m: String| Err(Error::Config(m));
        if !(d == 1 || d == 2) {
            return bad(format!("{d} spatial axes; only 1 and 2 are supported"));
        }
        if self.patch.len() != d + 1 {
            return bad(format!("patch {:?} needs {} extents", self.patch, d + 1));
        }
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} not divisible by {} heads", self.hidden, self.heads));
        }
        if self.mlp_ratio == 0 || self.in_channels == 0 || self.out_channels == 0 || self.recon_channels == 0 {
            return bad("zero channel count or MLP ratio".into());
        }
        for (i, (&s, &p)) in self.spatial.iter().zip(&self.patch).enumerate() {
            if p == 0 || s % p != 0 {
                return bad(format!("patch extent {p} does not divide grid axis {i} of extent {s}"));
            }
        }
        let pt = self.patch[d];
        if self.context == 0 || pt == 0 || !self.context.is_multiple_of(pt) {
            return bad(format!(
                "time patch {pt} does not divide context length {}",
                self.context
            ));
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        let d = self.spatial.len();
        let space: usize = self.spatial.iter().zip(&self.patch).map(|(s, p)| s / p).product();
        space * (self.context / self.patch[d])
    }

    fn patch_volume(&self) -> usize {
        self.patch.iter().product()
    }

    /// Token grid `[B..., Bt]`.
    fn blocks(&self) -> Vec<usize> {
        let d = self.spatial.len();
        let mut b: Vec<usize> = self.spatial.iter().zip(&self.patch).map(|(s, p)| s / p).collect();
        b.push(self.context / self.patch[d]);
        b
    }

    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (h, m) = (self.hidden, self.hidden * self.mlp_ratio);
        let mut kernel = vec![h, self.in_channels];
        kernel.extend(&self.patch);
        let mut deconv = vec![h, self.recon_channels];
        deconv.extend(&self.patch);
        let mut out = vec![
            ("patch_embed.weight".to_string(), kernel),
            ("patch_embed.bias".to_string(), vec![h]),
            ("pos_embed".to_string(), vec![self.n_tokens(), h]),
        ];
        for l in 0..self.layers {
            let shapes: [(&str, Vec<usize>); PER_LAYER] = [
                ("ln1.gamma", vec![h]),
                ("ln1.beta", vec![h]),
                ("attn.qkv.weight", vec![h, 3 * h]),
                ("attn.qkv.bias", vec![3 * h]),
                ("attn.out.weight", vec![h, h]),
                ("attn.out.bias", vec![h]),
                ("ln2.gamma", vec![h]),
                ("ln2.beta", vec![h]),
                ("mlp.fc1.weight", vec![h, m]),
                ("mlp.fc1.bias", vec![m]),
                ("mlp.fc2.weight", vec![m, h]),
                ("mlp.fc2.bias", vec![h]),
            ];
            out.extend(shapes.into_iter().map(|(n, s)| (format!("layers.{l}.{n}"), s)));
        }
        out.extend([
            ("readout.weight".to_string(), vec![h, h]),
            ("readout.bias".to_string(), vec![h]),
            ("deconv.weight".to_string(), deconv),
            ("deconv.bias".to_string(), vec![self.recon_channels]),
            ("head.weight".to_string(), vec![self.out_channels, self.recon_channels]),
            ("head.bias".to_string(), vec![self.out_channels, 1]),
        ]);
        out
    }

    /// Learnable scalars in one encoder layer.
    pub fn per_layer_params(&self) -> usize {
        let (h, m) = (self.hidden, self.hidden * self.mlp_ratio);
        4 * h + (3 * h * h + 3 * h) + (h * h + h) + (h * m + m) + (m * h + h)
    }

    pub fn count_params(&self) -> usize {
        let (h, pv) = (self.hidden, self.patch_volume());
        let (ci, cr, co) = (self.in_channels, self.recon_channels, self.out_channels);
        (h * ci * pv + h)
            + self.n_tokens() * h
            + self.layers * self.per_layer_params()
            + (h * h + h)
            + (h * cr * pv + cr)
            + (co * cr + co)
    }

    /// Truncated-normal projections, zero biases, unit layer-norm gains and
    /// a zero head, so a fresh model predicts the zero (mean) field.
    pub fn init(&self, rng: &mut Rng) -> Params {
        let mut p = Params::new();
        for (name, shape) in self.layout() {
            let t = if name.ends_with(".gamma") {
                Tensor::ones(&shape)
            } else if name.ends_with(".bias") || name.ends_with(".beta") || name.starts_with("head.") {
                Tensor::zeros(&shape)
            } else {
                trunc_normal(rng, &shape, INIT_STD)
            };
            p.push(name, t);
        }
        p
    }

    fn check_context(&self, shape: &[usize]) -> Result<()> {
        let mut want = vec![self.context, self.in_channels];
        want.extend(&self.spatial);
        if shape != want.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "vit forward",
                lhs: shape.to_vec(),
                rhs: want,
            });
        }
        Ok(())
    }
}

/// Embeds a context window `[k, C_in, S...]` as tokens `[n, h]`, position
/// embeddings included.
pub fn patchify(g: &mut Graph<'_>, cfg: &ViTConfig, weight: Var, bias: Var, pos: Var, context: Var) -> Result<Var> {
    cfg.check_context(g.shape(context))?;
    let d = cfg.spatial.len();
    let mut axes: Vec<usize> = (1..d + 2).collect();
    axes.push(0);
    let x = g.permute(context, &axes)?;
    let e = g.conv_nd(x, weight, Some(bias))?;
    let e = g.reshape(e, &[cfg.hidden, cfg.n_tokens()])?;
    let e = g.transpose(e)?;
    g.add(e, pos)
}

/// Multi-head scaled dot-product self-attention over `x: [n, h]`.
/// Returns the projected output and the attention weights `[A, n, n]`.
pub fn self_attention(g: &mut Graph<'_>, x: Var, w: [Var; 4], heads: usize) -> Result<(Var, Var)> {
    let [wqkv, bqkv, wo, bo] = w;
    let (n, h) = (g.shape(x)[0], g.shape(x)[1]);
    let dh = h / heads;
    let qkv = g.linear(x, wqkv, Some(bqkv))?;
    let qkv = g.reshape(qkv, &[n, 3, heads, dh])?;
    let qkv = g.permute(qkv, &[1, 2, 0, 3])?;
    let mut pick = |i: usize| -> Result<Var> {
        let s = g.index_select(qkv, 0, &[i])?;
        g.reshape(s, &[heads, n, dh])
    };
    let (q, k, v) = (pick(0)?, pick(1)?, pick(2)?);
    let kt = g.transpose(k)?;
    let s = g.matmul(q, kt)?;
    let s = g.scale(s, 1.0 / (dh as f64).sqrt());
    let p = g.softmax(s, 2)?;
    let o = g.matmul(p, v)?;
    let o = g.permute(o, &[1, 0, 2])?;
    let o = g.reshape(o, &[n, h])?;
    Ok((g.linear(o, wo, Some(bo))?, p))
}

/// Pre-norm block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
/// `w` holds the twelve layer buffers in layout order.
pub fn encoder_layer(g: &mut Graph<'_>, heads: usize, w: &[Var], x: Var) -> Result<Var> {
    let a = g.layernorm(x, w[0], w[1], LN_EPS)?;
    let (a, _) = self_attention(g, a, [w[2], w[3], w[4], w[5]], heads)?;
    let x = g.add(x, a)?;
    let m = g.layernorm(x, w[6], w[7], LN_EPS)?;
    let m = g.linear(m, w[8], Some(w[9]))?;
    let m = g.gelu(m);
    let m = g.linear(m, w[10], Some(w[11]))?;
    g.add(x, m)
}

/// Next standardized state `[C, S...]` from a context window, with the
/// weights given in [`ViTConfig::layout`] order.
pub fn forward(g: &mut Graph<'_>, cfg: &ViTConfig, w: &[Var], context: Var) -> Result<Var> {
    if w.len() != 3 + cfg.layers * PER_LAYER + 6 {
        return Err(Error::Config(format!("vit forward got {} weight buffers", w.len())));
    }
    let mut x = patchify(g, cfg, w[0], w[1], w[2], context)?;
    for l in 0..cfg.layers {
        let o = 3 + l * PER_LAYER;
        x = encoder_layer(g, cfg.heads, &w[o..o + PER_LAYER], x)?;
    }
    let r = &w[3 + cfg.layers * PER_LAYER..];
    let y = g.linear(x, r[0], Some(r[1]))?;
    let y = g.transpose(y)?;
    let mut shape = vec![cfg.hidden];
    shape.extend(cfg.blocks());
    let y = g.reshape(y, &shape)?;
    let vol = g.deconv_nd(y, r[2], Some(r[3]))?;
    let d = cfg.spatial.len();
    let last = g.index_select(vol, d + 1, &[cfg.context - 1])?;
    let n: usize = cfg.spatial.iter().product();
    let last = g.reshape(last, &[cfg.recon_channels, n])?;
    let out = g.matmul(r[4], last)?;
    let out = g.add(out, r[5])?;
    let mut shape = vec![cfg.out_channels];
    shape.extend(&cfg.spatial);
    g.reshape(out, &shape)
}
