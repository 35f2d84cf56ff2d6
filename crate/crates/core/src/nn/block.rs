use std::ops::Range;

use rand::Rng;

use super::layers::{Activation, LayerNorm, Linear, Mlp};
use super::params::{Ctx, ParamStore};
use super::tape::{Mat, Var};
use crate::error::{Error, Result};

/// Pre-norm transformer block with multi-head self-attention restricted to patches.
///
/// `x <- x + proj(attn(norm1(x)))`, then `x <- x + mlp(norm2(x))`. Attention
/// only mixes points of the same patch and carries no positional encoding.
#[derive(Debug, Clone, Copy)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub channels: usize,
    pub heads: usize,
}

impl EncoderBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::Parameter(format!("{heads} heads do not divide {channels} channels")));
        }
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), channels),
            qkv: Linear::new(store, &format!("{name}.qkv"), channels, 3 * channels, rng),
            proj: Linear::new(store, &format!("{name}.proj"), channels, channels, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), channels),
            mlp: Mlp::new(store, &format!("{name}.mlp"), channels, mlp_ratio * channels, channels, Activation::Gelu, rng),
            channels,
            heads,
        })
    }

    /// Run the block on a single patch (all rows attend to each other).
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, patch: &Var<'t>) -> Result<Var<'t>> {
        let n = patch.shape().0;
        let order: Vec<usize> = (0..n).collect();
        self.forward_patches(ctx, patch, &order, std::slice::from_ref(&(0..n)))
    }

    /// Run the block on points stored in their original order.
    ///
    /// `order[k]` is the original index of the `k`-th point in curve order and
    /// `patches` are ranges over that curve order. Output rows keep the input order.
    pub fn forward_patches<'t>(
        &self,
        ctx: &Ctx<'t>,
        x: &Var<'t>,
        order: &[usize],
        patches: &[Range<usize>],
    ) -> Result<Var<'t>> {
        let (n, c) = x.shape();
        if c != self.channels {
            return Err(Error::Shape(format!("block expects {} channels, got {c}", self.channels)));
        }
        if order.len() != n || n == 0 {
            return Err(Error::Shape(format!("{} ordered indices for {n} points", order.len())));
        }
        if x.value().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("encoder block input".into()));
        }

        let qkv = self.qkv.forward(ctx, &self.norm1.forward(ctx, x));
        let sorted = qkv.gather_rows(order);
        let d = c / self.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut patch_outs = Vec::with_capacity(patches.len());
        for range in patches {
            let rows = sorted.slice_rows(range.clone());
            let heads: Vec<Var<'t>> = (0..self.heads)
                .map(|h| {
                    let q = rows.slice_cols(h * d..(h + 1) * d);
                    let k = rows.slice_cols(c + h * d..c + (h + 1) * d);
                    let v = rows.slice_cols(2 * c + h * d..2 * c + (h + 1) * d);
                    q.matmul_t(&k).scale(scale).softmax_rows().matmul(&v)
                })
                .collect();
            patch_outs.push(Var::concat_cols(&heads));
        }
        let attended = Var::concat_rows(&patch_outs).gather_rows(&inverse(order));
        let x = x.add(&self.proj.forward(ctx, &attended));
        Ok(x.add(&self.mlp.forward(ctx, &self.norm2.forward(ctx, &x))))
    }

    /// Per-head attention weights for one patch.
    pub fn attention_weights(&self, ctx: &Ctx<'_>, patch: &Mat) -> Vec<Mat> {
        let c = self.channels;
        let d = c / self.heads;
        let x = ctx.constant(patch.clone());
        let qkv = self.qkv.forward(ctx, &self.norm1.forward(ctx, &x));
        (0..self.heads)
            .map(|h| {
                let q = qkv.slice_cols(h * d..(h + 1) * d);
                let k = qkv.slice_cols(c + h * d..c + (h + 1) * d);
                q.matmul_t(&k).scale(1.0 / (d as f64).sqrt()).softmax_rows().value().clone()
            })
            .collect()
    }
}

pub(crate) fn inverse(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (k, &i) in order.iter().enumerate() {
        inv[i] = k;
    }
    inv
}
