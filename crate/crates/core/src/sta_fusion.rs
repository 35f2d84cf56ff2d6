//! Cross-attention fusion of the spatial, temporal and joint branch features.
//!
//! Feature matrices are laid out `(N, C)`: one row per point.

use ndarray::{Array3, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{Activation, Ctx, Linear, Mat, Mlp, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StaConfig {
    pub channels: usize,
    pub seq_len: usize,
    pub rounds: usize,
    /// Hidden width of the two maps applied along the key axis of the score matrix.
    pub fc_hidden: usize,
}

impl Default for StaConfig {
    fn default() -> Self {
        Self { channels: 64, seq_len: 4096, rounds: 4, fc_hidden: 64 }
    }
}

impl StaConfig {
    pub fn out_channels(&self) -> usize {
        2 * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.seq_len == 0 || self.fc_hidden == 0 {
            return Err(Error::Parameter(format!("degenerate fusion config {self:?}")));
        }
        Ok(())
    }
}

/// One cross-attention unit: queries from `F_y`, keys from `F_x`.
#[derive(Debug, Clone, Copy)]
pub struct CrossAttention {
    pub q: Linear,
    pub k: Linear,
    pub v1: Linear,
    pub v2: Linear,
    pub fc1: Linear,
    pub fc2: Linear,
    pub proj: Linear,
    pub channels: usize,
}

impl CrossAttention {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, n: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let lin = |store: &mut ParamStore, rng: &mut _, part: &str, i, o| {
            Linear::new(store, &format!("{name}.{part}"), i, o, rng)
        };
        Self {
            q: lin(store, rng, "q", channels, channels),
            k: lin(store, rng, "k", channels, channels),
            v1: lin(store, rng, "v1", channels, channels),
            v2: lin(store, rng, "v2", channels, channels),
            fc1: lin(store, rng, "fc1", n, hidden),
            fc2: lin(store, rng, "fc2", hidden, n),
            proj: lin(store, rng, "proj", 2 * channels, channels),
            channels,
        }
    }

    fn check(&self, fx: &Var<'_>, fy: &Var<'_>) -> Result<()> {
        let (nx, cx) = fx.shape();
        let (ny, cy) = fy.shape();
        if nx != ny {
            return Err(Error::Unsupported(format!("cross attention needs equal lengths, got {nx} and {ny}")));
        }
        if cx != self.channels || cy != self.channels {
            return Err(Error::Shape(format!("expected {} channels, got {cx} and {cy}", self.channels)));
        }
        if nx != self.fc1.fan_in {
            return Err(Error::Shape(format!("sequence length {nx}, configured {}", self.fc1.fan_in)));
        }
        Ok(())
    }

    /// Row-softmaxed attention `(N_y, N_x)`.
    pub fn attention<'t>(&self, ctx: &Ctx<'t>, fx: &Var<'t>, fy: &Var<'t>) -> Result<Var<'t>> {
        self.check(fx, fy)?;
        let q = self.q.forward(ctx, fy);
        let k = self.k.forward(ctx, fx);
        let e = q.matmul_t(&k).scale(1.0 / (self.channels as f64).sqrt());
        let e = self.fc1.forward(ctx, &e).relu();
        let e = self.fc2.forward(ctx, &e).relu();
        Ok(e.softmax_rows())
    }

    /// Output `(N_x, C)`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, fx: &Var<'t>, fy: &Var<'t>) -> Result<Var<'t>> {
        let a = self.attention(ctx, fx, fy)?;
        let v = Var::concat_cols(&[self.v2.forward(ctx, fy), self.v1.forward(ctx, fx)]);
        Ok(self.proj.forward(ctx, &a.t_matmul(&v)))
    }
}

#[derive(Debug, Clone)]
pub struct StaFusion {
    pub config: StaConfig,
    /// Per round: update of the spatial stream, update of the temporal stream.
    pub rounds: Vec<(CrossAttention, CrossAttention)>,
    pub inter_s: CrossAttention,
    pub inter_t: CrossAttention,
    pub mlp: Mlp,
}

impl StaFusion {
    pub fn new(store: &mut ParamStore, prefix: &str, config: StaConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (c, n, h) = (config.channels, config.seq_len, config.fc_hidden);
        let rounds = (0..config.rounds)
            .map(|r| {
                let s = CrossAttention::new(store, &format!("{prefix}.round{r}.s"), c, n, h, rng);
                let t = CrossAttention::new(store, &format!("{prefix}.round{r}.t"), c, n, h, rng);
                (s, t)
            })
            .collect();
        let inter_s = CrossAttention::new(store, &format!("{prefix}.inter.s"), c, n, h, rng);
        let inter_t = CrossAttention::new(store, &format!("{prefix}.inter.t"), c, n, h, rng);
        let mlp = Mlp::new(store, &format!("{prefix}.mlp"), 2 * c, 2 * c, 2 * c, Activation::Relu, rng);
        Ok(Self { config, rounds, inter_s, inter_t, mlp })
    }

    /// Residual mutual attention; both streams of a round read the previous round's values.
    pub fn mutual_rounds<'t>(&self, ctx: &Ctx<'t>, fs: &Var<'t>, ft: &Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        if fs.shape() != ft.shape() {
            return Err(Error::Shape(format!("stream shapes {:?} and {:?}", fs.shape(), ft.shape())));
        }
        let (mut s, mut t) = (fs.clone(), ft.clone());
        for (ca_s, ca_t) in &self.rounds {
            let ds = ca_s.forward(ctx, &s, &t)?;
            let dt = ca_t.forward(ctx, &t, &s)?;
            s = s.add(&ds);
            t = t.add(&dt);
        }
        Ok((s, t))
    }

    /// `(N, 2C)`: joint-branch queries against both refined streams, concatenated and mixed.
    pub fn st_interaction<'t>(&self, ctx: &Ctx<'t>, fs4: &Var<'t>, ft4: &Var<'t>, fst: &Var<'t>) -> Result<Var<'t>> {
        let gs = self.inter_s.forward(ctx, fst, fs4)?;
        let gt = self.inter_t.forward(ctx, fst, ft4)?;
        Ok(self.mlp.forward(ctx, &Var::concat_cols(&[gs, gt])))
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, fs: &Var<'t>, ft: &Var<'t>, fst: &Var<'t>) -> Result<Var<'t>> {
        let (s4, t4) = self.mutual_rounds(ctx, fs, ft)?;
        self.st_interaction(ctx, &s4, &t4, fst)
    }

    /// Inference over a batch of `(F_s, F_t, F_st)` triples, output `(B, N, 2C)`.
    pub fn forward_batch(&self, store: &ParamStore, inputs: &[(Mat, Mat, Mat)]) -> Result<Array3<f64>> {
        let (n, c2) = (self.config.seq_len, self.config.out_channels());
        let outs = inputs
            .par_iter()
            .map(|(fs, ft, fst)| {
                let tape = Tape::inference();
                let ctx = Ctx::new(&tape, store);
                let out = self.forward(&ctx, &ctx.constant(fs.clone()), &ctx.constant(ft.clone()), &ctx.constant(fst.clone()))?;
                Ok(out.value().clone())
            })
            .collect::<Result<Vec<Mat>>>()?;
        let mut batch = Array3::zeros((inputs.len(), n, c2));
        for (mut slot, out) in batch.axis_iter_mut(Axis(0)).zip(outs) {
            slot.assign(&out);
        }
        Ok(batch)
    }

    /// Names of every output projection inside the mutual rounds.
    pub fn round_projection_prefixes(&self, store: &ParamStore) -> Vec<String> {
        self.rounds
            .iter()
            .flat_map(|(s, t)| [s.proj.weight, s.proj.bias, t.proj.weight, t.proj.bias])
            .map(|id| store.name(id).to_string())
            .collect()
    }
}
