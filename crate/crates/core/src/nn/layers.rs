use ndarray::Array2;
use rand::Rng;

use super::params::{Ctx, ParamId, ParamStore};
use super::tape::Var;

pub const LN_EPS: f64 = 1e-5;

/// `y = x W + b`, with `W` stored `(in, out)`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add_xavier(format!("{name}.weight"), fan_in, fan_out, rng);
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, fan_out)));
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: &Var<'t>) -> Var<'t> {
        x.matmul(&ctx.param(self.weight)).add_row(&ctx.param(self.bias))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Array2::ones((1, channels)));
        let beta = store.add(format!("{name}.beta"), Array2::zeros((1, channels)));
        Self { gamma, beta }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: &Var<'t>) -> Var<'t> {
        x.layer_norm(&ctx.param(self.gamma), &ctx.param(self.beta), LN_EPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

/// Two linear layers with an activation in between.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        hidden: usize,
        out: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let fc1 = Linear::new(store, &format!("{name}.fc1"), channels, hidden, rng);
        let fc2 = Linear::new(store, &format!("{name}.fc2"), hidden, out, rng);
        Self { fc1, fc2, activation }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: &Var<'t>) -> Var<'t> {
        let h = self.fc1.forward(ctx, x);
        let h = match self.activation {
            Activation::Relu => h.relu(),
            Activation::Gelu => h.gelu(),
        };
        self.fc2.forward(ctx, &h)
    }
}

/// Per-point linear map from the five input features to `channels`.
#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub linear: Linear,
}

pub const INPUT_FEATURES: usize = 5;

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        Self { linear: Linear::new(store, name, INPUT_FEATURES, channels, rng) }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, features: &Var<'t>) -> Var<'t> {
        self.linear.forward(ctx, features)
    }
}
