//! One aggregation branch: embed, encode over pooled curve levels, decode back to every point.

use rand::Rng;

use crate::error::{Error, Result};
use crate::event_model::EventBatch;
use crate::nn::{Ctx, Embedding, EncoderBlock, Linear, ParamStore, Var};
use crate::serial_pipeline::{self, pool_map, select_order, serialize_codes, BranchConfig, PoolMap};
use crate::sfc_codec::{CurveCode, CurveOrder};

#[derive(Debug, Clone)]
struct EncoderStage {
    /// Channel projection applied before pooling; absent on the first stage.
    down: Option<Linear>,
    blocks: Vec<EncoderBlock>,
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: Linear,
    skip: Linear,
    blocks: Vec<EncoderBlock>,
}

/// Curve codes of every point at one resolution, one vector per allowed order.
#[derive(Debug, Clone)]
struct Level {
    codes: Vec<Vec<CurveCode>>,
}

impl Level {
    fn pooled(&self, map: &PoolMap, y: u32) -> Level {
        let codes = self
            .codes
            .iter()
            .map(|c| map.representative.iter().map(|&r| serial_pipeline::shift(c[r], y)).collect())
            .collect();
        Level { codes }
    }
}

#[derive(Debug, Clone)]
pub struct BranchNetwork {
    pub config: BranchConfig,
    embed: Embedding,
    encoders: Vec<EncoderStage>,
    decoders: Vec<DecoderStage>,
}

fn blocks(
    store: &mut ParamStore,
    name: &str,
    depth: usize,
    channels: usize,
    heads: usize,
    ratio: usize,
    rng: &mut impl Rng,
) -> Result<Vec<EncoderBlock>> {
    (0..depth).map(|j| EncoderBlock::new(store, &format!("{name}.block{j}"), channels, heads, ratio, rng)).collect()
}

impl BranchNetwork {
    pub fn new(store: &mut ParamStore, prefix: &str, config: BranchConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let embed = Embedding::new(store, &format!("{prefix}.embed"), c.enc_channels[0], rng);
        let mut encoders = Vec::with_capacity(c.encoder_stages());
        for i in 0..c.encoder_stages() {
            let name = format!("{prefix}.enc{i}");
            let down = (i > 0)
                .then(|| Linear::new(store, &format!("{name}.down"), c.enc_channels[i - 1], c.enc_channels[i], rng));
            let blocks = blocks(store, &name, c.enc_depths[i], c.enc_channels[i], c.enc_heads[i], c.mlp_ratio, rng)?;
            encoders.push(EncoderStage { down, blocks });
        }
        let last = c.encoder_stages() - 1;
        let mut decoders = Vec::with_capacity(last);
        for i in 0..last {
            let name = format!("{prefix}.dec{i}");
            let child = if i + 1 == last { c.enc_channels[last] } else { c.dec_channels[i + 1] };
            let up = Linear::new(store, &format!("{name}.up"), child, c.dec_channels[i], rng);
            let skip = Linear::new(store, &format!("{name}.skip"), c.enc_channels[i], c.dec_channels[i], rng);
            let blocks = blocks(store, &name, c.dec_depths[i], c.dec_channels[i], c.dec_heads[i], c.mlp_ratio, rng)?;
            decoders.push(DecoderStage { up, skip, blocks });
        }
        Ok(Self { config, embed, encoders, decoders })
    }

    pub fn out_channels(&self) -> usize {
        self.config.out_channels()
    }

    fn order_for(&self, layer: usize, seed: u64) -> Result<(CurveOrder, usize)> {
        let order = select_order(layer, &self.config, seed)?;
        let slot = self.config.orders.iter().position(|&k| k == order.kind).expect("selected order is allowed");
        Ok((order, slot))
    }

    /// Per-point branch features `(N, out_channels)` in the batch's point order.
    ///
    /// `features` holds the `(N, 5)` input features of `batch`. Curve choices per
    /// layer are fixed by `seed`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, batch: &EventBatch, features: &Var<'t>, seed: u64) -> Result<Var<'t>> {
        if features.shape().0 != batch.len() || batch.is_empty() {
            return Err(Error::Shape(format!("{} feature rows for {} points", features.shape().0, batch.len())));
        }
        let cfg = &self.config;
        let axes = cfg.branch.axes();
        let codes = cfg
            .orders
            .iter()
            .map(|&k| serial_pipeline::encode_points(batch, axes, &CurveOrder::new(k, axes.dims(), cfg.bits)?))
            .collect::<Result<Vec<_>>>()?;
        let mut level = Level { codes };

        let mut x = self.embed.forward(ctx, features);
        let mut skips: Vec<(Var<'t>, Level)> = Vec::with_capacity(self.encoders.len());
        let mut pools: Vec<PoolMap> = Vec::with_capacity(self.decoders.len());
        for (i, stage) in self.encoders.iter().enumerate() {
            let (order, slot) = self.order_for(i, seed)?;
            if let Some(down) = &stage.down {
                let y = cfg.y_schedule[i - 1];
                let sorted = serialize_codes(level.codes[slot].clone(), order, cfg.enc_patch[i])?;
                let map = pool_map(&sorted, y)?;
                x = down.forward(ctx, &x).segment_max(&map.group, map.n_groups);
                level = level.pooled(&map, y);
                pools.push(map);
            }
            let ser = serialize_codes(level.codes[slot].clone(), order, cfg.enc_patch[i])?;
            for block in &stage.blocks {
                x = block.forward_patches(ctx, &x, &ser.perm, &ser.patches)?;
            }
            skips.push((x.clone(), level.clone()));
        }

        let stages = self.encoders.len();
        for (i, stage) in self.decoders.iter().enumerate().rev() {
            let (skip_x, skip_level) = &skips[i];
            let up = stage.up.forward(ctx, &x).gather_rows(&pools[i].group);
            x = up.add(&stage.skip.forward(ctx, skip_x));
            let (order, slot) = self.order_for(stages + i, seed)?;
            let ser = serialize_codes(skip_level.codes[slot].clone(), order, cfg.dec_patch[i])?;
            for block in &stage.blocks {
                x = block.forward_patches(ctx, &x, &ser.perm, &ser.patches)?;
            }
        }
        Ok(x)
    }
}
