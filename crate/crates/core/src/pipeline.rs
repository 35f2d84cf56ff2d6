//! The full model: fuse and sample, three aggregation branches, fusion, tensorization.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::event_model::io::{decode_evt1, decode_evt1_records};
use crate::event_model::{fuse_stream, sample_and_normalize, Event, EventBatch};
use crate::feature_tensorize::{assemble, scatter, scatter_var, statistical_channels, GridTensor, PreScatter};
use crate::nn::checkpoint::{encode_checkpoint, load_checkpoint};
use crate::nn::{batch_features, Ctx, Mat, ParamStore, Tape, Var};
use crate::sfca::BranchNetwork;
use crate::sta_fusion::StaFusion;

/// Weight initialization draws from a stream distinct from sampling and curve choice.
const WEIGHT_STREAM: u64 = 0x5745_4947_4854_5331;

#[derive(Debug, Clone)]
pub struct OmniEvent {
    pub config: PipelineConfig,
    pub store: ParamStore,
    pub spatial: BranchNetwork,
    pub temporal: BranchNetwork,
    pub spatiotemporal: BranchNetwork,
    pub sta: StaFusion,
    pub pre: PreScatter,
}

impl OmniEvent {
    /// Build with freshly initialized weights drawn from `seed`.
    pub fn new(config: PipelineConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ WEIGHT_STREAM);
        let mut store = ParamStore::new();
        let spatial = BranchNetwork::new(&mut store, "s", config.spatial.clone(), &mut rng)?;
        let temporal = BranchNetwork::new(&mut store, "t", config.temporal.clone(), &mut rng)?;
        let spatiotemporal = BranchNetwork::new(&mut store, "st", config.spatiotemporal.clone(), &mut rng)?;
        let sta = StaFusion::new(&mut store, "sta", config.sta, &mut rng)?;
        let pre = PreScatter::new(&mut store, "ft.pre", config.sta.out_channels(), &mut rng);
        Ok(Self { config, store, spatial, temporal, spatiotemporal, sta, pre })
    }

    /// Build and, if the config names a checkpoint, load it.
    pub fn from_config(config: PipelineConfig, seed: u64) -> Result<Self> {
        let weights = config.weights.clone();
        let mut model = Self::new(config, seed)?;
        if let Some(path) = weights {
            model.load_weights(&std::fs::read(path)?)?;
        }
        Ok(model)
    }

    pub fn load_weights(&mut self, bytes: &[u8]) -> Result<()> {
        load_checkpoint(&mut self.store, bytes)
    }

    pub fn save_weights(&self) -> Vec<u8> {
        encode_checkpoint(&self.store)
    }

    pub fn save_weights_to(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.save_weights())?)
    }

    /// Validate, fuse and sample a raw stream.
    pub fn prepare(&self, events: &[Event], seed: u64) -> Result<EventBatch> {
        let c = &self.config;
        for e in events {
            e.validate(&c.geometry)?;
        }
        if events.is_empty() {
            return Err(Error::Parameter("no events to tensorize".into()));
        }
        let fused = fuse_stream(events, c.segments)?;
        sample_and_normalize(&fused, c.samples, &c.geometry, c.segments, seed, c.normalize)
    }

    /// Fused per-point features `(N, 2C)` after the pre-scatter map, on one tape.
    pub fn point_features<'t>(&self, ctx: &Ctx<'t>, batch: &EventBatch, seed: u64) -> Result<Var<'t>> {
        let x = ctx.constant(batch_features(&batch.events));
        let fs = self.spatial.forward(ctx, batch, &x, seed)?;
        let ft = self.temporal.forward(ctx, batch, &x, seed)?;
        let fst = self.spatiotemporal.forward(ctx, batch, &x, seed)?;
        let fused = self.sta.forward(ctx, &fs, &ft, &fst)?;
        Ok(self.pre.forward(ctx, &fused))
    }

    /// Differentiable learned grid `(H*W, 2C)`.
    pub fn grid_features<'t>(&self, ctx: &Ctx<'t>, batch: &EventBatch, seed: u64) -> Result<Var<'t>> {
        let f = self.point_features(ctx, batch, seed)?;
        scatter_var(batch, &f, self.config.reduce)
    }

    /// Inference path: branches run on separate tapes and may run concurrently.
    fn infer_points(&self, batch: &EventBatch, seed: u64) -> Result<Mat> {
        let x = batch_features(&batch.events);
        let run = |net: &BranchNetwork| -> Result<Mat> {
            let tape = Tape::inference();
            let ctx = Ctx::new(&tape, &self.store);
            Ok(net.forward(&ctx, batch, &ctx.constant(x.clone()), seed)?.value().clone())
        };
        let (fs, (ft, fst)) =
            rayon::join(|| run(&self.spatial), || rayon::join(|| run(&self.temporal), || run(&self.spatiotemporal)));
        let (fs, ft, fst) = (fs?, ft?, fst?);
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, &self.store);
        let fused = self.sta.forward(&ctx, &ctx.constant(fs), &ctx.constant(ft), &ctx.constant(fst))?;
        let out = self.pre.forward(&ctx, &fused).value().clone();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite fused features".into()));
        }
        Ok(out)
    }

    /// Raw events to an `H x W x (2C + 4)` tensor.
    pub fn tensorize(&self, events: &[Event], seed: u64) -> Result<GridTensor> {
        let batch = self.prepare(events, seed)?;
        let points = self.infer_points(&batch, seed)?;
        let learned = scatter(&batch, &points, self.config.reduce)?;
        let stats = statistical_channels(events, &self.config.geometry)?;
        assemble(learned, stats, self.config.geometry)
    }
}

/// Seed used by the buffer entry points: the config's seed, else 0.
fn buffer_seed(config: &PipelineConfig) -> u64 {
    config.seed.unwrap_or(0)
}

/// `OMNX` bytes for an in-memory event list and config text.
pub fn tensorize_events(events: &[Event], config_text: &str) -> Result<Vec<u8>> {
    let config = PipelineConfig::from_toml_str(config_text)?;
    let seed = buffer_seed(&config);
    let model = OmniEvent::from_config(config, seed)?;
    Ok(model.tensorize(events, seed)?.to_omnx())
}

/// `OMNX` bytes for a complete `EVT1` buffer (magic and count included).
pub fn tensorize_evt1_bytes(buf: &[u8], config_text: &str) -> Result<Vec<u8>> {
    tensorize_events(&decode_evt1(buf)?, config_text)
}

/// `OMNX` bytes for `count` bare `EVT1` records.
pub fn tensorize_evt1_records(records: &[u8], count: usize, config_text: &str) -> Result<Vec<u8>> {
    tensorize_events(&decode_evt1_records(records, count)?, config_text)
}
