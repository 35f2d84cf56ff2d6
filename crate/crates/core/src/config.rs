//! Flat TOML pipeline configuration.
//!
//! Every key is top level. Branch keys carry a `s_`, `t_` or `st_` prefix,
//! fusion keys a `sta_` prefix. Unknown keys, wrong types and out-of-range
//! values are reported with the line they appear on.

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::event_model::{CameraGeometry, NormalizeOptions};
use crate::feature_tensorize::Reduce;
use crate::serial_pipeline::{Branch, BranchConfig};
use crate::sta_fusion::StaConfig;

pub const DEFAULT_HEIGHT: usize = 180;
pub const DEFAULT_WIDTH: usize = 240;
pub const DEFAULT_TAU: f64 = 0.2;
pub const DEFAULT_SEGMENTS: usize = 8;
pub const DEFAULT_SAMPLES: usize = 4096;

/// The shipped default configuration file.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../../../configs/default.toml");

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub geometry: CameraGeometry,
    pub segments: usize,
    pub samples: usize,
    pub seed: Option<u64>,
    pub normalize: NormalizeOptions,
    pub spatial: BranchConfig,
    pub temporal: BranchConfig,
    pub spatiotemporal: BranchConfig,
    /// Fusion settings; `seq_len` always equals `samples`.
    pub sta: StaConfig,
    pub reduce: Reduce,
    pub weights: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            geometry: CameraGeometry::new(DEFAULT_HEIGHT, DEFAULT_WIDTH, DEFAULT_TAU).expect("valid default geometry"),
            segments: DEFAULT_SEGMENTS,
            samples: DEFAULT_SAMPLES,
            seed: None,
            normalize: NormalizeOptions::default(),
            spatial: BranchConfig::spatial(),
            temporal: BranchConfig::temporal(),
            spatiotemporal: BranchConfig::spatiotemporal(),
            sta: StaConfig { seq_len: DEFAULT_SAMPLES, ..StaConfig::default() },
            reduce: Reduce::Max,
            weights: None,
            input: None,
            output: None,
        }
    }
}

fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|line| {
        let line = line.trim_start();
        let rest = line.strip_prefix(key).or_else(|| line.strip_prefix(&format!("\"{key}\"")));
        rest.is_some_and(|r| r.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn convert<T: DeserializeOwned>(key: &str, value: Value) -> std::result::Result<T, String> {
    let shown = value.to_string();
    value.try_into().map_err(|e: toml::de::Error| format!("`{key}` = {shown}: {}", e.message()))
}

impl PipelineConfig {
    pub fn branch(&self, branch: Branch) -> &BranchConfig {
        match branch {
            Branch::Spatial => &self.spatial,
            Branch::Temporal => &self.temporal,
            Branch::SpatioTemporal => &self.spatiotemporal,
        }
    }

    pub fn branch_mut(&mut self, branch: Branch) -> &mut BranchConfig {
        match branch {
            Branch::Spatial => &mut self.spatial,
            Branch::Temporal => &mut self.temporal,
            Branch::SpatioTemporal => &mut self.spatiotemporal,
        }
    }

    /// Parse a config file on top of the defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: Table = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        let mut cfg = Self::default();
        let mut height = cfg.geometry.height;
        let mut width = cfg.geometry.width;
        let mut tau = cfg.geometry.tau;
        for (key, value) in table {
            let at = |message: String| Error::Config { line: line_of_key(text, &key), message };
            let outcome = match key.as_str() {
                "height" => convert(&key, value).map(|v| height = v),
                "width" => convert(&key, value).map(|v| width = v),
                "tau" => convert(&key, value).map(|v| tau = v),
                "segments" => convert(&key, value).map(|v| cfg.segments = v),
                "samples" => convert(&key, value).map(|v| cfg.samples = v),
                "seed" => convert(&key, value).map(|v| cfg.seed = Some(v)),
                "normalize_h_by_H" => convert(&key, value).map(|v| cfg.normalize.normalize_h_by_height = v),
                "reduce" => convert(&key, value).map(|v| cfg.reduce = v),
                "weights" => convert(&key, value).map(|v| cfg.weights = Some(v)),
                "input" => convert(&key, value).map(|v| cfg.input = Some(v)),
                "output" => convert(&key, value).map(|v| cfg.output = Some(v)),
                "sta_channels" => convert(&key, value).map(|v| cfg.sta.channels = v),
                "sta_rounds" => convert(&key, value).map(|v| cfg.sta.rounds = v),
                "sta_fc_hidden" => convert(&key, value).map(|v| cfg.sta.fc_hidden = v),
                _ => {
                    let (branch, field) = if let Some(f) = key.strip_prefix("st_") {
                        (Branch::SpatioTemporal, f)
                    } else if let Some(f) = key.strip_prefix("s_") {
                        (Branch::Spatial, f)
                    } else if let Some(f) = key.strip_prefix("t_") {
                        (Branch::Temporal, f)
                    } else {
                        return Err(at(format!("unknown key `{key}`")));
                    };
                    set_branch_field(cfg.branch_mut(branch), &key, field, value)
                }
            };
            outcome.map_err(at)?;
        }
        cfg.geometry = CameraGeometry::new(height, width, tau).map_err(|e| Error::Config {
            line: line_of_key(text, "tau").or_else(|| line_of_key(text, "height")).or_else(|| line_of_key(text, "width")),
            message: e.to_string(),
        })?;
        cfg.sta.seq_len = cfg.samples;
        cfg.validate().map_err(|e| match e {
            Error::Config { .. } => e,
            other => Error::Config { line: blame_line(text, &other), message: other.to_string() },
        })?;
        Ok(cfg)
    }

    /// Cross-module bounds.
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::Parameter("segments must be at least 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::Parameter("samples must be at least 1".into()));
        }
        for b in [&self.spatial, &self.temporal, &self.spatiotemporal] {
            b.validate()?;
            if b.out_channels() != self.sta.channels {
                return Err(Error::Parameter(format!(
                    "branch {} outputs {} channels but sta_channels is {}",
                    b.branch,
                    b.out_channels(),
                    self.sta.channels
                )));
            }
        }
        if self.sta.seq_len != self.samples {
            return Err(Error::Parameter("fusion sequence length must equal samples".into()));
        }
        self.sta.validate()
    }
}

/// Best-effort line for a post-parse validation error: the first named key present in the file.
fn blame_line(text: &str, err: &Error) -> Option<usize> {
    let msg = err.to_string();
    let mut candidates = Vec::new();
    for (needle, prefix) in [
        ("sta_channels", "sta_channels"),
        ("branch ST", "st_"),
        ("branch S", "s_"),
        ("branch T", "t_"),
        ("segments", "segments"),
        ("samples", "samples"),
        ("fusion", "sta_"),
    ] {
        if msg.contains(needle) {
            candidates.push(prefix);
        }
    }
    candidates.iter().find_map(|p| text.lines().position(|l| l.trim_start().starts_with(p))).map(|i| i + 1)
}

fn set_branch_field(b: &mut BranchConfig, key: &str, field: &str, value: Value) -> std::result::Result<(), String> {
    match field {
        "orders" => convert(key, value).map(|v| b.orders = v),
        "bits" => convert(key, value).map(|v| b.bits = v),
        "enc_depths" => convert(key, value).map(|v| b.enc_depths = v),
        "enc_channels" => convert(key, value).map(|v| b.enc_channels = v),
        "enc_heads" => convert(key, value).map(|v| b.enc_heads = v),
        "enc_patch" => convert(key, value).map(|v| b.enc_patch = v),
        "dec_depths" => convert(key, value).map(|v| b.dec_depths = v),
        "dec_channels" => convert(key, value).map(|v| b.dec_channels = v),
        "dec_heads" => convert(key, value).map(|v| b.dec_heads = v),
        "dec_patch" => convert(key, value).map(|v| b.dec_patch = v),
        "stride" => convert(key, value).map(|v| b.stride = v),
        "y_schedule" => convert(key, value).map(|v| b.y_schedule = v),
        "mlp_ratio" => convert(key, value).map(|v| b.mlp_ratio = v),
        _ => Err(format!("unknown key `{key}`")),
    }
}

/// Seed precedence: command-line flag, then config file, then environment, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match env.map(str::trim) {
        None | Some("") => Ok(0),
        Some(v) => v.parse().map_err(|_| Error::Parameter(format!("OMNIEVENT_SEED is not an integer: {v:?}"))),
    }
}
