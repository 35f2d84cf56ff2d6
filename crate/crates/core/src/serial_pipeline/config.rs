use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sfc_codec::{Axes, CurveKind, DEFAULT_BITS, MAX_BITS};

/// Which neighborhood metric a branch serializes on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "S")]
    Spatial,
    #[serde(rename = "T")]
    Temporal,
    #[serde(rename = "ST")]
    SpatioTemporal,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Spatial, Branch::Temporal, Branch::SpatioTemporal];

    pub fn axes(self) -> Axes {
        match self {
            Branch::Spatial => Axes::Spatial,
            Branch::Temporal => Axes::Temporal,
            Branch::SpatioTemporal => Axes::SpatioTemporal,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Spatial => "S",
            Branch::Temporal => "T",
            Branch::SpatioTemporal => "ST",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            Branch::Spatial => 1,
            Branch::Temporal => 2,
            Branch::SpatioTemporal => 3,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S" | "s" => Ok(Branch::Spatial),
            "T" | "t" => Ok(Branch::Temporal),
            "ST" | "st" => Ok(Branch::SpatioTemporal),
            other => Err(Error::Parameter(format!("unknown branch `{other}` (expected S, T or ST)"))),
        }
    }
}

/// Layer layout of one aggregation branch.
///
/// Encoder stage `i > 0` starts with a pooling step shifting codes by
/// `y_schedule[i - 1]` bits; decoder stage `i` restores the resolution of
/// encoder stage `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub branch: Branch,
    pub orders: Vec<CurveKind>,
    pub bits: u32,
    pub enc_depths: Vec<usize>,
    pub enc_channels: Vec<usize>,
    pub enc_heads: Vec<usize>,
    pub enc_patch: Vec<usize>,
    pub dec_depths: Vec<usize>,
    pub dec_channels: Vec<usize>,
    pub dec_heads: Vec<usize>,
    pub dec_patch: Vec<usize>,
    pub stride: Vec<usize>,
    pub y_schedule: Vec<u32>,
    pub mlp_ratio: usize,
}

impl BranchConfig {
    fn decoupled(branch: Branch) -> Self {
        Self {
            branch,
            orders: vec![CurveKind::Hilbert, CurveKind::HilbertTrans],
            bits: DEFAULT_BITS,
            enc_depths: vec![2, 2, 2],
            enc_channels: vec![64, 128, 256],
            enc_heads: vec![4, 8, 16],
            enc_patch: vec![512; 3],
            dec_depths: vec![2, 2],
            dec_channels: vec![64, 128],
            dec_heads: vec![4, 8],
            dec_patch: vec![512; 2],
            stride: vec![2, 2],
            y_schedule: vec![5, 3],
            mlp_ratio: 4,
        }
    }

    /// Spatial-only branch defaults.
    pub fn spatial() -> Self {
        Self::decoupled(Branch::Spatial)
    }

    /// Temporal-only branch defaults.
    pub fn temporal() -> Self {
        Self::decoupled(Branch::Temporal)
    }

    /// Joint space-time branch defaults.
    pub fn spatiotemporal() -> Self {
        Self {
            branch: Branch::SpatioTemporal,
            orders: CurveKind::ALL.to_vec(),
            bits: DEFAULT_BITS,
            enc_depths: vec![2, 2, 2, 6, 2],
            enc_channels: vec![32, 64, 128, 256, 512],
            enc_heads: vec![2, 4, 8, 16, 32],
            enc_patch: vec![512; 5],
            dec_depths: vec![2, 2, 2, 2],
            dec_channels: vec![64, 64, 128, 256],
            dec_heads: vec![4, 4, 8, 16],
            dec_patch: vec![512; 4],
            stride: vec![2, 2, 2, 2],
            y_schedule: vec![5, 3, 3, 3],
            mlp_ratio: 4,
        }
    }

    pub fn default_for(branch: Branch) -> Self {
        match branch {
            Branch::Spatial => Self::spatial(),
            Branch::Temporal => Self::temporal(),
            Branch::SpatioTemporal => Self::spatiotemporal(),
        }
    }

    pub fn encoder_stages(&self) -> usize {
        self.enc_depths.len()
    }

    /// Pooling steps between encoder stages.
    pub fn pooling_layers(&self) -> usize {
        self.encoder_stages().saturating_sub(1)
    }

    /// Channel width of the branch output (the top decoder stage, or the
    /// single encoder stage when there is no decoder).
    pub fn out_channels(&self) -> usize {
        self.dec_channels.first().copied().unwrap_or(self.enc_channels[0])
    }

    pub fn validate(&self) -> Result<()> {
        let name = self.branch.as_str();
        let bad = |msg: String| Err(Error::Parameter(format!("branch {name}: {msg}")));
        if self.orders.is_empty() {
            return bad("no curve orders".into());
        }
        if self.branch != Branch::SpatioTemporal && self.orders.iter().any(|k| !k.is_hilbert()) {
            return bad("decoupled branches only use hilbert and hilbert-trans".into());
        }
        if !(1..=MAX_BITS).contains(&self.bits) {
            return bad(format!("bits must be in 1..={MAX_BITS}"));
        }
        let stages = self.encoder_stages();
        if stages == 0 {
            return bad("at least one encoder stage is required".into());
        }
        for (what, len) in [
            ("enc_channels", self.enc_channels.len()),
            ("enc_heads", self.enc_heads.len()),
            ("enc_patch", self.enc_patch.len()),
        ] {
            if len != stages {
                return bad(format!("{what} has {len} entries for {stages} encoder stages"));
            }
        }
        let ups = stages - 1;
        for (what, len) in [
            ("dec_depths", self.dec_depths.len()),
            ("dec_channels", self.dec_channels.len()),
            ("dec_heads", self.dec_heads.len()),
            ("dec_patch", self.dec_patch.len()),
            ("y_schedule", self.y_schedule.len()),
        ] {
            if len != ups {
                return bad(format!("{what} has {len} entries for {ups} pooling steps"));
            }
        }
        if !self.stride.is_empty() && self.stride.len() != ups {
            return bad(format!("stride has {} entries for {ups} pooling steps", self.stride.len()));
        }
        let widths = self.enc_channels.iter().zip(&self.enc_heads).chain(self.dec_channels.iter().zip(&self.dec_heads));
        for (&c, &h) in widths {
            if c == 0 || h == 0 || c % h != 0 {
                return bad(format!("{h} heads do not divide {c} channels"));
            }
        }
        if self.enc_patch.iter().chain(&self.dec_patch).any(|&p| p == 0) {
            return bad("patch sizes must be positive".into());
        }
        if self.y_schedule.iter().any(|&y| y == 0) {
            return bad("pooling shifts must be positive".into());
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be positive".into());
        }
        Ok(())
    }
}
