//! Scatter per-point features onto the sensor grid and append count/time channels.

mod omnx;

pub use omnx::{decode_omnx, encode_omnx, OmnxTensor, DTYPE_F32};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{s, Array3, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::event_model::{time_span, CameraGeometry, Event, EventBatch};
use crate::nn::{Ctx, Linear, Mat, ParamStore, Var};

pub const STAT_CHANNELS: [&str; 4] = ["pos_count", "neg_count", "pos_latest", "neg_latest"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    #[default]
    Max,
    Mean,
}

impl fmt::Display for Reduce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduce::Max => "max",
            Reduce::Mean => "mean",
        })
    }
}

impl FromStr for Reduce {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Reduce::Max),
            "mean" => Ok(Reduce::Mean),
            other => Err(Error::Parameter(format!("unknown reduction {other:?}"))),
        }
    }
}

/// Dense `H x W x C` output with named channels.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTensor {
    pub data: Array3<f64>,
    pub geometry: CameraGeometry,
    pub channel_names: Vec<String>,
}

impl GridTensor {
    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    /// `OMNX` bytes with an `f32` payload.
    pub fn to_omnx(&self) -> Vec<u8> {
        let dims: Vec<u32> = self.data.shape().iter().map(|&d| d as u32).collect();
        let payload: Vec<f32> = self.data.iter().map(|&v| v as f32).collect();
        encode_omnx(&dims, &payload)
    }

    /// One channel as `H` lines of `W` comma-separated values.
    pub fn write_channel_csv<W: Write>(&self, channel: usize, mut out: W) -> Result<()> {
        if channel >= self.channels() {
            return Err(Error::Range(format!("channel {channel} of {}", self.channels())));
        }
        for row in self.data.index_axis(Axis(2), channel).rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{}", *v as f32)).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

fn pixel_groups(batch: &EventBatch) -> Result<Vec<usize>> {
    let g = &batch.geometry;
    batch
        .events
        .iter()
        .map(|p| {
            let (h, w) = (p.h as usize, p.w as usize);
            if h >= g.height || w >= g.width {
                return Err(Error::Range(format!("point at ({h}, {w}) outside {}x{}", g.height, g.width)));
            }
            Ok(h * g.width + w)
        })
        .collect()
}

/// Differentiable scatter: `(H*W, C)` rows in row-major pixel order, zero where no point lands.
pub fn scatter_var<'t>(batch: &EventBatch, features: &Var<'t>, reduce: Reduce) -> Result<Var<'t>> {
    if features.shape().0 != batch.len() {
        return Err(Error::Shape(format!("{} feature rows for {} points", features.shape().0, batch.len())));
    }
    let group = pixel_groups(batch)?;
    let n = batch.geometry.pixels();
    Ok(match reduce {
        Reduce::Max => features.segment_max(&group, n),
        Reduce::Mean => features.segment_mean(&group, n),
    })
}

/// Scatter point features to an `H x W x C` grid.
pub fn scatter(batch: &EventBatch, features: &Mat, reduce: Reduce) -> Result<Array3<f64>> {
    if features.nrows() != batch.len() {
        return Err(Error::Shape(format!("{} feature rows for {} points", features.nrows(), batch.len())));
    }
    let group = pixel_groups(batch)?;
    let g = &batch.geometry;
    let c = features.ncols();
    let mut flat = Mat::zeros((g.pixels(), c));
    let mut counts = vec![0usize; g.pixels()];
    for (row, &pix) in features.rows().into_iter().zip(&group) {
        let mut acc = flat.row_mut(pix);
        if counts[pix] == 0 {
            acc.assign(&row);
        } else {
            match reduce {
                Reduce::Max => acc.zip_mut_with(&row, |a, &b| *a = a.max(b)),
                Reduce::Mean => acc += &row,
            }
        }
        counts[pix] += 1;
    }
    if reduce == Reduce::Mean {
        for (mut acc, &k) in flat.rows_mut().into_iter().zip(&counts) {
            if k > 1 {
                acc.mapv_inplace(|v| v / k as f64);
            }
        }
    }
    Ok(flat.into_shape_with_order((g.height, g.width, c)).expect("pixel-major layout"))
}

/// Positive/negative counts and latest normalized timestamps per pixel, from the raw stream.
///
/// Times are `(t - t_min) / (t_max - t_min)`; a zero span maps every event to 1.
pub fn statistical_channels(events: &[Event], geometry: &CameraGeometry) -> Result<Array3<f64>> {
    let mut out = Array3::zeros((geometry.height, geometry.width, 4));
    let Some((t_min, t_max)) = time_span(events) else {
        return Ok(out);
    };
    let span = t_max - t_min;
    for e in events {
        e.validate(geometry)?;
        let t = if span > 0.0 { (e.t - t_min) / span } else { 1.0 };
        let (count, time) = if e.p > 0 { (0, 2) } else { (1, 3) };
        let (h, w) = (e.h as usize, e.w as usize);
        out[[h, w, count]] += 1.0;
        let latest = &mut out[[h, w, time]];
        *latest = f64::max(*latest, t);
    }
    Ok(out)
}

/// Append statistical channels after the learned ones.
pub fn assemble(learned: Array3<f64>, stats: Array3<f64>, geometry: CameraGeometry) -> Result<GridTensor> {
    let (h, w, c) = learned.dim();
    if (h, w) != (geometry.height, geometry.width) || stats.dim() != (h, w, 4) {
        return Err(Error::Shape(format!("learned {:?} and statistics {:?} disagree", learned.dim(), stats.dim())));
    }
    let mut data = Array3::zeros((h, w, c + 4));
    data.slice_mut(s![.., .., ..c]).assign(&learned);
    data.slice_mut(s![.., .., c..]).assign(&stats);
    let mut channel_names: Vec<String> = (0..c).map(|i| format!("feat{i}")).collect();
    channel_names.extend(STAT_CHANNELS.iter().map(|s| s.to_string()));
    Ok(GridTensor { data, geometry, channel_names })
}

/// Per-point linear map applied before scattering, identity at construction.
#[derive(Debug, Clone, Copy)]
pub struct PreScatter {
    pub linear: Linear,
}

impl PreScatter {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let linear = Linear::new(store, name, channels, channels, rng);
        *store.get_mut(linear.weight) = Mat::eye(channels);
        Self { linear }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: &Var<'t>) -> Var<'t> {
        self.linear.forward(ctx, x)
    }
}
