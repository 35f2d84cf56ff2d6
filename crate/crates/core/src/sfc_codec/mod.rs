//! Space-filling-curve codes for quantized 1-, 2- and 3-D cells.
//!
//! Conventions:
//! * Z-order interleaves bits with axis 0 in the least-significant position.
//! * Hilbert uses the Skilling transpose transform. In 2-D the unit square is
//!   visited `(0,0) (0,1) (1,1) (1,0)`, cells written `(axis0, axis1)`.
//! * The `-trans` variants rotate the axes `(x, y, z) -> (y, z, x)` before
//!   encoding. For one axis this is a no-op.
//! * Every curve on one axis is the identity ordering.

mod hilbert;
mod zorder;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::event_model::NormalizedEvent;

pub const MAX_BITS: u32 = 21;
pub const DEFAULT_BITS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    Hilbert,
    HilbertTrans,
    Z,
    ZTrans,
}

impl CurveKind {
    pub const ALL: [CurveKind; 4] = [CurveKind::Z, CurveKind::ZTrans, CurveKind::Hilbert, CurveKind::HilbertTrans];

    pub fn as_str(self) -> &'static str {
        match self {
            CurveKind::Hilbert => "hilbert",
            CurveKind::HilbertTrans => "hilbert-trans",
            CurveKind::Z => "z",
            CurveKind::ZTrans => "z-trans",
        }
    }

    pub fn is_transposed(self) -> bool {
        matches!(self, CurveKind::HilbertTrans | CurveKind::ZTrans)
    }

    pub fn is_hilbert(self) -> bool {
        matches!(self, CurveKind::Hilbert | CurveKind::HilbertTrans)
    }
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CurveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hilbert" => Ok(CurveKind::Hilbert),
            "hilbert-trans" => Ok(CurveKind::HilbertTrans),
            "z" => Ok(CurveKind::Z),
            "z-trans" => Ok(CurveKind::ZTrans),
            other => Err(Error::Parameter(format!(
                "unknown curve `{other}` (expected hilbert, hilbert-trans, z or z-trans)"
            ))),
        }
    }
}

/// A curve family at a fixed dimensionality and per-axis resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CurveOrder {
    pub kind: CurveKind,
    dims: u32,
    bits: u32,
}

impl CurveOrder {
    pub fn new(kind: CurveKind, dims: u32, bits: u32) -> Result<Self> {
        if !(1..=3).contains(&dims) {
            return Err(Error::Parameter(format!("curve dims must be 1, 2 or 3, got {dims}")));
        }
        if !(1..=MAX_BITS).contains(&bits) {
            return Err(Error::Parameter(format!("bits per axis must be in 1..={MAX_BITS}, got {bits}")));
        }
        Ok(Self { kind, dims, bits })
    }

    pub fn dims(&self) -> u32 {
        self.dims
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Total code width, `dims * bits`.
    pub fn code_bits(&self) -> u32 {
        self.dims * self.bits
    }

    /// Number of codes, `2^(dims * bits)`.
    pub fn code_space(&self) -> u64 {
        1u64 << self.code_bits()
    }

    pub fn max_cell(&self) -> u32 {
        (1u32 << self.bits) - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct CurveCode(pub u64);

/// Coordinate subsets a branch serializes on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axes {
    /// `(x1, x2)`
    Spatial,
    /// `(x3)`
    Temporal,
    /// `(x1, x2, x3)`
    SpatioTemporal,
}

impl Axes {
    pub fn dims(self) -> u32 {
        match self {
            Axes::Spatial => 2,
            Axes::Temporal => 1,
            Axes::SpatioTemporal => 3,
        }
    }
}

/// Grid cell of one coordinate: `floor(coord / grid)` clamped to `[0, 2^bits - 1]`.
pub fn quantize_axis(coord: f64, grid: f64, bits: u32) -> u32 {
    let max = ((1u64 << bits) - 1) as f64;
    let cell = (coord / grid).floor();
    if cell.is_nan() || cell <= 0.0 {
        0
    } else if cell >= max {
        max as u32
    } else {
        cell as u32
    }
}

/// Quantize the selected coordinates of a point. Unused trailing slots are zero.
pub fn quantize(point: &NormalizedEvent, axes: Axes, grid: f64, bits: u32) -> [u32; 3] {
    let q = |v: f64| quantize_axis(v, grid, bits);
    match axes {
        Axes::Spatial => [q(point.x1), q(point.x2), 0],
        Axes::Temporal => [q(point.x3), 0, 0],
        Axes::SpatioTemporal => [q(point.x1), q(point.x2), q(point.x3)],
    }
}

/// Grid size matching `bits` on unit-range coordinates, `2^-bits`.
pub fn default_grid(bits: u32) -> f64 {
    (-(bits as f64)).exp2()
}

fn transpose_axes(cells: &[u32]) -> [u32; 3] {
    let d = cells.len();
    let mut out = [0u32; 3];
    for i in 0..d {
        out[i] = cells[(i + 1) % d];
    }
    out
}

fn untranspose_axes(cells: &[u32]) -> [u32; 3] {
    let d = cells.len();
    let mut out = [0u32; 3];
    for i in 0..d {
        out[(i + 1) % d] = cells[i];
    }
    out
}

pub fn encode(cells: &[u32], order: &CurveOrder) -> Result<CurveCode> {
    let d = order.dims as usize;
    if cells.len() != d {
        return Err(Error::Shape(format!("{} coordinates for a {d}-D curve", cells.len())));
    }
    if let Some(c) = cells.iter().find(|&&c| c > order.max_cell()) {
        return Err(Error::Range(format!("cell {c} exceeds {} bits", order.bits)));
    }
    Ok(encode_unchecked(cells, order))
}

/// [`encode`] without validation. `cells` must hold `dims` values below `2^bits`.
pub fn encode_unchecked(cells: &[u32], order: &CurveOrder) -> CurveCode {
    let d = order.dims as usize;
    if d == 1 {
        return CurveCode(u64::from(cells[0]));
    }
    let mut x = if order.kind.is_transposed() {
        transpose_axes(&cells[..d])
    } else {
        let mut x = [0u32; 3];
        x[..d].copy_from_slice(&cells[..d]);
        x
    };
    let code = if order.kind.is_hilbert() {
        hilbert::encode(&mut x[..d], order.bits)
    } else {
        zorder::interleave(&x[..d], order.bits)
    };
    CurveCode(code)
}

pub fn decode(code: CurveCode, order: &CurveOrder) -> Result<Vec<u32>> {
    if code.0 >= order.code_space() {
        return Err(Error::Range(format!("code {} outside a {}-bit code space", code.0, order.code_bits())));
    }
    let d = order.dims as usize;
    if d == 1 {
        return Ok(vec![code.0 as u32]);
    }
    let mut x = [0u32; 3];
    if order.kind.is_hilbert() {
        hilbert::decode(code.0, &mut x[..d], order.bits);
    } else {
        zorder::deinterleave(code.0, &mut x[..d], order.bits);
    }
    let cells = if order.kind.is_transposed() { untranspose_axes(&x[..d]) } else { x };
    Ok(cells[..d].to_vec())
}
