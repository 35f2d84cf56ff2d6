//! Event records, camera geometry and the fusion/sampling front end.

mod fusion;
pub mod io;
mod synth;

pub use fusion::{fuse, fuse_stream, sample_and_normalize, segment_index, time_span};
pub use synth::{moving_blob_frames, synth_events, MotionPattern};

use crate::error::{Error, Result};

/// A single brightness-change event at pixel `(h, w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub h: u16,
    pub w: u16,
    /// Timestamp in seconds.
    pub t: f64,
    /// Polarity, `+1` or `-1`.
    pub p: i8,
}

impl Event {
    pub fn new(h: u16, w: u16, t: f64, p: i8) -> Self {
        Self { h, w, t, p }
    }

    pub fn validate(&self, geometry: &CameraGeometry) -> Result<()> {
        if usize::from(self.h) >= geometry.height || usize::from(self.w) >= geometry.width {
            return Err(Error::Range(format!(
                "event pixel ({}, {}) outside {}x{} sensor",
                self.h, self.w, geometry.height, geometry.width
            )));
        }
        if self.p != 1 && self.p != -1 {
            return Err(Error::Range(format!("polarity must be +1 or -1, got {}", self.p)));
        }
        if !self.t.is_finite() || self.t < 0.0 {
            return Err(Error::Range(format!("timestamp must be finite and non-negative, got {}", self.t)));
        }
        Ok(())
    }
}

/// Sensor size and contrast threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraGeometry {
    pub height: usize,
    pub width: usize,
    /// Trigger threshold in log-intensity units.
    pub tau: f64,
}

impl CameraGeometry {
    pub fn new(height: usize, width: usize, tau: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Parameter(format!("sensor must be at least 1x1, got {height}x{width}")));
        }
        if height > usize::from(u16::MAX) + 1 || width > usize::from(u16::MAX) + 1 {
            return Err(Error::Parameter("sensor dimensions exceed the 16-bit pixel index range".into()));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Parameter(format!("threshold tau must be positive, got {tau}")));
        }
        Ok(Self { height, width, tau })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

/// All events of one pixel within one temporal segment, merged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedEvent {
    pub h: u16,
    pub w: u16,
    pub t_avg: f64,
    pub p_acc: i64,
    pub c: u32,
}

/// A fused event rescaled to comparable numeric ranges.
///
/// The source pixel is kept alongside the normalized features so that
/// per-point features can later be scattered back onto the sensor grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedEvent {
    pub h: u16,
    pub w: u16,
    pub x1: f64,
    pub x2: f64,
    /// Normalized time in `[0, 1]`.
    pub x3: f64,
    pub p_acc: f64,
    pub c: f64,
}

impl NormalizedEvent {
    /// The five per-point input features `(x1, x2, x3, p_acc, c)`.
    pub fn features(&self) -> [f64; 5] {
        [self.x1, self.x2, self.x3, self.p_acc, self.c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NormalizeOptions {
    /// Divide `h` by the sensor height instead of the width.
    pub normalize_h_by_height: bool,
}

/// A fixed-size set of normalized points ready for serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct EventBatch {
    pub events: Vec<NormalizedEvent>,
    pub geometry: CameraGeometry,
    pub segments: usize,
    pub t_min: f64,
    pub t_max: f64,
}

impl EventBatch {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}
