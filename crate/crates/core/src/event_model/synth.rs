use ndarray::Array2;

use super::{CameraGeometry, Event};
use crate::error::{Error, Result};

/// Simulate a contrast-threshold sensor over a sequence of log-intensity frames.
///
/// Each pixel keeps a reference level, initialised from the first frame. When a
/// later frame differs from the reference by more than `tau` the pixel emits one
/// event with the sign of the change and the reference moves to the new level.
/// Events are returned in time order, row-major within a frame.
pub fn synth_events(frames: &[Array2<f64>], timestamps: &[f64], geometry: &CameraGeometry) -> Result<Vec<Event>> {
    if frames.len() < 2 {
        return Err(Error::Parameter(format!("need at least 2 frames, got {}", frames.len())));
    }
    if timestamps.len() != frames.len() {
        return Err(Error::Shape(format!("{} frames but {} timestamps", frames.len(), timestamps.len())));
    }
    if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Parameter("timestamps must be strictly increasing".into()));
    }
    let shape = (geometry.height, geometry.width);
    for (i, f) in frames.iter().enumerate() {
        if f.dim() != shape {
            return Err(Error::Shape(format!("frame {i} is {:?}, sensor is {:?}", f.dim(), shape)));
        }
    }

    let mut reference = frames[0].clone();
    let mut events = Vec::new();
    for (frame, &t) in frames.iter().zip(timestamps).skip(1) {
        for ((idx, level), r) in frame.indexed_iter().zip(reference.iter_mut()) {
            let delta = level - *r;
            if delta.abs() > geometry.tau {
                events.push(Event::new(idx.0 as u16, idx.1 as u16, t, if delta > 0.0 { 1 } else { -1 }));
                *r = *level;
            }
        }
    }
    Ok(events)
}

/// Direction of a synthetic moving blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionPattern {
    Horizontal,
    Vertical,
    Diagonal,
}

/// Log-intensity frames of a bright Gaussian blob crossing the sensor.
///
/// `phase` in `[0, 1)` offsets the blob along the direction of travel.
pub fn moving_blob_frames(
    geometry: &CameraGeometry,
    pattern: MotionPattern,
    n_frames: usize,
    duration: f64,
    phase: f64,
) -> (Vec<Array2<f64>>, Vec<f64>) {
    let (h, w) = (geometry.height as f64, geometry.width as f64);
    let sigma = (h.min(w) / 8.0).max(1.0);
    let steps = n_frames.max(2);
    let mut frames = Vec::with_capacity(steps);
    let mut times = Vec::with_capacity(steps);
    for k in 0..steps {
        let s = k as f64 / (steps - 1) as f64;
        let travel = (0.15 + 0.7 * ((s + phase) % 1.0)).clamp(0.0, 1.0);
        let (ch, cw) = match pattern {
            MotionPattern::Horizontal => (0.5 * h, travel * w),
            MotionPattern::Vertical => (travel * h, 0.5 * w),
            MotionPattern::Diagonal => (travel * h, travel * w),
        };
        let frame = Array2::from_shape_fn((geometry.height, geometry.width), |(r, c)| {
            let d2 = (r as f64 - ch).powi(2) + (c as f64 - cw).powi(2);
            2.0 * (-d2 / (2.0 * sigma * sigma)).exp()
        });
        frames.push(frame);
        times.push(duration * s);
    }
    (frames, times)
}
