//! Brute-force reference implementations and the benchmark harness.
//!
//! Nothing here calls into the code paths it is used to check: each oracle is
//! written from the definition with plain loops and standard collections.

pub mod bench;
mod knn;
mod naive;

use std::collections::HashMap;

pub use knn::{knn_heap_pass, knn_oracle, KnnMetric};
pub use naive::{naive_attention, naive_layer_norm, naive_linear, naive_matmul, naive_softmax_rows};

use crate::event_model::{Event, FusedEvent};

/// Hilbert index of `(x, y)` on a `2^bits` square by recursive quadrant subdivision.
///
/// Quadrants are visited `(0,0) (0,1) (1,1) (1,0)`; the first sub-curve is
/// mirrored about the main diagonal, the last about the anti-diagonal.
pub fn hilbert_recursive_oracle(x: u32, y: u32, bits: u32) -> u64 {
    if bits == 0 {
        return 0;
    }
    let half = 1u32 << (bits - 1);
    let (lx, ly) = (x % half, y % half);
    let (digit, sx, sy) = match (x >= half, y >= half) {
        (false, false) => (0u64, ly, lx),
        (false, true) => (1, lx, ly),
        (true, true) => (2, lx, ly),
        (true, false) => (3, half - 1 - ly, half - 1 - lx),
    };
    digit * u64::from(half) * u64::from(half) + hilbert_recursive_oracle(sx, sy, bits - 1)
}

/// Group events by `(pixel, segment)` with a hash map; output order is unspecified.
pub fn fuse_oracle(events: &[Event], segments: usize, t_span: (f64, f64)) -> Vec<FusedEvent> {
    let (t_min, t_max) = t_span;
    let mut cells: HashMap<(u16, u16, usize), Vec<&Event>> = HashMap::new();
    for e in events {
        let seg = if t_max > t_min {
            let s = ((e.t - t_min) / (t_max - t_min) * segments as f64).floor();
            if s < 0.0 {
                0
            } else {
                (s as usize).min(segments - 1)
            }
        } else {
            0
        };
        cells.entry((e.h, e.w, seg)).or_default().push(e);
    }
    cells
        .into_iter()
        .map(|((h, w, _), members)| {
            let mut t = 0.0;
            for m in &members {
                t += m.t;
            }
            FusedEvent {
                h,
                w,
                t_avg: t / members.len() as f64,
                p_acc: members.iter().map(|m| i64::from(m.p)).sum(),
                c: members.len() as u32,
            }
        })
        .collect()
}
