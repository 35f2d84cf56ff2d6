//! Dense kernels, layers and reverse-mode gradients for the aggregation and fusion stages.
//!
//! Feature matrices are stored one point per row, `(N, C)`.

mod block;
pub mod checkpoint;
mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;

pub use block::EncoderBlock;
pub use gradcheck::{grad_check, GradCheckReport, MAX_CHECKED_PARAMS};
pub use layers::{Activation, Embedding, LayerNorm, Linear, Mlp, INPUT_FEATURES, LN_EPS};
pub use optim::Adam;
pub use params::{Ctx, ParamId, ParamStore};
pub use tape::{Grads, Mat, Tape, Var};

use crate::event_model::NormalizedEvent;

/// Stack per-point input features into an `(N, 5)` matrix.
pub fn batch_features(points: &[NormalizedEvent]) -> Mat {
    let mut m = Mat::zeros((points.len(), INPUT_FEATURES));
    for (mut row, p) in m.rows_mut().into_iter().zip(points) {
        for (dst, v) in row.iter_mut().zip(p.features()) {
            *dst = v;
        }
    }
    m
}
