//! Event-camera stream tensorization.
//!
//! The pipeline fuses raw events per pixel and time slice, samples a fixed
//! number of points, serializes them along space-filling curves in three
//! decoupled branches (spatial, temporal, joint), aggregates each branch with
//! patch attention and hierarchical code-shift pooling, fuses the branches
//! with cross attention and finally scatters the per-point features onto the
//! sensor grid next to handcrafted count/time channels.

pub mod cli;
pub mod config;
pub mod error;
pub mod event_model;
pub mod feature_tensorize;
pub mod nn;
pub mod oracles;
pub mod pipeline;
pub mod selfcheck;
pub mod serial_pipeline;
pub mod sfc_codec;
pub mod sfca;
pub mod sta_fusion;

pub use error::{Error, Result};
