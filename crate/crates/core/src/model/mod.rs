//! The two-path network: backbone configuration, fusion variants, forward
//! pass with activation taps, and checkpoints.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC};
pub use config::{validate_resolution, BackboneConfig, FusionVariant, HEAD_CHANNELS};
pub use network::{build_model, fuse_stage, Forward, PathKind, StcNet, TAPS};
