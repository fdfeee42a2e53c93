//! Layers for the SE-ResNeXt backbone: grouped conv, batchnorm, pooling,
//! linear, squeeze-and-excitation and the softmax cross-entropy loss.

pub mod conv;
pub mod layers;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod params;
pub mod pool;

pub use conv::{conv2d, Conv2dSpec};
pub use layers::{BatchNorm2d, Conv2d, Ctx, Linear, Mode, SeBlock, SeBlockSpec};
pub use linear::linear;
pub use loss::{softmax, softmax_cross_entropy};
pub use norm::{batch_norm, BatchStats, NormMode};
pub use params::{NormUpdate, Param, ParamId, ParamKind, ParamStore};
pub use pool::{adaptive_avg_pool, channel_scale, maxpool2d, mean_pool};
