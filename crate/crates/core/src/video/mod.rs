//! Clips, frame sampling, residual frames, augmentation, the clip container
//! and a synthetic smoke/distractor generator.

mod augment;
mod clip;
mod container;
mod residual;
mod sampler;
mod synth;

use std::collections::BTreeMap;
use std::path::Path;

pub use augment::{augment, AugmentParams, AugmentSpec};
pub use clip::{Clip, Label};
pub use container::{clip_decode, clip_encode, CLIP_MAGIC, MAX_CLIP_BYTES};
pub use residual::{neighbour, residual_frames, residual_input, ResidualSpec};
pub use sampler::{sample_frames, SampleMode, SamplerSpec};
pub use synth::{synth_generate, SceneInfo, SceneKind, SyntheticSpec, NOISE, N_VIEWS};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClipDataset {
    pub clips: Vec<Clip>,
}

impl ClipDataset {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        clip_decode(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, clip_encode(self)?).map_err(|e| Error::io(path, e))
    }

    /// Clips `[start, end)` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        ClipDataset {
            clips: self.clips[range].to_vec(),
        }
    }

    /// Indices of the clips grouped by [`split_key`], in key order.
    pub fn splits(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, c) in self.clips.iter().enumerate() {
            out.entry(split_key(&c.source_id).to_string()).or_default().push(i);
        }
        out
    }
}

/// Evaluation split of a clip: the `source_id` up to its first `/`.
pub fn split_key(source_id: &str) -> &str {
    source_id.split('/').next().unwrap_or(source_id)
}
