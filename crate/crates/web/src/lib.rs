//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! Images cross the boundary as RGBA bytes ready for `ImageData`.

use stcnet::video::{
    residual_frames, sample_frames, synth_generate, Clip, ResidualSpec, SampleMode, SamplerSpec, SceneInfo,
    SyntheticSpec,
};
use wasm_bindgen::prelude::*;

/// Clips generated per scene set; the kinds are shuffled across them.
const SET_SIZE: usize = 8;

fn js(e: stcnet::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn rgba(rgb: impl Iterator<Item = [u8; 3]>) -> Vec<u8> {
    rgb.flat_map(|[r, g, b]| [r, g, b, 255]).collect()
}

/// One synthetic clip held in memory.
#[wasm_bindgen]
pub struct Scene {
    clip: Clip,
}

#[wasm_bindgen]
impl Scene {
    /// Clip `index` of a small seeded set at `resolution` x `resolution`.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, index: usize, resolution: usize, frames: usize) -> Result<Scene, JsError> {
        let set = synth_generate(&SyntheticSpec {
            n_clips: SET_SIZE,
            frames_per_clip: frames,
            resolution,
            class_mix: 0.5,
            seed: seed as u64,
        })
        .map_err(js)?;
        let clip = set
            .clips
            .into_iter()
            .nth(index % SET_SIZE)
            .ok_or_else(|| JsError::new("empty scene set"))?;
        Ok(Scene { clip })
    }

    pub fn len(&self) -> usize {
        self.clip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clip.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.clip.height()
    }

    #[wasm_bindgen(getter)]
    pub fn source_id(&self) -> String {
        self.clip.source_id.clone()
    }

    /// `smoke`, `steam`, `box` or `static`.
    #[wasm_bindgen(getter)]
    pub fn kind(&self) -> String {
        SceneInfo::parse(&self.clip.source_id).map_or_else(String::new, |s| s.kind.name().to_string())
    }

    pub fn frame_rgba(&self, t: usize) -> Result<Vec<u8>, JsError> {
        if t >= self.clip.len() {
            return Err(JsError::new(&format!("frame {t} out of range")));
        }
        Ok(rgba(self.clip.frame(t).chunks_exact(3).map(|p| [p[0], p[1], p[2]])))
    }

    /// Residual of frame `t` against its neighbour, `min(alpha |diff|, beta)`.
    pub fn residual_rgba(&self, t: usize, alpha: f64, beta: f64) -> Result<Vec<u8>, JsError> {
        let r = residual_frames(&self.clip, &[t], &ResidualSpec { alpha, beta }).map_err(js)?;
        let hw = self.clip.height() * self.clip.width();
        let d = r.data();
        Ok(rgba(
            (0..hw).map(|p| [d[p], d[hw + p], d[2 * hw + p]].map(|v| v.round() as u8)),
        ))
    }
}

/// One frame index per segment; `seed` 0 picks segment centres.
#[wasm_bindgen]
pub fn sample_segments(len: usize, n_segments: usize, seed: u32) -> Result<Vec<u32>, JsError> {
    let mode = match seed {
        0 => SampleMode::Center,
        s => SampleMode::Random { seed: s as u64 },
    };
    let idx = sample_frames(len, SamplerSpec { n_segments }, mode).map_err(js)?;
    Ok(idx.into_iter().map(|i| i as u32).collect())
}
