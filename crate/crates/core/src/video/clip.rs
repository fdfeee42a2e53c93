use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NoSmoke = 0,
    Smoke = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Label::NoSmoke),
            1 => Ok(Label::Smoke),
            other => Err(Error::Malformed(format!("label {other} is not 0 or 1"))),
        }
    }
}

/// A labelled RGB clip: `frames` holds `t` frames of `h x w` interleaved RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    frames: Vec<u8>,
    t: usize,
    h: usize,
    w: usize,
    pub label: Label,
    pub source_id: String,
    pub fps: f32,
}

impl Clip {
    pub fn new(
        frames: Vec<u8>,
        (t, h, w): (usize, usize, usize),
        label: Label,
        source_id: impl Into<String>,
        fps: f32,
    ) -> Result<Self> {
        if t < 2 {
            return Err(Error::arg("frames", format!("a clip needs at least 2 frames, got {t}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::arg("frames", "frame size must be positive"));
        }
        let expected = t
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .and_then(|v| v.checked_mul(3))
            .ok_or(Error::DimensionOverflow("clip frames"))?;
        if frames.len() != expected {
            return Err(Error::arg(
                "frames",
                format!("{t}x{h}x{w}x3 clip needs {expected} bytes, got {}", frames.len()),
            ));
        }
        Ok(Clip {
            frames,
            t,
            h,
            w,
            label,
            source_id: source_id.into(),
            fps,
        })
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn frame_bytes(&self) -> usize {
        self.h * self.w * 3
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_bytes();
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn raw(&self) -> &[u8] {
        &self.frames
    }

    /// Selected frames as a `[T, 3, H, W]` tensor scaled to `[0, 1]`.
    pub fn rgb_tensor(&self, indices: &[usize]) -> Result<Tensor> {
        let (h, w) = (self.h, self.w);
        let mut out = Vec::with_capacity(indices.len() * 3 * h * w);
        for &t in indices {
            if t >= self.t {
                return Err(Error::arg(
                    "indices",
                    format!("frame {t} out of range for {} frames", self.t),
                ));
            }
            let f = self.frame(t);
            for c in 0..3 {
                out.extend((0..h * w).map(|p| f[p * 3 + c] as f64 / 255.0));
            }
        }
        Tensor::new(vec![indices.len(), 3, h, w], out)
    }
}
