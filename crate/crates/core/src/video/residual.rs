use serde::{Deserialize, Serialize};

use super::Clip;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Residual-frame encoding: `min(alpha * |F_t - F_{t+1}|, beta)` per pixel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualSpec {
    /// Expanding coefficient applied to the absolute difference.
    pub alpha: f64,
    /// Clip ceiling on the scaled difference.
    pub beta: f64,
}

impl Default for ResidualSpec {
    fn default() -> Self {
        ResidualSpec {
            alpha: 5.0,
            beta: 255.0,
        }
    }
}

impl ResidualSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config(
                "alpha",
                format!("must be positive and finite, got {}", self.alpha),
            ));
        }
        if !(self.beta > 0.0 && self.beta <= 255.0) {
            return Err(Error::config(
                "beta",
                format!("must lie in (0, 255], got {}", self.beta),
            ));
        }
        Ok(())
    }

    pub fn pixel(&self, a: u8, b: u8) -> f64 {
        (self.alpha * (a as f64 - b as f64).abs()).min(self.beta)
    }
}

/// Neighbour used for source frame `t`: the next frame, or the previous one
/// for the last frame of the clip.
pub fn neighbour(t: usize, len: usize) -> usize {
    if t + 1 < len {
        t + 1
    } else {
        t - 1
    }
}

/// Residual frames for the sampled `indices`, as `[T, 3, H, W]` with values
/// in `[0, beta]`.
pub fn residual_frames(clip: &Clip, indices: &[usize], spec: &ResidualSpec) -> Result<Tensor> {
    spec.validate()?;
    let len = clip.len();
    if len < 2 {
        return Err(Error::arg("clip", "residual frames need at least 2 source frames"));
    }
    let hw = clip.height() * clip.width();
    let mut out = Vec::with_capacity(indices.len() * 3 * hw);
    for &t in indices {
        if t >= len {
            return Err(Error::arg(
                "indices",
                format!("frame {t} out of range for {len} frames"),
            ));
        }
        let (cur, next) = (clip.frame(t), clip.frame(neighbour(t, len)));
        for c in 0..3 {
            out.extend((0..hw).map(|p| spec.pixel(cur[p * 3 + c], next[p * 3 + c])));
        }
    }
    Tensor::new(vec![indices.len(), 3, clip.height(), clip.width()], out)
}

/// As [`residual_frames`], divided by 255 for the temporal path input.
pub fn residual_input(clip: &Clip, indices: &[usize], spec: &ResidualSpec) -> Result<Tensor> {
    Ok(residual_frames(clip, indices, spec)?.map(|v| v / 255.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::Label;
    use proptest::prelude::*;

    fn clip_from(frames: Vec<Vec<u8>>, h: usize, w: usize) -> Clip {
        let t = frames.len();
        Clip::new(frames.concat(), (t, h, w), Label::NoSmoke, "test", 25.0).unwrap()
    }

    #[test]
    fn pixel_examples() {
        let spec = ResidualSpec {
            alpha: 5.0,
            beta: 255.0,
        };
        assert_eq!(spec.pixel(100, 110), 50.0);
        assert_eq!(spec.pixel(0, 200), 255.0);
        let oracle = |a: u8, b: u8| (5.0 * (a as f64 - b as f64).abs()).min(255.0);
        for a in (0..=255u8).step_by(17) {
            for b in (0..=255u8).step_by(13) {
                assert_eq!(spec.pixel(a, b), oracle(a, b));
            }
        }
    }

    #[test]
    fn static_clip_is_zero() {
        let clip = clip_from(vec![vec![77; 12]; 4], 2, 2);
        let r = residual_frames(&clip, &[0, 1, 2, 3], &ResidualSpec::default()).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn last_frame_uses_previous() {
        let clip = clip_from(vec![vec![0; 3], vec![10; 3], vec![30; 3]], 1, 1);
        let spec = ResidualSpec {
            alpha: 1.0,
            beta: 255.0,
        };
        let r = residual_frames(&clip, &[0, 2], &spec).unwrap();
        assert_eq!(r.data(), &[10.0, 10.0, 10.0, 20.0, 20.0, 20.0]);
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(ResidualSpec {
            alpha: 0.0,
            beta: 255.0
        }
        .validate()
        .is_err());
        assert!(ResidualSpec {
            alpha: 1.0,
            beta: 256.0
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_linear_below_clip(
            a in proptest::collection::vec(any::<u8>(), 12),
            b in proptest::collection::vec(any::<u8>(), 12),
            alpha in 0.1f64..20.0,
            beta in 1.0f64..=255.0,
        ) {
            let clip = clip_from(vec![a, b], 2, 2);
            let spec = ResidualSpec { alpha, beta };
            let r = residual_frames(&clip, &[0, 1], &spec).unwrap();
            prop_assert!(r.data().iter().all(|&v| (0.0..=beta).contains(&v)));
            let doubled = residual_frames(&clip, &[0, 1], &ResidualSpec { alpha: 2.0 * alpha, beta }).unwrap();
            for (&one, &two) in r.data().iter().zip(doubled.data()) {
                if 2.0 * one < beta {
                    prop_assert_eq!(two, 2.0 * one);
                }
            }
        }
    }
}
