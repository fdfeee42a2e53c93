//! Grad-CAM over the last-stage activations of either path, and heatmap export.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{PathKind, StcNet};
use crate::tensor::{Tape, Tensor};

/// Which frame a heatmap describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameRef {
    Frame(usize),
    /// Mean over the clip's frames.
    Aggregate,
}

impl Serialize for FrameRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            FrameRef::Frame(i) => s.serialize_u64(*i as u64),
            FrameRef::Aggregate => s.serialize_str("aggregate"),
        }
    }
}

impl<'de> Deserialize<'de> for FrameRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(FrameRef::Frame(i)),
            Raw::Name(s) if s == "aggregate" => Ok(FrameRef::Aggregate),
            Raw::Name(s) => Err(serde::de::Error::custom(format!("unknown frame `{s}`"))),
        }
    }
}

/// A max-normalized class activation map; all-zero maps stay zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Heatmap {
    pub path: PathKind,
    pub frame: FrameRef,
    pub class: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    /// Row-major index of the hottest cell (first on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// 8-bit grey levels, `floor(255 v + 0.5)`.
    pub fn levels(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|&v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Binary PGM (P5, maxval 255) of the map scaled up to `size x size`
    /// with nearest-neighbour sampling.
    pub fn to_pgm(&self, size: usize) -> Vec<u8> {
        let levels = self.levels();
        let mut out = format!("P5\n{size} {size}\n255\n").into_bytes();
        for y in 0..size {
            let cy = y * self.height / size;
            for x in 0..size {
                out.push(levels[cy * self.width + x * self.width / size]);
            }
        }
        out
    }

    pub fn sidecar_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            context: "heatmap sidecar".into(),
            source,
        })
    }

    pub fn from_sidecar(json: &str) -> Result<Self> {
        let h: Heatmap = serde_json::from_str(json).map_err(|source| Error::Json {
            context: "heatmap sidecar".into(),
            source,
        })?;
        if h.values.len() != h.height * h.width {
            return Err(Error::Malformed(format!(
                "sidecar has {} values for a {}x{} map",
                h.values.len(),
                h.height,
                h.width
            )));
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCam {
    pub frames: Vec<Heatmap>,
    pub aggregate: Heatmap,
}

fn max_normalize(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        raw.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; raw.len()]
    }
}

/// Rectified, unnormalized maps `relu(sum_c w_c A_c)` per frame, with
/// `w_c` the spatial mean of the gradient. `act` and `grad` are `[T, C, h, w]`.
pub fn cam_maps(act: &Tensor, grad: &Tensor) -> Result<Vec<Vec<f64>>> {
    let [t, c, h, w] = act.shape().nchw()?;
    if act.shape() != grad.shape() {
        return Err(Error::ShapeMismatch {
            op: "grad_cam",
            left: act.shape().clone(),
            right: grad.shape().clone(),
        });
    }
    let hw = h * w;
    let (a, g) = (act.data(), grad.data());
    Ok((0..t)
        .map(|f| {
            let mut map = vec![0.0; hw];
            for ch in 0..c {
                let base = (f * c + ch) * hw;
                let weight = g[base..base + hw].iter().sum::<f64>() / hw as f64;
                for (m, &av) in map.iter_mut().zip(&a[base..base + hw]) {
                    *m += weight * av;
                }
            }
            map.iter().map(|&v| v.max(0.0)).collect()
        })
        .collect())
}

/// Grad-CAM of the logit for `class` on the res4 activation of `path`, for a
/// single clip (`[T, 3, R, R]` inputs). The model is not modified.
pub fn grad_cam(model: &StcNet, rgb: &Tensor, res: &Tensor, class: usize, path: PathKind) -> Result<GradCam> {
    if class >= model.config.n_classes {
        return Err(Error::arg(
            "class",
            format!("{class} out of range for {} classes", model.config.n_classes),
        ));
    }
    if rgb.dims()[0] != model.config.n_frames {
        return Err(Error::arg("rgb", "grad_cam takes exactly one clip"));
    }
    let mut tape = Tape::new();
    let (fwd, act) = model.capture_activations(&mut tape, rgb, res, "res4", path)?;
    let target = tape.pick(&fwd.logits, class)?;
    tape.backward(&target)?;
    let grad = tape.grad_or_zeros(&act);
    let maps = cam_maps(act.value(), &grad)?;
    let [_, _, h, w] = act.shape().nchw()?;
    let heatmap = |frame, raw: &[f64]| Heatmap {
        path,
        frame,
        class,
        height: h,
        width: w,
        values: max_normalize(raw),
    };
    let mut mean = vec![0.0; h * w];
    for m in &maps {
        mean.iter_mut().zip(m).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|v| *v /= maps.len() as f64);
    Ok(GradCam {
        frames: maps
            .iter()
            .enumerate()
            .map(|(i, m)| heatmap(FrameRef::Frame(i), m))
            .collect(),
        aggregate: heatmap(FrameRef::Aggregate, &mean),
    })
}

/// Write `{stem}.pgm` and `{stem}.json` into `dir`; returns both paths.
pub fn export_heatmap(h: &Heatmap, dir: impl AsRef<Path>, stem: &str, size: usize) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    let pgm = dir.join(format!("{stem}.pgm"));
    let json = dir.join(format!("{stem}.json"));
    std::fs::File::create(&pgm)
        .and_then(|mut f| f.write_all(&h.to_pgm(size)))
        .map_err(|e| Error::io(&pgm, e))?;
    std::fs::write(&json, h.sidecar_json()?).map_err(|e| Error::io(&json, e))?;
    Ok((pgm, json))
}
