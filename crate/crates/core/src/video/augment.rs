use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Clip;
use crate::error::{Error, Result};

/// Training augmentations. One set of parameters is drawn per call and
/// applied to every frame of the clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    /// Output side length; frames are resampled to `resolution x resolution`.
    pub resolution: usize,
    pub flip_prob: f64,
    /// Fraction of the frame area kept by the random crop.
    pub crop_scale_range: (f64, f64),
    /// Maximum corner displacement of the perspective warp, as a fraction of
    /// the crop side.
    pub perspective_strength: f64,
    pub erase_prob: f64,
    /// Erased rectangle area as a fraction of the output frame.
    pub erase_area_range: (f64, f64),
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub rng_seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            resolution: 56,
            flip_prob: 0.5,
            crop_scale_range: (0.8, 1.0),
            perspective_strength: 0.05,
            erase_prob: 0.25,
            erase_area_range: (0.02, 0.08),
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
            rng_seed: 0,
        }
    }
}

impl AugmentSpec {
    /// A spec that returns clips of side `resolution` unchanged.
    pub fn identity(resolution: usize) -> Self {
        AugmentSpec {
            resolution,
            flip_prob: 0.0,
            crop_scale_range: (1.0, 1.0),
            perspective_strength: 0.0,
            erase_prob: 0.0,
            erase_area_range: (0.0, 0.0),
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            rng_seed: 0,
        }
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        AugmentSpec {
            rng_seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::config("resolution", "must be positive"));
        }
        for (field, p) in [("flip_prob", self.flip_prob), ("erase_prob", self.erase_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(field, format!("probability {p} outside [0, 1]")));
            }
        }
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::config(
                "crop_scale_range",
                format!("need 0 < lo <= hi <= 1, got ({lo}, {hi})"),
            ));
        }
        if !(0.0..0.5).contains(&self.perspective_strength) {
            return Err(Error::config("perspective_strength", "must lie in [0, 0.5)"));
        }
        let (lo, hi) = self.erase_area_range;
        if !(lo >= 0.0 && lo <= hi) {
            return Err(Error::config(
                "erase_area_range",
                format!("need 0 <= lo <= hi, got ({lo}, {hi})"),
            ));
        }
        if hi > 1.0 {
            return Err(Error::config(
                "erase_area_range",
                format!("area fraction {hi} exceeds the frame"),
            ));
        }
        if self.erase_prob > 0.0 && hi == 0.0 {
            return Err(Error::config(
                "erase_area_range",
                "erasing enabled with an empty area range",
            ));
        }
        for (field, d) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
        ] {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::config(field, format!("jitter delta {d} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Everything drawn from the RNG for one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    /// Source quadrilateral (x, y) for the output corners in the order
    /// top-left, top-right, bottom-right, bottom-left, in pixel-edge units.
    pub quad: [(f64, f64); 4],
    pub full_frame: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// `(x0, y0, w, h, fill)` in output pixels.
    pub erase: Option<(usize, usize, usize, usize, u8)>,
}

impl AugmentParams {
    pub fn draw(spec: &AugmentSpec, h: usize, w: usize, rng: &mut impl Rng) -> Self {
        let flip = spec.flip_prob > 0.0 && rng.random::<f64>() < spec.flip_prob;
        let (lo, hi) = spec.crop_scale_range;
        let scale = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        let side = scale.sqrt();
        let (cw, ch) = (w as f64 * side, h as f64 * side);
        let x0 = if cw < w as f64 {
            rng.random_range(0.0..=w as f64 - cw)
        } else {
            0.0
        };
        let y0 = if ch < h as f64 {
            rng.random_range(0.0..=h as f64 - ch)
        } else {
            0.0
        };
        let mut quad = [(x0, y0), (x0 + cw, y0), (x0 + cw, y0 + ch), (x0, y0 + ch)];
        let s = spec.perspective_strength;
        if s > 0.0 {
            for (qx, qy) in quad.iter_mut() {
                *qx += rng.random_range(-s..=s) * cw;
                *qy += rng.random_range(-s..=s) * ch;
            }
        }
        let full_frame = s == 0.0 && scale == 1.0 && h == spec.resolution && w == spec.resolution;
        let mut jitter = |d: f64| if d > 0.0 { rng.random_range(-d..=d) } else { 0.0 };
        let (brightness, contrast, saturation) =
            (jitter(spec.brightness), jitter(spec.contrast), jitter(spec.saturation));
        let r = spec.resolution;
        let erase = (spec.erase_prob > 0.0 && rng.random::<f64>() < spec.erase_prob).then(|| {
            let (lo, hi) = spec.erase_area_range;
            let area = if lo < hi { rng.random_range(lo..=hi) } else { lo };
            let aspect: f64 = rng.random_range(0.5..=2.0);
            let ew = ((area * aspect).sqrt() * r as f64).round().clamp(1.0, r as f64) as usize;
            let eh = ((area / aspect).sqrt() * r as f64).round().clamp(1.0, r as f64) as usize;
            let ex = rng.random_range(0..=r - ew);
            let ey = rng.random_range(0..=r - eh);
            (ex, ey, ew, eh, rng.random::<u8>())
        });
        AugmentParams {
            flip,
            quad,
            full_frame,
            brightness,
            contrast,
            saturation,
            erase,
        }
    }
}

/// Homography taking the unit square onto `quad` (corners in TL, TR, BR, BL order).
fn square_to_quad(q: &[(f64, f64); 4]) -> [f64; 8] {
    let [(x0, y0), (x1, y1), (x2, y2), (x3, y3)] = *q;
    let (sx, sy) = (x0 - x1 + x2 - x3, y0 - y1 + y2 - y3);
    if sx == 0.0 && sy == 0.0 {
        return [x1 - x0, x3 - x0, x0, y1 - y0, y3 - y0, y0, 0.0, 0.0];
    }
    let (dx1, dx2, dy1, dy2) = (x1 - x2, x3 - x2, y1 - y2, y3 - y2);
    let det = dx1 * dy2 - dx2 * dy1;
    let g = (sx * dy2 - dx2 * sy) / det;
    let hh = (dx1 * sy - sx * dy1) / det;
    [
        x1 - x0 + g * x1,
        x3 - x0 + hh * x3,
        x0,
        y1 - y0 + g * y1,
        y3 - y0 + hh * y3,
        y0,
        g,
        hh,
    ]
}

fn bilinear(frame: &[u8], h: usize, w: usize, x: f64, y: f64, out: &mut [f64; 3]) {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (xi, yi) = (x.floor() as usize, y.floor() as usize);
    let (xj, yj) = ((xi + 1).min(w - 1), (yi + 1).min(h - 1));
    let (fx, fy) = (x - xi as f64, y - yi as f64);
    for (c, o) in out.iter_mut().enumerate() {
        let p = |yy: usize, xx: usize| frame[(yy * w + xx) * 3 + c] as f64;
        let top = p(yi, xi) * (1.0 - fx) + p(yi, xj) * fx;
        let bottom = p(yj, xi) * (1.0 - fx) + p(yj, xj) * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
}

/// Apply the augmentations with parameters drawn from `spec.rng_seed`.
pub fn augment(clip: &Clip, spec: &AugmentSpec) -> Result<Clip> {
    spec.validate()?;
    let mut rng = crate::rng::stream(spec.rng_seed, &[]);
    let params = AugmentParams::draw(spec, clip.height(), clip.width(), &mut rng);
    apply(clip, spec.resolution, &params)
}

pub fn apply(clip: &Clip, resolution: usize, p: &AugmentParams) -> Result<Clip> {
    let (h, w, r) = (clip.height(), clip.width(), resolution);
    let hom = square_to_quad(&p.quad);
    let jitter = p.brightness != 0.0 || p.contrast != 0.0 || p.saturation != 0.0;
    // contrast pivots on the clip-wide mean luma so every frame shares it
    let pivot = if p.contrast != 0.0 {
        let raw = clip.raw();
        raw.chunks_exact(3).map(luma).sum::<f64>() / (raw.len() / 3) as f64
    } else {
        0.0
    };
    let mut out = Vec::with_capacity(clip.len() * r * r * 3);
    let mut px = [0.0f64; 3];
    for t in 0..clip.len() {
        let frame = clip.frame(t);
        for oy in 0..r {
            for ox in 0..r {
                let sx = if p.flip { r - 1 - ox } else { ox };
                if p.full_frame {
                    let base = (oy * w + sx) * 3;
                    for c in 0..3 {
                        px[c] = frame[base + c] as f64;
                    }
                } else {
                    let u = (sx as f64 + 0.5) / r as f64;
                    let v = (oy as f64 + 0.5) / r as f64;
                    let den = hom[6] * u + hom[7] * v + 1.0;
                    let x = (hom[0] * u + hom[1] * v + hom[2]) / den - 0.5;
                    let y = (hom[3] * u + hom[4] * v + hom[5]) / den - 0.5;
                    bilinear(frame, h, w, x, y, &mut px);
                }
                if jitter {
                    color_jitter(&mut px, p, pivot);
                }
                out.extend(px.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
            }
        }
        if let Some((ex, ey, ew, eh, fill)) = p.erase {
            let base = t * r * r * 3;
            for y in ey..ey + eh {
                let row = base + (y * r + ex) * 3;
                out[row..row + ew * 3].fill(fill);
            }
        }
    }
    Clip::new(out, (clip.len(), r, r), clip.label, clip.source_id.clone(), clip.fps)
}

fn luma(px: &[u8]) -> f64 {
    0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64
}

fn color_jitter(px: &mut [f64; 3], p: &AugmentParams, pivot: f64) {
    for v in px.iter_mut() {
        *v *= 1.0 + p.brightness;
        *v = pivot + (*v - pivot) * (1.0 + p.contrast);
    }
    let gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
    for v in px.iter_mut() {
        *v = gray + (*v - gray) * (1.0 + p.saturation);
    }
}
