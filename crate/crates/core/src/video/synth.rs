use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Clip, ClipDataset, Label};
use crate::error::{Error, Result};

/// Number of distinct synthetic camera views; the split key of a clip.
pub const N_VIEWS: usize = 6;
/// Per-pixel sensor noise amplitude (uniform integer in `[-NOISE, NOISE]`).
pub const NOISE: i32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_clips: usize,
    pub frames_per_clip: usize,
    pub resolution: usize,
    /// Fraction of positive (smoke) clips.
    pub class_mix: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_clips: 400,
            frames_per_clip: 16,
            resolution: 56,
            class_mix: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clips == 0 {
            return Err(Error::config("n_clips", "must be positive"));
        }
        if self.frames_per_clip < 2 || self.frames_per_clip > u16::MAX as usize {
            return Err(Error::config("frames_per_clip", "must lie in [2, 65535]"));
        }
        if self.resolution < 16 || !self.resolution.is_multiple_of(8) || self.resolution > 1024 {
            return Err(Error::config(
                "resolution",
                format!("{} must be a multiple of 8 in [16, 1024]", self.resolution),
            ));
        }
        if !(0.0..=1.0).contains(&self.class_mix) {
            return Err(Error::config("class_mix", format!("{} outside [0, 1]", self.class_mix)));
        }
        Ok(())
    }

    pub fn n_positive(&self) -> usize {
        (self.n_clips as f64 * self.class_mix).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Smoke,
    Steam,
    Box,
    Static,
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Smoke => "smoke",
            SceneKind::Steam => "steam",
            SceneKind::Box => "box",
            SceneKind::Static => "static",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [SceneKind::Smoke, SceneKind::Steam, SceneKind::Box, SceneKind::Static]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

/// Ground truth encoded in a synthetic `source_id` of the form
/// `s{view}/{kind}/q{quadrant}/{index}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneInfo {
    pub view: usize,
    pub kind: SceneKind,
    /// 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
    pub quadrant: usize,
}

impl SceneInfo {
    pub fn parse(source_id: &str) -> Option<Self> {
        let mut it = source_id.split('/');
        let view = it.next()?.strip_prefix('s')?.parse().ok()?;
        let kind = SceneKind::parse(it.next()?)?;
        let quadrant = it.next()?.strip_prefix('q')?.parse().ok()?;
        Some(SceneInfo { view, kind, quadrant })
    }

    /// Pixel bounds `(x0, y0, x1, y1)` of the quadrant in an `r x r` frame.
    pub fn quadrant_bounds(&self, r: usize) -> (usize, usize, usize, usize) {
        let half = r / 2;
        let (qx, qy) = (self.quadrant % 2, self.quadrant / 2);
        (qx * half, qy * half, (qx + 1) * half, (qy + 1) * half)
    }
}

/// Smooth lattice noise in `[0, 1]`, wrapping on a `n x n` grid.
struct ValueNoise {
    n: usize,
    cell: f64,
    grid: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, n: usize, cell: f64) -> Self {
        ValueNoise {
            n,
            cell,
            grid: (0..n * n).map(|_| rng.random::<f64>()).collect(),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (fx, fy) = (gx - gx.floor(), gy - gy.floor());
        let n = self.n as i64;
        let (ix, iy) = ((gx.floor() as i64).rem_euclid(n), (gy.floor() as i64).rem_euclid(n));
        let g = |a: i64, b: i64| self.grid[(((b % n) * n) + (a % n)) as usize];
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (sx, sy) = (s(fx), s(fy));
        let top = g(ix, iy) * (1.0 - sx) + g(ix + 1, iy) * sx;
        let bottom = g(ix, iy + 1) * (1.0 - sx) + g(ix + 1, iy + 1) * sx;
        top * (1.0 - sy) + bottom * sy
    }
}

/// Compactly supported bump: 1 at the centre, 0 at distance `radius` and beyond.
fn bump(dx: f64, dy: f64, radius: f64) -> f64 {
    let d2 = (dx * dx + dy * dy) / (radius * radius);
    if d2 >= 1.0 {
        0.0
    } else {
        (1.0 - d2) * (1.0 - d2)
    }
}

/// Textured background for a view, as interleaved RGB floats.
fn background(view: usize, r: usize, seed: u64) -> Vec<f64> {
    let mut rng = crate::rng::stream(seed, &[0xbac6, view as u64]);
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(50.0..130.0));
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.6..1.4));
    let (coarse_cell, fine_cell) = (rng.random_range(8.0..16.0), rng.random_range(2.0..4.0));
    let coarse = ValueNoise::new(&mut rng, 8, coarse_cell);
    let fine = ValueNoise::new(&mut rng, 16, fine_cell);
    let horizon = rng.random_range(0.2..0.8) * r as f64;
    let mut out = Vec::with_capacity(r * r * 3);
    for y in 0..r {
        for x in 0..r {
            let (xf, yf) = (x as f64, y as f64);
            let tex = 40.0 * (coarse.at(xf, yf) - 0.5) + 16.0 * (fine.at(xf, yf) - 0.5);
            let sky = if yf < horizon { 25.0 } else { 0.0 };
            for c in 0..3 {
                out.push(base[c] + (tex + sky) * tint[c]);
            }
        }
    }
    out
}

fn blend(frame: &mut [f64], r: usize, x: usize, y: usize, color: [f64; 3], a: f64) {
    let p = (y * r + x) * 3;
    for c in 0..3 {
        frame[p + c] = frame[p + c] * (1.0 - a) + color[c] * a;
    }
}

/// Translucent blob placement inside a quadrant: centre path, radius.
struct BlobPath {
    start: (f64, f64),
    velocity: (f64, f64),
    radius: f64,
}

fn blob_path(rng: &mut ChaCha8Rng, info: &SceneInfo, r: usize, frames: usize, speed: f64) -> BlobPath {
    let (x0, y0, x1, _) = info.quadrant_bounds(r);
    let half = (x1 - x0) as f64;
    let radius = rng.random_range(0.3..0.38) * half;
    // mostly upward drift with a sideways component
    let angle: f64 = rng.random_range(-2.4..-0.7);
    let velocity = (speed * angle.cos(), speed * angle.sin());
    let travel = (velocity.0 * (frames - 1) as f64, velocity.1 * (frames - 1) as f64);
    let margin = radius + 1.0;
    let pick = |rng: &mut ChaCha8Rng, lo: f64, shift: f64| {
        let a = lo + margin - shift.min(0.0);
        let b = lo + half - margin - shift.max(0.0);
        if a < b {
            rng.random_range(a..b)
        } else {
            lo + half / 2.0 - shift / 2.0
        }
    };
    let start = (pick(rng, x0 as f64, travel.0), pick(rng, y0 as f64, travel.1));
    BlobPath {
        start,
        velocity,
        radius,
    }
}

fn render(info: &SceneInfo, frames: usize, r: usize, seed: u64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let bg = background(info.view, r, seed);
    let mut out = Vec::with_capacity(frames * r * r * 3);
    let (qx0, qy0, qx1, qy1) = info.quadrant_bounds(r);
    match info.kind {
        SceneKind::Smoke => {
            let speed = rng.random_range(0.4..0.6);
            let path = blob_path(rng, info, r, frames, speed);
            let gray = rng.random_range(150.0..215.0);
            let peak = rng.random_range(0.6..0.9);
            let cell = rng.random_range(3.0..5.0);
            let tex = ValueNoise::new(rng, 16, cell);
            let swirl: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            for t in 0..frames {
                let mut f = bg.clone();
                let tf = t as f64;
                let cx = path.start.0 + path.velocity.0 * tf;
                let cy = path.start.1 + path.velocity.1 * tf;
                // texture flows faster than the plume and in another direction
                let (ox, oy) = (2.0 * tf * swirl.cos(), 2.0 * tf * swirl.sin());
                for y in qy0..qy1 {
                    for x in qx0..qx1 {
                        let (xf, yf) = (x as f64, y as f64);
                        let b = bump(xf - cx, yf - cy, path.radius);
                        if b > 0.0 {
                            let m = 0.2 + 0.8 * tex.at(xf - ox, yf - oy);
                            blend(&mut f, r, x, y, [gray; 3], peak * b * m);
                        }
                    }
                }
                out.extend(f);
            }
        }
        SceneKind::Steam => {
            let path = blob_path(rng, info, r, frames, 0.0);
            let gray = rng.random_range(175.0..235.0);
            let peak = rng.random_range(0.6..0.9);
            let cell = rng.random_range(3.0..5.0);
            let tex = ValueNoise::new(rng, 16, cell);
            let period = rng.random_range(10.0..16.0);
            let amp = rng.random_range(0.12..0.2);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            for t in 0..frames {
                let mut f = bg.clone();
                let pulse = 1.0 + amp * (std::f64::consts::TAU * t as f64 / period + phase).sin();
                for y in qy0..qy1 {
                    for x in qx0..qx1 {
                        let (xf, yf) = (x as f64, y as f64);
                        let b = bump(xf - path.start.0, yf - path.start.1, path.radius);
                        if b > 0.0 {
                            let m = 0.2 + 0.8 * tex.at(xf, yf);
                            blend(&mut f, r, x, y, [gray; 3], (peak * b * m * pulse).min(1.0));
                        }
                    }
                }
                out.extend(f);
            }
        }
        SceneKind::Box => {
            let side = rng.random_range(0.14..0.22) * r as f64;
            let hue = rng.random_range(0..3);
            let mut color = [30.0; 3];
            color[hue] = 230.0;
            let speed = rng.random_range(1.0..2.0);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let (vx, vy) = (speed * angle.cos(), speed * angle.sin());
            let span = r as f64 - side;
            let (sx, sy) = (rng.random_range(0.0..span), rng.random_range(0.0..span));
            // bounce inside the frame
            let fold = |p: f64| {
                let m = p.rem_euclid(2.0 * span);
                if m > span {
                    2.0 * span - m
                } else {
                    m
                }
            };
            for t in 0..frames {
                let mut f = bg.clone();
                let (bx, by) = (fold(sx + vx * t as f64), fold(sy + vy * t as f64));
                for y in 0..r {
                    for x in 0..r {
                        let cover = |p: f64, lo: f64| ((p + 1.0).min(lo + side) - p.max(lo)).clamp(0.0, 1.0);
                        let a = cover(x as f64, bx) * cover(y as f64, by);
                        if a > 0.0 {
                            blend(&mut f, r, x, y, color, a);
                        }
                    }
                }
                out.extend(f);
            }
        }
        SceneKind::Static => {
            for _ in 0..frames {
                out.extend_from_slice(&bg);
            }
        }
    }
    out.into_iter()
        .map(|v| (v.round() as i32 + rng.random_range(-NOISE..=NOISE)).clamp(0, 255) as u8)
        .collect()
}

/// Generate a seeded dataset of smoke clips and smoke-like distractors.
///
/// Exactly `round(n_clips * class_mix)` clips are positive. Negatives cycle
/// through steam, steam, moving box, static background before shuffling.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<ClipDataset> {
    spec.validate()?;
    let n_pos = spec.n_positive();
    let mut kinds: Vec<SceneKind> = (0..spec.n_clips)
        .map(|i| {
            if i < n_pos {
                SceneKind::Smoke
            } else {
                match (i - n_pos) % 4 {
                    0 | 1 => SceneKind::Steam,
                    2 => SceneKind::Box,
                    _ => SceneKind::Static,
                }
            }
        })
        .collect();
    kinds.shuffle(&mut crate::rng::stream(spec.seed, &[0x5eed]));
    let clips = kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let mut rng = crate::rng::stream(spec.seed, &[1, i as u64]);
            let info = SceneInfo {
                view: rng.random_range(0..N_VIEWS),
                kind,
                quadrant: rng.random_range(0..4),
            };
            let frames = render(&info, spec.frames_per_clip, spec.resolution, spec.seed, &mut rng);
            let label = if kind == SceneKind::Smoke {
                Label::Smoke
            } else {
                Label::NoSmoke
            };
            let id = format!("s{}/{}/q{}/{:05}", info.view, kind.name(), info.quadrant, i);
            Clip::new(
                frames,
                (spec.frames_per_clip, spec.resolution, spec.resolution),
                label,
                id,
                15.0,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClipDataset { clips })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::{residual_frames, ResidualSpec};

    fn small(n: usize, mix: f64, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_clips: n,
            frames_per_clip: 8,
            resolution: 32,
            class_mix: mix,
            seed,
        }
    }

    #[test]
    fn counts_and_determinism() {
        let spec = SyntheticSpec {
            n_clips: 400,
            frames_per_clip: 2,
            ..SyntheticSpec::default()
        };
        let ds = synth_generate(&spec).unwrap();
        let pos = ds.clips.iter().filter(|c| c.label == Label::Smoke).count();
        assert_eq!(pos, 200);
        assert_eq!(synth_generate(&spec).unwrap(), ds);
        assert_ne!(synth_generate(&SyntheticSpec { seed: 1, ..spec }).unwrap(), ds);
    }

    #[test]
    fn ids_parse_back() {
        let ds = synth_generate(&small(24, 0.5, 4)).unwrap();
        for c in &ds.clips {
            let info = SceneInfo::parse(&c.source_id).unwrap();
            assert_eq!(info.kind == SceneKind::Smoke, c.label == Label::Smoke);
            assert!(info.view < N_VIEWS && info.quadrant < 4);
        }
    }

    #[test]
    fn residual_energy_oracle() {
        let ds = synth_generate(&small(60, 0.5, 9)).unwrap();
        let spec = ResidualSpec::default();
        let floor = spec.alpha * (2 * NOISE) as f64;
        let all: Vec<usize> = (0..8).collect();
        for c in &ds.clips {
            let info = SceneInfo::parse(&c.source_id).unwrap();
            let res = residual_frames(c, &all, &spec).unwrap();
            let (x0, y0, x1, y1) = info.quadrant_bounds(32);
            let mut inside = 0.0f64;
            let mut outside = 0.0f64;
            for (i, &v) in res.data().iter().enumerate() {
                let (y, x) = ((i / 32) % 32, i % 32);
                if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                    inside = inside.max(v);
                } else {
                    outside = outside.max(v);
                }
            }
            match info.kind {
                SceneKind::Smoke => {
                    assert!(inside > floor, "{}: plume residual {inside} within noise", c.source_id);
                    assert!(outside <= floor);
                }
                SceneKind::Static => assert!(inside.max(outside) <= floor),
                _ => {}
            }
        }
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(synth_generate(&small(0, 0.5, 0)).is_err());
        assert!(synth_generate(&SyntheticSpec {
            resolution: 30,
            ..small(4, 0.5, 0)
        })
        .is_err());
        assert!(synth_generate(&small(4, 1.5, 0)).is_err());
    }
}
