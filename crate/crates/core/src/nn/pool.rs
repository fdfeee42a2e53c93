use crate::error::{Error, Result};
use crate::tensor::{Backward, Tape, Tensor, Var};

struct MaxPoolRule {
    input_len: usize,
    argmax: Vec<usize>,
}

impl Backward for MaxPoolRule {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }
    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let mut dx = vec![0.0; self.input_len];
        for (&src, &gv) in self.argmax.iter().zip(g) {
            dx[src] += gv;
        }
        vec![Some(dx)]
    }
}

/// Square max pooling; padded positions never win. Ties go to the first
/// element in scan order.
pub fn maxpool2d(tape: &mut Tape, x: &Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
    let [n, c, h, w] = x.shape().nchw()?;
    if kernel == 0 || stride == 0 || padding >= kernel {
        return Err(Error::arg(
            "kernel",
            format!("invalid pooling kernel {kernel}, stride {stride}, padding {padding}"),
        ));
    }
    let out_len = |len: usize| (len + 2 * padding).checked_sub(kernel).map(|v| v / stride + 1);
    let (Some(ho), Some(wo)) = (out_len(h), out_len(w)) else {
        return Err(Error::InvalidShape(format!(
            "maxpool kernel {kernel} larger than padded input {h}x{w}"
        )));
    };
    let xd = x.value().data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for ki in 0..kernel {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kj in 0..kernel {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if best.1 == usize::MAX || xd[idx] > best.0 {
                            best = (xd[idx], idx);
                        }
                    }
                }
                out.push(best.0);
                argmax.push(best.1);
            }
        }
    }
    let out = Tensor::new(vec![n, c, ho, wo], out)?;
    if tape.tracks_branches() {
        tape.note_branches(argmax.iter().map(|&i| i as u64));
    }
    let rule = MaxPoolRule {
        input_len: xd.len(),
        argmax,
    };
    tape.record(out, &[x], rule)
}

struct MeanPoolRule {
    group: usize,
    c: usize,
    hw: usize,
}

impl Backward for MeanPoolRule {
    fn name(&self) -> &'static str {
        "mean_pool"
    }
    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (c, hw) = (self.c, self.hw);
        let norm = 1.0 / (self.group * hw) as f64;
        let outer = g.len() / c;
        let mut dx = vec![0.0; outer * self.group * c * hw];
        for o in 0..outer {
            for s in 0..self.group {
                for ch in 0..c {
                    let v = g[o * c + ch] * norm;
                    let start = ((o * self.group + s) * c + ch) * hw;
                    dx[start..start + hw].iter_mut().for_each(|d| *d = v);
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Mean over spatial positions and over consecutive groups of `group`
/// samples: `[N, C, H, W] -> [N / group, C]`.
///
/// `group = 1` is per-sample global average pooling; `group = T` collapses
/// the frames of each clip as in the classification head.
pub fn mean_pool(tape: &mut Tape, x: &Var, group: usize) -> Result<Var> {
    let [n, c, h, w] = x.shape().nchw()?;
    if group == 0 || n % group != 0 {
        return Err(Error::arg("group", format!("{group} does not divide the batch of {n}")));
    }
    let hw = h * w;
    let outer = n / group;
    let xd = x.value().data();
    let norm = (group * hw) as f64;
    let mut out = vec![0.0; outer * c];
    for o in 0..outer {
        for ch in 0..c {
            let mut acc = 0.0;
            for s in 0..group {
                let start = ((o * group + s) * c + ch) * hw;
                acc += xd[start..start + hw].iter().sum::<f64>();
            }
            out[o * c + ch] = acc / norm;
        }
    }
    let out = Tensor::new(vec![outer, c], out)?;
    tape.record(out, &[x], MeanPoolRule { group, c, hw })
}

/// Adaptive average pooling of a whole `[T, C, H, W]` stack to `[1, C, 1, 1]`.
pub fn adaptive_avg_pool(tape: &mut Tape, x: &Var) -> Result<Var> {
    let [n, c, _, _] = x.shape().nchw()?;
    let pooled = mean_pool(tape, x, n)?;
    tape.reshape(&pooled, vec![1, c, 1, 1])
}

struct ChannelScaleRule {
    x: Tensor,
    s: Tensor,
    hw: usize,
}

impl Backward for ChannelScaleRule {
    fn name(&self) -> &'static str {
        "channel_scale"
    }
    fn backward(&self, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let hw = self.hw;
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; g.len()];
            for (plane, &sv) in self.s.data().iter().enumerate() {
                let r = plane * hw..(plane + 1) * hw;
                dx[r.clone()].iter_mut().zip(&g[r]).for_each(|(d, gv)| *d = gv * sv);
            }
            dx
        });
        let ds = needs[1].then(|| {
            (0..self.s.numel())
                .map(|plane| {
                    let r = plane * hw..(plane + 1) * hw;
                    g[r.clone()].iter().zip(&self.x.data()[r]).map(|(a, b)| a * b).sum()
                })
                .collect()
        });
        vec![dx, ds]
    }
}

/// `out[n, c, h, w] = x[n, c, h, w] * s[n, c]`.
pub fn channel_scale(tape: &mut Tape, x: &Var, s: &Var) -> Result<Var> {
    let [n, c, h, w] = x.shape().nchw()?;
    if s.shape().dims() != [n, c] {
        return Err(Error::ShapeMismatch {
            op: "channel_scale",
            left: x.shape().clone(),
            right: s.shape().clone(),
        });
    }
    let hw = h * w;
    let mut out = x.value().to_vec();
    for (plane, &sv) in s.value().data().iter().enumerate() {
        out[plane * hw..(plane + 1) * hw].iter_mut().for_each(|v| *v *= sv);
    }
    let out = Tensor::from_shape(x.shape().clone(), out)?;
    let rule = ChannelScaleRule {
        x: x.value().clone(),
        s: s.value().clone(),
        hw,
    };
    tape.record(out, &[x, s], rule)
}
