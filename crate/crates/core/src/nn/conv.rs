use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::gemm::Layout;
use crate::tensor::{gemm, Backward, Tape, Tensor, Var};

/// Geometry of a (grouped) 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv2dSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("kernel", self.kernel.0.min(self.kernel.1)),
            ("stride", self.stride.0.min(self.stride.1)),
            ("groups", self.groups),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, format!("must be positive in {self:?}")));
            }
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(Error::config(
                "groups",
                format!("channels must be divisible by groups in {self:?}"),
            ));
        }
        Ok(())
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let out = |len: usize, k: usize, s: usize, p: usize| (len + 2 * p).checked_sub(k).map(|v| v / s + 1);
        match (
            out(h, self.kernel.0, self.stride.0, self.padding.0),
            out(w, self.kernel.1, self.stride.1, self.padding.1),
        ) {
            (Some(ho), Some(wo)) => Ok((ho, wo)),
            _ => Err(Error::InvalidShape(format!(
                "conv kernel {:?} larger than padded input {h}x{w}",
                self.kernel
            ))),
        }
    }
}

struct Geometry {
    spec: Conv2dSpec,
    n: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn k_group(&self) -> usize {
        self.spec.in_channels / self.spec.groups * self.spec.kernel.0 * self.spec.kernel.1
    }

    fn cols(&self) -> usize {
        self.n * self.ho * self.wo
    }

    /// Valid output columns `[lo, hi)` for kernel offset `k` along an axis.
    fn valid_range(len: usize, out: usize, stride: usize, pad: usize, k: usize) -> (usize, usize) {
        // need 0 <= o*stride + k - pad < len
        let lo = pad.saturating_sub(k).div_ceil(stride).min(out);
        let hi = if len + pad > k {
            ((len + pad - k - 1) / stride + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    /// Visit every in-bounds run of taps: `(col_row, first_col, first_input, count)`,
    /// where consecutive columns read inputs `stride` apart.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let Conv2dSpec {
            in_channels: cin,
            kernel: (kh, kw),
            stride: (sh, sw),
            padding: (ph, pw),
            ..
        } = self.spec;
        let (h, w, ho, wo) = (self.h, self.w, self.ho, self.wo);
        let p = ho * wo;
        for c in 0..cin {
            for ki in 0..kh {
                let (oy_lo, oy_hi) = Self::valid_range(h, ho, sh, ph, ki);
                for kj in 0..kw {
                    let row = (c * kh + ki) * kw + kj;
                    let (ox_lo, ox_hi) = Self::valid_range(w, wo, sw, pw, kj);
                    if ox_lo == ox_hi {
                        continue;
                    }
                    let ix0 = ox_lo * sw + kj - pw;
                    for n in 0..self.n {
                        let in_base = (n * cin + c) * h * w;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * sh + ki - ph;
                            f(row, n * p + oy * wo + ox_lo, in_base + iy * w + ix0, ox_hi - ox_lo);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let ncols = self.cols();
        let sw = self.spec.stride.1;
        let mut cols = vec![0.0; self.spec.in_channels * self.spec.kernel.0 * self.spec.kernel.1 * ncols];
        self.for_each_run(|row, col, src, count| {
            let dst = &mut cols[row * ncols + col..row * ncols + col + count];
            if sw == 1 {
                dst.copy_from_slice(&x[src..src + count]);
            } else {
                dst.iter_mut()
                    .zip(x[src..].iter().step_by(sw))
                    .for_each(|(d, &v)| *d = v);
            }
        });
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let ncols = self.cols();
        let sw = self.spec.stride.1;
        let mut dx = vec![0.0; self.n * self.spec.in_channels * self.h * self.w];
        self.for_each_run(|row, col, dst, count| {
            let src = &cols[row * ncols + col..row * ncols + col + count];
            if sw == 1 {
                dx[dst..dst + count].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
            } else {
                dx[dst..].iter_mut().step_by(sw).zip(src).for_each(|(d, &v)| *d += v);
            }
        });
        dx
    }
}

/// `[N, Cout, P]` sample-major <-> `[Cout, N*P]` channel-major.
fn to_channel_major(src: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for s in 0..n {
        for ch in 0..c {
            let from = &src[(s * c + ch) * p..(s * c + ch + 1) * p];
            out[ch * n * p + s * p..ch * n * p + (s + 1) * p].copy_from_slice(from);
        }
    }
    out
}

fn to_sample_major(src: &[f64], n: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for s in 0..n {
            let from = &src[ch * n * p + s * p..ch * n * p + (s + 1) * p];
            out[(s * c + ch) * p..(s * c + ch + 1) * p].copy_from_slice(from);
        }
    }
    out
}

struct ConvRule {
    geo: Geometry,
    cols: Arc<Vec<f64>>,
    weight: Tensor,
    has_bias: bool,
}

impl Backward for ConvRule {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, grad_out: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let geo = &self.geo;
        let spec = geo.spec;
        let ncols = geo.cols();
        let p = geo.ho * geo.wo;
        let dy = to_channel_major(grad_out, geo.n, spec.out_channels, p);
        let (g_count, cout_g, k_g) = (spec.groups, spec.out_channels / spec.groups, geo.k_group());

        let dx = needs[0].then(|| {
            let mut dcols = vec![0.0; g_count * k_g * ncols];
            for g in 0..g_count {
                gemm(
                    k_g,
                    cout_g,
                    ncols,
                    &self.weight.data()[g * cout_g * k_g..],
                    Layout::transposed(k_g),
                    &dy[g * cout_g * ncols..],
                    Layout::row_major(ncols),
                    0.0,
                    &mut dcols[g * k_g * ncols..],
                );
            }
            geo.col2im(&dcols)
        });

        let dw = needs[1].then(|| {
            let mut dw = vec![0.0; spec.out_channels * k_g];
            for g in 0..g_count {
                gemm(
                    cout_g,
                    ncols,
                    k_g,
                    &dy[g * cout_g * ncols..],
                    Layout::row_major(ncols),
                    &self.cols[g * k_g * ncols..],
                    Layout::transposed(ncols),
                    0.0,
                    &mut dw[g * cout_g * k_g..],
                );
            }
            dw
        });

        let mut grads = vec![dx, dw];
        if self.has_bias {
            grads.push(needs[2].then(|| dy.chunks_exact(ncols).map(|row| row.iter().sum()).collect()));
        }
        grads
    }
}

/// Cross-correlation of `x: [N, Cin, H, W]` with `weight: [Cout, Cin/groups, kh, kw]`.
pub fn conv2d(tape: &mut Tape, x: &Var, weight: &Var, bias: Option<&Var>, spec: &Conv2dSpec) -> Result<Var> {
    spec.validate()?;
    let [n, cin, h, w] = x.shape().nchw()?;
    if cin != spec.in_channels {
        return Err(Error::arg(
            "x",
            format!("input has {cin} channels but conv expects {spec:?}"),
        ));
    }
    if weight.shape().dims() != spec.weight_dims() {
        return Err(Error::arg(
            "weight",
            format!("shape {} does not match {spec:?}", weight.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.shape().dims() != [spec.out_channels] {
            return Err(Error::arg(
                "bias",
                format!("shape {} does not match {spec:?}", b.shape()),
            ));
        }
    }
    let (ho, wo) = spec.output_hw(h, w)?;
    let geo = Geometry {
        spec: *spec,
        n,
        h,
        w,
        ho,
        wo,
    };
    let cols = geo.im2col(x.value().data());
    let ncols = geo.cols();
    let (groups, cout_g, k_g) = (spec.groups, spec.out_channels / spec.groups, geo.k_group());
    let mut ycols = vec![0.0; spec.out_channels * ncols];
    for g in 0..groups {
        gemm(
            cout_g,
            k_g,
            ncols,
            &weight.value().data()[g * cout_g * k_g..],
            Layout::row_major(k_g),
            &cols[g * k_g * ncols..],
            Layout::row_major(ncols),
            0.0,
            &mut ycols[g * cout_g * ncols..],
        );
    }
    if let Some(b) = bias {
        for (row, &bv) in ycols.chunks_exact_mut(ncols).zip(b.value().data()) {
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
    let out = Tensor::new(
        vec![n, spec.out_channels, ho, wo],
        to_sample_major(&ycols, n, spec.out_channels, ho * wo),
    )?;
    let rule = ConvRule {
        geo,
        cols: Arc::new(cols),
        weight: weight.value().clone(),
        has_bias: bias.is_some(),
    };
    match bias {
        Some(b) => tape.record(out, &[x, weight, b], rule),
        None => tape.record(out, &[x, weight], rule),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        Tensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Six-nested-loop reference, independent of the im2col path.
    fn brute_force(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &Conv2dSpec) -> Vec<f64> {
        let [n, cin, h, wd] = x.shape().nchw().unwrap();
        let (ho, wo) = spec.output_hw(h, wd).unwrap();
        let cin_g = cin / spec.groups;
        let cout_g = spec.out_channels / spec.groups;
        let mut out = vec![0.0; n * spec.out_channels * ho * wo];
        for s in 0..n {
            for o in 0..spec.out_channels {
                let g = o / cout_g;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.map_or(0.0, |b| b.data()[o]);
                        for ci in 0..cin_g {
                            let c = g * cin_g + ci;
                            for ki in 0..spec.kernel.0 {
                                for kj in 0..spec.kernel.1 {
                                    let iy = (oy * spec.stride.0 + ki) as isize - spec.padding.0 as isize;
                                    let ix = (ox * spec.stride.1 + kj) as isize - spec.padding.1 as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((s * cin + c) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((o * cin_g + ci) * spec.kernel.0 + ki) * spec.kernel.1 + kj];
                                }
                            }
                        }
                        out[((s * spec.out_channels + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn run(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &Conv2dSpec) -> Tensor {
        let mut tape = Tape::inference();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let bv = b.map(|b| tape.constant(b.clone()));
        conv2d(&mut tape, &xv, &wv, bv.as_ref(), spec).unwrap().value().clone()
    }

    #[test]
    fn one_by_one_permutation_is_channel_permute() {
        let spec = Conv2dSpec::new(3, 3, 1);
        let perm = [2usize, 0, 1];
        let mut w = vec![0.0; 9];
        for (o, &i) in perm.iter().enumerate() {
            w[o * 3 + i] = 1.0;
        }
        let w = Tensor::new(vec![3, 3, 1, 1], w).unwrap();
        let x = random(&[2, 3, 4, 5], 1);
        let y = run(&x, &w, None, &spec);
        for s in 0..2 {
            for (o, &i) in perm.iter().enumerate() {
                let ys = &y.data()[(s * 3 + o) * 20..(s * 3 + o + 1) * 20];
                let xs = &x.data()[(s * 3 + i) * 20..(s * 3 + i + 1) * 20];
                assert_eq!(ys, xs);
            }
        }
    }

    #[test]
    fn stem_shape_arithmetic() {
        let spec = Conv2dSpec::new(3, 64, 7).stride(2).padding(3);
        assert_eq!(spec.output_hw(224, 224).unwrap(), (112, 112));
    }

    #[test]
    fn depthwise_all_ones_interior_is_nine() {
        let spec = Conv2dSpec::new(4, 4, 3).padding(1).groups(4);
        let x = Tensor::full(vec![1, 4, 6, 6], 1.0).unwrap();
        let w = Tensor::full(vec![4, 1, 3, 3], 1.0).unwrap();
        let y = run(&x, &w, None, &spec);
        for c in 0..4 {
            for i in 1..5 {
                for j in 1..5 {
                    assert_eq!(y.data()[(c * 6 + i) * 6 + j], 9.0);
                }
            }
            assert_eq!(y.data()[c * 36], 4.0);
        }
    }

    #[test]
    fn matches_brute_force() {
        let cases = [
            Conv2dSpec::new(4, 3, 3).padding(1),
            Conv2dSpec::new(4, 6, 3).stride(2).padding(1),
            Conv2dSpec::new(4, 2, 1),
            Conv2dSpec::new(4, 8, 3).stride(2).padding(1).groups(2),
            Conv2dSpec::new(4, 4, 5).padding(2).groups(4),
        ];
        for (i, spec) in cases.iter().enumerate() {
            let x = random(&[2, 4, 8, 8], i as u64);
            let w = random(&spec.weight_dims(), 50 + i as u64);
            let b = random(&[spec.out_channels], 90 + i as u64);
            let got = run(&x, &w, Some(&b), spec);
            let want = brute_force(&x, &w, Some(&b), spec);
            let err = got
                .data()
                .iter()
                .zip(&want)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-10, "case {i}: {err}");
        }
    }

    #[test]
    fn rejects_mismatches() {
        let mut tape = Tape::inference();
        let x = tape.constant(Tensor::zeros(vec![1, 3, 8, 8]).unwrap());
        let w = tape.constant(Tensor::zeros(vec![4, 3, 3, 3]).unwrap());
        let spec = Conv2dSpec::new(4, 4, 3);
        let err = conv2d(&mut tape, &x, &w, None, &spec).unwrap_err();
        assert!(err.to_string().contains("in_channels: 4"), "{err}");
        let bad_groups = Conv2dSpec::new(3, 4, 3).groups(2);
        assert!(conv2d(&mut tape, &x, &w, None, &bad_groups).is_err());
        let huge = Conv2dSpec::new(3, 4, 11);
        let w11 = tape.constant(Tensor::zeros(vec![4, 3, 11, 11]).unwrap());
        assert!(conv2d(&mut tape, &x, &w11, None, &huge).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec = Conv2dSpec::new(4, 6, 3).stride(2).padding(1).groups(2);
        let x = random(&[2, 4, 5, 5], 7);
        let w = random(&spec.weight_dims(), 8);
        let b = random(&[6], 9);
        let probe = random(&[2, 6, 3, 3], 10);
        let loss = |tape: &mut Tape, x: &Var, w: &Var, b: &Var| -> Result<Var> {
            let y = conv2d(tape, x, w, Some(b), &spec)?;
            let p = tape.constant(probe.clone());
            let yp = tape.mul(&y, &p)?;
            tape.sum(&yp)
        };
        let ex = finite_diff_check(
            |t, v| {
                let (w, b) = (t.constant(w.clone()), t.constant(b.clone()));
                loss(t, v, &w, &b)
            },
            &x,
            1e-4,
        )
        .unwrap();
        let ew = finite_diff_check(
            |t, v| {
                let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
                loss(t, &x, v, &b)
            },
            &w,
            1e-4,
        )
        .unwrap();
        let eb = finite_diff_check(
            |t, v| {
                let (x, w) = (t.constant(x.clone()), t.constant(w.clone()));
                loss(t, &x, &w, v)
            },
            &b,
            1e-4,
        )
        .unwrap();
        assert!(ex.max(ew).max(eb) <= 1e-7, "{ex} {ew} {eb}");
    }
}
