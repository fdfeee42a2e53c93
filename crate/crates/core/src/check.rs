//! Finite-difference gradient suite over every differentiable op and the
//! end-to-end loss of a small two-path network.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::model::{build_model, BackboneConfig, FusionVariant};
use crate::nn::{
    adaptive_avg_pool, batch_norm, channel_scale, conv2d, linear, maxpool2d, mean_pool, softmax_cross_entropy,
    Conv2dSpec, Mode, NormMode,
};
use crate::tensor::gradcheck::{finite_diff_check_at, relative_error};
use crate::tensor::{Tape, Tensor, Var};

pub const GRAD_EPS: f64 = 1e-4;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Minimum distance kept between inputs and a ReLU or max-pool kink.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct OpCheck {
    pub name: String,
    pub checks: usize,
    pub max_rel_err: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= GRAD_TOLERANCE
    }
}

#[derive(Default)]
struct Collector {
    rows: Vec<OpCheck>,
}

impl Collector {
    fn push(&mut self, name: &str, err: f64) {
        match self.rows.iter_mut().find(|r| r.name == name) {
            Some(r) => {
                r.checks += 1;
                r.max_rel_err = r.max_rel_err.max(err);
            }
            None => self.rows.push(OpCheck {
                name: name.to_string(),
                checks: 1,
                max_rel_err: err,
            }),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("valid dims")
}

/// Values bounded away from zero by the kink margin.
fn off_kink(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    uniform(rng, dims, -1.0, 1.0).map(|v| {
        if v.abs() < KINK_MARGIN {
            v.signum() * KINK_MARGIN * 2.0
        } else {
            v
        }
    })
}

/// Distinct values spaced well apart, so pooling windows have clear winners.
fn distinct(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor {
    let n: usize = dims.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(
        dims.to_vec(),
        idx.into_iter().map(|k| k as f64 * 10.0 * KINK_MARGIN - 0.5).collect(),
    )
    .expect("valid dims")
}

/// Reduce `y` to a scalar with fixed random weights.
fn project(tape: &mut Tape, y: &Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.reshape(y.shape().dims().to_vec())?);
    let p = tape.mul(y, &w)?;
    tape.sum(&p)
}

fn check<F>(out: &mut Collector, name: &str, x: &Tensor, mut f: F) -> Result<()>
where
    F: FnMut(&mut Tape, &Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    let err = finite_diff_check_at(&mut f, x, GRAD_EPS, &coords)?;
    out.push(name, err);
    Ok(())
}

fn op_checks(out: &mut Collector, seed: u64) -> Result<()> {
    let mut rng = crate::rng::stream(seed, &[0x9c]);
    let rng = &mut rng;

    let a = uniform(rng, &[2, 3], -1.0, 1.0);
    let b = uniform(rng, &[2, 3], -1.0, 1.0);
    let w6 = uniform(rng, &[6], -1.0, 1.0);
    check(out, "add", &a, |t, x| {
        let c = t.constant(b.clone());
        let y = t.add(x, &c)?;
        let y = t.mul(&y, &y)?;
        project(t, &y, &w6)
    })?;
    check(out, "mul", &a, |t, x| {
        let c = t.constant(b.clone());
        let y = t.mul(x, &c)?;
        let y = t.mul(&y, x)?;
        project(t, &y, &w6)
    })?;
    let k = rng.random_range(-2.0..2.0);
    check(out, "scale", &a, |t, x| {
        let y = t.scale(x, k)?;
        let y = t.mul(&y, &y)?;
        project(t, &y, &w6)
    })?;
    check(out, "relu", &off_kink(rng, &[2, 3]), |t, x| {
        let y = t.relu(x)?;
        project(t, &y, &w6)
    })?;
    check(out, "sigmoid", &uniform(rng, &[2, 3], -3.0, 3.0), |t, x| {
        let y = t.sigmoid(x)?;
        project(t, &y, &w6)
    })?;
    check(out, "sum", &a, |t, x| {
        let y = t.mul(x, x)?;
        t.sum(&y)
    })?;
    check(out, "reshape", &a, |t, x| {
        let y = t.reshape(x, vec![3, 2])?;
        let y = t.mul(&y, &y)?;
        project(t, &y, &w6)
    })?;
    let index = rng.random_range(0..6);
    check(out, "pick", &a, |t, x| {
        let y = t.mul(x, x)?;
        t.pick(&y, index)
    })?;

    // grouped, strided, padded convolution
    let spec = Conv2dSpec::new(4, 6, 3).stride(2).padding(1).groups(2);
    let cx = uniform(rng, &[2, 4, 5, 5], -1.0, 1.0);
    let cw = uniform(rng, &spec.weight_dims(), -0.5, 0.5);
    let cb = uniform(rng, &[6], -0.5, 0.5);
    let cproj = uniform(rng, &[2 * 6 * 3 * 3], -1.0, 1.0);
    check(out, "conv2d.input", &cx, |t, x| {
        let (w, b) = (t.constant(cw.clone()), t.constant(cb.clone()));
        let y = conv2d(t, x, &w, Some(&b), &spec)?;
        project(t, &y, &cproj)
    })?;
    check(out, "conv2d.weight", &cw, |t, w| {
        let (x, b) = (t.constant(cx.clone()), t.constant(cb.clone()));
        let y = conv2d(t, &x, w, Some(&b), &spec)?;
        project(t, &y, &cproj)
    })?;
    check(out, "conv2d.bias", &cb, |t, b| {
        let (x, w) = (t.constant(cx.clone()), t.constant(cw.clone()));
        let y = conv2d(t, &x, &w, Some(b), &spec)?;
        project(t, &y, &cproj)
    })?;

    let nx = uniform(rng, &[3, 2, 2, 2], -1.0, 1.0);
    let gamma = uniform(rng, &[2], 0.5, 1.5);
    let beta = uniform(rng, &[2], -0.5, 0.5);
    let nproj = uniform(rng, &[24], -1.0, 1.0);
    let (rm, rv) = ([0.1, -0.2], [0.8, 1.3]);
    let bn = |t: &mut Tape, x: &Var, g: &Var, b: &Var, train: bool| -> Result<Var> {
        let mode = if train {
            NormMode::Train
        } else {
            NormMode::Eval {
                running_mean: &rm,
                running_var: &rv,
            }
        };
        let (y, _) = batch_norm(t, x, g, b, mode, 1e-5)?;
        project(t, &y, &nproj)
    };
    for train in [true, false] {
        let tag = if train { "train" } else { "eval" };
        check(out, &format!("batch_norm.{tag}.input"), &nx, |t, x| {
            let (g, b) = (t.constant(gamma.clone()), t.constant(beta.clone()));
            bn(t, x, &g, &b, train)
        })?;
        check(out, &format!("batch_norm.{tag}.gamma"), &gamma, |t, g| {
            let (x, b) = (t.constant(nx.clone()), t.constant(beta.clone()));
            bn(t, &x, g, &b, train)
        })?;
        check(out, &format!("batch_norm.{tag}.beta"), &beta, |t, b| {
            let (x, g) = (t.constant(nx.clone()), t.constant(gamma.clone()));
            bn(t, &x, &g, b, train)
        })?;
    }

    let px = distinct(rng, &[2, 2, 5, 5]);
    let pproj = uniform(rng, &[2 * 2 * 3 * 3], -1.0, 1.0);
    check(out, "maxpool2d", &px, |t, x| {
        let y = maxpool2d(t, x, 3, 2, 1)?;
        project(t, &y, &pproj)
    })?;
    let mx = uniform(rng, &[4, 3, 2, 2], -1.0, 1.0);
    let mproj = uniform(rng, &[6], -1.0, 1.0);
    check(out, "mean_pool", &mx, |t, x| {
        let y = mean_pool(t, x, 2)?;
        project(t, &y, &mproj)
    })?;
    let aproj = uniform(rng, &[3], -1.0, 1.0);
    check(out, "adaptive_avg_pool", &mx, |t, x| {
        let y = adaptive_avg_pool(t, x)?;
        project(t, &y, &aproj)
    })?;
    let sx = uniform(rng, &[2, 3, 2, 2], -1.0, 1.0);
    let ss = uniform(rng, &[2, 3], -1.0, 1.0);
    let sproj = uniform(rng, &[24], -1.0, 1.0);
    check(out, "channel_scale.input", &sx, |t, x| {
        let s = t.constant(ss.clone());
        let y = channel_scale(t, x, &s)?;
        project(t, &y, &sproj)
    })?;
    check(out, "channel_scale.scale", &ss, |t, s| {
        let x = t.constant(sx.clone());
        let y = channel_scale(t, &x, s)?;
        project(t, &y, &sproj)
    })?;

    let lx = uniform(rng, &[3, 4], -1.0, 1.0);
    let lw = uniform(rng, &[2, 4], -1.0, 1.0);
    let lb = uniform(rng, &[2], -1.0, 1.0);
    let lproj = uniform(rng, &[6], -1.0, 1.0);
    check(out, "linear.input", &lx, |t, x| {
        let (w, b) = (t.constant(lw.clone()), t.constant(lb.clone()));
        let y = linear(t, x, &w, &b)?;
        project(t, &y, &lproj)
    })?;
    check(out, "linear.weight", &lw, |t, w| {
        let (x, b) = (t.constant(lx.clone()), t.constant(lb.clone()));
        let y = linear(t, &x, w, &b)?;
        project(t, &y, &lproj)
    })?;
    check(out, "linear.bias", &lb, |t, b| {
        let (x, w) = (t.constant(lx.clone()), t.constant(lw.clone()));
        let y = linear(t, &x, &w, b)?;
        project(t, &y, &lproj)
    })?;

    let logits = uniform(rng, &[3, 2], -2.0, 2.0);
    let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..2)).collect();
    check(out, "softmax_cross_entropy", &logits, |t, x| {
        softmax_cross_entropy(t, x, &labels)
    })?;
    Ok(())
}

/// Smallest step tried before a coordinate is declared to sit on a kink.
const MIN_EPS: f64 = 1e-7;

fn eval_tracked<F>(f: &mut F, x: &Tensor) -> Result<(f64, Option<u64>)>
where
    F: FnMut(&mut Tape, &Var) -> Result<Var>,
{
    let mut tape = Tape::branch_tracking();
    let v = tape.constant(x.clone());
    let y = f(&mut tape, &v)?.value().item()?;
    Ok((y, tape.branch_digest()))
}

/// Central differences at `coords` using `GRAD_EPS`, shrunk for a coordinate
/// only while some ReLU or max-pool decision differs between `x - eps`, `x`
/// and `x + eps`. Returns the worst relative error and the number of
/// coordinates skipped because no kink-free step was found.
fn kink_aware_check<F>(mut f: F, x: &Tensor, coords: &[usize]) -> Result<(f64, usize)>
where
    F: FnMut(&mut Tape, &Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let loss = f(&mut tape, &leaf)?;
    tape.backward(&loss)?;
    let analytic = tape.grad_or_zeros(&leaf);
    let (_, centre) = eval_tracked(&mut f, x)?;

    let (mut worst, mut skipped) = (0.0f64, 0);
    let mut probe = x.to_vec();
    'coords: for &i in coords {
        let orig = probe[i];
        let mut eps = GRAD_EPS;
        while eps >= MIN_EPS {
            let (hi, lo) = (orig + eps, orig - eps);
            probe[i] = hi;
            let (plus, dp) = eval_tracked(&mut f, &Tensor::from_shape(x.shape().clone(), probe.clone())?)?;
            probe[i] = lo;
            let (minus, dm) = eval_tracked(&mut f, &Tensor::from_shape(x.shape().clone(), probe.clone())?)?;
            probe[i] = orig;
            if dp == centre && dm == centre {
                let numeric = (plus - minus) / (hi - lo);
                worst = worst.max(relative_error(analytic.data()[i], numeric));
                continue 'coords;
            }
            eps /= 10.0;
        }
        skipped += 1;
    }
    Ok((worst, skipped))
}

/// End-to-end loss of a micro two-path network (64x64, two frames per clip),
/// checked at one random coordinate of a third of the learnable tensors and
/// a few input pixels.
fn model_checks(out: &mut Collector, seed: u64) -> Result<usize> {
    let resolution = 64;
    let config = BackboneConfig {
        input_resolution: resolution,
        n_frames: 2,
        ..BackboneConfig::micro()
    };
    let model = build_model(&config, FusionVariant::Full, seed)?;
    let mut rng = crate::rng::stream(seed, &[0x9d]);
    let dims = [2, 3, resolution, resolution];
    let rgb = uniform(&mut rng, &dims, 0.0, 1.0);
    let res = uniform(&mut rng, &dims, 0.0, 1.0);
    let label = [rng.random_range(0..2usize)];

    let loss = |t: &mut Tape, s: &Var, r: &Var, replace: &[(crate::nn::ParamId, Var)]| -> Result<Var> {
        let f = model.forward_with(t, Mode::Train, s, r, replace)?;
        softmax_cross_entropy(t, &f.logits, &label)
    };

    let (mut worst, mut skipped) = (0.0f64, 0);
    // each seed takes every third learnable tensor, so 20 seeds visit each
    // tensor at least six times
    let ids: Vec<_> = model
        .store
        .ids()
        .filter(|&id| model.store.get(id).kind.learnable())
        .enumerate()
        .filter(|(i, _)| (*i as u64 + seed).is_multiple_of(3))
        .map(|(_, id)| id)
        .collect();
    for id in ids {
        let value = model.store.get(id).value.clone();
        let coord = rng.random_range(0..value.numel());
        let (err, skip) = kink_aware_check(
            |t, x| {
                let (s, r) = (t.constant(rgb.clone()), t.constant(res.clone()));
                loss(t, &s, &r, &[(id, x.clone())])
            },
            &value,
            &[coord],
        )?;
        worst = worst.max(err);
        skipped += skip;
    }
    let coords: Vec<usize> = (0..3).map(|_| rng.random_range(0..rgb.numel())).collect();
    for (err, skip) in [
        kink_aware_check(
            |t, x| {
                let r = t.constant(res.clone());
                loss(t, x, &r, &[])
            },
            &rgb,
            &coords,
        )?,
        kink_aware_check(
            |t, x| {
                let s = t.constant(rgb.clone());
                loss(t, &s, x, &[])
            },
            &res,
            &coords,
        )?,
    ] {
        worst = worst.max(err);
        skipped += skip;
    }
    out.push("stcnet.micro64", worst);
    Ok(skipped)
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub rows: Vec<OpCheck>,
    /// Network coordinates with a kink inside every step tried.
    pub skipped: usize,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(OpCheck::passed)
    }
}

/// Run every op check for `seeds` seeds, plus the end-to-end network check
/// when `with_model` is set. One row per op with the worst error seen.
pub fn gradient_suite(seeds: u64, with_model: bool) -> Result<SuiteReport> {
    let mut out = Collector::default();
    let mut skipped = 0;
    for seed in 0..seeds {
        op_checks(&mut out, seed)?;
        if with_model {
            skipped += model_checks(&mut out, seed)?;
        }
    }
    Ok(SuiteReport {
        rows: out.rows,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ops_pass_for_two_seeds() {
        let report = gradient_suite(2, false).unwrap();
        assert!(report.rows.len() >= 20);
        for r in &report.rows {
            assert!(r.passed(), "{} error {}", r.name, r.max_rel_err);
            assert_eq!(r.checks, 2);
        }
    }

    #[test]
    fn kink_helpers_keep_their_margin() {
        let mut rng = crate::rng::stream(3, &[]);
        assert!(off_kink(&mut rng, &[100]).data().iter().all(|v| v.abs() >= KINK_MARGIN));
        let d = distinct(&mut rng, &[50]);
        let mut v = d.to_vec();
        v.sort_by(f64::total_cmp);
        assert!(v.windows(2).all(|w| w[1] - w[0] >= KINK_MARGIN));
    }

    #[test]
    fn branch_digest_sees_relu_flip() {
        let digest = |v: f64| {
            let mut t = Tape::branch_tracking();
            let x = t.constant(Tensor::new(vec![2], vec![v, 1.0]).unwrap());
            t.relu(&x).unwrap();
            t.branch_digest().unwrap()
        };
        assert_eq!(digest(0.5), digest(0.25));
        assert_ne!(digest(0.5), digest(-0.5));
    }

    #[test]
    fn kink_aware_check_shrinks_across_a_kink() {
        // |x| sampled at 5e-5: the default step straddles the kink, a smaller one does not
        let x = Tensor::new(vec![1], vec![5e-5]).unwrap();
        let (err, skipped) = kink_aware_check(
            |t, x| {
                let p = t.relu(x)?;
                let m = t.scale(x, -1.0)?;
                let n = t.relu(&m)?;
                let y = t.add(&p, &n)?;
                t.sum(&y)
            },
            &x,
            &[0],
        )
        .unwrap();
        assert_eq!(skipped, 0);
        assert!(err < 1e-9, "{err}");
    }
}
