//! Parameterised layers over a [`ParamStore`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::conv::{conv2d, Conv2dSpec};
use super::linear::linear;
use super::norm::{batch_norm, NormMode};
use super::params::{NormUpdate, ParamId, ParamKind, ParamStore};
use super::pool::{channel_scale, mean_pool};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward state: the tape, the bound parameter vars and any batchnorm
/// statistics collected in train mode.
pub struct Ctx<'t> {
    pub tape: &'t mut Tape,
    params: Vec<Var>,
    pub mode: Mode,
    pub norm_updates: Vec<NormUpdate>,
}

impl<'t> Ctx<'t> {
    pub fn new(tape: &'t mut Tape, store: &ParamStore, mode: Mode, requires_grad: bool) -> Self {
        let params = store.bind(tape, requires_grad);
        Ctx {
            tape,
            params,
            mode,
            norm_updates: Vec::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> &Var {
        &self.params[id.index()]
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }

    /// Use `var` in place of the bound parameter `id`.
    pub fn replace(&mut self, id: ParamId, var: Var) -> Result<()> {
        let slot = self
            .params
            .get_mut(id.index())
            .ok_or_else(|| Error::arg("param", format!("no parameter {}", id.index())))?;
        if slot.shape() != var.shape() {
            return Err(Error::ShapeMismatch {
                op: "replace parameter",
                left: slot.shape().clone(),
                right: var.shape().clone(),
            });
        }
        *slot = var;
        Ok(())
    }

    /// Bound parameter vars and collected batchnorm statistics.
    pub fn finish(self) -> (Vec<Var>, Vec<NormUpdate>) {
        (self.params, self.norm_updates)
    }
}

fn normal_tensor(dims: Vec<usize>, std: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let dist = Normal::new(0.0, std).map_err(|e| Error::config("init std", e.to_string()))?;
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| dist.sample(rng)).collect())
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: Conv2dSpec,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Conv2d {
    /// He-normal weights over the per-group fan-in, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, spec: Conv2dSpec, bias: bool, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let dims = spec.weight_dims();
        let fan_in = dims[1] * dims[2] * dims[3];
        let w = normal_tensor(dims.to_vec(), (2.0 / fan_in as f64).sqrt(), rng)?;
        let weight = store.add(format!("{name}.weight"), w, ParamKind::Weight)?;
        let bias = bias
            .then(|| {
                store.add(
                    format!("{name}.bias"),
                    Tensor::zeros(vec![spec.out_channels])?,
                    ParamKind::Bias,
                )
            })
            .transpose()?;
        Ok(Conv2d { spec, weight, bias })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        let w = ctx.param(self.weight).clone();
        let b = self.bias.map(|b| ctx.param(b).clone());
        conv2d(ctx.tape, x, &w, b.as_ref(), &self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: store.add(
                format!("{name}.gamma"),
                Tensor::full(vec![channels], 1.0)?,
                ParamKind::Norm,
            )?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![channels])?, ParamKind::Norm)?,
            running_mean: store.add(
                format!("{name}.running_mean"),
                Tensor::zeros(vec![channels])?,
                ParamKind::Buffer,
            )?,
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::full(vec![channels], 1.0)?,
                ParamKind::Buffer,
            )?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma).clone();
        let beta = ctx.param(self.beta).clone();
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = batch_norm(ctx.tape, x, &gamma, &beta, NormMode::Train, self.eps)?;
                ctx.norm_updates.push(NormUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    momentum: self.momentum,
                    stats: stats.expect("train mode yields batch stats"),
                });
                Ok(y)
            }
            Mode::Eval => {
                let mean = ctx.param(self.running_mean).value().clone();
                let var = ctx.param(self.running_var).value().clone();
                let mode = NormMode::Eval {
                    running_mean: mean.data(),
                    running_var: var.data(),
                };
                Ok(batch_norm(ctx.tape, x, &gamma, &beta, mode, self.eps)?.0)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut impl Rng) -> Result<Self> {
        let w = normal_tensor(vec![dout, din], (1.0 / din as f64).sqrt(), rng)?;
        Ok(Linear {
            weight: store.add(format!("{name}.weight"), w, ParamKind::Weight)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![dout])?, ParamKind::Bias)?,
        })
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        let w = ctx.param(self.weight).clone();
        let b = ctx.param(self.bias).clone();
        linear(ctx.tape, x, &w, &b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeBlockSpec {
    pub channels: usize,
    pub reduction_ratio: usize,
}

impl SeBlockSpec {
    pub fn validate(&self) -> Result<usize> {
        if self.channels == 0 || self.reduction_ratio == 0 {
            return Err(Error::config("se_ratio", "channels and ratio must be positive"));
        }
        if !self.channels.is_multiple_of(self.reduction_ratio) {
            return Err(Error::config(
                "se_ratio",
                format!("{} does not divide {} channels", self.reduction_ratio, self.channels),
            ));
        }
        Ok(self.channels / self.reduction_ratio)
    }
}

/// Squeeze-and-excitation: `x * sigmoid(W2 relu(W1 avgpool(x)))` per channel.
#[derive(Clone, Debug)]
pub struct SeBlock {
    pub spec: SeBlockSpec,
    pub reduce: Linear,
    pub expand: Linear,
}

impl SeBlock {
    pub fn new(store: &mut ParamStore, name: &str, spec: SeBlockSpec, rng: &mut impl Rng) -> Result<Self> {
        let hidden = spec.validate()?;
        Ok(SeBlock {
            spec,
            reduce: Linear::new(store, &format!("{name}.reduce"), spec.channels, hidden, rng)?,
            expand: Linear::new(store, &format!("{name}.expand"), hidden, spec.channels, rng)?,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Var) -> Result<Var> {
        let [_, c, _, _] = x.shape().nchw()?;
        if c != self.spec.channels {
            return Err(Error::arg(
                "x",
                format!("SE block built for {} channels got {c}", self.spec.channels),
            ));
        }
        let squeezed = mean_pool(ctx.tape, x, 1)?;
        let hidden = self.reduce.forward(ctx, &squeezed)?;
        let hidden = ctx.tape.relu(&hidden)?;
        let gate = self.expand.forward(ctx, &hidden)?;
        let gate = ctx.tape.sigmoid(&gate)?;
        channel_scale(ctx.tape, x, &gate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(dims: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        Tensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn se_fixture(seed: u64) -> (ParamStore, SeBlock) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = SeBlockSpec {
            channels: 8,
            reduction_ratio: 4,
        };
        let se = SeBlock::new(&mut store, "se", spec, &mut rng).unwrap();
        (store, se)
    }

    fn zero_all(store: &mut ParamStore) {
        for i in 0..store.len() {
            let id = ParamId(i);
            let zeros = Tensor::from_shape(
                store.get(id).value.shape().clone(),
                vec![0.0; store.get(id).value.numel()],
            )
            .unwrap();
            store.set(id, zeros).unwrap();
        }
    }

    fn run_se(store: &ParamStore, se: &SeBlock, x: &Tensor) -> Tensor {
        let mut tape = Tape::inference();
        let mut ctx = Ctx::new(&mut tape, store, Mode::Eval, false);
        let xv = ctx.tape.constant(x.clone());
        se.forward(&mut ctx, &xv).unwrap().value().clone()
    }

    #[test]
    fn se_ratio_must_divide() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = SeBlockSpec {
            channels: 10,
            reduction_ratio: 4,
        };
        assert!(SeBlock::new(&mut store, "se", spec, &mut rng).is_err());
    }

    #[test]
    fn se_zero_params_halves_input() {
        let (mut store, se) = se_fixture(1);
        zero_all(&mut store);
        let x = random(&[2, 8, 3, 3], 2);
        let y = run_se(&store, &se, &x);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, b / 2.0);
        }
        let scaled = x.map(|v| v * 7.0);
        let ys = run_se(&store, &se, &scaled);
        let argmax = |t: &Tensor| {
            (0..8)
                .max_by(|&a, &b| t.data()[a * 9].partial_cmp(&t.data()[b * 9]).unwrap())
                .unwrap()
        };
        assert_eq!(argmax(&y), argmax(&ys));
    }

    #[test]
    fn se_zero_input_gives_zero() {
        let (store, se) = se_fixture(3);
        let y = run_se(&store, &se, &Tensor::zeros(vec![1, 8, 2, 2]).unwrap());
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn se_matches_scalar_oracle() {
        let (store, se) = se_fixture(4);
        let x = random(&[2, 8, 3, 3], 5);
        let y = run_se(&store, &se, &x);
        let w1 = &store.get(se.reduce.weight()).value;
        let b1 = &store.get(se.reduce.bias()).value;
        let w2 = &store.get(se.expand.weight()).value;
        let b2 = &store.get(se.expand.bias()).value;
        for n in 0..2 {
            let pooled: Vec<f64> = (0..8)
                .map(|c| x.data()[(n * 8 + c) * 9..(n * 8 + c + 1) * 9].iter().sum::<f64>() / 9.0)
                .collect();
            let hidden: Vec<f64> = (0..2)
                .map(|j| {
                    let z = b1.data()[j] + (0..8).map(|c| w1.data()[j * 8 + c] * pooled[c]).sum::<f64>();
                    z.max(0.0)
                })
                .collect();
            for c in 0..8 {
                let z = b2.data()[c] + (0..2).map(|j| w2.data()[c * 2 + j] * hidden[j]).sum::<f64>();
                let s = 1.0 / (1.0 + (-z).exp());
                for p in 0..9 {
                    let i = (n * 8 + c) * 9 + p;
                    assert!((y.data()[i] - s * x.data()[i]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn se_input_gradient() {
        let (store, se) = se_fixture(6);
        let probe = random(&[2, 8, 2, 2], 7);
        let err = finite_diff_check(
            |t, x| {
                let mut ctx = Ctx::new(t, &store, Mode::Eval, false);
                let y = se.forward(&mut ctx, x)?;
                let p = ctx.tape.constant(probe.clone());
                let m = ctx.tape.mul(&y, &p)?;
                ctx.tape.sum(&m)
            },
            &random(&[2, 8, 2, 2], 8),
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }
}
