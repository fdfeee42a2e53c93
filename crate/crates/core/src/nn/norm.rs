use crate::error::{Error, Result};
use crate::tensor::{Backward, Tape, Tensor, Var};

/// Per-channel statistics of a train-mode batch, for running-stat updates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n-1) variance.
    pub var: Vec<f64>,
}

pub enum NormMode<'a> {
    Train,
    Eval {
        running_mean: &'a [f64],
        running_var: &'a [f64],
    },
}

struct Layout {
    n: usize,
    c: usize,
    hw: usize,
}

impl Layout {
    fn count(&self) -> usize {
        self.n * self.hw
    }

    /// Flat ranges holding channel `c`.
    fn channel(&self, c: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        (0..self.n).map(move |s| {
            let start = (s * self.c + c) * self.hw;
            start..start + self.hw
        })
    }
}

struct BatchNormRule {
    layout: Layout,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
    batch_stats: bool,
}

impl Backward for BatchNormRule {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn backward(&self, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let l = &self.layout;
        let m = l.count() as f64;
        let mut dx = vec![0.0; g.len()];
        let mut dgamma = vec![0.0; l.c];
        let mut dbeta = vec![0.0; l.c];
        for c in 0..l.c {
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for r in l.channel(c) {
                for i in r {
                    sum_g += g[i];
                    sum_gx += g[i] * self.xhat[i];
                }
            }
            dbeta[c] = sum_g;
            dgamma[c] = sum_gx;
            let scale = self.gamma[c] * self.inv_std[c];
            for r in l.channel(c) {
                for i in r {
                    dx[i] = if self.batch_stats {
                        scale / m * (m * g[i] - sum_g - self.xhat[i] * sum_gx)
                    } else {
                        scale * g[i]
                    };
                }
            }
        }
        vec![
            needs[0].then_some(dx),
            needs[1].then_some(dgamma),
            needs[2].then_some(dbeta),
        ]
    }
}

/// Batch normalization over `[N, C, H, W]` (or `[N, C]`) per channel.
///
/// Returns the batch statistics in train mode so the caller can update its
/// running averages.
pub fn batch_norm(
    tape: &mut Tape,
    x: &Var,
    gamma: &Var,
    beta: &Var,
    mode: NormMode<'_>,
    eps: f64,
) -> Result<(Var, Option<BatchStats>)> {
    let dims = x.shape().dims();
    if dims.len() < 2 {
        return Err(Error::InvalidShape(format!(
            "batchnorm expects [N, C, ...], got {}",
            x.shape()
        )));
    }
    let (n, c) = (dims[0], dims[1]);
    let layout = Layout {
        n,
        c,
        hw: dims[2..].iter().product(),
    };
    for (name, p) in [("gamma", gamma), ("beta", beta)] {
        if p.shape().dims() != [c] {
            return Err(Error::arg(name, format!("expected [{c}], got {}", p.shape())));
        }
    }
    let xd = x.value().data();
    let m = layout.count();
    let (mean, var_biased, stats) = match mode {
        NormMode::Train => {
            if m < 2 {
                return Err(Error::arg(
                    "x",
                    format!("train-mode batchnorm needs at least 2 values per channel, got {m}"),
                ));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mu = layout.channel(ch).flat_map(|r| &xd[r]).sum::<f64>() / m as f64;
                let ss = layout
                    .channel(ch)
                    .flat_map(|r| &xd[r])
                    .map(|v| (v - mu) * (v - mu))
                    .sum::<f64>();
                mean[ch] = mu;
                var[ch] = ss / m as f64;
            }
            let unbiased = var.iter().map(|v| v * m as f64 / (m - 1) as f64).collect();
            let stats = BatchStats {
                mean: mean.clone(),
                var: unbiased,
            };
            (mean, var, Some(stats))
        }
        NormMode::Eval {
            running_mean,
            running_var,
        } => {
            if running_mean.len() != c || running_var.len() != c {
                return Err(Error::arg("running stats", format!("expected {c} channels")));
            }
            (running_mean.to_vec(), running_var.to_vec(), None)
        }
    };
    let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    let (gd, bd) = (gamma.value().data(), beta.value().data());
    for ch in 0..c {
        for r in layout.channel(ch) {
            for i in r {
                xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                out[i] = gd[ch] * xhat[i] + bd[ch];
            }
        }
    }
    let out = Tensor::from_shape(x.shape().clone(), out)?;
    let rule = BatchNormRule {
        layout,
        xhat,
        inv_std,
        gamma: gd.to_vec(),
        batch_stats: stats.is_some(),
    };
    let y = tape.record(out, &[x, gamma, beta], rule)?;
    Ok((y, stats))
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
        Tensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn eval_identity_stats_is_near_identity() {
        let mut tape = Tape::inference();
        let x = tape.constant(random(&[2, 3, 2, 2], 1));
        let g = tape.constant(Tensor::full(vec![3], 1.0).unwrap());
        let b = tape.constant(Tensor::zeros(vec![3]).unwrap());
        let mode = NormMode::Eval {
            running_mean: &[0.0; 3],
            running_var: &[1.0; 3],
        };
        let (y, stats) = batch_norm(&mut tape, &x, &g, &b, mode, 1e-5).unwrap();
        assert!(stats.is_none());
        assert!(y.value().max_abs_diff(x.value()) < 1e-4);
    }

    #[test]
    fn train_output_has_beta_mean_and_gamma_variance() {
        let mut tape = Tape::inference();
        let x = tape.constant(random(&[4, 2, 3, 3], 2));
        let g = tape.constant(Tensor::new(vec![2], vec![1.5, 0.5]).unwrap());
        let b = tape.constant(Tensor::new(vec![2], vec![-0.3, 2.0]).unwrap());
        let (y, _) = batch_norm(&mut tape, &x, &g, &b, NormMode::Train, 0.0).unwrap();
        for (c, (gamma, beta)) in [(1.5, -0.3), (0.5, 2.0)].into_iter().enumerate() {
            let vals: Vec<f64> = (0..4)
                .flat_map(|s| y.value().data()[(s * 2 + c) * 9..(s * 2 + c + 1) * 9].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!((mean - beta).abs() < 1e-6);
            assert!((var - gamma * gamma).abs() < 1e-6);
        }
    }

    #[test]
    fn train_rejects_single_value_per_channel() {
        let mut tape = Tape::inference();
        let x = tape.constant(random(&[1, 2, 1, 1], 3));
        let g = tape.constant(Tensor::full(vec![2], 1.0).unwrap());
        let b = tape.constant(Tensor::zeros(vec![2]).unwrap());
        assert!(batch_norm(&mut tape, &x, &g, &b, NormMode::Train, 1e-5).is_err());
    }

    #[test]
    fn gradients_in_both_modes() {
        let x = random(&[3, 2, 2, 2], 4);
        let gamma = Tensor::new(vec![2], vec![1.3, -0.7]).unwrap();
        let beta = Tensor::new(vec![2], vec![0.1, 0.4]).unwrap();
        let probe = random(&[3, 2, 2, 2], 5);
        for train in [true, false] {
            let f = |which: usize| {
                let (x, gamma, beta, probe) = (x.clone(), gamma.clone(), beta.clone(), probe.clone());
                move |t: &mut Tape, v: &Var| -> Result<Var> {
                    let mut inputs = [
                        t.constant(x.clone()),
                        t.constant(gamma.clone()),
                        t.constant(beta.clone()),
                    ];
                    inputs[which] = v.clone();
                    let mode = if train {
                        NormMode::Train
                    } else {
                        NormMode::Eval {
                            running_mean: &[0.2, -0.1],
                            running_var: &[0.8, 1.7],
                        }
                    };
                    let (y, _) = batch_norm(t, &inputs[0], &inputs[1], &inputs[2], mode, 1e-5)?;
                    let p = t.constant(probe.clone());
                    let yp = t.mul(&y, &p)?;
                    t.sum(&yp)
                }
            };
            for (which, at) in [(0, &x), (1, &gamma), (2, &beta)] {
                let err = finite_diff_check(f(which), at, 1e-4).unwrap();
                assert!(err <= 1e-4, "train={train} input {which}: {err}");
            }
        }
    }
}
