use super::{Backward, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Var, b: &Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().clone(),
            right: b.shape().clone(),
        });
    }
    Ok(())
}

fn elementwise(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    a.map(f)
}

struct AddRule;
impl Backward for AddRule {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        needs.iter().map(|&n| n.then(|| g.to_vec())).collect()
    }
}

struct MulRule {
    a: Tensor,
    b: Tensor,
}
impl Backward for MulRule {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let times = |other: &Tensor| g.iter().zip(other.data()).map(|(g, o)| g * o).collect();
        vec![needs[0].then(|| times(&self.b)), needs[1].then(|| times(&self.a))]
    }
}

struct ScaleRule(f64);
impl Backward for ScaleRule {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.iter().map(|v| v * self.0).collect())]
    }
}

struct ReluRule {
    input: Tensor,
}
impl Backward for ReluRule {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let dx = g
            .iter()
            .zip(self.input.data())
            .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
            .collect();
        vec![Some(dx)]
    }
}

struct SigmoidRule {
    out: Tensor,
}
impl Backward for SigmoidRule {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let dx = g
            .iter()
            .zip(self.out.data())
            .map(|(&g, &s)| g * s * (1.0 - s))
            .collect();
        vec![Some(dx)]
    }
}

struct SumRule {
    len: usize,
}
impl Backward for SumRule {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![g[0]; self.len])]
    }
}

struct ReshapeRule;
impl Backward for ReshapeRule {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        vec![Some(g.to_vec())]
    }
}

struct PickRule {
    len: usize,
    index: usize,
}
impl Backward for PickRule {
    fn name(&self) -> &'static str {
        "pick"
    }
    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let mut dx = vec![0.0; self.len];
        dx[self.index] = g[0];
        vec![Some(dx)]
    }
}

/// Numerically stable logistic function; saturates to exactly 0 or 1.
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("add", a, b)?;
        let data = a
            .value()
            .data()
            .iter()
            .zip(b.value().data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_shape(a.shape().clone(), data)?;
        self.record(out, &[a, b], AddRule)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        same_shape("mul", a, b)?;
        let data = a
            .value()
            .data()
            .iter()
            .zip(b.value().data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_shape(a.shape().clone(), data)?;
        let rule = MulRule {
            a: a.value().clone(),
            b: b.value().clone(),
        };
        self.record(out, &[a, b], rule)
    }

    pub fn scale(&mut self, a: &Var, k: f64) -> Result<Var> {
        if !k.is_finite() {
            return Err(Error::arg("k", format!("scale factor must be finite, got {k}")));
        }
        let out = elementwise(a.value(), |v| v * k);
        self.record(out, &[a], ScaleRule(k))
    }

    pub fn relu(&mut self, a: &Var) -> Result<Var> {
        let out = elementwise(a.value(), |v| if v > 0.0 { v } else { 0.0 });
        if self.tracks_branches() {
            self.note_branches(a.value().data().iter().map(|&v| (v > 0.0) as u64));
        }
        let rule = ReluRule {
            input: a.value().clone(),
        };
        self.record(out, &[a], rule)
    }

    pub fn sigmoid(&mut self, a: &Var) -> Result<Var> {
        let out = elementwise(a.value(), sigmoid_scalar);
        let rule = SigmoidRule { out: out.clone() };
        self.record(out, &[a], rule)
    }

    pub fn sum(&mut self, a: &Var) -> Result<Var> {
        let total = a.value().data().iter().sum();
        let rule = SumRule { len: a.value().numel() };
        self.record(Tensor::scalar(total), &[a], rule)
    }

    pub fn reshape(&mut self, a: &Var, dims: impl Into<Vec<usize>>) -> Result<Var> {
        let out = a.value().reshape(dims)?;
        self.record(out, &[a], ReshapeRule)
    }

    /// The element at flat `index`, as a scalar.
    pub fn pick(&mut self, a: &Var, index: usize) -> Result<Var> {
        let len = a.value().numel();
        if index >= len {
            return Err(Error::arg(
                "index",
                format!("{index} out of range for tensor of {len} elements"),
            ));
        }
        let out = Tensor::scalar(a.value().data()[index]);
        self.record(out, &[a], PickRule { len, index })
    }
}
