use crate::error::{Error, Result};
use crate::tensor::gemm::Layout;
use crate::tensor::{gemm, Backward, Tape, Tensor, Var};

struct LinearRule {
    x: Tensor,
    w: Tensor,
    n: usize,
    din: usize,
    dout: usize,
}

impl Backward for LinearRule {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn backward(&self, g: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let (n, din, dout) = (self.n, self.din, self.dout);
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; n * din];
            gemm(
                n,
                dout,
                din,
                g,
                Layout::row_major(dout),
                self.w.data(),
                Layout::row_major(din),
                0.0,
                &mut dx,
            );
            dx
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![0.0; dout * din];
            gemm(
                dout,
                n,
                din,
                g,
                Layout::transposed(dout),
                self.x.data(),
                Layout::row_major(din),
                0.0,
                &mut dw,
            );
            dw
        });
        let db = needs[2].then(|| (0..dout).map(|o| (0..n).map(|s| g[s * dout + o]).sum()).collect());
        vec![dx, dw, db]
    }
}

/// `x: [N, Din]`, `weight: [Dout, Din]`, `bias: [Dout]` -> `[N, Dout]`.
pub fn linear(tape: &mut Tape, x: &Var, weight: &Var, bias: &Var) -> Result<Var> {
    let (n, din) = match x.shape().dims() {
        &[n, d] => (n, d),
        _ => {
            return Err(Error::InvalidShape(format!(
                "linear expects [N, Din], got {}",
                x.shape()
            )))
        }
    };
    let dout = match weight.shape().dims() {
        &[o, i] if i == din => o,
        _ => {
            return Err(Error::ShapeMismatch {
                op: "linear",
                left: x.shape().clone(),
                right: weight.shape().clone(),
            })
        }
    };
    if bias.shape().dims() != [dout] {
        return Err(Error::ShapeMismatch {
            op: "linear bias",
            left: weight.shape().clone(),
            right: bias.shape().clone(),
        });
    }
    let mut out = vec![0.0; n * dout];
    for row in out.chunks_exact_mut(dout) {
        row.copy_from_slice(bias.value().data());
    }
    gemm(
        n,
        din,
        dout,
        x.value().data(),
        Layout::row_major(din),
        weight.value().data(),
        Layout::transposed(din),
        1.0,
        &mut out,
    );
    let out = Tensor::new(vec![n, dout], out)?;
    let rule = LinearRule {
        x: x.value().clone(),
        w: weight.value().clone(),
        n,
        din,
        dout,
    };
    tape.record(out, &[x, weight, bias], rule)
}
