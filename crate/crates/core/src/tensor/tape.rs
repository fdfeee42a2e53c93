use std::sync::atomic::{AtomicU64, Ordering};

use super::{Shape, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Gradient rule of one recorded op.
///
/// `backward` receives the upstream gradient (same length as the op output)
/// and returns one gradient per input, in input order. Entries for inputs
/// whose `needs[i]` is false may be `None`.
pub trait Backward {
    fn name(&self) -> &'static str;
    fn backward(&self, grad_out: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct NodeRef {
    tape: u64,
    index: usize,
}

/// Handle to a value flowing through a tape.
///
/// A var without a node is a constant: gradients stop there.
#[derive(Clone, Debug)]
pub struct Var {
    value: Tensor,
    node: Option<NodeRef>,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &Shape {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Same value, cut out of the graph.
    pub fn detach(&self) -> Var {
        Var {
            value: self.value.clone(),
            node: None,
        }
    }

    /// True when both handles refer to the same recorded node.
    pub fn same_node(&self, other: &Var) -> bool {
        self.node.is_some() && self.node == other.node
    }
}

struct Node {
    inputs: Vec<Option<usize>>,
    rule: Option<Box<dyn Backward>>,
    len: usize,
}

/// Append-only record of differentiable ops, confined to one thread.
pub struct Tape {
    id: u64,
    recording: bool,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    branches: Option<u64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            recording: true,
            nodes: Vec::new(),
            grads: Vec::new(),
            branches: None,
        }
    }

    /// A tape that records nothing; every op yields a constant.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Tape::new()
        }
    }

    /// An inference tape that also digests every branch decision taken by
    /// piecewise ops (ReLU masks, max-pool winners).
    pub fn branch_tracking() -> Self {
        Tape {
            branches: Some(0xcbf2_9ce4_8422_2325),
            ..Tape::inference()
        }
    }

    pub(crate) fn tracks_branches(&self) -> bool {
        self.branches.is_some()
    }

    pub(crate) fn note_branches(&mut self, decisions: impl Iterator<Item = u64>) {
        if let Some(h) = self.branches.as_mut() {
            for d in decisions {
                *h = (*h ^ d).wrapping_mul(0x0100_0000_01b3);
            }
        }
    }

    /// Digest of the branch decisions seen so far, if tracking.
    pub fn branch_digest(&self) -> Option<u64> {
        self.branches
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives gradients.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        if !self.recording {
            return Var { value, node: None };
        }
        let node = self.push(Node {
            inputs: Vec::new(),
            rule: None,
            len: value.numel(),
        });
        Var {
            value,
            node: Some(node),
        }
    }

    pub fn constant(&self, value: Tensor) -> Var {
        Var { value, node: None }
    }

    /// Re-enter an existing value as a gradient-receiving leaf, so that
    /// downstream ops are recorded even if it was computed from constants.
    pub fn watch(&mut self, var: &Var) -> Var {
        if var.node.is_some() {
            return var.clone();
        }
        self.leaf(var.value.clone())
    }

    fn push(&mut self, node: Node) -> NodeRef {
        self.nodes.push(node);
        self.grads.push(None);
        NodeRef {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn resolve(&self, var: &Var) -> Result<Option<usize>> {
        match var.node {
            None => Ok(None),
            Some(r) if r.tape == self.id => Ok(Some(r.index)),
            Some(_) => Err(Error::Detached("input was recorded on a different tape")),
        }
    }

    /// Record `output = op(inputs)` with its gradient rule.
    ///
    /// Nothing is recorded when the tape is not recording or no input needs a
    /// gradient; the result is then a constant.
    pub fn record(&mut self, output: Tensor, inputs: &[&Var], rule: impl Backward + 'static) -> Result<Var> {
        let resolved = inputs.iter().map(|v| self.resolve(v)).collect::<Result<Vec<_>>>()?;
        if !self.recording || resolved.iter().all(Option::is_none) {
            return Ok(Var {
                value: output,
                node: None,
            });
        }
        let node = self.push(Node {
            inputs: resolved,
            rule: Some(Box::new(rule)),
            len: output.numel(),
        });
        Ok(Var {
            value: output,
            node: Some(node),
        })
    }

    /// Backpropagate from a scalar loss, accumulating into every node's
    /// gradient buffer.
    pub fn backward(&mut self, loss: &Var) -> Result<()> {
        if !loss.value.shape().is_scalar() {
            return Err(Error::NonScalarLoss(loss.value.shape().clone()));
        }
        let root = self
            .resolve(loss)?
            .ok_or(Error::Detached("loss is not connected to any recorded leaf"))?;
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        pending[root] = Some(vec![1.0]);
        for index in (0..=root).rev() {
            let Some(grad) = pending[index].take() else {
                continue;
            };
            let node = &self.nodes[index];
            if let Some(rule) = &node.rule {
                let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
                let input_grads = rule.backward(&grad, &needs);
                debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", rule.name());
                for (slot, g) in node.inputs.iter().zip(input_grads) {
                    if let (Some(i), Some(g)) = (slot, g) {
                        debug_assert_eq!(g.len(), self.nodes[*i].len, "{}", rule.name());
                        accumulate(&mut pending[*i], g);
                    }
                }
            }
            accumulate(&mut self.grads[index], grad);
        }
        Ok(())
    }

    /// Accumulated gradient of a recorded var, if backward reached it.
    pub fn grad(&self, var: &Var) -> Option<Tensor> {
        let index = self.resolve(var).ok()??;
        let g = self.grads[index].as_ref()?;
        Tensor::from_shape(var.shape().clone(), g.clone()).ok()
    }

    /// Gradient of `var`, or zeros when the loss does not depend on it.
    pub fn grad_or_zeros(&self, var: &Var) -> Tensor {
        self.grad(var).unwrap_or_else(|| {
            Tensor::from_shape(var.shape().clone(), vec![0.0; var.value.numel()]).expect("shape already validated")
        })
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}
