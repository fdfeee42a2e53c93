//! Named parameter storage and the named-tensor record format.
//!
//! Records: `u32` count, then per record a `u32`-length-prefixed UTF-8 name
//! followed by a tensor record (see [`crate::tensor::io`]).

use serde::{Deserialize, Serialize};

use super::norm::BatchStats;
use crate::codec::{put_string, ByteReader};
use crate::error::{Error, Result};
use crate::tensor::io::{decode_tensor, encode_tensor};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Conv and linear weights; subject to weight decay.
    Weight,
    Bias,
    /// Batchnorm gamma and beta.
    Norm,
    /// Batchnorm running statistics; not learnable.
    Buffer,
}

impl ParamKind {
    pub fn learnable(self) -> bool {
        self != ParamKind::Buffer
    }

    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub kind: ParamKind,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// A running-stat update produced by a train-mode batchnorm forward.
#[derive(Clone, Debug)]
pub struct NormUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub stats: BatchStats,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, kind: ParamKind) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::config(name, "duplicate parameter name"));
        }
        self.params.push(Param { name, value, kind });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.params[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set parameter",
                left: slot.value.shape().clone(),
                right: value.shape().clone(),
            });
        }
        slot.value = value;
        Ok(())
    }

    /// Number of learnable scalars (running statistics excluded).
    pub fn learnable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind.learnable())
            .map(|p| p.value.numel())
            .sum()
    }

    /// Put every parameter on `tape`: learnables as gradient leaves when
    /// `requires_grad`, everything else as constants.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if requires_grad && p.kind.learnable() {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    pub fn apply_norm_updates(&mut self, updates: &[NormUpdate]) -> Result<()> {
        for u in updates {
            let m = u.momentum;
            for (id, batch) in [(u.running_mean, &u.stats.mean), (u.running_var, &u.stats.var)] {
                let old = &self.params[id.0].value;
                let data = old
                    .data()
                    .iter()
                    .zip(batch)
                    .map(|(r, b)| (1.0 - m) * r + m * b)
                    .collect();
                let updated = Tensor::from_shape(old.shape().clone(), data)?;
                self.params[id.0].value = updated;
            }
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Overwrite values from records; names and shapes must match exactly.
    pub fn load_records(&mut self, records: &[(String, Tensor)]) -> Result<()> {
        if records.len() != self.params.len() {
            return Err(Error::Malformed(format!(
                "checkpoint holds {} tensors, model expects {}",
                records.len(),
                self.params.len()
            )));
        }
        for (p, (name, t)) in self.params.iter_mut().zip(records) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(Error::Malformed(format!(
                    "record `{name}` {} does not match parameter `{}` {}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

pub fn encode_records(records: &[(String, Tensor)], out: &mut Vec<u8>) -> Result<()> {
    let count = u32::try_from(records.len()).map_err(|_| Error::DimensionOverflow("record count"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in records {
        put_string(out, name)?;
        encode_tensor(t, out)?;
    }
    Ok(())
}

pub(crate) fn decode_records(r: &mut ByteReader<'_>) -> Result<Vec<(String, Tensor)>> {
    let count = r.u32("record count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string("record name")?;
        out.push((name, decode_tensor(r)?));
    }
    Ok(out)
}

pub fn records_to_bytes(records: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_records(records, &mut out)?;
    Ok(out)
}

pub fn records_from_bytes(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = ByteReader::new(bytes);
    let out = decode_records(&mut r)?;
    if !r.is_empty() {
        return Err(Error::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    Ok(out)
}
