//! Flat binary tensor records.
//!
//! Layout: `"STCT"`, `u8` rank, `rank × u32` dims, then `f64` payload. All
//! little-endian.

use super::{Shape, Tensor, MAX_RANK};
use crate::codec::ByteReader;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &str = "STCT";

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) -> Result<()> {
    out.extend_from_slice(TENSOR_MAGIC.as_bytes());
    out.push(t.shape().rank() as u8);
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| Error::DimensionOverflow("tensor dim"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.reserve(t.numel() * 8);
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn tensor_to_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_tensor(t, &mut out)?;
    Ok(out)
}

pub(crate) fn decode_tensor(r: &mut ByteReader<'_>) -> Result<Tensor> {
    r.magic(TENSOR_MAGIC)?;
    let rank = r.u8("tensor rank")? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Malformed(format!("tensor rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u32("tensor dims")? as usize);
    }
    let shape = Shape::new(dims).map_err(|e| Error::Malformed(e.to_string()))?;
    let bytes = shape
        .numel()
        .checked_mul(8)
        .ok_or(Error::DimensionOverflow("tensor payload"))?;
    let payload = r.take(bytes, "tensor payload")?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Tensor::from_shape(shape, data)
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let mut r = ByteReader::new(bytes);
    let t = decode_tensor(&mut r)?;
    if !r.is_empty() {
        return Err(Error::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    Ok(t)
}
