use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{BackboneConfig, FusionVariant};
use super::network::{build_model, StcNet};
use crate::codec::ByteReader;
use crate::error::{Error, Result};
use crate::nn::params::{decode_records, encode_records};

pub const CHECKPOINT_MAGIC: &str = "STCK";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: BackboneConfig,
    pub variant: FusionVariant,
    pub seed: u64,
    pub epoch: usize,
}

pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: StcNet,
}

/// `STCK`, u32 header length, JSON header, then the weight records.
pub fn save_checkpoint(model: &StcNet, epoch: usize) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        config: model.config.clone(),
        variant: model.variant,
        seed: model.seed,
        epoch,
    };
    let json = serde_json::to_vec(&header).map_err(|source| Error::Json {
        context: "checkpoint header".into(),
        source,
    })?;
    let mut out = CHECKPOINT_MAGIC.as_bytes().to_vec();
    let len = u32::try_from(json.len()).map_err(|_| Error::DimensionOverflow("checkpoint header"))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    encode_records(&model.store.to_records(), &mut out)?;
    Ok(out)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let len = r.u32("checkpoint header length")? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(len, "checkpoint header")?).map_err(|source| Error::Json {
            context: "checkpoint header".into(),
            source,
        })?;
    let records = decode_records(&mut r)?;
    if !r.is_empty() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes in checkpoint",
            r.remaining()
        )));
    }
    let mut model = build_model(&header.config, header.variant, header.seed)?;
    model.store.load_records(&records)?;
    Ok(Checkpoint { header, model })
}

impl Checkpoint {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        load_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(model: &StcNet, epoch: usize, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, save_checkpoint(model, epoch)?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn round_trip() {
        let cfg = BackboneConfig {
            input_resolution: 32,
            ..BackboneConfig::micro()
        };
        let mut m = build_model(&cfg, FusionVariant::B, 3).unwrap();
        let id = m.store.find("head.out.bias").unwrap();
        m.store
            .set(id, Tensor::new(vec![2], vec![0.25, -1.5]).unwrap())
            .unwrap();
        let bytes = save_checkpoint(&m, 7).unwrap();
        let back = load_checkpoint(&bytes).unwrap();
        assert_eq!(back.header.epoch, 7);
        assert_eq!(back.header.variant, FusionVariant::B);
        assert_eq!(save_checkpoint(&back.model, 7).unwrap(), bytes);
        assert!(matches!(
            load_checkpoint(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(load_checkpoint(b"STCV1xxxx"), Err(Error::BadMagic { .. })));
        let mut garbled = bytes.clone();
        garbled[9] = b'!';
        assert!(matches!(load_checkpoint(&garbled), Err(Error::Json { .. })));
    }
}
