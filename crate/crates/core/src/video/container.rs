use super::{Clip, ClipDataset, Label};
use crate::codec::{put_string, ByteReader};
use crate::error::{Error, Result};

pub const CLIP_MAGIC: &str = "STCV1";
/// Largest raw payload accepted for one clip.
pub const MAX_CLIP_BYTES: usize = 1 << 30;

fn dim(v: usize, what: &'static str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::DimensionOverflow(what))
}

/// Serialize a dataset as `STCV1` followed by the clip records.
pub fn clip_encode(ds: &ClipDataset) -> Result<Vec<u8>> {
    let payload: usize = ds.clips.iter().map(|c| c.raw().len() + c.source_id.len() + 19).sum();
    let mut out = Vec::with_capacity(payload + 9);
    out.extend_from_slice(CLIP_MAGIC.as_bytes());
    let count = u32::try_from(ds.clips.len()).map_err(|_| Error::DimensionOverflow("clip count"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for c in &ds.clips {
        for (v, what) in [
            (c.len(), "frame count"),
            (c.height(), "frame height"),
            (c.width(), "frame width"),
        ] {
            out.extend_from_slice(&dim(v, what)?.to_le_bytes());
        }
        out.push(c.label as u8);
        put_string(&mut out, &c.source_id)?;
        out.extend_from_slice(&c.fps.to_le_bytes());
        out.extend_from_slice(c.raw());
    }
    Ok(out)
}

pub fn clip_decode(bytes: &[u8]) -> Result<ClipDataset> {
    let mut r = ByteReader::new(bytes);
    r.magic(CLIP_MAGIC)?;
    let count = r.u32("clip count")? as usize;
    let mut clips = Vec::with_capacity(count.min(r.remaining() / 20));
    for i in 0..count {
        let t = r.u16("frame count")? as usize;
        let h = r.u16("frame height")? as usize;
        let w = r.u16("frame width")? as usize;
        let label = Label::from_index(r.u8("label")?)?;
        let source_id = r.string("source id")?;
        let fps = r.f32("fps")?;
        if t < 2 || h == 0 || w == 0 {
            return Err(Error::Malformed(format!("clip {i} has invalid size {t}x{h}x{w}")));
        }
        let n = t
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .and_then(|v| v.checked_mul(3))
            .filter(|&n| n <= MAX_CLIP_BYTES)
            .ok_or(Error::DimensionOverflow("clip payload"))?;
        let frames = r.take(n, "clip frames")?.to_vec();
        clips.push(Clip::new(frames, (t, h, w), label, source_id, fps)?);
    }
    if !r.is_empty() {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after the last clip",
            r.remaining()
        )));
    }
    Ok(ClipDataset { clips })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(specs: &[(usize, usize, usize, u8)]) -> ClipDataset {
        let clips = specs
            .iter()
            .enumerate()
            .map(|(i, &(t, h, w, fill))| {
                let data = (0..t * h * w * 3).map(|k| (k as u8).wrapping_mul(fill)).collect();
                let label = if i % 2 == 0 { Label::Smoke } else { Label::NoSmoke };
                Clip::new(data, (t, h, w), label, format!("s{i}/clip"), 25.0 + i as f32).unwrap()
            })
            .collect();
        ClipDataset { clips }
    }

    #[test]
    fn layout() {
        let ds = dataset(&[(2, 1, 1, 1)]);
        let bytes = clip_encode(&ds).unwrap();
        let mut want = b"STCV1".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&[2, 0, 1, 0, 1, 0, 1]);
        want.extend_from_slice(&7u32.to_le_bytes());
        want.extend_from_slice(b"s0/clip");
        want.extend_from_slice(&25.0f32.to_le_bytes());
        want.extend_from_slice(&[0, 1, 2, 3, 4, 5]);
        assert_eq!(bytes, want);
    }

    #[test]
    fn distinct_errors() {
        let bytes = clip_encode(&dataset(&[(3, 4, 5, 7), (2, 2, 2, 3)])).unwrap();
        for cut in [3, 9, 20, bytes.len() - 1] {
            assert!(
                matches!(clip_decode(&bytes[..cut]), Err(Error::Truncated { .. })),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(clip_decode(&bad), Err(Error::BadMagic { .. })));
        let mut huge = b"STCV1".to_vec();
        huge.extend_from_slice(&1u32.to_le_bytes());
        huge.extend_from_slice(&[0xff; 6]);
        huge.push(1);
        huge.extend_from_slice(&0u32.to_le_bytes());
        huge.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(matches!(clip_decode(&huge), Err(Error::DimensionOverflow(_))));
        let mut label = bytes.clone();
        label[15] = 9;
        assert!(matches!(clip_decode(&label), Err(Error::Malformed(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(clip_decode(&extra).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(specs in proptest::collection::vec((2usize..5, 1usize..6, 1usize..6, any::<u8>()), 0..5)) {
            let ds = dataset(&specs);
            let bytes = clip_encode(&ds).unwrap();
            let back = clip_decode(&bytes).unwrap();
            prop_assert_eq!(&back, &ds);
            prop_assert_eq!(clip_encode(&back).unwrap(), bytes);
        }
    }
}
