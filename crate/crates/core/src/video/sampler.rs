use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub n_segments: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec { n_segments: 8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Center,
    Random { seed: u64 },
}

/// Split `len` frames into `n_segments` equal subsections and pick one frame
/// from each: segment `k` covers `[floor(k L / N), floor((k + 1) L / N))`.
pub fn sample_frames(len: usize, spec: SamplerSpec, mode: SampleMode) -> Result<Vec<usize>> {
    let n = spec.n_segments;
    if n == 0 {
        return Err(Error::arg("n_segments", "must be positive"));
    }
    if len < n {
        return Err(Error::arg(
            "n_segments",
            format!("{n} segments need at least {n} frames, clip has {len}"),
        ));
    }
    let mut rng = match mode {
        SampleMode::Random { seed } => Some(crate::rng::stream(seed, &[len as u64, n as u64])),
        SampleMode::Center => None,
    };
    Ok((0..n)
        .map(|k| {
            let start = k * len / n;
            let end = (k + 1) * len / n;
            match rng.as_mut() {
                Some(r) => r.random_range(start..end),
                None => start + (end - start) / 2,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let spec = SamplerSpec { n_segments: 8 };
        assert_eq!(
            sample_frames(8, spec, SampleMode::Center).unwrap(),
            (0..8).collect::<Vec<_>>()
        );
        assert!(sample_frames(7, spec, SampleMode::Center).is_err());
    }

    #[test]
    fn eighty_frames_enumerated() {
        // enumerate each 10-frame segment and take its midpoint
        let want: Vec<usize> = (0..8)
            .map(|k| {
                let seg: Vec<usize> = (0..80).filter(|i| i / 10 == k).collect();
                seg[seg.len() / 2]
            })
            .collect();
        assert_eq!(want, vec![5, 15, 25, 35, 45, 55, 65, 75]);
        let got = sample_frames(80, SamplerSpec { n_segments: 8 }, SampleMode::Center).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn exhaustive_one_per_segment() {
        for n in 1..=9 {
            let spec = SamplerSpec { n_segments: n };
            for len in n..=200 {
                for mode in [SampleMode::Center, SampleMode::Random { seed: len as u64 }] {
                    let idx = sample_frames(len, spec, mode).unwrap();
                    assert_eq!(idx.len(), n);
                    assert!(idx.windows(2).all(|w| w[0] < w[1]));
                    for (k, &i) in idx.iter().enumerate() {
                        assert!(i >= k * len / n && i < (k + 1) * len / n);
                    }
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn strictly_increasing_up_to_ten_thousand(len in 8usize..=10_000, seed in 0u64..1000) {
            let spec = SamplerSpec::default();
            for mode in [SampleMode::Center, SampleMode::Random { seed }] {
                let idx = sample_frames(len, spec, mode).unwrap();
                proptest::prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                proptest::prop_assert!(*idx.last().unwrap() < len);
            }
        }
    }
}
