use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the fuse and cls heads.
pub const HEAD_CHANNELS: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub stage_blocks: [usize; 4],
    pub stage_out_channels: [usize; 4],
    pub cardinality: usize,
    pub se_ratio: usize,
    pub input_resolution: usize,
    pub n_frames: usize,
    pub n_classes: usize,
}

impl BackboneConfig {
    /// SE-ResNeXt-50 (32x4d) paths at 224x224 over 8 frames.
    pub fn full() -> Self {
        BackboneConfig {
            stage_blocks: [3, 4, 6, 3],
            stage_out_channels: [256, 512, 1024, 2048],
            cardinality: 32,
            se_ratio: 16,
            input_resolution: 224,
            n_frames: 8,
            n_classes: 2,
        }
    }

    /// Small configuration that trains on a CPU in minutes.
    pub fn micro() -> Self {
        BackboneConfig {
            stage_blocks: [1, 1, 1, 1],
            stage_out_channels: [32, 64, 128, 256],
            cardinality: 4,
            se_ratio: 4,
            input_resolution: 56,
            n_frames: 8,
            n_classes: 2,
        }
    }

    pub fn stem_channels(&self) -> usize {
        self.stage_out_channels[0] / 4
    }

    pub fn bottleneck_width(&self, stage: usize) -> usize {
        self.stage_out_channels[stage] / 2
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.stage_blocks.iter().position(|&b| b == 0) {
            return Err(Error::config("stage_blocks", format!("stage {} has no blocks", i + 1)));
        }
        if self.cardinality == 0 {
            return Err(Error::config("cardinality", "must be positive"));
        }
        if self.se_ratio == 0 {
            return Err(Error::config("se_ratio", "must be positive"));
        }
        for (i, &c) in self.stage_out_channels.iter().enumerate() {
            if c < 8 || c % 4 != 0 {
                return Err(Error::config(
                    "stage_out_channels",
                    format!("stage {} width {c} must be a multiple of 4 and at least 8", i + 1),
                ));
            }
            let mid = c / 2;
            if mid % self.cardinality != 0 {
                return Err(Error::config(
                    "cardinality",
                    format!(
                        "{} does not divide bottleneck width {mid} of stage {}",
                        self.cardinality,
                        i + 1
                    ),
                ));
            }
            if c % self.se_ratio != 0 {
                return Err(Error::config(
                    "se_ratio",
                    format!("{} does not divide stage {} width {c}", self.se_ratio, i + 1),
                ));
            }
        }
        validate_resolution(self.input_resolution)?;
        if self.n_frames == 0 {
            return Err(Error::config("n_frames", "must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::config("n_classes", "need at least two classes"));
        }
        Ok(())
    }

    /// Spatial side of each tap for input side `r`.
    pub fn ladder(r: usize) -> [(&'static str, usize); 6] {
        let down = |x: usize| x.div_ceil(2);
        let conv1 = down(r);
        let pool1 = down(conv1);
        let res2 = down(pool1);
        let res3 = down(res2);
        [
            ("conv1", conv1),
            ("pool1", pool1),
            ("res1", pool1),
            ("res2", res2),
            ("res3", res3),
            ("res4", down(res3)),
        ]
    }
}

/// Input side lengths must be multiples of 8 (and at least 32).
pub fn validate_resolution(r: usize) -> Result<()> {
    if r < 32 || !r.is_multiple_of(8) {
        return Err(Error::config(
            "input_resolution",
            format!("{r} must be a multiple of 8 and at least 32"),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    /// Bidirectional sum fusion after res1, res2 and res3.
    Full,
    /// Late fusion of the res4 outputs only.
    A,
    /// Temporal to spatial only, after res1..res3.
    B,
    /// Bidirectional fusion after res1 only.
    C,
    /// The spatial path alone with the same head.
    SpatialOnly,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 5] = [
        FusionVariant::Full,
        FusionVariant::A,
        FusionVariant::B,
        FusionVariant::C,
        FusionVariant::SpatialOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionVariant::Full => "full",
            FusionVariant::A => "a",
            FusionVariant::B => "b",
            FusionVariant::C => "c",
            FusionVariant::SpatialOnly => "spatial_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s) || format!("{v:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::arg(
                    "variant",
                    format!("unknown variant `{s}` (expected full, a, b, c or spatial_only)"),
                )
            })
    }

    pub fn has_temporal(self) -> bool {
        self != FusionVariant::SpatialOnly
    }

    /// `(temporal -> spatial, spatial -> temporal)` after stage `stage` (1-based).
    pub fn fusion_at(self, stage: usize) -> (bool, bool) {
        match (self, stage) {
            (FusionVariant::Full, 1..=3) => (true, true),
            (FusionVariant::B, 1..=3) => (true, false),
            (FusionVariant::C, 1) => (true, true),
            _ => (false, false),
        }
    }
}

impl std::fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        BackboneConfig::full().validate().unwrap();
        BackboneConfig::micro().validate().unwrap();
    }

    #[test]
    fn named_rejections() {
        let cases: [(BackboneConfig, &str); 6] = [
            (
                BackboneConfig {
                    stage_blocks: [1, 0, 1, 1],
                    ..BackboneConfig::micro()
                },
                "stage_blocks",
            ),
            (
                BackboneConfig {
                    cardinality: 3,
                    ..BackboneConfig::micro()
                },
                "cardinality",
            ),
            (
                BackboneConfig {
                    se_ratio: 5,
                    ..BackboneConfig::micro()
                },
                "se_ratio",
            ),
            (
                BackboneConfig {
                    input_resolution: 60,
                    ..BackboneConfig::micro()
                },
                "input_resolution",
            ),
            (
                BackboneConfig {
                    n_classes: 1,
                    ..BackboneConfig::micro()
                },
                "n_classes",
            ),
            (
                BackboneConfig {
                    stage_out_channels: [30, 64, 128, 256],
                    ..BackboneConfig::micro()
                },
                "stage_out_channels",
            ),
        ];
        for (cfg, field) in cases {
            match cfg.validate() {
                Err(Error::InvalidConfig { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
    }

    #[test]
    fn ladder_strides() {
        let full = BackboneConfig::ladder(224);
        assert_eq!(full.map(|(_, s)| s), [112, 56, 56, 28, 14, 7]);
        // stride 4 at res1 for the 56 pixel micro input
        assert_eq!(BackboneConfig::ladder(56)[2], ("res1", 14));
    }

    #[test]
    fn variant_table() {
        use FusionVariant::*;
        for s in 1..=4 {
            assert_eq!(Full.fusion_at(s), (s <= 3, s <= 3));
            assert_eq!(A.fusion_at(s), (false, false));
            assert_eq!(B.fusion_at(s), (s <= 3, false));
            assert_eq!(C.fusion_at(s), (s == 1, s == 1));
            assert_eq!(SpatialOnly.fusion_at(s), (false, false));
        }
        for v in FusionVariant::ALL {
            assert_eq!(FusionVariant::parse(v.name()).unwrap(), v);
        }
        assert!(FusionVariant::parse("d").is_err());
    }
}
