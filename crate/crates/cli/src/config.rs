use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stcnet::model::{BackboneConfig, FusionVariant};
use stcnet::train::{Preprocess, SgdConfig};
use stcnet::video::{AugmentSpec, ClipDataset, ResidualSpec, SamplerSpec};

use crate::CliError;

fn micro() -> BackboneConfig {
    BackboneConfig::micro()
}

fn full_variant() -> FusionVariant {
    FusionVariant::Full
}

fn default_augment() -> Option<AugmentSpec> {
    Some(AugmentSpec::default())
}

fn yes() -> bool {
    true
}

/// One JSON document describing a training run. `sgd.seed` seeds both the
/// initial weights and the data order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "micro")]
    pub backbone: BackboneConfig,
    #[serde(default = "full_variant")]
    pub variant: FusionVariant,
    #[serde(default)]
    pub sgd: SgdConfig,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub residual: ResidualSpec,
    /// `null` disables augmentation.
    #[serde(default = "default_augment")]
    pub augment: Option<AugmentSpec>,
    #[serde(default = "yes")]
    pub random_sampling: bool,
    /// Clip container used for training; relative paths resolve against the
    /// config file's directory.
    pub train_data: PathBuf,
    #[serde(default)]
    pub test_data: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| CliError::Invalid {
            field: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.train_data = base.join(&cfg.train_data);
        cfg.test_data = cfg.test_data.map(|p| base.join(p));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.backbone.validate()?;
        self.sgd.validate()?;
        self.preprocess().validate()?;
        if self.sampler.n_segments != self.backbone.n_frames {
            return Err(CliError::invalid(
                "sampler.n_segments",
                format!(
                    "{} segments but the backbone takes {} frames",
                    self.sampler.n_segments, self.backbone.n_frames
                ),
            ));
        }
        if let Some(a) = &self.augment {
            if a.resolution != self.backbone.input_resolution {
                return Err(CliError::invalid(
                    "augment.resolution",
                    format!(
                        "{} differs from backbone input {}",
                        a.resolution, self.backbone.input_resolution
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            sampler: self.sampler,
            residual: self.residual,
            augment: self.augment.clone(),
            random_sampling: self.random_sampling,
        }
    }

    pub fn train_set(&self) -> Result<ClipDataset, CliError> {
        load_clips(&self.train_data, self.backbone.input_resolution)
    }

    pub fn test_set(&self) -> Result<Option<ClipDataset>, CliError> {
        self.test_data
            .as_ref()
            .map(|p| load_clips(p, self.backbone.input_resolution))
            .transpose()
    }
}

/// Load a clip container and check every clip is `r x r`.
pub fn load_clips(path: &Path, r: usize) -> Result<ClipDataset, CliError> {
    let ds = ClipDataset::load(path)?;
    if ds.is_empty() {
        return Err(CliError::invalid(path.display().to_string(), "contains no clips"));
    }
    if let Some(c) = ds.clips.iter().find(|c| c.height() != r || c.width() != r) {
        return Err(CliError::invalid(
            path.display().to_string(),
            format!(
                "clip {} is {}x{}, the model takes {r}x{r}",
                c.source_id,
                c.height(),
                c.width()
            ),
        ));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_takes_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"train_data": "train.clips"}"#).unwrap();
        assert_eq!(cfg.backbone, BackboneConfig::micro());
        assert_eq!(cfg.variant, FusionVariant::Full);
        assert!(cfg.augment.is_some());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"train_data": "x", "learning_rate": 1}"#).unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
        let nested = r#"{"train_data": "x", "sgd": {"lr": 0.1, "nesterov": true}}"#;
        assert!(serde_json::from_str::<RunConfig>(nested).is_err());
    }

    #[test]
    fn segment_count_must_match_frames() {
        let cfg: RunConfig = serde_json::from_str(r#"{"train_data": "x", "sampler": {"n_segments": 4}}"#).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("n_segments"));
    }
}
