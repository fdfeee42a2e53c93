use std::path::{Path, PathBuf};

use super::metrics::fmt_opt;
use super::sgd::SgdConfig;
use super::trainer::{evaluate, fit, Evaluation, Preprocess, METRICS_HEADER};
use crate::error::{Error, Result};
use crate::model::{build_model, BackboneConfig, Checkpoint, FusionVariant};
use crate::video::ClipDataset;

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub variant: FusionVariant,
    pub seed: u64,
    pub final_loss: f64,
    /// True when training never produced a finite epoch loss at the end.
    pub diverged: bool,
    pub evaluation: Evaluation,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
}

/// Mean and sample standard deviation; the deviation needs two values.
pub fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

impl AblationReport {
    /// Pooled test F-scores of one variant, one per seed (undefined ones skipped).
    pub fn fscores(&self, variant: FusionVariant) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.variant == variant)
            .filter_map(|r| r.evaluation.pooled.fscore)
            .collect()
    }

    pub fn mean_fscore(&self, variant: FusionVariant) -> Option<f64> {
        mean_std(&self.fscores(variant)).0
    }

    /// Every run's per-split rows under the metrics header.
    pub fn metrics_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.runs {
            out.push_str(&r.evaluation.csv_rows(r.variant, r.seed));
        }
        out
    }

    /// `variant,runs,diverged,mean_fscore,std_fscore` over seeds.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("variant,runs,diverged,mean_fscore,std_fscore\n");
        let mut variants: Vec<FusionVariant> = Vec::new();
        for r in &self.runs {
            if !variants.contains(&r.variant) {
                variants.push(r.variant);
            }
        }
        for v in variants {
            let runs: Vec<_> = self.runs.iter().filter(|r| r.variant == v).collect();
            let diverged = runs.iter().filter(|r| r.diverged).count();
            let (mean, std) = mean_std(&self.fscores(v));
            out.push_str(&format!(
                "{v},{},{diverged},{},{}\n",
                runs.len(),
                fmt_opt(mean),
                fmt_opt(std)
            ));
        }
        out
    }
}

/// Train and evaluate every variant under every seed. The seed fixes both the
/// initial weights and the data order, so variants see identical batches.
/// Checkpoints are written to `out_dir` as `{variant}_seed{seed}.ckpt` when given.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    config: &BackboneConfig,
    train: &ClipDataset,
    test: &ClipDataset,
    variants: &[FusionVariant],
    seeds: &[u64],
    pre: &Preprocess,
    sgd: &SgdConfig,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::arg("seeds", "need at least one seed"));
    }
    if variants.is_empty() {
        return Err(Error::arg("variants", "need at least one variant"));
    }
    let mut report = AblationReport::default();
    for &variant in variants {
        for &seed in seeds {
            let model = build_model(config, variant, seed)?;
            let cfg = SgdConfig { seed, ..sgd.clone() };
            let state = fit(model, train, None, pre, &cfg)?;
            let final_loss = state.history.last().map_or(f64::NAN, |h| h.loss);
            let evaluation = evaluate(&state.model, test, pre)?;
            log::info!(
                "{variant} seed {seed}: loss {final_loss:.4}, F {}",
                fmt_opt(evaluation.pooled.fscore)
            );
            let checkpoint = match out_dir {
                Some(dir) => {
                    let path = dir.join(format!("{variant}_seed{seed}.ckpt"));
                    Checkpoint::write(&state.model, state.epoch, &path)?;
                    Some(path)
                }
                None => None,
            };
            report.runs.push(AblationRun {
                variant,
                seed,
                final_loss,
                diverged: !final_loss.is_finite(),
                evaluation,
                checkpoint,
            });
        }
    }
    Ok(report)
}
