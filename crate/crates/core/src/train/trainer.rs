use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{fmt_opt, Metrics};
use super::sgd::{sgd_step, Grads, SgdConfig, Velocity};
use crate::error::{Error, Result};
use crate::model::{FusionVariant, StcNet};
use crate::nn::{softmax_cross_entropy, Mode};
use crate::rng::derive_seed;
use crate::tensor::{Tape, Tensor};
use crate::video::{
    augment, residual_input, sample_frames, split_key, AugmentSpec, Clip, ClipDataset, Label, ResidualSpec, SampleMode,
    SamplerSpec,
};

/// How clips become network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preprocess {
    pub sampler: SamplerSpec,
    pub residual: ResidualSpec,
    /// Training-time augmentation; `None` trains on the raw clips.
    pub augment: Option<AugmentSpec>,
    /// Draw a random frame per segment during training instead of the centre.
    pub random_sampling: bool,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            sampler: SamplerSpec::default(),
            residual: ResidualSpec::default(),
            augment: Some(AugmentSpec::default()),
            random_sampling: true,
        }
    }
}

impl Preprocess {
    pub fn validate(&self) -> Result<()> {
        if self.sampler.n_segments == 0 {
            return Err(Error::config("n_segments", "must be positive"));
        }
        self.residual.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// `[T, 3, R, R]` RGB and residual inputs for one clip.
pub fn clip_inputs(
    clip: &Clip,
    sampler: SamplerSpec,
    mode: SampleMode,
    residual: &ResidualSpec,
) -> Result<(Tensor, Tensor)> {
    let idx = sample_frames(clip.len(), sampler, mode)?;
    Ok((clip.rgb_tensor(&idx)?, residual_input(clip, &idx, residual)?))
}

/// Concatenate tensors along the first axis.
pub fn concat(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::arg("parts", "nothing to concatenate"))?;
    let tail = &first.dims()[1..];
    let mut data = Vec::with_capacity(parts.iter().map(Tensor::numel).sum());
    let mut n = 0;
    for p in parts {
        if &p.dims()[1..] != tail {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: first.shape().clone(),
                right: p.shape().clone(),
            });
        }
        n += p.dims()[0];
        data.extend_from_slice(p.data());
    }
    let mut dims = vec![n];
    dims.extend_from_slice(tail);
    Tensor::new(dims, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub eval_fscore: Option<f64>,
}

pub struct TrainState {
    pub model: StcNet,
    pub velocity: Velocity,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Steps rejected for non-finite gradients.
    pub rejected_steps: usize,
}

impl TrainState {
    pub fn new(model: StcNet) -> Self {
        TrainState {
            velocity: Velocity::new(&model.store),
            model,
            epoch: 0,
            history: Vec::new(),
            rejected_steps: 0,
        }
    }

    /// `epoch,loss,eval_fscore` lines, one per finished epoch.
    pub fn log(&self) -> String {
        let mut out = String::from("epoch,loss,eval_fscore\n");
        for r in &self.history {
            out.push_str(&format!("{},{:.6},{}\n", r.epoch, r.loss, fmt_opt(r.eval_fscore)));
        }
        out
    }
}

fn prepare(clip: &Clip, index: usize, epoch: usize, pre: &Preprocess, seed: u64) -> Result<Option<(Tensor, Tensor)>> {
    let n = pre.sampler.n_segments;
    if clip.len() < n {
        log::warn!("skipping {}: {} frames < {n} segments", clip.source_id, clip.len());
        return Ok(None);
    }
    let clip_seed = derive_seed(seed, &[epoch as u64, index as u64]);
    let augmented;
    let clip = match &pre.augment {
        Some(spec) => {
            augmented = augment(clip, &spec.with_seed(derive_seed(clip_seed, &[1])))?;
            &augmented
        }
        None => clip,
    };
    let mode = if pre.random_sampling {
        SampleMode::Random {
            seed: derive_seed(clip_seed, &[2]),
        }
    } else {
        SampleMode::Center
    };
    clip_inputs(clip, pre.sampler, mode, &pre.residual).map(Some)
}

fn prepare_batch(
    ds: &ClipDataset,
    batch: &[usize],
    epoch: usize,
    pre: &Preprocess,
    seed: u64,
) -> Result<Vec<(Tensor, Tensor, usize)>> {
    let one = |&i: &usize| -> Result<Option<(Tensor, Tensor, usize)>> {
        let clip = &ds.clips[i];
        Ok(prepare(clip, i, epoch, pre, seed)?.map(|(r, s)| (r, s, clip.label.index())))
    };
    #[cfg(feature = "parallel")]
    let prepared: Vec<_> = {
        use rayon::prelude::*;
        batch.par_iter().map(one).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let prepared: Vec<_> = batch.iter().map(one).collect::<Result<Vec<_>>>()?;
    Ok(prepared.into_iter().flatten().collect())
}

/// One pass over `ds` in a seeded order. Returns the mean per-clip loss of
/// the accepted steps (NaN if every step diverged).
pub fn train_epoch(state: &mut TrainState, ds: &ClipDataset, pre: &Preprocess, cfg: &SgdConfig) -> Result<f64> {
    cfg.validate()?;
    pre.validate()?;
    if ds.is_empty() {
        return Err(Error::arg("dataset", "training set is empty"));
    }
    let epoch = state.epoch;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut crate::rng::stream(cfg.seed, &[0x0de7, epoch as u64]));
    let t = state.model.config.n_frames;
    if t != pre.sampler.n_segments {
        return Err(Error::config(
            "n_segments",
            format!(
                "sampler draws {} frames but the model expects {t}",
                pre.sampler.n_segments
            ),
        ));
    }
    let (mut loss_sum, mut seen) = (0.0, 0usize);
    for batch in order.chunks(cfg.batch_size) {
        let items = prepare_batch(ds, batch, epoch, pre, cfg.seed)?;
        if items.is_empty() {
            continue;
        }
        let rgb = concat(&items.iter().map(|x| x.0.clone()).collect::<Vec<_>>())?;
        let res = concat(&items.iter().map(|x| x.1.clone()).collect::<Vec<_>>())?;
        let labels: Vec<usize> = items.iter().map(|x| x.2).collect();
        let mut tape = Tape::new();
        let fwd = state.model.forward(&mut tape, Mode::Train, true, &rgb, &res)?;
        let loss = softmax_cross_entropy(&mut tape, &fwd.logits, &labels)?;
        let loss_value = loss.value().item()?;
        if !loss_value.is_finite() {
            log::warn!("epoch {epoch}: non-finite loss, step skipped");
            state.rejected_steps += 1;
            continue;
        }
        tape.backward(&loss)?;
        let mut grads: Grads = fwd.params.iter().map(|p| tape.grad(p)).collect();
        drop(tape);
        match sgd_step(&mut state.model.store, &mut state.velocity, &mut grads, cfg) {
            Ok(()) => {
                state.model.store.apply_norm_updates(&fwd.norm_updates)?;
                loss_sum += loss_value * labels.len() as f64;
                seen += labels.len();
            }
            Err(Error::NonFinite(_)) => state.rejected_steps += 1,
            Err(e) => return Err(e),
        }
    }
    state.epoch += 1;
    Ok(if seen == 0 { f64::NAN } else { loss_sum / seen as f64 })
}

/// Metrics per split (keyed by [`split_key`]), their macro average and the
/// pooled counts over every clip.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub splits: BTreeMap<String, Metrics>,
    pub average: Metrics,
    pub pooled: Metrics,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    /// CSV rows `variant,seed,split,tp,fp,fn,tn,precision,recall,fscore`
    /// (no header) for every split, `average` and `pooled`.
    pub fn csv_rows(&self, variant: FusionVariant, seed: u64) -> String {
        let mut out = String::new();
        let rows = self
            .splits
            .iter()
            .map(|(k, m)| (k.as_str(), m))
            .chain([("average", &self.average), ("pooled", &self.pooled)]);
        for (split, m) in rows {
            out.push_str(&format!(
                "{variant},{seed},{split},{},{},{},{},{},{},{}\n",
                m.tp,
                m.fp,
                m.fn_,
                m.tn,
                fmt_opt(m.precision),
                fmt_opt(m.recall),
                fmt_opt(m.fscore)
            ));
        }
        out
    }
}

pub const METRICS_HEADER: &str = "variant,seed,split,tp,fp,fn,tn,precision,recall,fscore";

/// Clips per forward pass during evaluation.
const EVAL_BATCH: usize = 8;

/// Eval-mode logits `[n, n_classes]` for every clip, centre-sampled.
pub fn predict_logits(model: &StcNet, ds: &ClipDataset, pre: &Preprocess) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(ds.len());
    for chunk in ds.clips.chunks(EVAL_BATCH) {
        let inputs = chunk
            .iter()
            .map(|c| clip_inputs(c, pre.sampler, SampleMode::Center, &pre.residual))
            .collect::<Result<Vec<_>>>()?;
        let rgb = concat(&inputs.iter().map(|x| x.0.clone()).collect::<Vec<_>>())?;
        let res = concat(&inputs.iter().map(|x| x.1.clone()).collect::<Vec<_>>())?;
        let mut tape = Tape::inference();
        let fwd = model.forward(&mut tape, Mode::Eval, false, &rgb, &res)?;
        let k = model.config.n_classes;
        out.extend(fwd.logits.value().data().chunks_exact(k).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Index of the largest logit; ties go to the lower class.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Score class predictions against labels, per split and overall.
pub fn score(ds: &ClipDataset, predictions: Vec<usize>) -> Evaluation {
    let positive = Label::Smoke.index();
    let mut groups: BTreeMap<String, Vec<(bool, bool)>> = BTreeMap::new();
    for (clip, &p) in ds.clips.iter().zip(&predictions) {
        groups
            .entry(split_key(&clip.source_id).to_string())
            .or_default()
            .push((p == positive, clip.label == Label::Smoke));
    }
    let splits: BTreeMap<String, Metrics> = groups
        .into_iter()
        .map(|(k, v)| (k, Metrics::from_predictions(v)))
        .collect();
    let average = Metrics::macro_average(splits.values());
    let pooled = Metrics::from_predictions(
        ds.clips
            .iter()
            .zip(&predictions)
            .map(|(c, &p)| (p == positive, c.label == Label::Smoke)),
    );
    Evaluation {
        splits,
        average,
        pooled,
        predictions,
    }
}

/// Evaluate without augmentation, with centre sampling and running BN
/// statistics. The model is not modified.
pub fn evaluate(model: &StcNet, ds: &ClipDataset, pre: &Preprocess) -> Result<Evaluation> {
    let preds = predict_logits(model, ds, pre)?.iter().map(|l| argmax(l)).collect();
    Ok(score(ds, preds))
}

/// Train for `cfg.epochs` epochs, evaluating on `eval` after each one when given.
pub fn fit(
    model: StcNet,
    train: &ClipDataset,
    eval: Option<&ClipDataset>,
    pre: &Preprocess,
    cfg: &SgdConfig,
) -> Result<TrainState> {
    let mut state = TrainState::new(model);
    for _ in 0..cfg.epochs {
        let loss = train_epoch(&mut state, train, pre, cfg)?;
        let eval_fscore = match eval {
            Some(ds) => evaluate(&state.model, ds, pre)?.pooled.fscore,
            None => None,
        };
        log::info!("epoch {} loss {loss:.4} eval F {}", state.epoch, fmt_opt(eval_fscore));
        state.history.push(EpochRecord {
            epoch: state.epoch,
            loss,
            eval_fscore,
        });
    }
    Ok(state)
}
