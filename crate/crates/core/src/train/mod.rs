//! SGD training, F-score metrics, split-wise evaluation and the variant
//! comparison runner.

mod ablation;
mod metrics;
mod sgd;
mod trainer;

pub use ablation::{mean_std, run_ablation, AblationReport, AblationRun};
pub use metrics::{fmt_opt, fscore, Metrics};
pub use sgd::{sgd_step, Grads, SgdConfig, Velocity};
pub use trainer::{
    argmax, clip_inputs, concat, evaluate, fit, predict_logits, score, train_epoch, EpochRecord, Evaluation,
    Preprocess, TrainState, METRICS_HEADER,
};
