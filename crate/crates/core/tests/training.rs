use stcnet::model::{build_model, BackboneConfig, Checkpoint, FusionVariant};
use stcnet::nn::ParamKind;
use stcnet::tensor::Tensor;
use stcnet::train::{
    evaluate, fit, run_ablation, score, train_epoch, Preprocess, SgdConfig, TrainState, METRICS_HEADER,
};
use stcnet::video::{synth_generate, Clip, ClipDataset, Label, SyntheticSpec};

const RES: usize = 32;

fn small_config() -> BackboneConfig {
    BackboneConfig {
        input_resolution: RES,
        ..BackboneConfig::micro()
    }
}

fn data(n_clips: usize, seed: u64, class_mix: f64) -> ClipDataset {
    synth_generate(&SyntheticSpec {
        n_clips,
        resolution: RES,
        class_mix,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn learnable(state: &TrainState) -> Vec<Tensor> {
    state
        .model
        .store
        .iter()
        .filter(|p| p.kind != ParamKind::Buffer)
        .map(|p| p.value.clone())
        .collect()
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let ds = data(6, 1, 0.5);
    let model = build_model(&small_config(), FusionVariant::Full, 0).unwrap();
    let mut state = TrainState::new(model);
    let before = learnable(&state);
    let cfg = SgdConfig {
        lr: 0.0,
        ..SgdConfig::default()
    };
    let loss = train_epoch(&mut state, &ds, &Preprocess::default(), &cfg).unwrap();
    assert!(loss.is_finite());
    assert_eq!(state.epoch, 1);
    for (a, b) in before.iter().zip(learnable(&state)) {
        assert!(a.bit_eq(&b));
    }
}

#[test]
fn fixed_seed_reproduces_weights() {
    let ds = data(6, 2, 0.5);
    let run = || {
        let model = build_model(&small_config(), FusionVariant::B, 3).unwrap();
        let cfg = SgdConfig {
            epochs: 1,
            seed: 3,
            ..SgdConfig::default()
        };
        fit(model, &ds, None, &Preprocess::default(), &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    for (x, y) in a.model.store.iter().zip(b.model.store.iter()) {
        assert!(x.value.bit_eq(&y.value), "{}", x.name);
    }
    assert_eq!(a.log(), b.log());
}

fn labelled(label: Label, id: &str) -> Clip {
    Clip::new(vec![0; 2 * 3], (2, 1, 1), label, id, 25.0).unwrap()
}

#[test]
fn hand_built_confusion() {
    use Label::*;
    let clips = vec![
        labelled(Smoke, "a/0"),
        labelled(Smoke, "a/1"),
        labelled(NoSmoke, "a/2"),
        labelled(Smoke, "b/0"),
        labelled(NoSmoke, "b/1"),
        labelled(NoSmoke, "b/2"),
    ];
    let ds = ClipDataset { clips };
    // a: tp fn fp ; b: tp tn tn
    let ev = score(&ds, vec![1, 0, 1, 1, 0, 0]);
    let a = &ev.splits["a"];
    assert_eq!((a.tp, a.fp, a.fn_, a.tn), (1, 1, 1, 0));
    let b = &ev.splits["b"];
    assert_eq!((b.tp, b.fp, b.fn_, b.tn), (1, 0, 0, 2));
    assert_eq!((ev.pooled.tp, ev.pooled.fp, ev.pooled.fn_, ev.pooled.tn), (2, 1, 1, 2));
    assert!((ev.pooled.fscore.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((ev.average.fscore.unwrap() - (0.5 + 1.0) / 2.0).abs() < 1e-12);
    let csv = ev.csv_rows(FusionVariant::Full, 7);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("full,7,a,1,1,1,0,0.500000,0.500000,0.500000\n"));
}

#[test]
fn constant_smoke_model_scores_one_on_smoke() {
    let mut model = build_model(&small_config(), FusionVariant::Full, 4).unwrap();
    let out = model.output_layer().clone();
    let w = model.store.get(out.weight()).value.map(|_| 0.0);
    model.store.set(out.weight(), w).unwrap();
    model
        .store
        .set(out.bias(), Tensor::new(vec![2], vec![0.0, 1.0]).unwrap())
        .unwrap();
    let ds = data(5, 5, 1.0);
    assert!(ds.clips.iter().all(|c| c.label == Label::Smoke));
    let ev = evaluate(&model, &ds, &Preprocess::default()).unwrap();
    assert_eq!(ev.pooled.fscore, Some(1.0));
    assert_eq!(ev.predictions, vec![1; 5]);
}

#[test]
fn second_epoch_loss_drops_for_most_seeds() {
    let ds = synth_generate(&SyntheticSpec {
        n_clips: 64,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let mut drops = 0;
    for seed in 0..5 {
        let model = build_model(&BackboneConfig::micro(), FusionVariant::Full, seed).unwrap();
        let cfg = SgdConfig {
            epochs: 2,
            seed,
            ..SgdConfig::default()
        };
        let state = fit(model, &ds, None, &Preprocess::default(), &cfg).unwrap();
        if state.history[1].loss < state.history[0].loss {
            drops += 1;
        }
    }
    assert!(drops >= 4, "loss dropped for {drops} of 5 seeds");
}

#[test]
fn short_clips_are_skipped() {
    let mut ds = data(3, 7, 0.5);
    let short = Clip::new(
        vec![9; 4 * RES * RES * 3],
        (4, RES, RES),
        Label::Smoke,
        "s0/short",
        25.0,
    )
    .unwrap();
    ds.clips.push(short);
    let model = build_model(&small_config(), FusionVariant::SpatialOnly, 0).unwrap();
    let mut state = TrainState::new(model);
    let loss = train_epoch(&mut state, &ds, &Preprocess::default(), &SgdConfig::default()).unwrap();
    assert!(loss.is_finite());
}

#[test]
fn ablation_writes_checkpoints_and_tables() {
    let (train, test) = (data(6, 8, 0.5), data(4, 9, 0.5));
    let dir = tempfile::tempdir().unwrap();
    let cfg = SgdConfig {
        epochs: 1,
        ..SgdConfig::default()
    };
    let variants = [FusionVariant::Full, FusionVariant::SpatialOnly];
    let report = run_ablation(
        &small_config(),
        &train,
        &test,
        &variants,
        &[0, 1],
        &Preprocess::default(),
        &cfg,
        Some(dir.path()),
    )
    .unwrap();
    assert_eq!(report.runs.len(), 4);
    for run in &report.runs {
        let ck = Checkpoint::read(run.checkpoint.as_ref().unwrap()).unwrap();
        assert_eq!(
            (ck.header.variant, ck.header.seed, ck.header.epoch),
            (run.variant, run.seed, 1)
        );
    }
    assert!(report.metrics_csv().starts_with(METRICS_HEADER));
    let summary = report.summary_csv();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("full,2,0,"));
    assert!(lines[2].starts_with("spatial_only,2,0,"));
}
