//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::Rng;
use stcnet::model::{build_model, BackboneConfig, Forward, FusionVariant, PathKind, StcNet};
use stcnet::nn::{Mode, ParamKind};
use stcnet::tensor::{Tape, Tensor};

pub type Check = Result<(), String>;

pub fn random(dims: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = stcnet::rng::stream(seed, &[0x7e57]);
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// 32x32 micro network over two frames.
pub fn tiny() -> BackboneConfig {
    BackboneConfig {
        input_resolution: 32,
        n_frames: 2,
        ..BackboneConfig::micro()
    }
}

pub fn inputs(config: &BackboneConfig, clips: usize, seed: u64) -> (Tensor, Tensor) {
    let r = config.input_resolution;
    let dims = vec![clips * config.n_frames, 3, r, r];
    (random(dims.clone(), seed), random(dims, seed + 1000))
}

fn forward(model: &StcNet, rgb: &Tensor, res: &Tensor) -> Result<Forward, String> {
    model
        .forward(&mut Tape::inference(), Mode::Eval, false, rgb, res)
        .map_err(|e| e.to_string())
}

fn tap<'a>(f: &'a Forward, name: &str) -> Result<&'a Tensor, String> {
    f.tap(name).map(|v| v.value()).map_err(|e| e.to_string())
}

fn same(what: &str, a: &Tensor, b: &Tensor) -> Check {
    if a.bit_eq(b) {
        Ok(())
    } else {
        Err(format!("{what}: differs by {}", a.max_abs_diff(b)))
    }
}

fn differs(what: &str, a: &Tensor, b: &Tensor) -> Check {
    if a.bit_eq(b) {
        Err(format!("{what}: expected a difference"))
    } else {
        Ok(())
    }
}

fn sum(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_shape(a.shape().clone(), data).unwrap()
}

/// Post-fusion maps at `stage` against the pre-fusion ones for the given
/// `(temporal -> spatial, spatial -> temporal)` expectation.
fn stage_fusion(f: &Forward, stage: usize, expect: (bool, bool)) -> Check {
    let ps = tap(f, &format!("spatial.res{stage}.pre"))?;
    let pt = tap(f, &format!("temporal.res{stage}.pre"))?;
    let s = tap(f, &format!("spatial.res{stage}"))?;
    let t = tap(f, &format!("temporal.res{stage}"))?;
    let fused = sum(ps, pt);
    let tag = |p: &str| format!("res{stage} {p}");
    if expect.0 {
        same(&tag("spatial fused"), s, &fused)?;
    } else {
        same(&tag("spatial untouched"), s, ps)?;
    }
    if expect.1 {
        same(&tag("temporal fused"), t, &fused)?;
    } else {
        same(&tag("temporal untouched"), t, pt)?;
    }
    Ok(())
}

fn single_path(model: &StcNet, path: PathKind, x: &Tensor, f: &Forward) -> Check {
    let taps = model
        .run_single_path(&mut Tape::inference(), Mode::Eval, path, x)
        .map_err(|e| e.to_string())?;
    for (name, v) in &taps {
        same(&format!("{name} vs single path"), tap(f, name)?, v.value())?;
    }
    Ok(())
}

pub fn full_fuses_both_ways_at_res1_to_res3() -> Check {
    let model = build_model(&tiny(), FusionVariant::Full, 1).map_err(|e| e.to_string())?;
    let (rgb, res) = inputs(&tiny(), 1, 1);
    let f = forward(&model, &rgb, &res)?;
    for stage in 1..=3 {
        stage_fusion(&f, stage, (true, true))?;
        same(
            &format!("res{stage} paths identical"),
            tap(&f, &format!("spatial.res{stage}"))?,
            tap(&f, &format!("temporal.res{stage}"))?,
        )?;
    }
    stage_fusion(&f, 4, (false, false))?;
    differs("res4 paths", tap(&f, "spatial.res4")?, tap(&f, "temporal.res4")?)
}

pub fn variant_a_matches_independent_paths() -> Check {
    let model = build_model(&tiny(), FusionVariant::A, 2).map_err(|e| e.to_string())?;
    let (rgb, res) = inputs(&tiny(), 1, 2);
    let f = forward(&model, &rgb, &res)?;
    for stage in 1..=4 {
        stage_fusion(&f, stage, (false, false))?;
    }
    single_path(&model, PathKind::Spatial, &rgb, &f)?;
    single_path(&model, PathKind::Temporal, &res, &f)
}

pub fn variant_b_leaves_temporal_path_alone() -> Check {
    let model = build_model(&tiny(), FusionVariant::B, 3).map_err(|e| e.to_string())?;
    let (rgb, res) = inputs(&tiny(), 1, 3);
    let f = forward(&model, &rgb, &res)?;
    for stage in 1..=3 {
        stage_fusion(&f, stage, (true, false))?;
    }
    stage_fusion(&f, 4, (false, false))?;
    single_path(&model, PathKind::Temporal, &res, &f)
}

pub fn variant_c_fuses_once() -> Check {
    let model = build_model(&tiny(), FusionVariant::C, 4).map_err(|e| e.to_string())?;
    let (rgb, res) = inputs(&tiny(), 1, 4);
    let f = forward(&model, &rgb, &res)?;
    stage_fusion(&f, 1, (true, true))?;
    for stage in 2..=4 {
        stage_fusion(&f, stage, (false, false))?;
    }
    Ok(())
}

/// With every temporal weight zeroed the temporal maps are exactly zero, so
/// the full network must reproduce a spatial-only network carrying the same
/// spatial and head weights bit for bit.
pub fn zeroed_temporal_path_reduces_to_spatial_only() -> Check {
    let err = |e: stcnet::Error| e.to_string();
    let mut full = build_model(&tiny(), FusionVariant::Full, 5).map_err(err)?;
    let mut spatial = build_model(&tiny(), FusionVariant::SpatialOnly, 99).map_err(err)?;
    let ids: Vec<_> = full.store.ids().collect();
    for id in ids {
        let p = full.store.get(id).clone();
        if p.name.starts_with("temporal.") {
            if p.kind != ParamKind::Buffer {
                full.store.set(id, p.value.map(|_| 0.0)).map_err(err)?;
            }
        } else {
            let target = spatial
                .store
                .find(&p.name)
                .ok_or_else(|| format!("{} missing from spatial-only model", p.name))?;
            spatial.store.set(target, p.value).map_err(err)?;
        }
    }
    let (rgb, res) = inputs(&tiny(), 2, 5);
    let f = forward(&full, &rgb, &res)?;
    for stage in 1..=4 {
        let t = tap(&f, &format!("temporal.res{stage}.pre"))?;
        if t.data().iter().any(|&v| v != 0.0) {
            return Err(format!("temporal res{stage} not zero"));
        }
    }
    let g = forward(&spatial, &rgb, &res)?;
    same("logits", f.logits.value(), g.logits.value())
}

pub fn logits_are_deterministic() -> Check {
    let (rgb, res) = inputs(&tiny(), 2, 6);
    let run = || -> Result<Tensor, String> {
        let model = build_model(&tiny(), FusionVariant::Full, 6).map_err(|e| e.to_string())?;
        Ok(forward(&model, &rgb, &res)?.logits.value().clone())
    };
    same("logits across builds", &run()?, &run()?)
}

pub fn fusion_invariants() -> Vec<(&'static str, Check)> {
    vec![
        ("full", full_fuses_both_ways_at_res1_to_res3()),
        ("a", variant_a_matches_independent_paths()),
        ("b", variant_b_leaves_temporal_path_alone()),
        ("c", variant_c_fuses_once()),
        ("zeroed temporal", zeroed_temporal_path_reduces_to_spatial_only()),
        ("determinism", logits_are_deterministic()),
    ]
}
