mod common;

use stcnet::explain::{export_heatmap, grad_cam, FrameRef, Heatmap};
use stcnet::model::{build_model, BackboneConfig, FusionVariant, PathKind};
use stcnet::tensor::Tape;

fn config() -> BackboneConfig {
    BackboneConfig {
        input_resolution: 64,
        n_frames: 2,
        ..BackboneConfig::micro()
    }
}

#[test]
fn heatmaps_ignore_output_weight_scale() {
    let mut model = build_model(&config(), FusionVariant::Full, 11).unwrap();
    let (rgb, res) = common::inputs(&config(), 1, 11);
    let before = grad_cam(&model, &rgb, &res, 1, PathKind::Temporal).unwrap();
    let w = model.output_layer().weight();
    let scaled = model.store.get(w).value.map(|v| v * 3.7);
    model.store.set(w, scaled).unwrap();
    let after = grad_cam(&model, &rgb, &res, 1, PathKind::Temporal).unwrap();
    let pairs = before
        .frames
        .iter()
        .chain([&before.aggregate])
        .zip(after.frames.iter().chain([&after.aggregate]));
    for (a, b) in pairs {
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }
}

#[test]
fn grad_cam_leaves_model_untouched() {
    let model = build_model(&config(), FusionVariant::Full, 12).unwrap();
    let snapshot = model.store.to_records();
    let (rgb, res) = common::inputs(&config(), 1, 12);
    for path in [PathKind::Spatial, PathKind::Temporal] {
        grad_cam(&model, &rgb, &res, 0, path).unwrap();
    }
    for ((na, a), (nb, b)) in snapshot.iter().zip(model.store.to_records()) {
        assert_eq!(na, &nb);
        assert!(a.bit_eq(&b), "{na} changed");
    }
}

#[test]
fn paths_use_disjoint_taps() {
    let model = build_model(&config(), FusionVariant::Full, 13).unwrap();
    let (rgb, res) = common::inputs(&config(), 1, 13);
    let mut tape = Tape::new();
    let (fwd, spatial) = model
        .capture_activations(&mut tape, &rgb, &res, "res4", PathKind::Spatial)
        .unwrap();
    let temporal = fwd.tap("temporal.res4").unwrap();
    assert!(!spatial.same_node(temporal));
    assert!(!spatial.value().bit_eq(temporal.value()));
    // below res4 the full variant writes one fused map back to both paths
    assert!(fwd
        .tap("spatial.res3")
        .unwrap()
        .same_node(fwd.tap("temporal.res3").unwrap()));
}

#[test]
fn maps_are_normalized_per_frame() {
    let model = build_model(&config(), FusionVariant::Full, 14).unwrap();
    let (rgb, res) = common::inputs(&config(), 1, 14);
    let cam = grad_cam(&model, &rgb, &res, 1, PathKind::Temporal).unwrap();
    assert_eq!(cam.frames.len(), 2);
    assert_eq!(cam.aggregate.frame, FrameRef::Aggregate);
    for h in cam.frames.iter().chain([&cam.aggregate]) {
        assert_eq!((h.height, h.width), (2, 2));
        assert!(h.values.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        let max = h.values.iter().copied().fold(0.0, f64::max);
        assert!(max == 0.0 || max == 1.0);
    }
}

#[test]
fn rejects_bad_class_and_multi_clip_input() {
    let model = build_model(&config(), FusionVariant::SpatialOnly, 15).unwrap();
    let (rgb, res) = common::inputs(&config(), 1, 15);
    assert!(grad_cam(&model, &rgb, &res, 2, PathKind::Spatial).is_err());
    assert!(grad_cam(&model, &rgb, &res, 1, PathKind::Temporal).is_err());
    let (rgb2, res2) = common::inputs(&config(), 2, 15);
    assert!(grad_cam(&model, &rgb2, &res2, 1, PathKind::Spatial).is_err());
}

#[test]
fn exported_files_are_stable() {
    let model = build_model(&config(), FusionVariant::Full, 16).unwrap();
    let (rgb, res) = common::inputs(&config(), 1, 16);
    let run = || {
        let cam = grad_cam(&model, &rgb, &res, 1, PathKind::Temporal).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (pgm, json) = export_heatmap(&cam.aggregate, dir.path(), "agg", 64).unwrap();
        let bytes = (std::fs::read(pgm).unwrap(), std::fs::read_to_string(json).unwrap());
        assert_eq!(Heatmap::from_sidecar(&bytes.1).unwrap(), cam.aggregate);
        bytes
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.0.starts_with(b"P5\n64 64\n255\n"));
    assert_eq!(a.0.len(), b"P5\n64 64\n255\n".len() + 64 * 64);
}
