mod common;

#[test]
fn full_fuses_both_ways_at_res1_to_res3() {
    common::full_fuses_both_ways_at_res1_to_res3().unwrap();
}

#[test]
fn variant_a_matches_independent_paths() {
    common::variant_a_matches_independent_paths().unwrap();
}

#[test]
fn variant_b_leaves_temporal_path_alone() {
    common::variant_b_leaves_temporal_path_alone().unwrap();
}

#[test]
fn variant_c_fuses_once() {
    common::variant_c_fuses_once().unwrap();
}

#[test]
fn zeroed_temporal_path_reduces_to_spatial_only() {
    common::zeroed_temporal_path_reduces_to_spatial_only().unwrap();
}

#[test]
fn logits_are_deterministic() {
    common::logits_are_deterministic().unwrap();
}

#[test]
fn all_zero_input_gives_finite_logits() {
    use stcnet::model::{build_model, FusionVariant};
    use stcnet::nn::Mode;
    use stcnet::tensor::{Tape, Tensor};

    let config = common::tiny();
    let r = config.input_resolution;
    let zeros = Tensor::zeros(vec![2 * config.n_frames, 3, r, r]).unwrap();
    for variant in FusionVariant::ALL {
        let model = build_model(&config, variant, 4).unwrap();
        for mode in [Mode::Eval, Mode::Train] {
            let f = model
                .forward(&mut Tape::inference(), mode, false, &zeros, &zeros)
                .unwrap();
            let logits = f.logits.value();
            assert_eq!(logits.dims(), &[2, 2]);
            assert!(
                logits.data().iter().all(|v| v.is_finite()),
                "{variant} {mode:?}: {:?}",
                logits.data()
            );
        }
    }
}
