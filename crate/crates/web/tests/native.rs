use stcnet_web::{sample_segments, Scene};

#[test]
fn frames_are_rgba() {
    let s = Scene::new(3, 1, 32, 8).unwrap();
    assert_eq!(s.len(), 8);
    assert_eq!(s.resolution(), 32);
    let f = s.frame_rgba(0).unwrap();
    assert_eq!(f.len(), 32 * 32 * 4);
    assert!(f.chunks(4).all(|p| p[3] == 255));
    assert!(["smoke", "steam", "box", "static"].contains(&s.kind().as_str()));
}

#[test]
fn residual_respects_ceiling() {
    let s = Scene::new(4, 0, 32, 8).unwrap();
    let r = s.residual_rgba(7, 20.0, 40.0).unwrap();
    assert_eq!(r.len(), 32 * 32 * 4);
    assert!(r.chunks(4).all(|p| p[..3].iter().all(|&v| v <= 40)));
}

#[test]
fn segments_cover_the_clip() {
    assert_eq!(sample_segments(80, 8, 0).unwrap(), vec![5, 15, 25, 35, 45, 55, 65, 75]);
    let r = sample_segments(80, 8, 9).unwrap();
    for (k, &i) in r.iter().enumerate() {
        assert!((k as u32 * 10..(k as u32 + 1) * 10).contains(&i));
    }
}
