//! Calibration against ground truth on static synthetic scenes.

use std::collections::BTreeMap;

use lrnet_core::calibration::{calibrate_sequence, calibrate_step, IndexedFrames, TrackState, DEFAULT_Q};
use lrnet_core::lk::LkConfig;
use lrnet_core::synth::{occlude, reference_face, synth_textured_sequence, SynthMotionSpec};
use lrnet_core::{Error, Frame, LandmarkSequence, LandmarkSet, Point};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn scene(seed: u64) -> Frame {
    let spec = SynthMotionSpec { width: 256, height: 256, texture_seed: seed, displacements: vec![], points: vec![], ..Default::default() };
    synth_textured_sequence(&spec).unwrap().frames.remove(0)
}

fn face() -> LandmarkSet {
    reference_face().map(|p| p * 1.5 + Point::new(128.0, 128.0)).unwrap()
}

fn noisy(truth: &LandmarkSet, sigma: f64, rng: &mut ChaCha8Rng) -> LandmarkSet {
    let n = Normal::new(0.0, sigma).unwrap();
    let pts: Vec<Point> = truth.points().iter().map(|p| *p + Point::new(n.sample(rng), n.sample(rng))).collect();
    LandmarkSet::from_points(&pts).unwrap()
}

fn max_dist(a: &LandmarkSet, b: &LandmarkSet) -> f64 {
    a.points().iter().zip(b.points()).map(|(p, q)| (*p - *q).norm()).fold(0.0, f64::max)
}

#[test]
fn noiseless_static_scene_is_left_in_place() {
    let frames = IndexedFrames::new(1, vec![scene(1); 5]);
    let det = LandmarkSequence::from_sets(vec![face(); 5]);
    let out = calibrate_sequence(&det, &frames, &LkConfig::default(), DEFAULT_Q).unwrap();
    assert_eq!(out.len(), 5);
    for (a, b) in out.sets().zip(det.sets()) {
        assert!(max_dist(a, b) < 1e-3);
    }
    assert!(out.frames()[0].validity.is_none());
    assert!(out.frames()[1..].iter().all(|f| f.validity.unwrap().iter().all(|&v| v)));
}

#[test]
fn single_frame_passes_through() {
    let frames = IndexedFrames::new(7, vec![scene(2)]);
    let mut det = LandmarkSequence::new();
    det.push(7, face()).unwrap();
    assert_eq!(calibrate_sequence(&det, &frames, &LkConfig::default(), DEFAULT_Q).unwrap(), det);
}

#[test]
fn occluded_point_falls_back_to_the_raw_detection() {
    let cfg = LkConfig::default();
    let truth = face();
    let f0 = scene(3);
    let mut f1 = f0.clone();
    let j = 30; // nose bridge, away from neighbours' centers
    occlude(&mut f1, truth.point(j), cfg.half_size + 2, 128.0);
    let src = cfg.build_pyramid(&f0).unwrap();
    let dst = cfg.build_pyramid(&f1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let det = noisy(&truth, 1.0, &mut rng);
    let mut state = TrackState::new(DEFAULT_Q).unwrap();
    // Push the state away from its initial value first. A noisy detection on a
    // static pair gives D > 0, hence K < 1 and P != Q.
    let warm = calibrate_step(&truth, &noisy(&truth, 1.0, &mut rng), &src, &src, &state, &cfg);
    state = warm.state;
    assert!(state.variances()[2 * j] != state.initial_variance());
    let step = calibrate_step(&truth, &det, &src, &dst, &state, &cfg);
    assert!(!step.validity()[j]);
    assert_eq!(step.landmarks.point(j), det.point(j));
    assert_eq!(step.state.variances()[2 * j], step.state.initial_variance());
    assert_eq!(step.state.variances()[2 * j + 1], step.state.initial_variance());
    // A typical untouched point is merged, not copied.
    assert!(step.validity()[0]);
    assert_ne!(step.landmarks.point(0), det.point(0));
}

#[test]
fn jittered_static_sequence_moves_less_after_calibration() {
    let cfg = LkConfig::default();
    let truth = face();
    let frames = IndexedFrames::new(1, vec![scene(4); 40]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let det = LandmarkSequence::from_sets((0..40).map(|_| noisy(&truth, 1.0, &mut rng)));
    let out = calibrate_sequence(&det, &frames, &cfg, DEFAULT_Q).unwrap();
    let speed = |s: &LandmarkSequence| {
        let sets: Vec<&LandmarkSet> = s.sets().collect();
        let mut sum = 0.0;
        for w in sets.windows(2) {
            sum += w[0].points().iter().zip(w[1].points()).map(|(a, b)| (*a - *b).norm()).sum::<f64>();
        }
        sum / ((sets.len() - 1) * 68) as f64
    };
    let (before, after) = (speed(&det), speed(&out));
    assert!(after < 0.6 * before, "{after} vs {before}");
}

#[test]
fn moving_scene_is_followed() {
    let cfg = LkConfig::default();
    let truth0 = face();
    let shifts = vec![Point::new(1.5, -0.5); 6];
    let spec = SynthMotionSpec {
        width: 256,
        height: 256,
        texture_seed: 5,
        displacements: shifts.clone(),
        points: truth0.points().to_vec(),
        ..Default::default()
    };
    let s = synth_textured_sequence(&spec).unwrap();
    let truths: Vec<LandmarkSet> = s.trajectories.iter().map(|t| LandmarkSet::from_points(t).unwrap()).collect();
    let det = LandmarkSequence::from_sets(truths.clone());
    let out = calibrate_sequence(&det, &IndexedFrames::new(1, s.frames), &cfg, DEFAULT_Q).unwrap();
    for (o, t) in out.sets().zip(&truths) {
        assert!(max_dist(o, t) < 0.1, "{}", max_dist(o, t));
    }
}

#[test]
fn missing_frames_are_reported() {
    let mut frames = BTreeMap::new();
    frames.insert(1u64, scene(6));
    let det = LandmarkSequence::from_sets(vec![face(); 2]);
    match calibrate_sequence(&det, &frames, &LkConfig::default(), DEFAULT_Q) {
        Err(Error::MissingFrame { frame_index: 2 }) => {}
        other => panic!("{other:?}"),
    }
}
