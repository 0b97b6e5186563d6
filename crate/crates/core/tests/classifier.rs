//! Loss values at hand-set parameters, checked against closed forms.

use lrnet_core::classifier::{DropoutRates, TwoStreamModel, TwoStreamParams};
use lrnet_core::geometry::{ClipSample, FeatureVectorA, Label};
use lrnet_core::FEATURE_DIM;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn clips(labels: &[Label], seed: u64) -> Vec<ClipSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let rows: Vec<FeatureVectorA> =
                (0..60).map(|_| FeatureVectorA(std::array::from_fn::<f64, FEATURE_DIM, _>(|_| rng.random_range(-2.0..2.0)))).collect();
            ClipSample::from_alpha_rows(&rows, Some(l), "v", i)
        })
        .collect()
}

#[test]
fn uniform_prediction_costs_ln2() {
    let model = TwoStreamModel::new(TwoStreamParams::zeros(FEATURE_DIM, 4));
    let batch = clips(&[Label::Real, Label::Fake, Label::Fake], 1);
    let refs: Vec<&ClipSample> = batch.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (loss, _) = model.loss_and_grads(&refs, DropoutRates::OFF, &mut rng).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12, "{loss}");
    for p in model.predict_clips(&batch).unwrap() {
        assert_eq!(p.p_fake, 0.5);
        assert_eq!(p.label, Label::Real);
    }
}

#[test]
fn confident_correct_prediction_costs_nothing() {
    let mut params = TwoStreamParams::zeros(FEATURE_DIM, 4);
    let fake = Label::Fake.index();
    for s in [&mut params.shape, &mut params.speed] {
        s.head.fc2_b[fake] = 30.0;
        s.head.fc2_b[1 - fake] = -30.0;
    }
    let model = TwoStreamModel::new(params);
    let batch = clips(&[Label::Fake; 4], 2);
    let refs: Vec<&ClipSample> = batch.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (loss, _) = model.loss_and_grads(&refs, DropoutRates::OFF, &mut rng).unwrap();
    assert!((0.0..1e-6).contains(&loss), "{loss}");
    // The same logits against the wrong label: -ln(sigmoid(-60)) ≈ 60.
    let wrong = clips(&[Label::Real], 3);
    let (loss, _) = model.loss_and_grads(&[&wrong[0]], DropoutRates::OFF, &mut rng).unwrap();
    assert!((loss - 60.0).abs() < 1e-9, "{loss}");
}
