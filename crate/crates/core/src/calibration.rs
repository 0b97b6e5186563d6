//! Landmark calibration: LK predictions merged with raw detections by a
//! scalar-gain Kalman filter, chained frame to frame.
//!
//! Each coordinate of each landmark is filtered independently. Points whose
//! track fails the forward-backward check fall back to the raw detection and
//! restart their variance chain.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::landmarks::{LandmarkFrame, LandmarkSequence, LandmarkSet, FEATURE_DIM, NUM_LANDMARKS};
use crate::lk::{track_points, LkConfig, TrackResult};
use crate::point::Point;
use crate::pyramid::{Frame, ImagePyramid};

/// Inherent LK variance `Q`.
pub const DEFAULT_Q: f64 = 0.3;

const RATIO_DENOM_FLOOR: f64 = 1e-6;
const RATIO_MAX: f64 = 10.0;

/// Approximate relative variance of the detection, per coordinate:
/// `|x_det − x_prev| / |x_pred − x_prev|`, with the denominator floored at
/// `1e-6` and the result clamped to `[0, 10]`.
pub fn relative_variance(x_prev: f64, x_det: f64, x_pred: f64) -> f64 {
    let mut denom = x_pred - x_prev;
    if denom.abs() < RATIO_DENOM_FLOOR {
        denom = RATIO_DENOM_FLOOR.copysign(denom);
    }
    ((x_det - x_prev) / denom).abs().min(RATIO_MAX)
}

/// `K = P / (P + D)`.
pub fn kalman_gain(p: f64, d: f64) -> f64 {
    p / (p + d)
}

/// `x_opt = x_pred + K (x_det − x_pred)`.
pub fn kalman_merge(x_pred: f64, x_det: f64, k: f64) -> f64 {
    x_pred + k * (x_det - x_pred)
}

/// `P_next = (1 − K) P + Q`.
pub fn update_variance(p: f64, k: f64, q: f64) -> f64 {
    (1.0 - k) * p + q
}

/// Per-coordinate prediction variance, laid out like a flattened landmark set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    p: [f64; FEATURE_DIM],
    q: f64,
}

impl TrackState {
    /// Every coordinate starts at `P = Q`.
    pub fn new(q: f64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::Config(format!("Q must be positive, got {q}")));
        }
        Ok(TrackState { p: [q; FEATURE_DIM], q })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn variances(&self) -> &[f64; FEATURE_DIM] {
        &self.p
    }

    pub fn initial_variance(&self) -> f64 {
        self.q
    }

    fn reset_point(&mut self, landmark: usize) {
        self.p[2 * landmark] = self.q;
        self.p[2 * landmark + 1] = self.q;
    }
}

/// Filters one coordinate. Returns the merged coordinate and the next variance.
fn filter_coordinate(x_prev: f64, x_det: f64, x_pred: f64, p: f64, q: f64) -> (f64, f64) {
    let d = relative_variance(x_prev, x_det, x_pred);
    let k = kalman_gain(p, d);
    (kalman_merge(x_pred, x_det, k), update_variance(p, k, q))
}

#[derive(Debug, Clone)]
pub struct CalibratedStep {
    pub landmarks: LandmarkSet,
    pub state: TrackState,
    pub tracks: Vec<TrackResult>,
}

impl CalibratedStep {
    pub fn validity(&self) -> [bool; NUM_LANDMARKS] {
        std::array::from_fn(|i| self.tracks[i].valid)
    }
}

/// One calibration step from frame `i` (already calibrated) to frame `i + 1`.
pub fn calibrate_step(
    prev_calibrated: &LandmarkSet,
    next_detected: &LandmarkSet,
    prev_frame: &ImagePyramid,
    next_frame: &ImagePyramid,
    state: &TrackState,
    lk: &LkConfig,
) -> CalibratedStep {
    let tracks = track_points(prev_frame, next_frame, prev_calibrated.points(), lk);
    let mut out = next_detected.clone();
    let mut next_state = state.clone();
    for (j, track) in tracks.iter().enumerate() {
        if !track.valid {
            next_state.reset_point(j);
            continue;
        }
        let prev = prev_calibrated.point(j);
        let det = next_detected.point(j);
        let pred = track.predicted;
        let (x, px) = filter_coordinate(prev.x, det.x, pred.x, state.p[2 * j], state.q);
        let (y, py) = filter_coordinate(prev.y, det.y, pred.y, state.p[2 * j + 1], state.q);
        next_state.p[2 * j] = px;
        next_state.p[2 * j + 1] = py;
        out.set_point(j, Point::new(x, y));
    }
    CalibratedStep { landmarks: out, state: next_state, tracks }
}

/// Supplies the image for a landmark record's frame index.
pub trait FrameSource {
    fn frame(&self, index: u64) -> Result<Option<Frame>>;
}

impl FrameSource for BTreeMap<u64, Frame> {
    fn frame(&self, index: u64) -> Result<Option<Frame>> {
        Ok(self.get(&index).cloned())
    }
}

/// Frames held in memory, the first one carrying `first_index`.
#[derive(Debug, Clone)]
pub struct IndexedFrames {
    first_index: u64,
    frames: Vec<Frame>,
}

impl IndexedFrames {
    pub fn new(first_index: u64, frames: Vec<Frame>) -> Self {
        IndexedFrames { first_index, frames }
    }
}

impl FrameSource for IndexedFrames {
    fn frame(&self, index: u64) -> Result<Option<Frame>> {
        Ok(index
            .checked_sub(self.first_index)
            .and_then(|i| self.frames.get(i as usize))
            .cloned())
    }
}

/// Calibrates a whole sequence. The first frame passes through; every later
/// frame is calibrated against the previous calibrated output. Validity flags
/// record which points were Kalman-merged.
pub fn calibrate_sequence(
    detections: &LandmarkSequence,
    frames: &dyn FrameSource,
    lk: &LkConfig,
    q: f64,
) -> Result<LandmarkSequence> {
    lk.validate()?;
    let mut state = TrackState::new(q)?;
    let mut out = LandmarkSequence::new();
    let records = detections.frames();
    let Some(first) = records.first() else {
        return Ok(out);
    };
    out.push_frame(LandmarkFrame { validity: None, ..first.clone() })?;
    if records.len() == 1 {
        return Ok(out);
    }
    let load = |index: u64| -> Result<ImagePyramid> {
        let frame = frames.frame(index)?.ok_or(Error::MissingFrame { frame_index: index })?;
        lk.build_pyramid(&frame)
    };
    let mut prev_pyr = load(first.index)?;
    let mut prev = first.landmarks.clone();
    for record in &records[1..] {
        let next_pyr = load(record.index)?;
        let step = calibrate_step(&prev, &record.landmarks, &prev_pyr, &next_pyr, &state, lk);
        let validity = step.validity();
        state = step.state;
        prev = step.landmarks.clone();
        out.push_frame(LandmarkFrame { index: record.index, landmarks: step.landmarks, validity: Some(validity) })?;
        prev_pyr = next_pyr;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn relative_variance_examples() {
        assert_eq!(relative_variance(5.0, 7.0, 6.0), 2.0);
        assert_eq!(relative_variance(5.0, 6.5, 6.5), 1.0);
        // zero denominator floors to 1e-6, ratio 1e6 clamps to 10
        assert_eq!(relative_variance(3.0, 4.0, 3.0), 10.0);
        // opposite motion uses the magnitude
        assert_eq!(relative_variance(5.0, 4.0, 6.0), 1.0);
        assert_eq!(relative_variance(5.0, 5.0, 5.0), 0.0);
    }

    #[test]
    fn gain_examples() {
        assert_eq!(kalman_gain(0.3, 0.3), 0.5);
        assert_eq!(kalman_gain(1.0, 3.0), 0.25);
        assert_eq!(kalman_gain(0.7, 0.0), 1.0);
    }

    #[test]
    fn merge_examples() {
        assert_eq!(kalman_merge(10.0, 12.0, 0.5), 11.0);
        assert_eq!(kalman_merge(10.0, 12.0, 0.0), 10.0);
        assert_eq!(kalman_merge(10.0, 12.0, 1.0), 12.0);
    }

    #[test]
    fn variance_update_examples() {
        assert_eq!(update_variance(0.4, 0.5, 0.3), 0.5);
        assert_eq!(update_variance(0.4, 1.0, 0.3), 0.3);
        assert_eq!(update_variance(0.4, 0.0, 0.3), 0.4 + 0.3);
    }

    #[test]
    fn variance_recursion_fixed_point() {
        for &k in &[0.05, 0.3, 0.5, 0.9, 1.0] {
            let mut p = DEFAULT_Q;
            for _ in 0..2000 {
                p = update_variance(p, k, DEFAULT_Q);
            }
            assert!((p - DEFAULT_Q / k).abs() < 1e-9, "k={k} p={p}");
        }
    }

    #[test]
    fn state_rejects_bad_q() {
        assert!(TrackState::new(0.0).is_err());
        assert!(TrackState::new(f64::NAN).is_err());
        assert!(TrackState::new(0.3).unwrap().variances().iter().all(|&p| p == 0.3));
    }

    proptest! {
        #[test]
        fn merged_coordinate_stays_between_prediction_and_detection(
            x_prev in -500.0f64..500.0,
            x_det in -500.0f64..500.0,
            x_pred in -500.0f64..500.0,
            p in 1e-3f64..50.0,
        ) {
            let (x, p_next) = filter_coordinate(x_prev, x_det, x_pred, p, DEFAULT_Q);
            let (lo, hi) = (x_pred.min(x_det), x_pred.max(x_det));
            prop_assert!(x >= lo && x <= hi);
            prop_assert!(p_next > DEFAULT_Q - 1e-15 && p_next <= p + DEFAULT_Q + 1e-12);
        }

        #[test]
        fn gain_in_unit_interval(p in 1e-6f64..100.0, d in 0.0f64..100.0) {
            let k = kalman_gain(p, d);
            prop_assert!(k > 0.0 && k <= 1.0);
        }
    }
}
