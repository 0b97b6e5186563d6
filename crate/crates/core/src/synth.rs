//! Seeded ground-truth generators: textured frame sequences with known motion
//! and labeled landmark videos with a controllable temporal artifact.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Label;
use crate::landmarks::{LandmarkSequence, LandmarkSet, NUM_LANDMARKS};
use crate::point::{Displacement, Point};
use crate::pyramid::Frame;

/// A procedural 68-point face in the usual jaw / brows / nose / eyes / mouth
/// order, centered near the origin, about 90 px wide. y points down.
pub fn reference_face() -> LandmarkSet {
    let mut pts = Vec::with_capacity(NUM_LANDMARKS);
    for i in 0..17 {
        let th = std::f64::consts::PI * i as f64 / 16.0;
        pts.push(Point::new(-45.0 * th.cos(), -5.0 + 55.0 * th.sin()));
    }
    for side in [-1.0, 1.0] {
        for i in 0..5 {
            let t = i as f64 / 4.0;
            let t = if side < 0.0 { t } else { 1.0 - t };
            let x = side * (8.0 + 27.0 * (1.0 - t));
            pts.push(Point::new(x, -30.0 - 6.0 * (std::f64::consts::PI * t).sin()));
        }
    }
    for i in 0..4 {
        pts.push(Point::new(0.0, -22.0 + 7.0 * i as f64));
    }
    for i in 0..5 {
        let x = -10.0 + 5.0 * i as f64;
        pts.push(Point::new(x, 6.0 + 2.0 * (1.0 - (x / 10.0).powi(2))));
    }
    for cx in [-20.0, 20.0] {
        for i in 0..6 {
            let th = TAU * i as f64 / 6.0;
            pts.push(Point::new(cx - 9.0 * th.cos(), -18.0 - 4.0 * th.sin()));
        }
    }
    for i in 0..12 {
        let th = TAU * i as f64 / 12.0;
        pts.push(Point::new(-18.0 * th.cos(), 25.0 - 8.0 * th.sin()));
    }
    for i in 0..8 {
        let th = TAU * i as f64 / 8.0;
        pts.push(Point::new(-11.0 * th.cos(), 25.0 - 4.0 * th.sin()));
    }
    LandmarkSet::from_points(&pts).expect("68 finite points")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthMotionSpec {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub texture_seed: u64,
    /// Gaussian blur applied to the white-noise texture.
    pub blur_sigma: f64,
    /// Motion from frame `t` to `t + 1`; the sequence has `len + 1` frames.
    pub displacements: Vec<Displacement>,
    /// Additive Gaussian pixel noise, redrawn per frame.
    pub noise_sigma: f64,
    /// Points in frame 0 whose trajectories are reported.
    pub points: Vec<Point>,
    /// Minimum distance of every trajectory from the image border.
    pub margin: f64,
}

impl Default for SynthMotionSpec {
    fn default() -> Self {
        SynthMotionSpec {
            width: 200,
            height: 200,
            channels: 1,
            texture_seed: 0,
            blur_sigma: 1.5,
            displacements: vec![Displacement::ZERO],
            noise_sigma: 0.0,
            points: vec![Point::new(100.0, 100.0)],
            margin: 21.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub frames: Vec<Frame>,
    /// `trajectories[t][i]` is point `i` in frame `t`.
    pub trajectories: Vec<Vec<Point>>,
}

fn blurred_noise(width: usize, height: usize, channels: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Frame> {
    let raw: Vec<f64> = (0..width * height * channels).map(|_| rng.random_range(0.0..255.0)).collect();
    if sigma <= 0.0 {
        return Frame::new(width, height, channels, raw);
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = {
        let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let s: f64 = k.iter().sum();
        k.into_iter().map(|v| v / s).collect()
    };
    let idx = |x: usize, y: usize, c: usize| (y * width + x) * channels + c;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; raw.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                tmp[idx(x, y, c)] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * raw[idx(clamp(x as isize + k as isize - radius, width), y, c)])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; raw.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                out[idx(x, y, c)] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * tmp[idx(x, clamp(y as isize + k as isize - radius, height), c)])
                    .sum();
            }
        }
    }
    Frame::new(width, height, channels, out)
}

/// Frame 0 is seeded blurred white noise; frame `t` is frame 0 bilinearly
/// shifted by the cumulative displacement up to `t`.
pub fn synth_textured_sequence(spec: &SynthMotionSpec) -> Result<SynthSequence> {
    if spec.displacements.iter().any(|d| !d.is_finite()) || !(spec.noise_sigma >= 0.0) {
        return Err(Error::Config("synth: displacements must be finite and noise_sigma >= 0".into()));
    }
    let mut cumulative = vec![Displacement::ZERO];
    for d in &spec.displacements {
        let last = *cumulative.last().expect("non-empty");
        cumulative.push(last + *d);
    }
    let trajectories: Vec<Vec<Point>> =
        cumulative.iter().map(|c| spec.points.iter().map(|p| *p + *c).collect()).collect();
    let (w, h, m) = (spec.width as f64, spec.height as f64, spec.margin);
    for (t, pts) in trajectories.iter().enumerate() {
        for p in pts {
            if !(p.x >= m && p.y >= m && p.x <= w - 1.0 - m && p.y <= h - 1.0 - m) {
                return Err(Error::OutOfBounds { frame: t, x: p.x, y: p.y });
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let base = blurred_noise(spec.width, spec.height, spec.channels, spec.blur_sigma, &mut rng)?;
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut frames = Vec::with_capacity(cumulative.len());
    for c in &cumulative {
        let mut f = if *c == Displacement::ZERO { base.clone() } else { base.translated(*c) };
        if spec.noise_sigma > 0.0 {
            let data: Vec<f64> = f.data().iter().map(|v| v + noise.sample(&mut rng)).collect();
            f = Frame::new(f.width(), f.height(), f.channels(), data)?;
        }
        frames.push(f);
    }
    Ok(SynthSequence { frames, trajectories })
}

/// Integer shift `(dx, dy)` with `|dx|, |dy| <= max_shift` minimizing the mean
/// squared difference between `a(x, y)` and `b(x + dx, y + dy)` over the
/// interior where every candidate is in bounds.
pub fn integer_ssd_search(a: &Frame, b: &Frame, max_shift: usize) -> (i64, i64) {
    let m = max_shift as i64;
    let (w, h) = (a.width().min(b.width()) as i64, a.height().min(b.height()) as i64);
    let mut best = (f64::INFINITY, (0, 0));
    for dy in -m..=m {
        for dx in -m..=m {
            let mut ssd = 0.0;
            for y in m..h - m {
                for x in m..w - m {
                    for c in 0..a.channels() {
                        let e = a.pixel(x as usize, y as usize, c) - b.pixel((x + dx) as usize, (y + dy) as usize, c);
                        ssd += e * e;
                    }
                }
            }
            if ssd < best.0 {
                best = (ssd, (dx, dy));
            }
        }
    }
    best.1
}

/// Overwrites the square of half-size `half_size` around `center` with `value`.
pub fn occlude(frame: &mut Frame, center: Point, half_size: usize, value: f64) {
    let x0 = (center.x.round() as i64 - half_size as i64).max(0) as usize;
    let y0 = (center.y.round() as i64 - half_size as i64).max(0) as usize;
    frame.fill_rect(x0, y0, 2 * half_size + 1, 2 * half_size + 1, value);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FakeMode {
    /// Independent per-frame noise on a fraction of the landmarks.
    Jitter,
    /// Slow random warping of each landmark's distance from the face center.
    ExpressionDrift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthLandmarkSpec {
    pub n_sequences: usize,
    pub frames_per_sequence: usize,
    /// Fraction of sequences labeled fake.
    pub fake_fraction: f64,
    pub fake_mode: FakeMode,
    pub fake_jitter_sigma: f64,
    pub fake_jitter_fraction: f64,
    /// Relative amplitude of the drift warp.
    pub drift_amplitude: f64,
    /// Detector noise added to every sequence, real or fake.
    pub detector_noise_sigma: f64,
    /// Head translation amplitude in pixels.
    pub motion_amplitude: f64,
    /// Per-landmark expression amplitude in pixels (before head scale).
    pub expression_amplitude: f64,
    /// Per-landmark identity offset (std, before head scale).
    pub identity_sigma: f64,
    pub seed: u64,
}

impl Default for SynthLandmarkSpec {
    fn default() -> Self {
        SynthLandmarkSpec {
            n_sequences: 100,
            frames_per_sequence: 240,
            fake_fraction: 0.5,
            fake_mode: FakeMode::Jitter,
            fake_jitter_sigma: 0.5,
            fake_jitter_fraction: 1.0,
            drift_amplitude: 0.08,
            detector_noise_sigma: 0.1,
            motion_amplitude: 8.0,
            expression_amplitude: 1.0,
            identity_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SynthLandmarkSpec {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.fake_jitter_sigma,
            self.drift_amplitude,
            self.detector_noise_sigma,
            self.motion_amplitude,
            self.expression_amplitude,
            self.identity_sigma,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("synth: amplitudes and sigmas must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.fake_fraction) || !(0.0..=1.0).contains(&self.fake_jitter_fraction) {
            return Err(Error::Config("synth: fractions must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Whether sequence `i` is fake; fakes are spread evenly through the list.
    pub fn label_of(&self, i: usize) -> Label {
        let f = self.fake_fraction;
        if ((i + 1) as f64 * f).floor() > (i as f64 * f).floor() {
            Label::Fake
        } else {
            Label::Real
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub id: String,
    pub label: Label,
    pub sequence: LandmarkSequence,
}

struct Wave {
    amp: f64,
    period: f64,
    phase: f64,
}

impl Wave {
    fn random(rng: &mut ChaCha8Rng, amp: f64, periods: std::ops::Range<f64>) -> Wave {
        Wave { amp, period: rng.random_range(periods), phase: rng.random_range(0.0..TAU) }
    }

    fn at(&self, t: f64) -> f64 {
        self.amp * (TAU * t / self.period + self.phase).sin()
    }
}

/// Labeled landmark videos. Every sequence is a smooth sinusoidal head and
/// expression trajectory plus detector noise; fakes add the artifact chosen by
/// `fake_mode`. Sequence `i` uses its own stream of the seeded generator.
pub fn synth_landmark_dataset(spec: &SynthLandmarkSpec) -> Result<Vec<SynthVideo>> {
    spec.validate()?;
    (0..spec.n_sequences).into_par_iter().map(|i| synth_video(spec, i)).collect()
}

fn synth_video(spec: &SynthLandmarkSpec, i: usize) -> Result<SynthVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64 + 1);
    let label = spec.label_of(i);
    let normal = |s: f64| Normal::new(0.0, s).expect("finite sigma");
    let unit = normal(1.0);

    let reference = reference_face();
    let identity: Vec<Point> = reference
        .points()
        .iter()
        .map(|p| *p + Point::new(unit.sample(&mut rng), unit.sample(&mut rng)) * spec.identity_sigma)
        .collect();
    let expression: Vec<(Point, Wave)> = (0..NUM_LANDMARKS)
        .map(|_| {
            let th = rng.random_range(0.0..TAU);
            let amp = rng.random_range(0.0..spec.expression_amplitude.max(f64::MIN_POSITIVE));
            (Point::new(th.cos(), th.sin()), Wave::random(&mut rng, amp, 40.0..120.0))
        })
        .collect();
    let center = Point::new(rng.random_range(280.0..360.0), rng.random_range(200.0..280.0));
    let scale0 = rng.random_range(1.5..2.5);
    let angle0 = rng.random_range(-0.2..0.2);
    let tx = Wave::random(&mut rng, spec.motion_amplitude, 80.0..200.0);
    let ty = Wave::random(&mut rng, spec.motion_amplitude, 80.0..200.0);
    let rot = Wave::random(&mut rng, 0.05, 80.0..200.0);
    let zoom = Wave::random(&mut rng, 0.03, 80.0..200.0);

    let fake = label == Label::Fake;
    let n_jitter = (spec.fake_jitter_fraction * NUM_LANDMARKS as f64).round() as usize;
    let mut jittered = [false; NUM_LANDMARKS];
    {
        let mut order: Vec<usize> = (0..NUM_LANDMARKS).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        for &j in &order[..n_jitter] {
            jittered[j] = true;
        }
    }
    let drift: Vec<Wave> =
        (0..NUM_LANDMARKS).map(|_| Wave::random(&mut rng, spec.drift_amplitude, 100.0..300.0)).collect();

    let det_noise = normal(spec.detector_noise_sigma);
    let jitter = normal(spec.fake_jitter_sigma);
    let mut sets = Vec::with_capacity(spec.frames_per_sequence);
    for f in 0..spec.frames_per_sequence {
        let t = f as f64;
        let s = scale0 * (1.0 + zoom.at(t));
        let (sin, cos) = (angle0 + rot.at(t)).sin_cos();
        let shift = center + Point::new(tx.at(t), ty.at(t));
        let mut pts = [Point::ZERO; NUM_LANDMARKS];
        for j in 0..NUM_LANDMARKS {
            let (dir, wave) = &expression[j];
            let mut q = identity[j] + *dir * wave.at(t);
            if fake && spec.fake_mode == FakeMode::ExpressionDrift {
                q = q * (1.0 + drift[j].at(t));
            }
            let mut p = shift + Point::new(cos * q.x - sin * q.y, sin * q.x + cos * q.y) * s;
            p += Point::new(det_noise.sample(&mut rng), det_noise.sample(&mut rng));
            if fake && spec.fake_mode == FakeMode::Jitter && jittered[j] {
                p += Point::new(jitter.sample(&mut rng), jitter.sample(&mut rng));
            }
            pts[j] = p;
        }
        sets.push(LandmarkSet::new(pts)?);
    }
    Ok(SynthVideo { id: format!("synth_{i:04}"), label, sequence: LandmarkSequence::from_sets(sets) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{embed_alpha, embed_beta, align_landmarks, CanonicalTemplate};

    #[test]
    fn reference_face_is_well_formed() {
        let f = reference_face();
        for i in 0..NUM_LANDMARKS {
            for j in 0..i {
                assert!((f.point(i) - f.point(j)).norm() > 0.5, "{i} and {j} coincide");
            }
        }
        // Left/right symmetry of the jaw.
        assert!((f.point(0).x + f.point(16).x).abs() < 1e-9);
        assert!((f.point(8).y - 50.0).abs() < 1e-9);
    }

    #[test]
    fn zero_motion_gives_identical_frames() {
        let spec = SynthMotionSpec { displacements: vec![Displacement::ZERO; 3], texture_seed: 4, ..Default::default() };
        let seq = synth_textured_sequence(&spec).unwrap();
        assert_eq!(seq.frames.len(), 4);
        assert!(seq.frames.iter().all(|f| f == &seq.frames[0]));
        assert_eq!(synth_textured_sequence(&spec).unwrap(), seq);
    }

    #[test]
    fn ssd_oracle_finds_integer_shift() {
        let spec = SynthMotionSpec {
            width: 64,
            height: 64,
            displacements: vec![Displacement::new(3.0, -2.0)],
            points: vec![Point::new(32.0, 32.0)],
            ..Default::default()
        };
        let seq = synth_textured_sequence(&spec).unwrap();
        assert_eq!(integer_ssd_search(&seq.frames[0], &seq.frames[1], 5), (3, -2));
        assert_eq!(seq.trajectories[1][0], Point::new(35.0, 30.0));
    }

    #[test]
    fn out_of_bounds_trajectory_is_rejected() {
        let spec = SynthMotionSpec { displacements: vec![Displacement::new(90.0, 0.0)], ..Default::default() };
        assert!(matches!(synth_textured_sequence(&spec), Err(Error::OutOfBounds { frame: 1, .. })));
    }

    #[test]
    fn landmark_dataset_is_seeded_and_balanced() {
        let spec = SynthLandmarkSpec { n_sequences: 10, frames_per_sequence: 20, ..Default::default() };
        let a = synth_landmark_dataset(&spec).unwrap();
        assert_eq!(a, synth_landmark_dataset(&spec).unwrap());
        assert_eq!(a.iter().filter(|v| v.label == Label::Fake).count(), 5);
        assert!(a.iter().all(|v| v.sequence.len() == 20));
        let other = synth_landmark_dataset(&SynthLandmarkSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a[0].sequence, other[0].sequence);
    }

    fn mean_abs_beta(videos: &[SynthVideo], label: Label, template: &CanonicalTemplate) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for v in videos.iter().filter(|v| v.label == label) {
            let alphas: Vec<_> =
                v.sequence.sets().map(|s| embed_alpha(&align_landmarks(s, template).unwrap())).collect();
            for w in alphas.windows(2) {
                let b = embed_beta(&w[1], &w[0]);
                sum += b.0.iter().map(|x| x.abs()).sum::<f64>();
                n += b.0.len();
            }
        }
        sum / n as f64
    }

    #[test]
    fn jitter_raises_mean_speed() {
        let spec = SynthLandmarkSpec { n_sequences: 20, frames_per_sequence: 30, fake_jitter_sigma: 1.0, ..Default::default() };
        let videos = synth_landmark_dataset(&spec).unwrap();
        let template = CanonicalTemplate::from_shape(&reference_face(), "ref").unwrap();
        let fake = mean_abs_beta(&videos, Label::Fake, &template);
        let real = mean_abs_beta(&videos, Label::Real, &template);
        assert!(fake > 2.0 * real, "fake {fake} real {real}");
    }

    #[test]
    fn real_trajectories_are_smooth() {
        let spec = SynthLandmarkSpec { n_sequences: 2, detector_noise_sigma: 0.0, ..Default::default() };
        let videos = synth_landmark_dataset(&spec).unwrap();
        let real = videos.iter().find(|v| v.label == Label::Real).unwrap();
        let sets: Vec<_> = real.sequence.sets().collect();
        for w in sets.windows(3) {
            for j in 0..NUM_LANDMARKS {
                let dd = w[2].point(j) - w[1].point(j) * 2.0 + w[0].point(j);
                assert!(dd.norm() < 0.2, "{}", dd.norm());
            }
        }
    }
}
