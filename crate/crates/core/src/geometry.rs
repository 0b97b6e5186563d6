//! Similarity alignment to a canonical template and the two feature streams:
//! `α` (flattened aligned landmarks) and `β` (frame-to-frame differences of `α`).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{LandmarkSequence, LandmarkSet, FEATURE_DIM, NUM_LANDMARKS};
use crate::point::Point;

pub const DEFAULT_CLIP_LENGTH: usize = 60;

/// A 68-point reference shape with centroid at the origin and unit RMS radius.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalTemplate {
    shape: LandmarkSet,
    provenance: String,
}

impl CanonicalTemplate {
    /// Normalizes `shape` (translation and scale only) into a template.
    pub fn from_shape(shape: &LandmarkSet, provenance: impl Into<String>) -> Result<Self> {
        Ok(CanonicalTemplate { shape: normalize_shape(shape)?, provenance: provenance.into() })
    }

    /// Keeps `shape` as is when it is already centered with unit RMS radius
    /// (to rounding), so stored templates reload bit for bit.
    pub fn from_normalized(shape: &LandmarkSet, provenance: impl Into<String>) -> Result<Self> {
        let c = shape.centroid();
        let rms = (shape.points().iter().map(|p| (*p - c).norm_sq()).sum::<f64>() / NUM_LANDMARKS as f64).sqrt();
        if c.norm() < 1e-9 && (rms - 1.0).abs() < 1e-9 {
            Ok(CanonicalTemplate { shape: shape.clone(), provenance: provenance.into() })
        } else {
            CanonicalTemplate::from_shape(shape, provenance)
        }
    }

    /// Generalized Procrustes mean of `sets`: repeatedly aligns every set to the
    /// current reference and re-normalizes their mean.
    pub fn estimate<'a>(
        sets: impl IntoIterator<Item = &'a LandmarkSet>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let sets: Vec<&LandmarkSet> = sets.into_iter().collect();
        let first = sets.first().ok_or(Error::EmptyClipList)?;
        let mut reference = normalize_shape(first)?;
        for _ in 0..100 {
            let mut sum = [Point::ZERO; NUM_LANDMARKS];
            for set in &sets {
                let aligned = fit_similarity(set, &reference)?.apply_set(set)?;
                for (s, p) in sum.iter_mut().zip(aligned.points()) {
                    *s += *p;
                }
            }
            let n = sets.len() as f64;
            let mean = LandmarkSet::new(sum.map(|p| p * (1.0 / n)))?;
            let next = normalize_shape(&mean)?;
            let change = next
                .points()
                .iter()
                .zip(reference.points())
                .map(|(a, b)| (*a - *b).norm())
                .fold(0.0, f64::max);
            reference = next;
            if change < 1e-12 {
                break;
            }
        }
        Ok(CanonicalTemplate { shape: reference, provenance: provenance.into() })
    }

    pub fn shape(&self) -> &LandmarkSet {
        &self.shape
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }
}

fn normalize_shape(shape: &LandmarkSet) -> Result<LandmarkSet> {
    let c = shape.centroid();
    let centered = shape.map(|p| p - c)?;
    let rms = (centered.points().iter().map(|p| p.norm_sq()).sum::<f64>() / NUM_LANDMARKS as f64).sqrt();
    if !(rms > 1e-12) {
        return Err(Error::DegenerateShape);
    }
    centered.map(|p| p * (1.0 / rms))
}

/// `p ↦ [[a, −b], [b, a]] p + t`: rotation, uniform scale and translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub a: f64,
    pub b: f64,
    pub t: Point,
}

impl Similarity {
    pub fn from_parts(scale: f64, angle: f64, t: Point) -> Self {
        Similarity { a: scale * angle.cos(), b: scale * angle.sin(), t }
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(self.a * p.x - self.b * p.y + self.t.x, self.b * p.x + self.a * p.y + self.t.y)
    }

    pub fn apply_set(&self, set: &LandmarkSet) -> Result<LandmarkSet> {
        set.map(|p| self.apply(p))
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }
}

/// Closed-form least-squares similarity taking `src` onto `dst`.
pub fn fit_similarity(src: &LandmarkSet, dst: &LandmarkSet) -> Result<Similarity> {
    let cs = src.centroid();
    let cd = dst.centroid();
    let (mut spp, mut dot, mut cross) = (0.0, 0.0, 0.0);
    for (p, q) in src.points().iter().zip(dst.points()) {
        let p = *p - cs;
        let q = *q - cd;
        spp += p.norm_sq();
        dot += p.x * q.x + p.y * q.y;
        cross += p.x * q.y - p.y * q.x;
    }
    let magnitude: f64 = src.points().iter().map(|p| p.norm_sq()).sum();
    if !(spp > 1e-24 * (1.0 + magnitude)) {
        return Err(Error::DegenerateShape);
    }
    let (a, b) = (dot / spp, cross / spp);
    let t = cd - Point::new(a * cs.x - b * cs.y, b * cs.x + a * cs.y);
    Ok(Similarity { a, b, t })
}

pub fn align_landmarks(set: &LandmarkSet, template: &CanonicalTemplate) -> Result<LandmarkSet> {
    fit_similarity(set, template.shape())?.apply_set(set)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVectorA(pub [f64; FEATURE_DIM]);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVectorB(pub [f64; FEATURE_DIM]);

pub fn embed_alpha(set: &LandmarkSet) -> FeatureVectorA {
    FeatureVectorA(set.flatten())
}

pub fn embed_beta(a_next: &FeatureVectorA, a_prev: &FeatureVectorA) -> FeatureVectorB {
    FeatureVectorB(std::array::from_fn(|i| a_next.0[i] - a_prev.0[i]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_p_fake(p_fake: f64) -> Label {
        if p_fake > 0.5 {
            Label::Fake
        } else {
            Label::Real
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s.trim() {
            "0" | "real" => Some(Label::Real),
            "1" | "fake" => Some(Label::Fake),
            _ => None,
        }
    }
}

/// A fixed-length window of a video: `a` is `T × 136`, `b` is `(T−1) × 136`
/// with `b[i] = a[i+1] − a[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub label: Option<Label>,
    pub source_id: String,
    pub clip_index: usize,
}

impl ClipSample {
    pub fn from_alpha_rows(
        rows: &[FeatureVectorA],
        label: Option<Label>,
        source_id: impl Into<String>,
        clip_index: usize,
    ) -> Self {
        let t = rows.len();
        let mut a = Array2::zeros((t, FEATURE_DIM));
        let mut b = Array2::zeros((t.saturating_sub(1), FEATURE_DIM));
        for (i, row) in rows.iter().enumerate() {
            a.row_mut(i).assign(&ndarray::aview1(&row.0));
            if i + 1 < t {
                b.row_mut(i).assign(&ndarray::aview1(&embed_beta(&rows[i + 1], row).0));
            }
        }
        ClipSample { a, b, label, source_id: source_id.into(), clip_index }
    }

    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }
}

/// Aligns every frame to `template` and cuts windows of `length` frames every
/// `stride` frames. A trailing partial window is dropped.
pub fn segment_clips(
    sequence: &LandmarkSequence,
    template: &CanonicalTemplate,
    length: usize,
    stride: usize,
    label: Option<Label>,
    source_id: &str,
) -> Result<Vec<ClipSample>> {
    if length < 2 || stride == 0 {
        return Err(Error::Config(format!("clip length must be >= 2 and stride >= 1 (got {length}, {stride})")));
    }
    if sequence.len() < length {
        return Err(Error::SequenceTooShort { frames: sequence.len(), length });
    }
    let alpha: Vec<FeatureVectorA> = sequence
        .sets()
        .map(|s| align_landmarks(s, template).map(|a| embed_alpha(&a)))
        .collect::<Result<_>>()?;
    Ok((0..=(alpha.len() - length) / stride)
        .map(|i| {
            let start = i * stride;
            ClipSample::from_alpha_rows(&alpha[start..start + length], label, source_id, i)
        })
        .collect())
}
