use crate::error::{Error, Result};
use crate::point::Point;

pub const NUM_LANDMARKS: usize = 68;
/// Length of a flattened landmark set: `[x¹, y¹, …, x⁶⁸, y⁶⁸]`.
pub const FEATURE_DIM: usize = 2 * NUM_LANDMARKS;

/// The 68 points of the standard facial landmark layout for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: [Point; NUM_LANDMARKS],
}

impl LandmarkSet {
    pub fn new(points: [Point; NUM_LANDMARKS]) -> Result<Self> {
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidFrame("non-finite landmark coordinate".into()));
        }
        Ok(LandmarkSet { points })
    }

    pub fn from_points(points: &[Point]) -> Result<Self> {
        let arr: [Point; NUM_LANDMARKS] = points
            .try_into()
            .map_err(|_| Error::LengthMismatch { left: points.len(), right: NUM_LANDMARKS })?;
        LandmarkSet::new(arr)
    }

    /// Inverse of [`LandmarkSet::flatten`].
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::LengthMismatch { left: values.len(), right: FEATURE_DIM });
        }
        let mut points = [Point::ZERO; NUM_LANDMARKS];
        for (p, xy) in points.iter_mut().zip(values.chunks_exact(2)) {
            *p = Point::new(xy[0], xy[1]);
        }
        LandmarkSet::new(points)
    }

    pub fn points(&self) -> &[Point; NUM_LANDMARKS] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn set_point(&mut self, i: usize, p: Point) {
        assert!(p.is_finite(), "non-finite landmark");
        self.points[i] = p;
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Result<Self> {
        LandmarkSet::new(self.points.map(f))
    }

    pub fn flatten(&self) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        for (xy, p) in out.chunks_exact_mut(2).zip(&self.points) {
            xy[0] = p.x;
            xy[1] = p.y;
        }
        out
    }

    pub fn centroid(&self) -> Point {
        let n = NUM_LANDMARKS as f64;
        let (sx, sy) = self.points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
        Point::new(sx / n, sy / n)
    }
}

/// Frames of landmarks in strictly increasing frame-index order, with an
/// optional per-point validity flag (set by the tracker).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkSequence {
    frames: Vec<LandmarkFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    pub index: u64,
    pub landmarks: LandmarkSet,
    pub validity: Option<[bool; NUM_LANDMARKS]>,
}

impl LandmarkSequence {
    pub fn new() -> Self {
        LandmarkSequence::default()
    }

    pub fn from_sets(sets: impl IntoIterator<Item = LandmarkSet>) -> Self {
        LandmarkSequence {
            frames: sets
                .into_iter()
                .enumerate()
                .map(|(i, landmarks)| LandmarkFrame { index: i as u64 + 1, landmarks, validity: None })
                .collect(),
        }
    }

    pub fn push(&mut self, index: u64, landmarks: LandmarkSet) -> Result<()> {
        self.push_frame(LandmarkFrame { index, landmarks, validity: None })
    }

    pub fn push_frame(&mut self, frame: LandmarkFrame) -> Result<()> {
        if let Some(last) = self.frames.last() {
            if frame.index <= last.index {
                return Err(Error::Config(format!(
                    "frame indices must increase strictly ({} after {})",
                    frame.index, last.index
                )));
            }
        }
        self.frames.push(frame);
        Ok(())
    }

    pub fn frames(&self) -> &[LandmarkFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn sets(&self) -> impl Iterator<Item = &LandmarkSet> {
        self.frames.iter().map(|f| &f.landmarks)
    }

    pub fn indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.frames.iter().map(|f| f.index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbered() -> LandmarkSet {
        let pts: Vec<Point> = (0..NUM_LANDMARKS)
            .map(|i| Point::new(2.0 * i as f64 + 1.0, 2.0 * i as f64 + 2.0))
            .collect();
        LandmarkSet::from_points(&pts).unwrap()
    }

    #[test]
    fn flatten_interleaves_coordinates() {
        let flat = numbered().flatten();
        assert_eq!(&flat[..4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(flat[FEATURE_DIM - 1], 136.0);
        assert_eq!(LandmarkSet::from_flat(&flat).unwrap(), numbered());
    }

    #[test]
    fn wrong_sizes_rejected() {
        assert!(LandmarkSet::from_points(&[Point::ZERO; 67]).is_err());
        assert!(LandmarkSet::from_flat(&[0.0; 135]).is_err());
    }

    #[test]
    fn indices_must_increase() {
        let mut s = LandmarkSequence::new();
        s.push(3, numbered()).unwrap();
        assert!(s.push(3, numbered()).is_err());
        assert!(s.push(2, numbered()).is_err());
        s.push(7, numbered()).unwrap();
        assert_eq!(s.indices().collect::<Vec<_>>(), vec![3, 7]);
    }
}
