use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("pyramid too deep: level {level} would be {width}x{height}, smaller than the {min}px patch")]
    PyramidTooDeep {
        level: usize,
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("degenerate hessian (det = {det:e})")]
    DegenerateHessian { det: f64 },

    #[error("no frame image for landmark record {frame_index}")]
    MissingFrame { frame_index: u64 },

    #[error("degenerate landmark shape: points are coincident")]
    DegenerateShape,

    #[error("sequence too short: {frames} frames, clip length {length}")]
    SequenceTooShort { frames: usize, length: usize },

    #[error("dataset contains a single class")]
    SingleClassDataset,

    #[error("empty clip list")]
    EmptyClipList,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("trajectory leaves the image: frame {frame} point ({x:.2}, {y:.2})")]
    OutOfBounds { frame: usize, x: f64, y: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: expected 68 coordinate pairs, found {found} values")]
    WrongPointCount { line: usize, found: usize },

    #[error("unsupported {kind} format version {found} (this build reads up to {supported})")]
    UnsupportedVersion {
        kind: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("model: {0}")]
    Model(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("video {video}: {source}")]
    Video {
        video: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_video(self, video: impl Into<String>) -> Self {
        Error::Video {
            video: video.into(),
            source: Box::new(self),
        }
    }
}
