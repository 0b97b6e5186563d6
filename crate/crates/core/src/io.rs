//! Version-stamped text formats: landmark files, templates, model files,
//! datasets and frame directories.
//!
//! Reals are written in Rust's shortest round-trip form, so every `f64`
//! survives a write/read cycle bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::FrameSource;
use crate::classifier::{Normalizer, StreamSelection, TwoStreamModel, TwoStreamParams, Parameters};
use crate::error::{Error, Result};
use crate::geometry::{CanonicalTemplate, ClipSample, Label};
use crate::landmarks::{LandmarkFrame, LandmarkSequence, LandmarkSet, FEATURE_DIM, NUM_LANDMARKS};
use crate::pyramid::Frame;

pub const LANDMARK_FORMAT_VERSION: u32 = 1;
pub const TEMPLATE_FORMAT_VERSION: u32 = 1;
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DATASET_FORMAT_VERSION: u32 = 1;

const LANDMARK_KIND: &str = "landmarks";
const TEMPLATE_KIND: &str = "template";
const MODEL_KIND: &str = "model";
const DATASET_KIND: &str = "dataset";

fn header(kind: &str, version: u32) -> String {
    format!("# lrnet-{kind} v{version}")
}

/// Returns the version if `line` is a header for `kind`.
/// A header for a newer version than `supported` is an error.
fn check_header(line: &str, kind: &'static str, supported: u32, line_no: usize) -> Result<Option<u32>> {
    let rest = match line.trim().strip_prefix("# lrnet-").and_then(|r| r.strip_prefix(kind)) {
        Some(r) => r.trim(),
        None => return Ok(None),
    };
    let found: u32 = rest
        .strip_prefix('v')
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse { line: line_no, message: format!("bad {kind} header `{}`", line.trim()) })?;
    if found > supported {
        return Err(Error::UnsupportedVersion { kind, found, supported });
    }
    Ok(Some(found))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_f64(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token.parse().map_err(|_| Error::Parse { line, message: format!("not a number: `{token}`") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, message: format!("non-finite value `{token}`") });
    }
    Ok(v)
}

// ---------------------------------------------------------------- landmarks

/// Parses a landmark document. Each data line is
/// `frame_index x1 y1 … x68 y68 [valid=<68 0/1 flags>]`; `#` lines are
/// comments, except the optional version header.
pub fn parse_landmarks(text: &str) -> Result<LandmarkSequence> {
    let mut seq = LandmarkSequence::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            check_header(line, LANDMARK_KIND, LANDMARK_FORMAT_VERSION, line_no)?;
            continue;
        }
        let mut tokens: Vec<&str> = line.split_whitespace().collect();
        let mut validity = None;
        if let Some(flags) = tokens.last().and_then(|t| t.strip_prefix("valid=")) {
            let bits: Vec<bool> = flags
                .chars()
                .map(|c| match c {
                    '1' => Ok(true),
                    '0' => Ok(false),
                    _ => Err(Error::Parse { line: line_no, message: format!("bad validity flag `{c}`") }),
                })
                .collect::<Result<_>>()?;
            let bits: [bool; NUM_LANDMARKS] = bits.try_into().map_err(|b: Vec<bool>| Error::Parse {
                line: line_no,
                message: format!("validity bitmap has {} flags, expected {NUM_LANDMARKS}", b.len()),
            })?;
            validity = Some(bits);
            tokens.pop();
        }
        let index: u64 = tokens[0]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, message: format!("bad frame index `{}`", tokens[0]) })?;
        let coords = &tokens[1..];
        if coords.len() % 2 != 0 {
            return Err(Error::Parse { line: line_no, message: format!("odd number of coordinates ({})", coords.len()) });
        }
        if coords.len() != FEATURE_DIM {
            return Err(Error::WrongPointCount { line: line_no, found: coords.len() / 2 });
        }
        let values: Vec<f64> = coords.iter().map(|t| parse_f64(t, line_no)).collect::<Result<_>>()?;
        let landmarks = LandmarkSet::from_flat(&values)?;
        if seq.frames().last().is_some_and(|f| f.index >= index) {
            return Err(Error::Parse { line: line_no, message: format!("frame index {index} is not increasing") });
        }
        seq.push_frame(LandmarkFrame { index, landmarks, validity })?;
    }
    Ok(seq)
}

pub fn format_landmarks(seq: &LandmarkSequence) -> String {
    let mut out = header(LANDMARK_KIND, LANDMARK_FORMAT_VERSION);
    out.push('\n');
    for f in seq.frames() {
        write!(out, "{}", f.index).unwrap();
        for v in f.landmarks.flatten() {
            write!(out, " {v}").unwrap();
        }
        if let Some(valid) = &f.validity {
            out.push_str(" valid=");
            out.extend(valid.iter().map(|&b| if b { '1' } else { '0' }));
        }
        out.push('\n');
    }
    out
}

pub fn read_landmarks(path: &Path) -> Result<LandmarkSequence> {
    parse_landmarks(&read_text(path)?).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse { line, message: format!("{}: {message}", path.display()) },
        other => other,
    })
}

pub fn write_landmarks(seq: &LandmarkSequence, path: &Path) -> Result<()> {
    write_text(path, &format_landmarks(seq))
}

// ----------------------------------------------------------------- template

pub fn format_template(t: &CanonicalTemplate) -> String {
    let mut out = header(TEMPLATE_KIND, TEMPLATE_FORMAT_VERSION);
    writeln!(out, "\nprovenance {}", t.provenance().replace('\n', " ")).unwrap();
    for p in t.shape().points() {
        writeln!(out, "{} {}", p.x, p.y).unwrap();
    }
    out
}

pub fn parse_template(text: &str) -> Result<CanonicalTemplate> {
    let mut provenance = String::new();
    let mut values = Vec::with_capacity(FEATURE_DIM);
    let mut saw_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            saw_header |= check_header(line, TEMPLATE_KIND, TEMPLATE_FORMAT_VERSION, i + 1)?.is_some();
            continue;
        }
        if let Some(p) = line.strip_prefix("provenance") {
            provenance = p.trim().to_string();
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 2 {
            return Err(Error::Parse { line: i + 1, message: "expected `x y`".into() });
        }
        values.push(parse_f64(t[0], i + 1)?);
        values.push(parse_f64(t[1], i + 1)?);
    }
    if !saw_header {
        return Err(Error::Parse { line: 1, message: "missing template header".into() });
    }
    if values.len() != FEATURE_DIM {
        return Err(Error::WrongPointCount { line: 0, found: values.len() / 2 });
    }
    CanonicalTemplate::from_normalized(&LandmarkSet::from_flat(&values)?, provenance)
}

pub fn read_template(path: &Path) -> Result<CanonicalTemplate> {
    parse_template(&read_text(path)?)
}

pub fn write_template(t: &CanonicalTemplate, path: &Path) -> Result<()> {
    write_text(path, &format_template(t))
}

// -------------------------------------------------------------------- model

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NormalizerRecord {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TemplateRecord {
    provenance: String,
    points: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    format: String,
    version: u32,
    hidden: usize,
    input_dim: usize,
    input_length: usize,
    streams: StreamSelection,
    shape_normalizer: NormalizerRecord,
    speed_normalizer: NormalizerRecord,
    template: Option<TemplateRecord>,
    tensors: Vec<TensorRecord>,
}

fn norm_record(n: &Normalizer) -> NormalizerRecord {
    NormalizerRecord { mean: n.mean.to_vec(), scale: n.scale.to_vec() }
}

fn norm_from(r: NormalizerRecord, dim: usize) -> Result<Normalizer> {
    if r.mean.len() != dim || r.scale.len() != dim {
        return Err(Error::Model(format!("normalizer must have {dim} entries")));
    }
    Ok(Normalizer { mean: r.mean.into(), scale: r.scale.into() })
}

pub fn model_to_json(model: &TwoStreamModel) -> String {
    let record = ModelRecord {
        format: format!("lrnet-{MODEL_KIND}"),
        version: MODEL_FORMAT_VERSION,
        hidden: model.hidden(),
        input_dim: model.params.input_dim(),
        input_length: model.input_length,
        streams: model.streams,
        shape_normalizer: norm_record(&model.shape_norm),
        speed_normalizer: norm_record(&model.speed_norm),
        template: model.template.as_ref().map(|t| TemplateRecord {
            provenance: t.provenance().to_string(),
            points: t.shape().points().iter().map(|p| [p.x, p.y]).collect(),
        }),
        tensors: model
            .params
            .tensors()
            .into_iter()
            .map(|t| TensorRecord { name: t.name, shape: t.shape, data: t.data.to_vec() })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&record).expect("serializable");
    s.push('\n');
    s
}

pub fn model_from_json(text: &str) -> Result<TwoStreamModel> {
    #[derive(Deserialize)]
    struct Peek {
        format: String,
        version: u32,
    }
    let peek: Peek = serde_json::from_str(text).map_err(|e| Error::Model(format!("not a model file: {e}")))?;
    if peek.format != format!("lrnet-{MODEL_KIND}") {
        return Err(Error::Model(format!("unexpected format `{}`", peek.format)));
    }
    if peek.version > MODEL_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { kind: MODEL_KIND, found: peek.version, supported: MODEL_FORMAT_VERSION });
    }
    let r: ModelRecord = serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
    let mut params = TwoStreamParams::zeros(r.input_dim, r.hidden);
    let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    if expected.len() != r.tensors.len() {
        return Err(Error::Model(format!("expected {} tensors, found {}", expected.len(), r.tensors.len())));
    }
    for ((slot, (name, shape)), t) in params.slices_mut().into_iter().zip(&expected).zip(&r.tensors) {
        if &t.name != name || &t.shape != shape || t.data.len() != slot.len() {
            return Err(Error::Model(format!("tensor `{}` {:?} does not match `{name}` {shape:?}", t.name, t.shape)));
        }
        slot.copy_from_slice(&t.data);
    }
    let template = match r.template {
        None => None,
        Some(t) => {
            let flat: Vec<f64> = t.points.iter().flat_map(|p| *p).collect();
            Some(CanonicalTemplate::from_normalized(&LandmarkSet::from_flat(&flat)?, t.provenance)?)
        }
    };
    Ok(TwoStreamModel {
        params,
        input_length: r.input_length,
        streams: r.streams,
        shape_norm: norm_from(r.shape_normalizer, r.input_dim)?,
        speed_norm: norm_from(r.speed_normalizer, r.input_dim)?,
        template,
    })
}

pub fn read_model(path: &Path) -> Result<TwoStreamModel> {
    model_from_json(&read_text(path)?)
}

pub fn write_model(model: &TwoStreamModel, path: &Path) -> Result<()> {
    write_text(path, &model_to_json(model))
}

// ------------------------------------------------------------------ dataset

/// One video's landmarks with an optional ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub label: Option<Label>,
    pub sequence: LandmarkSequence,
}

impl From<crate::synth::SynthVideo> for VideoRecord {
    fn from(v: crate::synth::SynthVideo) -> Self {
        VideoRecord { id: v.id, label: Some(v.label), sequence: v.sequence }
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !id.starts_with('.')
}

/// A dataset directory holds `labels.csv` (`video_id,label`, label `real`,
/// `fake` or empty) and one `<video_id>.lmk` landmark file per row.
pub fn write_dataset(videos: &[VideoRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = header(DATASET_KIND, DATASET_FORMAT_VERSION);
    csv.push_str("\nvideo_id,label\n");
    for v in videos {
        if !valid_id(&v.id) {
            return Err(Error::Config(format!("video id `{}` is not a safe file name", v.id)));
        }
        writeln!(csv, "{},{}", v.id, v.label.map_or("", Label::as_str)).unwrap();
        write_landmarks(&v.sequence, &dir.join(format!("{}.lmk", v.id)))?;
    }
    write_text(&dir.join("labels.csv"), &csv)
}

pub fn read_dataset(dir: &Path) -> Result<Vec<VideoRecord>> {
    let path = dir.join("labels.csv");
    let text = read_text(&path)?;
    let mut videos = Vec::new();
    let mut saw_columns = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            check_header(line, DATASET_KIND, DATASET_FORMAT_VERSION, i + 1)?;
            continue;
        }
        if !saw_columns {
            if line != "video_id,label" {
                return Err(Error::Parse { line: i + 1, message: "expected `video_id,label` column header".into() });
            }
            saw_columns = true;
            continue;
        }
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse { line: i + 1, message: "expected `video_id,label`".into() })?;
        if !valid_id(id) {
            return Err(Error::Parse { line: i + 1, message: format!("bad video id `{id}`") });
        }
        let label = match label.trim() {
            "" => None,
            l => Some(Label::parse(l).ok_or_else(|| Error::Parse { line: i + 1, message: format!("bad label `{l}`") })?),
        };
        let sequence = read_landmarks(&dir.join(format!("{id}.lmk"))).map_err(|e| e.in_video(id))?;
        videos.push(VideoRecord { id: id.to_string(), label, sequence });
    }
    Ok(videos)
}

/// Clip features as CSV: `source_id,clip_index,stream,t,f0,…,f135`.
pub fn format_clips(clips: &[ClipSample]) -> String {
    let mut out = String::from("source_id,clip_index,stream,t");
    for j in 0..FEATURE_DIM {
        write!(out, ",f{j}").unwrap();
    }
    out.push('\n');
    for c in clips {
        for (stream, m) in [("alpha", &c.a), ("beta", &c.b)] {
            for (t, row) in m.outer_iter().enumerate() {
                write!(out, "{},{},{stream},{t}", c.source_id, c.clip_index).unwrap();
                for v in row {
                    write!(out, ",{v}").unwrap();
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn write_clips(clips: &[ClipSample], path: &Path) -> Result<()> {
    write_text(path, &format_clips(clips))
}

// ------------------------------------------------------------------- frames

const FRAME_EXTENSIONS: [&str; 5] = ["png", "pgm", "ppm", "pnm", "pbm"];

/// Reads an image as single-channel intensity.
pub fn read_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let luma = img.to_luma8();
    Frame::from_u8(luma.width() as usize, luma.height() as usize, 1, luma.as_raw())
}

/// Writes channel 0 as an 8-bit grayscale image, rounding and clamping.
pub fn write_frame(frame: &Frame, path: &Path) -> Result<()> {
    let (w, h) = (frame.width(), frame.height());
    let bytes: Vec<u8> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| frame.pixel(x, y, 0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, bytes).expect("sized buffer");
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Image files of a directory in lexical order; frame `i` (1-based) is the
/// `i`-th file. Frames are decoded on demand.
#[derive(Debug, Clone)]
pub struct FrameDir {
    paths: Vec<PathBuf>,
}

impl FrameDir {
    pub fn open(dir: &Path) -> Result<Self> {
        let mut paths = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let p = entry.map_err(|e| Error::io(dir, e))?.path();
            let ext = p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
            if p.is_file() && ext.is_some_and(|e| FRAME_EXTENSIONS.contains(&e.as_str())) {
                paths.push(p);
            }
        }
        paths.sort();
        Ok(FrameDir { paths })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

impl FrameSource for FrameDir {
    fn frame(&self, index: u64) -> Result<Option<Frame>> {
        match index.checked_sub(1).and_then(|i| self.paths.get(i as usize)) {
            Some(p) => read_frame(p).map(Some),
            None => Ok(None),
        }
    }
}

/// Writes `frames` as `frame_00001.png`, … into `dir`.
pub fn write_frame_dir(frames: &[Frame], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        write_frame(f, &dir.join(format!("frame_{:05}.png", i + 1)))?;
    }
    Ok(())
}
