use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lrnet_core::calibration::{calibrate_sequence, FrameSource};
use lrnet_core::classifier::TrainLog;
use lrnet_core::config::RunConfig;
use lrnet_core::geometry::segment_clips;
use lrnet_core::io::{self, FrameDir, VideoRecord};
use lrnet_core::lk::track_points;
use lrnet_core::pipeline::{detect_videos, train_from_videos, DetectReport, VideoJob};
use lrnet_core::synth::{self, SynthLandmarkSpec, SynthMotionSpec};
use lrnet_core::{Displacement, LandmarkFrame, LandmarkSequence, LandmarkSet, Point};
use serde::Deserialize;

use crate::SynthKind;

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "video".into(), |s| s.to_string_lossy().into_owned())
}

/// Tracks the landmarks of every record into the next record's frame. The
/// first record is copied unchanged; later records carry the tracked points
/// and the forward-backward validity flags.
pub fn track(frames: &Path, landmarks: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    cfg.lk.validate()?;
    let dir = FrameDir::open(frames)?;
    let seq = io::read_landmarks(landmarks)?;
    let mut result = LandmarkSequence::new();
    let records = seq.frames();
    if let Some(first) = records.first() {
        result.push_frame(LandmarkFrame { validity: None, ..first.clone() })?;
        let load = |i: u64| -> Result<_> {
            let f = dir.frame(i)?.ok_or(lrnet_core::Error::MissingFrame { frame_index: i })?;
            Ok(cfg.lk.build_pyramid(&f)?)
        };
        let mut prev_pyr = load(first.index)?;
        for w in records.windows(2) {
            let next_pyr = load(w[1].index)?;
            let tracks = track_points(&prev_pyr, &next_pyr, w[0].landmarks.points(), &cfg.lk);
            let pts: Vec<Point> = tracks.iter().map(|t| t.predicted).collect();
            let mut valid = [false; lrnet_core::NUM_LANDMARKS];
            for (v, t) in valid.iter_mut().zip(&tracks) {
                *v = t.valid;
            }
            result.push_frame(LandmarkFrame { index: w[1].index, landmarks: LandmarkSet::from_points(&pts)?, validity: Some(valid) })?;
            prev_pyr = next_pyr;
        }
    }
    io::write_landmarks(&result, out)?;
    Ok(())
}

pub fn calibrate(frames: &Path, landmarks: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let dir = FrameDir::open(frames)?;
    let seq = io::read_landmarks(landmarks)?;
    let calibrated = calibrate_sequence(&seq, &dir, &cfg.lk, cfg.calibration.q)?;
    io::write_landmarks(&calibrated, out)?;
    Ok(())
}

pub fn embed(landmarks: &Path, template: Option<&Path>, model: Option<&Path>, out: &Path, cfg: &RunConfig) -> Result<()> {
    let template = match (template, model) {
        (Some(t), _) => io::read_template(t)?,
        (None, Some(m)) => io::read_model(m)?.template.context("model carries no template")?,
        (None, None) => bail!("--template or --model is required"),
    };
    let seq = io::read_landmarks(landmarks)?;
    let clips = segment_clips(&seq, &template, cfg.clips.length, cfg.clips.stride, None, &stem(landmarks))?;
    io::write_clips(&clips, out)?;
    Ok(())
}

/// Spec for `synth --kind frames`: a textured sequence translated by a constant
/// step per frame, with the reference face placed at the image center as the
/// tracked points.
#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FrameSynthSpec {
    width: usize,
    height: usize,
    frames: usize,
    texture_seed: u64,
    blur_sigma: f64,
    noise_sigma: f64,
    dx: f64,
    dy: f64,
    face_scale: f64,
}

impl Default for FrameSynthSpec {
    fn default() -> Self {
        FrameSynthSpec {
            width: 256,
            height: 256,
            frames: 30,
            texture_seed: 0,
            blur_sigma: 1.5,
            noise_sigma: 0.0,
            dx: 0.5,
            dy: -0.25,
            face_scale: 1.5,
        }
    }
}

fn read_spec<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

pub fn synth(kind: SynthKind, spec: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    match kind {
        SynthKind::Landmarks => {
            let mut spec: SynthLandmarkSpec = read_spec(spec)?;
            spec.seed = seed.unwrap_or(spec.seed);
            let videos: Vec<VideoRecord> = synth::synth_landmark_dataset(&spec)?.into_iter().map(VideoRecord::from).collect();
            io::write_dataset(&videos, out)?;
        }
        SynthKind::Frames => {
            let spec: FrameSynthSpec = read_spec(spec)?;
            if spec.frames == 0 {
                bail!("frames must be at least 1");
            }
            let center = Point::new(spec.width as f64 / 2.0, spec.height as f64 / 2.0);
            let face = synth::reference_face().map(|p| p * spec.face_scale + center)?;
            let motion = SynthMotionSpec {
                width: spec.width,
                height: spec.height,
                channels: 1,
                texture_seed: seed.unwrap_or(spec.texture_seed),
                blur_sigma: spec.blur_sigma,
                displacements: vec![Displacement::new(spec.dx, spec.dy); spec.frames - 1],
                noise_sigma: spec.noise_sigma,
                points: face.points().to_vec(),
                ..SynthMotionSpec::default()
            };
            let s = synth::synth_textured_sequence(&motion)?;
            io::write_frame_dir(&s.frames, &out.join("frames"))?;
            let sets = s.trajectories.iter().map(|t| LandmarkSet::from_points(t)).collect::<Result<Vec<_>, _>>()?;
            io::write_landmarks(&LandmarkSequence::from_sets(sets), &out.join("landmarks.lmk"))?;
        }
    }
    Ok(())
}

fn log_csv(log: &TrainLog) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut out = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for e in &log.epochs {
        writeln!(out, "{},{},{},{}", e.epoch, e.train_loss, opt(e.val_loss), opt(e.val_accuracy)).unwrap();
    }
    out
}

pub fn train(data: &Path, out: &Path, log: Option<&Path>, cfg: &RunConfig) -> Result<()> {
    let videos = io::read_dataset(data)?;
    let (model, train_log) = train_from_videos(&videos, cfg)?;
    io::write_model(&model, out)?;
    if let Some(p) = log {
        write(p, &log_csv(&train_log))?;
    }
    let best = train_log.epochs.iter().find(|e| e.epoch == train_log.best_epoch).context("empty training log")?;
    eprintln!(
        "trained {} epochs on {} videos; kept epoch {} (val accuracy {})",
        train_log.epochs.len(),
        train_log.train_sources.len(),
        best.epoch,
        best.val_accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
    );
    Ok(())
}

fn report_errors(report: &DetectReport) {
    for (_, e) in &report.errors {
        eprintln!("skipped: {e}");
    }
}

pub fn eval(model: &Path, data: &Path, report: &Path, verdicts: Option<&Path>, cfg: &RunConfig) -> Result<()> {
    let model = io::read_model(model)?;
    let videos = io::read_dataset(data)?;
    let jobs: Vec<VideoJob> = videos.iter().map(VideoJob::from_record).collect();
    let result = detect_videos(&model, &jobs, cfg);
    report_errors(&result);
    let metrics = result.metrics().context("no labeled video could be scored")?;
    write(report, &metrics.to_csv())?;
    if let Some(p) = verdicts {
        write(p, &result.verdict_csv())?;
    }
    Ok(())
}

pub enum DetectInput {
    Single { landmarks: PathBuf, frames: Option<PathBuf> },
    Dataset { data: PathBuf, frames_root: Option<PathBuf> },
}

pub fn detect(
    model: &Path,
    input: DetectInput,
    out: &Path,
    clips: Option<&Path>,
    report: Option<&Path>,
    cfg: &RunConfig,
) -> Result<()> {
    cfg.validate()?;
    let model = io::read_model(model)?;
    let (videos, frame_dirs): (Vec<VideoRecord>, Vec<Option<PathBuf>>) = match input {
        DetectInput::Single { landmarks, frames } => {
            let sequence = io::read_landmarks(&landmarks)?;
            (vec![VideoRecord { id: stem(&landmarks), label: None, sequence }], vec![frames])
        }
        DetectInput::Dataset { data, frames_root } => {
            let videos = io::read_dataset(&data)?;
            let dirs = videos.iter().map(|v| frames_root.as_ref().map(|r| r.join(&v.id))).collect();
            (videos, dirs)
        }
    };
    let mut opened = Vec::with_capacity(videos.len());
    let mut open_errors = Vec::new();
    for (v, dir) in videos.iter().zip(&frame_dirs) {
        match dir.as_deref().map(FrameDir::open).transpose() {
            Ok(d) => opened.push(Some((v, d))),
            Err(e) => {
                open_errors.push((v.id.clone(), e.in_video(&v.id).to_string()));
                opened.push(None);
            }
        }
    }
    let jobs: Vec<VideoJob> = opened
        .iter()
        .flatten()
        .map(|(v, d)| VideoJob {
            frames: d.as_ref().map(|d| d as &(dyn FrameSource + Sync)),
            ..VideoJob::from_record(v)
        })
        .collect();
    let mut result = detect_videos(&model, &jobs, cfg);
    result.errors.extend(open_errors);
    result.errors.sort();
    report_errors(&result);
    if result.verdicts.is_empty() {
        bail!("no video could be scored");
    }
    write(out, &result.verdict_csv())?;
    if let Some(p) = clips {
        write(p, &result.clip_csv())?;
    }
    if let Some(p) = report {
        match result.metrics() {
            Some(m) => write(p, &m.to_csv())?,
            None => eprintln!("no labeled videos; {} not written", p.display()),
        }
    }
    Ok(())
}
