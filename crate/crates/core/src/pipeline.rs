//! End-to-end runs over many videos: calibrate, align, embed, segment,
//! predict and aggregate. Per-video failures are collected, not fatal.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::{calibrate_sequence, FrameSource};
use crate::classifier::{aggregate_predictions, train_split, Prediction, TrainLog, TwoStreamModel};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{segment_clips, CanonicalTemplate, ClipSample, Label};
use crate::io::VideoRecord;
use crate::landmarks::LandmarkSequence;
use crate::metrics::{compute_accuracy, compute_auc, MetricsReport};

/// Frames used to estimate the template: every `TEMPLATE_FRAME_STEP`-th frame
/// of every training video.
const TEMPLATE_FRAME_STEP: usize = 10;

/// One video to process. Without frames the landmarks are used as given
/// (already calibrated, or calibration deliberately skipped).
pub struct VideoJob<'a> {
    pub id: String,
    pub label: Option<Label>,
    pub sequence: &'a LandmarkSequence,
    pub frames: Option<&'a (dyn FrameSource + Sync)>,
}

impl<'a> VideoJob<'a> {
    pub fn from_record(record: &'a VideoRecord) -> Self {
        VideoJob { id: record.id.clone(), label: record.label, sequence: &record.sequence, frames: None }
    }
}

/// Calibrates (when frames are available) and cuts the video into clips.
pub fn prepare_clips(job: &VideoJob<'_>, template: &CanonicalTemplate, cfg: &RunConfig, stride: usize) -> Result<Vec<ClipSample>> {
    let calibrated;
    let seq = match job.frames {
        Some(frames) => {
            calibrated = calibrate_sequence(job.sequence, frames, &cfg.lk, cfg.calibration.q)?;
            &calibrated
        }
        None => job.sequence,
    };
    segment_clips(seq, template, cfg.clips.length, stride, job.label, &job.id)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoVerdict {
    pub id: String,
    pub truth: Option<Label>,
    pub prediction: Prediction,
    pub clips: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectReport {
    /// Sorted by video id.
    pub verdicts: Vec<VideoVerdict>,
    /// `(video id, message)`, sorted by video id.
    pub errors: Vec<(String, String)>,
}

pub fn detect_video(model: &TwoStreamModel, job: &VideoJob<'_>, cfg: &RunConfig) -> Result<VideoVerdict> {
    let template = model.template.as_ref().ok_or_else(|| Error::Model("model carries no template".into()))?;
    let clips = prepare_clips(job, template, cfg, cfg.clips.stride)?;
    if clips.first().is_some_and(|c| c.len() != model.input_length) {
        return Err(Error::Model(format!(
            "clip length {} differs from the model's {}",
            clips[0].len(),
            model.input_length
        )));
    }
    let preds = model.predict_clips(&clips)?;
    let prediction = aggregate_predictions(&preds).ok_or(Error::EmptyClipList)?;
    Ok(VideoVerdict { id: job.id.clone(), truth: job.label, prediction, clips: preds })
}

/// Runs every job independently (in parallel) and assembles an order-stable report.
pub fn detect_videos(model: &TwoStreamModel, jobs: &[VideoJob<'_>], cfg: &RunConfig) -> DetectReport {
    let results: Vec<(String, Result<VideoVerdict>)> =
        jobs.par_iter().map(|j| (j.id.clone(), detect_video(model, j, cfg))).collect();
    let mut report = DetectReport::default();
    for (id, r) in results {
        match r {
            Ok(v) => report.verdicts.push(v),
            Err(e) => report.errors.push((id.clone(), e.in_video(id).to_string())),
        }
    }
    report.verdicts.sort_by(|a, b| a.id.cmp(&b.id));
    report.errors.sort();
    report
}

impl DetectReport {
    /// Metrics over labeled videos; `None` when nothing is labeled.
    /// AUCs are `None` when only one class is present.
    pub fn metrics(&self) -> Option<MetricsReport> {
        let labeled: Vec<&VideoVerdict> = self.verdicts.iter().filter(|v| v.truth.is_some()).collect();
        if labeled.is_empty() {
            return None;
        }
        let mut clip_scores = Vec::new();
        let mut clip_pred = Vec::new();
        let mut clip_truth = Vec::new();
        for v in &labeled {
            for c in &v.clips {
                clip_scores.push(c.p_fake);
                clip_pred.push(c.label);
                clip_truth.push(v.truth.unwrap());
            }
        }
        let video_truth: Vec<Label> = labeled.iter().map(|v| v.truth.unwrap()).collect();
        let video_scores: Vec<f64> = labeled.iter().map(|v| v.prediction.p_fake).collect();
        let video_pred: Vec<Label> = labeled.iter().map(|v| v.prediction.label).collect();
        Some(MetricsReport {
            clip_auc: compute_auc(&clip_scores, &clip_truth).ok(),
            clip_accuracy: compute_accuracy(&clip_pred, &clip_truth).ok()?,
            video_auc: compute_auc(&video_scores, &video_truth).ok(),
            video_accuracy: compute_accuracy(&video_pred, &video_truth).ok()?,
            clips: clip_truth.len(),
            videos: labeled.len(),
            real_videos: video_truth.iter().filter(|l| **l == Label::Real).count(),
            fake_videos: video_truth.iter().filter(|l| **l == Label::Fake).count(),
        })
    }

    /// Verdict table: `video_id,truth,p_fake,p_fake_shape,p_fake_speed,label,clips`.
    pub fn verdict_csv(&self) -> String {
        let mut out = String::from("video_id,truth,p_fake,p_fake_shape,p_fake_speed,label,clips\n");
        for v in &self.verdicts {
            let p = &v.prediction;
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                v.id,
                v.truth.map_or("", Label::as_str),
                p.p_fake,
                p.p_fake_shape,
                p.p_fake_speed,
                p.label.as_str(),
                v.clips.len()
            )
            .unwrap();
        }
        out
    }

    /// Per-clip table: `video_id,clip_index,p_fake,p_fake_shape,p_fake_speed,label`.
    pub fn clip_csv(&self) -> String {
        let mut out = String::from("video_id,clip_index,p_fake,p_fake_shape,p_fake_speed,label\n");
        for v in &self.verdicts {
            for (i, p) in v.clips.iter().enumerate() {
                writeln!(out, "{},{i},{},{},{},{}", v.id, p.p_fake, p.p_fake_shape, p.p_fake_speed, p.label.as_str())
                    .unwrap();
            }
        }
        out
    }

    pub fn error_csv(&self) -> String {
        let mut out = String::from("video_id,error\n");
        for (id, e) in &self.errors {
            writeln!(out, "{id},\"{}\"", e.replace('"', "'")).unwrap();
        }
        out
    }
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        format!(
            "level,auc,accuracy,count,real,fake\nclip,{},{},{},,\nvideo,{},{},{},{},{}\n",
            opt(self.clip_auc),
            self.clip_accuracy,
            self.clips,
            opt(self.video_auc),
            self.video_accuracy,
            self.videos,
            self.real_videos,
            self.fake_videos
        )
    }
}

/// Splits videos by id into train and validation sets, estimates the template
/// from the training videos, segments both sides and trains.
pub fn train_from_videos(videos: &[VideoRecord], cfg: &RunConfig) -> Result<(TwoStreamModel, TrainLog)> {
    cfg.validate()?;
    let labeled: Vec<&VideoRecord> = videos.iter().filter(|v| v.label.is_some()).collect();
    if labeled.iter().map(|v| v.label).collect::<BTreeSet<_>>().len() < 2 {
        return Err(Error::SingleClassDataset);
    }
    let train_ids = split_video_ids(&labeled, cfg.train.split_fraction, cfg.train.seed);
    let (train_v, val_v): (Vec<&VideoRecord>, Vec<&VideoRecord>) =
        labeled.iter().partition(|v| train_ids.contains(&v.id));

    let template_sets = train_v.iter().flat_map(|v| v.sequence.sets().step_by(TEMPLATE_FRAME_STEP));
    let template = CanonicalTemplate::estimate(template_sets, format!("gpa over {} training videos", train_v.len()))?;

    let clips_of = |set: &[&VideoRecord], stride: usize| -> Result<Vec<ClipSample>> {
        let mut out = Vec::new();
        for v in set {
            match segment_clips(&v.sequence, &template, cfg.clips.length, stride, v.label, &v.id) {
                Ok(c) => out.extend(c),
                Err(Error::SequenceTooShort { .. }) => {}
                Err(e) => return Err(e.in_video(&v.id)),
            }
        }
        Ok(out)
    };
    let train_clips = clips_of(&train_v, cfg.clips.train_stride)?;
    let val_clips = clips_of(&val_v, cfg.clips.stride)?;
    if train_clips.is_empty() {
        return Err(Error::EmptyClipList);
    }
    train_split(&train_clips, &val_clips, Some(template), &cfg.train)
}

/// Class-stratified, seeded split of video ids.
pub fn split_video_ids(videos: &[&VideoRecord], fraction: f64, seed: u64) -> BTreeSet<String> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b17);
    let mut train = BTreeSet::new();
    for label in [Label::Real, Label::Fake] {
        let mut ids: Vec<&str> = videos.iter().filter(|v| v.label == Some(label)).map(|v| v.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.shuffle(&mut rng);
        let n = ((ids.len() as f64) * fraction).round() as usize;
        train.extend(ids[..n].iter().map(|s| s.to_string()));
    }
    train
}
