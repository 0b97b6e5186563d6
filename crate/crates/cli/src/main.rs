//! `lrnet`: landmark tracking, calibration and forgery detection from the command line.

mod commands;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lrnet_core::config::RunConfig;

#[derive(Parser)]
#[command(name = "lrnet", version, about = "Landmark-based face forgery detection")]
struct Cli {
    /// Run configuration (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (training init, split, synthetic data).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct LkArgs {
    /// Patch half size w (window is (2w+1)²).
    #[arg(long)]
    lk_window: Option<usize>,
    #[arg(long)]
    lk_sigma: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    fb_threshold: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SynthKind {
    Frames,
    Landmarks,
}

#[derive(Subcommand)]
enum Command {
    /// Track each frame's landmarks into the next frame.
    Track {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        lk: LkArgs,
    },
    /// Kalman-calibrate detected landmarks against LK predictions.
    Calibrate {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        q: Option<f64>,
        #[command(flatten)]
        lk: LkArgs,
    },
    /// Align, embed and segment a landmark file; writes the clip features as CSV.
    Embed {
        #[arg(long)]
        landmarks: PathBuf,
        /// Template file, or a model whose template is used.
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        template: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Generate a synthetic frame sequence or landmark dataset.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        /// Flat key = value spec; missing keys take defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a two-stream model on a labeled dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// GRU hidden units.
        #[arg(long)]
        k: Option<usize>,
        /// Per-epoch losses as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a labeled dataset and write clip and video metrics.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        verdicts: Option<PathBuf>,
    },
    /// Full pipeline: calibrate (with frames), align, embed, predict, aggregate.
    Detect {
        #[arg(long)]
        model: PathBuf,
        /// Single video: its frame directory.
        #[arg(long, requires = "landmarks", conflicts_with = "data")]
        frames: Option<PathBuf>,
        /// Single video: its landmark file.
        #[arg(long, required_unless_present = "data")]
        landmarks: Option<PathBuf>,
        /// Dataset directory; many videos.
        #[arg(long)]
        data: Option<PathBuf>,
        /// With --data: `<root>/<video_id>/` holds each video's frames.
        #[arg(long, requires = "data")]
        frames_root: Option<PathBuf>,
        /// Verdict table (video_id,truth,p_fake,label).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        clips: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("setting up worker threads")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    use commands as c;
    match cli.command {
        Command::Track { frames, landmarks, out, lk } => {
            lk.apply(&mut cfg);
            c::track(&frames, &landmarks, &out, &cfg)
        }
        Command::Calibrate { frames, landmarks, out, q, lk } => {
            lk.apply(&mut cfg);
            if let Some(q) = q {
                cfg.calibration.q = q;
            }
            c::calibrate(&frames, &landmarks, &out, &cfg)
        }
        Command::Embed { landmarks, template, model, out, length, stride } => {
            if let Some(l) = length {
                cfg.clips.length = l;
            }
            if let Some(s) = stride {
                cfg.clips.stride = s;
            }
            c::embed(&landmarks, template.as_deref(), model.as_deref(), &out, &cfg)
        }
        Command::Synth { kind, spec, out } => c::synth(kind, spec.as_deref(), &out, cli.seed),
        Command::Train { data, out, lr, batch, epochs, k, log } => {
            let t = &mut cfg.train;
            t.lr = lr.unwrap_or(t.lr);
            t.batch_size = batch.unwrap_or(t.batch_size);
            t.max_epochs = epochs.unwrap_or(t.max_epochs);
            t.hidden = k.unwrap_or(t.hidden);
            c::train(&data, &out, log.as_deref(), &cfg)
        }
        Command::Eval { model, data, report, verdicts } => c::eval(&model, &data, &report, verdicts.as_deref(), &cfg),
        Command::Detect { model, frames, landmarks, data, frames_root, out, clips, report } => {
            let input = match (data, landmarks) {
                (Some(data), _) => c::DetectInput::Dataset { data, frames_root },
                (None, Some(landmarks)) => c::DetectInput::Single { landmarks, frames },
                (None, None) => unreachable!("clap requires --data or --landmarks"),
            };
            c::detect(&model, input, &out, clips.as_deref(), report.as_deref(), &cfg)
        }
    }
}

impl LkArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let lk = &mut cfg.lk;
        lk.half_size = self.lk_window.unwrap_or(lk.half_size);
        lk.sigma = self.lk_sigma.unwrap_or(lk.sigma);
        lk.levels = self.levels.unwrap_or(lk.levels);
        lk.fb_threshold = self.fb_threshold.unwrap_or(lk.fb_threshold);
    }
}
