//! Mini-batch training with Adam, inverted dropout and early stopping on
//! validation accuracy.
//!
//! The reference path is single-threaded: identical seed, data and config
//! produce bit-identical parameters.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::TwoStreamModel;
use super::network::{DropoutRates, Normalizer, StreamSelection};
use crate::error::{Error, Result};
use crate::geometry::{CanonicalTemplate, ClipSample, Label};
use crate::metrics::{compute_accuracy, compute_auc};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout_input: f64,
    pub dropout_hidden: f64,
    /// Apply the hidden-rate dropout to the logits as well.
    pub dropout_logits: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Fraction of source videos used for training; the rest is validation.
    pub split_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// GRU units `k`.
    pub hidden: usize,
    pub streams: StreamSelection,
    /// Fit per-feature standardization of both input streams on the training split.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 1024,
            max_epochs: 500,
            dropout_input: 0.25,
            dropout_hidden: 0.5,
            dropout_logits: true,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            split_fraction: 0.8,
            patience: 50,
            hidden: 64,
            streams: StreamSelection::Both,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be >= 0");
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return bad("batch_size and hidden must be >= 1");
        }
        for (name, r) in [("dropout_input", self.dropout_input), ("dropout_hidden", self.dropout_hidden)] {
            if !(0.0..1.0).contains(&r) {
                return bad(&format!("{name} must be in [0, 1)"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps > 0");
        }
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return bad("split_fraction must be in (0, 1]");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn dropout(&self) -> DropoutRates {
        DropoutRates { input: self.dropout_input, hidden: self.dropout_hidden, on_logits: self.dropout_logits }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_sources: Vec<String>,
    pub validation_sources: Vec<String>,
}

/// Splits source ids (videos) so that all clips of one video land on the same side.
/// Class balance is kept by splitting each class separately.
pub fn split_sources(clips: &[ClipSample], fraction: f64, seed: u64) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut train = BTreeSet::new();
    let mut val = BTreeSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b17);
    for label in [None, Some(Label::Real), Some(Label::Fake)] {
        let mut ids: Vec<&str> = clips
            .iter()
            .filter(|c| c.label == label)
            .map(|c| c.source_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        ids.shuffle(&mut rng);
        let n_train = ((ids.len() as f64) * fraction).round() as usize;
        for (i, id) in ids.into_iter().enumerate() {
            if i < n_train { &mut train } else { &mut val }.insert(id.to_string());
        }
    }
    (train, val)
}

/// Splits by source, then trains. See [`train_split`].
pub fn train(dataset: &[ClipSample], config: &TrainConfig) -> Result<(TwoStreamModel, TrainLog)> {
    let (train_ids, _) = split_sources(dataset, config.split_fraction, config.seed);
    let (tr, va): (Vec<ClipSample>, Vec<ClipSample>) =
        dataset.iter().cloned().partition(|c| train_ids.contains(&c.source_id));
    train_split(&tr, &va, None, config)
}

fn has_both_classes(clips: &[ClipSample]) -> bool {
    let mut seen = [false; 2];
    for c in clips {
        if let Some(l) = c.label {
            seen[l.index()] = true;
        }
    }
    seen == [true, true]
}

struct Eval {
    loss: f64,
    accuracy: f64,
}

fn evaluate(model: &TwoStreamModel, clips: &[ClipSample]) -> Result<Eval> {
    let preds = model.predict_clips(clips)?;
    let labels: Vec<Label> = clips.iter().map(|c| c.label.expect("labeled")).collect();
    let mut loss = 0.0;
    for (p, l) in preds.iter().zip(&labels) {
        let q = if *l == Label::Fake { p.p_fake } else { 1.0 - p.p_fake };
        loss -= q.max(1e-300).ln();
    }
    let predicted: Vec<Label> = preds.iter().map(|p| p.label).collect();
    Ok(Eval { loss: loss / clips.len() as f64, accuracy: compute_accuracy(&predicted, &labels)? })
}

/// Trains on `train` and selects the epoch with the best validation accuracy
/// (ties broken by lower validation loss). Stops after `patience` epochs
/// without a gain in validation accuracy. With an empty validation set the last epoch wins.
pub fn train_split(
    train: &[ClipSample],
    validation: &[ClipSample],
    template: Option<CanonicalTemplate>,
    config: &TrainConfig,
) -> Result<(TwoStreamModel, TrainLog)> {
    config.validate()?;
    if train.iter().any(|c| c.label.is_none()) || validation.iter().any(|c| c.label.is_none()) {
        return Err(Error::Model("training clips must be labeled".into()));
    }
    if !has_both_classes(train) {
        return Err(Error::SingleClassDataset);
    }
    let mut model = TwoStreamModel::init(config.hidden, config.seed);
    model.streams = config.streams;
    model.template = template;
    model.input_length = train[0].len();
    if config.standardize {
        let dim = model.params.input_dim();
        model.shape_norm = Normalizer::fit(train.iter().map(|c| c.a.view()), dim);
        model.speed_norm = Normalizer::fit(train.iter().map(|c| c.b.view()), dim);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = AdamState::new(&model.params);
    let adam_cfg = config.adam();
    let rates = config.dropout();
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best: Option<(f64, f64, TwoStreamModel, usize)> = None;
    let mut since_improvement = 0;
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        train_sources: sources(train),
        validation_sources: sources(validation),
    };

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&ClipSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = model.loss_and_grads(&batch, rates, &mut rng)?;
            loss_sum += loss * batch.len() as f64;
            adam_step(&mut model.params, &grads, &mut adam, &adam_cfg);
        }
        let mut record = EpochRecord { epoch, train_loss: loss_sum / train.len() as f64, val_loss: None, val_accuracy: None };
        if validation.is_empty() {
            log.epochs.push(record);
            continue;
        }
        let eval = evaluate(&model, validation)?;
        record.val_loss = Some(eval.loss);
        record.val_accuracy = Some(eval.accuracy);
        log.epochs.push(record);
        // Patience counts epochs without a gain in accuracy; a lower loss at
        // equal accuracy still replaces the kept model.
        let (better_acc, better) = match &best {
            None => (true, true),
            Some((acc, loss, ..)) => (eval.accuracy > *acc, eval.accuracy > *acc || (eval.accuracy == *acc && eval.loss < *loss)),
        };
        if better {
            best = Some((eval.accuracy, eval.loss, model.clone(), epoch));
        }
        if better_acc {
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= config.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    match best {
        Some((_, _, m, epoch)) => {
            log.best_epoch = epoch;
            Ok((m, log))
        }
        None => {
            log.best_epoch = log.epochs.len();
            Ok((model, log))
        }
    }
}

fn sources(clips: &[ClipSample]) -> Vec<String> {
    clips.iter().map(|c| c.source_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Clip-level AUC of `model` on labeled clips.
pub fn clip_auc(model: &TwoStreamModel, clips: &[ClipSample]) -> Result<f64> {
    let preds = model.predict_clips(clips)?;
    let scores: Vec<f64> = preds.iter().map(|p| p.p_fake).collect();
    let labels: Vec<Label> = clips.iter().map(|c| c.label.ok_or(Error::Model("unlabeled clip".into()))).collect::<Result<_>>()?;
    compute_auc(&scores, &labels)
}
