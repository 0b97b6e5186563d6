//! Clip- and video-level evaluation: ROC AUC and accuracy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Label;

/// Probability that a random fake outscores a random real; ties count half.
/// Fake is the positive class.
pub fn compute_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch { left: scores.len(), right: labels.len() });
    }
    let mut ranked: Vec<(f64, Label)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    if ranked.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::Model("NaN score".into()));
    }
    let n_pos = ranked.iter().filter(|(_, l)| *l == Label::Fake).count();
    let n_neg = ranked.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassDataset);
    }
    // Rank-sum form of Mann-Whitney U with midranks for ties.
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < ranked.len() {
        let mut j = i;
        while j + 1 < ranked.len() && ranked[j + 1].0 == ranked[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * ranked[i..=j].iter().filter(|(_, l)| *l == Label::Fake).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

pub fn compute_accuracy(predicted: &[Label], truth: &[Label]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch { left: predicted.len(), right: truth.len() });
    }
    if truth.is_empty() {
        return Err(Error::EmptyClipList);
    }
    Ok(predicted.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64)
}

/// Mean and standard deviation of the AUC over label permutations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PermutationBaseline {
    pub mean: f64,
    pub sd: f64,
    pub rounds: usize,
}

/// AUC of the same scores against `rounds` shuffles of the labels: the chance
/// distribution for this particular dataset.
pub fn permutation_auc(scores: &[f64], labels: &[Label], rounds: usize, seed: u64) -> Result<PermutationBaseline> {
    if rounds < 2 {
        return Err(Error::Config("permutation baseline needs at least 2 rounds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = labels.to_vec();
    let mut aucs = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        shuffled.shuffle(&mut rng);
        aucs.push(compute_auc(scores, &shuffled)?);
    }
    let mean = aucs.iter().sum::<f64>() / rounds as f64;
    let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (rounds - 1) as f64;
    Ok(PermutationBaseline { mean, sd: var.sqrt(), rounds })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub clip_auc: Option<f64>,
    pub clip_accuracy: f64,
    pub video_auc: Option<f64>,
    pub video_accuracy: f64,
    pub clips: usize,
    pub videos: usize,
    pub real_videos: usize,
    pub fake_videos: usize,
}
