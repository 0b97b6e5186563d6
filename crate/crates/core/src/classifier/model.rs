use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{
    batch_inputs, fuse_weighted, loss_and_grads_batch, row_probs, stack_time_major, stream_forward_batch,
    DropoutRates, Normalizer, Prediction, StreamSelection,
};
use super::params::{StreamParams, TwoStreamParams, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::geometry::{CanonicalTemplate, ClipSample, DEFAULT_CLIP_LENGTH};
use crate::landmarks::FEATURE_DIM;

const EVAL_CHUNK: usize = 256;

/// Trained two-stream classifier plus everything needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStreamModel {
    pub params: TwoStreamParams,
    pub input_length: usize,
    pub streams: StreamSelection,
    pub shape_norm: Normalizer,
    pub speed_norm: Normalizer,
    pub template: Option<CanonicalTemplate>,
}

impl TwoStreamModel {
    pub fn new(params: TwoStreamParams) -> Self {
        let dim = params.input_dim();
        TwoStreamModel {
            params,
            input_length: DEFAULT_CLIP_LENGTH,
            streams: StreamSelection::Both,
            shape_norm: Normalizer::identity(dim),
            speed_norm: Normalizer::identity(dim),
            template: None,
        }
    }

    pub fn init(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TwoStreamModel::new(TwoStreamParams::init(FEATURE_DIM, hidden, &mut rng))
    }

    pub fn hidden(&self) -> usize {
        self.params.hidden()
    }

    fn check_clip(&self, clip: &ClipSample) -> Result<()> {
        let dim = self.params.input_dim();
        if clip.a.ncols() != dim || clip.b.ncols() != dim || clip.a.nrows() < 2 || clip.b.nrows() + 1 != clip.a.nrows() {
            return Err(Error::Model(format!(
                "clip {}#{} has shape A {:?} / B {:?}, model expects {dim} features",
                clip.source_id,
                clip.clip_index,
                clip.a.dim(),
                clip.b.dim()
            )));
        }
        Ok(())
    }

    /// Eval-mode predictions, in input order.
    pub fn predict_clips(&self, clips: &[ClipSample]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(clips.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for chunk in clips.chunks(EVAL_CHUNK) {
            for c in chunk {
                self.check_clip(c)?;
            }
            let refs: Vec<&ClipSample> = chunk.iter().collect();
            let inputs = batch_inputs(&refs, &self.shape_norm, &self.speed_norm);
            let shape = stream_forward_batch(&self.params.shape, inputs.shape, inputs.shape_steps, DropoutRates::OFF, &mut rng);
            let speed = stream_forward_batch(&self.params.speed, inputs.speed, inputs.speed_steps, DropoutRates::OFF, &mut rng);
            for i in 0..chunk.len() {
                out.push(fuse_weighted(row_probs(&shape.probs, i), row_probs(&speed.probs, i), self.streams));
            }
        }
        Ok(out)
    }

    pub fn predict_clip(&self, clip: &ClipSample) -> Result<Prediction> {
        Ok(self.predict_clips(std::slice::from_ref(clip))?[0])
    }

    /// Mean cross-entropy of the fused prediction over `batch` and the
    /// gradient of every parameter.
    pub fn loss_and_grads(
        &self,
        batch: &[&ClipSample],
        rates: DropoutRates,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, TwoStreamParams)> {
        if batch.is_empty() {
            return Err(Error::EmptyClipList);
        }
        let mut labels = Vec::with_capacity(batch.len());
        for c in batch {
            self.check_clip(c)?;
            let label = c.label.ok_or_else(|| Error::Model(format!("clip {}#{} is unlabeled", c.source_id, c.clip_index)))?;
            labels.push(label.index());
        }
        let inputs = batch_inputs(batch, &self.shape_norm, &self.speed_norm);
        Ok(loss_and_grads_batch(&self.params, inputs, &labels, self.streams, rates, rng))
    }
}

/// One stream applied to a single `T × 136` sequence.
pub fn stream_forward(
    stream: &StreamParams,
    sequence: ArrayView2<f64>,
    norm: &Normalizer,
    rates: DropoutRates,
    rng: &mut ChaCha8Rng,
) -> [f64; NUM_CLASSES] {
    let (x, steps) = stack_time_major(&[sequence], norm);
    let trace = stream_forward_batch(stream, x, steps, rates, rng);
    row_probs(&trace.probs, 0)
}

/// Mean of the clips' fake probabilities; fake iff the mean exceeds 0.5.
pub fn predict_video(model: &TwoStreamModel, clips: &[ClipSample]) -> Result<Prediction> {
    if clips.is_empty() {
        return Err(Error::EmptyClipList);
    }
    Ok(aggregate_predictions(&model.predict_clips(clips)?).expect("non-empty"))
}

pub fn aggregate_predictions(preds: &[Prediction]) -> Option<Prediction> {
    if preds.is_empty() {
        return None;
    }
    let n = preds.len() as f64;
    let mean = |f: fn(&Prediction) -> f64| compensated_sum(preds.iter().map(f)) / n;
    let p_fake = mean(|p| p.p_fake);
    Some(Prediction {
        p_fake_shape: mean(|p| p.p_fake_shape),
        p_fake_speed: mean(|p| p.p_fake_speed),
        p_fake,
        label: crate::geometry::Label::from_p_fake(p_fake),
    })
}

/// Neumaier-compensated sum, so that e.g. `0.2 + 0.4 + 0.9` rounds to `1.5`.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Label;

    fn pred(p: f64) -> Prediction {
        Prediction { p_fake_shape: p, p_fake_speed: p, p_fake: p, label: Label::from_p_fake(p) }
    }

    #[test]
    fn video_aggregation() {
        assert_eq!(aggregate_predictions(&[pred(0.7)]).unwrap(), pred(0.7));
        let v = aggregate_predictions(&[pred(0.2), pred(0.4), pred(0.9)]).unwrap();
        assert_eq!(v.p_fake, 0.5);
        assert_eq!(v.label, Label::Real);
        assert_eq!(aggregate_predictions(&[pred(0.3); 4]).unwrap(), pred(0.3));
        assert!(aggregate_predictions(&[]).is_none());
    }

    #[test]
    fn empty_video_is_an_error() {
        let model = TwoStreamModel::init(4, 1);
        assert!(matches!(predict_video(&model, &[]), Err(Error::EmptyClipList)));
    }
}
