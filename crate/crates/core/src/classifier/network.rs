//! Stream forward/backward passes, fusion, loss and batched inference.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gru::{gru_backward_batch, gru_forward_batch, reverse_time, GruTrace};
use super::params::{StreamParams, TwoStreamParams, NUM_CLASSES};
use crate::geometry::{ClipSample, Label};

/// Which stream(s) contribute to the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSelection {
    #[default]
    Both,
    /// `A` stream only.
    ShapeOnly,
    /// `B` stream only.
    SpeedOnly,
}

impl StreamSelection {
    /// Fusion weights for (shape, speed).
    pub fn weights(self) -> (f64, f64) {
        match self {
            StreamSelection::Both => (0.5, 0.5),
            StreamSelection::ShapeOnly => (1.0, 0.0),
            StreamSelection::SpeedOnly => (0.0, 1.0),
        }
    }
}

/// Inverted dropout rates. All zero disables dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutRates {
    pub input: f64,
    pub hidden: f64,
    /// Whether the last hidden-rate dropout (on the logits, before softmax) is applied.
    pub on_logits: bool,
}

impl DropoutRates {
    pub const OFF: DropoutRates = DropoutRates { input: 0.0, hidden: 0.0, on_logits: false };
}

/// Per-feature affine map `(x − mean) · scale` applied before a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer { mean: Array1::zeros(dim), scale: Array1::ones(dim) }
    }

    /// Fits mean and inverse standard deviation over all rows of all matrices.
    pub fn fit<'a>(rows: impl IntoIterator<Item = ArrayView2<'a, f64>>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = Array1::<f64>::zeros(dim);
        let mut sq = Array1::<f64>::zeros(dim);
        for m in rows {
            for r in m.outer_iter() {
                n += 1;
                sum += &r;
                Zip::from(&mut sq).and(&r).for_each(|s, &v| *s += v * v);
            }
        }
        if n == 0 {
            return Normalizer::identity(dim);
        }
        let mean = sum / n as f64;
        let scale = Zip::from(&sq).and(&mean).map_collect(|&s, &m| {
            let var = (s / n as f64 - m * m).max(0.0);
            let sd = var.sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                1.0
            }
        });
        Normalizer { mean, scale }
    }

    fn apply_row(&self, row: ndarray::ArrayView1<f64>, mut out: ndarray::ArrayViewMut1<f64>) {
        Zip::from(&mut out)
            .and(&row)
            .and(&self.mean)
            .and(&self.scale)
            .for_each(|o, &x, &m, &s| *o = (x - m) * s);
    }
}

/// Stacks the clips' sequences into a time-major `(T·B) × D` matrix.
pub(crate) fn stack_time_major(seqs: &[ArrayView2<f64>], norm: &Normalizer) -> (Array2<f64>, usize) {
    let batch = seqs.len();
    let steps = seqs[0].nrows();
    let dim = seqs[0].ncols();
    let mut out = Array2::zeros((steps * batch, dim));
    for (i, seq) in seqs.iter().enumerate() {
        assert_eq!(seq.nrows(), steps, "all clips in a batch must have the same length");
        for t in 0..steps {
            norm.apply_row(seq.row(t), out.row_mut(t * batch + i));
        }
    }
    (out, steps)
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut impl Rng) -> Option<Array2<f64>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Some(Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < keep { scale } else { 0.0 }))
}

fn apply_mask(x: &mut Array2<f64>, mask: &Option<Array2<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

pub(crate) fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

/// Everything one stream's backward pass needs.
pub(crate) struct StreamTrace {
    batch: usize,
    fwd: GruTrace,
    bwd: GruTrace,
    m_hidden: Option<Array2<f64>>,
    h1: Array2<f64>,
    z1: Array2<f64>,
    m_fc1: Option<Array2<f64>>,
    a1: Array2<f64>,
    m_logits: Option<Array2<f64>>,
    pub(crate) probs: Array2<f64>,
}

/// `dropout → biGRU → dropout → fc1 + ReLU → dropout → fc2 → dropout → softmax`.
pub(crate) fn stream_forward_batch(
    params: &StreamParams,
    mut input: Array2<f64>,
    steps: usize,
    rates: DropoutRates,
    rng: &mut impl Rng,
) -> StreamTrace {
    let batch = input.nrows() / steps;
    let k = params.hidden();
    let m_in = dropout_mask(input.dim(), rates.input, rng);
    apply_mask(&mut input, &m_in);
    let reversed = reverse_time(&input, steps, batch);
    let fwd = gru_forward_batch(&params.gru.forward, input, steps, batch);
    let bwd = gru_forward_batch(&params.gru.backward, reversed, steps, batch);

    let mut h1 = Array2::zeros((batch, 2 * k));
    h1.slice_mut(s![.., ..k]).assign(fwd.last());
    h1.slice_mut(s![.., k..]).assign(bwd.last());
    let m_hidden = dropout_mask(h1.dim(), rates.hidden, rng);
    apply_mask(&mut h1, &m_hidden);

    let z1 = h1.dot(&params.head.fc1_w) + &params.head.fc1_b;
    let mut a1 = z1.mapv(|v| v.max(0.0));
    let m_fc1 = dropout_mask(a1.dim(), rates.hidden, rng);
    apply_mask(&mut a1, &m_fc1);

    let mut logits = a1.dot(&params.head.fc2_w) + &params.head.fc2_b;
    let m_logits = if rates.on_logits { dropout_mask(logits.dim(), rates.hidden, rng) } else { None };
    apply_mask(&mut logits, &m_logits);
    let probs = softmax_rows(&logits);
    StreamTrace { batch, fwd, bwd, m_hidden, h1, z1, m_fc1, a1, m_logits, probs }
}

/// Backpropagates `dL/dprobs` through one stream into `grads`.
pub(crate) fn stream_backward_batch(
    params: &StreamParams,
    trace: &StreamTrace,
    d_probs: &Array2<f64>,
    grads: &mut StreamParams,
) {
    let k = params.hidden();
    let p = &trace.probs;
    // softmax
    let inner = (d_probs * p).sum_axis(Axis(1)).insert_axis(Axis(1));
    let mut d_logits = p * &(d_probs - &inner);
    apply_mask(&mut d_logits, &trace.m_logits);

    grads.head.fc2_w += &trace.a1.t().dot(&d_logits);
    grads.head.fc2_b += &d_logits.sum_axis(Axis(0));
    let mut d_a1 = d_logits.dot(&params.head.fc2_w.t());
    apply_mask(&mut d_a1, &trace.m_fc1);
    Zip::from(&mut d_a1).and(&trace.z1).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
    grads.head.fc1_w += &trace.h1.t().dot(&d_a1);
    grads.head.fc1_b += &d_a1.sum_axis(Axis(0));
    let mut d_h1 = d_a1.dot(&params.head.fc1_w.t());
    apply_mask(&mut d_h1, &trace.m_hidden);

    debug_assert_eq!(d_h1.nrows(), trace.batch);
    gru_backward_batch(&params.gru.forward, &trace.fwd, d_h1.slice(s![.., ..k]).to_owned(), &mut grads.gru.forward);
    gru_backward_batch(&params.gru.backward, &trace.bwd, d_h1.slice(s![.., k..]).to_owned(), &mut grads.gru.backward);
}

/// Class probabilities of each stream and their fusion for one clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub p_fake_shape: f64,
    pub p_fake_speed: f64,
    pub p_fake: f64,
    pub label: Label,
}

/// Averages two streams' class probabilities; fake iff `p_fake > 0.5`.
pub fn fuse(p_shape: [f64; NUM_CLASSES], p_speed: [f64; NUM_CLASSES]) -> Prediction {
    fuse_weighted(p_shape, p_speed, StreamSelection::Both)
}

pub fn fuse_weighted(p_shape: [f64; NUM_CLASSES], p_speed: [f64; NUM_CLASSES], streams: StreamSelection) -> Prediction {
    let (ws, wv) = streams.weights();
    let fake = Label::Fake.index();
    let p_fake = match streams {
        StreamSelection::Both => (p_shape[fake] + p_speed[fake]) / 2.0,
        _ => ws * p_shape[fake] + wv * p_speed[fake],
    };
    Prediction { p_fake_shape: p_shape[fake], p_fake_speed: p_speed[fake], p_fake, label: Label::from_p_fake(p_fake) }
}

pub(crate) struct BatchInputs {
    pub shape: Array2<f64>,
    pub shape_steps: usize,
    pub speed: Array2<f64>,
    pub speed_steps: usize,
}

pub(crate) fn batch_inputs(clips: &[&ClipSample], shape_norm: &Normalizer, speed_norm: &Normalizer) -> BatchInputs {
    let a: Vec<ArrayView2<f64>> = clips.iter().map(|c| c.a.view()).collect();
    let b: Vec<ArrayView2<f64>> = clips.iter().map(|c| c.b.view()).collect();
    let (shape, shape_steps) = stack_time_major(&a, shape_norm);
    let (speed, speed_steps) = stack_time_major(&b, speed_norm);
    BatchInputs { shape, shape_steps, speed, speed_steps }
}

pub(crate) fn row_probs(p: &Array2<f64>, i: usize) -> [f64; NUM_CLASSES] {
    [p[[i, 0]], p[[i, 1]]]
}

/// Mean cross-entropy of the fused prediction and its gradient with respect
/// to every parameter. Labels are class indices.
pub(crate) fn loss_and_grads_batch(
    params: &TwoStreamParams,
    inputs: BatchInputs,
    labels: &[usize],
    streams: StreamSelection,
    rates: DropoutRates,
    rng: &mut impl Rng,
) -> (f64, TwoStreamParams) {
    let batch = labels.len();
    let (ws, wv) = streams.weights();
    let shape = (ws > 0.0).then(|| stream_forward_batch(&params.shape, inputs.shape, inputs.shape_steps, rates, rng));
    let speed = (wv > 0.0).then(|| stream_forward_batch(&params.speed, inputs.speed, inputs.speed_steps, rates, rng));

    let mut fused = Array2::<f64>::zeros((batch, NUM_CLASSES));
    if let Some(t) = &shape {
        fused.scaled_add(ws, &t.probs);
    }
    if let Some(t) = &speed {
        fused.scaled_add(wv, &t.probs);
    }
    let mut loss = 0.0;
    let mut d_fused = Array2::<f64>::zeros((batch, NUM_CLASSES));
    for (i, &y) in labels.iter().enumerate() {
        let p = fused[[i, y]];
        loss -= p.ln();
        d_fused[[i, y]] = -1.0 / (p * batch as f64);
    }
    loss /= batch as f64;

    let mut grads = params.zeros_like();
    if let Some(t) = &shape {
        stream_backward_batch(&params.shape, t, &(&d_fused * ws), &mut grads.shape);
    }
    if let Some(t) = &speed {
        stream_backward_batch(&params.speed, t, &(&d_fused * wv), &mut grads.speed);
    }
    (loss, grads)
}
