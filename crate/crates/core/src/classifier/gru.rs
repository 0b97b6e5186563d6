//! GRU cell, bidirectional readout and batched BPTT.
//!
//! Gate convention:
//! `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
//! `h̃ = tanh(W_h x + U_h (r∘h) + b_h)`, `h' = (1 − z)∘h + z∘h̃`.
//!
//! Batched sequences are time-major: row `t·B + i` of a `(T·B) × D` matrix is
//! sample `i` at step `t`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::params::{BiGruParams, GruParams};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Single-sample GRU step.
pub fn gru_cell(params: &GruParams, x: ArrayView1<f64>, h_prev: ArrayView1<f64>) -> Array1<f64> {
    let z = (x.dot(&params.w_z) + h_prev.dot(&params.u_z) + &params.b_z).mapv(sigmoid);
    let r = (x.dot(&params.w_r) + h_prev.dot(&params.u_r) + &params.b_r).mapv(sigmoid);
    let rh = &r * &h_prev;
    let c = (x.dot(&params.w_h) + rh.dot(&params.u_h) + &params.b_h).mapv(f64::tanh);
    Zip::from(&h_prev).and(&z).and(&c).map_collect(|&h, &z, &c| (1.0 - z) * h + z * c)
}

/// Runs both directions over a `T × D` sequence from zero states and returns
/// `[h_forward_final ; h_backward_final]` (length `2k`).
pub fn bigru_forward(params: &BiGruParams, sequence: ArrayView2<f64>) -> Array1<f64> {
    let k = params.forward.hidden();
    let mut hf = Array1::zeros(k);
    for x in sequence.outer_iter() {
        hf = gru_cell(&params.forward, x, hf.view());
    }
    let mut hb = Array1::zeros(k);
    for x in sequence.outer_iter().rev() {
        hb = gru_cell(&params.backward, x, hb.view());
    }
    ndarray::concatenate(Axis(0), &[hf.view(), hb.view()]).expect("same rank")
}

/// Activations kept for the backward pass of one direction.
pub(crate) struct GruTrace {
    steps: usize,
    batch: usize,
    /// `(T·B) × D`, in processing order.
    input: Array2<f64>,
    /// `T + 1` states, `h[0] = 0`.
    h: Vec<Array2<f64>>,
    z: Vec<Array2<f64>>,
    r: Vec<Array2<f64>>,
    c: Vec<Array2<f64>>,
}

impl GruTrace {
    pub(crate) fn last(&self) -> &Array2<f64> {
        &self.h[self.steps]
    }
}

/// Reverses the time order of a time-major batch.
pub(crate) fn reverse_time(x: &Array2<f64>, steps: usize, batch: usize) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for t in 0..steps {
        let src = (steps - 1 - t) * batch;
        out.slice_mut(s![t * batch..(t + 1) * batch, ..])
            .assign(&x.slice(s![src..src + batch, ..]));
    }
    out
}

pub(crate) fn gru_forward_batch(params: &GruParams, input: Array2<f64>, steps: usize, batch: usize) -> GruTrace {
    let k = params.hidden();
    debug_assert_eq!(input.nrows(), steps * batch);
    let xz = input.dot(&params.w_z) + &params.b_z;
    let xr = input.dot(&params.w_r) + &params.b_r;
    let xh = input.dot(&params.w_h) + &params.b_h;
    let mut h = Vec::with_capacity(steps + 1);
    let mut zs = Vec::with_capacity(steps);
    let mut rs = Vec::with_capacity(steps);
    let mut cs = Vec::with_capacity(steps);
    h.push(Array2::zeros((batch, k)));
    for t in 0..steps {
        let rows = s![t * batch..(t + 1) * batch, ..];
        let hp = &h[t];
        let mut z = hp.dot(&params.u_z);
        Zip::from(&mut z).and(&xz.slice(rows)).for_each(|a, &b| *a = sigmoid(*a + b));
        let mut r = hp.dot(&params.u_r);
        Zip::from(&mut r).and(&xr.slice(rows)).for_each(|a, &b| *a = sigmoid(*a + b));
        let rh = &r * hp;
        let mut c = rh.dot(&params.u_h);
        Zip::from(&mut c).and(&xh.slice(rows)).for_each(|a, &b| *a = (*a + b).tanh());
        let next = Zip::from(hp).and(&z).and(&c).map_collect(|&h, &z, &c| h + z * (c - h));
        h.push(next);
        zs.push(z);
        rs.push(r);
        cs.push(c);
    }
    GruTrace { steps, batch, input, h, z: zs, r: rs, c: cs }
}

/// Accumulates parameter gradients given `dL/dh_T`.
pub(crate) fn gru_backward_batch(params: &GruParams, trace: &GruTrace, d_last: Array2<f64>, grads: &mut GruParams) {
    let (steps, batch) = (trace.steps, trace.batch);
    let k = params.hidden();
    let mut da_z = Array2::zeros((steps * batch, k));
    let mut da_r = Array2::zeros((steps * batch, k));
    let mut da_c = Array2::zeros((steps * batch, k));
    let mut dh = d_last;
    for t in (0..steps).rev() {
        let rows = s![t * batch..(t + 1) * batch, ..];
        let hp = &trace.h[t];
        let (z, r, c) = (&trace.z[t], &trace.r[t], &trace.c[t]);

        let mut daz = da_z.slice_mut(rows);
        Zip::from(&mut daz)
            .and(&dh)
            .and(c)
            .and(hp)
            .and(z)
            .for_each(|o, &dh, &c, &hp, &z| *o = dh * (c - hp) * z * (1.0 - z));
        let mut dac = da_c.slice_mut(rows);
        Zip::from(&mut dac).and(&dh).and(z).and(c).for_each(|o, &dh, &z, &c| *o = dh * z * (1.0 - c * c));

        let mut dh_prev = Zip::from(&dh).and(z).map_collect(|&dh, &z| dh * (1.0 - z));
        let rh = r * hp;
        grads.u_h += &rh.t().dot(&dac);
        let drh = dac.dot(&params.u_h.t());
        let mut dar = da_r.slice_mut(rows);
        Zip::from(&mut dar).and(&drh).and(hp).and(r).for_each(|o, &g, &hp, &r| *o = g * hp * r * (1.0 - r));
        Zip::from(&mut dh_prev).and(&drh).and(r).for_each(|o, &g, &r| *o += g * r);

        let daz = da_z.slice(rows);
        let dar = da_r.slice(rows);
        grads.u_z += &hp.t().dot(&daz);
        grads.u_r += &hp.t().dot(&dar);
        dh_prev += &daz.dot(&params.u_z.t());
        dh_prev += &dar.dot(&params.u_r.t());
        dh = dh_prev;
    }
    let xt = trace.input.t();
    grads.w_z += &xt.dot(&da_z);
    grads.w_r += &xt.dot(&da_r);
    grads.w_h += &xt.dot(&da_c);
    grads.b_z += &da_z.sum_axis(Axis(0));
    grads.b_r += &da_r.sum_axis(Axis(0));
    grads.b_h += &da_c.sum_axis(Axis(0));
}
