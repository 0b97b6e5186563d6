use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Number of units in the first fully-connected layer of each head.
pub const HEAD_UNITS: usize = 64;
pub const NUM_CLASSES: usize = 2;

/// Flat, ordered access to every trainable tensor.
pub trait Parameters {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_parameters(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn fill(&mut self, value: f64) {
        for s in self.slices_mut() {
            s.fill(value);
        }
    }
}

impl Parameters for Vec<f64> {
    fn slices(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }
    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

/// Name, shape and data of one tensor.
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

fn mat(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn mat_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn vec1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn vec1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

/// One direction of a GRU: `W_*` are `input × k`, `U_*` are `k × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Array2<f64>,
    pub w_r: Array2<f64>,
    pub w_h: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_z: Array1<f64>,
    pub b_r: Array1<f64>,
    pub b_h: Array1<f64>,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            w_z: Array2::zeros((input, hidden)),
            w_r: Array2::zeros((input, hidden)),
            w_h: Array2::zeros((input, hidden)),
            u_z: Array2::zeros((hidden, hidden)),
            u_r: Array2::zeros((hidden, hidden)),
            u_h: Array2::zeros((hidden, hidden)),
            b_z: Array1::zeros(hidden),
            b_r: Array1::zeros(hidden),
            b_h: Array1::zeros(hidden),
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        GruParams {
            w_z: glorot(input, hidden, rng),
            w_r: glorot(input, hidden, rng),
            w_h: glorot(input, hidden, rng),
            u_z: glorot(hidden, hidden, rng),
            u_r: glorot(hidden, hidden, rng),
            u_h: glorot(hidden, hidden, rng),
            b_z: Array1::zeros(hidden),
            b_r: Array1::zeros(hidden),
            b_h: Array1::zeros(hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.u_z.nrows()
    }

    fn views<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        for (name, m) in [
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_h", &self.w_h),
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_h", &self.u_h),
        ] {
            out.push(TensorView { name: format!("{prefix}.{name}"), shape: m.shape().to_vec(), data: mat(m) });
        }
        for (name, v) in [("b_z", &self.b_z), ("b_r", &self.b_r), ("b_h", &self.b_h)] {
            out.push(TensorView { name: format!("{prefix}.{name}"), shape: v.shape().to_vec(), data: vec1(v) });
        }
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(mat_mut(&mut self.w_z));
        out.push(mat_mut(&mut self.w_r));
        out.push(mat_mut(&mut self.w_h));
        out.push(mat_mut(&mut self.u_z));
        out.push(mat_mut(&mut self.u_r));
        out.push(mat_mut(&mut self.u_h));
        out.push(vec1_mut(&mut self.b_z));
        out.push(vec1_mut(&mut self.b_r));
        out.push(vec1_mut(&mut self.b_h));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiGruParams {
    pub forward: GruParams,
    pub backward: GruParams,
}

/// `fc1`: `2k × 64`, `fc2`: `64 × 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamHead {
    pub fc1_w: Array2<f64>,
    pub fc1_b: Array1<f64>,
    pub fc2_w: Array2<f64>,
    pub fc2_b: Array1<f64>,
}

impl StreamHead {
    pub fn zeros(hidden: usize) -> Self {
        StreamHead {
            fc1_w: Array2::zeros((2 * hidden, HEAD_UNITS)),
            fc1_b: Array1::zeros(HEAD_UNITS),
            fc2_w: Array2::zeros((HEAD_UNITS, NUM_CLASSES)),
            fc2_b: Array1::zeros(NUM_CLASSES),
        }
    }

    pub fn init(hidden: usize, rng: &mut impl Rng) -> Self {
        StreamHead {
            fc1_w: glorot(2 * hidden, HEAD_UNITS, rng),
            fc1_b: Array1::zeros(HEAD_UNITS),
            fc2_w: glorot(HEAD_UNITS, NUM_CLASSES, rng),
            fc2_b: Array1::zeros(NUM_CLASSES),
        }
    }
}

/// One recurrent stream: a bidirectional GRU followed by its head.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamParams {
    pub gru: BiGruParams,
    pub head: StreamHead,
}

impl StreamParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        StreamParams {
            gru: BiGruParams { forward: GruParams::zeros(input, hidden), backward: GruParams::zeros(input, hidden) },
            head: StreamHead::zeros(hidden),
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let forward = GruParams::init(input, hidden, rng);
        let backward = GruParams::init(input, hidden, rng);
        StreamParams { gru: BiGruParams { forward, backward }, head: StreamHead::init(hidden, rng) }
    }

    pub fn hidden(&self) -> usize {
        self.gru.forward.hidden()
    }

    pub fn input_dim(&self) -> usize {
        self.gru.forward.input_dim()
    }

    fn views<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        self.gru.forward.views(&format!("{prefix}.gru_fwd"), out);
        self.gru.backward.views(&format!("{prefix}.gru_bwd"), out);
        let h = &self.head;
        out.push(TensorView { name: format!("{prefix}.fc1_w"), shape: h.fc1_w.shape().to_vec(), data: mat(&h.fc1_w) });
        out.push(TensorView { name: format!("{prefix}.fc1_b"), shape: h.fc1_b.shape().to_vec(), data: vec1(&h.fc1_b) });
        out.push(TensorView { name: format!("{prefix}.fc2_w"), shape: h.fc2_w.shape().to_vec(), data: mat(&h.fc2_w) });
        out.push(TensorView { name: format!("{prefix}.fc2_b"), shape: h.fc2_b.shape().to_vec(), data: vec1(&h.fc2_b) });
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.gru.forward.collect_mut(out);
        self.gru.backward.collect_mut(out);
        out.push(mat_mut(&mut self.head.fc1_w));
        out.push(vec1_mut(&mut self.head.fc1_b));
        out.push(mat_mut(&mut self.head.fc2_w));
        out.push(vec1_mut(&mut self.head.fc2_b));
    }
}

/// Parameters of both streams: `shape` reads the `A` (α) sequence, `speed`
/// reads the `B` (β) sequence. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStreamParams {
    pub shape: StreamParams,
    pub speed: StreamParams,
}

impl TwoStreamParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        TwoStreamParams { shape: StreamParams::zeros(input, hidden), speed: StreamParams::zeros(input, hidden) }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let shape = StreamParams::init(input, hidden, rng);
        let speed = StreamParams::init(input, hidden, rng);
        TwoStreamParams { shape, speed }
    }

    pub fn zeros_like(&self) -> Self {
        TwoStreamParams::zeros(self.shape.input_dim(), self.shape.hidden())
    }

    pub fn hidden(&self) -> usize {
        self.shape.hidden()
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input_dim()
    }

    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        self.shape.views("shape", &mut out);
        self.speed.views("speed", &mut out);
        out
    }
}

impl Parameters for TwoStreamParams {
    fn slices(&self) -> Vec<&[f64]> {
        self.tensors().into_iter().map(|t| t.data).collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.shape.collect_mut(&mut out);
        self.speed.collect_mut(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_order_and_shapes_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = TwoStreamParams::init(136, 64, &mut rng);
        let views: Vec<(String, Vec<usize>, usize)> =
            p.tensors().iter().map(|t| (t.name.clone(), t.shape.clone(), t.data.len())).collect();
        assert_eq!(views.len(), 2 * (2 * 9 + 4));
        assert_eq!(views[0].0, "shape.gru_fwd.w_z");
        assert_eq!(views[0].1, vec![136, 64]);
        assert_eq!(views[3].1, vec![64, 64]);
        assert_eq!(views[18].1, vec![128, 64]);
        assert_eq!(views[21].1, vec![2]);
        let lens: Vec<usize> = p.slices_mut().iter().map(|s| s.len()).collect();
        assert_eq!(lens, views.iter().map(|v| v.2).collect::<Vec<_>>());
        for (name, shape, len) in &views {
            assert_eq!(shape.iter().product::<usize>(), *len, "{name}");
        }
    }

    #[test]
    fn glorot_bounds_and_zero_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = GruParams::init(136, 64, &mut rng);
        let limit = (6.0f64 / 200.0).sqrt();
        assert!(g.w_z.iter().all(|v| v.abs() <= limit));
        assert!(g.b_h.iter().all(|&v| v == 0.0));
    }
}
