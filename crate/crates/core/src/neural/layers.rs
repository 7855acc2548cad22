//! Network layers and the tensors that flow between them.

use super::cell::{
    backward_direction, forward_direction, CellGrads, CellParams, CellTrace,
};
use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Value passed between layers: a full sequence or a per-window vector.
#[derive(Debug, Clone)]
pub enum Tensor {
    /// (batch, time, features)
    Seq(Array3<f64>),
    /// (batch, features)
    Flat(Array2<f64>),
}

impl Tensor {
    fn as_slice(&self) -> &[f64] {
        match self {
            Tensor::Seq(a) => a.as_slice().expect("standard layout"),
            Tensor::Flat(a) => a.as_slice().expect("standard layout"),
        }
    }

    fn as_slice_mut(&mut self) -> &mut [f64] {
        match self {
            Tensor::Seq(a) => a.as_slice_mut().expect("standard layout"),
            Tensor::Flat(a) => a.as_slice_mut().expect("standard layout"),
        }
    }

    fn zeros_like(&self) -> Tensor {
        match self {
            Tensor::Seq(a) => Tensor::Seq(Array3::zeros(a.raw_dim())),
            Tensor::Flat(a) => Tensor::Flat(Array2::zeros(a.raw_dim())),
        }
    }

    fn expect_seq(self) -> Array3<f64> {
        match self {
            Tensor::Seq(a) => a,
            Tensor::Flat(_) => unreachable!("stack construction guarantees sequence input"),
        }
    }

    fn expect_flat(self) -> Array2<f64> {
        match self {
            Tensor::Flat(a) => a,
            Tensor::Seq(_) => unreachable!("stack construction guarantees flat input"),
        }
    }
}

/// One or two directions of a recurrent cell.
#[derive(Debug, Clone)]
pub struct Recurrent {
    /// `[forward]` or `[forward, backward]`.
    pub cells: Vec<CellParams>,
    /// Emit all hidden states rather than only the final one.
    pub return_sequences: bool,
    /// Input kernels carry an l1+l2 penalty and a max-norm-1 column constraint.
    pub regularized: bool,
}

#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
}

/// Linear map applied independently at every timestep.
#[derive(Debug, Clone)]
pub struct TimeDense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Linear head over flat features.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Recurrent(Recurrent),
    Dropout(Dropout),
    TimeDense(TimeDense),
    Dense(Dense),
}

/// Per-layer forward state consumed by the matching backward call.
pub enum Cache {
    Recurrent {
        /// Input slices in forward time order.
        xs: Vec<Array2<f64>>,
        /// Same slices reversed, kept only for a backward direction.
        xs_rev: Vec<Array2<f64>>,
        traces: Vec<CellTrace>,
        time: usize,
    },
    /// Scale factors (0 or 1/keep); `None` when dropout was inactive.
    Dropout(Option<Tensor>),
    TimeDense { input: Array3<f64> },
    Dense { input: Array2<f64> },
}

/// Parameter gradients shaped like the layer they belong to.
pub enum LayerGrads {
    Recurrent(Vec<CellGrads>),
    Dropout,
    TimeDense { w: Array2<f64>, b: Array1<f64> },
    Dense { w: Array2<f64>, b: Array1<f64> },
}

pub fn glorot_dense(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> (Array2<f64>, Array1<f64>) {
    let limit = (6.0 / (inp + out) as f64).sqrt();
    let mut w = Array2::zeros((out, inp));
    for v in w.iter_mut() {
        *v = limit * (2.0 * rng.random::<f64>() - 1.0);
    }
    (w, Array1::zeros(out))
}

impl Layer {
    pub fn forward(&self, input: Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> (Tensor, Cache) {
        match self {
            Layer::Recurrent(layer) => layer.forward(input.expect_seq()),
            Layer::Dropout(layer) => layer.forward(input, mode, rng),
            Layer::TimeDense(layer) => layer.forward(input.expect_seq()),
            Layer::Dense(layer) => layer.forward(input.expect_flat()),
        }
    }

    pub fn backward(&self, cache: &Cache, d_out: Tensor) -> (LayerGrads, Tensor) {
        match (self, cache) {
            (Layer::Recurrent(layer), Cache::Recurrent { xs, xs_rev, traces, time }) => {
                layer.backward(xs, xs_rev, traces, *time, d_out)
            }
            (Layer::Dropout(_), Cache::Dropout(mask)) => {
                let d_in = match mask {
                    Some(mask) => {
                        let mut d = d_out;
                        for (g, m) in d.as_slice_mut().iter_mut().zip(mask.as_slice()) {
                            *g *= m;
                        }
                        d
                    }
                    None => d_out,
                };
                (LayerGrads::Dropout, d_in)
            }
            (Layer::TimeDense(layer), Cache::TimeDense { input }) => {
                layer.backward(input, d_out.expect_seq())
            }
            (Layer::Dense(layer), Cache::Dense { input }) => {
                layer.backward(input, d_out.expect_flat())
            }
            _ => unreachable!("cache kind matches layer kind by construction"),
        }
    }

    /// Parameter tensors as flat slices, in the fixed traversal order shared
    /// with [`LayerGrads::slices`] and the optimizer.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Recurrent(layer) => layer
                .cells
                .iter_mut()
                .flat_map(|cell| {
                    let gates = cell.kind.gates();
                    let mut out: Vec<&mut [f64]> = Vec::with_capacity(gates * 3);
                    for (w, (u, b)) in cell
                        .w
                        .iter_mut()
                        .zip(cell.u.iter_mut().zip(cell.b.iter_mut()))
                    {
                        out.push(w.as_slice_mut().expect("standard layout"));
                        out.push(u.as_slice_mut().expect("standard layout"));
                        out.push(b.as_slice_mut().expect("standard layout"));
                    }
                    out
                })
                .collect(),
            Layer::Dropout(_) => Vec::new(),
            Layer::TimeDense(TimeDense { w, b }) | Layer::Dense(Dense { w, b }) => vec![
                w.as_slice_mut().expect("standard layout"),
                b.as_slice_mut().expect("standard layout"),
            ],
        }
    }
}

impl LayerGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        match self {
            LayerGrads::Recurrent(cells) => cells
                .iter()
                .flat_map(|g| {
                    let mut out: Vec<&[f64]> = Vec::with_capacity(g.w.len() * 3);
                    for (w, (u, b)) in g.w.iter().zip(g.u.iter().zip(g.b.iter())) {
                        out.push(w.as_slice().expect("standard layout"));
                        out.push(u.as_slice().expect("standard layout"));
                        out.push(b.as_slice().expect("standard layout"));
                    }
                    out
                })
                .collect(),
            LayerGrads::Dropout => Vec::new(),
            LayerGrads::TimeDense { w, b } | LayerGrads::Dense { w, b } => vec![
                w.as_slice().expect("standard layout"),
                b.as_slice().expect("standard layout"),
            ],
        }
    }
}

impl Recurrent {
    fn hidden(&self) -> usize {
        self.cells[0].hidden()
    }

    pub fn is_bidirectional(&self) -> bool {
        self.cells.len() == 2
    }

    fn forward(&self, input: Array3<f64>) -> (Tensor, Cache) {
        let (batch, time, _features) = input.dim();
        let xs: Vec<Array2<f64>> = (0..time)
            .map(|t| input.index_axis(Axis(1), t).to_owned())
            .collect();
        let xs_rev: Vec<Array2<f64>> = if self.is_bidirectional() {
            xs.iter().rev().cloned().collect()
        } else {
            Vec::new()
        };

        let mut traces = vec![forward_direction(&self.cells[0], &xs)];
        if self.is_bidirectional() {
            traces.push(forward_direction(&self.cells[1], &xs_rev));
        }

        let hidden = self.hidden();
        let dirs = self.cells.len();
        let output = if self.return_sequences {
            let mut out = Array3::zeros((batch, time, hidden * dirs));
            for t in 0..time {
                out.slice_mut(s![.., t, ..hidden])
                    .assign(traces[0].state_after(t));
                if dirs == 2 {
                    // Backward state at position t saw positions t..time.
                    out.slice_mut(s![.., t, hidden..])
                        .assign(traces[1].state_after(time - 1 - t));
                }
            }
            Tensor::Seq(out)
        } else {
            let mut out = Array2::zeros((batch, hidden * dirs));
            out.slice_mut(s![.., ..hidden])
                .assign(traces[0].state_after(time - 1));
            if dirs == 2 {
                out.slice_mut(s![.., hidden..])
                    .assign(traces[1].state_after(time - 1));
            }
            Tensor::Flat(out)
        };

        (output, Cache::Recurrent { xs, xs_rev, traces, time })
    }

    fn backward(
        &self,
        xs: &[Array2<f64>],
        xs_rev: &[Array2<f64>],
        traces: &[CellTrace],
        time: usize,
        d_out: Tensor,
    ) -> (LayerGrads, Tensor) {
        let batch = xs[0].nrows();
        let features = self.cells[0].features();
        let hidden = self.hidden();
        let dirs = self.cells.len();

        // Per-direction, per-step output gradients in processing order.
        let zero = Array2::zeros((batch, hidden));
        let mut d_dir: Vec<Vec<Array2<f64>>> = vec![vec![zero; time]; dirs];
        match (&d_out, self.return_sequences) {
            (Tensor::Seq(d), true) => {
                for t in 0..time {
                    d_dir[0][t] = d.slice(s![.., t, ..hidden]).to_owned();
                    if dirs == 2 {
                        d_dir[1][time - 1 - t] = d.slice(s![.., t, hidden..]).to_owned();
                    }
                }
            }
            (Tensor::Flat(d), false) => {
                d_dir[0][time - 1] = d.slice(s![.., ..hidden]).to_owned();
                if dirs == 2 {
                    d_dir[1][time - 1] = d.slice(s![.., hidden..]).to_owned();
                }
            }
            _ => unreachable!("gradient tensor matches output shape"),
        }

        let mut cell_grads: Vec<CellGrads> =
            self.cells.iter().map(CellGrads::zeros_like).collect();
        let mut d_input = Array3::zeros((batch, time, features));

        let d_xs = backward_direction(&self.cells[0], &mut cell_grads[0], xs, &traces[0], &d_dir[0]);
        for (t, dx) in d_xs.into_iter().enumerate() {
            d_input.slice_mut(s![.., t, ..]).assign(&dx);
        }
        if dirs == 2 {
            let d_xs_rev =
                backward_direction(&self.cells[1], &mut cell_grads[1], xs_rev, &traces[1], &d_dir[1]);
            for (step, dx) in d_xs_rev.into_iter().enumerate() {
                let t = time - 1 - step;
                let mut slot = d_input.slice_mut(s![.., t, ..]);
                slot += &dx;
            }
        }

        (LayerGrads::Recurrent(cell_grads), Tensor::Seq(d_input))
    }

    /// Rescales any input-kernel column whose L2 norm exceeds 1 back to 1.
    pub fn apply_max_norm(&mut self) {
        for cell in &mut self.cells {
            for w in &mut cell.w {
                for mut col in w.columns_mut() {
                    let norm = col.dot(&col).sqrt();
                    if norm > 1.0 {
                        col.mapv_inplace(|v| v / norm);
                    }
                }
            }
        }
    }
}

impl Dropout {
    fn forward(&self, input: Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> (Tensor, Cache) {
        if mode == Mode::Infer || self.rate <= 0.0 {
            return (input, Cache::Dropout(None));
        }
        let keep = 1.0 - self.rate;
        let mut mask = input.zeros_like();
        let mut output = input;
        for (m, v) in mask
            .as_slice_mut()
            .iter_mut()
            .zip(output.as_slice_mut().iter_mut())
        {
            // Inverted dropout: survivors are scaled so expectation is identity.
            *m = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
            *v *= *m;
        }
        (output, Cache::Dropout(Some(mask)))
    }
}

impl TimeDense {
    fn forward(&self, input: Array3<f64>) -> (Tensor, Cache) {
        let (batch, time, features) = input.dim();
        let flat = input
            .to_shape((batch * time, features))
            .expect("standard layout")
            .to_owned();
        let mut out = flat.dot(&self.w.t());
        out += &self.b;
        let out = out
            .to_shape((batch, time, self.w.nrows()))
            .expect("standard layout")
            .to_owned();
        (Tensor::Seq(out), Cache::TimeDense { input })
    }

    fn backward(&self, input: &Array3<f64>, d_out: Array3<f64>) -> (LayerGrads, Tensor) {
        let (batch, time, features) = input.dim();
        let out_dim = self.w.nrows();
        let x = input
            .to_shape((batch * time, features))
            .expect("standard layout");
        let dy = d_out
            .to_shape((batch * time, out_dim))
            .expect("standard layout");
        let dw = dy.t().dot(&x);
        let db = dy.sum_axis(Axis(0));
        let dx = dy
            .dot(&self.w)
            .to_shape((batch, time, features))
            .expect("standard layout")
            .to_owned();
        (LayerGrads::TimeDense { w: dw, b: db }, Tensor::Seq(dx))
    }
}

impl Dense {
    fn forward(&self, input: Array2<f64>) -> (Tensor, Cache) {
        let mut out = input.dot(&self.w.t());
        out += &self.b;
        (Tensor::Flat(out), Cache::Dense { input })
    }

    fn backward(&self, input: &Array2<f64>, d_out: Array2<f64>) -> (LayerGrads, Tensor) {
        let dw = d_out.t().dot(input);
        let db = d_out.sum_axis(Axis(0));
        let dx = d_out.dot(&self.w);
        (LayerGrads::Dense { w: dw, b: db }, Tensor::Flat(dx))
    }
}
