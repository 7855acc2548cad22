//! Recurrent cell math: batched GRU/LSTM steps, their BPTT counterparts, and
//! the single-vector entry points.

use crate::error::{Error, Result};
use ndarray::linalg::general_mat_mul;
use ndarray::{azip, s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    /// GRU gates: update z, reset r, candidate h̃. LSTM: input i, forget f,
    /// output o, candidate g.
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Gru => "GRU",
            CellKind::Lstm => "LSTM",
        }
    }
}

/// One cell's parameters: per-gate input kernels W (hidden × features),
/// recurrent kernels U (hidden × hidden), biases b (hidden).
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub w: Vec<Array2<f64>>,
    pub u: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl CellParams {
    pub fn zeros(kind: CellKind, features: usize, hidden: usize) -> CellParams {
        let gates = kind.gates();
        CellParams {
            kind,
            w: (0..gates).map(|_| Array2::zeros((hidden, features))).collect(),
            u: (0..gates).map(|_| Array2::zeros((hidden, hidden))).collect(),
            b: (0..gates).map(|_| Array1::zeros(hidden)).collect(),
        }
    }

    /// Glorot-uniform input kernels, orthogonal recurrent kernels, zero biases.
    pub fn init(kind: CellKind, features: usize, hidden: usize, rng: &mut ChaCha8Rng) -> CellParams {
        let mut cell = CellParams::zeros(kind, features, hidden);
        for w in &mut cell.w {
            glorot_uniform(w, rng);
        }
        for u in &mut cell.u {
            *u = orthogonal(hidden, rng);
        }
        cell
    }

    pub fn hidden(&self) -> usize {
        self.w[0].nrows()
    }

    pub fn features(&self) -> usize {
        self.w[0].ncols()
    }

    fn check_kind(&self, expected: CellKind) -> Result<()> {
        if self.kind != expected {
            return Err(Error::validation(format!(
                "{} cell invoked as {}",
                self.kind.name(),
                expected.name()
            )));
        }
        Ok(())
    }
}

/// Gradient accumulators shaped like [`CellParams`].
#[derive(Debug, Clone)]
pub struct CellGrads {
    pub w: Vec<Array2<f64>>,
    pub u: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl CellGrads {
    pub fn zeros_like(cell: &CellParams) -> CellGrads {
        CellGrads {
            w: cell.w.iter().map(|m| Array2::zeros(m.raw_dim())).collect(),
            u: cell.u.iter().map(|m| Array2::zeros(m.raw_dim())).collect(),
            b: cell.b.iter().map(|m| Array1::zeros(m.raw_dim())).collect(),
        }
    }
}

fn glorot_uniform(kernel: &mut Array2<f64>, rng: &mut ChaCha8Rng) {
    let (fan_out, fan_in) = kernel.dim();
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in kernel.iter_mut() {
        *v = limit * (2.0 * rng.random::<f64>() - 1.0);
    }
}

/// Random orthogonal matrix: Gaussian draw, then modified Gram-Schmidt with a
/// positive-diagonal sign convention.
fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for v in a.iter_mut() {
        // Box-Muller; two fresh uniforms per draw keeps the stream layout simple.
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random();
        *v = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
    for j in 0..n {
        for i in 0..j {
            let prev = a.column(i).to_owned();
            let dot = a.column(j).dot(&prev);
            let mut col = a.column_mut(j);
            col.scaled_add(-dot, &prev);
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        let sign = if a[[j, j]] < 0.0 { -1.0 } else { 1.0 };
        let scale = sign / norm.max(1e-300);
        a.column_mut(j).mapv_inplace(|v| v * scale);
    }
    a
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Pre-activation for gate `g`: x·Wᵀ + h·Uᵀ + b.
fn gate_affine(cell: &CellParams, g: usize, x: &Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
    let mut a = x.dot(&cell.w[g].t()) + h.dot(&cell.u[g].t());
    a += &cell.b[g];
    a
}

/// Activations of one batched GRU step.
#[derive(Debug, Clone)]
pub struct GruStep {
    pub z: Array2<f64>,
    pub r: Array2<f64>,
    pub hc: Array2<f64>,
    pub h: Array2<f64>,
}

pub fn gru_step(cell: &CellParams, x: &Array2<f64>, h_prev: &Array2<f64>) -> GruStep {
    let z = gate_affine(cell, 0, x, h_prev).mapv(sigmoid);
    let r = gate_affine(cell, 1, x, h_prev).mapv(sigmoid);
    let gated = &r * h_prev;
    let mut hc = x.dot(&cell.w[2].t()) + gated.dot(&cell.u[2].t());
    hc += &cell.b[2];
    let hc = hc.mapv(f64::tanh);
    let h = (1.0 - &z) * h_prev + &z * &hc;
    GruStep { z, r, hc, h }
}

/// Activations of one batched LSTM step.
#[derive(Debug, Clone)]
pub struct LstmStep {
    pub i: Array2<f64>,
    pub f: Array2<f64>,
    pub o: Array2<f64>,
    pub g: Array2<f64>,
    pub c: Array2<f64>,
    pub tc: Array2<f64>,
    pub h: Array2<f64>,
}

pub fn lstm_step(
    cell: &CellParams,
    x: &Array2<f64>,
    h_prev: &Array2<f64>,
    c_prev: &Array2<f64>,
) -> LstmStep {
    let i = gate_affine(cell, 0, x, h_prev).mapv(sigmoid);
    let f = gate_affine(cell, 1, x, h_prev).mapv(sigmoid);
    let o = gate_affine(cell, 2, x, h_prev).mapv(sigmoid);
    let g = gate_affine(cell, 3, x, h_prev).mapv(f64::tanh);
    let c = &f * c_prev + &i * &g;
    let tc = c.mapv(f64::tanh);
    let h = &o * &tc;
    LstmStep { i, f, o, g, c, tc, h }
}

fn row_vec(name: &str, expected: usize, values: &[f64]) -> Result<Array2<f64>> {
    if values.len() != expected {
        return Err(Error::validation(format!(
            "{name} has length {}, expected {expected}",
            values.len()
        )));
    }
    Ok(Array2::from_shape_vec((1, expected), values.to_vec()).expect("row vector"))
}

/// Single-sample GRU step: h = (1−z)⊙h_prev + z⊙h̃.
pub fn gru_cell_forward(params: &CellParams, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    params.check_kind(CellKind::Gru)?;
    let x = row_vec("x", params.features(), x)?;
    let h = row_vec("h_prev", params.hidden(), h_prev)?;
    Ok(gru_step(params, &x, &h).h.row(0).to_vec())
}

/// Single-sample LSTM step: returns (h, c).
pub fn lstm_cell_forward(
    params: &CellParams,
    x: &[f64],
    state: (&[f64], &[f64]),
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.check_kind(CellKind::Lstm)?;
    let x = row_vec("x", params.features(), x)?;
    let h = row_vec("h_prev", params.hidden(), state.0)?;
    let c = row_vec("c_prev", params.hidden(), state.1)?;
    let step = lstm_step(params, &x, &h, &c);
    Ok((step.h.row(0).to_vec(), step.c.row(0).to_vec()))
}

/// Everything one direction's BPTT needs, indexed by processing order.
#[derive(Debug, Clone)]
pub enum CellTrace {
    Gru { steps: Vec<GruStep> },
    Lstm { steps: Vec<LstmStep> },
}

impl CellTrace {
    /// Hidden state after processing step `s` (s = steps run so far − 1).
    pub fn state_after(&self, s: usize) -> &Array2<f64> {
        match self {
            CellTrace::Gru { steps } => &steps[s].h,
            CellTrace::Lstm { steps } => &steps[s].h,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            CellTrace::Gru { steps } => steps.len(),
            CellTrace::Lstm { steps } => steps.len(),
        }
    }
}

/// Stacks per-step inputs into one ((steps·batch) × features) matrix so the
/// input projections become a single GEMM per gate.
fn stack_steps(xs: &[Array2<f64>], batch: usize, features: usize) -> Array2<f64> {
    let mut all = Array2::zeros((xs.len() * batch, features));
    for (t, x) in xs.iter().enumerate() {
        all.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(x);
    }
    all
}

/// Runs `cell` over `xs` (processing order already laid out by the caller).
///
/// Equivalent to folding [`gru_step`]/[`lstm_step`] from a zero state, bit for
/// bit; the projections are just batched across time and the recurrent terms
/// accumulated in place.
pub fn forward_direction(cell: &CellParams, xs: &[Array2<f64>]) -> CellTrace {
    let batch = xs.first().map_or(0, |x| x.nrows());
    let hidden = cell.hidden();
    let steps_n = xs.len();
    let x_all = stack_steps(xs, batch, cell.features());
    // proj[g] rows t·batch..(t+1)·batch hold x_t·W_gᵀ.
    let proj: Vec<Array2<f64>> = cell.w.iter().map(|w| x_all.dot(&w.t())).collect();
    let base = |g: usize, t: usize| {
        proj[g].slice(s![t * batch..(t + 1) * batch, ..]).to_owned()
    };

    match cell.kind {
        CellKind::Gru => {
            let mut steps: Vec<GruStep> = Vec::with_capacity(steps_n);
            let mut h = Array2::zeros((batch, hidden));
            for t in 0..steps_n {
                let mut z = base(0, t);
                general_mat_mul(1.0, &h, &cell.u[0].t(), 1.0, &mut z);
                z += &cell.b[0];
                z.mapv_inplace(sigmoid);

                let mut r = base(1, t);
                general_mat_mul(1.0, &h, &cell.u[1].t(), 1.0, &mut r);
                r += &cell.b[1];
                r.mapv_inplace(sigmoid);

                let gated = &r * &h;
                let mut hc = base(2, t);
                general_mat_mul(1.0, &gated, &cell.u[2].t(), 1.0, &mut hc);
                hc += &cell.b[2];
                hc.mapv_inplace(f64::tanh);

                let mut h_new = Array2::zeros((batch, hidden));
                azip!((out in &mut h_new, &zv in &z, &hp in &h, &hcv in &hc) {
                    *out = (1.0 - zv) * hp + zv * hcv;
                });
                h.assign(&h_new);
                steps.push(GruStep { z, r, hc, h: h_new });
            }
            CellTrace::Gru { steps }
        }
        CellKind::Lstm => {
            let mut steps: Vec<LstmStep> = Vec::with_capacity(steps_n);
            let mut h = Array2::zeros((batch, hidden));
            let mut c_prev = Array2::zeros((batch, hidden));
            for t in 0..steps_n {
                let mut gates = Vec::with_capacity(4);
                for g in 0..4 {
                    let mut a = base(g, t);
                    general_mat_mul(1.0, &h, &cell.u[g].t(), 1.0, &mut a);
                    a += &cell.b[g];
                    if g == 3 {
                        a.mapv_inplace(f64::tanh);
                    } else {
                        a.mapv_inplace(sigmoid);
                    }
                    gates.push(a);
                }
                let g_cand = gates.pop().expect("candidate gate");
                let o = gates.pop().expect("output gate");
                let f = gates.pop().expect("forget gate");
                let i = gates.pop().expect("input gate");

                let mut c = Array2::zeros((batch, hidden));
                azip!((out in &mut c, &fv in &f, &cp in &c_prev, &iv in &i, &gv in &g_cand) {
                    *out = fv * cp + iv * gv;
                });
                let mut tc = c.clone();
                tc.mapv_inplace(f64::tanh);
                let h_new = &o * &tc;

                h.assign(&h_new);
                c_prev.assign(&c);
                steps.push(LstmStep { i, f, o, g: g_cand, c, tc, h: h_new });
            }
            CellTrace::Lstm { steps }
        }
    }
}

/// BPTT over one direction. `d_out[s]` is the loss gradient w.r.t. the hidden
/// state emitted at step `s` (zeros where unused). Returns per-step input
/// gradients in processing order and accumulates parameter gradients.
///
/// Numerically this walks the recurrence in reverse exactly as written in the
/// step functions; the per-gate input gradients are merely collected so the
/// `da·W` projections run as one GEMM per gate at the end.
pub fn backward_direction(
    cell: &CellParams,
    grads: &mut CellGrads,
    xs: &[Array2<f64>],
    trace: &CellTrace,
    d_out: &[Array2<f64>],
) -> Vec<Array2<f64>> {
    let batch = xs.first().map_or(0, |x| x.nrows());
    let hidden = cell.hidden();
    let features = cell.features();
    let gates = cell.kind.gates();
    let steps_n = xs.len();
    let zero_state: Array2<f64> = Array2::zeros((batch, hidden));
    let mut dh_carry: Array2<f64> = Array2::zeros((batch, hidden));
    let mut dc_carry: Array2<f64> = Array2::zeros((batch, hidden));
    // da_all[g] rows s·batch.. hold gate g's pre-activation gradient at step s.
    let mut da_all: Vec<Array2<f64>> =
        (0..gates).map(|_| Array2::zeros((steps_n * batch, hidden))).collect();

    let mut save = |g: usize, s: usize, da: &Array2<f64>| {
        da_all[g].slice_mut(s![s * batch..(s + 1) * batch, ..]).assign(da);
    };

    for s in (0..steps_n).rev() {
        let dh = &dh_carry + &d_out[s];
        let h_prev: &Array2<f64> = if s == 0 { &zero_state } else { trace.state_after(s - 1) };

        match (trace, cell.kind) {
            (CellTrace::Gru { steps }, CellKind::Gru) => {
                let GruStep { z, r, hc, .. } = &steps[s];
                let mut da_z = Array2::zeros((batch, hidden));
                azip!((out in &mut da_z, &dv in &dh, &hcv in hc, &hp in h_prev, &zv in z) {
                    *out = dv * (hcv - hp) * zv * (1.0 - zv);
                });
                let mut da_h = Array2::zeros((batch, hidden));
                azip!((out in &mut da_h, &dv in &dh, &zv in z, &hcv in hc) {
                    *out = dv * zv * (1.0 - hcv * hcv);
                });
                let mut dh_prev = Array2::zeros((batch, hidden));
                azip!((out in &mut dh_prev, &dv in &dh, &zv in z) {
                    *out = dv * (1.0 - zv);
                });

                // Candidate path: d(r⊙h_prev) = da_h·U_h.
                let ds = da_h.dot(&cell.u[2]);
                azip!((out in &mut dh_prev, &dsv in &ds, &rv in r) {
                    *out += dsv * rv;
                });
                let mut da_r = Array2::zeros((batch, hidden));
                azip!((out in &mut da_r, &dsv in &ds, &hp in h_prev, &rv in r) {
                    *out = dsv * hp * rv * (1.0 - rv);
                });

                general_mat_mul(1.0, &da_z, &cell.u[0], 1.0, &mut dh_prev);
                general_mat_mul(1.0, &da_r, &cell.u[1], 1.0, &mut dh_prev);

                let gated = r * h_prev;
                accumulate(grads, 0, &da_z, &xs[s], h_prev);
                accumulate(grads, 1, &da_r, &xs[s], h_prev);
                accumulate(grads, 2, &da_h, &xs[s], &gated);
                save(0, s, &da_z);
                save(1, s, &da_r);
                save(2, s, &da_h);
                dh_carry = dh_prev;
            }
            (CellTrace::Lstm { steps }, CellKind::Lstm) => {
                let LstmStep { i, f, o, g, tc, .. } = &steps[s];
                let c_prev: &Array2<f64> = if s == 0 { &zero_state } else { &steps[s - 1].c };

                let mut da_o = Array2::zeros((batch, hidden));
                azip!((out in &mut da_o, &dv in &dh, &tcv in tc, &ov in o) {
                    *out = dv * tcv * ov * (1.0 - ov);
                });
                let mut dc = Array2::zeros((batch, hidden));
                azip!((out in &mut dc, &dcc in &dc_carry, &dv in &dh, &ov in o, &tcv in tc) {
                    *out = dcc + dv * ov * (1.0 - tcv * tcv);
                });
                let mut da_i = Array2::zeros((batch, hidden));
                azip!((out in &mut da_i, &dcv in &dc, &gv in g, &iv in i) {
                    *out = dcv * gv * iv * (1.0 - iv);
                });
                let mut da_f = Array2::zeros((batch, hidden));
                azip!((out in &mut da_f, &dcv in &dc, &cp in c_prev, &fv in f) {
                    *out = dcv * cp * fv * (1.0 - fv);
                });
                let mut da_g = Array2::zeros((batch, hidden));
                azip!((out in &mut da_g, &dcv in &dc, &iv in i, &gv in g) {
                    *out = dcv * iv * (1.0 - gv * gv);
                });
                azip!((out in &mut dc_carry, &dcv in &dc, &fv in f) {
                    *out = dcv * fv;
                });

                let mut dh_prev = da_i.dot(&cell.u[0]);
                general_mat_mul(1.0, &da_f, &cell.u[1], 1.0, &mut dh_prev);
                general_mat_mul(1.0, &da_o, &cell.u[2], 1.0, &mut dh_prev);
                general_mat_mul(1.0, &da_g, &cell.u[3], 1.0, &mut dh_prev);

                accumulate(grads, 0, &da_i, &xs[s], h_prev);
                accumulate(grads, 1, &da_f, &xs[s], h_prev);
                accumulate(grads, 2, &da_o, &xs[s], h_prev);
                accumulate(grads, 3, &da_g, &xs[s], h_prev);
                save(0, s, &da_i);
                save(1, s, &da_f);
                save(2, s, &da_o);
                save(3, s, &da_g);
                dh_carry = dh_prev;
            }
            _ => unreachable!("trace kind matches cell kind by construction"),
        }
    }

    // Input gradients, one GEMM per gate: dx = Σ_g da_g·W_g.
    let mut dx_all = Array2::zeros((steps_n * batch, features));
    for (g, da) in da_all.iter().enumerate() {
        let beta = if g == 0 { 0.0 } else { 1.0 };
        general_mat_mul(1.0, da, &cell.w[g], beta, &mut dx_all);
    }
    (0..steps_n)
        .map(|s| dx_all.slice(s![s * batch..(s + 1) * batch, ..]).to_owned())
        .collect()
}

fn accumulate(
    grads: &mut CellGrads,
    gate: usize,
    da: &Array2<f64>,
    x: &Array2<f64>,
    h_input: &Array2<f64>,
) {
    general_mat_mul(1.0, &da.t(), x, 1.0, &mut grads.w[gate]);
    general_mat_mul(1.0, &da.t(), h_input, 1.0, &mut grads.u[gate]);
    grads.b[gate] += &da.sum_axis(Axis(0));
}
