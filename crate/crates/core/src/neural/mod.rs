//! From-scratch recurrent forecasters: GRU/LSTM cells, bidirectional wrappers,
//! dropout, dense heads, BPTT training with Adam, and checkpointing.

pub mod adam;
pub mod cell;
pub mod layers;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use cell::{gru_cell_forward, lstm_cell_forward, CellGrads, CellKind, CellParams};
pub use layers::{Dense, Dropout, Layer, LayerGrads, Mode, Recurrent, Tensor, TimeDense};

use crate::error::{Error, Result};
use crate::preprocess::WindowedSet;
use layers::{glorot_dense, Cache};
use ndarray::{Array1, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// l1 and l2 coefficients on the regularized layer's input kernels.
pub const L1_COEF: f64 = 0.01;
pub const L2_COEF: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    Gru,
    BiGru,
    Lstm,
    BiLstm,
    BiLstmD,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Gru,
        Architecture::BiGru,
        Architecture::Lstm,
        Architecture::BiLstm,
        Architecture::BiLstmD,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Gru => "GRU",
            Architecture::BiGru => "BiGRU",
            Architecture::Lstm => "LSTM",
            Architecture::BiLstm => "BiLSTM",
            Architecture::BiLstmD => "BiLSTM_d",
        }
    }

    pub fn parse(name: &str) -> Result<Architecture> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::validation(format!("unknown architecture {name}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub hidden: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl NetworkSpec {
    /// Published per-architecture settings: hidden 90, 500 epochs, batch 64;
    /// GRU/BiGRU lr 1e-4 dropout 0.3, LSTM lr 0.002, BiLSTM lr 0.01,
    /// BiLSTM_d lr 0.01 dropout 0.3.
    pub fn for_architecture(architecture: Architecture) -> NetworkSpec {
        let (learning_rate, dropout_rate) = match architecture {
            Architecture::Gru | Architecture::BiGru => (1e-4, 0.3),
            Architecture::Lstm => (0.002, 0.0),
            Architecture::BiLstm => (0.01, 0.0),
            Architecture::BiLstmD => (0.01, 0.3),
        };
        NetworkSpec {
            architecture,
            hidden: 90,
            dropout_rate,
            learning_rate,
            epochs: 500,
            batch_size: 64,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::validation("hidden units must be ≥ 1"));
        }
        if !(self.dropout_rate >= 0.0 && self.dropout_rate < 1.0) {
            return Err(Error::validation("dropout_rate must be in [0, 1)"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be finite and ≥ 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be ≥ 1"));
        }
        Ok(())
    }
}

/// A trained network: its spec, the layer stack, and per-epoch training MSE.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
    pub loss_history: Vec<f64>,
}

impl TrainedModel {
    pub fn num_features(&self) -> usize {
        match &self.layers[0] {
            Layer::Recurrent(r) => r.cells[0].features(),
            _ => unreachable!("every stack starts with a recurrent layer"),
        }
    }

    /// Inference over a window batch; deterministic, no dropout.
    pub fn predict(&self, inputs: &Array3<f64>) -> Result<Array1<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        forward(self, inputs, Mode::Infer, &mut rng)
    }
}

/// Builds the layer stack for `spec` over inputs of `features` columns.
pub fn build_stack(spec: &NetworkSpec, features: usize, rng: &mut ChaCha8Rng) -> Vec<Layer> {
    let h = spec.hidden;
    let recurrent = |kind, feats, dirs: usize, return_sequences, regularized, rng: &mut ChaCha8Rng| {
        Layer::Recurrent(Recurrent {
            cells: (0..dirs).map(|_| CellParams::init(kind, feats, h, rng)).collect(),
            return_sequences,
            regularized,
        })
    };
    let dense = |inp, out, rng: &mut ChaCha8Rng| {
        let (w, b) = glorot_dense(out, inp, rng);
        Layer::Dense(Dense { w, b })
    };
    let drop = || Layer::Dropout(Dropout { rate: spec.dropout_rate });

    match spec.architecture {
        Architecture::Gru => vec![
            recurrent(CellKind::Gru, features, 1, true, false, rng),
            drop(),
            recurrent(CellKind::Gru, h, 1, false, false, rng),
            drop(),
            dense(h, 1, rng),
        ],
        Architecture::BiGru => vec![
            recurrent(CellKind::Gru, features, 2, true, false, rng),
            drop(),
            recurrent(CellKind::Gru, 2 * h, 2, false, false, rng),
            drop(),
            dense(2 * h, 1, rng),
        ],
        Architecture::Lstm => {
            let (w, b) = glorot_dense(h, h, rng);
            vec![
                recurrent(CellKind::Lstm, features, 1, true, true, rng),
                Layer::TimeDense(TimeDense { w, b }),
                recurrent(CellKind::Lstm, h, 1, false, false, rng),
                dense(h, 1, rng),
            ]
        }
        Architecture::BiLstm => vec![
            recurrent(CellKind::Lstm, features, 2, false, false, rng),
            dense(2 * h, 1, rng),
        ],
        Architecture::BiLstmD => vec![
            recurrent(CellKind::Lstm, features, 2, false, false, rng),
            drop(),
            dense(2 * h, 1, rng),
        ],
    }
}

fn forward_stack(
    layers: &[Layer],
    inputs: &Array3<f64>,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> (Array1<f64>, Vec<Cache>) {
    let mut value = Tensor::Seq(inputs.clone());
    let mut caches = Vec::with_capacity(layers.len());
    for layer in layers {
        let (out, cache) = layer.forward(value, mode, rng);
        value = out;
        caches.push(cache);
    }
    let preds = match value {
        Tensor::Flat(a) => a.index_axis(Axis(1), 0).to_owned(),
        Tensor::Seq(_) => unreachable!("stack ends in a dense head"),
    };
    (preds, caches)
}

fn backward_stack(layers: &[Layer], caches: &[Cache], d_pred: Array1<f64>) -> Vec<LayerGrads> {
    let batch = d_pred.len();
    let mut d_value = Tensor::Flat(
        d_pred
            .into_shape_with_order((batch, 1))
            .expect("column gradient"),
    );
    let mut grads_rev = Vec::with_capacity(layers.len());
    for (layer, cache) in layers.iter().zip(caches).rev() {
        let (grads, d_in) = layer.backward(cache, d_value);
        d_value = d_in;
        grads_rev.push(grads);
    }
    grads_rev.reverse();
    grads_rev
}

/// Regularization value over every regularized layer's input kernels.
fn penalty_value(layers: &[Layer]) -> f64 {
    let mut total = 0.0;
    for layer in layers {
        if let Layer::Recurrent(r) = layer {
            if r.regularized {
                for cell in &r.cells {
                    for w in &cell.w {
                        for v in w.iter() {
                            total += L1_COEF * v.abs() + L2_COEF * v * v;
                        }
                    }
                }
            }
        }
    }
    total
}

/// Adds d(penalty)/dW into the matching gradient slots.
fn add_penalty_grads(layers: &[Layer], grads: &mut [LayerGrads]) {
    for (layer, grad) in layers.iter().zip(grads.iter_mut()) {
        if let (Layer::Recurrent(r), LayerGrads::Recurrent(cell_grads)) = (layer, grad) {
            if r.regularized {
                for (cell, cg) in r.cells.iter().zip(cell_grads.iter_mut()) {
                    for (w, dw) in cell.w.iter().zip(cg.w.iter_mut()) {
                        for (v, d) in w.iter().zip(dw.iter_mut()) {
                            *d += L1_COEF * v.signum() + 2.0 * L2_COEF * v;
                        }
                    }
                }
            }
        }
    }
}

fn update_params(
    layers: &mut [Layer],
    grads: &[LayerGrads],
    adam: &mut AdamState,
    lr: f64,
) -> Result<()> {
    adam.begin_step();
    for (layer, grad) in layers.iter_mut().zip(grads) {
        let slices = grad.slices();
        for (param, grad) in layer.params_mut().into_iter().zip(slices) {
            adam.update(param, grad, lr)?;
        }
    }
    for layer in layers.iter_mut() {
        if let Layer::Recurrent(r) = layer {
            if r.regularized {
                r.apply_max_norm();
            }
        }
    }
    Ok(())
}

/// Forward pass through a model; train mode samples dropout masks from `rng`.
pub fn forward(
    model: &TrainedModel,
    batch: &Array3<f64>,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Array1<f64>> {
    let features = batch.dim().2;
    if features != model.num_features() {
        return Err(Error::validation(format!(
            "batch has {features} features, model expects {}",
            model.num_features()
        )));
    }
    Ok(forward_stack(&model.layers, batch, mode, rng).0)
}

/// Trains `spec` on the windowed set: MSE loss, BPTT, Adam, seeded shuffling,
/// the final partial batch kept.
pub fn train(spec: &NetworkSpec, data: &WindowedSet) -> Result<TrainedModel> {
    spec.validate()?;
    let n = data.num_windows();
    if n == 0 {
        return Err(Error::insufficient("training set has no windows"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut layers = build_stack(spec, data.num_features(), &mut rng);
    let mut adam = AdamState::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_history = Vec::with_capacity(spec.epochs);

    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for (batch_no, chunk) in order.chunks(spec.batch_size).enumerate() {
            let inputs = data.inputs.select(Axis(0), chunk);
            let targets: Array1<f64> = chunk.iter().map(|i| data.targets[*i]).collect();

            let (preds, caches) = forward_stack(&layers, &inputs, Mode::Train, &mut rng);
            let residuals = &preds - &targets;
            let batch_sse = residuals.dot(&residuals);
            if !batch_sse.is_finite() {
                return Err(Error::Training {
                    epoch: epoch + 1,
                    batch: batch_no + 1,
                    message: "loss became non-finite".into(),
                });
            }
            sse += batch_sse;

            let d_pred = residuals.mapv(|r| 2.0 * r / chunk.len() as f64);
            let mut grads = backward_stack(&layers, &caches, d_pred);
            add_penalty_grads(&layers, &mut grads);
            update_params(&mut layers, &grads, &mut adam, spec.learning_rate)?;
        }
        loss_history.push(sse / n as f64);
    }

    Ok(TrainedModel {
        spec: *spec,
        layers,
        loss_history,
    })
}

/// Compares BPTT gradients against central finite differences (h = 1e-5) over
/// every parameter and returns the largest relative error. Dropout is forced
/// off so both paths are deterministic.
pub fn grad_check(spec: &NetworkSpec, data: &WindowedSet) -> Result<f64> {
    let mut spec = *spec;
    spec.dropout_rate = 0.0;
    spec.validate()?;
    if spec.hidden > 8 {
        return Err(Error::validation("grad_check expects hidden ≤ 8"));
    }
    if data.window_len() > 5 {
        return Err(Error::validation("grad_check expects window_len ≤ 5"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut layers = build_stack(&spec, data.num_features(), &mut rng);
    let n = data.num_windows() as f64;

    let loss_of = |layers: &[Layer]| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (preds, _) = forward_stack(layers, &data.inputs, Mode::Infer, &mut rng);
        let residuals = &preds - &data.targets;
        residuals.dot(&residuals) / n + penalty_value(layers)
    };

    // Analytic gradients.
    let mut dummy = ChaCha8Rng::seed_from_u64(0);
    let (preds, caches) = forward_stack(&layers, &data.inputs, Mode::Infer, &mut dummy);
    let residuals = &preds - &data.targets;
    let d_pred = residuals.mapv(|r| 2.0 * r / n);
    let mut grads = backward_stack(&layers, &caches, d_pred);
    add_penalty_grads(&layers, &mut grads);
    let analytic: Vec<Vec<f64>> = grads
        .iter()
        .flat_map(|g| g.slices().into_iter().map(<[f64]>::to_vec))
        .collect();

    // Central finite differences, one parameter at a time.
    const H: f64 = 1e-5;
    let mut worst: f64 = 0.0;
    let mut slot = 0;
    for li in 0..layers.len() {
        let num_slots = layers[li].params_mut().len();
        for si in 0..num_slots {
            let len = layers[li].params_mut()[si].len();
            for idx in 0..len {
                let original = layers[li].params_mut()[si][idx];
                layers[li].params_mut()[si][idx] = original + H;
                let up = loss_of(&layers);
                layers[li].params_mut()[si][idx] = original - H;
                let down = loss_of(&layers);
                layers[li].params_mut()[si][idx] = original;

                let numeric = (up - down) / (2.0 * H);
                let exact = analytic[slot][idx];
                let rel = (exact - numeric).abs() / (exact.abs() + numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
            slot += 1;
        }
    }
    Ok(worst)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"BTCNET01";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: NetworkSpec,
    num_features: usize,
    layer_kinds: Vec<String>,
    loss_history: Vec<f64>,
}

impl TrainedModel {
    /// Self-describing binary checkpoint: JSON header, then named f64 tensors.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            spec: self.spec,
            num_features: self.num_features(),
            layer_kinds: self.layers.iter().map(layer_kind).collect(),
            loss_history: self.loss_history.clone(),
        };
        let header_json =
            serde_json::to_vec(&header).map_err(|e| Error::Decode(e.to_string()))?;

        let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            collect_tensors(li, layer, &mut tensors);
        }

        let mut bytes = Vec::new();
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header_json);
        bytes.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for (name, dims, data) in tensors {
            bytes.extend_from_slice(&(name.len() as u64).to_le_bytes());
            bytes.extend_from_slice(name.as_bytes());
            bytes.extend_from_slice(&(dims.len() as u64).to_le_bytes());
            for d in dims {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, bytes).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        let bytes = fs::read(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let fail = |msg: &str| Error::Decode(format!("{}: {msg}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fail("not a model checkpoint"));
        }
        let mut pos = 8;
        let take_u64 = |pos: &mut usize| -> Result<u64> {
            if *pos + 8 > bytes.len() {
                return Err(Error::Decode(format!("{}: truncated", path.display())));
            }
            let v = u64::from_le_bytes(bytes[*pos..*pos + 8].try_into().unwrap());
            *pos += 8;
            Ok(v)
        };

        let header_len = take_u64(&mut pos)? as usize;
        if pos + header_len > bytes.len() {
            return Err(fail("truncated header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[pos..pos + header_len])
            .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
        pos += header_len;

        let tensor_count = take_u64(&mut pos)? as usize;
        let mut tensors = std::collections::HashMap::new();
        for _ in 0..tensor_count {
            let name_len = take_u64(&mut pos)? as usize;
            if pos + name_len > bytes.len() {
                return Err(fail("truncated tensor name"));
            }
            let name = String::from_utf8(bytes[pos..pos + name_len].to_vec())
                .map_err(|e| Error::Decode(format!("{}: {e}", path.display())))?;
            pos += name_len;
            let ndim = take_u64(&mut pos)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(take_u64(&mut pos)? as usize);
            }
            let count: usize = dims.iter().product();
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                if pos + 8 > bytes.len() {
                    return Err(fail("truncated tensor data"));
                }
                data.push(f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()));
                pos += 8;
            }
            tensors.insert(name, (dims, data));
        }
        if pos != bytes.len() {
            return Err(fail("trailing bytes"));
        }

        // Rebuild the stack from the spec, then overwrite every tensor.
        let mut rng = ChaCha8Rng::seed_from_u64(header.spec.seed);
        let mut layers = build_stack(&header.spec, header.num_features, &mut rng);
        let expected: Vec<String> = layers.iter().map(layer_kind).collect();
        if expected != header.layer_kinds {
            return Err(fail("layer list does not match architecture"));
        }
        for (li, layer) in layers.iter_mut().enumerate() {
            let mut expected_tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
            collect_tensors(li, layer, &mut expected_tensors);
            let names: Vec<String> = expected_tensors.into_iter().map(|t| t.0).collect();
            for (name, param) in names.iter().zip(layer.params_mut()) {
                let (_dims, data) = tensors
                    .get(name)
                    .ok_or_else(|| Error::Decode(format!("{}: missing {name}", path.display())))?;
                if data.len() != param.len() {
                    return Err(Error::Decode(format!(
                        "{}: tensor {name} has {} values, expected {}",
                        path.display(),
                        data.len(),
                        param.len()
                    )));
                }
                param.copy_from_slice(data);
            }
        }

        Ok(TrainedModel {
            spec: header.spec,
            layers,
            loss_history: header.loss_history,
        })
    }
}

fn layer_kind(layer: &Layer) -> String {
    match layer {
        Layer::Recurrent(r) => format!(
            "recurrent:{}:dirs={}:seq={}:reg={}",
            r.cells[0].kind.name(),
            r.cells.len(),
            r.return_sequences,
            r.regularized
        ),
        Layer::Dropout(d) => format!("dropout:{}", d.rate),
        Layer::TimeDense(_) => "time_dense".into(),
        Layer::Dense(_) => "dense".into(),
    }
}

// Tensor order here must match Layer::params_mut: per direction, per gate,
// W then U then b; dense layers W then b. Both walks are generated from the
// same layer structure; the checkpoint round-trip test would catch a mismatch.
fn collect_tensors(li: usize, layer: &Layer, out: &mut Vec<(String, Vec<usize>, Vec<f64>)>) {
    match layer {
        Layer::Recurrent(r) => {
            for (di, cell) in r.cells.iter().enumerate() {
                for g in 0..cell.kind.gates() {
                    out.push((
                        format!("layer{li}.dir{di}.w{g}"),
                        cell.w[g].shape().to_vec(),
                        cell.w[g].iter().copied().collect(),
                    ));
                    out.push((
                        format!("layer{li}.dir{di}.u{g}"),
                        cell.u[g].shape().to_vec(),
                        cell.u[g].iter().copied().collect(),
                    ));
                    out.push((
                        format!("layer{li}.dir{di}.b{g}"),
                        cell.b[g].shape().to_vec(),
                        cell.b[g].iter().copied().collect(),
                    ));
                }
            }
        }
        Layer::Dropout(_) => {}
        Layer::TimeDense(TimeDense { w, b }) | Layer::Dense(Dense { w, b }) => {
            out.push((
                format!("layer{li}.w"),
                w.shape().to_vec(),
                w.iter().copied().collect(),
            ));
            out.push((
                format!("layer{li}.b"),
                b.shape().to_vec(),
                b.iter().copied().collect(),
            ));
        }
    }
}

/// Writes per-epoch training loss as `epoch,mse` rows.
pub fn write_loss_history_csv(path: &Path, loss_history: &[f64]) -> Result<()> {
    let mut body = String::from("epoch,mse\n");
    for (i, loss) in loss_history.iter().enumerate() {
        let _ = writeln!(body, "{},{loss:?}", i + 1);
    }
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
