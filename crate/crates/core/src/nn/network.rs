//! Parameter storage, initialization, batched forward pass and exact
//! backpropagation for the two supported architectures.
//!
//! LSTM layers use the standard gate equations per timestep:
//!
//! ```text
//! i_t = σ(x_t·Wxi + h_{t-1}·Whi + b_i)
//! f_t = σ(x_t·Wxf + h_{t-1}·Whf + b_f)
//! g_t = act(x_t·Wxg + h_{t-1}·Whg + b_g)
//! o_t = σ(x_t·Wxo + h_{t-1}·Who + b_o)
//! c_t = f_t ∘ c_{t-1} + i_t ∘ g_t
//! h_t = o_t ∘ act(c_t)
//! ```
//!
//! The final hidden state of the last LSTM layer feeds the dense stack.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, LayerKind, NetworkSpec, NnError};
use crate::matrix::Matrix;

pub(crate) const GATE_INPUT: usize = 0;
pub(crate) const GATE_FORGET: usize = 1;
pub(crate) const GATE_CELL: usize = 2;
pub(crate) const GATE_OUTPUT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DenseParams {
    /// `n_in × units`
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LstmParams {
    /// Input-path weights per gate, each `d_in × units`.
    pub wx: [Matrix; 4],
    /// Recurrent-path weights per gate, each `units × units`.
    pub wh: [Matrix; 4],
    pub b: [Vec<f64>; 4],
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub(crate) enum LayerParams {
    Dense(DenseParams),
    Lstm(LstmParams),
}

fn glorot_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = rng.random_range(-limit..limit);
    }
    m
}

pub(crate) fn init_dense(rng: &mut ChaCha8Rng, n_in: usize, units: usize) -> DenseParams {
    DenseParams {
        w: glorot_matrix(rng, n_in, units),
        b: vec![0.0; units],
    }
}

fn init_lstm(rng: &mut ChaCha8Rng, d_in: usize, units: usize) -> LstmParams {
    let mut wx = Vec::with_capacity(4);
    let mut wh = Vec::with_capacity(4);
    for _ in 0..4 {
        wx.push(glorot_matrix(rng, d_in, units));
        wh.push(glorot_matrix(rng, units, units));
    }
    let mut b = [
        vec![0.0; units],
        vec![0.0; units],
        vec![0.0; units],
        vec![0.0; units],
    ];
    // Forget-gate bias starts at 1 so early cells remember by default.
    b[GATE_FORGET].iter_mut().for_each(|v| *v = 1.0);
    LstmParams {
        wx: wx.try_into().expect("4 gates"),
        wh: wh.try_into().expect("4 gates"),
        b,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = a.clone();
    for (v, &x) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *v *= x;
    }
    out
}

/// Per-layer parameter counts in flattening order.
pub(crate) fn layer_param_count(layer: &LayerParams) -> usize {
    match layer {
        LayerParams::Dense(d) => d.w.rows() * d.w.cols() + d.b.len(),
        LayerParams::Lstm(l) => {
            let mut n = 0;
            for g in 0..4 {
                n += l.wx[g].rows() * l.wx[g].cols();
                n += l.wh[g].rows() * l.wh[g].cols();
                n += l.b[g].len();
            }
            n
        }
    }
}

pub(crate) fn flatten_layers(layers: &[LayerParams]) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in layers {
        match layer {
            LayerParams::Dense(d) => {
                out.extend_from_slice(d.w.as_slice());
                out.extend_from_slice(&d.b);
            }
            LayerParams::Lstm(l) => {
                for g in 0..4 {
                    out.extend_from_slice(l.wx[g].as_slice());
                    out.extend_from_slice(l.wh[g].as_slice());
                    out.extend_from_slice(&l.b[g]);
                }
            }
        }
    }
    out
}

pub(crate) fn assign_layers_from_flat(layers: &mut [LayerParams], flat: &[f64]) {
    let mut pos = 0;
    let mut take = |dst: &mut [f64]| {
        dst.copy_from_slice(&flat[pos..pos + dst.len()]);
        pos += dst.len();
    };
    for layer in layers {
        match layer {
            LayerParams::Dense(d) => {
                take(d.w.as_mut_slice());
                take(&mut d.b);
            }
            LayerParams::Lstm(l) => {
                for g in 0..4 {
                    take(l.wx[g].as_mut_slice());
                    take(l.wh[g].as_mut_slice());
                    take(&mut l.b[g]);
                }
            }
        }
    }
    assert_eq!(pos, flat.len(), "parameter count mismatch");
}

/// Gradient of the batch MSE with respect to every parameter, shaped like
/// the parameters themselves.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub(crate) layers: Vec<LayerParams>,
}

impl Gradients {
    pub fn to_flat(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

struct DenseCache {
    input: Matrix,
    output: Matrix,
}

struct LstmStep {
    x: Matrix,
    h_prev: Matrix,
    c_prev: Matrix,
    i: Matrix,
    f: Matrix,
    g: Matrix,
    o: Matrix,
    tc: Matrix,
}

enum LayerCache {
    Dense(DenseCache),
    Lstm(Vec<LstmStep>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<LayerParams>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    version: u32,
    spec: NetworkSpec,
    params: Vec<f64>,
}

const MODEL_FORMAT_VERSION: u32 = 1;

impl Network {
    /// Glorot-uniform weights, zero biases, LSTM forget bias 1. Identical
    /// seeds produce bit-identical parameters.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self, NnError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut d_in = if spec.is_recurrent() { 1 } else { spec.input_size };
        for layer in &spec.layers {
            match layer.kind {
                LayerKind::Dense => {
                    layers.push(LayerParams::Dense(init_dense(&mut rng, d_in, layer.units)));
                }
                LayerKind::Lstm => {
                    layers.push(LayerParams::Lstm(init_lstm(&mut rng, d_in, layer.units)));
                }
            }
            d_in = layer.units;
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub(crate) fn from_parts(spec: NetworkSpec, layers: Vec<LayerParams>) -> Self {
        Self { spec, layers }
    }

    pub(crate) fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(layer_param_count).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assign_layers_from_flat(&mut self.layers, flat);
    }

    fn check_batch(&self, batch: &Matrix) -> Result<(), NnError> {
        if batch.cols() != self.spec.input_size {
            return Err(NnError::ShapeMismatch {
                expected: self.spec.input_size,
                got: batch.cols(),
            });
        }
        if batch.rows() == 0 {
            return Err(NnError::EmptyInput);
        }
        Ok(())
    }

    /// One prediction per input row; pure and deterministic.
    pub fn forward(&self, batch: &Matrix) -> Result<Vec<f64>, NnError> {
        self.check_batch(batch)?;
        Ok(self.forward_cached(batch, false).0)
    }

    fn forward_cached(&self, batch: &Matrix, keep: bool) -> (Vec<f64>, Vec<LayerCache>) {
        let n = batch.rows();
        let mut caches = Vec::new();

        // Recurrent prefix: rows are newest-first, the sequence runs oldest
        // to newest, so timestep t reads column (T - 1 - t).
        let mut dense_input = if self.spec.is_recurrent() {
            let timesteps = self.spec.input_size;
            let mut seq: Vec<Matrix> = (0..timesteps)
                .map(|t| {
                    let mut x = Matrix::zeros(n, 1);
                    for r in 0..n {
                        x.set(r, 0, batch.get(r, timesteps - 1 - t));
                    }
                    x
                })
                .collect();
            for (layer, spec) in self.layers.iter().zip(&self.spec.layers) {
                let LayerParams::Lstm(p) = layer else { break };
                let (out_seq, steps) = lstm_forward(p, spec.activation, &seq, keep);
                if keep {
                    caches.push(LayerCache::Lstm(steps));
                }
                seq = out_seq;
            }
            seq.pop().expect("lookback >= 1")
        } else {
            batch.clone()
        };

        for (layer, spec) in self.layers.iter().zip(&self.spec.layers) {
            let LayerParams::Dense(p) = layer else { continue };
            let mut z = dense_input.matmul(&p.w);
            z.add_row_bias(&p.b);
            let out = z.map(|v| spec.activation.apply(v));
            if keep {
                caches.push(LayerCache::Dense(DenseCache {
                    input: dense_input,
                    output: out.clone(),
                }));
            }
            dense_input = out;
        }

        let pred = (0..n).map(|r| dense_input.get(r, 0)).collect();
        (pred, caches)
    }

    /// Batch MSE and its gradient with respect to every parameter.
    pub fn backward(&self, batch: &Matrix, targets: &[f64]) -> Result<(f64, Gradients), NnError> {
        self.check_batch(batch)?;
        if targets.len() != batch.rows() {
            return Err(NnError::LengthMismatch {
                pred: batch.rows(),
                actual: targets.len(),
            });
        }
        let n = batch.rows();
        let (pred, caches) = self.forward_cached(batch, true);
        let loss = super::mse_loss(&pred, targets)?;

        // d(mse)/d(pred)
        let mut upstream = Matrix::zeros(n, 1);
        for r in 0..n {
            upstream.set(r, 0, 2.0 * (pred[r] - targets[r]) / n as f64);
        }

        let mut grads: Vec<Option<LayerParams>> = vec![None; self.layers.len()];

        // Dense stack, last to first.
        let n_lstm = self
            .spec
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::Lstm)
            .count();
        for idx in (n_lstm..self.layers.len()).rev() {
            let LayerParams::Dense(p) = &self.layers[idx] else {
                unreachable!("dense suffix")
            };
            let LayerCache::Dense(cache) = &caches[idx] else {
                unreachable!("cache aligned with layers")
            };
            let act = self.spec.layers[idx].activation;
            let mut dz = upstream;
            for (v, &y) in dz.as_mut_slice().iter_mut().zip(cache.output.as_slice()) {
                *v *= act.grad_from_output(y);
            }
            let dw = cache.input.transpose_matmul(&dz);
            let db = dz.column_sums();
            upstream = dz.matmul_transpose(&p.w);
            grads[idx] = Some(LayerParams::Dense(DenseParams { w: dw, b: db }));
        }

        // Recurrent prefix: gradient reaches the last LSTM layer only at the
        // final timestep; deeper layers receive per-timestep gradients.
        if n_lstm > 0 {
            let timesteps = self.spec.input_size;
            let mut dh_seq: Vec<Matrix> = Vec::new();
            for idx in (0..n_lstm).rev() {
                let LayerParams::Lstm(p) = &self.layers[idx] else {
                    unreachable!("lstm prefix")
                };
                let LayerCache::Lstm(steps) = &caches[idx] else {
                    unreachable!("cache aligned with layers")
                };
                if idx == n_lstm - 1 {
                    let units = self.spec.layers[idx].units;
                    dh_seq = (0..timesteps)
                        .map(|t| {
                            if t == timesteps - 1 {
                                upstream.clone()
                            } else {
                                Matrix::zeros(n, units)
                            }
                        })
                        .collect();
                }
                let act = self.spec.layers[idx].activation;
                let (layer_grads, dx_seq) = lstm_backward(p, act, steps, &dh_seq);
                grads[idx] = Some(LayerParams::Lstm(layer_grads));
                dh_seq = dx_seq;
            }
        }

        let layers = grads
            .into_iter()
            .map(|g| g.expect("all layers visited"))
            .collect();
        Ok((loss, Gradients { layers }))
    }

    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            version: MODEL_FORMAT_VERSION,
            spec: self.spec.clone(),
            params: self.params_flat(),
        };
        serde_json::to_string(&file).expect("network serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let file: NetworkFile =
            serde_json::from_str(text).map_err(|e| NnError::ModelFormat(e.to_string()))?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(NnError::ModelFormat(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        let mut net = Network::init(&file.spec, 0)?;
        if net.num_params() != file.params.len() {
            return Err(NnError::ModelFormat(format!(
                "expected {} parameters, file has {}",
                net.num_params(),
                file.params.len()
            )));
        }
        net.set_params_flat(&file.params);
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

fn lstm_forward(
    p: &LstmParams,
    act: Activation,
    seq: &[Matrix],
    keep: bool,
) -> (Vec<Matrix>, Vec<LstmStep>) {
    let n = seq[0].rows();
    let units = p.b[GATE_INPUT].len();
    let mut h = Matrix::zeros(n, units);
    let mut c = Matrix::zeros(n, units);
    let mut out_seq = Vec::with_capacity(seq.len());
    let mut steps = Vec::new();

    for x in seq {
        let gate = |g: usize| {
            let mut pre = x.matmul(&p.wx[g]);
            pre.add_assign(&h.matmul(&p.wh[g]));
            pre.add_row_bias(&p.b[g]);
            pre
        };
        let i = gate(GATE_INPUT).map(sigmoid);
        let f = gate(GATE_FORGET).map(sigmoid);
        let g = gate(GATE_CELL).map(|v| act.apply(v));
        let o = gate(GATE_OUTPUT).map(sigmoid);

        let mut c_new = hadamard(&f, &c);
        c_new.add_assign(&hadamard(&i, &g));
        let tc = c_new.map(|v| act.apply(v));
        let h_new = hadamard(&o, &tc);

        if keep {
            steps.push(LstmStep {
                x: x.clone(),
                h_prev: h.clone(),
                c_prev: c.clone(),
                i,
                f,
                g,
                o,
                tc,
            });
        }
        h = h_new.clone();
        c = c_new;
        out_seq.push(h_new);
    }
    (out_seq, steps)
}

/// Backprop through time for one LSTM layer. `dh_seq[t]` is the upstream
/// gradient on the hidden state at timestep `t`; the returned sequence holds
/// the gradients on the layer inputs, consumed by the layer below.
fn lstm_backward(
    p: &LstmParams,
    act: Activation,
    steps: &[LstmStep],
    dh_seq: &[Matrix],
) -> (LstmParams, Vec<Matrix>) {
    let timesteps = steps.len();
    let n = steps[0].x.rows();
    let d_in = steps[0].x.cols();
    let units = p.b[GATE_INPUT].len();

    let zero_gate = || {
        [
            Matrix::zeros(p.wx[0].rows(), units),
            Matrix::zeros(p.wx[0].rows(), units),
            Matrix::zeros(p.wx[0].rows(), units),
            Matrix::zeros(p.wx[0].rows(), units),
        ]
    };
    let mut g_wx = zero_gate();
    let mut g_wh = [
        Matrix::zeros(units, units),
        Matrix::zeros(units, units),
        Matrix::zeros(units, units),
        Matrix::zeros(units, units),
    ];
    let mut g_b = [
        vec![0.0; units],
        vec![0.0; units],
        vec![0.0; units],
        vec![0.0; units],
    ];
    let mut dx_seq = vec![Matrix::zeros(n, d_in); timesteps];

    let mut dh_next = Matrix::zeros(n, units);
    let mut dc_next = Matrix::zeros(n, units);

    for t in (0..timesteps).rev() {
        let step = &steps[t];
        let mut dh = dh_seq[t].clone();
        dh.add_assign(&dh_next);

        // Output gate: h = o ∘ act(c).
        let mut dpre_o = hadamard(&dh, &step.tc);
        for (v, &o) in dpre_o.as_mut_slice().iter_mut().zip(step.o.as_slice()) {
            *v *= o * (1.0 - o);
        }

        // Cell state picks up gradient from h and from the future.
        let mut dc = dc_next.clone();
        {
            let through_h = hadamard(&dh, &step.o);
            for ((v, &th), &tc) in dc
                .as_mut_slice()
                .iter_mut()
                .zip(through_h.as_slice())
                .zip(step.tc.as_slice())
            {
                *v += th * act.grad_from_output(tc);
            }
        }

        let mut dpre_i = hadamard(&dc, &step.g);
        for (v, &i) in dpre_i.as_mut_slice().iter_mut().zip(step.i.as_slice()) {
            *v *= i * (1.0 - i);
        }
        let mut dpre_g = hadamard(&dc, &step.i);
        for (v, &g) in dpre_g.as_mut_slice().iter_mut().zip(step.g.as_slice()) {
            *v *= act.grad_from_output(g);
        }
        let mut dpre_f = hadamard(&dc, &step.c_prev);
        for (v, &f) in dpre_f.as_mut_slice().iter_mut().zip(step.f.as_slice()) {
            *v *= f * (1.0 - f);
        }

        dc_next = hadamard(&dc, &step.f);

        let mut dx = Matrix::zeros(n, d_in);
        let mut dh_prev = Matrix::zeros(n, units);
        for (gate, dpre) in [
            (GATE_INPUT, &dpre_i),
            (GATE_FORGET, &dpre_f),
            (GATE_CELL, &dpre_g),
            (GATE_OUTPUT, &dpre_o),
        ] {
            g_wx[gate].add_assign(&step.x.transpose_matmul(dpre));
            g_wh[gate].add_assign(&step.h_prev.transpose_matmul(dpre));
            for (acc, v) in g_b[gate].iter_mut().zip(dpre.column_sums()) {
                *acc += v;
            }
            dx.add_assign(&dpre.matmul_transpose(&p.wx[gate]));
            dh_prev.add_assign(&dpre.matmul_transpose(&p.wh[gate]));
        }
        dx_seq[t] = dx;
        dh_next = dh_prev;
    }

    (
        LstmParams {
            wx: g_wx,
            wh: g_wh,
            b: g_b,
        },
        dx_seq,
    )
}
