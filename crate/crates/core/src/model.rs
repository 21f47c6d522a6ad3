//! Two-branch network: shared ReLU encoder, K-way softmax head, energy
//! function, and the energy-regularized objective with its optimizer.
//!
//! The encoder is a small fully-connected stack with ReLU after every layer;
//! its output `phi(x)` feeds both the classification head (`W_h^T phi`, no
//! bias) and, with an appended constant feature, the Bayesian outlier head.
//! The energy of an input is `E(x) = -logsumexp(logits)`; training presses
//! ID energies below `m_in` and outlier energies above `m_out`, so the
//! margins must satisfy `m_in < m_out` for a gap to open between the two
//! populations. The OOD score is `-E(x)`: higher means more ID.
//!
//! Gradients are computed analytically (reverse mode through the head, the
//! energy hinges and the ReLU stack) and applied with Nesterov-momentum SGD,
//! weight decay on weights only.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite gradient encountered (learning rate or data pathology)")]
    NonFiniteGradient,
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
}

/// Architecture and objective hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Encoder widths; the last entry is the feature dimension `m`.
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    /// ID energies are penalized above this margin.
    pub m_in: f64,
    /// Outlier energies are penalized below this margin.
    pub m_out: f64,
    /// Weight of the energy regularizer.
    pub beta: f64,
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        *self.hidden.last().expect("encoder needs at least one layer")
    }

    fn validate(&self) {
        assert!(self.input_dim >= 1);
        assert!(!self.hidden.is_empty(), "encoder needs at least one layer");
        assert!(self.num_classes >= 2, "need at least two classes");
        assert!(self.beta >= 0.0);
        assert!(self.m_in.is_finite() && self.m_out.is_finite());
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 2,
            hidden: vec![32, 32],
            num_classes: 3,
            m_in: -25.0,
            m_out: -7.0,
            beta: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    // Row-major out_dim x in_dim.
    w: Vec<f64>,
    b: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl Layer {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.w[i * self.in_dim..(i + 1) * self.in_dim];
            for (wij, xj) in row.iter().zip(x) {
                *o += wij * xj;
            }
        }
        out
    }
}

/// The shared-encoder classifier with energy-based OOD scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    cfg: ModelConfig,
    layers: Vec<Layer>,
    // Row-major num_classes x m; logits = head . phi (no bias).
    head: Vec<f64>,
}

impl EnergyModel {
    /// He-style initialization: weights `N(0, 2/fan_in)`, biases zero.
    pub fn init(cfg: ModelConfig, rng: &mut RngStream) -> Self {
        cfg.validate();
        let mut layers = Vec::with_capacity(cfg.hidden.len());
        let mut in_dim = cfg.input_dim;
        for &out_dim in &cfg.hidden {
            let sd = (2.0 / in_dim as f64).sqrt();
            let w = (0..out_dim * in_dim)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            layers.push(Layer { w, b: vec![0.0; out_dim], in_dim, out_dim });
            in_dim = out_dim;
        }
        let m = cfg.feature_dim();
        let sd = (2.0 / m as f64).sqrt();
        let head = (0..cfg.num_classes * m)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        EnergyModel { cfg, layers, head }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn feature_dim(&self) -> usize {
        self.cfg.feature_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    /// Encoder features (ReLU after every layer).
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cfg.input_dim);
        let mut a = x.to_vec();
        for layer in &self.layers {
            a = layer.apply(&a);
            for v in &mut a {
                *v = v.max(0.0);
            }
        }
        a
    }

    /// `(phi, logits)` for one input.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let phi = self.features(x);
        let logits = self.head_logits(&phi);
        (phi, logits)
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).1
    }

    /// OOD score `-E(x)`; higher means more ID.
    pub fn ood_score(&self, x: &[f64]) -> f64 {
        -energy(&self.logits(x))
    }

    fn head_logits(&self, phi: &[f64]) -> Vec<f64> {
        let m = self.cfg.feature_dim();
        (0..self.cfg.num_classes)
            .map(|k| {
                let row = &self.head[k * m..(k + 1) * m];
                row.iter().zip(phi).map(|(h, p)| h * p).sum()
            })
            .collect()
    }

    // Activations after every encoder layer, input first: [a0=x, a1, ..., phi].
    fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut a = layer.apply(acts.last().unwrap());
            for v in &mut a {
                *v = v.max(0.0);
            }
            acts.push(a);
        }
        acts
    }

    /// Flat parameter vector: each layer's weights then biases, then the head.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out.extend_from_slice(&self.head);
        out
    }

    pub fn set_params_flat(&mut self, vals: &[f64]) {
        let mut pos = 0;
        for l in &mut self.layers {
            l.w.copy_from_slice(&vals[pos..pos + l.w.len()]);
            pos += l.w.len();
            l.b.copy_from_slice(&vals[pos..pos + l.b.len()]);
            pos += l.b.len();
        }
        self.head.copy_from_slice(&vals[pos..pos + self.head.len()]);
        pos += self.head.len();
        assert_eq!(pos, vals.len(), "flat parameter length mismatch");
    }

    /// Tensor layout `(name, len, is_weight)` in flat-parameter order.
    fn tensor_manifest(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("encoder.{i}.w"), vec![l.out_dim, l.in_dim], true));
            out.push((format!("encoder.{i}.b"), vec![l.out_dim], false));
        }
        out.push((
            "head.w".to_string(),
            vec![self.cfg.num_classes, self.cfg.feature_dim()],
            true,
        ));
        out
    }
}

/// `E(x) = -logsumexp(logits)`, computed with max subtraction.
pub fn energy(logits: &[f64]) -> f64 {
    -log_sum_exp(logits)
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + logits.iter().map(|&f| (f - m).exp()).sum::<f64>().ln()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&f| (f - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Energy hinge regularizer: squared hinges pressing ID energies below
/// `m_in` and outlier energies above `m_out`.
pub fn reg_loss(id_energies: &[f64], out_energies: &[f64], m_in: f64, m_out: f64) -> f64 {
    let mean_sq = |es: &[f64], f: &dyn Fn(f64) -> f64| -> f64 {
        if es.is_empty() {
            0.0
        } else {
            es.iter().map(|&e| f(e).powi(2)).sum::<f64>() / es.len() as f64
        }
    };
    mean_sq(id_energies, &|e| (e - m_in).max(0.0)) + mean_sq(out_energies, &|e| (m_out - e).max(0.0))
}

/// Paired training batch: B labeled ID inputs plus B outlier inputs.
#[derive(Debug, Clone)]
pub struct Batch {
    pub id_inputs: Vec<Vec<f64>>,
    pub id_labels: Vec<usize>,
    pub outlier_inputs: Vec<Vec<f64>>,
}

impl Batch {
    pub fn new(id_inputs: Vec<Vec<f64>>, id_labels: Vec<usize>, outlier_inputs: Vec<Vec<f64>>) -> Self {
        assert_eq!(id_inputs.len(), id_labels.len(), "one label per ID input");
        assert_eq!(id_inputs.len(), outlier_inputs.len(), "ID and outlier streams must share the batch size");
        assert!(!id_inputs.is_empty(), "batch must be nonempty");
        Batch { id_inputs, id_labels, outlier_inputs }
    }

    pub fn size(&self) -> usize {
        self.id_inputs.len()
    }
}

/// Cross-entropy of the ID stream plus `beta` times the energy regularizer.
pub fn total_loss(model: &EnergyModel, batch: &Batch) -> f64 {
    let b = batch.size() as f64;
    let mut ce = 0.0;
    let mut id_energies = Vec::with_capacity(batch.size());
    for (x, &y) in batch.id_inputs.iter().zip(&batch.id_labels) {
        assert!(y < model.cfg.num_classes, "label out of range");
        let logits = model.logits(x);
        let lse = log_sum_exp(&logits);
        ce += lse - logits[y];
        id_energies.push(-lse);
    }
    let out_energies: Vec<f64> =
        batch.outlier_inputs.iter().map(|x| energy(&model.logits(x))).collect();
    ce / b + model.cfg.beta * reg_loss(&id_energies, &out_energies, model.cfg.m_in, model.cfg.m_out)
}

/// Per-tensor gradients in the same layout as the model parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
    head: Vec<f64>,
}

impl Gradients {
    fn zeros_like(model: &EnergyModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
            head: vec![0.0; model.head.len()],
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.head);
        out
    }

    fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite()))
            && self.head.iter().all(|v| v.is_finite())
    }
}

/// Analytic gradients of [`total_loss`] (weight decay excluded; the
/// optimizer adds it). Returns the loss alongside.
pub fn compute_gradients(model: &EnergyModel, batch: &Batch) -> (f64, Gradients) {
    let b = batch.size() as f64;
    let beta = model.cfg.beta;
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;

    for (x, &y) in batch.id_inputs.iter().zip(&batch.id_labels) {
        assert!(y < model.cfg.num_classes, "label out of range");
        let acts = model.trace(x);
        let phi = acts.last().unwrap();
        let logits = model.head_logits(phi);
        let lse = log_sum_exp(&logits);
        let p = softmax(&logits);
        let e = -lse;
        let h_in = (e - model.cfg.m_in).max(0.0);
        loss += (lse - logits[y]) / b + beta * h_in * h_in / b;

        // d(ce)/df = p - onehot; d(h_in^2)/df = 2 h_in dE/df = -2 h_in p.
        let mut dlogits: Vec<f64> = p.iter().map(|&pk| pk * (1.0 - beta * 2.0 * h_in) / b).collect();
        dlogits[y] -= 1.0 / b;
        backprop_sample(model, &acts, &dlogits, &mut grads);
    }

    for x in &batch.outlier_inputs {
        let acts = model.trace(x);
        let phi = acts.last().unwrap();
        let logits = model.head_logits(phi);
        let e = energy(&logits);
        let h_out = (model.cfg.m_out - e).max(0.0);
        loss += beta * h_out * h_out / b;
        if h_out > 0.0 {
            // d(h_out^2)/df = 2 h_out d(m_out - E)/df = 2 h_out p.
            let p = softmax(&logits);
            let dlogits: Vec<f64> = p.iter().map(|&pk| beta * 2.0 * h_out * pk / b).collect();
            backprop_sample(model, &acts, &dlogits, &mut grads);
        }
    }

    (loss, grads)
}

fn backprop_sample(model: &EnergyModel, acts: &[Vec<f64>], dlogits: &[f64], grads: &mut Gradients) {
    let m = model.cfg.feature_dim();
    let phi = acts.last().unwrap();
    // Head: dH[k][j] += dlogits[k] * phi[j]; dphi[j] = sum_k H[k][j] dlogits[k].
    let mut da = vec![0.0; m];
    for (k, &dk) in dlogits.iter().enumerate() {
        let row = &model.head[k * m..(k + 1) * m];
        let grow = &mut grads.head[k * m..(k + 1) * m];
        for j in 0..m {
            grow[j] += dk * phi[j];
            da[j] += row[j] * dk;
        }
    }
    // Encoder layers, last to first. acts[l+1] = relu(W_l acts[l] + b_l).
    for (l, layer) in model.layers.iter().enumerate().rev() {
        let a_out = &acts[l + 1];
        let a_in = &acts[l];
        let (gw, gb) = &mut grads.layers[l];
        let mut da_in = vec![0.0; layer.in_dim];
        for i in 0..layer.out_dim {
            // ReLU mask: units at zero pass no gradient.
            let dz = if a_out[i] > 0.0 { da[i] } else { 0.0 };
            if dz == 0.0 {
                continue;
            }
            gb[i] += dz;
            let wrow = &layer.w[i * layer.in_dim..(i + 1) * layer.in_dim];
            let grow = &mut gw[i * layer.in_dim..(i + 1) * layer.in_dim];
            for j in 0..layer.in_dim {
                grow[j] += dz * a_in[j];
                da_in[j] += wrow[j] * dz;
            }
        }
        da = da_in;
    }
}

/// Nesterov-momentum SGD state (one velocity buffer per parameter tensor).
#[derive(Debug, Clone)]
pub struct OptimState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity_layers: Vec<(Vec<f64>, Vec<f64>)>,
    velocity_head: Vec<f64>,
}

impl OptimState {
    /// Defaults: momentum 0.9, weight decay 1e-4.
    pub fn new(model: &EnergyModel, learning_rate: f64) -> Self {
        OptimState {
            learning_rate,
            momentum: 0.9,
            weight_decay: 1e-4,
            velocity_layers: model
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
            velocity_head: vec![0.0; model.head.len()],
        }
    }
}

/// One optimization step: analytic gradients, weight decay added to weight
/// gradients only, Nesterov update `v <- mu v + g; p <- p - lr (g + mu v)`.
/// Returns the pre-step loss.
pub fn backward_and_step(
    model: &mut EnergyModel,
    optim: &mut OptimState,
    batch: &Batch,
) -> Result<f64, ModelError> {
    let (loss, grads) = compute_gradients(model, batch);
    if !grads.is_finite() || !loss.is_finite() {
        return Err(ModelError::NonFiniteGradient);
    }
    let lr = optim.learning_rate;
    let mu = optim.momentum;
    let wd = optim.weight_decay;
    let step = |p: &mut [f64], g: &[f64], v: &mut [f64], decay: f64| {
        for i in 0..p.len() {
            let g = g[i] + decay * p[i];
            v[i] = mu * v[i] + g;
            p[i] -= lr * (g + mu * v[i]);
        }
    };
    for (l, (layer, (vw, vb))) in
        model.layers.iter_mut().zip(&mut optim.velocity_layers).enumerate()
    {
        let (gw, gb) = &grads.layers[l];
        step(&mut layer.w, gw, vw, wd);
        step(&mut layer.b, gb, vb, 0.0);
    }
    step(&mut model.head, &grads.head, &mut optim.velocity_head, wd);
    Ok(loss)
}

// ---------------------------------------------------------------------------
// Checkpoint: JSON header + flat little-endian f64 parameter array.
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 8] = b"POEMCKP1";

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointHeader {
    schema_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorMeta>,
    param_count: usize,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorMeta {
    name: String,
    dims: Vec<usize>,
}

/// Write `magic | u32 header length | JSON header | f64 LE parameters`.
pub fn save_checkpoint(model: &EnergyModel, path: &Path) -> Result<(), ModelError> {
    let params = model.params_flat();
    let header = CheckpointHeader {
        schema_version: 1,
        config: model.cfg.clone(),
        tensors: model
            .tensor_manifest()
            .into_iter()
            .map(|(name, dims, _)| TensorMeta { name, dims })
            .collect(),
        param_count: params.len(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| ModelError::CheckpointFormat(e.to_string()))?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(CKPT_MAGIC)?;
    f.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    for v in &params {
        f.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<EnergyModel, ModelError> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(ModelError::CheckpointFormat("bad magic".into()));
    }
    let mut len_bytes = [0u8; 4];
    f.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| ModelError::CheckpointFormat(e.to_string()))?;
    if header.schema_version != 1 {
        return Err(ModelError::CheckpointFormat(format!(
            "unsupported schema version {}",
            header.schema_version
        )));
    }
    let mut data = vec![0u8; header.param_count * 8];
    f.read_exact(&mut data)?;
    let params: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    // Rebuild with zeroed parameters, then overwrite from the flat array.
    header.config.validate();
    let mut layers = Vec::new();
    let mut in_dim = header.config.input_dim;
    for &out_dim in &header.config.hidden {
        layers.push(Layer { w: vec![0.0; out_dim * in_dim], b: vec![0.0; out_dim], in_dim, out_dim });
        in_dim = out_dim;
    }
    let head = vec![0.0; header.config.num_classes * header.config.feature_dim()];
    let mut model = EnergyModel { cfg: header.config, layers, head };
    let expect = model.params_flat().len();
    if expect != header.param_count {
        return Err(ModelError::CheckpointFormat(format!(
            "parameter count {} does not match dims (expected {expect})",
            header.param_count
        )));
    }
    model.set_params_flat(&params);
    Ok(model)
}
