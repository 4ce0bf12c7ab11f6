//! Multinomial logistic regression with an optional tanh hidden layer.
//!
//! Parameters live in one flat vector, layer by layer, each layer's weights
//! (row-major, `out x in`) followed by its biases. Loss is mean cross-entropy
//! with the natural logarithm.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{ParamVector, SeededRng, Vec64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub num_classes: usize,
    /// 0 means plain logistic regression.
    #[serde(default)]
    pub hidden_dim: usize,
}

impl ModelSpec {
    pub fn new(input_dim: usize, num_classes: usize, hidden_dim: usize) -> Result<Self> {
        let spec = Self { input_dim, num_classes, hidden_dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 {
            return Err(Error::Config("model needs input_dim >= 1 and num_classes >= 2".into()));
        }
        Ok(())
    }

    /// `(rows, cols)` of each affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        if self.hidden_dim == 0 {
            vec![(self.num_classes, self.input_dim)]
        } else {
            vec![(self.hidden_dim, self.input_dim), (self.num_classes, self.hidden_dim)]
        }
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

/// One affine layer unpacked from the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    spec: ModelSpec,
    params: ParamVector,
}

impl Model {
    pub fn zeros(spec: ModelSpec) -> Self {
        Self { spec, params: Vec64::zeros(spec.param_count()) }
    }

    /// Uniform initialisation in `[-0.05, 0.05]`.
    pub fn init(spec: ModelSpec, rng: &mut SeededRng) -> Self {
        let values = (0..spec.param_count()).map(|_| rng.uniform_range(-0.05, 0.05)).collect();
        Self { spec, params: Vec64::new(values).expect("finite init") }
    }

    pub fn from_params(spec: ModelSpec, params: ParamVector) -> Result<Self> {
        check_dim(spec.param_count(), params.len())?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        check_dim(self.params.len(), params.len())?;
        self.params = params;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn ensure_compatible(&self, other: &Model) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Config(format!("model spec mismatch: {:?} vs {:?}", self.spec, other.spec)));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<Layer> {
        let mut offset = 0;
        let p = self.params.as_slice();
        self.spec
            .layer_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let weights = p[offset..offset + rows * cols].to_vec();
                offset += rows * cols;
                let bias = p[offset..offset + rows].to_vec();
                offset += rows;
                Layer { rows, cols, weights, bias }
            })
            .collect()
    }

    pub fn from_layers(spec: ModelSpec, layers: &[Layer]) -> Result<Self> {
        let shapes = spec.layer_shapes();
        check_dim(shapes.len(), layers.len())?;
        let mut flat = Vec::with_capacity(spec.param_count());
        for (layer, (rows, cols)) in layers.iter().zip(shapes) {
            check_dim(rows * cols, layer.weights.len())?;
            check_dim(rows, layer.bias.len())?;
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.bias);
        }
        Self::from_params(spec, Vec64::new(flat)?)
    }
}

fn affine(p: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    let (w, b) = p.split_at(rows * cols);
    for r in 0..rows {
        out[r] = b[r] + crate::numerics::dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// Logits for one input, plus the hidden activations when there is a hidden layer.
fn logits(model: &Model, x: &[f64], hidden: &mut Vec<f64>, out: &mut [f64]) {
    let spec = model.spec;
    let p = model.params.as_slice();
    if spec.hidden_dim == 0 {
        affine(p, spec.num_classes, spec.input_dim, x, out);
    } else {
        let h = spec.hidden_dim;
        let first = h * spec.input_dim + h;
        hidden.resize(h, 0.0);
        affine(&p[..first], h, spec.input_dim, x, hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        affine(&p[first..], spec.num_classes, h, hidden, out);
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// `-ln softmax(z)[label]`, computed stably.
fn cross_entropy(z: &[f64], label: usize) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[label]
}

/// Class probabilities for one feature vector.
pub fn forward(model: &Model, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(model.spec.input_dim, x.len())?;
    let mut out = vec![0.0; model.spec.num_classes];
    logits(model, x, &mut Vec::new(), &mut out);
    softmax_in_place(&mut out);
    Ok(out)
}

/// Index of the largest logit (lowest index on ties).
pub fn predict(model: &Model, x: &[f64]) -> Result<usize> {
    check_dim(model.spec.input_dim, x.len())?;
    let mut out = vec![0.0; model.spec.num_classes];
    logits(model, x, &mut Vec::new(), &mut out);
    let mut best = 0;
    for (i, &v) in out.iter().enumerate() {
        if v > out[best] {
            best = i;
        }
    }
    Ok(best)
}

fn check_batch(model: &Model, data: &LabeledDataset, indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::Empty("batch"));
    }
    check_dim(model.spec.input_dim, data.input_dim())?;
    let c = model.spec.num_classes;
    for &i in indices {
        let label = data.label(i);
        if label as usize >= c {
            return Err(Error::LabelOutOfRange { label, num_classes: c });
        }
    }
    Ok(())
}

/// Mean cross-entropy over the rows `indices` of `data`.
pub fn batch_loss(model: &Model, data: &LabeledDataset, indices: &[usize]) -> Result<f64> {
    check_batch(model, data, indices)?;
    let mut z = vec![0.0; model.spec.num_classes];
    let mut hidden = Vec::new();
    let mut total = 0.0;
    for &i in indices {
        logits(model, data.row(i), &mut hidden, &mut z);
        total += cross_entropy(&z, data.label(i) as usize);
    }
    Ok(total / indices.len() as f64)
}

/// Mean cross-entropy over all of `data`.
pub fn loss(model: &Model, data: &LabeledDataset) -> Result<f64> {
    let all: Vec<usize> = (0..data.len()).collect();
    batch_loss(model, data, &all)
}

/// Gradient of [`batch_loss`] with respect to the flat parameters.
pub fn grad(model: &Model, data: &LabeledDataset, indices: &[usize]) -> Result<ParamVector> {
    check_batch(model, data, indices)?;
    let spec = model.spec;
    let c = spec.num_classes;
    let d = spec.input_dim;
    let p = model.params.as_slice();
    let mut g = vec![0.0; spec.param_count()];
    let mut z = vec![0.0; c];
    let mut hidden = Vec::new();
    let mut dh = vec![0.0; spec.hidden_dim];

    for &i in indices {
        let x = data.row(i);
        logits(model, x, &mut hidden, &mut z);
        softmax_in_place(&mut z);
        z[data.label(i) as usize] -= 1.0;

        if spec.hidden_dim == 0 {
            let (gw, gb) = g.split_at_mut(c * d);
            for r in 0..c {
                let dz = z[r];
                for (gw, xv) in gw[r * d..(r + 1) * d].iter_mut().zip(x) {
                    *gw += dz * xv;
                }
                gb[r] += dz;
            }
        } else {
            let h = spec.hidden_dim;
            let first = h * d + h;
            let w2 = &p[first..first + c * h];
            {
                let (gw2, gb2) = g[first..].split_at_mut(c * h);
                for r in 0..c {
                    let dz = z[r];
                    for (gw, hv) in gw2[r * h..(r + 1) * h].iter_mut().zip(&hidden) {
                        *gw += dz * hv;
                    }
                    gb2[r] += dz;
                }
            }
            for j in 0..h {
                let back: f64 = (0..c).map(|r| w2[r * h + j] * z[r]).sum();
                dh[j] = back * (1.0 - hidden[j] * hidden[j]);
            }
            let (gw1, rest) = g.split_at_mut(h * d);
            for j in 0..h {
                for (gw, xv) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *gw += dh[j] * xv;
                }
                rest[j] += dh[j];
            }
        }
    }
    let n = indices.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    Vec64::new(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplier applied to the learning rate every `decay_every` rounds.
    pub lr_decay: f64,
    pub decay_every: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, momentum: 0.9, weight_decay: 1e-4, lr_decay: 0.99, decay_every: 20 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.momentum)
            || !(self.weight_decay >= 0.0)
            || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0)
            || self.decay_every == 0
        {
            return Err(Error::Config("invalid SGD settings".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during 1-based `round`.
    pub fn lr_at(&self, round: usize) -> f64 {
        let steps = round.saturating_sub(1) / self.decay_every;
        self.learning_rate * self.lr_decay.powi(steps as i32)
    }
}

/// Heavy-ball step:
/// `v <- momentum * v - lr * (g + weight_decay * w)`, then `w <- w + v`.
pub fn sgd_step(model: &mut Model, g: &ParamVector, cfg: &SgdConfig, lr: f64, velocity: &mut ParamVector) -> Result<()> {
    check_dim(model.params.len(), g.len())?;
    check_dim(model.params.len(), velocity.len())?;
    let w = model.params.as_mut_slice();
    for ((wi, vi), gi) in w.iter_mut().zip(velocity.as_mut_slice()).zip(g.as_slice()) {
        *vi = cfg.momentum * *vi - lr * (gi + cfg.weight_decay * *wi);
        *wi += *vi;
    }
    model.params.ensure_finite("sgd_step")
}

const MODEL_MAGIC: &[u8; 4] = b"CFLM";
const LAYOUT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 * 3 + 8;

/// Bytes taken by one serialised model of this shape.
pub fn serialized_len(spec: ModelSpec) -> usize {
    HEADER_LEN + 8 * spec.param_count()
}

impl Model {
    /// Header (magic, layout version, input/class/hidden dims as u32, param
    /// count as u64) followed by the parameters as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(serialized_len(self.spec));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&LAYOUT_VERSION.to_le_bytes());
        for dim in [self.spec.input_dim, self.spec.num_classes, self.spec.hidden_dim] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in self.params.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses one model from the front of `bytes`; returns it with the bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let bad = |reason: &str| Error::Format { what: "model blob", reason: reason.into() };
        if bytes.len() < HEADER_LEN || &bytes[..4] != MODEL_MAGIC {
            return Err(bad("bad magic or truncated header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if u32_at(4) != LAYOUT_VERSION {
            return Err(bad("unsupported layout version"));
        }
        let spec = ModelSpec::new(u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize)?;
        let count = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
        if count != spec.param_count() {
            return Err(bad("parameter count disagrees with dims"));
        }
        let end = HEADER_LEN + 8 * count;
        if bytes.len() < end {
            return Err(bad("truncated parameters"));
        }
        let params = bytes[HEADER_LEN..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Self::from_params(spec, Vec64::new(params)?)?, end))
    }
}
