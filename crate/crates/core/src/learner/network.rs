//! The trajectory classifier: a shared row-wise 5 -> 1 compression of the
//! utility feature followed by three dense layers and a softmax over the m
//! trajectories.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::utility::{UtilityFeature, COLUMN_NAMES, NUM_UTILITIES};

/// Probability floor inside the log of the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

pub const MODEL_MAGIC: [u8; 8] = *b"TPREFCLF";
pub const MODEL_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub m: usize,
    pub hidden: [usize; 2],
    pub activation: Activation,
    /// Fixed factor applied to each utility column before compression.
    #[serde(default = "unit_scale")]
    pub input_scale: [f64; NUM_UTILITIES],
}

fn unit_scale() -> [f64; NUM_UTILITIES] {
    [1.0; NUM_UTILITIES]
}

impl Architecture {
    pub fn new(m: usize, hidden: [usize; 2], activation: Activation) -> Self {
        Self {
            m,
            hidden,
            activation,
            input_scale: unit_scale(),
        }
    }

    pub fn with_input_scale(mut self, input_scale: [f64; NUM_UTILITIES]) -> Self {
        self.input_scale = input_scale;
        self
    }

    fn layout(&self) -> Layout {
        let [h1, h2] = self.hidden;
        let m = self.m;
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let compress_w = take(NUM_UTILITIES);
        let compress_b = take(1).start;
        let w1 = take(h1 * m);
        let b1 = take(h1);
        let w2 = take(h2 * h1);
        let b2 = take(h2);
        let w3 = take(m * h2);
        let b3 = take(m);
        Layout {
            compress_w,
            compress_b,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: at,
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().len
    }
}

/// Offsets of each tensor in the flat parameter vector. Weight matrices are
/// row-major `[out][in]`.
#[derive(Debug, Clone)]
struct Layout {
    compress_w: std::ops::Range<usize>,
    compress_b: usize,
    w1: std::ops::Range<usize>,
    b1: std::ops::Range<usize>,
    w2: std::ops::Range<usize>,
    b2: std::ops::Range<usize>,
    w3: std::ops::Range<usize>,
    b3: std::ops::Range<usize>,
    len: usize,
}

/// Class probabilities for one utility feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub argmax_index: usize,
}

impl Prediction {
    fn from_logits(logits: &[f64]) -> Self {
        let probabilities = softmax(logits);
        let argmax_index = argmax(&probabilities);
        Self {
            probabilities,
            argmax_index,
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Intermediate activations kept for the backward pass.
struct Trace {
    compressed: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    act2: Vec<f64>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    arch: Architecture,
    params: Vec<f64>,
}

fn dense(weights: &[f64], bias: &[f64], input: &[f64]) -> Vec<f64> {
    let n_in = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| {
            let row = &weights[o * n_in..(o + 1) * n_in];
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect()
}

impl Classifier {
    /// All parameters zero; predicts the uniform distribution.
    pub fn zeroed(arch: Architecture) -> Self {
        let params = vec![0.0; arch.num_params()];
        Self { arch, params }
    }

    /// Seeded initialization: He-uniform for layers feeding a rectifier,
    /// Glorot-uniform otherwise, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeroed(arch);
        let layout = model.arch.layout();
        let [h1, h2] = model.arch.hidden;
        let m = model.arch.m;
        let hidden_bound = |fan_in: usize, fan_out: usize| match model.arch.activation {
            Activation::Relu => (6.0 / fan_in as f64).sqrt(),
            Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        };
        let tensors = [
            (layout.compress_w.clone(), (6.0 / (NUM_UTILITIES + 1) as f64).sqrt()),
            (layout.w1.clone(), hidden_bound(m, h1)),
            (layout.w2.clone(), hidden_bound(h1, h2)),
            (layout.w3.clone(), (6.0 / (h2 + m) as f64).sqrt()),
        ];
        for (range, bound) in tensors {
            for p in &mut model.params[range] {
                *p = rng.random_range(-bound..bound);
            }
        }
        model
    }

    /// Deterministic initialization that makes the dense block pass the
    /// compressed values straight through, scaled by `gain`: the first layer
    /// splits each value into its positive and negative parts, the second
    /// copies them and the output layer recombines them. Compression starts
    /// at zero weights and a small positive bias so every unit is active.
    /// Needs both hidden widths to be at least 2m.
    pub fn pass_through(arch: Architecture, gain: f64, compress_bias: f64) -> Result<Self> {
        let [h1, h2] = arch.hidden;
        let m = arch.m;
        if h1 < 2 * m || h2 < 2 * m {
            return Err(Error::invalid(format!(
                "pass-through init needs hidden widths of at least 2m = {}",
                2 * m
            )));
        }
        let mut model = Self::zeroed(arch);
        let layout = model.arch.layout();
        let p = &mut model.params;
        p[layout.compress_b] = compress_bias;
        for i in 0..m {
            p[layout.w1.start + i * m + i] = 1.0;
            p[layout.w1.start + (m + i) * m + i] = -1.0;
        }
        for k in 0..2 * m {
            p[layout.w2.start + k * h1 + k] = 1.0;
        }
        for j in 0..m {
            p[layout.w3.start + j * h2 + j] = gain;
            p[layout.w3.start + j * h2 + m + j] = -gain;
        }
        Ok(model)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn m(&self) -> usize {
        self.arch.m
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, u: &UtilityFeature) -> Result<()> {
        if u.m() != self.arch.m {
            return Err(Error::invalid(format!(
                "utility feature has {} rows, model expects {}",
                u.m(),
                self.arch.m
            )));
        }
        Ok(())
    }

    /// Output of the shared compression stage, one value per trajectory.
    pub fn compress(&self, u: &UtilityFeature) -> Result<Vec<f64>> {
        self.check_input(u)?;
        let layout = self.arch.layout();
        Ok(self.compress_unchecked(u, &layout))
    }

    fn compress_unchecked(&self, u: &UtilityFeature, layout: &Layout) -> Vec<f64> {
        let w = &self.params[layout.compress_w.clone()];
        let b = self.params[layout.compress_b];
        u.rows()
            .iter()
            .map(|row| {
                b + row
                    .iter()
                    .zip(w)
                    .zip(&self.arch.input_scale)
                    .map(|((x, w), s)| x * s * w)
                    .sum::<f64>()
            })
            .collect()
    }

    fn trace(&self, u: &UtilityFeature, layout: &Layout) -> Trace {
        let act = self.arch.activation;
        let p = &self.params;
        let compressed = self.compress_unchecked(u, layout);
        let pre1 = dense(&p[layout.w1.clone()], &p[layout.b1.clone()], &compressed);
        let act1: Vec<f64> = pre1.iter().map(|&x| act.apply(x)).collect();
        let pre2 = dense(&p[layout.w2.clone()], &p[layout.b2.clone()], &act1);
        let act2: Vec<f64> = pre2.iter().map(|&x| act.apply(x)).collect();
        let logits = dense(&p[layout.w3.clone()], &p[layout.b3.clone()], &act2);
        Trace {
            compressed,
            pre1,
            act1,
            pre2,
            act2,
            logits,
        }
    }

    pub fn logits(&self, u: &UtilityFeature) -> Result<Vec<f64>> {
        self.check_input(u)?;
        Ok(self.trace(u, &self.arch.layout()).logits)
    }

    pub fn forward(&self, u: &UtilityFeature) -> Result<Prediction> {
        Ok(Prediction::from_logits(&self.logits(u)?))
    }

    /// Mean cross-entropy of the true indices over the batch.
    pub fn loss(&self, batch: &[(&UtilityFeature, usize)]) -> Result<f64> {
        self.loss_impl(batch, None)
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, batch: &[(&UtilityFeature, usize)]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.loss_impl(batch, Some(&mut grad))?;
        Ok((loss, grad))
    }

    fn loss_impl(&self, batch: &[(&UtilityFeature, usize)], mut grad: Option<&mut Vec<f64>>) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("loss needs a non-empty batch"));
        }
        let layout = self.arch.layout();
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for &(u, label) in batch {
            self.check_input(u)?;
            if label >= self.arch.m {
                return Err(Error::invalid(format!("label {label} out of range")));
            }
            let trace = self.trace(u, &layout);
            let probs = softmax(&trace.logits);
            total -= probs[label].max(PROB_FLOOR).ln();
            if let Some(g) = grad.as_deref_mut() {
                self.accumulate_gradient(u, label, &trace, &probs, scale, &layout, g);
            }
        }
        Ok(total * scale)
    }

    #[allow(clippy::too_many_arguments)]
    fn accumulate_gradient(
        &self,
        u: &UtilityFeature,
        label: usize,
        trace: &Trace,
        probs: &[f64],
        scale: f64,
        layout: &Layout,
        grad: &mut [f64],
    ) {
        let act = self.arch.activation;
        let p = &self.params;
        let [h1, h2] = self.arch.hidden;
        let m = self.arch.m;

        // Softmax + cross-entropy.
        let d_logits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, &pj)| scale * (pj - if j == label { 1.0 } else { 0.0 }))
            .collect();

        let w3 = &p[layout.w3.clone()];
        let mut d_act2 = vec![0.0; h2];
        for (j, &d) in d_logits.iter().enumerate() {
            grad[layout.b3.start + j] += d;
            for k in 0..h2 {
                grad[layout.w3.start + j * h2 + k] += d * trace.act2[k];
                d_act2[k] += w3[j * h2 + k] * d;
            }
        }
        let d_pre2: Vec<f64> = (0..h2)
            .map(|k| d_act2[k] * act.derivative(trace.pre2[k], trace.act2[k]))
            .collect();

        let w2 = &p[layout.w2.clone()];
        let mut d_act1 = vec![0.0; h1];
        for (k, &d) in d_pre2.iter().enumerate() {
            grad[layout.b2.start + k] += d;
            for l in 0..h1 {
                grad[layout.w2.start + k * h1 + l] += d * trace.act1[l];
                d_act1[l] += w2[k * h1 + l] * d;
            }
        }
        let d_pre1: Vec<f64> = (0..h1)
            .map(|l| d_act1[l] * act.derivative(trace.pre1[l], trace.act1[l]))
            .collect();

        let w1 = &p[layout.w1.clone()];
        let mut d_compressed = vec![0.0; m];
        for (l, &d) in d_pre1.iter().enumerate() {
            grad[layout.b1.start + l] += d;
            for i in 0..m {
                grad[layout.w1.start + l * m + i] += d * trace.compressed[i];
                d_compressed[i] += w1[l * m + i] * d;
            }
        }

        for (row, &d) in u.rows().iter().zip(&d_compressed) {
            grad[layout.compress_b] += d;
            for (c, x) in row.iter().enumerate() {
                grad[layout.compress_w.start + c] += d * x * self.arch.input_scale[c];
            }
        }
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let header = ModelHeader {
            architecture: self.arch.clone(),
            columns: COLUMN_NAMES.iter().map(|s| s.to_string()).collect(),
            num_params: self.params.len(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::format("model", e))?;
        let mut bytes = Vec::with_capacity(16 + header.len() + 8 * self.params.len());
        bytes.extend_from_slice(&MODEL_MAGIC);
        bytes.extend_from_slice(&MODEL_FORMAT.to_le_bytes());
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&header);
        for p in &self.params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        out.write_all(&bytes).map_err(|e| Error::format("model", e))
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input
            .read_to_end(&mut bytes)
            .map_err(|e| Error::ModelLoad(e.to_string()))?;
        let take = |bytes: &[u8], at: usize, n: usize| -> Result<Vec<u8>> {
            bytes
                .get(at..at + n)
                .map(|s| s.to_vec())
                .ok_or_else(|| Error::ModelLoad("file is truncated".into()))
        };
        if take(&bytes, 0, 8)? != MODEL_MAGIC {
            return Err(Error::ModelLoad("bad magic bytes".into()));
        }
        let format = u32::from_le_bytes(take(&bytes, 8, 4)?.try_into().unwrap());
        if format != MODEL_FORMAT {
            return Err(Error::ModelLoad(format!(
                "unsupported model format {format} (expected {MODEL_FORMAT})"
            )));
        }
        let header_len = u32::from_le_bytes(take(&bytes, 12, 4)?.try_into().unwrap()) as usize;
        let header: ModelHeader = serde_json::from_slice(&take(&bytes, 16, header_len)?)
            .map_err(|e| Error::ModelLoad(format!("header: {e}")))?;
        if header.columns != COLUMN_NAMES {
            return Err(Error::ModelLoad(format!(
                "model expects columns {:?}",
                header.columns
            )));
        }
        let expected = header.architecture.num_params();
        if header.num_params != expected {
            return Err(Error::ModelLoad(format!(
                "header lists {} parameters, architecture needs {expected}",
                header.num_params
            )));
        }
        let body = &bytes[16 + header_len..];
        if body.len() != 8 * expected {
            return Err(Error::ModelLoad(format!(
                "expected {} parameter bytes, found {}",
                8 * expected,
                body.len()
            )));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            arch: header.architecture,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    architecture: Architecture,
    columns: Vec<String>,
    num_params: usize,
}
