use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Fcn,
    Lstm,
    Transformer,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Fcn => "fcn",
            Arch::Lstm => "lstm",
            Arch::Transformer => "transformer",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcn" => Ok(Arch::Fcn),
            "lstm" => Ok(Arch::Lstm),
            "transformer" => Ok(Arch::Transformer),
            other => Err(Error::InvalidConfig(format!("unknown architecture `{other}`"))),
        }
    }
}

/// Architecture and input layout. Inputs are `seq_len x channels` matrices,
/// one row per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub hidden_size: usize,
    /// Hidden layers for FCN (0 gives a linear model), stacked cells for LSTM,
    /// encoder blocks for the transformer.
    pub num_layers: usize,
    pub num_heads: usize,
    pub seq_len: usize,
    pub channels: Vec<String>,
    pub num_classes: usize,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(arch: Arch, seq_len: usize, channels: Vec<String>, num_classes: usize) -> Self {
        let (num_layers, num_heads) = match arch {
            Arch::Fcn => (1, 1),
            Arch::Lstm => (1, 1),
            Arch::Transformer => (2, 4),
        };
        Self { arch, hidden_size: 32, num_layers, num_heads, seq_len, channels, num_classes, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.hidden_size == 0 || self.seq_len == 0 || self.channels.is_empty() || self.num_classes == 0 {
            return bad("hidden_size, seq_len, channels and num_classes must be >= 1");
        }
        if self.arch != Arch::Fcn && self.num_layers == 0 {
            return bad("num_layers must be >= 1");
        }
        if self.arch == Arch::Transformer && (self.num_heads == 0 || self.hidden_size % self.num_heads != 0) {
            return bad("num_heads must divide hidden_size");
        }
        Ok(())
    }

    pub fn input_dim(&self) -> (usize, usize) {
        (self.seq_len, self.channels.len())
    }

    /// Parameter names and shapes, in storage order.
    fn layout(&self) -> Vec<(String, (usize, usize))> {
        let h = self.hidden_size;
        let c = self.channels.len();
        let k = self.num_classes;
        let mut out = Vec::new();
        match self.arch {
            Arch::Fcn => {
                let mut fan_in = self.seq_len * c;
                for l in 0..self.num_layers {
                    out.push((format!("fc{l}.w"), (fan_in, h)));
                    out.push((format!("fc{l}.b"), (1, h)));
                    fan_in = h;
                }
                out.push(("head.w".into(), (fan_in, k)));
                out.push(("head.b".into(), (1, k)));
            }
            Arch::Lstm => {
                let mut fan_in = c;
                for l in 0..self.num_layers {
                    out.push((format!("lstm{l}.wx"), (fan_in, 4 * h)));
                    out.push((format!("lstm{l}.wh"), (h, 4 * h)));
                    out.push((format!("lstm{l}.b"), (1, 4 * h)));
                    fan_in = h;
                }
                out.push(("head.w".into(), (h, k)));
                out.push(("head.b".into(), (1, k)));
            }
            Arch::Transformer => {
                out.push(("embed.w".into(), (c, h)));
                out.push(("embed.b".into(), (1, h)));
                for l in 0..self.num_layers {
                    out.push((format!("enc{l}.qkv.w"), (h, 3 * h)));
                    out.push((format!("enc{l}.qkv.b"), (1, 3 * h)));
                    out.push((format!("enc{l}.out.w"), (h, h)));
                    out.push((format!("enc{l}.out.b"), (1, h)));
                    out.push((format!("enc{l}.ln1.g"), (1, h)));
                    out.push((format!("enc{l}.ln1.b"), (1, h)));
                    out.push((format!("enc{l}.ff1.w"), (h, 2 * h)));
                    out.push((format!("enc{l}.ff1.b"), (1, 2 * h)));
                    out.push((format!("enc{l}.ff2.w"), (2 * h, h)));
                    out.push((format!("enc{l}.ff2.b"), (1, h)));
                    out.push((format!("enc{l}.ln2.g"), (1, h)));
                    out.push((format!("enc{l}.ln2.b"), (1, h)));
                }
                out.push(("head.w".into(), (h, k)));
                out.push(("head.b".into(), (1, k)));
            }
        }
        out
    }
}

/// Per-channel input standardization, fixed at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    /// Fits column statistics over all rows of all inputs. Zero-variance
    /// channels keep unit scale.
    pub fn fit<'a>(inputs: impl IntoIterator<Item = &'a Array2<f64>>, channels: usize) -> Self {
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        let mut n = 0usize;
        let inputs: Vec<&Array2<f64>> = inputs.into_iter().collect();
        for x in &inputs {
            for row in x.rows() {
                for (c, v) in row.iter().enumerate() {
                    sum[c] += v;
                }
                n += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n.max(1) as f64).collect();
        for x in &inputs {
            for row in x.rows() {
                for (c, v) in row.iter().enumerate() {
                    sq[c] += (v - mean[c]) * (v - mean[c]);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / n.max(1) as f64).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
}

/// Class scores for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ModelOutput {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let probs = exps.iter().map(|e| e / sum).collect();
        Self { logits, probs }
    }

    /// Negative log-likelihood of `label`, computed from the logits so it
    /// stays finite for saturated outputs and propagates NaN.
    pub fn nll(&self, label: usize) -> f64 {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + self.logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        lse - self.logits[label]
    }

    /// Index of the largest probability; ties resolve to the lowest class.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// A trainable classifier over `seq_len x channels` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Param>,
    norm: Standardizer,
}

pub(crate) struct Graph {
    pub tape: Tape,
    pub input: Var,
    pub params: Vec<Var>,
    pub logits: Var,
}

impl Model {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains and an LSTM
    /// forget-gate bias of one. Deterministic in `spec.seed`.
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let h = spec.hidden_size;
        let params = spec
            .layout()
            .into_iter()
            .map(|(name, (r, c))| {
                let value = if name.ends_with(".g") {
                    Array2::ones((r, c))
                } else if r == 1 {
                    let mut b = Array2::zeros((r, c));
                    if name.starts_with("lstm") {
                        b.slice_mut(ndarray::s![.., h..2 * h]).fill(1.0);
                    }
                    b
                } else {
                    let limit = (6.0 / (r + c) as f64).sqrt();
                    Array2::from_shape_simple_fn((r, c), || rng.gen_range(-limit..limit))
                };
                Param { name, value }
            })
            .collect();
        let norm = Standardizer::identity(spec.channels.len());
        Ok(Self { spec, params, norm })
    }

    pub fn from_parts(spec: ModelSpec, params: Vec<Param>, norm: Standardizer) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        if layout.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if *name != p.name || *shape != p.value.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                    p.name,
                    p.value.dim()
                )));
            }
        }
        if norm.mean.len() != spec.channels.len() || norm.std.len() != spec.channels.len() {
            return Err(Error::ShapeMismatch("standardizer width".into()));
        }
        Ok(Self { spec, params, norm })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.norm
    }

    pub fn set_standardizer(&mut self, norm: Standardizer) {
        self.norm = norm;
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.dim() != self.spec.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input is {:?}, model expects {:?}",
                x.dim(),
                self.spec.input_dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn graph(&self, x: &Array2<f64>, input_grad: bool, param_grad: bool) -> Result<Graph> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let input = tape.leaf(self.norm.apply(x), input_grad);
        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.value.clone(), param_grad)).collect();
        let logits = match self.spec.arch {
            Arch::Fcn => self.fcn(&mut tape, input, &params),
            Arch::Lstm => self.lstm(&mut tape, input, &params),
            Arch::Transformer => self.transformer(&mut tape, input, &params),
        };
        Ok(Graph { tape, input, params, logits })
    }

    fn fcn(&self, t: &mut Tape, x: Var, p: &[Var]) -> Var {
        let (n, c) = self.spec.input_dim();
        let mut h = t.reshape(x, 1, n * c);
        for l in 0..self.spec.num_layers {
            let z = t.matmul(h, p[2 * l]);
            let z = t.add_row(z, p[2 * l + 1]);
            h = t.tanh(z);
        }
        let k = 2 * self.spec.num_layers;
        let z = t.matmul(h, p[k]);
        t.add_row(z, p[k + 1])
    }

    fn lstm(&self, t: &mut Tape, x: Var, p: &[Var]) -> Var {
        let h_size = self.spec.hidden_size;
        let steps = self.spec.seq_len;
        let mut seq = x;
        let mut last = None;
        for l in 0..self.spec.num_layers {
            let (wx, wh, b) = (p[3 * l], p[3 * l + 1], p[3 * l + 2]);
            let xw = t.matmul(seq, wx);
            let xw = t.add_row(xw, b);
            let mut h = t.leaf(Array2::zeros((1, h_size)), false);
            let mut c = t.leaf(Array2::zeros((1, h_size)), false);
            let mut outputs = Vec::with_capacity(steps);
            for k in 0..steps {
                let xk = t.slice_rows(xw, k, 1);
                let hw = t.matmul(h, wh);
                let z = t.add(xk, hw);
                let zi = t.slice_cols(z, 0, h_size);
                let zf = t.slice_cols(z, h_size, h_size);
                let zg = t.slice_cols(z, 2 * h_size, h_size);
                let zo = t.slice_cols(z, 3 * h_size, h_size);
                let i = t.sigmoid(zi);
                let f = t.sigmoid(zf);
                let g = t.tanh(zg);
                let o = t.sigmoid(zo);
                let fc = t.mul(f, c);
                let ig = t.mul(i, g);
                c = t.add(fc, ig);
                let tc = t.tanh(c);
                h = t.mul(o, tc);
                outputs.push(h);
            }
            last = Some(h);
            if l + 1 < self.spec.num_layers {
                seq = t.concat_rows(&outputs);
            }
        }
        let k = 3 * self.spec.num_layers;
        let z = t.matmul(last.expect("at least one layer"), p[k]);
        t.add_row(z, p[k + 1])
    }

    fn transformer(&self, t: &mut Tape, x: Var, p: &[Var]) -> Var {
        let h_size = self.spec.hidden_size;
        let heads = self.spec.num_heads;
        let dh = h_size / heads;
        let steps = self.spec.seq_len;
        let e = t.matmul(x, p[0]);
        let e = t.add_row(e, p[1]);
        let pe = t.leaf(positional_encoding(steps, h_size), false);
        let mut h = t.add(e, pe);
        let scale = 1.0 / (dh as f64).sqrt();
        for l in 0..self.spec.num_layers {
            let q = &p[2 + 12 * l..2 + 12 * (l + 1)];
            let qkv = t.matmul(h, q[0]);
            let qkv = t.add_row(qkv, q[1]);
            let mut head_out = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = t.slice_cols(qkv, hd * dh, dh);
                let kh = t.slice_cols(qkv, h_size + hd * dh, dh);
                let vh = t.slice_cols(qkv, 2 * h_size + hd * dh, dh);
                let kt = t.transpose(kh);
                let scores = t.matmul(qh, kt);
                let scores = t.scale(scores, scale);
                let attn = t.softmax_rows(scores);
                head_out.push(t.matmul(attn, vh));
            }
            let cat = t.concat_cols(&head_out);
            let a = t.matmul(cat, q[2]);
            let a = t.add_row(a, q[3]);
            let r = t.add(h, a);
            let n = t.layer_norm_rows(r);
            let n = t.mul_row(n, q[4]);
            let h1 = t.add_row(n, q[5]);
            let f = t.matmul(h1, q[6]);
            let f = t.add_row(f, q[7]);
            let f = t.gelu(f);
            let f = t.matmul(f, q[8]);
            let f = t.add_row(f, q[9]);
            let r = t.add(h1, f);
            let n = t.layer_norm_rows(r);
            let n = t.mul_row(n, q[10]);
            h = t.add_row(n, q[11]);
        }
        let pooled = t.mean_rows(h);
        let k = 2 + 12 * self.spec.num_layers;
        let z = t.matmul(pooled, p[k]);
        t.add_row(z, p[k + 1])
    }

    /// Inference-mode forward pass.
    pub fn forward_matrix(&self, x: &Array2<f64>) -> Result<ModelOutput> {
        let g = self.graph(x, false, false)?;
        Ok(ModelOutput::from_logits(g.tape.value(g.logits).iter().copied().collect()))
    }

    /// Class probabilities for many FCN inputs at once, one flattened
    /// `seq_len x channels` input per row. Matches [`Model::forward_matrix`]
    /// row by row.
    pub fn forward_rows_fcn(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let (t, c) = self.spec.input_dim();
        if self.spec.arch != Arch::Fcn {
            return Err(Error::InvalidConfig("batched rows need an FCN model".into()));
        }
        if x.ncols() != t * c {
            return Err(Error::ShapeMismatch(format!("rows have {} columns, model expects {}", x.ncols(), t * c)));
        }
        let mut h = x.clone();
        for mut row in h.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.norm.mean[j % c]) / self.norm.std[j % c];
            }
        }
        let layer = |h: &Array2<f64>, w: &Param, b: &Param| {
            let mut z = h.dot(&w.value);
            z += &b.value.row(0);
            z
        };
        for l in 0..self.spec.num_layers {
            h = layer(&h, &self.params[2 * l], &self.params[2 * l + 1]).mapv(f64::tanh);
        }
        let k = 2 * self.spec.num_layers;
        let mut z = layer(&h, &self.params[k], &self.params[k + 1]);
        for mut row in z.rows_mut() {
            let probs = ModelOutput::from_logits(row.to_vec()).probs;
            row.assign(&ndarray::ArrayView1::from(&probs));
        }
        Ok(z)
    }

    /// Output and the gradient of a scalar objective with respect to the raw
    /// (unstandardized) input.
    pub fn input_gradient_matrix(&self, x: &Array2<f64>, objective: &dyn super::Objective) -> Result<(f64, ModelOutput, Array2<f64>)> {
        let g = self.graph(x, true, false)?;
        let out = ModelOutput::from_logits(g.tape.value(g.logits).iter().copied().collect());
        let (value, og) = objective.evaluate(&out);
        let seed = og.logit_seed(&out);
        if seed.iter().all(|v| *v == 0.0) {
            return Ok((value, out, Array2::zeros(x.dim())));
        }
        let mut grads = g.tape.backward(g.logits, seed);
        let mut gx = grads.take(g.input).unwrap_or_else(|| Array2::zeros(x.dim()));
        for mut row in gx.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                *v /= self.norm.std[c];
            }
        }
        Ok((value, out, gx))
    }

    /// Cross-entropy loss for one labeled input and its parameter gradients.
    pub(crate) fn loss_and_param_grads(&self, x: &Array2<f64>, label: usize) -> Result<(f64, ModelOutput, Vec<Array2<f64>>)> {
        if label >= self.spec.num_classes {
            return Err(Error::ShapeMismatch(format!("label {label} out of range")));
        }
        let g = self.graph(x, false, true)?;
        let out = ModelOutput::from_logits(g.tape.value(g.logits).iter().copied().collect());
        let loss = out.nll(label);
        let mut seed = Array2::from_shape_vec((1, out.probs.len()), out.probs.clone()).expect("1 x k");
        seed[[0, label]] -= 1.0;
        let mut grads = g.tape.backward(g.logits, seed);
        let pg = g
            .params
            .iter()
            .zip(&self.params)
            .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Array2::zeros(p.value.dim())))
            .collect();
        Ok((loss, out, pg))
    }
}

/// Sinusoidal positional encoding, `steps x dim`.
pub fn positional_encoding(steps: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((steps, dim), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 { angle.sin() } else { angle.cos() }
    })
}
