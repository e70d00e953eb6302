//! Per-instance component weight optimization.
//!
//! Starting from all weights at one, Adam minimizes the mean weight plus a
//! hinge penalty on how far the model output on the weighted reconstruction
//! drifts from the output on the original window. Weights are projected back
//! onto `[0, 1]` after every step.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomp::{decompose, reconstruct, weight_jvp, ComponentKind, ComponentSet, DecompConfig, WeightVector};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Classifier, ModelOutput, OutputGrad};
use crate::signal::{BaselineSet, MultimodalWindow};

/// How the per-class output differences are combined into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DiffReduction {
    #[default]
    Mean,
    Max,
}

/// Which model output is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputRepr {
    #[default]
    Probs,
    Logits,
}

impl FromStr for DiffReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            other => Err(Error::InvalidConfig(format!("unknown reduction `{other}`"))),
        }
    }
}

impl FromStr for OutputRepr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probs" => Ok(Self::Probs),
            "logits" => Ok(Self::Logits),
            other => Err(Error::InvalidConfig(format!("unknown output representation `{other}`"))),
        }
    }
}

impl fmt::Display for DiffReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Max => "max",
        })
    }
}

impl fmt::Display for OutputRepr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Probs => "probs",
            Self::Logits => "logits",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IicConfig {
    pub epochs: usize,
    pub lr: f64,
    pub max_deg: f64,
    pub penalty: f64,
    pub threshold: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub reduction: DiffReduction,
    pub output: OutputRepr,
    pub seed: u64,
}

impl Default for IicConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-2,
            max_deg: 0.01,
            penalty: 25.0,
            threshold: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            reduction: DiffReduction::Mean,
            output: OutputRepr::Probs,
            seed: 0,
        }
    }
}

impl IicConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.max_deg >= 0.0) {
            return bad("max_deg must be >= 0");
        }
        if !(self.penalty > 0.0) {
            return bad("penalty must be > 0");
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1)");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

/// Loss terms at one weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub weights: f64,
    pub degradation: f64,
    pub total: f64,
    /// Output difference before the hinge.
    pub raw_degradation: f64,
}

pub fn loss(w: &[f64], degradation: f64, cfg: &IicConfig) -> LossTerms {
    let weights = w.iter().sum::<f64>() / w.len().max(1) as f64;
    let pen = cfg.penalty * (degradation - cfg.max_deg).max(0.0);
    LossTerms { weights, degradation: pen, total: weights + pen, raw_degradation: degradation }
}

fn compared<'a>(out: &'a ModelOutput, repr: OutputRepr) -> &'a [f64] {
    match repr {
        OutputRepr::Probs => &out.probs,
        OutputRepr::Logits => &out.logits,
    }
}

/// Output difference and its (sub)gradient with respect to the compared
/// output of `current`.
pub fn output_difference(current: &ModelOutput, original: &ModelOutput, cfg: &IicConfig) -> (f64, Vec<f64>) {
    let a = compared(current, cfg.output);
    let b = compared(original, cfg.output);
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
    let mut grad = vec![0.0; diffs.len()];
    match cfg.reduction {
        DiffReduction::Mean => {
            let n = diffs.len() as f64;
            for (g, d) in grad.iter_mut().zip(&diffs) {
                *g = sign(*d) / n;
            }
            (diffs.iter().map(|d| d.abs()).sum::<f64>() / n, grad)
        }
        DiffReduction::Max => {
            let mut best = 0;
            for (i, d) in diffs.iter().enumerate() {
                if d.abs() > diffs[best].abs() {
                    best = i;
                }
            }
            grad[best] = sign(diffs[best]);
            (diffs[best].abs(), grad)
        }
    }
}

pub fn degradation<M: Classifier + ?Sized>(
    model: &M,
    cs: &ComponentSet,
    w: &WeightVector,
    original: &ModelOutput,
    cfg: &IicConfig,
) -> Result<f64> {
    let out = model.forward(&reconstruct(cs, w)?)?;
    Ok(output_difference(&out, original, cfg).0)
}

/// Output difference at `w` and the gradient of the hinge penalty
/// `p * max(0, deg - max_deg)` with respect to `w`.
pub fn penalty_gradient<M: Classifier + ?Sized>(
    model: &M,
    cs: &ComponentSet,
    w: &WeightVector,
    original: &ModelOutput,
    cfg: &IicConfig,
) -> Result<(f64, Vec<f64>)> {
    let recon = reconstruct(cs, w)?;
    let objective = |out: &ModelOutput| {
        let (value, g) = output_difference(out, original, cfg);
        let mut og = OutputGrad::zeros(g.len());
        if value > cfg.max_deg {
            let dst = match cfg.output {
                OutputRepr::Probs => &mut og.probs,
                OutputRepr::Logits => &mut og.logits,
            };
            for (o, gi) in dst.iter_mut().zip(&g) {
                *o = cfg.penalty * gi;
            }
        }
        (value, og)
    };
    let (value, _, gx) = model.input_gradient(&recon, &objective)?;
    let gw = if value > cfg.max_deg { weight_jvp(cs, w, &gx)? } else { vec![0.0; cs.d()] };
    Ok((value, gw))
}

/// Result of the box-constrained weight optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub weights: Vec<f64>,
    /// Entry `i` holds the losses after `i` steps, so the last entry belongs
    /// to the returned weights.
    pub trace: Vec<LossTerms>,
}

/// Minimizes `mean(w) + p * max(0, deg(w) - max_deg)` over `[0, 1]^d`.
///
/// `deg(w, want_grad)` returns the output difference and, when asked for,
/// the gradient of the penalty term with respect to `w` (zero when the
/// hinge is inactive).
pub fn optimize_weights<F>(d: usize, cfg: &IicConfig, mut deg: F) -> Result<Optimized>
where
    F: FnMut(&[f64], bool) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let adam = cfg.adam();
    let mut w = vec![1.0; d];
    let mut state = AdamState::new(d);
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for step in 0..=cfg.epochs {
        let stepping = step < cfg.epochs;
        let (value, pen_grad) = deg(&w, stepping)?;
        let terms = loss(&w, value, cfg);
        if !terms.total.is_finite() {
            log::warn!("non-finite loss at step {step}; trace so far: {trace:?}");
            return Err(Error::NonFiniteLoss { epoch: step });
        }
        trace.push(terms);
        if !stepping {
            break;
        }
        let base = 1.0 / d as f64;
        let grad: Vec<f64> = pen_grad.iter().map(|g| base + g).collect();
        adam_step(&mut w, &grad, &mut state, &adam);
        for v in &mut w {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(Optimized { weights: w, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub window_id: String,
    pub predicted_class: usize,
    pub true_label: Option<usize>,
    pub component_names: Vec<ComponentKind>,
    pub weights: WeightVector,
    pub binary: Vec<bool>,
    pub degradation_final: f64,
    pub loss_trace: Vec<LossTerms>,
    pub original_probs: Vec<f64>,
}

impl Explanation {
    pub fn d(&self) -> usize {
        self.component_names.len()
    }
}

/// Explains one already decomposed window.
pub fn explain_components<M: Classifier + ?Sized>(model: &M, cs: &ComponentSet, cfg: &IicConfig) -> Result<Explanation> {
    let original = model.forward(&reconstruct(cs, &WeightVector::ones(cs.d()))?)?;
    explain_against(model, cs, &original, cfg)
}

fn explain_against<M: Classifier + ?Sized>(
    model: &M,
    cs: &ComponentSet,
    original: &ModelOutput,
    cfg: &IicConfig,
) -> Result<Explanation> {
    let d = cs.d();
    let opt = optimize_weights(d, cfg, |w, want_grad| {
        let wv = WeightVector::new(w.to_vec())?;
        if want_grad {
            penalty_gradient(model, cs, &wv, original, cfg)
        } else {
            Ok((degradation(model, cs, &wv, original, cfg)?, vec![0.0; d]))
        }
    })?;
    let binary = opt.weights.iter().map(|v| *v >= cfg.threshold).collect();
    let degradation_final = opt.trace.last().map_or(0.0, |t| t.raw_degradation);
    Ok(Explanation {
        window_id: cs.window_id().to_string(),
        predicted_class: original.argmax(),
        true_label: cs.label(),
        component_names: cs.kinds(),
        weights: WeightVector::new(opt.weights)?,
        binary,
        degradation_final,
        loss_trace: opt.trace,
        original_probs: original.probs.clone(),
    })
}

/// Decomposes `window` and explains the model's prediction on it.
pub fn explain<M: Classifier + ?Sized>(
    model: &M,
    window: &MultimodalWindow,
    baselines: &BaselineSet,
    decomp: &DecompConfig,
    cfg: &IicConfig,
) -> Result<Explanation> {
    let cs = decompose(window, baselines, decomp)?;
    let original = model.forward(window)?;
    explain_against(model, &cs, &original, cfg)
}

#[derive(Debug, Default)]
pub struct BatchOutcome {
    pub explanations: Vec<Explanation>,
    /// Windows that could not be explained, with the reason.
    pub failures: Vec<(String, Error)>,
}

/// Explains every window independently; output order follows input order.
pub fn batch_explain<M: Classifier + ?Sized>(
    model: &M,
    windows: &[MultimodalWindow],
    baselines: &BaselineSet,
    decomp: &DecompConfig,
    cfg: &IicConfig,
) -> BatchOutcome {
    let results: Vec<Result<Explanation>> =
        windows.par_iter().map(|w| explain(model, w, baselines, decomp, cfg)).collect();
    let mut out = BatchOutcome::default();
    for (w, r) in windows.iter().zip(results) {
        match r {
            Ok(e) => out.explanations.push(e),
            Err(e) => {
                log::warn!("window {}: {e}", w.window_id());
                out.failures.push((w.window_id().to_string(), e));
            }
        }
    }
    out
}
