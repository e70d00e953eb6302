use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decomp::{ComponentKind, ComponentSet};
use crate::error::{Error, Result};
use crate::nn::ModelOutput;

/// One scalar per component: scalars as is, series by their time mean.
pub fn concept_vector(cs: &ComponentSet) -> Vec<f64> {
    cs.time_means()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LcbmConfig {
    /// Strength of the `l2 / 2 * ||W||^2` penalty on the coefficients.
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LcbmConfig {
    fn default() -> Self {
        Self { l2: 1e-3, max_iter: 100, tol: 1e-10 }
    }
}

/// Bias penalty that only pins down the softmax shift invariance.
const BIAS_RIDGE: f64 = 1e-8;

/// Multinomial logistic regression over standardized concept values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lcbm {
    pub names: Vec<ComponentKind>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `num_classes x num_concepts`, on the standardized scale.
    pub coef: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Concepts with zero training variance; their coefficients are zero.
    pub singular: Vec<bool>,
}

struct Problem<'a> {
    z: &'a [Vec<f64>],
    y: &'a [usize],
    k: usize,
    f: usize,
    l2: f64,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.k * (self.f + 1)
    }

    fn logits(&self, theta: &DVector<f64>, z: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|c| {
                let base = c * (self.f + 1);
                theta[base + self.f] + z.iter().enumerate().map(|(j, v)| theta[base + j] * v).sum::<f64>()
            })
            .collect()
    }

    fn penalty(&self, theta: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for c in 0..self.k {
            for j in 0..=self.f {
                let v = theta[c * (self.f + 1) + j];
                s += if j == self.f { BIAS_RIDGE } else { self.l2 } * v * v;
            }
        }
        0.5 * s
    }

    fn loss(&self, theta: &DVector<f64>) -> f64 {
        let n = self.z.len() as f64;
        let nll: f64 = self
            .z
            .iter()
            .zip(self.y)
            .map(|(z, &y)| ModelOutput::from_logits(self.logits(theta, z)).nll(y))
            .sum();
        nll / n + self.penalty(theta)
    }

    fn grad_hessian(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.dim();
        let n = self.z.len() as f64;
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        let mut aug = vec![0.0; self.f + 1];
        for (z, &y) in self.z.iter().zip(self.y) {
            aug[..self.f].copy_from_slice(z);
            aug[self.f] = 1.0;
            let probs = ModelOutput::from_logits(self.logits(theta, z)).probs;
            for c in 0..self.k {
                let r = probs[c] - if c == y { 1.0 } else { 0.0 };
                for (j, a) in aug.iter().enumerate() {
                    g[c * (self.f + 1) + j] += r * a / n;
                }
                for d in 0..self.k {
                    let s = probs[c] * (if c == d { 1.0 } else { 0.0 } - probs[d]) / n;
                    for (j, a) in aug.iter().enumerate() {
                        for (l, b) in aug.iter().enumerate() {
                            h[(c * (self.f + 1) + j, d * (self.f + 1) + l)] += s * a * b;
                        }
                    }
                }
            }
        }
        for c in 0..self.k {
            for j in 0..=self.f {
                let i = c * (self.f + 1) + j;
                let lam = if j == self.f { BIAS_RIDGE } else { self.l2 };
                g[i] += lam * theta[i];
                h[(i, i)] += lam;
            }
        }
        (g, h)
    }
}

impl Lcbm {
    /// Fits on raw concept vectors. Standardization statistics come from
    /// these rows only.
    pub fn fit(
        concepts: &[Vec<f64>],
        labels: &[usize],
        names: Vec<ComponentKind>,
        num_classes: usize,
        cfg: &LcbmConfig,
    ) -> Result<Self> {
        if concepts.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if concepts.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: concepts.len(), got: labels.len() });
        }
        let f = names.len();
        if let Some(row) = concepts.iter().find(|r| r.len() != f) {
            return Err(Error::DimensionMismatch { expected: f, got: row.len() });
        }
        if num_classes < 2 || labels.iter().any(|&y| y >= num_classes) {
            return Err(Error::InvalidConfig("labels must lie in 0..num_classes with num_classes >= 2".into()));
        }
        let n = concepts.len() as f64;
        let mean: Vec<f64> = (0..f).map(|j| concepts.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let mut std: Vec<f64> = (0..f)
            .map(|j| (concepts.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        let singular: Vec<bool> = std.iter().map(|s| !(*s > 1e-12)).collect();
        for (j, s) in std.iter_mut().enumerate() {
            if singular[j] {
                log::warn!("concept {} has zero variance; its coefficient is fixed at 0", names[j]);
                *s = 1.0;
            }
        }
        let z: Vec<Vec<f64>> = concepts
            .iter()
            .map(|r| (0..f).map(|j| if singular[j] { 0.0 } else { (r[j] - mean[j]) / std[j] }).collect())
            .collect();
        let prob = Problem { z: &z, y: labels, k: num_classes, f, l2: cfg.l2 };
        let mut theta = DVector::zeros(prob.dim());
        let mut cur = prob.loss(&theta);
        for _ in 0..cfg.max_iter {
            let (g, h) = prob.grad_hessian(&theta);
            let step = match h.clone().cholesky() {
                Some(ch) => ch.solve(&g),
                None => h.lu().solve(&g).ok_or_else(|| Error::InvalidConfig("singular Hessian".into()))?,
            };
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-12 {
                let cand = &theta - &step * t;
                let l = prob.loss(&cand);
                if l <= cur {
                    theta = cand;
                    cur = l;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted || step.amax() * t < cfg.tol {
                break;
            }
        }
        let coef = (0..num_classes)
            .map(|c| (0..f).map(|j| if singular[j] { 0.0 } else { theta[c * (f + 1) + j] }).collect())
            .collect();
        let bias = (0..num_classes).map(|c| theta[c * (f + 1) + f]).collect();
        Ok(Self { names, mean, std, coef, bias, singular })
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| if self.singular[j] { 0.0 } else { (v - self.mean[j]) / self.std[j] })
            .collect()
    }

    pub fn output(&self, x: &[f64]) -> Result<ModelOutput> {
        if x.len() != self.names.len() {
            return Err(Error::DimensionMismatch { expected: self.names.len(), got: x.len() });
        }
        let z = self.standardize(x);
        let logits = self
            .coef
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(&z).map(|(a, v)| a * v).sum::<f64>())
            .collect();
        Ok(ModelOutput::from_logits(logits))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.output(x)?.argmax())
    }

    /// Global importances: summed absolute standardized coefficients per
    /// concept (equivalently `|raw coef| * std`), normalized to sum 1.
    pub fn importances(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.names.len()).map(|j| self.coef.iter().map(|w| w[j].abs()).sum()).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            raw.iter().map(|v| v / total).collect()
        } else {
            raw
        }
    }

    /// Concept vector with the selected entries replaced by training means.
    pub fn masked(&self, x: &[f64], mask: &[bool]) -> Vec<f64> {
        x.iter().zip(mask).zip(&self.mean).map(|((v, m), mu)| if *m { *mu } else { *v }).collect()
    }
}
