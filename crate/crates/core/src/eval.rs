//! Classification metrics, masking-based faithfulness checks and global
//! aggregation of local explanations.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{rank_importances, RankedEntry};
use crate::decomp::{reconstruct, ComponentSet, WeightVector};
use crate::error::{Error, Result};
use crate::nn::Classifier;
use crate::stats::order_invariant_mean;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    /// Positive-class (label 1) F1 for two classes, macro average otherwise.
    pub f1: f64,
    pub n: usize,
}

fn f1_for(preds: &[usize], labels: &[usize], c: usize) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &y) in preds.iter().zip(labels) {
        match (p == c, y == c) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 }
}

pub fn classification_metrics(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ClassMetrics> {
    if labels.is_empty() {
        return Err(Error::EmptyEval);
    }
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: preds.len() });
    }
    let n = labels.len();
    let accuracy = preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / n as f64;
    let f1 = if num_classes == 2 {
        f1_for(preds, labels, 1)
    } else {
        (0..num_classes).map(|c| f1_for(preds, labels, c)).sum::<f64>() / num_classes as f64
    };
    Ok(ClassMetrics { accuracy, f1, n })
}

/// Re-predicts a window with some of its components or features masked.
pub trait Masker: Sync {
    /// Number of windows.
    fn len(&self) -> usize;

    /// Number of maskable entries per window.
    fn d(&self) -> usize;

    fn predict(&self, window: usize, mask: &[bool]) -> Result<usize>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Component-space masking: masked components get weight zero, leaving the
/// baseline in place, and the window is reconstructed.
pub struct ComponentMasker<'a, M: Classifier + ?Sized> {
    pub model: &'a M,
    pub sets: &'a [ComponentSet],
}

impl<M: Classifier + ?Sized> Masker for ComponentMasker<'_, M> {
    fn len(&self) -> usize {
        self.sets.len()
    }

    fn d(&self) -> usize {
        self.sets.first().map_or(0, ComponentSet::d)
    }

    fn predict(&self, window: usize, mask: &[bool]) -> Result<usize> {
        let w = WeightVector::new(mask.iter().map(|m| if *m { 0.0 } else { 1.0 }).collect())?;
        self.model.predict(&reconstruct(&self.sets[window], &w)?)
    }
}

/// Feature-space masking: masked features take their training means.
pub struct FeatureMasker<'a, F: Fn(&[f64]) -> Result<usize> + Sync> {
    pub rows: &'a [Vec<f64>],
    pub train_mean: &'a [f64],
    pub predict: F,
}

impl<F: Fn(&[f64]) -> Result<usize> + Sync> Masker for FeatureMasker<'_, F> {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn d(&self) -> usize {
        self.train_mean.len()
    }

    fn predict(&self, window: usize, mask: &[bool]) -> Result<usize> {
        let x: Vec<f64> = self.rows[window]
            .iter()
            .zip(mask)
            .zip(self.train_mean)
            .map(|((v, m), mu)| if *m { *mu } else { *v })
            .collect();
        (self.predict)(&x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    /// `k` for fidelity, the threshold for sufficiency.
    pub param: f64,
    pub flip_rate: f64,
    pub n_evaluated: usize,
    pub flips: Vec<bool>,
}

impl FlipReport {
    fn new(param: f64, flips: Vec<bool>) -> Self {
        let n = flips.len();
        let rate = if n == 0 { 0.0 } else { flips.iter().filter(|f| **f).count() as f64 / n as f64 };
        Self { param, flip_rate: rate, n_evaluated: n, flips }
    }
}

/// Indices of the `k` largest entries; ties keep the lower index first.
pub fn top_k(importance: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..importance.len()).collect();
    idx.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]));
    idx.truncate(k);
    idx
}

fn flips_with<M: Masker + ?Sized>(masker: &M, param: f64, mask_for: impl Fn(usize) -> Vec<bool> + Sync) -> Result<FlipReport> {
    let d = masker.d();
    let flips = (0..masker.len())
        .into_par_iter()
        .map(|i| {
            let mask = mask_for(i);
            if !mask.iter().any(|m| *m) {
                return Ok(false);
            }
            Ok(masker.predict(i, &mask)? != masker.predict(i, &vec![false; d])?)
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(FlipReport::new(param, flips))
}

fn check_importances<M: Masker + ?Sized>(masker: &M, importances: &[Vec<f64>]) -> Result<()> {
    if importances.len() != masker.len() {
        return Err(Error::DimensionMismatch { expected: masker.len(), got: importances.len() });
    }
    if let Some(row) = importances.iter().find(|r| r.len() != masker.d()) {
        return Err(Error::DimensionMismatch { expected: masker.d(), got: row.len() });
    }
    Ok(())
}

/// Flip rate after masking each window's `k` most important entries.
/// `importances` holds one row per window; pass the same row for every
/// window to use a global ranking.
pub fn fidelity<M: Masker + ?Sized>(masker: &M, importances: &[Vec<f64>], k: usize) -> Result<FlipReport> {
    check_importances(masker, importances)?;
    let d = masker.d();
    if k > d {
        return Err(Error::KTooLarge { k, d });
    }
    flips_with(masker, k as f64, |i| {
        let mut mask = vec![false; d];
        for j in top_k(&importances[i], k) {
            mask[j] = true;
        }
        mask
    })
}

/// Flip rate after masking every entry with importance below `tau`.
pub fn sufficiency<M: Masker + ?Sized>(masker: &M, importances: &[Vec<f64>], tau: f64) -> Result<FlipReport> {
    check_importances(masker, importances)?;
    flips_with(masker, tau, |i| importances[i].iter().map(|v| *v < tau).collect())
}

/// Control for [`fidelity`]: masks `k` entries drawn uniformly per window.
pub fn random_fidelity<M: Masker + ?Sized>(masker: &M, k: usize, seed: u64) -> Result<FlipReport> {
    let d = masker.d();
    if k > d {
        return Err(Error::KTooLarge { k, d });
    }
    flips_with(masker, k as f64, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let mut mask = vec![false; d];
        for j in sample(&mut rng, d, k) {
            mask[j] = true;
        }
        mask
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeGroup {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "TN")]
    TrueNegative,
}

impl OutcomeGroup {
    /// Correctly classified windows, with class 1 as the positive class.
    pub fn of(predicted: usize, label: Option<usize>) -> Option<Self> {
        match (predicted, label?) {
            (1, 1) => Some(Self::TruePositive),
            (0, 0) => Some(Self::TrueNegative),
            _ => None,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::TruePositive => "TP",
            Self::TrueNegative => "TN",
        }
    }
}

/// One local explanation as seen by [`aggregate_global`].
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSummary {
    pub importance: Vec<f64>,
    /// Time-axis means of the components, when available.
    pub values: Option<Vec<f64>>,
    pub predicted: usize,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub component: String,
    pub group: OutcomeGroup,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalExplanation {
    pub names: Vec<String>,
    pub mean_importance: Vec<f64>,
    /// Entries with positive mean importance, sorted descending.
    pub ranking: Vec<RankedEntry>,
    pub distributions: Vec<DistributionRow>,
}

impl GlobalExplanation {
    pub fn top(&self, k: usize) -> Vec<&str> {
        self.ranking.iter().take(k).map(|e| e.name.as_str()).collect()
    }
}

/// Mean importance per entry, its ranking, and the component values of
/// correctly classified windows that kept the component (weight > 0).
pub fn aggregate_global(names: &[String], locals: &[LocalSummary]) -> Result<GlobalExplanation> {
    let d = names.len();
    if let Some(l) = locals.iter().find(|l| l.importance.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: l.importance.len() });
    }
    let mean_importance: Vec<f64> = (0..d)
        .map(|j| {
            if locals.is_empty() {
                0.0
            } else {
                order_invariant_mean(&locals.iter().map(|l| l.importance[j]).collect::<Vec<_>>())
            }
        })
        .collect();
    let ranking = rank_importances(names, &mean_importance, 0.0);
    let mut distributions = Vec::new();
    for (j, name) in names.iter().enumerate() {
        for l in locals {
            let (Some(values), Some(group)) = (&l.values, OutcomeGroup::of(l.predicted, l.label)) else {
                continue;
            };
            if l.importance[j] > 0.0 {
                distributions.push(DistributionRow { component: name.clone(), group, value: values[j] });
            }
        }
    }
    Ok(GlobalExplanation { names: names.to_vec(), mean_importance, ranking, distributions })
}

#[cfg(test)]
mod tests;
