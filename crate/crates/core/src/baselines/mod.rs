//! Comparison explainers: a linear classifier over concept summaries and a
//! fully connected network over window statistics explained with exact
//! Shapley values.

mod fcshap;
mod lcbm;
mod shapley;

pub use fcshap::{stat_feature_names, stat_features, FcShap, FcShapRecord, FeatureExplanation};
pub use lcbm::{concept_vector, Lcbm, LcbmConfig};
pub use shapley::{exact_shapley, exact_shapley_fn, ShapleyAttribution, MAX_EXACT_FEATURES};

use serde::{Deserialize, Serialize};

use crate::decomp::{decompose, ComponentKind, DecompConfig};
use crate::error::{Error, Result};
use crate::signal::{BaselineSet, Dataset};
use crate::stats::order_invariant_mean;

/// Component names and concept vectors for every window of a dataset.
pub fn dataset_concepts(ds: &Dataset, baselines: &BaselineSet, cfg: &DecompConfig) -> Result<(Vec<ComponentKind>, Vec<Vec<f64>>)> {
    let mut names = None;
    let mut rows = Vec::with_capacity(ds.len());
    for w in ds.windows() {
        let cs = decompose(w, baselines, cfg)?;
        names.get_or_insert_with(|| cs.kinds());
        rows.push(concept_vector(&cs));
    }
    Ok((names.ok_or(Error::EmptyDataset)?, rows))
}

pub fn fit_lcbm(train: &Dataset, baselines: &BaselineSet, decomp: &DecompConfig, cfg: &LcbmConfig) -> Result<Lcbm> {
    let (names, rows) = dataset_concepts(train, baselines, decomp)?;
    Lcbm::fit(&rows, &train.labels()?, names, train.num_classes(), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub name: String,
    pub importance: f64,
}

/// Entries with importance above `min`, sorted descending; ties keep the
/// input order.
pub fn rank_importances(names: &[String], importances: &[f64], min: f64) -> Vec<RankedEntry> {
    let mut idx: Vec<usize> = (0..names.len()).filter(|&i| importances[i] > min).collect();
    idx.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]));
    idx.into_iter().map(|i| RankedEntry { name: names[i].clone(), importance: importances[i] }).collect()
}

/// Mean `|phi|` per feature over a set of explanations, normalized to sum 1.
/// The result does not depend on the order of `explanations`.
pub fn shapley_global(explanations: &[FeatureExplanation]) -> Vec<f64> {
    let Some(first) = explanations.first() else { return Vec::new() };
    let f = first.attribution.phi.len();
    let means: Vec<f64> = (0..f)
        .map(|j| order_invariant_mean(&explanations.iter().map(|e| e.attribution.phi[j].abs()).collect::<Vec<_>>()))
        .collect();
    let total: f64 = means.iter().sum();
    if total > 0.0 {
        means.iter().map(|m| m / total).collect()
    } else {
        means
    }
}
