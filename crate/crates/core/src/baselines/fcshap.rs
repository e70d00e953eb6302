use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::shapley::{exact_shapley, ShapleyAttribution};
use crate::error::{Error, Result};
use crate::nn::{train_with_restarts, Arch, Checkpoint, Model, ModelOutput, ModelSpec, Sample, TrainConfig, TrainOutcome};
use crate::signal::{Dataset, Modality, MultimodalWindow};
use crate::stats::{mean, std_pop};

const STATS: [&str; 4] = ["Mean", "Min", "Max", "Std"];

pub fn stat_feature_names(modalities: &[Modality]) -> Vec<String> {
    modalities.iter().flat_map(|m| STATS.iter().map(move |s| format!("{}.{s}", m.tag()))).collect()
}

/// Mean, minimum, maximum and population standard deviation per modality.
pub fn stat_features(window: &MultimodalWindow, modalities: &[Modality]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(4 * modalities.len());
    for m in modalities {
        let xs = window.channel(*m).ok_or(Error::MissingModality(*m))?;
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.extend([mean(xs).clamp(min, max), min, max, std_pop(xs)]);
    }
    Ok(out)
}

/// Fully connected classifier over statistical window features.
#[derive(Debug, Clone, PartialEq)]
pub struct FcShap {
    pub model: Model,
    pub modalities: Vec<Modality>,
    pub feature_names: Vec<String>,
    /// Training-split feature means, used as the masking baseline.
    pub train_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcShapRecord {
    pub modalities: Vec<Modality>,
    pub feature_names: Vec<String>,
    pub train_mean: Vec<f64>,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureExplanation {
    pub window_id: String,
    pub predicted_class: usize,
    pub true_label: Option<usize>,
    pub features: Vec<f64>,
    pub attribution: ShapleyAttribution,
}

impl FeatureExplanation {
    /// `|phi|` normalized to sum 1 (all zeros when every `phi` is zero).
    pub fn normalized(&self) -> Vec<f64> {
        let total: f64 = self.attribution.phi.iter().map(|p| p.abs()).sum();
        self.attribution.phi.iter().map(|p| if total > 0.0 { p.abs() / total } else { 0.0 }).collect()
    }
}

fn samples(ds: &Dataset, modalities: &[Modality]) -> Result<Vec<Sample>> {
    let labels = ds.labels()?;
    ds.windows()
        .iter()
        .zip(labels)
        .map(|(w, y)| {
            let f = stat_features(w, modalities)?;
            Ok(Sample { x: Array2::from_shape_vec((1, f.len()), f).expect("1 x F"), y })
        })
        .collect()
}

impl FcShap {
    pub fn fit(
        train: &Dataset,
        eval: &Dataset,
        hidden_size: usize,
        seed: u64,
        cfg: &TrainConfig,
        restarts: usize,
    ) -> Result<(Self, TrainOutcome)> {
        let modalities = train.modalities();
        let feature_names = stat_feature_names(&modalities);
        let train_s = samples(train, &modalities)?;
        let eval_s = samples(eval, &modalities)?;
        let mut spec = ModelSpec::new(Arch::Fcn, 1, feature_names.clone(), train.num_classes());
        spec.hidden_size = hidden_size;
        spec.seed = seed;
        let outcome = train_with_restarts(&spec, &train_s, &eval_s, cfg, restarts)?;
        let n = train_s.len() as f64;
        let train_mean = (0..feature_names.len()).map(|j| train_s.iter().map(|s| s.x[[0, j]]).sum::<f64>() / n).collect();
        let me = Self { model: outcome.model.clone(), modalities, feature_names, train_mean };
        Ok((me, outcome))
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn features(&self, window: &MultimodalWindow) -> Result<Vec<f64>> {
        stat_features(window, &self.modalities)
    }

    pub fn output(&self, features: &[f64]) -> Result<ModelOutput> {
        let x = Array2::from_shape_vec((1, features.len()), features.to_vec()).expect("1 x F");
        self.model.forward_matrix(&x)
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(self.output(features)?.argmax())
    }

    /// Class probabilities for a batch of feature rows.
    pub fn probs_rows(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        self.model.forward_rows_fcn(rows)
    }

    /// Exact Shapley attribution of the predicted-class probability, with
    /// absent features set to their training means.
    pub fn explain(&self, window: &MultimodalWindow) -> Result<FeatureExplanation> {
        let features = self.features(window)?;
        let predicted = self.predict(&features)?;
        let attribution = exact_shapley(&features, &self.train_mean, |rows| {
            Ok(self.probs_rows(rows)?.column(predicted).to_vec())
        })?;
        Ok(FeatureExplanation {
            window_id: window.window_id().to_string(),
            predicted_class: predicted,
            true_label: window.label(),
            features,
            attribution,
        })
    }

    /// Feature vector with the selected entries replaced by training means.
    pub fn masked(&self, x: &[f64], mask: &[bool]) -> Vec<f64> {
        x.iter().zip(mask).zip(&self.train_mean).map(|((v, m), mu)| if *m { *mu } else { *v }).collect()
    }

    pub fn to_record(&self) -> FcShapRecord {
        FcShapRecord {
            modalities: self.modalities.clone(),
            feature_names: self.feature_names.clone(),
            train_mean: self.train_mean.clone(),
            checkpoint: Checkpoint::from(&self.model),
        }
    }

    pub fn from_record(rec: FcShapRecord) -> Result<Self> {
        let model = Model::try_from(rec.checkpoint)?;
        if rec.train_mean.len() != rec.feature_names.len() || model.spec().channels != rec.feature_names {
            return Err(Error::SchemaMismatch("feature names do not match the stored model".into()));
        }
        Ok(Self { model, modalities: rec.modalities, feature_names: rec.feature_names, train_mean: rec.train_mean })
    }
}
