//! Explanation records and the files written from them.
//!
//! All three explainers produce the same record shape, so scoring and global
//! aggregation run on records alone. JSON writes are checked by reading the
//! text back into the same type; CSV writes check the header and row widths.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baselines::{FcShap, Lcbm};
use crate::decomp::ComponentSet;
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_global, classification_metrics, fidelity, random_fidelity, sufficiency, ClassMetrics, FlipReport,
    GlobalExplanation, LocalSummary, Masker,
};
use crate::iic::{Explanation, LossTerms};
use crate::signal::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Iic,
    Lcbm,
    Fcshap,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Iic, Method::Lcbm, Method::Fcshap];

    /// Default sufficiency threshold.
    pub fn default_tau(self) -> f64 {
        match self {
            Method::Iic | Method::Lcbm => 0.01,
            Method::Fcshap => 0.02,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Iic => "iic",
            Method::Lcbm => "lcbm",
            Method::Fcshap => "fcshap",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// One local explanation. `weights` are the IIC weights or the normalized
/// attributions of a comparison explainer; `values` are the component time
/// means, concept values or window statistics the weights refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub window_id: String,
    pub method: Method,
    pub predicted_class: usize,
    pub true_label: Option<usize>,
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binary: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_trace: Option<Vec<LossTerms>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub window_id: String,
    pub error: String,
}

/// Contents of `explanations.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationFile {
    pub method: Method,
    /// Entry names shared by every record.
    pub names: Vec<String>,
    pub records: Vec<ExplanationRecord>,
    pub failures: Vec<Failure>,
}

impl ExplanationFile {
    pub fn importances(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.weights.clone()).collect()
    }

    pub fn locals(&self) -> Vec<LocalSummary> {
        self.records
            .iter()
            .map(|r| LocalSummary {
                importance: r.weights.clone(),
                values: Some(r.values.clone()),
                predicted: r.predicted_class,
                label: r.true_label,
            })
            .collect()
    }

    pub fn global(&self) -> Result<GlobalExplanation> {
        aggregate_global(&self.names, &self.locals())
    }

    /// Accuracy of the explained classifier on the labeled records.
    pub fn metrics(&self, num_classes: usize) -> Result<ClassMetrics> {
        let (preds, labels): (Vec<usize>, Vec<usize>) =
            self.records.iter().filter_map(|r| Some((r.predicted_class, r.true_label?))).unzip();
        classification_metrics(&preds, &labels, num_classes)
    }
}

/// IIC records; `sets` must be the decompositions of the explained windows.
pub fn iic_records(explanations: &[Explanation], sets: &[ComponentSet]) -> Vec<ExplanationRecord> {
    explanations
        .iter()
        .zip(sets)
        .map(|(e, cs)| ExplanationRecord {
            window_id: e.window_id.clone(),
            method: Method::Iic,
            predicted_class: e.predicted_class,
            true_label: e.true_label,
            weights: e.weights.as_slice().to_vec(),
            values: cs.time_means(),
            binary: Some(e.binary.iter().map(|b| u8::from(*b)).collect()),
            degradation_final: Some(e.degradation_final),
            loss_trace: Some(e.loss_trace.clone()),
            phi: None,
            base_value: None,
        })
        .collect()
}

/// LCBM records: global coefficient importances repeated for every window.
pub fn lcbm_records(lcbm: &Lcbm, ds: &Dataset, rows: &[Vec<f64>]) -> Result<ExplanationFile> {
    let imp = lcbm.importances();
    let records = ds
        .windows()
        .iter()
        .zip(rows)
        .map(|(w, r)| {
            Ok(ExplanationRecord {
                window_id: w.window_id().to_string(),
                method: Method::Lcbm,
                predicted_class: lcbm.predict(r)?,
                true_label: w.label(),
                weights: imp.clone(),
                values: r.clone(),
                binary: None,
                degradation_final: None,
                loss_trace: None,
                phi: None,
                base_value: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExplanationFile {
        method: Method::Lcbm,
        names: lcbm.names.iter().map(|k| k.name().to_string()).collect(),
        records,
        failures: Vec::new(),
    })
}

/// FCSHAP records: exact Shapley values of the window statistics.
pub fn fcshap_records(fc: &FcShap, ds: &Dataset) -> Result<ExplanationFile> {
    let records = ds
        .windows()
        .iter()
        .map(|w| {
            let e = fc.explain(w)?;
            Ok(ExplanationRecord {
                window_id: e.window_id.clone(),
                method: Method::Fcshap,
                predicted_class: e.predicted_class,
                true_label: e.true_label,
                weights: e.normalized(),
                values: e.features.clone(),
                binary: None,
                degradation_final: None,
                loss_trace: None,
                phi: Some(e.attribution.phi.clone()),
                base_value: Some(e.attribution.base_value),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExplanationFile { method: Method::Fcshap, names: fc.feature_names.clone(), records, failures: Vec::new() })
}

/// Accuracy, masking scores and global view of one explainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub metrics: ClassMetrics,
    /// Entry `k - 1` masks the top `k` entries.
    pub fidelity: Vec<FlipReport>,
    pub random: Vec<FlipReport>,
    pub sufficiency: Vec<FlipReport>,
    pub global: GlobalExplanation,
}

impl MethodScores {
    pub fn fidelity_at(&self, k: usize) -> Option<&FlipReport> {
        self.fidelity.iter().find(|r| r.param == k as f64)
    }

    pub fn random_at(&self, k: usize) -> Option<&FlipReport> {
        self.random.iter().find(|r| r.param == k as f64)
    }

    /// Rows of `metrics.csv`.
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let mut rows = vec![
            MetricRow::new("accuracy", None, self.metrics.accuracy),
            MetricRow::new("f1", None, self.metrics.f1),
            MetricRow::new("n", None, self.metrics.n as f64),
        ];
        for r in &self.fidelity {
            rows.push(MetricRow::new("fidelity", Some(r.param), r.flip_rate));
        }
        for r in &self.random {
            rows.push(MetricRow::new("random_fidelity", Some(r.param), r.flip_rate));
        }
        for r in &self.sufficiency {
            rows.push(MetricRow::new("sufficiency", Some(r.param), r.flip_rate));
        }
        rows
    }
}

/// Scores a set of records against a masker over the same windows.
/// `ks` larger than the number of entries are skipped.
pub fn score<M: Masker>(file: &ExplanationFile, masker: &M, num_classes: usize, ks: &[usize], taus: &[f64], seed: u64) -> Result<MethodScores> {
    let imp = file.importances();
    let ks: Vec<usize> = ks.iter().copied().filter(|k| *k <= masker.d()).collect();
    Ok(MethodScores {
        metrics: file.metrics(num_classes)?,
        fidelity: ks.iter().map(|k| fidelity(masker, &imp, *k)).collect::<Result<_>>()?,
        random: ks.iter().map(|k| random_fidelity(masker, *k, seed)).collect::<Result<_>>()?,
        sufficiency: taus.iter().map(|t| sufficiency(masker, &imp, *t)).collect::<Result<_>>()?,
        global: file.global()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    /// `k` for fidelity rows, `tau` for sufficiency rows.
    pub param: Option<f64>,
    pub value: f64,
}

impl MetricRow {
    pub fn new(metric: &str, param: Option<f64>, value: f64) -> Self {
        Self { metric: metric.to_string(), param, value }
    }
}

/// Serializes `value`, checks that the text parses back to the same value
/// and writes it with a trailing newline.
pub fn write_json<T>(path: impl AsRef<Path>, value: &T) -> Result<()>
where
    T: Serialize + DeserializeOwned + PartialEq,
{
    let mut text = serde_json::to_string_pretty(value)?;
    let back: T = serde_json::from_str(&text)?;
    if &back != value {
        return Err(Error::SchemaMismatch(format!("{} does not round-trip", path.as_ref().display())));
    }
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
    wtr.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::LengthMismatch { expected: header.len(), got: row.len() });
        }
        wtr.write_record(row)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    fs::write(path, bytes)?;
    Ok(())
}

pub const METRICS_HEADER: [&str; 3] = ["metric", "param", "value"];
pub const GLOBAL_HEADER: [&str; 3] = ["rank", "component", "mean_importance"];
pub const DISTRIBUTIONS_HEADER: [&str; 3] = ["component", "group", "value"];

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.metric.clone(), r.param.map(|p| p.to_string()).unwrap_or_default(), r.value.to_string()])
        .collect();
    write_csv(path.as_ref(), &METRICS_HEADER, &rows)
}

/// Ranked global importances.
pub fn write_global_csv(path: impl AsRef<Path>, global: &GlobalExplanation) -> Result<()> {
    let rows: Vec<Vec<String>> = global
        .ranking
        .iter()
        .enumerate()
        .map(|(i, e)| vec![(i + 1).to_string(), e.name.clone(), e.importance.to_string()])
        .collect();
    write_csv(path.as_ref(), &GLOBAL_HEADER, &rows)
}

/// Component values of correctly classified windows, for box plots.
pub fn write_distributions_csv(path: impl AsRef<Path>, global: &GlobalExplanation) -> Result<()> {
    let rows: Vec<Vec<String>> = global
        .distributions
        .iter()
        .map(|d| vec![d.component.clone(), d.group.tag().to_string(), d.value.to_string()])
        .collect();
    write_csv(path.as_ref(), &DISTRIBUTIONS_HEADER, &rows)
}
