//! Windows, datasets and training baselines for multimodal wearable data.
//!
//! A [`MultimodalWindow`] holds one channel per [`Modality`], all sampled at
//! the same rate and with the same length. Three-axis accelerometry is
//! collapsed to its resultant magnitude at ingestion via
//! [`resultant_acceleration`]; downstream code only ever sees that channel.

mod io;

pub use io::{load_dataset, load_windows, save_dataset, DataFormat};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Sensor modality. The declaration order is the canonical channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "ACC")]
    Acc,
    #[serde(rename = "HR")]
    Hr,
    #[serde(rename = "EDA")]
    Eda,
    #[serde(rename = "TEMP")]
    Temp,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Acc, Modality::Hr, Modality::Eda, Modality::Temp];

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Acc => "ACC",
            Modality::Hr => "HR",
            Modality::Eda => "EDA",
            Modality::Temp => "TEMP",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Modality::Acc => "g",
            Modality::Hr => "bpm",
            Modality::Eda => "microsiemens",
            Modality::Temp => "degC",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ACC" => Ok(Modality::Acc),
            "HR" => Ok(Modality::Hr),
            "EDA" => Ok(Modality::Eda),
            "TEMP" => Ok(Modality::Temp),
            other => Err(Error::SchemaMismatch(format!("unknown modality `{other}`"))),
        }
    }
}

/// Per-modality sample vectors, keyed in canonical modality order.
pub type Channels = BTreeMap<Modality, Vec<f64>>;

/// A fixed-length, fixed-rate multimodal window. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultimodalWindow {
    window_id: String,
    subject_id: String,
    label: Option<usize>,
    sample_rate_hz: f64,
    channels: Channels,
}

impl MultimodalWindow {
    pub fn new(
        window_id: impl Into<String>,
        subject_id: impl Into<String>,
        label: Option<usize>,
        sample_rate_hz: f64,
        channels: Channels,
    ) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidWindow(format!(
                "sample_rate_hz must be > 0, got {sample_rate_hz}"
            )));
        }
        if channels.is_empty() {
            return Err(Error::InvalidWindow("window has no channels".into()));
        }
        let t = channels.values().next().map(Vec::len).unwrap_or(0);
        if t < 2 {
            return Err(Error::InvalidWindow(format!("window length must be >= 2, got {t}")));
        }
        for (m, xs) in &channels {
            if xs.len() != t {
                return Err(Error::LengthMismatch { expected: t, got: xs.len() });
            }
            if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
                return Err(Error::InvalidWindow(format!("{m} sample {i} is not finite")));
            }
            if *m == Modality::Hr {
                if let Some(i) = xs.iter().position(|&x| x <= 0.0) {
                    return Err(Error::NonPositiveHeartRate { index: i, value: xs[i] });
                }
            }
        }
        Ok(Self {
            window_id: window_id.into(),
            subject_id: subject_id.into(),
            label,
            sample_rate_hz,
            channels,
        })
    }

    pub fn window_id(&self) -> &str {
        &self.window_id
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channels(&self) -> &Channels {
        &self.channels
    }

    pub fn channel(&self, m: Modality) -> Option<&[f64]> {
        self.channels.get(&m).map(Vec::as_slice)
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.channels.keys().copied().collect()
    }

    /// Number of samples per channel.
    pub fn len(&self) -> usize {
        self.channels.values().next().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same metadata, new channels.
    pub fn with_channels(&self, channels: Channels) -> Result<Self> {
        Self::new(
            self.window_id.clone(),
            self.subject_id.clone(),
            self.label,
            self.sample_rate_hz,
            channels,
        )
    }

    pub fn with_id(mut self, window_id: impl Into<String>) -> Self {
        self.window_id = window_id.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Eval => "eval",
        })
    }
}

/// Windows sharing length, rate and modality set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    windows: Vec<MultimodalWindow>,
    split: Split,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(windows: Vec<MultimodalWindow>, split: Split, class_names: Vec<String>) -> Result<Self> {
        if let Some(first) = windows.first() {
            let t = first.len();
            let rate = first.sample_rate_hz();
            let mods = first.modalities();
            for w in &windows {
                if w.len() != t {
                    return Err(Error::LengthMismatch { expected: t, got: w.len() });
                }
                if w.sample_rate_hz() != rate {
                    return Err(Error::SchemaMismatch(format!(
                        "window {} has rate {} Hz, expected {rate}",
                        w.window_id(),
                        w.sample_rate_hz()
                    )));
                }
                if w.modalities() != mods {
                    return Err(Error::SchemaMismatch(format!(
                        "window {} has a different modality set",
                        w.window_id()
                    )));
                }
                if let Some(l) = w.label() {
                    if l >= class_names.len() {
                        return Err(Error::SchemaMismatch(format!(
                            "window {} has label {l} but only {} classes",
                            w.window_id(),
                            class_names.len()
                        )));
                    }
                }
            }
        }
        Ok(Self { windows, split, class_names })
    }

    pub fn windows(&self) -> &[MultimodalWindow] {
        &self.windows
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.windows.first().map(MultimodalWindow::modalities).unwrap_or_default()
    }

    /// Labels of all windows; errors if any window is unlabeled.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.windows
            .iter()
            .map(|w| {
                w.label().ok_or_else(|| {
                    Error::SchemaMismatch(format!("window {} has no label", w.window_id()))
                })
            })
            .collect()
    }
}

/// Per-modality scalar baselines, the training-set mean of each channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BaselineSet(BTreeMap<Modality, f64>);

impl BaselineSet {
    pub fn new(values: BTreeMap<Modality, f64>) -> Result<Self> {
        if let Some(&hr) = values.get(&Modality::Hr) {
            if hr <= 0.0 {
                return Err(Error::NonPositiveHeartRate { index: 0, value: hr });
            }
        }
        Ok(Self(values))
    }

    pub fn get(&self, m: Modality) -> Result<f64> {
        self.0.get(&m).copied().ok_or(Error::MissingModality(m))
    }

    pub fn values(&self) -> &BTreeMap<Modality, f64> {
        &self.0
    }
}

/// Mean over every sample of every training window, per modality. The result
/// does not depend on window or sample order.
pub fn compute_baselines(train: &Dataset) -> Result<BaselineSet> {
    if train.split() != Split::Train {
        return Err(Error::SplitMismatch {
            expected: Split::Train.to_string(),
            got: train.split().to_string(),
        });
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = BTreeMap::new();
    for m in train.modalities() {
        let mut flat = Vec::with_capacity(train.len() * train.windows()[0].len());
        for w in train.windows() {
            flat.extend_from_slice(w.channel(m).ok_or(Error::MissingModality(m))?);
        }
        out.insert(m, stats::order_invariant_mean(&flat));
    }
    BaselineSet::new(out)
}

/// Elementwise magnitude of a three-axis acceleration signal.
pub fn resultant_acceleration(x: &[f64], y: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    if y.len() != x.len() {
        return Err(Error::LengthMismatch { expected: x.len(), got: y.len() });
    }
    if z.len() != x.len() {
        return Err(Error::LengthMismatch { expected: x.len(), got: z.len() });
    }
    Ok(x.iter()
        .zip(y)
        .zip(z)
        .map(|((a, b), c)| (a * a + b * b + c * c).sqrt())
        .collect())
}

/// Linear interpolation of a uniformly sampled signal onto a new rate.
/// Output sample `j` sits at time `j / dst_rate`; samples past the last input
/// time hold the final value.
pub fn resample_linear(xs: &[f64], src_rate: f64, dst_rate: f64, n_out: usize) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(src_rate > 0.0 && dst_rate > 0.0) {
        return Err(Error::InvalidConfig("sample rates must be > 0".into()));
    }
    let last = xs.len() - 1;
    Ok((0..n_out)
        .map(|j| {
            let pos = j as f64 / dst_rate * src_rate;
            let i = pos.floor() as usize;
            if i >= last {
                xs[last]
            } else {
                let frac = pos - i as f64;
                xs[i] + frac * (xs[i + 1] - xs[i])
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hr_window(id: &str, v: f64, n: usize) -> MultimodalWindow {
        let mut ch = Channels::new();
        ch.insert(Modality::Hr, vec![v; n]);
        MultimodalWindow::new(id, "s0", Some(0), 1.0, ch).unwrap()
    }

    #[test]
    fn baseline_is_mean_of_all_train_samples() {
        let ds = Dataset::new(
            vec![hr_window("a", 60.0, 3), hr_window("b", 80.0, 3)],
            Split::Train,
            vec!["x".into()],
        )
        .unwrap();
        let b = compute_baselines(&ds).unwrap();
        assert_eq!(b.get(Modality::Hr).unwrap(), 70.0);
    }

    #[test]
    fn constant_temp_baseline_is_identity() {
        let mut ch = Channels::new();
        ch.insert(Modality::Temp, vec![34.0; 16]);
        let w = MultimodalWindow::new("w", "s", None, 4.0, ch).unwrap();
        let ds = Dataset::new(vec![w], Split::Train, vec![]).unwrap();
        assert_eq!(compute_baselines(&ds).unwrap().get(Modality::Temp).unwrap(), 34.0);
    }

    #[test]
    fn baselines_require_train_split() {
        let ds = Dataset::new(vec![hr_window("a", 60.0, 3)], Split::Eval, vec!["x".into()]).unwrap();
        assert!(matches!(compute_baselines(&ds), Err(Error::SplitMismatch { .. })));
        let empty = Dataset::new(vec![], Split::Train, vec![]).unwrap();
        assert!(matches!(compute_baselines(&empty), Err(Error::EmptyDataset)));
    }

    #[test]
    fn resultant_examples() {
        assert_eq!(resultant_acceleration(&[3.0], &[4.0], &[0.0]).unwrap(), vec![5.0]);
        assert_eq!(resultant_acceleration(&[0.0], &[0.0], &[0.0]).unwrap(), vec![0.0]);
        assert!(matches!(
            resultant_acceleration(&[1.0, 2.0], &[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn window_invariants_are_enforced() {
        let mut ch = Channels::new();
        ch.insert(Modality::Hr, vec![60.0, 0.0]);
        assert!(matches!(
            MultimodalWindow::new("w", "s", None, 1.0, ch),
            Err(Error::NonPositiveHeartRate { index: 1, .. })
        ));
        let mut ch = Channels::new();
        ch.insert(Modality::Eda, vec![1.0]);
        assert!(MultimodalWindow::new("w", "s", None, 1.0, ch).is_err());
        let mut ch = Channels::new();
        ch.insert(Modality::Eda, vec![1.0, f64::NAN]);
        assert!(MultimodalWindow::new("w", "s", None, 1.0, ch).is_err());
        let mut ch = Channels::new();
        ch.insert(Modality::Eda, vec![1.0, 2.0]);
        ch.insert(Modality::Temp, vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            MultimodalWindow::new("w", "s", None, 1.0, ch),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn dataset_rejects_out_of_range_label() {
        let w = hr_window("a", 60.0, 3);
        assert!(Dataset::new(vec![w], Split::Train, vec![]).is_err());
    }

    #[test]
    fn linear_resample_doubles_rate() {
        let ys = resample_linear(&[0.0, 2.0, 4.0], 1.0, 2.0, 6).unwrap();
        assert_eq!(ys, vec![0.0, 1.0, 2.0, 3.0, 4.0, 4.0]);
    }
}
