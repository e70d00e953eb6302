//! Invertible per-modality decompositions into named components.
//!
//! Every modality is split into a scalar mean-over-baseline term plus one or
//! more series components. Reconstruction with all weights at one reproduces
//! the input; a weight of zero removes a component and leaves the training
//! baseline `b` in its place.
//!
//! | modality | components (global order)                   | aux state           |
//! |----------|---------------------------------------------|---------------------|
//! | ACC      | MeanOB, Outlier, Activity                   | residual signs      |
//! | HR       | MeanOB, Variability (length t-1, RR domain) | diff signs, anchor  |
//! | EDA      | TonicMeanOB, TonicChange, Phasic            | none                |
//! | TEMP     | MeanOB, Rising, Falling (length t-1)        | anchor              |
//!
//! Aux state is never weighted; it only exists so the inverse is exact.

mod filter;

pub use filter::TonicFilter;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{BaselineSet, Channels, Modality, MultimodalWindow};
use crate::stats;

/// RR-domain conversion constant: ms per minute.
const MS_PER_MIN: f64 = 60000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ComponentKind {
    #[serde(rename = "ACC.MeanOB")]
    AccMeanOb,
    #[serde(rename = "ACC.Outlier")]
    AccOutlier,
    #[serde(rename = "ACC.Activity")]
    AccActivity,
    #[serde(rename = "HR.MeanOB")]
    HrMeanOb,
    #[serde(rename = "HR.Variability")]
    HrVariability,
    #[serde(rename = "EDA.TonicMeanOB")]
    EdaTonicMeanOb,
    #[serde(rename = "EDA.TonicChange")]
    EdaTonicChange,
    #[serde(rename = "EDA.Phasic")]
    EdaPhasic,
    #[serde(rename = "TEMP.MeanOB")]
    TempMeanOb,
    #[serde(rename = "TEMP.Rising")]
    TempRising,
    #[serde(rename = "TEMP.Falling")]
    TempFalling,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 11] = [
        ComponentKind::AccMeanOb,
        ComponentKind::AccOutlier,
        ComponentKind::AccActivity,
        ComponentKind::HrMeanOb,
        ComponentKind::HrVariability,
        ComponentKind::EdaTonicMeanOb,
        ComponentKind::EdaTonicChange,
        ComponentKind::EdaPhasic,
        ComponentKind::TempMeanOb,
        ComponentKind::TempRising,
        ComponentKind::TempFalling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComponentKind::AccMeanOb => "ACC.MeanOB",
            ComponentKind::AccOutlier => "ACC.Outlier",
            ComponentKind::AccActivity => "ACC.Activity",
            ComponentKind::HrMeanOb => "HR.MeanOB",
            ComponentKind::HrVariability => "HR.Variability",
            ComponentKind::EdaTonicMeanOb => "EDA.TonicMeanOB",
            ComponentKind::EdaTonicChange => "EDA.TonicChange",
            ComponentKind::EdaPhasic => "EDA.Phasic",
            ComponentKind::TempMeanOb => "TEMP.MeanOB",
            ComponentKind::TempRising => "TEMP.Rising",
            ComponentKind::TempFalling => "TEMP.Falling",
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            ComponentKind::AccMeanOb | ComponentKind::AccOutlier | ComponentKind::AccActivity => {
                Modality::Acc
            }
            ComponentKind::HrMeanOb | ComponentKind::HrVariability => Modality::Hr,
            ComponentKind::EdaTonicMeanOb | ComponentKind::EdaTonicChange | ComponentKind::EdaPhasic => {
                Modality::Eda
            }
            ComponentKind::TempMeanOb | ComponentKind::TempRising | ComponentKind::TempFalling => {
                Modality::Temp
            }
        }
    }

    /// Components of one modality, in global order.
    pub fn for_modality(m: Modality) -> impl Iterator<Item = ComponentKind> {
        Self::ALL.into_iter().filter(move |k| k.modality() == m)
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ComponentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::SchemaMismatch(format!("unknown component `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Scalar(f64),
    Series(Vec<f64>),
}

impl Payload {
    /// Time-axis mean; a scalar is its own mean.
    pub fn time_mean(&self) -> f64 {
        match self {
            Payload::Scalar(v) => *v,
            Payload::Series(xs) => stats::mean(xs),
        }
    }

    fn scalar(&self) -> f64 {
        match self {
            Payload::Scalar(v) => *v,
            Payload::Series(_) => unreachable!("component layout is fixed at decomposition"),
        }
    }

    fn series(&self) -> &[f64] {
        match self {
            Payload::Series(xs) => xs,
            Payload::Scalar(_) => unreachable!("component layout is fixed at decomposition"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: ComponentKind,
    pub payload: Payload,
}

impl Component {
    fn scalar(name: ComponentKind, v: f64) -> Self {
        Self { name, payload: Payload::Scalar(v) }
    }

    fn series(name: ComponentKind, xs: Vec<f64>) -> Self {
        Self { name, payload: Payload::Series(xs) }
    }

    pub fn modality(&self) -> Modality {
        self.name.modality()
    }
}

/// Unweighted state needed to invert the decomposition exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuxState {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_signs: Option<Vec<i8>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hr_signs: Option<Vec<i8>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hr_anchor_rr_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temp_anchor: Option<f64>,
}

impl AuxState {
    fn merge(&mut self, other: AuxState) {
        self.acc_signs = self.acc_signs.take().or(other.acc_signs);
        self.hr_signs = self.hr_signs.take().or(other.hr_signs);
        self.hr_anchor_rr_ms = self.hr_anchor_rr_ms.or(other.hr_anchor_rr_ms);
        self.temp_anchor = self.temp_anchor.or(other.temp_anchor);
    }
}

/// Per-component weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if let Some((i, &v)) = w.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::WeightOutOfRange { index: i, value: v });
        }
        Ok(Self(w))
    }

    pub fn ones(d: usize) -> Self {
        Self(vec![1.0; d])
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompConfig {
    /// |z| above which a zero-mean ACC sample counts as an outlier.
    pub z_thresh: f64,
    /// Lower bound on reconstructed RR intervals, ms.
    pub rr_floor_ms: f64,
    pub tonic: TonicFilter,
}

impl Default for DecompConfig {
    fn default() -> Self {
        Self { z_thresh: 3.0, rr_floor_ms: 200.0, tonic: TonicFilter::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WindowMeta {
    window_id: String,
    subject_id: String,
    label: Option<usize>,
}

/// Components of one window plus everything needed to reconstruct it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSet {
    components: Vec<Component>,
    aux: AuxState,
    baselines: BaselineSet,
    t: usize,
    sample_rate_hz: f64,
    rr_floor_ms: f64,
    meta: WindowMeta,
}

impl ComponentSet {
    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn aux(&self) -> &AuxState {
        &self.aux
    }

    pub fn baselines(&self) -> &BaselineSet {
        &self.baselines
    }

    /// Number of weighted components.
    pub fn d(&self) -> usize {
        self.components.len()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn window_id(&self) -> &str {
        &self.meta.window_id
    }

    pub fn label(&self) -> Option<usize> {
        self.meta.label
    }

    pub fn names(&self) -> Vec<String> {
        self.components.iter().map(|c| c.name.name().to_string()).collect()
    }

    pub fn kinds(&self) -> Vec<ComponentKind> {
        self.components.iter().map(|c| c.name).collect()
    }

    pub fn index_of(&self, kind: ComponentKind) -> Option<usize> {
        self.components.iter().position(|c| c.name == kind)
    }

    /// Time-axis mean of every component, in component order.
    pub fn time_means(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.payload.time_mean()).collect()
    }

    pub fn modalities(&self) -> Vec<Modality> {
        let mut ms: Vec<Modality> = self.components.iter().map(Component::modality).collect();
        ms.dedup();
        ms
    }

    /// Payload of a component.
    ///
    /// # Panics
    /// If the set has no component of that kind.
    pub fn payload(&self, kind: ComponentKind) -> &Payload {
        &self.components[self.index_of(kind).expect("component present")].payload
    }

    fn check_weights(&self, w: &WeightVector) -> Result<()> {
        if w.len() != self.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), got: w.len() });
        }
        Ok(())
    }
}

/// ACC: mean over baseline, z-score outliers, per-sample absolute deviation.
pub fn decompose_acc(r: &[f64], b_acc: f64, z_thresh: f64) -> (Vec<Component>, AuxState) {
    let meanob = stats::mean(&r.iter().map(|x| x - b_acc).collect::<Vec<_>>());
    let zm: Vec<f64> = r.iter().map(|x| x - b_acc - meanob).collect();
    let mu = stats::mean(&zm);
    let sd = stats::std_pop(&zm);
    let outlier: Vec<f64> = zm
        .iter()
        .map(|&z| if sd > 0.0 && ((z - mu) / sd).abs() > z_thresh { z } else { 0.0 })
        .collect();
    let residual: Vec<f64> = zm.iter().zip(&outlier).map(|(z, o)| z - o).collect();
    let signs: Vec<i8> = residual.iter().map(|&v| sign(v)).collect();
    let activity: Vec<f64> = residual.iter().map(|v| v.abs()).collect();
    (
        vec![
            Component::scalar(ComponentKind::AccMeanOb, meanob),
            Component::series(ComponentKind::AccOutlier, outlier),
            Component::series(ComponentKind::AccActivity, activity),
        ],
        AuxState { acc_signs: Some(signs), ..Default::default() },
    )
}

/// HR: mean level over baseline (bpm) and absolute successive RR differences.
pub fn decompose_hr(x_hr: &[f64], b_hr: f64) -> Result<(Vec<Component>, AuxState)> {
    if let Some(i) = x_hr.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NonPositiveHeartRate { index: i, value: x_hr[i] });
    }
    if !(b_hr > 0.0) {
        return Err(Error::NonPositiveHeartRate { index: 0, value: b_hr });
    }
    let rr: Vec<f64> = x_hr.iter().map(|x| MS_PER_MIN / x).collect();
    let m = stats::mean(&rr);
    let meanob = MS_PER_MIN / m - b_hr;
    let diffs: Vec<f64> = rr.windows(2).map(|p| p[1] - p[0]).collect();
    let signs = diffs.iter().map(|&v| sign(v)).collect();
    let variability = diffs.iter().map(|v| v.abs()).collect();
    Ok((
        vec![
            Component::scalar(ComponentKind::HrMeanOb, meanob),
            Component::series(ComponentKind::HrVariability, variability),
        ],
        AuxState { hr_signs: Some(signs), hr_anchor_rr_ms: Some(rr[0] - m), ..Default::default() },
    ))
}

/// EDA: tonic level over baseline, tonic change, and phasic residual.
pub fn decompose_eda(
    x_eda: &[f64],
    b_eda: f64,
    sample_rate_hz: f64,
    filter: &TonicFilter,
) -> (Vec<Component>, AuxState) {
    let tonic = filter.apply(x_eda, sample_rate_hz);
    let meanob = stats::mean(&tonic.iter().map(|x| x - b_eda).collect::<Vec<_>>());
    let change = tonic.iter().map(|x| x - b_eda - meanob).collect();
    let phasic = x_eda.iter().zip(&tonic).map(|(x, tn)| x - tn).collect();
    (
        vec![
            Component::scalar(ComponentKind::EdaTonicMeanOb, meanob),
            Component::series(ComponentKind::EdaTonicChange, change),
            Component::series(ComponentKind::EdaPhasic, phasic),
        ],
        AuxState::default(),
    )
}

/// TEMP: mean over baseline and the rising/falling parts of successive diffs.
pub fn decompose_temp(x_temp: &[f64], b_temp: f64) -> (Vec<Component>, AuxState) {
    let meanob = stats::mean(&x_temp.iter().map(|x| x - b_temp).collect::<Vec<_>>());
    let z: Vec<f64> = x_temp.iter().map(|x| x - b_temp - meanob).collect();
    let diffs: Vec<f64> = z.windows(2).map(|p| p[1] - p[0]).collect();
    let rising = diffs.iter().map(|&d| if d > 0.0 { d } else { 0.0 }).collect();
    let falling = diffs.iter().map(|&d| if d < 0.0 { d } else { 0.0 }).collect();
    (
        vec![
            Component::scalar(ComponentKind::TempMeanOb, meanob),
            Component::series(ComponentKind::TempRising, rising),
            Component::series(ComponentKind::TempFalling, falling),
        ],
        AuxState { temp_anchor: Some(z[0]), ..Default::default() },
    )
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Decomposes every channel of `window` and concatenates the components in
/// the fixed global order.
pub fn decompose(window: &MultimodalWindow, baselines: &BaselineSet, cfg: &DecompConfig) -> Result<ComponentSet> {
    let mut components = Vec::with_capacity(11);
    let mut aux = AuxState::default();
    let mut used = std::collections::BTreeMap::new();
    for (&m, xs) in window.channels() {
        let b = baselines.get(m)?;
        used.insert(m, b);
        let (cs, a) = match m {
            Modality::Acc => decompose_acc(xs, b, cfg.z_thresh),
            Modality::Hr => decompose_hr(xs, b)?,
            Modality::Eda => decompose_eda(xs, b, window.sample_rate_hz(), &cfg.tonic),
            Modality::Temp => decompose_temp(xs, b),
        };
        components.extend(cs);
        aux.merge(a);
    }
    Ok(ComponentSet {
        components,
        aux,
        baselines: BaselineSet::new(used)?,
        t: window.len(),
        sample_rate_hz: window.sample_rate_hz(),
        rr_floor_ms: cfg.rr_floor_ms,
        meta: WindowMeta {
            window_id: window.window_id().to_string(),
            subject_id: window.subject_id().to_string(),
            label: window.label(),
        },
    })
}

struct HrTrace {
    /// Unclamped reconstructed RR intervals.
    rr: Vec<f64>,
    /// `b + w_m * c_meanob`, the reconstructed mean level in bpm.
    level: f64,
}

fn hr_rr(cs: &ComponentSet, w: &[f64]) -> HrTrace {
    let im = cs.index_of(ComponentKind::HrMeanOb).expect("HR present");
    let iv = im + 1;
    let b = cs.baselines.get(Modality::Hr).expect("HR baseline");
    let c_mean = cs.components[im].payload.scalar();
    let var = cs.components[iv].payload.series();
    let signs = cs.aux.hr_signs.as_deref().expect("HR signs");
    let anchor = cs.aux.hr_anchor_rr_ms.expect("HR anchor");
    let level = b + w[im] * c_mean;
    let mut rr = Vec::with_capacity(cs.t);
    let mut cur = MS_PER_MIN / level + anchor;
    rr.push(cur);
    for (v, &s) in var.iter().zip(signs) {
        cur += w[iv] * f64::from(s) * v;
        rr.push(cur);
    }
    HrTrace { rr, level }
}

fn reconstruct_channels(cs: &ComponentSet, w: &[f64]) -> Channels {
    let mut out = Channels::new();
    for m in cs.modalities() {
        let b = cs.baselines.get(m).expect("baseline for decomposed modality");
        let xs: Vec<f64> = match m {
            Modality::Acc => {
                let i = cs.index_of(ComponentKind::AccMeanOb).expect("ACC present");
                let mean = cs.components[i].payload.scalar();
                let outlier = cs.components[i + 1].payload.series();
                let activity = cs.components[i + 2].payload.series();
                let signs = cs.aux.acc_signs.as_deref().expect("ACC signs");
                (0..cs.t)
                    .map(|k| {
                        b + w[i] * mean
                            + w[i + 2] * (f64::from(signs[k]) * activity[k])
                            + w[i + 1] * outlier[k]
                    })
                    .collect()
            }
            Modality::Hr => {
                let floor = cs.rr_floor_ms;
                hr_rr(cs, w).rr.into_iter().map(|r| MS_PER_MIN / r.max(floor)).collect()
            }
            Modality::Eda => {
                let i = cs.index_of(ComponentKind::EdaTonicMeanOb).expect("EDA present");
                let mean = cs.components[i].payload.scalar();
                let change = cs.components[i + 1].payload.series();
                let phasic = cs.components[i + 2].payload.series();
                (0..cs.t)
                    .map(|k| b + w[i] * mean + w[i + 1] * change[k] + w[i + 2] * phasic[k])
                    .collect()
            }
            Modality::Temp => {
                let i = cs.index_of(ComponentKind::TempMeanOb).expect("TEMP present");
                let mean = cs.components[i].payload.scalar();
                let rising = cs.components[i + 1].payload.series();
                let falling = cs.components[i + 2].payload.series();
                let anchor = cs.aux.temp_anchor.expect("TEMP anchor");
                let mut cur = b + w[i] * mean + anchor;
                let mut xs = Vec::with_capacity(cs.t);
                xs.push(cur);
                for (r, f) in rising.iter().zip(falling) {
                    cur += w[i + 1] * r + w[i + 2] * f;
                    xs.push(cur);
                }
                xs
            }
        };
        out.insert(m, xs);
    }
    out
}

/// Weighted inverse `F^-1(C_x w)`.
pub fn reconstruct(cs: &ComponentSet, w: &WeightVector) -> Result<MultimodalWindow> {
    cs.check_weights(w)?;
    MultimodalWindow::new(
        cs.meta.window_id.clone(),
        cs.meta.subject_id.clone(),
        cs.meta.label,
        cs.sample_rate_hz,
        reconstruct_channels(cs, w.as_slice()),
    )
}

/// Vector-Jacobian product `(d x' / d w)^T g_x` of [`reconstruct`], where
/// `g_x` is a gradient with respect to the reconstructed window.
pub fn weight_jvp(cs: &ComponentSet, w: &WeightVector, g_x: &Channels) -> Result<Vec<f64>> {
    cs.check_weights(w)?;
    let w = w.as_slice();
    let mut grad = vec![0.0; cs.d()];
    for m in cs.modalities() {
        let g = g_x.get(&m).ok_or(Error::MissingModality(m))?;
        if g.len() != cs.t {
            return Err(Error::LengthMismatch { expected: cs.t, got: g.len() });
        }
        match m {
            Modality::Acc => {
                let i = cs.index_of(ComponentKind::AccMeanOb).expect("ACC present");
                let outlier = cs.components[i + 1].payload.series();
                let activity = cs.components[i + 2].payload.series();
                let signs = cs.aux.acc_signs.as_deref().expect("ACC signs");
                grad[i] = cs.components[i].payload.scalar() * stats::pairwise_sum(g);
                grad[i + 1] = dot(g, outlier);
                grad[i + 2] = g
                    .iter()
                    .zip(activity)
                    .zip(signs)
                    .map(|((gk, a), &s)| gk * f64::from(s) * a)
                    .sum();
            }
            Modality::Hr => {
                let im = cs.index_of(ComponentKind::HrMeanOb).expect("HR present");
                let c_mean = cs.components[im].payload.scalar();
                let var = cs.components[im + 1].payload.series();
                let signs = cs.aux.hr_signs.as_deref().expect("HR signs");
                let HrTrace { rr, level } = hr_rr(cs, w);
                // q_k = dL/d rr'_k; clamped samples are constant.
                let q: Vec<f64> = rr
                    .iter()
                    .zip(g)
                    .map(|(&r, gk)| if r < cs.rr_floor_ms { 0.0 } else { -gk * MS_PER_MIN / (r * r) })
                    .collect();
                let dm_dw = -MS_PER_MIN / (level * level) * c_mean;
                grad[im] = stats::pairwise_sum(&q) * dm_dw;
                // rr'_k depends on w_v through the prefix sum of signed diffs.
                let mut prefix = 0.0;
                let mut acc = 0.0;
                for k in 1..cs.t {
                    prefix += f64::from(signs[k - 1]) * var[k - 1];
                    acc += q[k] * prefix;
                }
                grad[im + 1] = acc;
            }
            Modality::Eda => {
                let i = cs.index_of(ComponentKind::EdaTonicMeanOb).expect("EDA present");
                grad[i] = cs.components[i].payload.scalar() * stats::pairwise_sum(g);
                grad[i + 1] = dot(g, cs.components[i + 1].payload.series());
                grad[i + 2] = dot(g, cs.components[i + 2].payload.series());
            }
            Modality::Temp => {
                let i = cs.index_of(ComponentKind::TempMeanOb).expect("TEMP present");
                let rising = cs.components[i + 1].payload.series();
                let falling = cs.components[i + 2].payload.series();
                grad[i] = cs.components[i].payload.scalar() * stats::pairwise_sum(g);
                // x'_k = ... + sum_{j<k} (w_r r_j + w_f f_j): weight diff j by the
                // suffix sum of g over k > j.
                let mut suffix = 0.0;
                let (mut gr, mut gf) = (0.0, 0.0);
                for j in (0..cs.t - 1).rev() {
                    suffix += g[j + 1];
                    gr += rising[j] * suffix;
                    gf += falling[j] * suffix;
                }
                grad[i + 1] = gr;
                grad[i + 2] = gf;
            }
        }
    }
    Ok(grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Component dump for a single window, as written by `explain --dump-components`.
#[derive(Debug, Serialize)]
pub struct ComponentDump<'a> {
    pub window_id: &'a str,
    pub components: &'a [Component],
    pub aux: &'a AuxState,
    pub baselines: &'a BaselineSet,
}

impl<'a> From<&'a ComponentSet> for ComponentDump<'a> {
    fn from(cs: &'a ComponentSet) -> Self {
        Self {
            window_id: &cs.meta.window_id,
            components: &cs.components,
            aux: &cs.aux,
            baselines: &cs.baselines,
        }
    }
}

#[cfg(test)]
mod tests;
