//! Synthetic autonomic-nervous-system recordings with planted class
//! signatures, for validating explanations against a known ground truth.
//!
//! Every subject gets its own resting levels; windows add AR(1) noise on
//! top. Class-1 windows carry the planted effects. Distractors that occur
//! in both classes with equal probability (movement artifacts, exercise
//! episodes) keep the task from being solvable by a single statistic.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::decomp::ComponentKind;
use crate::error::{Error, Result};
use crate::signal::{Channels, Dataset, Modality, MultimodalWindow, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Supine rest vs stepping, without accelerometry.
    State,
    /// Interictal vs ictal windows.
    Seizure,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::State => "state",
            Task::Seizure => "seizure",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "state" => Ok(Task::State),
            "seizure" => Ok(Task::Seizure),
            other => Err(Error::InvalidConfig(format!("unknown task `{other}`"))),
        }
    }
}

impl Task {
    pub fn class_names(self) -> Vec<String> {
        let names: [&str; 2] = match self {
            Task::State => ["supine", "stepping"],
            Task::Seizure => ["interictal", "ictal"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

/// Size of the planted class-1 signatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effects {
    /// Added to the heart rate, bpm.
    pub hr_mean_shift: f64,
    /// Added to the tonic EDA level, µS.
    pub eda_tonic_shift: f64,
    /// Probability that a class-1 window carries an accelerometer burst.
    pub acc_outlier_rate: f64,
    /// Peak deviation of the burst swings, g.
    pub acc_burst_amplitude: f64,
    /// Relative increase of the heart-rate fluctuation amplitude.
    pub hr_var_scale: f64,
    /// Linear temperature trend, °C per minute.
    pub temp_drift: f64,
}

impl Effects {
    pub fn none() -> Self {
        Self {
            hr_mean_shift: 0.0,
            eda_tonic_shift: 0.0,
            acc_outlier_rate: 0.0,
            acc_burst_amplitude: 0.0,
            hr_var_scale: 0.0,
            temp_drift: 0.0,
        }
    }
}

/// Noise and between-subject spread. All values are standard deviations
/// except the distractor probabilities and sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub ar_phi: f64,
    pub hr: f64,
    pub eda: f64,
    pub temp: f64,
    pub acc: f64,
    pub subject_hr: f64,
    pub subject_eda: f64,
    pub subject_temp: f64,
    /// Level offsets drawn once per window.
    pub window_hr: f64,
    pub window_eda: f64,
    /// Rate of phasic skin-conductance responses, per minute.
    pub scr_rate_per_min: f64,
    pub scr_amplitude: f64,
    /// Probability of scattered movement spikes, in either class.
    pub artifact_rate: f64,
    /// Peak deviation of a movement spike, g.
    pub artifact_amplitude: f64,
    /// Brief heart-rate surge present in every window, bpm. Ictal bursts
    /// coincide with it; elsewhere its timing is random.
    pub hr_surge: f64,
    /// Probability of an exercise episode raising the heart rate, in either class.
    pub exercise_rate: f64,
    pub exercise_hr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub task: Task,
    pub n_subjects: usize,
    /// Subjects held out for the evaluation split.
    pub eval_subjects: usize,
    /// Windows per class and subject.
    pub windows_per_class: usize,
    pub t: usize,
    pub sample_rate_hz: f64,
    pub seed: u64,
    pub effects: Effects,
    pub noise: Noise,
}

impl SynthConfig {
    pub fn state(seed: u64) -> Self {
        Self {
            task: Task::State,
            n_subjects: 14,
            eval_subjects: 4,
            windows_per_class: 15,
            t: 60,
            sample_rate_hz: 2.0,
            seed,
            effects: Effects { hr_mean_shift: 15.0, eda_tonic_shift: 1.5, ..Effects::none() },
            noise: Noise {
                ar_phi: 0.9,
                hr: 1.0,
                eda: 0.3,
                temp: 0.02,
                acc: 0.02,
                subject_hr: 2.0,
                subject_eda: 0.4,
                subject_temp: 0.4,
                window_hr: 3.0,
                window_eda: 0.4,
                scr_rate_per_min: 2.0,
                scr_amplitude: 0.2,
                artifact_rate: 0.0,
                artifact_amplitude: 0.0,
                hr_surge: 0.0,
                exercise_rate: 0.0,
                exercise_hr: 0.0,
            },
        }
    }

    pub fn seizure(seed: u64) -> Self {
        Self {
            task: Task::Seizure,
            n_subjects: 14,
            eval_subjects: 4,
            windows_per_class: 15,
            t: 60,
            sample_rate_hz: 1.0,
            seed,
            effects: Effects {
                hr_mean_shift: 25.0,
                acc_outlier_rate: 1.0,
                acc_burst_amplitude: 0.8,
                hr_var_scale: 0.2,
                ..Effects::none()
            },
            noise: Noise {
                ar_phi: 0.9,
                hr: 4.0,
                eda: 0.05,
                temp: 0.05,
                acc: 0.03,
                subject_hr: 5.0,
                subject_eda: 0.1,
                subject_temp: 0.4,
                window_hr: 3.0,
                window_eda: 0.05,
                scr_rate_per_min: 1.0,
                scr_amplitude: 0.05,
                artifact_rate: 0.4,
                artifact_amplitude: 0.8,
                hr_surge: 15.0,
                exercise_rate: 0.4,
                exercise_hr: 22.0,
            },
        }
    }

    pub fn for_task(task: Task, seed: u64) -> Self {
        match task {
            Task::State => Self::state(seed),
            Task::Seizure => Self::seizure(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let e = &self.effects;
        let effects = [e.hr_mean_shift, e.eda_tonic_shift, e.acc_outlier_rate, e.acc_burst_amplitude, e.hr_var_scale, e.temp_drift];
        if effects.iter().any(|v| !(*v >= 0.0)) {
            return bad("effect sizes must be >= 0");
        }
        if e.acc_outlier_rate > 1.0 || !(0.0..=1.0).contains(&self.noise.artifact_rate) || !(0.0..=1.0).contains(&self.noise.exercise_rate) {
            return bad("rates must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.noise.ar_phi) {
            return bad("ar_phi must lie in [0, 1)");
        }
        if self.eval_subjects == 0 || self.eval_subjects >= self.n_subjects {
            return bad("eval_subjects must be in 1..n_subjects");
        }
        if self.windows_per_class == 0 || self.t < 8 || !(self.sample_rate_hz > 0.0) {
            return bad("windows_per_class >= 1, t >= 8 and sample_rate_hz > 0 required");
        }
        Ok(())
    }

    pub fn modalities(&self) -> Vec<Modality> {
        match self.task {
            Task::State => vec![Modality::Hr, Modality::Eda, Modality::Temp],
            Task::Seizure => Modality::ALL.to_vec(),
        }
    }

    /// Components an ideal explainer should rank first.
    pub fn ground_truth(&self) -> Vec<ComponentKind> {
        match self.task {
            Task::State => vec![ComponentKind::HrMeanOb, ComponentKind::EdaTonicMeanOb],
            Task::Seizure => vec![ComponentKind::AccOutlier, ComponentKind::HrMeanOb, ComponentKind::HrVariability],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: Dataset,
    pub eval: Dataset,
    pub ground_truth: Vec<ComponentKind>,
}

/// Samples in an accelerometer burst or artifact group.
const SPIKES: usize = 4;

/// Lowest heart rate the generator emits, bpm.
pub const HR_FLOOR: f64 = 30.0;

struct Subject {
    hr: f64,
    eda: f64,
    temp: f64,
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd > 0.0 {
        Normal::new(0.0, sd).expect("positive sd").sample(rng)
    } else {
        0.0
    }
}

/// Stationary AR(1) series with marginal standard deviation `sd`.
fn ar1(rng: &mut ChaCha8Rng, n: usize, phi: f64, sd: f64) -> Vec<f64> {
    let innov = sd * (1.0 - phi * phi).sqrt();
    let mut x = normal(rng, sd);
    (0..n)
        .map(|_| {
            let v = x;
            x = phi * x + normal(rng, innov);
            v
        })
        .collect()
}

/// Skin-conductance responses: fast rise, slow exponential recovery.
fn scr_train(rng: &mut ChaCha8Rng, n: usize, rate_hz: f64, per_min: f64, amp: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let expected = per_min * n as f64 / rate_hz / 60.0;
    let count = (expected.floor() as usize) + usize::from(rng.gen_bool(expected.fract()));
    for _ in 0..count {
        let onset = rng.gen_range(0..n);
        let a = amp * rng.gen_range(0.5..1.5);
        for (i, v) in out.iter_mut().enumerate().skip(onset) {
            let dt = (i - onset) as f64 / rate_hz;
            *v += a * (1.0 - (-dt / 0.75).exp()) * (-dt / 4.0).exp();
        }
    }
    out
}

impl SynthConfig {
    fn window(&self, rng: &mut ChaCha8Rng, subj: &Subject, y: usize) -> Channels {
        let n = self.t;
        let nz = &self.noise;
        let fx = &self.effects;
        let pos = y == 1;
        let mut ch = Channels::new();

        let burst = self.task == Task::Seizure && pos && fx.acc_outlier_rate > 0.0 && rng.gen_bool(fx.acc_outlier_rate);
        let onset = rng.gen_range(0..=n - SPIKES);

        let var_scale = if pos { 1.0 + fx.hr_var_scale } else { 1.0 };
        let exercise = nz.exercise_rate > 0.0 && rng.gen_bool(nz.exercise_rate);
        let hr_level = subj.hr + normal(rng, nz.window_hr) + if pos { fx.hr_mean_shift } else { 0.0 } + if exercise { nz.exercise_hr } else { 0.0 };
        let mut hr: Vec<f64> = ar1(rng, n, nz.ar_phi, nz.hr * var_scale).iter().map(|v| hr_level + v).collect();
        if nz.hr_surge > 0.0 {
            let at = if burst { onset } else { rng.gen_range(0..=n - SPIKES) };
            for v in &mut hr[at..at + SPIKES] {
                *v += nz.hr_surge;
            }
        }
        ch.insert(Modality::Hr, hr.iter().map(|v| v.max(HR_FLOOR)).collect());

        let eda_level = subj.eda + normal(rng, nz.window_eda) + if pos { fx.eda_tonic_shift } else { 0.0 };
        let drift = ar1(rng, n, nz.ar_phi, nz.eda);
        let scr = scr_train(rng, n, self.sample_rate_hz, nz.scr_rate_per_min, nz.scr_amplitude);
        ch.insert(Modality::Eda, (0..n).map(|i| eda_level + drift[i] + scr[i]).collect());

        let slope = if pos { fx.temp_drift / 60.0 / self.sample_rate_hz } else { 0.0 };
        let temp_noise = ar1(rng, n, nz.ar_phi, nz.temp);
        ch.insert(Modality::Temp, (0..n).map(|i| subj.temp + slope * i as f64 + temp_noise[i]).collect());

        if self.task == Task::Seizure {
            let mut acc: Vec<f64> = ar1(rng, n, 0.5, nz.acc).iter().map(|v| 1.0 + v).collect();
            // Bursts and artifacts share count, amplitude and sign pattern;
            // bursts are contiguous and locked to the heart-rate surge.
            if !burst && nz.artifact_rate > 0.0 && rng.gen_bool(nz.artifact_rate) {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(rng);
                let first = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                for (k, &i) in idx.iter().take(SPIKES).enumerate() {
                    let s = if k % 2 == 0 { first } else { -first };
                    acc[i] += s * nz.artifact_amplitude * rng.gen_range(0.8..1.2);
                }
            }
            if burst {
                let first = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                for k in 0..SPIKES {
                    let s = if k % 2 == 0 { first } else { -first };
                    acc[onset + k] += s * fx.acc_burst_amplitude * rng.gen_range(0.8..1.2);
                }
            }
            ch.insert(Modality::Acc, acc.iter().map(|v| v.max(0.0)).collect());
        }
        ch
    }
}

/// Generates a subject-disjoint train/eval pair. The same configuration
/// always yields the same data.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..cfg.n_subjects).collect();
    order.shuffle(&mut rng);
    let eval_ids: Vec<usize> = order[..cfg.eval_subjects].to_vec();
    let subject_seeds: Vec<u64> = (0..cfg.n_subjects).map(|_| rng.gen()).collect();

    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (s, &seed) in subject_seeds.iter().enumerate() {
        let mut srng = ChaCha8Rng::seed_from_u64(seed);
        let subj = Subject {
            hr: 70.0 + normal(&mut srng, cfg.noise.subject_hr),
            eda: 3.0 + normal(&mut srng, cfg.noise.subject_eda),
            temp: 33.5 + normal(&mut srng, cfg.noise.subject_temp),
        };
        let mut windows = Vec::with_capacity(2 * cfg.windows_per_class);
        for k in 0..cfg.windows_per_class {
            for y in 0..2 {
                let ch = cfg.window(&mut srng, &subj, y);
                let id = format!("{}-s{s:02}-c{y}-{k:03}", cfg.task);
                windows.push(MultimodalWindow::new(id, format!("S{s:02}"), Some(y), cfg.sample_rate_hz, ch)?);
            }
        }
        if eval_ids.contains(&s) {
            eval.extend(windows);
        } else {
            train.extend(windows);
        }
    }
    let names = cfg.task.class_names();
    Ok(SynthData {
        train: Dataset::new(train, Split::Train, names.clone())?,
        eval: Dataset::new(eval, Split::Eval, names)?,
        ground_truth: cfg.ground_truth(),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn class_mean(ds: &Dataset, m: Modality, y: usize) -> f64 {
        let vals: Vec<f64> = ds
            .windows()
            .iter()
            .filter(|w| w.label() == Some(y))
            .flat_map(|w| w.channel(m).unwrap().to_vec())
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn same_seed_same_data() {
        for task in [Task::State, Task::Seizure] {
            let a = generate(&SynthConfig::for_task(task, 3)).unwrap();
            let b = generate(&SynthConfig::for_task(task, 3)).unwrap();
            assert_eq!(a.train.windows(), b.train.windows());
            assert_eq!(a.eval.windows(), b.eval.windows());
            let c = generate(&SynthConfig::for_task(task, 4)).unwrap();
            assert_ne!(a.train.windows(), c.train.windows());
        }
    }

    #[test]
    fn splits_are_subject_disjoint_and_balanced() {
        let d = generate(&SynthConfig::seizure(1)).unwrap();
        let subjects = |ds: &Dataset| ds.windows().iter().map(|w| w.subject_id().to_string()).collect::<BTreeSet<_>>();
        assert!(subjects(&d.train).is_disjoint(&subjects(&d.eval)));
        assert_eq!(subjects(&d.eval).len(), 4);
        let labels = d.eval.labels().unwrap();
        assert_eq!(labels.iter().filter(|y| **y == 1).count() * 2, labels.len());
        assert_eq!(d.eval.modalities(), Modality::ALL.to_vec());
        assert_eq!(generate(&SynthConfig::state(1)).unwrap().train.modalities().len(), 3);
    }

    #[test]
    fn large_shift_with_tiny_noise_is_recovered() {
        let mut cfg = SynthConfig::state(2);
        cfg.effects.hr_mean_shift = 50.0;
        cfg.noise.hr = 1e-3;
        let d = generate(&cfg).unwrap();
        let diff = class_mean(&d.train, Modality::Hr, 1) - class_mean(&d.train, Modality::Hr, 0);
        assert!((diff - 50.0).abs() <= 1.0, "{diff}");
    }

    #[test]
    fn heart_rate_stays_above_floor() {
        let mut cfg = SynthConfig::seizure(5);
        cfg.noise.subject_hr = 40.0;
        cfg.noise.hr = 30.0;
        let d = generate(&cfg).unwrap();
        for w in d.train.windows().iter().chain(d.eval.windows()) {
            assert!(w.channel(Modality::Hr).unwrap().iter().all(|v| *v >= HR_FLOOR));
        }
    }

    #[test]
    fn planted_effect_is_significant() {
        // Welch t statistic of per-window HR means between classes.
        let d = generate(&SynthConfig::state(7)).unwrap();
        let means = |y: usize| -> Vec<f64> {
            d.train
                .windows()
                .iter()
                .filter(|w| w.label() == Some(y))
                .map(|w| crate::stats::mean(w.channel(Modality::Hr).unwrap()))
                .collect()
        };
        let (a, b) = (means(1), means(0));
        let mv = |x: &[f64]| {
            let m = crate::stats::mean(x);
            (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64)
        };
        let ((ma, va), (mb, vb)) = (mv(&a), mv(&b));
        let t = (ma - mb) / (va / a.len() as f64 + vb / b.len() as f64).sqrt();
        assert!(t > 5.0, "{t}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SynthConfig::state(0);
        cfg.effects.hr_mean_shift = -1.0;
        assert!(generate(&cfg).is_err());
        let mut cfg = SynthConfig::state(0);
        cfg.eval_subjects = cfg.n_subjects;
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn ground_truth_names() {
        let names: Vec<&str> = SynthConfig::seizure(0).ground_truth().iter().map(|k| k.name()).collect();
        assert_eq!(names, ["ACC.Outlier", "HR.MeanOB", "HR.Variability"]);
    }
}
