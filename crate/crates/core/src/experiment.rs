//! End-to-end runs on synthetic data: generate, train a window classifier,
//! explain it in component space, fit both comparison explainers and score
//! everything on the held-out subjects.

use serde::{Deserialize, Serialize};

use crate::baselines::{dataset_concepts, fit_lcbm, FcShap, LcbmConfig};
use crate::decomp::{decompose, ComponentSet, DecompConfig};
use crate::error::{Error, Result};
use crate::eval::{ComponentMasker, FeatureMasker};
use crate::iic::{batch_explain, Explanation, IicConfig};
use crate::nn::{dataset_samples, modality_channels, train_with_restarts, Arch, EpochRecord, Model, ModelSpec, TrainConfig};
use crate::report::{fcshap_records, iic_records, lcbm_records, score, ExplanationFile, Failure, Method, MethodScores};
use crate::signal::{compute_baselines, BaselineSet, Dataset};
use crate::synth::{generate, SynthConfig, SynthData, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub arch: Arch,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub train: TrainConfig,
    pub restarts: usize,
    pub iic: IicConfig,
    pub decomp: DecompConfig,
    pub lcbm: LcbmConfig,
    pub fcshap_hidden: usize,
    pub fcshap_train: TrainConfig,
    /// Fidelity is reported for every k in `1..=max_k`.
    pub max_k: usize,
    pub tau_iic: f64,
    pub tau_lcbm: f64,
    pub tau_fcshap: f64,
    /// Fit and score the comparison explainers as well.
    pub baselines: bool,
}

impl ExperimentConfig {
    /// LSTM for the state task, transformer for the seizure task.
    pub fn for_task(task: Task, seed: u64) -> Self {
        let synth = SynthConfig::for_task(task, seed);
        let (arch, num_layers, num_heads) = match task {
            Task::State => (Arch::Lstm, 1, 1),
            Task::Seizure => (Arch::Transformer, 2, 4),
        };
        // Weight decay keeps the window models from saturating; a saturated
        // model is flat in component space almost everywhere.
        let mut train = TrainConfig { epochs: 30, patience: 10, weight_decay: 1e-2, seed, ..TrainConfig::default() };
        let mut restarts = 1;
        if task == Task::Seizure {
            train.adam.lr = 3e-3;
            train.epochs = 60;
            train.patience = 15;
            restarts = 3;
        }
        let mut fcshap_train = TrainConfig { epochs: 200, patience: 50, seed, ..TrainConfig::default() };
        fcshap_train.adam.lr = 1e-2;
        Self {
            synth,
            arch,
            hidden_size: 16,
            num_layers,
            num_heads,
            train,
            restarts,
            iic: IicConfig { seed, ..IicConfig::default() },
            decomp: DecompConfig::default(),
            lcbm: LcbmConfig::default(),
            fcshap_hidden: 16,
            fcshap_train,
            max_k: 3,
            tau_iic: 0.01,
            tau_lcbm: 0.01,
            tau_fcshap: 0.02,
            baselines: true,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = ModelSpec::new(self.arch, self.synth.t, modality_channels(&self.synth.modalities()), 2);
        spec.hidden_size = self.hidden_size;
        spec.num_layers = self.num_layers;
        spec.num_heads = self.num_heads;
        spec.seed = self.synth.seed;
        spec
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub data: SynthData,
    pub baselines: BaselineSet,
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub explanations: Vec<Explanation>,
    /// Records of `explanations`, with any failed windows.
    pub iic_file: ExplanationFile,
    pub iic: MethodScores,
    pub lcbm: Option<MethodScores>,
    pub fcshap: Option<MethodScores>,
}

impl ExperimentResult {
    pub fn ground_truth_names(&self) -> Vec<&'static str> {
        self.data.ground_truth.iter().map(|k| k.name()).collect()
    }
}

fn ks(max_k: usize) -> Vec<usize> {
    (1..=max_k).collect()
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let data = generate(&cfg.synth)?;
    let baselines = compute_baselines(&data.train)?;
    let seed = cfg.synth.seed;
    let mods = cfg.synth.modalities();

    let spec = cfg.model_spec();
    let train_s = dataset_samples(&data.train, &mods)?;
    let eval_s = dataset_samples(&data.eval, &mods)?;
    let outcome = train_with_restarts(&spec, &train_s, &eval_s, &cfg.train, cfg.restarts)?;
    let model = outcome.model;

    let batch = batch_explain(&model, data.eval.windows(), &baselines, &cfg.decomp, &cfg.iic);
    let failures: Vec<Failure> =
        batch.failures.iter().map(|(id, e)| Failure { window_id: id.clone(), error: e.to_string() }).collect();
    let explanations = batch.explanations;
    let ids: Vec<String> = explanations.iter().map(|e| e.window_id.clone()).collect();
    let sets = explained_sets(&data.eval, &ids, &baselines, &cfg.decomp)?;
    let file = ExplanationFile {
        method: Method::Iic,
        names: sets.first().map(ComponentSet::names).unwrap_or_default(),
        records: iic_records(&explanations, &sets),
        failures,
    };
    let masker = ComponentMasker { model: &model, sets: &sets };
    let iic = score(&file, &masker, 2, &ks(cfg.max_k), &[cfg.tau_iic], seed)?;

    let (lcbm, fcshap) = if cfg.baselines {
        (Some(score_lcbm(cfg, &data, &baselines)?), Some(score_fcshap(cfg, &data)?))
    } else {
        (None, None)
    };

    Ok(ExperimentResult {
        config: cfg.clone(),
        data,
        baselines,
        model,
        history: outcome.history,
        explanations,
        iic_file: file,
        iic,
        lcbm,
        fcshap,
    })
}

/// Decompositions of the windows with the given IDs, in that order.
pub fn explained_sets(ds: &Dataset, ids: &[String], baselines: &BaselineSet, decomp: &DecompConfig) -> Result<Vec<ComponentSet>> {
    ids.iter()
        .map(|id| {
            let w = ds
                .windows()
                .iter()
                .find(|w| w.window_id() == id)
                .ok_or_else(|| Error::InvalidWindow(format!("no window `{id}`")))?;
            decompose(w, baselines, decomp)
        })
        .collect()
}

fn score_lcbm(cfg: &ExperimentConfig, data: &SynthData, baselines: &BaselineSet) -> Result<MethodScores> {
    let lcbm = fit_lcbm(&data.train, baselines, &cfg.decomp, &cfg.lcbm)?;
    let (_, rows) = dataset_concepts(&data.eval, baselines, &cfg.decomp)?;
    let file = lcbm_records(&lcbm, &data.eval, &rows)?;
    let masker = FeatureMasker { rows: &rows, train_mean: &lcbm.mean, predict: |x: &[f64]| lcbm.predict(x) };
    score(&file, &masker, 2, &ks(cfg.max_k), &[cfg.tau_lcbm], cfg.synth.seed)
}

fn score_fcshap(cfg: &ExperimentConfig, data: &SynthData) -> Result<MethodScores> {
    let (fc, _) = FcShap::fit(&data.train, &data.eval, cfg.fcshap_hidden, cfg.synth.seed, &cfg.fcshap_train, cfg.restarts)?;
    let file = fcshap_records(&fc, &data.eval)?;
    let rows: Vec<Vec<f64>> = file.records.iter().map(|r| r.values.clone()).collect();
    let masker = FeatureMasker { rows: &rows, train_mean: &fc.train_mean, predict: |x: &[f64]| fc.predict(x) };
    score(&file, &masker, 2, &ks(cfg.max_k), &[cfg.tau_fcshap], cfg.synth.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Effects;

    fn quick(task: Task, seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::for_task(task, seed);
        cfg.baselines = false;
        cfg.iic.epochs = 20;
        cfg
    }

    #[test]
    fn no_planted_effect_means_chance_accuracy() {
        for seed in 0..2 {
            let mut cfg = quick(Task::State, seed);
            cfg.synth.effects = Effects::none();
            let r = run(&cfg).unwrap();
            assert!(r.iic.metrics.accuracy <= 0.6, "seed {seed}: {}", r.iic.metrics.accuracy);
        }
    }

    #[test]
    fn records_cover_the_eval_split() {
        let r = run(&quick(Task::State, 3)).unwrap();
        let n = r.data.eval.len();
        assert_eq!(r.iic_file.records.len() + r.iic_file.failures.len(), n);
        assert_eq!(r.iic.fidelity.len(), 3);
        assert_eq!(r.iic.sufficiency[0].param, 0.01);
        assert_eq!(r.iic_file.names.len(), 8, "HR, EDA and TEMP components");
        assert!(r.iic_file.records.iter().all(|rec| rec.weights.iter().all(|w| (0.0..=1.0).contains(w))));
    }
}
