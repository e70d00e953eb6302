use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{Model, ModelSpec, Standardizer};
use super::window_to_matrix;
use crate::error::{Error, Result};
use crate::signal::{Dataset, Modality};

#[derive(Debug, Clone)]
pub struct Sample {
    pub x: Array2<f64>,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without improvement of the monitored loss before stopping.
    pub patience: usize,
    /// L2 penalty `weight_decay / 2 * |theta|^2` added to the batch loss.
    #[serde(default)]
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { adam: AdamConfig::default(), epochs: 100, batch_size: 16, patience: 10, weight_decay: 0.0, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidConfig("lr must be > 0".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_loss: f64,
    pub eval_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest monitored loss.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_loss: f64,
}

fn evaluate(model: &Model, data: &[Sample]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let rows: Vec<(f64, bool)> = data
        .par_iter()
        .map(|s| {
            let out = model.forward_matrix(&s.x)?;
            Ok((out.nll(s.y), out.argmax() == s.y))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    Ok((
        rows.iter().map(|r| r.0).sum::<f64>() / n,
        rows.iter().filter(|r| r.1).count() as f64 / n,
    ))
}

/// Mini-batch Adam on cross-entropy with early stopping on the eval loss
/// (the train loss when `eval` is empty). Per-sample gradients may be
/// computed in parallel; they are reduced in sample order, so results are
/// identical for any thread count.
pub fn train(spec: &ModelSpec, train: &[Sample], eval: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for c in 0..spec.num_classes {
        if !train.iter().any(|s| s.y == c) {
            return Err(Error::InvalidConfig(format!("class {c} has no training samples")));
        }
    }
    let mut model = Model::new(spec.clone())?;
    model.set_standardizer(Standardizer::fit(train.iter().map(|s| &s.x), spec.channels.len()));
    let mut states: Vec<AdamState> = model.params().iter().map(|p| AdamState::new(p.value.len())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let per_sample = batch
                .par_iter()
                .map(|&i| model.loss_and_param_grads(&train[i].x, train[i].y))
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut total: Vec<Array2<f64>> = model.params().iter().map(|p| Array2::zeros(p.value.dim())).collect();
            for ((loss, out, grads), &i) in per_sample.iter().zip(batch) {
                loss_sum += loss;
                correct += usize::from(out.argmax() == train[i].y);
                for (t, g) in total.iter_mut().zip(grads) {
                    *t += g;
                }
            }
            if !loss_sum.is_finite() {
                return Err(Error::DivergenceDetected { epoch });
            }
            for ((p, g), st) in model.params_mut().iter_mut().zip(&mut total).zip(&mut states) {
                g.mapv_inplace(|v| v * scale);
                if cfg.weight_decay > 0.0 {
                    g.scaled_add(cfg.weight_decay, &p.value);
                }
                let ps = p.value.as_slice_mut().expect("standard layout");
                adam_step(ps, g.as_slice().expect("standard layout"), st, &cfg.adam);
            }
        }
        let n = train.len() as f64;
        let (eval_loss, eval_acc) = evaluate(&model, eval)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            eval_loss,
            eval_acc,
        };
        let monitored = if eval.is_empty() { rec.train_loss } else { rec.eval_loss };
        if !monitored.is_finite() {
            return Err(Error::DivergenceDetected { epoch });
        }
        log::debug!("epoch {epoch}: train {:.4} eval {:.4} acc {:.3}", rec.train_loss, rec.eval_loss, rec.eval_acc);
        history.push(rec);
        if monitored < best.0 {
            best = (monitored, epoch, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { model: best.2, history, best_epoch: best.1, best_loss: best.0 })
}

pub fn dataset_samples(ds: &Dataset, modalities: &[Modality]) -> Result<Vec<Sample>> {
    let labels = ds.labels()?;
    ds.windows()
        .iter()
        .zip(labels)
        .map(|(w, y)| Ok(Sample { x: window_to_matrix(w, modalities)?, y }))
        .collect()
}

/// [`train`] on window datasets; `spec.channels` selects the modalities.
pub fn train_windows(spec: &ModelSpec, train_ds: &Dataset, eval_ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mods: Vec<Modality> = spec.channels.iter().map(|c| c.parse()).collect::<Result<_>>()?;
    train(spec, &dataset_samples(train_ds, &mods)?, &dataset_samples(eval_ds, &mods)?, cfg)
}

/// Trains `restarts` independently seeded models and keeps the one with the
/// lowest monitored loss (first wins on ties).
pub fn train_with_restarts(
    spec: &ModelSpec,
    train_set: &[Sample],
    eval_set: &[Sample],
    cfg: &TrainConfig,
    restarts: usize,
) -> Result<TrainOutcome> {
    let mut best: Option<TrainOutcome> = None;
    for r in 0..restarts.max(1) as u64 {
        let spec_r = ModelSpec { seed: spec.seed.wrapping_add(r), ..spec.clone() };
        let cfg_r = TrainConfig { seed: cfg.seed.wrapping_add(r), ..cfg.clone() };
        let out = train(&spec_r, train_set, eval_set, &cfg_r)?;
        if best.as_ref().map_or(true, |b| out.best_loss < b.best_loss) {
            best = Some(out);
        }
    }
    Ok(best.expect("at least one restart"))
}
