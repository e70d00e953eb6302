//! Small differentiable classifiers (fully connected, LSTM, transformer
//! encoder) built on a reverse-mode tape.
//!
//! Besides the usual parameter gradients for training, every model exposes
//! gradients of an arbitrary scalar [`Objective`] with respect to its input;
//! that is what the component-weight optimizer backpropagates through.

mod adam;
mod checkpoint;
mod model;
pub mod tape;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use model::{positional_encoding, Arch, Model, ModelOutput, ModelSpec, Param, Standardizer};
pub use train::{dataset_samples, train, train_windows, train_with_restarts, EpochRecord, Sample, TrainConfig, TrainOutcome};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::signal::{Channels, Modality, MultimodalWindow};

/// Gradient of an objective with respect to the model outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrad {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
}

impl OutputGrad {
    pub fn zeros(k: usize) -> Self {
        Self { probs: vec![0.0; k], logits: vec![0.0; k] }
    }

    /// Total gradient with respect to the logits, pulling the probability
    /// part back through the softmax: `p * (g - <p, g>)`.
    pub fn logit_seed(&self, out: &ModelOutput) -> Array2<f64> {
        let dot: f64 = out.probs.iter().zip(&self.probs).map(|(p, g)| p * g).sum();
        let v: Vec<f64> = out
            .probs
            .iter()
            .zip(&self.probs)
            .zip(&self.logits)
            .map(|((p, gp), gl)| gl + p * (gp - dot))
            .collect();
        Array2::from_shape_vec((1, v.len()), v).expect("1 x k")
    }
}

/// A scalar function of a model output, with its gradient.
pub trait Objective {
    fn evaluate(&self, out: &ModelOutput) -> (f64, OutputGrad);
}

impl<F: Fn(&ModelOutput) -> (f64, OutputGrad)> Objective for F {
    fn evaluate(&self, out: &ModelOutput) -> (f64, OutputGrad) {
        self(out)
    }
}

/// Anything that classifies multimodal windows and can differentiate a
/// scalar objective of its output with respect to the window samples.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;

    fn forward(&self, window: &MultimodalWindow) -> Result<ModelOutput>;

    /// Objective value, model output and per-sample input gradient.
    fn input_gradient(&self, window: &MultimodalWindow, objective: &dyn Objective) -> Result<(f64, ModelOutput, Channels)>;

    fn predict(&self, window: &MultimodalWindow) -> Result<usize> {
        Ok(self.forward(window)?.argmax())
    }
}

/// Channel names a window model expects: modality tags in canonical order.
pub fn modality_channels(modalities: &[Modality]) -> Vec<String> {
    modalities.iter().map(|m| m.tag().to_string()).collect()
}

impl Model {
    fn channel_modalities(&self) -> Result<Vec<Modality>> {
        self.spec().channels.iter().map(|c| c.parse()).collect()
    }

    /// Stacks window channels column-wise in the model's channel order.
    pub fn window_matrix(&self, window: &MultimodalWindow) -> Result<Array2<f64>> {
        window_to_matrix(window, &self.channel_modalities()?)
    }
}

pub fn window_to_matrix(window: &MultimodalWindow, modalities: &[Modality]) -> Result<Array2<f64>> {
    let t = window.len();
    let mut x = Array2::zeros((t, modalities.len()));
    for (c, m) in modalities.iter().enumerate() {
        let xs = window.channel(*m).ok_or(Error::MissingModality(*m))?;
        for (i, v) in xs.iter().enumerate() {
            x[[i, c]] = *v;
        }
    }
    Ok(x)
}

impl Classifier for Model {
    fn num_classes(&self) -> usize {
        self.spec().num_classes
    }

    fn forward(&self, window: &MultimodalWindow) -> Result<ModelOutput> {
        self.forward_matrix(&self.window_matrix(window)?)
    }

    fn input_gradient(&self, window: &MultimodalWindow, objective: &dyn Objective) -> Result<(f64, ModelOutput, Channels)> {
        let mods = self.channel_modalities()?;
        let x = window_to_matrix(window, &mods)?;
        let (value, out, gx) = self.input_gradient_matrix(&x, objective)?;
        let mut g = Channels::new();
        for (c, m) in mods.iter().enumerate() {
            g.insert(*m, gx.column(c).to_vec());
        }
        // Channels the model does not read have zero gradient.
        for m in window.modalities() {
            g.entry(m).or_insert_with(|| vec![0.0; window.len()]);
        }
        Ok((value, out, g))
    }
}
