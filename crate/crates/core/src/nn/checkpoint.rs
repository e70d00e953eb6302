//! Versioned JSON checkpoints: spec, seed, input standardizer and flat
//! row-major parameter arrays.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{Model, ModelSpec, Param, Standardizer};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "ckpt_v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub spec: ModelSpec,
    pub seed: u64,
    pub standardizer: Standardizer,
    pub params: Vec<ParamRecord>,
}

impl From<&Model> for Checkpoint {
    fn from(m: &Model) -> Self {
        Self {
            version: CHECKPOINT_VERSION.to_string(),
            spec: m.spec().clone(),
            seed: m.spec().seed,
            standardizer: m.standardizer().clone(),
            params: m
                .params()
                .iter()
                .map(|p| ParamRecord {
                    name: p.name.clone(),
                    shape: [p.value.nrows(), p.value.ncols()],
                    data: p.value.iter().copied().collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<Checkpoint> for Model {
    type Error = Error;

    fn try_from(ck: Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "checkpoint version `{}`, expected `{CHECKPOINT_VERSION}`",
                ck.version
            )));
        }
        let params = ck
            .params
            .into_iter()
            .map(|r| {
                let value = Array2::from_shape_vec((r.shape[0], r.shape[1]), r.data)
                    .map_err(|e| Error::ShapeMismatch(format!("parameter `{}`: {e}", r.name)))?;
                Ok(Param { name: r.name, value })
            })
            .collect::<Result<Vec<_>>>()?;
        Model::from_parts(ck.spec, params, ck.standardizer)
    }
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string(&Checkpoint::from(model))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
    Model::try_from(ck)
}
