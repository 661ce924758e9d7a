//! TOML model files with hexadecimal float literals.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hexfloat;
use crate::error::{Error, Result};
use crate::gan::EntropicGanModel;
use crate::nets::{Mlp, MlpParams, MlpSpec};
use crate::ot::LossKind;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetRecord {
    spec: MlpSpec,
    /// Every tensor of the network flattened in layer order, weights
    /// (row-major) before biases.
    params: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    format_version: u32,
    lambda: String,
    loss: LossKind,
    data_dim: usize,
    latent_dim: usize,
    train_size: usize,
    seed: String,
    iterations: usize,
    generator: NetRecord,
    d1: NetRecord,
    d2: NetRecord,
}

fn net_record(net: &Mlp) -> NetRecord {
    NetRecord {
        spec: net.spec.clone(),
        params: net
            .params
            .tensors()
            .iter()
            .flat_map(|t| t.data().iter().map(|&v| hexfloat::format(v)))
            .collect(),
    }
}

fn net_from_record(name: &str, rec: NetRecord) -> Result<Mlp> {
    let mut params = MlpParams::zeros(&rec.spec);
    let expected = params.num_params();
    if rec.params.len() != expected {
        return Err(Error::Format(format!(
            "{name} has {} parameters, its spec needs {expected}",
            rec.params.len()
        )));
    }
    let mut values = rec.params.iter();
    for t in params.tensors_mut() {
        for slot in t.data_mut() {
            *slot = hexfloat::parse(values.next().expect("length checked"))?;
        }
    }
    Mlp::new(rec.spec, params)
}

pub fn model_to_string(model: &EntropicGanModel) -> Result<String> {
    let rec = ModelRecord {
        format_version: MODEL_FORMAT_VERSION,
        lambda: hexfloat::format(model.lambda),
        loss: model.loss,
        data_dim: model.data_dim,
        latent_dim: model.latent_dim,
        train_size: model.train_size,
        seed: model.seed.to_string(),
        iterations: model.iterations,
        generator: net_record(&model.generator),
        d1: net_record(&model.d1),
        d2: net_record(&model.d2),
    };
    toml::to_string(&rec).map_err(|e| Error::Format(e.to_string()))
}

pub fn model_from_str(text: &str) -> Result<EntropicGanModel> {
    let value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Format(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_integer())
        .ok_or_else(|| Error::Format("missing format_version".into()))?;
    if version != MODEL_FORMAT_VERSION as i64 {
        return Err(Error::UnsupportedVersion(version.clamp(0, u32::MAX as i64) as u32));
    }
    let rec: ModelRecord = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let seed = rec
        .seed
        .parse()
        .map_err(|_| Error::Format(format!("invalid seed `{}`", rec.seed)))?;
    let mut model = EntropicGanModel::new(
        net_from_record("generator", rec.generator)?,
        net_from_record("d1", rec.d1)?,
        net_from_record("d2", rec.d2)?,
        hexfloat::parse(&rec.lambda)?,
        rec.loss,
        rec.train_size,
        seed,
    )?;
    if model.data_dim != rec.data_dim || model.latent_dim != rec.latent_dim {
        return Err(Error::Format("declared dimensions disagree with the network specs".into()));
    }
    model.iterations = rec.iterations;
    Ok(model)
}

pub fn save_model(model: &EntropicGanModel, path: &Path) -> Result<()> {
    super::io::write_atomic(path, model_to_string(model)?.as_bytes())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<EntropicGanModel> {
    model_from_str(&std::fs::read_to_string(path)?)
}
