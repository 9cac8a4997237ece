use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HistoryRow, ModelSpec, TimeMap, TrainConfig};
use crate::ad::{ParamVector, Segment};
use crate::error::{Error, Result};
use crate::nets::{Mlp, MlpSpec};
use crate::solver::IdeSystem;

pub const CHECKPOINT_FILE: &str = "checkpoint.toml";
pub const CHECKPOINT_VERSION: u32 = 1;

/// SHA-256 over the serialized model and training configuration.
pub fn config_hash(model: &ModelSpec, config: &TrainConfig) -> Result<String> {
    #[derive(Serialize)]
    struct Hashed<'a> {
        model: &'a ModelSpec,
        config: &'a TrainConfig,
    }
    let text = toml::to_string(&Hashed { model, config }).map_err(|e| Error::Format(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn nets(model: &ModelSpec) -> Vec<(&'static str, MlpSpec)> {
    [("f", model.f_spec()), ("kernel", model.kernel_spec()), ("integrand", model.integrand_spec())]
        .into_iter()
        .filter_map(|(n, s)| s.map(|s| (n, s)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetEntry {
    name: String,
    file: String,
    spec: MlpSpec,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config_hash: String,
    epoch: usize,
    time_map: TimeMap,
    model: ModelSpec,
    config: TrainConfig,
    #[serde(default)]
    history: Vec<HistoryRow>,
    nets: Vec<NetEntry>,
}

/// Fitted parameters with everything needed to rebuild and audit them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub config: TrainConfig,
    pub time_map: TimeMap,
    pub system: IdeSystem,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<HistoryRow>,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(
        model: ModelSpec,
        config: TrainConfig,
        time_map: TimeMap,
        system: IdeSystem,
        epoch: usize,
        history: Vec<HistoryRow>,
    ) -> Result<Self> {
        if system.param_count() != model.param_count() {
            return Err(Error::invalid("system parameters do not match the model spec"));
        }
        let config_hash = config_hash(&model, &config)?;
        Ok(Checkpoint {
            model,
            config,
            time_map,
            system,
            epoch,
            history,
            config_hash,
        })
    }

    pub fn final_train_mse(&self) -> Option<f64> {
        self.history.last().map(|r| r.train_mse)
    }

    /// Write `checkpoint.toml` and one `<net>.bin` blob per network into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let values = self.system.params();
        let mut offset = 0;
        let mut entries = Vec::new();
        for (name, spec) in nets(&self.model) {
            let len = spec.param_count();
            let layout = Mlp::zeros(spec.clone())?;
            let blob = layout.params().with_values(values.values()[offset..offset + len].to_vec())?;
            offset += len;
            let file = format!("{name}.bin");
            fs::write(dir.join(&file), blob.to_le_bytes())?;
            entries.push(NetEntry {
                name: name.to_string(),
                file,
                spec,
                segments: blob.segments().to_vec(),
            });
        }
        let manifest = Manifest {
            format_version: CHECKPOINT_VERSION,
            config_hash: self.config_hash.clone(),
            epoch: self.epoch,
            time_map: self.time_map,
            model: self.model.clone(),
            config: self.config.clone(),
            history: self.history.clone(),
            nets: entries,
        };
        let path = dir.join(CHECKPOINT_FILE);
        fs::write(&path, toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?)?;
        Ok(path)
    }

    /// Load from a checkpoint directory or its manifest file.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest_path = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::data(&manifest_path, e.to_string()))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::data(&manifest_path, e.to_string()))?;
        if m.format_version != CHECKPOINT_VERSION {
            return Err(Error::data(
                &manifest_path,
                format!("unsupported checkpoint version {}", m.format_version),
            ));
        }
        let hash = config_hash(&m.model, &m.config)?;
        if hash != m.config_hash {
            return Err(Error::data(
                &manifest_path,
                "config hash does not match the recorded model and training configuration",
            ));
        }
        let mut system = m.model.build(0)?;
        let mut values = Vec::with_capacity(system.param_count());
        let expected = nets(&m.model);
        if expected.len() != m.nets.len() {
            return Err(Error::data(&manifest_path, "network list does not match the model"));
        }
        for ((name, spec), entry) in expected.into_iter().zip(&m.nets) {
            if entry.name != name || entry.spec != spec {
                return Err(Error::data(&manifest_path, format!("network `{}` does not match the model", entry.name)));
            }
            let blob_path = dir.join(&entry.file);
            let bytes = fs::read(&blob_path).map_err(|e| Error::data(&blob_path, e.to_string()))?;
            let v = ParamVector::values_from_le_bytes(&bytes).map_err(|e| Error::data(&blob_path, e.to_string()))?;
            let p = ParamVector::new(entry.segments.clone(), v).map_err(|e| Error::data(&blob_path, e.to_string()))?;
            if !p.same_layout(Mlp::zeros(spec)?.params()) {
                return Err(Error::data(&blob_path, "segment layout does not match the network spec"));
            }
            values.extend_from_slice(p.values());
        }
        system.set_params(&values)?;
        Ok(Checkpoint {
            model: m.model,
            config: m.config,
            time_map: m.time_map,
            system,
            epoch: m.epoch,
            history: m.history,
            config_hash: m.config_hash,
        })
    }

    /// Error unless this checkpoint was produced under `model` and `config`.
    pub fn check_compatible(&self, model: &ModelSpec, config: &TrainConfig) -> Result<()> {
        if config_hash(model, config)? != self.config_hash {
            return Err(Error::invalid("checkpoint was trained under a different configuration"));
        }
        Ok(())
    }
}
