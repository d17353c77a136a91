//! Checkpoint files: a text block of `key = value` metadata (model
//! configuration, seeds, epoch) followed by a tensor container holding
//! parameters, batch-norm moments and optimizer velocities.
//!
//! ```text
//! magic     8 bytes  "MACNETCK"
//! meta_len  u32 LE
//! metadata  meta_len bytes of UTF-8
//! container (see tensor::container)
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::sgd::Sgd;
use crate::arch::{MacNet, MacNetConfig};
use crate::error::{Error, Result};
use crate::tensor::container::{read_container, write_container, ContainerEntry};
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 8] = b"MACNETCK";
const CONFIG_PREFIX: &str = "config.";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: MacNetConfig,
    pub model_seed: u64,
    /// Last completed epoch, if written during training.
    pub epoch: Option<usize>,
    /// Metadata keys other than the configuration, seed and epoch.
    pub extra: Vec<(String, String)>,
    pub entries: Vec<ContainerEntry>,
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &MacNet<T>, optimizer: Option<&Sgd<T>>, epoch: Option<usize>) -> Self {
        let mut entries = model.to_entries();
        if let Some(opt) = optimizer {
            for (p, v) in model.store().params().iter().zip(opt.velocities()) {
                entries.push(ContainerEntry::from_tensor(format!("velocity/{}", p.name), v));
            }
        }
        Checkpoint {
            config: model.config().clone(),
            model_seed: model.seed(),
            epoch,
            extra: Vec::new(),
            entries,
        }
    }

    pub fn with_extra(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.extra.push((key.into(), value.to_string()));
        self
    }

    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extra.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Rebuilds the model and checks every stored extent against the
    /// configuration.
    pub fn build_model<T: Real>(&self) -> Result<MacNet<T>> {
        let mut model = MacNet::init(self.config.clone(), self.model_seed)?;
        model.load_entries(&self.entries)?;
        Ok(model)
    }

    pub fn has_optimizer(&self) -> bool {
        self.entries.iter().any(|e| e.name.starts_with("velocity/"))
    }

    /// Restores `optimizer`'s velocities for the parameters of `model`.
    pub fn restore_optimizer<T: Real>(&self, model: &MacNet<T>, optimizer: &mut Sgd<T>) -> Result<()> {
        let velocities = model
            .store()
            .params()
            .iter()
            .map(|p| {
                let key = format!("velocity/{}", p.name);
                self.entries
                    .iter()
                    .find(|e| e.name == key)
                    .map(|e| e.tensor.cast())
                    .ok_or_else(|| Error::Checkpoint(format!("missing entry `{key}`")))
            })
            .collect::<Result<Vec<Tensor<T>>>>()?;
        optimizer.set_velocities(model.store(), velocities)
    }

    fn metadata(&self) -> String {
        let mut text = String::new();
        let mut line = |k: &str, v: &str| text.push_str(&format!("{k} = {v}\n"));
        line("model_seed", &self.model_seed.to_string());
        if let Some(e) = self.epoch {
            line("epoch", &e.to_string());
        }
        for (k, v) in self.config.to_key_values() {
            line(&format!("{CONFIG_PREFIX}{k}"), &v);
        }
        for (k, v) in &self.extra {
            line(k, v);
        }
        text
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        // write to a sibling file first so an interrupted save never leaves a torn checkpoint
        let tmp = path.with_extension("partial");
        {
            let mut out = BufWriter::new(std::fs::File::create(&tmp)?);
            let meta = self.metadata();
            out.write_all(MAGIC)?;
            out.write_all(&(meta.len() as u32).to_le_bytes())?;
            out.write_all(meta.as_bytes())?;
            write_container(&mut out, &self.entries)?;
            out.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut input = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("file too short for a checkpoint".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let mut len = [0u8; 4];
        input
            .read_exact(&mut len)
            .map_err(|_| Error::Checkpoint("truncated metadata length".into()))?;
        let mut meta = vec![0u8; u32::from_le_bytes(len) as usize];
        input
            .read_exact(&mut meta)
            .map_err(|_| Error::Checkpoint("truncated metadata".into()))?;
        let meta = String::from_utf8(meta).map_err(|_| Error::Checkpoint("metadata is not UTF-8".into()))?;

        let mut config_pairs = Vec::new();
        let (mut model_seed, mut epoch, mut extra) = (None, None, Vec::new());
        for (i, raw) in meta.lines().enumerate() {
            let (k, v) = raw
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Checkpoint(format!("metadata line {} is not `key = value`", i + 1)))?;
            let bad = || Error::Checkpoint(format!("invalid metadata value for `{k}`"));
            match k {
                "model_seed" => model_seed = Some(v.parse().map_err(|_| bad())?),
                "epoch" => epoch = Some(v.parse().map_err(|_| bad())?),
                _ => match k.strip_prefix(CONFIG_PREFIX) {
                    Some(key) => config_pairs.push((key, v)),
                    None => extra.push((k.to_string(), v.to_string())),
                },
            }
        }
        let config = MacNetConfig::from_key_values(config_pairs.iter().copied())
            .map_err(|e| Error::Checkpoint(format!("stored configuration: {e}")))?;
        let model_seed = model_seed.ok_or_else(|| Error::Checkpoint("missing model_seed".into()))?;
        let entries = read_container(&mut input)?;
        Ok(Checkpoint {
            config,
            model_seed,
            epoch,
            extra,
            entries,
        })
    }
}
