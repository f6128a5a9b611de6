//! Versioned training checkpoints.
//!
//! A checkpoint is an [`Archive`](crate::archive::Archive) holding every
//! model tensor under `param/<name>`, Adam moments under `adam.m/<name>` and
//! `adam.v/<name>`, and metadata with the format version, the full training
//! configuration, the epoch counter, the optimizer step and the RNG state.

use std::collections::BTreeMap;
use std::path::Path;

use lrnet_tensor::{Adam, Moments, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{read_archive, write_archive, Archive};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::LrNet;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Generator position, enough to resume the exact random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to rebuild a trainer or a model.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub params: BTreeMap<String, Tensor>,
    pub adam_step: u64,
    pub adam_moments: BTreeMap<String, Moments>,
    pub rng: RngState,
    pub best_val_f1: Option<f64>,
}

impl Checkpoint {
    pub fn capture(config: &TrainConfig, epoch: usize, model: &LrNet, adam: &Adam, rng: &ChaCha8Rng, best_val_f1: Option<f64>) -> Self {
        let params = model
            .params
            .iter()
            .map(|(_, e)| (e.name.clone(), e.value.clone()))
            .collect();
        let adam_moments = model
            .params
            .iter()
            .filter_map(|(id, e)| adam.moments(id).map(|m| (e.name.clone(), m.clone())))
            .collect();
        Self {
            config: config.clone(),
            epoch,
            params,
            adam_step: adam.step_count(),
            adam_moments,
            rng: RngState::capture(rng),
            best_val_f1,
        }
    }

    fn to_archive(&self) -> Result<Archive> {
        let mut a = Archive::default();
        for (name, t) in &self.params {
            a.tensors.insert(format!("param/{name}"), t.clone());
        }
        for (name, m) in &self.adam_moments {
            a.tensors.insert(format!("adam.m/{name}"), m.m.clone());
            a.tensors.insert(format!("adam.v/{name}"), m.v.clone());
        }
        let meta = &mut a.metadata;
        meta.insert("version".into(), CHECKPOINT_VERSION.to_string());
        meta.insert("config".into(), serde_json::to_string(&self.config)?);
        meta.insert("epoch".into(), self.epoch.to_string());
        meta.insert("adam_step".into(), self.adam_step.to_string());
        meta.insert("rng".into(), serde_json::to_string(&self.rng)?);
        meta.insert("best_val_f1".into(), serde_json::to_string(&self.best_val_f1)?);
        Ok(a)
    }

    fn from_archive(mut a: Archive) -> Result<Self> {
        let field = |k: &str| {
            a.metadata
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Archive(format!("checkpoint lacks {k}")))
        };
        let version: u32 = field("version")?
            .parse()
            .map_err(|_| Error::Archive("unreadable version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let num = |k: &str| -> Result<u64> {
            field(k)?
                .parse()
                .map_err(|_| Error::Archive(format!("unreadable {k}")))
        };
        let config: TrainConfig = serde_json::from_str(&field("config")?)?;
        let epoch = num("epoch")? as usize;
        let adam_step = num("adam_step")?;
        let rng: RngState = serde_json::from_str(&field("rng")?)?;
        let best_val_f1 = serde_json::from_str(&field("best_val_f1")?)?;
        let mut params = BTreeMap::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (key, t) in std::mem::take(&mut a.tensors) {
            if let Some(n) = key.strip_prefix("param/") {
                params.insert(n.to_owned(), t);
            } else if let Some(n) = key.strip_prefix("adam.m/") {
                m.insert(n.to_owned(), t);
            } else if let Some(n) = key.strip_prefix("adam.v/") {
                v.insert(n.to_owned(), t);
            } else {
                return Err(Error::Archive(format!("unexpected checkpoint entry {key}")));
            }
        }
        let adam_moments = m
            .into_iter()
            .map(|(name, m)| {
                let v = v
                    .remove(&name)
                    .ok_or_else(|| Error::Archive(format!("{name}: first moment without second")))?;
                Ok((name, Moments { m, v }))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            epoch,
            params,
            adam_step,
            adam_moments,
            rng,
            best_val_f1,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_archive(path, &self.to_archive()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(read_archive(path)?)
    }

    /// Rebuilds the model described by the stored configuration and fills
    /// in the stored tensors. Every model tensor must be present.
    pub fn restore_model(&self) -> Result<LrNet> {
        use rand::SeedableRng;
        let mut model = LrNet::new(&self.config.model, &mut ChaCha8Rng::seed_from_u64(0))?;
        let ids: Vec<_> = model.params.iter().map(|(id, e)| (id, e.name.clone())).collect();
        for (id, name) in ids {
            let t = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Archive(format!("checkpoint lacks parameter {name}")))?;
            if t.dims() != model.params.get(id).dims() {
                return Err(Error::Archive(format!(
                    "{name}: stored {:?}, model {:?}",
                    t.dims(),
                    model.params.get(id).dims()
                )));
            }
            *model.params.get_mut(id) = t.clone();
        }
        Ok(model)
    }

    /// Optimizer state matching `model`'s parameter ids.
    pub fn restore_adam(&self, model: &LrNet) -> Result<Adam> {
        let mut adam = Adam::new(self.config.lr);
        let mut moments = Vec::with_capacity(self.adam_moments.len());
        for (name, m) in &self.adam_moments {
            let id = model
                .params
                .id(name)
                .ok_or_else(|| Error::Archive(format!("optimizer state for unknown {name}")))?;
            moments.push((id, m.clone()));
        }
        adam.restore(self.adam_step, moments);
        Ok(adam)
    }
}
