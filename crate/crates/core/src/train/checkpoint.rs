//! Versioned binary checkpoints.
//!
//! Layout: the magic `VSLCKPT\0`, a little-endian `u32` format version, a
//! `u64` manifest length, the JSON manifest, then every array as raw
//! little-endian `f64`s in manifest order. Nothing time-dependent is
//! written, so equal states give equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::data::Vocabularies;
use crate::error::{Error, Result};
use crate::model::{VslModel, VslNetwork};
use crate::tensor::Tensor;
use crate::train::optimizer::{Optimizer, OptimizerKind, OptimizerSettings};
use crate::train::trainer::RngState;
use crate::variational::{GaussianParams, LatentVar, PriorStore};

pub const MAGIC: &[u8; 8] = b"VSLCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: VslModel,
    pub vocabs: Vocabularies,
    pub optimizer: Optimizer,
    pub priors: PriorStore,
    pub rng: RngState,
    /// Free-form run description (configs, alpha, epoch).
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainable: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PriorEntry {
    instance: usize,
    var: LatentVar,
    positions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PriorManifest {
    dims: BTreeMap<LatentVar, usize>,
    refresh_period: usize,
    snapshot_epoch: Option<usize>,
    entries: Vec<PriorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerManifest {
    settings: OptimizerSettings,
    step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    network: VslNetwork,
    vocabs: Vocabularies,
    optimizer: OptimizerManifest,
    priors: PriorManifest,
    rng: RngState,
    meta: serde_json::Value,
    arrays: Vec<ArrayEntry>,
}

fn entry(name: String, shape: Vec<usize>, trainable: Option<bool>) -> ArrayEntry {
    ArrayEntry { name, shape, trainable }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::new();
        let mut payload: Vec<&[f64]> = Vec::new();
        for (_, p) in self.model.params.iter() {
            arrays.push(entry(p.name.clone(), p.value.shape().to_vec(), Some(p.trainable)));
            payload.push(p.value.data());
        }
        if self.optimizer.settings.kind == OptimizerKind::Adam {
            for (i, (_, p)) in self.model.params.iter().enumerate() {
                let shape = p.value.shape().to_vec();
                arrays.push(entry(format!("adam.m/{}", p.name), shape.clone(), None));
                payload.push(&self.optimizer.m[i]);
                arrays.push(entry(format!("adam.v/{}", p.name), shape, None));
                payload.push(&self.optimizer.v[i]);
            }
        }
        let mut prior_entries = Vec::new();
        let mut prior_data: Vec<Vec<f64>> = Vec::new();
        for (instance, var, snaps) in self.priors.entries() {
            let dim = snaps.first().map_or(0, GaussianParams::dim);
            prior_entries.push(PriorEntry {
                instance,
                var,
                positions: snaps.len(),
            });
            let shape = vec![snaps.len(), dim];
            arrays.push(entry(format!("prior/{instance}/{var}/mean"), shape.clone(), None));
            prior_data.push(snaps.iter().flat_map(|g| g.mean.iter().copied()).collect());
            arrays.push(entry(format!("prior/{instance}/{var}/std"), shape, None));
            prior_data.push(snaps.iter().flat_map(|g| g.std.iter().copied()).collect());
        }
        payload.extend(prior_data.iter().map(Vec::as_slice));

        let manifest = Manifest {
            network: self.model.net.clone(),
            vocabs: self.vocabs.clone(),
            optimizer: OptimizerManifest {
                settings: self.optimizer.settings.clone(),
                step: self.optimizer.step,
            },
            priors: PriorManifest {
                dims: self.priors.variables().collect(),
                refresh_period: self.priors.refresh_period(),
                snapshot_epoch: self.priors.snapshot_epoch(),
                entries: prior_entries,
            },
            rng: self.rng,
            meta: self.meta.clone(),
            arrays,
        };
        let json = serde_json::to_vec(&manifest)?;
        let total: usize = payload.iter().map(|a| a.len()).sum();
        let mut out = Vec::with_capacity(8 + 4 + 8 + json.len() + 8 * total);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in payload {
            for x in a {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(20..20 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(json)?;
        let mut cursor = &bytes[20 + len..];
        let mut arrays = manifest.arrays.iter();
        let mut next = |expect: &str| -> Result<(ArrayEntry, Vec<f64>)> {
            let e = arrays
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("missing array {expect}")))?
                .clone();
            if !e.name.starts_with(expect) {
                return Err(Error::Checkpoint(format!("expected array {expect}, found {}", e.name)));
            }
            let n: usize = e.shape.iter().product();
            if cursor.len() < 8 * n {
                return Err(Error::Checkpoint(format!("array {} is truncated", e.name)));
            }
            let data = cursor[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            cursor = &cursor[8 * n..];
            Ok((e, data))
        };

        let n_params = manifest.arrays.iter().filter(|a| a.trainable.is_some()).count();
        let mut params = ParamSet::new();
        for _ in 0..n_params {
            let (e, data) = next("")?;
            params.add(e.name, Tensor::new(e.shape, data)?, e.trainable.unwrap_or(true));
        }
        let settings = manifest.optimizer.settings;
        let (mut m, mut v) = (Vec::new(), Vec::new());
        if settings.kind == OptimizerKind::Adam {
            for _ in 0..n_params {
                m.push(next("adam.m/")?.1);
                v.push(next("adam.v/")?.1);
            }
        }
        let optimizer = Optimizer {
            settings,
            step: manifest.optimizer.step,
            m,
            v,
        };
        let pm = manifest.priors;
        let vars: Vec<(LatentVar, usize)> = pm.dims.into_iter().collect();
        let mut priors = PriorStore::new(&vars, pm.refresh_period)?;
        for pe in &pm.entries {
            let prefix = format!("prior/{}/{}/", pe.instance, pe.var);
            let (me, mean) = next(&prefix)?;
            let (_, std) = next(&prefix)?;
            let dim = me.shape.get(1).copied().unwrap_or(0);
            let snaps = (0..pe.positions)
                .map(|t| {
                    GaussianParams::new(mean[t * dim..(t + 1) * dim].to_vec(), std[t * dim..(t + 1) * dim].to_vec())
                })
                .collect::<Result<Vec<_>>>()?;
            priors.set(pe.instance, pe.var, snaps)?;
        }
        if let Some(e) = pm.snapshot_epoch {
            priors.mark_refreshed(e);
        }
        if !cursor.is_empty() {
            return Err(bad("trailing bytes after the last array"));
        }
        Ok(Checkpoint {
            model: VslModel {
                net: manifest.network,
                params,
            },
            vocabs: manifest.vocabs,
            optimizer,
            priors,
            rng: manifest.rng,
            meta: manifest.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
