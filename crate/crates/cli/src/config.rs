//! Experiment files: TOML with `[data]`, `[model]`, `[train]`, `[sweep]` and
//! `[run]` sections, plus `key=value` overrides from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vsl_core::train::TrainConfig;
use vsl_core::ModelConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Labeled training file in column format.
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    /// Extra unlabeled sentences; only `word_column` is read.
    pub unlabeled: Option<PathBuf>,
    pub word_column: usize,
    pub label_column: usize,
    /// Replace digits with 0 and convert labels to BIOES.
    pub ner: bool,
    pub labeled_fraction: f64,
    pub unlabeled_fraction: f64,
    pub split_seed: u64,
    /// Deterministic subsample of the unlabeled pool.
    pub unlabeled_cap: Option<usize>,
    pub lowercase: bool,
    pub min_freq: usize,
    /// Text embeddings whose dimension must equal `model.word_dim`.
    pub embeddings: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: None,
            dev: None,
            unlabeled: None,
            word_column: 0,
            label_column: 1,
            ner: false,
            labeled_fraction: 1.0,
            unlabeled_fraction: 0.0,
            split_seed: 0,
            unlabeled_cap: None,
            lowercase: false,
            min_freq: 1,
            embeddings: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Unlabeled pool sizes, one run each.
    pub sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    /// Reads `path`, applies `overrides` and validates the result. Relative
    /// paths are taken relative to the directory holding the file.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = std::path::absolute(path.parent().unwrap_or(Path::new("")))
            .map_err(|e| CliError::usage(format!("cannot resolve {}: {e}", path.display())))?;
        Self::parse(&text, &base, overrides)
    }

    pub fn parse(text: &str, base: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = toml::from_str(text)
            .map_err(|e| CliError::usage(format!("config is not valid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| {
            CliError::usage(format!("invalid config: {}", e.message()))
        })?;
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train);
        fix(&mut self.data.dev);
        fix(&mut self.data.unlabeled);
        fix(&mut self.data.embeddings);
        if self.run.output_dir.is_relative() {
            self.run.output_dir = base.join(&self.run.output_dir);
        }
    }

    /// Field-level checks that need no corpus.
    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        let train = d
            .train
            .as_ref()
            .ok_or_else(|| CliError::usage("data.train: a training file is required"))?;
        for (field, path) in [
            ("data.train", Some(train)),
            ("data.dev", d.dev.as_ref()),
            ("data.unlabeled", d.unlabeled.as_ref()),
            ("data.embeddings", d.embeddings.as_ref()),
        ] {
            if let Some(p) = path.filter(|p| !p.is_file()) {
                return Err(CliError::usage(format!(
                    "{field}: file not found: {}",
                    p.display()
                )));
            }
        }
        if d.word_column == d.label_column {
            return Err(CliError::usage(
                "data.label_column must differ from data.word_column",
            ));
        }
        for (field, f) in [
            ("data.labeled_fraction", d.labeled_fraction),
            ("data.unlabeled_fraction", d.unlabeled_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(CliError::usage(format!(
                    "{field} must lie in [0, 1], got {f}"
                )));
            }
        }
        if d.labeled_fraction + d.unlabeled_fraction > 1.0 + 1e-12 {
            return Err(CliError::usage(
                "data.labeled_fraction + data.unlabeled_fraction must not exceed 1",
            ));
        }
        if d.labeled_fraction == 0.0 {
            return Err(CliError::usage("data.labeled_fraction must be positive"));
        }
        if d.min_freq == 0 {
            return Err(CliError::usage("data.min_freq must be at least 1"));
        }
        self.model
            .validate()
            .map_err(|e| CliError::usage(format!("model: {}", core_message(&e))))?;
        self.train
            .validate()
            .map_err(|e| CliError::usage(core_message(&e)))?;
        Ok(())
    }

    /// Short digest of everything except the seed and output location, so
    /// runs of one experiment with different seeds share a prefix.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.train.seed = 0;
        c.run = RunConfig::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..12].to_string()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn core_message(e: &vsl_core::Error) -> String {
    match e {
        vsl_core::Error::InvalidArgument(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Section names and their keys, taken from the defaults.
fn schema() -> Vec<(String, Vec<String>)> {
    let value = serde_json::to_value(ExperimentConfig::default()).expect("defaults serialize");
    let mut sections = Vec::new();
    for (section, fields) in value.as_object().expect("struct") {
        let mut keys: Vec<String> = fields
            .as_object()
            .expect("struct")
            .keys()
            .cloned()
            .collect();
        // optional fields left unset vanish from the serialized form
        keys.extend(optional_keys(section).iter().map(|k| k.to_string()));
        keys.sort();
        keys.dedup();
        sections.push((section.clone(), keys));
    }
    sections
}

fn optional_keys(section: &str) -> &'static [&'static str] {
    match section {
        "data" => &["train", "dev", "unlabeled", "unlabeled_cap", "embeddings"],
        "model" => &["freeze_word_embeddings"],
        "train" => &["alpha", "alpha_pretrain", "target_metric"],
        _ => &[],
    }
}

/// Applies `section.key=value`. A bare key is accepted when exactly one
/// section has it. Values are read as TOML and fall back to plain strings.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        CliError::usage(format!("override `{assignment}` is not of the form key=value"))
    })?;
    let key = key.trim();
    let schema = schema();
    let (section, field) = match key.split_once('.') {
        Some((s, f)) => {
            let known = schema
                .iter()
                .any(|(name, keys)| name == s && keys.iter().any(|k| k == f));
            if !known {
                return Err(CliError::usage(format!("unknown config key `{key}`")));
            }
            (s.to_string(), f.to_string())
        }
        None => {
            let owners: Vec<&String> = schema
                .iter()
                .filter(|(_, keys)| keys.iter().any(|k| k == key))
                .map(|(name, _)| name)
                .collect();
            match owners.as_slice() {
                [one] => ((*one).clone(), key.to_string()),
                [] => return Err(CliError::usage(format!("unknown config key `{key}`"))),
                many => {
                    let names: Vec<String> = many.iter().map(|s| format!("{s}.{key}")).collect();
                    return Err(CliError::usage(format!(
                        "key `{key}` is ambiguous: {}",
                        names.join(", ")
                    )));
                }
            }
        }
    };
    let value = parse_value(raw.trim());
    let entry = table
        .entry(section.clone())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let sub = entry
        .as_table_mut()
        .ok_or_else(|| CliError::usage(format!("config entry `{section}` must be a section")))?;
    sub.insert(field, value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> toml::Table {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn overrides_resolve_bare_and_dotted_keys() {
        let mut t = table("[train]\nseed = 3\n");
        apply_override(&mut t, "seed=1").unwrap();
        apply_override(&mut t, "model.variant=vsl-g").unwrap();
        apply_override(&mut t, "sweep.sizes=[0, 10]").unwrap();
        apply_override(&mut t, "alpha=0.5").unwrap();
        assert_eq!(t["train"]["seed"].as_integer(), Some(1));
        assert_eq!(t["model"]["variant"].as_str(), Some("vsl-g"));
        assert_eq!(t["sweep"]["sizes"].as_array().unwrap().len(), 2);
        assert_eq!(t["train"]["alpha"].as_float(), Some(0.5));
    }

    #[test]
    fn unknown_and_ambiguous_keys_are_rejected() {
        let mut t = toml::Table::new();
        let e = apply_override(&mut t, "train.sede=1").unwrap_err();
        assert!(e.to_string().contains("train.sede"), "{e}");
        assert!(apply_override(&mut t, "nonsense=1").is_err());
        assert!(apply_override(&mut t, "noequals").is_err());
    }

    #[test]
    fn unknown_fields_in_file_are_rejected() {
        let e = ExperimentConfig::parse("[model]\nz_dimm = 3\n", Path::new("."), &[]).unwrap_err();
        assert!(e.to_string().contains("z_dimm"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn missing_training_file_names_the_field() {
        let e = ExperimentConfig::parse("[data]\ntrain = \"/no/such/file\"\n", Path::new("."), &[])
            .unwrap_err();
        assert!(e.to_string().contains("data.train"), "{e}");
        let e = ExperimentConfig::parse("", Path::new("."), &[]).unwrap_err();
        assert!(e.to_string().contains("data.train"), "{e}");
    }

    #[test]
    fn hash_ignores_seed_and_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.train.seed = 9;
        b.run.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.train.epochs += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn serialized_config_reads_back() {
        let mut c = ExperimentConfig::default();
        c.train.alpha = Some(0.1);
        c.sweep.sizes = vec![0, 5];
        let back: ExperimentConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
