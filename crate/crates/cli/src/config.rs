//! JSON run configurations and flat `--key value` overrides.

use std::path::{Path, PathBuf};

use prl_core::eval::{EvalConfig, Variant};
use prl_core::model::{HeadKind, ModelConfig};
use prl_core::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Where training and validation text comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Tagged training corpus (two tab-separated columns per line).
    pub train_path: Option<PathBuf>,
    pub valid_path: Option<PathBuf>,
    /// HMM spec to sample instead of reading files; the last
    /// `valid_tokens` tokens become the validation split.
    pub hmm_spec: Option<PathBuf>,
    pub valid_tokens: usize,
    pub max_vocab: Option<usize>,
    pub min_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_path: None,
            valid_path: None,
            hmm_spec: None,
            valid_tokens: 2000,
            max_vocab: None,
            min_count: 1,
        }
    }
}

/// Model dimensions without the corpus-derived sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub embed_dim: usize,
    pub lm_hidden: usize,
    pub lm_layers: usize,
    pub aux_hidden: usize,
    pub aux_layers: usize,
    pub head: HeadKind,
    pub use_trace: bool,
    pub trace_gamma: f64,
    pub oracle: bool,
    pub tie_weights: bool,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims::from(&ModelConfig::new(0, 0, HeadKind::Q))
    }
}

impl From<&ModelConfig> for ModelDims {
    fn from(c: &ModelConfig) -> Self {
        ModelDims {
            embed_dim: c.embed_dim,
            lm_hidden: c.lm_hidden,
            lm_layers: c.lm_layers,
            aux_hidden: c.aux_hidden,
            aux_layers: c.aux_layers,
            head: c.head,
            use_trace: c.use_trace,
            trace_gamma: c.trace_gamma,
            oracle: c.oracle,
            tie_weights: c.tie_weights,
        }
    }
}

impl ModelDims {
    pub fn with_sizes(&self, vocab_size: usize, num_tags: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            num_tags,
            embed_dim: self.embed_dim,
            lm_hidden: self.lm_hidden,
            lm_layers: self.lm_layers,
            aux_hidden: self.aux_hidden,
            aux_layers: self.aux_layers,
            head: self.head,
            use_trace: self.use_trace && self.head.has_aux(),
            trace_gamma: self.trace_gamma,
            oracle: self.oracle,
            tie_weights: self.tie_weights,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelDims,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    Comparison,
    SizeSweep,
    TraceAblation,
    OracleCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub data: DataConfig,
    pub model: ModelDims,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Defaults per kind when empty.
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    /// Training-token prefixes for `size-sweep`.
    pub sizes: Vec<usize>,
    /// Auxiliary hidden sizes for `oracle-curve`.
    pub aux_sizes: Vec<usize>,
    /// Also train matched non-oracle models in `oracle-curve`.
    pub with_baseline_tagger: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Comparison,
            data: DataConfig::default(),
            model: ModelDims::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            variants: Vec::new(),
            seeds: vec![1, 2, 3],
            jobs: 1,
            sizes: Vec::new(),
            aux_sizes: Vec::new(),
            with_baseline_tagger: true,
        }
    }
}

impl ExperimentConfig {
    pub fn resolved_variants(&self) -> Vec<Variant> {
        if !self.variants.is_empty() {
            return self.variants.clone();
        }
        match self.kind {
            ExperimentKind::Comparison | ExperimentKind::SizeSweep => {
                vec![Variant::Baseline, Variant::PrlP, Variant::PrlQ]
            }
            ExperimentKind::TraceAblation => vec![Variant::PrlQ, Variant::PrlQNoTrace],
            ExperimentKind::OracleCurve => vec![Variant::Oracle],
        }
    }
}

/// Short names accepted on the command line for nested keys.
const ALIASES: &[(&str, &str)] = &[
    ("gamma_trace", "model.trace_gamma"),
    ("trace", "model.use_trace"),
    ("trace_mode", "train.eval_trace"),
    ("valid_tokens", "data.valid_tokens"),
    ("train_data", "data.train_path"),
    ("valid_data", "data.valid_path"),
];

const SECTIONS: &[&str] = &["data", "model", "train", "eval"];

/// Turns `--key value`, `--key=value` and bare `--flag` arguments into
/// (key, value) pairs. `--no-x` sets `x` to false.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, Value)>, CliError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let key = arg
            .strip_prefix("--")
            .filter(|k| !k.is_empty())
            .ok_or_else(|| CliError::usage(format!("unexpected argument {arg:?}")))?;
        let (key, raw) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => {
                let next = args.get(i + 1).filter(|a| !a.starts_with("--"));
                if next.is_some() {
                    i += 1;
                }
                (key.to_string(), next.cloned())
            }
        };
        let key = key.replace('-', "_");
        match raw {
            Some(v) => out.push((key, parse_scalar(&v))),
            None => match key.strip_prefix("no_") {
                Some(k) => out.push((k.to_string(), Value::Bool(false))),
                None => out.push((key, Value::Bool(true))),
            },
        }
        i += 1;
    }
    Ok(out)
}

fn parse_scalar(v: &str) -> Value {
    serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()))
}

/// Places `value` at the unique location named by `key` in `config`.
pub fn apply_override(config: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let key = ALIASES
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, path)| *path)
        .unwrap_or(key);
    let root = config
        .as_object_mut()
        .ok_or_else(|| CliError::usage("configuration must be a JSON object"))?;
    if let Some((section, field)) = key.split_once('.') {
        let obj = root
            .get_mut(section)
            .and_then(Value::as_object_mut)
            .ok_or_else(|| CliError::usage(format!("unknown section {section:?}")))?;
        if !obj.contains_key(field) {
            return Err(CliError::usage(format!("unknown option --{key}")));
        }
        obj.insert(field.to_string(), value);
        return Ok(());
    }
    if root.contains_key(key) && !SECTIONS.contains(&key) {
        root.insert(key.to_string(), value);
        return Ok(());
    }
    let hits: Vec<&str> = SECTIONS
        .iter()
        .copied()
        .filter(|s| {
            root.get(*s)
                .and_then(Value::as_object)
                .is_some_and(|o| o.contains_key(key))
        })
        .collect();
    match hits.as_slice() {
        [section] => {
            root.get_mut(*section)
                .and_then(Value::as_object_mut)
                .expect("section checked above")
                .insert(key.to_string(), value);
            Ok(())
        }
        [] => Err(CliError::usage(format!(
            "unknown option --{}",
            key.replace('_', "-")
        ))),
        many => Err(CliError::usage(format!(
            "option --{key} is ambiguous; use one of {}",
            many.iter()
                .map(|s| format!("--{s}.{key}"))
                .collect::<Vec<_>>()
                .join(", ")
        ))),
    }
}

/// Reads `path` (if any), materializes defaults, applies overrides and
/// returns both the typed config and its canonical JSON.
pub fn resolve<T>(path: Option<&Path>, overrides: &[String]) -> Result<(T, Value), CliError>
where
    T: DeserializeOwned + Serialize + Default,
{
    let base: T = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?
        }
        None => T::default(),
    };
    let mut value = serde_json::to_value(&base).map_err(|e| CliError::usage(e.to_string()))?;
    for (k, v) in parse_overrides(overrides)? {
        apply_override(&mut value, &k, v)?;
    }
    let typed: T = serde_json::from_value(value.clone())
        .map_err(|e| CliError::usage(format!("invalid configuration: {e}")))?;
    let canonical = serde_json::to_value(&typed).map_err(|e| CliError::usage(e.to_string()))?;
    Ok((typed, canonical))
}

/// Hex SHA-256 of the canonical (key-sorted) JSON text.
pub fn config_hash(config: &Value) -> String {
    sha256_hex(canonical_string(config).as_bytes())
}

fn canonical_string(v: &Value) -> String {
    fn sort(v: &Value) -> Value {
        match v {
            Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                let mut out = Map::new();
                for k in keys {
                    out.insert(k.clone(), sort(&m[k]));
                }
                Value::Object(out)
            }
            Value::Array(a) => Value::Array(a.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    sort(v).to_string()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_reach_nested_sections() {
        let (cfg, _) = resolve::<RunConfig>(
            None,
            &strings(&[
                "--head",
                "p",
                "--gamma-q=0.5",
                "--gamma-trace",
                "0.8",
                "--no-trace",
                "--seed",
                "7",
            ]),
        )
        .unwrap();
        assert_eq!(cfg.model.head, HeadKind::P);
        assert_eq!(cfg.train.gamma_q, 0.5);
        assert_eq!(cfg.model.trace_gamma, 0.8);
        assert!(!cfg.model.use_trace);
        assert_eq!(cfg.train.seed, 7);
    }

    #[test]
    fn unknown_and_ambiguous_keys_are_usage_errors() {
        let err = resolve::<RunConfig>(None, &strings(&["--bogus", "1"])).unwrap_err();
        assert_eq!(err.code, 2);
        let mut v = serde_json::json!({"model": {"x": 1}, "train": {"x": 2}});
        assert!(apply_override(&mut v, "x", Value::from(3)).is_err());
        apply_override(&mut v, "train.x", Value::from(3)).unwrap();
        assert_eq!(v["train"]["x"], 3);
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"b": 1, "a": {"y": [1, 2], "x": null}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a": {"x": null, "y": [1, 2]}, "b": 1}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let c: Value = serde_json::from_str(r#"{"a": {"x": null, "y": [2, 1]}, "b": 1}"#).unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn experiment_defaults_depend_on_kind() {
        let cfg = ExperimentConfig {
            kind: ExperimentKind::TraceAblation,
            ..Default::default()
        };
        assert_eq!(
            cfg.resolved_variants(),
            vec![Variant::PrlQ, Variant::PrlQNoTrace]
        );
    }
}
