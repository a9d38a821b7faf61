//! Run directories, manifests and corpus loading shared by the commands.

use std::path::{Path, PathBuf};

use prl_core::corpus::{generate_hmm_corpus, parse_conll, HmmSpec, LoadOptions, TaggedCorpus};
use serde::Serialize;
use serde_json::Value;

use crate::config::{config_hash, sha256_hex, DataConfig};
use crate::CliError;

pub const RUN_DIR_ENV: &str = "PRL_RUN_DIR";

#[derive(Clone, Debug, Serialize)]
pub struct CorpusRecord {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
    pub tokens: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    /// Fully resolved configuration, defaults included.
    pub config: Value,
    pub seeds: Vec<u64>,
    pub corpora: Vec<CorpusRecord>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: String,
}

impl Manifest {
    pub fn new(command: &str, config: Value, seeds: Vec<u64>, corpora: Vec<CorpusRecord>) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: config_hash(&config),
            config,
            seeds,
            corpora,
            started_at: now(),
            finished_at: None,
            status: "running".into(),
        }
    }

    pub fn finish(&mut self, status: &str) {
        self.finished_at = Some(now());
        self.status = status.into();
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join("manifest.json"), self)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// `$PRL_RUN_DIR/<name>` (or `runs/<name>`), created if missing.
pub fn run_dir(name: &str) -> Result<PathBuf, CliError> {
    let root = std::env::var_os(RUN_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    text.push('\n');
    write_file(path, text)
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read_file(path)?)
        .map_err(|_| CliError::data(format!("{}: not valid UTF-8", path.display())))
}

pub struct Data {
    pub train: TaggedCorpus,
    pub valid: TaggedCorpus,
    pub records: Vec<CorpusRecord>,
    /// Set when the corpus was sampled rather than read from disk.
    pub generated: bool,
}

/// Loads or samples the train/valid split described by `cfg`. The validation
/// split is mapped through the training vocabulary and tag set.
pub fn load_data(cfg: &DataConfig) -> Result<Data, CliError> {
    let opts = LoadOptions {
        max_vocab: cfg.max_vocab,
        min_count: cfg.min_count,
        ..Default::default()
    };
    match (&cfg.hmm_spec, &cfg.train_path, &cfg.valid_path) {
        (Some(spec_path), None, None) => {
            let bytes = read_file(spec_path)?;
            let text = String::from_utf8_lossy(&bytes);
            let spec = HmmSpec::from_json(&text)
                .map_err(|e| CliError::data(format!("{}: {e}", spec_path.display())))?;
            let (corpus, _) = generate_hmm_corpus(&spec)?;
            let n = corpus.num_tokens();
            if cfg.valid_tokens == 0 || cfg.valid_tokens >= n {
                return Err(CliError::usage(format!(
                    "valid_tokens must be in 1..{n} for this spec"
                )));
            }
            let (train, valid) = corpus.split_at_token(n - cfg.valid_tokens)?;
            let records = vec![CorpusRecord {
                role: "hmm_spec".into(),
                path: spec_path.clone(),
                sha256: sha256_hex(&bytes),
                tokens: n,
            }];
            Ok(Data {
                train,
                valid,
                records,
                generated: true,
            })
        }
        (None, Some(tp), Some(vp)) => {
            let (train, train_rec) = load_file(tp, "train", &opts)?;
            let fixed = LoadOptions {
                vocab: Some(train.vocab()),
                tags: Some(train.tags()),
                ..Default::default()
            };
            let (valid, valid_rec) = load_file(vp, "valid", &fixed)?;
            Ok(Data {
                train,
                valid,
                records: vec![train_rec, valid_rec],
                generated: false,
            })
        }
        _ => Err(CliError::usage(
            "data needs either hmm_spec or both train_path and valid_path",
        )),
    }
}

fn load_file(
    path: &Path,
    role: &str,
    opts: &LoadOptions<'_>,
) -> Result<(TaggedCorpus, CorpusRecord), CliError> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| CliError::data(format!("{}: not valid UTF-8", path.display())))?;
    let corpus = parse_conll(text)
        .and_then(|raw| TaggedCorpus::from_raw(&raw, opts))
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let record = CorpusRecord {
        role: role.into(),
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
        tokens: corpus.num_tokens(),
    };
    Ok((corpus, record))
}
