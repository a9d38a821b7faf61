use std::path::{Path, PathBuf};

use prl_core::corpus::{parse_conll, HmmSpec, LoadOptions, TaggedCorpus};
use prl_core::eval::{
    dataset_size_sweep, oracle_curve, perplexity, run_comparison, CellResult, CellStatus,
    EvalConfig, ExperimentMatrix, ExperimentSpec,
};
use prl_core::model::{Checkpoint, PrlModel, TraceMode};
use prl_core::trainer::{train as train_model, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{resolve, sha256_hex, ExperimentConfig, ExperimentKind, RunConfig};
use crate::run::{load_data, read_file, read_text, run_dir, write_file, write_json, Manifest};
use crate::CliError;

pub fn gen_corpus(spec_path: &Path, out: &Path, report: Option<PathBuf>) -> Result<(), CliError> {
    let text = read_text(spec_path)?;
    let spec = HmmSpec::from_json(&text)
        .map_err(|e| CliError::data(format!("{}: {e}", spec_path.display())))?;
    let (corpus, floors) = prl_core::corpus::generate_hmm_corpus(&spec)?;
    write_file(out, corpus.to_conll_string()?)?;
    let report_path = report.unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".floor.json");
        PathBuf::from(p)
    });
    write_json(&report_path, &floors)?;
    println!(
        "wrote {} tokens to {}; tag-oracle ppl {:.4}, filter ppl {:.4}",
        corpus.num_tokens(),
        out.display(),
        floors.tag_oracle_ppl,
        floors.filter_ppl
    );
    Ok(())
}

fn usage(e: prl_core::Error) -> CliError {
    CliError::usage(e.to_string())
}

pub fn train(config: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let (cfg, canonical): (RunConfig, _) = resolve(config, overrides)?;
    cfg.train
        .validate_with(cfg.model.trace_gamma)
        .map_err(usage)?;
    cfg.model.with_sizes(2, 2).validate().map_err(usage)?;
    let data = load_data(&cfg.data)?;
    let model_cfg = cfg
        .model
        .with_sizes(data.train.vocab().len(), data.train.tags().len());

    let seed = cfg.train.seed;
    let hash = crate::config::config_hash(&canonical);
    let dir = run_dir(&format!("train-{}-seed{seed}", &hash[..12]))?;
    let mut manifest = Manifest::new("train", canonical, vec![seed], data.records.clone());
    manifest.write(&dir)?;
    if data.generated {
        write_file(&dir.join("train.tsv"), data.train.to_conll_string()?)?;
        write_file(&dir.join("valid.tsv"), data.valid.to_conll_string()?)?;
    }

    let mut model = PrlModel::new(model_cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let result = match train_model(&mut model, &data.train, &data.valid, &cfg.train) {
        Ok(r) => r,
        Err(e) => {
            manifest.finish("failed");
            manifest.write(&dir)?;
            return Err(e.into());
        }
    };
    write_file(&dir.join("train_log.csv"), result.log.to_csv())?;
    write_json(&dir.join("train_log.json"), &result.log)?;
    let mut ck = Checkpoint::new(
        result.best.clone(),
        data.train.vocab().clone(),
        data.train.tags().clone(),
    )?;
    ck.hyper = json!({ "train": cfg.train, "seed": seed, "config_hash": hash });
    ck.save(dir.join("best.prl"))?;

    for r in &result.log.records {
        eprintln!(
            "epoch {:>3}  train ppl {:>10.3}  valid ppl {:>10.3}  lr {:.4}{}",
            r.epoch,
            r.train_ppl,
            r.valid_ppl,
            r.lr,
            r.tag_accuracy
                .map(|a| format!("  tag acc {a:.4}"))
                .unwrap_or_default()
        );
    }
    if let Some(d) = result.diverged {
        manifest.finish("diverged");
        manifest.write(&dir)?;
        return Err(prl_core::Error::from(d).into());
    }
    manifest.finish("completed");
    manifest.write(&dir)?;
    println!(
        "{}\tbest valid ppl {:.4} at epoch {}",
        dir.display(),
        result.log.best_valid_ppl().unwrap_or(f64::NAN),
        result.best_epoch.unwrap_or(0)
    );
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    pub trace_mode: Option<TraceMode>,
    pub batch_size: Option<usize>,
    pub bptt_len: Option<usize>,
    pub max_oov_rate: f64,
    pub out: Option<PathBuf>,
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let ck_bytes = read_file(&args.checkpoint)?;
    let ck = Checkpoint::from_bytes(&ck_bytes)
        .map_err(|e| CliError::data(format!("{}: {e}", args.checkpoint.display())))?;
    let hyper: Option<TrainConfig> = ck
        .hyper
        .get("train")
        .and_then(|v| serde_json::from_value(v.clone()).ok());
    let has_aux = ck.model.config().head.has_aux();
    if !has_aux && args.trace_mode == Some(TraceMode::SelfPredicted) {
        return Err(CliError::usage(
            "--trace-mode self needs a model with an auxiliary head",
        ));
    }
    let defaults = EvalConfig::default();
    let cfg = EvalConfig {
        batch_size: args
            .batch_size
            .or(hyper.as_ref().map(|h| h.eval_batch_size))
            .unwrap_or(defaults.batch_size),
        bptt_len: args
            .bptt_len
            .or(hyper.as_ref().map(|h| h.bptt_len))
            .unwrap_or(defaults.bptt_len),
        trace_mode: args
            .trace_mode
            .or(hyper.as_ref().map(|h| h.eval_trace))
            .unwrap_or(defaults.trace_mode),
    };

    let corpus_bytes = read_file(&args.corpus)?;
    let text = std::str::from_utf8(&corpus_bytes)
        .map_err(|_| CliError::data(format!("{}: not valid UTF-8", args.corpus.display())))?;
    let raw =
        parse_conll(text).map_err(|e| CliError::data(format!("{}: {e}", args.corpus.display())))?;
    let total = raw.iter().map(Vec::len).sum::<usize>().max(1);
    let oov = raw
        .iter()
        .flatten()
        .filter(|(w, _)| ck.vocab.get(w).is_none())
        .count();
    let rate = oov as f64 / total as f64;
    if rate > args.max_oov_rate {
        return Err(CliError::data(format!(
            "vocabulary mismatch: {:.1}% of tokens are not in the checkpoint vocabulary",
            100.0 * rate
        )));
    }
    let opts = LoadOptions {
        vocab: Some(&ck.vocab),
        tags: Some(&ck.tags),
        ..Default::default()
    };
    let corpus = TaggedCorpus::from_raw(&raw, &opts)
        .map_err(|e| CliError::data(format!("{}: {e}", args.corpus.display())))?;

    let mut report = perplexity(&ck.model, &corpus, &cfg)?;
    report.model_id = sha256_hex(&ck_bytes)[..16].to_string();
    report.corpus_id = sha256_hex(&corpus_bytes)[..16].to_string();
    report.split = args
        .corpus
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    report.seed = ck.hyper.get("seed").and_then(|v| v.as_u64());

    let out = args.out.unwrap_or_else(|| {
        let mut p = args.checkpoint.as_os_str().to_owned();
        p.push(".eval.json");
        PathBuf::from(p)
    });
    write_json(&out, &report)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| CliError::data(e.to_string()))?
    );
    Ok(())
}

pub fn experiment(config: &Path, overrides: &[String]) -> Result<(), CliError> {
    let (cfg, canonical): (ExperimentConfig, _) = resolve(Some(config), overrides)?;
    cfg.train
        .validate_with(cfg.model.trace_gamma)
        .map_err(usage)?;
    cfg.model.with_sizes(2, 2).validate().map_err(usage)?;
    if cfg.seeds.len() < 2 {
        return Err(CliError::usage("an experiment needs at least two seeds"));
    }
    match cfg.kind {
        ExperimentKind::SizeSweep if cfg.sizes.is_empty() => {
            return Err(CliError::usage("size-sweep needs a non-empty sizes list"))
        }
        ExperimentKind::OracleCurve if cfg.aux_sizes.len() < 3 => {
            return Err(CliError::usage(
                "oracle-curve needs at least three aux_sizes",
            ))
        }
        _ => {}
    }
    let data = load_data(&cfg.data)?;
    let spec = ExperimentSpec {
        model: cfg.model.with_sizes(0, 0),
        train: cfg.train.clone(),
        eval: cfg.eval,
        variants: cfg.resolved_variants(),
        seeds: cfg.seeds.clone(),
        jobs: cfg.jobs.max(1),
    };

    let hash = crate::config::config_hash(&canonical);
    let dir = run_dir(&format!("experiment-{}", &hash[..12]))?;
    let mut manifest = Manifest::new(
        "experiment",
        canonical,
        cfg.seeds.clone(),
        data.records.clone(),
    );
    manifest.write(&dir)?;

    let cells: Vec<CellResult> = match cfg.kind {
        ExperimentKind::Comparison | ExperimentKind::TraceAblation => {
            let m = run_comparison(&data.train, &data.valid, &spec)?;
            write_matrix(&dir, &m)?;
            print!("{}", m.aggregates_csv());
            m.cells
        }
        ExperimentKind::SizeSweep => {
            let rows = dataset_size_sweep(&data.train, &data.valid, &cfg.sizes, &spec)?;
            let mut csv = String::new();
            for (i, row) in rows.iter().enumerate() {
                for (j, line) in row.matrix.aggregates_csv().lines().enumerate() {
                    match (i, j) {
                        (0, 0) => csv.push_str(&format!("train_tokens,{line}\n")),
                        (_, 0) => {}
                        _ => csv.push_str(&format!("{},{line}\n", row.train_tokens)),
                    }
                }
            }
            write_file(&dir.join("aggregates.csv"), &csv)?;
            write_json(&dir.join("result.json"), &rows)?;
            print!("{csv}");
            rows.into_iter().flat_map(|r| r.matrix.cells).collect()
        }
        ExperimentKind::OracleCurve => {
            let curve = oracle_curve(
                &data.train,
                &data.valid,
                &cfg.aux_sizes,
                cfg.with_baseline_tagger,
                &spec,
            )?;
            let mut csv = String::from("aux_hidden,seed,oracle,tag_accuracy,ppl\n");
            for p in &curve.points {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    p.aux_hidden, p.seed, p.oracle, p.tag_accuracy, p.ppl
                ));
            }
            write_file(&dir.join("points.csv"), &csv)?;
            write_json(&dir.join("result.json"), &curve)?;
            print!("{csv}");
            for (seed, rho) in &curve.spearman_by_seed {
                println!("spearman seed {seed}: {}", fmt_opt(*rho));
            }
            println!("spearman pooled: {}", fmt_opt(curve.spearman_pooled));
            curve.cells
        }
    };

    let failed = cells.iter().filter(|c| !c.completed()).count();
    if failed > 0 {
        eprintln!("{failed} of {} cells did not complete", cells.len());
    }
    if !cells.is_empty() && failed == cells.len() {
        manifest.finish("failed");
        manifest.write(&dir)?;
        let all_diverged = cells
            .iter()
            .all(|c| matches!(c.status, CellStatus::Diverged { .. }));
        return Err(CliError {
            code: if all_diverged {
                CliError::DIVERGED
            } else {
                CliError::DATA
            },
            message: "every experiment cell failed".into(),
        });
    }
    manifest.finish("completed");
    manifest.write(&dir)?;
    eprintln!("results in {}", dir.display());
    Ok(())
}

fn write_matrix(dir: &Path, m: &ExperimentMatrix) -> Result<(), CliError> {
    write_file(&dir.join("aggregates.csv"), m.aggregates_csv())?;
    write_file(&dir.join("cells.csv"), m.cells_csv())?;
    write_json(&dir.join("result.json"), m)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}
