//! Multi-seed experiment matrices: variant comparison, training-size sweep
//! and the oracle accuracy/perplexity curve.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{perplexity, EvalConfig, EvalReport};
use super::stats::{mean, spearman, std_error};
use crate::corpus::TaggedCorpus;
use crate::error::{Error, Result};
use crate::model::{HeadKind, ModelConfig, PrlModel};
use crate::trainer::{train, TrainConfig, TrainLog};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "prl-p")]
    PrlP,
    #[serde(rename = "prl-q")]
    PrlQ,
    /// Q head without the label trace input.
    #[serde(rename = "prl-q-no-t")]
    PrlQNoTrace,
    /// Q head whose auxiliary decoder reads the next word.
    #[serde(rename = "oracle")]
    Oracle,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::PrlP,
        Variant::PrlQ,
        Variant::PrlQNoTrace,
        Variant::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::PrlP => "prl-p",
            Variant::PrlQ => "prl-q",
            Variant::PrlQNoTrace => "prl-q-no-t",
            Variant::Oracle => "oracle",
        }
    }

    /// `base` with this variant's head and flags.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        c.head = match self {
            Variant::Baseline => HeadKind::None,
            Variant::PrlP => HeadKind::P,
            _ => HeadKind::Q,
        };
        c.use_trace = matches!(self, Variant::PrlP | Variant::PrlQ | Variant::Oracle);
        c.oracle = self == Variant::Oracle;
        c
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown variant {s:?}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Dimensions shared by every variant; vocabulary and tag counts are
    /// overwritten from the corpus.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Worker threads for independent cells.
    pub jobs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellStatus {
    Completed,
    Diverged { epoch: usize, ppl: f64 },
    Failed { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    /// Position of the variant in the spec's list.
    pub slot: usize,
    pub variant: Variant,
    pub seed: u64,
    pub aux_hidden: usize,
    pub status: CellStatus,
    /// Validation report of the best checkpoint.
    pub report: Option<EvalReport>,
    pub log: Option<TrainLog>,
}

impl CellResult {
    pub fn completed(&self) -> bool {
        self.status == CellStatus::Completed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub label: String,
    pub variant: Variant,
    pub completed: usize,
    pub incomplete: usize,
    pub ppl_mean: Option<f64>,
    pub ppl_stderr: Option<f64>,
    pub accuracy_mean: Option<f64>,
    pub accuracy_stderr: Option<f64>,
    /// Baseline mean PPL minus this row's mean PPL.
    pub delta_ppl: Option<f64>,
    /// `100·(baseline − this)/baseline`.
    pub pct_change: Option<f64>,
    /// Lower mean PPL than the baseline by more than the summed standard
    /// errors, over at least three seeds each.
    pub beats_baseline: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMatrix {
    pub cells: Vec<CellResult>,
    pub aggregates: Vec<AggregateRow>,
}

const MIN_SEEDS_FOR_SIGNIFICANCE: usize = 3;

impl ExperimentMatrix {
    pub fn row(&self, label: &str) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|r| r.label == label)
    }

    pub fn cells_for(&self, slot: usize) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(move |c| c.slot == slot)
    }

    pub fn all_failed(&self) -> bool {
        !self.cells.is_empty() && self.cells.iter().all(|c| !c.completed())
    }

    fn aggregate(cells: Vec<CellResult>, variants: &[Variant]) -> Self {
        let mut aggregates = Vec::with_capacity(variants.len());
        for (slot, &variant) in variants.iter().enumerate() {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.slot == slot).collect();
            let done: Vec<&EvalReport> = mine
                .iter()
                .filter(|c| c.completed())
                .filter_map(|c| c.report.as_ref())
                .collect();
            let ppl: Vec<f64> = done.iter().map(|r| r.ppl).collect();
            let acc: Vec<f64> = done.iter().filter_map(|r| r.tag_accuracy).collect();
            let dup = variants[..slot].iter().filter(|v| **v == variant).count();
            let label = if dup == 0 {
                variant.name().to_string()
            } else {
                format!("{}#{}", variant.name(), dup + 1)
            };
            aggregates.push(AggregateRow {
                label,
                variant,
                completed: done.len(),
                incomplete: mine.len() - done.len(),
                ppl_mean: mean(&ppl),
                ppl_stderr: std_error(&ppl),
                accuracy_mean: mean(&acc),
                accuracy_stderr: std_error(&acc),
                delta_ppl: None,
                pct_change: None,
                beats_baseline: false,
            });
        }
        let base = aggregates
            .iter()
            .find(|r| r.variant == Variant::Baseline)
            .map(|r| (r.ppl_mean, r.ppl_stderr, r.completed));
        if let Some((Some(bm), bse, bn)) = base {
            for row in aggregates.iter_mut() {
                if let Some(m) = row.ppl_mean {
                    row.delta_ppl = Some(bm - m);
                    row.pct_change = Some(100.0 * (bm - m) / bm);
                    row.beats_baseline = match (bse, row.ppl_stderr) {
                        (Some(bse), Some(se))
                            if bn >= MIN_SEEDS_FOR_SIGNIFICANCE
                                && row.completed >= MIN_SEEDS_FOR_SIGNIFICANCE =>
                        {
                            bm - m > bse + se
                        }
                        _ => false,
                    };
                }
            }
        }
        ExperimentMatrix { cells, aggregates }
    }

    pub fn aggregates_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from(
            "label,variant,completed,incomplete,ppl_mean,ppl_stderr,accuracy_mean,accuracy_stderr,delta_ppl,pct_change,beats_baseline\n",
        );
        for r in &self.aggregates {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.label,
                r.variant,
                r.completed,
                r.incomplete,
                opt(r.ppl_mean),
                opt(r.ppl_stderr),
                opt(r.accuracy_mean),
                opt(r.accuracy_stderr),
                opt(r.delta_ppl),
                opt(r.pct_change),
                r.beats_baseline
            ));
        }
        out
    }

    pub fn cells_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from("slot,variant,seed,aux_hidden,status,ppl,tag_accuracy,epochs\n");
        for c in &self.cells {
            let status = match &c.status {
                CellStatus::Completed => "completed",
                CellStatus::Diverged { .. } => "diverged",
                CellStatus::Failed { .. } => "failed",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.slot,
                c.variant,
                c.seed,
                c.aux_hidden,
                status,
                opt(c.report.as_ref().map(|r| r.ppl)),
                opt(c.report.as_ref().and_then(|r| r.tag_accuracy)),
                c.log.as_ref().map(|l| l.records.len()).unwrap_or(0)
            ));
        }
        out
    }
}

/// One training run to be executed.
#[derive(Clone, Debug)]
struct CellJob {
    slot: usize,
    variant: Variant,
    seed: u64,
    model: ModelConfig,
}

fn run_cell(
    job: &CellJob,
    train_c: &TaggedCorpus,
    valid_c: &TaggedCorpus,
    spec: &ExperimentSpec,
) -> CellResult {
    let mut result = CellResult {
        slot: job.slot,
        variant: job.variant,
        seed: job.seed,
        aux_hidden: job.model.aux_hidden,
        status: CellStatus::Completed,
        report: None,
        log: None,
    };
    let outcome = (|| -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
        let mut model = PrlModel::new(job.model.clone(), &mut rng)?;
        let cfg = TrainConfig {
            seed: job.seed,
            ..spec.train.clone()
        };
        let res = train(&mut model, train_c, valid_c, &cfg)?;
        result.log = Some(res.log);
        if let Some(d) = res.diverged {
            result.status = CellStatus::Diverged {
                epoch: d.epoch,
                ppl: d.ppl,
            };
        }
        let mut report = perplexity(&res.best, valid_c, &spec.eval)?;
        report.model_id = format!("{}-h{}", job.variant, job.model.aux_hidden);
        report.split = "valid".into();
        report.seed = Some(job.seed);
        result.report = Some(report);
        Ok(())
    })();
    if let Err(e) = outcome {
        result.status = CellStatus::Failed {
            message: e.to_string(),
        };
    }
    result
}

fn run_jobs(
    jobs: &[CellJob],
    train_c: &TaggedCorpus,
    valid_c: &TaggedCorpus,
    spec: &ExperimentSpec,
) -> Vec<CellResult> {
    let workers = spec.jobs.clamp(1, jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = run_cell(&jobs[i], train_c, valid_c, spec);
                slots.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

fn check_spec(spec: &ExperimentSpec) -> Result<()> {
    if spec.seeds.len() < 2 {
        return Err(Error::Input(
            "an experiment needs at least two seeds".into(),
        ));
    }
    if spec.variants.is_empty() {
        return Err(Error::Input(
            "an experiment needs at least one variant".into(),
        ));
    }
    spec.train.validate()
}

fn fitted(model: &ModelConfig, corpus: &TaggedCorpus) -> ModelConfig {
    let mut m = model.clone();
    m.vocab_size = corpus.vocab().len();
    m.num_tags = corpus.tags().len();
    m
}

/// Trains every variant for every seed and aggregates validation results.
pub fn run_comparison(
    train_c: &TaggedCorpus,
    valid_c: &TaggedCorpus,
    spec: &ExperimentSpec,
) -> Result<ExperimentMatrix> {
    check_spec(spec)?;
    let base = fitted(&spec.model, train_c);
    let mut jobs = Vec::new();
    for (slot, &variant) in spec.variants.iter().enumerate() {
        let model = variant.apply(&base);
        model.validate()?;
        for &seed in &spec.seeds {
            jobs.push(CellJob {
                slot,
                variant,
                seed,
                model: model.clone(),
            });
        }
    }
    let cells = run_jobs(&jobs, train_c, valid_c, spec);
    Ok(ExperimentMatrix::aggregate(cells, &spec.variants))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub train_tokens: usize,
    pub matrix: ExperimentMatrix,
}

impl SweepRow {
    /// `100·(baseline − variant)/baseline` mean PPL for `variant`.
    pub fn pct_improvement(&self, variant: Variant) -> Option<f64> {
        self.matrix
            .aggregates
            .iter()
            .find(|r| r.variant == variant)
            .and_then(|r| r.pct_change)
    }
}

/// [`run_comparison`] on prefixes of the training stream; validation is fixed.
pub fn dataset_size_sweep(
    train_c: &TaggedCorpus,
    valid_c: &TaggedCorpus,
    sizes: &[usize],
    spec: &ExperimentSpec,
) -> Result<Vec<SweepRow>> {
    let minimum = crate::corpus::min_stream_len(spec.train.batch_size, spec.train.bptt_len);
    for &n in sizes {
        if n > train_c.num_tokens() {
            return Err(Error::Input(format!(
                "size {n} exceeds the {} training tokens",
                train_c.num_tokens()
            )));
        }
        if n < minimum {
            return Err(Error::Input(format!(
                "size {n} is below the batching minimum of {minimum} tokens"
            )));
        }
    }
    sizes
        .iter()
        .map(|&n| {
            Ok(SweepRow {
                train_tokens: n,
                matrix: run_comparison(&train_c.truncate_tokens(n)?, valid_c, spec)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OraclePoint {
    pub aux_hidden: usize,
    pub seed: u64,
    pub oracle: bool,
    pub tag_accuracy: f64,
    pub ppl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCurve {
    pub points: Vec<OraclePoint>,
    /// Spearman correlation between oracle accuracy and PPL, per seed.
    pub spearman_by_seed: Vec<(u64, Option<f64>)>,
    /// Same statistic over all oracle points.
    pub spearman_pooled: Option<f64>,
    pub cells: Vec<CellResult>,
}

/// Oracle-mode runs over a range of auxiliary decoder sizes, plus matched
/// non-oracle runs when `with_baseline_tagger` is set.
pub fn oracle_curve(
    train_c: &TaggedCorpus,
    valid_c: &TaggedCorpus,
    aux_sizes: &[usize],
    with_baseline_tagger: bool,
    spec: &ExperimentSpec,
) -> Result<OracleCurve> {
    check_spec(spec)?;
    if aux_sizes.len() < 3 {
        return Err(Error::Input(
            "an oracle curve needs at least three sizes".into(),
        ));
    }
    let base = fitted(&spec.model, train_c);
    let mut variants = vec![Variant::Oracle];
    if with_baseline_tagger {
        variants.push(Variant::PrlQ);
    }
    let mut jobs = Vec::new();
    for &h in aux_sizes {
        for (slot, &variant) in variants.iter().enumerate() {
            let mut model = variant.apply(&base);
            model.aux_hidden = h;
            model.validate()?;
            for &seed in &spec.seeds {
                jobs.push(CellJob {
                    slot,
                    variant,
                    seed,
                    model: model.clone(),
                });
            }
        }
    }
    let cells = run_jobs(&jobs, train_c, valid_c, spec);
    let points: Vec<OraclePoint> = cells
        .iter()
        .filter(|c| c.completed())
        .filter_map(|c| {
            let r = c.report.as_ref()?;
            Some(OraclePoint {
                aux_hidden: c.aux_hidden,
                seed: c.seed,
                oracle: c.variant == Variant::Oracle,
                tag_accuracy: r.tag_accuracy?,
                ppl: r.ppl,
            })
        })
        .collect();
    let corr = |pts: Vec<&OraclePoint>| {
        let a: Vec<f64> = pts.iter().map(|p| p.tag_accuracy).collect();
        let p: Vec<f64> = pts.iter().map(|p| p.ppl).collect();
        spearman(&a, &p)
    };
    let spearman_by_seed = spec
        .seeds
        .iter()
        .map(|&s| {
            (
                s,
                corr(points.iter().filter(|p| p.oracle && p.seed == s).collect()),
            )
        })
        .collect();
    let spearman_pooled = corr(points.iter().filter(|p| p.oracle).collect());
    Ok(OracleCurve {
        points,
        spearman_by_seed,
        spearman_pooled,
        cells,
    })
}
