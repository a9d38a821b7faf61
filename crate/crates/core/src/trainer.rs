//! Alternating two-task SGD. An LM step updates the encoder and LM decoder;
//! an auxiliary step updates the encoder and auxiliary decoder. Predictive
//! representations enter the LM graph as constants.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::corpus::{batchify, BatchPlan, BpttBatch, TaggedCorpus};
use crate::error::{Error, Result};
use crate::eval::{evaluate_plan, EvalConfig};
use crate::mdp::{td_loss, td_targets, Continuation, QTargets};
use crate::model::{Bound, Carry, Dropout, HeadKind, ParamGroup, PrlModel, TraceMode};

/// Discounts offered by default for both the Q target and the label trace.
pub const GAMMA_GRID: [f64; 6] = [0.0, 0.5, 0.67, 0.8, 0.9, 0.99];

/// Where Q-learning episodes end.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QEpisode {
    /// The whole token stream is one episode; values bootstrap across sentence ends.
    #[default]
    Stream,
    /// Every sentence is an episode; predicting the end-of-sentence tag is terminal.
    Sentence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplier applied to the learning rate when validation PPL does not improve.
    pub lr_decay: f64,
    pub min_lr: f64,
    pub gamma_q: f64,
    pub batch_size: usize,
    pub bptt_len: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip: f64,
    pub dropout: f64,
    /// LM batches per auxiliary batch.
    pub lm_per_aux: usize,
    /// The auxiliary update at LM batch `i` uses batch `i + aux_offset`
    /// (wrapping). Non-zero offsets start those windows from zero state.
    pub aux_offset: usize,
    /// Trace source during validation.
    pub eval_trace: TraceMode,
    pub q_episode: QEpisode,
    /// Abort when validation PPL exceeds this multiple of the initial PPL.
    pub divergence_factor: f64,
    pub eval_batch_size: usize,
    /// Accept discounts outside [`GAMMA_GRID`].
    pub allow_any_gamma: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1.0,
            lr_decay: 0.5,
            min_lr: 1e-3,
            gamma_q: 0.9,
            batch_size: 20,
            bptt_len: 35,
            epochs: 10,
            seed: 1,
            clip: 0.25,
            dropout: 0.3,
            lm_per_aux: 1,
            aux_offset: 0,
            eval_trace: TraceMode::Gold,
            q_episode: QEpisode::Stream,
            divergence_factor: 10.0,
            eval_batch_size: 10,
            allow_any_gamma: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
            ("min_lr", self.min_lr),
            ("divergence_factor", self.divergence_factor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Validation(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.lr_decay > 1.0 {
            return Err(Error::Validation("lr_decay must be at most 1".into()));
        }
        if !(self.clip.is_finite() && self.clip >= 0.0) {
            return Err(Error::Validation(format!(
                "clip must be >= 0, got {}",
                self.clip
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("bptt_len", self.bptt_len),
            ("lm_per_aux", self.lm_per_aux),
            ("eval_batch_size", self.eval_batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma_q) {
            return Err(Error::Validation(format!(
                "gamma_q {} must lie in [0, 1)",
                self.gamma_q
            )));
        }
        Ok(())
    }

    /// Also checks both discounts against [`GAMMA_GRID`] unless overridden.
    pub fn validate_with(&self, trace_gamma: f64) -> Result<()> {
        self.validate()?;
        if !self.allow_any_gamma {
            for (name, g) in [("gamma_q", self.gamma_q), ("trace_gamma", trace_gamma)] {
                if !GAMMA_GRID.contains(&g) {
                    return Err(Error::Validation(format!(
                        "{name} = {g} is not in {GAMMA_GRID:?} (set allow_any_gamma to override)"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_ppl: f64,
    pub valid_loss: f64,
    pub valid_ppl: f64,
    pub aux_loss: Option<f64>,
    pub tag_accuracy: Option<f64>,
    pub wall_time_s: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Validation PPL before any update.
    pub initial_valid_ppl: f64,
    pub records: Vec<EpochRecord>,
}

const CSV_HEADER: &str =
    "epoch,train_loss,train_ppl,valid_loss,valid_ppl,aux_loss,tag_accuracy,wall_time_s,lr";

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.train_loss,
                r.train_ppl,
                r.valid_loss,
                r.valid_ppl,
                opt(r.aux_loss),
                opt(r.tag_accuracy),
                r.wall_time_s,
                r.lr
            ));
        }
        out
    }

    /// Copy with wall-clock times zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> TrainLog {
        let mut log = self.clone();
        for r in &mut log.records {
            r.wall_time_s = 0.0;
        }
        log
    }

    /// First epoch whose validation PPL is at or below `target`.
    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.valid_ppl <= target)
            .map(|r| r.epoch)
    }

    pub fn best_valid_ppl(&self) -> Option<f64> {
        self.records.iter().map(|r| r.valid_ppl).reduce(f64::min)
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub log: TrainLog,
    /// Parameters from the epoch with the lowest validation PPL.
    pub best: PrlModel,
    pub best_epoch: Option<usize>,
    /// Set when training stopped early because validation PPL blew up.
    pub diverged: Option<Divergence>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Divergence {
    pub epoch: usize,
    pub ppl: f64,
    pub limit: f64,
}

impl From<Divergence> for Error {
    fn from(d: Divergence) -> Self {
        Error::Divergence {
            epoch: d.epoch,
            ppl: d.ppl,
            limit: d.limit,
        }
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before scaling. `max_norm == 0` leaves them untouched.
pub fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for v in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            *v *= scale;
        }
    }
    norm
}

fn apply_sgd(model: &mut PrlModel, g: &Graph, bound: &Bound, lr: f64, clip: f64) -> Result<()> {
    let mut ids = Vec::new();
    let mut grads = Vec::new();
    for (idx, var) in bound.iter() {
        if let Some(grad) = g.grad(var) {
            ids.push(idx);
            grads.push(grad.to_vec());
        }
    }
    let norm = clip_gradients(&mut grads, clip);
    if !norm.is_finite() {
        return Err(Error::Numeric(format!("gradient norm is {norm}")));
    }
    let params = model.params_mut();
    for (idx, grad) in ids.into_iter().zip(grads) {
        for (w, d) in params[idx].value.data_mut().iter_mut().zip(grad) {
            *w -= lr * d;
        }
    }
    Ok(())
}

/// Q-regression targets for one window of stacked, time-major scores.
fn window_q_targets(
    q: &[f64],
    batch: &BpttBatch,
    k: usize,
    gamma: f64,
    episode: QEpisode,
    eos_tag: usize,
) -> Result<QTargets> {
    let (bsz, len) = (batch.batch_size, batch.bptt_len);
    let mut values = vec![0.0; len * bsz * k];
    let mut mask = vec![0.0; len * bsz * k];
    for b in 0..bsz {
        let mut rows = Vec::with_capacity(len * k);
        let mut gold = Vec::with_capacity(len);
        let mut cont = Vec::with_capacity(len);
        for t in 0..len {
            let r = t * bsz + b;
            rows.extend_from_slice(&q[r * k..(r + 1) * k]);
            let tag = batch.target_tags[batch.idx(b, t)];
            gold.push(tag);
            cont.push(if episode == QEpisode::Sentence && tag == eos_tag {
                Continuation::Terminal
            } else if t + 1 < len {
                Continuation::Next
            } else {
                Continuation::Unobserved
            });
        }
        let tg = td_targets(&rows, &gold, &cont, k, gamma)?;
        for t in 0..len {
            let r = t * bsz + b;
            values[r * k..(r + 1) * k].copy_from_slice(&tg.values[t * k..(t + 1) * k]);
            mask[r * k..(r + 1) * k].copy_from_slice(&tg.mask[t * k..(t + 1) * k]);
        }
    }
    Ok(QTargets { values, mask })
}

/// Auxiliary loss over one window from an already-run auxiliary pass.
pub(crate) fn aux_loss(
    g: &mut Graph,
    model: &PrlModel,
    scores: &[Var],
    batch: &BpttBatch,
    gamma_q: f64,
    episode: QEpisode,
) -> Result<Option<Var>> {
    let stacked = g.concat(scores, 0)?;
    let targets = batch.time_major(&batch.target_tags);
    match model.config().head {
        HeadKind::None => Err(Error::Contract(
            "baseline model has no auxiliary loss".into(),
        )),
        HeadKind::P => Ok(Some(g.softmax_cross_entropy(stacked, &targets)?)),
        HeadKind::Q => {
            let k = model.config().num_tags;
            let eos = k - 1;
            let tg = window_q_targets(g.value(stacked).data(), batch, k, gamma_q, episode, eos)?;
            if tg.mask.iter().all(|m| *m == 0.0) {
                return Ok(None);
            }
            Ok(Some(td_loss(g, stacked, &tg)?))
        }
    }
}

fn check_loss(value: f64, what: &str, step: usize, lr: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "{what} loss is {value} at batch {step} (lr {lr})"
        )))
    }
}

/// Stateful step runner: owns the carried state and dropout RNG.
pub struct Trainer {
    pub config: TrainConfig,
    pub carry: Carry,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: &PrlModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let carry = Carry::new(model, config.batch_size)?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Trainer {
            config,
            carry,
            rng,
            step: 0,
        })
    }

    fn dropout(&mut self) -> Option<Dropout<'_>> {
        (self.config.dropout > 0.0).then_some(Dropout {
            rate: self.config.dropout,
            rng: &mut self.rng,
        })
    }

    /// One update of the encoder and auxiliary decoder on `batch`. Carried
    /// state is not advanced; [`Trainer::lm_step`] does that. Returns `None`
    /// when the window has no supervised Q entries.
    pub fn aux_step(
        &mut self,
        model: &mut PrlModel,
        batch: &BpttBatch,
        lr: f64,
    ) -> Result<Option<f64>> {
        self.aux_step_from(model, batch, lr, true)
    }

    /// As [`Trainer::aux_step`], optionally from zero state instead of the
    /// carried one.
    pub fn aux_step_from(
        &mut self,
        model: &mut PrlModel,
        batch: &BpttBatch,
        lr: f64,
        carried: bool,
    ) -> Result<Option<f64>> {
        if !model.config().head.has_aux() {
            return Ok(None);
        }
        let mut carry = if carried {
            self.carry.clone()
        } else {
            Carry::new(model, batch.batch_size)?
        };
        carry.apply_resets(&batch.reset);
        let mut g = Graph::new();
        let trainable = [ParamGroup::Encoder, ParamGroup::Aux];
        let p = model.bind(&mut g, &trainable, &trainable);
        let inputs = model.aux_inputs(&mut g, &p, batch)?;
        let feed = model.trace_feed(batch, TraceMode::Gold);
        let (gamma_q, episode, clip) =
            (self.config.gamma_q, self.config.q_episode, self.config.clip);
        let mut drop = self.dropout();
        let out = model.aux_forward(
            &mut g,
            &p,
            &inputs,
            feed,
            &mut carry.aux,
            &mut carry.traces,
            &mut carry.pending,
            &mut drop,
        )?;
        let Some(loss) = aux_loss(&mut g, model, &out.scores, batch, gamma_q, episode)? else {
            return Ok(None);
        };
        let value = g.value(loss).item()?;
        check_loss(value, "auxiliary", self.step, lr)?;
        g.backward(loss)?;
        apply_sgd(model, &g, &p, lr, clip)?;
        Ok(Some(value))
    }

    /// One update of the encoder and LM decoder on `batch`; advances the
    /// carried state. Returns the mean next-word cross-entropy.
    pub fn lm_step(&mut self, model: &mut PrlModel, batch: &BpttBatch, lr: f64) -> Result<f64> {
        self.carry.apply_resets(&batch.reset);
        let r = if model.config().head.has_aux() {
            Some(
                model
                    .representations(batch, TraceMode::Gold, &mut self.carry, &mut None)?
                    .0,
            )
        } else {
            None
        };
        let clip = self.config.clip;
        let mut g = Graph::new();
        let trainable = [ParamGroup::Encoder, ParamGroup::Lm];
        let p = model.bind(&mut g, &trainable, &trainable);
        let inputs = model.encode(&mut g, &p, &batch.inputs, batch.batch_size, batch.bptt_len)?;
        let r_vars: Option<Vec<Var>> = r.map(|r| r.into_iter().map(|t| g.constant(t)).collect());
        let mut drop = (self.config.dropout > 0.0).then_some(Dropout {
            rate: self.config.dropout,
            rng: &mut self.rng,
        });
        let logits = model.lm_forward(
            &mut g,
            &p,
            &inputs,
            r_vars.as_deref(),
            &mut self.carry.lm,
            &mut drop,
        )?;
        let loss = g.softmax_cross_entropy(logits, &batch.time_major(&batch.targets))?;
        let value = g.value(loss).item()?;
        check_loss(value, "LM", self.step, lr)?;
        g.backward(loss)?;
        apply_sgd(model, &g, &p, lr, clip)?;
        self.step += 1;
        Ok(value)
    }
}

/// Mean losses over one pass of `plan`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLosses {
    pub lm: f64,
    pub aux: Option<f64>,
}

/// One pass over the batches, alternating auxiliary and LM updates.
pub fn train_epoch(
    model: &mut PrlModel,
    trainer: &mut Trainer,
    plan: &BatchPlan,
    lr: f64,
) -> Result<EpochLosses> {
    let mut lm_total = 0.0;
    let mut aux_total = 0.0;
    let mut aux_count = 0usize;
    for (i, batch) in plan.iter().enumerate() {
        if i % trainer.config.lm_per_aux == 0 {
            let offset = trainer.config.aux_offset % plan.len();
            let aux_batch = &plan.batches[(i + offset) % plan.len()];
            if let Some(l) = trainer.aux_step_from(model, aux_batch, lr, offset == 0)? {
                aux_total += l;
                aux_count += 1;
            }
        }
        lm_total += trainer.lm_step(model, batch, lr)?;
    }
    Ok(EpochLosses {
        lm: lm_total / plan.len() as f64,
        aux: (aux_count > 0).then(|| aux_total / aux_count as f64),
    })
}

/// Trains `model` in place for `config.epochs` epochs, validating after each.
pub fn train(
    model: &mut PrlModel,
    train_corpus: &TaggedCorpus,
    valid_corpus: &TaggedCorpus,
    config: &TrainConfig,
) -> Result<TrainResult> {
    config.validate_with(model.config().trace_gamma)?;
    for c in [train_corpus, valid_corpus] {
        crate::eval::check_compatible(model, c)?;
    }
    let plan = batchify(train_corpus, config.batch_size, config.bptt_len)?;
    let eval_cfg = EvalConfig {
        batch_size: config.eval_batch_size,
        bptt_len: config.bptt_len,
        trace_mode: config.eval_trace,
    };
    let valid_plan = batchify(valid_corpus, eval_cfg.batch_size, eval_cfg.bptt_len)?;
    let initial = evaluate_plan(model, &valid_plan, &eval_cfg)?;
    let limit = config.divergence_factor * initial.ppl;
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut log = TrainLog {
        initial_valid_ppl: initial.ppl,
        records: Vec::new(),
    };
    let mut best = model.clone();
    let mut best_ppl = f64::INFINITY;
    let mut best_epoch = None;
    let mut lr = config.lr;
    let mut diverged = None;
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let losses = train_epoch(model, &mut trainer, &plan, lr)?;
        let valid = evaluate_plan(model, &valid_plan, &eval_cfg)?;
        log.records.push(EpochRecord {
            epoch,
            train_loss: losses.lm,
            train_ppl: losses.lm.exp(),
            valid_loss: valid.mean_nll,
            valid_ppl: valid.ppl,
            aux_loss: losses.aux,
            tag_accuracy: valid.tag_accuracy,
            wall_time_s: start.elapsed().as_secs_f64(),
            lr,
        });
        if !valid.ppl.is_finite() || valid.ppl > limit {
            diverged = Some(Divergence {
                epoch,
                ppl: valid.ppl,
                limit,
            });
            break;
        }
        if valid.ppl < best_ppl {
            best_ppl = valid.ppl;
            best = model.clone();
            best_epoch = Some(epoch);
        } else {
            lr = (lr * config.lr_decay).max(config.min_lr);
        }
    }
    Ok(TrainResult {
        log,
        best,
        best_epoch,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![vec![3.0, 0.0], vec![4.0]];
        let n = clip_gradients(&mut g, 1.0);
        assert_eq!(n, 5.0);
        let after: f64 = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        assert!(after <= 1.0 + 1e-12);
        let mut g = vec![vec![0.3]];
        clip_gradients(&mut g, 1.0);
        assert_eq!(g[0][0], 0.3);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate_with(0.9).is_ok());
        assert!(TrainConfig::default().validate_with(0.7).is_err());
        let c = TrainConfig {
            allow_any_gamma: true,
            ..Default::default()
        };
        assert!(c.validate_with(0.7).is_ok());
        let c = TrainConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn log_csv_has_fixed_header() {
        let log = TrainLog {
            initial_valid_ppl: 10.0,
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 1.0,
                train_ppl: 1f64.exp(),
                valid_loss: 1.0,
                valid_ppl: 2.0,
                aux_loss: None,
                tag_accuracy: Some(0.5),
                wall_time_s: 0.1,
                lr: 1.0,
            }],
        };
        let csv = log.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 9);
        assert_eq!(log.epochs_to_reach(2.0), Some(1));
        assert_eq!(log.epochs_to_reach(1.9), None);
    }
}
