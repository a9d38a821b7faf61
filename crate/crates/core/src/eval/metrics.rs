use serde::{Deserialize, Serialize};

use crate::autodiff::{log_sum_exp, Graph};
use crate::corpus::{batchify, BatchPlan, TaggedCorpus};
use crate::error::{Error, Result};
use crate::model::{Carry, ParamGroup, PrlModel, TraceMode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub batch_size: usize,
    pub bptt_len: usize,
    pub trace_mode: TraceMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            batch_size: 10,
            bptt_len: 35,
            trace_mode: TraceMode::Gold,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub corpus_id: String,
    pub split: String,
    /// Scored target tokens.
    pub tokens: usize,
    pub mean_nll: f64,
    pub ppl: f64,
    /// Next-tag accuracy of argmax R; absent for the baseline.
    pub tag_accuracy: Option<f64>,
    pub trace_mode: Option<TraceMode>,
    pub seed: Option<u64>,
}

/// Errors unless the corpus ids fit the model's vocabulary and tag set.
pub fn check_compatible(model: &PrlModel, corpus: &TaggedCorpus) -> Result<()> {
    let cfg = model.config();
    if corpus.vocab().len() != cfg.vocab_size {
        return Err(Error::Schema(format!(
            "corpus vocabulary has {} entries, model expects {}",
            corpus.vocab().len(),
            cfg.vocab_size
        )));
    }
    if corpus.tags().len() != cfg.num_tags {
        return Err(Error::Schema(format!(
            "corpus has {} tags, model expects {}",
            corpus.tags().len(),
            cfg.num_tags
        )));
    }
    Ok(())
}

/// Streams over `plan` with carried state and no dropout.
pub fn evaluate_plan(model: &PrlModel, plan: &BatchPlan, cfg: &EvalConfig) -> Result<EvalReport> {
    let has_aux = model.config().head.has_aux();
    let mut carry = Carry::new(model, plan.batch_size)?;
    let mut nll = 0.0;
    let mut tokens = 0usize;
    let mut correct = 0usize;
    for batch in plan.iter() {
        carry.apply_resets(&batch.reset);
        let r = if has_aux {
            let (r, predicted) =
                model.representations(batch, cfg.trace_mode, &mut carry, &mut None)?;
            for (t, preds) in predicted.iter().enumerate() {
                for (b, &p) in preds.iter().enumerate() {
                    if p == batch.target_tags[batch.idx(b, t)] {
                        correct += 1;
                    }
                }
            }
            Some(r)
        } else {
            None
        };
        let mut g = Graph::new();
        let p = model.bind(&mut g, &[ParamGroup::Encoder, ParamGroup::Lm], &[]);
        let inputs = model.encode(&mut g, &p, &batch.inputs, batch.batch_size, batch.bptt_len)?;
        let r_vars: Option<Vec<_>> = r.map(|r| r.into_iter().map(|t| g.constant(t)).collect());
        let logits = model.lm_forward(
            &mut g,
            &p,
            &inputs,
            r_vars.as_deref(),
            &mut carry.lm,
            &mut None,
        )?;
        let v = model.config().vocab_size;
        let targets = batch.time_major(&batch.targets);
        for (row, &y) in g.value(logits).data().chunks_exact(v).zip(&targets) {
            nll += log_sum_exp(row) - row[y];
        }
        tokens += targets.len();
    }
    if tokens == 0 {
        return Err(Error::Input("nothing to evaluate".into()));
    }
    let mean_nll = nll / tokens as f64;
    Ok(EvalReport {
        tokens,
        mean_nll,
        ppl: mean_nll.exp(),
        tag_accuracy: has_aux.then(|| correct as f64 / tokens as f64),
        trace_mode: has_aux.then_some(cfg.trace_mode),
        ..Default::default()
    })
}

/// Validation-style perplexity over a whole corpus.
pub fn perplexity(model: &PrlModel, corpus: &TaggedCorpus, cfg: &EvalConfig) -> Result<EvalReport> {
    check_compatible(model, corpus)?;
    let plan = batchify(corpus, cfg.batch_size, cfg.bptt_len)?;
    evaluate_plan(model, &plan, cfg)
}

/// Fraction of positions where argmax R equals the next word's gold tag.
pub fn tag_accuracy(model: &PrlModel, corpus: &TaggedCorpus, cfg: &EvalConfig) -> Result<f64> {
    if !model.config().head.has_aux() {
        return Err(Error::Contract(
            "tag accuracy needs an auxiliary head".into(),
        ));
    }
    perplexity(model, corpus, cfg)?
        .tag_accuracy
        .ok_or_else(|| Error::Contract("no tag predictions".into()))
}
