use prl_core::corpus::{batchify, LoadOptions, TaggedCorpus};
use prl_core::eval::{perplexity, EvalConfig};
use prl_core::mdp::{q_star, SequenceMdp};
use prl_core::model::{Carry, HeadKind, ModelConfig, ParamGroup, PrlModel, TraceMode};
use prl_core::trainer::{train, QEpisode, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sentence_corpus(n: usize) -> TaggedCorpus {
    let raw = vec![(0..n)
        .map(|i| {
            (
                format!("w{i}"),
                ["A", "B", "C"][(i * 7 / 3) % 3].to_string(),
            )
        })
        .collect::<Vec<_>>()];
    TaggedCorpus::from_raw(&raw, &LoadOptions::default()).unwrap()
}

fn small(c: &TaggedCorpus, head: HeadKind) -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        lm_hidden: 16,
        aux_hidden: 16,
        ..ModelConfig::new(c.vocab().len(), c.tags().len(), head)
    }
}

fn quiet(batch_size: usize, bptt_len: usize) -> TrainConfig {
    TrainConfig {
        batch_size,
        bptt_len,
        dropout: 0.0,
        eval_batch_size: batch_size,
        ..Default::default()
    }
}

fn snapshot(m: &PrlModel, group: ParamGroup) -> Vec<Vec<u64>> {
    m.params()
        .iter()
        .filter(|p| p.group == group)
        .map(|p| p.value.data().iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn update_scopes_are_exact() {
    let c = sentence_corpus(12);
    let plan = batchify(&c, 1, 12).unwrap();
    let mut m = PrlModel::new(small(&c, HeadKind::Q), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut t = Trainer::new(&m, quiet(1, 12)).unwrap();

    let (aux, lm, enc) = (
        snapshot(&m, ParamGroup::Aux),
        snapshot(&m, ParamGroup::Lm),
        snapshot(&m, ParamGroup::Encoder),
    );
    let before = t.carry.clone();
    t.aux_step(&mut m, &plan.batches[0], 0.5).unwrap().unwrap();
    assert_eq!(snapshot(&m, ParamGroup::Lm), lm);
    assert_ne!(snapshot(&m, ParamGroup::Aux), aux);
    assert_ne!(snapshot(&m, ParamGroup::Encoder), enc);
    assert_eq!(t.carry, before, "aux step must not advance carried state");

    let (aux, enc) = (
        snapshot(&m, ParamGroup::Aux),
        snapshot(&m, ParamGroup::Encoder),
    );
    t.lm_step(&mut m, &plan.batches[0], 0.5).unwrap();
    assert_eq!(snapshot(&m, ParamGroup::Aux), aux);
    assert_ne!(snapshot(&m, ParamGroup::Lm), lm);
    assert_ne!(snapshot(&m, ParamGroup::Encoder), enc);
}

#[test]
fn one_lm_step_lowers_loss_on_that_batch() {
    let c = sentence_corpus(12);
    let plan = batchify(&c, 1, 12).unwrap();
    for head in [HeadKind::None, HeadKind::P] {
        let mut m = PrlModel::new(small(&c, head), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let cfg = quiet(1, 12);
        let before = perplexity(
            &m,
            &c,
            &EvalConfig {
                batch_size: 1,
                bptt_len: 12,
                trace_mode: TraceMode::Gold,
            },
        )
        .unwrap();
        let mut t = Trainer::new(&m, cfg).unwrap();
        t.lm_step(&mut m, &plan.batches[0], 0.1).unwrap();
        let after = perplexity(
            &m,
            &c,
            &EvalConfig {
                batch_size: 1,
                bptt_len: 12,
                trace_mode: TraceMode::Gold,
            },
        )
        .unwrap();
        assert!(after.mean_nll < before.mean_nll, "{head:?}");
    }
}

/// Trains on a single sentence with a fixed learning rate.
fn memorize(head: HeadKind, steps: usize) -> (PrlModel, TaggedCorpus) {
    let c = sentence_corpus(10);
    let plan = batchify(&c, 1, 10).unwrap();
    let mut m = PrlModel::new(small(&c, head), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let cfg = TrainConfig {
        q_episode: QEpisode::Sentence,
        clip: 5.0,
        ..quiet(1, 10)
    };
    let mut t = Trainer::new(&m, cfg).unwrap();
    for _ in 0..steps {
        t.aux_step(&mut m, &plan.batches[0], 0.5).unwrap();
        t.lm_step(&mut m, &plan.batches[0], 0.5).unwrap();
    }
    (m, c)
}

#[test]
fn p_head_memorizes_next_tags() {
    let (m, c) = memorize(HeadKind::P, 200);
    let cfg = EvalConfig {
        batch_size: 1,
        bptt_len: 10,
        trace_mode: TraceMode::Gold,
    };
    let report = perplexity(&m, &c, &cfg).unwrap();
    assert_eq!(report.tag_accuracy, Some(1.0));
}

#[test]
fn q_head_approaches_q_star() {
    let (m, c) = memorize(HeadKind::Q, 1000);
    let plan = batchify(&c, 1, 10).unwrap();
    let batch = &plan.batches[0];
    let mut carry = Carry::new(&m, 1).unwrap();
    carry.apply_resets(&batch.reset);
    let (r, _) = m
        .representations(batch, TraceMode::Gold, &mut carry, &mut None)
        .unwrap();
    let learned: Vec<f64> = r.iter().flat_map(|t| t.data().to_vec()).collect();
    let k = c.tags().len();
    let mdp = SequenceMdp::new(batch.target_tags.clone(), k, 0.9).unwrap();
    let oracle = q_star(&mdp);
    let diff = learned
        .iter()
        .zip(&oracle.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 0.05, "max |Q - Q*| = {diff}");
}

#[test]
fn baseline_training_runs_without_aux_steps() {
    let c = sentence_corpus(60);
    let (tr, va) = c.split_at_token(40).unwrap();
    let mut m =
        PrlModel::new(small(&c, HeadKind::None), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        ..quiet(2, 5)
    };
    let res = train(&mut m, &tr, &va, &cfg).unwrap();
    assert_eq!(res.log.records.len(), 2);
    assert!(res
        .log
        .records
        .iter()
        .all(|r| r.aux_loss.is_none() && r.tag_accuracy.is_none()));
    assert!(res.diverged.is_none());
}

#[test]
fn same_seed_same_log() {
    let c = sentence_corpus(80);
    let (tr, va) = c.split_at_token(60).unwrap();
    let run = || {
        let mut m =
            PrlModel::new(small(&c, HeadKind::Q), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            dropout: 0.2,
            ..quiet(2, 6)
        };
        let res = train(&mut m, &tr, &va, &cfg).unwrap();
        (res.log.without_timing(), m)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
}

#[test]
fn divergence_stops_early() {
    let c = sentence_corpus(80);
    let (tr, va) = c.split_at_token(60).unwrap();
    let mut m =
        PrlModel::new(small(&c, HeadKind::None), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        lr: 50.0,
        clip: 0.0,
        divergence_factor: 1.0001,
        ..quiet(2, 6)
    };
    let res = train(&mut m, &tr, &va, &cfg).unwrap();
    let d = res
        .diverged
        .expect("a one-hundredth-percent limit must trip");
    assert_eq!(res.log.records.len(), d.epoch);
    assert!(res
        .log
        .records
        .iter()
        .all(|r| r.train_loss.is_finite() || r.epoch == d.epoch));
}

#[test]
fn incompatible_corpus_is_schema_error() {
    let c = sentence_corpus(30);
    let other = sentence_corpus(31);
    let mut m =
        PrlModel::new(small(&c, HeadKind::None), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (tr, va) = other.split_at_token(20).unwrap();
    assert!(matches!(
        train(&mut m, &tr, &va, &quiet(1, 4)),
        Err(prl_core::Error::Schema(_))
    ));
}

#[test]
fn aux_offset_changes_training_but_not_lm_only_runs() {
    let c = sentence_corpus(80);
    let (tr, va) = c.split_at_token(60).unwrap();
    let run = |head, offset| {
        let mut m = PrlModel::new(small(&c, head), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            aux_offset: offset,
            ..quiet(2, 6)
        };
        train(&mut m, &tr, &va, &cfg).unwrap().log.without_timing()
    };
    assert_ne!(run(HeadKind::Q, 0), run(HeadKind::Q, 1));
    assert_eq!(run(HeadKind::None, 0), run(HeadKind::None, 1));
}
