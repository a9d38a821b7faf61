use prl_core::autodiff::{grad_check_many, Graph, Tensor, Var};
use prl_core::corpus::BpttBatch;
use prl_core::corpus::{TagSet, Vocab};
use prl_core::model::{
    Bound, Carry, Checkpoint, HeadKind, ModelConfig, ParamGroup, PrlModel, StackState, TraceFeed,
};
use prl_core::{CheckpointError, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(head: HeadKind) -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        num_tags: 3,
        embed_dim: 8,
        lm_hidden: 8,
        lm_layers: 3,
        aux_hidden: 8,
        aux_layers: 2,
        head,
        use_trace: head.has_aux(),
        trace_gamma: 0.5,
        oracle: false,
        tie_weights: false,
    }
}

fn model(head: HeadKind, seed: u64) -> PrlModel {
    PrlModel::new(tiny(head), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn random_batch(bsz: usize, len: usize, seed: u64) -> BpttBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = bsz * len;
    BpttBatch {
        batch_size: bsz,
        bptt_len: len,
        inputs: (0..n).map(|_| rng.gen_range(0..11)).collect(),
        targets: (0..n).map(|_| rng.gen_range(0..11)).collect(),
        input_tags: (0..n).map(|_| rng.gen_range(0..3)).collect(),
        target_tags: (0..n).map(|_| rng.gen_range(0..3)).collect(),
        reset: vec![true; bsz],
    }
}

fn lm_logits(m: &PrlModel, batch: &BpttBatch, carry: &mut Carry) -> Vec<f64> {
    carry.apply_resets(&batch.reset);
    let r = if m.config().head.has_aux() {
        Some(
            m.representations(batch, prl_core::model::TraceMode::Gold, carry, &mut None)
                .unwrap()
                .0,
        )
    } else {
        None
    };
    let mut g = Graph::new();
    let p = m.bind(&mut g, &[ParamGroup::Encoder, ParamGroup::Lm], &[]);
    let e = m
        .encode(&mut g, &p, &batch.inputs, batch.batch_size, batch.bptt_len)
        .unwrap();
    let r: Option<Vec<Var>> = r.map(|r| r.into_iter().map(|t| g.constant(t)).collect());
    let logits = m
        .lm_forward(&mut g, &p, &e, r.as_deref(), &mut carry.lm, &mut None)
        .unwrap();
    g.value(logits).data().to_vec()
}

#[test]
fn p_head_rows_are_distributions() {
    for seed in 0..5 {
        let m = model(HeadKind::P, seed);
        let batch = random_batch(3, 4, seed);
        let mut carry = Carry::new(&m, 3).unwrap();
        let (r, _) = m
            .representations(
                &batch,
                prl_core::model::TraceMode::Gold,
                &mut carry,
                &mut None,
            )
            .unwrap();
        for step in &r {
            for b in 0..3 {
                let row = step.row(b);
                assert!(row.iter().all(|v| *v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}

/// Aux and LM losses on one graph, with R left attached so every parameter
/// is reachable from the loss.
fn composite_loss(
    m: &PrlModel,
    batch: &BpttBatch,
    g: &mut Graph,
    vars: &[Var],
) -> prl_core::Result<Var> {
    let p = Bound::from_vars(vars.iter().copied().map(Some).collect());
    let (bsz, len) = (batch.batch_size, batch.bptt_len);
    let e = m.encode(g, &p, &batch.inputs, bsz, len)?;
    let mut carry = Carry::new(m, bsz)?;
    let out = m.aux_forward(
        g,
        &p,
        &e,
        Some(TraceFeed::Gold(&batch.input_tags)),
        &mut carry.aux,
        &mut carry.traces,
        &mut carry.pending,
        &mut None,
    )?;
    let scores = g.concat(&out.scores, 0)?;
    let aux = match m.config().head {
        HeadKind::P => g.softmax_cross_entropy(scores, &batch.time_major(&batch.target_tags))?,
        _ => {
            let n = g.value(scores).numel();
            let target: Vec<f64> = (0..n).map(|i| (i % 5) as f64 * 0.3).collect();
            g.mse(scores, &target, &vec![1.0; n])?
        }
    };
    let logits = m.lm_forward(g, &p, &e, Some(&out.r), &mut carry.lm, &mut None)?;
    let lm = g.softmax_cross_entropy(logits, &batch.time_major(&batch.targets))?;
    g.add(aux, lm)
}

#[test]
fn composite_gradient_matches_finite_differences() {
    for (head, seed) in [(HeadKind::P, 1), (HeadKind::Q, 2)] {
        let m = model(head, seed);
        let batch = random_batch(2, 3, seed);
        let xs: Vec<Tensor> = m.params().iter().map(|p| p.value.clone()).collect();
        let report =
            grad_check_many(|g, v| composite_loss(&m, &batch, g, v), &xs, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{head:?}: {report:?}");
        assert!(report.checked > 3000);
    }
}

#[test]
fn split_windows_match_one_long_window() {
    for head in [HeadKind::None, HeadKind::P, HeadKind::Q] {
        let m = model(head, 7);
        let long = random_batch(2, 6, 3);
        let half = |from: usize, reset: bool| {
            let pick = |v: &[usize]| -> Vec<usize> {
                (0..2)
                    .flat_map(|b| v[b * 6 + from..b * 6 + from + 3].to_vec())
                    .collect()
            };
            BpttBatch {
                batch_size: 2,
                bptt_len: 3,
                inputs: pick(&long.inputs),
                targets: pick(&long.targets),
                input_tags: pick(&long.input_tags),
                target_tags: pick(&long.target_tags),
                reset: vec![reset; 2],
            }
        };
        let mut c1 = Carry::new(&m, 2).unwrap();
        let full = lm_logits(&m, &long, &mut c1);
        let mut c2 = Carry::new(&m, 2).unwrap();
        let mut chained = lm_logits(&m, &half(0, true), &mut c2);
        chained.extend(lm_logits(&m, &half(3, false), &mut c2));
        // full is time-major over 6 steps; the halves are time-major over 3 each
        for (a, b) in full.iter().zip(&chained) {
            assert!((a - b).abs() < 1e-10, "{head:?}");
        }
        assert_eq!(full.len(), chained.len());
    }
}

#[test]
fn r_changes_logits_and_baseline_rejects_r() {
    let m = model(HeadKind::Q, 4);
    let batch = random_batch(2, 3, 5);
    let run = |fill: f64| {
        let mut g = Graph::new();
        let p = m.bind(&mut g, &[ParamGroup::Encoder, ParamGroup::Lm], &[]);
        let e = m.encode(&mut g, &p, &batch.inputs, 2, 3).unwrap();
        let r: Vec<Var> = (0..3)
            .map(|_| g.constant(Tensor::new(vec![2, 3], vec![fill; 6]).unwrap()))
            .collect();
        let mut st = StackState::zeros(3, 2, 8);
        let l = m
            .lm_forward(&mut g, &p, &e, Some(&r), &mut st, &mut None)
            .unwrap();
        g.value(l).data().to_vec()
    };
    assert_ne!(run(0.0), run(1.0));

    let mut g = Graph::new();
    let p = m.bind(&mut g, &[ParamGroup::Encoder, ParamGroup::Lm], &[]);
    let e = m.encode(&mut g, &p, &batch.inputs, 2, 3).unwrap();
    let mut st = StackState::zeros(3, 2, 8);
    assert!(matches!(
        m.lm_forward(&mut g, &p, &e, None, &mut st, &mut None),
        Err(Error::Contract(_))
    ));
    let bad: Vec<Var> = (0..3).map(|_| g.constant(Tensor::zeros(&[2, 4]))).collect();
    assert!(matches!(
        m.lm_forward(&mut g, &p, &e, Some(&bad), &mut st, &mut None),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn encode_rejects_out_of_range_ids() {
    let m = model(HeadKind::None, 0);
    let mut g = Graph::new();
    let p = m.bind(&mut g, &[ParamGroup::Encoder], &[]);
    assert!(matches!(
        m.encode(&mut g, &p, &[0, 11], 1, 2),
        Err(Error::Index { .. })
    ));
    let e = m.encode(&mut g, &p, &[3, 3], 2, 1).unwrap();
    let v = g.value(e[0]);
    assert_eq!(v.row(0), v.row(1));
}

#[test]
fn aux_requires_trace_and_oracle_flag() {
    let m = model(HeadKind::Q, 0);
    let mut g = Graph::new();
    let p = m.bind(&mut g, &[ParamGroup::Encoder, ParamGroup::Aux], &[]);
    let e = m.encode(&mut g, &p, &[1, 2], 1, 2).unwrap();
    let mut carry = Carry::new(&m, 1).unwrap();
    let res = m.aux_forward(
        &mut g,
        &p,
        &e,
        None,
        &mut carry.aux,
        &mut carry.traces,
        &mut carry.pending,
        &mut None,
    );
    assert!(matches!(res, Err(Error::Contract(_))));
    let res = m.oracle_aux_forward(
        &mut g,
        &p,
        &e,
        Some(TraceFeed::SelfPredicted),
        &mut carry.aux,
        &mut carry.traces,
        &mut carry.pending,
        &mut None,
    );
    assert!(matches!(res, Err(Error::Contract(_))));
}

#[test]
fn no_trace_ablation_matches_zero_trace_with_weights_removed() {
    let full = model(HeadKind::Q, 9);
    let mut cfg = tiny(HeadKind::Q);
    cfg.use_trace = false;
    // copy every parameter, dropping the trace rows of the first aux layer
    let k = 3;
    let tensors: Vec<Tensor> = full
        .params()
        .iter()
        .map(|p| {
            if p.name == "aux.lstm0.weight" {
                let cols = p.value.shape()[1];
                let mut data = p.value.data()[..8 * cols].to_vec();
                data.extend_from_slice(&p.value.data()[(8 + k) * cols..]);
                Tensor::new(vec![16, cols], data).unwrap()
            } else {
                p.value.clone()
            }
        })
        .collect();
    let ablated = PrlModel::from_params(cfg, tensors).unwrap();
    let batch = random_batch(2, 4, 1);

    let mut g = Graph::new();
    let p = ablated.bind(&mut g, &[ParamGroup::Encoder, ParamGroup::Aux], &[]);
    let e = ablated.encode(&mut g, &p, &batch.inputs, 2, 4).unwrap();
    let mut c = Carry::new(&ablated, 2).unwrap();
    let out = ablated
        .aux_forward(
            &mut g,
            &p,
            &e,
            None,
            &mut c.aux,
            &mut c.traces,
            &mut c.pending,
            &mut None,
        )
        .unwrap();
    let a: Vec<f64> = out
        .r
        .iter()
        .flat_map(|v| g.value(*v).data().to_vec())
        .collect();

    // zero trace: gamma 0 traces of a model that never observes anything
    let mut g2 = Graph::new();
    let p2 = full.bind(&mut g2, &[ParamGroup::Encoder, ParamGroup::Aux], &[]);
    let e2 = full.encode(&mut g2, &p2, &batch.inputs, 2, 4).unwrap();
    let mut c2 = Carry::new(&full, 2).unwrap();
    let mut pending = vec![None; 2];
    // self mode with a pending slot that is reset every step never observes a label
    let mut r = Vec::new();
    for (t, x) in e2.iter().enumerate() {
        pending.iter_mut().for_each(|p| *p = None);
        let out = full
            .aux_forward(
                &mut g2,
                &p2,
                std::slice::from_ref(x),
                Some(TraceFeed::SelfPredicted),
                &mut c2.aux,
                &mut c2.traces,
                &mut pending,
                &mut None,
            )
            .unwrap();
        assert!(
            c2.traces
                .iter()
                .all(|tr| tr.values().iter().all(|v| *v == 0.0)),
            "step {t}"
        );
        r.extend(g2.value(out.r[0]).data().to_vec());
    }
    assert_eq!(a.len(), r.len());
    for (x, y) in a.iter().zip(&r) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn vocab_tags() -> (Vocab, TagSet) {
    let vocab = Vocab::from_tokens((0..9).map(|i| format!("w{i}")).collect()).unwrap();
    let tags = TagSet::from_tags(vec!["A".into(), "B".into()]).unwrap();
    (vocab, tags)
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (vocab, tags) = vocab_tags();
    for head in [HeadKind::None, HeadKind::P, HeadKind::Q] {
        let m = model(head, 3);
        let mut ck = Checkpoint::new(m.clone(), vocab.clone(), tags.clone()).unwrap();
        ck.hyper = serde_json::json!({"lr": 1.0});
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.prl");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let batch = random_batch(2, 3, 1);
        let a = lm_logits(&m, &batch, &mut Carry::new(&m, 2).unwrap());
        let b = lm_logits(
            &back.model,
            &batch,
            &mut Carry::new(&back.model, 2).unwrap(),
        );
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn checkpoint_errors_are_distinct() {
    let (vocab, tags) = vocab_tags();
    let ck = Checkpoint::new(model(HeadKind::Q, 1), vocab, tags).unwrap();
    let bytes = ck.to_bytes().unwrap();

    for cut in [0, 3, 10, 20, bytes.len() / 2, bytes.len() - 1] {
        let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(
            matches!(err, Error::Checkpoint(CheckpointError::Truncated { .. })),
            "cut {cut}: {err}"
        );
    }
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(Error::Checkpoint(CheckpointError::Version { found: 9, .. }))
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(Error::Checkpoint(CheckpointError::BadMagic(_)))
    ));
    let mut bad = bytes.clone();
    bad.push(0);
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(Error::Checkpoint(CheckpointError::Trailing(1)))
    ));
    let mut bad = bytes.clone();
    let n = bad.len();
    bad[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(matches!(
        Checkpoint::from_bytes(&bad),
        Err(Error::Checkpoint(CheckpointError::NonFinite(_)))
    ));

    // a header whose shapes disagree with its config
    let start = bytes
        .windows(7)
        .position(|w| w == b"[19,32]")
        .expect("aux layer 0 shape in header");
    let mut bad = bytes.clone();
    bad[start..start + 7].copy_from_slice(b"[18,32]");
    let err = Checkpoint::from_bytes(&bad).unwrap_err();
    assert!(
        matches!(err, Error::Checkpoint(CheckpointError::Shape { .. })),
        "{err}"
    );
}

#[test]
fn head_mismatch_on_load_is_schema_error() {
    let (vocab, tags) = vocab_tags();
    let m = PrlModel::new(
        ModelConfig {
            vocab_size: 11,
            num_tags: 3,
            ..tiny(HeadKind::Q)
        },
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.prl");
    Checkpoint::new(m, vocab, tags)
        .unwrap()
        .save(&path)
        .unwrap();
    let expect = tiny(HeadKind::P);
    assert!(matches!(
        Checkpoint::load_with_config(&path, &expect),
        Err(Error::Schema(_))
    ));
    assert!(Checkpoint::load_with_config(&path, &tiny(HeadKind::Q)).is_ok());
}

#[test]
fn baseline_has_no_aux_parameters() {
    let m = model(HeadKind::None, 0);
    assert!(m.params().iter().all(|p| p.group != ParamGroup::Aux));
    let mut g = Graph::new();
    let p = m.bind(&mut g, &[ParamGroup::Encoder, ParamGroup::Aux], &[]);
    let e = m.encode(&mut g, &p, &[1], 1, 1).unwrap();
    let mut c = Carry::new(&m, 1).unwrap();
    assert!(m
        .aux_forward(
            &mut g,
            &p,
            &e,
            None,
            &mut c.aux,
            &mut c.traces,
            &mut c.pending,
            &mut None
        )
        .is_err());
}
