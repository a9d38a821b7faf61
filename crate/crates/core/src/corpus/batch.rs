//! Continuous-stream BPTT batching. The sentence stream is cut into `B`
//! contiguous streams; batch `k` holds window `k` of every stream, so hidden
//! and trace state can be carried from one batch to the next.

use super::tagged::TaggedCorpus;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BpttBatch {
    pub batch_size: usize,
    pub bptt_len: usize,
    /// `[B×L]`, row per stream.
    pub inputs: Vec<usize>,
    /// Stream successor of each input.
    pub targets: Vec<usize>,
    /// Tag of each input token.
    pub input_tags: Vec<usize>,
    /// Tag of each target token, i.e. the next word's tag.
    pub target_tags: Vec<usize>,
    /// Per stream: carried state must be reset before this batch.
    pub reset: Vec<bool>,
}

impl BpttBatch {
    pub fn idx(&self, b: usize, t: usize) -> usize {
        b * self.bptt_len + t
    }

    /// Column `t` across all streams.
    pub fn column(v: &[usize], batch_size: usize, bptt_len: usize, t: usize) -> Vec<usize> {
        (0..batch_size).map(|b| v[b * bptt_len + t]).collect()
    }

    /// Values in time-major order (row `t·B + b`), matching stacked per-step outputs.
    pub fn time_major(&self, v: &[usize]) -> Vec<usize> {
        (0..self.bptt_len)
            .flat_map(|t| (0..self.batch_size).map(move |b| (b, t)))
            .map(|(b, t)| v[self.idx(b, t)])
            .collect()
    }
}

/// Batches in stream order, plus bookkeeping about what was consumed.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    pub batches: Vec<BpttBatch>,
    pub batch_size: usize,
    pub bptt_len: usize,
    /// Length of each of the `B` streams.
    pub stream_len: usize,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, BpttBatch> {
        self.batches.iter()
    }

    /// Input positions covered by the batches: `B·L·num_batches`.
    pub fn consumed(&self) -> usize {
        self.batch_size * self.bptt_len * self.batches.len()
    }
}

/// Token count of the flattened stream needed for one batch.
pub fn min_stream_len(batch_size: usize, bptt_len: usize) -> usize {
    batch_size * (bptt_len + 1)
}

pub fn batchify(corpus: &TaggedCorpus, batch_size: usize, bptt_len: usize) -> Result<BatchPlan> {
    let (words, tags) = corpus.stream();
    batchify_stream(&words, &tags, batch_size, bptt_len)
}

pub fn batchify_stream(
    words: &[usize],
    tags: &[usize],
    batch_size: usize,
    bptt_len: usize,
) -> Result<BatchPlan> {
    if batch_size == 0 || bptt_len == 0 {
        return Err(Error::Input(
            "batch size and BPTT length must be positive".into(),
        ));
    }
    if words.len() != tags.len() {
        return Err(Error::dim("batchify", &[words.len()], &[tags.len()]));
    }
    if words.len() < min_stream_len(batch_size, bptt_len) {
        return Err(Error::Input(format!(
            "stream of {} tokens is too small for batch size {batch_size} and BPTT length {bptt_len} (need {})",
            words.len(),
            min_stream_len(batch_size, bptt_len)
        )));
    }
    let stream_len = words.len() / batch_size;
    let num_batches = (stream_len - 1) / bptt_len;
    let mut batches = Vec::with_capacity(num_batches);
    for k in 0..num_batches {
        let n = batch_size * bptt_len;
        let mut batch = BpttBatch {
            batch_size,
            bptt_len,
            inputs: Vec::with_capacity(n),
            targets: Vec::with_capacity(n),
            input_tags: Vec::with_capacity(n),
            target_tags: Vec::with_capacity(n),
            reset: vec![k == 0; batch_size],
        };
        for b in 0..batch_size {
            let start = b * stream_len + k * bptt_len;
            batch
                .inputs
                .extend_from_slice(&words[start..start + bptt_len]);
            batch
                .targets
                .extend_from_slice(&words[start + 1..start + bptt_len + 1]);
            batch
                .input_tags
                .extend_from_slice(&tags[start..start + bptt_len]);
            batch
                .target_tags
                .extend_from_slice(&tags[start + 1..start + bptt_len + 1]);
        }
        batches.push(batch);
    }
    Ok(BatchPlan {
        batches,
        batch_size,
        bptt_len,
        stream_len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shift_by_one_single_stream() {
        let w: Vec<usize> = (1..=7).collect();
        let plan = batchify_stream(&w, &w, 1, 3).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(plan.batches[0].inputs, vec![1, 2, 3]);
        assert_eq!(plan.batches[0].targets, vec![2, 3, 4]);
        assert_eq!(plan.batches[1].inputs, vec![4, 5, 6]);
        assert_eq!(plan.batches[1].targets, vec![5, 6, 7]);
        assert_eq!(plan.batches[0].reset, vec![true]);
        assert_eq!(plan.batches[1].reset, vec![false]);
        assert_eq!(plan.consumed(), 6);
    }

    #[test]
    fn too_small_is_an_error() {
        let w = vec![0; 7];
        assert!(matches!(
            batchify_stream(&w, &w, 2, 3),
            Err(Error::Input(_))
        ));
        assert!(batchify_stream(&w, &w, 0, 3).is_err());
    }

    #[test]
    fn time_major_order() {
        let w: Vec<usize> = (0..20).collect();
        let plan = batchify_stream(&w, &w, 2, 3).unwrap();
        let b = &plan.batches[0];
        // streams are 0..10 and 10..20
        assert_eq!(b.time_major(&b.inputs), vec![0, 10, 1, 11, 2, 12]);
        assert_eq!(BpttBatch::column(&b.inputs, 2, 3, 1), vec![1, 11]);
    }

    proptest! {
        #[test]
        fn targets_are_successors_with_their_tags(
            n in 10usize..400,
            bsz in 1usize..6,
            len in 1usize..9,
            seed in any::<u64>(),
        ) {
            prop_assume!(n >= bsz * (len + 1));
            let words: Vec<usize> = (0..n).map(|i| ((i as u64).wrapping_mul(seed | 1) % 97) as usize).collect();
            let tags: Vec<usize> = words.iter().map(|w| w % 5).collect();
            let plan = batchify_stream(&words, &tags, bsz, len).unwrap();
            let stream_len = n / bsz;
            prop_assert_eq!(plan.len(), (stream_len - 1) / len);
            for (k, batch) in plan.iter().enumerate() {
                for b in 0..bsz {
                    for t in 0..len {
                        let pos = b * stream_len + k * len + t;
                        let i = batch.idx(b, t);
                        prop_assert_eq!(batch.inputs[i], words[pos]);
                        prop_assert_eq!(batch.targets[i], words[pos + 1]);
                        prop_assert_eq!(batch.target_tags[i], tags[pos + 1]);
                        prop_assert_eq!(batch.input_tags[i], tags[pos]);
                    }
                }
            }
        }
    }
}
