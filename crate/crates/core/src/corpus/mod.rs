//! Vocabulary, tagged-corpus ingestion, BPTT batching and the synthetic HMM
//! corpus generator.

mod batch;
mod hmm;
mod tagged;
mod vocab;

pub use batch::{batchify, batchify_stream, min_stream_len, BatchPlan, BpttBatch};
pub use hmm::{
    disjoint_block_spec, generate_hmm_corpus, overlapping_block_spec, state_tag,
    sticky_transitions, word_token, HmmReport, HmmSpec,
};
pub use tagged::{load_conll, parse_conll, LoadOptions, RawSentence, TaggedCorpus};
pub use vocab::{build_vocab, TagSet, Vocab, EOS, EOS_TAG, UNK};
