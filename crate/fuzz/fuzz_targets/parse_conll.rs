#![no_main]

use libfuzzer_sys::fuzz_target;
use prl_core::corpus::{parse_conll, LoadOptions, TaggedCorpus};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(raw) = parse_conll(text) else { return };
    if let Ok(corpus) = TaggedCorpus::from_raw(&raw, &LoadOptions::default()) {
        assert_eq!(corpus.num_tokens(), raw.iter().map(Vec::len).sum::<usize>());
    }
});
