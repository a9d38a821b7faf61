#![no_main]

use libfuzzer_sys::fuzz_target;
use prl_core::corpus::{generate_hmm_corpus, HmmSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(mut spec) = HmmSpec::from_json(text) else {
        return;
    };
    // keep sampling cheap
    spec.length = spec.length.min(64);
    if spec.states * spec.num_words() <= 4096 {
        let _ = generate_hmm_corpus(&spec);
    }
});
