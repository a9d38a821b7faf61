#![no_main]

use libfuzzer_sys::fuzz_target;
use prl_core::model::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::from_bytes(data) {
        let bytes = ck.to_bytes().expect("decoded checkpoint re-encodes");
        let again = Checkpoint::from_bytes(&bytes).expect("re-encoded checkpoint decodes");
        assert_eq!(again, ck);
    }
});
