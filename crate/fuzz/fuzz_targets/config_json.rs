#![no_main]

use libfuzzer_sys::fuzz_target;
use prl_core::eval::ExperimentSpec;
use prl_core::model::ModelConfig;
use prl_core::trainer::TrainConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = serde_json::from_slice::<TrainConfig>(data) {
        let _ = c.validate();
    }
    if let Ok(c) = serde_json::from_slice::<ModelConfig>(data) {
        let _ = c.validate();
    }
    let _ = serde_json::from_slice::<ExperimentSpec>(data);
});
