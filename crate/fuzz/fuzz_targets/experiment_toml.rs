#![no_main]

use holdlab_harness::experiment::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let _ = ExperimentConfig::from_toml_str(data);
});
