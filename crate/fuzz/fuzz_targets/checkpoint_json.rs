#![no_main]

use holdlab_harness::experiment::learner_from_json;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(learner) = learner_from_json(data) {
        let again = learner_from_json(&learner.to_json()).expect("serialized checkpoint parses");
        assert_eq!(again.to_json(), learner.to_json());
    }
});
