#![no_main]

use holdlab_core::neural::ParameterSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(params) = ParameterSet::from_json(data) {
        let again = ParameterSet::from_json(&params.to_json()).expect("serialized parameters parse");
        assert!(again == params);
    }
});
