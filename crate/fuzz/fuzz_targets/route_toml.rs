#![no_main]

use holdlab_core::sim::RouteSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(route) = RouteSpec::from_toml_str(data) {
        let again = RouteSpec::from_toml_str(&route.to_toml_string()).expect("serialized route parses");
        assert_eq!(again, route);
    }
});
