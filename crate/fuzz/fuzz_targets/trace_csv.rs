#![no_main]

use holdlab_core::io::{read_trace, write_trace};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = read_trace(data) {
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).expect("trace writes");
        assert_eq!(read_trace(&buf[..]).expect("written trace parses"), trace);
    }
});
