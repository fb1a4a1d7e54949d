#![no_main]

use holdlab_core::io::{read_passengers, write_passengers};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(passengers) = read_passengers(data) {
        let mut buf = Vec::new();
        write_passengers(&mut buf, &passengers).expect("passenger log writes");
        assert_eq!(read_passengers(&buf[..]).expect("written log parses"), passengers);
    }
});
