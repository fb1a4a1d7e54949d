#![no_main]

use holdlab_core::io::{read_event_log, write_event_log};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(events) = read_event_log(data) {
        let mut buf = Vec::new();
        write_event_log(&mut buf, &events).expect("event log writes");
        assert_eq!(read_event_log(&buf[..]).expect("written log parses"), events);
    }
});
