#![no_main]
use libfuzzer_sys::fuzz_target;
use krfrl::harness::{parse_aggregates, parse_records, parse_summary};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_records(text);
        let _ = parse_aggregates(text);
        let _ = parse_summary(text);
    }
});
