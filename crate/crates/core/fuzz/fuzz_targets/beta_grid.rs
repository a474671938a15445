#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(grid) = krfrl::harness::parse_beta_grid(text) {
            assert!(!grid.is_empty());
            assert!(grid.iter().all(|b| b.is_finite() && *b >= 0.0));
        }
    }
});
