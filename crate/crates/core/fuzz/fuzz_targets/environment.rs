#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(mdp) = krfrl::harness::parse_environment(text) {
            // A parsed environment must be a valid MDP.
            assert!(mdp.horizon() > 0);
            for row in mdp.transition_table().chunks_exact(mdp.n_states()) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
});
