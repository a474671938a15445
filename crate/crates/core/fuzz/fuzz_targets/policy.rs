#![no_main]
use libfuzzer_sys::fuzz_target;

// First byte picks the action count, the rest is the policy text.
fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    if let Ok(text) = std::str::from_utf8(rest) {
        if let Ok(policy) = krfrl::Policy::from_text(text, n as usize) {
            let again = krfrl::Policy::from_text(&policy.to_text(), n as usize).unwrap();
            assert_eq!(again, policy);
        }
    }
});
