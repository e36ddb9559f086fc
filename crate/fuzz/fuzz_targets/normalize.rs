#![no_main]

use atclab::textnorm::{is_normalized, normalize};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(n) = normalize(text) {
        assert!(is_normalized(n.as_str()));
        assert_eq!(normalize(n.as_str()).as_ref(), Ok(&n));
    }
});
