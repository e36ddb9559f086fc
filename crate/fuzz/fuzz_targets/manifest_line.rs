#![no_main]

use atclab::corpus::manifest::parse_manifest_line;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(entry) = parse_manifest_line(line) {
        let json = serde_json::to_string(&entry).unwrap();
        assert_eq!(parse_manifest_line(&json).unwrap(), entry);
    }
});
