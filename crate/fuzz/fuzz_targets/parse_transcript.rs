#![no_main]

use atclab::corpus::transcript::parse_transcript;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let out = parse_transcript(&text, "fuzz");
    for r in &out.records {
        assert!(r.start_s >= 0.0 && r.end_s > r.start_s);
        let again = parse_transcript(&r.to_grammar(), "fuzz");
        assert_eq!(again.records.len(), 1, "{}", r.to_grammar());
        assert_eq!(again.records[0].start_s, r.start_s);
        assert_eq!(again.records[0].end_s, r.end_s);
    }
});
