#![no_main]

use atclab::corpus::wav::{decode_wav, encode_wav};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(audio) = decode_wav(data) {
        assert!(audio.samples.iter().all(|s| (-1.0..=1.0).contains(s)));
        let again = decode_wav(&encode_wav(&audio)).expect("re-encoded audio decodes");
        assert_eq!(again, audio);
    }
});
