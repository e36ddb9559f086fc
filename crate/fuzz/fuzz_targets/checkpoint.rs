#![no_main]

use atclab::model::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        // compare bytes, since stored tensors may hold NaN
        let bytes = ckpt.to_bytes();
        let again = Checkpoint::from_bytes(&bytes).expect("re-serialized checkpoint loads");
        assert_eq!(again.to_bytes(), bytes);
        let _ = ckpt.into_model();
    }
});
