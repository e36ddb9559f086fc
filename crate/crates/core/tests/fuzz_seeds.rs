//! Replays the checked-in fuzz seeds through the same checks the fuzz
//! targets make, so the seeds stay meaningful without cargo-fuzz.

use std::fs;
use std::path::PathBuf;

use atclab::corpus::manifest::parse_manifest_line;
use atclab::corpus::synth::StreamRecord;
use atclab::corpus::transcript::parse_transcript;
use atclab::corpus::wav::{decode_wav, encode_wav};
use atclab::experiment::{aggregate, CampaignManifest, TrialResult};
use atclab::model::{Checkpoint, Vocab};
use atclab::textnorm::{is_normalized, normalize};
use atclab::training::Dataset;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn transcript_seeds() {
    let mut parsed = 0;
    for (name, bytes) in seeds("parse_transcript") {
        let out = parse_transcript(&String::from_utf8_lossy(&bytes), "fuzz");
        for r in &out.records {
            let again = parse_transcript(&r.to_grammar(), "fuzz");
            assert_eq!(again.records.len(), 1, "{name}");
            assert_eq!((again.records[0].start_s, again.records[0].end_s), (r.start_s, r.end_s), "{name}");
        }
        parsed += out.records.len();
    }
    assert!(parsed >= 3);
}

#[test]
fn wav_seeds() {
    let mut ok = Vec::new();
    for (name, bytes) in seeds("decode_wav") {
        if let Ok(audio) = decode_wav(&bytes) {
            assert_eq!(decode_wav(&encode_wav(&audio)).unwrap(), audio, "{name}");
            ok.push((name, audio.samples.len()));
        }
    }
    // a short data chunk yields the samples that are present
    let expected = [("silence_16k.wav", 16), ("sine_8k.wav", 64), ("truncated.wav", 3)];
    assert_eq!(ok, expected.map(|(n, l)| (n.to_owned(), l)));
}

#[test]
fn normalize_seeds() {
    for (name, bytes) in seeds("normalize") {
        let Ok(text) = std::str::from_utf8(&bytes) else { continue };
        if let Ok(n) = normalize(text) {
            assert!(is_normalized(n.as_str()), "{name}");
            assert_eq!(normalize(n.as_str()).as_ref(), Ok(&n), "{name}");
        }
    }
}

#[test]
fn manifest_line_seeds() {
    let results: Vec<_> = seeds("manifest_line")
        .into_iter()
        .map(|(_, b)| parse_manifest_line(std::str::from_utf8(&b).unwrap()))
        .collect();
    assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
    for e in results.into_iter().flatten() {
        assert_eq!(parse_manifest_line(&serde_json::to_string(&e).unwrap()).unwrap(), e);
    }
}

#[test]
fn checkpoint_seeds() {
    let mut loaded = 0;
    for (name, bytes) in seeds("checkpoint") {
        if let Ok(ckpt) = Checkpoint::from_bytes(&bytes) {
            let again = ckpt.to_bytes();
            assert_eq!(Checkpoint::from_bytes(&again).unwrap().to_bytes(), again, "{name}");
            loaded += 1;
        }
    }
    assert_eq!(loaded, 2);
}

#[test]
fn json_record_seeds() {
    for (name, bytes) in seeds("json_records") {
        let text = String::from_utf8(bytes).unwrap();
        let records: Vec<StreamRecord> = text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect();
        let results: Vec<TrialResult> = text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect();
        let manifest = serde_json::from_str::<CampaignManifest>(&text).ok();
        assert!(!records.is_empty() || !results.is_empty() || manifest.is_some(), "{name} parses as nothing");
        if !records.is_empty() {
            Dataset::from_records(&records, &Vocab::synthetic()).unwrap();
        }
        if !results.is_empty() {
            aggregate(&results).unwrap();
        }
        if let Some(m) = manifest {
            let _ = m.grid_spec();
        }
    }
}
