#![no_main]

use atclab::corpus::synth::StreamRecord;
use atclab::experiment::{CampaignManifest, TrialResult};
use atclab::model::Vocab;
use atclab::training::Dataset;
use libfuzzer_sys::fuzz_target;

// Stream records, campaign manifests and trial results all arrive as JSON.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let records: Vec<StreamRecord> = text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect();
    let _ = Dataset::from_records(&records, &Vocab::synthetic());
    if let Ok(m) = serde_json::from_str::<CampaignManifest>(text) {
        let _ = m.grid_spec();
    }
    let results: Vec<TrialResult> = text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect();
    if !results.is_empty() {
        let _ = atclab::experiment::aggregate(&results);
    }
});
