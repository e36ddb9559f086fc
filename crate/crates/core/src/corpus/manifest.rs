use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::resample::resample_8k_to_16k;
use super::segment::{cut_segment, Segment, SegmentLimits};
use super::transcript::{parse_transcript, TransmissionRecord};
use super::wav::{read_wav, write_wav, AudioBuffer, WavError};
use crate::textnorm::{is_normalized, is_unintelligible, normalize_with, NormalizeOptions};

/// Segment audio lives in this directory next to the manifest.
pub const SEGMENT_DIR: &str = "segments";

/// One curated data point. Field order is the manifest's key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub audio_path: String,
    pub start_s: f64,
    pub end_s: f64,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub text_raw: String,
    pub text_norm: String,
}

impl ManifestEntry {
    pub fn validate(&self) -> Result<(), String> {
        if !(5.0..=30.0).contains(&self.duration_s) {
            return Err(format!("{}: duration {} s outside [5, 30]", self.id, self.duration_s));
        }
        if self.sample_rate_hz != 16000 {
            return Err(format!("{}: sample rate {} Hz", self.id, self.sample_rate_hz));
        }
        if self.text_norm.is_empty() || !is_normalized(&self.text_norm) {
            return Err(format!("{}: text_norm is not normalized", self.id));
        }
        Ok(())
    }
}

/// Parses one manifest line, checking the entry invariants.
pub fn parse_manifest_line(line: &str) -> Result<ManifestEntry, String> {
    let e: ManifestEntry = serde_json::from_str(line).map_err(|e| e.to_string())?;
    e.validate()?;
    Ok(e)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub parsed: usize,
    pub kept: usize,
    pub dropped_unintelligible: usize,
    pub dropped_length: usize,
    pub errors: usize,
    pub error_messages: Vec<String>,
}

impl ManifestSummary {
    fn absorb(&mut self, other: ManifestSummary) {
        self.parsed += other.parsed;
        self.kept += other.kept;
        self.dropped_unintelligible += other.dropped_unintelligible;
        self.dropped_length += other.dropped_length;
        self.errors += other.errors;
        self.error_messages.extend(other.error_messages);
    }

    pub fn one_line(&self) -> String {
        format!(
            "parsed={} kept={} dropped_unintelligible={} dropped_length={} errors={}",
            self.parsed, self.kept, self.dropped_unintelligible, self.dropped_length, self.errors
        )
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("no audio file for transcript {transcript}: expected {expected}")]
    MissingAudio { transcript: String, expected: String },
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ManifestOptions {
    pub limits: SegmentLimits,
    pub normalize: NormalizeOptions,
}

pub fn entry_id(source_file: &str, record_index: usize) -> String {
    format!("{source_file}_{record_index:05}")
}

struct FileResult {
    summary: ManifestSummary,
    entries: Vec<(ManifestEntry, AudioBuffer)>,
}

fn process_file(transcript: &Path, audio_dir: &Path, opts: &ManifestOptions) -> Result<FileResult, ManifestError> {
    let stem = transcript.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
    let audio_path = audio_dir.join(format!("{stem}.wav"));
    if !audio_path.is_file() {
        return Err(ManifestError::MissingAudio {
            transcript: transcript.display().to_string(),
            expected: audio_path.display().to_string(),
        });
    }
    let text = fs::read_to_string(transcript).map_err(io_err(transcript))?;
    let audio = read_wav(&audio_path)?;
    let parsed = parse_transcript(&text, &stem);

    let mut summary = ManifestSummary {
        parsed: parsed.attempted(),
        errors: parsed.errors.len(),
        error_messages: parsed.errors.iter().map(ToString::to_string).collect(),
        ..Default::default()
    };
    let mut entries = Vec::new();
    for record in &parsed.records {
        match curate(record, &audio, opts) {
            Curated::Kept(entry, seg) => {
                summary.kept += 1;
                entries.push((entry, seg));
            }
            Curated::Unintelligible => summary.dropped_unintelligible += 1,
            Curated::Length => summary.dropped_length += 1,
            Curated::Error(msg) => {
                summary.errors += 1;
                summary.error_messages.push(format!("{stem}#{}: {msg}", record.record_index));
            }
        }
    }
    Ok(FileResult { summary, entries })
}

enum Curated {
    Kept(ManifestEntry, AudioBuffer),
    Unintelligible,
    Length,
    Error(String),
}

fn curate(record: &TransmissionRecord, audio: &AudioBuffer, opts: &ManifestOptions) -> Curated {
    if is_unintelligible(&record.text_raw) {
        return Curated::Unintelligible;
    }
    let text_norm = match normalize_with(&record.text_raw, opts.normalize) {
        Ok(t) => t,
        Err(e) => return Curated::Error(e.to_string()),
    };
    let (seg, start_s, end_s) = match cut_segment(audio, record, opts.limits) {
        Ok(Segment::Cut { audio, start_s, end_s }) => (audio, start_s, end_s),
        Ok(Segment::Skipped(_)) => return Curated::Length,
        Err(e) => return Curated::Error(e.to_string()),
    };
    let seg = if seg.sample_rate_hz == 8000 {
        resample_8k_to_16k(&seg).expect("8 kHz input")
    } else {
        seg
    };
    let id = entry_id(&record.source_file, record.record_index);
    let entry = ManifestEntry {
        audio_path: format!("{SEGMENT_DIR}/{id}.wav"),
        id,
        start_s,
        end_s,
        duration_s: seg.duration_s(),
        sample_rate_hz: seg.sample_rate_hz,
        text_raw: record.text_raw.clone(),
        text_norm: text_norm.into_string(),
    };
    Curated::Kept(entry, seg)
}

fn transcript_files(dir: &Path) -> Result<Vec<PathBuf>, ManifestError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

/// Parses every `*.txt` transcript in `transcript_dir`, cuts and resamples
/// the matching `<stem>.wav` from `audio_dir`, and writes a JSON-lines
/// manifest to `out_path` plus 16 kHz segment files under
/// `segments/` beside it. Output is ordered by file name then record.
pub fn build_manifest(
    transcript_dir: &Path,
    audio_dir: &Path,
    out_path: &Path,
    opts: &ManifestOptions,
) -> Result<ManifestSummary, ManifestError> {
    let files = transcript_files(transcript_dir)?;
    let results: Vec<FileResult> = files
        .par_iter()
        .map(|f| process_file(f, audio_dir, opts))
        .collect::<Result<_, _>>()?;

    let out_dir = out_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let seg_dir = out_dir.join(SEGMENT_DIR);
    let mut manifest = Vec::new();
    let mut summary = ManifestSummary::default();
    for r in results {
        if !r.entries.is_empty() {
            fs::create_dir_all(&seg_dir).map_err(io_err(&seg_dir))?;
        }
        for (entry, seg) in &r.entries {
            write_wav(out_dir.join(&entry.audio_path), seg)?;
            serde_json::to_writer(&mut manifest, entry).expect("serializable");
            manifest.push(b'\n');
        }
        summary.absorb(r.summary);
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    fs::File::create(out_path)
        .and_then(|mut f| f.write_all(&manifest))
        .map_err(io_err(out_path))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_line_validation() {
        let good = r#"{"id":"a_00000","audio_path":"segments/a_00000.wav","start_s":1.0,"end_s":7.0,"duration_s":6.0,"sample_rate_hz":16000,"text_raw":"Hold Short","text_norm":"hold short"}"#;
        assert!(parse_manifest_line(good).is_ok());
        assert!(parse_manifest_line(&good.replace("16000", "8000")).is_err());
        assert!(parse_manifest_line(&good.replace("\"duration_s\":6.0", "\"duration_s\":4.0")).is_err());
        assert!(parse_manifest_line(&good.replace("hold short\"", "Hold short\"")).is_err());
        assert!(parse_manifest_line(&good.replace("}", ",\"extra\":1}")).is_err());
        assert!(parse_manifest_line("not json").is_err());
    }

    #[test]
    fn key_order() {
        let e = ManifestEntry {
            id: "x".into(),
            audio_path: "segments/x.wav".into(),
            start_s: 0.0,
            end_s: 5.0,
            duration_s: 5.0,
            sample_rate_hz: 16000,
            text_raw: "a".into(),
            text_norm: "a".into(),
        };
        let v = serde_json::to_string(&e).unwrap();
        let order = ["id", "audio_path", "start_s", "end_s", "duration_s", "sample_rate_hz", "text_raw", "text_norm"];
        let positions: Vec<usize> = order.iter().map(|k| v.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{v}");
    }
}
