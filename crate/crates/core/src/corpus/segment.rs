use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::transcript::TransmissionRecord;
use super::wav::AudioBuffer;

pub const MIN_SEGMENT_S: f64 = 5.0;
pub const MAX_SEGMENT_S: f64 = 30.0;
/// Records may run past the end of the recording by less than this.
pub const END_TOLERANCE_S: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShortPolicy {
    /// Extend short spans with neighbouring source audio.
    #[default]
    Pad,
    Drop,
}

impl std::str::FromStr for ShortPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pad" => Ok(ShortPolicy::Pad),
            "drop" => Ok(ShortPolicy::Drop),
            other => Err(format!("unknown short policy {other:?} (expected pad or drop)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipReason {
    TooLong,
    TooShort,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Cut {
        audio: AudioBuffer,
        /// Window actually extracted, after clamping and padding.
        start_s: f64,
        end_s: f64,
    },
    Skipped(SkipReason),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentError {
    #[error("record {start_s}-{end_s} s lies beyond the {duration_s} s recording")]
    OutOfBounds { start_s: f64, end_s: f64, duration_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentLimits {
    pub min_s: f64,
    pub max_s: f64,
    pub short_policy: ShortPolicy,
}

impl Default for SegmentLimits {
    fn default() -> Self {
        SegmentLimits { min_s: MIN_SEGMENT_S, max_s: MAX_SEGMENT_S, short_policy: ShortPolicy::Pad }
    }
}

/// Cuts `[start_s, end_s)` out of `audio`.
///
/// Spans shorter than `min_s` are extended with the audio that follows
/// them, then with the audio before them once the recording ends. Spans
/// longer than `max_s` are skipped.
pub fn cut_segment(
    audio: &AudioBuffer,
    record: &TransmissionRecord,
    limits: SegmentLimits,
) -> Result<Segment, SegmentError> {
    let rate = audio.sample_rate_hz as f64;
    let total = audio.samples.len();
    let duration_s = audio.duration_s();
    if record.end_s >= duration_s + END_TOLERANCE_S || record.start_s >= duration_s + END_TOLERANCE_S {
        return Err(SegmentError::OutOfBounds { start_s: record.start_s, end_s: record.end_s, duration_s });
    }
    let to_index = |t: f64| ((t * rate).round() as usize).min(total);
    let mut start = to_index(record.start_s);
    let mut end = to_index(record.end_s);

    let max_len = (limits.max_s * rate).round() as usize;
    let min_len = (limits.min_s * rate).round() as usize;
    if end - start > max_len {
        return Ok(Segment::Skipped(SkipReason::TooLong));
    }
    if end - start < min_len {
        if limits.short_policy == ShortPolicy::Drop || total < min_len {
            return Ok(Segment::Skipped(SkipReason::TooShort));
        }
        end = (start + min_len).min(total);
        start = end - min_len;
    }
    Ok(Segment::Cut {
        audio: AudioBuffer::new(audio.samples[start..end].to_vec(), audio.sample_rate_hz),
        start_s: start as f64 / rate,
        end_s: end as f64 / rate,
    })
}
