//! Transcript parsing, audio segmentation and resampling, manifest
//! assembly, and the synthetic corpus generator.

pub mod manifest;
pub mod resample;
pub mod segment;
pub mod synth;
pub mod transcript;
pub mod wav;

pub use manifest::{build_manifest, parse_manifest_line, ManifestEntry, ManifestError, ManifestOptions, ManifestSummary};
pub use resample::{resample_8k_to_16k, ResampleError};
pub use segment::{cut_segment, Segment, SegmentError, SegmentLimits, ShortPolicy, SkipReason};
pub use synth::{synth_corpus, ChannelProfile, Domain, StreamRecord, SynthCorpus};
pub use transcript::{parse_transcript, MalformedRecord, ParseOutcome, TransmissionRecord};
pub use wav::{decode_wav, encode_wav, read_wav, write_wav, AudioBuffer, WavError};
