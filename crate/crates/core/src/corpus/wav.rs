//! RIFF/WAVE reader and writer for 16-bit mono PCM.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt WAV header: {0}")]
    CorruptHeader(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Supported sample rates: 8 kHz source audio and 16 kHz model audio.
pub const SUPPORTED_RATES: [u32; 2] = [8000, 16000];

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    /// Samples in [-1, 1].
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        AudioBuffer { samples, sample_rate_hz }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes an in-memory WAV file. Unknown chunks are skipped; a data chunk
/// whose declared size overruns the file is truncated to whole frames.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer, WavError> {
    let corrupt = |m: &str| WavError::CorruptHeader(m.to_owned());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(corrupt("missing RIFF/WAVE signature"));
    }

    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(corrupt("fmt chunk too short"));
                }
                let mut tag = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if tag == WAVE_FORMAT_EXTENSIBLE {
                    if size < 40 || body + 26 > bytes.len() {
                        return Err(corrupt("extensible fmt chunk too short"));
                    }
                    tag = u16_at(bytes, body + 24);
                }
                format = Some((tag, channels, rate, bits));
            }
            b"data" => {
                let (tag, channels, rate, bits) = format.ok_or_else(|| corrupt("data chunk before fmt chunk"))?;
                if tag != WAVE_FORMAT_PCM {
                    return Err(WavError::UnsupportedFormat(format!("format tag {tag:#06x} is not PCM")));
                }
                if channels != 1 {
                    return Err(WavError::UnsupportedFormat(format!("{channels} channels, expected mono")));
                }
                if bits != 16 {
                    return Err(WavError::UnsupportedFormat(format!("{bits}-bit samples, expected 16-bit")));
                }
                if !SUPPORTED_RATES.contains(&rate) {
                    return Err(WavError::UnsupportedFormat(format!("sample rate {rate} Hz")));
                }
                let end = body.saturating_add(size).min(bytes.len());
                let data = &bytes[body..end];
                let samples = data
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return Ok(AudioBuffer { samples, sample_rate_hz: rate });
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body.saturating_add(size).saturating_add(size & 1);
    }
    Err(corrupt("no data chunk"))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, WavError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WavError::Io { path: path.display().to_string(), source })?;
    decode_wav(&bytes)
}

/// Encodes as 16-bit mono PCM. Samples are clamped to [-1, 1] and scaled by
/// 32768 with rounding, saturating at 32767.
pub fn encode_wav(audio: &AudioBuffer) -> Vec<u8> {
    let data_len = audio.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<(), WavError> {
    let path = path.as_ref();
    fs::write(path, encode_wav(audio)).map_err(|source| WavError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(tag: u16, channels: u16, rate: u32, bits: u16, data_len: u32) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data_len).to_le_bytes());
        b.extend_from_slice(b"WAVE");
        b.extend_from_slice(b"fmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&tag.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * channels as u32 * bits as u32 / 8).to_le_bytes());
        b.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&data_len.to_le_bytes());
        b
    }

    #[test]
    fn frame_count_and_scaling() {
        let mut bytes = header(1, 1, 8000, 16, 80_000 * 2);
        bytes.extend(std::iter::repeat_n([0xFF, 0x7F], 80_000).flatten());
        let a = decode_wav(&bytes).unwrap();
        assert_eq!(a.sample_rate_hz, 8000);
        assert_eq!(a.samples.len(), 80_000);
        assert_eq!(a.samples[0], 32767.0 / 32768.0);
        assert!((a.samples[0] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn rejects_unsupported() {
        let stereo = header(1, 2, 8000, 16, 0);
        assert!(matches!(decode_wav(&stereo), Err(WavError::UnsupportedFormat(_))));
        let float = header(3, 1, 8000, 32, 0);
        assert!(matches!(decode_wav(&float), Err(WavError::UnsupportedFormat(_))));
        let eight_bit = header(1, 1, 8000, 8, 0);
        assert!(matches!(decode_wav(&eight_bit), Err(WavError::UnsupportedFormat(_))));
        let odd_rate = header(1, 1, 44100, 16, 0);
        assert!(matches!(decode_wav(&odd_rate), Err(WavError::UnsupportedFormat(_))));
        assert!(matches!(decode_wav(b"RIFF"), Err(WavError::CorruptHeader(_))));
        assert!(matches!(decode_wav(&header(1, 1, 8000, 16, 0)[..36]), Err(WavError::CorruptHeader(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut bytes = header(1, 1, 16000, 16, 4);
        // splice a LIST chunk with odd size before data
        let data_at = bytes.len() - 8;
        let list = [b"LIST".as_slice(), &3u32.to_le_bytes(), &[1, 2, 3, 0]].concat();
        bytes.splice(data_at..data_at, list);
        bytes.extend_from_slice(&[0x00, 0x80, 0x00, 0x40]);
        let a = decode_wav(&bytes).unwrap();
        assert_eq!(a.samples, vec![-1.0, 0.5]);
    }

    #[test]
    fn encode_round_trip() {
        let a = AudioBuffer::new(vec![0.0, 0.5, -0.25, -1.0, 32767.0 / 32768.0], 16000);
        assert_eq!(decode_wav(&encode_wav(&a)).unwrap(), a);
    }
}
