//! 2x upsampling, 8 kHz to 16 kHz.
//!
//! Zero insertion followed by a Hann-windowed sinc low-pass with its cutoff
//! at 4 kHz (half the output Nyquist). In polyphase form the even output
//! phase lands on the sinc's zero crossings and reduces to the input
//! samples; the odd phase is a 48-tap half-sample interpolator.

use std::f64::consts::PI;
use std::sync::OnceLock;

use thiserror::Error;

use super::wav::AudioBuffer;

pub const TAPS_PER_PHASE: usize = 48;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResampleError {
    #[error("expected 8000 Hz input, got {0} Hz")]
    WrongRate(u32),
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Odd-phase taps. Tap `k` weights input sample `n - 23 + k` when producing
/// output `2n + 1`, i.e. it sits at offset `k - 23.5` input samples.
fn odd_phase() -> &'static [f64; TAPS_PER_PHASE] {
    static TAPS: OnceLock<[f64; TAPS_PER_PHASE]> = OnceLock::new();
    TAPS.get_or_init(|| {
        let half = TAPS_PER_PHASE as f64 / 2.0;
        let mut taps = [0.0; TAPS_PER_PHASE];
        for (k, tap) in taps.iter_mut().enumerate() {
            let offset = k as f64 - (half - 0.5);
            // Hann window over the full 2*48-tap prototype, centred on the output sample
            let w = 0.5 * (1.0 + (PI * offset / (half + 0.5)).cos());
            *tap = sinc(offset) * w;
        }
        // unit DC gain
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        taps
    })
}

pub fn resample_8k_to_16k(audio: &AudioBuffer) -> Result<AudioBuffer, ResampleError> {
    if audio.sample_rate_hz != 8000 {
        return Err(ResampleError::WrongRate(audio.sample_rate_hz));
    }
    let x = &audio.samples;
    let n = x.len() as isize;
    let taps = odd_phase();
    let lead = (TAPS_PER_PHASE / 2 - 1) as isize;
    let mut out = Vec::with_capacity(x.len() * 2);
    for i in 0..n {
        out.push(x[i as usize].clamp(-1.0, 1.0));
        let mut acc = 0.0;
        for (k, &t) in taps.iter().enumerate() {
            let j = i - lead + k as isize;
            if (0..n).contains(&j) {
                acc += t * x[j as usize];
            }
        }
        out.push(acc.clamp(-1.0, 1.0));
    }
    Ok(AudioBuffer::new(out, 16000))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubles_length() {
        let a = AudioBuffer::new(vec![0.1; 800], 8000);
        let b = resample_8k_to_16k(&a).unwrap();
        assert_eq!(b.samples.len(), 1600);
        assert_eq!(b.sample_rate_hz, 16000);
    }

    #[test]
    fn preserves_dc() {
        let a = AudioBuffer::new(vec![0.5; 2000], 8000);
        let b = resample_8k_to_16k(&a).unwrap();
        let edge = 2 * TAPS_PER_PHASE;
        for &s in &b.samples[edge..b.samples.len() - edge] {
            assert!((s - 0.5).abs() < 1e-3, "{s}");
        }
    }

    #[test]
    fn wrong_rate() {
        let a = AudioBuffer::new(vec![0.0; 4], 16000);
        assert_eq!(resample_8k_to_16k(&a), Err(ResampleError::WrongRate(16000)));
    }

    #[test]
    fn clamps_output() {
        // an alternating full-scale signal overshoots after interpolation
        let a = AudioBuffer::new((0..200).map(|i| if i % 4 < 2 { 1.0 } else { -1.0 }).collect(), 8000);
        let b = resample_8k_to_16k(&a).unwrap();
        assert!(b.samples.iter().all(|s| (-1.0..=1.0).contains(s)));
    }
}
