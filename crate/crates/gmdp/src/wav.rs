//! WAV read/write for 16-bit PCM and 32-bit float files, mono or
//! multichannel. Samples are exchanged as `f64` in [-1, 1].

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("wav {path}: {source}")]
    Backend { path: String, source: hound::Error },
    #[error("wav {path}: unsupported format ({bits} bit {format:?})")]
    UnsupportedFormat { path: String, bits: u16, format: SampleFormat },
    #[error("no channels to write")]
    NoChannels,
    #[error("channels have differing lengths")]
    ChannelLengthMismatch,
}

fn backend(path: &Path, source: hound::Error) -> WavError {
    WavError::Backend { path: path.display().to_string(), source }
}

/// Reads a WAV file, returning per-channel samples and the sample rate.
pub fn read_wav<P: AsRef<Path>>(path: P) -> Result<(Vec<Vec<f64>>, u32), WavError> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| backend(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let mut out = vec![Vec::new(); channels];
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => {
            for (i, sample) in reader.samples::<i16>().enumerate() {
                let sample = sample.map_err(|e| backend(path, e))?;
                out[i % channels].push(sample as f64 / 32768.0);
            }
        }
        (SampleFormat::Float, 32) => {
            for (i, sample) in reader.samples::<f32>().enumerate() {
                let sample = sample.map_err(|e| backend(path, e))?;
                out[i % channels].push(sample as f64);
            }
        }
        (format, bits) => {
            return Err(WavError::UnsupportedFormat {
                path: path.display().to_string(),
                bits,
                format,
            })
        }
    }
    Ok((out, spec.sample_rate))
}

/// Writes 32-bit float WAV. The preferred format for pipeline intermediates
/// since it avoids quantization.
pub fn write_wav_f32<P: AsRef<Path>>(
    path: P,
    channels: &[Vec<f64>],
    sample_rate: u32,
) -> Result<(), WavError> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: channel_count(channels)?,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| backend(path, e))?;
    for i in 0..channels[0].len() {
        for ch in channels {
            writer.write_sample(ch[i] as f32).map_err(|e| backend(path, e))?;
        }
    }
    writer.finalize().map_err(|e| backend(path, e))
}

/// Writes 16-bit PCM WAV; samples are clamped to [-1, 1] before quantization.
pub fn write_wav_i16<P: AsRef<Path>>(
    path: P,
    channels: &[Vec<f64>],
    sample_rate: u32,
) -> Result<(), WavError> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: channel_count(channels)?,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| backend(path, e))?;
    for i in 0..channels[0].len() {
        for ch in channels {
            let clamped = ch[i].clamp(-1.0, 1.0);
            let quantized = (clamped * 32768.0).round().clamp(-32768.0, 32767.0);
            writer
                .write_sample(quantized as i16)
                .map_err(|e| backend(path, e))?;
        }
    }
    writer.finalize().map_err(|e| backend(path, e))
}

fn channel_count(channels: &[Vec<f64>]) -> Result<u16, WavError> {
    if channels.is_empty() {
        return Err(WavError::NoChannels);
    }
    let len = channels[0].len();
    if channels.iter().any(|ch| ch.len() != len) {
        return Err(WavError::ChannelLengthMismatch);
    }
    Ok(channels.len() as u16)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trip_is_exact_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let left: Vec<f64> = (0..100).map(|i| ((i as f64) * 0.11).sin() * 0.8).collect();
        let right: Vec<f64> = (0..100).map(|i| ((i as f64) * 0.07).cos() * 0.5).collect();
        write_wav_f32(&path, &[left.clone(), right.clone()], 16_000).unwrap();
        let (channels, rate) = read_wav(&path).unwrap();
        assert_eq!(rate, 16_000);
        assert_eq!(channels.len(), 2);
        for (a, b) in left.iter().zip(&channels[0]) {
            assert_eq!(*a as f32, *b as f32);
        }
        for (a, b) in right.iter().zip(&channels[1]) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn i16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let mono: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.05).sin() * 0.9).collect();
        write_wav_i16(&path, &[mono.clone()], 8_000).unwrap();
        let (channels, rate) = read_wav(&path).unwrap();
        assert_eq!(rate, 8_000);
        for (a, b) in mono.iter().zip(&channels[0]) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn mismatched_channel_lengths_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let err = write_wav_f32(&path, &[vec![0.0; 10], vec![0.0; 9]], 16_000);
        assert!(matches!(err, Err(WavError::ChannelLengthMismatch)));
    }
}
