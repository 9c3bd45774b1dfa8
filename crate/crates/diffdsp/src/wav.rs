//! Mono WAV input/output: 16- and 24-bit PCM plus 32-bit float. Float writes
//! round-trip bit-exactly (up to the f64 -> f32 narrowing on write); integer
//! writes are clamped and quantised to the nearest step.

use std::path::Path;

/// Sample encoding on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Pcm24,
    Float32,
}

#[derive(Debug, thiserror::Error)]
pub enum WavError {
    #[error(transparent)]
    Codec(#[from] hound::Error),
    #[error("expected mono audio, file has {0} channels")]
    NotMono(u16),
    #[error("unsupported sample encoding: {bits}-bit {format:?}")]
    UnsupportedEncoding { bits: u16, format: hound::SampleFormat },
}

/// A decoded mono file: samples in [-1, 1] scale and the stored rate.
#[derive(Debug, Clone, PartialEq)]
pub struct WavContents {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// Writes mono samples in the requested encoding.
pub fn wav_write(
    path: &Path,
    samples: &[f64],
    sample_rate: u32,
    format: WavFormat,
) -> Result<(), WavError> {
    let (bits, sample_format) = match format {
        WavFormat::Pcm16 => (16, hound::SampleFormat::Int),
        WavFormat::Pcm24 => (24, hound::SampleFormat::Int),
        WavFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: bits,
        sample_format,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    match format {
        WavFormat::Pcm16 => {
            let full = f64::from(i16::MAX);
            for &s in samples {
                writer.write_sample((s * full).round().clamp(i16::MIN.into(), full) as i16)?;
            }
        }
        WavFormat::Pcm24 => {
            let full = f64::from((1i32 << 23) - 1);
            let min = f64::from(-(1i32 << 23));
            for &s in samples {
                writer.write_sample((s * full).round().clamp(min, full) as i32)?;
            }
        }
        WavFormat::Float32 => {
            for &s in samples {
                writer.write_sample(s as f32)?;
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Reads a mono file, normalising integer formats by their full scale.
pub fn wav_read(path: &Path) -> Result<WavContents, WavError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(WavError::NotMono(spec.channels));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => {
            let scale = 1.0 / f64::from(i16::MAX);
            reader
                .samples::<i16>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<Result<Vec<f64>, _>>()?
        }
        (hound::SampleFormat::Int, 24) => {
            let scale = 1.0 / f64::from((1i32 << 23) - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<Result<Vec<f64>, _>>()?
        }
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<Vec<f64>, _>>()?,
        (format, bits) => return Err(WavError::UnsupportedEncoding { bits, format }),
    };
    Ok(WavContents { samples, sample_rate: spec.sample_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn float32_round_trip_is_bit_exact() {
        let dir = tempdir();
        let path = dir.join("f32.wav");
        let x = noise(4096, 1);
        wav_write(&path, &x, 44_100, WavFormat::Float32).unwrap();
        let back = wav_read(&path).unwrap();
        assert_eq!(back.sample_rate, 44_100);
        let narrowed: Vec<f64> = x.iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(back.samples, narrowed);
    }

    #[test]
    fn pcm16_round_trip_within_one_step() {
        let dir = tempdir();
        let path = dir.join("p16.wav");
        let x = noise(2048, 2);
        wav_write(&path, &x, 48_000, WavFormat::Pcm16).unwrap();
        let back = wav_read(&path).unwrap();
        assert_eq!(back.sample_rate, 48_000);
        let lsb = 1.0 / f64::from(i16::MAX);
        for (a, b) in x.iter().zip(&back.samples) {
            assert!((a - b).abs() <= lsb);
        }
    }

    #[test]
    fn pcm24_round_trip_within_one_step() {
        let dir = tempdir();
        let path = dir.join("p24.wav");
        let x = noise(2048, 3);
        wav_write(&path, &x, 22_050, WavFormat::Pcm24).unwrap();
        let back = wav_read(&path).unwrap();
        assert_eq!(back.sample_rate, 22_050);
        let lsb = 1.0 / f64::from((1i32 << 23) - 1);
        for (a, b) in x.iter().zip(&back.samples) {
            assert!((a - b).abs() <= lsb);
        }
    }

    #[test]
    fn out_of_range_samples_clamp_instead_of_wrapping() {
        let dir = tempdir();
        let path = dir.join("clip.wav");
        wav_write(&path, &[2.0, -2.0], 8_000, WavFormat::Pcm16).unwrap();
        let back = wav_read(&path).unwrap();
        assert!((back.samples[0] - 1.0).abs() < 1e-4);
        assert!((back.samples[1] + 1.0).abs() < 1.1e-4);
    }

    fn tempdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("diffdsp-wav-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
