//! Multi-channel waveform container and WAV file I/O.
//!
//! WAV support covers RIFF linear PCM with 16- or 32-bit integer samples and
//! any channel count. Integer samples map to `[-1, 1)` by dividing by
//! `2^(bits-1)`; writing rounds back to the same grid, so waveforms whose
//! samples already sit on the grid round-trip bit-exactly.

use std::path::Path;

use crate::error::{Error, Result};

/// C-channel sampled audio. All channels have identical length.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelWaveform {
    sample_rate: u32,
    samples: Vec<Vec<f64>>,
}

impl MultichannelWaveform {
    pub fn new(sample_rate: u32, samples: Vec<Vec<f64>>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidShape("sample_rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidShape("need at least one channel".into()));
        }
        let len = samples[0].len();
        if samples.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidShape(
                "all channels must have identical length".into(),
            ));
        }
        Ok(Self {
            sample_rate,
            samples,
        })
    }

    /// All-zero waveform with `channels` channels of `len` samples.
    pub fn zeros(sample_rate: u32, channels: usize, len: usize) -> Result<Self> {
        Self::new(sample_rate, vec![vec![0.0; len]; channels])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channels(&self) -> usize {
        self.samples.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.samples[index]
    }

    pub fn channel_mut(&mut self, index: usize) -> &mut Vec<f64> {
        &mut self.samples[index]
    }

    pub fn channels_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.iter().map(|c| c.as_slice())
    }

    /// Snap every sample to the integer PCM grid of the given bit depth,
    /// clamping to `[-1, 1)`. Writing the result to WAV and reading it back
    /// reproduces it bit-exactly.
    pub fn quantized(&self, bits: u16) -> Result<Self> {
        let scale = pcm_scale(bits)?;
        let samples = self
            .samples
            .iter()
            .map(|ch| {
                ch.iter()
                    .map(|&s| quantize_sample(s, scale) as f64 / scale)
                    .collect()
            })
            .collect();
        Self::new(self.sample_rate, samples)
    }
}

fn pcm_scale(bits: u16) -> Result<f64> {
    match bits {
        16 => Ok(32768.0),
        32 => Ok(2147483648.0),
        other => Err(Error::UnsupportedEncoding(format!(
            "{other}-bit integer PCM (supported: 16, 32)"
        ))),
    }
}

fn quantize_sample(s: f64, scale: f64) -> i64 {
    let max = scale - 1.0;
    (s * scale).round().clamp(-scale, max) as i64
}

/// Read a linear-PCM WAV file into a waveform with amplitudes in `[-1, 1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelWaveform> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(&display, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::UnsupportedEncoding(
            "float-encoded wav; only integer PCM is supported".into(),
        ));
    }
    let scale = pcm_scale(spec.bits_per_sample)?;
    let channels = spec.channels as usize;

    let mut samples = vec![Vec::new(); channels];
    for (k, s) in reader.samples::<i32>().enumerate() {
        let s = s.map_err(|e| map_hound(&display, e))?;
        samples[k % channels].push(s as f64 / scale);
    }
    if samples[0].is_empty() {
        return Err(Error::EmptyWaveform);
    }
    let len = samples[0].len();
    if samples.iter().any(|c| c.len() != len) {
        return Err(Error::WavFormat(format!(
            "{display}: sample count is not a multiple of the channel count"
        )));
    }
    MultichannelWaveform::new(spec.sample_rate, samples)
}

/// Write a waveform as integer linear PCM (16 or 32 bits per sample).
/// Samples are rounded to the PCM grid and clamped to `[-1, 1)`.
pub fn write_wav(waveform: &MultichannelWaveform, path: impl AsRef<Path>, bits: u16) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let scale = pcm_scale(bits)?;
    let spec = hound::WavSpec {
        channels: waveform.channels() as u16,
        sample_rate: waveform.sample_rate(),
        bits_per_sample: bits,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(&display, e))?;
    for t in 0..waveform.len() {
        for ch in &waveform.samples {
            let q = quantize_sample(ch[t], scale);
            match bits {
                16 => writer
                    .write_sample(q as i16)
                    .map_err(|e| map_hound(&display, e))?,
                _ => writer
                    .write_sample(q as i32)
                    .map_err(|e| map_hound(&display, e))?,
            }
        }
    }
    writer.finalize().map_err(|e| map_hound(&display, e))
}

fn map_hound(path: &str, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(msg) => Error::WavFormat(format!("{path}: {msg}")),
        hound::Error::Unsupported => {
            Error::UnsupportedEncoding(format!("{path}: compressed or non-PCM encoding"))
        }
        other => Error::WavFormat(format!("{path}: {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_16_bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let ch0: Vec<f64> = (-4i32..4).map(|k| k as f64 * 100.0 / 32768.0).collect();
        let ch1: Vec<f64> = (0i32..8).map(|k| k as f64 * 250.0 / 32768.0).collect();
        let w = MultichannelWaveform::new(8000, vec![ch0, ch1]).unwrap();
        let path = dir.path().join("rt16.wav");
        write_wav(&w, &path, 16).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(w, r);
    }

    #[test]
    fn header_fields_survive() {
        let dir = tempfile::tempdir().unwrap();
        let w = MultichannelWaveform::zeros(24000, 4, 2400).unwrap();
        let path = dir.path().join("hdr.wav");
        write_wav(&w, &path, 32).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.sample_rate(), 24000);
        assert_eq!(r.channels(), 4);
        assert_eq!(r.len(), 2400);
    }

    #[test]
    fn minute_long_recording_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let w = MultichannelWaveform::zeros(24000, 4, 1_440_000).unwrap();
        let path = dir.path().join("minute.wav");
        write_wav(&w, &path, 16).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.channels(), 4);
        assert_eq!(r.len(), 1_440_000);
        assert!((r.duration_seconds() - 60.0).abs() < 1e-12);
    }

    #[test]
    fn empty_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let w = MultichannelWaveform::new(8000, vec![vec![]]).unwrap();
        let path = dir.path().join("empty.wav");
        write_wav(&w, &path, 16).unwrap();
        match read_wav(&path) {
            Err(Error::EmptyWaveform) => {}
            other => panic!("expected EmptyWaveform, got {other:?}"),
        }
    }

    #[test]
    fn garbage_header_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("garbage.wav");
        std::fs::write(&path, b"not a riff file at all............").unwrap();
        match read_wav(&path) {
            Err(Error::WavFormat(_)) => {}
            other => panic!("expected WavFormat, got {other:?}"),
        }
    }

    #[test]
    fn float_wav_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("float.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut wr = hound::WavWriter::create(&path, spec).unwrap();
        wr.write_sample(0.5f32).unwrap();
        wr.finalize().unwrap();
        match read_wav(&path) {
            Err(Error::UnsupportedEncoding(_)) => {}
            other => panic!("expected UnsupportedEncoding, got {other:?}"),
        }
    }

    #[test]
    fn quantized_is_write_read_fixed_point() {
        let dir = tempfile::tempdir().unwrap();
        let ch: Vec<f64> = (0..64).map(|k| ((k * 37) as f64).sin() * 0.8).collect();
        let w = MultichannelWaveform::new(16000, vec![ch]).unwrap();
        let q = w.quantized(16).unwrap();
        let path = dir.path().join("fixed.wav");
        write_wav(&q, &path, 16).unwrap();
        assert_eq!(q, read_wav(&path).unwrap());
    }

    #[test]
    fn invariants_rejected() {
        assert!(MultichannelWaveform::new(0, vec![vec![0.0]]).is_err());
        assert!(MultichannelWaveform::new(8000, vec![]).is_err());
        assert!(MultichannelWaveform::new(8000, vec![vec![0.0], vec![0.0, 1.0]]).is_err());
    }
}
