use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

/// Reads a PCM (16/24-bit) or 32-bit float WAV file.
///
/// Multichannel files keep only the channel with the highest RMS level.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let mut reader = WavReader::open(path).map_err(|e| bad(e.to_string()))?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>(),
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader.samples::<i32>().map(|s| s.map(|v| v as f64 * scale)).collect::<Result<_, _>>()
        }
        (fmt, bits) => return Err(bad(format!("unsupported sample format {fmt:?} with {bits} bits"))),
    }
    .map_err(|e| bad(e.to_string()))?;

    let channels = spec.channels.max(1) as usize;
    let samples = if channels == 1 {
        interleaved
    } else {
        let energy = |c: usize| interleaved.iter().skip(c).step_by(channels).map(|s| s * s).sum::<f64>();
        let loudest = (0..channels).max_by(|&a, &b| energy(a).total_cmp(&energy(b))).unwrap_or(0);
        interleaved.into_iter().skip(loudest).step_by(channels).collect()
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes a mono 32-bit float WAV file.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate: wave.sample_rate, bits_per_sample: 32, sample_format: SampleFormat::Float };
    let io = |e: hound::Error| Error::Format { path: path.to_path_buf(), reason: e.to_string() };
    let mut writer = WavWriter::create(path, spec).map_err(io)?;
    for &s in &wave.samples {
        writer.write_sample(s as f32).map_err(io)?;
    }
    writer.finalize().map_err(io)
}
