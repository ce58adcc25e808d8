//! WAV reading and writing. Multi-channel files are averaged to mono.

use std::path::Path;

use segssl_core::dsp::{resample, WaveClip};

use crate::error::{Error, Result};

pub fn read_wav(path: &Path) -> Result<WaveClip> {
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader.samples::<i32>().map(|s| s.map(|v| v as f64 * scale)).collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(wav_err)?;
    let ch = spec.channels.max(1) as usize;
    let mono = if ch == 1 { interleaved } else { interleaved.chunks_exact(ch).map(|f| f.iter().sum::<f64>() / ch as f64).collect() };
    Ok(WaveClip::new(mono, spec.sample_rate)?)
}

/// Reads a file and resamples it to `sample_rate` if needed.
pub fn load_clip(path: &Path, sample_rate: u32) -> Result<WaveClip> {
    let clip = read_wav(path)?;
    if clip.sample_rate == sample_rate {
        Ok(clip)
    } else {
        Ok(resample(&clip, sample_rate)?)
    }
}

/// Writes mono 32-bit float samples.
pub fn write_wav(path: &Path, clip: &WaveClip) -> Result<()> {
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let spec = hound::WavSpec { channels: 1, sample_rate: clip.sample_rate, bits_per_sample: 32, sample_format: hound::SampleFormat::Float };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &clip.samples {
        w.write_sample(s as f32).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}
