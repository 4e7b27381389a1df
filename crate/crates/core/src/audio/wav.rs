use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::MultichannelClip;
use crate::error::{Error, Result};

const MAX_CHANNELS: u16 = 64;

fn map_read_err(e: hound::Error) -> Error {
    match e {
        hound::Error::Unsupported => Error::UnsupportedEncoding("codec not supported".into()),
        hound::Error::InvalidSampleFormat => {
            Error::UnsupportedEncoding("sample format not supported".into())
        }
        hound::Error::FormatError(msg) => Error::CorruptWav(msg.to_string()),
        hound::Error::IoError(io) => Error::CorruptWav(io.to_string()),
        other => Error::CorruptWav(other.to_string()),
    }
}

/// Reads a 16-bit PCM or 32-bit float WAV. Integer samples are divided by 32768.
pub fn load_wav(path: impl AsRef<Path>) -> Result<MultichannelClip> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let with_path = |e: Error| match e {
        Error::CorruptWav(m) => Error::CorruptWav(format!("{}: {m}", path.display())),
        Error::UnsupportedEncoding(m) => {
            Error::UnsupportedEncoding(format!("{}: {m}", path.display()))
        }
        other => other,
    };
    let reader = WavReader::new(BufReader::new(file)).map_err(|e| with_path(map_read_err(e)))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > MAX_CHANNELS {
        return Err(with_path(Error::UnsupportedEncoding(format!(
            "{} channels (supported: 1..={MAX_CHANNELS})",
            spec.channels
        ))));
    }
    let channels = usize::from(spec.channels);
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| with_path(map_read_err(e)))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| with_path(map_read_err(e)))?,
        (fmt, bits) => {
            return Err(with_path(Error::UnsupportedEncoding(format!(
                "{bits}-bit {fmt:?}"
            ))))
        }
    };
    if interleaved.len() % channels != 0 {
        return Err(with_path(Error::CorruptWav("partial sample frame".into())));
    }
    let frames = interleaved.len() / channels;
    let mut samples = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (ch, &v) in samples.iter_mut().zip(frame) {
            ch.push(v);
        }
    }
    MultichannelClip::new(samples, spec.sample_rate)
}

/// Writes the clip as 16-bit PCM (`round(x * 32768)`, saturating).
pub fn write_wav(clip: &MultichannelClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let channels = u16::try_from(clip.channels())
        .ok()
        .filter(|c| *c <= MAX_CHANNELS)
        .ok_or_else(|| Error::Config(format!("cannot write {} channels", clip.channels())))?;
    let spec = WavSpec {
        channels,
        sample_rate: clip.sample_rate_hz(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::CorruptWav(format!("{}: {other}", path.display())),
    };
    let mut writer = WavWriter::create(path, spec).map_err(to_err)?;
    for n in 0..clip.len() {
        for c in 0..clip.channels() {
            let v = (clip.channel(c)[n] * 32768.0)
                .round()
                .clamp(-32768.0, 32767.0) as i16;
            writer.write_sample(v).map_err(to_err)?;
        }
    }
    writer.finalize().map_err(to_err)
}
