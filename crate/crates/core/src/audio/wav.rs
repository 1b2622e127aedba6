//! RIFF/WAVE reading and writing: 16-bit PCM and 32-bit IEEE float.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::Waveform;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("not a RIFF file (found {found:?})")]
    NotRiff { found: [u8; 4] },
    #[error("RIFF form type is {found:?}, expected WAVE")]
    NotWave { found: [u8; 4] },
    #[error("missing '{0}' chunk")]
    MissingChunk(&'static str),
    #[error("chunk '{chunk}' is truncated")]
    Truncated { chunk: String },
    #[error("chunk '{chunk}': {reason}")]
    Malformed { chunk: String, reason: String },
    #[error("chunk 'fmt ': unsupported encoding (format tag {format_tag:#06x}, {bits} bits)")]
    Unsupported { format_tag: u16, bits: u16 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

struct Format {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn parse_fmt(body: &[u8]) -> Result<Format, WavError> {
    if body.len() < 16 {
        return Err(WavError::Truncated {
            chunk: "fmt ".into(),
        });
    }
    let mut tag = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let bits = u16_at(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        // The sub-format GUID starts with the effective format tag.
        if body.len() < 26 {
            return Err(WavError::Truncated {
                chunk: "fmt ".into(),
            });
        }
        tag = u16_at(body, 24);
    }
    if channels == 0 {
        return Err(WavError::Malformed {
            chunk: "fmt ".into(),
            reason: "zero channels".into(),
        });
    }
    if sample_rate == 0 {
        return Err(WavError::Malformed {
            chunk: "fmt ".into(),
            reason: "zero sample rate".into(),
        });
    }
    match (tag, bits) {
        (FORMAT_PCM, 16) | (FORMAT_FLOAT, 32) => Ok(Format {
            tag,
            channels,
            sample_rate,
            bits,
        }),
        _ => Err(WavError::Unsupported {
            format_tag: tag,
            bits,
        }),
    }
}

/// Decodes a WAV byte buffer. Multi-channel audio is averaged to mono and
/// 16-bit samples are scaled by 1/32768.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform, WavError> {
    if bytes.len() < 12 {
        return Err(WavError::Truncated {
            chunk: "RIFF".into(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if &magic != b"RIFF" {
        return Err(WavError::NotRiff { found: magic });
    }
    let form: [u8; 4] = bytes[8..12].try_into().expect("4 bytes");
    if &form != b"WAVE" {
        return Err(WavError::NotWave { found: form });
    }

    let mut format = None;
    let mut data = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = String::from_utf8_lossy(&bytes[pos..pos + 4]).into_owned();
        let size = u32_at(bytes, pos + 4) as usize;
        let body = bytes
            .get(pos + 8..pos + 8 + size)
            .ok_or_else(|| WavError::Truncated { chunk: id.clone() })?;
        match id.as_str() {
            "fmt " => format = Some(parse_fmt(body)?),
            "data" => data = Some(body),
            _ => {}
        }
        pos += 8 + size + (size & 1);
    }
    let format = format.ok_or(WavError::MissingChunk("fmt "))?;
    let data = data.ok_or(WavError::MissingChunk("data"))?;

    let channels = usize::from(format.channels);
    let width = usize::from(format.bits / 8);
    let frame = channels * width;
    if data.len() % frame != 0 {
        return Err(WavError::Malformed {
            chunk: "data".into(),
            reason: format!(
                "{} bytes is not a whole number of {frame}-byte frames",
                data.len()
            ),
        });
    }
    let decode = |s: &[u8]| -> f64 {
        if format.tag == FORMAT_PCM {
            f64::from(i16::from_le_bytes([s[0], s[1]])) / 32768.0
        } else {
            f64::from(f32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        }
    };
    let samples: Vec<f64> = data
        .chunks_exact(frame)
        .map(|f| {
            if channels == 1 {
                decode(f)
            } else {
                f.chunks_exact(width).map(decode).sum::<f64>() / channels as f64
            }
        })
        .collect();
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(WavError::Malformed {
            chunk: "data".into(),
            reason: "non-finite sample".into(),
        });
    }
    Ok(Waveform::new(samples, format.sample_rate))
}

/// Encodes a mono WAV. PCM16 maps `x` to `round(32768 x)` saturated to the
/// 16-bit range.
pub fn encode_wav(wave: &Waveform, format: SampleFormat) -> Vec<u8> {
    let (tag, bits) = match format {
        SampleFormat::Pcm16 => (FORMAT_PCM, 16u16),
        SampleFormat::Float32 => (FORMAT_FLOAT, 32u16),
    };
    let width = u32::from(bits / 8);
    let data_len = wave.samples.len() as u32 * width;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * width).to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &x in &wave.samples {
        match format {
            SampleFormat::Pcm16 => {
                let q = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            SampleFormat::Float32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
        }
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> crate::Result<Waveform> {
    Ok(decode_wav(&fs::read(path)?)?)
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> crate::Result<()> {
    write_wav_as(path, wave, SampleFormat::Pcm16)
}

pub fn write_wav_as(
    path: impl AsRef<Path>,
    wave: &Waveform,
    format: SampleFormat,
) -> crate::Result<()> {
    fs::write(path, encode_wav(wave, format))?;
    Ok(())
}
