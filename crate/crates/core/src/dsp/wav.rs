use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Mono signal with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WavSignal {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl WavSignal {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("non-finite sample"));
        }
        Ok(WavSignal {
            sample_rate,
            samples,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format {
        what: "WAV",
        msg: msg.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct Format {
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decodes a RIFF/WAVE byte buffer holding 16-bit PCM. Multi-channel audio
/// is averaged down to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<WavSignal> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(fmt_err("missing RIFF/WAVE header"));
    }
    let mut format: Option<Format> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if size < 16 || body + size > bytes.len() {
                return Err(fmt_err("truncated fmt chunk"));
            }
            let mut tag = u16_at(bytes, body);
            if tag == FORMAT_EXTENSIBLE && size >= 26 {
                tag = u16_at(bytes, body + 24);
            }
            if tag != FORMAT_PCM {
                return Err(fmt_err(format!(
                    "unsupported encoding tag {tag:#06x}, need PCM"
                )));
            }
            format = Some(Format {
                channels: u16_at(bytes, body + 2),
                sample_rate: u32_at(bytes, body + 4),
                bits: u16_at(bytes, body + 14),
            });
        } else if id == b"data" {
            let fmt = format
                .as_ref()
                .ok_or_else(|| fmt_err("data chunk before fmt chunk"))?;
            if fmt.bits != 16 {
                return Err(fmt_err(format!("{}-bit samples, need 16-bit", fmt.bits)));
            }
            if fmt.channels == 0 || fmt.sample_rate == 0 {
                return Err(fmt_err("zero channels or sample rate"));
            }
            if body + size > bytes.len() {
                return Err(fmt_err(format!(
                    "truncated data chunk: header says {size} bytes, {} present",
                    bytes.len() - body
                )));
            }
            let channels = fmt.channels as usize;
            let frame_bytes = 2 * channels;
            let frames = size / frame_bytes;
            let data = &bytes[body..body + frames * frame_bytes];
            let samples = data
                .chunks_exact(frame_bytes)
                .map(|frame| {
                    let sum: f64 = frame
                        .chunks_exact(2)
                        .map(|s| i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0)
                        .sum();
                    sum / channels as f64
                })
                .collect();
            return WavSignal::new(fmt.sample_rate, samples);
        }
        pos = body + size + (size & 1);
    }
    Err(fmt_err("no data chunk"))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<WavSignal> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::Format { what, msg } => Error::Format {
            what,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

/// Encodes interleaved 16-bit PCM; `channels` holds one slice per channel.
pub fn encode_wav(sample_rate: u32, channels: &[&[f64]]) -> Vec<u8> {
    let n_ch = channels.len();
    let frames = channels.first().map_or(0, |c| c.len());
    let data_len = frames * n_ch * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&(n_ch as u16).to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2 * n_ch as u32).to_le_bytes());
    out.extend_from_slice(&((2 * n_ch) as u16).to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for f in 0..frames {
        for ch in channels {
            let q = (ch[f] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            out.extend_from_slice(&q.to_le_bytes());
        }
    }
    out
}

/// Writes a mono 16-bit PCM file atomically.
pub fn write_wav(path: impl AsRef<Path>, signal: &WavSignal) -> Result<()> {
    write_atomic(path, &encode_wav(signal.sample_rate, &[&signal.samples]))
}
