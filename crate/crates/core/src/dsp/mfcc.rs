//! MFCC extraction.
//!
//! Per frame: pre-emphasis, Hamming window, zero-padded power spectrum,
//! triangular mel filterbank, floored natural log, orthonormal DCT-II,
//! keeping coefficients `c0..c{n-1}`. No liftering, no deltas.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::WavSignal;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub frame_len_ms: u32,
    pub frame_shift_ms: u32,
    pub pre_emphasis: f64,
    pub num_filters: usize,
    pub num_coeffs: usize,
    pub log_floor: f64,
    /// Subtract each coefficient's per-utterance mean.
    pub mean_normalize: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            frame_len_ms: 25,
            frame_shift_ms: 10,
            pre_emphasis: 0.97,
            num_filters: 26,
            num_coeffs: 13,
            log_floor: 1e-10,
            mean_normalize: false,
        }
    }
}

impl MfccConfig {
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (sample_rate as u64 * self.frame_len_ms as u64 / 1000) as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (sample_rate as u64 * self.frame_shift_ms as u64 / 1000) as usize
    }
}

/// Number of frames for `num_samples` at `sample_rate` with 25 ms windows
/// and a 10 ms hop: `floor((n - win) / hop) + 1`, and 1 for signals shorter
/// than a window (they are zero-padded).
pub fn frame_count(num_samples: usize, sample_rate: u32) -> usize {
    frame_count_with(&MfccConfig::default(), num_samples, sample_rate)
}

fn frame_count_with(cfg: &MfccConfig, num_samples: usize, sample_rate: u32) -> usize {
    let win = cfg.window_samples(sample_rate);
    let hop = cfg.hop_samples(sample_rate).max(1);
    if num_samples <= win {
        1
    } else {
        (num_samples - win) / hop + 1
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `w[n] = 0.54 - 0.46 cos(2πn / (N-1))`.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Triangular filters equally spaced on the mel scale from 0 Hz to Nyquist.
/// Returns `num_filters` rows of `nfft/2 + 1` bin weights. Weights are
/// evaluated at each bin's exact frequency, so adjacent triangles always
/// sum to one between their centers.
pub fn mel_filterbank(num_filters: usize, nfft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let bins = nfft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..num_filters + 2)
        .map(|m| mel_to_hz(top * m as f64 / (num_filters + 1) as f64))
        .collect();
    (0..num_filters)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / nfft as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= center {
                        (f - lo) / (center - lo)
                    } else {
                        (hi - f) / (hi - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II of `x`.
pub fn dct_ii_orthonormal(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Transpose (and inverse) of [`dct_ii_orthonormal`].
pub fn dct_iii_orthonormal(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    (0..n)
        .map(|i| {
            c.iter()
                .enumerate()
                .map(|(k, v)| {
                    let scale = if k == 0 {
                        (1.0 / n as f64).sqrt()
                    } else {
                        (2.0 / n as f64).sqrt()
                    };
                    scale * v * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos()
                })
                .sum()
        })
        .collect()
}

/// Frame-level cepstral coefficients, stored coefficient-major
/// (`num_coeffs × frames`).
#[derive(Clone, Debug, PartialEq)]
pub struct MfccGrid {
    coeffs: Vec<f64>,
    num_coeffs: usize,
    frames: usize,
    pub frame_shift_ms: u32,
    pub frame_len_ms: u32,
}

impl MfccGrid {
    pub fn new(num_coeffs: usize, frames: usize, coeffs: Vec<f64>) -> Result<Self> {
        if num_coeffs == 0 || frames == 0 || coeffs.len() != num_coeffs * frames {
            return Err(Error::shape(
                "MfccGrid::new",
                format!("{num_coeffs}x{frames} grid with {} values", coeffs.len()),
            ));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite MFCC value"));
        }
        Ok(MfccGrid {
            coeffs,
            num_coeffs,
            frames,
            frame_shift_ms: 10,
            frame_len_ms: 25,
        })
    }

    pub fn zeros(num_coeffs: usize, frames: usize) -> Self {
        MfccGrid {
            coeffs: vec![0.0; num_coeffs * frames],
            num_coeffs,
            frames,
            frame_shift_ms: 10,
            frame_len_ms: 25,
        }
    }

    pub fn num_coeffs(&self) -> usize {
        self.num_coeffs
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn at(&self, coeff: usize, frame: usize) -> f64 {
        self.coeffs[coeff * self.frames + frame]
    }

    pub fn row(&self, coeff: usize) -> &[f64] {
        &self.coeffs[coeff * self.frames..(coeff + 1) * self.frames]
    }

    pub fn frame(&self, frame: usize) -> Vec<f64> {
        (0..self.num_coeffs).map(|c| self.at(c, frame)).collect()
    }

    /// Columns `[start, end)`.
    pub fn frames_range(&self, start: usize, end: usize) -> MfccGrid {
        let n = end - start;
        let mut coeffs = Vec::with_capacity(self.num_coeffs * n);
        for c in 0..self.num_coeffs {
            coeffs.extend_from_slice(&self.row(c)[start..end]);
        }
        MfccGrid {
            coeffs,
            num_coeffs: self.num_coeffs,
            frames: n,
            frame_shift_ms: self.frame_shift_ms,
            frame_len_ms: self.frame_len_ms,
        }
    }

    /// Truncates the tail or appends zero frames to reach `frames` columns.
    pub fn fit_frames(&self, frames: usize) -> MfccGrid {
        let keep = self.frames.min(frames);
        let mut coeffs = vec![0.0; self.num_coeffs * frames];
        for c in 0..self.num_coeffs {
            coeffs[c * frames..c * frames + keep].copy_from_slice(&self.row(c)[..keep]);
        }
        MfccGrid {
            coeffs,
            num_coeffs: self.num_coeffs,
            frames,
            frame_shift_ms: self.frame_shift_ms,
            frame_len_ms: self.frame_len_ms,
        }
    }

    pub fn mean_normalized(&self) -> MfccGrid {
        let mut out = self.clone();
        for c in 0..self.num_coeffs {
            let row = &mut out.coeffs[c * self.frames..(c + 1) * self.frames];
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            row.iter_mut().for_each(|v| *v -= mean);
        }
        out
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.num_coeffs, self.frames], |i| T::of(self.coeffs[i]))
    }

    pub fn data(&self) -> &[f64] {
        &self.coeffs
    }
}

/// Frames whose start time lies in `[start_sec, end_sec)`. An empty
/// selection yields a single zero frame.
pub fn slice_utterance(grid: &MfccGrid, start_sec: f64, end_sec: f64) -> Result<MfccGrid> {
    if !(start_sec >= 0.0 && start_sec < end_sec) {
        return Err(Error::invalid(format!(
            "invalid utterance interval [{start_sec}, {end_sec})"
        )));
    }
    let hop = grid.frame_shift_ms as f64 / 1000.0;
    // first k with k·hop >= t; the epsilon absorbs representation error in t
    let first_at = |t: f64| ((t / hop) - 1e-9).ceil().max(0.0) as usize;
    let lo = first_at(start_sec).min(grid.frames);
    let hi = first_at(end_sec).min(grid.frames);
    if lo >= hi {
        return Ok(MfccGrid::zeros(grid.num_coeffs, 1));
    }
    Ok(grid.frames_range(lo, hi))
}

/// Reusable extractor holding the FFT plan, window and filterbank for one
/// sample rate.
pub struct MfccExtractor {
    config: MfccConfig,
    sample_rate: u32,
    win: usize,
    hop: usize,
    nfft: usize,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl MfccExtractor {
    pub fn new(config: MfccConfig, sample_rate: u32) -> Result<Self> {
        let win = config.window_samples(sample_rate);
        let hop = config.hop_samples(sample_rate);
        if win == 0 || hop == 0 {
            return Err(Error::invalid(format!(
                "sample rate {sample_rate} too low for {} ms / {} ms framing",
                config.frame_len_ms, config.frame_shift_ms
            )));
        }
        if config.num_coeffs > config.num_filters {
            return Err(Error::invalid(
                "more cepstral coefficients than mel filters",
            ));
        }
        let nfft = win.next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Ok(MfccExtractor {
            window: hamming(win),
            filters: mel_filterbank(config.num_filters, nfft, sample_rate),
            config,
            sample_rate,
            win,
            hop,
            nfft,
            fft,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    /// Log mel energies of one frame of exactly `win` samples.
    pub fn log_mel(&self, frame: &[f64]) -> Vec<f64> {
        let a = self.config.pre_emphasis;
        let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); self.nfft];
        for n in 0..self.win {
            let emphasized = if n == 0 {
                frame[0]
            } else {
                frame[n] - a * frame[n - 1]
            };
            buf[n] = Complex::new(emphasized * self.window[n], 0.0);
        }
        self.fft.process(&mut buf);
        let power: Vec<f64> = buf[..self.nfft / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr() / self.nfft as f64)
            .collect();
        self.filters
            .iter()
            .map(|f| {
                let e: f64 = f.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(self.config.log_floor).ln()
            })
            .collect()
    }

    pub fn extract(&self, signal: &WavSignal) -> Result<MfccGrid> {
        if signal.sample_rate != self.sample_rate {
            return Err(Error::invalid(format!(
                "extractor built for {} Hz, signal is {} Hz",
                self.sample_rate, signal.sample_rate
            )));
        }
        let frames = frame_count_with(&self.config, signal.samples.len(), self.sample_rate);
        let nc = self.config.num_coeffs;
        let mut coeffs = vec![0.0; nc * frames];
        let mut frame = vec![0.0; self.win];
        for f in 0..frames {
            let start = f * self.hop;
            let avail = signal.samples.len().saturating_sub(start).min(self.win);
            frame[..avail].copy_from_slice(&signal.samples[start..start + avail]);
            frame[avail..].fill(0.0);
            let cep = dct_ii_orthonormal(&self.log_mel(&frame));
            for c in 0..nc {
                coeffs[c * frames + f] = cep[c];
            }
        }
        let mut grid = MfccGrid::new(nc, frames, coeffs)?;
        grid.frame_len_ms = self.config.frame_len_ms;
        grid.frame_shift_ms = self.config.frame_shift_ms;
        if self.config.mean_normalize {
            grid = grid.mean_normalized();
        }
        Ok(grid)
    }
}
