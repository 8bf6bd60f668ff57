//! "Classical" audio features: 34 short-term features per 50 ms window
//! plus frame-to-frame deltas, aggregated into a 136-d long-term vector
//! of per-dimension means and standard deviations.
//!
//! Short-term base ordering:
//! `[zcr, energy, energy_entropy, spectral_centroid, spectral_spread,
//!   spectral_entropy, spectral_flux, spectral_rolloff, mfcc_1..13,
//!   chroma_1..12, chroma_std]`
//!
//! Conventions: spectral features are computed on the magnitude DFT of a
//! Hamming-windowed frame and are 0 for an all-zero spectrum; centroid,
//! spread and rolloff are normalized to [0, 0.5] of the sample rate;
//! MFCCs use a 40-filter mel bank with log floor 1e-10 and an orthonormal
//! DCT-II; chroma bins are power fractions (reference 440 Hz) with their
//! standard deviation appended; deltas are backward differences with a
//! zero first delta.

use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

use crate::media::AudioClip;

/// Number of base short-term features.
pub const BASE_DIM: usize = 34;
/// Base + delta.
pub const FRAME_DIM: usize = 2 * BASE_DIM;
/// Final long-term dimensionality (mean and std of base + delta).
pub const LONG_TERM_DIM: usize = 2 * FRAME_DIM;

/// Default analysis window, seconds.
pub const DEFAULT_WINDOW_SEC: f64 = 0.050;
/// Default hop, seconds (50% overlap).
pub const DEFAULT_HOP_SEC: f64 = 0.025;

const N_MEL_FILTERS: usize = 40;
const N_MFCC: usize = 13;
const LOG_FLOOR: f64 = 1e-10;
const ROLLOFF_FRACTION: f64 = 0.90;
const N_ENTROPY_BLOCKS: usize = 10;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("clip too short: {samples} samples < one {window} sample window")]
    TooShort { samples: usize, window: usize },
    #[error("domain error: {0}")]
    Domain(String),
}

/// One analysis frame: 34 base features and their backward differences.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortTermFrame {
    pub base: [f64; BASE_DIM],
    pub delta: [f64; BASE_DIM],
}

impl ShortTermFrame {
    /// Base followed by delta, 68 values.
    pub fn concat(&self) -> [f64; FRAME_DIM] {
        let mut out = [0.0; FRAME_DIM];
        out[..BASE_DIM].copy_from_slice(&self.base);
        out[BASE_DIM..].copy_from_slice(&self.delta);
        out
    }
}

/// 136-d long-term feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTermVector(pub [f64; LONG_TERM_DIM]);

impl LongTermVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

struct SpectralContext {
    win_len: usize,
    hamming: Vec<f64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    mel_filters: Vec<Vec<(usize, f64)>>, // sparse (bin, weight) per filter
    dct: Vec<Vec<f64>>,                  // N_MFCC x N_MEL_FILTERS
    chroma_bin: Vec<usize>,              // pitch class per spectrum bin (bin 0 unused)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl SpectralContext {
    fn new(win_len: usize, sample_rate: u32) -> Self {
        let sr = sample_rate as f64;
        let n_bins = win_len / 2 + 1;
        let hamming = (0..win_len)
            .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (win_len - 1) as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(win_len);

        // 40 triangular mel filters spanning 0 .. sr/2
        let mel_max = hz_to_mel(sr / 2.0);
        let points: Vec<f64> = (0..N_MEL_FILTERS + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (N_MEL_FILTERS + 1) as f64))
            .collect();
        let bin_freq = |k: usize| k as f64 * sr / win_len as f64;
        let mut mel_filters = Vec::with_capacity(N_MEL_FILTERS);
        for m in 0..N_MEL_FILTERS {
            let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
            let mut filt = Vec::new();
            for k in 0..n_bins {
                let f = bin_freq(k);
                let w = if f > lo && f < mid {
                    (f - lo) / (mid - lo)
                } else if (f - mid).abs() < 1e-12 {
                    1.0
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                if w > 0.0 {
                    filt.push((k, w));
                }
            }
            mel_filters.push(filt);
        }

        // orthonormal DCT-II
        let m_total = N_MEL_FILTERS as f64;
        let dct = (0..N_MFCC)
            .map(|j| {
                let scale = if j == 0 {
                    (1.0 / m_total).sqrt()
                } else {
                    (2.0 / m_total).sqrt()
                };
                (0..N_MEL_FILTERS)
                    .map(|m| {
                        scale
                            * (std::f64::consts::PI * j as f64 * (2 * m + 1) as f64
                                / (2.0 * m_total))
                                .cos()
                    })
                    .collect()
            })
            .collect();

        // pitch class per bin, 440 Hz reference (bin 0 has no pitch)
        let chroma_bin = (0..n_bins)
            .map(|k| {
                if k == 0 {
                    0
                } else {
                    let f = bin_freq(k);
                    let semitones = (12.0 * (f / 440.0).log2()).round() as i64;
                    (((69 + semitones) % 12 + 12) % 12) as usize
                }
            })
            .collect();

        SpectralContext {
            win_len,
            hamming,
            fft,
            mel_filters,
            dct,
            chroma_bin,
        }
    }

    fn magnitude_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.hamming)
            .map(|(&x, &w)| Complex::new(x * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        buf[..self.win_len / 2 + 1].iter().map(|c| c.norm()).collect()
    }
}

fn block_entropy(energies: &[f64]) -> f64 {
    let total: f64 = energies.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    -energies
        .iter()
        .filter(|&&e| e > 0.0)
        .map(|&e| {
            let p = e / total;
            p * p.log2()
        })
        .sum::<f64>()
}

fn compute_base(
    ctx: &SpectralContext,
    frame: &[f64],
    prev_norm_spectrum: &mut Vec<f64>,
    first_frame: bool,
) -> [f64; BASE_DIM] {
    let n = frame.len();
    let mut out = [0.0; BASE_DIM];

    // zero crossing rate
    let crossings = frame
        .windows(2)
        .filter(|w| w[0] * w[1] < 0.0)
        .count();
    out[0] = crossings as f64 / (n - 1) as f64;

    // energy (mean square)
    let energy = frame.iter().map(|x| x * x).sum::<f64>() / n as f64;
    out[1] = energy;

    // energy entropy over 10 sub-blocks
    let block = n / N_ENTROPY_BLOCKS;
    if block > 0 {
        let sub: Vec<f64> = (0..N_ENTROPY_BLOCKS)
            .map(|b| frame[b * block..(b + 1) * block].iter().map(|x| x * x).sum())
            .collect();
        out[2] = block_entropy(&sub);
    }

    let mag = ctx.magnitude_spectrum(frame);
    let mag_sum: f64 = mag.iter().sum();
    let power: Vec<f64> = mag.iter().map(|m| m * m).collect();
    let power_sum: f64 = power.iter().sum();
    let freq = |k: usize| k as f64 / ctx.win_len as f64; // normalized, [0, 0.5]

    if mag_sum > 0.0 {
        let centroid = mag
            .iter()
            .enumerate()
            .map(|(k, m)| freq(k) * m)
            .sum::<f64>()
            / mag_sum;
        out[3] = centroid;
        out[4] = (mag
            .iter()
            .enumerate()
            .map(|(k, m)| (freq(k) - centroid).powi(2) * m)
            .sum::<f64>()
            / mag_sum)
            .sqrt();
    }

    // spectral entropy over 10 sub-bands of the power spectrum
    let band = power.len() / N_ENTROPY_BLOCKS;
    if band > 0 {
        let sub: Vec<f64> = (0..N_ENTROPY_BLOCKS)
            .map(|b| power[b * band..(b + 1) * band].iter().sum())
            .collect();
        out[5] = block_entropy(&sub);
    }

    // spectral flux against the previous frame's sum-normalized spectrum
    let norm: Vec<f64> = if mag_sum > 0.0 {
        mag.iter().map(|m| m / mag_sum).collect()
    } else {
        vec![0.0; mag.len()]
    };
    if !first_frame {
        out[6] = norm
            .iter()
            .zip(prev_norm_spectrum.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
    }
    *prev_norm_spectrum = norm;

    // rolloff: smallest bin where cumulative power reaches 90% of total
    if power_sum > 0.0 {
        let target = ROLLOFF_FRACTION * power_sum;
        let mut acc = 0.0;
        for (k, p) in power.iter().enumerate() {
            acc += p;
            if acc >= target {
                out[7] = freq(k);
                break;
            }
        }
    }

    // MFCC 1..13
    let mut log_mel = [0.0; N_MEL_FILTERS];
    for (m, filt) in ctx.mel_filters.iter().enumerate() {
        let e: f64 = filt.iter().map(|&(k, w)| w * power[k]).sum();
        log_mel[m] = e.max(LOG_FLOOR).ln();
    }
    for (j, row) in ctx.dct.iter().enumerate() {
        out[8 + j] = row.iter().zip(log_mel.iter()).map(|(c, e)| c * e).sum();
    }

    // chroma: power fraction per pitch class, bins >= 1
    let mut chroma = [0.0; 12];
    for k in 1..power.len() {
        chroma[ctx.chroma_bin[k]] += power[k];
    }
    let chroma_total: f64 = chroma.iter().sum();
    if chroma_total > 0.0 {
        for c in chroma.iter_mut() {
            *c /= chroma_total;
        }
    } else {
        chroma = [0.0; 12];
    }
    out[21..33].copy_from_slice(&chroma);
    let mean = chroma.iter().sum::<f64>() / 12.0;
    out[33] = (chroma.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 12.0).sqrt();

    out
}

/// Short-term windowed features with backward-difference deltas.
/// Frame count is `1 + floor((len - win_len) / hop_len)`.
pub fn short_term_features(
    clip: &AudioClip,
    window_sec: f64,
    hop_sec: f64,
) -> Result<Vec<ShortTermFrame>, AudioError> {
    if !(window_sec > 0.0) || !(hop_sec > 0.0) {
        return Err(AudioError::Domain("window and hop must be positive".into()));
    }
    let sr = clip.sample_rate() as f64;
    let win_len = (window_sec * sr).round().max(2.0) as usize;
    let hop_len = (hop_sec * sr).round().max(1.0) as usize;
    let samples = clip.samples();
    if samples.len() < win_len {
        return Err(AudioError::TooShort {
            samples: samples.len(),
            window: win_len,
        });
    }
    let n_frames = 1 + (samples.len() - win_len) / hop_len;
    let ctx = SpectralContext::new(win_len, clip.sample_rate());

    let mut prev_spectrum = Vec::new();
    let mut bases = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let frame = &samples[i * hop_len..i * hop_len + win_len];
        bases.push(compute_base(&ctx, frame, &mut prev_spectrum, i == 0));
    }

    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let mut delta = [0.0; BASE_DIM];
        if i > 0 {
            for d in 0..BASE_DIM {
                delta[d] = bases[i][d] - bases[i - 1][d];
            }
        }
        frames.push(ShortTermFrame {
            base: bases[i],
            delta,
        });
    }
    Ok(frames)
}

/// Per-dimension mean (first 68) and population standard deviation
/// (last 68) of the concatenated base+delta frames.
pub fn aggregate_long_term(frames: &[ShortTermFrame]) -> Result<LongTermVector, AudioError> {
    if frames.is_empty() {
        return Err(AudioError::Domain("cannot aggregate zero frames".into()));
    }
    let n = frames.len() as f64;
    let mut mean = [0.0; FRAME_DIM];
    for f in frames {
        for (m, v) in mean.iter_mut().zip(f.concat()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = [0.0; FRAME_DIM];
    for f in frames {
        for (i, v) in f.concat().into_iter().enumerate() {
            var[i] += (v - mean[i]).powi(2);
        }
    }
    let mut out = [0.0; LONG_TERM_DIM];
    for i in 0..FRAME_DIM {
        out[i] = mean[i];
        out[FRAME_DIM + i] = (var[i] / n).sqrt();
    }
    Ok(LongTermVector(out))
}

/// The full classical pipeline with default window and hop.
pub fn classical_features(clip: &AudioClip) -> Result<LongTermVector, AudioError> {
    let frames = short_term_features(clip, DEFAULT_WINDOW_SEC, DEFAULT_HOP_SEC)?;
    aggregate_long_term(&frames)
}

/// Debug dump: one CSV row of 68 columns per frame.
pub fn frames_to_csv(frames: &[ShortTermFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        let row: Vec<String> = f.concat().iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
