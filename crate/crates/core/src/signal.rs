//! Zadoff-Chu ranging: sequence generation, a sampled delay-and-noise channel,
//! and correlation-peak range estimation.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{Fft, FftPlanner};

use crate::bounds::{gcd, SignalParams};
use crate::error::{Error, Result};

/// Guard samples appended after the longest expected delay.
pub const GUARD_SAMPLES: usize = 64;

/// A peak must exceed this multiple of the noise floor.
pub const PEAK_THRESHOLD: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ZcSequence {
    root: u32,
    symbols: Vec<Complex64>,
}

impl ZcSequence {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn root(&self) -> u32 {
        self.root
    }

    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }
}

/// Phase of the `k`-th symbol; `k` may be fractional.
pub fn zc_phase(length: usize, root: u32, k: f64) -> f64 {
    let r = root as f64;
    let n = length as f64;
    if length % 2 == 1 {
        PI * r * k * (k + 1.0) / n
    } else {
        PI * r * k * k / n
    }
}

pub fn zadoff_chu(length: usize, root: u32) -> Result<ZcSequence> {
    if length < 2 {
        return Err(Error::InvalidSignal("sequence length must be at least 2"));
    }
    if gcd(root as usize, length) != 1 {
        return Err(Error::NotCoprime { root, length });
    }
    let symbols = (0..length)
        .map(|k| Complex64::from_polar(1.0, zc_phase(length, root, k as f64)))
        .collect();
    Ok(ZcSequence { root, symbols })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedFrame {
    pub samples: Vec<Complex64>,
    /// Integer delay in samples.
    pub true_delay: usize,
    /// (transmitter, beacon).
    pub link: (usize, usize),
}

/// Frame length `τ_max + K + guard` for ranges up to `max_range`.
pub fn frame_length(max_range: f64, sig: &SignalParams) -> usize {
    (max_range / sig.sample_range()).round() as usize + sig.length + GUARD_SAMPLES
}

/// Delays the sequence by `round(range/(c·Ts))` samples, scales it by `ψ_ij`
/// and adds circular complex Gaussian noise of total variance `σ_ij²`.
pub fn simulate_link<R: Rng + ?Sized>(
    seq: &ZcSequence,
    range_m: f64,
    link: (usize, usize),
    sig: &SignalParams,
    frame_len: usize,
    rng: &mut R,
) -> Result<ReceivedFrame> {
    if !(range_m > 0.0 && range_m.is_finite()) {
        return Err(Error::InvalidSignal("range must be finite and positive"));
    }
    let (i, j) = link;
    let psi = sig.psi[i][j];
    let sigma = sig.sigma[i][j];
    if !(psi >= 0.0 && psi.is_finite() && sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidSignal(
            "attenuation and noise must be finite and non-negative",
        ));
    }
    let delay = (range_m / sig.sample_range()).round() as usize;
    if delay + seq.len() > frame_len {
        return Err(Error::FrameOverflow {
            delay,
            length: seq.len(),
            frame: frame_len,
        });
    }

    let mut samples = vec![Complex64::new(0.0, 0.0); frame_len];
    for (k, s) in seq.symbols().iter().enumerate() {
        samples[delay + k] = s * psi;
    }
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma / 2f64.sqrt()).expect("finite deviation");
        for v in samples.iter_mut() {
            *v += Complex64::new(normal.sample(rng), normal.sample(rng));
        }
    }
    Ok(ReceivedFrame {
        samples,
        true_delay: delay,
        link,
    })
}

/// Matched-filter range estimator for one sequence and frame length.
///
/// The template spectrum and FFT plans are built once; estimation is then a
/// forward transform, a product and an inverse transform per frame.
#[derive(Clone)]
pub struct CorrelationRanger {
    frame_len: usize,
    seq_len: usize,
    sample_range: f64,
    template: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CorrelationRanger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CorrelationRanger")
            .field("frame_len", &self.frame_len)
            .field("seq_len", &self.seq_len)
            .finish()
    }
}

impl CorrelationRanger {
    pub fn new(seq: &ZcSequence, frame_len: usize, sig: &SignalParams) -> Result<Self> {
        if frame_len < seq.len() {
            return Err(Error::InvalidSignal("frame shorter than the sequence"));
        }
        let n = (frame_len + seq.len()).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut template = vec![Complex64::new(0.0, 0.0); n];
        template[..seq.len()].copy_from_slice(seq.symbols());
        forward.process(&mut template);
        for v in template.iter_mut() {
            *v = v.conj();
        }
        Ok(Self {
            frame_len,
            seq_len: seq.len(),
            sample_range: sig.sample_range(),
            template,
            forward,
            inverse,
        })
    }

    /// `|Σ_k frame[k+τ]·conj(s[k])|` for every lag `τ` that keeps the sequence
    /// inside the frame.
    pub fn correlation(&self, samples: &[Complex64]) -> Result<Vec<f64>> {
        if samples.len() != self.frame_len {
            return Err(Error::InvalidSignal("frame length mismatch"));
        }
        let n = self.template.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        buf[..samples.len()].copy_from_slice(samples);
        self.forward.process(&mut buf);
        for (b, t) in buf.iter_mut().zip(&self.template) {
            *b *= t;
        }
        self.inverse.process(&mut buf);
        let lags = self.frame_len - self.seq_len + 1;
        Ok(buf[..lags].iter().map(|v| v.norm() / n as f64).collect())
    }

    /// Range in meters from the correlation peak, refined by a parabola
    /// through the peak and its two neighbors.
    pub fn estimate(&self, frame: &ReceivedFrame) -> Result<f64> {
        let mag = self.correlation(&frame.samples)?;
        let (peak_idx, peak) = mag
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one lag");

        let floor = noise_floor(&mag, peak_idx, self.seq_len);
        if !(peak > PEAK_THRESHOLD * floor) {
            return Err(Error::NoPeak { peak, floor });
        }

        let mut offset = 0.0;
        if peak_idx > 0 && peak_idx + 1 < mag.len() {
            let (l, c, r) = (mag[peak_idx - 1], mag[peak_idx], mag[peak_idx + 1]);
            let den = l - 2.0 * c + r;
            if den < 0.0 {
                offset = (0.5 * (l - r) / den).clamp(-0.5, 0.5);
            }
        }
        Ok((peak_idx as f64 + offset) * self.sample_range)
    }
}

/// Expected largest noise-only correlation magnitude: the RMS magnitude away
/// from the peak, scaled by `sqrt(ln n)` for `n` lags.
fn noise_floor(mag: &[f64], peak_idx: usize, seq_len: usize) -> f64 {
    let lo = peak_idx.saturating_sub(seq_len);
    let hi = (peak_idx + seq_len + 1).min(mag.len());
    let outside = mag[..lo].iter().chain(&mag[hi..]);
    let (sum, count) = outside.fold((0.0, 0usize), |(s, n), m| (s + m * m, n + 1));
    if count == 0 {
        return 0.0;
    }
    let rms = (sum / count as f64).sqrt();
    rms * (mag.len() as f64).ln().max(1.0).sqrt()
}

/// One-shot convenience wrapper around [`CorrelationRanger`].
pub fn estimate_range(frame: &ReceivedFrame, seq: &ZcSequence, sig: &SignalParams) -> Result<f64> {
    CorrelationRanger::new(seq, frame.samples.len(), sig)?.estimate(frame)
}
