//! OOK downlink and binary FSK uplink modems.
//!
//! The ASK receiver low-pass filters the rectified envelope, finds a coarse
//! start from the first mid-level crossing, refines it by correlating against
//! the filtered preamble over one symbol of offsets, then slices at each
//! symbol centre against a threshold derived from the preamble's swing.
//!
//! The FSK receiver has no preamble: it tries every sample offset within a
//! symbol, makes Goertzel tone decisions per symbol, and keeps the offset
//! with the largest summed decision margin.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{config, length, Error, Result};
use crate::signal::{BasebandSignal, BitStream, Frequency};

/// Minimum samples per symbol for the ASK receiver.
pub const MIN_ASK_OVERSAMPLING: f64 = 8.0;
/// Default preamble: 16 alternating bits.
pub const DEFAULT_PREAMBLE_BITS: usize = 16;

fn integer_sps(sample_rate: f64, bit_rate: f64) -> Result<usize> {
    if !(bit_rate.is_finite() && bit_rate > 0.0) {
        return Err(config(format!("bit rate must be > 0, got {bit_rate}")));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(config(format!(
            "sample rate must be > 0, got {sample_rate}"
        )));
    }
    let ratio = sample_rate / bit_rate;
    let rounded = libm::round(ratio);
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio {
        return Err(config(format!(
            "sample rate {sample_rate} is not an integer multiple of bit rate {bit_rate}"
        )));
    }
    Ok(rounded as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskConfig {
    pub bit_rate: f64,
    pub sample_rate: f64,
    pub preamble: BitStream,
    pub threshold_fraction: f64,
    pub lpf_cutoff: f64,
}

impl AskConfig {
    /// Alternating 16-bit preamble, midpoint slicer, low-pass at half the bit rate.
    pub fn new(bit_rate: f64, sample_rate: f64) -> Self {
        AskConfig {
            bit_rate,
            sample_rate,
            preamble: BitStream::alternating(DEFAULT_PREAMBLE_BITS),
            threshold_fraction: 0.5,
            lpf_cutoff: 0.5 * bit_rate,
        }
    }

    pub fn samples_per_symbol(&self) -> Result<usize> {
        integer_sps(self.sample_rate, self.bit_rate)
    }

    pub fn validate(&self) -> Result<()> {
        let sps = self.samples_per_symbol()?;
        if (sps as f64) < MIN_ASK_OVERSAMPLING {
            return Err(config(format!(
                "ASK needs at least {MIN_ASK_OVERSAMPLING} samples per symbol, got {sps}"
            )));
        }
        if !(self.threshold_fraction > 0.0 && self.threshold_fraction < 1.0) {
            return Err(config("threshold_fraction must be in (0, 1)"));
        }
        if !(self.lpf_cutoff > 0.0 && self.lpf_cutoff < self.sample_rate / 2.0) {
            return Err(config("lpf_cutoff must be in (0, sample_rate/2)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FskConfig {
    pub tone0: f64,
    pub tone1: f64,
    pub bit_rate: f64,
    pub sample_rate: f64,
    /// Offset step of the brute-force timing search.
    #[serde(default = "default_stride")]
    pub sync_stride: usize,
}

fn default_stride() -> usize {
    1
}

impl FskConfig {
    /// Orthogonal tones one DFT bin apart at the symbol length:
    /// `sps` samples per symbol, tones on bins `bin0` and `bin0 + 1`.
    pub fn orthogonal(bit_rate: f64, sps: usize, bin0: usize) -> Self {
        FskConfig {
            tone0: bin0 as f64 * bit_rate,
            tone1: (bin0 + 1) as f64 * bit_rate,
            bit_rate,
            sample_rate: sps as f64 * bit_rate,
            sync_stride: 1,
        }
    }

    /// 16 samples per symbol, tones on bins 4 and 5.
    pub fn new(bit_rate: f64) -> Self {
        Self::orthogonal(bit_rate, 16, 4)
    }

    pub fn samples_per_symbol(&self) -> Result<usize> {
        integer_sps(self.sample_rate, self.bit_rate)
    }

    pub fn validate(&self) -> Result<()> {
        let sps = self.samples_per_symbol()?;
        let nyq = self.sample_rate / 2.0;
        for t in [self.tone0, self.tone1] {
            if !(t.is_finite() && t > 0.0 && t < nyq) {
                return Err(config(format!("tone {t} Hz outside (0, {nyq}) Hz")));
            }
        }
        if self.tone0 == self.tone1 {
            return Err(config("FSK tones must differ"));
        }
        if self.sync_stride == 0 {
            return Err(config("sync_stride must be >= 1"));
        }
        let (k0, k1) = (self.bin(self.tone0, sps), self.bin(self.tone1, sps));
        if k0 == k1 {
            return Err(config(format!(
                "tones {} and {} fall in the same DFT bin at {sps} samples per symbol",
                self.tone0, self.tone1
            )));
        }
        Ok(())
    }

    fn bin(&self, tone: f64, sps: usize) -> usize {
        libm::round(sps as f64 * tone / self.sample_rate) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub bits: BitStream,
    pub sync_offset_samples: usize,
    pub per_bit_metric: Vec<f64>,
}

/// On-off keyed envelope: preamble then payload, one symbol of 1.0 or 0.0 per bit.
pub fn ask_modulate(payload: &BitStream, cfg: &AskConfig) -> Result<BasebandSignal> {
    if payload.is_empty() {
        return Err(config("ASK payload is empty"));
    }
    cfg.validate()?;
    let sps = cfg.samples_per_symbol()?;
    Ok(BasebandSignal::from_parts(
        keyed_waveform(cfg.preamble.bits().iter().chain(payload.bits()), sps),
        cfg.sample_rate,
    ))
}

fn keyed_waveform<'a>(bits: impl Iterator<Item = &'a bool>, sps: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for &b in bits {
        out.extend(core::iter::repeat_n(if b { 1.0 } else { 0.0 }, sps));
    }
    out
}

/// Feedback coefficient of the single-pole smoother whose response is
/// exactly −3.01 dB at `cutoff`.
fn lowpass_alpha(cutoff: f64, sample_rate: f64) -> f64 {
    let c = libm::cos(2.0 * PI * cutoff / sample_rate);
    let a = 2.0 - c;
    let pole = a - libm::sqrt(a * a - 1.0);
    1.0 - pole
}

fn lowpass_samples(x: &[f64], alpha: f64) -> Vec<f64> {
    let mut y = 0.0;
    x.iter()
        .map(|&v| {
            y += alpha * (v - y);
            y
        })
        .collect()
}

/// Single-pole IIR low-pass, unit DC gain, starting from rest.
pub fn lowpass(sig: &BasebandSignal, cutoff: Frequency) -> Result<BasebandSignal> {
    let fc = cutoff.value();
    if !(fc > 0.0 && fc < sig.sample_rate() / 2.0) {
        return Err(config(format!(
            "cutoff {fc} Hz outside (0, {}) Hz",
            sig.sample_rate() / 2.0
        )));
    }
    let alpha = lowpass_alpha(fc, sig.sample_rate());
    Ok(BasebandSignal::from_parts(
        lowpass_samples(sig.samples(), alpha),
        sig.sample_rate(),
    ))
}

/// Fraction of the per-sample white-noise variance that passes [`lowpass`].
pub fn lowpass_noise_gain(cutoff: f64, sample_rate: f64) -> f64 {
    let alpha = lowpass_alpha(cutoff, sample_rate);
    alpha / (2.0 - alpha)
}

/// Recovers payload bits from a rectified OOK envelope.
pub fn ask_demodulate(envelope: &BasebandSignal, cfg: &AskConfig) -> Result<DecodeResult> {
    cfg.validate()?;
    if cfg.preamble.is_empty() {
        return Err(config("ASK demodulation needs a non-empty preamble"));
    }
    let sps = cfg.samples_per_symbol()?;
    let pre_len = cfg.preamble.len() * sps;
    if envelope.len() < pre_len + sps {
        return Err(length(format!(
            "envelope has {} samples, need at least {}",
            envelope.len(),
            pre_len + sps
        )));
    }

    let alpha = lowpass_alpha(cfg.lpf_cutoff, cfg.sample_rate);
    let filtered = lowpass_samples(envelope.samples(), alpha);

    let (lo, hi) = min_max(&filtered);
    if hi <= lo {
        return Err(Error::Sync("flat envelope has no level crossing".into()));
    }
    let mid = 0.5 * (lo + hi);
    let crossing = filtered
        .iter()
        .position(|&v| v >= mid)
        .ok_or_else(|| Error::Sync("no mid-level crossing".into()))?;
    // step response of the smoother reaches one half after this many samples
    let half_rise = libm::ceil(libm::log(0.5) / libm::log(1.0 - alpha)) as usize - 1;
    let coarse = crossing.saturating_sub(half_rise);

    let template = lowpass_samples(&keyed_waveform(cfg.preamble.bits().iter(), sps), alpha);
    let last_start = filtered.len() - pre_len;
    let first = coarse.saturating_sub(sps / 2).min(last_start);
    let end = (first + sps).min(last_start + 1);
    let start = best_correlation(&filtered, &template, first..end);

    // on/off levels from the preamble's symbol centres, where bits are decided
    let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0usize, 0.0, 0usize);
    for (i, &b) in cfg.preamble.bits().iter().enumerate() {
        let v = filtered[start + i * sps + sps / 2];
        if b {
            on += v;
            n_on += 1;
        } else {
            off += v;
            n_off += 1;
        }
    }
    if n_on == 0 || n_off == 0 {
        return Err(config("ASK preamble must contain both bit values"));
    }
    let (pre_lo, pre_hi) = (off / n_off as f64, on / n_on as f64);
    let threshold = cfg.threshold_fraction * (pre_hi - pre_lo) + pre_lo;

    let n_bits = (filtered.len() - start - pre_len) / sps;
    let mut bits = Vec::with_capacity(n_bits);
    let mut metric = Vec::with_capacity(n_bits);
    for k in 0..n_bits {
        let v = filtered[start + pre_len + k * sps + sps / 2];
        bits.push(v > threshold);
        metric.push(v - threshold);
    }
    Ok(DecodeResult {
        bits: BitStream(bits),
        sync_offset_samples: start % sps,
        per_bit_metric: metric,
    })
}

fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Offset in `range` maximizing the normalized (Pearson) correlation with
/// `template`; the smallest offset wins ties.
fn best_correlation(x: &[f64], template: &[f64], range: core::ops::Range<usize>) -> usize {
    let n = template.len() as f64;
    let t_mean = template.iter().sum::<f64>() / n;
    let t_centered: Vec<f64> = template.iter().map(|v| v - t_mean).collect();
    let t_norm = libm::sqrt(t_centered.iter().map(|v| v * v).sum::<f64>());

    let mut best = range.start;
    let mut best_score = f64::NEG_INFINITY;
    for o in range {
        let w = &x[o..o + template.len()];
        let w_mean = w.iter().sum::<f64>() / n;
        let mut dot = 0.0;
        let mut w_sq = 0.0;
        for (a, b) in w.iter().zip(&t_centered) {
            let c = a - w_mean;
            dot += c * b;
            w_sq += c * c;
        }
        let denom = libm::sqrt(w_sq) * t_norm;
        let score = if denom > 0.0 {
            dot / denom
        } else {
            f64::NEG_INFINITY
        };
        if score > best_score {
            best_score = score;
            best = o;
        }
    }
    best
}

/// Phase-continuous binary FSK at unit amplitude.
pub fn fsk_modulate(payload: &BitStream, cfg: &FskConfig) -> Result<BasebandSignal> {
    if payload.is_empty() {
        return Err(config("FSK payload is empty"));
    }
    cfg.validate()?;
    let sps = cfg.samples_per_symbol()?;
    let step0 = 2.0 * PI * cfg.tone0 / cfg.sample_rate;
    let step1 = 2.0 * PI * cfg.tone1 / cfg.sample_rate;
    let mut out = Vec::with_capacity(payload.len() * sps);
    let mut phase = 0.0f64;
    for &b in payload.bits() {
        let step = if b { step1 } else { step0 };
        for _ in 0..sps {
            out.push(libm::cos(phase));
            phase += step;
        }
        phase = libm::fmod(phase, 2.0 * PI);
    }
    Ok(BasebandSignal::from_parts(out, cfg.sample_rate))
}

/// Goertzel recurrence over `x` for angular bin frequency `omega`; returns `|X|`.
///
/// `coeff_skew` perturbs the recurrence coefficient and exists only so the
/// self-test can prove it detects a broken detector. Pass 0.0.
#[doc(hidden)]
pub fn goertzel_raw(x: &[f64], omega: f64, coeff_skew: f64) -> f64 {
    reinsch::<1>(x, [omega], coeff_skew)[0]
}

/// [`goertzel_raw`] for many bins at once; several recurrences run
/// interleaved, which is much faster than one bin at a time.
#[doc(hidden)]
pub fn goertzel_many(x: &[f64], omegas: &[f64], coeff_skew: f64) -> Vec<f64> {
    const L: usize = 4;
    let mut out = Vec::with_capacity(omegas.len());
    let mut chunks = omegas.chunks_exact(L);
    for c in &mut chunks {
        let mut w = [0.0; L];
        w.copy_from_slice(c);
        out.extend_from_slice(&reinsch::<L>(x, w, coeff_skew));
    }
    for &w in chunks.remainder() {
        out.push(goertzel_raw(x, w, coeff_skew));
    }
    out
}

/// Reinsch's form of the Goertzel recurrence. The plain form loses about
/// n² ulps near DC and Nyquist, where 2·cos ω is close to ±2; carrying
/// `t = s[k] − σ·s[k−1]` with `λ = 2·cos ω − 2σ` computed from half-angle
/// sines keeps the error linear in n.
fn reinsch<const L: usize>(x: &[f64], omegas: [f64; L], coeff_skew: f64) -> [f64; L] {
    let mut sigma = [0.0; L];
    let mut lambda = [0.0; L];
    let mut sin_w = [0.0; L];
    for i in 0..L {
        let w = omegas[i];
        sin_w[i] = libm::sin(w);
        if libm::cos(w) >= 0.0 {
            let h = libm::sin(w / 2.0);
            sigma[i] = 1.0;
            lambda[i] = -4.0 * h * h + coeff_skew;
        } else {
            let h = libm::cos(w / 2.0);
            sigma[i] = -1.0;
            lambda[i] = 4.0 * h * h + coeff_skew;
        }
    }
    let mut s = [0.0; L];
    let mut t = [0.0; L];
    for &v in x {
        for i in 0..L {
            t[i] = sigma[i] * t[i] + v + lambda[i] * s[i];
            s[i] = t[i] + sigma[i] * s[i];
        }
    }
    let mut out = [0.0; L];
    for i in 0..L {
        // X_k = e^{jω}·s[N-1] − s[N-2], with c − σ = λ/2
        let re = 0.5 * lambda[i] * s[i] + sigma[i] * t[i];
        let im = sin_w[i] * s[i];
        out[i] = libm::sqrt(re * re + im * im);
    }
    out
}

/// Magnitude of DFT bin `k` of the first `n` samples.
pub fn goertzel_bin(x: &[f64], k: usize, n: usize) -> f64 {
    goertzel_raw(&x[..n], 2.0 * PI * k as f64 / n as f64, 0.0)
}

/// `|X_k|` of the length-`n` DFT of the signal's first `n` samples, with
/// `k = round(n · target / sample_rate)`.
pub fn goertzel(sig: &BasebandSignal, target: Frequency, n: usize) -> Result<f64> {
    if n == 0 || n > sig.len() {
        return Err(length(format!(
            "window of {n} samples invalid for a signal of {}",
            sig.len()
        )));
    }
    let fs = sig.sample_rate();
    if target.value() >= fs / 2.0 {
        return Err(config(format!(
            "target {} Hz must be below Nyquist {} Hz",
            target.value(),
            fs / 2.0
        )));
    }
    let k = libm::round(n as f64 * target.value() / fs) as usize;
    Ok(goertzel_bin(sig.samples(), k, n))
}

/// Brute-force-synchronized noncoherent FSK detection.
pub fn fsk_demodulate(sig: &BasebandSignal, cfg: &FskConfig) -> Result<DecodeResult> {
    cfg.validate()?;
    let sps = cfg.samples_per_symbol()?;
    if sig.len() < 2 * sps {
        return Err(length(format!(
            "FSK input has {} samples, need at least two symbols ({})",
            sig.len(),
            2 * sps
        )));
    }
    let x = sig.samples();
    let w0 = 2.0 * PI * cfg.bin(cfg.tone0, sps) as f64 / sps as f64;
    let w1 = 2.0 * PI * cfg.bin(cfg.tone1, sps) as f64 / sps as f64;
    let mags = |o: usize| {
        x[o..]
            .chunks_exact(sps)
            .map(move |sym| (goertzel_raw(sym, w0, 0.0), goertzel_raw(sym, w1, 0.0)))
    };

    let mut best_offset = 0;
    let mut best_score = f64::NEG_INFINITY;
    for o in (0..sps).step_by(cfg.sync_stride) {
        let score: f64 = mags(o).map(|(m0, m1)| (m1 - m0).abs()).sum();
        if score > best_score {
            best_score = score;
            best_offset = o;
        }
    }

    let (bits, metric): (Vec<bool>, Vec<f64>) =
        mags(best_offset).map(|(m0, m1)| (m1 > m0, m1 - m0)).unzip();
    Ok(DecodeResult {
        bits: BitStream(bits),
        sync_offset_samples: best_offset,
        per_bit_metric: metric,
    })
}
