//! Regenerative front-end: feedback-loop and resonator circuit math, plus
//! memoryless behavioral models of the regenerative amplifier and the
//! envelope-detecting rectifier.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::signal::{dbm_to_watts, gaussian, BasebandSignal, Frequency, PowerLevel, RandomSource};

/// Guard on `|1 - f·G|` below which the loop is treated as oscillating.
pub const DEFAULT_OSCILLATION_EPS: f64 = 1e-9;
/// Phase tolerance (degrees) for the 0 mod 360° oscillation condition.
pub const DEFAULT_PHASE_TOLERANCE_DEG: f64 = 1.0;

/// Amplifier with a positive feedback path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopModel {
    pub open_loop_gain: f64,
    pub feedback_factor: f64,
    #[serde(default)]
    pub loop_phase_deg: f64,
}

impl LoopModel {
    pub fn new(open_loop_gain: f64, feedback_factor: f64, loop_phase_deg: f64) -> Result<Self> {
        if !(open_loop_gain.is_finite() && open_loop_gain > 0.0) {
            return Err(domain("open-loop gain must be > 0"));
        }
        if !(feedback_factor.is_finite() && feedback_factor >= 0.0) {
            return Err(domain("feedback factor must be >= 0"));
        }
        Ok(LoopModel {
            open_loop_gain,
            feedback_factor,
            loop_phase_deg,
        })
    }

    pub fn loop_gain(&self) -> f64 {
        self.feedback_factor * self.open_loop_gain
    }
}

/// `G / (1 - f·G)` with the default oscillation guard.
pub fn closed_loop_gain(m: &LoopModel) -> Result<f64> {
    closed_loop_gain_with_eps(m, DEFAULT_OSCILLATION_EPS)
}

pub fn closed_loop_gain_with_eps(m: &LoopModel, eps: f64) -> Result<f64> {
    let denom = 1.0 - m.loop_gain();
    if denom.abs() <= eps {
        return Err(Error::Oscillation(format!(
            "loop gain f·G = {} is at unity",
            m.loop_gain()
        )));
    }
    Ok(m.open_loop_gain / denom)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stability {
    Stable {
        gain_margin_db: f64,
        phase_margin_deg: f64,
    },
    Oscillating,
}

pub fn barkhausen_check(m: &LoopModel) -> Stability {
    barkhausen_check_with_tolerance(m, DEFAULT_PHASE_TOLERANCE_DEG)
}

pub fn barkhausen_check_with_tolerance(m: &LoopModel, phase_tol_deg: f64) -> Stability {
    let loop_gain = m.loop_gain();
    let wrapped = libm::fmod(libm::fmod(m.loop_phase_deg, 360.0) + 360.0, 360.0);
    let phase_margin_deg = wrapped.min(360.0 - wrapped);
    if loop_gain.abs() >= 1.0 && phase_margin_deg <= phase_tol_deg {
        Stability::Oscillating
    } else {
        Stability::Stable {
            gain_margin_db: -20.0 * libm::log10(loop_gain.abs()),
            phase_margin_deg,
        }
    }
}

/// Series RLC feedback resonator with a feedback-induced negative resistance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorParams {
    pub inductance: f64,
    pub capacitance: f64,
    pub reactance: f64,
    pub resistance: f64,
    pub negative_resistance: f64,
}

/// `X / (R - |R_neg|)`.
pub fn quality_factor(r: &ResonatorParams) -> Result<f64> {
    if !(r.reactance > 0.0 && r.resistance > 0.0 && r.negative_resistance >= 0.0) {
        return Err(domain("resonator requires X > 0, R > 0, R_neg >= 0"));
    }
    let net = r.resistance - r.negative_resistance;
    if net <= 0.0 {
        return Err(Error::Oscillation(format!(
            "negative resistance {} cancels ohmic loss {}",
            r.negative_resistance, r.resistance
        )));
    }
    Ok(r.reactance / net)
}

/// `1 / (2π √(LC))` in Hz.
pub fn resonant_frequency(inductance: f64, capacitance: f64) -> Result<Frequency> {
    if !(inductance > 0.0 && capacitance > 0.0) {
        return Err(domain(format!(
            "L and C must be > 0, got L={inductance}, C={capacitance}"
        )));
    }
    Frequency::hz(1.0 / (2.0 * PI * libm::sqrt(inductance * capacitance)))
}

/// Interdigitated capacitor geometry. `a1`, `a2` are the substrate-dependent
/// coefficients in F/m; there are no defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterdigCapParams {
    pub eps_r: f64,
    pub finger_length: f64,
    pub n_fingers: u32,
    pub a1: f64,
    pub a2: f64,
}

/// `(εr + 1) · l · (N − 3) · (A1 + A2)`.
pub fn interdig_capacitance(p: &InterdigCapParams) -> Result<f64> {
    if p.n_fingers < 3 {
        return Err(domain(format!(
            "need at least 3 fingers, got {}",
            p.n_fingers
        )));
    }
    if !(p.eps_r >= 1.0 && p.finger_length > 0.0 && p.a1 + p.a2 > 0.0) {
        return Err(domain(
            "interdigitated capacitor requires eps_r >= 1, l > 0, A1 + A2 > 0",
        ));
    }
    Ok((p.eps_r + 1.0) * p.finger_length * f64::from(p.n_fingers - 3) * (p.a1 + p.a2))
}

/// `area · eps / d`.
pub fn parallel_plate_capacitance(area: f64, eps: f64, separation: f64) -> Result<f64> {
    if !(area > 0.0 && eps > 0.0 && separation > 0.0) {
        return Err(domain("parallel plate requires area, eps and d > 0"));
    }
    Ok(area * eps / separation)
}

/// Behavioral regenerative amplifier.
///
/// Gain in dB is the sum of a compression term, piecewise linear between
/// `(p_knee_low, g_small)` and `(p_knee_high, g_sat)` and flat outside, and a
/// single-pole resonator selectivity term that is 0 dB at `f0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplifierBehavioral {
    pub f0: f64,
    pub q: f64,
    pub g_small: f64,
    pub g_sat: f64,
    pub p_knee_low: f64,
    pub p_knee_high: f64,
    pub p_sat_out: f64,
}

impl AmplifierBehavioral {
    /// Uplink amplifier at 25.98 GHz with the measured Q of 210 and the
    /// 30 dB / 15 dB gain anchors at −40 / −10 dBm.
    pub fn uplink_default() -> Self {
        AmplifierBehavioral {
            f0: 25.98e9,
            q: 210.0,
            g_small: 30.0,
            g_sat: 15.0,
            p_knee_low: -40.0,
            p_knee_high: -10.0,
            p_sat_out: -35.0,
        }
    }

    /// Amplifier ahead of the downlink rectifier at 26.3 GHz.
    pub fn downlink_default() -> Self {
        AmplifierBehavioral {
            f0: 26.3e9,
            q: 420.0,
            ..Self::uplink_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [
            self.f0,
            self.q,
            self.g_small,
            self.g_sat,
            self.p_knee_low,
            self.p_knee_high,
            self.p_sat_out,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(domain("amplifier parameters must be finite"));
        }
        if self.f0 <= 0.0 {
            return Err(domain("amplifier f0 must be > 0"));
        }
        if self.q <= 0.0 {
            return Err(domain("amplifier Q must be > 0"));
        }
        if self.g_small < self.g_sat {
            return Err(domain("amplifier g_small must be >= g_sat"));
        }
        if self.p_knee_low >= self.p_knee_high {
            return Err(domain("amplifier p_knee_low must be < p_knee_high"));
        }
        Ok(())
    }

    /// Compression term in dB at input power `p_in` (dBm).
    pub fn compression_db(&self, p_in: f64) -> f64 {
        if p_in <= self.p_knee_low {
            self.g_small
        } else if p_in >= self.p_knee_high {
            self.g_sat
        } else {
            let t = (p_in - self.p_knee_low) / (self.p_knee_high - self.p_knee_low);
            self.g_small + t * (self.g_sat - self.g_small)
        }
    }

    /// Selectivity term in dB (≤ 0) at frequency `f` (Hz).
    pub fn selectivity_db(&self, f: f64) -> f64 {
        let x = 2.0 * self.q * (f - self.f0) / self.f0;
        -10.0 * libm::log10(1.0 + x * x)
    }

    /// Full width between the −3.01 dB points, `f0 / Q`.
    pub fn half_power_bandwidth(&self) -> f64 {
        self.f0 / self.q
    }
}

pub fn amp_gain(a: &AmplifierBehavioral, p_in: PowerLevel, f: Frequency) -> f64 {
    a.compression_db(p_in.value()) + a.selectivity_db(f.value())
}

/// Scales the waveform by the amplifier's gain. With `saturated_retransmit`
/// the output power clamps at `p_sat_out` whenever the boosted power reaches it.
pub fn amp_apply(
    a: &AmplifierBehavioral,
    sig: &BasebandSignal,
    p_in: PowerLevel,
    f: Frequency,
    saturated_retransmit: bool,
) -> Result<(BasebandSignal, PowerLevel)> {
    if sig.is_empty() {
        return Err(domain("amplifier input signal is empty"));
    }
    let p_out = amp_output_power(a, p_in, f, saturated_retransmit);
    let gain_db = if p_in.is_silent() {
        amp_gain(a, p_in, f)
    } else {
        p_out.value() - p_in.value()
    };
    let k = libm::pow(10.0, gain_db / 20.0);
    Ok((sig.scaled(k)?, p_out))
}

/// Output power of [`amp_apply`] without touching a waveform.
pub fn amp_output_power(
    a: &AmplifierBehavioral,
    p_in: PowerLevel,
    f: Frequency,
    saturated_retransmit: bool,
) -> PowerLevel {
    let boosted = p_in.value() + amp_gain(a, p_in, f);
    if saturated_retransmit && boosted >= a.p_sat_out {
        PowerLevel::dbm(a.p_sat_out).unwrap_or(PowerLevel::SILENT)
    } else {
        PowerLevel::dbm(boosted).unwrap_or(PowerLevel::SILENT)
    }
}

/// Envelope detector: power-law transfer from input watts to output volts,
/// plus white baseband noise.
///
/// Below `p_linear` the output follows `v_scale · (w / w_lin)^exponent_low`
/// (square law in voltage for `exponent_low = 1`), above it
/// `v_scale · (w / w_lin)^exponent_high`. `sensitivity` is the nominal quoted
/// figure; [`RectifierModel::effective_sensitivity_dbm`] is where the noiseless
/// output equals the noise RMS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectifierModel {
    pub sensitivity: f64,
    pub v_scale: f64,
    pub exponent_low: f64,
    #[serde(default = "default_exponent_high")]
    pub exponent_high: f64,
    pub p_linear: f64,
    pub baseband_noise_v: f64,
}

fn default_exponent_high() -> f64 {
    0.5
}

impl RectifierModel {
    /// Regenerative rectifier, −60 dBm noise-floor crossing.
    pub fn regenerative_default() -> Self {
        RectifierModel {
            sensitivity: -60.0,
            v_scale: 0.1,
            exponent_low: 1.0,
            exponent_high: 0.5,
            p_linear: -10.0,
            baseband_noise_v: 1e-6,
        }
    }

    /// Diode-only rectifier, −3 dBm noise-floor crossing.
    pub fn passive_default() -> Self {
        RectifierModel {
            sensitivity: -3.0,
            v_scale: 0.1,
            exponent_low: 1.0,
            exponent_high: 0.5,
            p_linear: 0.0,
            baseband_noise_v: 0.1 * libm::pow(10.0, -0.3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_scale.is_finite() && self.v_scale > 0.0) {
            return Err(domain("rectifier v_scale must be > 0"));
        }
        if !(self.exponent_low > 0.0 && self.exponent_high > 0.0) {
            return Err(domain("rectifier exponents must be > 0"));
        }
        if !(self.baseband_noise_v.is_finite() && self.baseband_noise_v >= 0.0) {
            return Err(domain("rectifier baseband noise must be >= 0"));
        }
        if !(self.p_linear.is_finite() && self.sensitivity.is_finite()) {
            return Err(domain("rectifier p_linear and sensitivity must be finite"));
        }
        Ok(())
    }

    /// Noiseless output volts for an input of `w` watts.
    pub fn transfer_watts(&self, w: f64) -> f64 {
        if w <= 0.0 {
            return 0.0;
        }
        let w_lin = dbm_to_watts(PowerLevel(self.p_linear));
        let ratio = w / w_lin;
        let e = if ratio < 1.0 {
            self.exponent_low
        } else {
            self.exponent_high
        };
        self.v_scale * libm::pow(ratio, e)
    }

    /// Noiseless output volts for an input in dBm (`-∞` gives zero).
    pub fn transfer_dbm(&self, p_in: f64) -> f64 {
        if p_in == f64::NEG_INFINITY {
            0.0
        } else {
            self.transfer_watts(dbm_to_watts(PowerLevel(p_in)))
        }
    }

    /// Input power (dBm) at which the noiseless output equals the noise RMS.
    pub fn effective_sensitivity_dbm(&self) -> f64 {
        if self.baseband_noise_v <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let r = self.baseband_noise_v / self.v_scale;
        let e = if r < 1.0 {
            self.exponent_low
        } else {
            self.exponent_high
        };
        self.p_linear + 10.0 * libm::log10(r) / e
    }

    /// Detects an RF amplitude trace (volts, 1 Ω, so `x²` watts per sample)
    /// in place, then adds noise when `noisy`.
    pub fn detect_amplitudes(&self, samples: &mut [f64], rng: &mut ChaCha8Rng, noisy: bool) {
        // keyed envelopes take few distinct values; reuse the last transfer
        let (mut last_in, mut last_out) = (0.0, self.transfer_watts(0.0));
        for x in samples.iter_mut() {
            let w = *x * *x;
            if w != last_in {
                last_in = w;
                last_out = self.transfer_watts(w);
            }
            *x = last_out;
        }
        if noisy && self.baseband_noise_v > 0.0 {
            for x in samples.iter_mut() {
                *x += self.baseband_noise_v * gaussian(rng);
            }
        }
    }
}

/// Rectifier output for a trace of instantaneous input powers in dBm
/// (`-∞` allowed for no carrier), sampled at `sample_rate`.
pub fn rectifier_envelope(
    r: &RectifierModel,
    p_in_trace: &[f64],
    sample_rate: f64,
    rng: RandomSource,
) -> Result<BasebandSignal> {
    if p_in_trace.is_empty() {
        return Err(domain("rectifier input trace is empty"));
    }
    if p_in_trace.iter().any(|p| p.is_nan() || *p == f64::INFINITY) {
        return Err(domain("rectifier input trace has NaN or +inf"));
    }
    r.validate()?;
    let mut rng = rng.rng();
    let samples: Vec<f64> = p_in_trace
        .iter()
        .map(|&p| r.transfer_dbm(p) + r.baseband_noise_v * gaussian(&mut rng))
        .collect();
    BasebandSignal::new(samples, sample_rate)
}
