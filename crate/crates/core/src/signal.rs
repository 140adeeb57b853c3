//! Units, sampled-signal primitives, power measurement and seeded noise.
//!
//! Power is referenced to 1 Ω throughout: a sample value `x` volts carries
//! `x²` watts, so a unit-amplitude sinusoid measures 0.5 W.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Absolute power in dBm.
///
/// `f64::NEG_INFINITY` is the sentinel for exactly zero watts, returned by
/// [`signal_power`] on silent input. NaN and `+∞` are never valid.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerLevel(pub(crate) f64);

impl PowerLevel {
    pub const SILENT: PowerLevel = PowerLevel(f64::NEG_INFINITY);

    pub fn dbm(value: f64) -> Result<Self> {
        if value.is_nan() || value == f64::INFINITY {
            return Err(domain(format!("power level must be finite, got {value}")));
        }
        Ok(PowerLevel(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn watts(self) -> f64 {
        dbm_to_watts(self)
    }

    pub fn is_silent(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

/// A frequency or frequency offset in Hz.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Frequency(f64);

impl Frequency {
    /// Carrier or tone frequency, strictly positive.
    pub fn hz(value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(domain(format!("frequency must be > 0, got {value}")));
        }
        Ok(Frequency(value))
    }

    /// Offset or DC frequency, non-negative.
    pub fn offset(value: f64) -> Result<Self> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(domain(format!(
                "frequency offset must be >= 0, got {value}"
            )));
        }
        Ok(Frequency(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Ordered binary symbols.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BitStream(pub Vec<bool>);

impl BitStream {
    pub fn new(bits: Vec<bool>) -> Self {
        BitStream(bits)
    }

    /// Builds a stream from `0`/`1` integers; any non-zero value is a one.
    pub fn from_u8(bits: &[u8]) -> Self {
        BitStream(bits.iter().map(|&b| b != 0).collect())
    }

    /// `n` alternating bits starting with one: `1010…`.
    pub fn alternating(n: usize) -> Self {
        BitStream((0..n).map(|i| i % 2 == 0).collect())
    }

    /// `n` uniformly random bits.
    pub fn random(n: usize, rng: &mut ChaCha8Rng) -> Self {
        use rand_core::RngCore;
        let mut bits = Vec::with_capacity(n);
        while bits.len() < n {
            let word = rng.next_u64();
            let take = (n - bits.len()).min(64);
            bits.extend((0..take).map(|i| (word >> i) & 1 == 1));
        }
        BitStream(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }
}

/// Uniformly sampled real amplitude trace.
#[derive(Debug, Clone, PartialEq)]
pub struct BasebandSignal {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl BasebandSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(domain(format!(
                "sample rate must be > 0, got {sample_rate}"
            )));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(domain(format!("sample {i} is not finite")));
        }
        Ok(BasebandSignal {
            samples,
            sample_rate,
        })
    }

    /// Caller guarantees finite samples and a positive rate.
    pub(crate) fn from_parts(samples: Vec<f64>, sample_rate: f64) -> Self {
        debug_assert!(sample_rate > 0.0);
        debug_assert!(samples.iter().all(|x| x.is_finite()));
        BasebandSignal {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Multiplies every sample by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        if !k.is_finite() {
            return Err(domain("scale factor must be finite"));
        }
        Ok(Self::from_parts(
            self.samples.iter().map(|x| x * k).collect(),
            self.sample_rate,
        ))
    }

    /// Prepends `n` zero samples.
    pub fn delayed(&self, n: usize) -> Self {
        let mut samples = Vec::with_capacity(self.samples.len() + n);
        samples.resize(n, 0.0);
        samples.extend_from_slice(&self.samples);
        Self::from_parts(samples, self.sample_rate)
    }
}

/// Seed plus stream identifier of a counter-based generator.
///
/// Equal `(seed, stream_id)` pairs produce equal sequences on every platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSource {
    pub seed: u64,
    pub stream_id: u64,
}

impl RandomSource {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RandomSource { seed, stream_id }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Standard normal draw.
pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn dbm_to_watts(p: PowerLevel) -> f64 {
    libm::pow(10.0, (p.0 - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> Result<PowerLevel> {
    if !(w.is_finite() && w > 0.0) {
        return Err(domain(format!("power must be > 0 W, got {w}")));
    }
    Ok(PowerLevel(10.0 * libm::log10(w) + 30.0))
}

/// Mean-square power in watts (1 Ω reference).
pub fn signal_power_watts(sig: &BasebandSignal) -> Result<f64> {
    if sig.is_empty() {
        return Err(domain("signal power of an empty signal"));
    }
    let sum: f64 = sig.samples.iter().map(|x| x * x).sum();
    Ok(sum / sig.samples.len() as f64)
}

/// Mean-square power as dBm; silent input yields [`PowerLevel::SILENT`].
pub fn signal_power(sig: &BasebandSignal) -> Result<PowerLevel> {
    let w = signal_power_watts(sig)?;
    if w == 0.0 {
        Ok(PowerLevel::SILENT)
    } else {
        watts_to_dbm(w)
    }
}

/// Adds zero-mean white Gaussian noise of variance `noise_power` per sample.
pub fn add_awgn(
    sig: &BasebandSignal,
    noise_power: f64,
    rng: RandomSource,
) -> Result<BasebandSignal> {
    let mut out = sig.clone();
    add_awgn_in_place(&mut out.samples, noise_power, &mut rng.rng())?;
    Ok(out)
}

pub(crate) fn add_awgn_in_place(
    samples: &mut [f64],
    noise_power: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if !(noise_power.is_finite() && noise_power >= 0.0) {
        return Err(domain(format!(
            "noise power must be >= 0, got {noise_power}"
        )));
    }
    if noise_power == 0.0 {
        return Ok(());
    }
    let sigma = libm::sqrt(noise_power);
    for x in samples.iter_mut() {
        *x += sigma * gaussian(rng);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::PI;

    fn dbm(v: f64) -> PowerLevel {
        PowerLevel::dbm(v).unwrap()
    }

    #[test]
    fn dbm_watts_anchors() {
        assert_eq!(dbm_to_watts(dbm(0.0)), 0.001);
        assert!((dbm_to_watts(dbm(30.0)) - 1.0).abs() < 1e-15);
        assert!((dbm_to_watts(dbm(20.0)) - 0.1).abs() < 1e-15);
        assert!(watts_to_dbm(0.001).unwrap().value().abs() < 1e-12);
        assert!((watts_to_dbm(1.0).unwrap().value() - 30.0).abs() < 1e-12);
        let p = watts_to_dbm(libm::pow(10.0, -9.686)).unwrap().value();
        assert!((p + 66.86).abs() < 1e-9);
    }

    #[test]
    fn non_positive_watts_rejected() {
        assert!(matches!(watts_to_dbm(0.0), Err(crate::Error::Domain(_))));
        assert!(watts_to_dbm(-1.0).is_err());
        assert!(PowerLevel::dbm(f64::NAN).is_err());
    }

    #[test]
    fn power_of_reference_signals() {
        let zeros = BasebandSignal::new(vec![0.0; 100], 1.0).unwrap();
        assert!(signal_power(&zeros).unwrap().is_silent());
        assert_eq!(signal_power_watts(&zeros).unwrap(), 0.0);

        let n = 1000;
        let cos: Vec<f64> = (0..n)
            .map(|i| libm::cos(2.0 * PI * 10.0 * i as f64 / n as f64))
            .collect();
        let cos = BasebandSignal::new(cos, n as f64).unwrap();
        assert!((signal_power_watts(&cos).unwrap() - 0.5).abs() < 1e-12);

        let two = BasebandSignal::new(vec![2.0; 16], 1.0).unwrap();
        assert_eq!(signal_power_watts(&two).unwrap(), 4.0);

        let empty = BasebandSignal::new(vec![], 1.0).unwrap();
        assert!(signal_power(&empty).is_err());
    }

    #[test]
    fn signal_rejects_bad_input() {
        assert!(BasebandSignal::new(vec![1.0], 0.0).is_err());
        assert!(BasebandSignal::new(vec![f64::INFINITY], 1.0).is_err());
        let s = BasebandSignal::new(vec![0.0; 50], 100.0).unwrap();
        assert!((s.duration() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn awgn_zero_power_is_identity() {
        let s = BasebandSignal::new((0..64).map(|i| i as f64).collect(), 1.0).unwrap();
        assert_eq!(add_awgn(&s, 0.0, RandomSource::new(1, 2)).unwrap(), s);
        assert!(add_awgn(&s, -1.0, RandomSource::new(1, 2)).is_err());
    }

    #[test]
    fn awgn_variance_law_of_large_numbers() {
        let n = 1_000_000;
        let s = BasebandSignal::new(vec![0.25; n], 1.0).unwrap();
        let out = add_awgn(&s, 1.0, RandomSource::new(7, 0)).unwrap();
        let diff: Vec<f64> = out.samples().iter().map(|x| x - 0.25).collect();
        let mean = diff.iter().sum::<f64>() / n as f64;
        let var = diff.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn awgn_is_deterministic_per_stream() {
        let s = BasebandSignal::new(vec![0.0; 256], 1.0).unwrap();
        let a = add_awgn(&s, 0.3, RandomSource::new(42, 5)).unwrap();
        let b = add_awgn(&s, 0.3, RandomSource::new(42, 5)).unwrap();
        let c = add_awgn(&s, 0.3, RandomSource::new(42, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn random_bits_are_balanced() {
        let bits = BitStream::random(10_000, &mut RandomSource::new(3, 3).rng());
        let ones = bits.bits().iter().filter(|&&b| b).count();
        assert!((ones as f64 / 1e4 - 0.5).abs() < 0.02);
    }

    proptest::proptest! {
        #[test]
        fn dbm_roundtrip(p in -120.0f64..40.0) {
            let back = watts_to_dbm(dbm_to_watts(dbm(p))).unwrap().value();
            proptest::prop_assert!((back - p).abs() < 1e-12);
        }

        #[test]
        fn power_scales_quadratically(k in 0.01f64..100.0, seed in 0u64..1000) {
            let mut rng = RandomSource::new(seed, 0).rng();
            let s = BasebandSignal::new((0..64).map(|_| gaussian(&mut rng)).collect(), 1.0).unwrap();
            let p0 = signal_power_watts(&s).unwrap();
            let p1 = signal_power_watts(&s.scaled(k).unwrap()).unwrap();
            proptest::prop_assert!((p1 - k * k * p0).abs() <= 1e-12 * p1.max(1e-300));
        }
    }
}
