//! Free-space propagation, thermal noise, carrier-offset penalties and the
//! composed downlink and backscatter uplink paths.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::frontend::{amp_output_power, AmplifierBehavioral};
use crate::signal::{
    add_awgn_in_place, dbm_to_watts, signal_power_watts, BasebandSignal, Frequency, PowerLevel,
};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const BOLTZMANN: f64 = 1.380649e-23;
/// Reference temperature for thermal noise, kelvin.
pub const T0: f64 = 290.0;

/// One-way link. `eirp` already includes the transmit antenna gain.
///
/// `tx_gain` is only consulted when the transmitter's conducted power is
/// computed downstream (the tag's return leg, where EIRP = amplifier output +
/// `tx_gain`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub distance: f64,
    pub carrier: f64,
    pub eirp: f64,
    pub rx_gain: f64,
    #[serde(default)]
    pub tx_gain: f64,
}

impl LinkGeometry {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier
    }
}

/// `20·log10(4πd/λ)` in dB. Far field is assumed, not checked.
pub fn free_space_path_loss_db(distance: f64, carrier: f64) -> Result<f64> {
    if !(distance.is_finite() && distance > 0.0) {
        return Err(domain(format!("distance must be > 0, got {distance}")));
    }
    if !(carrier.is_finite() && carrier > 0.0) {
        return Err(domain(format!("carrier must be > 0, got {carrier}")));
    }
    let lambda = SPEED_OF_LIGHT / carrier;
    Ok(20.0 * libm::log10(4.0 * core::f64::consts::PI * distance / lambda))
}

pub fn friis_received_power(g: &LinkGeometry) -> Result<PowerLevel> {
    let loss = free_space_path_loss_db(g.distance, g.carrier)?;
    PowerLevel::dbm(g.eirp + g.rx_gain - loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub temperature: f64,
    pub noise_figure: f64,
    pub bandwidth: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.bandwidth > 0.0 && self.noise_figure.is_finite()) {
            return Err(domain(
                "noise model needs temperature > 0, bandwidth > 0, finite NF",
            ));
        }
        Ok(())
    }

    /// Noise power in `bandwidth`, dBm.
    pub fn noise_power_dbm(&self) -> f64 {
        thermal_noise_psd(self) + 10.0 * libm::log10(self.bandwidth)
    }
}

/// `10·log10(k·T·1000) + NF`, dBm/Hz.
pub fn thermal_noise_psd(n: &NoiseModel) -> f64 {
    10.0 * libm::log10(BOLTZMANN * n.temperature * 1000.0) + n.noise_figure
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// Tag resonator detuning only.
    DownlinkResonance,
    /// Detuning plus loss of coherence between the reader carrier and the
    /// re-emitted signal.
    UplinkCoherence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetPenaltyModel {
    pub kind: PenaltyKind,
    #[serde(default)]
    pub sigma_hz: f64,
}

impl OffsetPenaltyModel {
    pub fn downlink() -> Self {
        OffsetPenaltyModel {
            kind: PenaltyKind::DownlinkResonance,
            sigma_hz: 0.0,
        }
    }

    /// Uplink model whose total penalty is `target_db` at `offset_hz`.
    pub fn uplink_calibrated(
        amp: &AmplifierBehavioral,
        offset_hz: f64,
        target_db: f64,
    ) -> Result<Self> {
        let detuning = -amp.selectivity_db(amp.f0 + offset_hz);
        let excess = target_db - detuning;
        if !(offset_hz > 0.0 && excess > 0.0) {
            return Err(config(format!(
                "cannot place {target_db} dB at {offset_hz} Hz: detuning alone is {detuning} dB"
            )));
        }
        Ok(OffsetPenaltyModel {
            kind: PenaltyKind::UplinkCoherence,
            sigma_hz: offset_hz / libm::sqrt(excess / (10.0 * core::f64::consts::LOG10_E)),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == PenaltyKind::UplinkCoherence
            && !(self.sigma_hz > 0.0 && self.sigma_hz.is_finite())
        {
            return Err(domain("uplink coherence penalty needs sigma_hz > 0"));
        }
        Ok(())
    }
}

/// Penalty in dB (≥ 0) for a carrier `delta_f` away from the amplifier's f0.
pub fn offset_penalty(
    m: &OffsetPenaltyModel,
    amp: &AmplifierBehavioral,
    delta_f: Frequency,
) -> Result<f64> {
    m.validate()?;
    let df = delta_f.value();
    let detuning = -amp.selectivity_db(amp.f0 + df);
    Ok(match m.kind {
        PenaltyKind::DownlinkResonance => detuning,
        PenaltyKind::UplinkCoherence => {
            let r = df / m.sigma_hz;
            detuning + 10.0 * core::f64::consts::LOG10_E * r * r
        }
    })
}

/// Reader-to-tag ASK path: returns the envelope rescaled so that amplitude
/// 1.0 carries the received on-state power, and that power. Noise is left to
/// the rectifier model.
pub fn downlink_path(
    tx: &BasebandSignal,
    g: &LinkGeometry,
    amp: &AmplifierBehavioral,
    delta_f: Frequency,
) -> Result<(BasebandSignal, PowerLevel)> {
    if tx.is_empty() {
        return Err(domain("downlink input is empty"));
    }
    let p_rx = downlink_received_power(g, amp, delta_f)?;
    let out = tx.scaled(libm::sqrt(dbm_to_watts(p_rx)))?;
    Ok((out, p_rx))
}

pub fn downlink_received_power(
    g: &LinkGeometry,
    amp: &AmplifierBehavioral,
    delta_f: Frequency,
) -> Result<PowerLevel> {
    let friis = friis_received_power(g)?;
    let penalty = offset_penalty(&OffsetPenaltyModel::downlink(), amp, delta_f)?;
    PowerLevel::dbm(friis.value() - penalty)
}

/// Carrier-in, FSK-out backscatter round trip through the tag amplifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UplinkPath {
    /// Reader carrier to tag: `eirp` is the carrier EIRP, `rx_gain` the tag antenna.
    pub down: LinkGeometry,
    /// Tag to reader: `tx_gain` is the tag antenna, `rx_gain` the reader antenna.
    pub up: LinkGeometry,
    pub amp: AmplifierBehavioral,
    pub penalty: OffsetPenaltyModel,
    pub noise: NoiseModel,
    pub saturated_retransmit: bool,
    pub noisy: bool,
}

impl UplinkPath {
    /// Carrier power arriving at the tag amplifier input.
    pub fn tag_input_power(&self) -> Result<PowerLevel> {
        friis_received_power(&self.down)
    }

    pub fn tag_output_power(&self) -> Result<PowerLevel> {
        let f0 = Frequency::hz(self.amp.f0)?;
        Ok(amp_output_power(
            &self.amp,
            self.tag_input_power()?,
            f0,
            self.saturated_retransmit,
        ))
    }

    /// Power of the modulated return at the reader, dBm.
    pub fn received_power(&self, delta_f: Frequency) -> Result<PowerLevel> {
        let p_out = self.tag_output_power()?;
        let loss = free_space_path_loss_db(self.up.distance, self.up.carrier)?;
        let penalty = offset_penalty(&self.penalty, &self.amp, delta_f)?;
        PowerLevel::dbm(p_out.value() + self.up.tx_gain + self.up.rx_gain - loss - penalty)
    }

    /// Runs the unit-amplitude FSK waveform through the round trip and adds
    /// reader noise (when `noisy`). Output power equals the returned level.
    pub fn roundtrip(
        &self,
        mod_sig: &BasebandSignal,
        delta_f: Frequency,
        rng: &mut ChaCha8Rng,
    ) -> Result<(BasebandSignal, PowerLevel)> {
        if mod_sig.is_empty() {
            return Err(domain("uplink modulation signal is empty"));
        }
        self.noise.validate()?;
        let p_rx = self.received_power(delta_f)?;
        // the amplifier only sets the retransmitted level; waveform shape is preserved
        let p_mod = signal_power_watts(mod_sig)?;
        if p_mod <= 0.0 {
            return Err(domain("uplink modulation signal is all zeros"));
        }
        let k = libm::sqrt(dbm_to_watts(p_rx) / p_mod);
        let mut samples: Vec<f64> = mod_sig.samples().iter().map(|x| x * k).collect();
        if self.noisy {
            add_awgn_in_place(
                &mut samples,
                self.noise_per_sample(mod_sig.sample_rate()),
                rng,
            )?;
        }
        Ok((BasebandSignal::new(samples, mod_sig.sample_rate())?, p_rx))
    }

    /// Variance of real reader noise per sample at `sample_rate` (W, 1 Ω).
    pub fn noise_per_sample(&self, sample_rate: f64) -> f64 {
        dbm_to_watts(PowerLevel(thermal_noise_psd(&self.noise))) * sample_rate / 2.0
    }
}

/// Functional form of [`UplinkPath::roundtrip`] for callers holding a seed.
#[allow(clippy::too_many_arguments)]
pub fn uplink_roundtrip(
    g_down: &LinkGeometry,
    amp: &AmplifierBehavioral,
    mod_sig: &BasebandSignal,
    g_up: &LinkGeometry,
    noise: &NoiseModel,
    penalty: &OffsetPenaltyModel,
    delta_f: Frequency,
    saturated_retransmit: bool,
    rng: crate::signal::RandomSource,
) -> Result<(BasebandSignal, PowerLevel)> {
    let path = UplinkPath {
        down: *g_down,
        up: *g_up,
        amp: *amp,
        penalty: *penalty,
        noise: *noise,
        saturated_retransmit,
        noisy: true,
    };
    path.roundtrip(mod_sig, delta_f, &mut rng.rng())
}
