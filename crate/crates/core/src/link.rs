//! Monte Carlo and analytic link evaluation over distance, bit rate and
//! carrier offset.
//!
//! Each sweep point owns a [`RandomSource`] keyed by `(seed, row index)`, so
//! points can be evaluated in any order, on any number of threads, with
//! identical results. Long runs are split into frames of
//! [`ModemSettings::frame_bits`] payload bits, each with its own preamble and
//! timing recovery.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    downlink_received_power, thermal_noise_psd, LinkGeometry, NoiseModel, OffsetPenaltyModel,
    PenaltyKind, UplinkPath, T0,
};
use crate::error::{config, Error, Result};
use crate::frontend::{AmplifierBehavioral, RectifierModel};
use crate::modem::{
    ask_demodulate, ask_modulate, fsk_demodulate, fsk_modulate, lowpass_noise_gain, AskConfig,
    FskConfig, DEFAULT_PREAMBLE_BITS,
};
use crate::signal::{BasebandSignal, BitStream, Frequency, PowerLevel, RandomSource};

/// Smallest Monte Carlo run per sweep point.
pub const MIN_BITS_PER_POINT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Downlink,
    Uplink,
}

impl LinkKind {
    pub fn label(self) -> &'static str {
        match self {
            LinkKind::Downlink => "down",
            LinkKind::Uplink => "up",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkMetrics {
    pub p_rx_dbm: f64,
    pub eb_n0_db: f64,
    pub ber: f64,
    pub n_bits: usize,
    pub n_errors: usize,
    /// At least one frame failed timing recovery.
    pub sync_failed: bool,
}

/// Reader-to-tag ASK link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownlinkSetup {
    pub eirp_dbm: f64,
    pub carrier_hz: f64,
    pub tag_rx_gain_dbi: f64,
}

/// Reader carrier out, tag FSK back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UplinkSetup {
    pub carrier_eirp_dbm: f64,
    pub carrier_hz: f64,
    pub tag_rx_gain_dbi: f64,
    pub tag_tx_gain_dbi: f64,
    pub reader_rx_gain_dbi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModemSettings {
    /// Envelope sampling rate; must be an integer multiple of every downlink bit rate.
    pub ask_sample_rate: f64,
    pub ask_preamble_bits: usize,
    pub ask_threshold_fraction: f64,
    /// Low-pass cutoff as a fraction of the bit rate.
    pub ask_lpf_ratio: f64,
    pub fsk_samples_per_symbol: usize,
    /// DFT bin of the `0` tone; the `1` tone sits one bin above.
    pub fsk_bin0: usize,
    pub frame_bits: usize,
}

impl Default for ModemSettings {
    fn default() -> Self {
        ModemSettings {
            ask_sample_rate: 2.4e6,
            ask_preamble_bits: DEFAULT_PREAMBLE_BITS,
            ask_threshold_fraction: 0.5,
            ask_lpf_ratio: 0.5,
            fsk_samples_per_symbol: 16,
            fsk_bin0: 4,
            frame_bits: 10_000,
        }
    }
}

impl ModemSettings {
    pub fn ask_config(&self, bit_rate: f64) -> Result<AskConfig> {
        let cfg = AskConfig {
            bit_rate,
            sample_rate: self.ask_sample_rate,
            preamble: BitStream::alternating(self.ask_preamble_bits),
            threshold_fraction: self.ask_threshold_fraction,
            lpf_cutoff: self.ask_lpf_ratio * bit_rate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fsk_config(&self, bit_rate: f64) -> Result<FskConfig> {
        let cfg = FskConfig::orthogonal(bit_rate, self.fsk_samples_per_symbol, self.fsk_bin0);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Every model parameter the link evaluation depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBundle {
    pub uplink_amp: AmplifierBehavioral,
    pub downlink_amp: AmplifierBehavioral,
    pub rectifier: RectifierModel,
    pub passive_rectifier: RectifierModel,
    pub uplink_penalty: OffsetPenaltyModel,
    pub reader_noise: NoiseModel,
    pub downlink: DownlinkSetup,
    pub uplink: UplinkSetup,
    pub modem: ModemSettings,
    pub saturated_retransmit: bool,
    /// Disable to get noiseless waveforms (the analytic quantities are unaffected).
    pub noise_enabled: bool,
}

impl Default for ModelBundle {
    fn default() -> Self {
        let uplink_amp = AmplifierBehavioral::uplink_default();
        ModelBundle {
            uplink_amp,
            downlink_amp: AmplifierBehavioral::downlink_default(),
            rectifier: RectifierModel::regenerative_default(),
            passive_rectifier: RectifierModel::passive_default(),
            uplink_penalty: OffsetPenaltyModel {
                kind: PenaltyKind::UplinkCoherence,
                sigma_hz: 13.5e6,
            },
            reader_noise: NoiseModel {
                temperature: T0,
                noise_figure: 8.0,
                bandwidth: 1e6,
            },
            downlink: DownlinkSetup {
                eirp_dbm: 20.0,
                carrier_hz: 26.3e9,
                tag_rx_gain_dbi: 20.0,
            },
            uplink: UplinkSetup {
                carrier_eirp_dbm: 20.0,
                carrier_hz: 25.98e9,
                tag_rx_gain_dbi: 15.0,
                tag_tx_gain_dbi: 5.0,
                reader_rx_gain_dbi: 10.0,
            },
            modem: ModemSettings::default(),
            saturated_retransmit: true,
            noise_enabled: true,
        }
    }
}

/// Names accepted by [`ModelBundle::param`] and [`ModelBundle::set_param`].
pub const PARAM_NAMES: &[&str] = &[
    "uplink_amp.q",
    "uplink_amp.g_small",
    "uplink_amp.g_sat",
    "uplink_amp.p_knee_low",
    "uplink_amp.p_knee_high",
    "uplink_amp.p_sat_out",
    "downlink_amp.q",
    "rectifier.v_scale",
    "rectifier.p_linear",
    "rectifier.baseband_noise_v",
    "passive_rectifier.v_scale",
    "passive_rectifier.p_linear",
    "passive_rectifier.baseband_noise_v",
    "uplink_penalty.sigma_hz",
    "reader_noise.noise_figure",
    "uplink.reader_rx_gain_dbi",
    "uplink.tag_tx_gain_dbi",
    "downlink.tag_rx_gain_dbi",
    "modem.ask_lpf_ratio",
];

impl ModelBundle {
    fn slot(&mut self, name: &str) -> Result<&mut f64> {
        Ok(match name {
            "uplink_amp.q" => &mut self.uplink_amp.q,
            "uplink_amp.g_small" => &mut self.uplink_amp.g_small,
            "uplink_amp.g_sat" => &mut self.uplink_amp.g_sat,
            "uplink_amp.p_knee_low" => &mut self.uplink_amp.p_knee_low,
            "uplink_amp.p_knee_high" => &mut self.uplink_amp.p_knee_high,
            "uplink_amp.p_sat_out" => &mut self.uplink_amp.p_sat_out,
            "downlink_amp.q" => &mut self.downlink_amp.q,
            "rectifier.v_scale" => &mut self.rectifier.v_scale,
            "rectifier.p_linear" => &mut self.rectifier.p_linear,
            "rectifier.baseband_noise_v" => &mut self.rectifier.baseband_noise_v,
            "passive_rectifier.v_scale" => &mut self.passive_rectifier.v_scale,
            "passive_rectifier.p_linear" => &mut self.passive_rectifier.p_linear,
            "passive_rectifier.baseband_noise_v" => &mut self.passive_rectifier.baseband_noise_v,
            "uplink_penalty.sigma_hz" => &mut self.uplink_penalty.sigma_hz,
            "reader_noise.noise_figure" => &mut self.reader_noise.noise_figure,
            "uplink.reader_rx_gain_dbi" => &mut self.uplink.reader_rx_gain_dbi,
            "uplink.tag_tx_gain_dbi" => &mut self.uplink.tag_tx_gain_dbi,
            "downlink.tag_rx_gain_dbi" => &mut self.downlink.tag_rx_gain_dbi,
            "modem.ask_lpf_ratio" => &mut self.modem.ask_lpf_ratio,
            _ => return Err(config(format!("unknown model parameter '{name}'"))),
        })
    }

    pub fn param(&self, name: &str) -> Result<f64> {
        let mut copy = self.clone();
        copy.slot(name).map(|v| *v)
    }

    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        *self.slot(name)? = value;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.uplink_amp.validate()?;
        self.downlink_amp.validate()?;
        self.rectifier.validate()?;
        self.passive_rectifier.validate()?;
        self.uplink_penalty.validate()?;
        self.reader_noise.validate()?;
        if !(self.modem.ask_lpf_ratio > 0.0 && self.modem.ask_lpf_ratio.is_finite()) {
            return Err(config("ask_lpf_ratio must be > 0"));
        }
        if self.modem.frame_bits == 0 {
            return Err(config("frame_bits must be >= 1"));
        }
        Ok(())
    }

    pub fn downlink_geometry(&self, distance: f64) -> LinkGeometry {
        LinkGeometry {
            distance,
            carrier: self.downlink.carrier_hz,
            eirp: self.downlink.eirp_dbm,
            rx_gain: self.downlink.tag_rx_gain_dbi,
            tx_gain: 0.0,
        }
    }

    pub fn uplink_path(&self, distance: f64) -> UplinkPath {
        UplinkPath {
            down: LinkGeometry {
                distance,
                carrier: self.uplink.carrier_hz,
                eirp: self.uplink.carrier_eirp_dbm,
                rx_gain: self.uplink.tag_rx_gain_dbi,
                tx_gain: 0.0,
            },
            up: LinkGeometry {
                distance,
                carrier: self.uplink.carrier_hz,
                eirp: 0.0,
                rx_gain: self.uplink.reader_rx_gain_dbi,
                tx_gain: self.uplink.tag_tx_gain_dbi,
            },
            amp: self.uplink_amp,
            penalty: self.uplink_penalty,
            noise: self.reader_noise,
            saturated_retransmit: self.saturated_retransmit,
            noisy: self.noise_enabled,
        }
    }

    /// Equivalent one-sided noise density at the rectifier output, dBm/Hz:
    /// the effective sensitivity spread over the envelope's Nyquist band.
    pub fn downlink_noise_psd_dbm(&self) -> f64 {
        self.rectifier.effective_sensitivity_dbm()
            - 10.0 * libm::log10(self.modem.ask_sample_rate / 2.0)
    }

    pub fn downlink_received_power(&self, distance: f64, offset_hz: f64) -> Result<PowerLevel> {
        downlink_received_power(
            &self.downlink_geometry(distance),
            &self.downlink_amp,
            Frequency::offset(offset_hz)?,
        )
    }

    pub fn uplink_received_power(&self, distance: f64, offset_hz: f64) -> Result<PowerLevel> {
        self.uplink_path(distance)
            .received_power(Frequency::offset(offset_hz)?)
    }

    pub fn downlink_eb_n0_db(&self, distance: f64, bit_rate: f64, offset_hz: f64) -> Result<f64> {
        let p = self.downlink_received_power(distance, offset_hz)?;
        eb_n0_db(p, self.downlink_noise_psd_dbm(), bit_rate)
    }

    pub fn uplink_eb_n0_db(&self, distance: f64, bit_rate: f64, offset_hz: f64) -> Result<f64> {
        let p = self.uplink_received_power(distance, offset_hz)?;
        eb_n0_db(p, thermal_noise_psd(&self.reader_noise), bit_rate)
    }

    /// Gaussian-tail estimate of the OOK error rate after the receive filter:
    /// `Q(v_on / (2·σ))` with `σ` the filtered noise RMS.
    pub fn downlink_ber_estimate(
        &self,
        distance: f64,
        bit_rate: f64,
        offset_hz: f64,
    ) -> Result<f64> {
        let p = self.downlink_received_power(distance, offset_hz)?;
        let v_on = self.rectifier.transfer_watts(p.watts());
        let gain = lowpass_noise_gain(
            self.modem.ask_lpf_ratio * bit_rate,
            self.modem.ask_sample_rate,
        );
        let sigma = self.rectifier.baseband_noise_v * libm::sqrt(gain);
        if sigma <= 0.0 {
            return Ok(0.0);
        }
        Ok(q_function(v_on / (2.0 * sigma)))
    }

    /// Noncoherent orthogonal BFSK: `½·exp(−Eb/N0 / 2)`.
    pub fn uplink_ber_estimate(&self, distance: f64, bit_rate: f64, offset_hz: f64) -> Result<f64> {
        let ebn0 = libm::pow(
            10.0,
            self.uplink_eb_n0_db(distance, bit_rate, offset_hz)? / 10.0,
        );
        Ok(0.5 * libm::exp(-ebn0 / 2.0))
    }
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / core::f64::consts::SQRT_2)
}

/// `p_rx − N0 − 10·log10(bit_rate)`.
pub fn eb_n0_db(p_rx: PowerLevel, noise_psd_dbm: f64, bit_rate: f64) -> Result<f64> {
    if !(bit_rate > 0.0 && bit_rate.is_finite()) {
        return Err(config(format!("bit rate must be > 0, got {bit_rate}")));
    }
    Ok(p_rx.value() - noise_psd_dbm - 10.0 * libm::log10(bit_rate))
}

/// Bit errors between `tx` and the first `tx.len()` decoded bits; missing
/// decoded bits count as errors. Returns `(errors, compared)`.
pub fn measure_ber(tx: &BitStream, rx: &BitStream) -> (usize, usize) {
    let n = tx.len();
    let overlap = n.min(rx.len());
    let wrong = tx.bits()[..overlap]
        .iter()
        .zip(&rx.bits()[..overlap])
        .filter(|(a, b)| a != b)
        .count();
    (wrong + (n - overlap), n)
}

struct Tally {
    errors: usize,
    bits: usize,
    sync_failed: bool,
}

impl Tally {
    fn new() -> Self {
        Tally {
            errors: 0,
            bits: 0,
            sync_failed: false,
        }
    }

    fn frame(&mut self, payload: &BitStream, decoded: Result<BitStream>) -> Result<()> {
        match decoded {
            Ok(rx) => {
                let (e, n) = measure_ber(payload, &rx);
                self.errors += e;
                self.bits += n;
            }
            // a frame with no timing reference is scored as a coin flip
            Err(Error::Sync(_)) => {
                self.errors += payload.len() / 2;
                self.bits += payload.len();
                self.sync_failed = true;
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }

    fn finish(self, p_rx: PowerLevel, eb_n0_db: f64) -> LinkMetrics {
        LinkMetrics {
            p_rx_dbm: p_rx.value(),
            eb_n0_db,
            ber: self.errors as f64 / self.bits as f64,
            n_bits: self.bits,
            n_errors: self.errors,
            sync_failed: self.sync_failed,
        }
    }
}

fn frame_sizes(total: usize, frame: usize) -> impl Iterator<Item = usize> {
    let full = total / frame;
    let rest = total % frame;
    core::iter::repeat_n(frame, full).chain((rest > 0).then_some(rest))
}

fn check_bits(bits: usize) -> Result<()> {
    if bits < MIN_BITS_PER_POINT {
        return Err(config(format!(
            "bits per point must be >= {MIN_BITS_PER_POINT}, got {bits}"
        )));
    }
    Ok(())
}

/// Monte Carlo ASK downlink through the regenerative rectifier.
pub fn run_downlink_point(
    distance: f64,
    bit_rate: f64,
    offset_hz: f64,
    models: &ModelBundle,
    bits: usize,
    rng: RandomSource,
) -> Result<LinkMetrics> {
    check_bits(bits)?;
    models.validate()?;
    let cfg = models.modem.ask_config(bit_rate)?;
    let sps = cfg.samples_per_symbol()?;
    let p_rx = models.downlink_received_power(distance, offset_hz)?;
    let ebn0 = eb_n0_db(p_rx, models.downlink_noise_psd_dbm(), bit_rate)?;
    let amplitude = libm::sqrt(p_rx.watts());

    let mut g = rng.rng();
    let mut tally = Tally::new();
    for n in frame_sizes(bits, models.modem.frame_bits) {
        let payload = BitStream::random(n, &mut g);
        let decoded = downlink_frame(&payload, &cfg, sps, amplitude, models, &mut g);
        tally.frame(&payload, decoded)?;
    }
    Ok(tally.finish(p_rx, ebn0))
}

fn downlink_frame(
    payload: &BitStream,
    cfg: &AskConfig,
    sps: usize,
    amplitude: f64,
    models: &ModelBundle,
    g: &mut ChaCha8Rng,
) -> Result<BitStream> {
    let mut samples = ask_modulate(payload, cfg)?.into_samples();
    // trailing guard symbol so the last bit's centre sample is never truncated
    samples.extend(core::iter::repeat_n(0.0, sps));
    for x in samples.iter_mut() {
        *x *= amplitude;
    }
    models
        .rectifier
        .detect_amplitudes(&mut samples, g, models.noise_enabled);
    let env = BasebandSignal::new(samples, cfg.sample_rate)?;
    let mut bits = ask_demodulate(&env, cfg)?.bits.0;
    bits.truncate(payload.len());
    Ok(BitStream(bits))
}

/// Monte Carlo FSK uplink through the backscatter round trip.
pub fn run_uplink_point(
    distance: f64,
    bit_rate: f64,
    offset_hz: f64,
    models: &ModelBundle,
    bits: usize,
    rng: RandomSource,
) -> Result<LinkMetrics> {
    check_bits(bits)?;
    models.validate()?;
    let cfg = models.modem.fsk_config(bit_rate)?;
    let path = models.uplink_path(distance);
    let delta_f = Frequency::offset(offset_hz)?;
    let p_rx = path.received_power(delta_f)?;
    let ebn0 = eb_n0_db(p_rx, thermal_noise_psd(&models.reader_noise), bit_rate)?;

    let mut g = rng.rng();
    let mut tally = Tally::new();
    for n in frame_sizes(bits, models.modem.frame_bits) {
        let payload = BitStream::random(n, &mut g);
        // One guard symbol on each side. Timing is found only modulo a symbol,
        // so an estimate slightly early or late must still land every payload
        // bit on its own window.
        let mut guarded = Vec::with_capacity(n + 2);
        guarded.push(payload.0[0]);
        guarded.extend_from_slice(&payload.0);
        guarded.push(payload.0[n - 1]);
        let tx = fsk_modulate(&BitStream(guarded), &cfg)?;
        let (rx, _) = path.roundtrip(&tx, delta_f, &mut g)?;
        let sps = cfg.samples_per_symbol()?;
        let decoded = fsk_demodulate(&rx, &cfg).map(|d| {
            // window j starts at offset + j·sps; below half a symbol, window 0 is the guard
            let skip = usize::from(d.sync_offset_samples < sps / 2);
            let mut bits: Vec<bool> = d.bits.0.into_iter().skip(skip).collect();
            bits.truncate(n);
            BitStream(bits)
        });
        tally.frame(&payload, decoded)?;
    }
    Ok(tally.finish(p_rx, ebn0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub link: LinkKind,
    pub distances: Vec<f64>,
    pub bit_rates: Vec<f64>,
    #[serde(default = "default_offsets")]
    pub offsets: Vec<f64>,
    pub bits_per_point: usize,
    #[serde(default)]
    pub seed: u64,
    /// Smallest BER the caller wants resolved; see [`SweepSpec::floor_warning`].
    #[serde(default)]
    pub target_ber_floor: Option<f64>,
}

fn default_offsets() -> Vec<f64> {
    alloc::vec![0.0]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub distance: f64,
    pub bit_rate: f64,
    pub offset_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub link: LinkKind,
    pub distance_m: f64,
    pub bit_rate_bps: f64,
    pub offset_hz: f64,
    pub metrics: LinkMetrics,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits_per_point)?;
        if self.distances.is_empty() || self.bit_rates.is_empty() || self.offsets.is_empty() {
            return Err(config(
                "sweep needs at least one distance, bit rate and offset",
            ));
        }
        if self.distances.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(config("sweep distances must be > 0"));
        }
        if self.bit_rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(config("sweep bit rates must be > 0"));
        }
        if self.offsets.iter().any(|o| !(*o >= 0.0 && o.is_finite())) {
            return Err(config("sweep offsets must be >= 0"));
        }
        Ok(())
    }

    /// Points in row order: distance, then bit rate, then offset.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out =
            Vec::with_capacity(self.distances.len() * self.bit_rates.len() * self.offsets.len());
        for &distance in &self.distances {
            for &bit_rate in &self.bit_rates {
                for &offset_hz in &self.offsets {
                    out.push(SweepPoint {
                        index: out.len(),
                        distance,
                        bit_rate,
                        offset_hz,
                    });
                }
            }
        }
        out
    }

    /// Smallest nonzero BER one point can resolve (one error in the run).
    pub fn resolvable_floor(&self) -> f64 {
        1.0 / self.bits_per_point as f64
    }

    /// A message when `target_ber_floor` is below what `bits_per_point` can resolve.
    pub fn floor_warning(&self) -> Option<String> {
        let target = self.target_ber_floor?;
        // rule of three: zero errors in n bits bounds the BER at 3/n (95 %)
        let floor = 3.0 / self.bits_per_point as f64;
        (target < floor).then(|| {
            format!(
                "target BER floor {target:e} is below the {floor:e} resolvable with {} bits per point",
                self.bits_per_point
            )
        })
    }
}

/// One row of a sweep; pure in `(spec, models, point)`.
pub fn run_sweep_point(
    spec: &SweepSpec,
    models: &ModelBundle,
    point: &SweepPoint,
) -> Result<SweepRow> {
    let rng = RandomSource::new(spec.seed, point.index as u64);
    let run = match spec.link {
        LinkKind::Downlink => run_downlink_point,
        LinkKind::Uplink => run_uplink_point,
    };
    let metrics = run(
        point.distance,
        point.bit_rate,
        point.offset_hz,
        models,
        spec.bits_per_point,
        rng,
    )?;
    Ok(SweepRow {
        link: spec.link,
        distance_m: point.distance,
        bit_rate_bps: point.bit_rate,
        offset_hz: point.offset_hz,
        metrics,
    })
}

/// Sequential sweep; rows come back in [`SweepSpec::points`] order.
pub fn run_sweep(spec: &SweepSpec, models: &ModelBundle) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    models.validate()?;
    spec.points()
        .iter()
        .map(|p| run_sweep_point(spec, models, p))
        .collect()
}
