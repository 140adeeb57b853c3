use core::f64::consts::PI;

use proptest::prelude::*;
use regenscatter_core::calibrate::{default_anchors, default_param_space, fit_models, FitOptions};
use regenscatter_core::channel::{
    friis_received_power, offset_penalty, LinkGeometry, OffsetPenaltyModel,
};
use regenscatter_core::frontend::{AmplifierBehavioral, RectifierModel};
use regenscatter_core::link::{run_sweep, run_sweep_point, LinkKind, ModelBundle, SweepSpec};
use regenscatter_core::modem::{
    ask_demodulate, ask_modulate, fsk_demodulate, fsk_modulate, goertzel_many, goertzel_raw,
    AskConfig, FskConfig,
};
use regenscatter_core::signal::gaussian;
use regenscatter_core::{BasebandSignal, BitStream, Frequency, RandomSource};

fn dft_magnitude(x: &[f64], k: usize) -> f64 {
    let n = x.len();
    let (mut re, mut im) = (0.0, 0.0);
    for (j, v) in x.iter().enumerate() {
        let a = 2.0 * PI * ((k * j) % n) as f64 / n as f64;
        re += v * a.cos();
        im -= v * a.sin();
    }
    re.hypot(im)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn goertzel_matches_dft(seed in any::<u64>(), n in 2usize..200) {
        let mut g = RandomSource::new(seed, 0).rng();
        let x: Vec<f64> = (0..n).map(|_| gaussian(&mut g)).collect();
        let omegas: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
        let many = goertzel_many(&x, &omegas, 0.0);
        for k in 0..n {
            let d = dft_magnitude(&x, k);
            let tol = 1e-9 * d.max(1.0);
            prop_assert!((many[k] - d).abs() <= tol, "bin {k}: {} vs {d}", many[k]);
            prop_assert_eq!(many[k], goertzel_raw(&x, omegas[k], 0.0));
        }
    }

    #[test]
    fn ask_noiseless_roundtrip(seed in any::<u64>(), len in 1usize..400, delay_frac in 0.0f64..=1.0) {
        let bits = BitStream::random(len, &mut RandomSource::new(seed, 1).rng());
        let sps = 16;
        let cfg = AskConfig::new(20e3, sps as f64 * 20e3);
        let tx = ask_modulate(&bits, &cfg).unwrap();
        let d = (delay_frac * sps as f64) as usize;
        let mut s = tx.delayed(d).into_samples();
        s.extend(std::iter::repeat_n(0.0, sps));
        let out = ask_demodulate(&BasebandSignal::new(s, cfg.sample_rate).unwrap(), &cfg).unwrap();
        prop_assert_eq!(&out.bits.bits()[..len], bits.bits());
    }

    #[test]
    fn fsk_noiseless_roundtrip(seed in any::<u64>(), len in 2usize..400, delay in 0usize..16) {
        let bits = BitStream::random(len, &mut RandomSource::new(seed, 2).rng());
        let cfg = FskConfig::new(1e3);
        let tx = fsk_modulate(&bits, &cfg).unwrap();
        let out = fsk_demodulate(&tx.delayed(delay), &cfg).unwrap();
        prop_assert_eq!(out.bits.bits(), bits.bits());
    }

    #[test]
    fn friis_is_inverse_square(d in 0.5f64..1e4, f in 1e9f64..1e11) {
        let at = |d| friis_received_power(&LinkGeometry {
            distance: d,
            carrier: f,
            eirp: 20.0,
            rx_gain: 10.0,
            tx_gain: 0.0,
        }).unwrap().value();
        prop_assert!((at(d) - at(2.0 * d) - 20.0 * 2f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn rectifier_transfer_is_monotone(p1 in -100.0f64..10.0, dp in 0.0f64..40.0) {
        for r in [RectifierModel::regenerative_default(), RectifierModel::passive_default()] {
            prop_assert!(r.transfer_dbm(p1) <= r.transfer_dbm(p1 + dp));
        }
    }

    #[test]
    fn compression_stays_between_anchors(p in -120.0f64..20.0) {
        let a = AmplifierBehavioral::uplink_default();
        let g = a.compression_db(p);
        prop_assert!(g <= a.g_small + 1e-12 && g >= a.g_sat - 1e-12);
        prop_assert!(a.compression_db(p + 1.0) <= g + 1e-12);
    }

    #[test]
    fn penalties_are_monotone_from_zero(f1 in 0.0f64..3e8, df in 0.0f64..1e8) {
        let amp = AmplifierBehavioral::uplink_default();
        for model in [OffsetPenaltyModel::downlink(), ModelBundle::default().uplink_penalty] {
            let p = |f: f64| offset_penalty(&model, &amp, Frequency::offset(f).unwrap()).unwrap();
            prop_assert_eq!(p(0.0), 0.0);
            prop_assert!(p(f1) <= p(f1 + df) + 1e-12);
        }
    }

    #[test]
    fn eb_n0_drops_with_rate(d in 1.0f64..300.0, r in 100.0f64..1e6) {
        let m = ModelBundle::default();
        let gap = m.downlink_eb_n0_db(d, r, 0.0).unwrap() - m.downlink_eb_n0_db(d, 3.0 * r, 0.0).unwrap();
        prop_assert!((gap - 10.0 * 3f64.log10()).abs() < 1e-9);
    }
}

fn small_spec(link: LinkKind) -> SweepSpec {
    SweepSpec {
        link,
        distances: vec![40.0, 180.0],
        bit_rates: vec![20e3],
        offsets: vec![0.0, 20e6],
        bits_per_point: 2_000,
        seed: 11,
        target_ber_floor: None,
    }
}

#[test]
fn sweep_points_are_reproducible_and_order_independent() {
    let m = ModelBundle::default();
    for link in [LinkKind::Downlink, LinkKind::Uplink] {
        let spec = small_spec(link);
        let rows = run_sweep(&spec, &m).unwrap();
        assert_eq!(rows, run_sweep(&spec, &m).unwrap());
        // each point depends only on its own index, not on the points before it
        for p in spec.points().iter().rev() {
            assert_eq!(run_sweep_point(&spec, &m, p).unwrap(), rows[p.index]);
        }
    }
}

#[test]
fn noiseless_links_are_error_free() {
    let m = ModelBundle {
        noise_enabled: false,
        ..ModelBundle::default()
    };
    for link in [LinkKind::Downlink, LinkKind::Uplink] {
        for row in run_sweep(&small_spec(link), &m).unwrap() {
            assert_eq!(row.metrics.n_errors, 0, "{row:?}");
            assert!(!row.metrics.sync_failed);
        }
    }
}

#[test]
fn refit_recovers_from_a_perturbed_start() {
    let mut start = ModelBundle::default();
    start.set_param("uplink_amp.p_sat_out", -50.0).unwrap();
    start.set_param("uplink_penalty.sigma_hz", 60e6).unwrap();
    let anchors = default_anchors();
    let space = default_param_space();
    assert!(!anchors.report(&start).unwrap().iter().all(|r| r.satisfied));

    let opts = FitOptions::default();
    let (fitted, report) =
        fit_models(&anchors, &space, &start, &opts, RandomSource::new(1, 0)).unwrap();
    assert!(!report.unchanged);
    assert!(report.converged, "{:#?}", report.residuals);
    assert!(report.result.loss < report.start_loss);

    let (again, second) =
        fit_models(&anchors, &space, &fitted, &opts, RandomSource::new(2, 0)).unwrap();
    assert!(second.unchanged);
    for name in &space.names {
        assert_eq!(again.param(name).unwrap(), fitted.param(name).unwrap());
    }
}
