//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Runs as a plain binary (no libtest harness) so the lines always reach the
//! terminal in order.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use regenscatter::config::{self, ModelFile};
use regenscatter::{cmd_calibrate, run_sweep_parallel, CalibrateArgs, EXIT_OK};
use regenscatter_core::calibrate::{
    nelder_mead, particle_swarm, NelderMeadOptions, ParamSpace, PsoOptions,
};
use regenscatter_core::channel::{free_space_path_loss_db, offset_penalty, OffsetPenaltyModel};
use regenscatter_core::link::{LinkKind, ModelBundle, SweepRow, SweepSpec};
use regenscatter_core::modem::{
    ask_demodulate, ask_modulate, fsk_demodulate, fsk_modulate, goertzel_many, AskConfig, FskConfig,
};
use regenscatter_core::signal::gaussian;
use regenscatter_core::{BasebandSignal, BitStream, Frequency, RandomSource};

type Outcome = Result<String, String>;

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Calibrates the shipped default config into a temporary model file and loads it.
fn calibrated() -> Result<ModelBundle, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("model.json");
    let cfg = workspace_root().join("configs/default.json");
    let mut sink = Vec::new();
    let code = cmd_calibrate(
        &CalibrateArgs {
            config: &cfg,
            out: Some(&out),
            seed: None,
        },
        &mut sink,
    )
    .map_err(|e| e.to_string())?;
    if code != EXIT_OK {
        return Err(format!(
            "calibration exit {code}:\n{}",
            String::from_utf8_lossy(&sink)
        ));
    }
    let file: ModelFile = config::load_model_file(&out).map_err(|e| e.to_string())?;
    Ok(file.models)
}

// ---------------------------------------------------------------- 1

/// Interleaved cos/sin table for a power-of-two length.
struct Twiddles {
    table: Vec<[f64; 2]>,
}

impl Twiddles {
    fn new(n: usize) -> Self {
        assert!(n.is_power_of_two());
        Twiddles {
            table: (0..n)
                .map(|m| {
                    let a = 2.0 * PI * m as f64 / n as f64;
                    [a.cos(), a.sin()]
                })
                .collect(),
        }
    }

    /// Direct DFT magnitude of bin `k`, angle index reduced exactly mod n.
    fn magnitude(&self, x: &[f64], k: usize) -> f64 {
        let mask = x.len() - 1;
        let (mut re, mut im) = (0.0, 0.0);
        let mut idx = 0;
        for v in x {
            let [c, s] = self.table[idx];
            re += v * c;
            im -= v * s;
            idx = (idx + k) & mask;
        }
        re.hypot(im)
    }
}

fn goertzel_dft() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut g = RandomSource::new(1, 1).rng();
    for n in [8usize, 64, 256, 1024, 4096] {
        let tw = Twiddles::new(n);
        let omegas: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| gaussian(&mut g)).collect();
            let q = goertzel_many(&x, &omegas, 0.0);
            for (k, q) in q.iter().enumerate() {
                let d = tw.magnitude(&x, k);
                worst = worst.max((q - d).abs() / d);
            }
        }
    }
    ensure(
        worst < 1e-9,
        format!("max relative error {worst:.3e} (limit 1e-9)"),
    )
}

// ---------------------------------------------------------------- 2

const RATES: [f64; 5] = [500.0, 1e3, 20e3, 60e3, 200e3];

fn roundtrips() -> Outcome {
    let mut g = RandomSource::new(2, 2).rng();
    let mut cases = 0;
    for rate in RATES {
        let bits = BitStream::random(10_000, &mut g);

        let sps = 16;
        let ask = AskConfig::new(rate, (sps as f64) * rate);
        let tx = ask_modulate(&bits, &ask).map_err(|e| e.to_string())?;
        for d in [0, 1, sps / 2, sps - 1, sps] {
            let mut s = tx.delayed(d).into_samples();
            s.extend(std::iter::repeat_n(0.0, sps));
            let rx = BasebandSignal::new(s, ask.sample_rate).map_err(|e| e.to_string())?;
            let out =
                ask_demodulate(&rx, &ask).map_err(|e| format!("ASK {rate} bps delay {d}: {e}"))?;
            if out.bits.bits().get(..bits.len()) != Some(bits.bits()) {
                return Err(format!("ASK {rate} bps delay {d}: bit errors"));
            }
            cases += 1;
        }

        let fsk = FskConfig::new(rate);
        let tx = fsk_modulate(&bits, &fsk).map_err(|e| e.to_string())?;
        for d in 0..fsk.samples_per_symbol().map_err(|e| e.to_string())? {
            let out = fsk_demodulate(&tx.delayed(d), &fsk)
                .map_err(|e| format!("FSK {rate} bps delay {d}: {e}"))?;
            if out.bits.bits() != bits.bits() {
                return Err(format!("FSK {rate} bps delay {d}: bit errors"));
            }
            cases += 1;
        }
    }
    Ok(format!(
        "{cases} delay/rate cases, 10^4 bits each, 0 errors"
    ))
}

// ---------------------------------------------------------------- 3

/// The uplink obeys the one-way law only while the tag amplifier is pinned at
/// its output ceiling, so uplink doublings are taken inside that range.
fn friis_laws(m: &ModelBundle) -> Outcome {
    let ideal = -20.0 * 2f64.log10();
    let saturated = |d: f64| {
        let out = m.uplink_path(d).tag_output_power().unwrap().value();
        (out - m.uplink_amp.p_sat_out).abs() < 1e-9
    };
    let mut worst: f64 = 0.0;
    let mut up_pairs = 0;
    for d in [2.5, 5.0, 10.0, 20.0, 25.0, 35.0, 50.0, 100.0] {
        let down = m.downlink_eb_n0_db(2.0 * d, 20e3, 0.0).unwrap()
            - m.downlink_eb_n0_db(d, 20e3, 0.0).unwrap();
        worst = worst.max((down - ideal).abs());
        if saturated(2.0 * d) {
            let up = m.uplink_eb_n0_db(2.0 * d, 20e3, 0.0).unwrap()
                - m.uplink_eb_n0_db(d, 20e3, 0.0).unwrap();
            worst = worst.max((up - ideal).abs());
            up_pairs += 1;
        }
    }
    let gap = m.downlink_eb_n0_db(200.0, 20e3, 0.0).unwrap()
        - m.downlink_eb_n0_db(200.0, 60e3, 0.0).unwrap();
    ensure(
        worst <= 0.05 && up_pairs >= 3 && (gap - 4.771).abs() <= 0.01,
        format!(
            "max slope deviation {worst:.2e} dB from {ideal:.3} ({up_pairs} saturated uplink doublings); \
             20/60 kbps gap {gap:.4} dB"
        ),
    )
}

// ---------------------------------------------------------------- 4

/// Least-squares slope of received power against log2(distance), dB per doubling.
fn slope_per_doubling(m: &ModelBundle, ds: &[f64]) -> f64 {
    let xs: Vec<f64> = ds.iter().map(|d| d.log2()).collect();
    let ys: Vec<f64> = ds
        .iter()
        .map(|&d| m.uplink_received_power(d, 0.0).unwrap().value())
        .collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn saturation(m: &ModelBundle) -> Outcome {
    let ds: Vec<f64> = (1..=9).map(|i| 5.0 * i as f64).collect();
    let sat = slope_per_doubling(m, &ds);
    let linear = ModelBundle {
        saturated_retransmit: false,
        ..m.clone()
    };
    let lin = slope_per_doubling(&linear, &ds);
    ensure(
        (sat + 6.02).abs() <= 0.5 && (lin + 12.04).abs() <= 0.5,
        format!("saturated {sat:.3} dB/doubling, unsaturated {lin:.3} dB/doubling (5-45 m)"),
    )
}

// ---------------------------------------------------------------- 5

fn amplifier(m: &ModelBundle) -> Outcome {
    let a = &m.uplink_amp;
    let small = a.compression_db(-40.0);
    let big = [-10.0, -5.0, 0.0, 10.0].map(|p| a.compression_db(p));
    let bw = a.half_power_bandwidth();
    let ok = (small - 30.0).abs() <= 0.5
        && big.iter().all(|g| (g - 15.0).abs() <= 0.5)
        && (a.q - 210.0).abs() < 1e-9
        && (a.f0 - 25.98e9).abs() < 1.0
        && (bw - 123.7e6).abs() <= 0.2e6;
    ensure(
        ok,
        format!(
            "gain {small:.3} dB at -40 dBm, {:.3} dB at -10 dBm; f0/Q = {:.3} MHz",
            big[0],
            bw / 1e6
        ),
    )
}

// ---------------------------------------------------------------- 6

fn penalties(m: &ModelBundle) -> Outcome {
    let f = |hz: f64| Frequency::offset(hz).unwrap();
    let up = |hz| offset_penalty(&m.uplink_penalty, &m.uplink_amp, f(hz)).unwrap();
    let down =
        |hz| offset_penalty(&OffsetPenaltyModel::downlink(), &m.downlink_amp, f(hz)).unwrap();
    let grid: Vec<f64> = (0..=400).map(|i| i as f64 * 0.5e6).collect();
    let monotone = grid
        .windows(2)
        .all(|w| up(w[1]) > up(w[0]) && down(w[1]) > down(w[0]));
    let (u20, d100) = (up(20e6), down(100e6));
    ensure(
        (u20 - 10.0).abs() <= 0.5 && d100 >= 10.0 && up(0.0) == 0.0 && down(0.0) == 0.0 && monotone,
        format!("uplink {u20:.3} dB at 20 MHz, downlink {d100:.3} dB at 100 MHz, zero at 0 Hz, monotone to 200 MHz"),
    )
}

// ---------------------------------------------------------------- 7

fn point(
    link: LinkKind,
    d: f64,
    rate: f64,
    bits: usize,
    m: &ModelBundle,
) -> Result<SweepRow, String> {
    let spec = SweepSpec {
        link,
        distances: vec![d],
        bit_rates: vec![rate],
        offsets: vec![0.0],
        bits_per_point: bits,
        seed: 0,
        target_ber_floor: None,
    };
    run_sweep_parallel(&spec, m, None)
        .map_err(|e| e.to_string())
        .map(|rows| rows[0])
}

fn ber_anchors(m: &ModelBundle) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for rate in [20e3, 60e3] {
        let r = point(LinkKind::Downlink, 35.0, rate, 1_000_000, m)?;
        ok &= r.metrics.ber < 1e-4;
        notes.push(format!("down 35 m {}k: {:.1e}", rate / 1e3, r.metrics.ber));
    }
    let r = point(LinkKind::Downlink, 200.0, 20e3, 100_000, m)?;
    ok &= (1e-2..=1.0).contains(&r.metrics.ber);
    notes.push(format!("down 200 m 20k: {:.3e}", r.metrics.ber));
    for (d, rate) in [(5.0, 200e3), (40.0, 500.0)] {
        let r = point(LinkKind::Uplink, d, rate, 100_000, m)?;
        ok &= r.metrics.ber <= 1e-2;
        notes.push(format!("up {d} m {rate} bps: {:.1e}", r.metrics.ber));
    }
    ensure(ok, notes.join("; "))
}

// ---------------------------------------------------------------- 8

fn downlink_eb_n0(m: &ModelBundle) -> Outcome {
    let v = m
        .downlink_eb_n0_db(200.0, 20e3, 0.0)
        .map_err(|e| e.to_string())?;
    ensure(
        (v - 10.0).abs() <= 2.0,
        format!("Eb/N0 {v:.3} dB at 200 m, 20 kbps"),
    )
}

// ---------------------------------------------------------------- 9

fn monotone_in_eb_n0(rows: &[SweepRow]) -> Result<usize, String> {
    let sigma = |r: &SweepRow| {
        let p = r.metrics.ber.clamp(1.0 / r.metrics.n_bits as f64, 0.5);
        (p * (1.0 - p) / r.metrics.n_bits as f64).sqrt()
    };
    let mut pairs = 0;
    for a in rows {
        for b in rows {
            if b.metrics.eb_n0_db > a.metrics.eb_n0_db {
                pairs += 1;
                let allowance = 3.0 * (sigma(a).powi(2) + sigma(b).powi(2)).sqrt();
                if b.metrics.ber > a.metrics.ber + allowance {
                    return Err(format!(
                        "BER {:.3e} at {:.2} dB exceeds {:.3e} at {:.2} dB",
                        b.metrics.ber, b.metrics.eb_n0_db, a.metrics.ber, a.metrics.eb_n0_db
                    ));
                }
            }
        }
    }
    Ok(pairs)
}

fn ber_properties(m: &ModelBundle) -> Outcome {
    // the shipped sweep grids, each also run with the carrier 10 MHz off tune
    let loaded =
        config::load(&workspace_root().join("configs/default.json")).map_err(|e| e.to_string())?;
    let mut pairs = 0;
    for link in [LinkKind::Downlink, LinkKind::Uplink] {
        let mut spec = loaded.sweep_spec(link, 9).map_err(|e| e.to_string())?;
        spec.offsets = vec![0.0, 10e6];
        let rows = run_sweep_parallel(&spec, m, None).map_err(|e| e.to_string())?;
        // one BER-vs-Eb/N0 curve per bit rate; offsets only move points along it
        for rate in &spec.bit_rates {
            let curve: Vec<SweepRow> = rows
                .iter()
                .filter(|r| r.bit_rate_bps == *rate)
                .copied()
                .collect();
            pairs += monotone_in_eb_n0(&curve)?;
        }
    }

    // carrier 20 dB below the rectifier's effective sensitivity
    let target = m.rectifier.effective_sensitivity_dbm() - 20.0;
    let g = m.downlink_geometry(1.0);
    let at_1m = g.eirp + g.rx_gain - free_space_path_loss_db(1.0, g.carrier).unwrap();
    let d = 10f64.powf((at_1m - target) / 20.0);
    let r = point(LinkKind::Downlink, d, 20e3, 100_000, m)?;
    let p = r.metrics.p_rx_dbm;
    ensure(
        (r.metrics.ber - 0.5).abs() <= 0.05 && p <= target + 1e-9,
        format!(
            "{pairs} Eb/N0-ordered pairs within 3 sigma; BER {:.4} at {p:.1} dBm ({d:.0} m)",
            r.metrics.ber
        ),
    )
}

// ---------------------------------------------------------------- 10

fn optimizers() -> Outcome {
    let mut rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
    let nm = nelder_mead(&mut rosen, &[-1.2, 1.0], &NelderMeadOptions::default())
        .map_err(|e| e.to_string())?;
    let space = ParamSpace {
        names: (0..5).map(|i| format!("x{i}")).collect(),
        lower: vec![-5.0; 5],
        upper: vec![5.0; 5],
        log_scale: Vec::new(),
    };
    let mut sphere = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let pso = particle_swarm(
        &mut sphere,
        &space,
        &PsoOptions::default(),
        RandomSource::new(42, 0),
        &[],
    )
    .map_err(|e| e.to_string())?;
    let mono = |h: &[f64]| h.windows(2).all(|w| w[1] <= w[0]);
    ensure(
        nm.loss < 1e-8
            && nm.iterations <= 500
            && pso.loss < 1e-4
            && mono(&nm.history)
            && mono(&pso.history),
        format!(
            "Nelder-Mead Rosenbrock {:.2e} in {} iterations; PSO sphere {:.2e}; histories monotone",
            nm.loss, nm.iterations, pso.loss
        ),
    )
}

// ---------------------------------------------------------------- 11

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("sweep.json");
    std::fs::write(
        &cfg,
        r#"{"schema_version": 1,
            "sweep": {"up": {"distances": [10, 45], "bit_rates": [20000, 200000], "bits_per_point": 20000}}}"#,
    )
    .map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_regenscatter");
    let mut outputs = Vec::new();
    for threads in ["1", "1", "3"] {
        let out = dir.path().join(format!("out{}.csv", outputs.len()));
        let status = Command::new(bin)
            .args([
                "sweep",
                cfg.to_str().unwrap(),
                "--link",
                "up",
                "--seed",
                "7",
                "--threads",
                threads,
                "--out",
            ])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!(
                "sweep failed: {}",
                String::from_utf8_lossy(&status.stderr)
            ));
        }
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    let rows = outputs[0].iter().filter(|&&b| b == b'\n').count() - 1;
    ensure(
        outputs.windows(2).all(|w| w[0] == w[1]) && rows == 4,
        format!("{rows} rows, byte-identical across 2 runs and --threads 1/3"),
    )
}

type Criterion<'a> = (u32, &'a str, Duration, Box<dyn FnOnce() -> Outcome>);

fn main() {
    let model = calibrated();
    let with_model = |f: fn(&ModelBundle) -> Outcome| -> Box<dyn FnOnce() -> Outcome> {
        let m = model.clone();
        Box::new(move || f(&m?))
    };
    let criteria: Vec<Criterion> = vec![
        (
            1,
            "Goertzel-DFT oracle equivalence",
            Duration::from_secs(10),
            Box::new(goertzel_dft),
        ),
        (
            2,
            "noiseless ASK/FSK roundtrips",
            Duration::from_secs(30),
            Box::new(roundtrips),
        ),
        (
            3,
            "Friis and Eb/N0 laws",
            Duration::from_secs(5),
            with_model(friis_laws),
        ),
        (
            4,
            "saturation mechanism",
            Duration::from_secs(10),
            with_model(saturation),
        ),
        (
            5,
            "amplifier anchors",
            Duration::from_secs(5),
            with_model(amplifier),
        ),
        (
            6,
            "offset penalties",
            Duration::from_secs(5),
            with_model(penalties),
        ),
        (
            7,
            "calibrated BER anchors",
            Duration::from_secs(180),
            with_model(ber_anchors),
        ),
        (
            8,
            "downlink Eb/N0 anchor",
            Duration::from_secs(5),
            with_model(downlink_eb_n0),
        ),
        (
            9,
            "BER monotonicity and noise limit",
            Duration::from_secs(60),
            with_model(ber_properties),
        ),
        (
            10,
            "optimizer benchmarks",
            Duration::from_secs(10),
            Box::new(optimizers),
        ),
        (
            11,
            "sweep determinism",
            Duration::from_secs(60),
            Box::new(determinism),
        ),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        let t = Instant::now();
        let outcome = run();
        let took = t.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if took <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
            Err(d) => (false, d),
        };
        failed += usize::from(!pass);
        println!(
            "{} criterion {id:>2} {name}: {detail} [{:.2} s]",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}
