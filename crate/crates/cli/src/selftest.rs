//! Embedded invariant checks run by `regenscatter selftest`.

use std::f64::consts::PI;
use std::time::Instant;

use regenscatter_core::calibrate::{
    nelder_mead, particle_swarm, NelderMeadOptions, ParamSpace, PsoOptions,
};
use regenscatter_core::channel::{friis_received_power, LinkGeometry};
use regenscatter_core::modem::{
    ask_demodulate, ask_modulate, fsk_demodulate, fsk_modulate, goertzel_raw, AskConfig, FskConfig,
};
use regenscatter_core::signal::gaussian;
use regenscatter_core::{BasebandSignal, BitStream, RandomSource};

#[derive(Debug, Clone, Copy, Default)]
pub struct Hooks {
    /// Added to the Goertzel recursion coefficient; any nonzero value must fail the DFT check.
    pub goertzel_coeff_skew: f64,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Direct DFT magnitude of bin `k`.
pub fn dft_magnitude(x: &[f64], k: usize) -> f64 {
    let n = x.len();
    let (mut re, mut im) = (0.0, 0.0);
    for (j, v) in x.iter().enumerate() {
        // reduce k·j mod n before scaling so the angle stays small and exact
        let a = 2.0 * PI * ((k * j) % n) as f64 / n as f64;
        re += v * a.cos();
        im -= v * a.sin();
    }
    re.hypot(im)
}

/// Largest relative Goertzel-vs-DFT error over `trials` random signals of length `n`, all bins.
pub fn goertzel_dft_error(n: usize, trials: usize, seed: u64, skew: f64) -> f64 {
    let mut g = RandomSource::new(seed, n as u64).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x: Vec<f64> = (0..n).map(|_| gaussian(&mut g)).collect();
        for k in 0..n {
            let d = dft_magnitude(&x, k);
            let q = goertzel_raw(&x, 2.0 * PI * k as f64 / n as f64, skew);
            worst = worst.max((q - d).abs() / d.max(f64::MIN_POSITIVE));
        }
    }
    worst
}

fn goertzel_check(hooks: Hooks) -> (bool, String) {
    let worst = [8, 64, 256]
        .iter()
        .map(|&n| goertzel_dft_error(n, 5, 1, hooks.goertzel_coeff_skew))
        .fold(0.0, f64::max);
    (worst < 1e-9, format!("max relative error {worst:.3e}"))
}

fn delays(sps: usize) -> [usize; 3] {
    [0, sps / 3, sps - 1]
}

fn ask_check() -> (bool, String) {
    let mut g = RandomSource::new(2, 0).rng();
    for rate in [500.0, 1e3, 20e3, 60e3, 200e3] {
        let cfg = AskConfig::new(rate, 16.0 * rate);
        let bits = BitStream::random(2000, &mut g);
        let Ok(tx) = ask_modulate(&bits, &cfg) else {
            return (false, format!("modulation failed at {rate} bps"));
        };
        let mut padded = tx.samples().to_vec();
        padded.extend(std::iter::repeat_n(0.0, 16));
        let tx = BasebandSignal::new(padded, cfg.sample_rate).expect("finite samples");
        for d in delays(16) {
            match ask_demodulate(&tx.delayed(d), &cfg) {
                Ok(r) if r.bits.bits().get(..bits.len()) == Some(bits.bits()) => {}
                _ => return (false, format!("errors at {rate} bps, delay {d}")),
            }
        }
    }
    (true, "0 errors".into())
}

fn fsk_check() -> (bool, String) {
    let mut g = RandomSource::new(3, 0).rng();
    for rate in [500.0, 1e3, 20e3, 60e3, 200e3] {
        let cfg = FskConfig::new(rate);
        let bits = BitStream::random(2000, &mut g);
        let Ok(tx) = fsk_modulate(&bits, &cfg) else {
            return (false, format!("modulation failed at {rate} bps"));
        };
        for d in delays(16) {
            match fsk_demodulate(&tx.delayed(d), &cfg) {
                Ok(r) if r.bits.bits().get(..bits.len()) == Some(bits.bits()) => {}
                _ => return (false, format!("errors at {rate} bps, delay {d}")),
            }
        }
    }
    (true, "0 errors".into())
}

fn friis_check() -> (bool, String) {
    let at = |d| {
        friis_received_power(&LinkGeometry {
            distance: d,
            carrier: 26.3e9,
            eirp: 20.0,
            rx_gain: 10.0,
            tx_gain: 0.0,
        })
        .map(|p| p.value())
    };
    match (at(100.0), at(200.0)) {
        (Ok(a), Ok(b)) => {
            let slope = a - b;
            (
                (slope - 6.0206).abs() < 1e-3,
                format!("{slope:.4} dB per doubling"),
            )
        }
        _ => (false, "Friis evaluation failed".into()),
    }
}

fn nelder_mead_check() -> (bool, String) {
    let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
    match nelder_mead(&mut f, &[-1.2, 1.0], &NelderMeadOptions::default()) {
        Ok(r) => (
            r.loss < 1e-8 && r.iterations <= 500,
            format!(
                "Rosenbrock loss {:.3e} after {} iterations",
                r.loss, r.iterations
            ),
        ),
        Err(e) => (false, e.to_string()),
    }
}

fn pso_check() -> (bool, String) {
    let space = ParamSpace {
        names: (0..5).map(|i| format!("x{i}")).collect(),
        lower: vec![-5.0; 5],
        upper: vec![5.0; 5],
        log_scale: Vec::new(),
    };
    let mut f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    match particle_swarm(
        &mut f,
        &space,
        &PsoOptions::default(),
        RandomSource::new(42, 0),
        &[],
    ) {
        Ok(r) => (r.loss < 1e-4, format!("5-D sphere loss {:.3e}", r.loss)),
        Err(e) => (false, e.to_string()),
    }
}

type CheckFn = Box<dyn Fn() -> (bool, String)>;

pub fn run(hooks: Hooks) -> Vec<Check> {
    let checks: [(&'static str, CheckFn); 6] = [
        ("goertzel_dft", Box::new(move || goertzel_check(hooks))),
        ("ask_roundtrip", Box::new(ask_check)),
        ("fsk_roundtrip", Box::new(fsk_check)),
        ("friis_slope", Box::new(friis_check)),
        ("nelder_mead_rosenbrock", Box::new(nelder_mead_check)),
        ("pso_sphere", Box::new(pso_check)),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            let t = Instant::now();
            let (passed, detail) = f();
            Check {
                name,
                passed,
                detail,
                seconds: t.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let checks = run(Hooks::default());
        assert!(checks.iter().all(|c| c.passed), "{checks:#?}");
    }

    #[test]
    fn skewed_goertzel_fails() {
        let (ok, _) = goertzel_check(Hooks {
            goertzel_coeff_skew: 1e-6,
        });
        assert!(!ok);
    }
}
