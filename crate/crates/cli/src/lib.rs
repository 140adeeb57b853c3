//! File formats and commands behind the `regenscatter` binary.
//!
//! Every command takes its output streams as arguments and returns an exit
//! code, so the binary is a thin argument parser over this crate.

pub mod config;
pub mod csv;
pub mod selftest;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use regenscatter_core::calibrate::fit_models;
use regenscatter_core::link::{run_sweep_point, LinkKind, ModelBundle, SweepRow, SweepSpec};
use regenscatter_core::{BasebandSignal, Error as CoreError, Frequency, RandomSource};

use crate::config::{ModelFile, Provenance, SCHEMA_VERSION};

pub const EXIT_OK: u8 = 0;
pub const EXIT_SELFTEST: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

/// Invariant violations are configuration problems; anything else surfaced
/// while running is a runtime failure.
impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::Domain(_) | CoreError::Length(_) => {
                CliError::config(e.to_string())
            }
            _ => CliError::runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

/// Evaluates every sweep point on a rayon pool of `threads` workers (all
/// cores when `None`). Rows come back in [`SweepSpec::points`] order and do
/// not depend on the thread count.
pub fn run_sweep_parallel(
    spec: &SweepSpec,
    models: &ModelBundle,
    threads: Option<usize>,
) -> Result<Vec<SweepRow>, CoreError> {
    spec.validate()?;
    models.validate()?;
    let points = spec.points();
    let work = || {
        points
            .par_iter()
            .map(|p| run_sweep_point(spec, models, p))
            .collect::<Result<Vec<_>, _>>()
    };
    match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
        {
            Ok(pool) => pool.install(work),
            Err(_) => work(),
        },
        None => work(),
    }
}

pub struct SweepArgs<'a> {
    pub config: &'a Path,
    pub out: Option<&'a Path>,
    pub link: LinkKind,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

pub fn cmd_sweep(
    args: &SweepArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<u8, CliError> {
    let loaded = config::load(args.config)?;
    let seed = args.seed.or(loaded.config.seed).unwrap_or(0);
    let spec = loaded.sweep_spec(args.link, seed)?;
    let out: PathBuf = match (args.out, &loaded.config.output.sweep_csv) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => loaded.resolve(p),
        (None, None) => {
            return Err(CliError::config(
                "no output path: pass --out or set output.sweep_csv",
            ))
        }
    };
    if let Some(w) = spec.floor_warning() {
        let _ = writeln!(stderr, "warning: {w}");
    }
    let rows = run_sweep_parallel(&spec, &loaded.models, args.threads).map_err(|e| match e {
        CoreError::Config(_) => CliError::config(e.to_string()),
        _ => CliError::runtime(e.to_string()),
    })?;
    fs::write(&out, csv::render(&rows)).map_err(|e| io_err(&out, e))?;
    let bers = rows.iter().map(|r| r.metrics.ber);
    let min = bers.clone().fold(f64::INFINITY, f64::min);
    let max = bers.fold(f64::NEG_INFINITY, f64::max);
    let failed = rows.iter().filter(|r| r.metrics.sync_failed).count();
    let _ = writeln!(
        stdout,
        "wrote {} rows to {} (min BER {}, max BER {}{})",
        rows.len(),
        out.display(),
        csv::sci6(min),
        csv::sci6(max),
        if failed > 0 {
            format!(", {failed} with failed sync")
        } else {
            String::new()
        }
    );
    Ok(EXIT_OK)
}

pub struct CalibrateArgs<'a> {
    pub config: &'a Path,
    pub out: Option<&'a Path>,
    pub seed: Option<u64>,
}

pub fn cmd_calibrate(args: &CalibrateArgs, stdout: &mut dyn Write) -> Result<u8, CliError> {
    let loaded = config::load(args.config)?;
    let anchors = loaded.anchor_set()?;
    let space = loaded.param_space()?;
    let out: PathBuf = match (args.out, &loaded.config.output.model) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => loaded.resolve(p),
        (None, None) => {
            return Err(CliError::config(
                "no output path: pass --out or set output.model",
            ))
        }
    };
    let seed = args.seed.or(loaded.config.seed).unwrap_or(0);
    let (fitted, report) = fit_models(
        &anchors,
        &space,
        &loaded.models,
        &loaded.config.fit,
        RandomSource::new(seed, 0),
    )
    .map_err(|e| match e {
        CoreError::Config(_) => CliError::config(e.to_string()),
        _ => CliError::runtime(e.to_string()),
    })?;

    let _ = writeln!(
        stdout,
        "{:<36} {:>4} {:>12} {:>10} {:>12}  status",
        "observable", "rel", "target", "tol", "observed"
    );
    for r in &report.residuals {
        let rel = match r.relation {
            regenscatter_core::calibrate::Relation::Eq => "=",
            regenscatter_core::calibrate::Relation::Le => "<=",
            regenscatter_core::calibrate::Relation::Ge => ">=",
        };
        let _ = writeln!(
            stdout,
            "{:<36} {:>4} {:>12.4} {:>10.4} {:>12.4}  {}",
            r.observable,
            rel,
            r.target,
            r.tolerance,
            r.observed,
            if r.satisfied { "ok" } else { "MISS" }
        );
    }
    for (name, v) in report.names.iter().zip(&report.result.params) {
        let _ = writeln!(stdout, "  {name} = {v:.6e}");
    }
    let _ = writeln!(
        stdout,
        "loss {:.6e} after {} evaluations{}",
        report.result.loss,
        report.result.n_evaluations,
        if report.unchanged {
            " (starting point already within tolerance)"
        } else {
            ""
        }
    );

    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        models: fitted,
        provenance: Some(Provenance {
            seed,
            loss: report.result.loss,
            converged: report.converged,
            free_parameters: report.names.clone(),
            anchors: report.residuals.clone(),
            generator: format!("regenscatter {}", env!("CARGO_PKG_VERSION")),
        }),
    };
    config::write_model_file(&out, &file)?;
    let _ = writeln!(stdout, "model written to {}", out.display());
    Ok(if report.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

pub struct GoertzelArgs<'a> {
    pub freq: f64,
    pub rate: f64,
    pub n: usize,
    pub input: &'a Path,
}

/// One real sample per line; blank lines are not allowed.
pub fn read_samples(path: &Path) -> Result<Vec<f64>, CliError> {
    let f =
        fs::File::open(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line =
            line.map_err(|e| CliError::config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let t = line.trim();
        match t.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ => {
                return Err(CliError::config(format!(
                    "{}:{}: malformed sample '{t}'",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn cmd_goertzel(args: &GoertzelArgs, stdout: &mut dyn Write) -> Result<u8, CliError> {
    let samples = read_samples(args.input)?;
    if samples.len() < args.n {
        return Err(CliError::config(format!(
            "{} has {} samples, --n asks for {}",
            args.input.display(),
            samples.len(),
            args.n
        )));
    }
    let sig = BasebandSignal::new(samples, args.rate)?;
    let mag = regenscatter_core::modem::goertzel(&sig, Frequency::offset(args.freq)?, args.n)?;
    let _ = writeln!(stdout, "{mag:.12}");
    Ok(EXIT_OK)
}

pub fn cmd_selftest(hooks: selftest::Hooks, stdout: &mut dyn Write) -> u8 {
    let checks = selftest::run(hooks);
    for c in &checks {
        let _ = writeln!(
            stdout,
            "{} {:<24} {} ({:.2} s)",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail,
            c.seconds
        );
    }
    if checks.iter().all(|c| c.passed) {
        EXIT_OK
    } else {
        EXIT_SELFTEST
    }
}
