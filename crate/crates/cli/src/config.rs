//! Run configuration and model files.

use std::fs;
use std::path::{Path, PathBuf};

use regenscatter_core::calibrate::{Anchor, AnchorResidual, AnchorSet, FitOptions, ParamSpace};
use regenscatter_core::link::{LinkKind, ModelBundle, SweepSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// One link's sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub distances: Vec<f64>,
    pub bit_rates: Vec<f64>,
    #[serde(default = "zero_offset")]
    pub offsets: Vec<f64>,
    pub bits_per_point: usize,
    #[serde(default)]
    pub target_ber_floor: Option<f64>,
}

fn zero_offset() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub down: Option<SweepGrid>,
    #[serde(default)]
    pub up: Option<SweepGrid>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(default)]
    pub sweep_csv: Option<PathBuf>,
    #[serde(default)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Inline model parameters. Mutually exclusive with `model_file`.
    #[serde(default)]
    pub models: Option<ModelBundle>,
    /// Calibrated model written by `calibrate`, relative to the config file.
    #[serde(default)]
    pub model_file: Option<PathBuf>,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub anchors: Option<Vec<Anchor>>,
    #[serde(default)]
    pub param_space: Option<ParamSpace>,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: OutputPaths,
}

/// A loaded, fully validated configuration.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub models: ModelBundle,
    pub base_dir: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn sweep_spec(&self, link: LinkKind, seed: u64) -> Result<SweepSpec, CliError> {
        let (name, grid) = match link {
            LinkKind::Downlink => ("sweep.down", &self.config.sweep.down),
            LinkKind::Uplink => ("sweep.up", &self.config.sweep.up),
        };
        let grid = grid
            .as_ref()
            .ok_or_else(|| CliError::config(format!("{name}: missing from config")))?;
        Ok(grid_spec(link, grid, seed))
    }

    pub fn anchor_set(&self) -> Result<AnchorSet, CliError> {
        let anchors = self
            .config
            .anchors
            .clone()
            .ok_or_else(|| CliError::config("anchors: missing from config"))?;
        Ok(AnchorSet { anchors })
    }

    pub fn param_space(&self) -> Result<ParamSpace, CliError> {
        self.config
            .param_space
            .clone()
            .ok_or_else(|| CliError::config("param_space: missing from config"))
    }
}

fn grid_spec(link: LinkKind, grid: &SweepGrid, seed: u64) -> SweepSpec {
    SweepSpec {
        link,
        distances: grid.distances.clone(),
        bit_rates: grid.bit_rates.clone(),
        offsets: grid.offsets.clone(),
        bits_per_point: grid.bits_per_point,
        seed,
        target_ber_floor: grid.target_ber_floor,
    }
}

/// Parses JSON, reporting the path of the offending field on failure.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(format!("{what}: {path}: {}", e.inner()))
    })
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let config: RunConfig = parse_json(&read(path)?, &path.display().to_string())?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let models = match (&config.models, &config.model_file) {
        (Some(_), Some(_)) => {
            return Err(CliError::config(
                "models, model_file: give one or the other, not both",
            ));
        }
        (Some(m), None) => m.clone(),
        (None, Some(f)) => {
            let full = if f.is_absolute() {
                f.clone()
            } else {
                base_dir.join(f)
            };
            load_model_file(&full)?.models
        }
        (None, None) => ModelBundle::default(),
    };
    let loaded = Loaded {
        config,
        models,
        base_dir,
    };
    validate(&loaded)?;
    Ok(loaded)
}

fn at(path: impl std::fmt::Display, e: impl std::fmt::Display) -> CliError {
    CliError::config(format!("{path}: {e}"))
}

/// Checks every field against its invariant before anything runs.
pub fn validate(l: &Loaded) -> Result<(), CliError> {
    let c = &l.config;
    if c.schema_version != SCHEMA_VERSION {
        return Err(at(
            "schema_version",
            format!(
                "unsupported version {} (this build reads {SCHEMA_VERSION})",
                c.schema_version
            ),
        ));
    }
    l.models.validate().map_err(|e| at("models", e))?;
    for (name, link, grid) in [
        ("sweep.down", LinkKind::Downlink, &c.sweep.down),
        ("sweep.up", LinkKind::Uplink, &c.sweep.up),
    ] {
        let Some(grid) = grid else { continue };
        for (i, &rate) in grid.bit_rates.iter().enumerate() {
            let ok = match link {
                LinkKind::Downlink => l.models.modem.ask_config(rate).map(|_| ()),
                LinkKind::Uplink => l.models.modem.fsk_config(rate).map(|_| ()),
            };
            ok.map_err(|e| at(format!("{name}.bit_rates[{i}]"), e))?;
        }
        grid_spec(link, grid, 0)
            .validate()
            .map_err(|e| at(name, e))?;
    }
    if let Some(anchors) = &c.anchors {
        for (i, a) in anchors.iter().enumerate() {
            a.validate().map_err(|e| at(format!("anchors[{i}]"), e))?;
        }
    }
    if let Some(space) = &c.param_space {
        space.validate().map_err(|e| at("param_space", e))?;
        for (i, name) in space.names.iter().enumerate() {
            l.models
                .param(name)
                .map_err(|e| at(format!("param_space.names[{i}]"), e))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub loss: f64,
    pub converged: bool,
    pub free_parameters: Vec<String>,
    pub anchors: Vec<AnchorResidual>,
    pub generator: String,
}

/// Calibrated model: the full parameter bundle plus how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub models: ModelBundle,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

pub fn load_model_file(path: &Path) -> Result<ModelFile, CliError> {
    let what = path.display().to_string();
    let file: ModelFile = parse_json(&read(path)?, &what)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(at(
            format!("{what}: schema_version"),
            format!("unsupported version {}", file.schema_version),
        ));
    }
    file.models
        .validate()
        .map_err(|e| at(format!("{what}: models"), e))?;
    Ok(file)
}

pub fn write_model_file(path: &Path, file: &ModelFile) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(file).map_err(|e| CliError::runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}
