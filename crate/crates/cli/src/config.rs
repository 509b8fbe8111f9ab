//! Run configuration: one TOML file with a section per pipeline stage.
//!
//! Relative paths are resolved against the directory holding the config
//! file. The config hash covers the raw file bytes plus the effective seed,
//! so any edit to the file invalidates artifacts built from it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stdk_core::basis::{BasisConfig, DEFAULT_BANDWIDTH_FACTOR, DEFAULT_SPATIAL_SIDES, DEFAULT_SUPPORT_FACTOR, DEFAULT_TEMPORAL_COUNTS};
use stdk_core::forecast::ForecastConfig;
use stdk_core::ingest::{BBox, DEFAULT_WINDOW};
use stdk_core::provenance::hash_bytes;
use stdk_core::quantile::Quantiles;
use stdk_core::stdk::{StdkConfig, DEFAULT_HIDDEN_LAYOUT};

use crate::error::{CliError, CliResult, EXIT_FAILURE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub ingest: IngestSection,
    pub grid: GridSection,
    #[serde(default)]
    pub basis: BasisSection,
    #[serde(default)]
    pub interp: InterpSection,
    #[serde(default)]
    pub forecast: ForecastSection,
    #[serde(default)]
    pub render: RenderSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    pub stations: PathBuf,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

fn default_holdout() -> f64 {
    0.2
}

/// Raster extent and the day offsets (from the first ingested day) at which
/// fields are interpolated. `t_count` defaults to every ingested day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub nx: usize,
    pub ny: usize,
    #[serde(default)]
    pub t_start: i64,
    #[serde(default = "one")]
    pub t_step: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_count: Option<usize>,
}

fn one() -> i64 {
    1
}

impl GridSection {
    pub fn bbox(&self) -> CliResult<BBox> {
        Ok(BBox::new(self.lon_min, self.lon_max, self.lat_min, self.lat_max)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSection {
    pub spatial_sides: Vec<usize>,
    pub temporal_counts: Vec<usize>,
    pub support_factor: f64,
    pub bandwidth_factor: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub water_mask: Option<PathBuf>,
}

impl Default for BasisSection {
    fn default() -> Self {
        Self {
            spatial_sides: DEFAULT_SPATIAL_SIDES.to_vec(),
            temporal_counts: DEFAULT_TEMPORAL_COUNTS.to_vec(),
            support_factor: DEFAULT_SUPPORT_FACTOR,
            bandwidth_factor: DEFAULT_BANDWIDTH_FACTOR,
            water_mask: None,
        }
    }
}

impl BasisSection {
    pub fn basis_config(&self) -> BasisConfig {
        BasisConfig {
            spatial_sides: self.spatial_sides.clone(),
            temporal_counts: self.temporal_counts.clone(),
            support_factor: self.support_factor,
            bandwidth_factor: self.bandwidth_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpSection {
    pub hidden_layout: Vec<usize>,
    pub quantiles: [f64; 3],
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Share of training stations held out to choose the kept epoch.
    pub validation_fraction: f64,
}

impl Default for InterpSection {
    fn default() -> Self {
        let d = StdkConfig::default();
        Self {
            hidden_layout: DEFAULT_HIDDEN_LAYOUT.to_vec(),
            quantiles: d.quantiles.as_array(),
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            validation_fraction: d.validation_fraction,
        }
    }
}

impl InterpSection {
    pub fn model_config(&self) -> CliResult<StdkConfig> {
        let [lo, mid, hi] = self.quantiles;
        Ok(StdkConfig {
            hidden_layout: self.hidden_layout.clone(),
            quantiles: Quantiles::new(lo, mid, hi)?,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            validation_fraction: self.validation_fraction,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecastVariant {
    /// ConvLSTM on the interpolated frames alone.
    Convlstm,
    /// ConvLSTM with coarse spatial basis channels appended to each frame.
    Stdk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastSection {
    pub variant: ForecastVariant,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    pub n_inputs: usize,
    pub lead: usize,
    pub quantiles: [f64; 3],
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Trailing fraction of sequences held out for forecasting.
    pub holdout_fraction: f64,
}

impl Default for ForecastSection {
    fn default() -> Self {
        let d = ForecastConfig::default();
        Self {
            variant: ForecastVariant::Convlstm,
            hidden_channels: d.hidden_channels,
            kernel_size: d.kernel_size,
            n_inputs: d.n_inputs,
            lead: d.lead,
            quantiles: d.quantiles.as_array(),
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            holdout_fraction: 0.2,
        }
    }
}

impl ForecastSection {
    pub fn model_config(&self) -> CliResult<ForecastConfig> {
        let [lo, mid, hi] = self.quantiles;
        let config = ForecastConfig {
            hidden_channels: self.hidden_channels,
            kernel_size: self.kernel_size,
            n_inputs: self.n_inputs,
            lead: self.lead,
            quantiles: Quantiles::new(lo, mid, hi)?,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Palette {
    /// Dark blue through green to yellow.
    #[default]
    Viridis,
    Greys,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub palette: Palette,
}

/// A parsed config with its location and hash.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub hash: String,
}

impl LoadedConfig {
    /// Reads `path`; `seed` overrides the file's value.
    pub fn load(path: &Path, seed: Option<u64>) -> CliResult<Self> {
        if !path.is_file() {
            return Err(CliError::missing(path));
        }
        let raw = fs::read(path)?;
        let text = std::str::from_utf8(&raw).map_err(|_| CliError::new(EXIT_FAILURE, "config is not UTF-8").at(path))?;
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::new(EXIT_FAILURE, format!("invalid config: {e}")).at(path))?;
        if let Some(s) = seed {
            config.seed = s;
        }
        Ok(Self {
            hash: config_hash(&raw, config.seed),
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            config,
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The effective config as TOML, headed by its hash.
    pub fn echo(&self) -> CliResult<String> {
        let body = toml::to_string(&self.config)
            .map_err(|e| CliError::new(EXIT_FAILURE, format!("cannot serialize config: {e}")))?;
        Ok(format!("# config_hash = {}\n{body}", self.hash))
    }
}

pub fn config_hash(raw: &[u8], seed: u64) -> String {
    let mut bytes = raw.to_vec();
    bytes.extend_from_slice(format!("\0seed={seed}").as_bytes());
    hash_bytes(&bytes)
}
