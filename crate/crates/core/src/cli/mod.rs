//! Command-line interface.
//!
//! Every subcommand reads a JSON [`RunConfig`] (`--config`), applies its flags
//! on top (flags win), validates, computes all results in memory and only then
//! writes its files. Diagnostics go to stderr; nothing is printed on stdout.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::ingest::Aggregation;
use crate::presets::RegionPreset;

pub use commands::{cmd_fit_spatial, cmd_fit_temporal, cmd_generate, cmd_hotspots, cmd_ingest, cmd_pipeline};
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "celltide",
    version,
    about = "Fit and synthesize spatial-temporal cellular traffic",
    after_help = "Set CELLTIDE_LOG=quiet|info|debug to control diagnostics on stderr."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bin a raw traffic log hourly and write one dataset JSON per region.
    Ingest(IngestArgs),
    /// Fit the sinusoid superposition model per region.
    FitTemporal(FitTemporalArgs),
    /// Fit lognormal spatial distributions at spare and busy hours.
    FitSpatial(FitSpatialArgs),
    /// Cluster stations closer than the hotspot radius.
    Hotspots(HotspotArgs),
    /// Synthesize per-station traffic from a temporal model and sigma.
    Generate(GenerateArgs),
    /// Run ingest, both fits and generation, ending with a self-consistency report.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// JSON configuration file; flags override its fields.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Traffic log (CSV/TSV) or dataset JSON.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Only process the region with this label.
    #[arg(long, value_name = "LABEL")]
    pub region: Option<String>,
    /// Bytes per traffic unit for fitting and reporting (default 1e6).
    #[arg(long, value_name = "F")]
    pub scale: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct TemporalArgs {
    /// Fixed frequency list in rad/hour, e.g. "pi/12,pi/6"; skips spectral selection.
    #[arg(long, value_name = "LIST")]
    pub frequencies: Option<String>,
    /// Minimum R² gain to accept another component (default 0.02).
    #[arg(long, value_name = "F")]
    pub min_gain: Option<f64>,
    /// Aggregate stations by total or mean (default mean).
    #[arg(long, value_name = "MODE")]
    pub aggregation: Option<AggregationArg>,
    /// Maximum number of spectral components (default 3).
    #[arg(long, value_name = "INT")]
    pub max_components: Option<usize>,
    /// Relative amplitude threshold for spectral components (default 0.15).
    #[arg(long, value_name = "F")]
    pub rel_threshold: Option<f64>,
    /// Keep the mean in the series before the spectrum.
    #[arg(long)]
    pub no_detrend: bool,
    /// Pick spectral peaks anywhere instead of only daily harmonics.
    #[arg(long)]
    pub full_spectrum: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum AggregationArg {
    Total,
    Mean,
}

#[derive(Debug, Args, Default)]
pub struct SpatialArgs {
    /// Hours of day to pool, e.g. "7" or "2,3,4" or "17-19"; replaces the spare/busy pair.
    #[arg(long, value_name = "LIST")]
    pub hours: Option<String>,
    /// Hotspot radius in meters (default 150).
    #[arg(long, value_name = "F")]
    pub radius_m: Option<f64>,
    /// Histogram bins in comparison tables (default 30).
    #[arg(long, value_name = "INT")]
    pub bins: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct GeneratorArgs {
    /// Lognormal sigma of the spatial spread.
    #[arg(long, value_name = "F")]
    pub sigma: Option<f64>,
    /// Region preset supplying sigma and the temporal model.
    #[arg(long, value_name = "NAME")]
    pub region_preset: Option<RegionPreset>,
    /// Temporal model JSON (as written by fit-temporal).
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Number of stations to generate.
    #[arg(long, value_name = "INT")]
    pub n_stations: Option<usize>,
    /// Number of hours to generate.
    #[arg(long, value_name = "INT")]
    pub hours_count: Option<usize>,
    /// Random seed.
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct FitTemporalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub temporal: TemporalArgs,
}

#[derive(Debug, Args)]
pub struct FitSpatialArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub spatial: SpatialArgs,
}

#[derive(Debug, Args)]
pub struct HotspotArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Hotspot radius in meters (default 150).
    #[arg(long, value_name = "F")]
    pub radius_m: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub temporal: TemporalArgs,
    #[command(flatten)]
    pub spatial: SpatialArgs,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

impl CommonArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.input {
            cfg.input = Some(v.clone());
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &self.region {
            cfg.region = Some(v.clone());
        }
        if let Some(v) = self.scale {
            cfg.scale = v;
        }
        Ok(cfg)
    }
}

impl TemporalArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = &self.frequencies {
            cfg.fit.frequencies = Some(v.clone());
        }
        if let Some(v) = self.min_gain {
            cfg.fit.min_gain = v;
        }
        if let Some(v) = self.aggregation {
            cfg.aggregation = match v {
                AggregationArg::Total => Aggregation::Total,
                AggregationArg::Mean => Aggregation::Mean,
            };
        }
        if let Some(v) = self.max_components {
            cfg.spectral.max_components = v;
        }
        if let Some(v) = self.rel_threshold {
            cfg.spectral.rel_threshold = v;
        }
        if self.no_detrend {
            cfg.spectral.detrend = false;
        }
        if self.full_spectrum {
            cfg.spectral.full_spectrum = true;
        }
    }
}

impl SpatialArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(v) = &self.hours {
            cfg.spatial.hours = Some(config::parse_hour_list(v)?);
        }
        if let Some(v) = self.radius_m {
            cfg.spatial.radius_m = v;
        }
        if let Some(v) = self.bins {
            cfg.spatial.n_bins = v;
        }
        Ok(())
    }
}

impl GeneratorArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let g = &mut cfg.generate;
        if self.sigma.is_some() {
            g.sigma = self.sigma;
        }
        if self.region_preset.is_some() {
            g.region_preset = self.region_preset;
        }
        if self.model.is_some() {
            g.model = self.model.clone();
        }
        if self.n_stations.is_some() {
            g.n_stations = self.n_stations;
        }
        if self.hours_count.is_some() {
            g.hours_count = self.hours_count;
        }
        if let Some(seed) = self.seed {
            g.seed = seed;
        }
    }
}

impl Command {
    /// Resolves the effective configuration for this subcommand.
    pub fn config(&self) -> Result<RunConfig> {
        Ok(match self {
            Command::Ingest(a) => a.common.config()?,
            Command::FitTemporal(a) => {
                let mut cfg = a.common.config()?;
                a.temporal.apply(&mut cfg);
                cfg
            }
            Command::FitSpatial(a) => {
                let mut cfg = a.common.config()?;
                a.spatial.apply(&mut cfg)?;
                cfg
            }
            Command::Hotspots(a) => {
                let mut cfg = a.common.config()?;
                if let Some(r) = a.radius_m {
                    cfg.spatial.radius_m = r;
                }
                cfg
            }
            Command::Generate(a) => {
                let mut cfg = a.common.config()?;
                a.generator.apply(&mut cfg);
                cfg
            }
            Command::Pipeline(a) => {
                let mut cfg = a.common.config()?;
                a.temporal.apply(&mut cfg);
                a.spatial.apply(&mut cfg)?;
                a.generator.apply(&mut cfg);
                cfg
            }
        })
    }

    pub fn run(&self) -> Result<Vec<PathBuf>> {
        let cfg = self.config()?;
        match self {
            Command::Ingest(_) => cmd_ingest(&cfg),
            Command::FitTemporal(_) => cmd_fit_temporal(&cfg),
            Command::FitSpatial(_) => cmd_fit_spatial(&cfg),
            Command::Hotspots(_) => cmd_hotspots(&cfg),
            Command::Generate(_) => cmd_generate(&cfg),
            Command::Pipeline(_) => cmd_pipeline(&cfg),
        }
    }
}

/// Log level from `CELLTIDE_LOG` (`quiet`, `info` or `debug`; default `info`).
pub fn log_level(value: Option<&str>) -> log::LevelFilter {
    match value.map(|v| v.trim().to_ascii_lowercase()).as_deref() {
        Some("quiet") => log::LevelFilter::Error,
        Some("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Info,
    }
}
