//! Run configuration: one JSON document, every field overridable by a flag.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use crate::ingest::{Aggregation, ColumnSchema, RegionBounds};
use crate::presets::RegionPreset;
use crate::spatial::{BUSY_HOURS, DEFAULT_BINS, DEFAULT_HOTSPOT_RADIUS_M, SPARE_HOURS};
use crate::spectral::{CandidateMode, SelectionOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub label: String,
    #[serde(flatten)]
    pub bounds: RegionBounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub detrend: bool,
    pub max_components: usize,
    pub rel_threshold: f64,
    pub full_spectrum: bool,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { detrend: true, max_components: 3, rel_threshold: 0.15, full_spectrum: false }
    }
}

impl SpectralConfig {
    pub fn selection(&self) -> SelectionOptions {
        SelectionOptions {
            max_components: self.max_components,
            rel_threshold: self.rel_threshold,
            candidates: if self.full_spectrum {
                CandidateMode::FullSpectrum
            } else {
                CandidateMode::DailyHarmonics { max_harmonic: 8 }
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub min_gain: f64,
    /// Explicit frequency list, e.g. `"pi/12,pi/6"`; skips spectral selection.
    pub frequencies: Option<String>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { min_gain: 0.02, frequencies: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialConfig {
    pub spare_hours: Vec<u32>,
    pub busy_hours: Vec<u32>,
    /// Replaces the spare/busy pair with a single custom hour set.
    pub hours: Option<Vec<u32>>,
    pub radius_m: f64,
    pub n_bins: usize,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            spare_hours: SPARE_HOURS.to_vec(),
            busy_hours: BUSY_HOURS.to_vec(),
            hours: None,
            radius_m: DEFAULT_HOTSPOT_RADIUS_M,
            n_bins: DEFAULT_BINS,
        }
    }
}

impl SpatialConfig {
    pub fn hour_sets(&self) -> Vec<(&'static str, Vec<u32>)> {
        match &self.hours {
            Some(h) => vec![("custom", h.clone())],
            None => vec![("spare", self.spare_hours.clone()), ("busy", self.busy_hours.clone())],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub sigma: Option<f64>,
    pub region_preset: Option<RegionPreset>,
    /// Temporal model JSON; defaults to the preset's model.
    pub model: Option<PathBuf>,
    pub n_stations: Option<usize>,
    pub hours_count: Option<usize>,
    pub seed: u64,
    /// Spacing of the synthetic station grid in the dataset export.
    pub grid_spacing_m: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            sigma: None,
            region_preset: None,
            model: None,
            n_stations: None,
            hours_count: None,
            seed: 42,
            grid_spacing_m: 500.0,
        }
    }
}

pub const DEFAULT_GENERATED_STATIONS: usize = 100;
pub const DEFAULT_GENERATED_HOURS: usize = 504;
pub const DEFAULT_PIPELINE_STATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    /// Restricts every command to the region with this label.
    pub region: Option<String>,
    pub schema: ColumnSchema,
    pub regions: Vec<RegionSpec>,
    pub aggregation: Aggregation,
    /// Bytes per traffic unit used for fitting and reporting.
    pub scale: f64,
    pub spectral: SpectralConfig,
    pub fit: FitConfig,
    pub spatial: SpatialConfig,
    pub generate: GenerateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            out: PathBuf::from("out"),
            region: None,
            schema: ColumnSchema::default(),
            regions: Vec::new(),
            aggregation: Aggregation::Mean,
            scale: 1e6,
            spectral: SpectralConfig::default(),
            fit: FitConfig::default(),
            spatial: SpatialConfig::default(),
            generate: GenerateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Checks every numeric option against the preconditions of the
    /// operation that consumes it.
    pub fn validate(&self) -> Result<()> {
        ensure!(self.scale > 0.0 && self.scale.is_finite(), "scale must be positive, got {}", self.scale);
        ensure!(self.spectral.max_components >= 1, "max_components must be at least 1");
        ensure!(
            self.spectral.rel_threshold > 0.0 && self.spectral.rel_threshold <= 1.0,
            "rel_threshold must be in (0, 1], got {}",
            self.spectral.rel_threshold
        );
        ensure!(
            self.fit.min_gain >= 0.0 && self.fit.min_gain.is_finite(),
            "min_gain must be non-negative, got {}",
            self.fit.min_gain
        );
        if let Some(f) = &self.fit.frequencies {
            parse_frequency_list(f)?;
        }
        for (name, hours) in self.spatial.hour_sets() {
            ensure!(!hours.is_empty(), "{name} hour set is empty");
            if let Some(h) = hours.iter().find(|&&h| h > 23) {
                bail!("{name} hour set contains {h}, expected 0-23");
            }
        }
        ensure!(
            self.spatial.radius_m > 0.0 && self.spatial.radius_m.is_finite(),
            "hotspot radius must be positive, got {}",
            self.spatial.radius_m
        );
        ensure!(self.spatial.n_bins >= 2, "need at least 2 comparison bins, got {}", self.spatial.n_bins);
        if let Some(sigma) = self.generate.sigma {
            ensure!(sigma > 0.0 && sigma.is_finite(), "sigma must be positive, got {sigma}");
        }
        if let Some(n) = self.generate.n_stations {
            ensure!(n >= 1, "n_stations must be at least 1");
        }
        if let Some(t) = self.generate.hours_count {
            ensure!(t >= 1, "hours_count must be at least 1");
        }
        ensure!(
            self.generate.grid_spacing_m > 0.0,
            "grid spacing must be positive, got {}",
            self.generate.grid_spacing_m
        );
        let mut labels = std::collections::HashSet::new();
        for r in &self.regions {
            ensure!(labels.insert(r.label.as_str()), "duplicate region label '{}'", r.label);
            RegionBounds::new(r.bounds.min_lon, r.bounds.max_lon, r.bounds.min_lat, r.bounds.max_lat)?;
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Result<Option<Vec<f64>>> {
        self.fit.frequencies.as_deref().map(parse_frequency_list).transpose()
    }
}

/// Parses one frequency in radians per hour: a plain number, or a multiple of
/// π such as `pi/12`, `2pi/24`, `π/4`, `0.5*pi`.
pub fn parse_frequency(text: &str) -> Result<f64> {
    let s: String = text.trim().to_ascii_lowercase().replace('π', "pi").replace(' ', "");
    ensure!(!s.is_empty(), "empty frequency");
    let (numerator, denominator) = match s.split_once('/') {
        Some((n, d)) => {
            let d: f64 = d.parse().with_context(|| format!("bad denominator in frequency '{text}'"))?;
            (n.to_string(), d)
        }
        None => (s.clone(), 1.0),
    };
    let value = match numerator.strip_suffix("pi") {
        Some(coef) => {
            let coef = coef.trim_end_matches('*');
            let c: f64 = if coef.is_empty() {
                1.0
            } else {
                coef.parse().with_context(|| format!("bad coefficient in frequency '{text}'"))?
            };
            if c == 1.0 {
                std::f64::consts::PI / denominator
            } else {
                c * std::f64::consts::PI / denominator
            }
        }
        None => {
            let n: f64 = numerator.parse().with_context(|| format!("bad frequency '{text}'"))?;
            n / denominator
        }
    };
    ensure!(value.is_finite() && value > 0.0, "frequency '{text}' must be positive");
    Ok(value)
}

pub fn parse_frequency_list(text: &str) -> Result<Vec<f64>> {
    let freqs: Vec<f64> = text.split(',').map(parse_frequency).collect::<Result<_>>()?;
    for (i, f) in freqs.iter().enumerate() {
        ensure!(!freqs[..i].contains(f), "duplicate frequency {f} in '{text}'");
    }
    Ok(freqs)
}

pub fn parse_hour_list(text: &str) -> Result<Vec<u32>> {
    let mut hours = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once('-') {
            let (a, b): (u32, u32) = (a.trim().parse()?, b.trim().parse()?);
            ensure!(a <= b, "bad hour range '{part}'");
            hours.extend(a..=b);
        } else {
            hours.push(part.parse().with_context(|| format!("bad hour '{part}'"))?);
        }
    }
    Ok(hours)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn frequency_grammar() {
        assert_eq!(parse_frequency("pi/12").unwrap(), PI / 12.0);
        assert_eq!(parse_frequency("π/6").unwrap(), PI / 6.0);
        assert_eq!(parse_frequency("PI/4").unwrap(), PI / 4.0);
        assert!((parse_frequency("2pi/24").unwrap() - PI / 12.0).abs() < 1e-15);
        assert!((parse_frequency("0.5*pi").unwrap() - PI / 2.0).abs() < 1e-15);
        assert_eq!(parse_frequency("0.25").unwrap(), 0.25);
        assert!(parse_frequency("banana").is_err());
        assert!(parse_frequency("0").is_err());
        assert_eq!(parse_frequency_list("pi/12, pi/6").unwrap(), vec![PI / 12.0, PI / 6.0]);
        assert!(parse_frequency_list("pi/12,pi/12").is_err());
    }

    #[test]
    fn hour_lists() {
        assert_eq!(parse_hour_list("2,3,4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_hour_list("17-19").unwrap(), vec![17, 18, 19]);
        assert!(parse_hour_list("x").is_err());
    }

    #[test]
    fn defaults_follow_published_hours() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.spatial.spare_hours, vec![2, 3, 4]);
        assert_eq!(cfg.spatial.busy_hours, vec![17, 18, 19]);
        assert_eq!(cfg.spatial.radius_m, 150.0);
        assert_eq!(cfg.spatial.n_bins, 30);
        assert_eq!(cfg.scale, 1e6);
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_rejects_zero_sigma() {
        let mut cfg = RunConfig::default();
        cfg.generate.sigma = Some(0.0);
        assert!(cfg.validate().unwrap_err().to_string().contains("sigma"));
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{
            "input": "log.csv",
            "regions": [{"label": "park", "min_lon": 118.7, "max_lon": 118.8, "min_lat": 32.0, "max_lat": 32.1}],
            "generate": {"region_preset": "park", "seed": 7}
        }"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.regions[0].label, "park");
        assert_eq!(cfg.generate.region_preset, Some(RegionPreset::Park));
        assert_eq!(cfg.generate.seed, 7);
        assert_eq!(cfg.spectral.max_components, 3);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
