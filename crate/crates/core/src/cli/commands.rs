use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDateTime;
use log::{debug, info, warn};
use serde::Serialize;

use super::config::{
    RunConfig, DEFAULT_GENERATED_HOURS, DEFAULT_GENERATED_STATIONS, DEFAULT_PIPELINE_STATIONS,
};
use super::output::{file_label, OutputSet};
use crate::ingest::{
    aggregate, bin_hourly, default_epoch, filter_region, parse_records, Aggregation, GeoPoint, HourlyDataset,
};
use crate::spatial::{
    comparison_csv, detect_hotspots, empirical_vs_model, fit_lognormal, remove_hotspots, spatial_sample,
    FitProvenance, HotspotPartition, LognormalDocument, LognormalParams, StationFilter,
};
use crate::spectral::{amplitude_spectrum, dominant_components, fill_gaps, ComponentSet};
use crate::stgen::{generate, validate, STModel, ValidationReport};
use crate::temporal::{fit, select_order, FitReport, ModelDocument, SinusoidModel};

/// Reads the configured input: a dataset JSON (`.json`) or a raw traffic log,
/// which is binned and split into the configured regions.
pub fn load_datasets(cfg: &RunConfig) -> Result<Vec<HourlyDataset>> {
    let input = cfg.input.as_ref().ok_or_else(|| anyhow!("no input file given (use --input)"))?;
    let file = std::fs::File::open(input).with_context(|| format!("opening input {}", input.display()))?;

    let is_json = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let base = if is_json {
        let text = std::io::read_to_string(file)?;
        let ds = HourlyDataset::from_json(&text).with_context(|| format!("reading dataset {}", input.display()))?;
        if ds.region_label().is_empty() {
            let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("all").to_string();
            ds.with_label(stem)
        } else {
            ds
        }
    } else {
        let records = parse_records(file, &cfg.schema).with_context(|| format!("parsing {}", input.display()))?;
        info!("parsed {} records from {}", records.len(), input.display());
        let epoch = default_epoch(&records).unwrap_or_default();
        bin_hourly(&records, epoch)?.with_label("all")
    };

    let mut datasets = Vec::new();
    if cfg.regions.is_empty() {
        match &cfg.region {
            Some(label) if label != base.region_label() && is_json => {
                bail!("dataset is labelled '{}', not '{label}'", base.region_label())
            }
            Some(label) => datasets.push(base.with_label(label.clone())),
            None => datasets.push(base),
        }
    } else {
        for spec in &cfg.regions {
            if cfg.region.as_ref().is_some_and(|r| *r != spec.label) {
                continue;
            }
            datasets.push(filter_region(&base, &spec.bounds, &spec.label));
        }
        if datasets.is_empty() {
            bail!("region '{}' is not defined in the configuration", cfg.region.as_deref().unwrap_or_default());
        }
    }
    for ds in &datasets {
        if ds.n_stations() == 0 {
            warn!("region '{}' contains no stations", ds.region_label());
        }
    }
    Ok(datasets)
}

fn new_outputs(cfg: &RunConfig) -> OutputSet {
    let mut out = OutputSet::new(&cfg.out);
    if let Some(input) = &cfg.input {
        out.protect(input);
    }
    if let Some(model) = &cfg.generate.model {
        out.protect(model);
    }
    out
}

fn commit(out: OutputSet) -> Result<Vec<PathBuf>> {
    let written = out.commit()?;
    for p in &written {
        debug!("wrote {}", p.display());
    }
    info!("wrote {} files", written.len());
    Ok(written)
}

#[derive(Debug, Serialize)]
struct RegionSummary {
    region_label: String,
    station_count: usize,
    hours: usize,
    epoch: NaiveDateTime,
    missing_cell_fraction: f64,
}

fn stage_ingest(datasets: &[HourlyDataset], out: &mut OutputSet) -> Result<()> {
    let mut summary = Vec::new();
    for ds in datasets {
        out.add(format!("dataset_{}.json", file_label(ds.region_label())), ds.to_json()? + "\n");
        summary.push(RegionSummary {
            region_label: ds.region_label().to_string(),
            station_count: ds.n_stations(),
            hours: ds.hours(),
            epoch: ds.epoch(),
            missing_cell_fraction: ds.missing_fraction(),
        });
    }
    out.add_json("ingest_summary.json", &serde_json::json!({ "regions": summary }))
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let datasets = load_datasets(cfg)?;
    let mut out = new_outputs(cfg);
    stage_ingest(&datasets, &mut out)?;
    commit(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct TemporalFit {
    pub region_label: String,
    pub scale: f64,
    pub aggregation: Aggregation,
    /// Spectral candidates, absent when frequencies were given explicitly.
    pub candidates: Option<ComponentSet>,
    pub report: FitReport,
}

fn fit_temporal_region(cfg: &RunConfig, ds: &HourlyDataset, out: &mut OutputSet) -> Result<TemporalFit> {
    let label = ds.region_label();
    let series: Vec<Option<f64>> = aggregate(ds, cfg.aggregation)?
        .into_iter()
        .map(|v| v.map(|v| v / cfg.scale))
        .collect();
    let filled = fill_gaps(&series).with_context(|| format!("region '{label}'"))?;
    let spectrum = amplitude_spectrum(&filled, cfg.spectral.detrend).with_context(|| format!("region '{label}'"))?;

    let (candidates, report) = match cfg.frequencies()? {
        Some(freqs) => (None, fit(&series, &freqs)?),
        None => {
            let comps = dominant_components(&spectrum, &cfg.spectral.selection())
                .with_context(|| format!("region '{label}'"))?;
            let report = select_order(&series, &comps, cfg.fit.min_gain)?;
            (Some(comps), report)
        }
    };
    info!(
        "region '{label}': {} components, R² = {:.4}",
        report.model.components().len(),
        report.r_squared
    );

    let name = file_label(label);
    let result = TemporalFit {
        region_label: label.to_string(),
        scale: cfg.scale,
        aggregation: cfg.aggregation,
        candidates,
        report,
    };
    out.add_json(format!("temporal_{name}_fit.json"), &result)?;
    out.add_json(
        format!("temporal_{name}_model.json"),
        &ModelDocument::new(&result.report.model, cfg.scale, label),
    )?;
    out.add(format!("temporal_{name}_spectrum.csv"), spectrum.to_csv());
    Ok(result)
}

fn stage_fit_temporal(cfg: &RunConfig, datasets: &[HourlyDataset], out: &mut OutputSet) -> Result<Vec<TemporalFit>> {
    let mut fits = Vec::new();
    for ds in datasets {
        if ds.n_stations() == 0 {
            warn!("skipping temporal fit of empty region '{}'", ds.region_label());
            continue;
        }
        fits.push(fit_temporal_region(cfg, ds, out)?);
    }
    if fits.is_empty() {
        bail!("no region has stations to fit");
    }
    Ok(fits)
}

pub fn cmd_fit_temporal(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let datasets = load_datasets(cfg)?;
    let mut out = new_outputs(cfg);
    stage_fit_temporal(cfg, &datasets, &mut out)?;
    commit(out)
}

#[derive(Debug, Serialize)]
struct HotspotDocument<'a> {
    region_label: &'a str,
    radius_m: f64,
    station_count: usize,
    hotspot_count: usize,
    #[serde(flatten)]
    partition: &'a HotspotPartition,
}

fn stage_hotspots(cfg: &RunConfig, ds: &HourlyDataset, out: &mut OutputSet) -> Result<HotspotPartition> {
    let partition = detect_hotspots(ds.stations(), cfg.spatial.radius_m)?;
    out.add_json(
        format!("hotspots_{}.json", file_label(ds.region_label())),
        &HotspotDocument {
            region_label: ds.region_label(),
            radius_m: cfg.spatial.radius_m,
            station_count: ds.n_stations(),
            hotspot_count: partition.hotspots().count(),
            partition: &partition,
        },
    )?;
    Ok(partition)
}

pub fn cmd_hotspots(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let datasets = load_datasets(cfg)?;
    let mut out = new_outputs(cfg);
    for ds in &datasets {
        stage_hotspots(cfg, ds, &mut out)?;
    }
    commit(out)
}

#[derive(Debug, Clone)]
pub struct SpatialFit {
    pub region_label: String,
    pub variant: String,
    pub hour_set: String,
    pub params: LognormalParams,
}

fn stage_fit_spatial(cfg: &RunConfig, datasets: &[HourlyDataset], out: &mut OutputSet) -> Result<Vec<SpatialFit>> {
    let mut fits = Vec::new();
    for ds in datasets {
        let label = ds.region_label();
        if ds.n_stations() == 0 {
            warn!("skipping spatial fit of empty region '{label}'");
            continue;
        }
        let partition = stage_hotspots(cfg, ds, out)?;
        let mut variants = vec![("all", ds.clone())];
        match remove_hotspots(ds, &partition) {
            Ok(kept) => variants.push(("nohotspots", kept)),
            Err(e) => warn!("region '{label}': {e}; skipping the hotspot-free variant"),
        }
        for (variant, data) in &variants {
            for (set_name, hours) in cfg.spatial.hour_sets() {
                let hours: BTreeSet<u32> = hours.into_iter().collect();
                let sample = spatial_sample(data, &hours, StationFilter::All, None)
                    .with_context(|| format!("region '{label}', {variant}, {set_name} hours"))?
                    .scaled(1.0 / cfg.scale);
                let params = fit_lognormal(&sample)
                    .with_context(|| format!("region '{label}', {variant}, {set_name} hours"))?;
                let rows = empirical_vs_model(&sample, &params, cfg.spatial.n_bins)?;
                let stem = format!("spatial_{}_{variant}_{set_name}", file_label(label));
                out.add_json(
                    format!("{stem}.json"),
                    &LognormalDocument {
                        mu: params.mu,
                        sigma: params.sigma,
                        provenance: FitProvenance {
                            sample: sample.provenance.clone(),
                            variant: variant.to_string(),
                            sample_size: sample.values.len(),
                            excluded_zero_count: sample.excluded_zero_count,
                            scale: cfg.scale,
                        },
                    },
                )?;
                out.add(format!("{stem}_comparison.csv"), comparison_csv(&rows));
                info!("region '{label}' {variant} {set_name}: mu = {:.4}, sigma = {:.4}", params.mu, params.sigma);
                fits.push(SpatialFit {
                    region_label: label.to_string(),
                    variant: variant.to_string(),
                    hour_set: set_name.to_string(),
                    params,
                });
            }
        }
    }
    if fits.is_empty() {
        bail!("no region has stations to fit");
    }
    Ok(fits)
}

pub fn cmd_fit_spatial(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let datasets = load_datasets(cfg)?;
    let mut out = new_outputs(cfg);
    stage_fit_spatial(cfg, &datasets, &mut out)?;
    commit(out)
}

#[derive(Debug, Serialize)]
struct GenerationDocument<'a> {
    region_label: &'a str,
    seed: u64,
    sigma: f64,
    n_stations: usize,
    hours: usize,
    scale: f64,
    #[serde(flatten)]
    report: &'a ValidationReport,
}

fn generation_epoch() -> NaiveDateTime {
    NaiveDateTime::default()
}

fn stage_generate(
    cfg: &RunConfig,
    model: &STModel,
    hours: usize,
    scale: f64,
    out: &mut OutputSet,
) -> Result<ValidationReport> {
    let gen = generate(model, hours, cfg.generate.seed)?;
    let report = validate(&gen)?;
    let name = file_label(model.region_label());
    out.add(format!("generated_{name}.csv"), gen.to_csv(scale));
    let ds = gen.to_dataset(generation_epoch(), GeoPoint { lon: 0.0, lat: 0.0 }, cfg.generate.grid_spacing_m, scale)?;
    out.add(format!("generated_{name}.json"), ds.to_json()? + "\n");
    out.add_json(
        format!("validation_{name}.json"),
        &GenerationDocument {
            region_label: model.region_label(),
            seed: cfg.generate.seed,
            sigma: model.sigma(),
            n_stations: model.n_stations(),
            hours,
            scale,
            report: &report,
        },
    )?;
    info!(
        "generated {} x {} for '{}': nrmse = {:.4}",
        hours,
        model.n_stations(),
        model.region_label(),
        report.nrmse_mean_profile
    );
    Ok(report)
}

fn load_model(path: &Path) -> Result<ModelDocument> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let g = &cfg.generate;
    let preset = g.region_preset;
    let (temporal, scale, label): (SinusoidModel, f64, String) = match (&g.model, preset) {
        (Some(path), _) => {
            let doc = load_model(path)?;
            let label = preset.map(|p| p.label().to_string()).unwrap_or_else(|| doc.region_label.clone());
            (doc.model()?, doc.scale, label)
        }
        (None, Some(p)) => (p.temporal_model(), cfg.scale, p.label().to_string()),
        (None, None) => bail!("no temporal model: give --model or --region-preset"),
    };
    let sigma = g
        .sigma
        .or(preset.map(|p| p.sigma()))
        .ok_or_else(|| anyhow!("no sigma: give --sigma or --region-preset"))?;
    let n = g.n_stations.unwrap_or(DEFAULT_GENERATED_STATIONS);
    let hours = g.hours_count.unwrap_or(DEFAULT_GENERATED_HOURS);
    let label = if label.is_empty() { "generated".to_string() } else { label };
    let model = STModel::new(temporal, sigma, n, label, hours)?;

    let mut out = new_outputs(cfg);
    stage_generate(cfg, &model, hours, scale, &mut out)?;
    commit(out)
}

#[derive(Debug, Serialize)]
struct SelfConsistency {
    region_label: String,
    r_squared: f64,
    fitted_frequencies: Vec<f64>,
    generated_frequencies: Vec<f64>,
    frequencies_match: bool,
    nrmse_mean_profile: f64,
    sigma: f64,
    sigma_source: String,
    n_stations: usize,
    hours: usize,
}

/// Runs ingest, both fits and generation per region, then compares the
/// dominant frequencies of the generated mean series with the fitted model.
///
/// The generator divides its temporal model by the station count. A model
/// fitted to per-station means is therefore scaled up by that count first,
/// so the generated per-station mean follows the fitted curve.
pub fn cmd_pipeline(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let datasets = load_datasets(cfg)?;
    let mut out = new_outputs(cfg);
    stage_ingest(&datasets, &mut out)?;
    let temporal = stage_fit_temporal(cfg, &datasets, &mut out)?;
    let spatial = stage_fit_spatial(cfg, &datasets, &mut out)?;

    let mut reports = Vec::new();
    for tf in &temporal {
        let ds = datasets
            .iter()
            .find(|d| d.region_label() == tf.region_label)
            .expect("fit comes from a loaded dataset");
        let (sigma, source) = match (cfg.generate.sigma, cfg.generate.region_preset) {
            (Some(s), _) => (s, "config".to_string()),
            (None, Some(p)) => (p.sigma(), format!("preset:{p}")),
            (None, None) => {
                let candidates: Vec<&SpatialFit> = spatial
                    .iter()
                    .filter(|f| f.region_label == tf.region_label && f.variant == "all")
                    .collect();
                let chosen = candidates
                    .iter()
                    .find(|f| f.hour_set == "busy")
                    .or(candidates.first())
                    .ok_or_else(|| anyhow!("no spatial fit for region '{}'", tf.region_label))?;
                (chosen.params.sigma, format!("fitted:{}", chosen.hour_set))
            }
        };
        let n = cfg.generate.n_stations.unwrap_or(DEFAULT_PIPELINE_STATIONS);
        let hours = cfg.generate.hours_count.unwrap_or(ds.hours());
        let temporal_model = match tf.aggregation {
            Aggregation::Mean => tf.report.model.scaled(n as f64),
            Aggregation::Total => tf.report.model.clone(),
        };
        let model = STModel::new(temporal_model, sigma, n, tf.region_label.clone(), hours)
            .with_context(|| format!("building generator for region '{}'", tf.region_label))?;
        let validation = stage_generate(cfg, &model, hours, cfg.scale, &mut out)?;

        let fitted = tf.report.model.frequencies();
        let generated = validation.dominant_frequencies.frequencies();
        let matches = fitted.len() == generated.len()
            && fitted.iter().zip(&generated).all(|(a, b)| (a - b).abs() < 1e-9);
        if !matches {
            warn!("region '{}': generated frequencies {generated:?} differ from fitted {fitted:?}", tf.region_label);
        }
        reports.push(SelfConsistency {
            region_label: tf.region_label.clone(),
            r_squared: tf.report.r_squared,
            fitted_frequencies: fitted,
            generated_frequencies: generated,
            frequencies_match: matches,
            nrmse_mean_profile: validation.nrmse_mean_profile,
            sigma,
            sigma_source: source,
            n_stations: n,
            hours,
        });
    }
    out.add_json("pipeline_report.json", &serde_json::json!({ "regions": reports }))?;
    commit(out)
}
