//! Spatial traffic distribution across stations.
//!
//! Per-station volumes at chosen hours of day are pooled over all days and
//! fitted with a lognormal by maximum likelihood. Dense deployments
//! ("hotspots") are found by single-linkage clustering: two stations closer
//! than the radius are joined, and clusters are the connected components of
//! that graph, so a 100 m chain A–B–C forms one hotspot even when A and C are
//! 200 m apart.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};
use libm::erfc;
use thiserror::Error;

use crate::ingest::{HourlyDataset, Station, EARTH_RADIUS_M};

pub const DEFAULT_HOTSPOT_RADIUS_M: f64 = 150.0;
pub const DEFAULT_BINS: usize = 30;
pub const SPARE_HOURS: [u32; 3] = [2, 3, 4];
pub const BUSY_HOURS: [u32; 3] = [17, 18, 19];

#[derive(Debug, Error, PartialEq)]
pub enum SpatialError {
    #[error("spatial sample is empty")]
    EmptySample,
    #[error("need at least 2 values to fit, got {0}")]
    TooFewValues(usize),
    #[error("all sample values are equal; sigma would be zero")]
    Degenerate,
    #[error("lognormal density is defined for x > 0, got {0}")]
    NonPositive(f64),
    #[error("invalid lognormal parameters mu = {mu}, sigma = {sigma}")]
    InvalidParams { mu: f64, sigma: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty dataset: every station belongs to a hotspot")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LognormalParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, SpatialError> {
        if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
            return Err(SpatialError::InvalidParams { mu, sigma });
        }
        Ok(Self { mu, sigma })
    }

    pub fn mean(&self) -> f64 {
        (self.mu + 0.5 * self.sigma * self.sigma).exp()
    }

    pub fn variance(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        s2.exp_m1() * (2.0 * self.mu + s2).exp()
    }

    pub fn mode(&self) -> f64 {
        (self.mu - self.sigma * self.sigma).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        0.5 * erfc(-(x.ln() - self.mu) / (self.sigma * std::f64::consts::SQRT_2))
    }
}

pub fn lognormal_pdf(p: &LognormalParams, x: f64) -> Result<f64, SpatialError> {
    if !(x > 0.0) {
        return Err(SpatialError::NonPositive(x));
    }
    let z = (x.ln() - p.mu) / p.sigma;
    Ok((-0.5 * z * z).exp() / (x * p.sigma * (2.0 * PI).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StationFilter {
    #[default]
    All,
    NonHotspotOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub region_label: String,
    pub hours_of_day: Vec<u32>,
    pub day_count: usize,
    pub station_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialSample {
    pub values: Vec<f64>,
    pub provenance: SampleProvenance,
    pub excluded_zero_count: usize,
}

impl SpatialSample {
    /// Same sample with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// Pools every present, strictly positive cell whose hour of day is in
/// `hours_of_day`, over all days and retained stations. Zeros are counted and
/// dropped.
pub fn spatial_sample(
    ds: &HourlyDataset,
    hours_of_day: &BTreeSet<u32>,
    include: StationFilter,
    partition: Option<&HotspotPartition>,
) -> Result<SpatialSample, SpatialError> {
    if hours_of_day.is_empty() {
        return Err(SpatialError::InvalidArgument("hours_of_day is empty".into()));
    }
    if let Some(h) = hours_of_day.iter().find(|&&h| h > 23) {
        return Err(SpatialError::InvalidArgument(format!("hour of day {h} out of range")));
    }
    let retained: Vec<bool> = match (include, partition) {
        (StationFilter::All, _) => vec![true; ds.n_stations()],
        (StationFilter::NonHotspotOnly, Some(p)) => ds
            .stations()
            .iter()
            .map(|s| !p.hotspot_ids.contains(&s.station_id))
            .collect(),
        (StationFilter::NonHotspotOnly, None) => {
            return Err(SpatialError::InvalidArgument(
                "a hotspot partition is required to exclude hotspots".into(),
            ))
        }
    };

    let mut values = Vec::new();
    let mut zeros = 0;
    let mut days = BTreeSet::new();
    for t in 0..ds.hours() {
        if !hours_of_day.contains(&ds.hour_of_day(t)) {
            continue;
        }
        days.insert(ds.hour_time(t).date());
        for (v, keep) in ds.row(t).iter().zip(&retained) {
            match (v, keep) {
                (Some(v), true) if *v > 0.0 => values.push(*v),
                (Some(_), true) => zeros += 1,
                _ => {}
            }
        }
    }
    if values.is_empty() {
        return Err(SpatialError::EmptySample);
    }
    Ok(SpatialSample {
        values,
        provenance: SampleProvenance {
            region_label: ds.region_label().to_string(),
            hours_of_day: hours_of_day.iter().copied().collect(),
            day_count: days.len(),
            station_count: retained.iter().filter(|&&k| k).count(),
        },
        excluded_zero_count: zeros,
    })
}

/// Maximum-likelihood lognormal fit: mean and population (1/n) standard
/// deviation of the log values.
pub fn fit_lognormal(sample: &SpatialSample) -> Result<LognormalParams, SpatialError> {
    fit_lognormal_values(&sample.values)
}

pub fn fit_lognormal_values(values: &[f64]) -> Result<LognormalParams, SpatialError> {
    if values.len() < 2 {
        return Err(SpatialError::TooFewValues(values.len()));
    }
    if let Some(&bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(SpatialError::NonPositive(bad));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(SpatialError::Degenerate);
    }
    // Welford accumulation of the log moments.
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, v) in values.iter().enumerate() {
        let x = v.ln();
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let sigma = (m2 / values.len() as f64).sqrt();
    if sigma == 0.0 {
        return Err(SpatialError::Degenerate);
    }
    LognormalParams::new(mean, sigma)
}

/// Fitted parameters as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LognormalDocument {
    pub mu: f64,
    pub sigma: f64,
    pub provenance: FitProvenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitProvenance {
    #[serde(flatten)]
    pub sample: SampleProvenance,
    pub variant: String,
    pub sample_size: usize,
    pub excluded_zero_count: usize,
    /// Bytes per traffic unit of the fitted values.
    pub scale: f64,
}

/// Great-circle distance in meters.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = p2 - p1;
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

pub fn station_distance_m(a: &Station, b: &Station) -> f64 {
    haversine_m(a.lat, a.lon, b.lat, b.lon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotPartition {
    /// Clusters in order of their first station; members in station order.
    pub clusters: Vec<Vec<String>>,
    pub hotspot_ids: BTreeSet<String>,
}

impl HotspotPartition {
    pub fn hotspots(&self) -> impl Iterator<Item = &Vec<String>> {
        self.clusters.iter().filter(|c| c.len() >= 2)
    }
}

/// Connected components of the graph joining stations closer than
/// `radius_m` (strictly).
pub fn detect_hotspots(stations: &[Station], radius_m: f64) -> Result<HotspotPartition, SpatialError> {
    if !(radius_m > 0.0 && radius_m.is_finite()) {
        return Err(SpatialError::InvalidArgument(format!("radius must be positive, got {radius_m}")));
    }
    let n = stations.len();
    let mut sets = UnionFind::<usize>::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if station_distance_m(&stations[i], &stations[j]) < radius_m {
                sets.union(i, j);
            }
        }
    }
    let labels = sets.into_labeling();
    let mut roots: Vec<usize> = Vec::new();
    let mut clusters: Vec<Vec<String>> = Vec::new();
    for (i, root) in labels.iter().enumerate() {
        let slot = match roots.iter().position(|r| r == root) {
            Some(slot) => slot,
            None => {
                roots.push(*root);
                clusters.push(Vec::new());
                roots.len() - 1
            }
        };
        clusters[slot].push(stations[i].station_id.clone());
    }
    let hotspot_ids = clusters
        .iter()
        .filter(|c| c.len() >= 2)
        .flatten()
        .cloned()
        .collect();
    Ok(HotspotPartition { clusters, hotspot_ids })
}

pub fn remove_hotspots(ds: &HourlyDataset, partition: &HotspotPartition) -> Result<HourlyDataset, SpatialError> {
    let out = ds.retain_stations(|s| !partition.hotspot_ids.contains(&s.station_id));
    if out.n_stations() == 0 && ds.n_stations() > 0 {
        return Err(SpatialError::EmptyDataset);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub empirical_density: f64,
    pub model_density: f64,
}

/// Equal-width histogram of the sample over `[min, max]` next to the lognormal
/// probability mass of each bin, both as densities.
pub fn empirical_vs_model(
    sample: &SpatialSample,
    p: &LognormalParams,
    n_bins: usize,
) -> Result<Vec<ComparisonRow>, SpatialError> {
    if n_bins < 2 {
        return Err(SpatialError::InvalidArgument(format!("need at least 2 bins, got {n_bins}")));
    }
    let values = &sample.values;
    if values.is_empty() {
        return Err(SpatialError::EmptySample);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(SpatialError::Degenerate);
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for v in values {
        let idx = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    let total = values.len() as f64;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, &count)| {
            let bin_lo = lo + i as f64 * width;
            let bin_hi = if i + 1 == n_bins { hi } else { lo + (i + 1) as f64 * width };
            let w = bin_hi - bin_lo;
            ComparisonRow {
                bin_lo,
                bin_hi,
                empirical_density: count as f64 / (total * w),
                model_density: (p.cdf(bin_hi) - p.cdf(bin_lo)) / w,
            }
        })
        .collect())
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("bin_lo,bin_hi,empirical_density,model_density\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.bin_lo, r.bin_hi, r.empirical_density, r.model_density);
    }
    out
}
