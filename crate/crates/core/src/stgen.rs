//! Spatial-temporal traffic generator.
//!
//! A region of `N` stations gets a per-station mean profile
//! `m(t) = V(t) / N` from its sinusoid model. At each hour every station draws
//! independently from a lognormal whose σ is the region's spatial spread and
//! whose μ is chosen so the lognormal mean equals `m(t)`:
//! `μ(t) = ln m(t) − σ²/2`.
//!
//! The mean profile keeps the amplitudes `a_k` of the sinusoid model. A
//! literal reading of the published formula drops them, which would make the
//! profile unrelated to the fitted region model.
//!
//! Draws are independent across stations and hours; no per-station temporal
//! correlation is modeled.
//!
//! # Random stream layout
//!
//! Hour `t` draws from ChaCha8 seeded with `seed` and switched to stream `t`.
//! Within an hour, station `i` takes the `i`-th standard normal variate
//! (ziggurat, `rand_distr::StandardNormal`), so the matrix is filled row-major
//! with one variate per cell. Hours are independent sub-streams and may be
//! generated in parallel without changing the output.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{unproject, GeoPoint, HourlyDataset, IngestError};
use crate::spatial::LognormalParams;
use crate::spectral::{self, ComponentSet, SelectionOptions, SpectralError};
use crate::temporal::SinusoidModel;

#[derive(Debug, Error, PartialEq)]
pub enum StGenError {
    #[error("mean profile non-positive: m = {0}")]
    NonPositiveMean(f64),
    #[error("mean profile non-positive at hour {hour}: m = {value}")]
    NonPositiveProfile { hour: usize, value: f64 },
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("sigma must be finite and positive, got {0}")]
    InvalidSigma(f64),
    #[error("station count must be at least 1")]
    NoStations,
    #[error("hour count must be at least 1")]
    NoHours,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// `μ = ln m − σ²/2`, the log-mean that gives a lognormal of mean `m`.
pub fn mu_of_t(m: f64, sigma: f64) -> Result<f64, StGenError> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(StGenError::NonPositiveMean(m));
    }
    Ok(m.ln() - 0.5 * sigma * sigma)
}

/// Lognormal parameters with mean `m` and variance `v`:
/// `μ = ln(m² / √(v + m²))`, `σ = √(ln(v/m² + 1))`.
pub fn moment_match(m: f64, v: f64) -> Result<LognormalParams, StGenError> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(StGenError::NonPositiveMean(m));
    }
    if !(v > 0.0) || !v.is_finite() {
        return Err(StGenError::NonPositiveVariance(v));
    }
    let mu = (m * m / (v + m * m).sqrt()).ln();
    let sigma = (v / (m * m)).ln_1p().sqrt();
    LognormalParams::new(mu, sigma).map_err(|_| StGenError::InvalidSigma(sigma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct STModel {
    temporal: SinusoidModel,
    sigma: f64,
    n_stations: usize,
    region_label: String,
    horizon: usize,
}

impl STModel {
    /// Checks that the mean profile is positive on hours `0..horizon`.
    pub fn new(
        temporal: SinusoidModel,
        sigma: f64,
        n_stations: usize,
        region_label: impl Into<String>,
        horizon: usize,
    ) -> Result<Self, StGenError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(StGenError::InvalidSigma(sigma));
        }
        if n_stations == 0 {
            return Err(StGenError::NoStations);
        }
        let model = Self { temporal, sigma, n_stations, region_label: region_label.into(), horizon };
        model.check_profile(horizon)?;
        Ok(model)
    }

    fn check_profile(&self, hours: usize) -> Result<(), StGenError> {
        for hour in 0..hours {
            let value = self.mean_profile(hour as f64);
            if !(value > 0.0) {
                return Err(StGenError::NonPositiveProfile { hour, value });
            }
        }
        Ok(())
    }

    pub fn temporal(&self) -> &SinusoidModel {
        &self.temporal
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n_stations(&self) -> usize {
        self.n_stations
    }

    pub fn region_label(&self) -> &str {
        &self.region_label
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Per-station mean traffic at hour `t`.
    pub fn mean_profile(&self, t: f64) -> f64 {
        self.temporal.evaluate(t) / self.n_stations as f64
    }

    pub fn mu_at(&self, t: f64) -> Result<f64, StGenError> {
        mu_of_t(self.mean_profile(t), self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTraffic {
    hours: usize,
    seed: u64,
    model: STModel,
    values: Vec<f64>,
}

impl GeneratedTraffic {
    pub fn hours(&self) -> usize {
        self.hours
    }

    pub fn n_stations(&self) -> usize {
        self.model.n_stations
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model(&self) -> &STModel {
        &self.model
    }

    /// Hour-major matrix, `values()[t * n_stations + i]`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, hour: usize) -> &[f64] {
        let n = self.n_stations();
        &self.values[hour * n..(hour + 1) * n]
    }

    pub fn station_mean(&self, hour: usize) -> f64 {
        self.row(hour).iter().sum::<f64>() / self.n_stations() as f64
    }

    /// `hour,station_index,volume` rows with volumes multiplied by `scale`.
    pub fn to_csv(&self, scale: f64) -> String {
        let mut out = String::with_capacity(self.values.len() * 24 + 32);
        out.push_str("hour,station_index,volume\n");
        for t in 0..self.hours {
            for (i, v) in self.row(t).iter().enumerate() {
                let _ = writeln!(out, "{t},{i},{}", v * scale);
            }
        }
        out
    }

    /// The generated matrix as an [`HourlyDataset`] with synthetic station ids
    /// `GEN_<i>` laid out on a square grid of `spacing_m` starting at `origin`,
    /// volumes multiplied by `scale`.
    pub fn to_dataset(
        &self,
        epoch: chrono::NaiveDateTime,
        origin: GeoPoint,
        spacing_m: f64,
        scale: f64,
    ) -> Result<HourlyDataset, IngestError> {
        let n = self.n_stations();
        let side = (n as f64).sqrt().ceil() as usize;
        let stations: Vec<(String, f64, f64)> = (0..n)
            .map(|i| {
                let x = (i % side) as f64 * spacing_m;
                let y = (i / side) as f64 * spacing_m;
                let (lat, lon) = unproject(x, y, origin.lat, origin.lon);
                (format!("GEN_{i}"), lon, lat)
            })
            .collect();
        HourlyDataset::new(
            epoch,
            self.model.region_label.clone(),
            &stations,
            self.hours,
            self.values.iter().map(|v| Some(v * scale)).collect(),
        )
    }
}

/// Draws one lognormal value per (hour, station); see the module docs for the
/// stream layout.
pub fn generate(model: &STModel, hours: usize, seed: u64) -> Result<GeneratedTraffic, StGenError> {
    if hours == 0 {
        return Err(StGenError::NoHours);
    }
    model.check_profile(hours)?;
    let n = model.n_stations;
    let sigma = model.sigma;
    let mus: Vec<f64> = (0..hours)
        .map(|t| model.mu_at(t as f64))
        .collect::<Result<_, _>>()?;

    let mut values = vec![0.0; hours * n];
    values
        .par_chunks_mut(n)
        .zip(mus.par_iter())
        .enumerate()
        .for_each(|(t, (row, &mu))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            for cell in row.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *cell = (mu + sigma * z).exp();
            }
        });
    Ok(GeneratedTraffic { hours, seed, model: model.clone(), values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub nrmse_mean_profile: f64,
    pub dominant_frequencies: ComponentSet,
}

/// Compares the empirical station mean of each hour with `m(t)`:
/// `nrmse = RMS(mean_t − m(t)) / RMS(m(t))`, and extracts the dominant
/// frequencies of the empirical mean series.
pub fn validate(gen: &GeneratedTraffic) -> Result<ValidationReport, StGenError> {
    validate_with(gen, &SelectionOptions::default())
}

pub fn validate_with(gen: &GeneratedTraffic, options: &SelectionOptions) -> Result<ValidationReport, StGenError> {
    let empirical: Vec<f64> = (0..gen.hours).map(|t| gen.station_mean(t)).collect();
    let (mut err2, mut ref2) = (0.0, 0.0);
    for (t, e) in empirical.iter().enumerate() {
        let m = gen.model.mean_profile(t as f64);
        err2 += (e - m).powi(2);
        ref2 += m * m;
    }
    let nrmse = (err2 / ref2).sqrt();
    let spectrum = spectral::amplitude_spectrum(&empirical, true)?;
    let dominant = spectral::dominant_components(&spectrum, options)?;
    Ok(ValidationReport { nrmse_mean_profile: nrmse, dominant_frequencies: dominant })
}
