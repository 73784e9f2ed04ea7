//! Sinusoid superposition model `V(t) = a0 + Σ a_k sin(ω_k t + φ_k)`.
//!
//! Frequencies come from the spectral step and stay fixed, so fitting is an
//! ordinary linear least-squares problem on the basis
//! `{1, sin(ω_k t), cos(ω_k t)}`. Each `(s, c)` coefficient pair is folded
//! into canonical amplitude/phase form with `a = √(s² + c²)`,
//! `φ = atan2(c, s)`.
//!
//! R² follows the printed formula `Σ(ŷ − ȳ)² / Σ(y − ȳ)²` with `ȳ` the mean of
//! the observed data. The source calls the denominator "SSE"; it is the total
//! sum of squares. For a least-squares fit with intercept this equals the
//! familiar `1 − SSE/SST`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::ComponentSet;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} present points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("design matrix is rank deficient (duplicate or aliased frequencies)")]
    RankDeficient,
    #[error("invalid frequency {0}: frequencies must be finite, nonzero and distinct")]
    InvalidFrequency(f64),
    #[error("observed series is constant; R² is undefined")]
    ConstantSeries,
    #[error("length mismatch: {0} fitted vs {1} observed values")]
    LengthMismatch(usize, usize),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// `amplitude · sin(omega · t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidComponent {
    #[serde(rename = "omega_rad_per_hour")]
    pub omega: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl SinusoidComponent {
    /// Canonical component equal to `s·sin(ωt) + c·cos(ωt)`.
    pub fn from_sin_cos(omega: f64, s: f64, c: f64) -> Self {
        Self { omega, amplitude: s.hypot(c), phase: wrap_phase(c.atan2(s)) }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t + self.phase).sin()
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_phase(phase: f64) -> f64 {
    let mut p = phase.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    if p <= -PI {
        p += 2.0 * PI;
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct SinusoidModel {
    pub a0: f64,
    components: Vec<SinusoidComponent>,
}

#[derive(Deserialize)]
struct RawModel {
    a0: f64,
    components: Vec<SinusoidComponent>,
}

impl TryFrom<RawModel> for SinusoidModel {
    type Error = FitError;
    fn try_from(raw: RawModel) -> Result<Self, Self::Error> {
        SinusoidModel::new(raw.a0, raw.components)
    }
}

impl SinusoidModel {
    /// Builds a model in canonical form: negative amplitudes are folded into
    /// the phase, phases wrapped into `(−π, π]`, components sorted by frequency.
    pub fn new(a0: f64, components: Vec<SinusoidComponent>) -> Result<Self, FitError> {
        if !a0.is_finite() {
            return Err(FitError::InvalidModel(format!("a0 = {a0}")));
        }
        let mut comps = Vec::with_capacity(components.len());
        for c in components {
            if !(c.omega.is_finite() && c.omega > 0.0) {
                return Err(FitError::InvalidFrequency(c.omega));
            }
            if !(c.amplitude.is_finite() && c.phase.is_finite()) {
                return Err(FitError::InvalidModel(format!("non-finite component at ω = {}", c.omega)));
            }
            let (amplitude, phase) = if c.amplitude < 0.0 {
                (-c.amplitude, c.phase + PI)
            } else {
                (c.amplitude, c.phase)
            };
            comps.push(SinusoidComponent { omega: c.omega, amplitude, phase: wrap_phase(phase) });
        }
        comps.sort_by(|a, b| a.omega.total_cmp(&b.omega));
        if let Some(w) = comps.windows(2).find(|w| w[0].omega == w[1].omega) {
            return Err(FitError::InvalidFrequency(w[0].omega));
        }
        Ok(Self { a0, components: comps })
    }

    pub fn constant(a0: f64) -> Self {
        Self { a0, components: Vec::new() }
    }

    pub fn components(&self) -> &[SinusoidComponent] {
        &self.components
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.omega).collect()
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        self.a0 + self.components.iter().map(|c| c.value(t)).sum::<f64>()
    }

    pub fn sample(&self, hours: usize) -> Vec<f64> {
        (0..hours).map(|t| self.evaluate(t as f64)).collect()
    }

    /// Same model with every magnitude multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            a0: self.a0 * factor,
            components: self
                .components
                .iter()
                .map(|c| SinusoidComponent { amplitude: c.amplitude * factor, ..*c })
                .collect(),
        }
    }
}

/// Model JSON as written to disk, carrying the unit scale and region label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub a0: f64,
    pub components: Vec<SinusoidComponent>,
    /// Bytes per model traffic unit.
    pub scale: f64,
    pub region_label: String,
}

impl ModelDocument {
    pub fn new(model: &SinusoidModel, scale: f64, region_label: impl Into<String>) -> Self {
        Self {
            a0: model.a0,
            components: model.components.clone(),
            scale,
            region_label: region_label.into(),
        }
    }

    pub fn model(&self) -> Result<SinusoidModel, FitError> {
        SinusoidModel::new(self.a0, self.components.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: SinusoidModel,
    pub r_squared: f64,
    pub residual_rms: f64,
    pub n_points: usize,
}

/// Coefficient of determination `Σ(ŷ − ȳ)² / Σ(y − ȳ)²`, `ȳ` being the mean
/// of `original`.
pub fn r_squared(fitted: &[f64], original: &[f64]) -> Result<f64, FitError> {
    if fitted.len() != original.len() {
        return Err(FitError::LengthMismatch(fitted.len(), original.len()));
    }
    if original.len() < 2 {
        return Err(FitError::TooFewPoints { needed: 2, got: original.len() });
    }
    let mean = original.iter().sum::<f64>() / original.len() as f64;
    let total: f64 = original.iter().map(|y| (y - mean).powi(2)).sum();
    if total == 0.0 || original.iter().all(|&y| y == original[0]) {
        return Err(FitError::ConstantSeries);
    }
    let regression: f64 = fitted.iter().map(|f| (f - mean).powi(2)).sum();
    Ok(regression / total)
}

fn check_frequencies(frequencies: &[f64]) -> Result<(), FitError> {
    for (i, &w) in frequencies.iter().enumerate() {
        if !w.is_finite() || w == 0.0 || frequencies[..i].contains(&w) {
            return Err(FitError::InvalidFrequency(w));
        }
    }
    Ok(())
}

/// Least-squares fit of `a0 + Σ (s_k sin(ω_k t) + c_k cos(ω_k t))` to
/// `(t, y)` pairs.
pub fn fit_points(points: &[(f64, f64)], frequencies: &[f64]) -> Result<FitReport, FitError> {
    check_frequencies(frequencies)?;
    let cols = 1 + 2 * frequencies.len();
    if points.len() < cols {
        return Err(FitError::TooFewPoints { needed: cols, got: points.len() });
    }

    let design = DMatrix::from_fn(points.len(), cols, |i, j| {
        let t = points[i].0;
        match j {
            0 => 1.0,
            j if j % 2 == 1 => (frequencies[j / 2] * t).sin(),
            j => (frequencies[j / 2 - 1] * t).cos(),
        }
    });
    let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));

    // Householder QR; the SVD of the tall design matrix occasionally loses
    // several digits. R has the design's singular values, so the rank check
    // runs on that small square factor.
    let qr = design.clone().qr();
    let r = qr.r();
    let sv = r.singular_values();
    let (max_sv, min_sv) = (sv.max(), sv.min());
    if !(max_sv > 0.0) || min_sv <= max_sv * 1e-10 {
        return Err(FitError::RankDeficient);
    }
    let qty = qr.q().tr_mul(&y);
    let coef = r.solve_upper_triangular(&qty).ok_or(FitError::RankDeficient)?;

    let components = frequencies
        .iter()
        .enumerate()
        .map(|(k, &w)| {
            // Negative frequencies flip the sign of the sine term.
            let (s, c) = (coef[1 + 2 * k], coef[2 + 2 * k]);
            if w < 0.0 {
                SinusoidComponent::from_sin_cos(-w, -s, c)
            } else {
                SinusoidComponent::from_sin_cos(w, s, c)
            }
        })
        .collect();
    let model = SinusoidModel::new(coef[0], components)?;

    let fitted = &design * &coef;
    let residual_ss: f64 = fitted.iter().zip(y.iter()).map(|(f, y)| (f - y).powi(2)).sum();
    let r2 = match r_squared(fitted.as_slice(), y.as_slice()) {
        Ok(r2) => r2,
        // The intercept reproduces a constant series exactly.
        Err(FitError::ConstantSeries) => 1.0,
        Err(e) => return Err(e),
    };
    Ok(FitReport {
        model,
        r_squared: r2,
        residual_rms: (residual_ss / points.len() as f64).sqrt(),
        n_points: points.len(),
    })
}

/// Fits an hourly series; hour `t` is the index, absent hours are skipped.
pub fn fit(series: &[Option<f64>], frequencies: &[f64]) -> Result<FitReport, FitError> {
    let points: Vec<(f64, f64)> = series
        .iter()
        .enumerate()
        .filter_map(|(t, v)| v.map(|v| (t as f64, v)))
        .collect();
    fit_points(&points, frequencies)
}

pub fn fit_components(series: &[Option<f64>], components: &ComponentSet) -> Result<FitReport, FitError> {
    fit(series, &components.frequencies())
}

/// Adds candidates in decreasing spectrum amplitude and keeps going while each
/// addition raises R² by at least `min_gain`. With `min_gain == 0` every
/// candidate is used.
pub fn select_order(
    series: &[Option<f64>],
    candidates: &ComponentSet,
    min_gain: f64,
) -> Result<FitReport, FitError> {
    let ranked: Vec<f64> = candidates.by_amplitude().iter().map(|c| c.omega).collect();
    let mut best = fit(series, &ranked[..1])?;
    for n in 2..=ranked.len() {
        let next = fit(series, &ranked[..n])?;
        if min_gain > 0.0 && next.r_squared - best.r_squared < min_gain {
            break;
        }
        best = next;
    }
    Ok(best)
}
