//! Amplitude spectra of hourly series and selection of the dominant daily
//! harmonics.
//!
//! Bin amplitudes are scaled so that a sinusoid of amplitude `A` whose period
//! divides the series length shows up as exactly `A` in its bin:
//! `2|X_k|/T` for `k < T/2` and `|X_k|/T` at the Nyquist bin.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("series too short for a spectrum: {0} values, need at least 4")]
    TooShort(usize),
    #[error("series value at index {0} is not finite")]
    NonFinite(usize),
    #[error("no periodic content")]
    NoPeriodicContent,
    #[error("series has no present values to interpolate from")]
    AllAbsent,
    #[error("invalid selection options: {0}")]
    InvalidOptions(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBin {
    /// Radians per hour.
    pub frequency: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeSpectrum {
    series_len: usize,
    bins: Vec<SpectrumBin>,
}

impl AmplitudeSpectrum {
    pub fn series_len(&self) -> usize {
        self.series_len
    }

    /// Bins `k = 1 ..= floor(T/2)`; `bins()[k - 1]` is bin `k`.
    pub fn bins(&self) -> &[SpectrumBin] {
        &self.bins
    }

    pub fn bin(&self, k: usize) -> Option<&SpectrumBin> {
        k.checked_sub(1).and_then(|i| self.bins.get(i))
    }

    /// Two-column CSV: `frequency_rad_per_hour,amplitude`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frequency_rad_per_hour,amplitude\n");
        for b in &self.bins {
            let _ = writeln!(out, "{},{}", b.frequency, b.amplitude);
        }
        out
    }
}

/// Frequency of bin `k` for a series of length `len`.
pub fn bin_frequency(k: usize, len: usize) -> f64 {
    2.0 * PI * k as f64 / len as f64
}

/// Frequency of the `h`-th harmonic of the 24 hour cycle, `h·π/12`.
/// Divisors of 12 are computed as `π/(12/h)` so that `π/6`, `π/4`, ... come out
/// bit-identical to their usual spelling.
pub fn daily_harmonic(h: usize) -> f64 {
    if h > 0 && 12 % h == 0 {
        PI / (12 / h) as f64
    } else {
        h as f64 * PI / 12.0
    }
}

pub fn amplitude_spectrum(series: &[f64], detrend: bool) -> Result<AmplitudeSpectrum, SpectralError> {
    let len = series.len();
    if len < 4 {
        return Err(SpectralError::TooShort(len));
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(SpectralError::NonFinite(i));
    }
    let half = len / 2;

    // Every non-DC bin of a constant series is exactly zero.
    if series.iter().all(|&v| v == series[0]) {
        let bins = (1..=half)
            .map(|k| SpectrumBin { frequency: bin_frequency(k, len), amplitude: 0.0 })
            .collect();
        return Ok(AmplitudeSpectrum { series_len: len, bins });
    }

    let offset = if detrend { series.iter().sum::<f64>() / len as f64 } else { 0.0 };
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v - offset, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);

    let bins = (1..=half)
        .map(|k| {
            let scale = if 2 * k == len { 1.0 } else { 2.0 };
            SpectrumBin {
                frequency: bin_frequency(k, len),
                amplitude: scale * buf[k].norm() / len as f64,
            }
        })
        .collect();
    Ok(AmplitudeSpectrum { series_len: len, bins })
}

/// Linear interpolation over absent hours; leading and trailing gaps take the
/// nearest present value.
pub fn fill_gaps(series: &[Option<f64>]) -> Result<Vec<f64>, SpectralError> {
    let present: Vec<(usize, f64)> = series
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let (first, last) = match (present.first(), present.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(SpectralError::AllAbsent),
    };
    let mut out = Vec::with_capacity(series.len());
    let mut next = 0;
    for i in 0..series.len() {
        while next < present.len() && present[next].0 < i {
            next += 1;
        }
        let value = if i <= first.0 {
            first.1
        } else if i >= last.0 {
            last.1
        } else if present[next].0 == i {
            present[next].1
        } else {
            let (i0, v0) = present[next - 1];
            let (i1, v1) = present[next];
            v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
        };
        out.push(value);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Radians per hour.
    pub omega: f64,
    /// Spectrum amplitude at `omega`.
    pub amplitude: f64,
}

/// Nonempty set of distinct frequencies in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Component>", into = "Vec<Component>")]
pub struct ComponentSet(Vec<Component>);

impl ComponentSet {
    pub fn new(mut components: Vec<Component>) -> Result<Self, SpectralError> {
        if components.is_empty() {
            return Err(SpectralError::InvalidOptions("component set is empty".into()));
        }
        if components.iter().any(|c| !c.omega.is_finite() || c.omega <= 0.0) {
            return Err(SpectralError::InvalidOptions("frequencies must be positive".into()));
        }
        components.sort_by(|a, b| a.omega.total_cmp(&b.omega));
        if components.windows(2).any(|w| w[0].omega == w[1].omega) {
            return Err(SpectralError::InvalidOptions("duplicate frequency".into()));
        }
        Ok(Self(components))
    }

    /// Components with unit amplitude, for explicitly supplied frequencies.
    pub fn from_frequencies(frequencies: &[f64]) -> Result<Self, SpectralError> {
        Self::new(frequencies.iter().map(|&omega| Component { omega, amplitude: 1.0 }).collect())
    }

    pub fn components(&self) -> &[Component] {
        &self.0
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.0.iter().map(|c| c.omega).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Components ordered by amplitude, largest first; ties keep the lower
    /// frequency first.
    pub fn by_amplitude(&self) -> Vec<Component> {
        let mut v = self.0.clone();
        v.sort_by(|a, b| b.amplitude.total_cmp(&a.amplitude).then(a.omega.total_cmp(&b.omega)));
        v
    }
}

impl TryFrom<Vec<Component>> for ComponentSet {
    type Error = SpectralError;
    fn try_from(v: Vec<Component>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ComponentSet> for Vec<Component> {
    fn from(set: ComponentSet) -> Self {
        set.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// Harmonics `h·2π/24`, `h = 1 ..= max_harmonic`, each matched to its nearest bin.
    DailyHarmonics { max_harmonic: usize },
    /// Every local maximum of the spectrum.
    FullSpectrum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub max_components: usize,
    pub rel_threshold: f64,
    pub candidates: CandidateMode,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            max_components: 3,
            rel_threshold: 0.15,
            candidates: CandidateMode::DailyHarmonics { max_harmonic: 8 },
        }
    }
}

fn candidates(spec: &AmplitudeSpectrum, mode: CandidateMode) -> Vec<Component> {
    let len = spec.series_len;
    match mode {
        CandidateMode::DailyHarmonics { max_harmonic } => {
            let mut used = Vec::new();
            let mut out = Vec::new();
            for h in 1..=max_harmonic {
                let k = ((h * len) as f64 / 24.0).round() as usize;
                if k == 0 || used.contains(&k) {
                    continue;
                }
                if let Some(bin) = spec.bin(k) {
                    used.push(k);
                    out.push(Component { omega: daily_harmonic(h), amplitude: bin.amplitude });
                }
            }
            out
        }
        CandidateMode::FullSpectrum => {
            let b = &spec.bins;
            (0..b.len())
                .filter(|&i| {
                    let left = i == 0 || b[i].amplitude >= b[i - 1].amplitude;
                    let right = i + 1 == b.len() || b[i].amplitude >= b[i + 1].amplitude;
                    left && right
                })
                .map(|i| Component { omega: b[i].frequency, amplitude: b[i].amplitude })
                .collect()
        }
    }
}

/// Picks the strongest periodic components: candidates whose amplitude is at
/// least `rel_threshold` times the largest candidate amplitude, the largest
/// first (lower frequency on ties), at most `max_components` of them. The
/// result is returned in ascending frequency order.
pub fn dominant_components(
    spec: &AmplitudeSpectrum,
    options: &SelectionOptions,
) -> Result<ComponentSet, SpectralError> {
    if options.max_components == 0 {
        return Err(SpectralError::InvalidOptions("max_components must be at least 1".into()));
    }
    if !(options.rel_threshold > 0.0 && options.rel_threshold <= 1.0) {
        return Err(SpectralError::InvalidOptions(format!(
            "rel_threshold must be in (0, 1], got {}",
            options.rel_threshold
        )));
    }
    let mut cands = candidates(spec, options.candidates);
    let peak = cands.iter().map(|c| c.amplitude).fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(SpectralError::NoPeriodicContent);
    }
    cands.retain(|c| c.amplitude >= options.rel_threshold * peak);
    cands.sort_by(|a, b| b.amplitude.total_cmp(&a.amplitude).then(a.omega.total_cmp(&b.omega)));
    cands.truncate(options.max_components);
    ComponentSet::new(cands)
}
