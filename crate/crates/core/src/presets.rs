//! Published region models: sinusoid parameters and empirical lognormal σ for
//! the park, campus and CBD regions, plus the whole-area model.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::temporal::{SinusoidComponent, SinusoidModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionPreset {
    Park,
    Campus,
    Cbd,
}

impl RegionPreset {
    pub const ALL: [RegionPreset; 3] = [RegionPreset::Park, RegionPreset::Campus, RegionPreset::Cbd];

    pub fn label(self) -> &'static str {
        match self {
            RegionPreset::Park => "park",
            RegionPreset::Campus => "campus",
            RegionPreset::Cbd => "cbd",
        }
    }

    /// Empirical spread of log traffic across stations.
    pub fn sigma(self) -> f64 {
        match self {
            RegionPreset::Park => 1.3,
            RegionPreset::Campus => 3.6,
            RegionPreset::Cbd => 2.8,
        }
    }

    /// Mean per-station traffic model of the region.
    pub fn temporal_model(self) -> SinusoidModel {
        match self {
            RegionPreset::Park => model(351.06, &[(PI / 12.0, 222.7, 3.11), (PI / 6.0, 96.24, 2.36)]),
            RegionPreset::Campus => model(
                323.04,
                &[(PI / 12.0, 148.3, 2.98), (PI / 6.0, 109.4, 2.15), (PI / 4.0, 38.43, 1.0)],
            ),
            RegionPreset::Cbd => model(75.72, &[(PI / 12.0, 47.52, -2.56), (PI / 6.0, 16.71, 1.45)]),
        }
    }
}

impl fmt::Display for RegionPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RegionPreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "park" => Ok(RegionPreset::Park),
            "campus" => Ok(RegionPreset::Campus),
            "cbd" => Ok(RegionPreset::Cbd),
            other => Err(format!("unknown region preset '{other}' (expected park, campus or cbd)")),
        }
    }
}

/// Total traffic of the whole study area.
pub fn whole_area_model() -> SinusoidModel {
    model(173.29, &[(PI / 12.0, 89.83, 3.08), (PI / 6.0, 52.6, 2.08), (PI / 4.0, 16.68, 1.13)])
}

fn model(a0: f64, parts: &[(f64, f64, f64)]) -> SinusoidModel {
    SinusoidModel::new(
        a0,
        parts
            .iter()
            .map(|&(omega, amplitude, phase)| SinusoidComponent { omega, amplitude, phase })
            .collect(),
    )
    .expect("preset parameters are canonical")
}
