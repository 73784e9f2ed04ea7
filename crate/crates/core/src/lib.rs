//! Spatial-temporal traffic modeling for cellular base stations.
//!
//! * [`ingest`]: parse traffic logs, bin them hourly, slice by region.
//! * [`spectral`]: amplitude spectra and dominant daily harmonics.
//! * [`temporal`]: sinusoid superposition fits and R².
//! * [`spatial`]: lognormal fits, hotspot clustering, histogram comparison.
//! * [`stgen`]: lognormal per-station traffic synthesis driven by a temporal model.
//! * [`cli`]: the file-driven commands behind the `celltide` binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod ingest;
pub mod presets;
pub mod spatial;
pub mod spectral;
pub mod stgen;
pub mod temporal;
