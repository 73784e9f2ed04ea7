//! Invariants checked against independent brute-force oracles.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use celltide::ingest::{
    aggregate, bin_hourly, datetime_to_minutes, filter_region, project, unproject, Aggregation, GeoPoint,
    HourlyDataset, RegionBounds, Station, TrafficRecord,
};
use celltide::spatial::{detect_hotspots, fit_lognormal_values, haversine_m};
use celltide::spectral::{amplitude_spectrum, dominant_components, SelectionOptions};
use celltide::stgen::{moment_match, mu_of_t};
use celltide::temporal::{fit, r_squared, SinusoidComponent, SinusoidModel};
use chrono::{NaiveDate, NaiveDateTime};
use proptest::prelude::*;

fn epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2012, 9, 3).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Direct O(T²) DFT magnitude of bin `k`.
fn naive_dft_abs(x: &[f64], k: usize) -> f64 {
    let n = x.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (t, v) in x.iter().enumerate() {
        let angle = -2.0 * PI * (k as f64) * (t as f64) / n;
        re += v * angle.cos();
        im += v * angle.sin();
    }
    re.hypot(im)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parseval_with_amplitude_scaling(x in prop::collection::vec(-100.0f64..100.0, 4..300)) {
        let spec = amplitude_spectrum(&x, true).unwrap();
        let len = x.len();
        let mean = x.iter().sum::<f64>() / len as f64;
        let direct: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        // The Nyquist bin is scaled by 1/T instead of 2/T; restate it as √2·A.
        let restated: f64 = spec
            .bins()
            .iter()
            .enumerate()
            .map(|(i, b)| if 2 * (i + 1) == len { 2.0 * b.amplitude.powi(2) } else { b.amplitude.powi(2) })
            .sum();
        prop_assert!(rel_close(direct, len as f64 / 2.0 * restated, 1e-6), "{direct} vs {}", len as f64 / 2.0 * restated);
    }

    #[test]
    fn spectrum_matches_direct_dft(x in prop::collection::vec(-10.0f64..10.0, 4..120)) {
        let spec = amplitude_spectrum(&x, false).unwrap();
        let len = x.len();
        for (i, b) in spec.bins().iter().enumerate() {
            let k = i + 1;
            let scale = if 2 * k == len { 1.0 } else { 2.0 };
            let expected = scale * naive_dft_abs(&x, k) / len as f64;
            prop_assert!((b.amplitude - expected).abs() <= 1e-9 * (1.0 + expected));
        }
    }

    #[test]
    fn spectrum_linearity_and_shift(
        x in prop::collection::vec(-10.0f64..10.0, 8..200),
        alpha in 0.1f64..50.0,
        shift in 0usize..200,
    ) {
        let base = amplitude_spectrum(&x, true).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        let s = amplitude_spectrum(&scaled, true).unwrap();
        let mut rotated = x.clone();
        rotated.rotate_left(shift % x.len());
        let r = amplitude_spectrum(&rotated, true).unwrap();
        let peak = base.bins().iter().map(|b| b.amplitude).fold(0.0, f64::max);
        for ((b, sb), rb) in base.bins().iter().zip(s.bins()).zip(r.bins()) {
            prop_assert!((sb.amplitude - alpha * b.amplitude).abs() <= 1e-9 * alpha * peak.max(1e-12));
            prop_assert!((rb.amplitude - b.amplitude).abs() <= 1e-9 * peak.max(1e-12));
        }
    }

    #[test]
    fn dominant_components_scale_invariant(
        amps in prop::collection::vec(1.0f64..100.0, 3),
        phases in prop::collection::vec(-3.0f64..3.0, 3),
        alpha in 0.01f64..1000.0,
    ) {
        let x: Vec<f64> = (0..240)
            .map(|t| {
                (0..3).map(|k| amps[k] * ((k + 1) as f64 * PI / 12.0 * t as f64 + phases[k]).sin()).sum::<f64>()
            })
            .collect();
        let opts = SelectionOptions::default();
        let a = dominant_components(&amplitude_spectrum(&x, true).unwrap(), &opts).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| v * alpha).collect();
        let b = dominant_components(&amplitude_spectrum(&scaled, true).unwrap(), &opts).unwrap();
        prop_assert_eq!(a.frequencies(), b.frequencies());
    }

    #[test]
    fn canonical_form_reproduces_sin_cos(s in -100.0f64..100.0, c in -100.0f64..100.0, w in 0.01f64..3.0, t in -50.0f64..50.0) {
        let comp = SinusoidComponent::from_sin_cos(w, s, c);
        prop_assert!(comp.amplitude >= 0.0 && comp.phase > -PI && comp.phase <= PI);
        let direct = s * (w * t).sin() + c * (w * t).cos();
        prop_assert!((comp.value(t) - direct).abs() <= 1e-12 * (1.0 + s.abs() + c.abs()));
    }

    #[test]
    fn fit_round_trip_on_dft_grid(
        a0 in -50.0f64..500.0,
        amps in prop::collection::vec(0.5f64..200.0, 3),
        phases in prop::collection::vec(-3.1f64..3.1, 3),
        days in 3usize..10,
    ) {
        let truth = SinusoidModel::new(
            a0,
            (0..3).map(|k| SinusoidComponent { omega: (k + 1) as f64 * PI / 12.0, amplitude: amps[k], phase: phases[k] }).collect(),
        ).unwrap();
        let series: Vec<Option<f64>> = truth.sample(24 * days).into_iter().map(Some).collect();
        let report = fit(&series, &truth.frequencies()).unwrap();
        prop_assert!(rel_close(report.model.a0, a0, 1e-6) || (report.model.a0 - a0).abs() < 1e-9);
        for (got, want) in report.model.components().iter().zip(truth.components()) {
            prop_assert!(rel_close(got.amplitude, want.amplitude, 1e-6));
            prop_assert!((got.phase - want.phase).abs() < 1e-6);
        }
        prop_assert!((report.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_scale_equivariance(
        y in prop::collection::vec(0.0f64..100.0, 60..200),
        alpha in 0.01f64..100.0,
    ) {
        let freqs = [PI / 12.0, PI / 6.0];
        let series: Vec<Option<f64>> = y.iter().copied().map(Some).collect();
        let scaled: Vec<Option<f64>> = y.iter().map(|v| Some(v * alpha)).collect();
        let a = fit(&series, &freqs).unwrap();
        let b = fit(&scaled, &freqs).unwrap();
        prop_assert!((b.model.a0 - alpha * a.model.a0).abs() <= 1e-9 * alpha * (1.0 + a.model.a0.abs()));
        for (ca, cb) in a.model.components().iter().zip(b.model.components()) {
            prop_assert!((cb.amplitude - alpha * ca.amplitude).abs() <= 1e-9 * alpha * (1.0 + ca.amplitude));
            if ca.amplitude > 1e-6 {
                let d = (cb.phase - ca.phase).rem_euclid(2.0 * PI);
                prop_assert!(d.min(2.0 * PI - d) < 1e-8);
            }
        }
        prop_assert!((a.r_squared - b.r_squared).abs() < 1e-9);
    }

    #[test]
    fn fit_time_shift_covariance(
        y in prop::collection::vec(0.0f64..100.0, 80..200),
        delta in 1usize..40,
    ) {
        let freqs = [PI / 12.0, PI / 6.0, PI / 4.0];
        let n = y.len() - delta;
        // y_shifted(t) = y(t + Δ)
        let original: Vec<Option<f64>> = (0..n).map(|t| Some(y[t + delta])).collect();
        let a = fit(&original, &freqs).unwrap();
        let points: Vec<(f64, f64)> = (0..n).map(|t| ((t + delta) as f64, y[t + delta])).collect();
        let b = celltide::temporal::fit_points(&points, &freqs).unwrap();
        // Fitting the same values on the original time axis: phases differ by ωΔ.
        prop_assert!((a.model.a0 - b.model.a0).abs() < 1e-8 * (1.0 + a.model.a0.abs()));
        for (ca, cb) in a.model.components().iter().zip(b.model.components()) {
            prop_assert!((ca.amplitude - cb.amplitude).abs() < 1e-8 * (1.0 + ca.amplitude));
            if ca.amplitude > 1e-6 {
                let d = (ca.phase - (cb.phase + ca.omega * delta as f64)).rem_euclid(2.0 * PI);
                prop_assert!(d.min(2.0 * PI - d) < 1e-7, "phase mismatch {d}");
            }
        }
        prop_assert!((a.r_squared - b.r_squared).abs() < 1e-9);
    }

    #[test]
    fn r_squared_bounded_and_monotone(y in prop::collection::vec(0.0f64..100.0, 60..200)) {
        let series: Vec<Option<f64>> = y.iter().copied().map(Some).collect();
        let all = [PI / 12.0, PI / 6.0, PI / 4.0, PI / 3.0];
        let mut previous = 0.0;
        for n in 1..=all.len() {
            let r2 = fit(&series, &all[..n]).unwrap().r_squared;
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&r2));
            prop_assert!(r2 >= previous - 1e-10, "R² fell from {previous} to {r2}");
            previous = r2;
        }
    }

    #[test]
    fn r_squared_definition(pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..50)) {
        let (fitted, original): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(original.iter().any(|&v| v != original[0]));
        let mean = original.iter().sum::<f64>() / original.len() as f64;
        let num: f64 = fitted.iter().map(|f| (f - mean) * (f - mean)).sum();
        let den: f64 = original.iter().map(|y| (y - mean) * (y - mean)).sum();
        prop_assert!(rel_close(r_squared(&fitted, &original).unwrap(), num / den, 1e-12));
    }
}

fn random_records(raw: &[(u8, u16, u32)]) -> Vec<TrafficRecord> {
    let base = datetime_to_minutes(epoch());
    raw.iter()
        .map(|&(station, minute, volume)| TrafficRecord {
            timestamp: base + minute as i64,
            station_id: format!("BS_{}", station % 6),
            lon: 118.70 + (station % 6) as f64 * 0.01,
            lat: 32.00 + (station % 6) as f64 * 0.005,
            volume: volume as u64,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bin_hourly_matches_accumulator_oracle(raw in prop::collection::vec((0u8..12, 0u16..1440, 0u32..1_000_000), 0..300)) {
        let records = random_records(&raw);
        let ds = bin_hourly(&records, epoch()).unwrap();

        let mut order: Vec<String> = Vec::new();
        let mut cells: HashMap<(usize, String), f64> = HashMap::new();
        for r in &records {
            if !order.contains(&r.station_id) {
                order.push(r.station_id.clone());
            }
            let hour = ((r.timestamp - datetime_to_minutes(epoch())) / 60) as usize;
            *cells.entry((hour, r.station_id.clone())).or_default() += r.volume as f64;
        }
        let ids: Vec<String> = ds.stations().iter().map(|s| s.station_id.clone()).collect();
        prop_assert_eq!(&ids, &order);
        for t in 0..ds.hours() {
            for (s, id) in ids.iter().enumerate() {
                prop_assert_eq!(ds.get(t, s), cells.get(&(t, id.clone())).copied());
            }
        }

        let mass: f64 = ds.volumes().iter().flatten().sum();
        let records_mass: f64 = records.iter().map(|r| r.volume as f64).sum();
        prop_assert_eq!(mass, records_mass);
    }

    #[test]
    fn filter_region_matches_membership_oracle(
        raw in prop::collection::vec((0u8..12, 0u16..600, 1u32..1000), 1..100),
        lon in (118.69f64..118.76, 0.0f64..0.06),
        lat in (31.99f64..32.03, 0.0f64..0.03),
    ) {
        let ds = bin_hourly(&random_records(&raw), epoch()).unwrap();
        let bounds = RegionBounds::new(lon.0, lon.0 + lon.1, lat.0, lat.0 + lat.1).unwrap();
        let filtered = filter_region(&ds, &bounds, "r");
        let expected: Vec<&str> = ds
            .stations()
            .iter()
            .filter(|s| s.lon >= bounds.min_lon && s.lon <= bounds.max_lon && s.lat >= bounds.min_lat && s.lat <= bounds.max_lat)
            .map(|s| s.station_id.as_str())
            .collect();
        let got: Vec<&str> = filtered.stations().iter().map(|s| s.station_id.as_str()).collect();
        prop_assert_eq!(&got, &expected);
        prop_assert_eq!(filtered.hours(), ds.hours());
        prop_assert_eq!(&filter_region(&filtered, &bounds, "r"), &filtered);

        // Binning only the retained stations' records gives the same matrix.
        let kept: BTreeSet<&str> = expected.iter().copied().collect();
        let subset: Vec<TrafficRecord> = random_records(&raw).into_iter().filter(|r| kept.contains(r.station_id.as_str())).collect();
        if !subset.is_empty() {
            let direct = bin_hourly(&subset, epoch()).unwrap();
            for t in 0..direct.hours() {
                for s in 0..direct.n_stations() {
                    let id = &direct.stations()[s].station_id;
                    let j = filtered.stations().iter().position(|x| &x.station_id == id).unwrap();
                    prop_assert_eq!(direct.get(t, s), filtered.get(t, j));
                }
            }
        }
    }

    #[test]
    fn aggregate_matches_naive_loop(
        cells in prop::collection::vec(prop::option::weighted(0.7, 0.0f64..1e6), 1..200),
        n_stations in 1usize..6,
    ) {
        let hours = cells.len() / n_stations;
        prop_assume!(hours > 0);
        let volumes = cells[..hours * n_stations].to_vec();
        let stations: Vec<(String, f64, f64)> = (0..n_stations).map(|i| (format!("S{i}"), 118.7, 32.0 + i as f64 * 0.001)).collect();
        let ds = HourlyDataset::new(epoch(), "r", &stations, hours, volumes.clone()).unwrap();
        let total = aggregate(&ds, Aggregation::Total).unwrap();
        let mean = aggregate(&ds, Aggregation::Mean).unwrap();
        for t in 0..hours {
            let mut sum = 0.0;
            let mut count = 0;
            for s in 0..n_stations {
                if let Some(v) = volumes[t * n_stations + s] {
                    sum += v;
                    count += 1;
                }
            }
            if count == 0 {
                prop_assert_eq!(total[t], None);
                prop_assert_eq!(mean[t], None);
            } else {
                prop_assert_eq!(total[t], Some(sum));
                prop_assert!(rel_close(mean[t].unwrap(), sum / count as f64, 1e-15));
                prop_assert!(rel_close(mean[t].unwrap() * count as f64, total[t].unwrap(), 1e-12) || sum == 0.0);
            }
        }
    }

    #[test]
    fn projection_inverse_consistent(
        ref_lat in -60.0f64..60.0,
        ref_lon in -170.0f64..170.0,
        dlat in -0.05f64..0.05,
        dlon in -0.05f64..0.05,
    ) {
        let (lat, lon) = (ref_lat + dlat, ref_lon + dlon);
        let (x, y) = project(lat, lon, ref_lat, ref_lon);
        let (lat2, lon2) = unproject(x, y, ref_lat, ref_lon);
        let (x2, y2) = project(lat2, lon2, ref_lat, ref_lon);
        prop_assert!((x - x2).abs() < 1e-9 && (y - y2).abs() < 1e-9);
        let y_mirror = project(2.0 * ref_lat - lat, lon, ref_lat, ref_lon).1;
        prop_assert!((y + y_mirror).abs() < 1e-9);
    }

    #[test]
    fn lognormal_fit_matches_two_pass_oracle(values in prop::collection::vec(1e-3f64..1e6, 2..300), alpha in 1e-3f64..1e3) {
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        let n = logs.len() as f64;
        let mu = logs.iter().sum::<f64>() / n;
        let sigma = (logs.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / n).sqrt();
        let p = fit_lognormal_values(&values).unwrap();
        prop_assert!((p.mu - mu).abs() <= 1e-12 * (1.0 + mu.abs()));
        prop_assert!((p.sigma - sigma).abs() <= 1e-12 * (1.0 + sigma));

        let scaled: Vec<f64> = values.iter().map(|v| v * alpha).collect();
        let q = fit_lognormal_values(&scaled).unwrap();
        prop_assert!((q.mu - (p.mu + alpha.ln())).abs() <= 1e-12 * (1.0 + q.mu.abs()));
        prop_assert!((q.sigma - p.sigma).abs() <= 1e-12 * (1.0 + p.sigma));
    }

    #[test]
    fn moment_identities(m in 0.01f64..100.0, v in 0.01f64..100.0, sigma in 0.01f64..4.0) {
        let p = moment_match(m, v).unwrap();
        let mean = (p.mu + p.sigma * p.sigma / 2.0).exp();
        let var = (p.sigma * p.sigma).exp_m1() * (2.0 * p.mu + p.sigma * p.sigma).exp();
        prop_assert!(rel_close(mean, m, 1e-10));
        prop_assert!(rel_close(var, v, 1e-10));

        let mu = mu_of_t(m, sigma).unwrap();
        prop_assert!(rel_close((mu + sigma * sigma / 2.0).exp(), m, 1e-12));
    }
}

/// Connected components by repeated relaxation over the full distance matrix.
fn closure_oracle(stations: &[Station], radius: f64) -> BTreeSet<BTreeSet<String>> {
    let n = stations.len();
    let mut comp: Vec<usize> = (0..n).collect();
    let adjacent = |i: usize, j: usize| {
        haversine_m(stations[i].lat, stations[i].lon, stations[j].lat, stations[j].lon) < radius
    };
    loop {
        let mut changed = false;
        for i in 0..n {
            for j in 0..n {
                if i != j && adjacent(i, j) && comp[j] < comp[i] {
                    comp[i] = comp[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: HashMap<usize, BTreeSet<String>> = HashMap::new();
    for (i, c) in comp.iter().enumerate() {
        groups.entry(*c).or_default().insert(stations[i].station_id.clone());
    }
    groups.into_values().collect()
}

fn as_sets(clusters: &[Vec<String>]) -> BTreeSet<BTreeSet<String>> {
    clusters.iter().map(|c| c.iter().cloned().collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn hotspots_permutation_invariant_and_match_oracle(
        coords in prop::collection::vec((0.0f64..1500.0, 0.0f64..1500.0), 1..200),
        seed in any::<u64>(),
    ) {
        let reference = GeoPoint { lon: 118.75, lat: 32.05 };
        let stations: Vec<Station> = coords
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let (lat, lon) = unproject(x, y, reference.lat, reference.lon);
                Station::new(format!("S{i}"), lon, lat, reference)
            })
            .collect();
        let p = detect_hotspots(&stations, 150.0).unwrap();
        prop_assert_eq!(as_sets(&p.clusters), closure_oracle(&stations, 150.0));
        let hot: BTreeSet<String> = p.clusters.iter().filter(|c| c.len() >= 2).flatten().cloned().collect();
        prop_assert_eq!(&p.hotspot_ids, &hot);

        let mut shuffled = stations.clone();
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let q = detect_hotspots(&shuffled, 150.0).unwrap();
        prop_assert_eq!(as_sets(&q.clusters), as_sets(&p.clusters));
    }
}
