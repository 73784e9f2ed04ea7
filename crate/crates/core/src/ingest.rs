//! Traffic log ingestion.
//!
//! Raw logs are delimiter-separated rows of `(time, station, lon, lat, bytes)`.
//! They are binned into an hourly station-by-hour matrix where a cell with no
//! records is *absent* rather than zero, so that means and lognormal fits are
//! taken over reporting stations only.

use std::collections::HashMap;
use std::io::{BufRead, Cursor, Read};

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used by both the plane projection and haversine distances.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Default timestamp layout, e.g. `2012/9/3 0:05`.
pub const DEFAULT_TIMESTAMP_FORMAT: &str = "%Y/%m/%d %H:%M";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input has no header row")]
    MissingHeader,
    #[error("column '{0}' not found in header")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: negative traffic volume {value}")]
    NegativeVolume { line: u64, value: i64 },
    #[error("record for station '{station}' at {timestamp} precedes the dataset epoch")]
    BeforeEpoch { station: String, timestamp: NaiveDateTime },
    #[error("dataset has no stations")]
    NoStations,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One raw log row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficRecord {
    /// Minutes since 1970-01-01T00:00 (naive local time of the export).
    pub timestamp: i64,
    pub station_id: String,
    pub lon: f64,
    pub lat: f64,
    /// Bytes.
    pub volume: u64,
}

impl TrafficRecord {
    pub fn datetime(&self) -> NaiveDateTime {
        minutes_to_datetime(self.timestamp)
    }
}

fn unix_epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(1970, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid constant date")
}

pub fn datetime_to_minutes(dt: NaiveDateTime) -> i64 {
    (dt - unix_epoch()).num_minutes()
}

pub fn minutes_to_datetime(minutes: i64) -> NaiveDateTime {
    unix_epoch() + chrono::Duration::minutes(minutes)
}

/// Column mapping for [`parse_records`]. Header names are matched
/// case-insensitively after trimming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub timestamp: String,
    pub station_id: String,
    pub lon: String,
    pub lat: String,
    pub volume: String,
    /// chrono `strftime`-style pattern.
    pub timestamp_format: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            timestamp: "time".into(),
            station_id: "bs_number".into(),
            lon: "longitude".into(),
            lat: "latitude".into(),
            volume: "traffic_volume".into(),
            timestamp_format: DEFAULT_TIMESTAMP_FORMAT.into(),
        }
    }
}

fn normalize_header(name: &str) -> String {
    name.trim()
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c.is_whitespace() || c == '-' { '_' } else { c })
        .collect()
}

struct ColumnIndex {
    timestamp: usize,
    station_id: usize,
    lon: usize,
    lat: usize,
    volume: usize,
}

impl ColumnIndex {
    fn resolve(header: &csv::StringRecord, schema: &ColumnSchema) -> Result<Self, IngestError> {
        let names: Vec<String> = header.iter().map(normalize_header).collect();
        let find = |wanted: &str| {
            let key = normalize_header(wanted);
            names
                .iter()
                .position(|n| *n == key)
                .ok_or_else(|| IngestError::MissingColumn(wanted.to_string()))
        };
        Ok(Self {
            timestamp: find(&schema.timestamp)?,
            station_id: find(&schema.station_id)?,
            lon: find(&schema.lon)?,
            lat: find(&schema.lat)?,
            volume: find(&schema.volume)?,
        })
    }
}

/// Parses a delimited traffic log. The delimiter (tab or comma) is detected
/// from the header row.
pub fn parse_records<R: Read>(input: R, schema: &ColumnSchema) -> Result<Vec<TrafficRecord>, IngestError> {
    let mut reader = std::io::BufReader::new(input);
    let mut header_line = String::new();
    loop {
        header_line.clear();
        if reader.read_line(&mut header_line)? == 0 {
            return Err(IngestError::MissingHeader);
        }
        if !header_line.trim().is_empty() {
            break;
        }
    }
    let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };

    let mut csv_reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(Cursor::new(header_line.into_bytes()).chain(reader));
    let header = csv_reader.headers()?.clone();
    let columns = ColumnIndex::resolve(&header, schema)?;

    let mut records = Vec::new();
    for row in csv_reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.iter().all(|f| f.is_empty()) {
            continue;
        }
        if row.len() != header.len() {
            return Err(IngestError::Malformed {
                line,
                message: format!("expected {} columns, found {}", header.len(), row.len()),
            });
        }
        records.push(parse_row(&row, &columns, schema, line)?);
    }
    Ok(records)
}

fn parse_row(
    row: &csv::StringRecord,
    columns: &ColumnIndex,
    schema: &ColumnSchema,
    line: u64,
) -> Result<TrafficRecord, IngestError> {
    let malformed = |message: String| IngestError::Malformed { line, message };

    let raw_time = &row[columns.timestamp];
    let time = NaiveDateTime::parse_from_str(raw_time, &schema.timestamp_format)
        .map_err(|e| malformed(format!("bad timestamp '{raw_time}': {e}")))?;

    let station_id = row[columns.station_id].to_string();
    if station_id.is_empty() {
        return Err(malformed("empty station id".into()));
    }

    let parse_coord = |idx: usize, what: &str, limit: f64| -> Result<f64, IngestError> {
        let raw = &row[idx];
        let v: f64 = raw
            .parse()
            .map_err(|_| malformed(format!("bad {what} '{raw}'")))?;
        if !v.is_finite() || v.abs() > limit {
            return Err(malformed(format!("{what} {v} out of range")));
        }
        Ok(v)
    };
    let lon = parse_coord(columns.lon, "longitude", 180.0)?;
    let lat = parse_coord(columns.lat, "latitude", 90.0)?;

    let raw_volume = &row[columns.volume];
    let volume: i64 = raw_volume
        .parse()
        .map_err(|_| malformed(format!("bad traffic volume '{raw_volume}'")))?;
    if volume < 0 {
        return Err(IngestError::NegativeVolume { line, value: volume });
    }

    Ok(TrafficRecord {
        timestamp: datetime_to_minutes(time),
        station_id,
        lon,
        lat,
        volume: volume as u64,
    })
}

/// Equirectangular projection about a reference point. Returns `(x, y)` in meters,
/// x pointing east and y north.
pub fn project(lat: f64, lon: f64, ref_lat: f64, ref_lon: f64) -> (f64, f64) {
    let x = EARTH_RADIUS_M * (lon - ref_lon).to_radians() * ref_lat.to_radians().cos();
    let y = EARTH_RADIUS_M * (lat - ref_lat).to_radians();
    (x, y)
}

/// Inverse of [`project`]. Returns `(lat, lon)` in degrees.
pub fn unproject(x: f64, y: f64, ref_lat: f64, ref_lon: f64) -> (f64, f64) {
    let lat = ref_lat + (y / EARTH_RADIUS_M).to_degrees();
    let lon = ref_lon + (x / (EARTH_RADIUS_M * ref_lat.to_radians().cos())).to_degrees();
    (lat, lon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub station_id: String,
    pub lon: f64,
    pub lat: f64,
    /// Meters east of the dataset reference point.
    pub x: f64,
    /// Meters north of the dataset reference point.
    pub y: f64,
}

impl Station {
    pub fn new(station_id: impl Into<String>, lon: f64, lat: f64, reference: GeoPoint) -> Self {
        let (x, y) = project(lat, lon, reference.lat, reference.lon);
        Self { station_id: station_id.into(), lon, lat, x, y }
    }
}

/// Station-by-hour traffic matrix for one region.
///
/// Volumes are stored hour-major: `volumes[t * n_stations + s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyDataset {
    epoch: NaiveDateTime,
    region_label: String,
    reference: GeoPoint,
    stations: Vec<Station>,
    hours: usize,
    volumes: Vec<Option<f64>>,
}

impl HourlyDataset {
    /// Builds a dataset from station coordinates and an hour-major volume
    /// matrix. The reference point is the centroid of the stations.
    pub fn new(
        epoch: NaiveDateTime,
        region_label: impl Into<String>,
        stations: &[(String, f64, f64)],
        hours: usize,
        volumes: Vec<Option<f64>>,
    ) -> Result<Self, IngestError> {
        let reference = centroid(stations.iter().map(|(_, lon, lat)| (*lon, *lat)));
        Self::with_reference(epoch, region_label, reference, stations, hours, volumes)
    }

    pub fn with_reference(
        epoch: NaiveDateTime,
        region_label: impl Into<String>,
        reference: GeoPoint,
        stations: &[(String, f64, f64)],
        hours: usize,
        volumes: Vec<Option<f64>>,
    ) -> Result<Self, IngestError> {
        if volumes.len() != hours * stations.len() {
            return Err(IngestError::InvalidDataset(format!(
                "volume matrix has {} cells, expected {} hours x {} stations",
                volumes.len(),
                hours,
                stations.len()
            )));
        }
        if let Some(bad) = volumes.iter().flatten().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(IngestError::InvalidDataset(format!("invalid traffic volume {bad}")));
        }
        let mut seen = std::collections::HashSet::new();
        for (id, lon, lat) in stations {
            if !seen.insert(id.as_str()) {
                return Err(IngestError::InvalidDataset(format!("duplicate station id '{id}'")));
            }
            if !(lon.abs() <= 180.0 && lat.abs() <= 90.0) {
                return Err(IngestError::InvalidDataset(format!("station '{id}' has invalid coordinates")));
            }
        }
        let stations = stations
            .iter()
            .map(|(id, lon, lat)| Station::new(id.clone(), *lon, *lat, reference))
            .collect();
        Ok(Self {
            epoch,
            region_label: region_label.into(),
            reference,
            stations,
            hours,
            volumes,
        })
    }

    pub fn epoch(&self) -> NaiveDateTime {
        self.epoch
    }

    pub fn region_label(&self) -> &str {
        &self.region_label
    }

    pub fn reference(&self) -> GeoPoint {
        self.reference
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn hours(&self) -> usize {
        self.hours
    }

    pub fn volumes(&self) -> &[Option<f64>] {
        &self.volumes
    }

    pub fn get(&self, hour: usize, station: usize) -> Option<f64> {
        self.volumes[hour * self.stations.len() + station]
    }

    pub fn row(&self, hour: usize) -> &[Option<f64>] {
        let n = self.stations.len();
        &self.volumes[hour * n..(hour + 1) * n]
    }

    /// Wall-clock time at the start of hour `t`.
    pub fn hour_time(&self, t: usize) -> NaiveDateTime {
        self.epoch + chrono::Duration::hours(t as i64)
    }

    /// Hour of day (0..24) of hour index `t`.
    pub fn hour_of_day(&self, t: usize) -> u32 {
        self.hour_time(t).hour()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.region_label = label.into();
        self
    }

    /// Keeps the stations for which `keep` returns true. The hour axis and the
    /// reference point are unchanged.
    pub fn retain_stations(&self, mut keep: impl FnMut(&Station) -> bool) -> Self {
        let kept: Vec<usize> = (0..self.stations.len())
            .filter(|&s| keep(&self.stations[s]))
            .collect();
        let mut volumes = Vec::with_capacity(self.hours * kept.len());
        for t in 0..self.hours {
            let row = self.row(t);
            volumes.extend(kept.iter().map(|&s| row[s]));
        }
        Self {
            epoch: self.epoch,
            region_label: self.region_label.clone(),
            reference: self.reference,
            stations: kept.iter().map(|&s| self.stations[s].clone()).collect(),
            hours: self.hours,
            volumes,
        }
    }

    /// Fraction of cells that are absent.
    pub fn missing_fraction(&self) -> f64 {
        if self.volumes.is_empty() {
            return 0.0;
        }
        self.volumes.iter().filter(|v| v.is_none()).count() as f64 / self.volumes.len() as f64
    }

    pub fn to_document(&self) -> DatasetDocument {
        DatasetDocument {
            epoch: self.epoch,
            region_label: self.region_label.clone(),
            reference: Some(self.reference),
            stations: self
                .stations
                .iter()
                .map(|s| StationDocument { id: s.station_id.clone(), lon: s.lon, lat: s.lat })
                .collect(),
            volumes: (0..self.hours).map(|t| self.row(t).to_vec()).collect(),
        }
    }

    pub fn from_document(doc: DatasetDocument) -> Result<Self, IngestError> {
        let n = doc.stations.len();
        if let Some(bad) = doc.volumes.iter().position(|row| row.len() != n) {
            return Err(IngestError::InvalidDataset(format!(
                "volume row {bad} has {} entries, expected {n}",
                doc.volumes[bad].len()
            )));
        }
        let stations: Vec<(String, f64, f64)> =
            doc.stations.into_iter().map(|s| (s.id, s.lon, s.lat)).collect();
        let hours = doc.volumes.len();
        let volumes = doc.volumes.into_iter().flatten().collect();
        let reference = doc
            .reference
            .unwrap_or_else(|| centroid(stations.iter().map(|(_, lon, lat)| (*lon, *lat))));
        Self::with_reference(doc.epoch, doc.region_label, reference, &stations, hours, volumes)
    }

    pub fn to_json(&self) -> Result<String, IngestError> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        Self::from_document(serde_json::from_str(text)?)
    }
}

/// JSON layout of a [`HourlyDataset`]: `volumes` holds one row per hour with
/// one entry per station, `null` marking an absent cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDocument {
    pub epoch: NaiveDateTime,
    pub region_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<GeoPoint>,
    pub stations: Vec<StationDocument>,
    pub volumes: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationDocument {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
}

fn centroid(points: impl Iterator<Item = (f64, f64)>) -> GeoPoint {
    let (mut lon, mut lat, mut n) = (0.0, 0.0, 0usize);
    for (x, y) in points {
        lon += x;
        lat += y;
        n += 1;
    }
    if n == 0 {
        GeoPoint { lon: 0.0, lat: 0.0 }
    } else {
        GeoPoint { lon: lon / n as f64, lat: lat / n as f64 }
    }
}

/// Midnight of the first calendar day present in `records`.
pub fn default_epoch(records: &[TrafficRecord]) -> Option<NaiveDateTime> {
    records
        .iter()
        .map(|r| r.timestamp)
        .min()
        .map(|m| minutes_to_datetime(m).date().and_hms_opt(0, 0, 0).expect("midnight exists"))
}

/// Sums record volumes into `[epoch + t h, epoch + (t+1) h)` bins per station.
/// Stations are ordered by first appearance and take the coordinates of their
/// first record.
pub fn bin_hourly(records: &[TrafficRecord], epoch: NaiveDateTime) -> Result<HourlyDataset, IngestError> {
    let epoch_min = datetime_to_minutes(epoch);
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut stations: Vec<(String, f64, f64)> = Vec::new();
    let mut hours = 0usize;

    for r in records {
        let offset = r.timestamp - epoch_min;
        if offset < 0 {
            return Err(IngestError::BeforeEpoch {
                station: r.station_id.clone(),
                timestamp: r.datetime(),
            });
        }
        hours = hours.max((offset / 60) as usize + 1);
        if !index.contains_key(r.station_id.as_str()) {
            index.insert(&r.station_id, stations.len());
            stations.push((r.station_id.clone(), r.lon, r.lat));
        }
    }

    let n = stations.len();
    let mut volumes: Vec<Option<f64>> = vec![None; hours * n];
    for r in records {
        let t = ((r.timestamp - epoch_min) / 60) as usize;
        let cell = &mut volumes[t * n + index[r.station_id.as_str()]];
        *cell = Some(cell.unwrap_or(0.0) + r.volume as f64);
    }
    HourlyDataset::new(epoch, "", &stations, hours, volumes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBounds {
    pub min_lon: f64,
    pub max_lon: f64,
    pub min_lat: f64,
    pub max_lat: f64,
}

impl RegionBounds {
    pub fn new(min_lon: f64, max_lon: f64, min_lat: f64, max_lat: f64) -> Result<Self, IngestError> {
        if !(min_lon <= max_lon && min_lat <= max_lat) {
            return Err(IngestError::InvalidDataset(format!(
                "region bounds inverted: lon [{min_lon}, {max_lon}], lat [{min_lat}, {max_lat}]"
            )));
        }
        Ok(Self { min_lon, max_lon, min_lat, max_lat })
    }

    /// Inclusive on all edges.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        (self.min_lon..=self.max_lon).contains(&lon) && (self.min_lat..=self.max_lat).contains(&lat)
    }
}

pub fn filter_region(ds: &HourlyDataset, bounds: &RegionBounds, label: &str) -> HourlyDataset {
    ds.retain_stations(|s| bounds.contains(s.lon, s.lat)).with_label(label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Total,
    #[default]
    Mean,
}

/// Per-hour sum or mean over the stations reporting in that hour. Hours with
/// no reporting station are `None`.
pub fn aggregate(ds: &HourlyDataset, mode: Aggregation) -> Result<Vec<Option<f64>>, IngestError> {
    if ds.n_stations() == 0 {
        return Err(IngestError::NoStations);
    }
    Ok((0..ds.hours())
        .map(|t| {
            let (sum, count) = ds
                .row(t)
                .iter()
                .flatten()
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            match (count, mode) {
                (0, _) => None,
                (_, Aggregation::Total) => Some(sum),
                (c, Aggregation::Mean) => Some(sum / c as f64),
            }
        })
        .collect())
}
