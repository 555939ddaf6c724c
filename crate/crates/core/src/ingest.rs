//! Daily precipitation, station metadata and SOI inputs.
//!
//! File formats (UTF-8, comma-delimited, `.` decimals):
//!
//! * daily precipitation: header `date,prcp_mm`, dates `YYYY-MM-DD`, an empty
//!   value field marks a missing day;
//! * station metadata: header `station_id,lat,lon,cdist_km`;
//! * monthly SOI: header `year,month,soi`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DAILY_HEADER: [&str; 2] = ["date", "prcp_mm"];
pub const STATION_HEADER: [&str; 4] = ["station_id", "lat", "lon", "cdist_km"];
pub const SOI_HEADER: [&str; 3] = ["year", "month", "soi"];

/// Largest admissible fraction of missing days in a calendar year (exclusive).
pub const MAX_MISSING_FRACTION: f64 = 0.01;

/// One station's contiguous daily record; gaps are explicit `None` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    station_id: String,
    start: NaiveDate,
    values: Vec<Option<f64>>,
}

impl DailySeries {
    pub fn new(station_id: impl Into<String>, start: NaiveDate, values: Vec<Option<f64>>) -> Result<Self> {
        let station_id = station_id.into();
        if station_id.trim().is_empty() {
            return Err(Error::Validation("empty station id".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find_map(|(i, v)| v.filter(|x| !(*x >= 0.0 && x.is_finite())).map(|x| (i, x)))
        {
            return Err(Error::Validation(format!(
                "station {station_id}: negative precipitation {v} on {}",
                start + Duration::days(i as i64)
            )));
        }
        Ok(Self {
            station_id,
            start,
            values,
        })
    }

    pub fn station_id(&self) -> &str {
        &self.station_id
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn date(&self, index: usize) -> NaiveDate {
        self.start + Duration::days(index as i64)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.values.len()).map(|i| self.date(i))
    }

    /// Same dates, values multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.station_id.clone(),
            self.start,
            self.values.iter().map(|v| v.map(|x| x * c)).collect(),
        )
    }
}

pub fn parse_daily_csv(path: &Path) -> Result<DailySeries> {
    let station_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Validation(format!("{}: cannot derive station id", path.display())))?
        .to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_daily_reader(station_id, file, path)
}

/// Parses the daily CSV format from any reader; `label` names the source in errors.
pub fn parse_daily_reader<R: Read>(station_id: String, reader: R, label: &Path) -> Result<DailySeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    check_header(rdr.headers()?, &DAILY_HEADER, label)?;

    let mut start: Option<NaiveDate> = None;
    let mut last: Option<NaiveDate> = None;
    let mut values = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // header is line 1
        let row = i + 2;
        let record = record?;
        let date_field = record.get(0).unwrap_or("");
        let date = NaiveDate::parse_from_str(date_field, "%Y-%m-%d")
            .map_err(|_| Error::parse(label, row, format!("malformed date {date_field:?}")))?;
        let value = match record.get(1).unwrap_or("") {
            "" => None,
            s => {
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::parse(label, row, format!("malformed value {s:?}")))?;
                if !v.is_finite() {
                    return Err(Error::parse(label, row, format!("non-finite value {s:?}")));
                }
                if v < 0.0 {
                    return Err(Error::Validation(format!(
                        "{}: row {row}: negative precipitation {v}",
                        label.display()
                    )));
                }
                Some(v)
            }
        };
        match last {
            None => start = Some(date),
            Some(prev) if date <= prev => {
                return Err(Error::Validation(format!(
                    "{}: row {row}: dates not increasing ({date} after {prev})",
                    label.display()
                )))
            }
            Some(prev) => {
                let gap = (date - prev).num_days() - 1;
                values.extend(std::iter::repeat(None).take(gap as usize));
            }
        }
        values.push(value);
        last = Some(date);
    }
    let start = start.ok_or_else(|| Error::Validation(format!("{}: no data rows", label.display())))?;
    DailySeries::new(station_id, start, values)
}

pub fn write_daily_csv<W: Write>(series: &DailySeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DAILY_HEADER)?;
    for (date, v) in series.dates().zip(series.values()) {
        let value = v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([date.format("%Y-%m-%d").to_string(), value])?;
    }
    w.flush().map_err(|e| Error::io("<daily csv>", e))?;
    Ok(())
}

fn check_header(found: &csv::StringRecord, expected: &[&str], label: &Path) -> Result<()> {
    let ok = found.len() == expected.len() && found.iter().zip(expected).all(|(a, b)| a == *b);
    if ok {
        Ok(())
    } else {
        Err(Error::parse(
            label,
            1,
            format!("expected header {:?}, found {:?}", expected.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ))
    }
}

pub fn days_in_year(year: i32) -> u32 {
    if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366
    } else {
        365
    }
}

/// Calendar years whose fraction of missing days is below one percent.
///
/// Days of a year that fall outside the recorded span count as missing.
pub fn quality_filter(series: &DailySeries) -> BTreeSet<i32> {
    let mut admissible = BTreeSet::new();
    if series.is_empty() {
        return admissible;
    }
    let first = series.start().year();
    let last = series.date(series.len() - 1).year();
    let mut present = vec![0u32; (last - first + 1) as usize];
    for (date, v) in series.dates().zip(series.values()) {
        if v.is_some() {
            present[(date.year() - first) as usize] += 1;
        }
    }
    for (offset, &n_present) in present.iter().enumerate() {
        let year = first + offset as i32;
        let total = days_in_year(year);
        let missing = (total - n_present) as f64 / total as f64;
        if missing < MAX_MISSING_FRACTION {
            admissible.insert(year);
        }
    }
    admissible
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationMeta {
    pub station_id: String,
    pub latitude: f64,
    pub longitude: f64,
    /// Distance to the coast, km.
    pub coastal_distance: f64,
}

impl StationMeta {
    pub fn new(station_id: impl Into<String>, latitude: f64, longitude: f64, coastal_distance: f64) -> Result<Self> {
        let meta = Self {
            station_id: station_id.into(),
            latitude,
            longitude,
            coastal_distance,
        };
        meta.validate()?;
        Ok(meta)
    }

    fn validate(&self) -> Result<()> {
        if self.station_id.trim().is_empty() {
            return Err(Error::Validation("empty station id".into()));
        }
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Error::Validation(format!("{}: latitude {} outside [-90, 90]", self.station_id, self.latitude)));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::Validation(format!(
                "{}: longitude {} outside [-180, 180]",
                self.station_id, self.longitude
            )));
        }
        if !(self.coastal_distance > 0.0 && self.coastal_distance.is_finite()) {
            return Err(Error::Validation(format!(
                "{}: coastal distance {} must be positive",
                self.station_id, self.coastal_distance
            )));
        }
        Ok(())
    }

    pub fn log_cdist(&self) -> f64 {
        self.coastal_distance.ln()
    }
}

pub fn parse_station_csv(path: &Path) -> Result<Vec<StationMeta>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    check_header(rdr.headers()?, &STATION_HEADER, path)?;
    let mut out: Vec<StationMeta> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let num = |idx: usize, name: &str| -> Result<f64> {
            let s = record.get(idx).unwrap_or("");
            s.parse::<f64>()
                .map_err(|_| Error::parse(path, row, format!("malformed {name} {s:?}")))
        };
        let id = record.get(0).unwrap_or("").to_string();
        let meta = StationMeta::new(id, num(1, "lat")?, num(2, "lon")?, num(3, "cdist_km")?)
            .map_err(|e| Error::parse(path, row, e.to_string()))?;
        if out.iter().any(|m| m.station_id == meta.station_id) {
            return Err(Error::parse(path, row, format!("duplicate station {}", meta.station_id)));
        }
        out.push(meta);
    }
    Ok(out)
}

pub fn write_station_csv<W: Write>(stations: &[StationMeta], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(STATION_HEADER)?;
    for s in stations {
        w.write_record([
            s.station_id.clone(),
            s.latitude.to_string(),
            s.longitude.to_string(),
            s.coastal_distance.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<station csv>", e))?;
    Ok(())
}

/// Monthly Southern Oscillation Index values, sorted by (year, month).
#[derive(Debug, Clone, PartialEq)]
pub struct SoiSeries {
    entries: Vec<((i32, u32), f64)>,
}

impl SoiSeries {
    /// Sorts the entries and checks that months are unique, valid and gap-free.
    pub fn new(mut entries: Vec<((i32, u32), f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        for ((y, m), v) in &entries {
            if !(1..=12).contains(m) {
                return Err(Error::Validation(format!("SOI month {y}-{m} out of range")));
            }
            if !v.is_finite() {
                return Err(Error::Validation(format!("SOI {y}-{m:02} is not finite")));
            }
        }
        for pair in entries.windows(2) {
            let (a, b) = (pair[0].0, pair[1].0);
            if a == b {
                return Err(Error::Validation(format!("duplicate SOI month {}-{:02}", a.0, a.1)));
            }
            let next = if a.1 == 12 { (a.0 + 1, 1) } else { (a.0, a.1 + 1) };
            if b != next {
                return Err(Error::Validation(format!("SOI month {}-{:02} missing", next.0, next.1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn months(&self) -> impl Iterator<Item = (i32, u32)> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn get(&self, year: i32, month: u32) -> Option<f64> {
        self.entries
            .binary_search_by_key(&(year, month), |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.entries.iter().map(|e| e.0 .0).collect()
    }

    /// Years with all twelve months present.
    pub fn complete_years(&self) -> Vec<i32> {
        self.years()
            .into_iter()
            .filter(|&y| (1..=12).all(|m| self.get(y, m).is_some()))
            .collect()
    }

    pub fn entries(&self) -> &[((i32, u32), f64)] {
        &self.entries
    }
}

pub fn parse_soi_csv(path: &Path) -> Result<SoiSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    check_header(rdr.headers()?, &SOI_HEADER, path)?;
    let mut entries = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let year: i32 = field(0)
            .parse()
            .map_err(|_| Error::parse(path, row, format!("malformed year {:?}", field(0))))?;
        let month: u32 = field(1)
            .parse()
            .map_err(|_| Error::parse(path, row, format!("malformed month {:?}", field(1))))?;
        let soi: f64 = field(2)
            .parse()
            .map_err(|_| Error::parse(path, row, format!("malformed soi {:?}", field(2))))?;
        entries.push(((year, month), soi));
    }
    SoiSeries::new(entries).map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_soi_csv<W: Write>(soi: &SoiSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SOI_HEADER)?;
    for ((y, m), v) in soi.entries() {
        w.write_record([y.to_string(), m.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<soi csv>", e))?;
    Ok(())
}

/// Arithmetic mean of the twelve monthly SOI values of `year`.
pub fn yearly_soi(soi: &SoiSeries, year: i32) -> Result<f64> {
    let mut sum = 0.0;
    for month in 1..=12 {
        sum += soi
            .get(year, month)
            .ok_or_else(|| Error::Data(format!("SOI for {year}-{month:02} missing")))?;
    }
    Ok(sum / 12.0)
}

/// Regressors of the link model for one station-year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub soi: f64,
    pub log_cdist: f64,
    pub lat: f64,
    pub lon: f64,
}

impl Covariates {
    pub const ZERO: Covariates = Covariates {
        soi: 0.0,
        log_cdist: 0.0,
        lat: 0.0,
        lon: 0.0,
    };

    /// Regressor values in link order: SOI, log coastal distance, latitude, longitude.
    pub fn as_array(&self) -> [f64; 4] {
        [self.soi, self.log_cdist, self.lat, self.lon]
    }

    pub fn for_station(meta: &StationMeta, soi: f64) -> Self {
        Self {
            soi,
            log_cdist: meta.log_cdist(),
            lat: meta.latitude,
            lon: meta.longitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateRow {
    pub station_id: String,
    pub year: i32,
    pub covariates: Covariates,
}

pub fn covariate_row(meta: &StationMeta, soi: &SoiSeries, year: i32) -> Result<CovariateRow> {
    Ok(CovariateRow {
        station_id: meta.station_id.clone(),
        year,
        covariates: Covariates::for_station(meta, yearly_soi(soi, year)?),
    })
}
