//! End-to-end orchestration: configuration, dataset loading, per-`k` block
//! maxima, extremal indices, model ladder, diagnostics, shape drift and
//! scenario return levels, written as a bundle of CSV/JSON artifacts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{diagnose, quantile_plot_data, write_qq_csv, DiagnosticsSummary};
use crate::error::{Error, Result};
use crate::extremal::{theta_for_windowed, write_ei_csv, EstimatorForm, ExtremalIndexRow, DEFAULT_QUANTILE};
use crate::fit::{write_coefficients_csv, write_std_errors_csv, FitOptions, FitResult};
use crate::format::NumberFormat;
use crate::functionals::{block_maxima, windowed_min, BlockMaximaRow, BlockMaximaTable, MAX_WINDOW, STABLE_WINDOW};
use crate::ingest::{
    parse_daily_csv, parse_soi_csv, parse_station_csv, quality_filter, yearly_soi, Covariates, DailySeries,
    SoiSeries, StationMeta,
};
use crate::returns::{
    aggregated_quantile, shape_drift_report, simulate_soi, write_return_levels_csv, write_shape_drift_csv,
    ReturnLevelRow, ReturnSpec, DEFAULT_DRIFT_THRESHOLD,
};
use crate::rng::derive_seed;
use crate::select::{build_ladder, select, write_selection_csv, SelectionReport, SelectionRow};

pub const MANIFEST_VERSION: u32 = 1;

/// Which ladder model to report: the AIC choice or a fixed id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelChoice {
    Auto,
    Id(usize),
}

impl ModelChoice {
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "auto" => Ok(Self::Auto),
            t => match t.parse::<usize>() {
                Ok(id) if build_ladder().get(id).is_some() => Ok(Self::Id(id)),
                _ => Err(Error::Argument(format!("model must be 'auto' or a ladder id 0-4, got '{t}'"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScenarioSource {
    /// Yearly SOI resampled from the historical yearly means.
    Simulate { horizon: usize, seed: u64 },
    /// `year,soi` CSV.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRequest {
    pub p: f64,
    pub source: ScenarioSource,
    /// First scenario year for simulated scenarios.
    pub start_year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub daily_dir: PathBuf,
    pub stations: PathBuf,
    pub soi: PathBuf,
    pub ks: Vec<usize>,
    pub quantile: f64,
    pub model: ModelChoice,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Fix the shape of every `k >= 2` fit at the `k = 1` estimate.
    pub shape_tie: bool,
    pub full_precision: bool,
    pub estimator: EstimatorForm,
    pub drift_threshold: f64,
    pub drift_block_lengths: Vec<usize>,
    pub scenario: Option<ScenarioRequest>,
}

/// Flat `key = value` settings; `#` starts a comment.
pub type ConfigMap = BTreeMap<String, String>;

pub const CONFIG_KEYS: [&str; 17] = [
    "daily_dir",
    "stations",
    "soi",
    "k",
    "quantile",
    "model",
    "out",
    "seed",
    "shape_tie",
    "full_precision",
    "estimator",
    "drift_threshold",
    "block_lengths",
    "p",
    "horizon",
    "scenario_file",
    "scenario_start",
];

pub fn parse_config_text(text: &str, label: &Path) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(label, i + 1, format!("expected key = value, got {line:?}")))?;
        let key = key.trim().replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::parse(label, i + 1, format!("unknown key {key:?}")));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<ConfigMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_text(&text, path)
}

pub fn parse_k_list(text: &str) -> Result<Vec<usize>> {
    let mut ks = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let k: usize = part
            .parse()
            .map_err(|_| Error::Argument(format!("window length '{part}' is not an integer")))?;
        if !(1..=MAX_WINDOW).contains(&k) {
            return Err(Error::Argument(format!("window length {k} outside [1, {MAX_WINDOW}]")));
        }
        if !ks.contains(&k) {
            ks.push(k);
        }
    }
    if ks.is_empty() {
        return Err(Error::Argument("no window lengths given".into()));
    }
    ks.sort_unstable();
    Ok(ks)
}

fn parse_num<T: std::str::FromStr>(map: &ConfigMap, key: &str) -> Result<Option<T>> {
    map.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| Error::Argument(format!("{key}: cannot parse '{v}'")))
        })
        .transpose()
}

fn parse_bool(map: &ConfigMap, key: &str) -> Result<bool> {
    match map.get(key).map(|s| s.as_str()) {
        None | Some("false") | Some("0") | Some("no") => Ok(false),
        Some("true") | Some("1") | Some("yes") | Some("") => Ok(true),
        Some(v) => Err(Error::Argument(format!("{key}: expected true/false, got '{v}'"))),
    }
}

impl RunConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let path = |key: &str| {
            map.get(key)
                .map(PathBuf::from)
                .ok_or_else(|| Error::Argument(format!("missing setting '{key}'")))
        };
        let quantile = parse_num::<f64>(map, "quantile")?.unwrap_or(DEFAULT_QUANTILE);
        if !(quantile > 0.0 && quantile < 1.0) {
            return Err(Error::Argument(format!("quantile {quantile} outside (0, 1)")));
        }
        let estimator = match map.get("estimator").map(|s| s.as_str()) {
            None | Some("standard") => EstimatorForm::Standard,
            Some("printed") => EstimatorForm::Printed,
            Some(v) => return Err(Error::Argument(format!("estimator must be standard or printed, got '{v}'"))),
        };
        let seed = parse_num::<u64>(map, "seed")?.unwrap_or(1);
        let drift_block_lengths = match map.get("block_lengths") {
            None => vec![365],
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .ok()
                        .filter(|&b| b > 0)
                        .ok_or_else(|| Error::Argument(format!("block_lengths: bad value '{s}'")))
                })
                .collect::<Result<_>>()?,
        };
        let p = parse_num::<f64>(map, "p")?;
        let horizon = parse_num::<usize>(map, "horizon")?;
        let scenario_file = map.get("scenario_file").map(PathBuf::from);
        let scenario = match (p, horizon, scenario_file) {
            (None, None, None) => None,
            (Some(p), horizon, file) => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Argument(format!("p {p} outside (0, 1)")));
                }
                let source = match (horizon, file) {
                    (_, Some(f)) => ScenarioSource::File(f),
                    (Some(m), None) if m >= 1 => ScenarioSource::Simulate {
                        horizon: m,
                        seed: derive_seed(seed, 200),
                    },
                    (Some(_), None) => return Err(Error::Argument("horizon must be at least 1".into())),
                    (None, None) => ScenarioSource::Simulate {
                        horizon: 1,
                        seed: derive_seed(seed, 200),
                    },
                };
                Some(ScenarioRequest {
                    p,
                    source,
                    start_year: parse_num::<i32>(map, "scenario_start")?.unwrap_or(2021),
                })
            }
            _ => return Err(Error::Argument("scenario settings need an exceedance probability p".into())),
        };
        let drift_threshold = parse_num::<f64>(map, "drift_threshold")?.unwrap_or(DEFAULT_DRIFT_THRESHOLD);
        if !(drift_threshold > 0.0) {
            return Err(Error::Argument(format!("drift_threshold {drift_threshold} must be positive")));
        }
        Ok(Self {
            daily_dir: path("daily_dir")?,
            stations: path("stations")?,
            soi: path("soi")?,
            ks: parse_k_list(map.get("k").map(|s| s.as_str()).unwrap_or("1,2,3"))?,
            quantile,
            model: ModelChoice::parse(map.get("model").map(|s| s.as_str()).unwrap_or("auto"))?,
            out_dir: path("out")?,
            seed,
            shape_tie: parse_bool(map, "shape_tie")?,
            full_precision: parse_bool(map, "full_precision")?,
            estimator,
            drift_threshold,
            drift_block_lengths,
            scenario,
        })
    }

    pub fn number_format(&self) -> NumberFormat {
        if self.full_precision {
            NumberFormat::Shortest
        } else {
            NumberFormat::DEFAULT_ARTIFACT
        }
    }

    /// Non-fatal remarks about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        self.ks
            .iter()
            .filter(|&&k| k > STABLE_WINDOW)
            .map(|k| format!("k = {k} exceeds {STABLE_WINDOW}; the shape estimate is known to drift for long windows"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub series: Vec<DailySeries>,
    pub stations: Vec<StationMeta>,
    pub soi: SoiSeries,
}

impl Dataset {
    pub fn station(&self, id: &str) -> Option<&StationMeta> {
        self.stations.iter().find(|s| s.station_id == id)
    }

    /// Yearly SOI means of all complete years.
    pub fn yearly_soi_history(&self) -> Vec<(i32, f64)> {
        self.soi
            .complete_years()
            .into_iter()
            .filter_map(|y| yearly_soi(&self.soi, y).ok().map(|v| (y, v)))
            .collect()
    }
}

/// Reads every `*.csv` in `daily_dir` (sorted by name) plus the station and
/// SOI files. Every series must have station metadata.
pub fn load_dataset(daily_dir: &Path, stations: &Path, soi: &Path) -> Result<Dataset> {
    let soi = parse_soi_csv(soi)?;
    let metas = parse_station_csv(stations)?;
    let entries = std::fs::read_dir(daily_dir).map_err(|e| Error::io(daily_dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(daily_dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Validation(format!("{}: no daily CSV files", daily_dir.display())));
    }
    let series = paths
        .par_iter()
        .map(|p| parse_daily_csv(p))
        .collect::<Result<Vec<_>>>()?;
    for s in &series {
        if !metas.iter().any(|m| m.station_id == s.station_id()) {
            return Err(Error::Validation(format!(
                "station {} has no entry in {}",
                s.station_id(),
                stations.display()
            )));
        }
    }
    Ok(Dataset {
        series,
        stations: metas,
        soi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSummary {
    pub station_id: String,
    pub first_date: String,
    pub last_date: String,
    pub n_days: usize,
    pub missing_days: usize,
    pub admissible_years: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub stations: Vec<StationSummary>,
    pub soi_complete_years: usize,
}

pub fn summarize(dataset: &Dataset) -> DatasetSummary {
    DatasetSummary {
        stations: dataset
            .series
            .iter()
            .map(|s| StationSummary {
                station_id: s.station_id().to_string(),
                first_date: s.start().to_string(),
                last_date: s.date(s.len().saturating_sub(1)).to_string(),
                n_days: s.len(),
                missing_days: s.values().iter().filter(|v| v.is_none()).count(),
                admissible_years: quality_filter(s).len(),
            })
            .collect(),
        soi_complete_years: dataset.soi.complete_years().len(),
    }
}

/// Block maxima with covariates for one window length. Station-years
/// without a complete SOI year are left out and counted in the second value.
pub fn build_table(dataset: &Dataset, k: usize) -> Result<(BlockMaximaTable, usize)> {
    let soi_years: BTreeMap<i32, f64> = dataset.yearly_soi_history().into_iter().collect();
    let per_station = dataset
        .series
        .par_iter()
        .map(|s| {
            let meta = dataset.station(s.station_id()).expect("checked at load");
            let maxima = block_maxima(&windowed_min(s, k)?, &quality_filter(s));
            let mut rows = Vec::with_capacity(maxima.maxima.len());
            let mut dropped = 0;
            for (year, value) in maxima.maxima {
                match soi_years.get(&year) {
                    Some(&soi) => rows.push(BlockMaximaRow {
                        station_id: s.station_id().to_string(),
                        year,
                        k,
                        block_max: value,
                        covariates: Covariates::for_station(meta, soi),
                    }),
                    None => dropped += 1,
                }
            }
            Ok((rows, dropped))
        })
        .collect::<Result<Vec<_>>>()?;
    let dropped = per_station.iter().map(|p| p.1).sum();
    let rows = per_station.into_iter().flat_map(|p| p.0).collect();
    Ok((BlockMaximaTable::new(rows), dropped))
}

/// Extremal index of every station's windowed series. Stations with too few
/// exceedances are reported in the second value instead of failing.
pub fn extremal_rows(
    dataset: &Dataset,
    k: usize,
    quantile: f64,
    form: EstimatorForm,
) -> Result<(Vec<ExtremalIndexRow>, Vec<String>)> {
    let results: Vec<_> = dataset
        .series
        .par_iter()
        .map(|s| (s.station_id().to_string(), theta_for_windowed(s, k, quantile, form)))
        .collect();
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for (station_id, r) in results {
        match r {
            Ok(estimate) => rows.push(ExtremalIndexRow { station_id, k, estimate }),
            Err(Error::Infeasible(msg)) => notes.push(format!("station {station_id} k={k}: {msg}")),
            Err(e) => return Err(e),
        }
    }
    Ok((rows, notes))
}

/// Selection CSV rows with pooled diagnostics for each converged model.
pub fn selection_rows(table: &BlockMaximaTable, report: &SelectionReport, k: usize) -> Vec<SelectionRow> {
    report
        .models
        .iter()
        .filter(|m| m.converged)
        .map(|m| {
            let diag = m.fit.as_ref().and_then(|f| diagnose(table, f).ok()).map(|d| d.0);
            SelectionRow {
                model: m.id,
                k,
                nll: m.nll,
                aic: m.aic,
                bic: m.bic,
                mk: diag
                    .as_ref()
                    .and_then(|d| d.mann_kendall.as_ref())
                    .map(|t| (t.statistic, t.p_value)),
                ad: diag
                    .as_ref()
                    .and_then(|d| d.anderson_darling.as_ref())
                    .map(|t| (t.statistic, t.p_value)),
            }
        })
        .collect()
}

/// The fit reported for a selection: the AIC choice or the requested model.
pub fn chosen_fit(report: &SelectionReport, choice: ModelChoice) -> Result<&FitResult> {
    let id = match choice {
        ModelChoice::Auto => report
            .chosen
            .ok_or_else(|| Error::Numerical("no ladder model converged".into()))?,
        ModelChoice::Id(id) => id,
    };
    let m = report
        .model(id)
        .ok_or_else(|| Error::Argument(format!("model {id} is not on the ladder")))?;
    match (&m.fit, m.converged) {
        (Some(f), true) => Ok(f),
        _ => Err(Error::Numerical(format!(
            "model {id} did not converge: {}",
            m.failure.as_deref().unwrap_or("no fit")
        ))),
    }
}

/// `year,soi` scenario file.
pub fn read_scenario_csv(path: &Path) -> Result<Vec<(i32, f64)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["year", "soi"] {
        return Err(Error::parse(path, 1, "expected header year,soi"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let year = rec
            .get(0)
            .and_then(|s| s.parse::<i32>().ok())
            .ok_or_else(|| Error::parse(path, row, "malformed year"))?;
        let soi = rec
            .get(1)
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::parse(path, row, "malformed soi"))?;
        out.push((year, soi));
    }
    if out.is_empty() {
        return Err(Error::Validation(format!("{}: empty scenario", path.display())));
    }
    Ok(out)
}

/// Scenario years and SOI values for a request.
pub fn scenario_years(request: &ScenarioRequest, dataset: &Dataset) -> Result<Vec<(i32, f64)>> {
    match &request.source {
        ScenarioSource::File(path) => read_scenario_csv(path),
        ScenarioSource::Simulate { horizon, seed } => {
            let history: Vec<f64> = dataset.yearly_soi_history().into_iter().map(|(_, v)| v).collect();
            let sim = simulate_soi(&history, *horizon, *seed)?;
            Ok(sim
                .values
                .into_iter()
                .enumerate()
                .map(|(i, v)| (request.start_year + i as i32, v))
                .collect())
        }
    }
}

/// Aggregated return level of every station under one scenario.
pub fn scenario_rows(
    fit: &FitResult,
    stations: &[StationMeta],
    scenario: &[(i32, f64)],
    p: f64,
    k: usize,
) -> Result<Vec<ReturnLevelRow>> {
    let spec = ReturnSpec::new(p, scenario.to_vec())?;
    stations
        .iter()
        .map(|s| {
            let agg = aggregated_quantile(&spec, fit, s)
                .map_err(|e| match e {
                    Error::Scenario(m) => Error::Scenario(format!("station {}: {m}", s.station_id)),
                    other => other,
                })?;
            Ok(ReturnLevelRow {
                station_id: s.station_id.clone(),
                k,
                horizon_years: spec.horizon(),
                p,
                return_level_mm: agg.value,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub complete: bool,
    pub seed: u64,
    pub ks: Vec<usize>,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
    pub failure: Option<String>,
}

struct Writer<'a> {
    dir: &'a Path,
    manifest: &'a mut Manifest,
}

impl Writer<'_> {
    fn write(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        self.manifest.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w).map_err(|e| Error::io(name, e))
        })
    }
}

#[derive(Debug, Serialize)]
struct KDiagnostics<'a> {
    k: usize,
    stations: usize,
    rows: usize,
    rows_without_soi: usize,
    chosen_model: Option<usize>,
    reported_model: Option<usize>,
    summary: &'a DiagnosticsSummary,
    extremal_notes: &'a [String],
}

fn run_stages(cfg: &RunConfig, manifest: &mut Manifest) -> Result<()> {
    let dataset = load_dataset(&cfg.daily_dir, &cfg.stations, &cfg.soi)?;
    let fmt = cfg.number_format();
    let mut out = Writer {
        dir: &cfg.out_dir,
        manifest,
    };
    let scenario = cfg
        .scenario
        .as_ref()
        .map(|req| scenario_years(req, &dataset).map(|years| (req.p, years)))
        .transpose()?;

    let mut tied_xi: Option<f64> = None;
    for &k in &cfg.ks {
        let (table, dropped) = build_table(&dataset, k)?;
        out.write(&format!("block_maxima_k{k}.csv"), |w| table.write_csv(w, fmt))?;

        let (ei, ei_notes) = extremal_rows(&dataset, k, cfg.quantile, cfg.estimator)?;
        out.write(&format!("extremal_index_k{k}.csv"), |w| write_ei_csv(&ei, w, fmt))?;

        let options = FitOptions {
            fixed_xi: if cfg.shape_tie && k > 1 { tied_xi } else { None },
            ..FitOptions::with_seed(derive_seed(cfg.seed, 100 + k as u64))
        };
        let mut report = select(&table, &build_ladder(), &options);
        for m in &mut report.models {
            if let Some(f) = &mut m.fit {
                f.k = Some(k);
            }
        }
        out.write(&format!("selection_k{k}.csv"), |w| {
            write_selection_csv(&selection_rows(&table, &report, k), w, fmt)
        })?;
        let fit = chosen_fit(&report, cfg.model)?;
        if k == 1 {
            tied_xi = Some(fit.model.xi);
        }
        out.write(&format!("coefficients_k{k}.csv"), |w| write_coefficients_csv(&[fit], w, fmt))?;
        out.write(&format!("std_errors_k{k}.csv"), |w| write_std_errors_csv(&[fit], w, fmt))?;
        out.write(&format!("fit_k{k}.txt"), |w| {
            w.write_all(fit.to_record().as_bytes()).map_err(|e| Error::io("fit record", e))
        })?;

        let (summary, sample) = diagnose(&table, fit)?;
        out.json(
            &format!("diagnostics_k{k}.json"),
            &KDiagnostics {
                k,
                stations: dataset.series.len(),
                rows: table.len(),
                rows_without_soi: dropped,
                chosen_model: report.chosen,
                reported_model: fit.model_id,
                summary: &summary,
                extremal_notes: &ei_notes,
            },
        )?;
        let qq = quantile_plot_data(&sample.values)?;
        out.write(&format!("qq_k{k}.csv"), |w| write_qq_csv(&qq, w, fmt))?;

        if let Some((p, years)) = &scenario {
            let rows = scenario_rows(fit, &dataset.stations, years, *p, k)?;
            out.write(&format!("return_levels_k{k}.csv"), |w| write_return_levels_csv(&rows, w, fmt))?;
        }
    }

    let series: Vec<Vec<Option<f64>>> = dataset.series.iter().map(|s| s.values().to_vec()).collect();
    let k_max = cfg.ks.iter().copied().max().unwrap_or(1);
    let drift = shape_drift_report(
        &series,
        k_max,
        &cfg.drift_block_lengths,
        cfg.drift_threshold,
        &FitOptions::with_seed(derive_seed(cfg.seed, 300)),
    )?;
    out.write("shape_drift.csv", |w| write_shape_drift_csv(&drift, w, fmt))?;
    Ok(())
}

/// Runs every stage and writes `manifest.json` last, marking the bundle
/// incomplete when a stage fails (artifacts written so far are kept).
pub fn run_pipeline(cfg: &RunConfig) -> Result<Manifest> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut manifest = Manifest {
        version: MANIFEST_VERSION,
        complete: false,
        seed: cfg.seed,
        ks: cfg.ks.clone(),
        files: Vec::new(),
        warnings: cfg.warnings(),
        failure: None,
    };
    let result = run_stages(cfg, &mut manifest);
    manifest.complete = result.is_ok();
    manifest.failure = result.as_ref().err().map(|e| e.to_string());
    let path = cfg.out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    result.map(|()| manifest)
}
