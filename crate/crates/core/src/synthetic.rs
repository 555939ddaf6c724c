//! Seeded generators with known extreme-value behaviour: i.i.d. GEV draws,
//! moving maxima of unit Fréchet noise (extremal index `1/r`), draws from a
//! covariate-linked GEV, and complete synthetic station datasets.

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{BlockMaximaRow, BlockMaximaTable};
use crate::gev::GevParams;
use crate::ingest::{
    covariate_row, days_in_year, write_daily_csv, write_soi_csv, write_station_csv, yearly_soi, CovariateRow,
    Covariates, DailySeries, SoiSeries, StationMeta,
};
use crate::link::{CovariateMask, LinkModel};
use crate::rng::{derive_seed, Xoshiro256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    IidGev { params: GevParams },
    MovingMaximum { r: usize, marginal: GevParams },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub n: usize,
    pub seed: u64,
}

pub fn generate(spec: &GeneratorSpec) -> Result<Vec<f64>> {
    match &spec.kind {
        GeneratorKind::IidGev { params } => sample_iid_gev(params, spec.n, spec.seed),
        GeneratorKind::MovingMaximum { r, marginal } => sample_moving_maximum(*r, spec.n, spec.seed, marginal),
    }
}

fn check_scale(p: &GevParams) -> Result<()> {
    if p.sigma > 0.0 && p.sigma.is_finite() && p.mu.is_finite() && p.xi.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("invalid GEV parameters {p:?}")))
    }
}

/// Inverse-CDF draws from a GEV.
pub fn sample_iid_gev(params: &GevParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    check_scale(params)?;
    let mut rng = Xoshiro256::new(seed);
    Ok((0..n).map(|_| params.quantile_from_y(-rng.next_f64().ln())).collect())
}

/// `X_t = max_{j<r} W_{t-j} / r` for i.i.d. unit Fréchet `W`, mapped to the
/// requested marginal. The extremal index is `1/r`.
pub fn sample_moving_maximum(r: usize, n: usize, seed: u64, marginal: &GevParams) -> Result<Vec<f64>> {
    if r < 1 {
        return Err(Error::Argument(format!("moving-maximum order must be >= 1, got {r}")));
    }
    check_scale(marginal)?;
    if !(marginal.xi > 0.0) {
        return Err(Error::Argument(format!(
            "moving-maximum marginal must be of Frechet type (xi > 0), got {}",
            marginal.xi
        )));
    }
    let mut rng = Xoshiro256::new(seed);
    Ok(moving_maxima(&mut rng, r, n)
        .into_iter()
        .map(|m| marginal.quantile_from_y(r as f64 / m))
        .collect())
}

/// Running maxima of `r` consecutive unit Fréchet draws (`r - 1` warm-up draws).
fn moving_maxima(rng: &mut Xoshiro256, r: usize, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n + r - 1).map(|_| rng.next_unit_frechet()).collect();
    if r == 1 {
        return w;
    }
    w.windows(r).map(|win| win.iter().copied().fold(f64::MIN, f64::max)).collect()
}

/// One draw per row from `GEV(mu_t, sigma_t, xi)`; rows get `k = 1`.
pub fn sample_linked_gev(model: &LinkModel, rows: &[CovariateRow], seed: u64) -> Result<BlockMaximaTable> {
    let mut rng = Xoshiro256::new(seed);
    let out = rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let sigma = model.scale(&row.covariates);
            if !(sigma > 0.0) {
                return Err(Error::Infeasible(format!(
                    "row {i} (station {} year {}): scale {sigma} is not positive",
                    row.station_id, row.year
                )));
            }
            let params = GevParams {
                mu: model.location(&row.covariates),
                sigma,
                xi: model.xi,
            };
            Ok(BlockMaximaRow {
                station_id: row.station_id.clone(),
                year: row.year,
                k: 1,
                block_max: params.quantile_from_y(-rng.next_f64().ln()),
                covariates: row.covariates,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockMaximaTable::new(out))
}

/// Covariate-model presets for synthetic datasets, calibrated so that annual
/// maxima resemble daily rainfall extremes in mm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Ladder model 0.
    Stationary,
    /// Ladder model 1 (SOI only).
    Soi,
    /// Ladder model 4 (all regressors).
    Full,
}

impl Preset {
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "0" | "stationary" => Ok(Self::Stationary),
            "1" | "soi" => Ok(Self::Soi),
            "4" | "full" => Ok(Self::Full),
            other => Err(Error::Argument(format!(
                "unknown synthetic model '{other}' (expected stationary|soi|full or 0|1|4)"
            ))),
        }
    }

    pub fn model(self) -> LinkModel {
        use crate::link::Regressor::Soi;
        match self {
            Self::Stationary => LinkModel::new([60.0, 0.0, 0.0, 0.0, 0.0], [20.0, 0.0, 0.0, 0.0, 0.0], 0.15, CovariateMask::STATIONARY),
            Self::Soi => LinkModel::new([60.0, 1.2, 0.0, 0.0, 0.0], [20.0, 0.4, 0.0, 0.0, 0.0], 0.15, CovariateMask::of(&[Soi])),
            Self::Full => LinkModel::new(
                [60.0, 1.0, -6.0, 1.0, 0.3],
                [40.0, 0.3, -1.5, 0.4, 0.05],
                0.15,
                CovariateMask::FULL,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_stations: usize,
    pub start_year: i32,
    pub n_years: usize,
    /// Moving-maximum order of the daily process (storm duration in days).
    pub r: usize,
    /// Model of the annual maxima of daily totals.
    pub model: LinkModel,
    /// Probability that a day is recorded as missing.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_stations: 20,
            start_year: 1980,
            n_years: 30,
            r: 3,
            model: Preset::Soi.model(),
            missing_rate: 0.0005,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub series: Vec<DailySeries>,
    pub stations: Vec<StationMeta>,
    pub soi: SoiSeries,
}

/// Monthly SOI: a yearly level `N(0, 7²)` plus monthly noise `N(0, 4²)`,
/// rounded to 0.1.
fn synthetic_soi(start_year: i32, n_years: usize, seed: u64) -> Result<SoiSeries> {
    let mut rng = Xoshiro256::new(seed);
    let mut entries = Vec::with_capacity(n_years * 12);
    for y in 0..n_years {
        let level = 7.0 * rng.next_normal();
        for m in 1..=12 {
            let v = level + 4.0 * rng.next_normal();
            entries.push(((start_year + y as i32, m), (v * 10.0).round() / 10.0));
        }
    }
    SoiSeries::new(entries)
}

fn synthetic_stations(n: usize, seed: u64) -> Result<Vec<StationMeta>> {
    let mut rng = Xoshiro256::new(seed);
    (0..n)
        .map(|i| {
            let lat = -38.0 + 26.0 * rng.next_f64();
            let lon = 140.0 + 13.0 * rng.next_f64();
            let cdist = (0.5f64.ln() + (800.0f64).ln() * rng.next_f64()).exp();
            let round = |x: f64, d: f64| (x * d).round() / d;
            StationMeta::new(format!("S{:03}", i + 1), round(lat, 1e4), round(lon, 1e4), round(cdist, 1e2))
        })
        .collect()
}

/// Daily totals whose calendar-year maxima follow `model` at the station's
/// covariates: `X = max(0, G_t^{-1}(exp(-D/M)))`, with `M` the order-`r`
/// moving maximum of unit Fréchet noise and `D` the days in the year,
/// rounded to 0.1 mm.
fn synthetic_series(
    meta: &StationMeta,
    yearly: &[(i32, f64)],
    cfg: &SyntheticConfig,
    seed: u64,
) -> Result<DailySeries> {
    let mut rng = Xoshiro256::new(seed);
    let mut gaps = Xoshiro256::new(derive_seed(seed, 0));
    let total: usize = yearly.iter().map(|(y, _)| days_in_year(*y) as usize).sum();
    let m = moving_maxima(&mut rng, cfg.r, total);
    let mut values = Vec::with_capacity(total);
    let mut t = 0;
    for &(year, soi) in yearly {
        let c = Covariates::for_station(meta, soi);
        let sigma = cfg.model.scale(&c);
        if !(sigma > 0.0) {
            return Err(Error::Infeasible(format!(
                "station {} year {year}: scale {sigma} is not positive",
                meta.station_id
            )));
        }
        let params = GevParams {
            mu: cfg.model.location(&c),
            sigma,
            xi: cfg.model.xi,
        };
        let d = days_in_year(year) as f64;
        for _ in 0..days_in_year(year) {
            let x = params.quantile_from_y(d / m[t]).max(0.0);
            t += 1;
            let missing = gaps.next_f64() < cfg.missing_rate;
            values.push((!missing).then_some((x * 10.0).round() / 10.0));
        }
    }
    let start = NaiveDate::from_ymd_opt(cfg.start_year, 1, 1)
        .ok_or_else(|| Error::Argument(format!("invalid start year {}", cfg.start_year)))?;
    DailySeries::new(meta.station_id.clone(), start, values)
}

pub fn synthetic_dataset(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    if cfg.n_stations < 1 || cfg.n_years < 1 || cfg.r < 1 {
        return Err(Error::Argument("synthetic dataset needs at least one station, one year and r >= 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.missing_rate) {
        return Err(Error::Argument(format!("missing rate {} outside [0, 1)", cfg.missing_rate)));
    }
    let soi = synthetic_soi(cfg.start_year, cfg.n_years, derive_seed(cfg.seed, 0))?;
    let stations = synthetic_stations(cfg.n_stations, derive_seed(cfg.seed, 1))?;
    let yearly: Vec<(i32, f64)> = (0..cfg.n_years as i32)
        .map(|i| {
            let y = cfg.start_year + i;
            yearly_soi(&soi, y).map(|s| (y, s))
        })
        .collect::<Result<_>>()?;
    let series = stations
        .iter()
        .enumerate()
        .map(|(i, meta)| synthetic_series(meta, &yearly, cfg, derive_seed(cfg.seed, 2 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset { series, stations, soi })
}

/// Covariate rows for the stations and SOI record that [`synthetic_dataset`]
/// would build from `cfg`, without generating the daily series.
pub fn synthetic_covariate_rows(cfg: &SyntheticConfig) -> Result<Vec<CovariateRow>> {
    let soi = synthetic_soi(cfg.start_year, cfg.n_years, derive_seed(cfg.seed, 0))?;
    let stations = synthetic_stations(cfg.n_stations, derive_seed(cfg.seed, 1))?;
    let mut rows = Vec::with_capacity(cfg.n_stations * cfg.n_years);
    for y in 0..cfg.n_years as i32 {
        for meta in &stations {
            rows.push(covariate_row(meta, &soi, cfg.start_year + y)?);
        }
    }
    Ok(rows)
}

/// Covariate rows for every station and year of a dataset.
pub fn dataset_covariates(dataset: &SyntheticDataset) -> Result<Vec<CovariateRow>> {
    let years = dataset.soi.complete_years();
    let mut rows = Vec::new();
    for meta in &dataset.stations {
        for &y in &years {
            rows.push(covariate_row(meta, &dataset.soi, y)?);
        }
    }
    Ok(rows)
}

/// Writes `daily/<station>.csv`, `stations.csv` and `soi.csv` under `dir`.
pub fn write_dataset(dataset: &SyntheticDataset, dir: &Path) -> Result<()> {
    let daily = dir.join("daily");
    std::fs::create_dir_all(&daily).map_err(|e| Error::io(&daily, e))?;
    for s in &dataset.series {
        let path = daily.join(format!("{}.csv", s.station_id()));
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_daily_csv(s, std::io::BufWriter::new(f))?;
    }
    let path = dir.join("stations.csv");
    let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_station_csv(&dataset.stations, std::io::BufWriter::new(f))?;
    let path = dir.join("soi.csv");
    let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_soi_csv(&dataset.soi, std::io::BufWriter::new(f))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extremal::{exceedances_of, ferro_segers, EstimatorForm};
    use crate::functionals::{block_maxima, windowed_min};
    use crate::ingest::quality_filter;

    fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
        let mut s = sample.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        s.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn iid_edges_and_determinism() {
        let g = GevParams::gumbel(0.0, 1.0);
        assert!(sample_iid_gev(&g, 0, 1).unwrap().is_empty());
        assert_eq!(sample_iid_gev(&g, 50, 9).unwrap(), sample_iid_gev(&g, 50, 9).unwrap());
        assert_ne!(sample_iid_gev(&g, 50, 9).unwrap(), sample_iid_gev(&g, 50, 10).unwrap());
        assert!(sample_iid_gev(&GevParams { mu: 0.0, sigma: -1.0, xi: 0.0 }, 5, 1).is_err());
    }

    #[test]
    fn iid_marginal() {
        let g = GevParams::gumbel(0.0, 1.0);
        let x = sample_iid_gev(&g, 100_000, 3).unwrap();
        assert!(ks_distance(&x, |v| g.cdf(v)) < 0.01);
    }

    #[test]
    fn moving_maximum_marginal_and_order() {
        let g = GevParams::new(10.0, 2.0, 0.2).unwrap();
        for r in [1, 2, 5] {
            let x = sample_moving_maximum(r, 100_000, 17, &g).unwrap();
            assert_eq!(x.len(), 100_000);
            // values r apart share no noise term, so the thinned series is i.i.d.
            let thinned: Vec<f64> = x.iter().step_by(r).copied().collect();
            // 0.1% Kolmogorov critical value
            let bound = 1.95 / (thinned.len() as f64).sqrt();
            assert!(ks_distance(&thinned, |v| g.cdf(v)) < bound, "r={r}");
        }
        assert!(sample_moving_maximum(0, 10, 1, &g).is_err());
        assert!(sample_moving_maximum(2, 10, 1, &GevParams::gumbel(0.0, 1.0)).is_err());
        // r = 1 is plain i.i.d. Frechet sampling
        let a = sample_moving_maximum(1, 20, 5, &g).unwrap();
        let b = sample_iid_gev(&g, 20, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn moving_maximum_theta() {
        let g = GevParams::new(0.0, 1.0, 0.5).unwrap();
        let x = sample_moving_maximum(3, 50_000, 8, &g).unwrap();
        let x: Vec<Option<f64>> = x.into_iter().map(Some).collect();
        let rec = exceedances_of(&x, 0.95).unwrap();
        let est = ferro_segers(&rec, EstimatorForm::Standard).unwrap();
        assert!((est.theta - 1.0 / 3.0).abs() < 0.1, "{}", est.theta);
        let x = sample_moving_maximum(2, 50_000, 8, &g).unwrap();
        let x: Vec<Option<f64>> = x.into_iter().map(Some).collect();
        let rec = exceedances_of(&x, 0.99).unwrap();
        let sizes = rec.run_cluster_sizes();
        let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        assert!((mean - 2.0).abs() < 0.25, "{mean}");
    }

    #[test]
    fn linked_draws() {
        let rows: Vec<CovariateRow> = (0..5)
            .map(|i| CovariateRow {
                station_id: format!("s{i}"),
                year: 2000,
                covariates: Covariates { soi: i as f64, log_cdist: 1.0, lat: -20.0, lon: 150.0 },
            })
            .collect();
        let m = LinkModel::new([5.0, 0.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0, 0.0], 0.1, CovariateMask::STATIONARY);
        let t = sample_linked_gev(&m, &rows, 4).unwrap();
        assert_eq!(t.len(), 5);
        let bad = LinkModel::new([5.0, 0.0, 0.0, 0.0, 0.0], [1.0, -0.5, 0.0, 0.0, 0.0], 0.1, CovariateMask::FULL);
        let err = sample_linked_gev(&bad, &rows, 4).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn dataset_is_deterministic_and_consistent() {
        let cfg = SyntheticConfig { n_stations: 2, n_years: 4, ..SyntheticConfig::default() };
        let a = synthetic_dataset(&cfg).unwrap();
        assert_eq!(a, synthetic_dataset(&cfg).unwrap());
        assert_eq!(a.series.len(), 2);
        assert_eq!(a.series[0].len(), 366 + 365 * 3);
        assert_eq!(a.soi.complete_years(), vec![1980, 1981, 1982, 1983]);
        for s in &a.series {
            assert_eq!(quality_filter(s).len(), 4);
            let w = windowed_min(s, 3).unwrap();
            assert_eq!(block_maxima(&w, &quality_filter(s)).maxima.len(), 4);
        }
        for p in [Preset::Stationary, Preset::Soi, Preset::Full] {
            let cfg = SyntheticConfig { n_stations: 20, n_years: 30, model: p.model(), ..cfg.clone() };
            assert!(synthetic_dataset(&cfg).is_ok(), "{p:?}");
        }
    }

    #[test]
    fn annual_maxima_follow_the_model() {
        let cfg = SyntheticConfig {
            n_stations: 1,
            n_years: 400,
            model: Preset::Stationary.model(),
            missing_rate: 0.0,
            start_year: 1600,
            ..SyntheticConfig::default()
        };
        let d = synthetic_dataset(&cfg).unwrap();
        let w = windowed_min(&d.series[0], 1).unwrap();
        let maxima: Vec<f64> = block_maxima(&w, &quality_filter(&d.series[0])).maxima.iter().map(|m| m.1).collect();
        let g = cfg.model.params_at(&Covariates::ZERO).unwrap();
        // 400 maxima: the 1% Kolmogorov critical value is about 0.08.
        assert!(ks_distance(&maxima, |v| g.cdf(v)) < 0.08);
    }
}
