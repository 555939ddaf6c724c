//! Return levels, aggregated scenario quantiles, ENSO exceedance comparisons,
//! SOI scenario simulation and the shape-drift diagnostic.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_stationary, FitOptions, FitResult};
use crate::format::NumberFormat;
use crate::functionals::{fixed_block_maxima, sliding_min};
use crate::gev::{GevParams, XI_SWITCH};
use crate::ingest::{Covariates, StationMeta};
use crate::link::Regressor;
use crate::rng::Xoshiro256;
use crate::special::normal_quantile;

pub const RETURN_LEVEL_HEADER: [&str; 5] = ["station_id", "k", "horizon_years", "p", "return_level_mm"];
pub const SHAPE_DRIFT_HEADER: [&str; 6] = ["k", "block_length", "n_blocks", "xi", "rel_error", "flagged"];
/// Relative shape error above which a window length is flagged.
pub const DEFAULT_DRIFT_THRESHOLD: f64 = 1.0;

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("exceedance probability must lie in (0, 1), got {p}")))
    }
}

/// Level exceeded with probability `p` per block: the `1/p` return level.
pub fn return_level(p: f64, params: &GevParams) -> Result<f64> {
    check_p(p)?;
    if !(params.sigma > 0.0) {
        return Err(Error::Argument(format!("GEV scale must be positive, got {}", params.sigma)));
    }
    Ok(params.quantile_from_y(-(-p).ln_1p()))
}

/// Scenario for an aggregated quantile: exceedance probability and one
/// yearly SOI value per horizon year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSpec {
    pub p: f64,
    /// `(year, yearly SOI)`; the horizon is its length.
    pub scenario: Vec<(i32, f64)>,
}

impl ReturnSpec {
    pub fn new(p: f64, scenario: Vec<(i32, f64)>) -> Result<Self> {
        check_p(p)?;
        if scenario.is_empty() {
            return Err(Error::Argument("scenario horizon must be at least one year".into()));
        }
        if let Some((year, _)) = scenario.iter().find(|(_, s)| !s.is_finite()) {
            return Err(Error::Argument(format!("scenario SOI for {year} is not finite")));
        }
        Ok(Self { p, scenario })
    }

    pub fn horizon(&self) -> usize {
        self.scenario.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedQuantile {
    pub value: f64,
    /// Per-year return levels `(year, z_p)`.
    pub per_year: Vec<(i32, f64)>,
}

fn params_for(fit: &FitResult, covariates: &Covariates, year: Option<i32>) -> Result<GevParams> {
    if let Some(r) = fit.model.missing_regressor(covariates) {
        return Err(Error::Data(format!("covariate {} missing", r.name())));
    }
    let sigma = fit.model.scale(covariates);
    if !(sigma > 0.0) {
        let when = year.map(|y| format!(" in {y}")).unwrap_or_default();
        return Err(Error::Scenario(format!("fitted scale {sigma} is not positive{when}")));
    }
    Ok(GevParams {
        mu: fit.model.location(covariates),
        sigma,
        xi: fit.model.xi,
    })
}

/// Mean over the horizon of the per-year return levels. Spatial covariates
/// are those of `station`; only SOI varies by year.
pub fn aggregated_quantile(spec: &ReturnSpec, fit: &FitResult, station: &StationMeta) -> Result<AggregatedQuantile> {
    if !fit.converged {
        return Err(Error::Numerical("aggregated quantile needs a converged fit".into()));
    }
    let per_year = spec
        .scenario
        .iter()
        .map(|&(year, soi)| {
            let params = params_for(fit, &Covariates::for_station(station, soi), Some(year))?;
            Ok((year, return_level(spec.p, &params)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let value = per_year.iter().map(|(_, z)| z).sum::<f64>() / per_year.len() as f64;
    Ok(AggregatedQuantile { value, per_year })
}

/// `P(Z > z)` under the fitted model at the given covariates.
pub fn exceedance_probability(z: f64, covariates: &Covariates, fit: &FitResult) -> Result<f64> {
    Ok(params_for(fit, covariates, None)?.sf(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentIncrease {
    /// `100 (p_la_nina - p_el_nino)`, percentage points.
    pub points: f64,
    /// `100 (p_la_nina - p_el_nino) / p_el_nino`.
    pub relative: f64,
}

pub fn percent_increase(p_la_nina: f64, p_el_nino: f64) -> Result<PercentIncrease> {
    check_p(p_la_nina)?;
    check_p(p_el_nino)?;
    let diff = p_la_nina - p_el_nino;
    Ok(PercentIncrease {
        points: 100.0 * diff,
        relative: 100.0 * diff / p_el_nino,
    })
}

/// La Niña versus El Niño comparison at one station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsoComparison {
    pub threshold_mm: f64,
    pub p_la_nina: f64,
    pub p_el_nino: f64,
    pub increase: PercentIncrease,
}

/// The threshold is the level exceeded with probability `p_reference` under
/// the La Niña SOI; the El Niño probability is evaluated at that threshold.
pub fn enso_comparison(
    fit: &FitResult,
    station: &StationMeta,
    soi_la_nina: f64,
    soi_el_nino: f64,
    p_reference: f64,
) -> Result<EnsoComparison> {
    let la = params_for(fit, &Covariates::for_station(station, soi_la_nina), None)?;
    let threshold_mm = return_level(p_reference, &la)?;
    let p_la_nina = la.sf(threshold_mm);
    let p_el_nino = exceedance_probability(threshold_mm, &Covariates::for_station(station, soi_el_nino), fit)?;
    Ok(EnsoComparison {
        threshold_mm,
        p_la_nina,
        p_el_nino,
        increase: percent_increase(p_la_nina, p_el_nino)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoiScenario {
    pub years: usize,
    pub values: Vec<f64>,
    pub seed: u64,
}

/// `m` draws with replacement from historical yearly SOI values.
pub fn simulate_soi(history: &[f64], m: usize, seed: u64) -> Result<SoiScenario> {
    if history.is_empty() {
        return Err(Error::Argument("SOI history is empty".into()));
    }
    if m < 1 {
        return Err(Error::Argument("scenario horizon must be at least one year".into()));
    }
    let mut rng = Xoshiro256::new(seed);
    let values = (0..m).map(|_| history[rng.next_index(history.len())]).collect();
    Ok(SoiScenario { years: m, values, seed })
}

/// Delta-method confidence interval for a return level at fixed covariates.
/// `None` when the fit carries no covariance.
pub fn return_level_ci(p: f64, covariates: &Covariates, fit: &FitResult, level: f64) -> Result<Option<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let params = params_for(fit, covariates, None)?;
    let z = return_level(p, &params)?;
    let Some(cov) = &fit.covariance else { return Ok(None) };
    let y = -(-p).ln_1p();
    let g = |xi: f64| {
        if xi.abs() < XI_SWITCH {
            -y.ln()
        } else {
            (-xi * y.ln()).exp_m1() / xi
        }
    };
    let mut x = vec![1.0];
    x.extend(fit.model.mask.active().map(|r: Regressor| r.value(covariates)));
    let mut grad: Vec<f64> = x.clone();
    grad.extend(x.iter().map(|v| v * g(params.xi)));
    if !fit.xi_fixed {
        let h = 1e-6 * (1.0 + params.xi.abs());
        grad.push(params.sigma * (g(params.xi + h) - g(params.xi - h)) / (2.0 * h));
    }
    if cov.len() != grad.len() {
        return Err(Error::Numerical("covariance does not match the free parameters".into()));
    }
    let var: f64 = (0..grad.len())
        .map(|i| (0..grad.len()).map(|j| grad[i] * cov[i][j] * grad[j]).sum::<f64>())
        .sum();
    if !(var >= 0.0) {
        return Ok(None);
    }
    let half = normal_quantile(0.5 + level / 2.0) * var.sqrt();
    Ok(Some((z - half, z + half)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnLevelRow {
    pub station_id: String,
    pub k: usize,
    pub horizon_years: usize,
    pub p: f64,
    pub return_level_mm: f64,
}

pub fn write_return_levels_csv<W: Write>(rows: &[ReturnLevelRow], writer: W, fmt: NumberFormat) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RETURN_LEVEL_HEADER)?;
    for r in rows {
        w.write_record([
            r.station_id.clone(),
            r.k.to_string(),
            r.horizon_years.to_string(),
            fmt.fmt(r.p),
            fmt.fmt(r.return_level_mm),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<return level csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeDriftRow {
    pub k: usize,
    pub block_length: usize,
    pub n_blocks: usize,
    /// `None` when the cell is unavailable (too few blocks or no convergence).
    pub xi: Option<f64>,
    /// `|xi_k - xi_1| / |xi_1|` within the same block length.
    pub rel_error: Option<f64>,
    pub flagged: bool,
}

fn drift_rows(maxima_by_k: &[(usize, Vec<f64>)], block_length: usize, threshold: f64, options: &FitOptions) -> Vec<ShapeDriftRow> {
    let fits: Vec<(usize, usize, Option<f64>)> = maxima_by_k
        .iter()
        .map(|(k, maxima)| {
            let xi = fit_stationary(maxima, options)
                .ok()
                .filter(|f| f.converged)
                .map(|f| f.model.xi);
            (*k, maxima.len(), xi)
        })
        .collect();
    let base = fits.iter().find(|(k, _, _)| *k == 1).and_then(|f| f.2);
    fits.into_iter()
        .map(|(k, n_blocks, xi)| {
            let rel_error = match (xi, base) {
                (Some(_), Some(_)) if k == 1 => Some(0.0),
                (Some(x), Some(b)) => Some((x - b).abs() / b.abs()),
                _ => None,
            };
            ShapeDriftRow {
                k,
                block_length,
                n_blocks,
                xi,
                flagged: rel_error.is_some_and(|e| e > threshold),
                rel_error,
            }
        })
        .collect()
}

/// Shape drift from block maxima already computed per window length `k`
/// (`k = 1` must be present for relative errors).
pub fn shape_drift_from_maxima(
    maxima_by_k: &[(usize, Vec<f64>)],
    block_length: usize,
    threshold: f64,
    options: &FitOptions,
) -> Vec<ShapeDriftRow> {
    drift_rows(maxima_by_k, block_length, threshold, options)
}

/// Fits a stationary GEV to fixed-length block maxima of the windowed
/// minima for every `k <= k_max` and block length, pooling the blocks of
/// all series.
pub fn shape_drift_report(
    series: &[Vec<Option<f64>>],
    k_max: usize,
    block_lengths: &[usize],
    threshold: f64,
    options: &FitOptions,
) -> Result<Vec<ShapeDriftRow>> {
    if k_max < 1 {
        return Err(Error::Argument("k_max must be at least 1".into()));
    }
    if block_lengths.iter().any(|&b| b < 1) {
        return Err(Error::Argument("block lengths must be positive".into()));
    }
    let mut windowed = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let per_series = series.iter().map(|s| sliding_min(s, k)).collect::<Result<Vec<_>>>()?;
        windowed.push((k, per_series));
    }
    let mut rows = Vec::new();
    for &block_length in block_lengths {
        let maxima: Vec<(usize, Vec<f64>)> = windowed
            .iter()
            .map(|(k, per_series)| {
                (*k, per_series.iter().flat_map(|w| fixed_block_maxima(w, block_length)).collect())
            })
            .collect();
        rows.extend(drift_rows(&maxima, block_length, threshold, options));
    }
    Ok(rows)
}

pub fn write_shape_drift_csv<W: Write>(rows: &[ShapeDriftRow], writer: W, fmt: NumberFormat) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SHAPE_DRIFT_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| fmt.fmt(x)).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.block_length.to_string(),
            r.n_blocks.to_string(),
            opt(r.xi),
            opt(r.rel_error),
            r.flagged.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<shape drift csv>", e))?;
    Ok(())
}
