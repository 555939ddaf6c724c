//! Extremal index of a daily series from inter-exceedance times.
//!
//! With `T_1..T_N` the gaps between successive exceedances of a high
//! threshold, the intervals estimator of Ferro and Segers (2003) is
//!
//! * `2 (Σ T)^2 / (N Σ T^2)` when every gap is at most 2, and
//! * `2 (Σ (T-1))^2 / (N Σ (T-1)(T-2))` otherwise,
//!
//! clamped to 1. `1/theta` is the mean number of exceedances per cluster.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::NumberFormat;
use crate::functionals::sliding_min;
use crate::ingest::DailySeries;

pub const DEFAULT_QUANTILE: f64 = 0.95;
pub const EI_HEADER: [&str; 7] = ["station_id", "k", "quantile", "theta", "cluster_size", "n_exceedances", "estimator_form"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExceedanceRecord {
    pub threshold: f64,
    pub quantile_level: f64,
    /// 1-based positions of values strictly above the threshold.
    pub times: Vec<usize>,
    /// Gaps between consecutive exceedance times, each at least 1.
    pub inter_times: Vec<usize>,
}

impl ExceedanceRecord {
    pub fn n_exceedances(&self) -> usize {
        self.times.len()
    }

    /// Number of inter-exceedance times (`N`).
    pub fn n(&self) -> usize {
        self.inter_times.len()
    }

    /// Sizes of runs of exceedances on consecutive days.
    pub fn run_cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        let mut current = 0usize;
        for (i, _) in self.times.iter().enumerate() {
            if i > 0 && self.inter_times[i - 1] > 1 {
                sizes.push(current);
                current = 0;
            }
            current += 1;
        }
        if current > 0 {
            sizes.push(current);
        }
        sizes
    }
}

/// Linear-interpolation (type 7) empirical quantile of the present values.
pub fn empirical_quantile(values: &[Option<f64>], level: f64) -> Option<f64> {
    let mut present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return None;
    }
    present.sort_by(f64::total_cmp);
    let h = (present.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(present[lo] + (h - lo as f64) * (present[hi] - present[lo]))
}

/// Exceedances of the empirical `quantile_level` quantile.
pub fn exceedances_of(values: &[Option<f64>], quantile_level: f64) -> Result<ExceedanceRecord> {
    if !(quantile_level > 0.0 && quantile_level < 1.0) {
        return Err(Error::Argument(format!("quantile level must lie in (0, 1), got {quantile_level}")));
    }
    let threshold = empirical_quantile(values, quantile_level)
        .ok_or_else(|| Error::Infeasible("series has no observed values".into()))?;
    exceedances_above(values, threshold, quantile_level)
}

/// Exceedances of an explicit threshold.
pub fn exceedances_above(values: &[Option<f64>], threshold: f64, quantile_level: f64) -> Result<ExceedanceRecord> {
    let times: Vec<usize> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.filter(|x| *x > threshold).map(|_| i + 1))
        .collect();
    if times.len() < 2 {
        return Err(Error::Infeasible(format!(
            "{} exceedance(s) above {threshold}; at least 2 are needed",
            times.len()
        )));
    }
    let inter_times = times.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(ExceedanceRecord {
        threshold,
        quantile_level,
        times,
        inter_times,
    })
}

pub fn exceedances(series: &DailySeries, quantile_level: f64) -> Result<ExceedanceRecord> {
    exceedances_of(series.values(), quantile_level)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EstimatorForm {
    /// Intervals estimator, moment or bias-corrected branch by maximum gap.
    #[default]
    Standard,
    /// `2 Σ T^2 / (N Σ T(T-1))`, kept for comparison with published tables.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormUsed {
    Moment,
    BiasCorrected,
    Printed,
}

impl FormUsed {
    pub fn label(self) -> &'static str {
        match self {
            FormUsed::Moment => "moment",
            FormUsed::BiasCorrected => "bias_corrected",
            FormUsed::Printed => "printed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalIndexEstimate {
    pub theta: f64,
    pub cluster_size: f64,
    pub threshold_quantile: f64,
    pub threshold: f64,
    pub n_exceedances: usize,
    /// Estimate before clamping at 1.
    pub raw: f64,
    pub clamped: bool,
    pub form: FormUsed,
    /// The printed form had a zero denominator and the standard pair was used.
    pub fallback: bool,
}

fn standard_pair(t: &[usize]) -> (f64, FormUsed) {
    let n = t.len() as f64;
    let max = t.iter().copied().max().unwrap_or(0);
    if max <= 2 {
        let sum: f64 = t.iter().map(|&x| x as f64).sum();
        let sum_sq: f64 = t.iter().map(|&x| (x * x) as f64).sum();
        (2.0 * sum * sum / (n * sum_sq), FormUsed::Moment)
    } else {
        let sum: f64 = t.iter().map(|&x| (x - 1) as f64).sum();
        let prod: f64 = t.iter().map(|&x| ((x - 1) * (x.saturating_sub(2))) as f64).sum();
        (2.0 * sum * sum / (n * prod), FormUsed::BiasCorrected)
    }
}

pub fn ferro_segers(record: &ExceedanceRecord, form: EstimatorForm) -> Result<ExtremalIndexEstimate> {
    let t = &record.inter_times;
    if t.len() < 2 {
        return Err(Error::Infeasible(format!(
            "{} inter-exceedance time(s); at least 2 are needed",
            t.len()
        )));
    }
    let (raw, used, fallback) = match form {
        EstimatorForm::Standard => {
            let (v, f) = standard_pair(t);
            (v, f, false)
        }
        EstimatorForm::Printed => {
            let n = t.len() as f64;
            let num: f64 = t.iter().map(|&x| (x * x) as f64).sum();
            let den: f64 = t.iter().map(|&x| (x * (x - 1)) as f64).sum();
            if den > 0.0 {
                (2.0 * num / (n * den), FormUsed::Printed, false)
            } else {
                let (v, f) = standard_pair(t);
                (v, f, true)
            }
        }
    };
    let theta = raw.min(1.0);
    Ok(ExtremalIndexEstimate {
        theta,
        cluster_size: 1.0 / theta,
        threshold_quantile: record.quantile_level,
        threshold: record.threshold,
        n_exceedances: record.n_exceedances(),
        raw,
        clamped: raw > 1.0,
        form: used,
        fallback,
    })
}

/// Extremal index of the windowed-minimum series of length-`k` windows.
pub fn theta_for_windowed(
    series: &DailySeries,
    k: usize,
    quantile_level: f64,
    form: EstimatorForm,
) -> Result<ExtremalIndexEstimate> {
    let y = sliding_min(series.values(), k)?;
    ferro_segers(&exceedances_of(&y, quantile_level)?, form)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalIndexRow {
    pub station_id: String,
    pub k: usize,
    pub estimate: ExtremalIndexEstimate,
}

pub fn write_ei_csv<W: Write>(rows: &[ExtremalIndexRow], writer: W, fmt: NumberFormat) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EI_HEADER)?;
    for r in rows {
        let e = &r.estimate;
        let form = if e.fallback {
            format!("{}_fallback", e.form.label())
        } else {
            e.form.label().to_string()
        };
        w.write_record([
            r.station_id.clone(),
            r.k.to_string(),
            fmt.fmt(e.threshold_quantile),
            fmt.fmt(e.theta),
            fmt.fmt(e.cluster_size),
            e.n_exceedances.to_string(),
            form,
        ])?;
    }
    w.flush().map_err(|e| Error::io("<extremal index csv>", e))?;
    Ok(())
}
