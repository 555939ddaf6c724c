//! Goodness-of-fit diagnostics on residuals standardized to the Gumbel scale.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::format::NumberFormat;
use crate::functionals::BlockMaximaTable;
use crate::special::normal_two_sided_p;

pub const QQ_HEADER: [&str; 2] = ["theoretical", "empirical"];
/// Largest tolerated share of rows outside the fitted support.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;
/// Standardized uniforms are clipped to `[CLIP, 1 - CLIP]`.
pub const CLIP: f64 = 1e-12;
pub const MIN_AD_SAMPLE: usize = 5;
pub const MIN_MK_SAMPLE: usize = 8;

/// Residuals `ξ⁻¹ ln(1 + ξ (x - μ_t)/σ_t)`, which are standard Gumbel under
/// the fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedSample {
    /// Residuals in table order.
    pub values: Vec<f64>,
    /// Year of each residual.
    pub years: Vec<i32>,
    pub excluded: usize,
    pub n_total: usize,
}

impl StandardizedSample {
    /// Residuals in year order; rows of the same year keep table order.
    pub fn time_ordered(&self) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by_key(|&i| self.years[i]);
        idx.into_iter().map(|i| self.values[i]).collect()
    }
}

pub fn standardize(table: &BlockMaximaTable, fit: &FitResult) -> Result<StandardizedSample> {
    if !fit.converged {
        return Err(Error::Numerical("cannot standardize with an unconverged fit".into()));
    }
    let mut values = Vec::with_capacity(table.len());
    let mut years = Vec::with_capacity(table.len());
    let mut excluded = 0usize;
    for row in &table.rows {
        if let Some(r) = fit.model.missing_regressor(&row.covariates) {
            return Err(Error::Data(format!(
                "station {} year {}: covariate {} missing",
                row.station_id,
                row.year,
                r.name()
            )));
        }
        let mu = fit.model.location(&row.covariates);
        let sigma = fit.model.scale(&row.covariates);
        let xi = fit.model.xi;
        if !(sigma > 0.0) {
            excluded += 1;
            continue;
        }
        let z = (row.block_max - mu) / sigma;
        let e = if xi.abs() < crate::gev::XI_SWITCH {
            z
        } else {
            let t = 1.0 + xi * z;
            if !(t > 0.0) {
                excluded += 1;
                continue;
            }
            (xi * z).ln_1p() / xi
        };
        values.push(e);
        years.push(row.year);
    }
    let n_total = table.len();
    if n_total > 0 && excluded as f64 > MAX_EXCLUDED_FRACTION * n_total as f64 {
        return Err(Error::Numerical(format!(
            "{excluded} of {n_total} observations fall outside the fitted support"
        )));
    }
    Ok(StandardizedSample {
        values,
        years,
        excluded,
        n_total,
    })
}

/// Sorted residuals against Gumbel plotting positions `-ln(-ln(i/(n+1)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantilePlotData {
    pub empirical: Vec<f64>,
    pub theoretical: Vec<f64>,
}

pub fn gumbel_plotting_positions(n: usize) -> Vec<f64> {
    (1..=n).map(|i| -(-(i as f64 / (n as f64 + 1.0)).ln()).ln()).collect()
}

pub fn quantile_plot_data(sample: &[f64]) -> Result<QuantilePlotData> {
    if sample.len() < 2 {
        return Err(Error::Infeasible(format!("quantile plot needs at least 2 points, got {}", sample.len())));
    }
    let mut empirical = sample.to_vec();
    empirical.sort_by(f64::total_cmp);
    Ok(QuantilePlotData {
        theoretical: gumbel_plotting_positions(sample.len()),
        empirical,
    })
}

pub fn write_qq_csv<W: Write>(data: &QuantilePlotData, writer: W, fmt: NumberFormat) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(QQ_HEADER)?;
    for (e, t) in data.empirical.iter().zip(&data.theoretical) {
        w.write_record([fmt.fmt(*t), fmt.fmt(*e)])?;
    }
    w.flush().map_err(|e| Error::io("<qq csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    /// Uniforms clipped away from 0 or 1 (Anderson-Darling only).
    pub clipped: usize,
}

/// `A²` for values already transformed to uniforms, clipped at [`CLIP`].
/// Returns the statistic and the number of clipped values.
pub fn anderson_darling_statistic(uniforms: &[f64]) -> (f64, usize) {
    let mut u = uniforms.to_vec();
    u.sort_by(f64::total_cmp);
    let mut clipped = 0;
    for v in &mut u {
        let c = v.clamp(CLIP, 1.0 - CLIP);
        if c != *v {
            clipped += 1;
            *v = c;
        }
    }
    let n = u.len();
    let nf = n as f64;
    let s: f64 = (0..n)
        .map(|i| (2.0 * i as f64 + 1.0) * (u[i].ln() + (-u[n - 1 - i]).ln_1p()))
        .sum();
    (-nf - s / nf, clipped)
}

/// Limiting distribution of `A²` for a fully specified null.
fn ad_inf(z: f64) -> f64 {
    if z < 2.0 {
        (-1.2337141 / z).exp() / z.sqrt()
            * (2.00012
                + (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z) * z)
    } else {
        (-(1.0776 - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z).exp()).exp()
    }
}

/// Finite-sample correction to [`ad_inf`].
fn ad_err_fix(n: f64, x: f64) -> f64 {
    if x > 0.8 {
        return (-130.2137 + (745.2337 - (1705.091 - (1950.646 - (1116.360 - 255.7844 * x) * x) * x) * x) * x) / n;
    }
    let c = 0.01265 + 0.1757 / n;
    if x < c {
        let t = x / c;
        let t = t.sqrt() * (1.0 - t) * (49.0 * t - 102.0);
        return t * (0.0037 / (n * n) + 0.00078 / n + 0.00006) / n;
    }
    let t = (x - c) / (0.8 - c);
    let t = -0.00022633 + (6.54034 - (14.6538 - (14.458 - (8.259 - 1.91864 * t) * t) * t) * t) * t;
    t * (0.04213 / n + 0.01365 / (n * n)) / n
}

/// `P(A² <= z)` for a sample of size `n` under a fully specified null.
pub fn anderson_darling_cdf(n: usize, z: f64) -> f64 {
    if !(z > 0.0) {
        return 0.0;
    }
    let x = ad_inf(z);
    (x + ad_err_fix(n as f64, x)).clamp(0.0, 1.0)
}

/// Anderson-Darling test of standard Gumbel residuals.
pub fn anderson_darling_gumbel(sample: &[f64]) -> Result<TestResult> {
    if sample.len() < MIN_AD_SAMPLE {
        return Err(Error::Infeasible(format!(
            "Anderson-Darling needs at least {MIN_AD_SAMPLE} values, got {}",
            sample.len()
        )));
    }
    let u: Vec<f64> = sample.iter().map(|&x| (-(-x).exp()).exp()).collect();
    let (a2, clipped) = anderson_darling_statistic(&u);
    Ok(TestResult {
        name: "anderson_darling".into(),
        statistic: a2,
        p_value: 1.0 - anderson_darling_cdf(sample.len(), a2),
        n: sample.len(),
        clipped,
    })
}

/// Mann-Kendall trend test. The statistic reported is Kendall's tau; the
/// p-value is two-sided from the tie-corrected normal approximation with a
/// continuity correction.
pub fn mann_kendall(series: &[f64]) -> Result<TestResult> {
    let n = series.len();
    if n < MIN_MK_SAMPLE {
        return Err(Error::Infeasible(format!(
            "Mann-Kendall needs at least {MIN_MK_SAMPLE} values, got {n}"
        )));
    }
    let mut s: i64 = 0;
    for i in 0..n {
        let xi = series[i];
        for &xj in &series[i + 1..] {
            s += (xj > xi) as i64 - (xj < xi) as i64;
        }
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j;
    }
    let nf = n as f64;
    let var = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - tie_term) / 18.0;
    let tau = s as f64 / (nf * (nf - 1.0) / 2.0);
    let p_value = if s == 0 || var <= 0.0 {
        1.0
    } else {
        let z = (s as f64 - (s.signum() as f64)) / var.sqrt();
        normal_two_sided_p(z)
    };
    Ok(TestResult {
        name: "mann_kendall".into(),
        statistic: tau,
        p_value,
        n,
        clipped: 0,
    })
}

/// Diagnostics of one fitted model, pooled over stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub model_id: Option<usize>,
    pub k: Option<usize>,
    pub n: usize,
    pub excluded: usize,
    pub anderson_darling: Option<TestResult>,
    pub mann_kendall: Option<TestResult>,
    pub notes: Vec<String>,
}

/// Standardizes and runs both tests; a test whose sample is too small is
/// omitted with a note rather than failing the run.
pub fn diagnose(table: &BlockMaximaTable, fit: &FitResult) -> Result<(DiagnosticsSummary, StandardizedSample)> {
    let sample = standardize(table, fit)?;
    let mut notes = Vec::new();
    let anderson_darling = anderson_darling_gumbel(&sample.values)
        .map_err(|e| notes.push(e.to_string()))
        .ok();
    let mann_kendall = mann_kendall(&sample.time_ordered())
        .map_err(|e| notes.push(e.to_string()))
        .ok();
    if let Some(ad) = &anderson_darling {
        if ad.clipped > 0 {
            notes.push(format!("{} uniforms clipped at {CLIP:e}", ad.clipped));
        }
    }
    Ok((
        DiagnosticsSummary {
            model_id: fit.model_id,
            k: fit.k,
            n: sample.values.len(),
            excluded: sample.excluded,
            anderson_darling,
            mann_kendall,
            notes,
        },
        sample,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_stationary, FitOptions};
    use crate::functionals::BlockMaximaRow;
    use crate::gev::GevParams;
    use crate::ingest::Covariates;
    use crate::rng::Xoshiro256;
    use proptest::prelude::*;

    #[test]
    fn plotting_positions_small() {
        let p = gumbel_plotting_positions(3);
        for (a, b) in p.iter().zip([-0.326_634_3, 0.366_512_9, 1.245_899_3]) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!(quantile_plot_data(&[1.0]).is_err());
        let d = quantile_plot_data(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(d.empirical, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn ad_two_point_hand_value() {
        let (a2, clipped) = anderson_darling_statistic(&[0.25, 0.75]);
        let expected = -2.0 - 0.5 * (0.25f64.ln() + 0.25f64.ln() + 3.0 * (0.75f64.ln() + 0.75f64.ln()));
        assert!((a2 - expected).abs() < 1e-12);
        assert!((a2 - 0.2493).abs() < 1e-4);
        assert_eq!(clipped, 0);
    }

    #[test]
    fn ad_asymptotic_critical_values() {
        for (z, level) in [(1.933, 0.90), (2.492, 0.95), (3.857, 0.99)] {
            let p = anderson_darling_cdf(100_000, z);
            assert!((p - level).abs() < 1e-3, "A2={z}: {p}");
        }
    }

    #[test]
    fn ad_cdf_matches_simulation() {
        // Monte Carlo oracle for n = 10.
        let n = 10;
        let reps = 40_000;
        let mut rng = Xoshiro256::new(77);
        let mut stats: Vec<f64> = (0..reps)
            .map(|_| {
                let u: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
                anderson_darling_statistic(&u).0
            })
            .collect();
        stats.sort_by(f64::total_cmp);
        for q in [0.5, 0.9, 0.95, 0.99] {
            let z = stats[(q * reps as f64) as usize];
            let p = anderson_darling_cdf(n, z);
            assert!((p - q).abs() < 0.006, "q={q} z={z} cdf={p}");
        }
    }

    #[test]
    fn ad_clips_extremes() {
        let r = anderson_darling_gumbel(&[-50.0, 0.0, 0.5, 1.0, 60.0]).unwrap();
        assert_eq!(r.clipped, 2);
        assert!(r.statistic.is_finite());
        assert!(anderson_darling_gumbel(&[0.0; 4]).is_err());
    }

    #[test]
    fn mann_kendall_examples() {
        let short = mann_kendall(&[1.0, 3.0, 2.0, 4.0]);
        assert!(short.is_err());
        // tau itself for the four-point example
        let r = mann_kendall(&[1.0, 3.0, 2.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let s: f64 = 28.0 - 2.0; // one discordant pair
        assert!((r.statistic - s / 28.0).abs() < 1e-12);
        let flat = mann_kendall(&[2.0; 10]).unwrap();
        assert_eq!((flat.statistic, flat.p_value), (0.0, 1.0));
        let up = mann_kendall(&(0..30).map(f64::from).collect::<Vec<_>>()).unwrap();
        assert_eq!(up.statistic, 1.0);
        assert!(up.p_value < 1e-6);
    }

    #[test]
    fn mann_kendall_tau_definition() {
        // S for [1,3,2,4] is 4, tau = 4/6; checked through the pair count.
        let x = [1.0, 3.0, 2.0, 4.0];
        let mut s = 0i32;
        for i in 0..4 {
            for j in i + 1..4 {
                s += (x[j] > x[i]) as i32 - ((x[j] < x[i]) as i32);
            }
        }
        assert_eq!(s, 4);
    }

    #[test]
    fn mann_kendall_p_value_against_normal_oracle() {
        let x = [5.0, 1.0, 4.0, 2.0, 8.0, 6.0, 9.0, 7.0, 3.0, 10.0];
        let r = mann_kendall(&x).unwrap();
        let mut s = 0i64;
        for i in 0..10 {
            for j in i + 1..10 {
                s += ((x[j] > x[i]) as i64) - ((x[j] < x[i]) as i64);
            }
        }
        let var: f64 = 10.0 * 9.0 * 25.0 / 18.0;
        let z = (s as f64 - 1.0) / var.sqrt();
        let oracle = 2.0 * (1.0 - statrs::distribution::ContinuousCDF::cdf(&statrs::distribution::Normal::new(0.0, 1.0).unwrap(), z));
        assert!((r.p_value - oracle).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn mann_kendall_antisymmetric(x in proptest::collection::vec(-100.0f64..100.0, 8..40)) {
            let a = mann_kendall(&x).unwrap();
            let rev: Vec<f64> = x.iter().rev().copied().collect();
            let b = mann_kendall(&rev).unwrap();
            prop_assert!((a.statistic + b.statistic).abs() < 1e-12);
            prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }

        #[test]
        fn ad_statistic_nonnegative(u in proptest::collection::vec(0.0f64..1.0, 5..50)) {
            let (a2, _) = anderson_darling_statistic(&u);
            prop_assert!(a2 >= 0.0 && a2.is_finite());
        }
    }

    fn table(values: &[f64]) -> BlockMaximaTable {
        BlockMaximaTable::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| BlockMaximaRow {
                    station_id: "s".into(),
                    year: 1900 + i as i32,
                    k: 1,
                    block_max: v,
                    covariates: Covariates::ZERO,
                })
                .collect(),
        )
    }

    #[test]
    fn standardized_residuals_are_gumbel_under_the_truth() {
        let truth = GevParams::new(10.0, 2.0, 0.2).unwrap();
        let mut rng = Xoshiro256::new(5);
        let data: Vec<f64> = (0..400).map(|_| truth.quantile(rng.next_f64()).unwrap()).collect();
        let mut fit = fit_stationary(&data, &FitOptions::default()).unwrap();
        fit.model.mu[0] = truth.mu;
        fit.model.sigma[0] = truth.sigma;
        fit.model.xi = truth.xi;
        let (summary, sample) = diagnose(&table(&data), &fit).unwrap();
        assert_eq!(sample.excluded, 0);
        assert!(summary.anderson_darling.unwrap().p_value > 0.01);
        for (x, e) in data.iter().zip(&sample.values) {
            let u_direct = truth.cdf(*x);
            let u_gumbel = (-(-e).exp()).exp();
            assert!((u_direct - u_gumbel).abs() < 1e-12);
        }
    }

    #[test]
    fn too_many_out_of_support_rows_fail() {
        let mut data = vec![10.0; 50];
        data[0] = -100.0;
        let mut fit = fit_stationary(&(0..50).map(|i| 10.0 + (i % 7) as f64).collect::<Vec<_>>(), &FitOptions::default()).unwrap();
        fit.model.xi = 0.5;
        fit.model.mu[0] = 10.0;
        fit.model.sigma[0] = 1.0;
        // one of 50 rows below the lower bound 8: 2% > 1%
        assert!(matches!(standardize(&table(&data), &fit), Err(Error::Numerical(_))));
    }
}
