//! Nested covariate ladder, information criteria and likelihood-ratio tests.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_mle_from, FitOptions, FitResult};
use crate::format::NumberFormat;
use crate::functionals::BlockMaximaTable;
use crate::link::{CovariateMask, Regressor};
use crate::rng::derive_seed;
use crate::special::chi_square_sf;

pub const SELECTION_HEADER: [&str; 9] = ["model", "k", "nll", "aic", "bic", "mk_stat", "mk_p", "ad_stat", "ad_p"];

/// Absolute NLL tolerance when comparing nested fits.
pub const NLL_SLACK: f64 = 1e-4;
/// AIC differences smaller than this count as ties.
pub const AIC_TIE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub id: usize,
    pub mask: CovariateMask,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLadder {
    pub entries: Vec<LadderEntry>,
}

impl ModelLadder {
    pub fn get(&self, id: usize) -> Option<&LadderEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// `(nested, full)` pairs tested by likelihood ratio.
    pub fn nested_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for a in &self.entries {
            for b in &self.entries {
                if a.id != b.id && a.mask.is_subset_of(b.mask) && a.mask.n_params() < b.mask.n_params() {
                    // only immediate links of the chain
                    let skips = self.entries.iter().any(|c| {
                        c.id != a.id
                            && c.id != b.id
                            && a.mask.is_subset_of(c.mask)
                            && c.mask.is_subset_of(b.mask)
                            && c.mask != a.mask
                            && c.mask != b.mask
                    });
                    if !skips {
                        pairs.push((a.id, b.id));
                    }
                }
            }
        }
        pairs
    }
}

/// Models 0-4: stationary; SOI; log coastal distance; log coastal distance,
/// latitude and longitude; all four regressors. The same regressors enter
/// location and scale, giving 3, 5, 5, 9 and 11 parameters.
pub fn build_ladder() -> ModelLadder {
    use Regressor::*;
    let masks = [
        CovariateMask::STATIONARY,
        CovariateMask::of(&[Soi]),
        CovariateMask::of(&[LogCdist]),
        CovariateMask::of(&[LogCdist, Lat, Lon]),
        CovariateMask::FULL,
    ];
    ModelLadder {
        entries: masks
            .into_iter()
            .enumerate()
            .map(|(id, mask)| LadderEntry { id, mask })
            .collect(),
    }
}

pub fn aic(nll: f64, n_params: usize) -> f64 {
    2.0 * n_params as f64 + 2.0 * nll
}

pub fn bic(nll: f64, n_params: usize, n_obs: f64) -> f64 {
    n_params as f64 * n_obs.ln() + 2.0 * nll
}

/// `(AIC, BIC)` of a converged fit.
pub fn criteria(fit: &FitResult, n_obs: usize) -> Result<(f64, f64)> {
    if !fit.converged {
        return Err(Error::Numerical(format!(
            "fit did not converge (nll {}, {} evaluations)",
            fit.nll, fit.trace.evals
        )));
    }
    Ok((aic(fit.nll, fit.n_params), bic(fit.nll, fit.n_params, n_obs as f64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRatio {
    pub deviance: f64,
    pub df: usize,
    pub p_value: f64,
}

pub fn likelihood_ratio(nested: &FitResult, full: &FitResult) -> Result<LikelihoodRatio> {
    let (small, big) = (nested.model.mask, full.model.mask);
    if !small.is_subset_of(big) || nested.n_params >= full.n_params {
        return Err(Error::Argument(format!("model {small} is not nested in {big}")));
    }
    if full.nll > nested.nll + NLL_SLACK {
        return Err(Error::Numerical(format!(
            "larger model has higher NLL ({} > {}); optimizer failure",
            full.nll, nested.nll
        )));
    }
    let deviance = (2.0 * (nested.nll - full.nll)).max(0.0);
    let df = full.n_params - nested.n_params;
    Ok(LikelihoodRatio {
        deviance,
        df,
        p_value: chi_square_sf(deviance, df as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub id: usize,
    pub mask: CovariateMask,
    pub fit: Option<FitResult>,
    pub nll: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_params: usize,
    pub converged: bool,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrEntry {
    pub nested: usize,
    pub full: usize,
    pub result: std::result::Result<LikelihoodRatio, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub k: Option<usize>,
    pub n_obs: usize,
    pub models: Vec<ModelReport>,
    pub chosen: Option<usize>,
    pub likelihood_ratios: Vec<LrEntry>,
}

impl SelectionReport {
    pub fn model(&self, id: usize) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.id == id)
    }

    pub fn chosen_fit(&self) -> Option<&FitResult> {
        self.chosen.and_then(|id| self.model(id)).and_then(|m| m.fit.as_ref())
    }
}

/// Arg-min AIC over converged models; ties go to fewer parameters.
pub fn choose(models: &[ModelReport]) -> Option<usize> {
    models
        .iter()
        .filter(|m| m.converged && m.aic.is_finite())
        .min_by(|a, b| {
            if (a.aic - b.aic).abs() < AIC_TIE {
                a.n_params.cmp(&b.n_params)
            } else {
                a.aic.total_cmp(&b.aic)
            }
        })
        .map(|m| m.id)
}

fn report(entry: &LadderEntry, fit: Result<FitResult>, n_obs: usize) -> ModelReport {
    match fit {
        Ok(mut fit) => {
            fit.model_id = Some(entry.id);
            let (aic_v, bic_v, failure) = match criteria(&fit, n_obs) {
                Ok((a, b)) => (a, b, None),
                Err(e) => (f64::NAN, f64::NAN, Some(e.to_string())),
            };
            ModelReport {
                id: entry.id,
                mask: entry.mask,
                nll: fit.nll,
                aic: aic_v,
                bic: bic_v,
                n_params: fit.n_params,
                converged: fit.converged,
                failure,
                fit: Some(fit),
            }
        }
        Err(e) => ModelReport {
            id: entry.id,
            mask: entry.mask,
            fit: None,
            nll: f64::NAN,
            aic: f64::NAN,
            bic: f64::NAN,
            n_params: entry.mask.n_params(),
            converged: false,
            failure: Some(e.to_string()),
        },
    }
}

/// Fits every ladder model and picks the AIC minimiser.
///
/// Each model's search also starts from the optima of the models nested in
/// it, so fitted NLL never increases along the nesting chain.
pub fn select(table: &BlockMaximaTable, ladder: &ModelLadder, options: &FitOptions) -> SelectionReport {
    let n_obs = table.len();
    let mut order: Vec<&LadderEntry> = ladder.entries.iter().collect();
    order.sort_by_key(|e| (e.mask.n_params(), e.id));

    let mut models: Vec<ModelReport> = Vec::with_capacity(order.len());
    for entry in order {
        let inits: Vec<_> = models
            .iter()
            .filter(|m| m.mask.is_subset_of(entry.mask))
            .filter_map(|m| m.fit.as_ref())
            .filter(|f| f.converged)
            .map(|f| f.model)
            .collect();
        let opts = FitOptions {
            optimizer: crate::optim::NelderMeadOptions {
                seed: derive_seed(options.optimizer.seed, entry.id as u64),
                ..options.optimizer.clone()
            },
            fixed_xi: options.fixed_xi,
        };
        let fit = fit_mle_from(table, entry.mask, &inits, &opts);
        models.push(report(entry, fit, n_obs));
    }
    models.sort_by_key(|m| m.id);

    let mut likelihood_ratios = Vec::new();
    for (a, b) in ladder.nested_pairs() {
        let (ma, mb) = (
            models.iter().find(|m| m.id == a).expect("ladder id"),
            models.iter().find(|m| m.id == b).expect("ladder id"),
        );
        let result = match (&ma.fit, &mb.fit) {
            (Some(fa), Some(fb)) if fa.converged && fb.converged => likelihood_ratio(fa, fb).map_err(|e| e.to_string()),
            _ => Err("fit unavailable".to_string()),
        };
        likelihood_ratios.push(LrEntry { nested: a, full: b, result });
    }

    SelectionReport {
        k: table.rows.first().map(|r| r.k),
        n_obs,
        chosen: choose(&models),
        models,
        likelihood_ratios,
    }
}

/// One row of the selection table; diagnostics are optional.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub model: usize,
    pub k: usize,
    pub nll: f64,
    pub aic: f64,
    pub bic: f64,
    pub mk: Option<(f64, f64)>,
    pub ad: Option<(f64, f64)>,
}

pub fn write_selection_csv<W: Write>(rows: &[SelectionRow], writer: W, fmt: NumberFormat) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SELECTION_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| fmt.fmt(x)).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.model.to_string(),
            r.k.to_string(),
            fmt.fmt(r.nll),
            fmt.fmt(r.aic),
            fmt.fmt(r.bic),
            opt(r.mk.map(|m| m.0)),
            opt(r.mk.map(|m| m.1)),
            opt(r.ad.map(|a| a.0)),
            opt(r.ad.map(|a| a.1)),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<selection csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::fit_stationary;
    use crate::gev::GevParams;
    use crate::rng::Xoshiro256;

    fn fake_fit(mask: CovariateMask, nll: f64) -> FitResult {
        let data: Vec<f64> = {
            let mut rng = Xoshiro256::new(1);
            (0..40).map(|_| GevParams::gumbel(0.0, 1.0).quantile(rng.next_f64()).unwrap()).collect()
        };
        let mut f = fit_stationary(&data, &FitOptions::default()).unwrap();
        f.model = f.model.widened(mask);
        f.n_params = mask.n_params();
        f.nll = nll;
        f
    }

    #[test]
    fn ladder_parameter_counts() {
        let ladder = build_ladder();
        let counts: Vec<usize> = ladder.entries.iter().map(|e| e.mask.n_params()).collect();
        assert_eq!(counts, vec![3, 5, 5, 9, 11]);
        // (AIC - 2 NLL)/2 recovers the counts from the tabulated k = 1 rows
        for (id, nll, aic_v) in [(0, 88_509.51, 177_025.00), (3, 84_325.64, 168_669.30), (4, 84_250.02, 168_522.00)] {
            let implied = ((aic_v - 2.0 * nll) / 2.0f64).round() as usize;
            assert_eq!(implied, ladder.get(id).unwrap().mask.n_params());
        }
    }

    #[test]
    fn nested_pairs_follow_the_chain() {
        let mut pairs = build_ladder().nested_pairs();
        pairs.sort();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 4), (2, 3), (3, 4)]);
    }

    #[test]
    fn criteria_arithmetic() {
        assert!((aic(84_250.02, 11) - 168_522.04).abs() < 1e-9);
        assert_eq!(aic(0.0, 0), 0.0);
        let e2 = std::f64::consts::E.powi(2);
        assert!((bic(100.0, 3, e2) - 206.0).abs() < 1e-12);
    }

    #[test]
    fn criteria_refuse_unconverged() {
        let mut f = fake_fit(CovariateMask::STATIONARY, 10.0);
        f.converged = false;
        assert!(criteria(&f, 40).is_err());
    }

    #[test]
    fn likelihood_ratio_cases() {
        let soi = CovariateMask::of(&[Regressor::Soi]);
        let a = fake_fit(CovariateMask::STATIONARY, 50.0);
        let same = likelihood_ratio(&a, &fake_fit(soi, 50.0)).unwrap();
        assert_eq!(same.deviance, 0.0);
        assert_eq!(same.p_value, 1.0);

        let mut b = fake_fit(soi, 50.0 - 3.84 / 2.0);
        b.n_params = 4; // one extra parameter
        let lr = likelihood_ratio(&a, &b).unwrap();
        assert!((lr.p_value - 0.05).abs() < 1e-3, "{lr:?}");

        let worse = fake_fit(soi, 51.0);
        assert!(matches!(likelihood_ratio(&a, &worse), Err(Error::Numerical(_))));
        let cd = fake_fit(CovariateMask::of(&[Regressor::LogCdist]), 40.0);
        assert!(matches!(likelihood_ratio(&worse, &cd), Err(Error::Argument(_))));
    }

    #[test]
    fn p_value_decreases_with_deviance() {
        let mut last = 1.0;
        for i in 1..50 {
            let p = chi_square_sf(i as f64 * 0.5, 2.0);
            assert!((0.0..=1.0).contains(&p) && p < last);
            last = p;
        }
    }

    fn model(id: usize, aic_v: f64, n_params: usize, converged: bool) -> ModelReport {
        ModelReport {
            id,
            mask: CovariateMask::STATIONARY,
            fit: None,
            nll: 0.0,
            aic: aic_v,
            bic: 0.0,
            n_params,
            converged,
            failure: None,
        }
    }

    #[test]
    fn choice_rules() {
        assert_eq!(choose(&[model(0, 10.0, 3, true), model(1, 8.0, 5, true)]), Some(1));
        assert_eq!(choose(&[model(0, 10.0, 3, true), model(1, 10.0, 5, true)]), Some(0));
        assert_eq!(choose(&[model(0, 10.0, 3, true), model(1, 5.0, 5, false)]), Some(0));
        assert_eq!(choose(&[model(0, 10.0, 3, false)]), None);
    }
}
