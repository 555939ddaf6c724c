//! Covariate-linked GEV parameters.
//!
//! `mu_t = mu0 + mu1 SOI + mu2 ln(cdist) + mu3 lat + mu4 lon`, the same
//! regressors enter `sigma_t` through an identity link, and the shape is a
//! single scalar. A [`CovariateMask`] selects which regressors are active;
//! the same mask applies to location and scale.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::BlockMaximaTable;
use crate::gev::{GevParams, NLL_PENALTY, XI_SWITCH};
use crate::ingest::Covariates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regressor {
    Soi,
    LogCdist,
    Lat,
    Lon,
}

impl Regressor {
    pub const ALL: [Regressor; 4] = [Regressor::Soi, Regressor::LogCdist, Regressor::Lat, Regressor::Lon];

    /// Position in the coefficient vectors (1-based, 0 is the intercept).
    pub fn slot(self) -> usize {
        self as usize + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Regressor::Soi => "soi",
            Regressor::LogCdist => "log_cdist",
            Regressor::Lat => "lat",
            Regressor::Lon => "lon",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name)
    }

    pub fn value(self, c: &Covariates) -> f64 {
        c.as_array()[self as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct CovariateMask(u8);

impl CovariateMask {
    pub const STATIONARY: CovariateMask = CovariateMask(0);
    pub const FULL: CovariateMask = CovariateMask(0b1111);

    pub fn of(regressors: &[Regressor]) -> Self {
        Self(regressors.iter().fold(0, |m, r| m | (1 << *r as u8)))
    }

    pub fn contains(self, r: Regressor) -> bool {
        self.0 & (1 << r as u8) != 0
    }

    pub fn active(self) -> impl Iterator<Item = Regressor> {
        Regressor::ALL.into_iter().filter(move |r| self.contains(*r))
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset_of(self, other: CovariateMask) -> bool {
        self.0 & !other.0 == 0
    }

    /// Free parameters: intercept and slopes for location and scale, plus the shape.
    pub fn n_params(self) -> usize {
        2 * (1 + self.count()) + 1
    }

    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() || text == "none" {
            return Ok(Self::STATIONARY);
        }
        let mut regs = Vec::new();
        for name in text.split(['+', ',']) {
            regs.push(
                Regressor::from_name(name.trim())
                    .ok_or_else(|| Error::Argument(format!("unknown regressor {name:?}")))?,
            );
        }
        Ok(Self::of(&regs))
    }
}

impl fmt::Display for CovariateMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.count() == 0 {
            return f.write_str("none");
        }
        let names: Vec<_> = self.active().map(Regressor::name).collect();
        f.write_str(&names.join("+"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    /// (intercept, SOI, ln cdist, lat, lon)
    pub mu: [f64; 5],
    pub sigma: [f64; 5],
    pub xi: f64,
    pub mask: CovariateMask,
}

impl LinkModel {
    /// Builds a model, zeroing coefficients of inactive regressors.
    pub fn new(mu: [f64; 5], sigma: [f64; 5], xi: f64, mask: CovariateMask) -> Self {
        let mut m = Self { mu, sigma, xi, mask };
        for r in Regressor::ALL {
            if !mask.contains(r) {
                m.mu[r.slot()] = 0.0;
                m.sigma[r.slot()] = 0.0;
            }
        }
        m
    }

    pub fn stationary(p: GevParams) -> Self {
        Self::new([p.mu, 0.0, 0.0, 0.0, 0.0], [p.sigma, 0.0, 0.0, 0.0, 0.0], p.xi, CovariateMask::STATIONARY)
    }

    /// Same coefficients under a wider mask; new slopes start at zero.
    pub fn widened(&self, mask: CovariateMask) -> Self {
        Self::new(self.mu, self.sigma, self.xi, mask)
    }

    pub fn n_params(&self) -> usize {
        self.mask.n_params()
    }

    pub fn location(&self, c: &Covariates) -> f64 {
        linear(&self.mu, self.mask, c)
    }

    pub fn scale(&self, c: &Covariates) -> f64 {
        linear(&self.sigma, self.mask, c)
    }

    /// Parameters at `c`; fails when the linked scale is not positive.
    pub fn params_at(&self, c: &Covariates) -> Result<GevParams> {
        GevParams::new(self.location(c), self.scale(c), self.xi)
    }

    /// First active regressor with a non-finite value at `c`.
    pub fn missing_regressor(&self, c: &Covariates) -> Option<Regressor> {
        self.mask.active().find(|r| !r.value(c).is_finite())
    }
}

fn linear(coef: &[f64; 5], mask: CovariateMask, c: &Covariates) -> f64 {
    mask.active().fold(coef[0], |acc, r| acc + coef[r.slot()] * r.value(c))
}

/// Negative log-likelihood of the table under the linked model.
///
/// Rows with a non-positive linked scale or outside the support make the
/// whole value [`NLL_PENALTY`].
pub fn nll_linked(table: &BlockMaximaTable, model: &LinkModel) -> Result<f64> {
    for row in &table.rows {
        if let Some(r) = model.missing_regressor(&row.covariates) {
            return Err(Error::Data(format!(
                "station {} year {}: covariate {} missing",
                row.station_id,
                row.year,
                r.name()
            )));
        }
    }
    let mut total = 0.0;
    for row in &table.rows {
        let sigma = model.scale(&row.covariates);
        if !(sigma > 0.0) {
            return Ok(NLL_PENALTY);
        }
        let p = GevParams {
            mu: model.location(&row.covariates),
            sigma,
            xi: model.xi,
        };
        let l = p.ln_pdf(row.block_max);
        if !l.is_finite() {
            return Ok(NLL_PENALTY);
        }
        total -= l;
    }
    Ok(if total.is_finite() { total.min(NLL_PENALTY) } else { NLL_PENALTY })
}

/// `|xi|` below which a model is treated as Gumbel.
pub fn is_gumbel_shape(xi: f64) -> bool {
    xi.abs() < XI_SWITCH
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::BlockMaximaRow;
    use crate::gev::nll_stationary;

    fn row(z: f64, c: Covariates) -> BlockMaximaRow {
        BlockMaximaRow {
            station_id: "S".into(),
            year: 2000,
            k: 1,
            block_max: z,
            covariates: c,
        }
    }

    fn cov(soi: f64, log_cdist: f64, lat: f64, lon: f64) -> Covariates {
        Covariates { soi, log_cdist, lat, lon }
    }

    fn table() -> BlockMaximaTable {
        BlockMaximaTable::new(vec![
            row(55.0, cov(3.0, 1.0, -27.0, 153.0)),
            row(80.0, cov(-8.0, 2.0, -30.0, 151.0)),
            row(42.0, cov(10.0, 0.5, -20.0, 146.0)),
        ])
    }

    #[test]
    fn masks_and_counts() {
        assert_eq!(CovariateMask::STATIONARY.n_params(), 3);
        assert_eq!(CovariateMask::of(&[Regressor::Soi]).n_params(), 5);
        assert_eq!(CovariateMask::FULL.n_params(), 11);
        let m = CovariateMask::of(&[Regressor::LogCdist, Regressor::Lat, Regressor::Lon]);
        assert_eq!(m.n_params(), 9);
        assert!(CovariateMask::of(&[Regressor::LogCdist]).is_subset_of(m));
        assert!(!CovariateMask::of(&[Regressor::Soi]).is_subset_of(m));
        assert_eq!(m.to_string(), "log_cdist+lat+lon");
        assert_eq!(CovariateMask::parse("log_cdist+lat+lon").unwrap(), m);
        assert_eq!(CovariateMask::parse("none").unwrap(), CovariateMask::STATIONARY);
        assert!(CovariateMask::parse("depth").is_err());
    }

    #[test]
    fn inactive_coefficients_are_zeroed() {
        let m = LinkModel::new([1.0; 5], [2.0; 5], 0.1, CovariateMask::of(&[Regressor::Soi]));
        assert_eq!(m.mu, [1.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.sigma, [2.0, 2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_covariates_reduce_to_intercepts() {
        let full = LinkModel::new([50.0, 1.0, -2.0, 0.5, 0.2], [15.0, 0.1, -1.0, 0.3, 0.05], 0.12, CovariateMask::FULL);
        let t = BlockMaximaTable::new(vec![row(55.0, Covariates::ZERO), row(70.0, Covariates::ZERO)]);
        let want = nll_stationary(&t.values(), &GevParams::new(50.0, 15.0, 0.12).unwrap());
        assert!((nll_linked(&t, &full).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn intercept_only_model_equals_stationary() {
        let p = GevParams::new(50.0, 15.0, 0.12).unwrap();
        let t = table();
        let got = nll_linked(&t, &LinkModel::stationary(p)).unwrap();
        assert!((got - nll_stationary(&t.values(), &p)).abs() < 1e-12);
    }

    #[test]
    fn negative_linked_scale_is_penalised() {
        let m = LinkModel::new([50.0, 0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0, 0.0], 0.1, CovariateMask::of(&[Regressor::Soi]));
        // second row has SOI -8, sigma = -7
        assert_eq!(nll_linked(&table(), &m).unwrap(), NLL_PENALTY);
    }

    #[test]
    fn missing_active_covariate_names_station_year() {
        let mut t = table();
        t.rows[1].covariates.lat = f64::NAN;
        let m = LinkModel::new([50.0, 0.0, 0.0, 0.0, 0.0], [15.0; 5], 0.1, CovariateMask::FULL);
        let err = nll_linked(&t, &m).unwrap_err();
        assert!(err.to_string().contains("station S year 2000") && err.to_string().contains("lat"));
        // inactive regressor may be missing
        let stationary = LinkModel::stationary(GevParams::new(50.0, 15.0, 0.1).unwrap());
        assert!(nll_linked(&t, &stationary).is_ok());
    }
}
