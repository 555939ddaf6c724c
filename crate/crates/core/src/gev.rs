//! Generalized extreme value distribution primitives.
//!
//! `G(z) = exp(-[1 + xi (z - mu)/sigma]^(-1/xi))` on the support
//! `1 + xi (z - mu)/sigma > 0`, with the Gumbel form
//! `exp(-exp(-(z - mu)/sigma))` when `|xi| < XI_SWITCH`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `|xi|` the Gumbel limit formulas are used.
pub const XI_SWITCH: f64 = 1e-8;

/// Finite stand-in for an infinite negative log-likelihood, so the simplex
/// search can still rank infeasible points.
pub const NLL_PENALTY: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Argument(format!("GEV scale must be positive, got {sigma}")));
        }
        if !mu.is_finite() || !xi.is_finite() {
            return Err(Error::Argument(format!("GEV parameters must be finite (mu {mu}, xi {xi})")));
        }
        Ok(Self { mu, sigma, xi })
    }

    pub const fn gumbel(mu: f64, sigma: f64) -> Self {
        Self { mu, sigma, xi: 0.0 }
    }

    fn is_gumbel(&self) -> bool {
        self.xi.abs() < XI_SWITCH
    }

    /// `1 + xi (z - mu)/sigma`; positive inside the support.
    pub fn support_term(&self, z: f64) -> f64 {
        1.0 + self.xi * (z - self.mu) / self.sigma
    }

    pub fn in_support(&self, z: f64) -> bool {
        self.is_gumbel() || self.support_term(z) > 0.0
    }

    pub fn cdf(&self, z: f64) -> f64 {
        let s = (z - self.mu) / self.sigma;
        if self.is_gumbel() {
            return (-(-s).exp()).exp();
        }
        let t = 1.0 + self.xi * s;
        if t <= 0.0 {
            // below the lower end point (xi > 0) or above the upper one (xi < 0)
            return if self.xi > 0.0 { 0.0 } else { 1.0 };
        }
        (-t.powf(-1.0 / self.xi)).exp()
    }

    /// `P(Z > z)` computed without cancellation in the upper tail.
    pub fn sf(&self, z: f64) -> f64 {
        let s = (z - self.mu) / self.sigma;
        let h = if self.is_gumbel() {
            (-s).exp()
        } else {
            let t = 1.0 + self.xi * s;
            if t <= 0.0 {
                return if self.xi > 0.0 { 1.0 } else { 0.0 };
            }
            t.powf(-1.0 / self.xi)
        };
        -(-h).exp_m1()
    }

    /// Log density; `-inf` outside the support.
    pub fn ln_pdf(&self, z: f64) -> f64 {
        let s = (z - self.mu) / self.sigma;
        if self.is_gumbel() {
            return -self.sigma.ln() - s - (-s).exp();
        }
        let t = 1.0 + self.xi * s;
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let lt = t.ln();
        -self.sigma.ln() - (1.0 + 1.0 / self.xi) * lt - (-lt / self.xi).exp()
    }

    pub fn pdf(&self, z: f64) -> f64 {
        self.ln_pdf(z).exp()
    }

    /// Level with non-exceedance probability `p`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Argument(format!("probability must lie in (0, 1), got {p}")));
        }
        Ok(self.quantile_unchecked(p))
    }

    pub(crate) fn quantile_unchecked(&self, p: f64) -> f64 {
        self.quantile_from_y(-p.ln())
    }

    /// Quantile expressed through `y = -ln F`, which keeps full precision
    /// in the far upper tail where `F` rounds to 1.
    pub fn quantile_from_y(&self, y: f64) -> f64 {
        if self.is_gumbel() {
            self.mu - self.sigma * y.ln()
        } else {
            // (y^-xi - 1)/xi, written with exp_m1 for accuracy near xi = 0
            self.mu + self.sigma * (-self.xi * y.ln()).exp_m1() / self.xi
        }
    }
}

pub fn gev_cdf(z: f64, params: &GevParams) -> Result<f64> {
    check_scale(params.sigma)?;
    Ok(params.cdf(z))
}

pub fn gev_quantile(p: f64, params: &GevParams) -> Result<f64> {
    check_scale(params.sigma)?;
    params.quantile(p)
}

fn check_scale(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("GEV scale must be positive, got {sigma}")))
    }
}

/// Negative log-likelihood of a stationary GEV sample.
///
/// Returns [`NLL_PENALTY`] when `sigma <= 0` or any point lies outside the support.
pub fn nll_stationary(data: &[f64], params: &GevParams) -> f64 {
    if !(params.sigma > 0.0) || !params.mu.is_finite() || !params.xi.is_finite() {
        return NLL_PENALTY;
    }
    let mut total = 0.0;
    for &z in data {
        let l = params.ln_pdf(z);
        if !l.is_finite() {
            return NLL_PENALTY;
        }
        total -= l;
    }
    if total.is_finite() {
        total.min(NLL_PENALTY)
    } else {
        NLL_PENALTY
    }
}

/// GEV of the maxima of a dependent sequence with extremal index `theta`,
/// given the GEV `iid` of the matching independent sequence.
///
/// `G_dep = G_iid^theta`, which keeps the shape and maps
/// `mu* = mu - (sigma/xi)(1 - theta^xi)`, `sigma* = sigma theta^xi`
/// (`mu* = mu + sigma ln theta` in the Gumbel limit).
pub fn dependent_params(iid: &GevParams, theta: f64) -> Result<GevParams> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Argument(format!("extremal index must lie in (0, 1], got {theta}")));
    }
    if iid.is_gumbel() {
        return GevParams::new(iid.mu + iid.sigma * theta.ln(), iid.sigma, iid.xi);
    }
    let factor = theta.powf(iid.xi);
    GevParams::new(iid.mu - iid.sigma / iid.xi * (1.0 - factor), iid.sigma * factor, iid.xi)
}
