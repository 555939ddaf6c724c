//! Maximum-likelihood fitting of stationary and covariate-linked GEV models.
//!
//! The search runs in centred and scaled regressor coordinates, which keeps
//! the simplex well conditioned when raw covariates differ by orders of
//! magnitude (longitude ~150 vs. SOI ~10). Coefficients and their covariance
//! are mapped back to raw units exactly, since the map is linear.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::NumberFormat;
use crate::functionals::BlockMaximaTable;
use crate::gev::{GevParams, NLL_PENALTY};
use crate::link::{nll_linked, CovariateMask, LinkModel, Regressor};
use crate::optim::{minimize, NelderMeadOptions, RunSummary};

pub const FIT_RECORD_VERSION: u32 = 1;
/// Minimum rows per free parameter.
pub const ROWS_PER_PARAM: usize = 10;
pub const COEFFICIENT_HEADER: [&str; 12] = [
    "k", "mu0", "mu1", "mu2", "mu3", "mu4", "sigma0", "sigma1", "sigma2", "sigma3", "sigma4", "xi",
];

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub optimizer: NelderMeadOptions,
    /// Hold the shape at this value instead of estimating it.
    pub fixed_xi: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            optimizer: NelderMeadOptions::default(),
            fixed_xi: None,
        }
    }
}

impl FitOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            optimizer: NelderMeadOptions {
                seed,
                ..NelderMeadOptions::default()
            },
            fixed_xi: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub mu: [f64; 5],
    pub sigma: [f64; 5],
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub evals: usize,
    pub runs: Vec<(f64, usize, bool)>,
}

impl From<&[RunSummary]> for OptimizerTrace {
    fn from(runs: &[RunSummary]) -> Self {
        Self {
            evals: runs.iter().map(|r| r.evals).sum(),
            runs: runs.iter().map(|r| (r.f, r.evals, r.converged)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: LinkModel,
    pub nll: f64,
    /// Observed-information standard errors in raw units; inactive slots are 0,
    /// unavailable ones NaN.
    pub std_errors: Coefficients,
    /// Covariance of the free parameters, ordered as [`FitResult::free_names`].
    pub covariance: Option<Vec<Vec<f64>>>,
    pub n_params: usize,
    pub n_obs: usize,
    pub converged: bool,
    pub xi_fixed: bool,
    pub k: Option<usize>,
    pub model_id: Option<usize>,
    pub trace: OptimizerTrace,
}

impl FitResult {
    /// Wraps a known model (e.g. the generating model of a simulation) as a
    /// converged fit, so it can be fed to diagnostics and return levels.
    pub fn from_model(model: LinkModel, table: &BlockMaximaTable) -> Result<Self> {
        let nll = nll_linked(table, &model)?;
        Ok(Self {
            model,
            nll,
            std_errors: Coefficients {
                mu: [f64::NAN; 5],
                sigma: [f64::NAN; 5],
                xi: f64::NAN,
            },
            covariance: None,
            n_params: model.n_params(),
            n_obs: table.len(),
            converged: nll < NLL_PENALTY,
            xi_fixed: false,
            k: table.rows.first().map(|r| r.k),
            model_id: None,
            trace: OptimizerTrace { evals: 0, runs: vec![] },
        })
    }

    pub fn free_names(&self) -> Vec<String> {
        free_names(self.model.mask, self.xi_fixed)
    }

    pub fn coefficients(&self) -> Coefficients {
        Coefficients {
            mu: self.model.mu,
            sigma: self.model.sigma,
            xi: self.model.xi,
        }
    }

    /// Versioned key-value record, one coefficient per line, full precision.
    pub fn to_record(&self) -> String {
        let f = NumberFormat::Shortest;
        let mut s = String::new();
        let _ = writeln!(s, "# rainrun GEV fit record");
        let _ = writeln!(s, "format_version = {FIT_RECORD_VERSION}");
        if let Some(k) = self.k {
            let _ = writeln!(s, "k = {k}");
        }
        if let Some(id) = self.model_id {
            let _ = writeln!(s, "model_id = {id}");
        }
        let _ = writeln!(s, "mask = {}", self.model.mask);
        let _ = writeln!(s, "n_obs = {}", self.n_obs);
        let _ = writeln!(s, "n_params = {}", self.n_params);
        let _ = writeln!(s, "nll = {}", f.fmt(self.nll));
        let _ = writeln!(s, "converged = {}", self.converged);
        let _ = writeln!(s, "xi_fixed = {}", self.xi_fixed);
        let _ = writeln!(s, "evals = {}", self.trace.evals);
        for i in 0..5 {
            let _ = writeln!(s, "mu{i} = {}", f.fmt(self.model.mu[i]));
            let _ = writeln!(s, "mu{i}_se = {}", f.fmt(self.std_errors.mu[i]));
        }
        for i in 0..5 {
            let _ = writeln!(s, "sigma{i} = {}", f.fmt(self.model.sigma[i]));
            let _ = writeln!(s, "sigma{i}_se = {}", f.fmt(self.std_errors.sigma[i]));
        }
        let _ = writeln!(s, "xi = {}", f.fmt(self.model.xi));
        let _ = writeln!(s, "xi_se = {}", f.fmt(self.std_errors.xi));
        if let Some(cov) = &self.covariance {
            let names = self.free_names();
            for (i, a) in names.iter().enumerate() {
                for (j, b) in names.iter().enumerate().skip(i) {
                    let _ = writeln!(s, "cov.{a}.{b} = {}", f.fmt(cov[i][j]));
                }
            }
        }
        s
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut kv = std::collections::HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("fit record line {}: expected key = value", n + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |key: &str| -> Result<&String> {
            kv.get(key)
                .ok_or_else(|| Error::Validation(format!("fit record: missing key {key}")))
        };
        let num = |key: &str| -> Result<f64> {
            let v = get(key)?;
            v.parse()
                .map_err(|_| Error::Validation(format!("fit record: {key} = {v:?} is not a number")))
        };
        let int = |key: &str| -> Result<usize> {
            let v = get(key)?;
            v.parse()
                .map_err(|_| Error::Validation(format!("fit record: {key} = {v:?} is not an integer")))
        };
        let version = int("format_version")?;
        if version as u32 != FIT_RECORD_VERSION {
            return Err(Error::Validation(format!("unsupported fit record version {version}")));
        }
        let mask = CovariateMask::parse(get("mask")?)?;
        let mut mu = [0.0; 5];
        let mut sigma = [0.0; 5];
        let mut mu_se = [0.0; 5];
        let mut sigma_se = [0.0; 5];
        for i in 0..5 {
            mu[i] = num(&format!("mu{i}"))?;
            sigma[i] = num(&format!("sigma{i}"))?;
            mu_se[i] = num(&format!("mu{i}_se"))?;
            sigma_se[i] = num(&format!("sigma{i}_se"))?;
        }
        let xi_fixed = get("xi_fixed")? == "true";
        let model = LinkModel::new(mu, sigma, num("xi")?, mask);
        let names = free_names(mask, xi_fixed);
        let covariance = if kv.contains_key(&format!("cov.{0}.{0}", names[0])) {
            let mut cov = vec![vec![0.0; names.len()]; names.len()];
            for i in 0..names.len() {
                for j in i..names.len() {
                    let v = num(&format!("cov.{}.{}", names[i], names[j]))?;
                    cov[i][j] = v;
                    cov[j][i] = v;
                }
            }
            Some(cov)
        } else {
            None
        };
        Ok(Self {
            model,
            nll: num("nll")?,
            std_errors: Coefficients {
                mu: mu_se,
                sigma: sigma_se,
                xi: num("xi_se")?,
            },
            covariance,
            n_params: int("n_params")?,
            n_obs: int("n_obs")?,
            converged: get("converged")? == "true",
            xi_fixed,
            k: kv.get("k").and_then(|v| v.parse().ok()),
            model_id: kv.get("model_id").and_then(|v| v.parse().ok()),
            trace: OptimizerTrace {
                evals: int("evals")?,
                runs: vec![],
            },
        })
    }
}

fn free_names(mask: CovariateMask, xi_fixed: bool) -> Vec<String> {
    let mut names = vec!["mu0".to_string()];
    names.extend(mask.active().map(|r| format!("mu{}", r.slot())));
    names.push("sigma0".into());
    names.extend(mask.active().map(|r| format!("sigma{}", r.slot())));
    if !xi_fixed {
        names.push("xi".into());
    }
    names
}

/// Writes `k,mu0..mu4,sigma0..sigma4,xi` rows of coefficient estimates.
pub fn write_coefficients_csv<W: Write>(fits: &[&FitResult], writer: W, fmt: NumberFormat) -> Result<()> {
    write_coefficient_rows(fits.iter().map(|f| (f, f.coefficients())), false, writer, fmt)
}

/// Same layout as [`write_coefficients_csv`], holding standard errors;
/// coefficients that were not estimated are left empty.
pub fn write_std_errors_csv<W: Write>(fits: &[&FitResult], writer: W, fmt: NumberFormat) -> Result<()> {
    write_coefficient_rows(fits.iter().map(|f| (f, f.std_errors)), true, writer, fmt)
}

fn write_coefficient_rows<'a, W: Write>(
    rows: impl Iterator<Item = (&'a &'a FitResult, Coefficients)>,
    blank_fixed: bool,
    writer: W,
    fmt: NumberFormat,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COEFFICIENT_HEADER)?;
    for (fit, c) in rows {
        let mask = fit.model.mask;
        let free = |slot: usize| slot == 0 || Regressor::ALL.iter().any(|r| r.slot() == slot && mask.contains(*r));
        let cell = |v: f64, is_free: bool| if blank_fixed && !is_free { String::new() } else { fmt.fmt(v) };
        let mut rec = vec![fit.k.map(|k| k.to_string()).unwrap_or_default()];
        rec.extend(c.mu.iter().enumerate().map(|(i, v)| cell(*v, free(i))));
        rec.extend(c.sigma.iter().enumerate().map(|(i, v)| cell(*v, free(i))));
        rec.push(cell(c.xi, !fit.xi_fixed));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<coefficients csv>", e))?;
    Ok(())
}

/// Centred and scaled regressor design for the internal search.
struct Design {
    active: Vec<Regressor>,
    centre: Vec<f64>,
    scale: Vec<f64>,
    /// Row-major standardized regressors, `rows x active.len()`.
    z: Vec<f64>,
    y: Vec<f64>,
    fixed_xi: Option<f64>,
}

impl Design {
    fn new(table: &BlockMaximaTable, mask: CovariateMask, fixed_xi: Option<f64>) -> Self {
        let active: Vec<Regressor> = mask.active().collect();
        let n = table.len() as f64;
        let mut centre = Vec::with_capacity(active.len());
        let mut scale = Vec::with_capacity(active.len());
        for r in &active {
            let mean = table.rows.iter().map(|row| r.value(&row.covariates)).sum::<f64>() / n;
            let var = table
                .rows
                .iter()
                .map(|row| (r.value(&row.covariates) - mean).powi(2))
                .sum::<f64>()
                / n;
            centre.push(mean);
            scale.push(if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 });
        }
        let mut z = Vec::with_capacity(table.len() * active.len());
        for row in &table.rows {
            for (j, r) in active.iter().enumerate() {
                z.push((r.value(&row.covariates) - centre[j]) / scale[j]);
            }
        }
        Self {
            active,
            centre,
            scale,
            z,
            y: table.values(),
            fixed_xi,
        }
    }

    fn p(&self) -> usize {
        self.active.len()
    }

    fn dim(&self) -> usize {
        2 * (1 + self.p()) + usize::from(self.fixed_xi.is_none())
    }

    fn xi(&self, theta: &[f64]) -> f64 {
        self.fixed_xi.unwrap_or_else(|| theta[2 * (1 + self.p())])
    }

    fn nll(&self, theta: &[f64]) -> f64 {
        let p = self.p();
        let (a, b) = theta.split_at(1 + p);
        let xi = self.xi(theta);
        let mut total = 0.0;
        for (i, &y) in self.y.iter().enumerate() {
            let zi = &self.z[i * p..(i + 1) * p];
            let mut mu = a[0];
            let mut sigma = b[0];
            for j in 0..p {
                mu += a[1 + j] * zi[j];
                sigma += b[1 + j] * zi[j];
            }
            if !(sigma > 0.0) {
                return NLL_PENALTY;
            }
            let l = GevParams { mu, sigma, xi }.ln_pdf(y);
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

    /// Raw model to internal coordinates.
    fn to_internal(&self, m: &LinkModel) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.dim());
        for coef in [&m.mu, &m.sigma] {
            let mut intercept = coef[0];
            let slopes: Vec<f64> = self
                .active
                .iter()
                .enumerate()
                .map(|(j, r)| {
                    intercept += coef[r.slot()] * self.centre[j];
                    coef[r.slot()] * self.scale[j]
                })
                .collect();
            theta.push(intercept);
            theta.extend(slopes);
        }
        if self.fixed_xi.is_none() {
            theta.push(m.xi);
        }
        theta
    }

    /// Jacobian of raw free parameters with respect to internal ones.
    fn jacobian(&self) -> DMatrix<f64> {
        let p = self.p();
        let d = self.dim();
        let mut j = DMatrix::zeros(d, d);
        for block in 0..2 {
            let o = block * (1 + p);
            j[(o, o)] = 1.0;
            for k in 0..p {
                j[(o + 1 + k, o + 1 + k)] = 1.0 / self.scale[k];
                j[(o, o + 1 + k)] = -self.centre[k] / self.scale[k];
            }
        }
        if self.fixed_xi.is_none() {
            j[(d - 1, d - 1)] = 1.0;
        }
        j
    }

    fn to_raw(&self, theta: &[f64], mask: CovariateMask) -> LinkModel {
        let jac = self.jacobian();
        let raw = &jac * nalgebra::DVector::from_column_slice(theta);
        let p = self.p();
        let mut mu = [0.0; 5];
        let mut sigma = [0.0; 5];
        mu[0] = raw[0];
        sigma[0] = raw[1 + p];
        for (j, r) in self.active.iter().enumerate() {
            mu[r.slot()] = raw[1 + j];
            sigma[r.slot()] = raw[2 + p + j];
        }
        LinkModel::new(mu, sigma, self.xi(theta), mask)
    }
}

fn moment_start(values: &[f64]) -> Option<GevParams> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    if !(sd > 1e-12 * mean.abs()) || !sd.is_finite() {
        return None;
    }
    // Gumbel moment matching: sigma = sd sqrt(6)/pi, mu = mean - 0.5772 sigma (~ mean - 0.45 sd)
    let sigma = sd * 6f64.sqrt() / std::f64::consts::PI;
    Some(GevParams {
        mu: mean - EULER_GAMMA * sigma,
        sigma,
        xi: 0.1,
    })
}

/// Maximum-likelihood fit of the linked model with regressors `mask`.
///
/// `init` (typically the optimum of a nested model) seeds the search; other
/// starts use moment estimates with `xi = 0.1`.
pub fn fit_mle(
    table: &BlockMaximaTable,
    mask: CovariateMask,
    init: Option<&LinkModel>,
    options: &FitOptions,
) -> Result<FitResult> {
    let inits: Vec<LinkModel> = init.copied().into_iter().collect();
    fit_mle_from(table, mask, &inits, options)
}

/// [`fit_mle`] with several candidate starts; the search begins at whichever
/// start (including the moment-based ones) has the lowest NLL.
pub fn fit_mle_from(
    table: &BlockMaximaTable,
    mask: CovariateMask,
    inits: &[LinkModel],
    options: &FitOptions,
) -> Result<FitResult> {
    let n_params = mask.n_params() - usize::from(options.fixed_xi.is_some());
    if table.len() < ROWS_PER_PARAM * n_params {
        return Err(Error::Data(format!(
            "{} rows cannot support {n_params} parameters (need at least {})",
            table.len(),
            ROWS_PER_PARAM * n_params
        )));
    }
    // validates covariates
    let probe = LinkModel::new([0.0; 5], [1.0, 0.0, 0.0, 0.0, 0.0], 0.0, mask);
    nll_linked(table, &probe)?;

    let values = table.values();
    let start = moment_start(&values).ok_or_else(|| {
        Error::Numerical("block maxima have zero variance; GEV likelihood is unbounded".into())
    })?;
    let design = Design::new(table, mask, options.fixed_xi);

    let mut starts: Vec<Vec<f64>> = inits.iter().map(|m| design.to_internal(&m.widened(mask))).collect();
    let mut moment = LinkModel::stationary(start).widened(mask);
    starts.push(design.to_internal(&moment));
    moment.xi = 0.0;
    starts.push(design.to_internal(&moment));
    let theta0 = starts
        .into_iter()
        .map(|s| {
            let f = design.nll(&s);
            (s, f)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(s, _)| s)
        .expect("at least one start");

    let p = design.p();
    let mut step = vec![0.1 * start.sigma; 1 + p];
    step.extend(vec![0.1 * start.sigma; 1 + p]);
    for s in step.iter_mut().skip(1).take(p) {
        *s *= 0.5;
    }
    for s in step.iter_mut().skip(2 + p).take(p) {
        *s *= 0.5;
    }
    if options.fixed_xi.is_none() {
        step.push(0.05);
    }

    let found = minimize(|t| design.nll(t), &theta0, &step, &options.optimizer);
    let converged = found.converged && found.f < NLL_PENALTY && found.f.is_finite();
    let model = design.to_raw(&found.x, mask);

    let (std_errors, covariance) = match observed_covariance(&design, &found.x) {
        Some(cov_internal) => {
            let jac = design.jacobian();
            let cov = &jac * cov_internal * jac.transpose();
            let cov = (&cov + cov.transpose()) * 0.5;
            (raw_std_errors(&design, &cov), Some(to_rows(&cov)))
        }
        None => (
            Coefficients {
                mu: mask_nan(mask),
                sigma: mask_nan(mask),
                xi: f64::NAN,
            },
            None,
        ),
    };
    let mut std_errors = std_errors;
    if options.fixed_xi.is_some() {
        std_errors.xi = f64::NAN;
    }

    Ok(FitResult {
        model,
        nll: found.f,
        std_errors,
        covariance,
        n_params,
        n_obs: table.len(),
        converged,
        xi_fixed: options.fixed_xi.is_some(),
        k: table.rows.first().map(|r| r.k),
        model_id: None,
        trace: OptimizerTrace::from(found.runs.as_slice()),
    })
}

/// Convenience: stationary fit of a plain sample.
pub fn fit_stationary(values: &[f64], options: &FitOptions) -> Result<FitResult> {
    let table = crate::functionals::BlockMaximaTable::new(
        values
            .iter()
            .map(|&v| crate::functionals::BlockMaximaRow {
                station_id: String::new(),
                year: 0,
                k: 1,
                block_max: v,
                covariates: crate::ingest::Covariates::ZERO,
            })
            .collect(),
    );
    let mut fit = fit_mle(&table, CovariateMask::STATIONARY, None, options)?;
    fit.k = None;
    Ok(fit)
}

fn mask_nan(mask: CovariateMask) -> [f64; 5] {
    let mut out = [0.0; 5];
    out[0] = f64::NAN;
    for r in mask.active() {
        out[r.slot()] = f64::NAN;
    }
    out
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn raw_std_errors(design: &Design, cov: &DMatrix<f64>) -> Coefficients {
    let p = design.p();
    let se = |i: usize| {
        let v = cov[(i, i)];
        if v >= 0.0 {
            v.sqrt()
        } else {
            f64::NAN
        }
    };
    let mut mu = [0.0; 5];
    let mut sigma = [0.0; 5];
    mu[0] = se(0);
    sigma[0] = se(1 + p);
    for (j, r) in design.active.iter().enumerate() {
        mu[r.slot()] = se(1 + j);
        sigma[r.slot()] = se(2 + p + j);
    }
    let xi = if design.fixed_xi.is_none() { se(design.dim() - 1) } else { f64::NAN };
    Coefficients { mu, sigma, xi }
}

/// Inverse of the central-difference Hessian of the NLL at `theta`.
fn observed_covariance(design: &Design, theta: &[f64]) -> Option<DMatrix<f64>> {
    let d = theta.len();
    let h: Vec<f64> = theta.iter().map(|t| 1e-4 * (1.0 + t.abs())).collect();
    let f0 = design.nll(theta);
    if f0 >= NLL_PENALTY {
        return None;
    }
    let mut x = theta.to_vec();
    let eval = |x: &[f64]| -> Option<f64> {
        let v = design.nll(x);
        (v < NLL_PENALTY).then_some(v)
    };
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        x[i] = theta[i] + h[i];
        let fp = eval(&x)?;
        x[i] = theta[i] - h[i];
        let fm = eval(&x)?;
        x[i] = theta[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| -> Option<f64> {
                x[i] = theta[i] + si * h[i];
                x[j] = theta[j] + sj * h[j];
                let v = eval(&x);
                x[i] = theta[i];
                x[j] = theta[j];
                v
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let inv = hess.clone().cholesky().map(|c| c.inverse()).or_else(|| hess.try_inverse())?;
    if (0..d).all(|i| inv[(i, i)] > 0.0 && inv[(i, i)].is_finite()) {
        Some(inv)
    } else {
        None
    }
}
