//! Monte Carlo checks of the closed-form bias-variance summaries.
//!
//! Every trial draws from its own ChaCha8 stream (`seed`, stream = trial
//! index) and per-trial results are reduced in trial order, so estimates
//! are bit-identical whatever the thread count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiner::{loss_of_weights, Coalition, WeightVector};
use crate::error::{invalid, Error, Result};
use crate::models::{forecast_summary, ols_summary, ridge_bias_factor, ForecastSpec, OlsSpec, RidgeSpec};

pub const DEFAULT_TRIALS: usize = 200_000;
pub const DEFAULT_SEED: u64 = 20_240_611;
pub const DEFAULT_TOLERANCE: f64 = 0.02;
/// Targets at or below this size are judged in standard errors.
pub const NEAR_ZERO: f64 = 1e-12;
pub const ZERO_TARGET_SES: f64 = 3.0;
/// Absolute slack for zero targets hit exactly up to rounding.
pub const ROUNDING_FLOOR: f64 = 1e-12;
/// Give up on a trial after this many singular designs in a row.
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

impl McConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 2 {
            return Err(invalid("trials", "must be >= 2"));
        }
        if !(self.tolerance > 0.0) {
            return Err(invalid("tolerance", "must be > 0"));
        }
        Ok(())
    }

    fn rng(&self, trial: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial as u64);
        rng
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    fn from_samples(xs: impl Iterator<Item = f64> + Clone) -> Self {
        let n = xs.clone().count() as f64;
        let mean = xs.clone().sum::<f64>() / n;
        let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            value: mean,
            stderr: (var / n).sqrt(),
        }
    }
}

/// Runs `trial` for every index in parallel and returns results in index order.
fn run_trials<T: Send>(mc: &McConfig, trial: impl Fn(&mut ChaCha8Rng) -> Result<T> + Sync) -> Result<Vec<T>> {
    mc.validate()?;
    (0..mc.trials)
        .into_par_iter()
        .map(|t| trial(&mut mc.rng(t)))
        .collect()
}

fn column<const N: usize>(rows: &[[f64; N]], i: usize) -> Estimate {
    Estimate::from_samples(rows.iter().map(move |r| r[i]))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * normal(rng))
}

struct Draw {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

fn draw_dataset(rng: &mut ChaCha8Rng, n: usize, beta: &DVector<f64>, sigma: f64) -> Draw {
    let x = DMatrix::from_fn(n, beta.len(), |_, _| normal(rng));
    let y = &x * beta + normals(rng, n, sigma);
    Draw { x, y }
}

/// Least squares on `cols`, zero elsewhere; `None` for a singular design.
fn fit_subset(d: &Draw, cols: &[usize]) -> Option<DVector<f64>> {
    let mut full = DVector::zeros(d.x.ncols());
    if cols.is_empty() {
        return Some(full);
    }
    let xs = d.x.select_columns(cols);
    let coef = (xs.transpose() * &xs).cholesky()?.solve(&(xs.transpose() * &d.y));
    for (c, &j) in cols.iter().enumerate() {
        full[j] = coef[c];
    }
    Some(full)
}

/// Draws datasets until the subset fit is nonsingular; returns the fit and
/// the number of redraws.
fn fit_fresh(rng: &mut ChaCha8Rng, spec: &OlsSpec, beta: &DVector<f64>, cols: &[usize]) -> Result<(DVector<f64>, usize)> {
    for redraws in 0..MAX_REDRAWS {
        let data = draw_dataset(rng, spec.n, beta, spec.sigma2.sqrt());
        if let Some(coef) = fit_subset(&data, cols) {
            return Ok((coef, redraws));
        }
    }
    Err(Error::Singular("design stayed singular after repeated redraws"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub squared_bias: Estimate,
    pub variance: Estimate,
    pub mse: Estimate,
    /// Trials whose design had to be redrawn.
    pub regenerated: usize,
}

/// Least squares on a covariate subset with `beta ~ N(0, beta2 I)` and
/// `x ~ N(0, I)`.
///
/// Each trial fits two independent datasets for the same `beta` and scores
/// them at one fresh test point: the product of their errors estimates the
/// squared bias and half their squared gap estimates the variance.
pub fn simulate_ols(spec: &OlsSpec, mc: &McConfig) -> Result<Decomposition> {
    spec.validate()?;
    let cols: Vec<usize> = spec.subset.iter().copied().collect();
    let rows = run_trials(mc, |rng| {
        let beta = normals(rng, spec.k, spec.beta2.sqrt());
        let (c1, r1) = fit_fresh(rng, spec, &beta, &cols)?;
        let (c2, r2) = fit_fresh(rng, spec, &beta, &cols)?;
        let x = normals(rng, spec.k, 1.0);
        let f = x.dot(&beta);
        let y = f + spec.sigma2.sqrt() * normal(rng);
        let (p1, p2) = (x.dot(&c1), x.dot(&c2));
        let redrawn = if r1 + r2 > 0 { 1.0 } else { 0.0 };
        Ok([(p1 - f) * (p2 - f), 0.5 * (p1 - p2).powi(2), (p1 - y).powi(2), redrawn])
    })?;
    Ok(Decomposition {
        squared_bias: column(&rows, 0),
        variance: column(&rows, 1),
        mse: column(&rows, 2),
        regenerated: rows.iter().filter(|r| r[3] > 0.0).count(),
    })
}

/// Expected loss of `w f1 + (1 - w) f2` where each firm fits its own subset
/// on an independent dataset.
pub fn simulate_combined(first: &OlsSpec, second: &OlsSpec, w: f64, mc: &McConfig) -> Result<Estimate> {
    first.validate()?;
    second.validate()?;
    if (first.k, first.n, first.beta2, first.sigma2) != (second.k, second.n, second.beta2, second.sigma2) {
        return Err(invalid("specs", "must share k, n, beta2 and sigma2"));
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(invalid("w", "must lie in [0, 1]"));
    }
    let c1: Vec<usize> = first.subset.iter().copied().collect();
    let c2: Vec<usize> = second.subset.iter().copied().collect();
    let rows = run_trials(mc, |rng| {
        let beta = normals(rng, first.k, first.beta2.sqrt());
        let (b1, _) = fit_fresh(rng, first, &beta, &c1)?;
        let (b2, _) = fit_fresh(rng, second, &beta, &c2)?;
        let x = normals(rng, first.k, 1.0);
        let y = x.dot(&beta) + first.sigma2.sqrt() * normal(rng);
        Ok([(w * x.dot(&b1) + (1.0 - w) * x.dot(&b2) - y).powi(2)])
    })?;
    Ok(column(&rows, 0))
}

/// Loss the combiner predicts for [`simulate_combined`].
pub fn combined_target(first: &OlsSpec, second: &OlsSpec, w: f64) -> Result<f64> {
    let pair = Coalition::from_summaries(vec![ols_summary(first)?, ols_summary(second)?])?;
    loss_of_weights(&pair, &WeightVector::new(vec![w, 1.0 - w])?, first.sigma2)
}

/// Shrunk signal forecast `r y` with `theta ~ N(0, prior_var)` and
/// `y = theta + N(0, noise_var)`.
pub fn simulate_forecast(spec: &ForecastSpec, mc: &McConfig) -> Result<Decomposition> {
    forecast_summary(spec)?;
    let (prior, noise) = (spec.prior_var.sqrt(), spec.noise_var.sqrt());
    let rows = run_trials(mc, |rng| {
        let theta = prior * normal(rng);
        let f1 = spec.r * (theta + noise * normal(rng));
        let f2 = spec.r * (theta + noise * normal(rng));
        Ok([(f1 - theta) * (f2 - theta), 0.5 * (f1 - f2).powi(2), (f1 - theta).powi(2)])
    })?;
    Ok(Decomposition {
        squared_bias: column(&rows, 0),
        variance: column(&rows, 1),
        mse: column(&rows, 2),
        regenerated: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeDesign {
    pub k: usize,
    pub n: usize,
    pub beta2: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeEstimate {
    pub lambda: f64,
    /// `1 - b'Hb / b'b` for `E[beta_hat | X, beta] = H beta`, along `b = beta`.
    pub shrinkage: Estimate,
    /// [`ridge_bias_factor`] on each trial's singular values.
    pub spectrum_factor: Estimate,
    /// Product of two independent fit errors on the same design.
    pub squared_bias: Estimate,
}

/// Ridge fits over a grid of penalties, sharing every random draw across the grid.
pub fn simulate_ridge(design: &RidgeDesign, lambdas: &[f64], mc: &McConfig) -> Result<Vec<RidgeEstimate>> {
    if design.k == 0 || design.n == 0 {
        return Err(invalid("design", "k and n must be positive"));
    }
    if lambdas.is_empty() || lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(invalid("lambdas", "must be a nonempty list of values >= 0"));
    }
    let (k, sigma) = (design.k, design.sigma2.sqrt());
    let rows = run_trials(mc, |rng| {
        let beta = normals(rng, k, design.beta2.sqrt());
        let x = DMatrix::from_fn(design.n, k, |_, _| normal(rng));
        let y1 = &x * &beta + normals(rng, design.n, sigma);
        let y2 = &x * &beta + normals(rng, design.n, sigma);
        let gram = x.transpose() * &x;
        let singular_values = x.singular_values().as_slice().to_vec();
        lambdas
            .iter()
            .map(|&lambda| {
                let chol = (&gram + DMatrix::identity(k, k) * lambda)
                    .cholesky()
                    .ok_or(Error::Singular("ridge system is singular"))?;
                let mean_fit = chol.solve(&(&gram * &beta));
                let e1 = chol.solve(&(x.transpose() * &y1)) - &beta;
                let e2 = chol.solve(&(x.transpose() * &y2)) - &beta;
                let factor = ridge_bias_factor(&RidgeSpec {
                    lambda,
                    singular_values: singular_values.clone(),
                })?;
                Ok([1.0 - beta.dot(&mean_fit) / beta.dot(&beta), factor, e1.dot(&e2)])
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let at = |c: usize| Estimate::from_samples(rows.iter().map(move |r| r[i][c]));
            RidgeEstimate {
                lambda,
                shrinkage: at(0),
                spectrum_factor: at(1),
                squared_bias: at(2),
            }
        })
        .collect())
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub estimate: f64,
    pub target: f64,
    pub stderr: f64,
    pub pass: bool,
}

impl Check {
    /// Relative tolerance for nonzero targets, standard errors for zero ones.
    pub fn judge(name: impl Into<String>, est: Estimate, target: f64, tolerance: f64) -> Self {
        let gap = (est.value - target).abs();
        let pass = if target.abs() > NEAR_ZERO {
            gap <= tolerance * target.abs()
        } else {
            gap <= ZERO_TARGET_SES * est.stderr + ROUNDING_FLOOR
        };
        Self {
            name: name.into(),
            estimate: est.value,
            target,
            stderr: est.stderr,
            pass,
        }
    }
}

/// The least-squares instance used by the default checks: `k = 4`, `n = 20`,
/// unit signal and noise.
pub fn default_ols(subset: impl IntoIterator<Item = usize>) -> Result<OlsSpec> {
    OlsSpec::new(4, 20, 1.0, 1.0, subset)
}

pub fn ols_checks(spec: &OlsSpec, mc: &McConfig) -> Result<Vec<Check>> {
    let target = ols_summary(spec)?;
    let est = simulate_ols(spec, mc)?;
    let tag = format!("ols_k{}_n{}_d{}", spec.k, spec.n, spec.d());
    Ok(vec![
        Check::judge(format!("{tag}_squared_bias"), est.squared_bias, target.squared_bias(), mc.tolerance),
        Check::judge(format!("{tag}_variance"), est.variance, target.variance(), mc.tolerance),
        Check::judge(format!("{tag}_mse"), est.mse, spec.sigma2 + target.error(), mc.tolerance),
    ])
}

pub fn combined_check(name: &str, first: &OlsSpec, second: &OlsSpec, w: f64, mc: &McConfig) -> Result<Check> {
    let est = simulate_combined(first, second, w, mc)?;
    Ok(Check::judge(name, est, combined_target(first, second, w)?, mc.tolerance))
}

pub fn forecast_checks(spec: &ForecastSpec, mc: &McConfig) -> Result<Vec<Check>> {
    let target = forecast_summary(spec)?;
    let est = simulate_forecast(spec, mc)?;
    let tag = format!("forecast_r{}", spec.r);
    Ok(vec![
        Check::judge(format!("{tag}_squared_bias"), est.squared_bias, target.squared_bias(), mc.tolerance),
        Check::judge(format!("{tag}_variance"), est.variance, target.variance(), mc.tolerance),
    ])
}

pub fn ridge_checks(design: &RidgeDesign, mc: &McConfig) -> Result<Vec<Check>> {
    let grid = [0.0, 1.0, 10.0];
    let est = simulate_ridge(design, &grid, mc)?;
    let steps: Vec<f64> = est
        .windows(2)
        .map(|w| w[1].squared_bias.value - w[0].squared_bias.value)
        .collect();
    let min_step = steps.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(vec![
        Check::judge("ridge_lambda0_shrinkage", est[0].shrinkage, 0.0, mc.tolerance),
        Check::judge(
            "ridge_lambda1_shrinkage_vs_spectrum",
            est[1].shrinkage,
            est[1].spectrum_factor.value,
            mc.tolerance,
        ),
        Check {
            name: "ridge_squared_bias_nondecreasing".into(),
            estimate: min_step,
            target: 0.0,
            stderr: 0.0,
            pass: min_step >= 0.0,
        },
    ])
}

/// Every simulation check at the default instances.
pub fn verify_all(mc: &McConfig) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for d in 0..=4 {
        checks.extend(ols_checks(&default_ols(0..d)?, mc)?);
    }

    let pair = default_ols([0, 1])?;
    checks.push(combined_check("combined_same_model_half", &pair, &pair, 0.5, mc)?);
    checks.push(combined_check(
        "combined_disjoint_cover",
        &pair,
        &default_ols([2, 3])?,
        0.5,
        mc,
    )?);
    checks.push(combined_check(
        "combined_overlap_one",
        &pair,
        &default_ols([1, 2])?,
        0.4,
        mc,
    )?);

    for r in [0.0, 1.0, 0.5] {
        let spec = ForecastSpec {
            r,
            prior_var: 2.0,
            noise_var: 1.0,
        };
        checks.extend(forecast_checks(&spec, mc)?);
    }

    let design = RidgeDesign {
        k: 4,
        n: 20,
        beta2: 1.0,
        sigma2: 1.0,
    };
    checks.extend(ridge_checks(&design, mc)?);
    Ok(checks)
}
