//! Model summaries and the concrete model families they are built from.
//!
//! A [`ModelSummary`] carries everything the market formulas need from a
//! model: its expected variance, its cost, and a bias vector whose squared
//! norm is the expected squared bias and whose inner products with other
//! bias vectors give the cross-bias terms `E[b_i b_j]`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Cost assigned by the family constructors; override with [`ModelSummary::with_cost`].
pub const DEFAULT_COST: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    bias: Vec<f64>,
    variance: f64,
    cost: f64,
    #[serde(default)]
    label: String,
}

impl ModelSummary {
    pub fn new(bias: Vec<f64>, variance: f64, cost: f64) -> Result<Self> {
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(invalid("bias", "entries must be finite"));
        }
        if !(variance.is_finite() && variance >= 0.0) {
            return Err(invalid("variance", format!("must be >= 0, got {variance}")));
        }
        if !(cost.is_finite() && cost > 0.0) {
            return Err(invalid("cost", format!("must be > 0, got {cost}")));
        }
        Ok(Self {
            bias,
            variance,
            cost,
            label: String::new(),
        })
    }

    /// A model whose bias lies along a single fixed direction.
    pub fn scalar(bias: f64, variance: f64, cost: f64) -> Result<Self> {
        Self::new(vec![bias], variance, cost)
    }

    pub fn with_cost(mut self, cost: f64) -> Result<Self> {
        if !(cost.is_finite() && cost > 0.0) {
            return Err(invalid("cost", format!("must be > 0, got {cost}")));
        }
        self.cost = cost;
        Ok(self)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Expected squared bias `B`.
    pub fn squared_bias(&self) -> f64 {
        self.bias.iter().map(|b| b * b).sum()
    }

    /// Expected loss of the model used alone, excluding irreducible noise.
    pub fn error(&self) -> f64 {
        self.squared_bias() + self.variance
    }

    /// Cross-bias term `E[b_i b_j]`.
    pub fn bias_inner(&self, other: &ModelSummary) -> Result<f64> {
        if self.bias.len() != other.bias.len() {
            return Err(Error::BiasDimension {
                left: self.bias.len(),
                right: other.bias.len(),
            });
        }
        Ok(self.bias.iter().zip(&other.bias).map(|(a, b)| a * b).sum())
    }
}

/// Market-wide parameters shared by all firms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub sigma2: f64,
    pub outside_option: f64,
    pub n_firms: usize,
}

impl MarketConfig {
    pub fn new(sigma2: f64, outside_option: f64, n_firms: usize) -> Result<Self> {
        let cfg = Self {
            sigma2,
            outside_option,
            n_firms,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return Err(invalid("sigma2", "must be >= 0"));
        }
        if !(self.outside_option.is_finite() && self.outside_option < 0.0) {
            return Err(invalid("outside_option", "must be < 0"));
        }
        if self.n_firms == 0 {
            return Err(invalid("n_firms", "must be >= 1"));
        }
        Ok(())
    }
}

/// Shrinkage forecaster `r * y` of a Gaussian state observed with noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastSpec {
    pub r: f64,
    pub prior_var: f64,
    pub noise_var: f64,
}

/// Least squares on a subset of `k` i.i.d. standard normal covariates.
///
/// Covariates are indexed `0..k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsSpec {
    pub k: usize,
    pub n: usize,
    pub beta2: f64,
    pub sigma2: f64,
    pub subset: BTreeSet<usize>,
}

impl OlsSpec {
    pub fn new(
        k: usize,
        n: usize,
        beta2: f64,
        sigma2: f64,
        subset: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let spec = Self {
            k,
            n,
            beta2,
            sigma2,
            subset: subset.into_iter().collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same market, different covariate subset.
    pub fn with_subset(&self, subset: impl IntoIterator<Item = usize>) -> Result<Self> {
        Self::new(self.k, self.n, self.beta2, self.sigma2, subset)
    }

    pub fn d(&self) -> usize {
        self.subset.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k", "must be >= 1"));
        }
        if !(self.beta2.is_finite() && self.beta2 > 0.0) {
            return Err(invalid("beta2", "must be > 0"));
        }
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return Err(invalid("sigma2", "must be >= 0"));
        }
        if let Some(&index) = self.subset.iter().find(|&&l| l >= self.k) {
            return Err(Error::CovariateOutOfRange { index, k: self.k });
        }
        if self.n <= self.d() + 1 {
            return Err(Error::InsufficientData {
                n: self.n,
                d: self.d(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeSpec {
    pub lambda: f64,
    pub singular_values: Vec<f64>,
}

pub fn forecast_summary(spec: &ForecastSpec) -> Result<ModelSummary> {
    if !(0.0..=1.0).contains(&spec.r) {
        return Err(invalid("r", format!("must lie in [0, 1], got {}", spec.r)));
    }
    if !(spec.prior_var >= 0.0 && spec.noise_var >= 0.0) {
        return Err(invalid("prior_var/noise_var", "must be >= 0"));
    }
    let bias = (1.0 - spec.r) * spec.prior_var.sqrt();
    let variance = spec.r * spec.r * spec.noise_var;
    Ok(ModelSummary::scalar(bias, variance, DEFAULT_COST)?.with_label(format!("forecast(r={})", spec.r)))
}

/// Bias-variance summary of least squares on `spec.subset`.
///
/// The bias vector has one coordinate per covariate, equal to `sqrt(beta2)`
/// on excluded covariates, so two summaries have inner product
/// `beta2 * |covariates excluded by both|`.
pub fn ols_summary(spec: &OlsSpec) -> Result<ModelSummary> {
    spec.validate()?;
    let d = spec.d();
    let excluded = (spec.k - d) as f64;
    let variance = (spec.beta2 * excluded + spec.sigma2) * d as f64 / (spec.n - d - 1) as f64;
    let scale = spec.beta2.sqrt();
    let bias = (0..spec.k)
        .map(|l| if spec.subset.contains(&l) { 0.0 } else { scale })
        .collect();
    let label = format!("ols{:?}", spec.subset);
    Ok(ModelSummary::new(bias, variance, DEFAULT_COST)?.with_label(label))
}

/// One minus the mean shrinkage `s^2 / (s^2 + lambda)` over the spectrum.
pub fn ridge_bias_factor(spec: &RidgeSpec) -> Result<f64> {
    if spec.singular_values.is_empty() {
        return Err(invalid("singular_values", "spectrum is empty"));
    }
    if !(spec.lambda >= 0.0) {
        return Err(invalid("lambda", "must be >= 0"));
    }
    if spec.singular_values.iter().any(|s| !(*s >= 0.0)) {
        return Err(invalid("singular_values", "must be >= 0"));
    }
    if spec.lambda.is_infinite() {
        return Ok(1.0);
    }
    let kept: f64 = spec
        .singular_values
        .iter()
        .map(|s| {
            let s2 = s * s;
            // a zero singular value with no penalty keeps nothing and shrinks nothing
            if s2 + spec.lambda == 0.0 {
                1.0
            } else {
                s2 / (s2 + spec.lambda)
            }
        })
        .sum();
    Ok(1.0 - kept / spec.singular_values.len() as f64)
}
