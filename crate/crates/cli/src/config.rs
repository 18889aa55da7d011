//! TOML run configuration. Every section and key is optional; missing
//! values take the defaults below, unknown keys are rejected.

use std::path::Path;

use anyhow::{bail, Context};
use predmkt::deterrence::CommonBiasModel;
use predmkt::differentiation::CostSchedule;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sweep: SweepConfig,
    pub prices: PricesConfig,
    pub diff: DiffConfig,
    pub olsgame: OlsGameConfig,
    pub deter: DeterConfig,
    pub verify: VerifyConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError::new(format!("{}: {e}", path.display())).into())
    }
}

/// Symmetric free-entry sweep over model variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub bias2: f64,
    pub sigma2: f64,
    pub cost: f64,
    pub outside_option: f64,
    pub n_firms: usize,
    /// Explicit variances; when empty the grid is `step * i` for `i = 1..=count`.
    pub variances: Vec<f64>,
    pub step: f64,
    pub count: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            bias2: 0.0,
            sigma2: 1.0,
            cost: 0.25,
            outside_option: -5.0,
            n_firms: 10,
            variances: Vec::new(),
            step: 0.01,
            count: 320,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> anyhow::Result<Vec<f64>> {
        let grid: Vec<f64> = if self.variances.is_empty() {
            if !(self.step > 0.0) || self.count == 0 {
                bail!(UsageError::new("sweep grid needs step > 0 and count >= 1"));
            }
            // i / 100 is exact where step * i is not
            let inv = 1.0 / self.step;
            if (inv - inv.round()).abs() < 1e-9 {
                (1..=self.count).map(|i| i as f64 / inv.round()).collect()
            } else {
                (1..=self.count).map(|i| i as f64 * self.step).collect()
            }
        } else {
            self.variances.clone()
        };
        if grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            bail!(UsageError::new("sweep variances must be finite and > 0"));
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub bias: Vec<f64>,
    pub variance: f64,
    #[serde(default = "default_model_cost")]
    pub cost: f64,
}

fn default_model_cost() -> f64 {
    predmkt::models::DEFAULT_COST
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricesConfig {
    pub sigma2: f64,
    pub outside_option: f64,
    pub models: Vec<ModelEntry>,
}

impl Default for PricesConfig {
    fn default() -> Self {
        let unbiased = |variance| ModelEntry {
            bias: vec![0.0],
            variance,
            cost: default_model_cost(),
        };
        Self {
            sigma2: 1.0,
            outside_option: -5.0,
            models: vec![unbiased(1.0), unbiased(3.0)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// V(t) = 1 - t, B(t) = t^2
    Tradeoff,
    /// Constant-magnitude bias rotating at unit rate
    Rotating,
    /// V(t) = v0 + slope * t with flat bias
    LinearVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffConfig {
    pub family: FamilyKind,
    pub grid_resolution: usize,
    /// Squared bias for the rotating and linear-variance families.
    pub b0: f64,
    pub variance: f64,
    pub slope: f64,
}

impl Default for DiffConfig {
    fn default() -> Self {
        Self {
            family: FamilyKind::Tradeoff,
            grid_resolution: 50,
            b0: 1.0,
            variance: 0.5,
            slope: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OlsGameConfig {
    pub k: usize,
    pub n: usize,
    pub beta2: f64,
    pub sigma2: f64,
    pub cost: CostSchedule,
    /// Outside option used for the consumer-surplus comparison.
    pub outside_option: f64,
    /// Noise level for the costless interior-optimum check.
    pub costless_sigma2: f64,
}

impl Default for OlsGameConfig {
    fn default() -> Self {
        Self {
            k: 6,
            n: 20,
            beta2: 1.0,
            sigma2: 1.0,
            cost: CostSchedule::Quadratic {
                fixed: 0.01,
                linear: 0.0,
                quadratic: 0.1,
            },
            outside_option: -20.0,
            costless_sigma2: 26.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DeterFamily {
    /// Ridge-like bias/variance frontier
    Ridge,
    /// Equal biases, cost falling in variance
    Overinvestment,
    /// Explicit model lists from the config file
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeterConfig {
    pub family: DeterFamily,
    pub b0: f64,
    pub sigma2: f64,
    /// Defaults depend on the family; see [`DeterConfig::cf_range`].
    pub cf_min: Option<f64>,
    pub cf_max: Option<f64>,
    pub cf_count: usize,
    pub u_min: f64,
    pub u_max: f64,
    pub u_count: usize,
    pub incumbent_set: Vec<CommonBiasModel>,
    pub challenger_set: Vec<CommonBiasModel>,
}

impl Default for DeterConfig {
    fn default() -> Self {
        Self {
            family: DeterFamily::Ridge,
            b0: 1.0,
            sigma2: 1.0,
            cf_min: None,
            cf_max: None,
            cf_count: 50,
            u_min: -8.0,
            u_max: -2.5,
            u_count: 50,
            incumbent_set: Vec::new(),
            challenger_set: Vec::new(),
        }
    }
}

impl DeterConfig {
    pub fn cf_range(&self) -> (f64, f64) {
        let hi = match self.family {
            DeterFamily::Ridge => 0.1,
            DeterFamily::Overinvestment | DeterFamily::Custom => 0.5,
        };
        (self.cf_min.unwrap_or(0.0), self.cf_max.unwrap_or(hi))
    }
}

pub fn linspace(lo: f64, hi: f64, count: usize) -> anyhow::Result<Vec<f64>> {
    if count == 0 || !lo.is_finite() || !hi.is_finite() || (count > 1 && !(hi > lo)) {
        bail!(UsageError::new(format!("bad grid [{lo}, {hi}] with {count} points")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let mc = predmkt::mcoracle::McConfig::default();
        Self {
            trials: mc.trials,
            seed: mc.seed,
            tolerance: mc.tolerance,
        }
    }
}
