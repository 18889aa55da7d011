//! Entry when every firm has access to the same model.
//!
//! With `N_E` identical models bought and equally weighted the consumer's
//! utility is `-B - V / N_E - sigma2`, so each firm's marginal contribution
//! is `V / (N_E (N_E - 1))` and firms keep entering while that covers the
//! cost. Indifferent firms enter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiner::{coalition_utility, Coalition, DEFAULT_COALITION_CAP};
use crate::error::{invalid, Error, Result};
use crate::models::{MarketConfig, ModelSummary};
use crate::pricing::{marginal_prices, surpluses};

/// Standing assumptions of the symmetric entry game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assumption {
    /// `V / (N (N - 1)) < c`: the pool of potential entrants never runs out.
    EnoughPotentialEntrants,
    /// `u < -B - V - sigma2 - c`: at least one firm enters.
    SomeEntry,
    /// `u < -B - 1.5 V - sigma2`: decreasing marginal returns.
    DecreasingReturns,
}

impl std::fmt::Display for Assumption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Assumption::EnoughPotentialEntrants => "enough_potential_entrants",
            Assumption::SomeEntry => "some_entry",
            Assumption::DecreasingReturns => "decreasing_returns",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMarket {
    pub bias2: f64,
    pub variance: f64,
    pub sigma2: f64,
    pub cost: f64,
    pub outside_option: f64,
    pub n_firms: usize,
}

impl SymmetricMarket {
    /// Reference market: `B = 0`, `c = 0.25`, `u = -5`, `sigma2 = 1`, ten potential entrants.
    pub fn figure_defaults(variance: f64) -> Self {
        Self {
            bias2: 0.0,
            variance,
            sigma2: 1.0,
            cost: 0.25,
            outside_option: -5.0,
            n_firms: 10,
        }
    }

    pub fn with_variance(self, variance: f64) -> Self {
        Self { variance, ..self }
    }

    /// Assumptions that fail for this market (empty when all hold).
    pub fn violations(&self) -> Vec<Assumption> {
        let mut failed = Vec::new();
        let n = self.n_firms as f64;
        if !(self.cost * n * (n - 1.0) > self.variance) {
            failed.push(Assumption::EnoughPotentialEntrants);
        }
        if !(self.outside_option < -self.bias2 - self.variance - self.sigma2 - self.cost) {
            failed.push(Assumption::SomeEntry);
        }
        if !(self.outside_option < -self.bias2 - 1.5 * self.variance - self.sigma2) {
            failed.push(Assumption::DecreasingReturns);
        }
        failed
    }

    /// Checks parameter ranges and the assumptions the closed form needs.
    ///
    /// The decreasing-returns inequality is only sufficient. When it fails
    /// the closed form is still accepted if buying every entrant's model at
    /// the closed-form price is optimal for the consumer, which makes the
    /// marginal-contribution prices a fixed point of the price map.
    pub fn validate(&self) -> Result<()> {
        if !(self.bias2 >= 0.0 && self.variance >= 0.0 && self.sigma2 >= 0.0) {
            return Err(invalid("bias2/variance/sigma2", "must be >= 0"));
        }
        if !(self.cost > 0.0) {
            return Err(invalid("cost", "must be > 0"));
        }
        if self.n_firms == 0 {
            return Err(invalid("n_firms", "must be >= 1"));
        }
        let failed = self.violations();
        let fatal = failed.iter().any(|a| *a != Assumption::DecreasingReturns)
            || (!failed.is_empty() && !self.buy_all_optimal(count_unchecked(self)));
        if fatal {
            Err(Error::Assumptions(failed))
        } else {
            Ok(())
        }
    }

    /// Utility of buying `m` copies of the common model (`u` for none).
    fn utility(&self, m: usize) -> f64 {
        if m == 0 {
            self.outside_option
        } else {
            -self.bias2 - self.variance / m as f64 - self.sigma2
        }
    }

    /// Whether the consumer weakly prefers buying all `n` models at the
    /// closed-form price to buying any fewer.
    fn buy_all_optimal(&self, n: usize) -> bool {
        let price = outcome_with(self, n).price;
        let all = self.utility(n) - n as f64 * price;
        (0..n).all(|m| self.utility(m) - m as f64 * price <= all + 1e-12)
    }

    pub fn config(&self) -> MarketConfig {
        MarketConfig {
            sigma2: self.sigma2,
            outside_option: self.outside_option,
            n_firms: self.n_firms,
        }
    }

    /// The common model as a summary (bias along a single direction).
    pub fn summary(&self) -> Result<ModelSummary> {
        ModelSummary::scalar(self.bias2.sqrt(), self.variance, self.cost)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryOutcome {
    pub n_entrants: usize,
    pub price: f64,
    pub consumer: f64,
    pub producer: f64,
    pub total: f64,
}

/// Largest `j` with `c j (j - 1) <= V`, or 1 when `V < 2c`.
pub fn entry_count(m: &SymmetricMarket) -> Result<usize> {
    m.validate()?;
    Ok(count_unchecked(m))
}

fn count_unchecked(m: &SymmetricMarket) -> usize {
    let mut j = 1usize;
    while m.cost * ((j + 1) * j) as f64 <= m.variance {
        j += 1;
    }
    j
}

pub fn equilibrium(m: &SymmetricMarket) -> Result<EntryOutcome> {
    m.validate()?;
    Ok(outcome_with(m, count_unchecked(m)))
}

/// Closed-form outcome when exactly `n` firms enter.
pub fn outcome_with(m: &SymmetricMarket, n: usize) -> EntryOutcome {
    let nf = n as f64;
    let base = -m.bias2 - m.sigma2 - m.outside_option;
    let (price, consumer) = if n == 1 {
        (base - m.variance, 0.0)
    } else {
        let pair = nf * (nf - 1.0);
        (m.variance / pair, base - (2.0 * nf - 1.0) / pair * m.variance)
    };
    EntryOutcome {
        n_entrants: n,
        price,
        consumer,
        producer: nf * (price - m.cost),
        total: base - m.variance / nf - nf * m.cost,
    }
}

/// One row of a variance sweep; `outcome` is absent when the closed form
/// does not apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variance: f64,
    pub outcome: Option<EntryOutcome>,
    pub violations: Vec<Assumption>,
}

pub fn sweep_variance(grid: &[f64], base: &SymmetricMarket) -> Vec<SweepRow> {
    grid.par_iter()
        .map(|&v| {
            let m = base.with_variance(v);
            match equilibrium(&m) {
                // a failed sufficient condition is still recorded on the row
                Ok(outcome) => SweepRow {
                    variance: v,
                    outcome: Some(outcome),
                    violations: m.violations(),
                },
                Err(Error::Assumptions(violations)) => SweepRow {
                    variance: v,
                    outcome: None,
                    violations,
                },
                Err(_) => SweepRow {
                    variance: v,
                    outcome: None,
                    violations: m.violations(),
                },
            }
        })
        .collect()
}

/// Comparison of a claimed outcome with prices computed from model summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crosscheck {
    pub price_matches: bool,
    pub surpluses_match: bool,
    /// Every entrant covers its cost at the claimed entry level.
    pub entrants_cover_cost: bool,
    /// One more entrant would price below cost (vacuous when the pool is exhausted).
    pub extra_entrant_loses: bool,
}

impl Crosscheck {
    pub fn passed(&self) -> bool {
        self.price_matches && self.surpluses_match && self.entrants_cover_cost && self.extra_entrant_loses
    }
}

const CROSSCHECK_TOL: f64 = 1e-9;

pub fn crosscheck_with_pricing(m: &SymmetricMarket) -> Result<Crosscheck> {
    let claimed = equilibrium(m)?;
    crosscheck_outcome(m, &claimed)
}

/// Recomputes prices and surpluses for the claimed number of entrants with
/// the generic pricing machinery and compares them with `claimed`.
pub fn crosscheck_outcome(m: &SymmetricMarket, claimed: &EntryOutcome) -> Result<Crosscheck> {
    let cfg = m.config();
    let n = claimed.n_entrants;
    if n == 0 || n + 1 > DEFAULT_COALITION_CAP {
        return Err(invalid("n_entrants", format!("{n} outside the checkable range")));
    }
    let model = m.summary()?;
    let entrants = Coalition::from_summaries(vec![model.clone(); n])?;
    let prices = marginal_prices(&entrants, &cfg)?;
    let report = surpluses(&entrants, &prices, &cfg)?;

    let close = |a: f64, b: f64| (a - b).abs() <= CROSSCHECK_TOL * (1.0 + b.abs());
    let price_matches = prices.prices().iter().all(|&p| close(claimed.price, p));
    let surpluses_match =
        close(claimed.consumer, report.consumer) && close(claimed.producer, report.producer) && close(claimed.total, report.total);
    let entrants_cover_cost = prices.prices().iter().all(|&p| p >= m.cost - CROSSCHECK_TOL);

    let extra_entrant_loses = if n + 1 > m.n_firms {
        true
    } else {
        let more = Coalition::from_summaries(vec![model; n + 1])?;
        marginal_prices(&more, &cfg)?.prices().iter().any(|&p| p < m.cost)
    };

    // a lone entrant extracts the whole gain over the outside option
    let price_matches = price_matches
        && (n != 1 || close(claimed.price, coalition_utility(&entrants, &cfg)? - cfg.outside_option));

    Ok(Crosscheck {
        price_matches,
        surpluses_match,
        entrants_cover_cost,
        extra_entrant_loses,
    })
}
