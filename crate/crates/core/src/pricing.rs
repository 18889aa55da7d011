//! Equilibrium prices of the pricing subgame.
//!
//! Given the set of entrants, each firm's price leaves the consumer
//! indifferent between buying everything and her best purchase that omits
//! that firm. This is a fixed point of the piecewise-affine map [`psi_map`].
//! When coalition utilities have decreasing marginal returns the fixed point
//! is given directly by marginal contributions ([`marginal_prices`]).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiner::{check_cap, minimize_on_simplex, positions, Coalition, DEFAULT_COALITION_CAP};
use crate::error::{invalid, Error, Result};
use crate::models::{MarketConfig, ModelSummary};

pub const DAMPING: f64 = 0.5;
pub const PRICE_TOL: f64 = 1e-12;
pub const MAX_ITERATIONS: usize = 100_000;

const DMR_TOL: f64 = 1e-12;
const PROFIT_TOL: f64 = 1e-12;

/// Coalition utilities `U(E')` for every subset of a set of entrants,
/// indexed by bit mask over entrant positions.
#[derive(Debug, Clone)]
pub struct UtilityTable {
    len: usize,
    values: Vec<f64>,
}

impl UtilityTable {
    pub fn new(entrants: &Coalition, cfg: &MarketConfig) -> Result<Self> {
        Self::with_cap(entrants, cfg, DEFAULT_COALITION_CAP)
    }

    pub fn with_cap(entrants: &Coalition, cfg: &MarketConfig, cap: usize) -> Result<Self> {
        check_cap(entrants.len(), cap)?;
        let len = entrants.len();
        let q = entrants.loss_matrix();
        let values = (0u64..1 << len)
            .into_par_iter()
            .map(|mask| {
                if mask == 0 {
                    cfg.outside_option
                } else {
                    let idx: Vec<usize> = positions(mask).collect();
                    -(cfg.sigma2 + minimize_on_simplex(&q, &idx).1)
                }
            })
            .collect();
        Ok(Self { len, values })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn full(&self) -> u64 {
        (1u64 << self.len) - 1
    }

    pub fn utility(&self, mask: u64) -> f64 {
        self.values[mask as usize]
    }

    /// `U(E) - U(E \ {i})` for every position `i`.
    pub fn marginal_contributions(&self) -> Vec<f64> {
        let full = self.full();
        (0..self.len)
            .map(|i| self.utility(full) - self.utility(full & !(1 << i)))
            .collect()
    }

    /// One application of the price map to prices aligned with positions.
    pub fn psi(&self, prices: &[f64]) -> Vec<f64> {
        let full = self.full();
        let total_u = self.utility(full);
        (0..self.len)
            .map(|i| {
                let others = full & !(1 << i);
                let mut best = f64::INFINITY;
                // every E' ⊆ E \ {i}, including the empty set
                let mut sub = others;
                loop {
                    let paid: f64 = positions(others & !sub).map(|j| prices[j]).sum();
                    best = best.min(total_u - self.utility(sub) - paid);
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & others;
                }
                best
            })
            .collect()
    }

    /// Whether buying everything is weakly optimal for the consumer at `prices`.
    pub fn buy_all_optimal(&self, prices: &[f64], tol: f64) -> bool {
        let full = self.full();
        let payoff = |mask: u64| self.utility(mask) - positions(mask).map(|j| prices[j]).sum::<f64>();
        let all = payoff(full);
        (0..full).all(|mask| payoff(mask) <= all + tol)
    }
}

/// Prices keyed by firm index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceProfile {
    members: Vec<usize>,
    prices: Vec<f64>,
}

impl PriceProfile {
    pub fn new(members: Vec<usize>, prices: Vec<f64>) -> Result<Self> {
        if members.len() != prices.len() {
            return Err(Error::DimensionMismatch {
                weights: prices.len(),
                members: members.len(),
            });
        }
        Ok(Self { members, prices })
    }

    fn for_coalition(entrants: &Coalition, prices: Vec<f64>) -> Self {
        Self {
            members: entrants.members().to_vec(),
            prices,
        }
    }

    pub fn get(&self, firm: usize) -> Option<f64> {
        self.members.iter().position(|&m| m == firm).map(|i| self.prices[i])
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Prices in coalition order.
    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn to_map(&self) -> BTreeMap<usize, f64> {
        self.members.iter().copied().zip(self.prices.iter().copied()).collect()
    }

    pub fn total(&self) -> f64 {
        self.prices.iter().sum()
    }

    fn aligned_to(&self, entrants: &Coalition) -> Result<Vec<f64>> {
        entrants
            .members()
            .iter()
            .map(|&m| self.get(m).ok_or_else(|| invalid("prices", format!("no price for firm {m}"))))
            .collect()
    }
}

/// A fixed point of the price map with its certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSolution {
    pub profile: PriceProfile,
    /// `max_i |Psi_i(p) - p_i|` at the returned prices.
    pub residual: f64,
    pub iterations: usize,
    /// The box `[lower, upper]` every price is confined to.
    pub lower: f64,
    pub upper: f64,
}

pub fn psi_map(p: &PriceProfile, entrants: &Coalition, cfg: &MarketConfig) -> Result<PriceProfile> {
    if entrants.is_empty() {
        return Err(Error::EmptyCoalition);
    }
    let table = UtilityTable::new(entrants, cfg)?;
    let prices = p.aligned_to(entrants)?;
    Ok(PriceProfile::for_coalition(entrants, table.psi(&prices)))
}

pub fn marginal_prices(entrants: &Coalition, cfg: &MarketConfig) -> Result<PriceProfile> {
    if entrants.is_empty() {
        return Err(Error::EmptyCoalition);
    }
    let table = UtilityTable::new(entrants, cfg)?;
    Ok(PriceProfile::for_coalition(entrants, table.marginal_contributions()))
}

/// Damped fixed-point iteration on the price map, started from marginal
/// contributions and confined to the invariant box.
pub fn solve_prices(entrants: &Coalition, cfg: &MarketConfig) -> Result<PriceSolution> {
    if entrants.is_empty() {
        return Err(Error::EmptyCoalition);
    }
    let table = UtilityTable::new(entrants, cfg)?;
    let start = table.marginal_contributions();
    let (profile, residual, iterations, lower, upper) = solve_on_table(&table, start)?;
    Ok(PriceSolution {
        profile: PriceProfile::for_coalition(entrants, profile),
        residual,
        iterations,
        lower,
        upper,
    })
}

/// As [`solve_prices`], iterating from `start` (clamped into the box).
pub fn solve_prices_from(entrants: &Coalition, cfg: &MarketConfig, start: &[f64]) -> Result<PriceSolution> {
    if entrants.is_empty() {
        return Err(Error::EmptyCoalition);
    }
    if start.len() != entrants.len() {
        return Err(Error::DimensionMismatch {
            weights: start.len(),
            members: entrants.len(),
        });
    }
    let table = UtilityTable::new(entrants, cfg)?;
    let (profile, residual, iterations, lower, upper) = solve_on_table(&table, start.to_vec())?;
    Ok(PriceSolution {
        profile: PriceProfile::for_coalition(entrants, profile),
        residual,
        iterations,
        lower,
        upper,
    })
}

fn solve_on_table(table: &UtilityTable, start: Vec<f64>) -> Result<(Vec<f64>, f64, usize, f64, f64)> {
    let contributions = table.marginal_contributions();
    let upper = contributions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lower = -((table.len() - 1) as f64) * upper;
    let residual_of = |p: &[f64], next: &[f64]| {
        p.iter().zip(next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };

    let mut p: Vec<f64> = start.into_iter().map(|x| x.clamp(lower, upper)).collect();
    let mut next = table.psi(&p);
    let mut residual = residual_of(&p, &next);
    let mut iterations = 0;
    while residual > PRICE_TOL {
        if iterations == MAX_ITERATIONS {
            return Err(Error::NonConvergence { iterations, residual });
        }
        for (pi, ni) in p.iter_mut().zip(&next) {
            *pi = ((1.0 - DAMPING) * *pi + DAMPING * ni).clamp(lower, upper);
        }
        next = table.psi(&p);
        residual = residual_of(&p, &next);
        iterations += 1;
    }

    // exact fixed points are nonnegative; drop negatives within the residual
    if p.iter().any(|&x| x < 0.0 && x >= -residual) {
        let snapped: Vec<f64> = p.iter().map(|&x| if x < 0.0 && x >= -residual { 0.0 } else { x }).collect();
        let snapped_residual = residual_of(&snapped, &table.psi(&snapped));
        if snapped_residual <= PRICE_TOL {
            return Ok((snapped, snapped_residual, iterations, lower, upper));
        }
    }
    Ok((p, residual, iterations, lower, upper))
}

/// A violation of decreasing marginal returns: firm `firm` adds more value
/// to `outer` than to its subset `inner`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmrWitness {
    pub outer: Vec<usize>,
    pub inner: Vec<usize>,
    pub firm: usize,
    pub inner_gain: f64,
    pub outer_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmrReport {
    pub holds: bool,
    pub witness: Option<DmrWitness>,
}

/// Exhaustive check of `U(E') - U(E' \ j) >= U(E) - U(E \ j)` over all
/// `j ∈ E' ⊆ E ⊆ universe`.
pub fn check_dmr(universe: &Coalition, cfg: &MarketConfig) -> Result<DmrReport> {
    let table = UtilityTable::new(universe, cfg)?;
    Ok(check_dmr_on_table(&table, universe.members()))
}

pub(crate) fn check_dmr_on_table(table: &UtilityTable, members: &[usize]) -> DmrReport {
    let gain = |set: u64, j: usize| table.utility(set) - table.utility(set & !(1 << j));
    for outer in 1..=table.full() {
        let mut inner = outer;
        while inner != 0 {
            for j in positions(inner) {
                let (gi, go) = (gain(inner, j), gain(outer, j));
                if gi < go - DMR_TOL * (1.0 + go.abs()) {
                    let names = |mask: u64| positions(mask).map(|p| members[p]).collect();
                    return DmrReport {
                        holds: false,
                        witness: Some(DmrWitness {
                            outer: names(outer),
                            inner: names(inner),
                            firm: members[j],
                            inner_gain: gi,
                            outer_gain: go,
                        }),
                    };
                }
            }
            inner = (inner - 1) & outer;
        }
    }
    DmrReport {
        holds: true,
        witness: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurplusReport {
    pub consumer: f64,
    pub producer: f64,
    pub total: f64,
    pub per_firm_profit: BTreeMap<usize, f64>,
}

/// Surplus accounting when the consumer buys every entrant's model at `prices`.
pub fn surpluses(entrants: &Coalition, prices: &PriceProfile, cfg: &MarketConfig) -> Result<SurplusReport> {
    if entrants.is_empty() {
        return Ok(SurplusReport {
            consumer: 0.0,
            producer: 0.0,
            total: 0.0,
            per_firm_profit: BTreeMap::new(),
        });
    }
    let aligned = prices.aligned_to(entrants)?;
    let utility = crate::combiner::coalition_utility(entrants, cfg)?;
    let paid: f64 = aligned.iter().sum();
    let costs: f64 = entrants.summaries().iter().map(ModelSummary::cost).sum();
    let per_firm_profit: BTreeMap<usize, f64> = entrants
        .members()
        .iter()
        .zip(entrants.summaries())
        .zip(&aligned)
        .map(|((&m, s), p)| (m, p - s.cost()))
        .collect();
    Ok(SurplusReport {
        consumer: utility - paid - cfg.outside_option,
        producer: per_firm_profit.values().sum(),
        total: utility - costs - cfg.outside_option,
        per_firm_profit,
    })
}

/// A unilateral change of model (or exit, when `model` is `None`) that
/// raises the deviating firm's profit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub firm: usize,
    pub model: Option<ModelSummary>,
    pub profit_before: f64,
    pub profit_after: f64,
    pub total_surplus_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyAudit {
    /// Decreasing marginal returns on the profile's entrants; when false the
    /// audit is flagged as unreliable.
    pub dmr_holds: bool,
    pub total_surplus: f64,
    pub deviation: Option<Deviation>,
}

impl EfficiencyAudit {
    pub fn flagged(&self) -> bool {
        !self.dmr_holds
    }

    pub fn is_equilibrium(&self) -> bool {
        self.deviation.is_none()
    }
}

/// Profits of every firm in a profile at marginal-contribution prices, and
/// the profile's total surplus.
pub fn profile_profits(profile: &[Option<ModelSummary>], cfg: &MarketConfig) -> Result<(Vec<f64>, f64)> {
    let (members, summaries): (Vec<usize>, Vec<ModelSummary>) = profile
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.clone().map(|m| (i, m)))
        .unzip();
    let mut profits = vec![0.0; profile.len()];
    if members.is_empty() {
        return Ok((profits, 0.0));
    }
    let entrants = Coalition::new(members, summaries)?;
    let table = UtilityTable::new(&entrants, cfg)?;
    for ((&firm, s), p) in entrants
        .members()
        .iter()
        .zip(entrants.summaries())
        .zip(table.marginal_contributions())
    {
        profits[firm] = p - s.cost();
    }
    let costs: f64 = entrants.summaries().iter().map(ModelSummary::cost).sum();
    Ok((profits, table.utility(table.full()) - costs - cfg.outside_option))
}

/// Searches every unilateral deviation (including exit) for one that raises
/// the deviator's profit at marginal-contribution prices.
pub fn audit_efficiency(
    profile: &[Option<ModelSummary>],
    deviation_sets: &[Vec<ModelSummary>],
    cfg: &MarketConfig,
) -> Result<EfficiencyAudit> {
    if deviation_sets.len() != profile.len() {
        return Err(Error::DimensionMismatch {
            weights: deviation_sets.len(),
            members: profile.len(),
        });
    }
    let (members, summaries): (Vec<usize>, Vec<ModelSummary>) = profile
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.clone().map(|m| (i, m)))
        .unzip();
    let entrants = Coalition::new(members, summaries)?;
    let dmr_holds = entrants.is_empty() || check_dmr(&entrants, cfg)?.holds;
    let (profits, total_surplus) = profile_profits(profile, cfg)?;

    for (firm, options) in deviation_sets.iter().enumerate() {
        let alternatives = std::iter::once(None).chain(options.iter().cloned().map(Some));
        for alternative in alternatives {
            if alternative == profile[firm] {
                continue;
            }
            let mut deviated = profile.to_vec();
            deviated[firm] = alternative.clone();
            let (after, ts_after) = profile_profits(&deviated, cfg)?;
            if after[firm] > profits[firm] + PROFIT_TOL * (1.0 + profits[firm].abs()) {
                return Ok(EfficiencyAudit {
                    dmr_holds,
                    total_surplus,
                    deviation: Some(Deviation {
                        firm,
                        model: alternative,
                        profit_before: profits[firm],
                        profit_after: after[firm],
                        total_surplus_after: ts_after,
                    }),
                });
            }
        }
    }
    Ok(EfficiencyAudit {
        dmr_holds,
        total_surplus,
        deviation: None,
    })
}
