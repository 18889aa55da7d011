//! Sequential entry: an incumbent picks a model, a challenger observes it
//! and decides whether to enter, then prices are set.
//!
//! All models share one bias direction, so a model is a bias constant
//! `alpha`, a variance and a model-dependent cost. The incumbent can keep the
//! challenger out by choosing a model whose errors leave little for a second
//! model to fix, even when that model is worse for the consumer.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiner::Coalition;
use crate::error::{invalid, Result};
use crate::models::{MarketConfig, ModelSummary};
use crate::pricing::{check_dmr, marginal_prices, surpluses, PriceProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommonBiasModel {
    pub alpha: f64,
    pub variance: f64,
    pub cost: f64,
}

impl CommonBiasModel {
    pub fn new(alpha: f64, variance: f64, cost: f64) -> Result<Self> {
        let m = Self { alpha, variance, cost };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", "must be finite and >= 0"));
        }
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            return Err(invalid("variance", "must be finite and >= 0"));
        }
        if !(self.cost > 0.0 && self.cost.is_finite()) {
            return Err(invalid("cost", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Expected error of the model used alone, without noise.
    pub fn error(&self, b0: f64) -> f64 {
        self.alpha * self.alpha * b0 + self.variance
    }

    pub fn summary(&self, b0: f64) -> Result<ModelSummary> {
        ModelSummary::new(vec![self.alpha * b0.sqrt()], self.variance, self.cost)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqGameSpec {
    pub incumbent_set: Vec<CommonBiasModel>,
    pub challenger_set: Vec<CommonBiasModel>,
    pub b0: f64,
    pub sigma2: f64,
    pub c_f: f64,
    pub outside_option: f64,
}

impl SeqGameSpec {
    pub fn validate(&self) -> Result<()> {
        if self.incumbent_set.is_empty() || self.challenger_set.is_empty() {
            return Err(invalid("model sets", "must be nonempty"));
        }
        for m in self.incumbent_set.iter().chain(&self.challenger_set) {
            m.validate()?;
        }
        if !(self.b0 > 0.0) {
            return Err(invalid("b0", "must be > 0"));
        }
        if !(self.sigma2 >= 0.0) {
            return Err(invalid("sigma2", "must be >= 0"));
        }
        if !self.c_f.is_finite() {
            return Err(invalid("c_f", "must be finite"));
        }
        if !(self.outside_option < 0.0) {
            return Err(invalid("outside_option", "must be < 0"));
        }
        Ok(())
    }

    fn config(&self) -> Result<MarketConfig> {
        MarketConfig::new(self.sigma2, self.outside_option, 2)
    }

    fn monopoly_profit(&self, m: &CommonBiasModel) -> f64 {
        -m.error(self.b0) - self.sigma2 - self.outside_option - m.cost - self.c_f
    }

    /// Index of the incumbent's best model when entry is impossible.
    pub fn monopoly_optimum(&self) -> usize {
        let order = tie_order(&self.incumbent_set);
        argmax_in_order(&order, |i| self.monopoly_profit(&self.incumbent_set[i]))
    }
}

/// Ridge-like family: `alpha` on `0, 0.1, ..., 2`, `V = 1/(1+alpha)`,
/// equal model costs.
pub fn ridge_grid(cost: f64) -> Result<Vec<CommonBiasModel>> {
    (0..=20)
        .map(|i| {
            let alpha = i as f64 / 10.0;
            CommonBiasModel::new(alpha, 1.0 / (1.0 + alpha), cost)
        })
        .collect()
}

/// Equal biases with cost falling in variance: `V` on `0.1, 0.2, ..., 2`,
/// cost `kappa / V`.
pub fn equal_bias_grid(alpha: f64, kappa: f64) -> Result<Vec<CommonBiasModel>> {
    (1..=20)
        .map(|i| {
            let v = i as f64 / 10.0;
            CommonBiasModel::new(alpha, v, kappa / v)
        })
        .collect()
}

/// Ridge-like game: the incumbent draws from [`ridge_grid`], the challenger
/// only from its heavily regularized half (`alpha >= 1`).
pub fn ridge_example(c_f: f64, outside_option: f64) -> Result<SeqGameSpec> {
    let incumbent_set = ridge_grid(0.1)?;
    let challenger_set = incumbent_set.iter().filter(|m| m.alpha >= 1.0).copied().collect();
    Ok(SeqGameSpec {
        incumbent_set,
        challenger_set,
        b0: 1.0,
        sigma2: 1.0,
        c_f,
        outside_option,
    })
}

/// Equal-bias game: the incumbent pays `0.15 / V` for variance `V`, the
/// challenger reaches the same variances at a flat model cost of 0.01.
pub fn overinvestment_example(c_f: f64, outside_option: f64) -> Result<SeqGameSpec> {
    let incumbent_set = equal_bias_grid(0.5, 0.15)?;
    let challenger_set = incumbent_set
        .iter()
        .map(|m| CommonBiasModel::new(m.alpha, m.variance, 0.01))
        .collect::<Result<_>>()?;
    Ok(SeqGameSpec {
        incumbent_set,
        challenger_set,
        b0: 1.0,
        sigma2: 1.0,
        c_f,
        outside_option,
    })
}

/// Continuous minimizer of `alpha^2 + 1/(1+alpha)`, the root of `2a(1+a)^2 = 1`.
pub fn ridge_alpha_star() -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if 2.0 * mid * (1.0 + mid).powi(2) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Challenger's gross value from joining `m1`, as `(value, w)` where `w` is
/// the consumer's weight on `m1`.
pub fn entrant_gross(m1: &CommonBiasModel, m2: &CommonBiasModel, b0: f64) -> (f64, f64) {
    let a1 = m1.error(b0);
    let a2 = m2.error(b0);
    let c = m1.alpha * m2.alpha * b0;
    let value = |w: f64| (1.0 - w * w) * a1 - (1.0 - w).powi(2) * a2 - 2.0 * w * (1.0 - w) * c;
    let denom = a1 + a2 - 2.0 * c;
    let mut best = (value(0.0), 0.0);
    let mut consider = |w: f64| {
        let v = value(w);
        if v > best.0 {
            best = (v, w);
        }
    };
    consider(1.0);
    if denom > 0.0 {
        consider(((a2 - c) / denom).clamp(0.0, 1.0));
    }
    best
}

/// Challenger's payoff from entering with `m2` against `m1`, net of its
/// model cost and the fixed cost.
pub fn entrant_payoff(m1: &CommonBiasModel, m2: &CommonBiasModel, spec: &SeqGameSpec) -> f64 {
    entrant_gross(m1, m2, spec.b0).0 - m2.cost - spec.c_f
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeterrenceFlags {
    /// No entry and the incumbent's bias exceeds that of its monopoly optimum.
    pub biased_deterrence: bool,
    /// No entry and the incumbent's model costs more than its monopoly optimum.
    pub overinvestment_deterrence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqOutcome {
    pub incumbent_index: usize,
    pub incumbent_model: CommonBiasModel,
    pub entered: bool,
    pub challenger_index: Option<usize>,
    pub challenger_model: Option<CommonBiasModel>,
    /// Incumbent first, then the challenger if it entered.
    pub prices: Vec<f64>,
    pub consumer_surplus: f64,
    pub incumbent_profit: f64,
    pub challenger_profit: Option<f64>,
    pub monopoly_optimum: usize,
    pub flags: DeterrenceFlags,
    /// Some reachable duopoly failed decreasing marginal returns.
    pub dmr_violation: bool,
    /// Some reachable duopoly priced the incumbent at or below zero.
    pub nonpositive_incumbent_price: bool,
}

/// Models sorted by (alpha, cost), list order last.
fn tie_order(models: &[CommonBiasModel]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&models[a], &models[b]);
        x.alpha
            .total_cmp(&y.alpha)
            .then(x.cost.total_cmp(&y.cost))
            .then(a.cmp(&b))
    });
    order
}

/// First index in `order` attaining the maximum of `f`.
fn argmax_in_order(order: &[usize], f: impl Fn(usize) -> f64) -> usize {
    let mut best = order[0];
    let mut best_value = f(best);
    for &i in &order[1..] {
        let v = f(i);
        if v.partial_cmp(&best_value) == Some(Ordering::Greater) {
            best = i;
            best_value = v;
        }
    }
    best
}

struct Subgame {
    challenger: Option<(usize, f64)>,
    prices: Vec<f64>,
    incumbent_profit: f64,
    dmr_violation: bool,
    nonpositive_price: bool,
}

fn solve_subgame(spec: &SeqGameSpec, cfg: &MarketConfig, m1: &CommonBiasModel) -> Result<Subgame> {
    let (best, payoff) = spec
        .challenger_set
        .iter()
        .enumerate()
        .map(|(j, m2)| (j, entrant_payoff(m1, m2, spec)))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });

    if payoff < 0.0 {
        let price = -m1.error(spec.b0) - spec.sigma2 - spec.outside_option;
        return Ok(Subgame {
            challenger: None,
            prices: vec![price],
            incumbent_profit: spec.monopoly_profit(m1),
            dmr_violation: false,
            nonpositive_price: price <= 0.0,
        });
    }

    let pair = Coalition::from_summaries(vec![m1.summary(spec.b0)?, spec.challenger_set[best].summary(spec.b0)?])?;
    let prices = marginal_prices(&pair, cfg)?.prices().to_vec();
    let dmr = check_dmr(&pair, cfg)?;
    Ok(Subgame {
        challenger: Some((best, payoff)),
        incumbent_profit: prices[0] - m1.cost - spec.c_f,
        nonpositive_price: prices[0] <= 0.0,
        prices,
        dmr_violation: !dmr.holds,
    })
}

/// Backward induction over the incumbent's models.
///
/// The challenger enters when its best payoff is nonnegative. The
/// incumbent's fixed cost is charged whether or not entry follows.
pub fn solve_sequential(spec: &SeqGameSpec) -> Result<SeqOutcome> {
    spec.validate()?;
    let cfg = spec.config()?;
    let subgames = spec
        .incumbent_set
        .iter()
        .map(|m1| solve_subgame(spec, &cfg, m1))
        .collect::<Result<Vec<_>>>()?;

    let order = tie_order(&spec.incumbent_set);
    let chosen = argmax_in_order(&order, |i| subgames[i].incumbent_profit);
    let star = spec.monopoly_optimum();
    let game = &subgames[chosen];
    let m1 = spec.incumbent_set[chosen];
    let entered = game.challenger.is_some();

    let mut summaries = vec![m1.summary(spec.b0)?];
    let mut members = vec![0];
    if let Some((j, _)) = game.challenger {
        summaries.push(spec.challenger_set[j].summary(spec.b0)?);
        members.push(1);
    }
    let realized = Coalition::from_summaries(summaries)?;
    let consumer_surplus = surpluses(&realized, &PriceProfile::new(members, game.prices.clone())?, &cfg)?.consumer;

    let m_star = spec.incumbent_set[star];
    let flags = DeterrenceFlags {
        biased_deterrence: !entered && m1.alpha > m_star.alpha,
        overinvestment_deterrence: !entered && m1.cost > m_star.cost,
    };

    // only subgames the challenger actually enters can break the pricing assumptions
    let entered_games = subgames.iter().filter(|g| g.challenger.is_some());
    Ok(SeqOutcome {
        incumbent_index: chosen,
        incumbent_model: m1,
        entered,
        challenger_index: game.challenger.map(|(j, _)| j),
        challenger_model: game.challenger.map(|(j, _)| spec.challenger_set[j]),
        prices: game.prices.clone(),
        consumer_surplus,
        incumbent_profit: game.incumbent_profit,
        challenger_profit: game.challenger.map(|(_, p)| p),
        monopoly_optimum: star,
        flags,
        dmr_violation: entered_games.clone().any(|g| g.dmr_violation),
        nonpositive_incumbent_price: entered_games.clone().any(|g| g.nonpositive_price),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCell {
    pub c_f: f64,
    pub outside_option: f64,
    pub outcome: SeqOutcome,
}

/// Outcomes on a `c_f` by `outside_option` grid, row-major with one row per `c_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterrenceScan {
    pub cf_grid: Vec<f64>,
    pub u_grid: Vec<f64>,
    pub cells: Vec<ScanCell>,
}

impl DeterrenceScan {
    pub fn cell(&self, i: usize, j: usize) -> &ScanCell {
        &self.cells[i * self.u_grid.len() + j]
    }

    pub fn mask(&self, pick: impl Fn(&SeqOutcome) -> bool) -> Vec<Vec<bool>> {
        (0..self.cf_grid.len())
            .map(|i| (0..self.u_grid.len()).map(|j| pick(&self.cell(i, j).outcome)).collect())
            .collect()
    }

    /// Entry never resumes as `c_f` grows with the outside option held fixed.
    pub fn staircase_holds(&self) -> bool {
        let entered = self.mask(|o| o.entered);
        (0..self.u_grid.len()).all(|j| (1..self.cf_grid.len()).all(|i| entered[i - 1][j] || !entered[i][j]))
    }
}

pub fn scan_deterrence_region(template: &SeqGameSpec, cf_grid: &[f64], u_grid: &[f64]) -> Result<DeterrenceScan> {
    if cf_grid.is_empty() || u_grid.is_empty() {
        return Err(invalid("grid", "must be nonempty"));
    }
    let points: Vec<(f64, f64)> = cf_grid
        .iter()
        .flat_map(|&c| u_grid.iter().map(move |&u| (c, u)))
        .collect();
    let cells = points
        .par_iter()
        .map(|&(c_f, outside_option)| {
            let spec = SeqGameSpec {
                c_f,
                outside_option,
                ..template.clone()
            };
            Ok(ScanCell {
                c_f,
                outside_option,
                outcome: solve_sequential(&spec)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DeterrenceScan {
        cf_grid: cf_grid.to_vec(),
        u_grid: u_grid.to_vec(),
        cells,
    })
}

/// Top-left corner of the first `rows` by `cols` block of set cells, scanning row-major.
pub fn find_block(mask: &[Vec<bool>], rows: usize, cols: usize) -> Option<(usize, usize)> {
    let height = mask.len();
    let width = mask.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || rows > height || cols > width {
        return None;
    }
    (0..=height - rows)
        .flat_map(|i| (0..=width - cols).map(move |j| (i, j)))
        .find(|&(i, j)| (i..i + rows).all(|r| (j..j + cols).all(|c| mask[r][c])))
}

/// Models not weakly dominated in (alpha, variance), sorted by alpha.
pub fn pareto_frontier(set: &[CommonBiasModel]) -> Vec<CommonBiasModel> {
    let dominates = |a: &CommonBiasModel, b: &CommonBiasModel| {
        a.alpha <= b.alpha && a.variance <= b.variance && (a.alpha < b.alpha || a.variance < b.variance)
    };
    let mut front: Vec<CommonBiasModel> = set
        .iter()
        .filter(|m| !set.iter().any(|o| dominates(o, m)))
        .copied()
        .collect();
    front.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    front
}
