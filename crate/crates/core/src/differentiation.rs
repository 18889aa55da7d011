//! When do two symmetric firms pick different models?
//!
//! Two tools live here. For a smooth one-parameter family of models the
//! necessary conditions for both firms to sit at the same interior model
//! are a first-order condition `V' + 2B' = 0` and a second-order condition
//! whose left-hand side splits into a curvature term, a bias/variance split
//! term and a bias-angle term. For least squares on covariate subsets the
//! two-firm game is small enough to solve exactly.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiner::{optimal_weights, Coalition};
use crate::error::{invalid, Error, Result};
use crate::models::{ols_summary, MarketConfig, ModelSummary, OlsSpec, DEFAULT_COST};
use crate::pricing::{marginal_prices, surpluses, PriceProfile};

/// Relative step for first derivatives by central differences.
pub const FIRST_STEP: f64 = 1e-5;
/// Relative step for second derivatives by the three-point stencil.
pub const SECOND_STEP: f64 = 1e-4;
pub const ROOT_TOL: f64 = 1e-10;

/// A smooth one-parameter family of models `t -> M(t)` on an open interval.
///
/// Only `domain`, `bias` and `variance` are required; derivatives fall
/// back to finite differences.
pub trait ParamFamily: Sync {
    fn domain(&self) -> (f64, f64);

    /// Conditional bias of `M(t)` as a vector.
    fn bias(&self, t: f64) -> Vec<f64>;

    fn variance(&self, t: f64) -> f64;

    fn squared_bias(&self, t: f64) -> f64 {
        self.bias(t).iter().map(|b| b * b).sum()
    }

    /// `(V'(t), V''(t))` when known in closed form.
    fn variance_derivatives(&self, _t: f64) -> Option<(f64, f64)> {
        None
    }

    /// `(B'(t), B''(t))` when known in closed form.
    fn squared_bias_derivatives(&self, _t: f64) -> Option<(f64, f64)> {
        None
    }

    /// Derivative of the bias vector when known in closed form.
    fn bias_derivative(&self, _t: f64) -> Option<Vec<f64>> {
        None
    }

    fn summary_at(&self, t: f64) -> Result<ModelSummary> {
        ModelSummary::new(self.bias(t), self.variance(t), DEFAULT_COST)
    }
}

type Scalar = Box<dyn Fn(f64) -> f64 + Send + Sync>;
type Vector = Box<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
type Pair = Box<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

/// A family assembled from closures.
pub struct FnFamily {
    name: String,
    domain: (f64, f64),
    bias: Vector,
    variance: Scalar,
    variance_derivatives: Option<Pair>,
    squared_bias_derivatives: Option<Pair>,
    bias_derivative: Option<Vector>,
}

impl fmt::Debug for FnFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnFamily")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl FnFamily {
    pub fn new(
        name: impl Into<String>,
        domain: (f64, f64),
        bias: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
        variance: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            domain,
            bias: Box::new(bias),
            variance: Box::new(variance),
            variance_derivatives: None,
            squared_bias_derivatives: None,
            bias_derivative: None,
        }
    }

    pub fn with_variance_derivatives(mut self, f: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static) -> Self {
        self.variance_derivatives = Some(Box::new(f));
        self
    }

    pub fn with_squared_bias_derivatives(mut self, f: impl Fn(f64) -> (f64, f64) + Send + Sync + 'static) -> Self {
        self.squared_bias_derivatives = Some(Box::new(f));
        self
    }

    pub fn with_bias_derivative(mut self, f: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.bias_derivative = Some(Box::new(f));
        self
    }

    /// Drops all closed-form derivatives so everything is differenced numerically.
    pub fn numerical(mut self) -> Self {
        self.variance_derivatives = None;
        self.squared_bias_derivatives = None;
        self.bias_derivative = None;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `V(t) = 1 - t`, `B(t) = t^2` on `(0, 1)`, with a common bias direction.
    pub fn tradeoff() -> Self {
        Self::new("tradeoff", (0.0, 1.0), |t| vec![t], |t| 1.0 - t)
            .with_variance_derivatives(|_| (-1.0, 0.0))
            .with_squared_bias_derivatives(|t| (2.0 * t, 2.0))
            .with_bias_derivative(|_| vec![1.0])
    }

    /// Bias of constant magnitude `sqrt(b0)` rotating at unit rate, constant variance.
    pub fn rotating(b0: f64, variance: f64) -> Self {
        let r = b0.sqrt();
        Self::new("rotating", (0.0, PI), move |t| vec![r * t.cos(), r * t.sin()], move |_| variance)
            .with_variance_derivatives(|_| (0.0, 0.0))
            .with_squared_bias_derivatives(|_| (0.0, 0.0))
            .with_bias_derivative(move |t| vec![-r * t.sin(), r * t.cos()])
    }

    /// `V(t) = v0 + slope * t` with constant squared bias: no interior
    /// first-order root unless `slope = 0`.
    pub fn linear_variance(b0: f64, v0: f64, slope: f64) -> Self {
        let r = b0.sqrt();
        Self::new("linear_variance", (0.0, 1.0), move |_| vec![r], move |t| v0 + slope * t)
            .with_variance_derivatives(move |_| (slope, 0.0))
            .with_squared_bias_derivatives(|_| (0.0, 0.0))
            .with_bias_derivative(|_| vec![0.0])
    }
}

impl ParamFamily for FnFamily {
    fn domain(&self) -> (f64, f64) {
        self.domain
    }

    fn bias(&self, t: f64) -> Vec<f64> {
        (self.bias)(t)
    }

    fn variance(&self, t: f64) -> f64 {
        (self.variance)(t)
    }

    fn variance_derivatives(&self, t: f64) -> Option<(f64, f64)> {
        self.variance_derivatives.as_ref().map(|f| f(t))
    }

    fn squared_bias_derivatives(&self, t: f64) -> Option<(f64, f64)> {
        self.squared_bias_derivatives.as_ref().map(|f| f(t))
    }

    fn bias_derivative(&self, t: f64) -> Option<Vec<f64>> {
        self.bias_derivative.as_ref().map(|f| f(t))
    }
}

fn first_step(t: f64) -> f64 {
    FIRST_STEP.max(FIRST_STEP * t.abs())
}

fn second_step(t: f64) -> f64 {
    SECOND_STEP.max(SECOND_STEP * t.abs())
}

fn central(f: impl Fn(f64) -> f64, t: f64) -> f64 {
    let h = first_step(t);
    (f(t + h) - f(t - h)) / (2.0 * h)
}

fn curvature(f: impl Fn(f64) -> f64, t: f64) -> f64 {
    let h = second_step(t);
    (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h)
}

/// Values and derivatives of `V` and `B` at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalShape {
    pub v: f64,
    pub dv: f64,
    pub d2v: f64,
    pub b: f64,
    pub db: f64,
    pub d2b: f64,
    pub bias: Vec<f64>,
    pub dbias: Vec<f64>,
}

pub fn local_shape(fam: &dyn ParamFamily, t: f64) -> Result<LocalShape> {
    let (lo, hi) = fam.domain();
    if !(t > lo && t < hi) {
        return Err(Error::NotInterior { t, lo, hi });
    }
    let (dv, d2v) = fam
        .variance_derivatives(t)
        .unwrap_or_else(|| (central(|s| fam.variance(s), t), curvature(|s| fam.variance(s), t)));
    let (db, d2b) = fam
        .squared_bias_derivatives(t)
        .unwrap_or_else(|| (central(|s| fam.squared_bias(s), t), curvature(|s| fam.squared_bias(s), t)));
    let bias = fam.bias(t);
    let dbias = fam.bias_derivative(t).unwrap_or_else(|| {
        let h = first_step(t);
        let (up, down) = (fam.bias(t + h), fam.bias(t - h));
        up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    });
    Ok(LocalShape {
        v: fam.variance(t),
        dv,
        d2v,
        b: fam.squared_bias(t),
        db,
        d2b,
        bias,
        dbias,
    })
}

/// `V'(t0) + 2 B'(t0)`.
pub fn foc_residual(fam: &dyn ParamFamily, t0: f64) -> Result<f64> {
    let s = local_shape(fam, t0)?;
    Ok(s.dv + 2.0 * s.db)
}

/// The three additive pieces of the second-order condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocTerms {
    /// `-V''/4 - B''/2`
    pub curvature: f64,
    /// `B'^2 (1/(8B) + 1/(4V))`
    pub split: f64,
    /// `(B/2) theta'^2`
    pub angle: f64,
}

impl SocTerms {
    pub fn total(&self) -> f64 {
        self.curvature + self.split + self.angle
    }
}

/// `theta'(t0)^2`, the squared rate at which the bias direction turns,
/// from the component of `b'` orthogonal to `b`.
fn angle_rate_sq(bias: &[f64], dbias: &[f64], b: f64) -> f64 {
    let along: f64 = bias.iter().zip(dbias).map(|(x, y)| x * y).sum::<f64>() / b;
    let perp: f64 = bias.iter().zip(dbias).map(|(x, y)| (y - along * x).powi(2)).sum();
    perp / b
}

pub fn soc_terms(fam: &dyn ParamFamily, t0: f64) -> Result<SocTerms> {
    let s = local_shape(fam, t0)?;
    if !(s.b > 0.0) {
        return Err(Error::Singular("squared bias is zero"));
    }
    if !(s.v > 0.0) {
        return Err(Error::Singular("variance is zero"));
    }
    Ok(SocTerms {
        curvature: -0.25 * s.d2v - 0.5 * s.d2b,
        split: s.db * s.db * (1.0 / (8.0 * s.b) + 1.0 / (4.0 * s.v)),
        angle: 0.5 * s.b * angle_rate_sq(&s.bias, &s.dbias, s.b),
    })
}

pub fn soc_lhs(fam: &dyn ParamFamily, t0: f64) -> Result<f64> {
    Ok(soc_terms(fam, t0)?.total())
}

/// Closed-form slope of the consumer's weight on a firm moving along the
/// family while its rival stays at `t0`: `-(V' + B') / (4V)`.
pub fn weight_derivative(fam: &dyn ParamFamily, t0: f64) -> Result<f64> {
    let s = local_shape(fam, t0)?;
    if !(s.v > 0.0) {
        return Err(Error::Singular("variance is zero"));
    }
    Ok(-(s.dv + s.db) / (4.0 * s.v))
}

/// Weight the optimal combiner puts on `M(t)` when paired with `M(t0)`.
pub fn pair_weight(fam: &dyn ParamFamily, t: f64, t0: f64) -> Result<f64> {
    let pair = Coalition::from_summaries(vec![fam.summary_at(t)?, fam.summary_at(t0)?])?;
    Ok(optimal_weights(&pair, 0.0)?.0.as_slice()[0])
}

/// Central difference of [`pair_weight`] in `t` at `t0`.
pub fn numerical_weight_derivative(fam: &dyn ParamFamily, t0: f64, h: f64) -> Result<f64> {
    Ok((pair_weight(fam, t0 + h, t0)? - pair_weight(fam, t0 - h, t0)?) / (2.0 * h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    /// Second-order condition satisfied: both firms at `t0` is not ruled out.
    Candidate,
    /// Second-order condition fails: firms must differentiate here.
    RuledOut,
    /// Second-order condition undefined (zero bias or variance).
    Singular,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Classification::Candidate => "candidate",
            Classification::RuledOut => "ruled_out",
            Classification::Singular => "singular",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricCandidate {
    pub t0: f64,
    pub foc_residual: f64,
    pub soc: Option<SocTerms>,
    pub classification: Classification,
}

/// Roots of the first-order condition on a uniform interior grid, refined
/// by bisection and classified by the second-order condition.
pub fn symmetric_candidates(fam: &dyn ParamFamily, grid_resolution: usize) -> Result<Vec<SymmetricCandidate>> {
    if grid_resolution < 2 {
        return Err(invalid("grid_resolution", "must be >= 2"));
    }
    let (lo, hi) = fam.domain();
    let step = (hi - lo) / (grid_resolution + 1) as f64;
    let grid: Vec<f64> = (1..=grid_resolution).map(|i| lo + step * i as f64).collect();
    let values = grid
        .par_iter()
        .map(|&t| foc_residual(fam, t))
        .collect::<Result<Vec<_>>>()?;

    let mut roots = Vec::new();
    for i in 0..grid.len() {
        if values[i] == 0.0 {
            roots.push(grid[i]);
        } else if i + 1 < grid.len() && values[i + 1] != 0.0 && values[i].signum() != values[i + 1].signum() {
            roots.push(bisect(fam, grid[i], grid[i + 1], values[i])?);
        }
    }

    roots
        .into_iter()
        .map(|t0| {
            let residual = foc_residual(fam, t0)?;
            let (soc, classification) = match soc_terms(fam, t0) {
                Ok(terms) if terms.total() <= 0.0 => (Some(terms), Classification::Candidate),
                Ok(terms) => (Some(terms), Classification::RuledOut),
                Err(Error::Singular(_)) => (None, Classification::Singular),
                Err(e) => return Err(e),
            };
            Ok(SymmetricCandidate {
                t0,
                foc_residual: residual,
                soc,
                classification,
            })
        })
        .collect()
}

fn bisect(fam: &dyn ParamFamily, mut a: f64, mut b: f64, fa: f64) -> Result<f64> {
    let sign_a = fa.signum();
    while b - a > ROOT_TOL {
        let mid = 0.5 * (a + b);
        let fm = foc_residual(fam, mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == sign_a {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Entry cost as a function of the number of covariates used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSchedule {
    Constant { cost: f64 },
    /// `fixed + linear d + quadratic d^2`.
    Quadratic { fixed: f64, linear: f64, quadratic: f64 },
    /// Explicit cost for each size `0..=k`.
    Table { costs: Vec<f64> },
}

impl CostSchedule {
    pub fn cost(&self, d: usize) -> f64 {
        match self {
            CostSchedule::Constant { cost } => *cost,
            CostSchedule::Quadratic {
                fixed,
                linear,
                quadratic,
            } => {
                let d = d as f64;
                fixed + linear * d + quadratic * d * d
            }
            CostSchedule::Table { costs } => costs[d],
        }
    }

    /// Strictly increasing and convex on `0..=k`.
    pub fn is_strictly_convex_increasing(&self, k: usize) -> bool {
        let c: Vec<f64> = (0..=k).map(|d| self.cost(d)).collect();
        c.windows(2).all(|w| w[1] > w[0]) && c.windows(3).all(|w| w[2] - w[1] > w[1] - w[0])
    }
}

/// Two firms choosing covariate subsets for least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateGame {
    pub k: usize,
    pub n: usize,
    pub beta2: f64,
    pub sigma2: f64,
    pub cost: CostSchedule,
}

pub type Subset = BTreeSet<usize>;

impl CovariateGame {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > 20 {
            return Err(invalid("k", "must lie in 1..=20"));
        }
        if self.n <= self.k + 1 {
            return Err(Error::InsufficientData { n: self.n, d: self.k });
        }
        if !(self.beta2 > 0.0 && self.sigma2 >= 0.0) {
            return Err(invalid("beta2/sigma2", "need beta2 > 0 and sigma2 >= 0"));
        }
        if let CostSchedule::Table { costs } = &self.cost {
            if costs.len() != self.k + 1 {
                return Err(invalid("cost", format!("table needs {} entries", self.k + 1)));
            }
        }
        if (0..=self.k).any(|d| !(self.cost.cost(d) > 0.0)) {
            return Err(invalid("cost", "must be > 0 for every size"));
        }
        Ok(())
    }

    pub fn spec(&self, subset: &Subset) -> Result<OlsSpec> {
        OlsSpec::new(self.k, self.n, self.beta2, self.sigma2, subset.iter().copied())
    }

    pub fn summary(&self, subset: &Subset) -> Result<ModelSummary> {
        ols_summary(&self.spec(subset)?)?.with_cost(self.cost.cost(subset.len()))
    }

    pub fn squared_bias(&self, d: usize) -> f64 {
        self.beta2 * (self.k - d) as f64
    }

    pub fn variance(&self, d: usize) -> f64 {
        (self.beta2 * (self.k - d) as f64 + self.sigma2) * d as f64 / (self.n - d - 1) as f64
    }

    /// Expected loss (without noise) of a model with `d` covariates used alone.
    fn error(&self, d: usize) -> f64 {
        self.squared_bias(d) + self.variance(d)
    }

    /// Price and consumer weight for a firm with `own` covariates against a
    /// rival with `rival`, `overlap` of them shared.
    pub fn reduced_price(&self, own: usize, rival: usize, overlap: usize) -> (f64, f64) {
        let jointly_excluded = self.k - (own + rival - overlap);
        let q11 = self.error(own);
        let q22 = self.error(rival);
        let q12 = self.beta2 * jointly_excluded as f64;
        let denom = q11 + q22 - 2.0 * q12;
        let w = if denom > 0.0 {
            ((q22 - q12) / denom).clamp(0.0, 1.0)
        } else {
            0.5
        };
        let combined = w * w * q11 + (1.0 - w) * (1.0 - w) * q22 + 2.0 * w * (1.0 - w) * q12;
        (q22 - combined, w)
    }

    pub fn reduced_payoff(&self, own: usize, rival: usize, overlap: usize) -> f64 {
        self.reduced_price(own, rival, overlap).0 - self.cost.cost(own)
    }

    /// Payoff from `own` against `rival`.
    pub fn payoff(&self, own: &Subset, rival: &Subset) -> f64 {
        let overlap = own.intersection(rival).count();
        self.reduced_payoff(own.len(), rival.len(), overlap)
    }
}

fn check_subset(game: &CovariateGame, subset: &Subset) -> Result<()> {
    match subset.iter().find(|&&l| l >= game.k) {
        Some(&index) => Err(Error::CovariateOutOfRange { index, k: game.k }),
        None => Ok(()),
    }
}

/// Firm 1's price at consumer weight `w` on firm 1, from the bias-variance
/// terms and the count of covariates excluded by both models.
pub fn ols_duopoly_price(game: &CovariateGame, m1: &Subset, m2: &Subset, w: f64) -> Result<f64> {
    game.validate()?;
    check_subset(game, m1)?;
    check_subset(game, m2)?;
    if !(0.0..=1.0).contains(&w) {
        return Err(invalid("w", "must lie in [0, 1]"));
    }
    let (b1, v1) = (game.squared_bias(m1.len()), game.variance(m1.len()));
    let (b2, v2) = (game.squared_bias(m2.len()), game.variance(m2.len()));
    let jointly_excluded = (0..game.k).filter(|l| !m1.contains(l) && !m2.contains(l)).count();
    let alone = game.sigma2 + b2 + v2;
    Ok(alone
        - game.sigma2
        - w * w * (b1 + v1)
        - (1.0 - w) * (1.0 - w) * (b2 + v2)
        - 2.0 * w * (1.0 - w) * game.beta2 * jointly_excluded as f64)
}

/// [`ols_duopoly_price`] at the consumer's optimal weight; returns `(price, w)`.
pub fn ols_duopoly_price_optimal(game: &CovariateGame, m1: &Subset, m2: &Subset) -> Result<(f64, f64)> {
    game.validate()?;
    check_subset(game, m1)?;
    check_subset(game, m2)?;
    let (_, w) = game.reduced_price(m1.len(), m2.len(), m1.intersection(m2).count());
    Ok((ols_duopoly_price(game, m1, m2, w)?, w))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub subset: Subset,
    pub size: usize,
    pub overlap: usize,
    pub payoff: f64,
}

const PAYOFF_TOL: f64 = 1e-12;

/// Best subset against `opponent`, searched over (own size, overlap).
///
/// Covariates are exchangeable, so payoffs depend on the subset only
/// through those two numbers. Ties go to the lexicographically smallest
/// pair; the subset reuses the opponent's smallest indices for the overlap
/// and the smallest free indices for the rest.
pub fn ols_best_response(game: &CovariateGame, opponent: &Subset) -> Result<BestResponse> {
    game.validate()?;
    check_subset(game, opponent)?;
    let r = opponent.len();
    let mut best: Option<(usize, usize, f64)> = None;
    for d in 0..=game.k {
        let lo = d.saturating_sub(game.k - r);
        for o in lo..=d.min(r) {
            let value = game.reduced_payoff(d, r, o);
            if best.is_none_or(|(_, _, b)| value > b + PAYOFF_TOL * (1.0 + b.abs())) {
                best = Some((d, o, value));
            }
        }
    }
    let (size, overlap, payoff) = best.expect("size 0 is always feasible");
    let subset = opponent
        .iter()
        .copied()
        .take(overlap)
        .chain((0..game.k).filter(|l| !opponent.contains(l)).take(size - overlap))
        .collect();
    Ok(BestResponse {
        subset,
        size,
        overlap,
        payoff,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateEquilibrium {
    pub firm1: Subset,
    pub firm2: Subset,
    pub payoffs: (f64, f64),
}

impl CovariateEquilibrium {
    pub fn differentiated(&self) -> bool {
        self.firm1 != self.firm2
    }
}

fn subset_of(mask: u32, k: usize) -> Subset {
    (0..k).filter(|l| mask >> l & 1 == 1).collect()
}

/// Every pure-strategy equilibrium of the covariate game (both firms in
/// the market), by exhaustive search over subset pairs.
pub fn covariate_equilibria(game: &CovariateGame) -> Result<Vec<CovariateEquilibrium>> {
    game.validate()?;
    if game.k > 12 {
        return Err(invalid("k", "exhaustive search needs k <= 12"));
    }
    let best_by_rival_size: Vec<f64> = (0..=game.k)
        .map(|r| ols_best_response(game, &(0..r).collect()).map(|b| b.payoff))
        .collect::<Result<_>>()?;
    let holds = |value: f64, best: f64| value >= best - PAYOFF_TOL * (1.0 + best.abs());

    let all = 1u32 << game.k;
    let mut found = Vec::new();
    for a in 0..all {
        let m1 = subset_of(a, game.k);
        for b in 0..all {
            let m2 = subset_of(b, game.k);
            let p1 = game.payoff(&m1, &m2);
            let p2 = game.payoff(&m2, &m1);
            if holds(p1, best_by_rival_size[m2.len()]) && holds(p2, best_by_rival_size[m1.len()]) {
                found.push(CovariateEquilibrium {
                    firm1: m1.clone(),
                    firm2: m2,
                    payoffs: (p1, p2),
                });
            }
        }
    }
    Ok(found)
}

/// A swap of one included covariate for an excluded one by firm 1 when both
/// firms use the same subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Swap {
    pub drop: usize,
    pub add: usize,
    pub gain: f64,
}

/// Payoff gains from every swap away from the shared subset `shared`,
/// computed with the explicit price formula on concrete subsets.
pub fn swap_gains(game: &CovariateGame, shared: &Subset) -> Result<Vec<Swap>> {
    let (base, _) = ols_duopoly_price_optimal(game, shared, shared)?;
    let mut swaps = Vec::new();
    for &drop in shared {
        for add in (0..game.k).filter(|l| !shared.contains(l)) {
            let mut moved = shared.clone();
            moved.remove(&drop);
            moved.insert(add);
            let (price, _) = ols_duopoly_price_optimal(game, &moved, shared)?;
            // same size, same cost
            swaps.push(Swap {
                drop,
                add,
                gain: price - base,
            });
        }
    }
    Ok(swaps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteriorCondition {
    pub slope_at_zero: f64,
    pub slope_at_k: f64,
    /// Open band for `sigma2 / beta2` in which both slope signs hold.
    pub band: (f64, f64),
    pub band_empty: bool,
    pub ratio: f64,
    pub inside: bool,
}

/// Utility of a consumer buying two copies of a `d`-covariate model, with
/// `d` treated as continuous.
pub fn shared_model_utility(game: &CovariateGame, d: f64) -> f64 {
    let k = game.k as f64;
    let n = game.n as f64;
    let b = game.beta2 * (k - d);
    let v = (game.beta2 * (k - d) + game.sigma2) * d / (n - d - 1.0);
    -game.sigma2 - b - 0.5 * v
}

/// Slopes of [`shared_model_utility`] at the ends of `[0, k]` and the band
/// of signal-to-noise ratios giving an interior maximum.
pub fn interior_condition(game: &CovariateGame) -> Result<InteriorCondition> {
    if game.n <= game.k + 1 {
        return Err(Error::InsufficientData { n: game.n, d: game.k });
    }
    let k = game.k as f64;
    let n = game.n as f64;
    let (beta2, sigma2) = (game.beta2, game.sigma2);
    let slope_at_zero = -(beta2 * (k - 2.0 * n + 2.0) + sigma2) / (2.0 * n - 2.0);
    let slope_at_k = (beta2 * (k * k - 3.0 * k * (n - 1.0) + 2.0 * (n - 1.0).powi(2)) - (n - 1.0) * sigma2)
        / (2.0 * (n - k - 1.0).powi(2));
    let band = (k * k / (n - 1.0) - 3.0 * k + 2.0 * n - 2.0, -k + 2.0 * n - 2.0);
    let ratio = sigma2 / beta2;
    Ok(InteriorCondition {
        slope_at_zero,
        slope_at_k,
        band,
        band_empty: band.0 >= band.1,
        ratio,
        inside: band.0 < ratio && ratio < band.1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostlessCheck {
    pub k: usize,
    pub condition: InteriorCondition,
    /// Maximizer of the continuous shared-model utility on `[0, k]`.
    pub continuous_argmax: f64,
    /// Best integer size for a shared model.
    pub integer_argmax: usize,
    /// Largest gain from a swap away from the shared model at `integer_argmax`.
    pub best_swap_gain: Option<f64>,
}

impl CostlessCheck {
    pub fn interior(&self) -> bool {
        self.continuous_argmax > 0.0 && self.continuous_argmax < self.k as f64
    }
}

/// Checks the costless-covariate route to differentiation on one instance.
pub fn costless_check(game: &CovariateGame) -> Result<CostlessCheck> {
    game.validate()?;
    let condition = interior_condition(game)?;
    let k = game.k as f64;

    // coarse grid then golden-section refinement; the utility is smooth on [0, k]
    let f = |d: f64| shared_model_utility(game, d);
    let steps = 1000;
    let (mut best_i, mut best_v) = (0usize, f(0.0));
    for i in 1..=steps {
        let v = f(k * i as f64 / steps as f64);
        if v > best_v {
            best_i = i;
            best_v = v;
        }
    }
    let lo = k * best_i.saturating_sub(1) as f64 / steps as f64;
    let hi = k * (best_i + 1).min(steps) as f64 / steps as f64;
    let continuous_argmax = golden_max(f, lo, hi);

    let integer_argmax = (0..=game.k)
        .max_by(|&a, &b| f(a as f64).total_cmp(&f(b as f64)))
        .expect("k >= 1");
    let shared: Subset = (0..integer_argmax).collect();
    let best_swap_gain = swap_gains(game, &shared)?.into_iter().map(|s| s.gain).reduce(f64::max);

    Ok(CostlessCheck {
        k: game.k,
        condition,
        continuous_argmax,
        integer_argmax,
        best_swap_gain,
    })
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    while (b - a).abs() > 1e-12 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - ratio * (b - a);
        d = a + ratio * (b - a);
    }
    0.5 * (a + b)
}

/// Consumer surplus at a differentiated pair versus both firms selling the
/// designated firm's model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurplusComparison {
    /// Index (0 or 1) of the model with the larger stand-alone net utility.
    pub designated: usize,
    pub differentiated: f64,
    pub same_model: f64,
    pub holds: bool,
}

pub fn diff_surplus_comparison(m1: &ModelSummary, m2: &ModelSummary, cfg: &MarketConfig) -> Result<SurplusComparison> {
    let pair = Coalition::from_summaries(vec![m1.clone(), m2.clone()])?;
    let prices = marginal_prices(&pair, cfg)?;
    compare_surplus_with_prices(m1, m2, &prices, cfg)
}

/// As [`diff_surplus_comparison`], with the differentiated pair's prices supplied.
pub fn compare_surplus_with_prices(
    m1: &ModelSummary,
    m2: &ModelSummary,
    prices: &PriceProfile,
    cfg: &MarketConfig,
) -> Result<SurplusComparison> {
    let pair = Coalition::from_summaries(vec![m1.clone(), m2.clone()])?;
    let differentiated = surpluses(&pair, prices, cfg)?.consumer;

    let alone = |m: &ModelSummary| -> Result<f64> {
        Ok(-optimal_weights(&Coalition::from_summaries(vec![m.clone()])?, cfg.sigma2)?.1 - m.cost())
    };
    let designated = if alone(m1)? >= alone(m2)? { 0 } else { 1 };
    let chosen = if designated == 0 { m1 } else { m2 };
    let twins = Coalition::from_summaries(vec![chosen.clone(), chosen.clone()])?;
    let same_model = surpluses(&twins, &marginal_prices(&twins, cfg)?, cfg)?.consumer;

    Ok(SurplusComparison {
        designated,
        differentiated,
        same_model,
        holds: differentiated <= same_model + 1e-12 * (1.0 + same_model.abs()),
    })
}
