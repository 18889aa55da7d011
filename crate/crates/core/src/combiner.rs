//! The consumer's side of the market: expected loss of a weighted average of
//! purchased models, the loss-minimizing simplex weights, and the utility of
//! a coalition of models.
//!
//! With independent training sets the loss of weights `w` is
//! `sigma2 + w' Q w` where `Q = G + diag(V)` and `G` is the Gram matrix of
//! the bias vectors. Minimization over the simplex is done exactly by
//! enumerating supports, which is affordable because coalitions are small.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{MarketConfig, ModelSummary};

/// Default upper bound on coalition size for exhaustive computations.
pub const DEFAULT_COALITION_CAP: usize = 10;

const SIMPLEX_TOL: f64 = 1e-12;
const KKT_TOL: f64 = 1e-9;
const TIE_TOL: f64 = 1e-12;

/// A set of firms together with the models they sell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Coalition {
    members: Vec<usize>,
    summaries: Vec<ModelSummary>,
}

impl Coalition {
    pub fn new(members: Vec<usize>, summaries: Vec<ModelSummary>) -> Result<Self> {
        if members.len() != summaries.len() {
            return Err(Error::DimensionMismatch {
                weights: summaries.len(),
                members: members.len(),
            });
        }
        for (i, m) in members.iter().enumerate() {
            if members[..i].contains(m) {
                return Err(crate::error::invalid("members", format!("firm {m} listed twice")));
            }
        }
        if let Some(first) = summaries.first() {
            for s in &summaries[1..] {
                if s.bias().len() != first.bias().len() {
                    return Err(Error::BiasDimension {
                        left: first.bias().len(),
                        right: s.bias().len(),
                    });
                }
            }
        }
        Ok(Self { members, summaries })
    }

    /// Firms are numbered `0..summaries.len()`.
    pub fn from_summaries(summaries: Vec<ModelSummary>) -> Result<Self> {
        Self::new((0..summaries.len()).collect(), summaries)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn summaries(&self) -> &[ModelSummary] {
        &self.summaries
    }

    /// Sub-coalition of the positions set in `mask` (bit `i` selects the
    /// `i`-th member).
    pub fn subset(&self, mask: u64) -> Coalition {
        let (members, summaries) = positions(mask)
            .take_while(|&i| i < self.len())
            .map(|i| (self.members[i], self.summaries[i].clone()))
            .unzip();
        Coalition { members, summaries }
    }

    /// `Q = G + diag(V)`, the matrix of the loss quadratic form.
    pub fn loss_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| {
            let a = &self.summaries[i];
            let b = &self.summaries[j];
            let g: f64 = a.bias().iter().zip(b.bias()).map(|(x, y)| x * y).sum();
            if i == j {
                g + a.variance()
            } else {
                g
            }
        })
    }
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::NotOnSimplex(format!("negative or non-finite entry in {weights:?}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NotOnSimplex(format!("entries sum to {sum}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn loss_of_weights(coalition: &Coalition, w: &WeightVector, sigma2: f64) -> Result<f64> {
    if w.len() != coalition.len() {
        return Err(Error::DimensionMismatch {
            weights: w.len(),
            members: coalition.len(),
        });
    }
    let q = coalition.loss_matrix();
    let w = DVector::from_column_slice(w.as_slice());
    Ok(sigma2 + w.dot(&(&q * &w)))
}

/// Loss-minimizing simplex weights and the minimized loss, with the default cap.
pub fn optimal_weights(coalition: &Coalition, sigma2: f64) -> Result<(WeightVector, f64)> {
    optimal_weights_capped(coalition, sigma2, DEFAULT_COALITION_CAP)
}

pub fn optimal_weights_capped(
    coalition: &Coalition,
    sigma2: f64,
    cap: usize,
) -> Result<(WeightVector, f64)> {
    if coalition.is_empty() {
        return Err(Error::EmptyCoalition);
    }
    check_cap(coalition.len(), cap)?;
    let q = coalition.loss_matrix();
    let all: Vec<usize> = (0..coalition.len()).collect();
    let (w, value) = minimize_on_simplex(&q, &all);
    Ok((WeightVector(w), sigma2 + value))
}

/// `U(E)`: the negative minimized loss, or the outside option for the empty set.
pub fn coalition_utility(coalition: &Coalition, cfg: &MarketConfig) -> Result<f64> {
    if coalition.is_empty() {
        return Ok(cfg.outside_option);
    }
    Ok(-optimal_weights(coalition, cfg.sigma2)?.1)
}

pub(crate) fn check_cap(size: usize, cap: usize) -> Result<()> {
    if size > cap || size >= 64 {
        return Err(Error::CoalitionTooLarge { size, cap });
    }
    Ok(())
}

pub(crate) fn positions(mask: u64) -> impl Iterator<Item = usize> {
    (0..64).filter(move |i| mask >> i & 1 == 1)
}

/// Minimizes `w' Q w` over the simplex on the coordinates `idx` of `q`.
///
/// Returns weights aligned with `idx` and the minimum. Every nonempty support
/// is solved as an equality-constrained quadratic; feasible KKT points are
/// compared and exact ties go to the smallest Euclidean norm.
pub(crate) fn minimize_on_simplex(q: &DMatrix<f64>, idx: &[usize]) -> (Vec<f64>, f64) {
    let m = idx.len();
    debug_assert!(m > 0 && m < 64);
    if m == 1 {
        return (vec![1.0], q[(idx[0], idx[0])]);
    }
    let sub = DMatrix::from_fn(m, m, |i, j| q[(idx[i], idx[j])]);

    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    for support in 1u64..(1u64 << m) {
        let Some(w) = solve_support(&sub, support) else {
            continue;
        };
        let wv = DVector::from_column_slice(&w);
        let grad = &sub * &wv;
        let value = wv.dot(&grad);

        // multipliers of inactive constraints must be nonnegative
        let active: Vec<usize> = positions(support).collect();
        let level = active.iter().map(|&i| grad[i]).sum::<f64>() / active.len() as f64;
        let tol = KKT_TOL * (1.0 + level.abs());
        if (0..m).any(|i| support >> i & 1 == 0 && grad[i] < level - tol) {
            continue;
        }

        let norm = wv.norm_squared();
        let better = match &best {
            None => true,
            Some((_, bv, bn)) => {
                let scale = TIE_TOL * (1.0 + bv.abs());
                value < bv - scale || ((value - bv).abs() <= scale && norm < *bn)
            }
        };
        if better {
            best = Some((w, value, norm));
        }
    }
    let (w, value, _) = best.expect("the best vertex is always a KKT point");
    (w, value)
}

/// Minimizer of `w' Q w` subject to `sum w = 1` with `w` zero off `support`,
/// or `None` if that minimizer has a negative entry.
fn solve_support(q: &DMatrix<f64>, support: u64) -> Option<Vec<f64>> {
    let m = q.nrows();
    let active: Vec<usize> = positions(support).collect();
    let s = active.len();
    let qs = DMatrix::from_fn(s, s, |i, j| q[(active[i], active[j])]);

    let ws = if s == 1 {
        DVector::from_element(1, 1.0)
    } else {
        solve_affine(&qs)
    };

    if ws.iter().any(|&x| !x.is_finite() || x < -SIMPLEX_TOL) {
        return None;
    }
    let clamped: Vec<f64> = ws.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    let mut w = vec![0.0; m];
    for (slot, &i) in active.iter().enumerate() {
        w[i] = clamped[slot] / total;
    }
    Some(w)
}

/// Minimum-norm minimizer of `w' Q w` on the hyperplane `sum w = 1`.
fn solve_affine(q: &DMatrix<f64>) -> DVector<f64> {
    let s = q.nrows();
    let ones = DVector::from_element(s, 1.0);
    let scale = q.diagonal().amax().max(f64::MIN_POSITIVE);

    if let Some(chol) = q.clone().cholesky() {
        let l = chol.l_dirty();
        let min_pivot = (0..s).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if min_pivot > 1e-10 * scale {
            let x = chol.solve(&ones);
            let total = x.sum();
            if total > 0.0 {
                return x / total;
            }
        }
    }

    // Singular Q: write w = 1/s + y with y orthogonal to the ones vector and
    // take the pseudo-inverse solution, which has minimal norm.
    let proj = DMatrix::identity(s, s) - DMatrix::from_element(s, s, 1.0 / s as f64);
    let w0 = &ones / s as f64;
    let a = &proj * q * &proj;
    let rhs = -(&proj * q * &w0);
    let svd = a.svd(true, true);
    let y = svd
        .solve(&rhs, 1e-12 * scale)
        .unwrap_or_else(|_| DVector::zeros(s));
    w0 + proj * y
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unbiased(vs: &[f64]) -> Coalition {
        Coalition::from_summaries(vs.iter().map(|&v| ModelSummary::scalar(0.0, v, 0.1).unwrap()).collect())
            .unwrap()
    }

    fn cfg() -> MarketConfig {
        MarketConfig::new(1.0, -5.0, 5).unwrap()
    }

    #[test]
    fn loss_examples() {
        let single = Coalition::from_summaries(vec![ModelSummary::scalar(2.0, 1.0, 1.0).unwrap()]).unwrap();
        let w = WeightVector::new(vec![1.0]).unwrap();
        assert_abs_diff_eq!(loss_of_weights(&single, &w, 1.0).unwrap(), 1.0 + 4.0 + 1.0);

        let m = ModelSummary::scalar(2.0, 1.0, 1.0).unwrap();
        let twins = Coalition::from_summaries(vec![m.clone(), m]).unwrap();
        let half = WeightVector::uniform(2);
        assert_abs_diff_eq!(loss_of_weights(&twins, &half, 1.0).unwrap(), 1.0 + 4.0 + 0.5, epsilon = 1e-14);

        let w = WeightVector::new(vec![0.75, 0.25]).unwrap();
        assert_abs_diff_eq!(loss_of_weights(&unbiased(&[1.0, 3.0]), &w, 1.0).unwrap(), 1.75, epsilon = 1e-14);
    }

    #[test]
    fn loss_rejects_mismatch() {
        let w = WeightVector::uniform(3);
        assert_eq!(
            loss_of_weights(&unbiased(&[1.0, 1.0]), &w, 1.0),
            Err(Error::DimensionMismatch { weights: 3, members: 2 })
        );
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn optimal_weight_examples() {
        let m = ModelSummary::scalar(0.7, 1.3, 1.0).unwrap();
        let (w, _) = optimal_weights(&Coalition::from_summaries(vec![m.clone(), m]).unwrap(), 1.0).unwrap();
        assert_abs_diff_eq!(w.as_slice()[0], 0.5, epsilon = 1e-14);

        let (w, loss) = optimal_weights(&unbiased(&[1.0, 3.0]), 1.0).unwrap();
        assert_abs_diff_eq!(w.as_slice()[0], 0.75, epsilon = 1e-14);
        assert_abs_diff_eq!(w.as_slice()[1], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(loss, 1.75, epsilon = 1e-14);

        let (w, _) = optimal_weights(&unbiased(&[2.0]), 1.0).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);

        assert_eq!(optimal_weights(&Coalition::empty(), 1.0), Err(Error::EmptyCoalition));
    }

    #[test]
    fn singular_ties_take_minimal_norm() {
        let m = ModelSummary::scalar(1.0, 0.0, 1.0).unwrap();
        let (w, loss) = optimal_weights(&Coalition::from_summaries(vec![m.clone(), m]).unwrap(), 0.0).unwrap();
        assert_abs_diff_eq!(w.as_slice()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn opposite_biases_cancel() {
        let a = ModelSummary::scalar(1.0, 0.5, 1.0).unwrap();
        let b = ModelSummary::scalar(-1.0, 0.5, 1.0).unwrap();
        let (w, loss) = optimal_weights(&Coalition::from_summaries(vec![a, b]).unwrap(), 0.0).unwrap();
        assert_abs_diff_eq!(w.as_slice()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn dominated_model_gets_zero_weight() {
        // the second model is strictly worse and perfectly correlated in bias
        let a = ModelSummary::scalar(0.1, 0.0, 1.0).unwrap();
        let b = ModelSummary::scalar(2.0, 1.0, 1.0).unwrap();
        let (w, _) = optimal_weights(&Coalition::from_summaries(vec![a, b]).unwrap(), 1.0).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn utility_examples() {
        assert_eq!(coalition_utility(&Coalition::empty(), &cfg()).unwrap(), -5.0);
        assert_abs_diff_eq!(coalition_utility(&unbiased(&[1.0]), &cfg()).unwrap(), -2.0);
        assert_abs_diff_eq!(coalition_utility(&unbiased(&[1.0, 1.0]), &cfg()).unwrap(), -1.5, epsilon = 1e-14);
    }

    #[test]
    fn cap_is_enforced() {
        let big = unbiased(&[1.0; 11]);
        assert_eq!(
            optimal_weights(&big, 1.0).unwrap_err(),
            Error::CoalitionTooLarge { size: 11, cap: 10 }
        );
        assert!(optimal_weights_capped(&big, 1.0, 12).is_ok());
    }

    #[test]
    fn subset_selects_positions() {
        let c = Coalition::new(vec![4, 7, 9], unbiased(&[1.0, 2.0, 3.0]).summaries().to_vec()).unwrap();
        let s = c.subset(0b101);
        assert_eq!(s.members(), &[4, 9]);
        assert_eq!(s.summaries()[1].variance(), 3.0);
        assert!(Coalition::new(vec![1, 1], unbiased(&[1.0, 2.0]).summaries().to_vec()).is_err());
    }

    fn random_coalition(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Coalition {
        let summaries = (0..n)
            .map(|_| {
                let bias = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
                ModelSummary::new(bias, rng.random_range(0.0..2.0), 1.0).unwrap()
            })
            .collect();
        Coalition::from_summaries(summaries).unwrap()
    }

    fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> WeightVector {
        let raw: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let total: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let head: f64 = w[..n - 1].iter().sum();
        w[n - 1] = (1.0 - head).max(0.0);
        WeightVector(w)
    }

    #[test]
    fn optimum_beats_random_simplex_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..40 {
            let n = 1 + trial % 5;
            let c = random_coalition(&mut rng, n, 3);
            let (_, best) = optimal_weights(&c, 0.5).unwrap();
            for _ in 0..1000 {
                let w = random_simplex(&mut rng, n);
                assert!(best <= loss_of_weights(&c, &w, 0.5).unwrap() + 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn kkt_conditions_hold(seed in any::<u64>(), n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_coalition(&mut rng, n, 2);
            let (w, _) = optimal_weights(&c, 1.0).unwrap();
            let q = c.loss_matrix();
            let grad = &q * DVector::from_column_slice(w.as_slice()) * 2.0;
            let level = (0..n).filter(|&i| w.as_slice()[i] > 0.0).map(|i| grad[i]).fold(f64::NEG_INFINITY, f64::max);
            for i in 0..n {
                if w.as_slice()[i] > 0.0 {
                    prop_assert!((grad[i] - level).abs() <= 1e-8 * (1.0 + level.abs()));
                } else {
                    prop_assert!(grad[i] >= level - 1e-8 * (1.0 + level.abs()));
                }
            }
        }

        #[test]
        fn adding_a_model_never_hurts(seed in any::<u64>(), n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_coalition(&mut rng, n + 1, 2);
            let full = coalition_utility(&c, &cfg()).unwrap();
            let fewer = coalition_utility(&c.subset((1u64 << n) - 1), &cfg()).unwrap();
            prop_assert!(full >= fewer - 1e-12);
        }

        #[test]
        fn permutation_permutes_weights(seed in any::<u64>(), n in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_coalition(&mut rng, n, 2);
            let mut order: Vec<usize> = (0..n).collect();
            order.rotate_left(1);
            let permuted = Coalition::from_summaries(order.iter().map(|&i| c.summaries()[i].clone()).collect()).unwrap();
            let (w, loss) = optimal_weights(&c, 1.0).unwrap();
            let (wp, loss_p) = optimal_weights(&permuted, 1.0).unwrap();
            prop_assert!((loss - loss_p).abs() < 1e-12);
            for (slot, &i) in order.iter().enumerate() {
                prop_assert!((wp.as_slice()[slot] - w.as_slice()[i]).abs() < 1e-8);
            }
        }

        #[test]
        fn identical_models_get_uniform_weights(n in 1usize..8, b in -2.0f64..2.0, v in 0.01f64..3.0) {
            let m = ModelSummary::scalar(b, v, 1.0).unwrap();
            let (w, _) = optimal_weights(&Coalition::from_summaries(vec![m; n]).unwrap(), 1.0).unwrap();
            for x in w.as_slice() {
                prop_assert!((x - 1.0 / n as f64).abs() < 1e-12);
            }
        }
    }
}
