//! Exact one-dimensional optimal transport through quantile functions.
//!
//! For probabilities on the line, `W_2^2(a, b) = int_0^1 |q_a(t) - q_b(t)|^2 dt`
//! and the barycenter's quantile is the weighted average of the input
//! quantiles. Both are evaluated exactly by walking the merged set of
//! cumulative-weight breakpoints; quantiles are left-continuous.

use crate::measures::PROB_TOL;
use crate::{Error, Result, Weights};

/// Discrete probability on the real line, sorted by position with distinct
/// positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrete1D {
    positions: Vec<f64>,
    weights: Vec<f64>,
    /// Cumulative weights; the last entry is exactly 1.
    cumulative: Vec<f64>,
}

impl Discrete1D {
    pub fn new(positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if positions.len() != weights.len() {
            return Err(Error::InvalidMeasure("positions and weights differ in length".into()));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite position".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidMeasure("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if positions.is_empty() || (total - 1.0).abs() > PROB_TOL {
            return Err(Error::NotProbability { total });
        }
        let mut pairs: Vec<(f64, f64)> =
            positions.into_iter().zip(weights).filter(|p| p.1 > 0.0).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pos: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut wts: Vec<f64> = Vec::with_capacity(pairs.len());
        for (p, w) in pairs {
            if pos.last() == Some(&p) {
                *wts.last_mut().unwrap() += w;
            } else {
                pos.push(p);
                wts.push(w);
            }
        }
        Ok(Self::from_sorted(pos, wts))
    }

    fn from_sorted(positions: Vec<f64>, weights: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc.min(1.0)
            })
            .collect();
        *cumulative.last_mut().unwrap() = 1.0;
        Discrete1D { positions, weights, cumulative }
    }

    /// Builds from strictly increasing positions and their cumulative levels
    /// (last level 1), keeping the levels bit-exact.
    fn from_levels(positions: Vec<f64>, cumulative: Vec<f64>) -> Self {
        let mut prev = 0.0;
        let weights = cumulative
            .iter()
            .map(|c| {
                let w = c - prev;
                prev = *c;
                w
            })
            .collect();
        Discrete1D { positions, weights, cumulative }
    }

    pub fn dirac(x: f64) -> Self {
        Self::from_sorted(vec![x], vec![1.0])
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Left-continuous quantile; `t <= 0` gives the smallest position.
    pub fn quantile(&self, t: f64) -> f64 {
        let i = self.cumulative.partition_point(|c| *c < t).min(self.len() - 1);
        self.positions[i]
    }

    pub fn shifted(&self, h: f64) -> Self {
        Self::from_sorted(self.positions.iter().map(|p| p + h).collect(), self.weights.clone())
    }

    pub fn mean(&self) -> f64 {
        self.positions.iter().zip(&self.weights).map(|(p, w)| p * w).sum()
    }
}

/// Sorted union of the cumulative breakpoints of several profiles, starting
/// at 0 and ending at 1.
pub fn merged_levels<'a>(cumulatives: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut all: Vec<f64> = vec![0.0];
    for c in cumulatives {
        all.extend_from_slice(c);
    }
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

/// Walks the common refinement of two cumulative sequences, yielding
/// `(interval length, index in a, index in b)`.
fn walk_pair(a: &[f64], b: &[f64], mut f: impl FnMut(f64, usize, usize)) {
    let (mut i, mut j) = (0, 0);
    let mut prev = 0.0;
    while i < a.len() && j < b.len() {
        let next = a[i].min(b[j]);
        if next > prev {
            f(next - prev, i, j);
            prev = next;
        }
        if a[i] <= next {
            i += 1;
        }
        if b[j] <= next {
            j += 1;
        }
    }
}

/// Squared 2-Wasserstein distance between two probabilities on the line.
pub fn w2sq_1d(a: &Discrete1D, b: &Discrete1D) -> f64 {
    let mut cost = 0.0;
    walk_pair(&a.cumulative, &b.cumulative, |len, i, j| {
        let d = a.positions[i] - b.positions[j];
        cost += len * d * d;
    });
    cost
}

/// Monotone (comonotone) coupling as `(index in a, index in b, mass)`.
pub fn monotone_coupling(a: &Discrete1D, b: &Discrete1D) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    walk_pair(&a.cumulative, &b.cumulative, |len, i, j| out.push((i, j, len)));
    out
}

/// Weighted barycenter: the output quantile is `sum_a lambda_a q_a(t)`.
pub fn barycenter_1d(profiles: &[Discrete1D], lambda: &Weights) -> Result<Discrete1D> {
    if profiles.is_empty() {
        return Err(Error::EmptyInput);
    }
    lambda.check_len(profiles.len())?;
    let levels = merged_levels(profiles.iter().map(|p| p.cumulative.as_slice()));
    let mut pos: Vec<f64> = Vec::with_capacity(levels.len());
    let mut cum: Vec<f64> = Vec::with_capacity(levels.len());
    let mut idx = vec![0usize; profiles.len()];
    for &hi in &levels[1..] {
        let mut value = 0.0;
        for (k, p) in profiles.iter().enumerate() {
            while p.cumulative[idx[k]] < hi {
                idx[k] += 1;
            }
            value += lambda[k] * p.positions[idx[k]];
        }
        if pos.last() == Some(&value) {
            *cum.last_mut().unwrap() = hi;
        } else {
            pos.push(value);
            cum.push(hi);
        }
    }
    Ok(Discrete1D::from_levels(pos, cum))
}
