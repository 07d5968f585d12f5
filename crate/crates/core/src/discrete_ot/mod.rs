//! Exact discrete optimal transport in `R^d`.
//!
//! Pairwise transport and the multi-marginal problem with cost
//! `sum_{a,b} lambda_a lambda_b |x_a - x_b|^2` are both solved as linear
//! programs over explicit product-support columns. A multi-marginal optimum
//! is pushed to a Wasserstein barycenter by `(x_1..x_m) -> sum_a lambda_a x_a`.

mod simplex;

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

pub use simplex::LpCertificate;
use simplex::{decode, ProductLp};

use crate::measures::PROB_TOL;
use crate::{Error, Result, Weights};

/// Default cap on the number of product columns of one LP.
pub const DEFAULT_COLUMN_CAP: usize = 200_000;

/// Coordinates are rounded to this grid before merging coincident
/// barycenter atoms.
pub const MERGE_GRID: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpConfig {
    pub column_cap: usize,
}

impl Default for LpConfig {
    fn default() -> Self {
        LpConfig { column_cap: DEFAULT_COLUMN_CAP }
    }
}

/// Weighted point set in `R^d`. Atom order is preserved; coincident points
/// are allowed (the skeleton code tags atoms by limb).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidMeasure("points and weights differ in length".into()));
        }
        if points.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimMismatch { expected: dim, found: p.len() });
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite coordinate".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidMeasure("weights must be positive".into()));
        }
        Ok(DiscreteMeasure { dim, points, weights })
    }

    pub fn dirac(x: Vec<f64>) -> Self {
        DiscreteMeasure { dim: x.len(), points: vec![x], weights: vec![1.0] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= PROB_TOL
    }

    fn require_probability(&self) -> Result<()> {
        if self.is_probability() {
            Ok(())
        } else {
            Err(Error::NotProbability { total: self.total_mass() })
        }
    }

    /// Coordinate projection `d = 1` measure to a [`crate::ot1d::Discrete1D`].
    pub fn to_discrete_1d(&self) -> Result<crate::ot1d::Discrete1D> {
        if self.dim != 1 {
            return Err(Error::UnsupportedDim { dim: self.dim, reason: "expected a one-dimensional measure" });
        }
        crate::ot1d::Discrete1D::new(self.points.iter().map(|p| p[0]).collect(), self.weights.clone())
    }

    pub fn from_discrete_1d(d: &crate::ot1d::Discrete1D) -> Self {
        DiscreteMeasure {
            dim: 1,
            points: d.positions().iter().map(|p| vec![*p]).collect(),
            weights: d.weights().to_vec(),
        }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Optimal pairwise plan, entries `(i, j, mass)` with positive mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    pub entries: Vec<(usize, usize, f64)>,
    pub cost: f64,
    pub certificate: LpCertificate,
}

/// Multi-marginal coupling, entries `(tuple, mass)` with positive mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiCoupling {
    pub entries: Vec<(Vec<usize>, f64)>,
    pub cost: f64,
    /// Present when the coupling came from the LP solver.
    pub certificate: Option<LpCertificate>,
}

impl MultiCoupling {
    /// Product coupling of the marginals with its multi-marginal cost.
    pub fn product(measures: &[DiscreteMeasure], lambda: &Weights, config: &LpConfig) -> Result<Self> {
        check_family(measures, lambda)?;
        let sizes: Vec<usize> = measures.iter().map(|m| m.len()).collect();
        let n = simplex::column_count(&sizes, config.column_cap)?;
        let mut entries = Vec::with_capacity(n);
        let mut cost = 0.0;
        let mut tuple = vec![0usize; sizes.len()];
        for j in 0..n {
            decode(j, &sizes, &mut tuple);
            let mass: f64 = tuple.iter().zip(measures).map(|(&i, m)| m.weights[i]).product();
            cost += mass * multimarginal_cost(measures, lambda, &tuple);
            entries.push((tuple.clone(), mass));
        }
        Ok(MultiCoupling { entries, cost, certificate: None })
    }

    /// Marginal `a` of the coupling.
    pub fn marginal(&self, a: usize, size: usize) -> Vec<f64> {
        let mut out = vec![0.0; size];
        for (t, mass) in &self.entries {
            out[t[a]] += mass;
        }
        out
    }
}

fn check_family(measures: &[DiscreteMeasure], lambda: &Weights) -> Result<()> {
    let first = measures.first().ok_or(Error::EmptyInput)?;
    lambda.check_len(measures.len())?;
    for m in measures {
        if m.dim != first.dim {
            return Err(Error::DimMismatch { expected: first.dim, found: m.dim });
        }
        m.require_probability()?;
    }
    Ok(())
}

/// `sum_{a,b} lambda_a lambda_b |x_a - x_b|^2` over ordered pairs for the
/// points selected by `tuple`.
pub fn multimarginal_cost(measures: &[DiscreteMeasure], lambda: &Weights, tuple: &[usize]) -> f64 {
    let mut c = 0.0;
    for a in 0..tuple.len() {
        for b in a + 1..tuple.len() {
            c += lambda[a] * lambda[b] * sq_dist(&measures[a].points[tuple[a]], &measures[b].points[tuple[b]]);
        }
    }
    2.0 * c
}

/// Optimal transport plan for the quadratic cost.
pub fn transport_lp(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<TransportPlan> {
    transport_lp_with(a, b, &LpConfig::default())
}

pub fn transport_lp_with(a: &DiscreteMeasure, b: &DiscreteMeasure, config: &LpConfig) -> Result<TransportPlan> {
    if a.dim != b.dim {
        return Err(Error::DimMismatch { expected: a.dim, found: b.dim });
    }
    a.require_probability()?;
    b.require_probability()?;
    let lp = ProductLp::new(&[&a.weights, &b.weights], config.column_cap, |t| {
        sq_dist(&a.points[t[0]], &b.points[t[1]])
    })?;
    let sol = lp.solve()?;
    let nb = b.len();
    let entries: Vec<(usize, usize, f64)> =
        sol.entries.iter().map(|&(j, mass)| (j / nb, j % nb, mass)).collect();
    Ok(TransportPlan { entries, cost: sol.certificate.primal, certificate: sol.certificate })
}

fn multimarginal_problem(measures: &[DiscreteMeasure], lambda: &Weights, config: &LpConfig) -> Result<ProductLp> {
    check_family(measures, lambda)?;
    if measures.len() < 2 {
        return Err(Error::InvalidWeights("multi-marginal problem needs at least two measures".into()));
    }
    let marginals: Vec<&[f64]> = measures.iter().map(|m| m.weights.as_slice()).collect();
    ProductLp::new(&marginals, config.column_cap, |t| multimarginal_cost(measures, lambda, t))
}

/// Optimal vertex solution of the multi-marginal problem.
pub fn multimarginal_lp(measures: &[DiscreteMeasure], lambda: &Weights, config: &LpConfig) -> Result<MultiCoupling> {
    let lp = multimarginal_problem(measures, lambda, config)?;
    let sol = lp.solve()?;
    let mut tuple = vec![0usize; measures.len()];
    let entries = sol
        .entries
        .iter()
        .map(|&(j, mass)| {
            decode(j, lp.sizes(), &mut tuple);
            (tuple.clone(), mass)
        })
        .collect();
    Ok(MultiCoupling { entries, cost: sol.certificate.primal, certificate: Some(sol.certificate) })
}

/// Writes the multi-marginal instance in the plain-text `LWOT-LP 1` format.
pub fn write_lp_instance<W: Write>(
    measures: &[DiscreteMeasure],
    lambda: &Weights,
    config: &LpConfig,
    out: &mut W,
) -> Result<()> {
    let lp = multimarginal_problem(measures, lambda, config)?;
    lp.write_instance(out)?;
    Ok(())
}

/// Euclidean `lambda`-average of the points picked by `tuple`.
pub fn tuple_point(measures: &[DiscreteMeasure], lambda: &Weights, tuple: &[usize]) -> Vec<f64> {
    let dim = measures[0].dim;
    let mut x = vec![0.0; dim];
    for (a, &i) in tuple.iter().enumerate() {
        for (xc, pc) in x.iter_mut().zip(&measures[a].points[i]) {
            *xc += lambda[a] * pc;
        }
    }
    x
}

/// Pushes a coupling forward by the weighted average map; coincident output
/// points (after rounding to [`MERGE_GRID`]) are merged.
pub fn barycenter_from_coupling(
    coupling: &MultiCoupling,
    measures: &[DiscreteMeasure],
    lambda: &Weights,
) -> Result<DiscreteMeasure> {
    check_family(measures, lambda)?;
    let mut merged: BTreeMap<Vec<i64>, (Vec<f64>, f64)> = BTreeMap::new();
    for (tuple, mass) in &coupling.entries {
        let x = tuple_point(measures, lambda, tuple);
        let key: Vec<i64> = x.iter().map(|c| (c / MERGE_GRID).round() as i64).collect();
        merged.entry(key).and_modify(|e| e.1 += mass).or_insert((x, *mass));
    }
    let (points, weights): (Vec<Vec<f64>>, Vec<f64>) = merged.into_values().unzip();
    DiscreteMeasure::new(measures[0].dim, points, weights)
}

/// Wasserstein barycenter of discrete probabilities via the multi-marginal LP.
pub fn w_barycenter(measures: &[DiscreteMeasure], lambda: &Weights, config: &LpConfig) -> Result<DiscreteMeasure> {
    check_family(measures, lambda)?;
    if measures.len() == 1 {
        return Ok(measures[0].clone());
    }
    let coupling = multimarginal_lp(measures, lambda, config)?;
    barycenter_from_coupling(&coupling, measures, lambda)
}

/// `sum_a lambda_a W_2^2(bar, mu_a)`, each term by [`transport_lp`].
pub fn barycenter_objective(
    bar: &DiscreteMeasure,
    measures: &[DiscreteMeasure],
    lambda: &Weights,
    config: &LpConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for (a, m) in measures.iter().enumerate() {
        total += lambda[a] * transport_lp_with(bar, m, config)?.cost;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dm(points: &[&[f64]], weights: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(points[0].len(), points.iter().map(|p| p.to_vec()).collect(), weights.to_vec())
            .unwrap()
    }

    fn random_measure(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> DiscreteMeasure {
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let t: f64 = w.iter().sum();
        DiscreteMeasure::new(
            dim,
            (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect(),
            w.iter().map(|v| v / t).collect(),
        )
        .unwrap()
    }

    fn check_plan_marginals(plan: &TransportPlan, a: &DiscreteMeasure, b: &DiscreteMeasure) {
        let mut ra = vec![0.0; a.len()];
        let mut rb = vec![0.0; b.len()];
        for &(i, j, m) in &plan.entries {
            ra[i] += m;
            rb[j] += m;
        }
        for (x, y) in ra.iter().zip(a.weights()) {
            assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in rb.iter().zip(b.weights()) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(plan.entries.len() <= a.len() + b.len() - 1);
        assert!(plan.certificate.gap <= 1e-9);
        assert!(plan.certificate.dual_violation <= 1e-9);
    }

    #[test]
    fn identical_measures_cost_zero() {
        let a = dm(&[&[0.0, 1.0], &[2.0, 0.5], &[1.0, 1.0]], &[0.2, 0.3, 0.5]);
        let plan = transport_lp(&a, &a).unwrap();
        assert!(plan.cost.abs() < 1e-15);
        check_plan_marginals(&plan, &a, &a);
    }

    #[test]
    fn single_pair() {
        let plan = transport_lp(&DiscreteMeasure::dirac(vec![0.0, 0.0]), &DiscreteMeasure::dirac(vec![3.0, 4.0]))
            .unwrap();
        assert_eq!(plan.cost, 25.0);
        assert_eq!(plan.entries, vec![(0, 0, 1.0)]);
    }

    #[test]
    fn dimension_mismatch() {
        let err = transport_lp(&DiscreteMeasure::dirac(vec![0.0]), &DiscreteMeasure::dirac(vec![0.0, 1.0]));
        assert!(matches!(err, Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn uniform_three_by_three_matches_permutation_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for _ in 0..50 {
            let mk = |rng: &mut ChaCha8Rng| {
                DiscreteMeasure::new(
                    2,
                    (0..3).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect(),
                    vec![1.0 / 3.0; 3],
                )
                .unwrap()
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            let oracle = perms
                .iter()
                .map(|p| (0..3).map(|i| sq_dist(&a.points()[i], &b.points()[p[i]]) / 3.0).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            let plan = transport_lp(&a, &b).unwrap();
            assert!((plan.cost - oracle).abs() < 1e-12, "{} vs {}", plan.cost, oracle);
            check_plan_marginals(&plan, &a, &b);
        }
    }

    /// Independent LP route through the `minilp` crate.
    fn minilp_multimarginal(measures: &[DiscreteMeasure], lambda: &Weights) -> f64 {
        use minilp::{ComparisonOp, OptimizationDirection, Problem};
        let sizes: Vec<usize> = measures.iter().map(|m| m.len()).collect();
        let n: usize = sizes.iter().product();
        let mut p = Problem::new(OptimizationDirection::Minimize);
        let mut vars = Vec::with_capacity(n);
        let mut tuples = Vec::with_capacity(n);
        let mut t = vec![0; sizes.len()];
        for j in 0..n {
            decode(j, &sizes, &mut t);
            vars.push(p.add_var(multimarginal_cost(measures, lambda, &t), (0.0, f64::INFINITY)));
            tuples.push(t.clone());
        }
        for (a, m) in measures.iter().enumerate() {
            for i in 0..m.len() {
                let terms: Vec<_> = (0..n).filter(|&j| tuples[j][a] == i).map(|j| (vars[j], 1.0)).collect();
                p.add_constraint(&terms[..], ComparisonOp::Eq, m.weights()[i]);
            }
        }
        p.solve().unwrap().objective()
    }

    #[test]
    fn transport_matches_independent_lp() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..40 {
            let a = { let n = rng.gen_range(1..6); random_measure(&mut rng, n, 2) };
            let b = { let n = rng.gen_range(1..6); random_measure(&mut rng, n, 2) };
            let plan = transport_lp(&a, &b).unwrap();
            let lam = Weights::uniform(2).unwrap();
            // multimarginal cost with lambda=(1/2,1/2) is half the pairwise cost
            let oracle = 2.0 * minilp_multimarginal(&[a.clone(), b.clone()], &lam);
            assert!((plan.cost - oracle).abs() < 1e-7, "{} vs {}", plan.cost, oracle);
            check_plan_marginals(&plan, &a, &b);
        }
    }

    #[test]
    fn multimarginal_matches_independent_lp_and_is_sparse() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let m = rng.gen_range(2..4);
            let ms: Vec<DiscreteMeasure> =
                (0..m).map(|_| { let n = rng.gen_range(1..5); random_measure(&mut rng, n, 2) }).collect();
            let lam = Weights::normalized((0..m).map(|_| rng.gen_range(0.1..1.0)).collect()).unwrap();
            let c = multimarginal_lp(&ms, &lam, &LpConfig::default()).unwrap();
            let oracle = minilp_multimarginal(&ms, &lam);
            assert!((c.cost - oracle).abs() < 1e-7, "{} vs {}", c.cost, oracle);
            let bound: usize = ms.iter().map(|x| x.len()).sum::<usize>() - m + 1;
            assert!(c.entries.len() <= bound);
            for (a, mu) in ms.iter().enumerate() {
                for (x, y) in c.marginal(a, mu.len()).iter().zip(mu.weights()) {
                    assert!((x - y).abs() < 1e-10);
                }
            }
            let cert = c.certificate.unwrap();
            assert!(cert.gap <= 1e-9 && cert.dual_violation <= 1e-9);
        }
    }

    #[test]
    fn all_diracs_at_one_point() {
        let ms = vec![DiscreteMeasure::dirac(vec![1.0, 2.0]); 3];
        let c = multimarginal_lp(&ms, &Weights::uniform(3).unwrap(), &LpConfig::default()).unwrap();
        assert_eq!(c.entries, vec![(vec![0, 0, 0], 1.0)]);
        assert_eq!(c.cost, 0.0);
    }

    #[test]
    fn two_marginals_half_pairwise_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let a = random_measure(&mut rng, 4, 2);
            let b = random_measure(&mut rng, 3, 2);
            let lam = Weights::uniform(2).unwrap();
            let c = multimarginal_lp(&[a.clone(), b.clone()], &lam, &LpConfig::default()).unwrap();
            let plan = transport_lp(&a, &b).unwrap();
            assert!((c.cost - 0.5 * plan.cost).abs() < 1e-12);
        }
    }

    #[test]
    fn midpoint_pushforward() {
        let ms = vec![DiscreteMeasure::dirac(vec![0.0, 0.0]), DiscreteMeasure::dirac(vec![1.0, 0.0])];
        let lam = Weights::uniform(2).unwrap();
        let bar = w_barycenter(&ms, &lam, &LpConfig::default()).unwrap();
        assert_eq!(bar, DiscreteMeasure::dirac(vec![0.5, 0.0]));
        let c = MultiCoupling { entries: vec![(vec![0, 0], 1.0)], cost: 0.0, certificate: None };
        let same = vec![DiscreteMeasure::dirac(vec![3.0]); 2];
        assert_eq!(barycenter_from_coupling(&c, &same, &lam).unwrap(), DiscreteMeasure::dirac(vec![3.0]));
    }

    #[test]
    fn single_measure_barycenter_is_identity() {
        let a = dm(&[&[0.0], &[1.0]], &[0.25, 0.75]);
        let bar = w_barycenter(&[a.clone()], &Weights::new(vec![1.0]).unwrap(), &LpConfig::default()).unwrap();
        assert_eq!(bar, a);
    }

    #[test]
    fn agrees_with_quantile_barycenter_in_1d() {
        let a = dm(&[&[0.0], &[1.0]], &[0.5, 0.5]);
        let b = dm(&[&[0.0], &[3.0]], &[0.5, 0.5]);
        let lam = Weights::uniform(2).unwrap();
        let bar = w_barycenter(&[a.clone(), b.clone()], &lam, &LpConfig::default()).unwrap();
        let q = crate::ot1d::barycenter_1d(&[a.to_discrete_1d().unwrap(), b.to_discrete_1d().unwrap()], &lam).unwrap();
        let got = bar.to_discrete_1d().unwrap();
        assert_eq!(got.len(), q.len());
        for (x, y) in got.positions().iter().zip(q.positions()) {
            assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in got.weights().iter().zip(q.weights()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn support_bound_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let m = rng.gen_range(2..4);
            let ms: Vec<DiscreteMeasure> =
                (0..m).map(|_| { let n = rng.gen_range(1..5); random_measure(&mut rng, n, 2) }).collect();
            let lam = Weights::normalized((0..m).map(|_| rng.gen_range(0.1..1.0)).collect()).unwrap();
            let bar = w_barycenter(&ms, &lam, &LpConfig::default()).unwrap();
            let bound: usize = ms.iter().map(|x| x.len()).sum::<usize>() - m + 1;
            assert!(bar.len() <= bound);
            assert!(bar.is_probability());
        }
    }

    #[test]
    fn cap_is_enforced() {
        let a = random_measure(&mut ChaCha8Rng::seed_from_u64(1), 10, 1);
        let err = multimarginal_lp(&[a.clone(), a.clone(), a], &Weights::uniform(3).unwrap(), &LpConfig { column_cap: 999 });
        match err {
            Err(Error::ProblemTooLarge { columns, cap }) => {
                assert_eq!(cap, 999);
                assert!(columns >= 1000);
            }
            other => panic!("expected ProblemTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn lp_instance_dump_lists_every_column() {
        let a = dm(&[&[0.0], &[1.0]], &[0.5, 0.5]);
        let b = dm(&[&[0.0], &[2.0], &[3.0]], &[0.2, 0.3, 0.5]);
        let mut buf = Vec::new();
        write_lp_instance(&[a, b], &Weights::uniform(2).unwrap(), &LpConfig::default(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("LWOT-LP 1\nsizes 2 3\nrows 4\n"));
        assert_eq!(text.lines().filter(|l| l.starts_with("col ")).count(), 6);
    }
}
