//! Layerwise-Wasserstein distance, barycenters and their rotation-symmetrized
//! variants.
//!
//! A measure is split into its normalized vertical marginal and the family of
//! horizontal slices indexed by cumulative level `l in (0, 1]`. Slices are
//! piecewise constant in `l`, so the level integral is an exact sum over the
//! common refinement of the inputs' level breakpoints.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::discrete_ot::{self, sq_dist, DiscreteMeasure, LpConfig};
use crate::measures::{vertical_marginal, Atom, AtomicMeasure, LayeredMeasure, VerticalProfile};
use crate::ot1d;
use crate::{Error, Result, Weights};

/// Level breakpoints closer than this are treated as one.
pub const LEVEL_SNAP: f64 = 1e-12;

/// Horizontal conditionals at each distinct height, aligned with the profile.
struct HeightSlices {
    profile: VerticalProfile,
    slices: Vec<DiscreteMeasure>,
    /// Index of the first atom of each height in `AtomicMeasure::atoms`.
    offsets: Vec<usize>,
}

fn height_slices(mu: &AtomicMeasure) -> Result<HeightSlices> {
    if mu.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let profile = vertical_marginal(mu);
    let atoms = mu.atoms();
    let mut slices = Vec::with_capacity(profile.heights().len());
    let mut offsets = Vec::with_capacity(profile.heights().len());
    let mut start = 0;
    while start < atoms.len() {
        let y = atoms[start].y;
        let end = start + atoms[start..].iter().take_while(|a| a.y == y).count();
        let mass: f64 = atoms[start..end].iter().map(|a| a.w).sum();
        let points = atoms[start..end].iter().map(|a| a.x.clone()).collect();
        let weights = atoms[start..end].iter().map(|a| a.w / mass).collect();
        slices.push(DiscreteMeasure::new(mu.dim(), points, weights)?);
        offsets.push(start);
        start = end;
    }
    Ok(HeightSlices { profile, slices, offsets })
}

/// Union of level breakpoints, dropping any within [`LEVEL_SNAP`] of the
/// previous kept value.
fn common_levels(profiles: &[&VerticalProfile]) -> Vec<f64> {
    let all = ot1d::merged_levels(profiles.iter().map(|p| p.cumulative()));
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for l in all {
        match out.last() {
            Some(&prev) if l - prev <= LEVEL_SNAP => {
                if l == 1.0 {
                    *out.last_mut().unwrap() = 1.0;
                }
            }
            _ => out.push(l),
        }
    }
    if out.len() == 1 {
        out.push(1.0);
    }
    out
}

/// Per-interval atom indices of each profile, located at interval midpoints.
fn interval_indices(levels: &[f64], profiles: &[&VerticalProfile]) -> Vec<Vec<usize>> {
    levels
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            profiles.iter().map(|p| p.atom_at_level(mid)).collect()
        })
        .collect()
}

/// Vertical profile and rescaled layered measure of `mu`.
pub fn rescale(mu: &AtomicMeasure) -> Result<(VerticalProfile, LayeredMeasure)> {
    let hs = height_slices(mu)?;
    let layered = LayeredMeasure::new(hs.profile.levels(), hs.slices)?;
    Ok((hs.profile, layered))
}

/// Inverse of [`rescale`]: pushes each level interval back to the height
/// `q(l)` and restores the total mass.
pub fn unrescale(profile: &VerticalProfile, layered: &LayeredMeasure) -> Result<AtomicMeasure> {
    let levels = ot1d::merged_levels([profile.cumulative(), layered.breakpoints()]);
    let total = profile.total_mass();
    let dim = layered.slices()[0].dim();
    let mut atoms = Vec::new();
    for w in levels.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let y = profile.quantile(mid);
        let slice = layered.slice_at(mid);
        for (x, p) in slice.points().iter().zip(slice.weights()) {
            atoms.push(Atom::new(x.clone(), y, p * (w[1] - w[0]) * total));
        }
    }
    AtomicMeasure::new(dim, atoms)
}

/// Squared `W_2` between two horizontal slices, with closed forms for Dirac
/// slices and the quantile formula on the line.
fn slice_cost(a: &DiscreteMeasure, b: &DiscreteMeasure, config: &LpConfig) -> Result<f64> {
    if b.len() == 1 {
        return Ok(a.points().iter().zip(a.weights()).map(|(x, w)| w * sq_dist(x, &b.points()[0])).sum());
    }
    if a.len() == 1 {
        return slice_cost(b, a, config);
    }
    if a.dim() == 1 {
        return Ok(ot1d::w2sq_1d(&a.to_discrete_1d()?, &b.to_discrete_1d()?));
    }
    Ok(discrete_ot::transport_lp_with(a, b, config)?.cost.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalCost {
    pub lo: f64,
    pub hi: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LwDistanceReport {
    pub total_sq: f64,
    pub vertical_sq: f64,
    pub horizontal_sq: f64,
    pub per_interval: Vec<IntervalCost>,
}

pub fn lw_distance(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<LwDistanceReport> {
    lw_distance_with(mu, nu, &LpConfig::default())
}

/// Squared layerwise-Wasserstein distance between the normalized measures.
pub fn lw_distance_with(mu: &AtomicMeasure, nu: &AtomicMeasure, config: &LpConfig) -> Result<LwDistanceReport> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimMismatch { expected: mu.dim(), found: nu.dim() });
    }
    let a = height_slices(mu)?;
    let b = height_slices(nu)?;
    let vertical_sq = ot1d::w2sq_1d(&a.profile.to_discrete_1d()?, &b.profile.to_discrete_1d()?);
    let profiles = [&a.profile, &b.profile];
    let levels = common_levels(&profiles);
    let idx = interval_indices(&levels, &profiles);
    let per_interval = levels
        .par_windows(2)
        .zip(idx.par_iter())
        .map(|(w, ij)| {
            let cost = slice_cost(&a.slices[ij[0]], &b.slices[ij[1]], config)?;
            Ok(IntervalCost { lo: w[0], hi: w[1], cost })
        })
        .collect::<Result<Vec<_>>>()?;
    let horizontal_sq = per_interval.iter().map(|c| (c.hi - c.lo) * c.cost).sum::<f64>();
    Ok(LwDistanceReport { total_sq: vertical_sq + horizontal_sq, vertical_sq, horizontal_sq, per_interval })
}

/// Distance that also separates measures differing only in total mass.
pub fn lw_distance_extended(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<f64> {
    let d = lw_distance(mu, nu)?.total_sq;
    let dm = mu.total_mass() - nu.total_mass();
    Ok(d + dm * dm)
}

fn check_family(measures: &[AtomicMeasure], lambda: &Weights) -> Result<usize> {
    let first = measures.first().ok_or(Error::EmptyInput)?;
    lambda.check_len(measures.len())?;
    for m in measures {
        if m.dim() != first.dim() {
            return Err(Error::DimMismatch { expected: first.dim(), found: m.dim() });
        }
    }
    Ok(first.dim())
}

fn slice_barycenter(slices: &[DiscreteMeasure], lambda: &Weights, config: &LpConfig) -> Result<DiscreteMeasure> {
    if slices.iter().all(|s| s.len() == 1) {
        let tuple = vec![0; slices.len()];
        return Ok(DiscreteMeasure::dirac(discrete_ot::tuple_point(slices, lambda, &tuple)));
    }
    if slices[0].dim() == 1 {
        let ds = slices.iter().map(|s| s.to_discrete_1d()).collect::<Result<Vec<_>>>()?;
        return Ok(DiscreteMeasure::from_discrete_1d(&ot1d::barycenter_1d(&ds, lambda)?));
    }
    discrete_ot::w_barycenter(slices, lambda, config)
}

pub fn lw_barycenter(measures: &[AtomicMeasure], lambda: &Weights) -> Result<AtomicMeasure> {
    lw_barycenter_with(measures, lambda, &LpConfig::default())
}

/// Layerwise barycenter, returned as a probability measure.
///
/// Heights follow the averaged vertical quantile and each level interval
/// carries the Wasserstein barycenter of the input slices. When the slice
/// problem has several optimal vertex solutions, the solver's deterministic
/// choice is returned.
pub fn lw_barycenter_with(measures: &[AtomicMeasure], lambda: &Weights, config: &LpConfig) -> Result<AtomicMeasure> {
    let dim = check_family(measures, lambda)?;
    let hs = measures.iter().map(height_slices).collect::<Result<Vec<_>>>()?;
    let profiles: Vec<&VerticalProfile> = hs.iter().map(|h| &h.profile).collect();
    let levels = common_levels(&profiles);
    let idx = interval_indices(&levels, &profiles);
    let pieces = levels
        .par_windows(2)
        .zip(idx.par_iter())
        .map(|(w, ij)| {
            let slices: Vec<DiscreteMeasure> = ij.iter().zip(&hs).map(|(&i, h)| h.slices[i].clone()).collect();
            let y: f64 = ij.iter().zip(&hs).enumerate().map(|(a, (&i, h))| lambda[a] * h.profile.heights()[i]).sum();
            let bar = slice_barycenter(&slices, lambda, config)?;
            Ok((y, w[1] - w[0], bar))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut atoms = Vec::new();
    for (y, len, bar) in pieces {
        for (x, p) in bar.points().iter().zip(bar.weights()) {
            atoms.push(Atom::new(x.clone(), y, p * len));
        }
    }
    AtomicMeasure::new(dim, atoms)
}

/// `sum_a lambda_a d_LW^2(candidate, mu_a)`.
pub fn lw_barycenter_objective(candidate: &AtomicMeasure, measures: &[AtomicMeasure], lambda: &Weights) -> Result<f64> {
    lw_barycenter_objective_with(candidate, measures, lambda, &LpConfig::default())
}

pub fn lw_barycenter_objective_with(
    candidate: &AtomicMeasure,
    measures: &[AtomicMeasure],
    lambda: &Weights,
    config: &LpConfig,
) -> Result<f64> {
    check_family(measures, lambda)?;
    let mut total = 0.0;
    for (a, m) in measures.iter().enumerate() {
        total += lambda[a] * lw_distance_with(candidate, m, config)?.total_sq;
    }
    Ok(total)
}

/// Rotates the horizontal plane of a `d = 2` measure by `theta`.
pub fn rotate(mu: &AtomicMeasure, theta: f64) -> Result<AtomicMeasure> {
    if mu.dim() != 2 {
        return Err(Error::UnsupportedDim { dim: mu.dim(), reason: "rotations are implemented for d = 2" });
    }
    let (s, c) = theta.sin_cos();
    mu.map_horizontal(|x| vec![c * x[0] - s * x[1], s * x[0] + c * x[1]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RotationOptions {
    /// Number of equally spaced angles in the coarse scan.
    pub grid: usize,
    /// Bracket width at which golden-section refinement stops.
    pub tol: f64,
}

impl Default for RotationOptions {
    fn default() -> Self {
        RotationOptions { grid: 64, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationSearchResult {
    pub angle: f64,
    pub distance_sq: f64,
    pub trace: Vec<(f64, f64)>,
}

pub fn symmetrized_distance(mu: &AtomicMeasure, nu: &AtomicMeasure, opts: &RotationOptions) -> Result<RotationSearchResult> {
    symmetrized_distance_with(mu, nu, opts, &LpConfig::default())
}

/// Minimum over rotations `R` of `d_LW^2(R mu, nu)`.
///
/// For `d = 2` a coarse angle scan is refined by golden-section search on the
/// bracket around the best grid angle. `d = 1` has only the identity rotation;
/// `d >= 3` is not supported.
pub fn symmetrized_distance_with(
    mu: &AtomicMeasure,
    nu: &AtomicMeasure,
    opts: &RotationOptions,
    config: &LpConfig,
) -> Result<RotationSearchResult> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimMismatch { expected: mu.dim(), found: nu.dim() });
    }
    match mu.dim() {
        1 => {
            let d = lw_distance_with(mu, nu, config)?.total_sq;
            return Ok(RotationSearchResult { angle: 0.0, distance_sq: d, trace: vec![(0.0, d)] });
        }
        2 => {}
        dim => return Err(Error::UnsupportedDim { dim, reason: "rotation search covers SO(2) only" }),
    }
    if opts.grid == 0 || !(opts.tol > 0.0) {
        return Err(Error::InvalidMeasure("rotation grid must be positive with a positive tolerance".into()));
    }
    let eval = |theta: f64| -> Result<f64> { Ok(lw_distance_with(&rotate(mu, theta)?, nu, config)?.total_sq) };
    let h = 2.0 * PI / opts.grid as f64;
    let grid: Vec<f64> = (0..opts.grid).map(|k| k as f64 * h).collect();
    let values = grid.par_iter().map(|&t| eval(t)).collect::<Result<Vec<_>>>()?;
    let mut trace: Vec<(f64, f64)> = grid.into_iter().zip(values).collect();
    let best = trace.iter().enumerate().min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0))).unwrap().0;

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (trace[best].0 - h, trace[best].0 + h);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    trace.push((c, fc));
    trace.push((d, fd));
    while b - a > opts.tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c)?;
            trace.push((c, fc));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d)?;
            trace.push((d, fd));
        }
    }
    let mid = 0.5 * (a + b);
    trace.push((mid, eval(mid)?));
    for t in trace.iter_mut() {
        t.0 = t.0.rem_euclid(2.0 * PI);
    }
    let (angle, distance_sq) = *trace.iter().min_by(|p, q| p.1.total_cmp(&q.1)).unwrap();
    Ok(RotationSearchResult { angle, distance_sq, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymBaryOptions {
    pub rotation: RotationOptions,
    /// Random initializations tried in addition to the all-identity start.
    pub starts: usize,
    pub max_iter: usize,
    /// Stop once an iteration lowers the objective by less than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SymBaryOptions {
    fn default() -> Self {
        SymBaryOptions { rotation: RotationOptions::default(), starts: 8, max_iter: 50, tol: 1e-8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymmetrizedBarycenter {
    pub measure: AtomicMeasure,
    /// Rotation applied to each input measure.
    pub angles: Vec<f64>,
    pub objective: f64,
    /// Iterations used by the winning start.
    pub iterations: usize,
}

pub fn symmetrized_barycenter(
    measures: &[AtomicMeasure],
    lambda: &Weights,
    opts: &SymBaryOptions,
) -> Result<SymmetrizedBarycenter> {
    symmetrized_barycenter_with(measures, lambda, opts, &LpConfig::default())
}

/// Local search for `min_{R_a} min_nu sum_a lambda_a d_LW^2(nu, R_a mu_a)`.
///
/// Alternates between the layerwise barycenter of the rotated inputs and the
/// best rotation of each input against it, from several starting rotations.
/// This is a heuristic: the best local optimum found is returned.
pub fn symmetrized_barycenter_with(
    measures: &[AtomicMeasure],
    lambda: &Weights,
    opts: &SymBaryOptions,
    config: &LpConfig,
) -> Result<SymmetrizedBarycenter> {
    let dim = check_family(measures, lambda)?;
    if dim == 1 {
        let measure = lw_barycenter_with(measures, lambda, config)?;
        let objective = lw_barycenter_objective_with(&measure, measures, lambda, config)?;
        return Ok(SymmetrizedBarycenter { measure, angles: vec![0.0; measures.len()], objective, iterations: 0 });
    }
    if dim != 2 {
        return Err(Error::UnsupportedDim { dim, reason: "rotation search covers SO(2) only" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![vec![0.0; measures.len()]];
    for _ in 0..opts.starts {
        starts.push((0..measures.len()).map(|_| rng.gen_range(0.0..2.0 * PI)).collect());
    }
    let mut best: Option<SymmetrizedBarycenter> = None;
    for init in starts {
        let run = descend(measures, lambda, init, opts, config)?;
        if best.as_ref().map_or(true, |b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

fn descend(
    measures: &[AtomicMeasure],
    lambda: &Weights,
    mut angles: Vec<f64>,
    opts: &SymBaryOptions,
    config: &LpConfig,
) -> Result<SymmetrizedBarycenter> {
    let mut best: Option<SymmetrizedBarycenter> = None;
    for it in 1..=opts.max_iter.max(1) {
        let rotated = measures.iter().zip(&angles).map(|(m, &t)| rotate(m, t)).collect::<Result<Vec<_>>>()?;
        let bar = lw_barycenter_with(&rotated, lambda, config)?;
        let objective = lw_barycenter_objective_with(&bar, &rotated, lambda, config)?;
        let prev = best.as_ref().map_or(f64::INFINITY, |b| b.objective);
        if objective < prev {
            best = Some(SymmetrizedBarycenter { measure: bar.clone(), angles: angles.clone(), objective, iterations: it });
        }
        if prev - objective < opts.tol || objective <= 0.0 {
            break;
        }
        for (a, m) in measures.iter().enumerate() {
            let r = symmetrized_distance_with(m, &bar, &opts.rotation, config)?;
            angles[a] = r.angle;
        }
    }
    Ok(best.unwrap())
}

/// One piece of the layerwise coupling between a source and a target atom.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingFragment {
    pub source_index: usize,
    pub target_index: usize,
    pub source: (Vec<f64>, f64),
    pub target: (Vec<f64>, f64),
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerwiseCoupling {
    pub fragments: Vec<CouplingFragment>,
    pub cost: f64,
}

/// Knothe-Rosenblatt type coupling of the normalized measures (`d = 1`):
/// vertical quantiles are matched monotonically, then horizontal quantiles
/// within every common level interval.
pub fn layerwise_coupling(mu: &AtomicMeasure, nu: &AtomicMeasure) -> Result<LayerwiseCoupling> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimMismatch { expected: mu.dim(), found: nu.dim() });
    }
    if mu.dim() != 1 {
        return Err(Error::UnsupportedDim { dim: mu.dim(), reason: "layerwise coupling is defined for d = 1" });
    }
    let a = height_slices(mu)?;
    let b = height_slices(nu)?;
    let profiles = [&a.profile, &b.profile];
    let levels = common_levels(&profiles);
    let idx = interval_indices(&levels, &profiles);
    let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (w, ij) in levels.windows(2).zip(&idx) {
        let (sa, sb) = (&a.slices[ij[0]], &b.slices[ij[1]]);
        // slices of an AtomicMeasure are sorted with distinct positions, so
        // Discrete1D keeps their atom order
        let pa = sa.to_discrete_1d()?;
        let pb = sb.to_discrete_1d()?;
        for (i, j, m) in ot1d::monotone_coupling(&pa, &pb) {
            *merged.entry((a.offsets[ij[0]] + i, b.offsets[ij[1]] + j)).or_insert(0.0) += m * (w[1] - w[0]);
        }
    }
    let mut cost = 0.0;
    let fragments = merged
        .into_iter()
        .map(|((i, j), mass)| {
            let (s, t) = (&mu.atoms()[i], &nu.atoms()[j]);
            cost += mass * (sq_dist(&s.x, &t.x) + (s.y - t.y) * (s.y - t.y));
            CouplingFragment {
                source_index: i,
                target_index: j,
                source: (s.x.clone(), s.y),
                target: (t.x.clone(), t.y),
                mass,
            }
        })
        .collect();
    Ok(LayerwiseCoupling { fragments, cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::normalize;

    fn random_measure(rng: &mut ChaCha8Rng, n: usize, dim: usize, levels: usize) -> AtomicMeasure {
        let atoms = (0..n)
            .map(|_| {
                let x = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let y = rng.gen_range(0..levels) as f64 * 0.5;
                Atom::new(x, y, rng.gen_range(0.1..1.0))
            })
            .collect();
        AtomicMeasure::new(dim, atoms).unwrap()
    }

    fn m1(atoms: &[(f64, f64, f64)]) -> AtomicMeasure {
        AtomicMeasure::new(1, atoms.iter().map(|&(x, y, w)| Atom::new(vec![x], y, w)).collect()).unwrap()
    }

    fn m2(atoms: &[(f64, f64, f64, f64)]) -> AtomicMeasure {
        AtomicMeasure::new(2, atoms.iter().map(|&(x0, x1, y, w)| Atom::new(vec![x0, x1], y, w)).collect()).unwrap()
    }

    fn assert_same_atoms(a: &AtomicMeasure, b: &AtomicMeasure, tol: f64) {
        assert_eq!(a.len(), b.len(), "{a:?} vs {b:?}");
        for (p, q) in a.atoms().iter().zip(b.atoms()) {
            assert!((p.y - q.y).abs() <= tol && (p.w - q.w).abs() <= tol, "{p:?} vs {q:?}");
            for (u, v) in p.x.iter().zip(&q.x) {
                assert!((u - v).abs() <= tol, "{p:?} vs {q:?}");
            }
        }
    }

    #[test]
    fn rescale_dirac_and_two_heights() {
        let (_, l) = rescale(&AtomicMeasure::dirac(vec![3.0], 5.0).unwrap()).unwrap();
        assert_eq!(l.breakpoints(), &[0.0, 1.0]);
        assert_eq!(l.slices()[0], DiscreteMeasure::dirac(vec![3.0]));

        let mu = m1(&[(0.0, 1.0, 0.25), (1.0, 2.0, 0.75)]);
        let (p, l) = rescale(&mu).unwrap();
        assert_eq!(l.breakpoints(), &[0.0, 0.25, 1.0]);
        assert_eq!(p.heights(), &[1.0, 2.0]);
    }

    #[test]
    fn rescale_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mu = random_measure(&mut rng, 12, 2, 4);
            let (p, l) = rescale(&mu).unwrap();
            assert_same_atoms(&unrescale(&p, &l).unwrap(), &mu, 1e-12);
        }
    }

    #[test]
    fn distance_identity_and_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in [1, 2] {
            let mu = random_measure(&mut rng, 10, dim, 3);
            assert_eq!(lw_distance(&mu, &mu).unwrap().total_sq, 0.0);

            let up = AtomicMeasure::new(dim, mu.atoms().iter().map(|a| Atom::new(a.x.clone(), a.y + 0.7, a.w)).collect())
                .unwrap();
            let r = lw_distance(&mu, &up).unwrap();
            assert!((r.total_sq - 0.49).abs() < 1e-12 && r.horizontal_sq.abs() < 1e-12);

            let v: Vec<f64> = (0..dim).map(|k| 0.3 + k as f64).collect();
            let side = mu.map_horizontal(|x| x.iter().zip(&v).map(|(a, b)| a + b).collect()).unwrap();
            let expect: f64 = v.iter().map(|c| c * c).sum();
            let r = lw_distance(&mu, &side).unwrap();
            assert!((r.total_sq - expect).abs() < 1e-9, "{} vs {expect}", r.total_sq);
        }
    }

    #[test]
    fn decomposition_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let mu = random_measure(&mut rng, 8, 2, 3);
            let nu = random_measure(&mut rng, 7, 2, 4);
            let r = lw_distance(&mu, &nu).unwrap();
            let s = lw_distance(&nu, &mu).unwrap();
            assert!((r.total_sq - r.vertical_sq - r.horizontal_sq).abs() <= 1e-12);
            let h: f64 = r.per_interval.iter().map(|c| (c.hi - c.lo) * c.cost).sum();
            assert!((h - r.horizontal_sq).abs() <= 1e-12);
            assert!((r.total_sq - s.total_sq).abs() <= 1e-9);
        }
    }

    #[test]
    fn triangle_inequality_d1() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let a = random_measure(&mut rng, 6, 1, 3);
            let b = random_measure(&mut rng, 6, 1, 3);
            let c = random_measure(&mut rng, 6, 1, 3);
            let d = |p: &AtomicMeasure, q: &AtomicMeasure| lw_distance(p, q).unwrap().total_sq.sqrt();
            assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        }
    }

    #[test]
    fn extended_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu = random_measure(&mut rng, 5, 1, 2);
        assert_eq!(lw_distance_extended(&mu, &mu).unwrap(), 0.0);
        let twice = mu.scaled(2.0).unwrap();
        let t = mu.total_mass();
        assert!((lw_distance_extended(&mu, &twice).unwrap() - t * t).abs() < 1e-12);
    }

    #[test]
    fn barycenter_of_diracs_and_identity() {
        let a = AtomicMeasure::dirac(vec![0.0, 2.0], 1.0).unwrap();
        let b = AtomicMeasure::dirac(vec![4.0, 0.0], 3.0).unwrap();
        let half = Weights::uniform(2).unwrap();
        let bar = lw_barycenter(&[a.clone(), b.clone()], &half).unwrap();
        assert_eq!(bar, AtomicMeasure::dirac(vec![2.0, 1.0], 2.0).unwrap());
        // each term is a quarter of the squared separation
        let obj = lw_barycenter_objective(&bar, &[a, b], &half).unwrap();
        assert!((obj - 0.25 * (16.0 + 4.0 + 4.0)).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mu = random_measure(&mut rng, 9, 2, 3);
        let bar = lw_barycenter(&[mu.clone(), mu.clone(), mu.clone()], &Weights::uniform(3).unwrap()).unwrap();
        assert_same_atoms(&bar, &normalize(&mu).unwrap(), 1e-12);
        assert_eq!(lw_barycenter_objective(&mu, &[mu.clone()], &Weights::uniform(1).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn barycenter_quantile_affinity() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let ms: Vec<AtomicMeasure> = (0..3).map(|_| random_measure(&mut rng, 7, 1, 4)).collect();
        let lambda = Weights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let bar = lw_barycenter(&ms, &lambda).unwrap();
        assert!(bar.is_probability());
        let pb = vertical_marginal(&bar);
        let ps: Vec<VerticalProfile> = ms.iter().map(vertical_marginal).collect();
        let levels = common_levels(&ps.iter().collect::<Vec<_>>());
        for w in levels.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let expect: f64 = ps.iter().enumerate().map(|(a, p)| lambda[a] * p.quantile(mid)).sum();
            assert!((pb.quantile(mid) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn barycenter_beats_random_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let ms: Vec<AtomicMeasure> = (0..3).map(|_| random_measure(&mut rng, 5, 1, 3)).collect();
        let lambda = Weights::new(vec![0.2, 0.3, 0.5]).unwrap();
        let bar = lw_barycenter(&ms, &lambda).unwrap();
        let best = lw_barycenter_objective(&bar, &ms, &lambda).unwrap();
        for _ in 0..100 {
            let probe = random_measure(&mut rng, 6, 1, 4);
            assert!(best <= lw_barycenter_objective(&probe, &ms, &lambda).unwrap() + 1e-12);
        }
    }

    #[test]
    fn associativity_d1() {
        let mut rng = ChaCha8Rng::seed_from_u64(89);
        for _ in 0..20 {
            let ms: Vec<AtomicMeasure> = (0..3).map(|_| random_measure(&mut rng, 6, 1, 3)).collect();
            let lambda = Weights::new(vec![0.2, 0.3, 0.5]).unwrap();
            let direct = lw_barycenter(&ms, &lambda).unwrap();
            let inner = lw_barycenter(&ms[..2], &Weights::normalized(vec![0.2, 0.3]).unwrap()).unwrap();
            let nested =
                lw_barycenter(&[inner, ms[2].clone()], &Weights::new(vec![0.5, 0.5]).unwrap()).unwrap();
            assert_same_atoms(&direct, &nested, 1e-9);
        }
    }

    #[test]
    fn rotation_copy_is_found() {
        let mu = m2(&[(1.0, 0.0, 0.0, 1.0), (0.0, 2.0, 1.0, 2.0), (-1.0, 0.5, 2.0, 1.0)]);
        let nu = rotate(&mu, PI / 3.0).unwrap();
        let r = symmetrized_distance(&mu, &nu, &RotationOptions::default()).unwrap();
        assert!(r.distance_sq <= 1e-9, "{}", r.distance_sq);
        assert!((r.angle - PI / 3.0).abs() < 1e-5);
        assert!(r.trace.iter().all(|t| r.distance_sq <= t.1));
    }

    #[test]
    fn rotation_invariant_measure() {
        let mu = m2(&[(1.0, 0.0, 1.0, 1.0), (0.0, 1.0, 1.0, 1.0), (-1.0, 0.0, 1.0, 1.0), (0.0, -1.0, 1.0, 1.0)]);
        let nu = m2(&[(0.3, 0.2, 1.0, 1.0), (2.0, 0.0, 2.0, 1.0)]);
        let plain = lw_distance(&mu, &nu).unwrap().total_sq;
        let sym = symmetrized_distance(&mu, &nu, &RotationOptions::default()).unwrap();
        assert!(sym.distance_sq <= plain + 1e-12);
        // the 4-fold symmetric slice pairs with a centred Dirac, unchanged by rotation
        let c = m2(&[(0.0, 0.0, 1.0, 1.0)]);
        let plain = lw_distance(&mu, &c).unwrap().total_sq;
        let sym = symmetrized_distance(&mu, &c, &RotationOptions::default()).unwrap();
        assert!((sym.distance_sq - plain).abs() < 1e-12);
    }

    #[test]
    fn rotation_search_matches_dense_grid() {
        let mu = m2(&[(1.0, 0.2, 0.0, 1.0), (-0.4, 1.5, 0.5, 1.0), (0.3, -0.8, 1.0, 1.0)]);
        let nu = m2(&[(0.2, 1.1, 0.0, 1.0), (1.3, 0.1, 0.5, 1.0), (-0.9, 0.4, 1.5, 1.0)]);
        let r = symmetrized_distance(&mu, &nu, &RotationOptions::default()).unwrap();
        let dense = (0..10_000)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / 10_000.0;
                lw_distance(&rotate(&mu, t).unwrap(), &nu).unwrap().total_sq
            })
            .fold(f64::INFINITY, f64::min);
        assert!(r.distance_sq <= dense + 1e-6);
    }

    #[test]
    fn symmetrized_rejects_high_dim() {
        let a = AtomicMeasure::dirac(vec![0.0; 3], 0.0).unwrap();
        let e = symmetrized_distance(&a, &a, &RotationOptions::default()).unwrap_err();
        assert_eq!(e.code(), "UnsupportedDim");
    }

    fn segment(dir: [f64; 2], n: usize) -> AtomicMeasure {
        let atoms = (0..n)
            .map(|k| {
                let t = (k as f64 + 0.5) / n as f64;
                Atom::new(vec![dir[0] * t, dir[1] * t], t, 1.0 / n as f64)
            })
            .collect();
        AtomicMeasure::new(2, atoms).unwrap()
    }

    #[test]
    fn symmetrized_barycenter_of_rotated_segments() {
        let s3 = 3f64.sqrt();
        let ms = vec![
            segment([1.0, 1.0], 6),
            segment([(-1.0 + s3) / 2.0, (-1.0 - s3) / 2.0], 6),
            segment([(-1.0 - s3) / 2.0, (-1.0 + s3) / 2.0], 6),
        ];
        let lambda = Weights::uniform(3).unwrap();
        let plain = lw_barycenter(&ms, &lambda).unwrap();
        let plain_obj = lw_barycenter_objective(&plain, &ms, &lambda).unwrap();
        let opts = SymBaryOptions { starts: 2, ..Default::default() };
        let sym = symmetrized_barycenter(&ms, &lambda, &opts).unwrap();
        assert!(sym.objective < plain_obj - 0.1, "{} vs {plain_obj}", sym.objective);
        assert!(sym.objective < 1e-9, "{}", sym.objective);
    }

    #[test]
    fn coupling_diagonal_and_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(144);
        let mu = random_measure(&mut rng, 8, 1, 3);
        let c = layerwise_coupling(&mu, &mu).unwrap();
        assert_eq!(c.cost, 0.0);
        assert!(c.fragments.iter().all(|f| f.source_index == f.target_index));

        for _ in 0..20 {
            let mu = random_measure(&mut rng, 8, 1, 3);
            let nu = random_measure(&mut rng, 5, 1, 4);
            let c = layerwise_coupling(&mu, &nu).unwrap();
            let (tm, tn) = (mu.total_mass(), nu.total_mass());
            let mut left = vec![0.0; mu.len()];
            let mut right = vec![0.0; nu.len()];
            for f in &c.fragments {
                left[f.source_index] += f.mass;
                right[f.target_index] += f.mass;
            }
            for (m, a) in left.iter().zip(mu.atoms()) {
                assert!((m - a.w / tm).abs() < 1e-12);
            }
            for (m, a) in right.iter().zip(nu.atoms()) {
                assert!((m - a.w / tn).abs() < 1e-12);
            }
            assert!((c.cost - lw_distance(&mu, &nu).unwrap().total_sq).abs() < 1e-9);
        }
    }

    #[test]
    fn coupling_on_product_grids() {
        // product of {0,1} (weights 1/2) in x and heights {0,1} (weights 1/4, 3/4)
        let mu = m1(&[(0.0, 0.0, 0.125), (1.0, 0.0, 0.125), (0.0, 1.0, 0.375), (1.0, 1.0, 0.375)]);
        let nu = m1(&[(2.0, 1.0, 0.15), (5.0, 1.0, 0.35), (2.0, 3.0, 0.15), (5.0, 3.0, 0.35)]);
        let c = layerwise_coupling(&mu, &nu).unwrap();
        // two-stage quantile construction written out directly
        let map_y = |l: f64| if l <= 0.5 { 1.0 } else { 3.0 };
        let map_x = |t: f64| if t <= 0.3 { 2.0 } else { 5.0 };
        let mut expect: Vec<((f64, f64), (f64, f64), f64)> = Vec::new();
        let cuts = [0.0, 0.25, 0.5, 1.0];
        for w in cuts.windows(2) {
            let y_src = if w[1] <= 0.25 { 0.0 } else { 1.0 };
            let y_dst = map_y(w[1]);
            for v in [0.0, 0.3, 0.5, 1.0].windows(2) {
                let x_src = if v[1] <= 0.5 { 0.0 } else { 1.0 };
                expect.push(((x_src, y_src), (map_x(v[1]), y_dst), (w[1] - w[0]) * (v[1] - v[0])));
            }
        }
        for f in &c.fragments {
            let want: f64 = expect
                .iter()
                .filter(|e| e.0 == (f.source.0[0], f.source.1) && e.1 == (f.target.0[0], f.target.1))
                .map(|e| e.2)
                .sum();
            assert!((f.mass - want).abs() < 1e-12, "{f:?}");
        }
        let total: f64 = c.fragments.iter().map(|f| f.mass).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coupling_rejects_d2() {
        let a = AtomicMeasure::dirac(vec![0.0, 0.0], 0.0).unwrap();
        assert_eq!(layerwise_coupling(&a, &a).unwrap_err().code(), "UnsupportedDim");
    }
}
