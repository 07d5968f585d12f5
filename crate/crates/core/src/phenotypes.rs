//! Root phenotypes as functionals on measures, their layerwise decomposition
//! and a numerical harness for convexity along layerwise barycenters.
//!
//! Entropy here is `S(mu) = int f log f` (with `0 log 0 = 0`), the convex
//! sign convention. It needs a density, so it is only defined for gridded
//! measures.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::layerwise::{lw_barycenter_with, rescale};
use crate::discrete_ot::LpConfig;
use crate::measures::{vertical_marginal, AtomicMeasure, GriddedMeasure};
use crate::{Error, Result, Weights};

/// Tolerance on the total mass of a gridded density.
pub const GRID_MASS_TOL: f64 = 1e-9;

fn xlogx(v: f64) -> f64 {
    if v > 0.0 {
        v * v.ln()
    } else {
        0.0
    }
}

fn require_normalized(g: &GriddedMeasure) -> Result<()> {
    let total = g.total_mass();
    if (total - 1.0).abs() > GRID_MASS_TOL {
        return Err(Error::NotProbability { total });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyReport {
    pub total: f64,
    /// `int_0^1 S(mu~_l) dl`.
    pub layer_integral: f64,
    /// `S(mu^V)`.
    pub vertical: f64,
}

/// Entropy by direct cell summation, with its split into the level integral
/// of slice entropies and the entropy of the vertical marginal.
pub fn shannon_entropy(g: &GriddedMeasure) -> Result<EntropyReport> {
    require_normalized(g)?;
    let mut total = 0.0;
    let mut layer_integral = 0.0;
    let mut vertical = 0.0;
    let masses = g.layer_masses();
    for k in 0..g.n_layers() {
        let h = g.layer_height(k);
        let fv = masses[k] / h;
        let mut slice = 0.0;
        for (c, &f) in g.layer(k).iter().enumerate() {
            let vol = g.horizontal_volume(c);
            total += xlogx(f) * vol * h;
            if fv > 0.0 {
                slice += xlogx(f / fv) * vol;
            }
        }
        layer_integral += masses[k] * slice;
        vertical += xlogx(fv) * h;
    }
    Ok(EntropyReport { total, layer_integral, vertical })
}

/// Vertical density per layer, `f^V_k`.
fn vertical_density(g: &GriddedMeasure) -> Vec<f64> {
    g.layer_masses().iter().enumerate().map(|(k, m)| m / g.layer_height(k)).collect()
}

/// `sum_i w_i y_i` of the normalized measure.
pub fn vertical_mean(mu: &AtomicMeasure) -> f64 {
    let t = mu.total_mass();
    mu.atoms().iter().map(|a| a.w * a.y).sum::<f64>() / t
}

pub fn vertical_variance(mu: &AtomicMeasure) -> f64 {
    let t = mu.total_mass();
    let m = vertical_mean(mu);
    mu.atoms().iter().map(|a| a.w * (a.y - m) * (a.y - m)).sum::<f64>() / t
}

fn check_level(l: f64) -> Result<()> {
    if l > 0.0 && l <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidQuantile(l))
    }
}

/// Left-continuous vertical quantile; `l = 1` is the rooting depth.
pub fn vertical_quantile(mu: &AtomicMeasure, l: f64) -> Result<f64> {
    check_level(l)?;
    Ok(vertical_marginal(mu).quantile(l))
}

/// `int (f^V)^r dy` for `r >= 1`.
pub fn vertical_internal_energy(g: &GriddedMeasure, r: f64) -> Result<f64> {
    if !(r >= 1.0) || !r.is_finite() {
        return Err(Error::InvalidExponent(r));
    }
    require_normalized(g)?;
    Ok(vertical_density(g).iter().enumerate().map(|(k, f)| f.powf(r) * g.layer_height(k)).sum())
}

fn grid_vertical_mean(g: &GriddedMeasure) -> f64 {
    let e = g.vertical_edges();
    g.layer_masses().iter().enumerate().map(|(k, m)| m * 0.5 * (e[k] + e[k + 1])).sum::<f64>() / g.total_mass()
}

fn grid_vertical_variance(g: &GriddedMeasure) -> f64 {
    let e = g.vertical_edges();
    let mean = grid_vertical_mean(g);
    let second: f64 = g
        .layer_masses()
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let c = 0.5 * (e[k] + e[k + 1]);
            let h = e[k + 1] - e[k];
            m * (c * c + h * h / 12.0)
        })
        .sum::<f64>()
        / g.total_mass();
    (second - mean * mean).max(0.0)
}

/// Quantile of the piecewise-linear vertical CDF of a grid.
fn grid_vertical_quantile(g: &GriddedMeasure, l: f64) -> Result<f64> {
    check_level(l)?;
    let e = g.vertical_edges();
    let masses = g.layer_masses();
    let total: f64 = masses.iter().sum();
    let mut acc = 0.0;
    for (k, m) in masses.iter().enumerate() {
        let next = acc + m / total;
        if *m > 0.0 && next >= l {
            return Ok(e[k] + ((l - acc) / (m / total)).clamp(0.0, 1.0) * (e[k + 1] - e[k]));
        }
        acc = next;
    }
    Ok(e[e.len() - 1])
}

fn discrete_variance(points: &[Vec<f64>], weights: &[f64]) -> f64 {
    let dim = points[0].len();
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; dim];
    for (p, w) in points.iter().zip(weights) {
        for (m, c) in mean.iter_mut().zip(p) {
            *m += w * c / total;
        }
    }
    points
        .iter()
        .zip(weights)
        .map(|(p, w)| w * p.iter().zip(&mean).map(|(c, m)| (c - m) * (c - m)).sum::<f64>())
        .sum::<f64>()
        / total
}

/// `int_0^1 Var(mu~_l) dl`, the level integral of slice variances.
pub fn layer_variance(mu: &AtomicMeasure) -> Result<f64> {
    let (_, layered) = rescale(mu)?;
    let bp = layered.breakpoints();
    Ok(layered
        .slices()
        .iter()
        .enumerate()
        .map(|(j, s)| (bp[j + 1] - bp[j]) * discrete_variance(s.points(), s.weights()))
        .sum())
}

fn grid_layer_variance(g: &GriddedMeasure) -> f64 {
    let masses = g.layer_masses();
    let total: f64 = masses.iter().sum();
    let mut out = 0.0;
    for k in 0..g.n_layers() {
        if masses[k] <= 0.0 {
            continue;
        }
        let h = g.layer_height(k);
        let mut var = 0.0;
        let mut mean = vec![0.0; g.dim()];
        let probs: Vec<f64> =
            g.layer(k).iter().enumerate().map(|(c, f)| f * g.horizontal_volume(c) * h / masses[k]).collect();
        for (c, p) in probs.iter().enumerate() {
            for (m, x) in mean.iter_mut().zip(g.horizontal_center(c)) {
                *m += p * x;
            }
        }
        for (c, p) in probs.iter().enumerate() {
            let idx = g.horizontal_index(c);
            for (d, x) in g.horizontal_center(c).iter().enumerate() {
                let w = g.axes()[d][idx[d] + 1] - g.axes()[d][idx[d]];
                var += p * ((x - mean[d]) * (x - mean[d]) + w * w / 12.0);
            }
        }
        out += masses[k] / total * var;
    }
    out
}

/// Registered phenotypes, parsed from `entropy`, `vmean`, `vvar`,
/// `venergy:r`, `vq:l` and `lvar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phenotype {
    Entropy,
    VerticalMean,
    VerticalVariance,
    InternalEnergy(f64),
    Quantile(f64),
    LayerVariance,
}

impl FromStr for Phenotype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::UnknownPhenotype(format!("{s} (expected a numeric parameter)")))
        };
        match (name, arg) {
            ("entropy", None) => Ok(Phenotype::Entropy),
            ("vmean", None) => Ok(Phenotype::VerticalMean),
            ("vvar", None) => Ok(Phenotype::VerticalVariance),
            ("lvar", None) => Ok(Phenotype::LayerVariance),
            ("venergy", a) => {
                let r = num(a)?;
                if !(r >= 1.0) {
                    return Err(Error::InvalidExponent(r));
                }
                Ok(Phenotype::InternalEnergy(r))
            }
            ("vq", a) => {
                let l = num(a)?;
                check_level(l)?;
                Ok(Phenotype::Quantile(l))
            }
            _ => Err(Error::UnknownPhenotype(s.to_string())),
        }
    }
}

impl fmt::Display for Phenotype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phenotype::Entropy => write!(f, "entropy"),
            Phenotype::VerticalMean => write!(f, "vmean"),
            Phenotype::VerticalVariance => write!(f, "vvar"),
            Phenotype::InternalEnergy(r) => write!(f, "venergy:{r}"),
            Phenotype::Quantile(l) => write!(f, "vq:{l}"),
            Phenotype::LayerVariance => write!(f, "lvar"),
        }
    }
}

impl Phenotype {
    pub fn eval_atomic(&self, mu: &AtomicMeasure) -> Result<f64> {
        match *self {
            Phenotype::VerticalMean => Ok(vertical_mean(mu)),
            Phenotype::VerticalVariance => Ok(vertical_variance(mu)),
            Phenotype::Quantile(l) => vertical_quantile(mu, l),
            Phenotype::LayerVariance => layer_variance(mu),
            Phenotype::Entropy | Phenotype::InternalEnergy(_) => Err(Error::NeedsDensity(self.to_string())),
        }
    }

    pub fn eval_gridded(&self, g: &GriddedMeasure) -> Result<f64> {
        match *self {
            Phenotype::Entropy => Ok(shannon_entropy(g)?.total),
            Phenotype::InternalEnergy(r) => vertical_internal_energy(g, r),
            Phenotype::VerticalMean => Ok(grid_vertical_mean(g)),
            Phenotype::VerticalVariance => Ok(grid_vertical_variance(g)),
            Phenotype::Quantile(l) => grid_vertical_quantile(g, l),
            Phenotype::LayerVariance => Ok(grid_layer_variance(g)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexityReport {
    pub functional: String,
    pub value_at_barycenter: f64,
    /// `sum_a lambda_a F(mu_a)`.
    pub mean_of_values: f64,
    /// `mean_of_values - value_at_barycenter`; nonnegative when convex.
    pub gap: f64,
}

fn report(p: Phenotype, at_bar: f64, values: &[f64], lambda: &Weights) -> ConvexityReport {
    let mean: f64 = values.iter().zip(lambda.as_slice()).map(|(v, l)| v * l).sum();
    ConvexityReport { functional: p.to_string(), value_at_barycenter: at_bar, mean_of_values: mean, gap: mean - at_bar }
}

/// Compares the phenotype of the layerwise barycenter with the weighted mean
/// of the samples' phenotypes.
pub fn convexity_check(p: Phenotype, measures: &[AtomicMeasure], lambda: &Weights) -> Result<ConvexityReport> {
    let bar = lw_barycenter_with(measures, lambda, &LpConfig::default())?;
    let values = measures.iter().map(|m| p.eval_atomic(m)).collect::<Result<Vec<_>>>()?;
    Ok(report(p, p.eval_atomic(&bar)?, &values, lambda))
}

/// As [`convexity_check`], for gridded `d = 1` samples and the exact gridded
/// barycenter of [`gridded_lw_barycenter`].
pub fn convexity_check_gridded(p: Phenotype, grids: &[GriddedMeasure], lambda: &Weights) -> Result<ConvexityReport> {
    let normalized = grids.iter().map(GriddedMeasure::normalized).collect::<Result<Vec<_>>>()?;
    let bar = gridded_lw_barycenter(&normalized, lambda)?;
    let values = normalized.iter().map(|g| p.eval_gridded(g)).collect::<Result<Vec<_>>>()?;
    Ok(report(p, p.eval_gridded(&bar)?, &values, lambda))
}

/// Piecewise-uniform probability on the line: cell edges and cumulative
/// mass at each edge.
struct Pwl {
    edges: Vec<f64>,
    cum: Vec<f64>,
}

impl Pwl {
    fn new(edges: &[f64], masses: &[f64]) -> Self {
        let total: f64 = masses.iter().sum();
        let mut cum = Vec::with_capacity(edges.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for m in masses {
            acc += m / total;
            cum.push(acc);
        }
        *cum.last_mut().unwrap() = 1.0;
        Pwl { edges: edges.to_vec(), cum }
    }

    /// Cell holding the open level interval around `t`.
    fn cell_at(&self, t: f64) -> usize {
        self.cum[1..].partition_point(|c| *c < t).min(self.edges.len() - 2)
    }

    /// Quantile at `t` inside cell `k`, exact at the cell ends.
    fn quantile_in(&self, k: usize, t: f64) -> f64 {
        let (c0, c1) = (self.cum[k], self.cum[k + 1]);
        if t <= c0 {
            return self.edges[k];
        }
        if t >= c1 {
            return self.edges[k + 1];
        }
        self.edges[k] + (t - c0) / (c1 - c0) * (self.edges[k + 1] - self.edges[k])
    }
}

fn union_levels(lists: &[&[f64]]) -> Vec<f64> {
    let mut all: Vec<f64> = lists.iter().flat_map(|l| l.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

/// Exact layerwise barycenter of gridded `d = 1` probability densities.
///
/// Vertical and per-slice quantiles are averaged; both stay piecewise linear,
/// so the barycenter is piecewise constant on the grid spanned by the union
/// of all resulting breakpoints. It is returned on that grid, without loss.
pub fn gridded_lw_barycenter(grids: &[GriddedMeasure], lambda: &Weights) -> Result<GriddedMeasure> {
    if grids.is_empty() {
        return Err(Error::EmptyInput);
    }
    lambda.check_len(grids.len())?;
    if let Some(g) = grids.iter().find(|g| g.dim() != 1) {
        return Err(Error::UnsupportedDim { dim: g.dim(), reason: "gridded barycenters are exact for d = 1 only" });
    }
    let vert: Vec<Pwl> = grids.iter().map(|g| Pwl::new(g.vertical_edges(), &g.layer_masses())).collect();
    let levels = union_levels(&vert.iter().map(|v| v.cum.as_slice()).collect::<Vec<_>>());

    // per level interval: (y_lo, y_hi, mass, horizontal pieces (x_lo, x_hi, mass))
    let mut blocks: Vec<(f64, f64, f64, Vec<(f64, f64, f64)>)> = Vec::new();
    for w in levels.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let cells: Vec<usize> = vert.iter().map(|v| v.cell_at(mid)).collect();
        let vq = |l: f64| -> f64 { vert.iter().enumerate().map(|(a, v)| lambda[a] * v.quantile_in(cells[a], l)).sum() };
        let slices: Vec<Pwl> = grids
            .iter()
            .zip(&vert)
            .zip(&cells)
            .map(|((g, _), &k)| {
                let masses: Vec<f64> =
                    g.layer(k).iter().enumerate().map(|(c, f)| f * g.horizontal_volume(c)).collect();
                Pwl::new(&g.axes()[0], &masses)
            })
            .collect();
        let ts = union_levels(&slices.iter().map(|s| s.cum.as_slice()).collect::<Vec<_>>());
        let pieces = ts
            .windows(2)
            .map(|v| {
                let tm = 0.5 * (v[0] + v[1]);
                let hq = |t: f64| -> f64 {
                    slices.iter().enumerate().map(|(a, s)| lambda[a] * s.quantile_in(s.cell_at(tm), t)).sum()
                };
                (hq(v[0]), hq(v[1]), v[1] - v[0])
            })
            .collect();
        blocks.push((vq(w[0]), vq(w[1]), w[1] - w[0], pieces));
    }

    let mut xs: Vec<f64> = blocks.iter().flat_map(|b| b.3.iter().flat_map(|p| [p.0, p.1])).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut ys: Vec<f64> = blocks.iter().flat_map(|b| [b.0, b.1]).collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let nx = xs.len() - 1;
    let mut density = vec![0.0; (ys.len() - 1) * nx];
    for (y0, y1, mass, pieces) in &blocks {
        let k = ys.partition_point(|y| y < y0);
        let height = y1 - y0;
        for (x0, x1, pm) in pieces {
            if x1 <= x0 {
                continue;
            }
            let f = mass * pm / ((x1 - x0) * height);
            let c0 = xs.partition_point(|x| x < x0);
            let c1 = xs.partition_point(|x| x < x1);
            for c in c0..c1 {
                density[k * nx + c] = f;
            }
        }
    }
    GriddedMeasure::new(vec![xs], ys, density)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Atom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn atoms1(pairs: &[(f64, f64)]) -> AtomicMeasure {
        AtomicMeasure::new(1, pairs.iter().map(|&(y, w)| Atom::new(vec![0.0], y, w)).collect()).unwrap()
    }

    fn random_grid(rng: &mut ChaCha8Rng, nx: usize, ny: usize) -> GriddedMeasure {
        let mut edges = |n: usize, start: f64| {
            let mut e = vec![start];
            for _ in 0..n {
                let last = *e.last().unwrap();
                e.push(last + rng.gen_range(0.2..1.0));
            }
            e
        };
        let xs = edges(nx, -1.0);
        let ys = edges(ny, 0.0);
        let density: Vec<f64> =
            (0..nx * ny).map(|_| if rng.gen_bool(0.15) { 0.0 } else { rng.gen_range(0.0..2.0) }).collect();
        GriddedMeasure::new(vec![xs], ys, density).unwrap().normalized().unwrap()
    }

    #[test]
    fn entropy_of_uniform_and_product() {
        let g = GriddedMeasure::new(vec![vec![0.0, 0.5, 1.0]], vec![0.0, 0.25, 1.0], vec![1.0; 4]).unwrap();
        let e = shannon_entropy(&g).unwrap();
        assert!(e.total.abs() < 1e-15 && e.layer_integral.abs() < 1e-15 && e.vertical.abs() < 1e-15);

        // f1 = (0.5, 1.5) on unit cells, f2 = (1.6, 0.4) on half-unit cells
        let f1 = [0.5, 1.5];
        let f2 = [1.6, 0.4];
        let density: Vec<f64> = f2.iter().flat_map(|b| f1.iter().map(move |a| a * b)).collect();
        let g = GriddedMeasure::new(vec![vec![0.0, 0.5, 1.0]], vec![0.0, 0.5, 1.0], density).unwrap();
        let e = shannon_entropy(&g).unwrap();
        let s1: f64 = f1.iter().map(|v| v * v.ln()).sum::<f64>() * 0.5;
        let s2: f64 = f2.iter().map(|v| v * v.ln() * 0.5).sum();
        assert!((e.layer_integral - s1).abs() < 1e-12);
        assert!((e.vertical - s2).abs() < 1e-12);
    }

    #[test]
    fn entropy_decomposition_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let g = random_grid(&mut rng, 8, 8);
            let e = shannon_entropy(&g).unwrap();
            assert!((e.total - e.layer_integral - e.vertical).abs() < 1e-9);
        }
        let g = GriddedMeasure::new(vec![vec![0.0, 1.0]], vec![0.0, 1.0], vec![2.0]).unwrap();
        assert_eq!(shannon_entropy(&g).unwrap_err().code(), "NotProbability");
    }

    #[test]
    fn vertical_moments_and_quantiles() {
        assert_eq!(vertical_mean(&atoms1(&[(2.0, 1.0)])), 2.0);
        assert_eq!(vertical_mean(&atoms1(&[(0.0, 0.5), (4.0, 0.5)])), 2.0);
        assert_eq!(vertical_variance(&atoms1(&[(3.0, 1.0)])), 0.0);
        assert_eq!(vertical_variance(&atoms1(&[(0.0, 0.5), (2.0, 0.5)])), 1.0);
        let two = atoms1(&[(0.5, 1.0), (1.5, 1.0)]);
        assert_eq!(vertical_quantile(&two, 0.5).unwrap(), 0.5);
        assert_eq!(vertical_quantile(&two, 1.0).unwrap(), 1.5);
        let ladder = atoms1(&(1..=100).map(|k| (k as f64 / 100.0, 1.0)).collect::<Vec<_>>());
        assert_eq!(vertical_quantile(&ladder, 0.87).unwrap(), 0.87);
        assert_eq!(vertical_quantile(&two, 0.0).unwrap_err().code(), "InvalidQuantile");
    }

    #[test]
    fn internal_energy() {
        let g = GriddedMeasure::new(vec![vec![0.0, 1.0]], vec![0.0, 1.0], vec![1.0]).unwrap();
        for r in [1.0, 1.5, 3.0] {
            assert!((vertical_internal_energy(&g, r).unwrap() - 1.0).abs() < 1e-15);
        }
        let g = GriddedMeasure::new(vec![vec![0.0, 1.0]], vec![0.0, 0.5], vec![2.0]).unwrap();
        assert!((vertical_internal_energy(&g, 2.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(vertical_internal_energy(&g, 0.5).unwrap_err().code(), "InvalidExponent");
    }

    #[test]
    fn phenotype_strings() {
        assert_eq!("venergy:1.5".parse::<Phenotype>().unwrap(), Phenotype::InternalEnergy(1.5));
        assert_eq!("vq:0.87".parse::<Phenotype>().unwrap(), Phenotype::Quantile(0.87));
        assert_eq!("vq:1.5".parse::<Phenotype>().unwrap_err().code(), "InvalidQuantile");
        assert_eq!("height".parse::<Phenotype>().unwrap_err().code(), "UnknownPhenotype");
        let e = Phenotype::Entropy.eval_atomic(&atoms1(&[(1.0, 1.0)])).unwrap_err();
        assert_eq!(e.code(), "NeedsDensity");
    }

    #[test]
    fn gridded_barycenter_identity_and_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_grid(&mut rng, 5, 4);
        let lambda = Weights::uniform(2).unwrap();
        let bar = gridded_lw_barycenter(&[g.clone(), g.clone()], &lambda).unwrap();
        assert!((bar.total_mass() - 1.0).abs() < 1e-12);
        let (a, b) = (shannon_entropy(&g).unwrap(), shannon_entropy(&bar).unwrap());
        assert!((a.total - b.total).abs() < 1e-9);
    }

    #[test]
    fn gridded_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let m = rng.gen_range(2..=3);
            let grids: Vec<GriddedMeasure> = (0..m).map(|_| random_grid(&mut rng, 4, 5)).collect();
            let lambda = Weights::normalized((0..m).map(|_| rng.gen_range(0.1..1.0)).collect()).unwrap();
            for p in [
                Phenotype::Entropy,
                Phenotype::VerticalVariance,
                Phenotype::InternalEnergy(1.0),
                Phenotype::InternalEnergy(1.5),
                Phenotype::InternalEnergy(2.0),
                Phenotype::LayerVariance,
            ] {
                let r = convexity_check_gridded(p, &grids, &lambda).unwrap();
                assert!(r.gap >= -1e-9, "{r:?}");
            }
            let r = convexity_check_gridded(Phenotype::VerticalMean, &grids, &lambda).unwrap();
            assert!(r.gap.abs() < 1e-9, "{r:?}");
        }
    }

    #[test]
    fn atomic_convexity_and_affinity() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..20 {
            let ms: Vec<AtomicMeasure> = (0..3)
                .map(|_| {
                    let atoms = (0..6)
                        .map(|_| Atom::new(vec![rng.gen_range(-1.0..1.0)], rng.gen_range(0..4) as f64, rng.gen_range(0.1..1.0)))
                        .collect();
                    AtomicMeasure::new(1, atoms).unwrap()
                })
                .collect();
            let lambda = Weights::new(vec![0.2, 0.3, 0.5]).unwrap();
            assert!(convexity_check(Phenotype::VerticalMean, &ms, &lambda).unwrap().gap.abs() < 1e-9);
            assert!(convexity_check(Phenotype::Quantile(0.87), &ms, &lambda).unwrap().gap.abs() < 1e-9);
            assert!(convexity_check(Phenotype::VerticalVariance, &ms, &lambda).unwrap().gap >= -1e-9);
            assert!(convexity_check(Phenotype::LayerVariance, &ms, &lambda).unwrap().gap >= -1e-9);
            let same = vec![ms[0].clone(), ms[0].clone()];
            let r = convexity_check(Phenotype::VerticalVariance, &same, &Weights::uniform(2).unwrap()).unwrap();
            assert!(r.gap.abs() < 1e-12);
        }
    }
}
