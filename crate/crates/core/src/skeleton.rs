//! Skeletal roots: finite unions of monotone-in-depth polyline limbs carrying
//! piecewise-constant mass per unit height.
//!
//! Limbs are piecewise linear and densities piecewise constant, so crossing
//! tests, left limits of densities and root lengths are all exact. The
//! layerwise barycenter of a family is computed slab by slab in the rescaled
//! level coordinate, where every slice is a finite set of limb positions.

use std::collections::BTreeMap;
use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discrete_ot::{self, DiscreteMeasure, LpCertificate, LpConfig};
use crate::measures::{Atom, AtomicMeasure};
use crate::{Error, Result, Weights};

/// Distance under which two limb positions count as coincident.
pub const COINCIDENCE_TOL: f64 = 1e-9;

/// Total mass tolerance of a skeletal root measure.
pub const MASS_TOL: f64 = 1e-10;

/// Default cap on the number of ghost index tuples.
pub const DEFAULT_GHOST_CAP: usize = 100_000;

/// Heights closer than this are merged when building breakpoint sets.
const HEIGHT_SNAP: f64 = 1e-12;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| p - q).collect()
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect()
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(v.len());
    for y in v {
        match out.last() {
            Some(&p) if y - p <= HEIGHT_SNAP => {}
            _ => out.push(y),
        }
    }
    out
}

/// Graph of a piecewise-linear map `[y_lo, y_hi] -> R^d`, given by control
/// points with strictly increasing heights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Limb {
    points: Vec<(f64, Vec<f64>)>,
}

impl Limb {
    pub fn new(points: Vec<(f64, Vec<f64>)>) -> std::result::Result<Self, String> {
        if points.len() < 2 {
            return Err("a polyline needs at least two control points".into());
        }
        let dim = points[0].1.len();
        if dim == 0 {
            return Err("control points need at least one horizontal coordinate".into());
        }
        for (y, x) in &points {
            if x.len() != dim {
                return Err("control points differ in dimension".into());
            }
            if !(y.is_finite() && x.iter().all(|c| c.is_finite())) {
                return Err("non-finite control point".into());
            }
        }
        if points[0].0 < 0.0 {
            return Err("limb starts above the surface (negative height)".into());
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err("control heights must increase strictly".into());
        }
        Ok(Limb { points })
    }

    pub fn points(&self) -> &[(f64, Vec<f64>)] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.points[0].1.len()
    }

    pub fn y_lo(&self) -> f64 {
        self.points[0].0
    }

    pub fn y_hi(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }

    /// Position at height `y`, clamped to the domain.
    pub fn eval(&self, y: f64) -> Vec<f64> {
        let p = &self.points;
        if y <= p[0].0 {
            return p[0].1.clone();
        }
        let k = p.partition_point(|q| q.0 < y);
        if k >= p.len() {
            return p[p.len() - 1].1.clone();
        }
        let (y0, x0) = &p[k - 1];
        let (y1, x1) = &p[k];
        lerp(x0, x1, (y - y0) / (y1 - y0))
    }

    /// Largest segment slope `|dx| / |dy|`.
    pub fn lipschitz(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| norm(&diff(&w[1].1, &w[0].1)) / (w[1].0 - w[0].0))
            .fold(0.0, f64::max)
    }

    /// Arclength of the graph over `[a, b]` intersected with the domain.
    pub fn arclength(&self, a: f64, b: f64) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                let lo = w[0].0.max(a);
                let hi = w[1].0.min(b);
                if hi <= lo {
                    return 0.0;
                }
                let s = norm(&diff(&w[1].1, &w[0].1)) / (w[1].0 - w[0].0);
                (hi - lo) * (1.0 + s * s).sqrt()
            })
            .sum()
    }

    fn heights(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }
}

/// Constant mass per unit height `m` on `[y_lo, y_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPiece {
    pub y_lo: f64,
    pub y_hi: f64,
    pub m: f64,
}

/// Density at an interior point of a piece (zero off the pieces).
fn density_at(pieces: &[DensityPiece], y: f64) -> f64 {
    pieces.iter().find(|p| p.y_lo <= y && y <= p.y_hi).map_or(0.0, |p| p.m)
}

/// `lim_{z -> y-} m(z)`; exact because densities are piecewise constant.
fn left_limit(pieces: &[DensityPiece], y: f64) -> f64 {
    pieces.iter().find(|p| p.y_lo < y && y <= p.y_hi + HEIGHT_SNAP).map_or(0.0, |p| p.m)
}

/// Limbs with their attachment structure and the depth `y_bar`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkeletalRoot {
    pub depth: f64,
    pub limbs: Vec<Limb>,
    /// Parent limb of each limb; `None` for the stem.
    pub parents: Vec<Option<usize>>,
}

impl SkeletalRoot {
    pub fn dim(&self) -> usize {
        self.limbs[0].dim()
    }
}

/// Skeletal root with per-limb densities; total mass one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkeletalRootMeasure {
    pub root: SkeletalRoot,
    pub densities: Vec<Vec<DensityPiece>>,
    /// Declared bounds `0 < L <= f^V <= U` on the vertical density.
    pub bounds: Option<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct LimbDoc {
    polyline: Vec<Vec<f64>>,
    #[serde(default)]
    density: Vec<DensityPiece>,
    #[serde(default)]
    parent: Option<usize>,
    #[serde(default)]
    attach_y: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SkeletonDoc {
    depth: f64,
    limbs: Vec<LimbDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<[f64; 2]>,
}

impl SkeletalRootMeasure {
    /// Checks structure (polylines, density pieces, parent indices, total
    /// mass). Skeletal conditions are left to [`validate`].
    pub fn new(
        depth: f64,
        limbs: Vec<Limb>,
        parents: Vec<Option<usize>>,
        mut densities: Vec<Vec<DensityPiece>>,
        bounds: Option<(f64, f64)>,
    ) -> Result<Self> {
        if limbs.is_empty() {
            return Err(Error::EmptyInput);
        }
        if parents.len() != limbs.len() || densities.len() != limbs.len() {
            return Err(Error::InvalidMeasure("need one parent and one density list per limb".into()));
        }
        let dim = limbs[0].dim();
        let malformed = |limb: usize, reason: &str| Error::MalformedLimb { limb, reason: reason.to_string() };
        for (i, limb) in limbs.iter().enumerate() {
            if limb.dim() != dim {
                return Err(Error::DimMismatch { expected: dim, found: limb.dim() });
            }
            if limb.y_hi() > depth + HEIGHT_SNAP {
                return Err(malformed(i, "limb extends below the declared depth"));
            }
            if let Some(p) = parents[i] {
                if p >= limbs.len() {
                    return Err(malformed(i, "parent index out of range"));
                }
            }
            let pieces = &mut densities[i];
            pieces.sort_by(|a, b| a.y_lo.total_cmp(&b.y_lo));
            for (k, p) in pieces.iter().enumerate() {
                if !(p.y_lo.is_finite() && p.y_hi.is_finite() && p.m.is_finite()) || p.m < 0.0 {
                    return Err(malformed(i, "density pieces need finite bounds and nonnegative mass"));
                }
                if p.y_hi <= p.y_lo {
                    return Err(malformed(i, "empty density piece"));
                }
                if p.y_lo < limb.y_lo() - HEIGHT_SNAP || p.y_hi > limb.y_hi() + HEIGHT_SNAP {
                    return Err(malformed(i, "density piece outside the limb domain"));
                }
                if k > 0 && p.y_lo < pieces[k - 1].y_hi - HEIGHT_SNAP {
                    return Err(malformed(i, "overlapping density pieces"));
                }
            }
        }
        if let Some((l, u)) = bounds {
            if !(l > 0.0 && l <= u && u.is_finite()) {
                return Err(Error::InvalidMeasure(format!("bounds need 0 < L <= U < inf, got ({l}, {u})")));
            }
        }
        let skm = SkeletalRootMeasure { root: SkeletalRoot { depth, limbs, parents }, densities, bounds };
        let total = skm.total_mass();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::NotProbability { total });
        }
        Ok(skm)
    }

    pub fn dim(&self) -> usize {
        self.root.dim()
    }

    pub fn limbs(&self) -> &[Limb] {
        &self.root.limbs
    }

    pub fn total_mass(&self) -> f64 {
        self.densities.iter().flatten().map(|p| p.m * (p.y_hi - p.y_lo)).sum()
    }

    /// Deepest limb end.
    pub fn bottom(&self) -> f64 {
        self.root.limbs.iter().map(Limb::y_hi).fold(0.0, f64::max)
    }

    /// Largest limb slope, the constant `C` of the root-length bounds.
    pub fn lipschitz(&self) -> f64 {
        self.root.limbs.iter().map(Limb::lipschitz).fold(0.0, f64::max)
    }

    /// Every height where a limb or density changes, from 0 to the bottom.
    fn breakpoints(&self) -> Vec<f64> {
        let mut ys = vec![0.0, self.bottom()];
        for (limb, pieces) in self.root.limbs.iter().zip(&self.densities) {
            ys.extend(limb.heights());
            for p in pieces {
                ys.push(p.y_lo);
                ys.push(p.y_hi);
            }
        }
        sorted_unique(ys)
    }

    /// Vertical density as `(y_lo, y_hi, f^V)` on consecutive elementary
    /// intervals covering `[0, bottom]`.
    pub fn vertical_density(&self) -> Vec<(f64, f64, f64)> {
        self.breakpoints()
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let f = self
                    .root
                    .limbs
                    .iter()
                    .zip(&self.densities)
                    .filter(|(l, _)| l.y_lo() < mid && mid < l.y_hi())
                    .map(|(_, p)| density_at(p, mid))
                    .sum();
                (w[0], w[1], f)
            })
            .collect()
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_reader(reader).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_json_value(value)
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let doc: SkeletonDoc = serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
        let mut limbs = Vec::with_capacity(doc.limbs.len());
        let mut parents = Vec::with_capacity(doc.limbs.len());
        let mut densities = Vec::with_capacity(doc.limbs.len());
        for (i, l) in doc.limbs.into_iter().enumerate() {
            let points = l
                .polyline
                .into_iter()
                .map(|p| {
                    if p.len() < 2 {
                        Err(Error::MalformedLimb { limb: i, reason: "control points are [y, x1, ..., xd]".into() })
                    } else {
                        Ok((p[0], p[1..].to_vec()))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let limb = Limb::new(points).map_err(|reason| Error::MalformedLimb { limb: i, reason })?;
            if let Some(a) = l.attach_y {
                if (a - limb.y_lo()).abs() > HEIGHT_SNAP {
                    return Err(Error::MalformedLimb {
                        limb: i,
                        reason: format!("attach_y {a} differs from the first control height {}", limb.y_lo()),
                    });
                }
            }
            limbs.push(limb);
            parents.push(l.parent);
            densities.push(l.density);
        }
        Self::new(doc.depth, limbs, parents, densities, doc.bounds.map(|b| (b[0], b[1])))
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let limbs = self
            .root
            .limbs
            .iter()
            .zip(&self.densities)
            .zip(&self.root.parents)
            .map(|((limb, density), parent)| LimbDoc {
                polyline: limb
                    .points
                    .iter()
                    .map(|(y, x)| std::iter::once(*y).chain(x.iter().copied()).collect())
                    .collect(),
                density: density.clone(),
                parent: *parent,
                attach_y: parent.map(|_| limb.y_lo()),
            })
            .collect();
        let doc = SkeletonDoc { depth: self.root.depth, limbs, bounds: self.bounds.map(|(l, u)| [l, u]) };
        serde_json::to_value(doc).expect("skeleton documents serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    Strong,
    Weak,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Stem not at the surface, or another limb starting there.
    S1 { limb: usize, detail: String },
    /// Attachment missing, outside the parent's domain, or off the parent.
    S2 { limb: usize, detail: String },
    /// Two limbs meet above their common lower end.
    S3Crossing { i: usize, j: usize, y: f64 },
    /// Limbs meet while both carry mass just above the meeting height.
    W3 { i: usize, j: usize, y: f64, left_i: f64, left_j: f64 },
    /// Vertical density outside the declared `[L, U]`.
    Bounds { y_lo: f64, y_hi: f64, density: f64 },
    /// Attachment exactly at the parent's lower end point.
    ClosedAttach { limb: usize, parent: usize },
    /// Parts of the limb carry no mass.
    PartialSupport { limb: usize },
}

impl Violation {
    fn severity(&self) -> Strength {
        match self {
            Violation::S1 { .. } | Violation::S2 { .. } | Violation::W3 { .. } | Violation::Bounds { .. } => {
                Strength::Invalid
            }
            _ => Strength::Weak,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub strength: Strength,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn w3_violations(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| matches!(v, Violation::W3 { .. }))
    }
}

/// Heights in `(lo, hi]` where two limbs coincide, with the left-limit
/// densities of both there. A stretch of coincidence is reported once, at
/// its midpoint.
fn coincidences(
    a: &Limb,
    da: &[DensityPiece],
    b: &Limb,
    db: &[DensityPiece],
) -> Vec<(f64, f64, f64)> {
    let lo = a.y_lo().max(b.y_lo());
    let hi = a.y_hi().min(b.y_hi());
    let mut out: Vec<(f64, f64, f64)> = Vec::new();
    if hi <= lo {
        return out;
    }
    let mut ys = vec![lo, hi];
    ys.extend(a.heights().chain(b.heights()).filter(|y| *y > lo && *y < hi));
    for p in da.iter().chain(db) {
        ys.extend([p.y_lo, p.y_hi].into_iter().filter(|y| *y > lo && *y < hi));
    }
    let ys = sorted_unique(ys);
    let mut push = |y: f64, la: f64, lb: f64| {
        if out.last().map_or(true, |p| y - p.0 > COINCIDENCE_TOL) {
            out.push((y, la, lb));
        }
    };
    for w in ys.windows(2) {
        let (s, t) = (w[0], w[1]);
        let d0 = diff(&a.eval(s), &b.eval(s));
        let d1 = diff(&a.eval(t), &b.eval(t));
        if norm(&d0) <= COINCIDENCE_TOL && norm(&d1) <= COINCIDENCE_TOL {
            let mid = 0.5 * (s + t);
            push(mid, density_at(da, mid), density_at(db, mid));
            continue;
        }
        let delta = diff(&d1, &d0);
        let dd: f64 = delta.iter().map(|c| c * c).sum();
        let tau = if dd > 0.0 {
            (-d0.iter().zip(&delta).map(|(p, q)| p * q).sum::<f64>() / dd).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let closest: Vec<f64> = d0.iter().zip(&delta).map(|(p, q)| p + tau * q).collect();
        if norm(&closest) > COINCIDENCE_TOL {
            continue;
        }
        let y = s + tau * (t - s);
        if y - lo <= COINCIDENCE_TOL {
            // the shared lower end (an attachment point) is excluded
            continue;
        }
        push(y, left_limit(da, y), left_limit(db, y));
    }
    out
}

/// Checks S1, S2, S3 and W3 and classifies the measure.
///
/// A measure is invalid if S1, S2, W3 or declared density bounds fail. It is
/// weak if it has crossings that W3 permits, an attachment at a parent's end
/// point, or limbs only partly carrying mass. Otherwise it is strong.
pub fn validate(skm: &SkeletalRootMeasure) -> ValidationReport {
    let limbs = &skm.root.limbs;
    let mut violations = Vec::new();

    if limbs[0].y_lo() != 0.0 {
        violations.push(Violation::S1 { limb: 0, detail: format!("stem starts at {}", limbs[0].y_lo()) });
    }
    for (i, limb) in limbs.iter().enumerate().skip(1) {
        let y = limb.y_lo();
        if y <= 0.0 {
            violations.push(Violation::S1 { limb: i, detail: "limb other than the stem starts at the surface".into() });
        }
        let Some(j) = skm.root.parents[i] else {
            violations.push(Violation::S2 { limb: i, detail: "no parent limb".into() });
            continue;
        };
        if j >= i {
            violations.push(Violation::S2 { limb: i, detail: format!("parent {j} is not an older limb") });
            continue;
        }
        let p = &limbs[j];
        let interior = y > p.y_lo() && y < p.y_hi() - HEIGHT_SNAP;
        if !interior && (y - p.y_hi()).abs() <= HEIGHT_SNAP {
            violations.push(Violation::ClosedAttach { limb: i, parent: j });
        } else if !interior {
            violations.push(Violation::S2 {
                limb: i,
                detail: format!("attachment height {y} outside parent domain ({}, {})", p.y_lo(), p.y_hi()),
            });
            continue;
        }
        let gap = norm(&diff(&limb.eval(y), &p.eval(y)));
        if gap > COINCIDENCE_TOL {
            violations.push(Violation::S2 { limb: i, detail: format!("limb starts {gap:e} away from its parent") });
        }
    }

    let pairs: Vec<(usize, usize)> = (0..limbs.len()).flat_map(|i| (i + 1..limbs.len()).map(move |j| (i, j))).collect();
    let found: Vec<Vec<Violation>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let mut v = Vec::new();
            for (y, li, lj) in coincidences(&limbs[i], &skm.densities[i], &limbs[j], &skm.densities[j]) {
                v.push(Violation::S3Crossing { i, j, y });
                if li > 0.0 && lj > 0.0 {
                    v.push(Violation::W3 { i, j, y, left_i: li, left_j: lj });
                }
            }
            v
        })
        .collect();
    violations.extend(found.into_iter().flatten());

    if let Some((l, u)) = skm.bounds {
        for (y_lo, y_hi, f) in skm.vertical_density() {
            if f < l * (1.0 - 1e-9) || f > u * (1.0 + 1e-9) {
                violations.push(Violation::Bounds { y_lo, y_hi, density: f });
            }
        }
    }

    for (i, (limb, pieces)) in limbs.iter().zip(&skm.densities).enumerate() {
        let covered: f64 = pieces.iter().filter(|p| p.m > 0.0).map(|p| p.y_hi - p.y_lo).sum();
        if covered < (limb.y_hi() - limb.y_lo()) * (1.0 - 1e-12) {
            violations.push(Violation::PartialSupport { limb: i });
        }
    }

    let strength = violations.iter().map(Violation::severity).fold(Strength::Strong, |acc, s| match (acc, s) {
        (Strength::Invalid, _) | (_, Strength::Invalid) => Strength::Invalid,
        (Strength::Weak, _) | (_, Strength::Weak) => Strength::Weak,
        _ => Strength::Strong,
    });
    ValidationReport { strength, violations }
}

/// Mass-median height of the vertical density restricted to `[a, b]`.
fn slab_median(fv: &[(f64, f64, f64)], a: f64, b: f64) -> Option<f64> {
    let mass: f64 = fv.iter().map(|&(lo, hi, f)| f * (hi.min(b) - lo.max(a)).max(0.0)).sum();
    if !(mass > 0.0) {
        return None;
    }
    let mut acc = 0.0;
    for &(lo, hi, f) in fv {
        let (s, t) = (lo.max(a), hi.min(b));
        if t <= s || f <= 0.0 {
            continue;
        }
        let piece = f * (t - s);
        if acc + piece >= 0.5 * mass {
            return Some(s + (0.5 * mass - acc) / f);
        }
        acc += piece;
    }
    Some(b)
}

/// Discretizes into `n_slabs` equal height slabs on `[0, depth]`. Each limb
/// with mass in a slab contributes one atom of that mass on the limb, at the
/// slab's mass-median height clamped to the part of the limb carrying mass
/// inside the slab.
pub fn to_atomic(skm: &SkeletalRootMeasure, n_slabs: usize) -> Result<AtomicMeasure> {
    if n_slabs == 0 {
        return Err(Error::InvalidMeasure("n_slabs must be positive".into()));
    }
    let depth = skm.root.depth.max(skm.bottom());
    let fv = skm.vertical_density();
    let mut atoms = Vec::new();
    for k in 0..n_slabs {
        let a = depth * k as f64 / n_slabs as f64;
        let b = depth * (k + 1) as f64 / n_slabs as f64;
        let Some(ym) = slab_median(&fv, a, b) else { continue };
        for (limb, pieces) in skm.root.limbs.iter().zip(&skm.densities) {
            let mut mass = 0.0;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for p in pieces.iter().filter(|p| p.m > 0.0) {
                let (s, t) = (p.y_lo.max(a), p.y_hi.min(b));
                if t > s {
                    mass += p.m * (t - s);
                    lo = lo.min(s);
                    hi = hi.max(t);
                }
            }
            if mass > 0.0 {
                let y = ym.clamp(lo, hi);
                atoms.push(Atom::new(limb.eval(y), y, mass));
            }
        }
    }
    AtomicMeasure::new(skm.dim(), atoms)
}

/// Root length: arclength of every limb over the heights where it carries
/// mass.
pub fn root_length(skm: &SkeletalRootMeasure) -> f64 {
    skm.root
        .limbs
        .iter()
        .zip(&skm.densities)
        .map(|(limb, pieces)| pieces.iter().filter(|p| p.m > 0.0).map(|p| limb.arclength(p.y_lo, p.y_hi)).sum::<f64>())
        .sum()
}

/// Piecewise-linear vertical CDF `F` of a skeletal measure and its inverse.
struct Rescaling {
    ys: Vec<f64>,
    ls: Vec<f64>,
    /// Vertical density per elementary interval, normalized.
    fv: Vec<f64>,
}

impl Rescaling {
    fn new(skm: &SkeletalRootMeasure) -> Result<Self> {
        let pieces = skm.vertical_density();
        let total: f64 = pieces.iter().map(|(a, b, f)| f * (b - a)).sum();
        let mut ys = vec![0.0];
        let mut ls = vec![0.0];
        let mut fv = Vec::with_capacity(pieces.len());
        let mut acc = 0.0;
        for (a, b, f) in pieces {
            if !(f > 0.0) {
                return Err(Error::NotBiLipschitz(format!("vertical density vanishes on ({a}, {b})")));
            }
            acc += f * (b - a);
            ys.push(b);
            ls.push(acc / total);
            fv.push(f / total);
        }
        *ls.last_mut().unwrap() = 1.0;
        Ok(Rescaling { ys, ls, fv })
    }

    fn level(&self, y: f64) -> f64 {
        interp(&self.ys, &self.ls, y)
    }

    fn height(&self, l: f64) -> f64 {
        interp(&self.ls, &self.ys, l)
    }

    fn density(&self, y: f64) -> f64 {
        let k = self.ys.partition_point(|v| *v <= y).clamp(1, self.fv.len());
        self.fv[k - 1]
    }
}

/// Linear interpolation of the increasing table `(xs, vs)`, clamped.
fn interp(xs: &[f64], vs: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return vs[0];
    }
    let k = xs.partition_point(|v| *v < x);
    if k >= xs.len() {
        return vs[vs.len() - 1];
    }
    let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    vs[k - 1] + t * (vs[k] - vs[k - 1])
}

fn check_family(skms: &[SkeletalRootMeasure], lambda: &Weights) -> Result<usize> {
    let first = skms.first().ok_or(Error::EmptyInput)?;
    lambda.check_len(skms.len())?;
    for s in skms {
        if s.dim() != first.dim() {
            return Err(Error::DimMismatch { expected: first.dim(), found: s.dim() });
        }
    }
    Ok(first.dim())
}

/// `lambda`-average of the rescaled limbs picked by a tuple, un-rescaled by
/// the averaged vertical quantile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GhostLimb {
    pub tuple: Vec<usize>,
    /// Rescaled domain, the intersection of the constituents' domains.
    pub level_lo: f64,
    pub level_hi: f64,
    /// Control points `(y, x)` after un-rescaling.
    pub polyline: Vec<(f64, Vec<f64>)>,
    /// Height intervals where the tuple carries barycenter mass.
    pub active: Vec<(f64, f64)>,
}

impl GhostLimb {
    /// Position at height `y`, if `y` is inside the (un-rescaled) domain.
    pub fn eval(&self, y: f64) -> Option<Vec<f64>> {
        let p = &self.polyline;
        if y < p[0].0 - HEIGHT_SNAP || y > p[p.len() - 1].0 + HEIGHT_SNAP {
            return None;
        }
        if p.len() == 1 {
            return Some(p[0].1.clone());
        }
        let k = p.partition_point(|q| q.0 < y).clamp(1, p.len() - 1);
        let (y0, x0) = &p[k - 1];
        let (y1, x1) = &p[k];
        Some(lerp(x0, x1, ((y - y0) / (y1 - y0)).clamp(0.0, 1.0)))
    }
}

fn ghost_position(skms: &[SkeletalRootMeasure], res: &[Rescaling], lambda: &Weights, tuple: &[usize], l: f64) -> Vec<f64> {
    let mut x = vec![0.0; skms[0].dim()];
    for (a, &i) in tuple.iter().enumerate() {
        let g = skms[a].root.limbs[i].eval(res[a].height(l));
        for (c, v) in x.iter_mut().zip(g) {
            *c += lambda[a] * v;
        }
    }
    x
}

fn mean_height(res: &[Rescaling], lambda: &Weights, l: f64) -> f64 {
    res.iter().enumerate().map(|(a, r)| lambda[a] * r.height(l)).sum()
}

/// Ghost of a family: one limb per index tuple whose rescaled domains
/// overlap on an interval of positive length. Active sets are left empty;
/// see [`mark_active`].
pub fn ghost(skms: &[SkeletalRootMeasure], lambda: &Weights, cap: usize) -> Result<Vec<GhostLimb>> {
    check_family(skms, lambda)?;
    let tuples = skms.iter().try_fold(1usize, |acc, s| acc.checked_mul(s.limbs().len())).unwrap_or(usize::MAX);
    if tuples > cap {
        return Err(Error::GhostTooLarge { tuples, cap });
    }
    let res = skms.iter().map(Rescaling::new).collect::<Result<Vec<_>>>()?;
    let domains: Vec<Vec<(f64, f64)>> = skms
        .iter()
        .zip(&res)
        .map(|(s, r)| s.limbs().iter().map(|l| (r.level(l.y_lo()), r.level(l.y_hi()))).collect())
        .collect();
    let all_levels: Vec<f64> = sorted_unique(res.iter().flat_map(|r| r.ls.iter().copied()).collect());
    let sizes: Vec<usize> = skms.iter().map(|s| s.limbs().len()).collect();
    let mut out = Vec::new();
    let mut tuple = vec![0usize; skms.len()];
    for code in 0..tuples {
        let mut c = code;
        for a in (0..sizes.len()).rev() {
            tuple[a] = c % sizes[a];
            c /= sizes[a];
        }
        let lo = tuple.iter().enumerate().map(|(a, &i)| domains[a][i].0).fold(0.0, f64::max);
        let hi = tuple.iter().enumerate().map(|(a, &i)| domains[a][i].1).fold(1.0, f64::min);
        if hi - lo <= HEIGHT_SNAP {
            continue;
        }
        let mut levels = vec![lo, hi];
        levels.extend(all_levels.iter().copied().filter(|l| *l > lo && *l < hi));
        let polyline = sorted_unique(levels)
            .into_iter()
            .map(|l| (mean_height(&res, lambda, l), ghost_position(skms, &res, lambda, &tuple, l)))
            .collect();
        out.push(GhostLimb { tuple: tuple.clone(), level_lo: lo, level_hi: hi, polyline, active: Vec::new() });
    }
    Ok(out)
}

/// Records on each ghost limb the heights where a barycenter limb with the
/// same tuple carries mass.
pub fn mark_active(ghosts: &mut [GhostLimb], bary: &SkeletalBarycenter) {
    for (k, tuple) in bary.tuples.iter().enumerate() {
        let Some(g) = ghosts.iter_mut().find(|g| &g.tuple == tuple) else { continue };
        for p in bary.measure.densities[k].iter().filter(|p| p.m > 0.0) {
            match g.active.last_mut() {
                Some(last) if (p.y_lo - last.1).abs() <= HEIGHT_SNAP => last.1 = p.y_hi,
                _ => g.active.push((p.y_lo, p.y_hi)),
            }
        }
    }
    for g in ghosts.iter_mut() {
        g.active.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlabReport {
    pub level_lo: f64,
    pub level_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    /// Number of limbs carrying mass in each input slice.
    pub input_support: Vec<usize>,
    /// Index tuples with positive mass in the slab's coupling.
    pub support: usize,
    /// `sum S_a - m + 1`.
    pub bound: usize,
    pub certificate: Option<LpCertificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkeletalBarycenter {
    pub measure: SkeletalRootMeasure,
    /// Index tuple of input limbs behind each output limb.
    pub tuples: Vec<Vec<usize>>,
    pub slabs: Vec<SlabReport>,
    pub report: ValidationReport,
    /// Classification of each input.
    pub inputs: Vec<Strength>,
}

struct SlabSolution {
    entries: Vec<(Vec<usize>, f64)>,
    report: SlabReport,
}

fn solve_slab(
    skms: &[SkeletalRootMeasure],
    res: &[Rescaling],
    lambda: &Weights,
    l0: f64,
    l1: f64,
    config: &LpConfig,
) -> Result<SlabSolution> {
    let lm = 0.5 * (l0 + l1);
    let mut slices = Vec::with_capacity(skms.len());
    let mut tags: Vec<Vec<usize>> = Vec::with_capacity(skms.len());
    for (s, r) in skms.iter().zip(res) {
        let y = r.height(lm);
        let f = r.density(y);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut tag = Vec::new();
        for (i, (limb, pieces)) in s.limbs().iter().zip(&s.densities).enumerate() {
            if !(limb.y_lo() < y && y < limb.y_hi()) {
                continue;
            }
            // rescaled slice mass; the normalized vertical density is f
            let m = density_at(pieces, y) / s.total_mass();
            if m > 0.0 {
                points.push(limb.eval(y));
                weights.push(m / f);
                tag.push(i);
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        slices.push(DiscreteMeasure::new(s.dim(), points, weights)?);
        tags.push(tag);
    }
    let input_support: Vec<usize> = slices.iter().map(|s| s.len()).collect();
    let bound = input_support.iter().sum::<usize>() + 1 - skms.len();
    let (raw, certificate) = if skms.len() == 1 {
        ((0..slices[0].len()).map(|i| (vec![i], slices[0].weights()[i])).collect(), None)
    } else {
        let c = discrete_ot::multimarginal_lp(&slices, lambda, config)?;
        (c.entries, c.certificate)
    };
    let entries: Vec<(Vec<usize>, f64)> = raw
        .into_iter()
        .map(|(t, mass)| (t.iter().enumerate().map(|(a, &k)| tags[a][k]).collect(), mass))
        .collect();
    let report = SlabReport {
        level_lo: l0,
        level_hi: l1,
        y_lo: mean_height(res, lambda, l0),
        y_hi: mean_height(res, lambda, l1),
        input_support,
        support: entries.len(),
        bound,
        certificate,
    };
    Ok(SlabSolution { entries, report })
}

pub fn skeletal_barycenter(skms: &[SkeletalRootMeasure], lambda: &Weights, n_slabs: usize) -> Result<SkeletalBarycenter> {
    skeletal_barycenter_with(skms, lambda, n_slabs, &LpConfig::default())
}

/// Layerwise barycenter of skeletal root measures, rebuilt as limbs.
///
/// Slabs are the common refinement, in level coordinates, of every input
/// breakpoint and a uniform grid of `n_slabs` levels. On each slab the
/// multi-marginal problem is solved on the slices at the slab midpoint, with
/// atoms tagged by limb. A coupling entry for tuple `T` contributes the
/// ghost segment of `T` over the slab with its mass; segments of the same
/// tuple on consecutive slabs are joined into one output limb, and each new
/// limb is attached to an older limb passing through its starting point.
///
/// The output is checked against W3; a failure is returned as an error.
pub fn skeletal_barycenter_with(
    skms: &[SkeletalRootMeasure],
    lambda: &Weights,
    n_slabs: usize,
    config: &LpConfig,
) -> Result<SkeletalBarycenter> {
    check_family(skms, lambda)?;
    if n_slabs == 0 {
        return Err(Error::InvalidMeasure("n_slabs must be positive".into()));
    }
    let inputs: Vec<Strength> = skms.iter().map(|s| validate(s).strength).collect();
    let res = skms.iter().map(Rescaling::new).collect::<Result<Vec<_>>>()?;
    let mut levels: Vec<f64> = res.iter().flat_map(|r| r.ls.iter().copied()).collect();
    levels.extend((0..=n_slabs).map(|k| k as f64 / n_slabs as f64));
    let mut levels = sorted_unique(levels);
    *levels.last_mut().unwrap() = 1.0;

    let solved = levels
        .par_windows(2)
        .map(|w| solve_slab(skms, &res, lambda, w[0], w[1], config))
        .collect::<Result<Vec<_>>>()?;

    struct Building {
        tuple: Vec<usize>,
        points: Vec<(f64, Vec<f64>)>,
        density: Vec<DensityPiece>,
        last_slab: usize,
    }
    let mut built: Vec<Building> = Vec::new();
    let mut open: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for (k, (w, slab)) in levels.windows(2).zip(&solved).enumerate() {
        let (y0, y1) = (slab.report.y_lo, slab.report.y_hi);
        for (tuple, mass) in &slab.entries {
            let m = mass * (w[1] - w[0]) / (y1 - y0);
            let end = (y1, ghost_position(skms, &res, lambda, tuple, w[1]));
            match open.get(tuple).copied().filter(|&b| built[b].last_slab + 1 == k) {
                Some(b) => {
                    let limb = &mut built[b];
                    limb.points.push(end);
                    match limb.density.last_mut() {
                        Some(p) if p.m == m => p.y_hi = y1,
                        _ => limb.density.push(DensityPiece { y_lo: y0, y_hi: y1, m }),
                    }
                    limb.last_slab = k;
                }
                None => {
                    open.insert(tuple.clone(), built.len());
                    built.push(Building {
                        tuple: tuple.clone(),
                        points: vec![(y0, ghost_position(skms, &res, lambda, tuple, w[0])), end],
                        density: vec![DensityPiece { y_lo: y0, y_hi: y1, m }],
                        last_slab: k,
                    });
                }
            }
        }
    }

    let limbs: Vec<Limb> = built
        .iter()
        .enumerate()
        .map(|(i, b)| Limb::new(b.points.clone()).map_err(|reason| Error::MalformedLimb { limb: i, reason }))
        .collect::<Result<_>>()?;
    let parents: Vec<Option<usize>> = (0..limbs.len())
        .map(|i| {
            let y = limbs[i].y_lo();
            let x = &limbs[i].points[0].1;
            if i == 0 || y <= 0.0 {
                return None;
            }
            let on = |j: &usize| {
                let p = &limbs[*j];
                p.y_lo() <= y + HEIGHT_SNAP
                    && y <= p.y_hi() + HEIGHT_SNAP
                    && norm(&diff(&p.eval(y), x)) <= COINCIDENCE_TOL
            };
            let interior = |j: &usize| limbs[*j].y_lo() < y && y < limbs[*j].y_hi() - HEIGHT_SNAP;
            (0..i).filter(on).find(interior).or_else(|| (0..i).find(on))
        })
        .collect();
    let depth = res.iter().enumerate().map(|(a, r)| lambda[a] * r.ys[r.ys.len() - 1]).sum::<f64>();
    let tuples: Vec<Vec<usize>> = built.iter().map(|b| b.tuple.clone()).collect();
    let densities: Vec<Vec<DensityPiece>> = built.into_iter().map(|b| b.density).collect();
    let measure = SkeletalRootMeasure::new(depth, limbs, parents, densities, None)?;
    let report = validate(&measure);
    if report.w3_violations().next().is_some() {
        let dump: Vec<&Violation> = report.w3_violations().collect();
        return Err(Error::W3ViolationDetected(
            serde_json::to_string(&dump).expect("violations serialize"),
        ));
    }
    Ok(SkeletalBarycenter {
        measure,
        tuples,
        slabs: solved.into_iter().map(|s| s.report).collect(),
        report,
        inputs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootLengthBounds {
    /// Largest limb slope over the family.
    pub c: f64,
    pub l: f64,
    pub u: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// `max_b C0 R(mu_b)`.
    pub lower: f64,
    /// `C1 (C2 sum_a R(mu_a) - (m - 1))`.
    pub upper: f64,
}

/// Bracket on the root length of the barycenter from the inputs' lengths.
///
/// With `C~ = C / L`, `K = max(1/L, 1)` and `k = min(1/U, 1)`:
/// `C0 = k / (K sqrt(1 + C~^2))`, `C1 = K sqrt(1 + C~^2)`, `C2 = 1 / k`.
/// `bounds` overrides the `(L, U)` declared on the inputs.
pub fn root_length_bounds(
    skms: &[SkeletalRootMeasure],
    lambda: &Weights,
    bounds: Option<(f64, f64)>,
) -> Result<RootLengthBounds> {
    check_family(skms, lambda)?;
    let (l, u) = match bounds {
        Some(b) => b,
        None => skms.iter().try_fold((f64::INFINITY, 0.0f64), |(l, u), s| {
            s.bounds.map(|(sl, su)| (l.min(sl), u.max(su))).ok_or(Error::BoundsUnavailable)
        })?,
    };
    if !(l > 0.0 && l <= u && u.is_finite()) {
        return Err(Error::InvalidMeasure(format!("bounds need 0 < L <= U < inf, got ({l}, {u})")));
    }
    let c = skms.iter().map(SkeletalRootMeasure::lipschitz).fold(0.0, f64::max);
    let ct = c / l;
    let big_k = (1.0 / l).max(1.0);
    let small_k = (1.0 / u).min(1.0);
    let s = (1.0 + ct * ct).sqrt();
    let c0 = small_k / (big_k * s);
    let c1 = big_k * s;
    let c2 = 1.0 / small_k;
    let lengths: Vec<f64> = skms.iter().map(root_length).collect();
    let lower = lengths.iter().map(|r| c0 * r).fold(0.0, f64::max);
    let upper = c1 * (c2 * lengths.iter().sum::<f64>() - (skms.len() as f64 - 1.0));
    Ok(RootLengthBounds { c, l, u, c0, c1, c2, lower, upper })
}
