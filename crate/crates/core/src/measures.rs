//! Data model for finite measures on `R^d x R>=0`.
//!
//! [`AtomicMeasure`] is the representation every computation runs on.
//! [`GriddedMeasure`] exists for ingestion of densities and for functionals
//! that need a density (entropy, internal energy). [`VerticalProfile`] is the
//! vertical marginal with its step CDF and left-continuous quantile, and
//! [`LayeredMeasure`] is the vertically rescaled measure as a piecewise
//! constant family of horizontal probability slices.
//!
//! CDF convention: `F` is right-continuous, so an atom of mass `m` at height
//! `y` occupies the half-open level interval `(F(y-), F(y)]` after rescaling.

use std::cmp::Ordering;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::discrete_ot::DiscreteMeasure;
use crate::{Error, Result};

/// Tolerance for "sums to one" checks on probability vectors.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: Vec<f64>,
    pub y: f64,
    pub w: f64,
}

impl Atom {
    pub fn new(x: Vec<f64>, y: f64, w: f64) -> Self {
        Atom { x, y, w }
    }
}

/// Finite weighted point set in `R^d x R>=0`.
///
/// Atoms are kept sorted by height, then lexicographically by horizontal
/// position. Atoms with identical `(x, y)` are merged by summing weights;
/// equality is exact, no snapping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomicMeasure {
    dim: usize,
    atoms: Vec<Atom>,
}

fn cmp_point(a: &Atom, b: &Atom) -> Ordering {
    a.y.total_cmp(&b.y).then_with(|| {
        a.x.iter()
            .zip(&b.x)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

impl AtomicMeasure {
    pub fn new(dim: usize, atoms: Vec<Atom>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("horizontal dimension must be positive".into()));
        }
        for a in &atoms {
            if a.x.len() != dim {
                return Err(Error::DimMismatch { expected: dim, found: a.x.len() });
            }
            if !(a.y.is_finite() && a.x.iter().all(|c| c.is_finite()) && a.w.is_finite()) {
                return Err(Error::InvalidMeasure("non-finite coordinate or weight".into()));
            }
            if a.y < 0.0 {
                return Err(Error::InvalidMeasure(format!("negative height {}", a.y)));
            }
            if a.w < 0.0 {
                return Err(Error::InvalidMeasure(format!("negative weight {}", a.w)));
            }
        }
        let mut atoms: Vec<Atom> = atoms.into_iter().filter(|a| a.w > 0.0).collect();
        if atoms.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        atoms.sort_by(cmp_point);
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if cmp_point(last, &a).is_eq() => last.w += a.w,
                _ => merged.push(a),
            }
        }
        Ok(AtomicMeasure { dim, atoms: merged })
    }

    /// Single Dirac mass of unit weight.
    pub fn dirac(x: Vec<f64>, y: f64) -> Result<Self> {
        let dim = x.len();
        Self::new(dim, vec![Atom::new(x, y, 1.0)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.w).sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= PROB_TOL
    }

    /// Scales all weights by a positive factor.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.dim,
            self.atoms.iter().map(|a| Atom::new(a.x.clone(), a.y, a.w * factor)).collect(),
        )
    }

    /// Applies `f` to every horizontal position, keeping heights and weights.
    pub fn map_horizontal(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let atoms: Vec<Atom> =
            self.atoms.iter().map(|a| Atom::new(f(&a.x), a.y, a.w)).collect();
        let dim = atoms.first().map(|a| a.x.len()).unwrap_or(self.dim);
        Self::new(dim, atoms)
    }

    /// Reads `x1,...,xd,y,w` rows with a header line.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let ncol = headers.len();
        if ncol < 3 {
            return Err(Error::Parse(format!("expected header x1,...,xd,y,w; got {ncol} columns")));
        }
        if &headers[ncol - 2] != "y" || &headers[ncol - 1] != "w" {
            return Err(Error::Parse("last two header columns must be `y,w`".into()));
        }
        let dim = ncol - 2;
        let mut atoms = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.len() != ncol {
                return Err(Error::Parse(format!("row {}: expected {ncol} fields", row + 1)));
            }
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))?;
            atoms.push(Atom::new(vals[..dim].to_vec(), vals[dim], vals[dim + 1]));
        }
        Self::new(dim, atoms)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        header.push("w".into());
        wtr.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
        for a in &self.atoms {
            let mut row: Vec<String> = a.x.iter().map(|v| format!("{v:?}")).collect();
            row.push(format!("{:?}", a.y));
            row.push(format!("{:?}", a.w));
            wtr.write_record(&row).map_err(|e| Error::Parse(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Piecewise-constant density on a rectilinear grid.
///
/// `density` is stored flat in row-major order with the vertical cell index
/// outermost, followed by the horizontal axes in order:
/// `density[((k_y * n_1 + k_1) * n_2 + k_2) ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedMeasure {
    axes: Vec<Vec<f64>>,
    vertical_edges: Vec<f64>,
    density: Vec<f64>,
}

fn check_edges(edges: &[f64], what: &str) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::InvalidMeasure(format!("{what} needs at least two edges")));
    }
    if !edges.iter().all(|e| e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidMeasure(format!("{what} edges must be finite and strictly increasing")));
    }
    Ok(())
}

#[derive(Deserialize)]
struct GridJson {
    axes: Vec<Vec<f64>>,
    vertical_edges: Vec<f64>,
    density: serde_json::Value,
}

fn flatten_nested(value: &serde_json::Value, shape: &[usize], out: &mut Vec<f64>) -> Result<()> {
    match shape.split_first() {
        None => {
            let v = value
                .as_f64()
                .ok_or_else(|| Error::Parse("density leaf is not a number".into()))?;
            out.push(v);
            Ok(())
        }
        Some((&n, rest)) => {
            let arr = value
                .as_array()
                .ok_or_else(|| Error::Parse("density nesting does not match the axes".into()))?;
            if arr.len() != n {
                return Err(Error::Parse(format!("density level has {} entries, expected {n}", arr.len())));
            }
            for v in arr {
                flatten_nested(v, rest, out)?;
            }
            Ok(())
        }
    }
}

impl GriddedMeasure {
    pub fn new(axes: Vec<Vec<f64>>, vertical_edges: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidMeasure("grid needs at least one horizontal axis".into()));
        }
        for (i, a) in axes.iter().enumerate() {
            check_edges(a, &format!("axis {}", i + 1))?;
        }
        check_edges(&vertical_edges, "vertical axis")?;
        if vertical_edges[0] < 0.0 {
            return Err(Error::InvalidMeasure("vertical edges must be nonnegative".into()));
        }
        let cells: usize =
            (vertical_edges.len() - 1) * axes.iter().map(|a| a.len() - 1).product::<usize>();
        if density.len() != cells {
            return Err(Error::InvalidMeasure(format!(
                "density has {} cells, grid has {cells}",
                density.len()
            )));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::InvalidMeasure("densities must be finite and nonnegative".into()));
        }
        let g = GriddedMeasure { axes, vertical_edges, density };
        if g.total_mass() <= 0.0 {
            return Err(Error::EmptyMeasure);
        }
        Ok(g)
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let raw: GridJson = serde_json::from_reader(reader).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_json_parts(raw)
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let raw: GridJson = serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_json_parts(raw)
    }

    fn from_json_parts(raw: GridJson) -> Result<Self> {
        let mut shape = vec![raw.vertical_edges.len().saturating_sub(1)];
        shape.extend(raw.axes.iter().map(|a| a.len().saturating_sub(1)));
        let mut density = Vec::new();
        flatten_nested(&raw.density, &shape, &mut density)?;
        Self::new(raw.axes, raw.vertical_edges, density)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        fn nest(data: &[f64], shape: &[usize]) -> serde_json::Value {
            match shape.split_first() {
                None => serde_json::json!(data[0]),
                Some((&n, rest)) => {
                    let stride = data.len() / n;
                    serde_json::Value::Array(
                        (0..n).map(|i| nest(&data[i * stride..(i + 1) * stride], rest)).collect(),
                    )
                }
            }
        }
        serde_json::json!({
            "axes": self.axes,
            "vertical_edges": self.vertical_edges,
            "density": nest(&self.density, &self.shape()),
        })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn vertical_edges(&self) -> &[f64] {
        &self.vertical_edges
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// Cell counts, vertical first.
    pub fn shape(&self) -> Vec<usize> {
        let mut s = vec![self.vertical_edges.len() - 1];
        s.extend(self.axes.iter().map(|a| a.len() - 1));
        s
    }

    pub fn n_layers(&self) -> usize {
        self.vertical_edges.len() - 1
    }

    /// Number of horizontal cells per layer.
    pub fn cells_per_layer(&self) -> usize {
        self.axes.iter().map(|a| a.len() - 1).product()
    }

    /// Horizontal multi-index of flat horizontal cell `c`.
    pub fn horizontal_index(&self, mut c: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            let n = a.len() - 1;
            idx[k] = c % n;
            c /= n;
        }
        idx
    }

    pub fn horizontal_volume(&self, c: usize) -> f64 {
        self.horizontal_index(c)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a[i + 1] - a[i])
            .product()
    }

    pub fn horizontal_center(&self, c: usize) -> Vec<f64> {
        self.horizontal_index(c)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| 0.5 * (a[i] + a[i + 1]))
            .collect()
    }

    pub fn layer_height(&self, k: usize) -> f64 {
        self.vertical_edges[k + 1] - self.vertical_edges[k]
    }

    /// Densities of layer `k`, one per horizontal cell.
    pub fn layer(&self, k: usize) -> &[f64] {
        let n = self.cells_per_layer();
        &self.density[k * n..(k + 1) * n]
    }

    /// Mass of each vertical layer.
    pub fn layer_masses(&self) -> Vec<f64> {
        (0..self.n_layers())
            .map(|k| {
                let h = self.layer_height(k);
                self.layer(k)
                    .iter()
                    .enumerate()
                    .map(|(c, d)| d * self.horizontal_volume(c) * h)
                    .sum()
            })
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.layer_masses().iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.axes.clone(),
            self.vertical_edges.clone(),
            self.density.iter().map(|d| d * factor).collect(),
        )
    }

    pub fn normalized(&self) -> Result<Self> {
        self.scaled(1.0 / self.total_mass())
    }
}

/// Vertical marginal with its step CDF and quantile function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerticalProfile {
    heights: Vec<f64>,
    masses: Vec<f64>,
    /// `F(heights[i])`; the last entry is exactly 1.
    cumulative: Vec<f64>,
}

impl VerticalProfile {
    /// Builds a profile from (height, mass) pairs; equal heights are merged.
    pub fn new(mut pairs: Vec<(f64, f64)>) -> Result<Self> {
        pairs.retain(|p| p.1 > 0.0);
        if pairs.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if pairs.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
            return Err(Error::InvalidMeasure("non-finite height or mass".into()));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut heights: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut masses: Vec<f64> = Vec::with_capacity(pairs.len());
        for (y, m) in pairs {
            if heights.last() == Some(&y) {
                *masses.last_mut().unwrap() += m;
            } else {
                heights.push(y);
                masses.push(m);
            }
        }
        let total: f64 = masses.iter().sum();
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = masses
            .iter()
            .map(|m| {
                acc += m;
                (acc / total).min(1.0)
            })
            .collect();
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(VerticalProfile { heights, masses, cumulative })
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Cumulative normalized mass at each height, `F(y_i)`.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Right-continuous normalized CDF.
    pub fn cdf(&self, y: f64) -> f64 {
        let n = self.heights.partition_point(|h| *h <= y);
        if n == 0 {
            0.0
        } else {
            self.cumulative[n - 1]
        }
    }

    /// Index of the atom whose level interval `(F(y_{i-1}), F(y_i)]` holds `l`.
    /// `l <= 0` maps to the first atom.
    pub fn atom_at_level(&self, l: f64) -> usize {
        self.cumulative.partition_point(|c| *c < l).min(self.heights.len() - 1)
    }

    /// Left-continuous quantile `q(l) = min { y : F(y) >= l }`.
    pub fn quantile(&self, l: f64) -> f64 {
        self.heights[self.atom_at_level(l)]
    }

    /// Level breakpoints `0 = F(y_0-) < F(y_1) < ... < F(y_k) = 1`.
    pub fn levels(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.cumulative.len() + 1);
        v.push(0.0);
        v.extend_from_slice(&self.cumulative);
        v
    }

    /// The normalized marginal as a one-dimensional discrete probability.
    pub fn to_discrete_1d(&self) -> Result<crate::ot1d::Discrete1D> {
        let total = self.total_mass();
        crate::ot1d::Discrete1D::new(
            self.heights.clone(),
            self.masses.iter().map(|m| m / total).collect(),
        )
    }
}

/// Vertically rescaled measure: on each level interval
/// `(breakpoints[j], breakpoints[j+1]]` the horizontal slice is `slices[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredMeasure {
    breakpoints: Vec<f64>,
    slices: Vec<DiscreteMeasure>,
}

impl LayeredMeasure {
    pub fn new(breakpoints: Vec<f64>, slices: Vec<DiscreteMeasure>) -> Result<Self> {
        if breakpoints.len() != slices.len() + 1 || slices.is_empty() {
            return Err(Error::InvalidMeasure("need one slice per level interval".into()));
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
            return Err(Error::InvalidMeasure("level breakpoints must span [0, 1]".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidMeasure("level breakpoints must increase".into()));
        }
        if let Some(s) = slices.iter().find(|s| !s.is_probability()) {
            return Err(Error::NotProbability { total: s.total_mass() });
        }
        // maximal intervals: merge equal neighbours
        let mut bp = vec![0.0];
        let mut out: Vec<DiscreteMeasure> = Vec::with_capacity(slices.len());
        for (j, s) in slices.into_iter().enumerate() {
            if out.last() == Some(&s) {
                *bp.last_mut().unwrap() = breakpoints[j + 1];
            } else {
                out.push(s);
                bp.push(breakpoints[j + 1]);
            }
        }
        Ok(LayeredMeasure { breakpoints: bp, slices: out })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slices(&self) -> &[DiscreteMeasure] {
        &self.slices
    }

    /// Slice at level `l` (left-open intervals; `l <= 0` gives the first).
    pub fn slice_at(&self, l: f64) -> &DiscreteMeasure {
        let j = self.breakpoints[1..].partition_point(|b| *b < l);
        &self.slices[j.min(self.slices.len() - 1)]
    }
}

/// One atom per cell with positive density, placed at the cell center with
/// weight `density * volume`.
pub fn from_grid(g: &GriddedMeasure) -> Result<AtomicMeasure> {
    let ncell = g.cells_per_layer();
    let mut atoms = Vec::new();
    for k in 0..g.n_layers() {
        let yc = 0.5 * (g.vertical_edges[k] + g.vertical_edges[k + 1]);
        let h = g.layer_height(k);
        for c in 0..ncell {
            let d = g.layer(k)[c];
            if d > 0.0 {
                atoms.push(Atom::new(g.horizontal_center(c), yc, d * g.horizontal_volume(c) * h));
            }
        }
    }
    if atoms.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    AtomicMeasure::new(g.dim(), atoms)
}

/// Pushforward onto the height coordinate.
pub fn vertical_marginal(mu: &AtomicMeasure) -> VerticalProfile {
    VerticalProfile::new(mu.atoms.iter().map(|a| (a.y, a.w)).collect())
        .expect("AtomicMeasure is nonempty with positive weights")
}

/// Scales weights by `1/|mu|`.
pub fn normalize(mu: &AtomicMeasure) -> Result<AtomicMeasure> {
    let total = mu.total_mass();
    if !(total > 0.0) {
        return Err(Error::EmptyMeasure);
    }
    if total == 1.0 {
        return Ok(mu.clone());
    }
    mu.scaled(1.0 / total)
}
