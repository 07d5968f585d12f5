//! Revised primal simplex for linear programs whose columns are index tuples
//! of a product of finite marginals:
//!
//! ```text
//! minimize   sum_T c(T) g(T)
//! subject to sum_{T : T_a = i} g(T) = w_a[i]   for every marginal a, atom i
//!            g >= 0
//! ```
//!
//! One constraint per marginal after the first is dropped (each marginal's
//! rows sum to the same total), which leaves a full-rank system with
//! `sum_a S_a - m + 1` rows. A basic solution therefore has at most that many
//! positive entries.
//!
//! Two phases with artificial variables; Dantzig pricing with lowest-index
//! tie breaks, falling back to Bland's rule after a run of degenerate pivots.
//! The explicit basis inverse is refactorized periodically.

use std::io::Write;

use nalgebra::DMatrix;

use crate::{Error, Result};

const NO_ROW: u32 = u32::MAX;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;
const DEGENERATE_RUN: usize = 50;

/// Optimality certificate of a solve.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LpCertificate {
    pub primal: f64,
    pub dual: f64,
    /// `|primal - dual|`.
    pub gap: f64,
    /// Largest negative reduced cost magnitude (0 when dual feasible).
    pub dual_violation: f64,
    pub iterations: usize,
}

pub(crate) struct ProductLp {
    sizes: Vec<usize>,
    costs: Vec<f64>,
    /// `m` row indices per column, `NO_ROW` for dropped constraints.
    col_rows: Vec<u32>,
    rhs: Vec<f64>,
}

pub(crate) struct LpSolution {
    /// `(column, mass)` for positive basic columns, sorted by column.
    pub entries: Vec<(usize, f64)>,
    pub certificate: LpCertificate,
}

pub(crate) fn column_count(sizes: &[usize], cap: usize) -> Result<usize> {
    let mut n: usize = 1;
    for &s in sizes {
        n = match n.checked_mul(s) {
            Some(v) if v <= cap => v,
            _ => {
                let approx = sizes.iter().map(|&s| s as f64).product::<f64>();
                return Err(Error::ProblemTooLarge { columns: approx.min(usize::MAX as f64) as usize, cap });
            }
        };
    }
    Ok(n)
}

/// Decodes a mixed-radix column index into a tuple, first marginal most
/// significant.
pub(crate) fn decode(mut col: usize, sizes: &[usize], out: &mut [usize]) {
    for a in (0..sizes.len()).rev() {
        out[a] = col % sizes[a];
        col /= sizes[a];
    }
}

impl ProductLp {
    /// `cost(tuple)` is evaluated once per column.
    pub fn new(marginals: &[&[f64]], cap: usize, mut cost: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let sizes: Vec<usize> = marginals.iter().map(|w| w.len()).collect();
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::EmptyMeasure);
        }
        let n = column_count(&sizes, cap)?;
        let m = sizes.len();
        let mut row_of: Vec<Vec<u32>> = Vec::with_capacity(m);
        let mut rhs = Vec::new();
        for (a, w) in marginals.iter().enumerate() {
            let keep = if a == 0 { w.len() } else { w.len() - 1 };
            let mut rows = vec![NO_ROW; w.len()];
            for (i, r) in rows.iter_mut().enumerate().take(keep) {
                *r = rhs.len() as u32;
                rhs.push(w[i]);
            }
            row_of.push(rows);
        }
        let mut costs = Vec::with_capacity(n);
        let mut col_rows = Vec::with_capacity(n * m);
        let mut tuple = vec![0usize; m];
        for j in 0..n {
            decode(j, &sizes, &mut tuple);
            costs.push(cost(&tuple));
            for a in 0..m {
                col_rows.push(row_of[a][tuple[a]]);
            }
        }
        Ok(ProductLp { sizes, costs, col_rows, rhs })
    }

    pub fn n_cols(&self) -> usize {
        self.costs.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn rows(&self, col: usize) -> &[u32] {
        let m = self.sizes.len();
        &self.col_rows[col * m..(col + 1) * m]
    }

    /// Plain-text dump of the instance (format documented in docs/formats.md).
    pub fn write_instance<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "LWOT-LP 1")?;
        writeln!(w, "sizes {}", join(self.sizes.iter()))?;
        writeln!(w, "rows {}", self.n_rows())?;
        writeln!(w, "rhs {}", join(self.rhs.iter().map(|v| format!("{v:?}"))))?;
        writeln!(w, "columns {}", self.n_cols())?;
        let mut tuple = vec![0usize; self.sizes.len()];
        for j in 0..self.n_cols() {
            decode(j, &self.sizes, &mut tuple);
            let rows: Vec<String> =
                self.rows(j).iter().filter(|r| **r != NO_ROW).map(|r| r.to_string()).collect();
            writeln!(w, "col {j} tuple {} cost {:?} rows {}", join(tuple.iter()), self.costs[j], rows.join(" "))?;
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution> {
        Simplex::new(self).run()
    }
}

fn join<T: ToString>(it: impl Iterator<Item = T>) -> String {
    it.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

struct Simplex<'a> {
    lp: &'a ProductLp,
    n: usize,
    r: usize,
    basis: Vec<usize>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    One,
    Two,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a ProductLp) -> Self {
        let r = lp.n_rows();
        let n = lp.n_cols();
        let mut binv = vec![0.0; r * r];
        for k in 0..r {
            binv[k * r + k] = 1.0;
        }
        Simplex {
            lp,
            n,
            r,
            basis: (n..n + r).collect(),
            binv,
            xb: lp.rhs.clone(),
            iterations: 0,
            since_refactor: 0,
        }
    }

    fn is_artificial(&self, col: usize) -> bool {
        col >= self.n
    }

    fn col_cost(&self, col: usize, phase: Phase) -> f64 {
        match (phase, self.is_artificial(col)) {
            (Phase::One, true) => 1.0,
            (Phase::One, false) => 0.0,
            (Phase::Two, true) => 0.0,
            (Phase::Two, false) => self.lp.costs[col],
        }
    }

    fn duals(&self, phase: Phase) -> Vec<f64> {
        let r = self.r;
        let mut pi = vec![0.0; r];
        for k in 0..r {
            let c = self.col_cost(self.basis[k], phase);
            if c != 0.0 {
                let row = &self.binv[k * r..(k + 1) * r];
                for (p, b) in pi.iter_mut().zip(row) {
                    *p += c * b;
                }
            }
        }
        pi
    }

    fn reduced_cost(&self, col: usize, pi: &[f64], phase: Phase) -> f64 {
        let mut d = self.col_cost(col, phase);
        if self.is_artificial(col) {
            d -= pi[col - self.n];
        } else {
            for &row in self.lp.rows(col) {
                if row != NO_ROW {
                    d -= pi[row as usize];
                }
            }
        }
        d
    }

    /// `B^{-1} a_col`.
    fn direction(&self, col: usize) -> Vec<f64> {
        let r = self.r;
        let mut u = vec![0.0; r];
        let mut add_column = |row: usize| {
            for k in 0..r {
                u[k] += self.binv[k * r + row];
            }
        };
        if self.is_artificial(col) {
            add_column(col - self.n);
        } else {
            for &row in self.lp.rows(col) {
                if row != NO_ROW {
                    add_column(row as usize);
                }
            }
        }
        u
    }

    fn pivot(&mut self, p: usize, col: usize, u: &[f64]) {
        let r = self.r;
        let theta = self.xb[p] / u[p];
        for k in 0..r {
            if k != p {
                self.xb[k] -= theta * u[k];
                if self.xb[k] < 0.0 && self.xb[k] > -1e-13 {
                    self.xb[k] = 0.0;
                }
            }
        }
        self.xb[p] = theta;
        let inv = 1.0 / u[p];
        let prow: Vec<f64> = self.binv[p * r..(p + 1) * r].iter().map(|v| v * inv).collect();
        for k in 0..r {
            if k == p || u[k] == 0.0 {
                continue;
            }
            let f = u[k];
            let row = &mut self.binv[k * r..(k + 1) * r];
            for (b, q) in row.iter_mut().zip(&prow) {
                *b -= f * q;
            }
        }
        self.binv[p * r..(p + 1) * r].copy_from_slice(&prow);
        self.basis[p] = col;
        self.iterations += 1;
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor();
        }
    }

    fn refactor(&mut self) {
        let r = self.r;
        let mut b = DMatrix::<f64>::zeros(r, r);
        for (k, &col) in self.basis.iter().enumerate() {
            if self.is_artificial(col) {
                b[(col - self.n, k)] = 1.0;
            } else {
                for &row in self.lp.rows(col) {
                    if row != NO_ROW {
                        b[(row as usize, k)] = 1.0;
                    }
                }
            }
        }
        if let Some(inv) = b.try_inverse() {
            for k in 0..r {
                for j in 0..r {
                    self.binv[k * r + j] = inv[(k, j)];
                }
            }
            for k in 0..r {
                let v: f64 = (0..r).map(|j| self.binv[k * r + j] * self.lp.rhs[j]).sum();
                self.xb[k] = if v.abs() < 1e-14 { 0.0 } else { v };
            }
        }
        self.since_refactor = 0;
    }

    fn iterate(&mut self, phase: Phase) -> Result<()> {
        let max_iter = 50 * (self.n + self.r) + 1000;
        let scale = match phase {
            Phase::One => 1.0,
            Phase::Two => self.lp.costs.iter().fold(1.0f64, |m, c| m.max(c.abs())),
        };
        let dtol = 1e-12 * scale;
        let mut degenerate_run = 0usize;
        let mut in_basis = vec![false; self.n];
        for &b in &self.basis {
            if b < self.n {
                in_basis[b] = true;
            }
        }
        loop {
            if self.iterations > max_iter {
                return Err(Error::Solver(format!("no convergence after {} pivots", self.iterations)));
            }
            let pi = self.duals(phase);
            let bland = degenerate_run >= DEGENERATE_RUN;
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.n {
                if in_basis[j] {
                    continue;
                }
                let d = self.reduced_cost(j, &pi, phase);
                if d < -dtol {
                    if bland {
                        entering = Some((j, d));
                        break;
                    }
                    if entering.map_or(true, |(_, best)| d < best) {
                        entering = Some((j, d));
                    }
                }
            }
            let Some((q, _)) = entering else { return Ok(()) };
            let u = self.direction(q);
            let mut leave: Option<(usize, f64)> = None;
            for k in 0..self.r {
                if u[k] > PIVOT_TOL {
                    let ratio = self.xb[k].max(0.0) / u[k];
                    let better = match leave {
                        None => true,
                        Some((p, best)) => {
                            ratio < best - 1e-15 || (ratio <= best + 1e-15 && self.basis[k] < self.basis[p])
                        }
                    };
                    if better {
                        leave = Some((k, ratio));
                    }
                }
            }
            let Some((p, theta)) = leave else {
                return Err(Error::Solver("unbounded direction in a bounded transport LP".into()));
            };
            degenerate_run = if theta <= 1e-15 { degenerate_run + 1 } else { 0 };
            let out = self.basis[p];
            if out < self.n {
                in_basis[out] = false;
            }
            self.pivot(p, q, &u);
            in_basis[q] = true;
        }
    }

    /// Pivots zero-level artificials out of the basis where possible.
    fn expel_artificials(&mut self) {
        let r = self.r;
        for p in 0..r {
            if !self.is_artificial(self.basis[p]) {
                continue;
            }
            let in_basis: std::collections::HashSet<usize> = self.basis.iter().copied().collect();
            let row: Vec<f64> = self.binv[p * r..(p + 1) * r].to_vec();
            let found = (0..self.n).find(|&j| {
                !in_basis.contains(&j)
                    && self
                        .lp
                        .rows(j)
                        .iter()
                        .filter(|&&x| x != NO_ROW)
                        .map(|&x| row[x as usize])
                        .sum::<f64>()
                        .abs()
                        > PIVOT_TOL
            });
            if let Some(j) = found {
                self.xb[p] = 0.0;
                let u = self.direction(j);
                self.pivot(p, j, &u);
            }
        }
    }

    fn run(mut self) -> Result<LpSolution> {
        self.iterate(Phase::One)?;
        let infeasibility: f64 = self
            .basis
            .iter()
            .zip(&self.xb)
            .filter(|(b, _)| **b >= self.n)
            .map(|(_, x)| x.abs())
            .sum();
        let total: f64 = self.lp.rhs.iter().sum::<f64>().max(1.0);
        if infeasibility > 1e-9 * total {
            return Err(Error::Solver(format!("marginals are inconsistent (phase one residual {infeasibility:e})")));
        }
        self.expel_artificials();
        self.refactor();
        self.iterate(Phase::Two)?;
        self.refactor();

        let pi = self.duals(Phase::Two);
        let mut entries: Vec<(usize, f64)> = self
            .basis
            .iter()
            .zip(&self.xb)
            .filter(|(b, x)| **b < self.n && **x > 1e-15)
            .map(|(b, x)| (*b, *x))
            .collect();
        entries.sort_by_key(|e| e.0);
        let primal: f64 = entries.iter().map(|(j, x)| self.lp.costs[*j] * x).sum();
        let dual: f64 = pi.iter().zip(&self.lp.rhs).map(|(p, b)| p * b).sum();
        let mut violation = 0.0f64;
        for j in 0..self.n {
            let d = self.reduced_cost(j, &pi, Phase::Two);
            violation = violation.max(-d);
        }
        Ok(LpSolution {
            entries,
            certificate: LpCertificate {
                primal,
                dual,
                gap: (primal - dual).abs(),
                dual_violation: violation,
                iterations: self.iterations,
            },
        })
    }
}
