//! Gram matrices of Teugels monomials and their monic Gram-Schmidt orthogonalisation.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::levy_model::{LevyModel, Region};
use crate::multi_index::{graded_lex_enumerate, MultiIndex};
use crate::quadrature::Tolerance;

/// Default pruning tolerance for residual norms.
pub const DEFAULT_PRUNE_TOL: f64 = 1e-12;
/// Default cap on the basis degree.
pub const MAX_DEGREE: u32 = 6;

/// Bracket rates `<Y^p, Y^q>` per unit time, indexed in graded-lex order.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub order: Vec<MultiIndex>,
    pub entries: Vec<Vec<f64>>,
}

impl GramMatrix {
    pub fn size(&self) -> usize {
        self.order.len()
    }

    /// Same matrix under a different ordering of the index set.
    pub fn reorder(&self, order: Vec<MultiIndex>) -> Result<GramMatrix> {
        let pos: HashMap<&MultiIndex, usize> = self.order.iter().enumerate().map(|(i, p)| (p, i)).collect();
        let idx = order
            .iter()
            .map(|p| {
                pos.get(p)
                    .copied()
                    .ok_or_else(|| Error::Argument(format!("{p} not in gram index set")))
            })
            .collect::<Result<Vec<_>>>()?;
        if idx.len() != self.order.len() {
            return Err(Error::Argument("reordering must be a permutation".into()));
        }
        let entries = idx
            .iter()
            .map(|&i| idx.iter().map(|&j| self.entries[i][j]).collect())
            .collect();
        Ok(GramMatrix { order, entries })
    }
}

/// Gram matrix with entries `m_{p+q}` plus `σ_ij` on the degree-1 block, `1 <= |p|, |q| <= D`.
pub fn gram_matrix(model: &LevyModel, max_degree: u32) -> Result<GramMatrix> {
    gram_matrix_with(model, max_degree, Tolerance::default())
}

pub fn gram_matrix_with(model: &LevyModel, max_degree: u32, tol: Tolerance) -> Result<GramMatrix> {
    if max_degree == 0 || max_degree > 2 * MAX_DEGREE {
        return Err(Error::Argument(format!(
            "basis degree must lie in 1..={}",
            2 * MAX_DEGREE
        )));
    }
    let n = model.dim();
    let order = graded_lex_enumerate(n, max_degree);
    let mut cache: HashMap<MultiIndex, f64> = HashMap::new();
    let size = order.len();
    let mut entries = vec![vec![0.0; size]; size];
    for i in 0..size {
        for j in 0..=i {
            let s = order[i].add(&order[j]);
            let m = match cache.get(&s) {
                Some(v) => *v,
                None => {
                    let v = model.moment(&s, tol)?;
                    cache.insert(s, v);
                    v
                }
            };
            let mut v = m;
            if let (Some(a), Some(b)) = (order[i].unit_axis(), order[j].unit_axis()) {
                v += model.sigma()[a][b];
            }
            entries[i][j] = v;
            entries[j][i] = v;
        }
    }
    Ok(GramMatrix { order, entries })
}

/// Neumaier-compensated dot product.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let v = x * y;
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn mat_vec(g: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    g.iter().map(|row| dot(row, v)).collect()
}

/// Monic orthogonal basis `H^p = Σ_q c_{pq} Y^q` of the Teugels martingales.
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    n: usize,
    max_degree: u32,
    order: Vec<MultiIndex>,
    /// Row `k` holds `c_{p_k q}` for every `q` in `order`; lower triangular with unit diagonal.
    coeffs: Vec<Vec<f64>>,
    norms_sq: Vec<f64>,
    kept: Vec<bool>,
    degree1_inverse: Option<Vec<Vec<f64>>>,
    /// Compensator rates per index: `ã_i` for `|q| = 1`, `m_q` otherwise.
    compensators: Vec<f64>,
}

/// Orthogonalise the Gram matrix in its own order (modified Gram-Schmidt in the Gram inner product).
///
/// A direction is pruned when its residual norm² falls below `tol` times its own Gram diagonal.
pub fn gram_schmidt(gram: &GramMatrix, tol: f64) -> Result<OrthoBasis> {
    let size = gram.size();
    let g = &gram.entries;
    if g.len() != size || g.iter().any(|r| r.len() != size) {
        return Err(Error::Argument("gram matrix is not square".into()));
    }
    for i in 0..size {
        for j in 0..i {
            let scale = (g[i][i].abs() * g[j][j].abs()).sqrt().max(f64::MIN_POSITIVE);
            if (g[i][j] - g[j][i]).abs() > 1e-12 * scale {
                return Err(Error::Argument("gram matrix is not symmetric".into()));
            }
        }
    }
    let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(size);
    let mut gc: Vec<Vec<f64>> = Vec::with_capacity(size);
    let mut norms_sq = Vec::with_capacity(size);
    let mut kept: Vec<bool> = Vec::with_capacity(size);
    for k in 0..size {
        let mut v = vec![0.0; size];
        v[k] = 1.0;
        for j in 0..k {
            if !kept[j] {
                continue;
            }
            let r = dot(&gc[j], &v) / norms_sq[j];
            for (vi, cj) in v.iter_mut().zip(&coeffs[j]) {
                *vi -= r * cj;
            }
            v[k] = 1.0;
        }
        let w = mat_vec(g, &v);
        let d = dot(&w, &v);
        let scale = g[k][k].abs();
        if d < -tol * scale.max(f64::MIN_POSITIVE) && d < -1e-300 {
            return Err(Error::Numerical(format!(
                "negative residual norm² {d:e} at {}: gram matrix is not positive semidefinite",
                gram.order[k]
            )));
        }
        let keep = d > tol * scale && d > 0.0;
        norms_sq.push(d.max(0.0));
        kept.push(keep);
        coeffs.push(v);
        gc.push(w);
    }
    let n = gram.order.first().map(|p| p.dim()).unwrap_or(0);
    let max_degree = gram.order.iter().map(|p| p.degree()).max().unwrap_or(0);
    let degree1_inverse = degree1_block_inverse(&gram.order, &coeffs, &kept);
    Ok(OrthoBasis {
        n,
        max_degree,
        order: gram.order.clone(),
        coeffs,
        norms_sq,
        kept,
        degree1_inverse,
        compensators: vec![0.0; size],
    })
}

fn degree1_block_inverse(order: &[MultiIndex], coeffs: &[Vec<f64>], kept: &[bool]) -> Option<Vec<Vec<f64>>> {
    let idx: Vec<usize> = (0..order.len()).filter(|&k| order[k].degree() == 1).collect();
    let n = order.first()?.dim();
    if idx.len() != n || idx.iter().any(|&k| !kept[k]) {
        return None;
    }
    // unit lower-triangular inverse by forward substitution
    let c: Vec<Vec<f64>> = idx
        .iter()
        .map(|&r| idx.iter().map(|&s| coeffs[r][s]).collect())
        .collect();
    let mut inv = vec![vec![0.0; n]; n];
    for col in 0..n {
        for row in 0..n {
            let rhs = if row == col { 1.0 } else { 0.0 };
            let s: f64 = (0..row).map(|k| c[row][k] * inv[k][col]).sum();
            inv[row][col] = (rhs - s) / c[row][row];
        }
    }
    Some(inv)
}

/// Orthogonal basis of degree `max_degree` for `model` with compensators attached.
pub fn build_basis(model: &LevyModel, max_degree: u32, tol: f64) -> Result<OrthoBasis> {
    if max_degree > MAX_DEGREE {
        return Err(Error::Argument(format!("basis degree is capped at {MAX_DEGREE}")));
    }
    let gram = gram_matrix(model, max_degree)?;
    let basis = gram_schmidt(&gram, tol)?;
    basis.with_compensators(model, Region::All)
}

/// Row of the CSV export.
#[derive(Debug, Serialize)]
struct CoeffRow {
    degree: u32,
    p: String,
    q: String,
    c_q: f64,
}

#[derive(Debug, Serialize)]
struct NormRow {
    p: String,
    degree: u32,
    norm_sq: f64,
    kept: bool,
}

impl OrthoBasis {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn order(&self) -> &[MultiIndex] {
        &self.order
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn norms_sq(&self) -> &[f64] {
        &self.norms_sq
    }

    pub fn kept_mask(&self) -> &[bool] {
        &self.kept
    }

    pub fn compensators(&self) -> &[f64] {
        &self.compensators
    }

    pub fn position(&self, p: &MultiIndex) -> Option<usize> {
        self.order.iter().position(|q| q == p)
    }

    /// Positions of kept directions with `|p| <= degree`.
    pub fn kept_up_to(&self, degree: u32) -> Vec<usize> {
        (0..self.order.len())
            .filter(|&k| self.kept[k] && self.order[k].degree() <= degree)
            .collect()
    }

    /// `[c̃_ij]`, inverse of the degree-1 coefficient block.
    pub fn degree1_inverse(&self) -> Result<&[Vec<f64>]> {
        self.degree1_inverse.as_deref().ok_or_else(|| {
            Error::Degenerate("a degree-1 direction was pruned (degenerate dependence between coordinates)".into())
        })
    }

    /// Degree-1 coefficient block `[c_{e_i e_j}]`.
    pub fn degree1_coefficients(&self) -> Vec<Vec<f64>> {
        let idx: Vec<usize> = (0..self.order.len()).filter(|&k| self.order[k].degree() == 1).collect();
        idx.iter()
            .map(|&r| idx.iter().map(|&s| self.coeffs[r][s]).collect())
            .collect()
    }

    /// Attach compensators for `Y^q = X^q − t·rate`: `ã` for degree 1 and `∫_region y^q ν` above.
    pub fn with_compensators(mut self, model: &LevyModel, region: Region) -> Result<Self> {
        let mean = model.compensator_mean()?;
        let tol = Tolerance::default();
        let mut comps = Vec::with_capacity(self.order.len());
        for q in &self.order {
            comps.push(match q.unit_axis() {
                Some(i) => mean[i],
                None => model.moment_in(q, region, tol)?,
            });
        }
        self.compensators = comps;
        Ok(self)
    }

    /// Compensators of the compound-Poisson approximation with truncation `eps`.
    pub fn with_truncation(self, model: &LevyModel, eps: f64) -> Result<Self> {
        self.with_compensators(model, Region::Simulated(eps))
    }

    fn checked(&self, p: &MultiIndex) -> Result<usize> {
        let k = self
            .position(p)
            .ok_or_else(|| Error::Argument(format!("{p} is not in the basis index set")))?;
        if !self.kept[k] {
            return Err(Error::Degenerate(format!(
                "{p} was pruned: its polynomial vanishes ν-a.e."
            )));
        }
        Ok(k)
    }

    /// Value of row `k` at `x`, all terms.
    pub fn eval_row(&self, k: usize, x: &[f64]) -> f64 {
        (0..=k)
            .filter(|&j| self.coeffs[k][j] != 0.0)
            .map(|j| self.coeffs[k][j] * self.order[j].monomial(x))
            .sum()
    }

    /// Value of row `k` at `x` without degree-1 terms (`x^p` itself when `|p| = 1`).
    pub fn eval_row_tilde(&self, k: usize, x: &[f64]) -> f64 {
        if self.order[k].degree() == 1 {
            return self.order[k].monomial(x);
        }
        (0..=k)
            .filter(|&j| self.order[j].degree() >= 2 && self.coeffs[k][j] != 0.0)
            .map(|j| self.coeffs[k][j] * self.order[j].monomial(x))
            .sum()
    }

    /// Monic polynomial `p^p(x)`; pruned indices are rejected.
    pub fn evaluate_polynomial(&self, p: &MultiIndex, x: &[f64]) -> Result<f64> {
        let k = self.checked(p)?;
        Ok(self.eval_row(k, x))
    }

    /// Residual polynomial of `p` whether or not it was pruned.
    pub fn evaluate_candidate(&self, p: &MultiIndex, x: &[f64]) -> Result<f64> {
        let k = self
            .position(p)
            .ok_or_else(|| Error::Argument(format!("{p} is not in the basis index set")))?;
        Ok(self.eval_row(k, x))
    }

    /// `p̃^p(x)`: the polynomial without its degree-1 terms.
    pub fn evaluate_ptilde(&self, p: &MultiIndex, x: &[f64]) -> Result<f64> {
        let k = self.checked(p)?;
        Ok(self.eval_row_tilde(k, x))
    }

    /// `‖H^p‖` per unit square-root time.
    pub fn norm(&self, k: usize) -> f64 {
        self.norms_sq[k].sqrt()
    }

    /// Orthonormal polynomial `p^p(x) / ‖H^p‖`.
    pub fn evaluate_orthonormal(&self, k: usize, x: &[f64]) -> f64 {
        self.eval_row(k, x) / self.norm(k)
    }

    /// Drift rate of `H^p`: `Σ_q c_{pq} · compensator_q`.
    pub fn drift_rate(&self, k: usize) -> f64 {
        (0..=k).map(|j| self.coeffs[k][j] * self.compensators[j]).sum()
    }

    /// CSV with columns `degree,p,q,c_q` plus a sidecar `<stem>_norms.csv`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for (k, p) in self.order.iter().enumerate() {
            for j in 0..=k {
                if self.coeffs[k][j] != 0.0 {
                    w.serialize(CoeffRow {
                        degree: p.degree(),
                        p: p.label(),
                        q: self.order[j].label(),
                        c_q: self.coeffs[k][j],
                    })?;
                }
            }
        }
        w.flush()?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("basis");
        let sidecar = path.with_file_name(format!("{stem}_norms.csv"));
        let mut w = csv::Writer::from_path(sidecar)?;
        for (k, p) in self.order.iter().enumerate() {
            w.serialize(NormRow {
                p: p.label(),
                degree: p.degree(),
                norm_sq: self.norms_sq[k],
                kept: self.kept[k],
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable summary.
    pub fn describe(&self, out: &mut dyn Write) -> std::io::Result<()> {
        for (k, p) in self.order.iter().enumerate() {
            let terms: Vec<String> = (0..=k)
                .filter(|&j| self.coeffs[k][j] != 0.0)
                .map(|j| format!("{:+.6}·x^{}", self.coeffs[k][j], self.order[j]))
                .collect();
            writeln!(
                out,
                "{p} {} norm²={:.6e}  {}",
                if self.kept[k] { "kept  " } else { "pruned" },
                self.norms_sq[k],
                terms.join(" ")
            )?;
        }
        Ok(())
    }
}
