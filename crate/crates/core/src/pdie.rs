//! Finite-difference IMEX solvers for the linear and nonlinear PDIEs of pure-jump Lévy models.
//!
//! `ν` is replaced by a lattice stencil: cell `j ≠ 0` of the space grid carries mass `w_j`
//! at offset `y_j = j h` (atoms keep their exact offsets), and the centre cell contributes the
//! diffusion `½ ∫_{cell 0} y_d² ν`. The drift `ã − Σ w_j y_j` makes affine functions exact.
//! Drift and diffusion are implicit (one tridiagonal solve per dimension, delta form);
//! the jump sum and the driver are explicit.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levy_model::{clayton_copula, JumpComponent, LevyModel, MarginalMeasure, Region1};
use crate::orthobasis::OrthoBasis;
use crate::quadrature::Tolerance;
use crate::simulator::TimeGrid;

/// Relative second-moment mass of `ν` allowed outside the jump box.
pub const DEFAULT_JUMP_CUTOFF: f64 = 1e-8;

/// Tensor grid with uniform spacing per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    nodes: Vec<usize>,
}

impl SpaceGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        let n = lower.len();
        if n == 0 || upper.len() != n || nodes.len() != n {
            return Err(Error::Argument(
                "grid bounds and node counts must share a nonzero dimension".into(),
            ));
        }
        for d in 0..n {
            if !(lower[d].is_finite() && upper[d].is_finite() && lower[d] < upper[d]) {
                return Err(Error::Argument(format!(
                    "grid dimension {d} needs finite lower < upper"
                )));
            }
            if nodes[d] < 3 {
                return Err(Error::Argument(format!("grid dimension {d} needs at least 3 nodes")));
            }
        }
        Ok(Self { lower, upper, nodes })
    }

    /// One-dimensional grid.
    pub fn line(lower: f64, upper: f64, nodes: usize) -> Result<Self> {
        Self::new(vec![lower], vec![upper], vec![nodes])
    }

    /// Grid with spacing `h` in every dimension covering `[lower, upper]` and containing `anchor` as a node.
    pub fn with_spacing(lower: &[f64], upper: &[f64], h: f64, anchor: &[f64]) -> Result<Self> {
        if !(h > 0.0) || lower.len() != upper.len() || anchor.len() != lower.len() {
            return Err(Error::Argument("spacing must be positive and bounds must match".into()));
        }
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut nodes = Vec::new();
        for d in 0..lower.len() {
            let below = ((anchor[d] - lower[d]) / h).ceil().max(1.0);
            let above = ((upper[d] - anchor[d]) / h).ceil().max(1.0);
            lo.push(anchor[d] - below * h);
            hi.push(anchor[d] + above * h);
            nodes.push((below + above) as usize + 1);
        }
        Self::new(lo, hi, nodes)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn spacing(&self, d: usize) -> f64 {
        (self.upper[d] - self.lower[d]) / (self.nodes[d] - 1) as f64
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn coord(&self, d: usize, i: usize) -> f64 {
        if i + 1 == self.nodes[d] {
            self.upper[d]
        } else {
            self.lower[d] + i as f64 * self.spacing(d)
        }
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dim()];
        for d in (0..self.dim().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.nodes[d + 1];
        }
        s
    }

    /// Multi-index of a flat node number (last dimension fastest).
    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            idx[d] = flat % self.nodes[d];
            flat /= self.nodes[d];
        }
        idx
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.unflatten(flat)
            .iter()
            .enumerate()
            .map(|(d, &i)| self.coord(d, i))
            .collect()
    }

    /// Fractional index of `x` along every dimension.
    fn position(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|d| (x[d] - self.lower[d]) / self.spacing(d))
            .collect()
    }

    /// Multilinear interpolation at fractional index `pos`, linear extrapolation outside.
    fn interpolate(&self, field: &[f64], strides: &[usize], pos: &[f64]) -> f64 {
        let n = self.dim();
        let mut base = 0usize;
        let mut frac = [0.0f64; 8];
        for d in 0..n {
            let last = (self.nodes[d] - 2) as f64;
            let i0 = pos[d].floor().clamp(0.0, last);
            frac[d] = pos[d] - i0;
            base += i0 as usize * strides[d];
        }
        let mut total = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut off = base;
            for d in 0..n {
                if corner >> d & 1 == 1 {
                    w *= frac[d];
                    off += strides[d];
                } else {
                    w *= 1.0 - frac[d];
                }
            }
            if w != 0.0 {
                total += w * field[off];
            }
        }
        total
    }
}

/// Lattice discretisation of the jump part of a model on a space grid.
#[derive(Debug, Clone)]
pub struct JumpStencil {
    /// Jump vectors `y_j`.
    pub offsets: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Implicit drift `ã − Σ w_j y_j`.
    pub drift: Vec<f64>,
    /// `½ ∫_{cell 0} y_d² ν(dy)` per dimension.
    pub diffusion: Vec<f64>,
}

impl JumpStencil {
    pub fn total_rate(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Largest stable step: jump CFL `1 / (2 Σ w)` and drift Courant `h_d / (2 |b_d|)`.
pub fn max_stable_dt(stencil: &JumpStencil, grid: &SpaceGrid) -> f64 {
    let mut dt = f64::INFINITY;
    let rate = stencil.total_rate();
    if rate > 0.0 {
        dt = dt.min(0.5 / rate);
    }
    for (d, b) in stencil.drift.iter().enumerate() {
        if *b != 0.0 {
            dt = dt.min(0.5 * grid.spacing(d) / b.abs());
        }
    }
    dt
}

/// Box half-width `Y` (a multiple of `h`) beyond which `∫ y² ν` is below `cutoff · ∫ y² ν`.
fn jump_box(m: &MarginalMeasure, h: f64, cutoff: f64, tol: Tolerance) -> Result<usize> {
    let total = m.moment(2, Region1::All, tol)?;
    let mut cells = 1usize;
    loop {
        let y = (cells as f64 + 0.5) * h;
        if m.moment(2, Region1::Outside(y), tol)? <= cutoff * total || cells > 1 << 20 {
            return Ok(cells);
        }
        cells *= 2;
    }
}

/// Cell edges `(j − ½) h` for `j in −J..=J+1`, split at the origin.
fn cell_pieces(h: f64, cells: usize) -> Vec<(i64, f64, f64)> {
    let j = cells as i64;
    let mut pieces = Vec::new();
    for k in -j..=j {
        let (a, b) = ((k as f64 - 0.5) * h, (k as f64 + 0.5) * h);
        if k == 0 {
            pieces.push((0, a, 0.0));
            pieces.push((0, 0.0, b));
        } else {
            pieces.push((k, a, b));
        }
    }
    pieces
}

/// Signed tail value `U(x)`, with `U(0±) = ±∞`.
fn signed_tail(m: &MarginalMeasure, x: f64, positive_side: bool, tol: Tolerance) -> Result<f64> {
    if x == 0.0 {
        return Ok(if positive_side {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        });
    }
    m.tail(x, tol)
}

/// Lattice stencil of `model` on `grid`.
pub fn build_stencil(model: &LevyModel, grid: &SpaceGrid, cutoff: f64) -> Result<JumpStencil> {
    let n = model.dim();
    if grid.dim() != n {
        return Err(Error::Argument(format!(
            "grid dimension {} differs from model dimension {n}",
            grid.dim()
        )));
    }
    if model.sigma().iter().flatten().any(|&v| v != 0.0) {
        return Err(Error::Unsupported("Brownian part in the jump PDIE".into()));
    }
    let tol = Tolerance::default();
    let mut offsets: Vec<Vec<f64>> = Vec::new();
    let mut weights = Vec::new();
    let mut diffusion = vec![0.0; n];
    for c in model.components() {
        match c {
            JumpComponent::Atoms(atoms) => {
                for a in atoms {
                    offsets.push(a.x.clone());
                    weights.push(a.intensity);
                }
            }
            JumpComponent::Copula { marginals, copula } => {
                if copula.is_none() || n == 1 {
                    for (d, m) in marginals.iter().enumerate() {
                        if !m.is_continuous() {
                            for (x, w) in m.atoms() {
                                let mut y = vec![0.0; n];
                                y[d] = x;
                                offsets.push(y);
                                weights.push(w);
                            }
                            continue;
                        }
                        let h = grid.spacing(d);
                        let cells = jump_box(m, h, cutoff, tol)? as i64;
                        for k in (-cells..=cells).filter(|&k| k != 0) {
                            let (a, b) = ((k as f64 - 0.5) * h, (k as f64 + 0.5) * h);
                            // mass chosen so the cell's second moment is exact at the node
                            let node = k as f64 * h;
                            let w = m.integrate(|y| y * y, Region1::Interval(a, b), tol, "stencil cell mass")?
                                / (node * node);
                            if w > 0.0 {
                                let mut y = vec![0.0; n];
                                y[d] = node;
                                offsets.push(y);
                                weights.push(w);
                            }
                        }
                        diffusion[d] += 0.5 * m.moment(2, Region1::Inside(0.5 * h), tol)?;
                    }
                } else if n == 2 {
                    let cp = copula.expect("copula present");
                    if !marginals.iter().all(|m| m.is_continuous()) {
                        return Err(Error::Unsupported(
                            "PDIE stencil for a copula with atomic marginals".into(),
                        ));
                    }
                    let h = [grid.spacing(0), grid.spacing(1)];
                    let cells = [
                        jump_box(&marginals[0], h[0], cutoff, tol)?,
                        jump_box(&marginals[1], h[1], cutoff, tol)?,
                    ];
                    let pieces = [cell_pieces(h[0], cells[0]), cell_pieces(h[1], cells[1])];
                    // tail values at each piece edge, oriented so the piece lies on one side of 0
                    let tails: Vec<Vec<(f64, f64)>> = (0..2)
                        .map(|d| {
                            pieces[d]
                                .iter()
                                .map(|&(_, a, b)| {
                                    let pos = a >= 0.0 && b > 0.0;
                                    Ok((
                                        signed_tail(&marginals[d], a, pos, tol)?,
                                        signed_tail(&marginals[d], b, pos, tol)?,
                                    ))
                                })
                                .collect::<Result<Vec<_>>>()
                        })
                        .collect::<Result<_>>()?;
                    let mut cell_mass: std::collections::BTreeMap<(i64, i64), f64> = Default::default();
                    for (p1, &(k1, _, _)) in pieces[0].iter().enumerate() {
                        for (p2, &(k2, _, _)) in pieces[1].iter().enumerate() {
                            if k1 == 0 && k2 == 0 {
                                continue;
                            }
                            let (u1a, u1b) = tails[0][p1];
                            let (u2a, u2b) = tails[1][p2];
                            let f = |u: f64, v: f64| clayton_copula(&[u, v], &cp);
                            let vol = f(u1a, u2a)? - f(u1a, u2b)? - f(u1b, u2a)? + f(u1b, u2b)?;
                            *cell_mass.entry((k1, k2)).or_insert(0.0) += vol.abs();
                        }
                    }
                    let mut lattice_m2 = [0.0; 2];
                    for ((k1, k2), w) in cell_mass {
                        if w > 0.0 {
                            let y = vec![k1 as f64 * h[0], k2 as f64 * h[1]];
                            lattice_m2[0] += w * y[0] * y[0];
                            lattice_m2[1] += w * y[1] * y[1];
                            offsets.push(y);
                            weights.push(w);
                        }
                    }
                    // diffusion takes the second moment the lattice misses on each axis
                    for d in 0..2 {
                        let reach = (cells[d] as f64 + 0.5) * h[d];
                        let m2 = marginals[d].moment(2, Region1::Inside(reach), tol)?;
                        diffusion[d] += 0.5 * (m2 - lattice_m2[d]).max(0.0);
                    }
                } else {
                    return Err(Error::Unsupported(format!(
                        "PDIE stencil for a {n}-dimensional copula model"
                    )));
                }
            }
            JumpComponent::Density(dens) => {
                // midpoint rule on lattice cells inside the support box
                let h: Vec<f64> = (0..n).map(|d| grid.spacing(d)).collect();
                let ranges: Vec<(i64, i64)> = (0..n)
                    .map(|d| {
                        let lo = (dens.lower[d].max(-1e3) / h[d]).floor() as i64;
                        let hi = (dens.upper[d].min(1e3) / h[d]).ceil() as i64;
                        (lo, hi)
                    })
                    .collect();
                let vol: f64 = h.iter().product();
                let mut k: Vec<i64> = ranges.iter().map(|r| r.0).collect();
                loop {
                    if k.iter().any(|&v| v != 0) {
                        let y: Vec<f64> = k.iter().zip(&h).map(|(&v, hd)| v as f64 * hd).collect();
                        let inside = y
                            .iter()
                            .enumerate()
                            .all(|(d, v)| *v >= dens.lower[d] && *v <= dens.upper[d]);
                        if inside {
                            let w = (dens.density)(&y) * vol;
                            if w > 0.0 {
                                offsets.push(y);
                                weights.push(w);
                            }
                        }
                    }
                    let mut d = 0;
                    loop {
                        if d == n {
                            break;
                        }
                        k[d] += 1;
                        if k[d] <= ranges[d].1 {
                            break;
                        }
                        k[d] = ranges[d].0;
                        d += 1;
                    }
                    if d == n {
                        break;
                    }
                }
            }
        }
    }
    let mean = model.compensator_mean()?;
    let drift = (0..n)
        .map(|d| mean[d] - offsets.iter().zip(&weights).map(|(y, w)| w * y[d]).sum::<f64>())
        .collect();
    Ok(JumpStencil {
        offsets,
        weights,
        drift,
        diffusion,
    })
}

/// Solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdieOptions {
    /// Number of time steps; `None` picks the smallest stable count.
    pub steps: Option<usize>,
    /// Accept steps above the stability bound.
    pub cfl_override: bool,
    pub jump_cutoff: f64,
    /// Fixed-point iteration of the driver at the new time level.
    pub implicit_driver: bool,
}

impl Default for PdieOptions {
    fn default() -> Self {
        Self {
            steps: None,
            cfl_override: false,
            jump_cutoff: DEFAULT_JUMP_CUTOFF,
            implicit_driver: false,
        }
    }
}

const DRIVER_MAX_ITERS: usize = 50;
const DRIVER_TOL: f64 = 1e-10;

/// Terminal function `x -> (g_1(x), …, g_m(x))`.
pub type Terminal<'a> = &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync);

type DriverFn = dyn Fn(f64, &[f64], &[Vec<f64>]) -> Vec<f64> + Send + Sync;

/// Driver `f(t, y, z)` with declared Lipschitz constant; `z[k]` is the coefficient table of component `k`.
#[derive(Clone)]
pub struct DriverFunction {
    f: Arc<DriverFn>,
    pub lipschitz: f64,
    /// False when `f` ignores `z`, which skips the coefficient tables.
    pub uses_z: bool,
}

impl std::fmt::Debug for DriverFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriverFunction")
            .field("lipschitz", &self.lipschitz)
            .field("uses_z", &self.uses_z)
            .finish()
    }
}

impl DriverFunction {
    pub fn new(
        lipschitz: f64,
        uses_z: bool,
        f: impl Fn(f64, &[f64], &[Vec<f64>]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Arc::new(f),
            lipschitz,
            uses_z,
        }
    }

    /// `f ≡ 0`.
    pub fn zero() -> Self {
        Self::new(0.0, false, |_, y, _| vec![0.0; y.len()])
    }

    /// `f(t, y, z) = r y`.
    pub fn linear(r: f64) -> Self {
        Self::new(r.abs(), false, move |_, y, _| y.iter().map(|v| r * v).collect())
    }

    pub fn eval(&self, t: f64, y: &[f64], z: &[Vec<f64>]) -> Vec<f64> {
        (self.f)(t, y, z)
    }

    /// Largest observed `|f(a) − f(b)| / (|y_a − y_b| + |z_a − z_b|)` over seeded random probes.
    pub fn lipschitz_probe(&self, m: usize, z_len: usize, probes: usize, seed: u64) -> f64 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let draw = |len: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..len).map(|_| rng.random_range(-5.0..5.0)).collect()
        };
        for _ in 0..probes {
            let t = rng.random::<f64>();
            let (ya, yb) = (draw(m, &mut rng), draw(m, &mut rng));
            let za: Vec<Vec<f64>> = (0..m).map(|_| draw(z_len, &mut rng)).collect();
            let zb: Vec<Vec<f64>> = (0..m).map(|_| draw(z_len, &mut rng)).collect();
            let fa = self.eval(t, &ya, &za);
            let fb = self.eval(t, &yb, &zb);
            let df = fa.iter().zip(&fb).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dy = ya.iter().zip(&yb).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dz = za
                .iter()
                .flatten()
                .zip(zb.iter().flatten())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if dy + dz > 0.0 {
                worst = worst.max(df / (dy + dz));
            }
        }
        worst
    }

    /// Probe check against the declared constant.
    pub fn check_lipschitz(&self, m: usize, z_len: usize) -> Result<()> {
        let observed = self.lipschitz_probe(m, z_len, 200, 0);
        if observed > self.lipschitz * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::Domain(format!(
                "driver Lipschitz constant {} is exceeded on probes ({observed})",
                self.lipschitz
            )));
        }
        Ok(())
    }
}

/// `θ_k(t_j, node)` for every output component, time level and node.
#[derive(Debug, Clone)]
pub struct GridSolution {
    pub grid: SpaceGrid,
    pub time: TimeGrid,
    /// `values[k][j][node]`.
    pub values: Vec<Vec<Vec<f64>>>,
    pub stencil: JumpStencil,
    strides: Vec<usize>,
}

impl GridSolution {
    pub fn components(&self) -> usize {
        self.values.len()
    }

    pub fn slice(&self, k: usize, j: usize) -> &[f64] {
        &self.values[k][j]
    }

    /// Time level and weight for linear interpolation in time.
    fn time_weights(&self, t: f64) -> (usize, f64) {
        let dt = self.time.dt();
        let pos = (t / dt).clamp(0.0, self.time.steps() as f64);
        let j = (pos.floor() as usize).min(self.time.steps() - 1);
        (j, pos - j as f64)
    }

    fn blend(&self, t: f64, f: impl Fn(usize) -> f64) -> f64 {
        let (j, s) = self.time_weights(t);
        if s == 0.0 {
            f(j)
        } else if s == 1.0 {
            f(j + 1)
        } else {
            (1.0 - s) * f(j) + s * f(j + 1)
        }
    }

    /// `θ_k(t, x)`: multilinear in space with linear extrapolation, linear in time.
    pub fn value(&self, k: usize, t: f64, x: &[f64]) -> f64 {
        let pos = self.grid.position(x);
        self.blend(t, |j| self.grid.interpolate(&self.values[k][j], &self.strides, &pos))
    }

    /// Nodal gradient along `d`: central inside, one-sided on the boundary.
    fn nodal_gradient(&self, field: &[f64], d: usize) -> Vec<f64> {
        let h = self.grid.spacing(d);
        let s = self.strides[d];
        let nd = self.grid.nodes[d];
        (0..field.len())
            .map(|flat| {
                let i = flat / s % nd;
                if i == 0 {
                    (field[flat + s] - field[flat]) / h
                } else if i + 1 == nd {
                    (field[flat] - field[flat - s]) / h
                } else {
                    (field[flat + s] - field[flat - s]) / (2.0 * h)
                }
            })
            .collect()
    }

    /// `∇θ_k(t, x)` from nodal differences, interpolated like `value`.
    pub fn gradient(&self, k: usize, t: f64, x: &[f64]) -> Vec<f64> {
        let pos = self.grid.position(x);
        (0..self.grid.dim())
            .map(|d| {
                self.blend(t, |j| {
                    let g = self.nodal_gradient(&self.values[k][j], d);
                    self.grid.interpolate(&g, &self.strides, &pos)
                })
            })
            .collect()
    }

    /// CSV with columns `t, x_0 … x_{n−1}, k, theta`, every `stride`-th time level plus the last.
    pub fn write_csv(&self, out: &Path, stride: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(out)?));
        let mut header = vec!["t".to_string()];
        header.extend((0..self.grid.dim()).map(|d| format!("x{d}")));
        header.push("k".into());
        header.push("theta".into());
        w.write_record(&header)?;
        let stride = stride.max(1);
        let steps = self.time.steps();
        for j in (0..=steps).filter(|j| j % stride == 0 || *j == steps) {
            let t = self.time.time(j).to_string();
            for k in 0..self.components() {
                for flat in 0..self.grid.node_count() {
                    let mut row = vec![t.clone()];
                    row.extend(self.grid.point(flat).iter().map(|v| v.to_string()));
                    row.push(k.to_string());
                    row.push(self.values[k][j][flat].to_string());
                    w.write_record(&row)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Text summary.
    pub fn describe(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(
            out,
            "grid {:?} nodes on [{:?}, {:?}], {} steps of {:.3e}, {} jump offsets",
            self.grid.nodes,
            self.grid.lower,
            self.grid.upper,
            self.time.steps(),
            self.time.dt(),
            self.stencil.offsets.len()
        )
    }
}

/// `θ_k(t, x + y) − θ_k(t, x) − ∇θ_k(t, x)·y`.
pub fn theta1(solution: &GridSolution, k: usize, t: f64, x: &[f64], y: &[f64]) -> f64 {
    if y.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let shifted: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
    let grad = solution.gradient(k, t, x);
    solution.value(k, t, &shifted) - solution.value(k, t, x) - grad.iter().zip(y).map(|(g, v)| g * v).sum::<f64>()
}

/// Orthonormal Clark-Ocone coefficients of component `k` at `(t, x)` for the kept directions
/// `basis.kept_up_to(basis.max_degree())`: `⟨θ^(1), p^p⟩_ν / ‖p^p‖`, plus `Σ_i ∂_iθ c̃_ij ‖H^{e_j}‖`
/// on degree-1 entries. The jump integral uses the solution's stencil.
pub fn clark_ocone_coefficients(
    solution: &GridSolution,
    basis: &OrthoBasis,
    k: usize,
    t: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let table = CoefficientTable::new(basis, &solution.stencil)?;
    let grad = solution.gradient(k, t, x);
    let th1: Vec<f64> = solution
        .stencil
        .offsets
        .iter()
        .map(|y| theta1(solution, k, t, x, y))
        .collect();
    Ok(table.apply(&th1, &grad))
}

/// Clark-Ocone coefficients with nodal gradients cached per time level, for many evaluations.
pub struct CoefficientField<'a> {
    solution: &'a GridSolution,
    table: CoefficientTable,
    /// `gradients[k][j][d]`: nodal gradient field.
    gradients: Vec<Vec<Vec<Vec<f64>>>>,
}

impl<'a> CoefficientField<'a> {
    pub fn new(solution: &'a GridSolution, basis: &OrthoBasis) -> Result<Self> {
        let table = CoefficientTable::new(basis, &solution.stencil)?;
        let n = solution.grid.dim();
        let gradients = solution
            .values
            .iter()
            .map(|comp| {
                comp.par_iter()
                    .map(|slice| (0..n).map(|d| solution.nodal_gradient(slice, d)).collect())
                    .collect()
            })
            .collect();
        Ok(Self {
            solution,
            table,
            gradients,
        })
    }

    fn at_level(&self, k: usize, j: usize, x: &[f64]) -> Vec<f64> {
        let sol = self.solution;
        let field = &sol.values[k][j];
        let pos = sol.grid.position(x);
        let grad: Vec<f64> = self.gradients[k][j]
            .iter()
            .map(|g| sol.grid.interpolate(g, &sol.strides, &pos))
            .collect();
        let here = sol.grid.interpolate(field, &sol.strides, &pos);
        let mut shifted = vec![0.0; pos.len()];
        let th1: Vec<f64> = sol
            .stencil
            .offsets
            .iter()
            .map(|y| {
                for d in 0..pos.len() {
                    shifted[d] = pos[d] + y[d] / sol.grid.spacing(d);
                }
                sol.grid.interpolate(field, &sol.strides, &shifted)
                    - here
                    - grad.iter().zip(y).map(|(g, v)| g * v).sum::<f64>()
            })
            .collect();
        self.table.apply(&th1, &grad)
    }

    /// Orthonormal coefficients of component `k` at `(t, x)`, linear in time between levels.
    pub fn coefficients(&self, k: usize, t: f64, x: &[f64]) -> Vec<f64> {
        let (j, s) = self.solution.time_weights(t);
        if s == 0.0 {
            return self.at_level(k, j, x);
        }
        if s == 1.0 {
            return self.at_level(k, j + 1, x);
        }
        let a = self.at_level(k, j, x);
        let b = self.at_level(k, j + 1, x);
        a.iter().zip(&b).map(|(u, v)| (1.0 - s) * u + s * v).collect()
    }
}

/// Precomputed `w_j p^p(y_j) / ‖p^p‖` and degree-1 corrections.
struct CoefficientTable {
    /// `rows[c][j]`.
    rows: Vec<Vec<f64>>,
    /// For degree-1 column `c` pointing at axis `e_j`: `c̃_{i j} ‖H^{e_j}‖` for each `i`.
    gradient_rows: Vec<Option<Vec<f64>>>,
}

impl CoefficientTable {
    fn new(basis: &OrthoBasis, stencil: &JumpStencil) -> Result<Self> {
        let kept = basis.kept_up_to(basis.max_degree());
        let order = basis.order();
        let needs_degree1 = kept.iter().any(|&c| order[c].degree() == 1);
        let inv = if needs_degree1 {
            Some(basis.degree1_inverse()?)
        } else {
            None
        };
        let rows = kept
            .iter()
            .map(|&c| {
                let norm = basis.norm(c);
                stencil
                    .offsets
                    .iter()
                    .zip(&stencil.weights)
                    .map(|(y, w)| w * basis.eval_row(c, y) / norm)
                    .collect()
            })
            .collect();
        let gradient_rows = kept
            .iter()
            .map(|&c| {
                order[c].unit_axis().map(|j| {
                    let inv = inv.expect("degree-1 inverse present");
                    (0..basis.dim()).map(|i| inv[i][j] * basis.norm(c)).collect()
                })
            })
            .collect();
        Ok(Self { rows, gradient_rows })
    }

    fn apply(&self, theta1: &[f64], grad: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.gradient_rows)
            .map(|(row, g)| {
                let mut z: f64 = row.iter().zip(theta1).map(|(a, b)| a * b).sum();
                if let Some(g) = g {
                    z += g.iter().zip(grad).map(|(a, b)| a * b).sum::<f64>();
                }
                z
            })
            .collect()
    }
}

/// Linear PDIE `∂_t θ + ∫ θ^(1) dν + ã·∇θ = 0`, `θ(T) = g`.
pub fn solve_linear_pdie(
    model: &LevyModel,
    g: Terminal,
    grid: &SpaceGrid,
    horizon: f64,
    opts: PdieOptions,
) -> Result<GridSolution> {
    solve(model, g, None, None, grid, horizon, opts)
}

/// Nonlinear PDIE with driver `f(t, θ, Θ)`; `basis` is required when the driver reads `z`.
pub fn solve_nonlinear_pdie(
    model: &LevyModel,
    g: Terminal,
    driver: &DriverFunction,
    basis: Option<&OrthoBasis>,
    grid: &SpaceGrid,
    horizon: f64,
    opts: PdieOptions,
) -> Result<GridSolution> {
    if driver.uses_z && basis.is_none() {
        return Err(Error::Argument("a z-dependent driver needs an orthogonal basis".into()));
    }
    solve(model, g, Some(driver), basis, grid, horizon, opts)
}

/// Implicit tridiagonal operator of one dimension.
struct LineOperator {
    d: usize,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl LineOperator {
    /// Rows of `A_d` (drift `b`, diffusion `D`): central inside, one-sided drift on the boundary.
    fn new(d: usize, nodes: usize, h: f64, b: f64, diff: f64) -> Self {
        let mut lower = vec![0.0; nodes];
        let mut diag = vec![0.0; nodes];
        let mut upper = vec![0.0; nodes];
        for i in 0..nodes {
            if i == 0 {
                diag[i] = -b / h;
                upper[i] = b / h;
            } else if i + 1 == nodes {
                lower[i] = -b / h;
                diag[i] = b / h;
            } else {
                lower[i] = -b / (2.0 * h) + diff / (h * h);
                diag[i] = -2.0 * diff / (h * h);
                upper[i] = b / (2.0 * h) + diff / (h * h);
            }
        }
        Self { d, lower, diag, upper }
    }

    fn apply_line(&self, v: &[f64], out: &mut [f64]) {
        let n = v.len();
        for i in 0..n {
            let mut s = self.diag[i] * v[i];
            if i > 0 {
                s += self.lower[i] * v[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * v[i + 1];
            }
            out[i] += s;
        }
    }

    /// Solves `(I − dt A_d) u = r` in place (Thomas).
    fn solve_line(&self, dt: f64, r: &mut [f64], scratch: &mut Vec<f64>) {
        let n = r.len();
        scratch.clear();
        scratch.resize(n, 0.0);
        let mut denom = 1.0 - dt * self.diag[0];
        scratch[0] = -dt * self.upper[0] / denom;
        r[0] /= denom;
        for i in 1..n {
            let a = -dt * self.lower[i];
            denom = 1.0 - dt * self.diag[i] - a * scratch[i - 1];
            scratch[i] = if i + 1 < n { -dt * self.upper[i] / denom } else { 0.0 };
            r[i] = (r[i] - a * r[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            r[i] -= scratch[i] * r[i + 1];
        }
    }
}

/// Line start nodes and stride for dimension `d`.
fn lines(grid: &SpaceGrid, strides: &[usize], d: usize) -> Vec<usize> {
    (0..grid.node_count())
        .filter(|&flat| (flat / strides[d]).is_multiple_of(grid.nodes[d]))
        .collect()
}

struct Engine<'a> {
    grid: &'a SpaceGrid,
    strides: Vec<usize>,
    stencil: &'a JumpStencil,
    /// Fractional-index shift of each jump offset.
    shifts: Vec<Vec<f64>>,
    ops: Vec<LineOperator>,
    line_starts: Vec<Vec<usize>>,
    positions: Vec<Vec<f64>>,
    points: Vec<Vec<f64>>,
}

impl<'a> Engine<'a> {
    fn new(grid: &'a SpaceGrid, stencil: &'a JumpStencil) -> Self {
        let n = grid.dim();
        let strides = grid.strides();
        let shifts = stencil
            .offsets
            .iter()
            .map(|y| (0..n).map(|d| y[d] / grid.spacing(d)).collect())
            .collect();
        let ops = (0..n)
            .map(|d| {
                LineOperator::new(
                    d,
                    grid.nodes[d],
                    grid.spacing(d),
                    stencil.drift[d],
                    stencil.diffusion[d],
                )
            })
            .collect();
        let line_starts = (0..n).map(|d| lines(grid, &strides, d)).collect();
        let positions = (0..grid.node_count())
            .map(|flat| grid.unflatten(flat).iter().map(|&i| i as f64).collect())
            .collect();
        let points = (0..grid.node_count()).map(|flat| grid.point(flat)).collect();
        Self {
            grid,
            strides,
            stencil,
            shifts,
            ops,
            line_starts,
            positions,
            points,
        }
    }

    /// `A θ` summed over dimensions.
    fn local(&self, field: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; field.len()];
        let mut buf = Vec::new();
        let mut res = Vec::new();
        for (d, op) in self.ops.iter().enumerate() {
            let s = self.strides[d];
            let nd = self.grid.nodes[d];
            for &start in &self.line_starts[d] {
                buf.clear();
                buf.extend((0..nd).map(|i| field[start + i * s]));
                res.clear();
                res.resize(nd, 0.0);
                op.apply_line(&buf, &mut res);
                for i in 0..nd {
                    out[start + i * s] += res[i];
                }
            }
            debug_assert_eq!(op.d, d);
        }
        out
    }

    /// `θ(node + y_j)` for every jump `j` at one node.
    fn shifted_values(&self, field: &[f64], flat: usize, out: &mut Vec<f64>) {
        out.clear();
        let base = &self.positions[flat];
        let mut pos = vec![0.0; base.len()];
        for shift in &self.shifts {
            for d in 0..base.len() {
                pos[d] = base[d] + shift[d];
            }
            out.push(self.grid.interpolate(field, &self.strides, &pos));
        }
    }

    /// `Σ_j w_j (θ(x + y_j) − θ(x))` at every node.
    fn jumps(&self, field: &[f64]) -> Vec<f64> {
        if self.stencil.weights.is_empty() {
            return vec![0.0; field.len()];
        }
        (0..field.len())
            .into_par_iter()
            .map_init(Vec::new, |buf, flat| {
                self.shifted_values(field, flat, buf);
                let here = field[flat];
                self.stencil
                    .weights
                    .iter()
                    .zip(buf.iter())
                    .map(|(w, v)| w * (v - here))
                    .sum()
            })
            .collect()
    }

    /// Coefficient tables of every component at every node.
    fn coefficients(&self, fields: &[Vec<f64>], table: &CoefficientTable) -> Vec<Vec<Vec<f64>>> {
        let n = self.grid.dim();
        let grads: Vec<Vec<Vec<f64>>> = fields
            .iter()
            .map(|f| (0..n).map(|d| self.nodal_gradient(f, d)).collect())
            .collect();
        (0..self.grid.node_count())
            .into_par_iter()
            .map_init(Vec::new, |buf, flat| {
                fields
                    .iter()
                    .enumerate()
                    .map(|(k, field)| {
                        self.shifted_values(field, flat, buf);
                        let grad: Vec<f64> = (0..n).map(|d| grads[k][d][flat]).collect();
                        let here = field[flat];
                        let th1: Vec<f64> = buf
                            .iter()
                            .zip(&self.stencil.offsets)
                            .map(|(v, y)| v - here - grad.iter().zip(y).map(|(g, yy)| g * yy).sum::<f64>())
                            .collect();
                        table.apply(&th1, &grad)
                    })
                    .collect()
            })
            .collect()
    }

    fn nodal_gradient(&self, field: &[f64], d: usize) -> Vec<f64> {
        let h = self.grid.spacing(d);
        let s = self.strides[d];
        let nd = self.grid.nodes[d];
        (0..field.len())
            .map(|flat| {
                let i = flat / s % nd;
                if i == 0 {
                    (field[flat + s] - field[flat]) / h
                } else if i + 1 == nd {
                    (field[flat] - field[flat - s]) / h
                } else {
                    (field[flat + s] - field[flat - s]) / (2.0 * h)
                }
            })
            .collect()
    }

    /// Applies `Π_d (I − dt A_d)^{-1}` in place.
    fn implicit(&self, dt: f64, field: &mut [f64]) {
        let mut buf = Vec::new();
        let mut scratch = Vec::new();
        for (d, op) in self.ops.iter().enumerate() {
            let s = self.strides[d];
            let nd = self.grid.nodes[d];
            for &start in &self.line_starts[d] {
                buf.clear();
                buf.extend((0..nd).map(|i| field[start + i * s]));
                op.solve_line(dt, &mut buf, &mut scratch);
                for i in 0..nd {
                    field[start + i * s] = buf[i];
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn solve(
    model: &LevyModel,
    g: Terminal,
    driver: Option<&DriverFunction>,
    basis: Option<&OrthoBasis>,
    grid: &SpaceGrid,
    horizon: f64,
    opts: PdieOptions,
) -> Result<GridSolution> {
    let stencil = build_stencil(model, grid, opts.jump_cutoff)?;
    let max_dt = max_stable_dt(&stencil, grid);
    let steps = match opts.steps {
        Some(s) => s,
        None => ((horizon / max_dt).ceil() as usize).max(1),
    };
    let time = TimeGrid::new(horizon, steps)?;
    let dt = time.dt();
    if dt > max_dt * (1.0 + 1e-12) && !opts.cfl_override {
        return Err(Error::Cfl { dt, max_dt });
    }
    let engine = Engine::new(grid, &stencil);
    let terminal: Vec<Vec<f64>> = engine.points.par_iter().map(|x| g(x)).collect();
    let m = terminal.first().map_or(0, |v| v.len());
    if m == 0 || terminal.iter().any(|v| v.len() != m) {
        return Err(Error::Argument(
            "terminal function must return the same nonzero length everywhere".into(),
        ));
    }
    if terminal.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("terminal function is not finite on the grid".into()));
    }
    let table = match (driver, basis) {
        (Some(d), Some(b)) if d.uses_z => Some(CoefficientTable::new(b, &stencil)?),
        _ => None,
    };
    let nodes = grid.node_count();
    let mut values: Vec<Vec<Vec<f64>>> = (0..m).map(|_| vec![Vec::new(); steps + 1]).collect();
    for (k, comp) in values.iter_mut().enumerate() {
        comp[steps] = terminal.iter().map(|v| v[k]).collect();
    }
    let driver_terms = |t: f64, fields: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let Some(d) = driver else {
            return vec![vec![0.0; nodes]; m];
        };
        let z = table.as_ref().map(|tab| engine.coefficients(fields, tab));
        let per_node: Vec<Vec<f64>> = (0..nodes)
            .into_par_iter()
            .map(|flat| {
                let y: Vec<f64> = fields.iter().map(|f| f[flat]).collect();
                match &z {
                    Some(z) => d.eval(t, &y, &z[flat]),
                    None => d.eval(t, &y, &[]),
                }
            })
            .collect();
        (0..m).map(|k| per_node.iter().map(|v| v[k]).collect()).collect()
    };
    for j in (0..steps).rev() {
        let t_next = time.time(j + 1);
        let current: Vec<Vec<f64>> = (0..m).map(|k| values[k][j + 1].clone()).collect();
        let explicit: Vec<Vec<f64>> = (0..m)
            .map(|k| {
                let a = engine.local(&current[k]);
                let jv = engine.jumps(&current[k]);
                a.iter().zip(&jv).map(|(x, y)| x + y).collect()
            })
            .collect();
        let step = |forcing: &[Vec<f64>]| -> Vec<Vec<f64>> {
            (0..m)
                .map(|k| {
                    let mut delta: Vec<f64> = explicit[k].iter().zip(&forcing[k]).map(|(e, f)| dt * (e + f)).collect();
                    engine.implicit(dt, &mut delta);
                    current[k].iter().zip(&delta).map(|(a, b)| a + b).collect()
                })
                .collect()
        };
        let mut next = step(&driver_terms(t_next, &current));
        if opts.implicit_driver && driver.is_some() {
            let t_now = time.time(j);
            let mut converged = false;
            let mut trace = Vec::new();
            for _ in 0..DRIVER_MAX_ITERS {
                let candidate = step(&driver_terms(t_now, &next));
                let change = candidate
                    .iter()
                    .flatten()
                    .zip(next.iter().flatten())
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                let scale = candidate.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
                trace.push(change);
                next = candidate;
                if change <= DRIVER_TOL * scale {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NonConvergence {
                    iterations: DRIVER_MAX_ITERS,
                    residual: trace.last().copied().unwrap_or(f64::NAN),
                    trace,
                });
            }
        }
        for (k, v) in next.into_iter().enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite PDIE values at t = {}",
                    time.time(j)
                )));
            }
            values[k][j] = v;
        }
    }
    let strides = grid.strides();
    drop(engine);
    Ok(GridSolution {
        grid: grid.clone(),
        time,
        values,
        stencil,
        strides,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::{poisson_copula_measure, Atom, ClaytonCopulaParams, MeixnerParams};
    use crate::orthobasis::build_basis;

    fn meixner() -> LevyModel {
        LevyModel::meixner(MeixnerParams::new(0.5, 0.0, 1.0, 0.0).unwrap()).unwrap()
    }

    fn atomic() -> LevyModel {
        poisson_copula_measure(1.0, 1.0, ClaytonCopulaParams::new(1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(SpaceGrid::line(0.0, 1.0, 2).is_err());
        assert!(SpaceGrid::line(1.0, 0.0, 5).is_err());
        assert!(SpaceGrid::line(0.0, f64::INFINITY, 5).is_err());
        let g = SpaceGrid::with_spacing(&[-1.03], &[2.0], 0.1, &[0.25]).unwrap();
        assert!((g.spacing(0) - 0.1).abs() < 1e-12);
        assert!((0..g.nodes()[0]).any(|i| (g.coord(0, i) - 0.25).abs() < 1e-12));
    }

    #[test]
    fn constant_is_preserved() {
        let grid = SpaceGrid::line(-2.0, 2.0, 81).unwrap();
        let sol = solve_linear_pdie(&meixner(), &|_| vec![7.0], &grid, 1.0, PdieOptions::default()).unwrap();
        for slice in &sol.values[0] {
            assert!(slice.iter().all(|&v| v == 7.0));
        }
    }

    #[test]
    fn affine_is_exact_meixner() {
        let m = meixner().with_mean(&[0.3]).unwrap();
        let grid = SpaceGrid::line(-2.0, 2.0, 81).unwrap();
        let sol = solve_linear_pdie(&m, &|x| vec![x[0]], &grid, 1.0, PdieOptions::default()).unwrap();
        for j in 0..=sol.time.steps() {
            let t = sol.time.time(j);
            for flat in 0..grid.node_count() {
                let x = grid.point(flat)[0];
                assert!((sol.values[0][j][flat] - (x + 0.3 * (1.0 - t))).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn affine_is_exact_atomic_2d() {
        let m = atomic().with_mean(&[0.2, -0.1]).unwrap();
        let grid = SpaceGrid::new(vec![-2.0, -2.0], vec![2.0, 2.0], vec![21, 21]).unwrap();
        let sol = solve_linear_pdie(&m, &|x| vec![x[0] + x[1]], &grid, 1.0, PdieOptions::default()).unwrap();
        let at0 = sol.value(0, 0.0, &[0.4, -0.6]);
        assert!((at0 - (-0.2 + 0.1)).abs() < 1e-8, "{at0}");
    }

    #[test]
    fn cfl_violation_reports_bound() {
        let grid = SpaceGrid::line(-2.0, 2.0, 81).unwrap();
        let opts = PdieOptions {
            steps: Some(1),
            ..Default::default()
        };
        match solve_linear_pdie(&meixner(), &|x| vec![x[0]], &grid, 1.0, opts) {
            Err(Error::Cfl { dt, max_dt }) => assert!(dt > max_dt),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn theta1_on_quadratic() {
        let m = LevyModel::zero(1).unwrap();
        let grid = SpaceGrid::line(-1.0, 1.0, 21).unwrap();
        let sol = solve_linear_pdie(&m, &|x| vec![x[0] * x[0]], &grid, 1.0, PdieOptions::default()).unwrap();
        let h = grid.spacing(0);
        let x = [grid.coord(0, 7)];
        assert!((theta1(&sol, 0, 1.0, &x, &[h]) - h * h).abs() < 1e-14);
        assert_eq!(theta1(&sol, 0, 1.0, &x, &[0.0]), 0.0);
        let affine = solve_linear_pdie(&m, &|x| vec![3.0 * x[0] - 1.0], &grid, 1.0, PdieOptions::default()).unwrap();
        assert!(theta1(&affine, 0, 0.5, &[0.33], &[0.41]).abs() < 1e-12);
    }

    #[test]
    fn nonlinear_with_zero_driver_matches_linear_bitwise() {
        let grid = SpaceGrid::line(-2.0, 2.0, 41).unwrap();
        let g = |x: &[f64]| vec![(x[0]).sin()];
        let a = solve_linear_pdie(&meixner(), &g, &grid, 0.5, PdieOptions::default()).unwrap();
        let b = solve_nonlinear_pdie(
            &meixner(),
            &g,
            &DriverFunction::zero(),
            None,
            &grid,
            0.5,
            PdieOptions::default(),
        )
        .unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn linear_driver_on_constant() {
        let grid = SpaceGrid::line(-2.0, 2.0, 41).unwrap();
        let opts = PdieOptions {
            steps: Some(2000),
            ..Default::default()
        };
        let sol = solve_nonlinear_pdie(
            &meixner(),
            &|_| vec![2.0],
            &DriverFunction::linear(0.1),
            None,
            &grid,
            1.0,
            opts,
        )
        .unwrap();
        let exact = 2.0 * 0.1f64.exp();
        assert!((sol.value(0, 0.0, &[0.0]) - exact).abs() < 1e-4 * exact);
        let implicit = PdieOptions {
            implicit_driver: true,
            ..opts
        };
        let sol = solve_nonlinear_pdie(
            &meixner(),
            &|_| vec![2.0],
            &DriverFunction::linear(0.1),
            None,
            &grid,
            1.0,
            implicit,
        )
        .unwrap();
        assert!((sol.value(0, 0.0, &[0.0]) - exact).abs() < 1e-4 * exact);
    }

    /// Explicit Euler on pure atom jumps without drift is a multinomial recursion over jump counts.
    #[test]
    fn matches_jump_count_recursion() {
        let lam = [0.5, 0.5, 0.5];
        let ys = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let atoms: Vec<Atom> = ys
            .iter()
            .zip(lam)
            .map(|(y, l)| Atom {
                x: y.to_vec(),
                intensity: l,
            })
            .collect();
        // drift equal to the jump mean removes transport from the implicit part
        let m = LevyModel::zero(2)
            .unwrap()
            .with_atoms(atoms)
            .unwrap()
            .with_mean(&[1.0, 1.0])
            .unwrap();
        let steps = 8usize;
        let horizon = 1.0;
        let grid = SpaceGrid::new(vec![0.0, 0.0], vec![12.0, 12.0], vec![13, 13]).unwrap();
        let g = |x: &[f64]| vec![(0.3 * x[0] - 0.2 * x[1]).cos() + 0.1 * x[0] * x[1]];
        let opts = PdieOptions {
            steps: Some(steps),
            ..Default::default()
        };
        let sol = solve_linear_pdie(&m, &g, &grid, horizon, opts).unwrap();
        assert_eq!(sol.stencil.drift, vec![0.0, 0.0]);
        let dt = horizon / steps as f64;
        let p: Vec<f64> = lam.iter().map(|l| l * dt).collect();
        let stay = 1.0 - p.iter().sum::<f64>();
        // θ_0(0) = Σ over per-step outcomes = Σ_{a+b+c<=N} N!/(a!b!c!r!) p^a p^b p^c stay^r g(a+c, b+c)
        let fact = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
        let mut oracle = 0.0;
        for a in 0..=steps {
            for b in 0..=steps - a {
                for c in 0..=steps - a - b {
                    let r = steps - a - b - c;
                    let coef = fact(steps) / (fact(a) * fact(b) * fact(c) * fact(r));
                    let prob =
                        coef * p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32) * stay.powi(r as i32);
                    oracle += prob * g(&[(a + c) as f64, (b + c) as f64])[0];
                }
            }
        }
        let got = sol.value(0, 0.0, &[0.0, 0.0]);
        assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
    }

    #[test]
    fn feynman_kac_poisson_closed_form() {
        // 1-D unit-jump Poisson, compensated: θ(0,x) = Σ_k e^{-λT}(λT)^k/k! g(x + k − λT)
        let lam = 1.0;
        let m = LevyModel::zero(1)
            .unwrap()
            .with_atoms(vec![Atom {
                x: vec![1.0],
                intensity: lam,
            }])
            .unwrap()
            .with_mean(&[0.0])
            .unwrap();
        let grid = SpaceGrid::line(-4.0, 12.0, 321).unwrap();
        let g = |x: &[f64]| vec![(-0.5 * x[0] * x[0]).exp()];
        let opts = PdieOptions {
            steps: Some(800),
            ..Default::default()
        };
        let sol = solve_linear_pdie(&m, &g, &grid, 1.0, opts).unwrap();
        let mut exact = 0.0;
        let mut pk = (-lam).exp();
        for k in 0..40 {
            if k > 0 {
                pk *= lam / k as f64;
            }
            exact += pk * g(&[0.2 + k as f64 - lam])[0];
        }
        let got = sol.value(0, 0.0, &[0.2]);
        assert!((got - exact).abs() < 2e-3, "{got} vs {exact}");
    }

    #[test]
    fn clark_ocone_affine_and_constant() {
        let m = atomic();
        let basis = build_basis(&m, 2, 1e-12).unwrap();
        let grid = SpaceGrid::new(vec![-3.0, -3.0], vec![3.0, 3.0], vec![31, 31]).unwrap();
        let sol = solve_linear_pdie(&m, &|x| vec![2.0 * x[0] - x[1]], &grid, 1.0, PdieOptions::default()).unwrap();
        let z = clark_ocone_coefficients(&sol, &basis, 0, 0.5, &[0.1, 0.2]).unwrap();
        let kept = basis.kept_up_to(2);
        let inv = basis.degree1_inverse().unwrap();
        for (c, &k) in kept.iter().enumerate() {
            let p = &basis.order()[k];
            match p.unit_axis() {
                Some(j) => {
                    let expect = (2.0 * inv[0][j] - inv[1][j]) * basis.norm(k);
                    assert!((z[c] - expect).abs() < 1e-9, "{p}: {} vs {expect}", z[c]);
                }
                None => assert!(z[c].abs() < 1e-9),
            }
        }
        let constant = solve_linear_pdie(&m, &|_| vec![3.0], &grid, 1.0, PdieOptions::default()).unwrap();
        let z = clark_ocone_coefficients(&constant, &basis, 0, 0.0, &[0.0, 0.0]).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn clark_ocone_single_atom_hand_evaluation() {
        // three-atom model, θ(x) = x1² at t = T: θ^(1)(x, y) = 2 x1 y1 + y1² − 2 x1 y1 = y1²
        let m = atomic();
        let basis = build_basis(&m, 2, 1e-12).unwrap();
        let grid = SpaceGrid::new(vec![-3.0, -3.0], vec![3.0, 3.0], vec![31, 31]).unwrap();
        let sol = solve_linear_pdie(&m, &|x| vec![x[0] * x[0]], &grid, 1.0, PdieOptions::default()).unwrap();
        let x = [0.4, -0.2];
        let z = clark_ocone_coefficients(&sol, &basis, 0, 1.0, &x).unwrap();
        let inv = basis.degree1_inverse().unwrap();
        for (c, &k) in basis.kept_up_to(2).iter().enumerate() {
            let mut expect = 0.0;
            for a in m.atoms() {
                expect += a.intensity * a.x[0] * a.x[0] * basis.eval_row(k, &a.x) / basis.norm(k);
            }
            if let Some(j) = basis.order()[k].unit_axis() {
                expect += 2.0 * x[0] * inv[0][j] * basis.norm(k);
            }
            assert!(
                (z[c] - expect).abs() < 1e-9,
                "{}: {} vs {expect}",
                basis.order()[k],
                z[c]
            );
        }
    }

    #[test]
    fn lipschitz_probe_detects_violation() {
        let ok = DriverFunction::linear(0.5);
        assert!(ok.check_lipschitz(1, 3).is_ok());
        let bad = DriverFunction::new(0.1, false, |_, y, _| vec![2.0 * y[0]]);
        assert!(bad.check_lipschitz(1, 3).is_err());
    }
}
