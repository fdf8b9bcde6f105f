//! Backward SDEs driven by orthonormalised Teugels martingales, solved by least-squares
//! regression on simulated paths.
//!
//! Scheme on a grid `t_0 < … < t_N` with orthonormal increments `ΔH̃_k`:
//! `Z_k = E[(Y_{k+1} − E[Y_{k+1} | X_k]) ΔH̃_k | X_k] / Δt` and `Y_k = E[Y_{k+1} | X_k] + Δt f(t_k, Y_k, Z_k)`,
//! the last equation solved by fixed-point iteration per path.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levy_model::LevyModel;
use crate::multi_index::graded_lex_enumerate;
use crate::orthobasis::OrthoBasis;
use crate::pdie::{CoefficientField, DriverFunction, GridSolution};
use crate::simulator::{teugels_increments, JumpPath, JumpSampler, TimeGrid};

/// Picard stopping rule: `‖Δ‖_β <= PICARD_TOL (1 + ‖iterate‖_β)`.
pub const PICARD_TOL: f64 = 1e-4;
pub const PICARD_MAX_ITERS: usize = 25;

const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_MAX_ITERS: usize = 100;

/// Handling of linearly dependent regression columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    /// Drop dependent columns and continue.
    #[default]
    Prune,
    /// Fail with [`Error::RankDeficient`].
    Error,
}

/// Regression functions of the state: monomials up to `degree`, optionally the terminal function.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RegressionSpec {
    pub degree: u32,
    pub include_terminal: bool,
    pub policy: RankPolicy,
    /// Relative residual norm below which a column counts as dependent.
    pub tol: f64,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            degree: 2,
            include_terminal: true,
            policy: RankPolicy::Prune,
            tol: 1e-10,
        }
    }
}

/// Terminal function shared between solvers.
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Simulated inputs of a Markovian BSDE: states `X(t_k)` and orthonormal Teugels increments per path.
#[derive(Clone)]
pub struct BsdeData {
    pub basis: OrthoBasis,
    pub grid: TimeGrid,
    pub x0: Vec<f64>,
    pub terminal: TerminalFn,
    pub driver: DriverFunction,
    pub regression: RegressionSpec,
    components: usize,
    /// `states[path][k]`, `k = 0..=N`.
    states: Vec<Vec<Vec<f64>>>,
    /// `increments[path][k][c]` of `H^p / ‖H^p‖`, `k = 0..N`.
    increments: Vec<Vec<Vec<f64>>>,
    /// `terminal(X_N)` per path.
    xi: Vec<Vec<f64>>,
}

impl std::fmt::Debug for BsdeData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BsdeData")
            .field("paths", &self.states.len())
            .field("steps", &self.grid.steps())
            .field("components", &self.components)
            .field("directions", &self.directions())
            .finish()
    }
}

/// `X(t_k) = x0 + b t_k + Σ_{s <= t_k} ΔX(s)` for every grid time.
fn states_on_grid(path: &JumpPath, grid: &TimeGrid, x0: &[f64]) -> Vec<Vec<f64>> {
    let n = path.dim;
    let mut jumps_before = vec![vec![0.0; n]; grid.steps() + 1];
    for (t, y) in path.jumps() {
        let k = grid.interval_of(t) + 1;
        for d in 0..n {
            jumps_before[k][d] += y[d];
        }
    }
    let mut acc = vec![0.0; n];
    (0..=grid.steps())
        .map(|k| {
            let t = grid.time(k);
            for d in 0..n {
                acc[d] += jumps_before[k][d];
            }
            (0..n).map(|d| x0[d] + path.effective_drift[d] * t + acc[d]).collect()
        })
        .collect()
}

impl BsdeData {
    /// Prepares paths; the basis compensators are reset to those of the paths' truncation.
    pub fn new(
        model: &LevyModel,
        basis: &OrthoBasis,
        grid: TimeGrid,
        x0: Vec<f64>,
        terminal: TerminalFn,
        driver: DriverFunction,
        paths: &[JumpPath],
    ) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::Argument("BSDE needs at least one path".into()));
        }
        if x0.len() != model.dim() || basis.dim() != model.dim() {
            return Err(Error::Argument("x0, basis and model dimensions differ".into()));
        }
        let eps = paths[0].eps;
        let basis = basis.clone().with_truncation(model, eps)?;
        let states: Vec<Vec<Vec<f64>>> = paths.par_iter().map(|p| states_on_grid(p, &grid, &x0)).collect();
        let increments = paths
            .par_iter()
            .map(|p| teugels_increments(p, &basis, &grid).map(|inc| inc.orthonormal(&basis)))
            .collect::<Result<Vec<_>>>()?;
        let xi: Vec<Vec<f64>> = states.par_iter().map(|s| terminal(&s[grid.steps()])).collect();
        let components = xi[0].len();
        if components == 0
            || xi
                .iter()
                .any(|v| v.len() != components || v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Argument(
                "terminal values must be finite with a fixed nonzero length".into(),
            ));
        }
        Ok(Self {
            basis,
            grid,
            x0,
            terminal,
            driver,
            regression: RegressionSpec::default(),
            components,
            states,
            increments,
            xi,
        })
    }

    /// Simulates `count` paths with truncation `eps` and prepares them.
    #[allow(clippy::too_many_arguments)]
    pub fn simulate(
        model: &LevyModel,
        basis: &OrthoBasis,
        grid: TimeGrid,
        x0: Vec<f64>,
        terminal: TerminalFn,
        driver: DriverFunction,
        count: usize,
        seed: u64,
        eps: f64,
    ) -> Result<Self> {
        let sampler = JumpSampler::new(model, eps)?;
        let paths = sampler.paths(grid.horizon(), seed, count);
        Self::new(model, basis, grid, x0, terminal, driver, &paths)
    }

    pub fn with_regression(mut self, spec: RegressionSpec) -> Self {
        self.regression = spec;
        self
    }

    pub fn with_driver(mut self, driver: DriverFunction) -> Self {
        self.driver = driver;
        self
    }

    /// Same paths with terminal values `ξ + shift`.
    pub fn shifted_terminal(&self, shift: f64) -> Self {
        let mut out = self.clone();
        for v in out.xi.iter_mut().flatten() {
            *v += shift;
        }
        out
    }

    pub fn paths(&self) -> usize {
        self.states.len()
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Number of Teugels directions `p` in `Z`.
    pub fn directions(&self) -> usize {
        self.increments[0].first().map_or(0, |r| r.len())
    }

    /// `X(t_k)` on path `i`.
    pub fn state(&self, i: usize, k: usize) -> &[f64] {
        &self.states[i][k]
    }

    /// Orthonormal increments on path `i` over `(t_k, t_{k+1}]`.
    pub fn increment(&self, i: usize, k: usize) -> &[f64] {
        &self.increments[i][k]
    }

    pub fn terminal_value(&self, i: usize) -> &[f64] {
        &self.xi[i]
    }

    /// Regression design at step `k`.
    fn design(&self, k: usize) -> Vec<Vec<f64>> {
        let n = self.x0.len();
        let monomials = graded_lex_enumerate(n, self.regression.degree);
        let mut cols: Vec<Vec<f64>> = vec![vec![1.0; self.paths()]];
        for q in &monomials {
            cols.push(self.states.iter().map(|s| q.monomial(&s[k])).collect());
        }
        if self.regression.include_terminal {
            let g: Vec<Vec<f64>> = self.states.par_iter().map(|s| (self.terminal)(&s[k])).collect();
            for c in 0..self.components {
                cols.push(g.iter().map(|v| v[c]).collect());
            }
        }
        cols
    }

    fn projector(&self, k: usize) -> Result<Projector> {
        let design = self.design(k);
        let requested = design.len();
        let proj = Projector::new(design, self.regression.tol);
        // a deterministic state makes only the constant column independent
        let deterministic = self.states.iter().all(|s| s[k] == self.states[0][k]);
        if self.regression.policy == RankPolicy::Error && !deterministic && proj.rank() < requested {
            return Err(Error::RankDeficient {
                step: k,
                kept: proj.rank(),
                requested,
            });
        }
        Ok(proj)
    }
}

/// Orthogonal projector onto the span of the regression columns (pivoted MGS, two passes).
#[derive(Debug, Clone)]
pub struct Projector {
    q: Vec<Vec<f64>>,
}

impl Projector {
    pub fn new(mut columns: Vec<Vec<f64>>, tol: f64) -> Self {
        let norms: Vec<f64> = columns.iter().map(|c| dot(c, c).sqrt()).collect();
        let mut remaining: Vec<usize> = (0..columns.len()).filter(|&j| norms[j] > 0.0).collect();
        let mut q: Vec<Vec<f64>> = Vec::new();
        while !remaining.is_empty() {
            // pivot: largest residual relative to the original column norm
            let (pos, rel) = remaining
                .iter()
                .enumerate()
                .map(|(pos, &j)| (pos, dot(&columns[j], &columns[j]).sqrt() / norms[j]))
                .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if rel <= tol {
                break;
            }
            let j = remaining.swap_remove(pos);
            let mut v = std::mem::take(&mut columns[j]);
            for _ in 0..2 {
                for qi in &q {
                    let c = dot(qi, &v);
                    axpy(-c, qi, &mut v);
                }
            }
            let nv = dot(&v, &v).sqrt();
            if nv <= tol * norms[j] {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            for &r in &remaining {
                let c = dot(&v, &columns[r]);
                axpy(-c, &v, &mut columns[r]);
            }
            q.push(v);
        }
        Self { q }
    }

    pub fn rank(&self) -> usize {
        self.q.len()
    }

    /// Fitted values `Q Qᵀ b`.
    pub fn project(&self, b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; b.len()];
        for qi in &self.q {
            axpy(dot(qi, b), qi, &mut out);
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `Y` and `Z` on every path and grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    pub grid: TimeGrid,
    /// `y[k][path][comp]`, `k = 0..=N`.
    pub y: Vec<Vec<Vec<f64>>>,
    /// `z[k][path][comp][c]`, `k = 0..N`.
    pub z: Vec<Vec<Vec<Vec<f64>>>>,
}

impl BsdeSolution {
    fn zeros(data: &BsdeData) -> Self {
        let n = data.grid.steps();
        let (m, p, paths) = (data.components, data.directions(), data.paths());
        let mut y = vec![vec![vec![0.0; m]; paths]; n + 1];
        y[n] = data.xi.clone();
        Self {
            grid: data.grid,
            y,
            z: vec![vec![vec![vec![0.0; p]; m]; paths]; n],
        }
    }

    /// Sample mean of `Y(t_0)`.
    pub fn y0(&self) -> Vec<f64> {
        mean_rows(&self.y[0])
    }

    /// Sample means of `Y` per time.
    pub fn mean_y(&self) -> Vec<Vec<f64>> {
        self.y.iter().map(|rows| mean_rows(rows)).collect()
    }

    /// CSV: `t, component, mean_y, se_y, z_0 … z_{P−1}` (path means of `Z`).
    pub fn write_csv(&self, out: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(out)?;
        let m = self.y[0][0].len();
        let p = self.z.first().map_or(0, |z| z[0][0].len());
        let mut header = vec!["t".to_string(), "component".into(), "mean_y".into(), "se_y".into()];
        header.extend((0..p).map(|c| format!("z_{c}")));
        w.write_record(&header)?;
        for (k, rows) in self.y.iter().enumerate() {
            for c in 0..m {
                let vals: Vec<f64> = rows.iter().map(|r| r[c]).collect();
                let (mean, se) = mean_se(&vals);
                let mut rec = vec![
                    self.grid.time(k).to_string(),
                    c.to_string(),
                    mean.to_string(),
                    se.to_string(),
                ];
                for j in 0..p {
                    let zm = match self.z.get(k) {
                        Some(z) => z.iter().map(|r| r[c][j]).sum::<f64>() / z.len() as f64,
                        None => f64::NAN,
                    };
                    rec.push(if zm.is_nan() { String::new() } else { zm.to_string() });
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let m = rows[0].len();
    (0..m)
        .map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64)
        .collect()
}

/// Sample mean and its standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `Z_k` per path: regression of `(Y_{k+1} − E[Y_{k+1} | X_k]) ΔH̃_k / Δt`.
fn regress_z(
    data: &BsdeData,
    proj: &Projector,
    k: usize,
    y_next: &[Vec<f64>],
    cond: &[Vec<f64>],
) -> Vec<Vec<Vec<f64>>> {
    let (m, p, paths) = (data.components, data.directions(), data.paths());
    let dt = data.grid.dt();
    let fitted: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|c| {
            (0..p)
                .into_par_iter()
                .map(|j| {
                    let b: Vec<f64> = (0..paths)
                        .map(|i| (y_next[i][c] - cond[i][c]) * data.increments[i][k][j] / dt)
                        .collect();
                    proj.project(&b)
                })
                .collect()
        })
        .collect();
    (0..paths)
        .map(|i| (0..m).map(|c| (0..p).map(|j| fitted[c][j][i]).collect()).collect())
        .collect()
}

fn regress_y(data: &BsdeData, proj: &Projector, y_next: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (m, paths) = (data.components, data.paths());
    let fitted: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|c| proj.project(&y_next.iter().map(|r| r[c]).collect::<Vec<_>>()))
        .collect();
    (0..paths).map(|i| (0..m).map(|c| fitted[c][i]).collect()).collect()
}

/// `y = c + Δt f(t, y, z)` by fixed-point iteration.
fn implicit_step(driver: &DriverFunction, t: f64, dt: f64, c: &[f64], z: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut y = c.to_vec();
    for _ in 0..FIXED_POINT_MAX_ITERS {
        let f = driver.eval(t, &y, z);
        let next: Vec<f64> = c.iter().zip(&f).map(|(a, b)| a + dt * b).collect();
        let change = next.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = next.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        y = next;
        if change <= FIXED_POINT_TOL * scale {
            return Ok(y);
        }
    }
    Err(Error::NonConvergence {
        iterations: FIXED_POINT_MAX_ITERS,
        residual: f64::NAN,
        trace: Vec::new(),
    })
}

/// Backward regression solve with the driver implicit in `Y`.
pub fn solve_bsde(data: &BsdeData) -> Result<BsdeSolution> {
    let n = data.grid.steps();
    let dt = data.grid.dt();
    if data.driver.lipschitz * dt >= 1.0 {
        return Err(Error::Argument(format!(
            "Lipschitz constant {} times step {dt} must be below 1",
            data.driver.lipschitz
        )));
    }
    let mut sol = BsdeSolution::zeros(data);
    for k in (0..n).rev() {
        let proj = data.projector(k)?;
        let cond = regress_y(data, &proj, &sol.y[k + 1]);
        let z = regress_z(data, &proj, k, &sol.y[k + 1], &cond);
        let t = data.grid.time(k);
        let y = (0..data.paths())
            .into_par_iter()
            .map(|i| implicit_step(&data.driver, t, dt, &cond[i], &z[i]))
            .collect::<Result<Vec<_>>>()?;
        sol.y[k] = y;
        sol.z[k] = z;
    }
    Ok(sol)
}

/// `‖(Y, Z)‖_β² = E Σ_k Δt e^{β t_k} (|Y_k|² + |Z_k|²)` over `k < N`.
pub fn beta_norm_sq(y: &[Vec<Vec<f64>>], z: &[Vec<Vec<Vec<f64>>>], grid: &TimeGrid, beta: f64) -> f64 {
    let dt = grid.dt();
    let paths = y[0].len() as f64;
    (0..grid.steps())
        .map(|k| {
            let w = dt * (beta * grid.time(k)).exp();
            let ys: f64 = y[k].iter().flatten().map(|v| v * v).sum();
            let zs: f64 = z[k].iter().flatten().flatten().map(|v| v * v).sum();
            w * (ys + zs) / paths
        })
        .sum()
}

/// `β`-norm of the difference of two solutions on the same paths.
pub fn beta_norm(a: &BsdeSolution, b: &BsdeSolution, beta: f64) -> f64 {
    let dy: Vec<Vec<Vec<f64>>> =
        a.y.iter()
            .zip(&b.y)
            .map(|(ra, rb)| {
                ra.iter()
                    .zip(rb)
                    .map(|(u, v)| u.iter().zip(v).map(|(x, y)| x - y).collect())
                    .collect()
            })
            .collect();
    let dz: Vec<Vec<Vec<Vec<f64>>>> =
        a.z.iter()
            .zip(&b.z)
            .map(|(ra, rb)| {
                ra.iter()
                    .zip(rb)
                    .map(|(u, v)| {
                        u.iter()
                            .zip(v)
                            .map(|(p, q)| p.iter().zip(q).map(|(x, y)| x - y).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
    beta_norm_sq(&dy, &dz, &a.grid, beta).sqrt()
}

/// One Picard iterate: `‖iterate_k − iterate_{k−1}‖_β` and its ratio to the previous difference.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PicardStep {
    pub iteration: usize,
    pub difference: f64,
    pub norm: f64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PicardReport {
    pub steps: Vec<PicardStep>,
    pub solution: BsdeSolution,
    pub beta: f64,
}

impl PicardReport {
    /// CSV: `iteration, difference, norm, ratio`.
    pub fn write_csv(&self, out: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(out)?;
        w.write_record(["iteration", "difference", "norm", "ratio"])?;
        for s in &self.steps {
            w.write_record([
                s.iteration.to_string(),
                s.difference.to_string(),
                s.norm.to_string(),
                s.ratio.map_or(String::new(), |r| r.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Picard iteration from `(Y, Z) = 0`: each iterate solves the BSDE with driver frozen at the previous one.
pub fn picard_iterate(data: &BsdeData, beta: f64, max_iters: usize, tol: f64) -> Result<PicardReport> {
    let n = data.grid.steps();
    let dt = data.grid.dt();
    let mut prev = BsdeSolution::zeros(data);
    let projectors = (0..n).map(|k| data.projector(k)).collect::<Result<Vec<_>>>()?;
    let mut steps: Vec<PicardStep> = Vec::new();
    for it in 1..=max_iters {
        let mut next = BsdeSolution::zeros(data);
        for k in (0..n).rev() {
            let cond = regress_y(data, &projectors[k], &next.y[k + 1]);
            let z = regress_z(data, &projectors[k], k, &next.y[k + 1], &cond);
            let t = data.grid.time(k);
            let y: Vec<Vec<f64>> = (0..data.paths())
                .into_par_iter()
                .map(|i| {
                    let f = data.driver.eval(t, &prev.y[k][i], &prev.z[k][i]);
                    cond[i].iter().zip(&f).map(|(a, b)| a + dt * b).collect()
                })
                .collect();
            next.y[k] = y;
            next.z[k] = z;
        }
        let difference = beta_norm(&next, &prev, beta);
        let norm = beta_norm_sq(&next.y, &next.z, &data.grid, beta).sqrt();
        let ratio = steps
            .last()
            .and_then(|s| (s.difference > 0.0).then(|| difference / s.difference));
        steps.push(PicardStep {
            iteration: it,
            difference,
            norm,
            ratio,
        });
        prev = next;
        if difference <= tol * (1.0 + norm) {
            return Ok(PicardReport {
                steps,
                solution: prev,
                beta,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual: steps.last().map_or(f64::NAN, |s| s.difference),
        trace: steps.iter().map(|s| s.difference).collect(),
    })
}

/// `‖δY‖_β² + ‖δZ‖_β²` for terminal shifts `ξ + s` against the unshifted solution.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StabilityReport {
    pub shifts: Vec<f64>,
    pub lhs: Vec<f64>,
    /// `e^{βT} m s²`, the terminal part of the a-priori bound.
    pub terminal_bound: Vec<f64>,
    /// `lhs[i] / lhs[i + 1]`.
    pub ratios: Vec<f64>,
}

pub fn stability_check(data: &BsdeData, shifts: &[f64], beta: f64) -> Result<StabilityReport> {
    let base = solve_bsde(data)?;
    let mut lhs = Vec::new();
    let mut terminal_bound = Vec::new();
    for &s in shifts {
        let other = solve_bsde(&data.shifted_terminal(s))?;
        lhs.push(beta_norm(&other, &base, beta).powi(2));
        terminal_bound.push((beta * data.grid.horizon()).exp() * data.components as f64 * s * s);
    }
    let ratios = lhs.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(StabilityReport {
        shifts: shifts.to_vec(),
        lhs,
        terminal_bound,
        ratios,
    })
}

/// Path-wise residual of `ξ = θ(0, x0) − Σ_k Δt f(t_k, θ, Z_k) + Σ_k Z_k · ΔH̃_k`
/// with `θ` and `Z` taken from a PDIE solution.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ReconstructionReport {
    pub rms: f64,
    pub standard_error: f64,
    /// RMS of `ξ − E ξ`, the scale of the target.
    pub scale: f64,
    pub paths: usize,
}

pub fn clark_ocone_reconstruct(solution: &GridSolution, data: &BsdeData) -> Result<ReconstructionReport> {
    if solution.components() != data.components {
        return Err(Error::Argument("PDIE and BSDE component counts differ".into()));
    }
    let field = CoefficientField::new(solution, &data.basis)?;
    let n = data.grid.steps();
    let dt = data.grid.dt();
    let m = data.components;
    let y0: Vec<f64> = (0..m).map(|c| solution.value(c, 0.0, &data.x0)).collect();
    let sq: Vec<f64> = (0..data.paths())
        .into_par_iter()
        .map(|i| {
            let mut rec = y0.clone();
            for k in 0..n {
                let t = data.grid.time(k);
                let x = &data.states[i][k];
                let z: Vec<Vec<f64>> = (0..m).map(|c| field.coefficients(c, t, x)).collect();
                let theta: Vec<f64> = (0..m).map(|c| solution.value(c, t, x)).collect();
                let f = data.driver.eval(t, &theta, &z);
                for c in 0..m {
                    rec[c] += -dt * f[c] + dot(&z[c], &data.increments[i][k]);
                }
            }
            rec.iter().zip(&data.xi[i]).map(|(a, b)| (a - b).powi(2)).sum()
        })
        .collect();
    let (mean, se) = mean_se(&sq);
    let centred: Vec<f64> = {
        let mu = mean_rows(&data.xi);
        data.xi
            .iter()
            .map(|r| r.iter().zip(&mu).map(|(a, b)| (a - b).powi(2)).sum())
            .collect()
    };
    let scale = (centred.iter().sum::<f64>() / centred.len() as f64).sqrt();
    let rms = mean.sqrt();
    Ok(ReconstructionReport {
        rms,
        // delta method on sqrt
        standard_error: if rms > 0.0 { se / (2.0 * rms) } else { 0.0 },
        scale,
        paths: data.paths(),
    })
}

/// Text summary of a solution.
pub fn describe(solution: &BsdeSolution, out: &mut dyn Write) -> std::io::Result<()> {
    let y0 = solution.y0();
    writeln!(
        out,
        "BSDE on {} steps of {:.3e}, {} paths, Y(0) = {:?}",
        solution.grid.steps(),
        solution.grid.dt(),
        solution.y[0].len(),
        y0
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::{poisson_copula_measure, ClaytonCopulaParams, MeixnerParams};
    use crate::orthobasis::build_basis;
    use crate::pdie::{solve_linear_pdie, solve_nonlinear_pdie, PdieOptions, SpaceGrid};

    fn atomic() -> LevyModel {
        poisson_copula_measure(1.0, 1.0, ClaytonCopulaParams::new(1.0, 1.0).unwrap()).unwrap()
    }

    fn data(model: &LevyModel, steps: usize, paths: usize, driver: DriverFunction) -> BsdeData {
        let basis = build_basis(model, 2, 1e-12).unwrap();
        let g: TerminalFn = Arc::new(|x: &[f64]| vec![(0.5 * x.iter().sum::<f64>()).sin()]);
        BsdeData::simulate(
            model,
            &basis,
            TimeGrid::new(1.0, steps).unwrap(),
            vec![0.0; model.dim()],
            g,
            driver,
            paths,
            7,
            1e-3,
        )
        .unwrap()
    }

    #[test]
    fn projector_matches_least_squares() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let cols = vec![vec![1.0; 50], x.clone(), x.iter().map(|v| 2.0 * v + 1.0).collect()];
        let p = Projector::new(cols, 1e-10);
        assert_eq!(p.rank(), 2);
        let b: Vec<f64> = x.iter().map(|v| 3.0 - v).collect();
        let fit = p.project(&b);
        assert!(fit.iter().zip(&b).all(|(a, c)| (a - c).abs() < 1e-12));
        let q: Vec<f64> = x.iter().map(|v| v * v).collect();
        let fit = p.project(&q);
        let resid: Vec<f64> = q.iter().zip(&fit).map(|(a, c)| a - c).collect();
        assert!(dot(&resid, &vec![1.0; 50]).abs() < 1e-10);
        assert!(dot(&resid, &x).abs() < 1e-10);
    }

    #[test]
    fn states_follow_drift_and_jumps() {
        let path = JumpPath {
            horizon: 1.0,
            times: vec![0.3, 0.5],
            sizes: vec![1.0, 2.0],
            dim: 1,
            effective_drift: vec![-1.0],
            eps: 1e-3,
            seed: 0,
            path_index: 0,
        };
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let s = states_on_grid(&path, &grid, &[1.0]);
        let want = [1.0, 0.75, 3.5, 3.25, 3.0];
        for (a, b) in s.iter().zip(want) {
            assert!((a[0] - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_driver_martingale_mean() {
        let d = data(&atomic(), 10, 4000, DriverFunction::zero());
        let sol = solve_bsde(&d).unwrap();
        let xi: Vec<f64> = (0..d.paths()).map(|i| d.terminal_value(i)[0]).collect();
        let (mean, _) = mean_se(&xi);
        assert!((sol.y0()[0] - mean).abs() < 1e-10);
    }

    #[test]
    fn linear_driver_scales_constant() {
        let model = atomic();
        let basis = build_basis(&model, 2, 1e-12).unwrap();
        let d = BsdeData::simulate(
            &model,
            &basis,
            TimeGrid::new(1.0, 20).unwrap(),
            vec![0.0, 0.0],
            Arc::new(|_: &[f64]| vec![1.0]),
            DriverFunction::linear(0.3),
            500,
            1,
            1e-3,
        )
        .unwrap();
        let sol = solve_bsde(&d).unwrap();
        let exact = (1.0f64 - 0.3 / 20.0).powi(-20);
        assert!((sol.y0()[0] - exact).abs() < 1e-9, "{} vs {exact}", sol.y0()[0]);
        assert!(sol.z.iter().flatten().flatten().flatten().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn picard_converges_to_direct_solve() {
        let driver = DriverFunction::new(0.5, true, |_, y, z| {
            vec![0.5 * (0.5 * y[0].sin() + 0.5 * z[0][0].cos())]
        });
        let d = data(&atomic(), 10, 2000, driver);
        let direct = solve_bsde(&d).unwrap();
        let report = picard_iterate(&d, 2.0, PICARD_MAX_ITERS, 1e-10).unwrap();
        assert!(beta_norm(&report.solution, &direct, 2.0) < 1e-8);
        for s in report.steps.iter().skip(1) {
            assert!(s.ratio.unwrap() < 0.65, "{s:?}");
        }
    }

    #[test]
    fn stability_is_quadratic_for_linear_driver() {
        let d = data(&atomic(), 10, 1000, DriverFunction::linear(0.5));
        let rep = stability_check(&d, &[1.0, 0.5, 0.25], 2.0).unwrap();
        for r in &rep.ratios {
            assert!((r - 4.0).abs() < 1e-9, "{r}");
        }
    }

    #[test]
    fn rank_policy_error_reports_step() {
        let model = atomic();
        let basis = build_basis(&model, 2, 1e-12).unwrap();
        let d = BsdeData::simulate(
            &model,
            &basis,
            TimeGrid::new(1.0, 4).unwrap(),
            vec![0.0, 0.0],
            Arc::new(|x: &[f64]| vec![x[0]]),
            DriverFunction::zero(),
            300,
            3,
            1e-3,
        )
        .unwrap()
        .with_regression(RegressionSpec {
            policy: RankPolicy::Error,
            ..Default::default()
        });
        // the terminal column duplicates x_0
        assert!(matches!(solve_bsde(&d), Err(Error::RankDeficient { kept, requested, .. }) if kept < requested));
    }

    #[test]
    fn clark_ocone_residual_shrinks_with_degree() {
        let model = atomic();
        let g = |x: &[f64]| vec![(0.5 * (x[0] + x[1])).sin()];
        let grid = SpaceGrid::new(vec![-4.0, -4.0], vec![10.0, 10.0], vec![71, 71]).unwrap();
        let sol = solve_linear_pdie(
            &model,
            &g,
            &grid,
            1.0,
            PdieOptions {
                steps: Some(80),
                ..Default::default()
            },
        )
        .unwrap();
        let mut res = Vec::new();
        for degree in [1, 2] {
            let basis = build_basis(&model, degree, 1e-12).unwrap();
            let d = BsdeData::simulate(
                &model,
                &basis,
                TimeGrid::new(1.0, 40).unwrap(),
                vec![0.0, 0.0],
                Arc::new(g),
                DriverFunction::zero(),
                2000,
                5,
                1e-3,
            )
            .unwrap();
            res.push(clark_ocone_reconstruct(&sol, &d).unwrap().rms);
        }
        assert!(res[1] < res[0], "{res:?}");
    }

    #[test]
    fn nonlinear_pdie_agrees_with_bsde_in_one_dimension() {
        let model = LevyModel::meixner(MeixnerParams::new(0.5, 0.0, 1.0, 0.0).unwrap()).unwrap();
        let g = |x: &[f64]| vec![(x[0]).cos()];
        let driver = DriverFunction::new(0.5, false, |_, y, _| vec![0.5 * y[0].sin()]);
        let grid = SpaceGrid::line(-4.0, 4.0, 161).unwrap();
        let pde = solve_nonlinear_pdie(&model, &g, &driver, None, &grid, 1.0, PdieOptions::default()).unwrap();
        let basis = build_basis(&model, 2, 1e-12).unwrap();
        let d = BsdeData::simulate(
            &model,
            &basis,
            TimeGrid::new(1.0, 20).unwrap(),
            vec![0.0],
            Arc::new(g),
            driver,
            4000,
            11,
            1e-3,
        )
        .unwrap()
        .with_regression(RegressionSpec {
            degree: 4,
            ..Default::default()
        });
        let sol = solve_bsde(&d).unwrap();
        let y0 = sol.y0()[0];
        let theta = pde.value(0, 0.0, &[0.0]);
        assert!((y0 - theta).abs() < 0.02, "{y0} vs {theta}");
    }
}
