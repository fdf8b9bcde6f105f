//! Seeded compound-Poisson simulation of pure-jump Lévy paths.
//!
//! Jumps with `|x| < eps` are dropped from continuous parts (atoms are always kept) and
//! their mean is folded into the drift, so `E[X(t)] = ã t` holds exactly for the simulated
//! process. Each path draws from its own ChaCha stream keyed by `(seed, path index)`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levy_model::{JumpComponent, LevyModel, MarginalMeasure, Region, TailTable};
use crate::multi_index::MultiIndex;
use crate::orthobasis::OrthoBasis;
use crate::quadrature::Tolerance;

/// Default truncation for continuous jump parts.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Uniform grid `0 = t_0 < … < t_N = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Argument(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::Argument("time grid needs at least one step".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Grid with twice as many steps.
    pub fn refined(&self) -> Self {
        Self {
            horizon: self.horizon,
            steps: 2 * self.steps,
        }
    }

    /// Interval index `k` with `t in (t_k, t_{k+1}]`.
    pub fn interval_of(&self, t: f64) -> usize {
        let k = (t / self.dt()).ceil() as usize;
        k.saturating_sub(1).min(self.steps - 1)
    }
}

/// One simulated path: sorted jump times, flat jump vectors and the effective drift.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath {
    pub horizon: f64,
    pub times: Vec<f64>,
    /// `times.len() * dim` jump coordinates, row-major.
    pub sizes: Vec<f64>,
    pub dim: usize,
    pub effective_drift: Vec<f64>,
    pub eps: f64,
    pub seed: u64,
    pub path_index: u64,
}

impl JumpPath {
    pub fn jump_count(&self) -> usize {
        self.times.len()
    }

    pub fn jump(&self, i: usize) -> (f64, &[f64]) {
        (self.times[i], &self.sizes[i * self.dim..(i + 1) * self.dim])
    }

    pub fn jumps(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.times.iter().copied().zip(self.sizes.chunks_exact(self.dim.max(1)))
    }
}

/// Two one-sided tail tables of a continuous marginal.
#[derive(Debug, Clone)]
struct SidedTails {
    /// Index 0: positive side, 1: negative side.
    tables: [TailTable; 2],
}

impl SidedTails {
    fn build(m: &MarginalMeasure, log10_lo: f64) -> Result<Self> {
        let tol = Tolerance::new(1e-14, 1e-12);
        Ok(Self {
            tables: [
                TailTable::build(m, 1.0, log10_lo, 3.0, 64, tol)?,
                TailTable::build(m, -1.0, log10_lo, 3.0, 64, tol)?,
            ],
        })
    }

    /// Jump `x` with signed tail value `v = U(x)`.
    fn inverse_signed(&self, v: f64) -> f64 {
        if v > 0.0 {
            self.tables[0].inverse(v)
        } else {
            -self.tables[1].inverse(-v)
        }
    }
}

#[derive(Debug, Clone)]
enum Source {
    Atom {
        x: Vec<f64>,
    },
    /// Jump on one coordinate axis, `|x| >= eps`; `side_rates[s]` is the mass of each side.
    Axis {
        axis: usize,
        tails: SidedTails,
        side_rates: [f64; 2],
    },
    /// 2-D Clayton copula of continuous marginals, `|x_1| >= eps`.
    Copula2 {
        first: SidedTails,
        second: SidedTails,
        side_rates: [f64; 2],
        mu: f64,
        eta: f64,
    },
}

/// Jump-size sampler for a model at truncation `eps`, built once and shared by all paths.
#[derive(Debug, Clone)]
pub struct JumpSampler {
    dim: usize,
    eps: f64,
    sources: Vec<Source>,
    /// Cumulative rates of `sources`.
    cumulative: Vec<f64>,
    effective_drift: Vec<f64>,
}

impl JumpSampler {
    pub fn new(model: &LevyModel, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Argument(format!("truncation eps must be positive, got {eps}")));
        }
        if model.sigma().iter().flatten().any(|&v| v != 0.0) {
            return Err(Error::Unsupported("path simulation of a Brownian part".into()));
        }
        let n = model.dim();
        let log10_eps = eps.log10();
        if log10_eps >= 3.0 {
            return Err(Error::Argument(format!(
                "truncation eps {eps} is beyond the jump range"
            )));
        }
        let mut sources = Vec::new();
        let mut rates = Vec::new();
        for c in model.components() {
            match c {
                JumpComponent::Atoms(atoms) => {
                    for a in atoms {
                        sources.push(Source::Atom { x: a.x.clone() });
                        rates.push(a.intensity);
                    }
                }
                JumpComponent::Copula { marginals, copula } => {
                    if copula.is_none() || n == 1 {
                        for (axis, m) in marginals.iter().enumerate() {
                            if !m.is_continuous() {
                                continue;
                            }
                            let tails = SidedTails::build(m, log10_eps)?;
                            let side_rates = [tails.tables[0].eval(eps), tails.tables[1].eval(eps)];
                            rates.push(side_rates[0] + side_rates[1]);
                            sources.push(Source::Axis {
                                axis,
                                tails,
                                side_rates,
                            });
                        }
                    } else if n == 2 {
                        let cp = copula.expect("copula present");
                        let first = SidedTails::build(&marginals[0], log10_eps)?;
                        let second = SidedTails::build(&marginals[1], -12.0)?;
                        let side_rates = [first.tables[0].eval(eps), first.tables[1].eval(eps)];
                        rates.push(side_rates[0] + side_rates[1]);
                        sources.push(Source::Copula2 {
                            first,
                            second,
                            side_rates,
                            mu: cp.mu,
                            eta: cp.eta,
                        });
                    } else {
                        return Err(Error::Unsupported(format!(
                            "path simulation of a {n}-dimensional copula model"
                        )));
                    }
                }
                JumpComponent::Density(d) => {
                    return Err(Error::Unsupported(format!(
                        "path simulation of density component {}",
                        d.label
                    )));
                }
            }
        }
        let mut cumulative = Vec::with_capacity(rates.len());
        let mut acc = 0.0;
        for r in rates {
            acc += r;
            cumulative.push(acc);
        }
        let mean = model.compensator_mean()?;
        let simulated_mean = if model.has_jumps() {
            model.simulated_rate_and_mean(eps)?.1
        } else {
            vec![0.0; n]
        };
        let effective_drift = mean.iter().zip(&simulated_mean).map(|(a, b)| a - b).collect();
        Ok(Self {
            dim: n,
            eps,
            sources,
            cumulative,
            effective_drift,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `ν(simulated region)`.
    pub fn rate(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// `ã − ∫_{simulated region} y ν(dy)`.
    pub fn effective_drift(&self) -> &[f64] {
        &self.effective_drift
    }

    fn rng(seed: u64, path_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        rng
    }

    fn sample_jump(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let total = self.rate();
        let pick = rng.random::<f64>() * total;
        let k = self
            .cumulative
            .partition_point(|&c| c <= pick)
            .min(self.sources.len() - 1);
        match &self.sources[k] {
            Source::Atom { x } => out.copy_from_slice(x),
            Source::Axis {
                axis,
                tails,
                side_rates,
            } => {
                out[*axis] = sample_side(tails, side_rates, rng);
            }
            Source::Copula2 {
                first,
                second,
                side_rates,
                mu,
                eta,
            } => {
                let x1 = sample_side(first, side_rates, rng);
                let u1 = if x1 > 0.0 {
                    first.tables[0].eval(x1)
                } else {
                    -first.tables[1].eval(-x1)
                };
                // conditional law of U_2 given U_1 = u1 under the Clayton Lévy copula
                let same = rng.random::<f64>() < *eta;
                let h: f64 = 1.0 - rng.random::<f64>();
                let mag = u1.abs() * (h.powf(-mu / (1.0 + mu)) - 1.0).powf(-1.0 / mu);
                let v = if same == (u1 > 0.0) { mag } else { -mag };
                out[0] = x1;
                out[1] = second.inverse_signed(v);
            }
        }
    }

    /// Calls `visit(t, jump)` for each jump of path `path_index` on `(0, horizon]`, in time order.
    pub fn for_each_jump(&self, horizon: f64, seed: u64, path_index: u64, mut visit: impl FnMut(f64, &[f64])) {
        let mut rng = Self::rng(seed, path_index);
        let mean = self.rate() * horizon;
        if mean <= 0.0 {
            return;
        }
        let count = Poisson::new(mean).expect("positive Poisson mean").sample(&mut rng) as usize;
        let mut times: Vec<f64> = (0..count).map(|_| horizon * (1.0 - rng.random::<f64>())).collect();
        times.sort_by(f64::total_cmp);
        let mut x = vec![0.0; self.dim];
        for t in times {
            self.sample_jump(&mut rng, &mut x);
            visit(t, &x);
        }
    }

    /// Full path record.
    pub fn path(&self, horizon: f64, seed: u64, path_index: u64) -> JumpPath {
        let mut times = Vec::new();
        let mut sizes = Vec::new();
        self.for_each_jump(horizon, seed, path_index, |t, x| {
            times.push(t);
            sizes.extend_from_slice(x);
        });
        JumpPath {
            horizon,
            times,
            sizes,
            dim: self.dim,
            effective_drift: self.effective_drift.clone(),
            eps: self.eps,
            seed,
            path_index,
        }
    }

    /// `X(horizon)` of path `path_index` without storing jumps.
    pub fn terminal(&self, horizon: f64, seed: u64, path_index: u64) -> Vec<f64> {
        let mut x: Vec<f64> = self.effective_drift.iter().map(|a| a * horizon).collect();
        self.for_each_jump(horizon, seed, path_index, |_, j| {
            x.iter_mut().zip(j).for_each(|(s, v)| *s += v);
        });
        x
    }

    /// Paths `0..count` in parallel, in index order.
    pub fn paths(&self, horizon: f64, seed: u64, count: usize) -> Vec<JumpPath> {
        (0..count as u64)
            .into_par_iter()
            .map(|i| self.path(horizon, seed, i))
            .collect()
    }

    /// Terminal states of paths `0..count`, in index order.
    pub fn terminals(&self, horizon: f64, seed: u64, count: usize) -> Vec<Vec<f64>> {
        (0..count as u64)
            .into_par_iter()
            .map(|i| self.terminal(horizon, seed, i))
            .collect()
    }
}

fn sample_side(tails: &SidedTails, side_rates: &[f64; 2], rng: &mut ChaCha8Rng) -> f64 {
    let total = side_rates[0] + side_rates[1];
    let positive = rng.random::<f64>() * total < side_rates[0];
    let side = usize::from(!positive);
    // |U| uniform on (0, |U(±eps)|]
    let u = side_rates[side] * (1.0 - rng.random::<f64>());
    let x = tails.tables[side].inverse(u);
    if positive {
        x
    } else {
        -x
    }
}

/// One path of `model` on `[0, horizon]` with truncation `eps`.
pub fn simulate_path(model: &LevyModel, horizon: f64, eps: f64, seed: u64) -> Result<JumpPath> {
    simulate_path_indexed(model, horizon, eps, seed, 0)
}

/// Path `path_index` of the seeded family.
pub fn simulate_path_indexed(
    model: &LevyModel,
    horizon: f64,
    eps: f64,
    seed: u64,
    path_index: u64,
) -> Result<JumpPath> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Argument(format!("horizon must be positive, got {horizon}")));
    }
    Ok(JumpSampler::new(model, eps)?.path(horizon, seed, path_index))
}

/// `X(t) = drift · t + Σ_{s<=t} ΔX(s)`.
pub fn state_at(path: &JumpPath, t: f64) -> Result<Vec<f64>> {
    if !(0.0..=path.horizon).contains(&t) {
        return Err(Error::Argument(format!("time {t} outside [0, {}]", path.horizon)));
    }
    let mut x: Vec<f64> = path.effective_drift.iter().map(|a| a * t).collect();
    for (s, j) in path.jumps() {
        if s > t {
            break;
        }
        x.iter_mut().zip(j).for_each(|(v, d)| *v += d);
    }
    Ok(x)
}

/// `X^p(t) = Σ_{0<s<=t} ΔX(s)^p`.
pub fn power_jump_sum(path: &JumpPath, p: &MultiIndex, t: f64) -> f64 {
    path.jumps()
        .take_while(|(s, _)| *s <= t)
        .map(|(_, j)| p.monomial(j))
        .sum()
}

/// Increments `ΔH^p` of the kept Teugels martingales on each grid interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TeugelsIncrements {
    /// Basis positions of the kept directions, one column each.
    pub kept: Vec<usize>,
    /// `values[k][c]`: increment of direction `kept[c]` over `(t_k, t_{k+1}]`.
    pub values: Vec<Vec<f64>>,
}

impl TeugelsIncrements {
    /// Increments of `H^p / ‖H^p‖`.
    pub fn orthonormal(&self, basis: &OrthoBasis) -> Vec<Vec<f64>> {
        let norms: Vec<f64> = self.kept.iter().map(|&k| basis.norm(k)).collect();
        self.values
            .iter()
            .map(|row| row.iter().zip(&norms).map(|(v, n)| v / n).collect())
            .collect()
    }
}

/// `ΔH^p = Σ_q c_{pq} ΔY^q` with `ΔY^q = Σ_{jumps} Δx^q − Δt m_q` (`|q| >= 2`) and `ΔY^{e_i} = ΔX_i − Δt ã_i`.
pub fn teugels_increments(path: &JumpPath, basis: &OrthoBasis, grid: &TimeGrid) -> Result<TeugelsIncrements> {
    if (grid.horizon() - path.horizon).abs() > 1e-12 * path.horizon.max(1.0) {
        return Err(Error::Argument(format!(
            "grid horizon {} does not match path horizon {}",
            grid.horizon(),
            path.horizon
        )));
    }
    if basis.dim() != path.dim {
        return Err(Error::Argument("basis and path dimensions differ".into()));
    }
    let order = basis.order();
    let dt = grid.dt();
    let mut y = vec![vec![0.0; order.len()]; grid.steps()];
    for (t, j) in path.jumps() {
        let row = &mut y[grid.interval_of(t)];
        for (v, q) in row.iter_mut().zip(order) {
            *v += q.monomial(j);
        }
    }
    let comps = basis.compensators();
    for row in &mut y {
        for (i, q) in order.iter().enumerate() {
            let drift = match q.unit_axis() {
                Some(a) => path.effective_drift[a] * dt,
                None => 0.0,
            };
            row[i] += drift - dt * comps[i];
        }
    }
    let kept = basis.kept_up_to(basis.max_degree());
    let coeffs = basis.coeffs();
    let values = y
        .iter()
        .map(|row| {
            kept.iter()
                .map(|&k| (0..=k).map(|j| coeffs[k][j] * row[j]).sum())
                .collect()
        })
        .collect();
    Ok(TeugelsIncrements { kept, values })
}

/// `S_i(t_k) = S0_i exp(r t_k + X_i(t_k))`, rows indexed by time.
pub fn stock_paths(model: &LevyModel, s0: &[f64], r: f64, path: &JumpPath, grid: &TimeGrid) -> Result<Vec<Vec<f64>>> {
    if s0.len() != model.dim() || path.dim != model.dim() {
        return Err(Error::Argument("spot vector, path and model dimensions differ".into()));
    }
    if s0.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Domain("initial prices must be positive".into()));
    }
    grid.times()
        .into_iter()
        .map(|t| {
            let x = state_at(path, t.min(path.horizon))?;
            Ok(s0.iter().zip(&x).map(|(s, xi)| s * (r * t + xi).exp()).collect())
        })
        .collect()
}

/// Root-mean-square residual of the jump-sum representation truncated at degree `max_degree`:
/// `Σ h(s, ΔX(s)) − Σ_k [Δt ∫ h(t_k, ·) dν + Σ_p ⟨h(t_k, ·), p^p⟩ / ‖p^p‖² ΔH^p_k]`.
///
/// Integrals run over the simulated part of `ν`; `basis` must carry its compensators.
pub fn jump_sum_representation_check(
    model: &LevyModel,
    paths: &[JumpPath],
    h: &(dyn Fn(f64, &[f64]) -> f64 + Sync),
    basis: &OrthoBasis,
    grid: &TimeGrid,
    max_degree: u32,
) -> Result<f64> {
    if paths.is_empty() {
        return Ok(0.0);
    }
    if max_degree > basis.max_degree() {
        return Err(Error::Argument(format!(
            "degree {max_degree} exceeds basis degree {}",
            basis.max_degree()
        )));
    }
    let eps = paths[0].eps;
    let tol = Tolerance::default();
    let region = Region::Simulated(eps);
    let cols = basis.kept_up_to(max_degree);
    // per grid time: ∫hν and projection coefficients
    let mut mass = Vec::with_capacity(grid.steps());
    let mut proj = Vec::with_capacity(grid.steps());
    for k in 0..grid.steps() {
        let t = grid.time(k);
        mass.push(model.integrate(|y| h(t, y), region, tol)?);
        let mut row = Vec::with_capacity(cols.len());
        for &c in &cols {
            let ip = model.integrate(|y| h(t, y) * basis.eval_row(c, y), region, tol)?;
            row.push(ip / basis.norms_sq()[c]);
        }
        proj.push(row);
    }
    let sq: Vec<f64> = paths
        .par_iter()
        .map(|path| -> Result<f64> {
            let inc = teugels_increments(path, basis, grid)?;
            let lhs: f64 = path.jumps().map(|(s, j)| h(s, j)).sum();
            let mut rhs = 0.0;
            for k in 0..grid.steps() {
                rhs += grid.dt() * mass[k];
                for (ci, &c) in cols.iter().enumerate() {
                    let pos = inc.kept.iter().position(|&q| q == c).expect("column is kept");
                    rhs += proj[k][ci] * inc.values[k][pos];
                }
            }
            Ok((lhs - rhs).powi(2))
        })
        .collect::<Result<_>>()?;
    Ok((sq.iter().sum::<f64>() / sq.len() as f64).sqrt())
}

/// Path dump: comment header with seed and eps, then `path_id,time,dim,jump_size` rows.
pub fn write_paths_csv(paths: &[JumpPath], out: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(out)?);
    if let Some(p) = paths.first() {
        writeln!(file, "# seed={} eps={} horizon={}", p.seed, p.eps, p.horizon)?;
        let drift: Vec<String> = p.effective_drift.iter().map(|v| v.to_string()).collect();
        writeln!(file, "# effective_drift={}", drift.join(";"))?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["path_id", "time", "dim", "jump_size"])?;
    for p in paths {
        for (t, j) in p.jumps() {
            for (d, v) in j.iter().enumerate() {
                w.write_record([p.path_index.to_string(), t.to_string(), d.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
