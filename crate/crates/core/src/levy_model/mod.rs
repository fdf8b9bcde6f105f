//! Multidimensional Lévy measures, their moments, tail integrals and drift conditions.
//!
//! Drift convention: `X(t) = a t + Σ jumps − t ∫_{‖y‖≤1} y ν(dy)` (truncation `1{‖y‖ ≤ 1}`),
//! so `E[X(1)] = ã = a + ∫_{‖y‖>1} y ν(dy)`.

mod copula;
mod marginal;
mod meixner;
mod tail_table;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

pub(crate) use copula::clayton_margin_value;
pub use copula::{clayton_copula, clayton_mixed_derivative, ClaytonCopulaParams};
pub use marginal::{tail_integral, MarginalMeasure, Region1};
pub use meixner::{meixner_cumulant, meixner_levy_density, MeixnerParams};

use crate::error::{Error, Result};
use crate::multi_index::MultiIndex;
use crate::quadrature::{self, Tolerance};
pub(crate) use tail_table::TailTable;

/// Point mass of the Lévy measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub x: Vec<f64>,
    pub intensity: f64,
}

/// Density closure `x ↦ ν(x)`.
pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Lévy density given as a closure on a box (bounds may be infinite).
#[derive(Clone)]
pub struct ExplicitDensity {
    pub density: DensityFn,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub label: String,
}

impl fmt::Debug for ExplicitDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExplicitDensity")
            .field("label", &self.label)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .finish()
    }
}

/// One additive piece of the Lévy measure.
#[derive(Debug, Clone)]
pub enum JumpComponent {
    Atoms(Vec<Atom>),
    /// Continuous marginals coupled by a Clayton Lévy copula; `None` means jumps on the axes only.
    Copula {
        marginals: Vec<MarginalMeasure>,
        copula: Option<ClaytonCopulaParams>,
    },
    Density(ExplicitDensity),
}

/// Integration domain for `n`-dimensional jump integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    All,
    /// `‖x‖ > r`
    BeyondRadius(f64),
    /// `0 < ‖x‖ <= r`
    WithinRadius(f64),
    /// Jumps kept by the compound-Poisson simulator at truncation `eps`.
    Simulated(f64),
}

/// Outcome of the exponential-moment test.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis1Report {
    pub holds: bool,
    pub value: f64,
    pub diagnostic: String,
}

/// Lévy triple `(a, Σ, ν)` with `ν` a sum of jump components.
#[derive(Debug, Clone)]
pub struct LevyModel {
    n: usize,
    drift: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    components: Vec<JumpComponent>,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn in_region(x: &[f64], region: Region) -> bool {
    match region {
        Region::All => true,
        Region::BeyondRadius(r) => norm(x) > r,
        Region::WithinRadius(r) => norm(x) <= r,
        Region::Simulated(_) => true,
    }
}

/// `e^z − 1 − z` without cancellation near 0.
pub(crate) fn exp_remainder(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        let z2 = z * z;
        z2 * (0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z / 120.0)))
    } else {
        z.exp_m1() - z
    }
}

impl LevyModel {
    /// Model with drift `a`, zero covariance and no jumps.
    pub fn new(drift: Vec<f64>) -> Result<Self> {
        let n = drift.len();
        if n == 0 {
            return Err(Error::Argument("model dimension must be >= 1".into()));
        }
        if drift.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("drift must be finite".into()));
        }
        Ok(Self {
            n,
            drift,
            sigma: vec![vec![0.0; n]; n],
            components: Vec::new(),
        })
    }

    pub fn zero(n: usize) -> Result<Self> {
        Self::new(vec![0.0; n])
    }

    /// One-dimensional Meixner model whose `X(1)` has the Meixner law (location included).
    pub fn meixner(params: MeixnerParams) -> Result<Self> {
        Self::zero(1)?
            .with_copula(vec![MarginalMeasure::Meixner(params)], None)?
            .with_mean(&[params.mean()])
    }

    pub fn with_sigma(mut self, sigma: Vec<Vec<f64>>) -> Result<Self> {
        check_psd(&sigma, self.n)?;
        self.sigma = sigma;
        Ok(self)
    }

    pub fn with_drift(mut self, drift: Vec<f64>) -> Result<Self> {
        if drift.len() != self.n {
            return Err(Error::Argument(format!(
                "drift has length {}, expected {}",
                drift.len(),
                self.n
            )));
        }
        self.drift = drift;
        Ok(self)
    }

    /// Sets `a` so that `E[X(1)] = mean`.
    pub fn with_mean(self, mean: &[f64]) -> Result<Self> {
        let big = self.large_jump_mean()?;
        let drift = mean.iter().zip(&big).map(|(m, b)| m - b).collect();
        self.with_drift(drift)
    }

    pub fn with_atoms(mut self, atoms: Vec<Atom>) -> Result<Self> {
        for a in &atoms {
            if a.x.len() != self.n {
                return Err(Error::Argument(format!("atom {:?} has wrong dimension", a.x)));
            }
            if !(a.intensity >= 0.0 && a.intensity.is_finite()) {
                return Err(Error::Domain(format!(
                    "atom intensity must be >= 0, got {}",
                    a.intensity
                )));
            }
            if a.x.iter().all(|&v| v == 0.0) {
                return Err(Error::Domain("Lévy measure has no mass at the origin".into()));
            }
        }
        let atoms: Vec<Atom> = atoms.into_iter().filter(|a| a.intensity > 0.0).collect();
        if !atoms.is_empty() {
            self.components.push(JumpComponent::Atoms(atoms));
        }
        Ok(self)
    }

    /// Marginals coupled by a Clayton Lévy copula. Unit-jump Poisson marginals are expanded to atoms.
    pub fn with_copula(self, marginals: Vec<MarginalMeasure>, copula: Option<ClaytonCopulaParams>) -> Result<Self> {
        if marginals.len() != self.n {
            return Err(Error::Argument(format!(
                "{} marginals for a {}-dimensional model",
                marginals.len(),
                self.n
            )));
        }
        for m in &marginals {
            m.validate()?;
        }
        if let Some(c) = &copula {
            c.validate()?;
        }
        let continuous = marginals.iter().filter(|m| m.is_continuous()).count();
        if continuous == 0 {
            let intensities: Vec<f64> = marginals
                .iter()
                .map(|m| match m {
                    MarginalMeasure::PoissonUnitJump { intensity } => *intensity,
                    MarginalMeasure::Meixner(_) => unreachable!(),
                })
                .collect();
            let atoms = poisson_copula_atoms(&intensities, copula.as_ref())?;
            return self.with_atoms(atoms);
        }
        if continuous != marginals.len() && copula.is_some() && self.n > 1 {
            return Err(Error::Unsupported(
                "copula coupling of Poisson and continuous marginals".into(),
            ));
        }
        let mut model = self;
        if copula.is_none() || model.n == 1 {
            // independent coordinates: Poisson axes become atoms
            let mut atoms = Vec::new();
            let mut conts = Vec::new();
            for (i, m) in marginals.iter().enumerate() {
                if m.is_continuous() {
                    conts.push(i);
                } else {
                    for (x, mass) in m.atoms() {
                        let mut v = vec![0.0; model.n];
                        v[i] = x;
                        atoms.push(Atom { x: v, intensity: mass });
                    }
                }
            }
            model = model.with_atoms(atoms)?;
            if !conts.is_empty() {
                // atomic coordinates carry zero continuous mass in this component
                let marginals = marginals
                    .iter()
                    .map(|m| {
                        if m.is_continuous() {
                            *m
                        } else {
                            MarginalMeasure::PoissonUnitJump { intensity: 0.0 }
                        }
                    })
                    .collect();
                model.components.push(JumpComponent::Copula {
                    marginals,
                    copula: None,
                });
            }
            return Ok(model);
        }
        model.components.push(JumpComponent::Copula { marginals, copula });
        Ok(model)
    }

    pub fn with_density(mut self, density: ExplicitDensity) -> Result<Self> {
        if density.lower.len() != self.n || density.upper.len() != self.n {
            return Err(Error::Argument("density support box has wrong dimension".into()));
        }
        if density.lower.iter().zip(&density.upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Argument("density support box must have lower < upper".into()));
        }
        self.components.push(JumpComponent::Density(density));
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn sigma(&self) -> &[Vec<f64>] {
        &self.sigma
    }

    pub fn components(&self) -> &[JumpComponent] {
        &self.components
    }

    pub fn has_jumps(&self) -> bool {
        !self.components.is_empty()
    }

    /// True when every jump component is atomic.
    pub fn is_atomic(&self) -> bool {
        self.components.iter().all(|c| matches!(c, JumpComponent::Atoms(_)))
    }

    /// All atoms across components.
    pub fn atoms(&self) -> Vec<Atom> {
        self.components
            .iter()
            .filter_map(|c| match c {
                JumpComponent::Atoms(a) => Some(a.clone()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Stable text description used for hashing.
    pub fn fingerprint(&self) -> String {
        let mut s = format!("n={};a={:?};sigma={:?}", self.n, self.drift, self.sigma);
        for c in &self.components {
            match c {
                JumpComponent::Atoms(a) => {
                    for at in a {
                        s.push_str(&format!(";atom{:?}@{:?}", at.x, at.intensity));
                    }
                }
                JumpComponent::Copula { marginals, copula } => {
                    s.push_str(&format!(";marginals{marginals:?};copula{copula:?}"));
                }
                JumpComponent::Density(d) => s.push_str(&format!(";{d:?}")),
            }
        }
        s
    }

    /// `∫_region f(y) ν(dy)`.
    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F, region: Region, tol: Tolerance) -> Result<f64> {
        let mut total = 0.0;
        for c in &self.components {
            total += self.integrate_component(c, &mut f, region, tol)?;
        }
        Ok(total)
    }

    fn integrate_component<F: FnMut(&[f64]) -> f64>(
        &self,
        c: &JumpComponent,
        f: &mut F,
        region: Region,
        tol: Tolerance,
    ) -> Result<f64> {
        match c {
            JumpComponent::Atoms(atoms) => Ok(atoms
                .iter()
                .filter(|a| in_region(&a.x, region))
                .map(|a| a.intensity * f(&a.x))
                .sum()),
            JumpComponent::Copula { marginals, copula } => {
                if copula.is_none() || self.n == 1 {
                    let mut total = 0.0;
                    let mut x = vec![0.0; self.n];
                    for (i, m) in marginals.iter().enumerate() {
                        if !m.is_continuous() {
                            continue;
                        }
                        let r1 = match region {
                            Region::All => Region1::All,
                            Region::BeyondRadius(r) => Region1::Outside(r),
                            Region::WithinRadius(r) => Region1::Inside(r),
                            Region::Simulated(eps) => Region1::Outside(eps),
                        };
                        total += m.integrate(
                            |xi| {
                                x.iter_mut().for_each(|v| *v = 0.0);
                                x[i] = xi;
                                f(&x)
                            },
                            r1,
                            tol,
                            "marginal jump integral",
                        )?;
                    }
                    Ok(total)
                } else if self.n == 2 {
                    let cp = copula.expect("copula present");
                    CopulaIntegrator::new([&marginals[0], &marginals[1]], cp, tol).integrate(f, region)
                } else {
                    Err(Error::Unsupported(format!(
                        "general jump integrals for {}-dimensional copula models (moments remain available)",
                        self.n
                    )))
                }
            }
            JumpComponent::Density(d) => integrate_density(d, f, region, tol),
        }
    }

    /// Moment `m_p = ∫ y^p ν(dy)`.
    pub fn moment(&self, p: &MultiIndex, tol: Tolerance) -> Result<f64> {
        if p.dim() != self.n {
            return Err(Error::Argument(format!("multi-index {p} has wrong dimension")));
        }
        if p.degree() == 0 {
            return Err(Error::Argument(
                "moment of degree 0 is the total mass; use |p| >= 1".into(),
            ));
        }
        let mut total = 0.0;
        for c in &self.components {
            total += match c {
                JumpComponent::Atoms(atoms) => atoms.iter().map(|a| a.intensity * p.monomial(&a.x)).sum(),
                JumpComponent::Copula { marginals, copula } => {
                    let support = p.support();
                    if support.len() == 1 {
                        let i = support[0];
                        if marginals[i].is_continuous() {
                            marginals[i].moment(p.parts()[i], Region1::All, tol)?
                        } else {
                            0.0
                        }
                    } else if let (Some(cp), true) = (copula, self.n > 1) {
                        tail_route_moment(marginals, cp, p)?
                    } else {
                        0.0
                    }
                }
                JumpComponent::Density(d) => integrate_density(d, &mut |x: &[f64]| p.monomial(x), Region::All, tol)?,
            };
        }
        Ok(total)
    }

    /// `∫_region y^p ν(dy)`.
    pub fn moment_in(&self, p: &MultiIndex, region: Region, tol: Tolerance) -> Result<f64> {
        if region == Region::All {
            return self.moment(p, tol);
        }
        self.integrate(|x| p.monomial(x), region, tol)
    }

    /// `ã = a + ∫_{‖y‖>1} y ν(dy) = E[X(1)]`.
    pub fn compensator_mean(&self) -> Result<Vec<f64>> {
        let big = self.large_jump_mean()?;
        Ok(self.drift.iter().zip(big).map(|(a, b)| a + b).collect())
    }

    fn large_jump_mean(&self) -> Result<Vec<f64>> {
        (0..self.n)
            .map(|j| self.integrate(|y| y[j], Region::BeyondRadius(1.0), Tolerance::default()))
            .collect()
    }

    /// `∫(e^{z_j} − 1 − z_j 1{‖z‖≤1}) ν(dz)` for each coordinate.
    pub fn exponential_compensator(&self) -> Result<Vec<f64>> {
        let tol = Tolerance::default();
        (0..self.n)
            .map(|j| {
                let inner = self.integrate(|z| exp_remainder(z[j]), Region::WithinRadius(1.0), tol)?;
                let outer = self.integrate(|z| z[j].exp_m1(), Region::BeyondRadius(1.0), tol)?;
                Ok(inner + outer)
            })
            .collect()
    }

    /// Drift `a_j = −σ_jj/2 − ∫(e^{z_j} − 1 − z_j 1{‖z‖≤1}) ν(dz)` making each `e^{X_j}` a martingale.
    pub fn risk_neutral_drift(&self) -> Result<Vec<f64>> {
        let k = self.exponential_compensator()?;
        Ok((0..self.n).map(|j| -0.5 * self.sigma[j][j] - k[j]).collect())
    }

    pub fn with_risk_neutral_drift(self) -> Result<Self> {
        let a = self.risk_neutral_drift()?;
        self.with_drift(a)
    }

    /// `σ_jj/2 + a_j + ∫(e^{z_j} − 1 − z_j 1{‖z‖≤1}) ν(dz)` per coordinate.
    pub fn martingale_residual(&self) -> Result<Vec<f64>> {
        let k = self.exponential_compensator()?;
        Ok((0..self.n)
            .map(|j| 0.5 * self.sigma[j][j] + self.drift[j] + k[j])
            .collect())
    }

    /// Numerical test of `∫_{‖x‖≥eps} exp(λ‖x‖) ν(dx) < ∞`.
    pub fn check_hypothesis1(&self, eps: f64, lambda: f64) -> Hypothesis1Report {
        if !(eps > 0.0 && lambda > 0.0) {
            return Hypothesis1Report {
                holds: false,
                value: f64::NAN,
                diagnostic: "eps and lambda must be positive".into(),
            };
        }
        match self.integrate(
            |x| (lambda * norm(x)).exp(),
            Region::BeyondRadius(eps),
            Tolerance::new(1e-10, 1e-8),
        ) {
            Ok(v) if v.is_finite() => Hypothesis1Report {
                holds: true,
                value: v,
                diagnostic: "shell contributions decay".into(),
            },
            Ok(v) => Hypothesis1Report {
                holds: false,
                value: v,
                diagnostic: "non-finite integral".into(),
            },
            Err(e) => Hypothesis1Report {
                holds: false,
                value: f64::INFINITY,
                diagnostic: e.to_string(),
            },
        }
    }

    /// `∫_{simulated region} y ν(dy)` and the rate `ν(simulated region)`.
    pub fn simulated_rate_and_mean(&self, eps: f64) -> Result<(f64, Vec<f64>)> {
        let tol = Tolerance::default();
        let rate = self.integrate(|_| 1.0, Region::Simulated(eps), tol)?;
        let mean = (0..self.n)
            .map(|j| self.integrate(|y| y[j], Region::Simulated(eps), tol))
            .collect::<Result<Vec<_>>>()?;
        Ok((rate, mean))
    }
}

fn check_psd(sigma: &[Vec<f64>], n: usize) -> Result<()> {
    if sigma.len() != n || sigma.iter().any(|r| r.len() != n) {
        return Err(Error::Argument(format!("sigma must be {n}x{n}")));
    }
    let scale = sigma.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for i in 0..n {
        for j in 0..i {
            if (sigma[i][j] - sigma[j][i]).abs() > 1e-12 * scale {
                return Err(Error::Domain("sigma must be symmetric".into()));
            }
        }
    }
    // LDLᵀ with zero pivots allowed when the column vanishes
    let mut l = vec![vec![0.0; n]; n];
    let mut d = vec![0.0; n];
    for j in 0..n {
        d[j] = sigma[j][j] - (0..j).map(|k| l[j][k] * l[j][k] * d[k]).sum::<f64>();
        if d[j] < -1e-12 * scale {
            return Err(Error::Domain("sigma is not positive semidefinite".into()));
        }
        for i in j + 1..n {
            let v = sigma[i][j] - (0..j).map(|k| l[i][k] * l[j][k] * d[k]).sum::<f64>();
            if d[j] <= 1e-12 * scale {
                if v.abs() > 1e-9 * scale {
                    return Err(Error::Domain("sigma is not positive semidefinite".into()));
                }
                l[i][j] = 0.0;
            } else {
                l[i][j] = v / d[j];
            }
        }
    }
    Ok(())
}

/// Atoms of the Poisson Lévy-copula measure with unit jumps.
///
/// A coordinate set `S` jumps together at rate given by inclusion-exclusion of the
/// copula margins evaluated at the intensities; `None` means independent axes.
fn poisson_copula_atoms(intensities: &[f64], copula: Option<&ClaytonCopulaParams>) -> Result<Vec<Atom>> {
    let n = intensities.len();
    if n > 16 {
        return Err(Error::Unsupported(
            "Poisson copula expansion above 16 coordinates".into(),
        ));
    }
    let Some(cp) = copula else {
        return Ok((0..n)
            .map(|i| {
                let mut x = vec![0.0; n];
                x[i] = 1.0;
                Atom {
                    x,
                    intensity: intensities[i],
                }
            })
            .collect());
    };
    // G(T) = ν(all coordinates in T jump) = F_T(λ_T)
    let g = |mask: usize| -> f64 {
        let kept: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| intensities[i]).collect();
        clayton_margin_value(&kept, n, cp)
    };
    let mut atoms = Vec::new();
    for mask in 1usize..(1 << n) {
        // exactly the coordinates in `mask` jump: Σ_{T ⊇ mask} (−1)^{|T|−|mask|} G(T)
        let rest = ((1 << n) - 1) ^ mask;
        let mut rate = 0.0;
        let mut sub = rest;
        loop {
            let t = mask | sub;
            let sign = if sub.count_ones().is_multiple_of(2) { 1.0 } else { -1.0 };
            rate += sign * g(t);
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
        if rate < -1e-12 * intensities.iter().fold(0.0f64, |a, b| a.max(*b)) {
            return Err(Error::Numerical(format!("negative joint jump rate {rate}")));
        }
        if rate > 0.0 {
            let x = (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { 0.0 }).collect();
            atoms.push(Atom { x, intensity: rate });
        }
    }
    Ok(atoms)
}

/// Common-jump model: one atom at `(1, 1)` with intensity `∂_1∂_2 F(λ1, λ2)` and drift `(−λ1, −λ2)`.
pub fn common_poisson_measure(lambda1: f64, lambda2: f64, params: ClaytonCopulaParams) -> Result<LevyModel> {
    params.validate()?;
    if !(lambda1 > 0.0 && lambda2 > 0.0) {
        return Err(Error::Domain("Poisson intensities must be > 0".into()));
    }
    let c = common_jump_intensity(lambda1, lambda2, &params);
    LevyModel::new(vec![-lambda1, -lambda2])?.with_atoms(vec![Atom {
        x: vec![1.0, 1.0],
        intensity: c,
    }])
}

/// `η(1+μ)(λ1λ2)^μ / (λ1^μ + λ2^μ)^{1/μ+2}`.
pub fn common_jump_intensity(lambda1: f64, lambda2: f64, params: &ClaytonCopulaParams) -> f64 {
    let mu = params.mu;
    params.eta * (1.0 + mu) * (lambda1 * lambda2).powf(mu) / (lambda1.powf(mu) + lambda2.powf(mu)).powf(1.0 / mu + 2.0)
}

/// Marginally consistent 2-D Poisson Lévy-copula model: common jumps at rate `F(λ1, λ2)`,
/// single jumps at `λ_i − F(λ1, λ2)`, drift chosen so each `X_i = N_i − λ_i t`.
pub fn poisson_copula_measure(lambda1: f64, lambda2: f64, params: ClaytonCopulaParams) -> Result<LevyModel> {
    LevyModel::zero(2)?
        .with_copula(
            vec![
                MarginalMeasure::PoissonUnitJump { intensity: lambda1 },
                MarginalMeasure::PoissonUnitJump { intensity: lambda2 },
            ],
            Some(params),
        )?
        .with_mean(&[0.0, 0.0])
}

/// Joint Lévy density `∂_1..∂_n F(U_1(x_1), .., U_n(x_n)) Π ν_i(x_i)` of a copula model.
pub fn joint_levy_density(x: &[f64], model: &LevyModel) -> Result<f64> {
    if x.len() != model.n {
        return Err(Error::Argument("point has wrong dimension".into()));
    }
    if x.contains(&0.0) {
        return Err(Error::Domain("joint density needs every coordinate nonzero".into()));
    }
    let mut total = 0.0;
    let mut found = false;
    for c in &model.components {
        match c {
            JumpComponent::Atoms(_) => {
                return Err(Error::Unsupported(
                    "atomic Lévy measure has no density; use its atoms directly".into(),
                ))
            }
            JumpComponent::Copula {
                marginals,
                copula: Some(cp),
            } if model.n > 1 => {
                found = true;
                let mut u = Vec::with_capacity(x.len());
                let mut prod = 1.0;
                for (m, &xi) in marginals.iter().zip(x) {
                    u.push(m.tail(xi, Tolerance::default())?);
                    prod *= m.density(xi).unwrap_or(0.0);
                }
                total += clayton_mixed_derivative(&u, cp) * prod;
            }
            JumpComponent::Copula { .. } => {
                found = true;
                if model.n == 1 {
                    if let JumpComponent::Copula { marginals, .. } = c {
                        total += marginals[0].density(x[0]).unwrap_or(0.0);
                    }
                }
            }
            JumpComponent::Density(d) => {
                found = true;
                if x.iter().zip(&d.lower).zip(&d.upper).all(|((v, l), u)| l <= v && v <= u) {
                    total += (d.density)(x);
                }
            }
        }
    }
    if !found {
        return Err(Error::Unsupported("model has no continuous jump part".into()));
    }
    Ok(total)
}

/// Tail integrals memoised by argument bits; quadrature nodes repeat across outer evaluations.
/// Tail integral lookup: tabulated inside `[1e-12, 1e3]`, exact quadrature outside.
struct TailCache<'a> {
    m: &'a MarginalMeasure,
    tol: Tolerance,
    tables: RefCell<[Option<TailTable>; 2]>,
    map: RefCell<HashMap<u64, f64>>,
}

impl<'a> TailCache<'a> {
    fn new(m: &'a MarginalMeasure, tol: Tolerance) -> Self {
        Self {
            m,
            tol,
            tables: RefCell::new([None, None]),
            map: RefCell::new(HashMap::new()),
        }
    }

    fn exact(&self, x: f64) -> Result<f64> {
        if let Some(v) = self.map.borrow().get(&x.to_bits()) {
            return Ok(*v);
        }
        let v = self.m.tail(x, self.tol)?;
        self.map.borrow_mut().insert(x.to_bits(), v);
        Ok(v)
    }

    fn get(&self, x: f64) -> Result<f64> {
        if x == 0.0 || !x.is_finite() || !self.m.is_continuous() {
            return self.exact(x);
        }
        let side = usize::from(x < 0.0);
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        if self.tables.borrow()[side].is_none() {
            let t = TailTable::build(self.m, sign, -12.0, 3.0, 64, self.tol)?;
            self.tables.borrow_mut()[side] = Some(t);
        }
        let tables = self.tables.borrow();
        let table = tables[side].as_ref().expect("table built above");
        if table.covers(x.abs()) {
            return Ok(sign * table.eval(x.abs()));
        }
        drop(tables);
        self.exact(x)
    }
}

/// Nested quadrature of `f · ν` for a 2-D Clayton copula of continuous marginals.
struct CopulaIntegrator<'a> {
    m: [&'a MarginalMeasure; 2],
    cp: ClaytonCopulaParams,
    tails: [TailCache<'a>; 2],
    tol: Tolerance,
}

/// `∫_lo^hi g` over `x > 0` with an extra breakpoint at `c`.
fn split_half_line(g: &mut dyn FnMut(f64) -> f64, lo: f64, hi: f64, c: f64, tol: Tolerance, ctx: &str) -> Result<f64> {
    if !(lo < hi) {
        return Ok(0.0);
    }
    let mut pts = vec![lo];
    if c > lo && c < hi {
        pts.push(c);
    }
    if hi.is_infinite() {
        let last = *pts.last().unwrap();
        if last < 1.0 && 1.0 > lo {
            pts.push(1.0);
        }
    }
    pts.push(hi);
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        total += if a == 0.0 {
            quadrature::integrate_from_zero(&mut |x| g(x), b, tol, ctx)?
        } else if b.is_infinite() {
            quadrature::integrate_upper_tail(&mut |x| g(x), a, tol, ctx)?
        } else {
            quadrature::integrate(&mut |x| g(x), a, b, tol)
        };
    }
    Ok(total)
}

impl<'a> CopulaIntegrator<'a> {
    fn new(m: [&'a MarginalMeasure; 2], cp: ClaytonCopulaParams, tol: Tolerance) -> Self {
        let tail_tol = Tolerance::new(1e-14, 1e-12);
        Self {
            m,
            cp,
            tails: [TailCache::new(m[0], tail_tol), TailCache::new(m[1], tail_tol)],
            tol,
        }
    }

    fn integrate<F: FnMut(&[f64]) -> f64>(&self, f: &mut F, region: Region) -> Result<f64> {
        let err: RefCell<Option<Error>> = RefCell::new(None);
        let ctx = "copula jump integral";
        let f = RefCell::new(f);
        let inner = |x1: f64, r2: Region1| -> f64 {
            if err.borrow().is_some() {
                return 0.0;
            }
            let run = || -> Result<f64> {
                let u1 = self.tails[0].get(x1)?;
                let d1 = self.m[0].density(x1).unwrap_or(0.0);
                if u1 == 0.0 || d1 == 0.0 {
                    return Ok(0.0);
                }
                let mut g = |x2: f64| -> f64 {
                    let u2 = match self.tails[1].get(x2) {
                        Ok(v) => v,
                        Err(e) => {
                            err.borrow_mut().get_or_insert(e);
                            return 0.0;
                        }
                    };
                    let k = clayton_mixed_derivative(&[u1, u2], &self.cp);
                    if k == 0.0 {
                        return 0.0;
                    }
                    let v = (f.borrow_mut())(&[x1, x2]);
                    if v == 0.0 {
                        0.0
                    } else {
                        v * k * d1 * self.m[1].density(x2).unwrap_or(0.0)
                    }
                };
                // the copula density peaks near |x2| ~ |x1|; split there
                let c = x1.abs();
                let (lo, hi) = match r2 {
                    Region1::All => (0.0, f64::INFINITY),
                    Region1::Outside(a) => (a, f64::INFINITY),
                    Region1::Inside(b) => (0.0, b),
                    Region1::Interval(a, b) => {
                        return marginal::interval(&mut g, a, b, self.tol, ctx);
                    }
                };
                let v = split_half_line(&mut g, lo, hi, c, self.tol, ctx)?
                    + split_half_line(&mut |x: f64| g(-x), lo, hi, c, self.tol, ctx)?;
                Ok(v)
            };
            match run() {
                Ok(v) => v,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        };
        let value = match region {
            Region::All => quadrature::integrate_line(&mut |x1| inner(x1, Region1::All), self.tol, ctx)?,
            Region::Simulated(eps) => {
                quadrature::integrate_outside(&mut |x1| inner(x1, Region1::All), eps, self.tol, ctx)?
            }
            Region::BeyondRadius(r) => {
                let near = quadrature::integrate_inside(
                    &mut |x1| inner(x1, Region1::Outside((r * r - x1 * x1).max(0.0).sqrt())),
                    r,
                    self.tol,
                    ctx,
                )?;
                let far = quadrature::integrate_outside(&mut |x1| inner(x1, Region1::All), r, self.tol, ctx)?;
                near + far
            }
            Region::WithinRadius(r) => quadrature::integrate_inside(
                &mut |x1| inner(x1, Region1::Inside((r * r - x1 * x1).max(0.0).sqrt())),
                r,
                self.tol,
                ctx,
            )?,
        };
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        Ok(value)
    }
}

/// Moment through the copula: `m_p = ∫ Π_{i∈I} p_i s_i^{p_i−1} F_I(U_I(s)) ds` over the support `I` of `p`.
fn tail_route_moment(marginals: &[MarginalMeasure], cp: &ClaytonCopulaParams, p: &MultiIndex) -> Result<f64> {
    let support = p.support();
    let n = marginals.len();
    let tail_tol = Tolerance::new(1e-14, 1e-12);
    let caches: Vec<TailCache> = support
        .iter()
        .map(|&i| TailCache::new(&marginals[i], tail_tol))
        .collect();
    let powers: Vec<u32> = support.iter().map(|&i| p.parts()[i]).collect();
    let weight = |k: usize, s: f64| powers[k] as f64 * s.powi(powers[k] as i32 - 1);
    // tensor Gauss-Legendre on signed dyadic shells; adaptive shell tests would misread the
    // log-plateau of F between the two tail scales as divergence
    let order = if support.len() == 2 { 16 } else { 8 };
    let (gx, gw) = quadrature::gauss_legendre(order);
    let mut nodes: Vec<(f64, f64)> = Vec::new();
    for k in -44..12 {
        let (lo, hi) = (2f64.powi(k), 2f64.powi(k + 1));
        for (x, w) in gx.iter().zip(&gw) {
            let s = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x;
            let ws = 0.5 * (hi - lo) * w;
            nodes.push((s, ws));
            nodes.push((-s, ws));
        }
    }
    let tables: Vec<Vec<(f64, f64)>> = (0..support.len())
        .map(|k| {
            nodes
                .iter()
                .map(|&(s, w)| Ok((caches[k].get(s)?, w * weight(k, s))))
                .filter(|r| !matches!(r, Ok((u, _)) if *u == 0.0))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let d = support.len();
    let mut idx = vec![0usize; d];
    let mut u = vec![0.0; d];
    let mut total = 0.0;
    if tables.iter().any(|t| t.is_empty()) {
        return Ok(0.0);
    }
    loop {
        let mut w = 1.0;
        for k in 0..d {
            let (uk, wk) = tables[k][idx[k]];
            u[k] = uk;
            w *= wk;
        }
        if w != 0.0 {
            total += w * clayton_margin_value(&u, n, cp);
        }
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] < tables[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    Ok(total)
}

/// Nested quadrature over the support box of an explicit density.
fn integrate_density<F: FnMut(&[f64]) -> f64>(
    d: &ExplicitDensity,
    f: &mut F,
    region: Region,
    tol: Tolerance,
) -> Result<f64> {
    let n = d.lower.len();
    let ctx = "explicit density integral";
    if n == 1 {
        let (lo, hi) = (d.lower[0], d.upper[0]);
        let mut g = |x: f64| {
            let v = f(&[x]);
            if v == 0.0 {
                0.0
            } else {
                v * (d.density)(&[x])
            }
        };
        return match region {
            Region::All => marginal::interval(&mut g, lo, hi, tol, ctx),
            Region::BeyondRadius(r) | Region::Simulated(r) => Ok(marginal::interval(&mut g, lo, hi.min(-r), tol, ctx)?
                + marginal::interval(&mut g, lo.max(r), hi, tol, ctx)?),
            Region::WithinRadius(r) => marginal::interval(&mut g, lo.max(-r), hi.min(r), tol, ctx),
        };
    }
    let err: RefCell<Option<Error>> = RefCell::new(None);
    let f = RefCell::new(f);
    let mut point = vec![0.0; n];
    let value = nested(d, &mut point, 0, &f, region, tol, &err)?;
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok(value)
}

fn nested<F: FnMut(&[f64]) -> f64>(
    d: &ExplicitDensity,
    point: &mut [f64],
    level: usize,
    f: &RefCell<&mut F>,
    region: Region,
    tol: Tolerance,
    err: &RefCell<Option<Error>>,
) -> Result<f64> {
    let n = d.lower.len();
    let ctx = "explicit density integral";
    let mut g = |x: f64| -> f64 {
        point[level] = x;
        if level + 1 == n {
            if !in_region(point, region) || matches!(region, Region::Simulated(r) if norm(point) < r) {
                return 0.0;
            }
            let v = (f.borrow_mut())(point);
            if v == 0.0 {
                0.0
            } else {
                v * (d.density)(point)
            }
        } else {
            let mut sub = point.to_vec();
            match nested(d, &mut sub, level + 1, f, region, tol, err) {
                Ok(v) => v,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        }
    };
    marginal::interval(&mut g, d.lower[level], d.upper[level], tol, ctx)
}
