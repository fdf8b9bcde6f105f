//! Run configuration: JSON text, every section optional, unknown keys rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bsde::{RankPolicy, RegressionSpec, TerminalFn};
use crate::error::{Error, Result};
use crate::levy_model::{poisson_copula_measure, Atom, ClaytonCopulaParams, LevyModel, MarginalMeasure};
use crate::orthobasis::DEFAULT_PRUNE_TOL;
use crate::pdie::{DriverFunction, PdieOptions, SpaceGrid, DEFAULT_JUMP_CUTOFF};
use crate::pricing::{MarketSpec, Payoff, PideSpec};
use crate::simulator::DEFAULT_EPS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub x: Vec<f64>,
    pub intensity: f64,
}

/// Three-atom model of two unit-jump Poisson marginals coupled by a Clayton copula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonCopulaSpec {
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopulaSpec {
    pub mu: f64,
    pub eta: f64,
}

/// Lévy triplet. `drift` sets `a`, `mean` sets `ã = E[X(1)]`; `risk_neutral` overrides both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dimension: usize,
    #[serde(default)]
    pub drift: Option<Vec<f64>>,
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub marginals: Vec<MarginalMeasure>,
    #[serde(default)]
    pub copula: Option<CopulaSpec>,
    #[serde(default)]
    pub atoms: Vec<AtomSpec>,
    #[serde(default)]
    pub poisson_copula: Option<PoissonCopulaSpec>,
    #[serde(default)]
    pub risk_neutral: bool,
}

impl ModelSpec {
    pub fn build(&self) -> Result<LevyModel> {
        let n = self.dimension;
        let mut m = match &self.poisson_copula {
            Some(p) => {
                if n != 2 {
                    return Err(Error::Config("poisson_copula needs dimension 2".into()));
                }
                poisson_copula_measure(p.lambda1, p.lambda2, ClaytonCopulaParams::new(p.mu, p.eta)?)?
            }
            None => LevyModel::zero(n)?,
        };
        if let Some(s) = &self.sigma {
            m = m.with_sigma(s.clone())?;
        }
        if !self.marginals.is_empty() {
            let copula = self.copula.map(|c| ClaytonCopulaParams::new(c.mu, c.eta)).transpose()?;
            m = m.with_copula(self.marginals.clone(), copula)?;
        } else if self.copula.is_some() {
            return Err(Error::Config("copula given without marginals".into()));
        }
        if !self.atoms.is_empty() {
            m = m.with_atoms(
                self.atoms
                    .iter()
                    .map(|a| Atom {
                        x: a.x.clone(),
                        intensity: a.intensity,
                    })
                    .collect(),
            )?;
        }
        match (&self.drift, &self.mean) {
            (Some(_), Some(_)) => return Err(Error::Config("give either drift or mean, not both".into())),
            (Some(a), None) => m = m.with_drift(a.clone())?,
            (None, Some(mean)) => m = m.with_mean(mean)?,
            (None, None) => {}
        }
        if self.risk_neutral {
            m = m.with_risk_neutral_drift()?;
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    #[serde(default = "default_degree")]
    pub degree: u32,
    #[serde(default = "default_prune_tol")]
    pub tol: f64,
}

fn default_degree() -> u32 {
    3
}

fn default_prune_tol() -> f64 {
    DEFAULT_PRUNE_TOL
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            degree: default_degree(),
            tol: default_prune_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Grid intervals for increments and the BSDE.
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn one() -> f64 {
    1.0
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

fn default_paths() -> usize {
    1000
}

fn default_steps() -> usize {
    10
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            eps: DEFAULT_EPS,
            paths: default_paths(),
            seed: 0,
            steps: default_steps(),
        }
    }
}

/// Terminal function `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalSpec {
    Constant {
        value: f64,
    },
    /// `Σ w_i x_i`.
    Linear {
        weights: Vec<f64>,
    },
    /// `exp(−|x|² / (2 w²))`.
    Gaussian {
        width: f64,
    },
    /// `cos(k Σ x_i)`.
    Cosine {
        frequency: f64,
    },
}

impl Default for TerminalSpec {
    fn default() -> Self {
        TerminalSpec::Gaussian { width: 2.0 }
    }
}

impl TerminalSpec {
    pub fn function(&self) -> TerminalFn {
        match self.clone() {
            TerminalSpec::Constant { value } => Arc::new(move |_: &[f64]| vec![value]),
            TerminalSpec::Linear { weights } => {
                Arc::new(move |x: &[f64]| vec![weights.iter().zip(x).map(|(w, v)| w * v).sum()])
            }
            TerminalSpec::Gaussian { width } => {
                Arc::new(move |x: &[f64]| vec![(-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * width * width)).exp()])
            }
            TerminalSpec::Cosine { frequency } => {
                Arc::new(move |x: &[f64]| vec![(frequency * x.iter().sum::<f64>()).cos()])
            }
        }
    }
}

/// Driver `f(t, y, z)` by id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverSpec {
    Zero,
    /// `r y`.
    Linear {
        r: f64,
    },
    /// `C sin(y)`.
    Sine {
        c: f64,
    },
    /// `C (sin y + cos z_1) / 2` with `z_1` the first Teugels coefficient.
    SineCosine {
        c: f64,
    },
}

impl Default for DriverSpec {
    fn default() -> Self {
        DriverSpec::SineCosine { c: 0.5 }
    }
}

impl DriverSpec {
    pub fn driver(&self) -> DriverFunction {
        match *self {
            DriverSpec::Zero => DriverFunction::zero(),
            DriverSpec::Linear { r } => DriverFunction::linear(r),
            DriverSpec::Sine { c } => {
                DriverFunction::new(c.abs(), false, move |_, y, _| y.iter().map(|v| c * v.sin()).collect())
            }
            DriverSpec::SineCosine { c } => DriverFunction::new(c.abs(), true, move |_, y, z| {
                y.iter()
                    .zip(z)
                    .map(|(v, zk)| 0.5 * c * (v.sin() + zk.first().copied().unwrap_or(0.0).cos()))
                    .collect()
            }),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.driver().lipschitz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Extrapolation {
    #[default]
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdieSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub cfl_override: bool,
    #[serde(default)]
    pub extrapolation: Extrapolation,
    #[serde(default)]
    pub terminal: TerminalSpec,
    /// Evaluation point for reported values; the origin by default.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

impl PdieSpec {
    pub fn grid(&self) -> Result<SpaceGrid> {
        SpaceGrid::new(self.lower.clone(), self.upper.clone(), self.nodes.clone())
    }

    pub fn options(&self) -> PdieOptions {
        PdieOptions {
            steps: self.steps,
            cfl_override: self.cfl_override,
            jump_cutoff: DEFAULT_JUMP_CUTOFF,
            implicit_driver: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsdeSpec {
    #[serde(default)]
    pub driver: DriverSpec,
    /// Teugels truncation degree `D`.
    #[serde(default = "default_degree")]
    pub degree: u32,
    #[serde(default = "default_regression_degree")]
    pub regression_degree: u32,
    #[serde(default)]
    pub rank_policy: RankPolicy,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_iters")]
    pub picard_max_iters: usize,
    /// `β` of the Picard norm; `4 C² + 1` by default.
    #[serde(default)]
    pub beta: Option<f64>,
}

fn default_regression_degree() -> u32 {
    2
}

fn default_picard_tol() -> f64 {
    crate::bsde::PICARD_TOL
}

fn default_picard_iters() -> usize {
    crate::bsde::PICARD_MAX_ITERS
}

impl Default for BsdeSpec {
    fn default() -> Self {
        Self {
            driver: DriverSpec::default(),
            degree: default_degree(),
            regression_degree: default_regression_degree(),
            rank_policy: RankPolicy::Prune,
            picard_tol: default_picard_tol(),
            picard_max_iters: default_picard_iters(),
            beta: None,
        }
    }
}

impl BsdeSpec {
    pub fn regression(&self) -> RegressionSpec {
        RegressionSpec {
            degree: self.regression_degree,
            include_terminal: true,
            policy: self.rank_policy,
            ..Default::default()
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or_else(|| {
            let c = self.driver.lipschitz();
            4.0 * c * c + 1.0
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffSpec {
    Call,
    Put,
    BasketCall { weights: Vec<f64> },
}

impl PayoffSpec {
    pub fn payoff(&self) -> Payoff {
        match self {
            PayoffSpec::Call => Payoff::Call,
            PayoffSpec::Put => Payoff::Put,
            PayoffSpec::BasketCall { weights } => Payoff::BasketCall {
                weights: weights.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingSpec {
    pub s0: Vec<f64>,
    pub r: f64,
    pub strike: f64,
    #[serde(default = "one")]
    pub maturity: f64,
    pub payoff: PayoffSpec,
    #[serde(default)]
    pub pide: Option<PideSpec>,
    #[serde(default = "default_martingale_tol")]
    pub martingale_tol: f64,
}

fn default_martingale_tol() -> f64 {
    1e-6
}

impl PricingSpec {
    pub fn market(&self) -> MarketSpec {
        MarketSpec {
            s0: self.s0.clone(),
            r: self.r,
            maturity: self.maturity,
            strike: self.strike,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown format {other:?}; use csv or json"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out")]
    pub directory: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            directory: default_out(),
            format: OutputFormat::Csv,
        }
    }
}

/// Whole run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub basis: BasisSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub pdie: Option<PdieSpec>,
    #[serde(default)]
    pub bsde: Option<BsdeSpec>,
    #[serde(default)]
    pub pricing: Option<PricingSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Scalar overrides from the command line (flag > file > default).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

impl RunConfig {
    /// Parses JSON text; errors carry line and column.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Config("configuration is empty".into()));
        }
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {} column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.simulation.seed = seed;
        }
        if let Some(out) = &o.out {
            self.output.directory = out.clone();
        }
        if let Some(f) = o.format {
            self.output.format = f;
        }
    }

    /// Schema checks that do not need any computation.
    pub fn validate(&self) -> Result<()> {
        let n = self.model.dimension;
        if n == 0 {
            return Err(Error::Config("model.dimension must be positive".into()));
        }
        let check_len = |name: &str, len: usize| {
            if len != n {
                Err(Error::Config(format!(
                    "{name} has length {len}, model dimension is {n}"
                )))
            } else {
                Ok(())
            }
        };
        if let Some(d) = &self.model.drift {
            check_len("model.drift", d.len())?;
        }
        if let Some(d) = &self.model.mean {
            check_len("model.mean", d.len())?;
        }
        if !self.model.marginals.is_empty() {
            check_len("model.marginals", self.model.marginals.len())?;
        }
        for (j, a) in self.model.atoms.iter().enumerate() {
            check_len(&format!("model.atoms[{j}].x"), a.x.len())?;
        }
        if self.basis.degree == 0 {
            return Err(Error::Config("basis.degree must be at least 1".into()));
        }
        let s = &self.simulation;
        if !(s.horizon > 0.0) || !(s.eps > 0.0) || s.paths == 0 || s.steps == 0 {
            return Err(Error::Config(
                "simulation needs horizon > 0, eps > 0, paths >= 1 and steps >= 1".into(),
            ));
        }
        if let Some(p) = &self.pdie {
            check_len("pdie.lower", p.lower.len())?;
            check_len("pdie.upper", p.upper.len())?;
            check_len("pdie.nodes", p.nodes.len())?;
            if let Some(x0) = &p.x0 {
                check_len("pdie.x0", x0.len())?;
            }
            if let TerminalSpec::Linear { weights } = &p.terminal {
                check_len("pdie.terminal.weights", weights.len())?;
            }
        }
        if let Some(b) = &self.bsde {
            if b.degree == 0 || !(b.picard_tol > 0.0) || b.picard_max_iters == 0 {
                return Err(Error::Config(
                    "bsde needs degree >= 1, picard_tol > 0, picard_max_iters >= 1".into(),
                ));
            }
        }
        if let Some(p) = &self.pricing {
            check_len("pricing.s0", p.s0.len())?;
            if let PayoffSpec::BasketCall { weights } = &p.payoff {
                check_len("pricing.payoff.weights", weights.len())?;
            }
        }
        Ok(())
    }

    /// Terminal function of the PDIE section, the default Gaussian bump otherwise.
    pub fn terminal(&self) -> TerminalSpec {
        self.pdie.as_ref().map(|p| p.terminal.clone()).unwrap_or_default()
    }

    pub fn x0(&self) -> Vec<f64> {
        self.pdie
            .as_ref()
            .and_then(|p| p.x0.clone())
            .unwrap_or_else(|| vec![0.0; self.model.dimension])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MEIXNER: &str = r#"{
        "model": {"dimension": 1, "marginals": [{"kind": "meixner", "params": {"alpha": 0.5, "beta": 0.0, "delta": 1.0, "mu": 0.0}}]},
        "simulation": {"paths": 10, "seed": 3}
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = RunConfig::parse(MEIXNER).unwrap();
        let m = cfg.model.build().unwrap();
        assert_eq!(m.dim(), 1);
        assert_eq!(cfg.simulation.paths, 10);
        assert_eq!(cfg.basis.degree, 3);
    }

    #[test]
    fn unknown_key_reports_position() {
        let text = "{\n  \"model\": {\"dimension\": 1},\n  \"bogus\": 1\n}";
        match RunConfig::parse(text) {
            Err(Error::Config(msg)) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_config_is_rejected() {
        assert!(matches!(RunConfig::parse("  "), Err(Error::Config(_))));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let text = r#"{"model": {"dimension": 2, "drift": [0.0]}}"#;
        assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = RunConfig::parse(MEIXNER).unwrap();
        cfg.apply(&Overrides {
            seed: Some(99),
            out: Some("elsewhere".into()),
            format: Some(OutputFormat::Json),
        });
        assert_eq!(cfg.simulation.seed, 99);
        assert_eq!(cfg.output.directory, PathBuf::from("elsewhere"));
        assert_eq!(cfg.output.format, OutputFormat::Json);
    }

    #[test]
    fn poisson_copula_preset() {
        let text = r#"{"model": {"dimension": 2, "poisson_copula": {"lambda1": 1, "lambda2": 1, "mu": 1, "eta": 1}}}"#;
        let m = RunConfig::parse(text).unwrap().model.build().unwrap();
        assert_eq!(m.atoms().len(), 3);
    }

    #[test]
    fn driver_ids() {
        let d = DriverSpec::SineCosine { c: 0.5 }.driver();
        assert!(d.uses_z);
        assert!((DriverSpec::SineCosine { c: 0.5 }.lipschitz() - 0.5).abs() < 1e-15);
        let spec = BsdeSpec::default();
        assert!((spec.beta() - 2.0).abs() < 1e-15);
    }
}
