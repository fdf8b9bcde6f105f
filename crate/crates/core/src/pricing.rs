//! European option prices under exponential Lévy models `S_i(t) = S0_i exp(r t + X_i(t))`,
//! with `X` carrying the risk-neutral drift, by Monte Carlo and by the log-price PIDE.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bsde::mean_se;
use crate::error::{Error, Result};
use crate::levy_model::LevyModel;
use crate::pdie::{solve_linear_pdie, GridSolution, PdieOptions, SpaceGrid};
use crate::quadrature::Tolerance;
use crate::simulator::JumpSampler;
use crate::MultiIndex;

/// Spot prices, rate, maturity and strike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub s0: Vec<f64>,
    pub r: f64,
    pub maturity: f64,
    pub strike: f64,
}

impl MarketSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.s0.len() != dim {
            return Err(Error::Argument(format!(
                "{} spot prices for a {dim}-dimensional model",
                self.s0.len()
            )));
        }
        if self.s0.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Domain("spot prices must be positive".into()));
        }
        if !(self.maturity > 0.0) || !(self.strike >= 0.0) || !self.r.is_finite() {
            return Err(Error::Domain("need maturity > 0, strike >= 0 and a finite rate".into()));
        }
        Ok(())
    }

    pub fn discount(&self) -> f64 {
        (-self.r * self.maturity).exp()
    }
}

type PayoffFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Payoff of the terminal prices.
#[derive(Clone)]
pub enum Payoff {
    /// `(S_1 − K)^+`.
    Call,
    /// `(K − S_1)^+`.
    Put,
    /// `(Σ w_i S_i − K)^+`.
    BasketCall {
        weights: Vec<f64>,
    },
    Custom {
        label: String,
        f: PayoffFn,
    },
}

impl std::fmt::Debug for Payoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl Payoff {
    pub fn label(&self) -> String {
        match self {
            Payoff::Call => "call".into(),
            Payoff::Put => "put".into(),
            Payoff::BasketCall { weights } => format!("basket_call{weights:?}"),
            Payoff::Custom { label, .. } => label.clone(),
        }
    }

    pub fn value(&self, s: &[f64], strike: f64) -> f64 {
        match self {
            Payoff::Call => (s[0] - strike).max(0.0),
            Payoff::Put => (strike - s[0]).max(0.0),
            Payoff::BasketCall { weights } => {
                (weights.iter().zip(s).map(|(w, v)| w * v).sum::<f64>() - strike).max(0.0)
            }
            Payoff::Custom { f, .. } => f(s),
        }
    }

    /// The matching put for parity checks.
    fn parity_partner(&self) -> Option<Payoff> {
        match self {
            Payoff::Call => Some(Payoff::Put),
            Payoff::Put => Some(Payoff::Call),
            _ => None,
        }
    }
}

/// `E[e^{X_j(1)}] − 1` drift residual per coordinate; zero for a martingale discounted price.
pub fn check_martingale_condition(model: &LevyModel) -> Result<Vec<f64>> {
    model.martingale_residual()
}

/// Monte Carlo estimate with standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McPrice {
    pub price: f64,
    pub standard_error: f64,
    pub paths: usize,
    pub seed: u64,
    pub eps: f64,
}

/// Discounted payoff mean over `paths` terminals of the compound-Poisson approximation with truncation `eps`.
pub fn price_mc(
    model: &LevyModel,
    market: &MarketSpec,
    payoff: &Payoff,
    paths: usize,
    seed: u64,
    eps: f64,
) -> Result<McPrice> {
    let prices = terminal_prices(model, market, paths, seed, eps)?;
    Ok(mc_from_prices(&prices, market, payoff, seed, eps))
}

fn terminal_prices(model: &LevyModel, market: &MarketSpec, paths: usize, seed: u64, eps: f64) -> Result<Vec<Vec<f64>>> {
    market.validate(model.dim())?;
    if paths < 2 {
        return Err(Error::Argument("Monte Carlo needs at least two paths".into()));
    }
    let sampler = JumpSampler::new(model, eps)?;
    let growth = market.r * market.maturity;
    Ok(sampler
        .terminals(market.maturity, seed, paths)
        .into_iter()
        .map(|x| {
            market
                .s0
                .iter()
                .zip(&x)
                .map(|(s, xi)| s * (growth + xi).exp())
                .collect()
        })
        .collect())
}

fn mc_from_prices(prices: &[Vec<f64>], market: &MarketSpec, payoff: &Payoff, seed: u64, eps: f64) -> McPrice {
    let disc = market.discount();
    let values: Vec<f64> = prices.iter().map(|s| disc * payoff.value(s, market.strike)).collect();
    let (price, standard_error) = mean_se(&values);
    McPrice {
        price,
        standard_error,
        paths: prices.len(),
        seed,
        eps,
    }
}

/// Log-price grid settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PideSpec {
    /// Grid spacing in log-price.
    pub h: f64,
    /// Half-width in units of the terminal standard deviation of `X`.
    pub width_sd: f64,
    /// Minimum half-width.
    pub min_half_width: f64,
    pub steps: Option<usize>,
}

impl Default for PideSpec {
    fn default() -> Self {
        Self {
            h: 0.01,
            width_sd: 10.0,
            min_half_width: 1.0,
            steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PidePrice {
    pub price: f64,
    pub nodes: Vec<usize>,
    pub steps: usize,
}

/// `e^{−rT} θ(0, 0)` where `θ` solves the linear PDIE of `X` with drift `ã + r` and `θ(T, x) = payoff(S0 e^x)`.
pub fn price_pide(model: &LevyModel, market: &MarketSpec, payoff: &Payoff, spec: PideSpec) -> Result<PidePrice> {
    let sol = pide_solution(model, market, payoff, spec)?;
    Ok(PidePrice {
        price: market.discount() * sol.value(0, 0.0, &vec![0.0; model.dim()]),
        nodes: sol.grid.nodes().to_vec(),
        steps: sol.time.steps(),
    })
}

/// Rows `(t, S, V)` of the one-dimensional price surface on about `levels` time levels.
pub fn price_surface(
    model: &LevyModel,
    market: &MarketSpec,
    payoff: &Payoff,
    spec: PideSpec,
    levels: usize,
) -> Result<Vec<[f64; 3]>> {
    if model.dim() != 1 {
        return Err(Error::Unsupported("price surface needs a one-dimensional model".into()));
    }
    let sol = pide_solution(model, market, payoff, spec)?;
    let steps = sol.time.steps();
    let stride = steps.div_ceil(levels.max(1)).max(1);
    let mut rows = Vec::new();
    for k in (0..=steps).filter(|k| k % stride == 0 || *k == steps) {
        let t = sol.time.time(k);
        let disc = (-market.r * (market.maturity - t)).exp();
        for j in 0..sol.grid.node_count() {
            let x = sol.grid.point(j);
            rows.push([t, market.s0[0] * x[0].exp(), disc * sol.values[0][k][j]]);
        }
    }
    Ok(rows)
}

fn pide_solution(model: &LevyModel, market: &MarketSpec, payoff: &Payoff, spec: PideSpec) -> Result<GridSolution> {
    market.validate(model.dim())?;
    let n = model.dim();
    let mean = model.compensator_mean()?;
    let shifted: Vec<f64> = mean.iter().map(|m| m + market.r).collect();
    let pde_model = model.clone().with_mean(&shifted)?;
    let tol = Tolerance::default();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for d in 0..n {
        let var = model.moment(&MultiIndex::unit(n, d).add(&MultiIndex::unit(n, d)), tol)? + model.sigma()[d][d];
        let half = (spec.width_sd * (var * market.maturity).sqrt()).max(spec.min_half_width);
        let centre = shifted[d] * market.maturity;
        lower.push(centre.min(0.0) - half);
        upper.push(centre.max(0.0) + half);
    }
    let grid = SpaceGrid::with_spacing(&lower, &upper, spec.h, &vec![0.0; n])?;
    let s0 = market.s0.clone();
    let strike = market.strike;
    let pay = payoff.clone();
    let g = move |x: &[f64]| {
        let s: Vec<f64> = s0.iter().zip(x).map(|(a, b)| a * b.exp()).collect();
        vec![pay.value(&s, strike)]
    };
    let opts = PdieOptions {
        steps: spec.steps,
        ..Default::default()
    };
    solve_linear_pdie(&pde_model, &g, &grid, market.maturity, opts)
}

/// `|C − P − (S0 − K e^{−rT})| / S0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParityCheck {
    pub call: f64,
    pub put: f64,
    pub relative_error: f64,
}

fn parity(call: f64, put: f64, market: &MarketSpec) -> ParityCheck {
    let target = market.s0[0] - market.strike * market.discount();
    ParityCheck {
        call,
        put,
        relative_error: (call - put - target).abs() / market.s0[0],
    }
}

/// Everything `price` reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceReport {
    pub model_hash: String,
    pub market: MarketSpec,
    pub payoff: String,
    pub martingale_residual: Vec<f64>,
    pub mc: McPrice,
    pub pide: Option<PidePrice>,
    /// `|MC − PIDE| / PIDE`.
    pub relative_gap: Option<f64>,
    pub mc_parity: Option<ParityCheck>,
    pub pide_parity: Option<ParityCheck>,
}

/// SHA-256 of the model fingerprint, hex encoded.
pub fn model_hash(model: &LevyModel) -> String {
    hex::encode(Sha256::digest(model.fingerprint().as_bytes()))
}

/// Both pricers on the risk-neutral version of `model`; the PIDE is skipped above two dimensions.
pub fn price_report(
    model: &LevyModel,
    market: &MarketSpec,
    payoff: &Payoff,
    paths: usize,
    seed: u64,
    eps: f64,
    spec: PideSpec,
) -> Result<PriceReport> {
    let rn = model.clone().with_risk_neutral_drift()?;
    let martingale_residual = check_martingale_condition(&rn)?;
    let prices = terminal_prices(&rn, market, paths, seed, eps)?;
    let mc = mc_from_prices(&prices, market, payoff, seed, eps);
    let pide = if rn.dim() <= 2 {
        Some(price_pide(&rn, market, payoff, spec)?)
    } else {
        None
    };
    let relative_gap = pide
        .as_ref()
        .map(|p| (mc.price - p.price).abs() / p.price.abs().max(1e-300));
    let (mut mc_parity, mut pide_parity) = (None, None);
    if let Some(partner) = payoff.parity_partner() {
        let other_mc = mc_from_prices(&prices, market, &partner, seed, eps).price;
        let (c, p) = if matches!(payoff, Payoff::Call) {
            (mc.price, other_mc)
        } else {
            (other_mc, mc.price)
        };
        mc_parity = Some(parity(c, p, market));
        if let Some(pp) = &pide {
            let other = price_pide(&rn, market, &partner, spec)?.price;
            let (c, p) = if matches!(payoff, Payoff::Call) {
                (pp.price, other)
            } else {
                (other, pp.price)
            };
            pide_parity = Some(parity(c, p, market));
        }
    }
    Ok(PriceReport {
        model_hash: model_hash(&rn),
        market: market.clone(),
        payoff: payoff.label(),
        martingale_residual,
        mc,
        pide,
        relative_gap,
        mc_parity,
        pide_parity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::{Atom, MeixnerParams};

    fn market() -> MarketSpec {
        MarketSpec {
            s0: vec![100.0],
            r: 0.05,
            maturity: 1.0,
            strike: 100.0,
        }
    }

    #[test]
    fn payoffs() {
        assert_eq!(Payoff::Call.value(&[110.0], 100.0), 10.0);
        assert_eq!(Payoff::Put.value(&[110.0], 100.0), 0.0);
        let b = Payoff::BasketCall {
            weights: vec![0.5, 0.5],
        };
        assert_eq!(b.value(&[120.0, 100.0], 100.0), 10.0);
    }

    #[test]
    fn market_validation() {
        let mut m = market();
        assert!(m.validate(2).is_err());
        m.s0[0] = -1.0;
        assert!(m.validate(1).is_err());
    }

    #[test]
    fn poisson_call_matches_series() {
        // S_T = S0 exp(rT + N_T ln 2 − λT) for unit-intensity jumps of size ln 2
        let j = 2f64.ln();
        let model = LevyModel::zero(1)
            .unwrap()
            .with_atoms(vec![Atom {
                x: vec![j],
                intensity: 1.0,
            }])
            .unwrap()
            .with_risk_neutral_drift()
            .unwrap();
        assert!(check_martingale_condition(&model).unwrap()[0].abs() < 1e-12);
        let m = market();
        let mut exact = 0.0;
        let mut pk = (-1.0f64).exp();
        for k in 0..60 {
            if k > 0 {
                pk *= 1.0 / k as f64;
            }
            let s = 100.0 * (0.05 + k as f64 * j - 1.0f64).exp();
            exact += pk * (s - 100.0).max(0.0);
        }
        exact *= m.discount();
        let pide = price_pide(
            &model,
            &m,
            &Payoff::Call,
            PideSpec {
                h: j / 40.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((pide.price - exact).abs() < 0.01 * exact, "{} vs {exact}", pide.price);
        let mc = price_mc(&model, &m, &Payoff::Call, 100_000, 3, 1e-3).unwrap();
        assert!((mc.price - exact).abs() < 4.0 * mc.standard_error, "{mc:?} vs {exact}");
    }

    #[test]
    fn report_parity_and_hash() {
        let model = LevyModel::meixner(MeixnerParams::new(0.5, 0.0, 1.0, 0.0).unwrap()).unwrap();
        let rep = price_report(
            &model,
            &market(),
            &Payoff::Call,
            20_000,
            1,
            1e-3,
            PideSpec {
                h: 0.02,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(rep.martingale_residual[0].abs() < 1e-6);
        assert!(rep.mc_parity.unwrap().relative_error < 5e-3);
        assert!(rep.pide_parity.unwrap().relative_error < 5e-3);
        assert_eq!(rep.model_hash.len(), 64);
        assert!(rep.relative_gap.unwrap() < 0.05);
    }
}
