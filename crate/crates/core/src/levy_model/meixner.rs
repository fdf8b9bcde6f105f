use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Meixner marginal parameters: scale `alpha`, skew `beta`, shape `delta`, location `mu`.
///
/// The location only shifts the distribution; the Lévy density does not see it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeixnerParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    #[serde(default)]
    pub mu: f64,
}

impl MeixnerParams {
    pub fn new(alpha: f64, beta: f64, delta: f64, mu: f64) -> Result<Self> {
        let p = Self { alpha, beta, delta, mu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Domain(format!("Meixner alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Domain(format!("Meixner delta must be > 0, got {}", self.delta)));
        }
        if !(self.beta > -PI && self.beta < PI) {
            return Err(Error::Domain(format!(
                "Meixner beta must lie in (-pi, pi), got {}",
                self.beta
            )));
        }
        if !self.mu.is_finite() {
            return Err(Error::Domain("Meixner mu must be finite".into()));
        }
        Ok(())
    }

    /// Lévy density at `x != 0`; no argument check.
    pub(crate) fn density_unchecked(&self, x: f64) -> f64 {
        let ax = x.abs();
        let z = PI * ax / self.alpha;
        let skew = self.beta * x / self.alpha;
        if z > 30.0 {
            2.0 * self.delta * (skew - z).exp() / ax
        } else {
            self.delta * skew.exp() / (ax * z.sinh())
        }
    }

    /// `E[X(1)] = mu + alpha delta tan(beta / 2)`.
    pub fn mean(&self) -> f64 {
        self.mu + self.alpha * self.delta * (0.5 * self.beta).tan()
    }

    /// Second cumulant of `X(1)`: `alpha^2 delta / (1 + cos beta)`.
    pub fn variance(&self) -> f64 {
        self.alpha * self.alpha * self.delta / (1.0 + self.beta.cos())
    }
}

/// Meixner Lévy density `delta e^{beta x / alpha} / (x sinh(pi x / alpha))`.
pub fn meixner_levy_density(x: f64, params: &MeixnerParams) -> Result<f64> {
    if x == 0.0 || !x.is_finite() {
        return Err(Error::Domain(format!(
            "Meixner Lévy density is singular at 0 (order x^-2) and undefined at {x}; integrate x^2-weighted"
        )));
    }
    Ok(params.density_unchecked(x))
}

/// Cumulant generating function `K(theta) = mu theta + 2 delta (log cos(beta/2) - log cos((alpha theta + beta)/2))`.
pub fn meixner_cumulant(theta: f64, params: &MeixnerParams) -> Result<f64> {
    let arg = params.alpha * theta + params.beta;
    if !(arg.abs() < PI) {
        return Err(Error::Domain(format!(
            "|alpha theta + beta| = {} must be < pi",
            arg.abs()
        )));
    }
    Ok(params.mu * theta + 2.0 * params.delta * ((0.5 * params.beta).cos().ln() - (0.5 * arg).cos().ln()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(alpha: f64, beta: f64, delta: f64) -> MeixnerParams {
        MeixnerParams::new(alpha, beta, delta, 0.0).unwrap()
    }

    #[test]
    fn density_reference_values() {
        // direct evaluation: 1 / sinh(pi)
        let v = meixner_levy_density(1.0, &p(1.0, 0.0, 1.0)).unwrap();
        assert!((v - 1.0 / PI.sinh()).abs() < 1e-15);
        assert!((v - 0.086_589_537_530_046_94).abs() < 1e-12);
        let v = meixner_levy_density(0.5, &p(2.0, 0.0, 3.0)).unwrap();
        let want = 3.0 / (0.5 * (0.25 * PI).sinh());
        assert!((v - want).abs() < 1e-13);
        // within 0.05% of the rounded figure 6.9104
        assert!((v - 6.9104).abs() < 5e-3);
    }

    #[test]
    fn density_symmetric_without_skew() {
        let q = p(0.7, 0.0, 1.3);
        for &x in &[1e-6, 0.01, 0.3, 2.0, 15.0, 100.0] {
            let a = meixner_levy_density(x, &q).unwrap();
            let b = meixner_levy_density(-x, &q).unwrap();
            assert_eq!(a, b);
            assert!(a > 0.0);
        }
    }

    #[test]
    fn density_asymptotic_branch_is_continuous() {
        let q = p(1.0, 0.8, 1.0);
        let x = 30.0 / PI;
        let below = q.density_unchecked(x * (1.0 - 1e-12));
        let above = q.density_unchecked(x * (1.0 + 1e-12));
        assert!((below - above).abs() / below < 1e-9);
    }

    #[test]
    fn zero_is_a_domain_error() {
        assert!(matches!(
            meixner_levy_density(0.0, &p(1.0, 0.0, 1.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn cumulant_values() {
        let q = p(1.0, 0.0, 1.0);
        assert_eq!(meixner_cumulant(0.0, &q).unwrap(), 0.0);
        // central second difference vs alpha^2 delta / (1 + cos beta) = 0.5
        let h = 1e-4;
        let d2 = (meixner_cumulant(h, &q).unwrap() - 2.0 * meixner_cumulant(0.0, &q).unwrap()
            + meixner_cumulant(-h, &q).unwrap())
            / (h * h);
        assert!((d2 - 0.5).abs() < 1e-6, "{d2}");
        assert!((q.variance() - 0.5).abs() < 1e-15);
        let shifted = MeixnerParams::new(1.0, 0.0, 1e-300, 5.0).unwrap();
        assert!((meixner_cumulant(0.3, &shifted).unwrap() - 1.5).abs() < 1e-12);
        assert!(matches!(meixner_cumulant(4.0, &q), Err(Error::Domain(_))));
    }

    #[test]
    fn cumulant_is_convex() {
        let q = p(0.5, -1.0, 2.0);
        let h = 1e-3;
        let mut th = -4.0;
        while th < 8.0 {
            let c = meixner_cumulant(th, &q).unwrap();
            let l = meixner_cumulant(th - h, &q).unwrap();
            let r = meixner_cumulant(th + h, &q).unwrap();
            assert!(l + r - 2.0 * c > 0.0);
            th += 0.25;
        }
    }

    #[test]
    fn parameter_domain() {
        assert!(MeixnerParams::new(0.0, 0.0, 1.0, 0.0).is_err());
        assert!(MeixnerParams::new(1.0, PI, 1.0, 0.0).is_err());
        assert!(MeixnerParams::new(1.0, 0.0, -1.0, 0.0).is_err());
    }
}
