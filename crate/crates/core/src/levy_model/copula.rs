use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clayton-type Lévy copula parameters: dependence strength `mu > 0`, sign mix `eta in [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaytonCopulaParams {
    pub mu: f64,
    pub eta: f64,
}

impl ClaytonCopulaParams {
    pub fn new(mu: f64, eta: f64) -> Result<Self> {
        let p = Self { mu, eta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Domain(format!("copula mu must be > 0, got {}", self.mu)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Domain(format!(
                "copula eta must lie in [0, 1], got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

fn power_sum(u: &[f64], mu: f64) -> f64 {
    u.iter().map(|x| x.abs().powf(-mu)).sum()
}

fn sign_weight(u: &[f64], eta: f64) -> f64 {
    let negatives = u.iter().filter(|&&x| x < 0.0).count();
    if negatives % 2 == 0 {
        eta
    } else {
        -(1.0 - eta)
    }
}

/// `F(u) = 2^{2-n} (Σ|u_j|^{-mu})^{-1/mu} (eta 1{Πu >= 0} - (1 - eta) 1{Πu < 0})`.
///
/// Infinite arguments drop out of the sum; any zero argument gives 0.
pub fn clayton_copula(u: &[f64], params: &ClaytonCopulaParams) -> Result<f64> {
    if u.is_empty() {
        return Err(Error::Argument("copula needs at least one argument".into()));
    }
    Ok(clayton_value(u, params.mu, params.eta))
}

pub(crate) fn clayton_value(u: &[f64], mu: f64, eta: f64) -> f64 {
    if u.contains(&0.0) {
        return 0.0;
    }
    let n = u.len() as i32;
    let s = power_sum(u, mu);
    if s == 0.0 {
        // every argument infinite
        return f64::INFINITY * sign_weight(u, eta);
    }
    2f64.powi(2 - n) * s.powf(-1.0 / mu) * sign_weight(u, eta)
}

/// Mixed partial `∂_1 .. ∂_n F(u)`; nonnegative.
pub fn clayton_mixed_derivative(u: &[f64], params: &ClaytonCopulaParams) -> f64 {
    if u.iter().any(|&x| x == 0.0 || !x.is_finite()) {
        return 0.0;
    }
    let mu = params.mu;
    let n = u.len();
    let s = power_sum(u, mu);
    let rising: f64 = (0..n).map(|k| 1.0 + k as f64 * mu).product();
    // log-space product keeps tiny/huge tail values finite
    let log_prod: f64 = u.iter().map(|x| (-mu - 1.0) * x.abs().ln()).sum::<f64>() + (-1.0 / mu - n as f64) * s.ln();
    let weight = if sign_weight(u, 1.0) > 0.0 {
        params.eta
    } else {
        1.0 - params.eta
    };
    2f64.powi(2 - n as i32) * rising * weight * log_prod.exp()
}

/// Lévy copula of the coordinates in a proper subset of an `n`-dimensional Clayton copula.
///
/// Summing `F` over `±∞` in the dropped coordinates leaves a Clayton copula of the
/// kept dimension with sign mix `1/2`; a single kept coordinate gives the identity.
pub(crate) fn clayton_margin_value(u_kept: &[f64], n_full: usize, params: &ClaytonCopulaParams) -> f64 {
    if u_kept.len() == n_full {
        return clayton_value(u_kept, params.mu, params.eta);
    }
    if u_kept.len() == 1 {
        return u_kept[0];
    }
    clayton_value(u_kept, params.mu, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_arguments() {
        let p = ClaytonCopulaParams::new(1.0, 1.0).unwrap();
        for &t in &[0.1, 1.0, 7.5] {
            assert!((clayton_copula(&[t, t], &p).unwrap() - t / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn vanishes_at_zero_argument() {
        let p = ClaytonCopulaParams::new(0.7, 0.4).unwrap();
        assert_eq!(clayton_copula(&[0.0, 3.0], &p).unwrap(), 0.0);
        let tiny = clayton_copula(&[1e-12, 3.0], &p).unwrap();
        assert!(tiny.abs() < 1e-11);
    }

    #[test]
    fn empty_is_error() {
        let p = ClaytonCopulaParams::new(1.0, 0.5).unwrap();
        assert!(clayton_copula(&[], &p).is_err());
    }

    #[test]
    fn margins_recover_identity() {
        // F(u, +inf) - F(u, -inf) = u
        let p = ClaytonCopulaParams::new(1.3, 0.3).unwrap();
        for &u in &[-2.0, -0.1, 0.5, 4.0] {
            let m =
                clayton_value(&[u, f64::INFINITY], p.mu, p.eta) - clayton_value(&[u, f64::NEG_INFINITY], p.mu, p.eta);
            assert!((m - u).abs() < 1e-14 * u.abs().max(1.0));
        }
    }

    #[test]
    fn three_dim_margin_matches_half_mix() {
        let p = ClaytonCopulaParams::new(0.8, 0.9).unwrap();
        let (a, b) = (0.7, -1.9);
        let mut m = 0.0;
        for (s, w) in [(f64::INFINITY, 1.0), (f64::NEG_INFINITY, -1.0)] {
            m += w * clayton_value(&[a, b, s], p.mu, p.eta);
        }
        assert!((m - clayton_margin_value(&[a, b], 3, &p)).abs() < 1e-14);
    }

    #[test]
    fn mixed_derivative_matches_finite_differences() {
        let p = ClaytonCopulaParams::new(1.0, 1.0).unwrap();
        let exact = clayton_mixed_derivative(&[1.0, 1.0], &p);
        assert!((exact - 2.0 * 2f64.powi(-3)).abs() < 1e-15);
        for (p, u) in [
            (p, [1.0, 1.0]),
            (ClaytonCopulaParams::new(2.5, 0.3).unwrap(), [0.4, 1.7]),
            (ClaytonCopulaParams::new(0.6, 0.3).unwrap(), [-0.4, 1.7]),
            (ClaytonCopulaParams::new(0.6, 0.8).unwrap(), [-0.9, -2.2]),
        ] {
            let h = 1e-4;
            let f = |a: f64, b: f64| clayton_copula(&[a, b], &p).unwrap();
            let fd = (f(u[0] + h, u[1] + h) - f(u[0] + h, u[1] - h) - f(u[0] - h, u[1] + h) + f(u[0] - h, u[1] - h))
                / (4.0 * h * h);
            let an = clayton_mixed_derivative(&u, &p);
            assert!((fd - an).abs() < 1e-6, "{u:?}: fd {fd} analytic {an}");
        }
    }

    proptest! {
        #[test]
        fn homogeneous_of_order_one(
            u1 in prop_oneof![-5.0..-0.01f64, 0.01..5.0f64],
            u2 in prop_oneof![-5.0..-0.01f64, 0.01..5.0f64],
            u3 in prop_oneof![-5.0..-0.01f64, 0.01..5.0f64],
            mu in 0.1..4.0f64,
            eta in 0.0..=1.0f64,
        ) {
            let p = ClaytonCopulaParams::new(mu, eta).unwrap();
            for c in [0.5, 2.0, 10.0] {
                for u in [vec![u1, u2], vec![u1, u2, u3]] {
                    let scaled: Vec<f64> = u.iter().map(|x| c * x).collect();
                    let lhs = clayton_copula(&scaled, &p).unwrap();
                    let rhs = c * clayton_copula(&u, &p).unwrap();
                    prop_assert!((lhs - rhs).abs() <= 1e-13 * rhs.abs().max(1e-300));
                }
            }
        }
    }
}
