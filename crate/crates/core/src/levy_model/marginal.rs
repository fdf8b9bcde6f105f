use serde::{Deserialize, Serialize};

use super::meixner::MeixnerParams;
use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};

/// One-dimensional marginal Lévy measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum MarginalMeasure {
    Meixner(MeixnerParams),
    PoissonUnitJump { intensity: f64 },
}

/// Integration domain for one-dimensional measures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region1 {
    All,
    /// `|x| >= a`
    Outside(f64),
    /// `0 < |x| < b`
    Inside(f64),
    /// `a <= x < b`
    Interval(f64, f64),
}

impl Region1 {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Region1::All => true,
            Region1::Outside(a) => x.abs() >= a,
            Region1::Inside(b) => x.abs() < b,
            Region1::Interval(a, b) => a <= x && x < b,
        }
    }
}

impl MarginalMeasure {
    pub fn validate(&self) -> Result<()> {
        match self {
            MarginalMeasure::Meixner(p) => p.validate(),
            MarginalMeasure::PoissonUnitJump { intensity } => {
                if *intensity > 0.0 && intensity.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("Poisson intensity must be > 0, got {intensity}")))
                }
            }
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, MarginalMeasure::Meixner(_))
    }

    /// Lebesgue density at `x != 0` for continuous kinds.
    pub fn density(&self, x: f64) -> Option<f64> {
        match self {
            MarginalMeasure::Meixner(p) if x != 0.0 => Some(p.density_unchecked(x)),
            _ => None,
        }
    }

    /// `(location, mass)` pairs of the atomic part.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match self {
            MarginalMeasure::PoissonUnitJump { intensity } => vec![(1.0, *intensity)],
            MarginalMeasure::Meixner(_) => Vec::new(),
        }
    }

    /// `∫_region f(x) ν(dx)`.
    pub fn integrate<F: FnMut(f64) -> f64>(
        &self,
        mut f: F,
        region: Region1,
        tol: Tolerance,
        context: &str,
    ) -> Result<f64> {
        match self {
            MarginalMeasure::PoissonUnitJump { .. } => Ok(self
                .atoms()
                .into_iter()
                .filter(|(x, _)| region.contains(*x))
                .map(|(x, m)| m * f(x))
                .sum()),
            MarginalMeasure::Meixner(p) => {
                let mut g = |x: f64| {
                    let v = f(x);
                    if v == 0.0 {
                        0.0
                    } else {
                        v * p.density_unchecked(x)
                    }
                };
                match region {
                    Region1::All => quadrature::integrate_line(&mut g, tol, context),
                    Region1::Outside(a) => quadrature::integrate_outside(&mut g, a, tol, context),
                    Region1::Inside(b) => quadrature::integrate_inside(&mut g, b, tol, context),
                    Region1::Interval(a, b) => interval(&mut g, a, b, tol, context),
                }
            }
        }
    }

    /// `∫ x^k ν(dx)` for `k >= 2` (or `k = 1` on a region away from 0).
    pub fn moment(&self, k: u32, region: Region1, tol: Tolerance) -> Result<f64> {
        if let MarginalMeasure::Meixner(p) = self {
            if k % 2 == 1 && p.beta == 0.0 && matches!(region, Region1::All | Region1::Outside(_) | Region1::Inside(_))
            {
                return Ok(0.0);
            }
        }
        self.integrate(|x| x.powi(k as i32), region, tol, "marginal moment")
    }

    /// Tail integral `U(x) = ν([x, ∞))` for `x > 0`, `-ν((-∞, x])` for `x < 0`.
    pub fn tail(&self, x: f64, tol: Tolerance) -> Result<f64> {
        if x == 0.0 || x.is_nan() {
            return Err(Error::Domain("tail integral is undefined at 0".into()));
        }
        if x.is_infinite() {
            return Ok(0.0);
        }
        match self {
            MarginalMeasure::PoissonUnitJump { intensity } => Ok(if x > 0.0 && x <= 1.0 { *intensity } else { 0.0 }),
            MarginalMeasure::Meixner(p) => {
                let ctx = "Meixner tail integral";
                if x > 0.0 {
                    quadrature::integrate_upper_tail(&mut |y| p.density_unchecked(y), x, tol, ctx)
                } else {
                    quadrature::integrate_upper_tail(&mut |y| p.density_unchecked(-y), -x, tol, ctx).map(|v| -v)
                }
            }
        }
    }
}

/// `∫_a^b g` with infinite ends mapped onto dyadic shells; the origin is split out.
pub(crate) fn interval(
    mut g: &mut dyn FnMut(f64) -> f64,
    a: f64,
    b: f64,
    tol: Tolerance,
    context: &str,
) -> Result<f64> {
    if !(a < b) {
        return Ok(0.0);
    }
    if a < 0.0 && b > 0.0 {
        return Ok(interval(g, a, 0.0, tol, context)? + interval(g, 0.0, b, tol, context)?);
    }
    if a >= 0.0 {
        let mut total = 0.0;
        let finite_hi = if b.is_infinite() { a.max(1.0) } else { b };
        if b.is_infinite() {
            total += quadrature::integrate_upper_tail(&mut g, finite_hi, tol, context)?;
        }
        if a == 0.0 {
            total += quadrature::integrate_from_zero(&mut g, finite_hi, tol, context)?;
        } else if finite_hi > a {
            total += quadrature::integrate(&mut g, a, finite_hi, tol);
        }
        Ok(total)
    } else {
        interval(&mut |x: f64| g(-x), -b, -a, tol, context)
    }
}

/// Tail integral of a marginal measure at `x != 0`.
pub fn tail_integral(m: &MarginalMeasure, x: f64) -> Result<f64> {
    m.tail(x, Tolerance::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meixner(alpha: f64, beta: f64, delta: f64) -> MarginalMeasure {
        MarginalMeasure::Meixner(MeixnerParams::new(alpha, beta, delta, 0.0).unwrap())
    }

    #[test]
    fn poisson_tail() {
        let m = MarginalMeasure::PoissonUnitJump { intensity: 2.5 };
        assert_eq!(tail_integral(&m, 0.5).unwrap(), 2.5);
        assert_eq!(tail_integral(&m, 1.0).unwrap(), 2.5);
        assert_eq!(tail_integral(&m, 1.5).unwrap(), 0.0);
        assert_eq!(tail_integral(&m, -0.5).unwrap(), 0.0);
        assert!(tail_integral(&m, 0.0).is_err());
    }

    /// `E1(x)` by its convergent power series / continued fraction.
    fn exp_integral_e1(x: f64) -> f64 {
        if x < 1.0 {
            let mut sum = 0.0;
            let mut term = 1.0;
            for k in 1..60 {
                term *= -x / k as f64;
                sum -= term / k as f64;
            }
            -0.577_215_664_901_532_9 - x.ln() + sum
        } else {
            // modified Lentz on the continued fraction
            let mut b = x + 1.0;
            let mut c = 1e300;
            let mut d = 1.0 / b;
            let mut h = d;
            for i in 1..200 {
                let an = -((i * i) as f64);
                b += 2.0;
                d = 1.0 / (an * d + b);
                c = b + an / c;
                let del = c * d;
                h *= del;
                if (del - 1.0).abs() < 1e-16 {
                    break;
                }
            }
            h * (-x).exp()
        }
    }

    #[test]
    fn meixner_tail_matches_series() {
        // 1/sinh z = 2 Σ e^{-(2k+1) z}  =>  U(x) = 2 δ Σ_k E1((2k+1) π x / α) for β = 0
        let (alpha, delta) = (1.0, 1.0);
        let m = meixner(alpha, 0.0, delta);
        for &x in &[0.05, 0.3, 1.0, 2.5] {
            let series: f64 = (0..400)
                .map(|k| exp_integral_e1((2 * k + 1) as f64 * std::f64::consts::PI * x / alpha))
                .sum::<f64>()
                * 2.0
                * delta;
            let got = tail_integral(&m, x).unwrap();
            assert!(
                (got - series).abs() < 1e-8 * series.max(1.0),
                "x={x}: {got} vs {series}"
            );
            assert!((tail_integral(&m, -x).unwrap() + series).abs() < 1e-8 * series.max(1.0));
        }
    }

    #[test]
    fn tail_is_monotone() {
        let m = meixner(0.5, -0.4, 1.2);
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let x = 1e-3 * 1.35f64.powi(k);
            let u = tail_integral(&m, x).unwrap();
            assert!(u <= prev && u >= 0.0);
            prev = u;
        }
        assert!(prev < 1e-12);
    }

    #[test]
    fn second_moment_matches_cumulant() {
        for (a, b, d) in [(1.0, 0.0, 1.0), (0.5, -0.3, 2.0), (2.0, 1.0, 0.7)] {
            let m = meixner(a, b, d);
            let MarginalMeasure::Meixner(p) = m else { unreachable!() };
            let m2 = m.moment(2, Region1::All, Tolerance::default()).unwrap();
            assert!(
                (m2 - p.variance()).abs() < 1e-8 * p.variance(),
                "{m2} vs {}",
                p.variance()
            );
        }
    }

    #[test]
    fn interval_splits_origin() {
        let v = interval(
            &mut |x: f64| (-x * x).exp(),
            f64::NEG_INFINITY,
            f64::INFINITY,
            Tolerance::default(),
            "g",
        )
        .unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-9);
        let v = interval(&mut |x: f64| x, -1.0, 2.0, Tolerance::default(), "g").unwrap();
        assert!((v - 1.5).abs() < 1e-12);
    }
}
