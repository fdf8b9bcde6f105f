use super::marginal::MarginalMeasure;
use crate::error::{Error, Result};
use crate::quadrature::{self, Tolerance};

/// Tail integral `|U(s x)|` of one side `s = ±1` of a continuous marginal, tabulated as a
/// cubic Hermite interpolant in `(ln x, ln |U|)` with exact slopes `−x ν(s x) / |U|`.
#[derive(Debug, Clone)]
pub(crate) struct TailTable {
    /// `(ln x, ln |U|, d ln |U| / d ln x)` on a uniform `ln x` grid.
    rows: Vec<(f64, f64, f64)>,
    step: f64,
}

impl TailTable {
    /// Nodes `x = 10^{lo + i / per_decade}` up to `10^hi`; rows stop where the tail underflows.
    pub(crate) fn build(
        m: &MarginalMeasure,
        sign: f64,
        log10_lo: f64,
        log10_hi: f64,
        per_decade: usize,
        tol: Tolerance,
    ) -> Result<Self> {
        if !m.is_continuous() {
            return Err(Error::Unsupported("tail tables need a continuous marginal".into()));
        }
        let count = ((log10_hi - log10_lo) * per_decade as f64).round() as usize + 1;
        if count < 2 {
            return Err(Error::Argument("tail table needs at least two nodes".into()));
        }
        let xs: Vec<f64> = (0..count)
            .map(|i| 10f64.powf(log10_lo + i as f64 / per_decade as f64))
            .collect();
        let dens = |x: f64| m.density(sign * x).unwrap_or(0.0);
        let mut tail = vec![0.0; count];
        tail[count - 1] = m.tail(sign * xs[count - 1], tol)?.abs();
        for i in (0..count - 1).rev() {
            tail[i] = tail[i + 1] + quadrature::integrate(&mut |y| dens(y), xs[i], xs[i + 1], tol);
        }
        let rows: Vec<_> = xs
            .iter()
            .zip(&tail)
            .take_while(|(_, &u)| u > 0.0)
            .map(|(&x, &u)| (x.ln(), u.ln(), -x * dens(x) / u))
            .collect();
        if rows.len() < 2 {
            return Err(Error::Numerical("tail vanishes on the table range".into()));
        }
        Ok(Self {
            rows,
            step: std::f64::consts::LN_10 / per_decade as f64,
        })
    }

    pub(crate) fn lower(&self) -> f64 {
        self.rows[0].0.exp()
    }

    pub(crate) fn upper(&self) -> f64 {
        self.rows[self.rows.len() - 1].0.exp()
    }

    pub(crate) fn covers(&self, x: f64) -> bool {
        x >= self.lower() && x <= self.upper()
    }

    fn segment(&self, t: f64) -> usize {
        let pos = (t - self.rows[0].0) / self.step;
        (pos.max(0.0) as usize).min(self.rows.len() - 2)
    }

    fn hermite(&self, i: usize, t: f64) -> f64 {
        let (t0, y0, d0) = self.rows[i];
        let (t1, y1, d1) = self.rows[i + 1];
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * h * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * h * d1
    }

    /// `ln |U|` at `ln x`; linear extrapolation with the end slopes outside the table.
    fn log_tail(&self, t: f64) -> f64 {
        let first = self.rows[0];
        let last = self.rows[self.rows.len() - 1];
        if t < first.0 {
            first.1 + first.2 * (t - first.0)
        } else if t > last.0 {
            last.1 + last.2 * (t - last.0)
        } else {
            self.hermite(self.segment(t), t)
        }
    }

    /// `|U(s x)|` for `x > 0`.
    pub(crate) fn eval(&self, x: f64) -> f64 {
        self.log_tail(x.ln()).exp()
    }

    /// `x > 0` with `|U(s x)| = u`.
    pub(crate) fn inverse(&self, u: f64) -> f64 {
        let y = u.ln();
        let first = self.rows[0];
        let last = self.rows[self.rows.len() - 1];
        if y >= first.1 {
            return (first.0 + (y - first.1) / first.2.min(-1e-300)).exp();
        }
        if y <= last.1 {
            return (last.0 + (y - last.1) / last.2.min(-1e-300)).exp();
        }
        // ln|U| is decreasing in ln x: locate the bracketing row, then safeguarded Newton on the cubic
        let i = self
            .rows
            .partition_point(|r| r.1 > y)
            .saturating_sub(1)
            .min(self.rows.len() - 2);
        let (t0, y0, d0) = self.rows[i];
        let (_, y1, d1) = self.rows[i + 1];
        let h = self.rows[i + 1].0 - t0;
        let (m0, m1) = (h * d0, h * d1);
        let (mut a, mut b) = (0.0f64, 1.0f64);
        let mut s = ((y - y0) / (y1 - y0)).clamp(0.0, 1.0);
        for _ in 0..50 {
            let (s2, s3) = (s * s, s * s * s);
            let f = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
                + (s3 - 2.0 * s2 + s) * m0
                + (-2.0 * s3 + 3.0 * s2) * y1
                + (s3 - s2) * m1
                - y;
            if f > 0.0 {
                a = s;
            } else {
                b = s;
            }
            let df = (6.0 * s2 - 6.0 * s) * (y0 - y1) + (3.0 * s2 - 4.0 * s + 1.0) * m0 + (3.0 * s2 - 2.0 * s) * m1;
            let mut next = s - f / df;
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
            let done = (next - s).abs() <= 1e-15 || b - a <= 1e-15;
            s = next;
            if done {
                break;
            }
        }
        (t0 + s * h).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::meixner::MeixnerParams;

    fn table(beta: f64, sign: f64) -> (MarginalMeasure, TailTable) {
        let m = MarginalMeasure::Meixner(MeixnerParams::new(0.5, beta, 1.0, 0.0).unwrap());
        let t = TailTable::build(&m, sign, -6.0, 2.0, 64, Tolerance::new(1e-14, 1e-12)).unwrap();
        (m, t)
    }

    #[test]
    fn matches_quadrature_tail() {
        for (beta, sign) in [(0.0, 1.0), (0.8, 1.0), (0.8, -1.0)] {
            let (m, t) = table(beta, sign);
            for &x in &[1e-5, 3.3e-4, 0.01, 0.27, 1.0, 2.9, 7.0] {
                let exact = m.tail(sign * x, Tolerance::new(1e-14, 1e-12)).unwrap().abs();
                assert!((t.eval(x) / exact - 1.0).abs() < 1e-6, "beta={beta} x={x}");
            }
        }
    }

    #[test]
    fn inverse_round_trips() {
        let (_, t) = table(0.3, -1.0);
        for &x in &[2e-6, 1e-3, 0.05, 0.9, 4.0] {
            let u = t.eval(x);
            assert!((t.inverse(u) / x - 1.0).abs() < 1e-10, "x={x}");
        }
    }

    #[test]
    fn extrapolates_beyond_range() {
        let (_, t) = table(0.0, 1.0);
        let x = 1e-8;
        // U(x) ~ δα/(π x) near the origin
        let expect = 0.5 / (std::f64::consts::PI * x);
        assert!((t.eval(x) / expect - 1.0).abs() < 1e-3);
        assert!((t.inverse(t.eval(x)) / x - 1.0).abs() < 1e-10);
    }
}
