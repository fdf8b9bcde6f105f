use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Multi-index `p = (p_1, .., p_n)` of nonnegative exponents.
///
/// Ordering is graded lexicographic: total degree first, then the parts
/// left to right with the larger leading part first, so for two variables
/// `(2,0) < (1,1) < (0,2)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(parts: Vec<u32>) -> Self {
        Self(parts)
    }

    pub fn zero(n: usize) -> Self {
        Self(vec![0; n])
    }

    /// Unit index `e_i`.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut parts = vec![0; n];
        parts[i] = 1;
        Self(parts)
    }

    pub fn parts(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `p! = p_1! .. p_n!`
    pub fn factorial(&self) -> f64 {
        self.0
            .iter()
            .map(|&k| (1..=k).map(f64::from).product::<f64>())
            .product()
    }

    /// Position of the single nonzero part when `|p| = 1`.
    pub fn unit_axis(&self) -> Option<usize> {
        if self.degree() == 1 {
            self.0.iter().position(|&k| k == 1)
        } else {
            None
        }
    }

    /// Coordinates with a nonzero exponent.
    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] > 0).collect()
    }

    /// `x^p`
    pub fn monomial(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Compact `a;b;c` form used in CSV exports.
    pub fn label(&self) -> String {
        self.0.iter().map(u32::to_string).collect::<Vec<_>>().join(";")
    }

    pub fn parse_label(s: &str) -> Option<MultiIndex> {
        s.split(';')
            .map(|t| t.trim().parse::<u32>().ok())
            .collect::<Option<Vec<_>>>()
            .map(MultiIndex)
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

impl<const N: usize> From<[u32; N]> for MultiIndex {
    fn from(v: [u32; N]) -> Self {
        Self(v.to_vec())
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{k}")?;
        }
        write!(f, ")")
    }
}

/// All multi-indices of exact degree `d` in `n` variables, in graded-lex order.
pub fn of_degree(n: usize, d: u32) -> Vec<MultiIndex> {
    fn fill(n: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if prefix.len() + 1 == n {
            prefix.push(left);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
            return;
        }
        for k in (0..=left).rev() {
            prefix.push(k);
            fill(n, left - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    fill(n, d, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Every `p` with `1 <= |p| <= max_degree`, sorted graded-lex.
pub fn graded_lex_enumerate(n: usize, max_degree: u32) -> Vec<MultiIndex> {
    (1..=max_degree).flat_map(|d| of_degree(n, d)).collect()
}
