//! Uniform B-spline bases on an extended knot vector.
//!
//! A grid with `G` intervals on `[lo, hi]` and degree `k` carries `G + 2k + 1`
//! knots: the `G + 1` uniform knots of the domain plus `k` knots continuing
//! the same spacing on each side. That yields `G + k` basis functions, which
//! sum to one everywhere on `[lo, hi]`.
//!
//! Two evaluation paths exist. [`SplineGrid::basis_values`] runs the full
//! Cox-de Boor recursion over every basis and is the reference;
//! [`SplineGrid::local`] computes only the `k + 1` bases that can be nonzero
//! at `x` and is what the network uses in its inner loops.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{KanError, Result};

pub type BasisVec = SmallVec<[f64; 8]>;

/// Knot vector and degree shared by every edge of a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    degree: usize,
    num_intervals: usize,
    domain_lo: f64,
    domain_hi: f64,
    knots: Vec<f64>,
}

/// Builds a uniform grid; see [`SplineGrid::uniform`].
pub fn make_grid(
    degree: usize,
    num_intervals: usize,
    domain_lo: f64,
    domain_hi: f64,
) -> Result<SplineGrid> {
    SplineGrid::uniform(degree, num_intervals, domain_lo, domain_hi)
}

impl SplineGrid {
    pub fn uniform(
        degree: usize,
        num_intervals: usize,
        domain_lo: f64,
        domain_hi: f64,
    ) -> Result<Self> {
        if num_intervals == 0 {
            return Err(KanError::InvalidArgument(
                "grid needs at least one interval".into(),
            ));
        }
        if !(domain_lo.is_finite() && domain_hi.is_finite() && domain_lo < domain_hi) {
            return Err(KanError::InvalidArgument(format!(
                "grid domain [{domain_lo}, {domain_hi}] must be finite with lo < hi"
            )));
        }
        let k = degree as isize;
        let g = num_intervals as f64;
        let width = domain_hi - domain_lo;
        let knots = (0..num_intervals + 2 * degree + 1)
            .map(|i| {
                let offset = i as isize - k;
                if offset == 0 {
                    domain_lo
                } else if offset == num_intervals as isize {
                    domain_hi
                } else {
                    domain_lo + width * (offset as f64 / g)
                }
            })
            .collect();
        Ok(Self {
            degree,
            num_intervals,
            domain_lo,
            domain_hi,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_intervals(&self) -> usize {
        self.num_intervals
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.domain_lo, self.domain_hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn spacing(&self) -> f64 {
        (self.domain_hi - self.domain_lo) / self.num_intervals as f64
    }

    /// Number of basis functions, `G + k`.
    pub fn basis_count(&self) -> usize {
        self.num_intervals + self.degree
    }

    /// All basis values at `x` by the full Cox-de Boor recursion.
    pub fn basis_values(&self, x: f64) -> Vec<f64> {
        cox_de_boor(&self.knots, self.degree, x)
    }

    /// Derivatives of all bases at `x`:
    /// `B'_{i,k} = k/(t_{i+k}-t_i) B_{i,k-1} - k/(t_{i+k+1}-t_{i+1}) B_{i+1,k-1}`.
    pub fn basis_derivatives(&self, x: f64) -> Vec<f64> {
        let n = self.basis_count();
        if self.degree == 0 {
            return vec![0.0; n];
        }
        let k = self.degree;
        let lower = cox_de_boor(&self.knots, k - 1, x);
        let t = &self.knots;
        let kf = k as f64;
        (0..n)
            .map(|i| {
                let left = safe_div(kf, t[i + k] - t[i]) * lower[i];
                let right = safe_div(kf, t[i + k + 1] - t[i + 1]) * lower[i + 1];
                left - right
            })
            .collect()
    }

    /// Interval index `mu` with `t_mu <= x < t_{mu+1}`, or `None` outside the
    /// knot vector. The last knot is closed onto the last interval.
    fn span(&self, x: f64) -> Option<usize> {
        let t = &self.knots;
        let last = t.len() - 1;
        if !(x >= t[0] && x <= t[last]) {
            return None;
        }
        if x == t[last] {
            return Some(last - 1);
        }
        let h = self.spacing();
        let mut mu = (((x - t[0]) / h).floor() as usize).min(last - 1);
        while mu > 0 && x < t[mu] {
            mu -= 1;
        }
        while mu + 1 < last && x >= t[mu + 1] {
            mu += 1;
        }
        Some(mu)
    }

    /// Knot value at a possibly out-of-range index, continuing the spacing.
    /// Bases with valid indices never read the virtual knots.
    fn knot(&self, i: isize) -> f64 {
        if i >= 0 && (i as usize) < self.knots.len() {
            self.knots[i as usize]
        } else {
            self.domain_lo + self.spacing() * (i - self.degree as isize) as f64
        }
    }

    /// The `k + 1` potentially nonzero bases at `x` (values only).
    pub fn local(&self, x: f64) -> LocalBasis {
        self.local_impl(x, false)
    }

    /// Like [`SplineGrid::local`] but also fills `derivatives`.
    pub fn local_with_derivatives(&self, x: f64) -> LocalBasis {
        self.local_impl(x, true)
    }

    fn local_impl(&self, x: f64, with_derivatives: bool) -> LocalBasis {
        let k = self.degree;
        let Some(mu) = self.span(x) else {
            return LocalBasis::empty(self.basis_count());
        };
        let mu_i = mu as isize;
        // NURBS-book triangular scheme; `prev` keeps the degree k-1 row.
        let mut n: BasisVec = SmallVec::from_elem(0.0, k + 1);
        let mut prev: BasisVec = SmallVec::new();
        let mut left: BasisVec = SmallVec::from_elem(0.0, k + 1);
        let mut right: BasisVec = SmallVec::from_elem(0.0, k + 1);
        n[0] = 1.0;
        for j in 1..=k {
            if j == k && with_derivatives {
                prev.extend_from_slice(&n[..k]);
            }
            left[j] = x - self.knot(mu_i + 1 - j as isize);
            right[j] = self.knot(mu_i + j as isize) - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = safe_div(n[r], denom);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }

        let mut derivatives: BasisVec = SmallVec::new();
        if with_derivatives {
            derivatives.resize(k + 1, 0.0);
            if k > 0 {
                let kf = k as f64;
                let first = mu_i - k as isize;
                for s in 0..=k {
                    let r = first + s as isize;
                    let lower_left = if s >= 1 { prev[s - 1] } else { 0.0 };
                    let lower_right = if s < k { prev[s] } else { 0.0 };
                    let a = safe_div(kf, self.knot(r + k as isize) - self.knot(r));
                    let b = safe_div(kf, self.knot(r + k as isize + 1) - self.knot(r + 1));
                    derivatives[s] = a * lower_left - b * lower_right;
                }
            }
        }

        LocalBasis {
            start: mu_i - k as isize,
            count: self.basis_count(),
            values: n,
            derivatives,
        }
    }
}

/// Nonzero window of the basis at one point. `values[s]` is basis
/// `start + s`; entries whose index falls outside `0..count` are ignored.
#[derive(Debug, Clone)]
pub struct LocalBasis {
    pub start: isize,
    pub count: usize,
    pub values: BasisVec,
    pub derivatives: BasisVec,
}

impl LocalBasis {
    fn empty(count: usize) -> Self {
        Self {
            start: 0,
            count,
            values: SmallVec::new(),
            derivatives: SmallVec::new(),
        }
    }

    /// `(basis index, window slot)` pairs for in-range bases.
    #[inline]
    pub fn slots(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let start = self.start;
        let count = self.count as isize;
        (0..self.values.len()).filter_map(move |s| {
            let idx = start + s as isize;
            (idx >= 0 && idx < count).then_some((idx as usize, s))
        })
    }

    /// `sum_m c_m B_m(x)`.
    #[inline]
    pub fn dot(&self, coefficients: &[f64]) -> f64 {
        self.slots()
            .map(|(idx, s)| coefficients[idx] * self.values[s])
            .sum()
    }

    /// `sum_m c_m B'_m(x)`; zero unless built with derivatives.
    #[inline]
    pub fn dot_derivative(&self, coefficients: &[f64]) -> f64 {
        if self.derivatives.is_empty() {
            return 0.0;
        }
        self.slots()
            .map(|(idx, s)| coefficients[idx] * self.derivatives[s])
            .sum()
    }

    /// Dense vector of length `count`.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.count];
        for (idx, s) in self.slots() {
            out[idx] = self.values[s];
        }
        out
    }
}

#[inline]
fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Degree-`degree` bases over `knots`, built bottom-up from indicators.
fn cox_de_boor(knots: &[f64], degree: usize, x: f64) -> Vec<f64> {
    let intervals = knots.len() - 1;
    let mut b: Vec<f64> = (0..intervals)
        .map(|i| {
            let inside = knots[i] <= x && x < knots[i + 1];
            let closing = i == intervals - 1 && x == knots[i + 1];
            if inside || closing {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for d in 1..=degree {
        let next: Vec<f64> = (0..intervals - d)
            .map(|i| {
                let w1 = safe_div(x - knots[i], knots[i + d] - knots[i]);
                let w2 = safe_div(knots[i + d + 1] - x, knots[i + d + 1] - knots[i + 1]);
                w1 * b[i] + w2 * b[i + 1]
            })
            .collect();
        b = next;
    }
    b
}
