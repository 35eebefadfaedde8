//! Row-appended lower-triangular factorization `L·Lᵀ = G + λI` of a symmetric
//! positive semidefinite Gram matrix.
//!
//! Rows are stored in skyline form: row `i` keeps the entries from its first
//! nonzero column up to the diagonal. Finite-support correlation sequences
//! (Lebesgue, tables) therefore factor in banded storage and time without a
//! separate code path.
//!
//! The shift `λ` is uniform over the diagonal. A pivot that falls below the
//! acceptance threshold escalates `λ` geometrically and the caller refactors
//! from scratch; rows are only ever appended while `λ` stays fixed.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotPolicy {
    /// Pivots must reach half of `max(λ, min_pivot)` to be accepted.
    pub min_pivot: f64,
    /// First nonzero shift tried after a pivot failure.
    pub jitter_start: f64,
    pub jitter_growth: f64,
    pub jitter_cap: f64,
}

impl PivotPolicy {
    /// Policy for correlation Gram windows.
    pub const fn gram() -> Self {
        Self {
            min_pivot: 1e-12,
            jitter_start: 1e-12,
            jitter_growth: 10.0,
            jitter_cap: 1e-8,
        }
    }

    /// Policy for the joint Gaussian covariance, which is singular by construction.
    pub const fn covariance() -> Self {
        Self {
            jitter_cap: 1e-6,
            ..Self::gram()
        }
    }

    /// Next shift after a failure at `jitter`, or `None` once the cap is passed.
    pub fn escalate(&self, jitter: f64) -> Option<f64> {
        let mut next = self.jitter_start;
        while next <= jitter * (1.0 + 1e-9) {
            next *= self.jitter_growth;
        }
        (next <= self.jitter_cap * (1.0 + 1e-9)).then_some(next)
    }

    /// Classify the shifted pivot `d`. Negative pivots are not rejected
    /// outright: rounding in a numerically singular window can produce them,
    /// so they escalate like small ones and only fail once the cap is reached.
    pub fn check(&self, d: f64, jitter: f64) -> PivotCheck {
        if d.is_nan() {
            PivotCheck::NonPsd
        } else if d >= 0.5 * jitter.max(self.min_pivot) {
            PivotCheck::Accept
        } else {
            PivotCheck::Escalate
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotCheck {
    Accept,
    Escalate,
    NonPsd,
}

/// Outcome of appending a row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Push {
    Done,
    /// The pivot failed under the current shift; the factor is unchanged.
    NeedsJitter { row: usize, pivot: f64 },
}

#[derive(Debug, Clone, Default)]
pub struct RowFactor {
    starts: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
    jitter: f64,
    min_raw_pivot: f64,
    min_pivot: f64,
    max_pivot: f64,
}

impl RowFactor {
    pub fn new(jitter: f64) -> Self {
        Self {
            jitter,
            min_raw_pivot: f64::INFINITY,
            min_pivot: f64::INFINITY,
            max_pivot: 0.0,
            ..Default::default()
        }
    }

    pub fn size(&self) -> usize {
        self.starts.len()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Smallest pivot of the unshifted matrix seen so far.
    pub fn min_raw_pivot(&self) -> f64 {
        self.min_raw_pivot
    }

    /// Smallest and largest accepted pivot `L_ii²`.
    pub fn pivot_range(&self) -> (f64, f64) {
        (self.min_pivot, self.max_pivot)
    }

    pub fn stored_entries(&self) -> usize {
        self.data.len()
    }

    /// Row `i` as `(first stored column, entries through the diagonal)`.
    #[inline]
    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        let start = self.starts[i];
        let off = self.offsets[i];
        (start, &self.data[off..off + (i + 1 - start)])
    }

    #[inline]
    pub fn diag(&self, i: usize) -> f64 {
        let (_, row) = self.row(i);
        row[row.len() - 1]
    }

    /// Entry `L[i][j]` (zero above the diagonal and left of the skyline).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (start, row) = self.row(i);
        if j < start || j > i {
            0.0
        } else {
            row[j - start]
        }
    }

    /// Dense copy of the first `n` entries of row `i` (zero padded).
    pub fn row_prefix(&self, i: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        let (start, row) = self.row(i);
        for (j, &v) in row.iter().enumerate() {
            let col = start + j;
            if col >= n {
                break;
            }
            out[col] = v;
        }
        out
    }

    /// `Σ_{m<n} L[i][m]·L[j][m]` for stored rows `i`, `j`.
    pub fn dot_prefix(&self, i: usize, j: usize, n: usize) -> f64 {
        let (si, ri) = self.row(i);
        let (sj, rj) = self.row(j);
        let lo = si.max(sj);
        let hi = n.min(i + 1).min(j + 1);
        if lo >= hi {
            return 0.0;
        }
        dot(&ri[lo - si..hi - si], &rj[lo - sj..hi - sj])
    }

    /// Squared norm of the first `n` entries of stored row `i`.
    pub fn norm_sq_prefix(&self, i: usize, n: usize) -> f64 {
        let (s, r) = self.row(i);
        let hi = n.min(i + 1);
        if s >= hi {
            return 0.0;
        }
        r[..hi - s].iter().map(|v| v * v).sum()
    }

    /// Forward substitution with the leading `n × n` block: returns `y` with
    /// `L_n y = rhs`. Leading zeros of `rhs` are skipped.
    pub fn solve_prefix(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        assert!(n <= self.size(), "solve window {n} exceeds factor size {}", self.size());
        let mut y = vec![0.0; n];
        let Some(first) = rhs.iter().position(|&v| v != 0.0) else {
            return y;
        };
        for j in first..n {
            let (sj, rj) = self.row(j);
            let lo = first.max(sj);
            let acc = if lo < j { dot(&rj[lo - sj..j - sj], &y[lo..j]) } else { 0.0 };
            y[j] = (rhs[j] - acc) / rj[j - sj];
        }
        y
    }

    /// Append row `i = size()` given the unshifted Gram row `g(i, j)`, `j ≤ i`.
    pub fn push_row<G>(&mut self, gram: &G, policy: &PivotPolicy) -> Result<Push>
    where
        G: Fn(usize, usize) -> f64,
    {
        let i = self.size();
        let c: Vec<f64> = (0..i).map(|j| gram(i, j)).collect();
        let first = c.iter().position(|&v| v != 0.0).unwrap_or(i);
        let mut y = vec![0.0; i - first];
        for j in first..i {
            let (sj, rj) = self.row(j);
            let lo = first.max(sj);
            let acc = if lo < j {
                dot(&rj[lo - sj..j - sj], &y[lo - first..j - first])
            } else {
                0.0
            };
            y[j - first] = (c[j] - acc) / rj[j - sj];
        }
        let d = gram(i, i) + self.jitter - y.iter().map(|v| v * v).sum::<f64>();
        match policy.check(d, self.jitter) {
            PivotCheck::Accept => {}
            PivotCheck::Escalate => return Ok(Push::NeedsJitter { row: i, pivot: d }),
            PivotCheck::NonPsd => {
                return Err(Error::NonPsd {
                    minor: i + 1,
                    pivot: d,
                    jitter: self.jitter,
                })
            }
        }
        self.min_raw_pivot = self.min_raw_pivot.min(d - self.jitter);
        self.min_pivot = self.min_pivot.min(d);
        self.max_pivot = self.max_pivot.max(d);
        self.starts.push(first);
        self.offsets.push(self.data.len());
        self.data.extend_from_slice(&y);
        self.data.push(d.sqrt());
        Ok(Push::Done)
    }
}

/// Grow `factor` to `new_size` rows. On a pivot failure the shift is
/// escalated and the whole window refactored; returns whether that happened.
pub fn extend_factor<G>(
    factor: &mut RowFactor,
    new_size: usize,
    gram: &G,
    policy: &PivotPolicy,
) -> Result<bool>
where
    G: Fn(usize, usize) -> f64,
{
    let mut escalated = false;
    while factor.size() < new_size {
        match factor.push_row(gram, policy)? {
            Push::Done => {}
            Push::NeedsJitter { row, pivot } => {
                let jitter = factor.jitter();
                let next = policy.escalate(jitter).ok_or(Error::NonPsd {
                    minor: row + 1,
                    pivot,
                    jitter,
                })?;
                *factor = RowFactor::new(next);
                escalated = true;
            }
        }
    }
    Ok(escalated)
}

/// Factor a fresh window of size `n`, starting from shift `jitter`.
pub fn factor_window<G>(n: usize, gram: &G, policy: &PivotPolicy, jitter: f64) -> Result<RowFactor>
where
    G: Fn(usize, usize) -> f64,
{
    let mut factor = RowFactor::new(jitter);
    extend_factor(&mut factor, n, gram, policy)?;
    Ok(factor)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
