//! Orbit windows `N = span{U^{t(i)} ξ : i < n}` handled purely through their
//! Gram matrices `G[i][j] = r(t(i) − t(j))`.
//!
//! The orbit vectors are never materialized. Row `i` of the factor of `G`
//! holds the coordinates of `U^{t(i)} ξ` in the Gram–Schmidt basis of the
//! orbit, so `‖P_N U^{t(i)} ξ‖²` is the squared norm of the first `N`
//! coordinates, and nested projections are prefix sums of the same row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{extend_factor, PivotPolicy, RowFactor};
use crate::spectral::CorrelationSequence;

/// Lags beyond this are evaluated on demand instead of cached.
const CACHE_LAG_CAP: u64 = 1 << 22;

/// Times at which the orbit is sampled. `t(0) = 0` always, so that `ξ` itself
/// is the first orbit vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeSequence {
    #[default]
    Linear,
    /// `t(i) = Σ_j c_j i^j` with `c_0 = 0` and some `c_j > 0`, `j ≥ 1`.
    Polynomial { coefficients: Vec<u64> },
}

impl TimeSequence {
    pub fn validate(&self) -> Result<()> {
        match self {
            TimeSequence::Linear => Ok(()),
            TimeSequence::Polynomial { coefficients } => {
                if coefficients.first().copied().unwrap_or(0) != 0 {
                    return Err(Error::InvalidParameter(
                        "time polynomial must have zero constant term so that t(0) = 0".into(),
                    ));
                }
                if !coefficients.iter().skip(1).any(|&c| c > 0) {
                    return Err(Error::InvalidParameter(
                        "time polynomial must be strictly increasing".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// `t(i)`, saturating at `u64::MAX`.
    pub fn time(&self, i: usize) -> u64 {
        match self {
            TimeSequence::Linear => i as u64,
            TimeSequence::Polynomial { coefficients } => {
                let x = i as u64;
                coefficients
                    .iter()
                    .rev()
                    .fold(0u64, |acc, &c| acc.saturating_mul(x).saturating_add(c))
            }
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, TimeSequence::Linear)
    }
}

/// `p_k(i) = ‖P_k U^{t(i)} ξ‖²` and block masses `q_k(i) = ‖Q_k U^{t(i)} ξ‖²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionProfile {
    pub index: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Number of entries that needed clipping into `[0, 1]`.
    pub clipped: usize,
}

/// Per-cutoff conditioning snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffDiagnostics {
    pub cutoff: usize,
    pub min_pivot: f64,
    pub max_pivot: f64,
    pub jitter: f64,
}

/// Incremental factorization of the orbit Gram windows together with the
/// cutoff list `n_1 < … < n_K`.
#[derive(Debug, Clone)]
pub struct GramLadder {
    seq: CorrelationSequence,
    times: TimeSequence,
    cutoffs: Vec<usize>,
    factor: RowFactor,
    policy: PivotPolicy,
    diagnostics: Vec<CutoffDiagnostics>,
}

impl GramLadder {
    /// Empty ladder (no rows, no cutoffs) with a starting diagonal shift.
    pub fn new(seq: CorrelationSequence, times: TimeSequence, jitter: f64) -> Result<Self> {
        times.validate()?;
        Ok(Self {
            seq,
            times,
            cutoffs: Vec::new(),
            factor: RowFactor::new(jitter),
            policy: PivotPolicy::gram(),
            diagnostics: Vec::new(),
        })
    }

    /// Ladder over fixed cutoffs, factored through `n_K`.
    pub fn with_cutoffs(
        seq: CorrelationSequence,
        times: TimeSequence,
        cutoffs: &[usize],
    ) -> Result<Self> {
        validate_cutoffs(cutoffs)?;
        let mut ladder = Self::new(seq, times, 0.0)?;
        let top = *cutoffs.last().unwrap();
        ladder.extend(top)?;
        for &n in cutoffs {
            ladder.push_cutoff(n)?;
        }
        Ok(ladder)
    }

    pub fn seq(&self) -> &CorrelationSequence {
        &self.seq
    }

    pub fn times(&self) -> &TimeSequence {
        &self.times
    }

    pub fn cutoffs(&self) -> &[usize] {
        &self.cutoffs
    }

    pub fn levels(&self) -> usize {
        self.cutoffs.len()
    }

    pub fn factored_size(&self) -> usize {
        self.factor.size()
    }

    pub fn jitter_used(&self) -> f64 {
        self.factor.jitter()
    }

    pub fn factor(&self) -> &RowFactor {
        &self.factor
    }

    pub fn diagnostics(&self) -> &[CutoffDiagnostics] {
        &self.diagnostics
    }

    /// Unshifted Gram entry `⟨U^{t(i)}ξ, U^{t(j)}ξ⟩`.
    #[inline]
    pub fn gram(&self, i: usize, j: usize) -> f64 {
        self.seq.at(self.times.time(i).abs_diff(self.times.time(j)))
    }

    /// Grow the factor to `new_size` rows. Returns `true` when the diagonal
    /// shift had to be escalated, in which case every row was recomputed.
    pub fn extend(&mut self, new_size: usize) -> Result<bool> {
        if new_size <= self.factor.size() {
            return Err(Error::Usage(format!(
                "extend to {new_size} does not grow the factored window {}",
                self.factor.size()
            )));
        }
        self.seq
            .fill(self.times.time(new_size - 1).min(CACHE_LAG_CAP))?;
        let seq = &self.seq;
        let times = &self.times;
        let gram = |i: usize, j: usize| seq.at(times.time(i).abs_diff(times.time(j)));
        let escalated = extend_factor(&mut self.factor, new_size, &gram, &self.policy)?;
        if escalated {
            for d in &mut self.diagnostics {
                let (lo, hi) = window_pivots(&self.factor, d.cutoff);
                d.min_pivot = lo;
                d.max_pivot = hi;
                d.jitter = self.factor.jitter();
            }
        }
        Ok(escalated)
    }

    /// Append `n` as the next cutoff. The factor must already cover it.
    pub fn push_cutoff(&mut self, n: usize) -> Result<()> {
        if let Some(&last) = self.cutoffs.last() {
            if n <= last {
                return Err(Error::Usage(format!(
                    "cutoff {n} does not exceed previous cutoff {last}"
                )));
            }
        }
        if n == 0 || n > self.factor.size() {
            return Err(Error::Usage(format!(
                "cutoff {n} outside the factored window {}",
                self.factor.size()
            )));
        }
        let (lo, hi) = window_pivots(&self.factor, n);
        self.diagnostics.push(CutoffDiagnostics {
            cutoff: n,
            min_pivot: lo,
            max_pivot: hi,
            jitter: self.factor.jitter(),
        });
        self.cutoffs.push(n);
        Ok(())
    }

    /// Coordinates of `P_N U^{t(i)} ξ` in the Gram–Schmidt basis of the first
    /// `N` orbit vectors.
    ///
    /// For stored rows this is the first `N` entries of row `i` (for `i < N`
    /// the full row, of squared norm `1 + λ`); beyond the factor it is the
    /// forward solve `L_N y = (r(t(i) − t(j)))_{j<N}`.
    pub fn projection_coords(&self, window: usize, i: usize) -> Result<Vec<f64>> {
        if window > self.factor.size() {
            return Err(Error::Usage(format!(
                "projection window {window} exceeds factored size {}",
                self.factor.size()
            )));
        }
        if i < self.factor.size() {
            return Ok(self.factor.row_prefix(i, window));
        }
        if window == 0 || self.beyond_support(window, i) {
            return Ok(vec![0.0; window]);
        }
        let rhs: Vec<f64> = (0..window).map(|j| self.gram(i, j)).collect();
        Ok(self.factor.solve_prefix(&rhs))
    }

    /// `‖P_N U^{t(i)} ξ‖²` without clipping; `1` when `i < N`.
    pub fn window_norm_sq(&self, window: usize, i: usize) -> Result<f64> {
        if window > self.factor.size() {
            return Err(Error::Usage(format!(
                "projection window {window} exceeds factored size {}",
                self.factor.size()
            )));
        }
        if i < window {
            return Ok(1.0);
        }
        if i < self.factor.size() {
            return Ok(self.factor.norm_sq_prefix(i, window));
        }
        Ok(self
            .projection_coords(window, i)?
            .iter()
            .map(|v| v * v)
            .sum())
    }

    /// `p_k(i)` for the 1-based ladder level `k`, clipped to `[0, 1]`.
    pub fn projection_norm_sq(&self, k: usize, i: usize) -> Result<f64> {
        let n = self.level_cutoff(k)?;
        Ok(self.window_norm_sq(n, i)?.clamp(0.0, 1.0))
    }

    /// `⟨P_k U^{t(i)} ξ, P_k U^{t(j)} ξ⟩` for `0 ≤ k ≤ K` (`P_0 = 0`).
    ///
    /// When either vector lies in `N_k` the value is the Gram entry itself.
    pub fn projected_inner(&self, k: usize, i: usize, j: usize) -> Result<f64> {
        if k == 0 {
            return Ok(0.0);
        }
        let n = self.level_cutoff(k)?;
        if i.min(j) < n {
            return Ok(self.gram(i, j));
        }
        if n > self.factor.size() {
            return Err(Error::Usage(format!(
                "level {k} window {n} exceeds factored size {}",
                self.factor.size()
            )));
        }
        if i < self.factor.size() && j < self.factor.size() {
            return Ok(self.factor.dot_prefix(i, j, n));
        }
        let yi = self.projection_coords(n, i)?;
        let yj = self.projection_coords(n, j)?;
        Ok(crate::factor::dot(&yi, &yj))
    }

    /// Nested projection norms and block masses at index `i`.
    pub fn block_profile(&self, i: usize) -> Result<ProjectionProfile> {
        if self.cutoffs.is_empty() {
            return Err(Error::Usage("ladder has no cutoffs".into()));
        }
        // levels whose window does not already contain index i
        let outside = self.cutoffs.iter().take_while(|&&n| n <= i).count();
        let coords = if outside == 0 {
            Vec::new()
        } else {
            self.projection_coords(self.cutoffs[outside - 1], i)?
        };
        let mut p = Vec::with_capacity(self.cutoffs.len());
        let mut clipped = 0;
        let mut partial = 0.0;
        let mut from = 0;
        for (k, &n) in self.cutoffs.iter().enumerate() {
            let value = if k < outside {
                partial += coords[from..n].iter().map(|v| v * v).sum::<f64>();
                from = n;
                partial
            } else {
                1.0
            };
            if !(0.0..=1.0).contains(&value) {
                clipped += 1;
            }
            p.push(value.clamp(0.0, 1.0));
        }
        let mut q = Vec::with_capacity(p.len());
        let mut prev = 0.0;
        for &pk in &p {
            let mass = pk - prev;
            if mass < 0.0 {
                clipped += 1;
            }
            q.push(mass.max(0.0));
            prev = pk;
        }
        Ok(ProjectionProfile {
            index: i,
            p,
            q,
            clipped,
        })
    }

    fn level_cutoff(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.cutoffs.len() {
            return Err(Error::Usage(format!(
                "ladder level {k} outside 1..={}",
                self.cutoffs.len()
            )));
        }
        Ok(self.cutoffs[k - 1])
    }

    /// True when every Gram entry between `i` and the first `window` vectors vanishes.
    fn beyond_support(&self, window: usize, i: usize) -> bool {
        match self.seq.support() {
            Some(s) => self.times.time(i) - self.times.time(window - 1) >= s,
            None => false,
        }
    }
}

fn window_pivots(factor: &RowFactor, n: usize) -> (f64, f64) {
    (0..n.min(factor.size()))
        .map(|i| factor.diag(i).powi(2))
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)))
}

pub(crate) fn validate_cutoffs(cutoffs: &[usize]) -> Result<()> {
    if cutoffs.is_empty() {
        return Err(Error::Usage("cutoff list is empty".into()));
    }
    if cutoffs[0] == 0 {
        return Err(Error::Usage("cutoffs must be positive".into()));
    }
    if cutoffs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Usage("cutoffs must be strictly increasing".into()));
    }
    Ok(())
}
