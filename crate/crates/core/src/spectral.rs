//! Spectral measures on the circle and their correlation sequences.
//!
//! A symmetric probability measure `σ` on `[-π, π)` determines the
//! correlation sequence `r(i) = ∫ cos(iθ) dσ(θ)`, which is the only input the
//! rest of the crate needs: every Gram window, projection and covariance is
//! assembled from `r`.
//!
//! Families with closed-form coefficients:
//!
//! | family                       | `r(i)`                                  |
//! |------------------------------|-----------------------------------------|
//! | `Lebesgue`                   | `1` if `i = 0`, else `0`                |
//! | `Arc(ε)`                     | `sin(iε) / (iε)`                        |
//! | `ConvolutionTruncated(b, J)` | `∏_{j=1..J} cos(2π i / b^j)`            |
//! | `Mixture`                    | weighted sum of the components          |
//! | `QuadratureDensity`          | composite midpoint rule over `M` nodes  |
//! | `Table`                      | the listed values, zero past the end    |

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::factor::{factor_window, PivotPolicy};

/// Tolerance on `|r(i)| ≤ 1` for quadrature-evaluated coefficients.
const RANGE_TOL: f64 = 1e-9;

/// Largest accepted number of convolution factors.
const MAX_FACTORS: u32 = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum SpectrumFamily {
    Lebesgue,
    Arc { epsilon: f64 },
    ConvolutionTruncated { base: u32, factors: u32 },
    Mixture(Vec<(f64, SpectrumFamily)>),
    QuadratureDensity(QuadratureDensity),
    /// Raw correlation values `r(0), r(1), …`; zero beyond the table.
    Table(Vec<f64>),
}

impl SpectrumFamily {
    pub fn validate(&self) -> Result<()> {
        match self {
            SpectrumFamily::Lebesgue => Ok(()),
            SpectrumFamily::Arc { epsilon } => {
                if !(epsilon.is_finite() && *epsilon > 0.0 && *epsilon <= PI) {
                    return Err(Error::InvalidParameter(format!(
                        "arc half-width must lie in (0, π], got {epsilon}"
                    )));
                }
                Ok(())
            }
            SpectrumFamily::ConvolutionTruncated { base, factors } => {
                if *base < 2 {
                    return Err(Error::InvalidParameter(format!(
                        "convolution base must be at least 2, got {base}"
                    )));
                }
                if *factors < 1 || *factors > MAX_FACTORS {
                    return Err(Error::InvalidParameter(format!(
                        "convolution factor count must lie in 1..={MAX_FACTORS}, got {factors}"
                    )));
                }
                Ok(())
            }
            SpectrumFamily::Mixture(components) => {
                if components.is_empty() {
                    return Err(Error::InvalidParameter("mixture has no components".into()));
                }
                let mut total = 0.0;
                for (weight, family) in components {
                    if !(weight.is_finite() && *weight >= 0.0) {
                        return Err(Error::InvalidParameter(format!(
                            "mixture weight must be finite and nonnegative, got {weight}"
                        )));
                    }
                    family.validate()?;
                    total += weight;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "mixture weights must sum to 1, got {total}"
                    )));
                }
                Ok(())
            }
            SpectrumFamily::QuadratureDensity(q) => q.validate(),
            SpectrumFamily::Table(values) => {
                if values.is_empty() {
                    return Err(Error::InvalidParameter("correlation table is empty".into()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter(
                        "correlation table has non-finite entries".into(),
                    ));
                }
                if (values[0] - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "correlation table must start with r(0) = 1, got {}",
                        values[0]
                    )));
                }
                Ok(())
            }
        }
    }

    /// Fourier coefficient at a nonnegative lag.
    pub fn coefficient(&self, lag: u64) -> f64 {
        match self {
            SpectrumFamily::Lebesgue => {
                if lag == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            SpectrumFamily::Arc { epsilon } => {
                if lag == 0 {
                    1.0
                } else {
                    let x = lag as f64 * epsilon;
                    x.sin() / x
                }
            }
            SpectrumFamily::ConvolutionTruncated { base, factors } => {
                convolution_coefficient(*base, *factors, lag)
            }
            SpectrumFamily::Mixture(components) => components
                .iter()
                .map(|(w, family)| w * family.coefficient(lag))
                .sum(),
            SpectrumFamily::QuadratureDensity(q) => q.coefficient(lag),
            SpectrumFamily::Table(values) => values.get(lag as usize).copied().unwrap_or(0.0),
        }
    }

    /// Smallest `s` with `r(m) = 0` for every `m ≥ s`, when one exists.
    pub fn support(&self) -> Option<u64> {
        match self {
            SpectrumFamily::Lebesgue => Some(1),
            SpectrumFamily::Table(values) => Some(values.len() as u64),
            SpectrumFamily::Mixture(components) => components
                .iter()
                .filter(|(w, _)| *w > 0.0)
                .map(|(_, f)| f.support())
                .try_fold(0u64, |acc, s| s.map(|s| acc.max(s))),
            _ => None,
        }
    }

    /// Lag range over which an atomic stand-in behaves like its atomless limit.
    ///
    /// `None` means unrestricted. Truncated convolutions get `b^J / 4`; the
    /// midpoint quadrature measure is itself atomic with `M` atoms and gets `M / 4`.
    pub fn validity_horizon(&self) -> Option<u64> {
        match self {
            SpectrumFamily::ConvolutionTruncated { base, factors } => {
                let period = (*base as u128)
                    .checked_pow(*factors)
                    .unwrap_or(u128::MAX);
                Some((period / 4).min(u64::MAX as u128) as u64)
            }
            SpectrumFamily::QuadratureDensity(q) => Some((q.nodes / 4) as u64),
            SpectrumFamily::Mixture(components) => components
                .iter()
                .filter(|(w, _)| *w > 0.0)
                .filter_map(|(_, f)| f.validity_horizon())
                .min(),
            _ => None,
        }
    }

    /// Short human-readable name with parameters, e.g. `arc(epsilon=0.5)`.
    pub fn label(&self) -> String {
        match self {
            SpectrumFamily::Lebesgue => "lebesgue".into(),
            SpectrumFamily::Arc { epsilon } => format!("arc(epsilon={epsilon})"),
            SpectrumFamily::ConvolutionTruncated { base, factors } => {
                format!("convolution_truncated(base={base}, factors={factors})")
            }
            SpectrumFamily::Mixture(components) => {
                let parts: Vec<String> = components
                    .iter()
                    .map(|(w, f)| format!("{w}*{}", f.label()))
                    .collect();
                format!("mixture({})", parts.join(" + "))
            }
            SpectrumFamily::QuadratureDensity(d) => format!(
                "quadrature_density(rows={}, nodes={})",
                d.table().len(),
                d.nodes()
            ),
            SpectrumFamily::Table(values) => format!("table(len={})", values.len()),
        }
    }

    /// Whether the family is atomless (so the weak-mixing proxy should decay).
    pub fn is_atomless(&self) -> bool {
        match self {
            SpectrumFamily::Lebesgue | SpectrumFamily::Arc { .. } => true,
            SpectrumFamily::QuadratureDensity(_) => true,
            SpectrumFamily::ConvolutionTruncated { .. } | SpectrumFamily::Table(_) => false,
            SpectrumFamily::Mixture(components) => components
                .iter()
                .filter(|(w, _)| *w > 0.0)
                .all(|(_, f)| f.is_atomless()),
        }
    }
}

/// `∏_{j=1..J} cos(2π·lag / b^j)` with exact values at quarter turns.
fn convolution_coefficient(base: u32, factors: u32, lag: u64) -> f64 {
    let mut product = 1.0;
    for j in 1..=factors {
        let factor = match (base as u128).checked_pow(j) {
            Some(den) => cos_turns(lag as u128 % den, den),
            None => (2.0 * PI * (lag as f64 / (base as f64).powi(j as i32))).cos(),
        };
        product *= factor;
        if product == 0.0 {
            break;
        }
    }
    product
}

/// `cos(2π·num/den)` for `0 ≤ num < den`, exact at multiples of a quarter turn.
fn cos_turns(num: u128, den: u128) -> f64 {
    if num == 0 {
        1.0
    } else if 2 * num == den {
        -1.0
    } else if 4 * num == den || 4 * num == 3 * den {
        0.0
    } else {
        (2.0 * PI * (num as f64 / den as f64)).cos()
    }
}

/// Even density sampled on a table and integrated with the composite midpoint
/// rule on `nodes` uniform nodes over `[-π, π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureDensity {
    table: Vec<(f64, f64)>,
    nodes: usize,
    /// Normalized node weights `(θ_m, w_m)` with `Σ w_m = 1`; zero-weight nodes dropped.
    weights: Vec<(f64, f64)>,
}

impl QuadratureDensity {
    pub fn new(table: Vec<(f64, f64)>, nodes: usize) -> Result<Self> {
        if table.len() < 2 {
            return Err(Error::InvalidDensity("table needs at least two rows".into()));
        }
        if nodes < 2 {
            return Err(Error::InvalidDensity(format!(
                "quadrature needs at least two nodes, got {nodes}"
            )));
        }
        for w in table.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidDensity(
                    "theta column must be strictly increasing".into(),
                ));
            }
        }
        for &(theta, density) in &table {
            if !theta.is_finite() || !density.is_finite() {
                return Err(Error::InvalidDensity("non-finite table entry".into()));
            }
            if density < 0.0 {
                return Err(Error::InvalidDensity(format!(
                    "negative density {density} at theta {theta}"
                )));
            }
        }
        let h = 2.0 * PI / nodes as f64;
        let mut weights: Vec<(f64, f64)> = (0..nodes)
            .map(|m| {
                let theta = -PI + (m as f64 + 0.5) * h;
                (theta, interpolate(&table, theta) * h)
            })
            .filter(|&(_, w)| w > 0.0)
            .collect();
        let total: f64 = weights.iter().map(|&(_, w)| w).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDensity("density has zero mass on [-π, π]".into()));
        }
        for entry in &mut weights {
            entry.1 /= total;
        }
        Ok(Self {
            table,
            nodes,
            weights,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn table(&self) -> &[(f64, f64)] {
        &self.table
    }

    fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::InvalidDensity("density has zero mass".into()));
        }
        Ok(())
    }

    fn coefficient(&self, lag: u64) -> f64 {
        let k = lag as f64;
        self.weights.iter().map(|&(theta, w)| w * (k * theta).cos()).sum()
    }
}

fn interpolate(table: &[(f64, f64)], theta: f64) -> f64 {
    let first = table[0].0;
    let last = table[table.len() - 1].0;
    if theta < first || theta > last {
        return 0.0;
    }
    let idx = table.partition_point(|&(t, _)| t <= theta);
    if idx == 0 {
        return table[0].1;
    }
    if idx >= table.len() {
        return table[table.len() - 1].1;
    }
    let (t0, d0) = table[idx - 1];
    let (t1, d1) = table[idx];
    d0 + (d1 - d0) * (theta - t0) / (t1 - t0)
}

/// Correlation sequence `r(i)` of a spectral family with a lag cache.
///
/// The cache is filled through `&mut self`; lookups take `&self` and fall
/// back to direct evaluation past the cached range, so a filled sequence can
/// be shared freely between reader threads.
#[derive(Debug, Clone)]
pub struct CorrelationSequence {
    family: SpectrumFamily,
    cache: Vec<f64>,
}

impl CorrelationSequence {
    pub fn new(family: SpectrumFamily) -> Result<Self> {
        family.validate()?;
        let mut seq = Self {
            family,
            cache: Vec::new(),
        };
        seq.fill(64)?;
        Ok(seq)
    }

    pub fn family(&self) -> &SpectrumFamily {
        &self.family
    }

    pub fn cached_lags(&self) -> usize {
        self.cache.len()
    }

    /// Extend the cache to cover lags `0..=max_lag`.
    pub fn fill(&mut self, max_lag: u64) -> Result<()> {
        let want = max_lag as usize + 1;
        if want <= self.cache.len() {
            return Ok(());
        }
        let start = self.cache.len();
        self.cache.reserve(want - start);
        for lag in start..want {
            let value = self.family.coefficient(lag as u64);
            if matches!(self.family, SpectrumFamily::QuadratureDensity(_))
                && value.abs() > 1.0 + RANGE_TOL
            {
                return Err(Error::InvalidDensity(format!(
                    "quadrature coefficient r({lag}) = {value} lies outside [-1, 1]"
                )));
            }
            self.cache.push(value);
        }
        Ok(())
    }

    /// `r(lag)`; negative lags are folded onto `|lag|`.
    pub fn correlation(&self, lag: i64) -> f64 {
        self.at(lag.unsigned_abs())
    }

    #[inline]
    pub fn at(&self, lag: u64) -> f64 {
        match self.cache.get(lag as usize) {
            Some(&v) => v,
            None => self.family.coefficient(lag),
        }
    }

    pub fn support(&self) -> Option<u64> {
        self.family.support()
    }

    pub fn validity_horizon(&self) -> Option<u64> {
        self.family.validity_horizon()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PsdReport {
    pub window: usize,
    /// Smallest pivot of the unshifted window, an upper bound on its least eigenvalue.
    pub min_eigenvalue_estimate: f64,
    pub jitter: f64,
    pub ok: bool,
    pub failing_minor: Option<usize>,
}

/// Bochner positivity check of the Toeplitz window `(r(i-j))_{i,j<window}`.
pub fn validate_psd(seq: &CorrelationSequence, window: usize) -> Result<PsdReport> {
    if window == 0 {
        return Err(Error::InvalidParameter("PSD window must be at least 1".into()));
    }
    let policy = PivotPolicy::gram();
    let gram = |i: usize, j: usize| seq.at(i.abs_diff(j) as u64);
    match factor_window(window, &gram, &policy, 0.0) {
        Ok(factor) => Ok(PsdReport {
            window,
            min_eigenvalue_estimate: factor.min_raw_pivot(),
            jitter: factor.jitter(),
            ok: true,
            failing_minor: None,
        }),
        Err(Error::NonPsd { minor, pivot, jitter }) => Ok(PsdReport {
            window,
            min_eigenvalue_estimate: pivot - jitter,
            jitter,
            ok: false,
            failing_minor: Some(minor),
        }),
        Err(e) => Err(e),
    }
}

/// Cesàro mean of squared correlations, `(1/n) Σ_{i<n} r(i)²`.
pub fn wiener_average(seq: &CorrelationSequence, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("wiener average needs n ≥ 1".into()));
    }
    let sum: f64 = (0..n).map(|i| seq.at(i).powi(2)).sum();
    Ok(sum / n as f64)
}

/// `‖U^q ξ − ξ‖² = 2(1 − r(q))`.
pub fn rigidity_defect(seq: &CorrelationSequence, q: u64) -> Result<f64> {
    if q == 0 {
        return Err(Error::InvalidParameter("rigidity lag must be ≥ 1".into()));
    }
    Ok(2.0 * (1.0 - seq.at(q)))
}

/// Rigidity defect for the maximal spectral type `Σ_{m≥1} σ^{*m}/m!`, whose
/// normalized coefficient at lag `q` is `(e^{r(q)} − 1)/(e − 1)`.
pub fn system_rigidity_defect(seq: &CorrelationSequence, q: u64) -> Result<f64> {
    if q == 0 {
        return Err(Error::InvalidParameter("rigidity lag must be ≥ 1".into()));
    }
    Ok(2.0 * (1.0 - seq.at(q).exp_m1() / 1f64.exp_m1()))
}
