//! Gaussian lift of the reflected pair.
//!
//! On the first chaos, inner products are covariances: the stationary
//! processes `X_i = f∘S^{t(i)}` and `Y_j = f∘T^{t(j)}` are jointly Gaussian with
//!
//! ```text
//! Cov(X_i, X_j) = Cov(Y_i, Y_j) = r(t(i) − t(j)),   Cov(X_i, Y_j) = ⟨U^{t(i)} ξ, V^{t(j)} ξ⟩.
//! ```
//!
//! Paths are drawn as `L z` with `L` the lower factor of the `2n × 2n`
//! covariance and `z` standard normal, so `E[(1/n) Σ X_i Y_i] = A(n)` exactly.
//!
//! Reproducibility: samples are split into blocks of [`BLOCK_SIZE`]. Block `b`
//! draws from `ChaCha20Rng::seed_from_u64(seed)` switched to stream `b`, and
//! normals come from `rand_distr::StandardNormal`. Blocks run in parallel and
//! their moment accumulators are merged in block order, so results do not
//! depend on the thread count.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construction::cross_inner;
use crate::error::{Error, Result};
use crate::factor::{factor_window, PivotPolicy, RowFactor};
use crate::krylov::GramLadder;

pub const BLOCK_SIZE: usize = 4096;

/// Statistical acceptance band, in standard errors.
pub const Z_BAND: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct JointCovariance {
    n: usize,
    sigma: DMatrix<f64>,
    factor: RowFactor,
}

impl JointCovariance {
    pub fn path_length(&self) -> usize {
        self.n
    }

    /// The `2n × 2n` matrix, ordered `(X_0 … X_{n−1}, Y_0 … Y_{n−1})`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn psd_jitter(&self) -> f64 {
        self.factor.jitter()
    }

    pub fn factor(&self) -> &RowFactor {
        &self.factor
    }

    pub fn xx(&self, i: usize, j: usize) -> f64 {
        self.sigma[(i, j)]
    }

    pub fn yy(&self, i: usize, j: usize) -> f64 {
        self.sigma[(self.n + i, self.n + j)]
    }

    pub fn xy(&self, i: usize, j: usize) -> f64 {
        self.sigma[(i, self.n + j)]
    }

    /// `A(n) = (1/n) Σ_{i<n} Cov(X_i, Y_i)`.
    pub fn exact_average(&self) -> f64 {
        (0..self.n).map(|i| self.xy(i, i)).sum::<f64>() / self.n as f64
    }
}

/// Assemble and factor the joint covariance of the first `n` times.
pub fn build_joint_covariance(ladder: &GramLadder, n: usize) -> Result<JointCovariance> {
    let top = ladder.cutoffs().last().copied().unwrap_or(0);
    if n == 0 || n > top {
        return Err(Error::InvalidParameter(format!(
            "path length must lie in 1..={top}, got {n}"
        )));
    }
    let mut cross = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            cross[(i, j)] = cross_inner(ladder, i, j)?;
        }
    }
    let size = 2 * n;
    let sigma = DMatrix::from_fn(size, size, |a, b| match (a < n, b < n) {
        (true, true) => ladder.gram(a, b),
        (false, false) => ladder.gram(a - n, b - n),
        (true, false) => cross[(a, b - n)],
        (false, true) => cross[(b, a - n)],
    });
    let entry = |a: usize, b: usize| sigma[(a, b)];
    let factor = factor_window(size, &entry, &PivotPolicy::covariance(), 0.0)?;
    Ok(JointCovariance { n, sigma, factor })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub truncation: Option<f64>,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("path length must be at least 1".into()));
        }
        if self.samples < 2 {
            return Err(Error::InvalidParameter(format!(
                "at least two samples are needed for a standard error, got {}",
                self.samples
            )));
        }
        if let Some(m) = self.truncation {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "truncation level must be positive, got {m}"
                )));
            }
        }
        Ok(())
    }
}

/// Mean, standard error and z-score of one statistic against its exact value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentCheck {
    pub expected: f64,
    pub estimate: f64,
    pub standard_error: f64,
    pub z_score: f64,
}

impl MomentCheck {
    fn new(expected: f64, acc: &Accumulator) -> Self {
        let se = acc.standard_error();
        Self {
            expected,
            estimate: acc.mean,
            standard_error: se,
            z_score: z_score(acc.mean, expected, se),
        }
    }

    pub fn passes(&self) -> bool {
        self.z_score.abs() <= Z_BAND
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncatedEstimate {
    pub level: f64,
    pub estimate: f64,
    pub standard_error: f64,
    /// `Â_M − Â` on the same samples.
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub exact: f64,
    pub estimate: f64,
    pub standard_error: f64,
    pub z_score: f64,
    pub truncated: Option<TruncatedEstimate>,
    /// Mean of `(1/(n−1)) Σ X_i X_{i+1}`; absent when `n = 1`.
    pub lag1_x: Option<MomentCheck>,
    pub lag1_y: Option<MomentCheck>,
    /// `E[X_i Y_0]` against `r(t(i))`, one entry per `i < n`.
    pub cross: Vec<MomentCheck>,
    pub psd_jitter: f64,
}

impl EstimateReport {
    pub fn passes(&self) -> bool {
        self.z_score.abs() <= Z_BAND
    }

    pub fn moments_pass(&self) -> bool {
        self.lag1_x.is_none_or(|c| c.passes())
            && self.lag1_y.is_none_or(|c| c.passes())
            && self.cross.iter().all(MomentCheck::passes)
    }
}

fn z_score(estimate: f64, expected: f64, se: f64) -> f64 {
    let diff = estimate - expected;
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// Running mean and centered second moment, merged with Chan's update.
#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(&mut self, other: &Accumulator) {
        if other.count == 0.0 {
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count / total;
        self.m2 += other.m2 + delta * delta * self.count * other.count / total;
        self.count = total;
    }

    fn standard_error(&self) -> f64 {
        if self.count < 2.0 {
            return f64::NAN;
        }
        (self.m2 / (self.count - 1.0)).sqrt() / self.count.sqrt()
    }
}

/// Per-sample statistics: the double average, its truncations, the two lag-1
/// products and the cross products `X_i Y_0`.
struct Layout {
    n: usize,
    levels: Vec<f64>,
}

impl Layout {
    fn width(&self) -> usize {
        1 + self.levels.len() + 2 + self.n
    }

    fn record(&self, path: &[f64], out: &mut [f64]) {
        let n = self.n;
        let (x, y) = path.split_at(n);
        out[0] = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        for (slot, &m) in self.levels.iter().enumerate() {
            out[1 + slot] = x
                .iter()
                .zip(y)
                .map(|(a, b)| a.clamp(-m, m) * b.clamp(-m, m))
                .sum::<f64>()
                / n as f64;
        }
        let base = 1 + self.levels.len();
        if n >= 2 {
            let denom = (n - 1) as f64;
            out[base] = x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / denom;
            out[base + 1] = y.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / denom;
        }
        for i in 0..n {
            out[base + 2 + i] = x[i] * y[0];
        }
    }
}

fn run_block(
    factor: &RowFactor,
    layout: &Layout,
    seed: u64,
    block: usize,
    count: usize,
) -> Vec<Accumulator> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    let dim = factor.size();
    let mut z = vec![0.0; dim];
    let mut path = vec![0.0; dim];
    let mut stats = vec![0.0; layout.width()];
    let mut accs = vec![Accumulator::default(); layout.width()];
    for _ in 0..count {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for (i, out) in path.iter_mut().enumerate() {
            let (start, row) = factor.row(i);
            *out = row.iter().zip(&z[start..=i]).map(|(l, v)| l * v).sum();
        }
        layout.record(&path, &mut stats);
        for (acc, &s) in accs.iter_mut().zip(&stats) {
            acc.push(s);
        }
    }
    accs
}

fn simulate(cov: &JointCovariance, cfg: &SimulationConfig, levels: &[f64]) -> Vec<Accumulator> {
    let layout = Layout {
        n: cov.n,
        levels: levels.to_vec(),
    };
    let blocks = cfg.samples.div_ceil(BLOCK_SIZE);
    let partials: Vec<Vec<Accumulator>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let count = BLOCK_SIZE.min(cfg.samples - b * BLOCK_SIZE);
            run_block(&cov.factor, &layout, cfg.seed, b, count)
        })
        .collect();
    let mut total = vec![Accumulator::default(); layout.width()];
    for part in &partials {
        for (acc, p) in total.iter_mut().zip(part) {
            acc.merge(p);
        }
    }
    total
}

/// Monte-Carlo estimate of `A(n)` with moment checks; deterministic in the seed.
pub fn sample_and_estimate(cov: &JointCovariance, cfg: &SimulationConfig) -> Result<EstimateReport> {
    cfg.validate()?;
    if cfg.n != cov.n {
        return Err(Error::InvalidParameter(format!(
            "simulation path length {} does not match covariance path length {}",
            cfg.n, cov.n
        )));
    }
    let levels: Vec<f64> = cfg.truncation.into_iter().collect();
    let accs = simulate(cov, cfg, &levels);
    let n = cov.n;
    let exact = cov.exact_average();
    let main = &accs[0];
    let se = main.standard_error();
    let truncated = cfg.truncation.map(|level| TruncatedEstimate {
        level,
        estimate: accs[1].mean,
        standard_error: accs[1].standard_error(),
        bias: accs[1].mean - main.mean,
    });
    let base = 1 + levels.len();
    let (lag1_x, lag1_y) = if n >= 2 {
        let ex = (0..n - 1).map(|i| cov.xx(i, i + 1)).sum::<f64>() / (n - 1) as f64;
        let ey = (0..n - 1).map(|i| cov.yy(i, i + 1)).sum::<f64>() / (n - 1) as f64;
        (
            Some(MomentCheck::new(ex, &accs[base])),
            Some(MomentCheck::new(ey, &accs[base + 1])),
        )
    } else {
        (None, None)
    };
    let cross = (0..n)
        .map(|i| MomentCheck::new(cov.xy(i, 0), &accs[base + 2 + i]))
        .collect();
    Ok(EstimateReport {
        n,
        samples: cfg.samples,
        seed: cfg.seed,
        exact,
        estimate: main.mean,
        standard_error: se,
        z_score: z_score(main.mean, exact, se),
        truncated,
        lag1_x,
        lag1_y,
        cross,
        psd_jitter: cov.psd_jitter(),
    })
}

/// Truncated estimates `Â_M` for each level on one shared sample set, with the
/// untruncated `Â` first.
pub fn truncation_sweep(
    cov: &JointCovariance,
    cfg: &SimulationConfig,
    levels: &[f64],
) -> Result<(f64, Vec<TruncatedEstimate>)> {
    cfg.validate()?;
    let accs = simulate(cov, cfg, levels);
    let base = accs[0].mean;
    let rows = levels
        .iter()
        .enumerate()
        .map(|(slot, &level)| TruncatedEstimate {
            level,
            estimate: accs[1 + slot].mean,
            standard_error: accs[1 + slot].standard_error(),
            bias: accs[1 + slot].mean - base,
        })
        .collect();
    Ok((base, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::select_cutoffs;
    use crate::krylov::TimeSequence;
    use crate::spectral::{CorrelationSequence, SpectrumFamily};

    fn lebesgue_ladder() -> GramLadder {
        let seq = CorrelationSequence::new(SpectrumFamily::Lebesgue).unwrap();
        select_cutoffs(seq, 4, 1000, TimeSequence::Linear).unwrap().ladder
    }

    #[test]
    fn single_time_covariance() {
        let cov = build_joint_covariance(&lebesgue_ladder(), 1).unwrap();
        assert_eq!(cov.matrix().as_slice(), &[1.0, 1.0, 1.0, 1.0]);
        assert!(cov.psd_jitter() > 0.0 && cov.psd_jitter() <= 1e-6);
    }

    #[test]
    fn lebesgue_cross_block_is_diagonal() {
        let cov = build_joint_covariance(&lebesgue_ladder(), 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = match (i, j) {
                    (0, 0) => 1.0,
                    (1, 1) | (2, 2) => -1.0,
                    _ => 0.0,
                };
                assert_eq!(cov.xy(i, j), expected);
                assert_eq!(cov.xx(i, j), cov.yy(i, j));
            }
        }
    }

    #[test]
    fn covariance_rejects_long_paths() {
        assert!(build_joint_covariance(&lebesgue_ladder(), 42).is_err());
        assert!(build_joint_covariance(&lebesgue_ladder(), 0).is_err());
    }

    #[test]
    fn arc_covariance_is_psd() {
        let seq = CorrelationSequence::new(SpectrumFamily::Arc { epsilon: 1.0 }).unwrap();
        let ladder = select_cutoffs(seq, 3, 10_000, TimeSequence::Linear).unwrap().ladder;
        let cov = build_joint_covariance(&ladder, 40).unwrap();
        let sigma = cov.matrix();
        assert_eq!(sigma, &sigma.transpose());
        let eig = sigma.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() >= -1e-8, "{}", eig.eigenvalues.min());
        for i in 0..40 {
            assert_eq!(cov.xx(i, i), 1.0);
            assert!((cov.xy(i, 0) - ladder.gram(i, 0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn perfectly_correlated_pair() {
        let cov = build_joint_covariance(&lebesgue_ladder(), 1).unwrap();
        let cfg = SimulationConfig {
            n: 1,
            samples: 20_000,
            seed: 7,
            truncation: None,
        };
        let rep = sample_and_estimate(&cov, &cfg).unwrap();
        assert!((rep.estimate - 1.0).abs() <= 4.0 * rep.standard_error, "{rep:?}");
        assert!(rep.lag1_x.is_none());
    }

    #[test]
    fn seed_determinism() {
        let cov = build_joint_covariance(&lebesgue_ladder(), 5).unwrap();
        let cfg = SimulationConfig {
            n: 5,
            samples: 10_000,
            seed: 99,
            truncation: Some(2.0),
        };
        let a = sample_and_estimate(&cov, &cfg).unwrap();
        let b = sample_and_estimate(&cov, &cfg).unwrap();
        assert_eq!(a, b);
        let other = sample_and_estimate(&cov, &SimulationConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.estimate, other.estimate);
    }

    #[test]
    fn config_validation() {
        let cfg = SimulationConfig {
            n: 3,
            samples: 1,
            seed: 0,
            truncation: None,
        };
        assert!(cfg.validate().is_err());
        let cfg = SimulationConfig {
            samples: 10,
            truncation: Some(-1.0),
            ..cfg
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn accumulator_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut whole = Accumulator::default();
        xs.iter().for_each(|&x| whole.push(x));
        let mut merged = Accumulator::default();
        for chunk in xs.chunks(64) {
            let mut part = Accumulator::default();
            chunk.iter().for_each(|&x| part.push(x));
            merged.merge(&part);
        }
        assert!((whole.mean - merged.mean).abs() < 1e-12);
        assert!((whole.m2 - merged.m2).abs() < 1e-9);
    }

    #[test]
    fn truncation_bias_shrinks_with_level() {
        let cov = build_joint_covariance(&lebesgue_ladder(), 10).unwrap();
        let cfg = SimulationConfig {
            n: 10,
            samples: 100_000,
            seed: 4242,
            truncation: None,
        };
        let (base, rows) = truncation_sweep(&cov, &cfg, &[1.0, 2.0, 4.0, 8.0]).unwrap();
        let untruncated = sample_and_estimate(&cov, &cfg).unwrap();
        assert_eq!(base, untruncated.estimate);
        for w in rows.windows(2) {
            assert!(w[1].bias.abs() <= w[0].bias.abs(), "{rows:?}");
        }
        assert!(rows[3].bias.abs() <= 1e-3);
    }
}
