//! The reflected operator `V = WUW` with `W = 1 − 2Q_2 − 2Q_4 − ⋯`, evaluated
//! implicitly through the block profiles of a [`GramLadder`].
//!
//! Cutoffs are chosen by the minimal-`n` rule
//!
//! ```text
//! n_1 = 1,   n_{k+1} = min { n > n_k : (1/n) Σ_{i<n} ‖P_k U^i ξ‖ < 1/(k+1) }
//! ```
//!
//! and the averages `A(n) = (1/n) Σ_{i<n} ⟨U^i ξ, V^i ξ⟩` then satisfy
//! `|A(n_k) − (−1)^{k−1}| < 2/k` for `k ≥ 2`. At `n = n_k` the average splits
//! into a `P_{k−1}` part bounded by the cutoff average `α_k < 1/k`, and a
//! `Q_k` part equal to `(−1)^{k−1}(1 − (1/n_k) Σ ‖P_{k−1} U^i ξ‖²)`, whose
//! deviation from `(−1)^{k−1}` is again at most `α_k`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::krylov::{validate_cutoffs, CutoffDiagnostics, GramLadder, TimeSequence};
use crate::oracle::{compare_with_engine, dense_oracle, OracleChecks};
use crate::spectral::CorrelationSequence;

/// `a(i)` may leave `[-1, 1]` by this much before the run is aborted.
pub const REFLECTED_RANGE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cutoffs {
    pub values: Vec<usize>,
    /// `α_k = (1/n_k) Σ_{i<n_k} ‖P_{k−1} U^{t(i)} ξ‖`, with `α_1 = 0` (`P_0 = 0`).
    pub achieved: Vec<f64>,
    pub time_sequence: TimeSequence,
}

#[derive(Debug, Clone)]
pub struct CutoffSelection {
    pub cutoffs: Cutoffs,
    /// Factored through `n_K`.
    pub ladder: GramLadder,
    /// Number of times the search restarted after a diagonal-shift escalation.
    pub restarts: usize,
}

/// Run the cutoff recursion to depth `depth`.
///
/// Indices are scanned up to `max_horizon`, and never past the family's
/// validity horizon. Each escalation of the diagonal shift restarts the
/// search so that all levels see the same Gram geometry.
pub fn select_cutoffs(
    seq: CorrelationSequence,
    depth: usize,
    max_horizon: usize,
    times: TimeSequence,
) -> Result<CutoffSelection> {
    if depth == 0 {
        return Err(Error::InvalidParameter("ladder depth K must be at least 1".into()));
    }
    times.validate()?;
    let validity = seq.validity_horizon();
    let in_horizon = |n: usize| -> bool {
        n <= max_horizon && validity.is_none_or(|v| times.time(n - 1) <= v)
    };
    if !in_horizon(1) {
        return Err(Error::HorizonExhausted {
            level: 1,
            horizon: max_horizon,
            best_average: f64::NAN,
            target: 1.0,
            cutoffs: Vec::new(),
        });
    }

    let mut jitter = 0.0;
    let mut restarts = 0;
    'restart: loop {
        let mut ladder = GramLadder::new(seq.clone(), times.clone(), jitter)?;
        if ladder.extend(1)? {
            jitter = ladder.jitter_used();
            restarts += 1;
            continue 'restart;
        }
        ladder.push_cutoff(1)?;
        let mut achieved = vec![0.0];

        for level in 1..depth {
            let nk = ladder.cutoffs()[level - 1];
            let target = 1.0 / (level + 1) as f64;
            let scale = (level + 1) as f64;
            // ‖P_k U^{t(i)} ξ‖ = 1 for i < n_k
            let mut sum = nk as f64;
            let mut n = nk;
            let mut best = f64::INFINITY;
            let found = loop {
                if !in_horizon(n + 1) {
                    break None;
                }
                let p = ladder.window_norm_sq(nk, n)?.clamp(0.0, 1.0);
                sum += p.sqrt();
                n += 1;
                let avg = sum / n as f64;
                best = best.min(avg);
                if scale * sum < n as f64 {
                    break Some(avg);
                }
            };
            let Some(avg) = found else {
                return Err(Error::HorizonExhausted {
                    level: level + 1,
                    horizon: n,
                    best_average: best,
                    target,
                    cutoffs: ladder.cutoffs().to_vec(),
                });
            };
            if ladder.extend(n)? {
                jitter = ladder.jitter_used();
                restarts += 1;
                continue 'restart;
            }
            ladder.push_cutoff(n)?;
            achieved.push(avg);
        }

        let cutoffs = Cutoffs {
            values: ladder.cutoffs().to_vec(),
            achieved,
            time_sequence: times.clone(),
        };
        return Ok(CutoffSelection {
            cutoffs,
            ladder,
            restarts,
        });
    }
}

/// `a(i) = ⟨U^{t(i)} ξ, V^{t(i)} ξ⟩ = 1 − 2 Σ_{k even} q_k(i)` for `i < n_K`.
pub fn reflected_inner(ladder: &GramLadder, i: usize) -> Result<f64> {
    reflected_with_clip(ladder, i).map(|(a, _)| a)
}

/// `a(i)` together with the number of clipped profile entries.
fn reflected_with_clip(ladder: &GramLadder, i: usize) -> Result<(f64, usize)> {
    let top = top_cutoff(ladder)?;
    if i >= top {
        return Err(Error::Usage(format!(
            "index {i} lies outside the complete window n_K = {top}"
        )));
    }
    let profile = ladder.block_profile(i)?;
    let reflected: f64 = profile.q.iter().skip(1).step_by(2).sum();
    let a = 1.0 - 2.0 * reflected;
    if a.abs() > 1.0 + REFLECTED_RANGE_TOL {
        return Err(Error::Numerical(format!(
            "a({i}) = {a} lies outside [-1, 1]; the Gram window is ill-conditioned"
        )));
    }
    let clipped = profile.clipped + usize::from(a.abs() > 1.0);
    Ok((a.clamp(-1.0, 1.0), clipped))
}

/// `⟨U^{t(i)} ξ, V^{t(j)} ξ⟩ = ⟨U^{t(i)} ξ, W U^{t(j)} ξ⟩` for `i, j < n_K`.
pub fn cross_inner(ladder: &GramLadder, i: usize, j: usize) -> Result<f64> {
    let top = top_cutoff(ladder)?;
    if i >= top || j >= top {
        return Err(Error::Usage(format!(
            "indices ({i}, {j}) lie outside the complete window n_K = {top}"
        )));
    }
    let gram = ladder.gram(i, j);
    let mut reflected = 0.0;
    for k in (2..=ladder.levels()).step_by(2) {
        reflected += ladder.projected_inner(k, i, j)? - ladder.projected_inner(k - 1, i, j)?;
    }
    Ok(gram - 2.0 * reflected)
}

/// `a(i)` for `i < horizon`, evaluated in parallel.
pub fn reflected_series(ladder: &GramLadder, horizon: usize) -> Result<(Vec<f64>, usize)> {
    let values: Vec<(f64, usize)> = (0..horizon)
        .into_par_iter()
        .map(|i| reflected_with_clip(ladder, i))
        .collect::<Result<_>>()?;
    let clipped = values.iter().map(|&(_, c)| c).sum();
    Ok((values.into_iter().map(|(a, _)| a).collect(), clipped))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakRow {
    pub level: usize,
    pub cutoff: usize,
    pub average: f64,
    pub predicted_sign: i32,
    pub deviation: f64,
    pub error_bound: f64,
    pub within_bound: bool,
}

/// `A(n) = (1/n) Σ_{i<n} a(i)` for `1 ≤ n ≤ a.len()`, plus one peak row per
/// cutoff inside that range.
pub fn running_averages(a: &[f64], cutoffs: &[usize]) -> (Vec<f64>, Vec<PeakRow>) {
    let mut averages = Vec::with_capacity(a.len());
    let mut prefix = 0.0;
    for (i, &value) in a.iter().enumerate() {
        prefix += value;
        averages.push(prefix / (i + 1) as f64);
    }
    let peaks = cutoffs
        .iter()
        .enumerate()
        .filter(|&(_, &n)| n <= averages.len())
        .map(|(idx, &n)| {
            let level = idx + 1;
            let sign = if level % 2 == 1 { 1 } else { -1 };
            let average = averages[n - 1];
            let deviation = (average - sign as f64).abs();
            let error_bound = 2.0 / level as f64;
            PeakRow {
                level,
                cutoff: n,
                average,
                predicted_sign: sign,
                deviation,
                error_bound,
                within_bound: deviation < error_bound,
            }
        })
        .collect();
    (averages, peaks)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub window: usize,
    pub max_a_delta: f64,
    pub max_cross_delta: f64,
    pub checks: OracleChecks,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportDiagnostics {
    pub jitter: f64,
    pub restarts: usize,
    pub clipped: usize,
    pub factored_size: usize,
    pub cutoff_diagnostics: Vec<CutoffDiagnostics>,
    pub oracle: Option<OracleSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleReport {
    pub family: String,
    pub cutoffs: Cutoffs,
    pub horizon: usize,
    pub a: Vec<f64>,
    pub running_average: Vec<f64>,
    pub peaks: Vec<PeakRow>,
    pub diagnostics: ReportDiagnostics,
}

/// Options for [`construct`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConstructOptions {
    pub depth: usize,
    pub max_horizon: usize,
    pub times: TimeSequence,
    /// Run the dense oracle with this window cap.
    pub oracle_cap: Option<usize>,
}

/// Cutoff search, reflected series, running averages and optional oracle
/// cross-check, assembled into one report.
pub fn construct(seq: CorrelationSequence, opts: &ConstructOptions) -> Result<CounterexampleReport> {
    let family = seq.family().label();
    let selection = select_cutoffs(seq, opts.depth, opts.max_horizon, opts.times.clone())?;
    report_from_selection(family, selection, opts.oracle_cap)
}

pub fn report_from_selection(
    family: String,
    selection: CutoffSelection,
    oracle_cap: Option<usize>,
) -> Result<CounterexampleReport> {
    let ladder = &selection.ladder;
    let horizon = top_cutoff(ladder)?;
    let (a, clipped) = reflected_series(ladder, horizon)?;
    let (running_average, peaks) = running_averages(&a, ladder.cutoffs());
    let oracle = match oracle_cap {
        Some(cap) => {
            let out = dense_oracle(ladder.seq(), ladder.times(), ladder.cutoffs(), cap, ladder.jitter_used())?;
            let deltas = compare_with_engine(ladder, &out)?;
            Some(OracleSummary {
                window: horizon,
                max_a_delta: deltas.max_a_delta,
                max_cross_delta: deltas.max_cross_delta,
                checks: out.checks,
            })
        }
        None => None,
    };
    Ok(CounterexampleReport {
        family,
        cutoffs: selection.cutoffs.clone(),
        horizon,
        a,
        running_average,
        peaks,
        diagnostics: ReportDiagnostics {
            jitter: ladder.jitter_used(),
            restarts: selection.restarts,
            clipped,
            factored_size: ladder.factored_size(),
            cutoff_diagnostics: ladder.diagnostics().to_vec(),
            oracle,
        },
    })
}

/// Ladder over explicit cutoffs (no search), for fixed-window experiments.
pub fn ladder_for_cutoffs(
    seq: CorrelationSequence,
    times: TimeSequence,
    cutoffs: &[usize],
) -> Result<GramLadder> {
    validate_cutoffs(cutoffs)?;
    GramLadder::with_cutoffs(seq, times, cutoffs)
}

fn top_cutoff(ladder: &GramLadder) -> Result<usize> {
    ladder
        .cutoffs()
        .last()
        .copied()
        .ok_or_else(|| Error::Usage("ladder has no cutoffs".into()))
}
