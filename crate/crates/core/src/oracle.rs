//! Explicit finite-window model of the reflection, used to cross-check the
//! implicit engine.
//!
//! The orbit vectors `U^{t(i)} ξ`, `i < n_K`, are realized as the rows of the
//! triangular factor of the (shifted) Gram window, copied into a dense
//! matrix. The projections `P_k` come from Householder QR of the first `n_k`
//! vectors, `W = I − 2 Σ_{k even} Q_k` is assembled as a matrix, and every
//! inner product is computed by plain matrix algebra.
//!
//! The factor is shared with the engine on purpose. Windows of slowly
//! decaying correlations are numerically singular, and there the trailing
//! coordinates of a row are only determined to about `ε_mach / λ_min`, so two
//! different factorizations of the same window disagree far above `1e-8`.
//! What the model checks independently is everything downstream of the
//! coordinates: projectors, blocks, the reflection and the inner products.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::construction::{cross_inner, reflected_inner};
use crate::error::{Error, Result};
use crate::factor::{factor_window, PivotPolicy};
use crate::krylov::{validate_cutoffs, GramLadder, TimeSequence};
use crate::spectral::CorrelationSequence;

pub const DEFAULT_ORACLE_CAP: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleChecks {
    /// `max |W² − I|`.
    pub involution_error: f64,
    /// `max |W − Wᵀ|`.
    pub symmetry_error: f64,
    /// `max_k max |W Q_k − Q_k W|`.
    pub commutator_error: f64,
    /// `max |⟨W u_i, W u_j⟩ − r(t(i) − t(j))|`.
    pub isometry_error: f64,
    /// `max_i |Σ_k ‖Q_k u_i‖² − 1|`.
    pub completeness_error: f64,
    /// `max_i |⟨u_i, W u_0⟩ − r(t(i))|`.
    pub fixed_point_error: f64,
    pub jitter: f64,
}

#[derive(Debug, Clone)]
pub struct OracleOutput {
    pub a: Vec<f64>,
    pub cross: DMatrix<f64>,
    pub checks: OracleChecks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleDeltas {
    pub max_a_delta: f64,
    pub max_cross_delta: f64,
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Build the explicit model over `cutoffs` (with `n_K ≤ cap`) and evaluate
/// `a(i)` and `⟨U^{t(i)} ξ, V^{t(j)} ξ⟩` for all `i, j < n_K`.
///
/// `jitter` is the starting diagonal shift; pass the engine's shift when
/// comparing against it.
pub fn dense_oracle(
    seq: &CorrelationSequence,
    times: &TimeSequence,
    cutoffs: &[usize],
    cap: usize,
    jitter: f64,
) -> Result<OracleOutput> {
    validate_cutoffs(cutoffs)?;
    let n = *cutoffs.last().unwrap();
    if n > cap {
        return Err(Error::Usage(format!(
            "dense oracle window n_K = {n} exceeds the cap {cap}"
        )));
    }
    let r = |i: usize, j: usize| seq.at(times.time(i).abs_diff(times.time(j)));
    let gram = DMatrix::from_fn(n, n, r);
    let factor = factor_window(n, &r, &PivotPolicy::gram(), jitter)?;
    let jitter = factor.jitter();
    let lower = DMatrix::from_fn(n, n, |i, j| if j <= i { factor.get(i, j) } else { 0.0 });
    // column i of `vectors` is u_i
    let vectors = lower.transpose();

    let mut projectors = Vec::with_capacity(cutoffs.len());
    for &nk in cutoffs {
        let block = vectors.columns(0, nk).into_owned();
        let q = block.qr().q();
        projectors.push(&q * q.transpose());
    }
    let mut blocks = Vec::with_capacity(cutoffs.len());
    let mut previous = DMatrix::<f64>::zeros(n, n);
    for p in &projectors {
        blocks.push(p - &previous);
        previous = p.clone();
    }
    let mut w = DMatrix::<f64>::identity(n, n);
    for (idx, q) in blocks.iter().enumerate() {
        if (idx + 1) % 2 == 0 {
            w -= q * 2.0;
        }
    }

    let identity = DMatrix::<f64>::identity(n, n);
    let involution_error = max_abs(&(&w * &w - &identity));
    let symmetry_error = max_abs(&(&w - w.transpose()));
    let commutator_error = blocks
        .iter()
        .map(|q| max_abs(&(&w * q - q * &w)))
        .fold(0.0, f64::max);

    let reflected = &w * &vectors;
    let cross = vectors.transpose() * &reflected;
    let reflected_gram = reflected.transpose() * &reflected;
    let isometry_error = max_abs(&(reflected_gram - &gram));
    let a: Vec<f64> = (0..n).map(|i| cross[(i, i)]).collect();
    let fixed_point_error = (0..n)
        .map(|i| (cross[(i, 0)] - gram[(i, 0)]).abs())
        .fold(0.0, f64::max);
    let completeness_error = (0..n)
        .map(|i| {
            let u = vectors.column(i);
            let total: f64 = blocks.iter().map(|q| u.dot(&(q * u))).sum();
            (total - 1.0).abs()
        })
        .fold(0.0, f64::max);

    Ok(OracleOutput {
        a,
        cross,
        checks: OracleChecks {
            involution_error,
            symmetry_error,
            commutator_error,
            isometry_error,
            completeness_error,
            fixed_point_error,
            jitter,
        },
    })
}

/// Largest differences between the engine and the dense model.
pub fn compare_with_engine(ladder: &GramLadder, oracle: &OracleOutput) -> Result<OracleDeltas> {
    let n = oracle.a.len();
    let mut max_a_delta: f64 = 0.0;
    let mut max_cross_delta: f64 = 0.0;
    for i in 0..n {
        max_a_delta = max_a_delta.max((reflected_inner(ladder, i)? - oracle.a[i]).abs());
        for j in 0..n {
            let engine = cross_inner(ladder, i, j)?;
            max_cross_delta = max_cross_delta.max((engine - oracle.cross[(i, j)]).abs());
        }
    }
    Ok(OracleDeltas {
        max_a_delta,
        max_cross_delta,
    })
}
