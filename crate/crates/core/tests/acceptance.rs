//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits non-zero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ergodic_reflect::cli::{cmd_construct, cmd_simulate};
use ergodic_reflect::config::{RunConfig, SpectrumSpec};
use ergodic_reflect::construction::{
    cross_inner, reflected_inner, report_from_selection, select_cutoffs, CutoffSelection,
};
use ergodic_reflect::error::exit_code;
use ergodic_reflect::krylov::TimeSequence;
use ergodic_reflect::oracle::{compare_with_engine, dense_oracle};
use ergodic_reflect::spectral::{
    rigidity_defect, system_rigidity_defect, CorrelationSequence, SpectrumFamily,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(value: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure(value <= tol, || format!("{what}: {value:.3e} > {tol:.0e}"))
}

fn config(dir: &Path, spectrum: SpectrumSpec, k: usize) -> RunConfig {
    RunConfig {
        spectrum,
        k,
        output_dir: dir.to_path_buf(),
        ..RunConfig::default()
    }
}

fn selection(family: SpectrumFamily, depth: usize) -> CutoffSelection {
    let seq = CorrelationSequence::new(family).unwrap();
    select_cutoffs(seq, depth, 10_000, TimeSequence::Linear).unwrap()
}

/// Independent closed form for r = δ: n_{k+1} = (k+1)·n_k + 1, and the
/// running sum at n_k alternates block lengths with signs +, −, +, …
fn lebesgue_table(depth: usize) -> (Vec<usize>, Vec<f64>) {
    let mut cutoffs = vec![1usize];
    while cutoffs.len() < depth {
        let k = cutoffs.len();
        cutoffs.push((k + 1) * cutoffs[k - 1] + 1);
    }
    let mut numerator = 0i64;
    let mut previous = 0usize;
    let averages = cutoffs
        .iter()
        .enumerate()
        .map(|(idx, &n)| {
            let sign = if idx % 2 == 0 { 1 } else { -1 };
            numerator += sign * (n - previous) as i64;
            previous = n;
            numerator as f64 / n as f64
        })
        .collect();
    (cutoffs, averages)
}

fn lebesgue_reproduction() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let report = cmd_construct(&config(dir.path(), SpectrumSpec::Lebesgue, 7)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (cutoffs, averages) = lebesgue_table(7);
    ensure(cutoffs == [1, 3, 10, 41, 206, 1237, 8660], || format!("oracle table {cutoffs:?}"))?;
    ensure(report.cutoffs.values == cutoffs, || {
        format!("cutoffs {:?}", report.cutoffs.values)
    })?;
    let published = [
        1.0,
        -1.0 / 3.0,
        0.6,
        -25.0 / 41.0,
        140.0 / 206.0,
        -891.0 / 1237.0,
        6532.0 / 8660.0,
    ];
    let mut worst = 0.0f64;
    for ((row, &oracle), &listed) in report.peaks.iter().zip(&averages).zip(&published) {
        worst = worst.max((row.average - oracle).abs()).max((row.average - listed).abs());
    }
    ensure(report.peaks.len() == 7, || "missing peak rows".into())?;
    within(worst, 1e-12, "max |A(n_k) - exact|")?;
    ensure(elapsed < Duration::from_secs(1), || format!("runtime {elapsed:?}"))?;
    Ok(format!("cutoffs {cutoffs:?}, max error {worst:.1e}, {elapsed:.2?}"))
}

fn oscillation_bound() -> Outcome {
    let mut parts = Vec::new();
    for family in [
        SpectrumFamily::Lebesgue,
        SpectrumFamily::Arc { epsilon: 0.5 },
        SpectrumFamily::Arc { epsilon: 1.0 },
    ] {
        let label = family.label();
        let sel = selection(family, 4);
        let report = report_from_selection(label.clone(), sel, None).map_err(|e| e.to_string())?;
        ensure(report.peaks.len() == 4, || format!("{label}: {} peaks", report.peaks.len()))?;
        let mut ratio = 0.0f64;
        for p in report.peaks.iter().filter(|p| p.level >= 2) {
            let sign = if p.level % 2 == 1 { 1.0 } else { -1.0 };
            let deviation = (p.average - sign).abs();
            let bound = 2.0 / p.level as f64;
            ensure(deviation < bound, || {
                format!("{label}: k={} |A - ({sign})| = {deviation} >= {bound}", p.level)
            })?;
            ratio = ratio.max(deviation / bound);
        }
        parts.push(format!("{label} n_K={} max dev/bound {ratio:.3}", report.horizon));
    }
    Ok(parts.join("; "))
}

fn fixed_point_and_isometry() -> Outcome {
    let mut parts = Vec::new();
    for (family, depth) in [
        (SpectrumFamily::Lebesgue, 4),
        (SpectrumFamily::Arc { epsilon: 0.5 }, 4),
        (SpectrumFamily::Arc { epsilon: 1.0 }, 4),
        (SpectrumFamily::Arc { epsilon: 0.5 }, 3),
    ] {
        let label = family.label();
        let sel = selection(family, depth);
        let ladder = &sel.ladder;
        let top = *sel.cutoffs.values.last().unwrap();
        let mut fixed = 0.0f64;
        for i in 0..top {
            let v = cross_inner(ladder, i, 0).map_err(|e| e.to_string())?;
            fixed = fixed.max((v - ladder.seq().at(i as u64)).abs());
        }
        within(fixed, 1e-8, &format!("{label}: max |<U^i xi, xi'> - r(i)|"))?;
        let mut part = format!("{label} K={depth}: fixed {fixed:.1e}");
        if top <= 512 {
            let out = dense_oracle(ladder.seq(), ladder.times(), &sel.cutoffs.values, 512, ladder.jitter_used())
                .map_err(|e| e.to_string())?;
            within(out.checks.isometry_error, 1e-8, &format!("{label}: V-isometry"))?;
            part.push_str(&format!(", isometry {:.1e}", out.checks.isometry_error));
        }
        parts.push(part);
    }
    Ok(parts.join("; "))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let sel = selection(SpectrumFamily::Arc { epsilon: 0.5 }, 3);
    let cutoffs = sel.cutoffs.values.clone();
    let top = *cutoffs.last().unwrap();
    ensure(top <= 512, || format!("n_K = {top} exceeds 512"))?;
    let ladder = &sel.ladder;
    let out = dense_oracle(ladder.seq(), ladder.times(), &cutoffs, 512, ladder.jitter_used()).map_err(|e| e.to_string())?;
    let deltas = compare_with_engine(ladder, &out).map_err(|e| e.to_string())?;
    within(deltas.max_a_delta, 1e-8, "max |a_engine - a_dense|")?;
    within(deltas.max_cross_delta, 1e-8, "max |cross_engine - cross_dense|")?;
    within(out.checks.involution_error, 1e-8, "max |W^2 - I|")?;
    within(out.checks.completeness_error, 1e-8, "dense sum_k q_k - 1")?;
    let mut completeness = 0.0f64;
    for i in 0..top {
        let profile = ladder.block_profile(i).map_err(|e| e.to_string())?;
        completeness = completeness.max((profile.q.iter().sum::<f64>() - 1.0).abs());
        let a = reflected_inner(ladder, i).map_err(|e| e.to_string())?;
        ensure(a.abs() <= 1.0 + 1e-8, || format!("a({i}) = {a}"))?;
    }
    within(completeness, 1e-8, "engine sum_k q_k - 1")?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("runtime {elapsed:?}"))?;
    Ok(format!(
        "cutoffs {cutoffs:?}: delta a {:.1e}, delta cross {:.1e}, W^2-I {:.1e}, {elapsed:.2?}",
        deltas.max_a_delta, deltas.max_cross_delta, out.checks.involution_error
    ))
}

fn gaussian_lift() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), SpectrumSpec::Lebesgue, 4);
    cfg.simulation.n = 10;
    cfg.simulation.samples = 200_000;
    cfg.simulation.seed = 0x5eed;
    let start = Instant::now();
    let first = cmd_simulate(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let bytes = std::fs::read(dir.path().join("estimate.json")).unwrap();
    let second = cmd_simulate(&cfg).map_err(|e| e.to_string())?;
    let bytes_again = std::fs::read(dir.path().join("estimate.json")).unwrap();

    within((first.exact - 0.6).abs(), 1e-12, "exact A(10) - 0.6")?;
    let gap = (first.estimate - 0.6).abs();
    ensure(gap <= 4.0 * first.standard_error, || {
        format!("|estimate - 0.6| = {gap:.3e} > 4 SE = {:.3e}", 4.0 * first.standard_error)
    })?;
    let lag_x = first.lag1_x.ok_or("missing lag-1 X check")?;
    let lag_y = first.lag1_y.ok_or("missing lag-1 Y check")?;
    for (name, check) in [("lag-1 X", lag_x), ("lag-1 Y", lag_y)] {
        ensure(check.expected == 0.0, || format!("{name} expected r(1)=0, got {}", check.expected))?;
        ensure(check.passes(), || format!("{name}: z = {:.2}", check.z_score))?;
    }
    for (i, check) in first.cross.iter().enumerate() {
        let r = if i == 0 { 1.0 } else { 0.0 };
        ensure(check.expected == r, || format!("cross {i}: expected {}", check.expected))?;
        ensure(check.passes(), || format!("cross {i}: z = {:.2}", check.z_score))?;
    }
    ensure(first == second && bytes == bytes_again, || "rerun differs".into())?;
    ensure(elapsed < Duration::from_secs(30), || format!("runtime {elapsed:?}"))?;
    Ok(format!(
        "estimate {:.5} (SE {:.2e}, z {:+.2}), rerun identical, {elapsed:.2?}",
        first.estimate, first.standard_error, first.z_score
    ))
}

fn rigidity() -> Outcome {
    let mut checked = 0;
    for factors in 1..=6u32 {
        let seq = CorrelationSequence::new(SpectrumFamily::ConvolutionTruncated { base: 4, factors })
            .unwrap();
        for m in factors..=factors + 6 {
            let q = 4u64.pow(m);
            let d = rigidity_defect(&seq, q).unwrap();
            let s = system_rigidity_defect(&seq, q).unwrap();
            ensure(d == 0.0 && s == 0.0, || format!("J={factors}, q=4^{m}: defects {d}, {s}"))?;
            checked += 1;
        }
        if factors >= 2 {
            let below = rigidity_defect(&seq, 4u64.pow(factors - 1)).unwrap();
            ensure(below > 0.0, || format!("J={factors}: defect below 4^J vanished"))?;
        }
    }
    Ok(format!("{checked} (J, m) pairs exactly zero"))
}

fn horizon_guard() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_ergodic-reflect"))
        .args([
            "construct",
            "--spectrum",
            r#"{"name":"convolution_truncated","base":4,"factors":3}"#,
            "--k",
            "5",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    let code = status.status.code();
    ensure(code == Some(exit_code::HORIZON_EXHAUSTED), || format!("exit code {code:?}"))?;
    ensure(dir.path().join("partial_report.json").exists(), || {
        "no partial diagnostics written".into()
    })?;
    Ok("construct on convolution_truncated(4, 3) exits 3 with partial report".into())
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("1 lebesgue closed-form reproduction", lebesgue_reproduction),
        ("2 oscillation bound 2/k", oscillation_bound),
        ("3 fixed point and V-isometry", fixed_point_and_isometry),
        ("4 dense oracle equivalence", oracle_equivalence),
        ("5 gaussian lift", gaussian_lift),
        ("6 rigidity diagnostics", rigidity),
        ("7 horizon guard", horizon_guard),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Err(format!("panicked: {msg}"))
            });
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
