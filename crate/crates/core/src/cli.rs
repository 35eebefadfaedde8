//! Command-line driver: `spectrum`, `construct`, `verify` and `simulate`.
//!
//! Each `cmd_*` function writes its artifacts under the configured output
//! directory and returns the in-memory result; [`run`] adds the console
//! output and maps outcomes to exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{OutputFormat, RunConfig, SpectrumSpec};
use crate::construction::{
    cross_inner, report_from_selection, select_cutoffs, CounterexampleReport, PeakRow,
    REFLECTED_RANGE_TOL,
};
use crate::error::{exit_code, Error, Result};
use crate::gaussian::{build_joint_covariance, sample_and_estimate, EstimateReport, MomentCheck};
use crate::oracle::{compare_with_engine, dense_oracle};
use crate::spectral::{
    rigidity_defect, system_rigidity_defect, validate_psd, CorrelationSequence, PsdReport,
};

/// Tolerance shared by the deterministic checks of `verify`.
pub const VERIFY_TOL: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "ergodic-reflect", version, about = "Reflected Krylov ladders and their double averages")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,

    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Tabulate correlations, Wiener averages, rigidity defects and a PSD check.
    Spectrum,
    /// Select cutoffs and evaluate the reflected averages.
    Construct,
    /// Run every invariant check on the configured case.
    Verify,
    /// Monte-Carlo estimate of the double average for the Gaussian lift.
    Simulate,
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Spectrum as inline JSON, e.g. '{"name":"arc","epsilon":0.5}'.
    #[arg(long, global = true, value_name = "JSON")]
    pub spectrum: Option<String>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub max_horizon: Option<usize>,
    /// Enable the dense oracle cross-check.
    #[arg(long, global = true)]
    pub oracle: bool,
    #[arg(long, global = true)]
    pub oracle_cap: Option<usize>,
    /// Simulation path length.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub truncation: Option<f64>,
}

impl Cli {
    /// Config file (or defaults) with command-line overrides applied.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let o = &self.overrides;
        if let Some(text) = &o.spectrum {
            config.spectrum = serde_json::from_str::<SpectrumSpec>(text)
                .map_err(|e| Error::Config(format!("--spectrum: {e}")))?;
        }
        if let Some(k) = o.k {
            config.k = k;
        }
        if let Some(h) = o.max_horizon {
            config.max_horizon = h;
        }
        if o.oracle {
            config.oracle.enabled = true;
        }
        if let Some(cap) = o.oracle_cap {
            config.oracle.cap = cap;
        }
        if let Some(n) = o.n {
            config.simulation.n = n;
        }
        if let Some(m) = o.samples {
            config.simulation.samples = m;
        }
        if let Some(seed) = o.seed {
            config.simulation.seed = seed;
        }
        if let Some(t) = o.truncation {
            config.simulation.truncation = Some(t);
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        if let Some(format) = self.format {
            config.format = format;
        }
        let config = config.normalized();
        config.validate()?;
        Ok(config)
    }
}

fn sequence(config: &RunConfig) -> Result<CorrelationSequence> {
    CorrelationSequence::new(config.spectrum.resolve()?)
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_csv<R: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSummary {
    pub family: String,
    pub correlations: Vec<(u64, f64)>,
    pub wiener: Vec<(u64, f64)>,
    /// `(q, rigidity_defect, system_rigidity_defect)`.
    pub rigidity: Vec<(u64, f64, f64)>,
    pub psd: PsdReport,
}

pub fn cmd_spectrum(config: &RunConfig) -> Result<SpectrumSummary> {
    let mut seq = sequence(config)?;
    let rep = &config.spectrum_report;
    let max_wiener = rep.wiener_n.iter().copied().max().unwrap_or(0);
    seq.fill(rep.lags.max(max_wiener))?;

    let correlations = (0..=rep.lags).map(|i| (i, seq.at(i))).collect();
    let mut wiener = Vec::with_capacity(rep.wiener_n.len());
    let mut points = rep.wiener_n.iter().copied().peekable();
    let mut sum = 0.0;
    for n in 1..=max_wiener {
        sum += seq.at(n - 1).powi(2);
        if points.peek() == Some(&n) {
            points.next();
            wiener.push((n, sum / n as f64));
        }
    }
    let rigidity = rep
        .q_list
        .iter()
        .map(|&q| Ok((q, rigidity_defect(&seq, q)?, system_rigidity_defect(&seq, q)?)))
        .collect::<Result<_>>()?;
    let psd = validate_psd(&seq, rep.psd_window)?;
    let summary = SpectrumSummary {
        family: seq.family().label(),
        correlations,
        wiener,
        rigidity,
        psd,
    };

    let dir = &config.output_dir;
    prepare_dir(dir)?;
    if config.format.csv() {
        write_csv(&dir.join("correlations.csv"), &["i", "r_i"], &summary.correlations)?;
        write_csv(&dir.join("wiener.csv"), &["n", "wiener_average"], &summary.wiener)?;
        write_csv(
            &dir.join("rigidity.csv"),
            &["q", "rigidity_defect", "system_rigidity_defect"],
            &summary.rigidity,
        )?;
    }
    if config.format.json() {
        write_json(&dir.join("spectrum.json"), &summary)?;
    }
    write_json(&dir.join("psd.json"), &summary.psd)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
struct PartialReport<'a> {
    family: String,
    status: &'static str,
    message: String,
    level: usize,
    horizon: usize,
    best_average: f64,
    target: f64,
    cutoffs: &'a [usize],
}

/// Cutoff search and reflected series. On horizon exhaustion a partial
/// report is written before the error is returned.
pub fn cmd_construct(config: &RunConfig) -> Result<CounterexampleReport> {
    let seq = sequence(config)?;
    let family = seq.family().label();
    let dir = &config.output_dir;
    prepare_dir(dir)?;
    let selection = match select_cutoffs(seq, config.k, config.max_horizon, config.time_sequence.clone()) {
        Ok(s) => s,
        Err(err) => {
            if let Error::HorizonExhausted {
                level,
                horizon,
                best_average,
                target,
                cutoffs,
            } = &err
            {
                let partial = PartialReport {
                    family,
                    status: "horizon_exhausted",
                    message: err.to_string(),
                    level: *level,
                    horizon: *horizon,
                    best_average: *best_average,
                    target: *target,
                    cutoffs,
                };
                write_json(&dir.join("partial_report.json"), &partial)?;
            }
            return Err(err);
        }
    };
    let oracle_cap = config.oracle.enabled.then_some(config.oracle.cap);
    let report = report_from_selection(family, selection, oracle_cap)?;
    if report.diagnostics.clipped > 0 {
        let worst = report.a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if worst > 1.0 + REFLECTED_RANGE_TOL {
            return Err(Error::Numerical(format!(
                "reflected inner product {worst} left [-1, 1]"
            )));
        }
    }

    if config.format.json() {
        write_json(&dir.join("report.json"), &report)?;
    }
    if config.format.csv() {
        write_csv(
            &dir.join("series_a.csv"),
            &["i", "a_i"],
            report.a.iter().enumerate(),
        )?;
        write_csv(
            &dir.join("series_A.csv"),
            &["n", "A_n"],
            report.running_average.iter().enumerate().map(|(i, v)| (i + 1, v)),
        )?;
        write_csv(
            &dir.join("peaks.csv"),
            &["k", "n_k", "A_n_k", "predicted_sign", "deviation", "bound", "within_bound"],
            report.peaks.iter().map(|p| {
                (
                    p.level,
                    p.cutoff,
                    p.average,
                    p.predicted_sign,
                    p.deviation,
                    p.error_bound,
                    p.within_bound,
                )
            }),
        )?;
    }
    Ok(report)
}

pub fn format_peak_table(peaks: &[PeakRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>3} {:>8} {:>20} {:>5} {:>12} {:>10} {:>4}",
        "k", "n_k", "A(n_k)", "sign", "|A - sign|", "2/k", "ok"
    );
    for p in peaks {
        let _ = writeln!(
            out,
            "{:>3} {:>8} {:>20.15} {:>+5} {:>12.3e} {:>10.6} {:>4}",
            p.level,
            p.cutoff,
            p.average,
            p.predicted_sign,
            p.deviation,
            p.error_bound,
            if p.level == 1 || p.within_bound { "yes" } else { "NO" }
        );
    }
    out
}

/// Builds the ladder, covariance and Monte-Carlo estimate for the configured path.
pub fn cmd_simulate(config: &RunConfig) -> Result<EstimateReport> {
    let seq = sequence(config)?;
    let sim = config.simulation.to_config();
    sim.validate()?;
    let selection = select_cutoffs(seq, config.k, config.max_horizon, config.time_sequence.clone())?;
    let top = selection.cutoffs.values.last().copied().unwrap_or(0);
    if sim.n > top {
        return Err(Error::InvalidParameter(format!(
            "path length {} exceeds n_K = {top}; raise k",
            sim.n
        )));
    }
    let cov = build_joint_covariance(&selection.ladder, sim.n)?;
    let report = sample_and_estimate(&cov, &sim)?;

    let dir = &config.output_dir;
    prepare_dir(dir)?;
    write_json(&dir.join("estimate.json"), &report)?;
    if config.format.csv() {
        write_csv(
            &dir.join("moments.csv"),
            &["statistic", "expected", "estimate", "standard_error", "z_score"],
            moment_rows(&report).into_iter().map(|(name, c)| {
                (name, c.expected, c.estimate, c.standard_error, c.z_score)
            }),
        )?;
    }
    Ok(report)
}

fn moment_rows(report: &EstimateReport) -> Vec<(String, MomentCheck)> {
    let mut rows = Vec::new();
    rows.push((
        "double_average".to_string(),
        MomentCheck {
            expected: report.exact,
            estimate: report.estimate,
            standard_error: report.standard_error,
            z_score: report.z_score,
        },
    ));
    if let Some(c) = report.lag1_x {
        rows.push(("lag1_x".into(), c));
    }
    if let Some(c) = report.lag1_y {
        rows.push(("lag1_y".into(), c));
    }
    for (i, c) in report.cross.iter().enumerate() {
        rows.push((format!("cross_x{i}_y0"), *c));
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn bound(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
            detail: detail.into(),
        }
    }

    fn failed(name: &str, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: false,
            value: f64::NAN,
            tolerance: 0.0,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub family: String,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn max_over<I: IntoIterator<Item = Result<f64>>>(values: I) -> Result<f64> {
    values
        .into_iter()
        .try_fold(0.0f64, |acc, v| Ok(acc.max(v?)))
}

/// Runs every invariant suite on the configured case. Faults inside a suite
/// become failed checks rather than errors.
pub fn cmd_verify(config: &RunConfig) -> Result<VerifyReport> {
    let seq = sequence(config)?;
    let family = seq.family().label();
    let mut checks = Vec::new();

    let psd = validate_psd(&seq, config.spectrum_report.psd_window)?;
    checks.push(CheckResult {
        name: "spectrum.psd".into(),
        passed: psd.ok,
        value: psd.min_eigenvalue_estimate,
        tolerance: 0.0,
        detail: match psd.failing_minor {
            Some(m) => format!("window {} fails PSD at leading minor {m}", psd.window),
            None => format!("window {} is PSD (jitter {:.1e})", psd.window, psd.jitter),
        },
    });
    let lags = config.spectrum_report.lags;
    let excess = (0..=lags).map(|i| seq.at(i).abs() - 1.0).fold(0.0f64, f64::max);
    checks.push(CheckResult::bound(
        "spectrum.range",
        excess,
        1e-12,
        format!("max |r(i)| - 1 over lags 0..={lags}"),
    ));

    match verify_construction(config, seq) {
        Ok(more) => checks.extend(more),
        Err(err) => checks.push(CheckResult::failed(
            match err {
                Error::NonPsd { .. } => "construction.psd",
                Error::HorizonExhausted { .. } => "construction.horizon",
                _ => "construction",
            },
            err.to_string(),
        )),
    }

    let report = VerifyReport { family, checks };
    prepare_dir(&config.output_dir)?;
    write_json(&config.output_dir.join("verify.json"), &report)?;
    Ok(report)
}

fn verify_construction(config: &RunConfig, seq: CorrelationSequence) -> Result<Vec<CheckResult>> {
    let family = seq.family().label();
    let mut checks = Vec::new();
    let selection = select_cutoffs(seq, config.k, config.max_horizon, config.time_sequence.clone())?;
    let cutoffs = selection.cutoffs.values.clone();
    let top = *cutoffs.last().unwrap();
    let report = report_from_selection(family, selection.clone(), None)?;
    let ladder = &selection.ladder;

    let violations: Vec<String> = report
        .peaks
        .iter()
        .filter(|p| p.level >= 2 && !p.within_bound)
        .map(|p| format!("k={} deviation {:.3e}", p.level, p.deviation))
        .collect();
    let worst = report
        .peaks
        .iter()
        .filter(|p| p.level >= 2)
        .map(|p| p.deviation * p.level as f64 / 2.0)
        .fold(0.0f64, f64::max);
    checks.push(CheckResult {
        name: "construction.peak_bound".into(),
        passed: violations.is_empty(),
        value: worst,
        tolerance: 1.0,
        detail: if violations.is_empty() {
            format!("|A(n_k) - (-1)^(k-1)| < 2/k for 2 <= k <= {}", cutoffs.len())
        } else {
            violations.join("; ")
        },
    });
    let range = report.a.iter().map(|v| v.abs() - 1.0).fold(0.0f64, f64::max);
    checks.push(CheckResult::bound(
        "construction.reflected_range",
        range,
        REFLECTED_RANGE_TOL,
        "max |a(i)| - 1",
    ));
    checks.push(CheckResult::bound(
        "construction.origin",
        (report.a[0] - 1.0).abs(),
        VERIFY_TOL,
        "a(0) = 1",
    ));
    let fixed = max_over((0..top).map(|i| Ok((cross_inner(ladder, i, 0)? - ladder.gram(i, 0)).abs())))?;
    checks.push(CheckResult::bound(
        "construction.fixed_point",
        fixed,
        VERIFY_TOL,
        format!("max_(i<{top}) |<U^i xi, V^0 xi> - r(t(i))|"),
    ));

    let mut completeness = 0.0f64;
    let mut monotone = 0.0f64;
    for i in 0..top {
        let profile = ladder.block_profile(i)?;
        completeness = completeness.max((profile.q.iter().sum::<f64>() - 1.0).abs());
        for w in profile.p.windows(2) {
            monotone = monotone.max(w[0] - w[1]);
        }
    }
    checks.push(CheckResult::bound(
        "krylov.completeness",
        completeness,
        VERIFY_TOL,
        format!("max_(i<{top}) |sum_k q_k(i) - 1|"),
    ));
    checks.push(CheckResult::bound(
        "krylov.nested",
        monotone,
        VERIFY_TOL,
        "max decrease of p_k(i) in k",
    ));

    let cap = config.oracle.cap;
    let prefix: Vec<usize> = cutoffs.iter().copied().take_while(|&n| n <= cap).collect();
    if prefix.len() < 2 {
        checks.push(CheckResult::failed(
            "oracle.window",
            format!("fewer than two cutoffs fit under the oracle cap {cap} (cutoffs {cutoffs:?})"),
        ));
    } else {
        let out = dense_oracle(ladder.seq(), ladder.times(), &prefix, cap, ladder.jitter_used())?;
        let deltas = compare_with_engine(ladder, &out)?;
        let n = *prefix.last().unwrap();
        let c = &out.checks;
        for (name, value) in [
            ("oracle.a_delta", deltas.max_a_delta),
            ("oracle.cross_delta", deltas.max_cross_delta),
            ("oracle.involution", c.involution_error),
            ("oracle.symmetry", c.symmetry_error),
            ("oracle.commutator", c.commutator_error),
            ("oracle.isometry", c.isometry_error),
            ("oracle.completeness", c.completeness_error),
            ("oracle.fixed_point", c.fixed_point_error),
        ] {
            checks.push(CheckResult::bound(name, value, VERIFY_TOL, format!("dense window {n}")));
        }
    }

    let n = config.simulation.n.min(top);
    let cov = build_joint_covariance(ladder, n)?;
    let sigma = cov.matrix();
    let min_eig = sigma.clone().symmetric_eigen().eigenvalues.min();
    checks.push(CheckResult::bound(
        "gaussian.psd",
        -min_eig,
        VERIFY_TOL,
        format!("minus least eigenvalue of the {0}x{0} covariance", 2 * n),
    ));
    let mut structure = 0.0f64;
    for i in 0..n {
        structure = structure
            .max((cov.xx(i, i) - 1.0).abs())
            .max((cov.xy(i, 0) - ladder.gram(i, 0)).abs())
            .max((cov.xy(i, i) - report.a[i]).abs());
        for j in 0..n {
            structure = structure.max((cov.xx(i, j) - cov.yy(i, j)).abs());
        }
    }
    checks.push(CheckResult::bound(
        "gaussian.structure",
        structure,
        VERIFY_TOL,
        "unit diagonal, equal marginal blocks, cross column and diagonal",
    ));
    let sim = crate::gaussian::SimulationConfig {
        n,
        ..config.simulation.to_config()
    };
    let estimate = sample_and_estimate(&cov, &sim)?;
    checks.push(CheckResult::bound(
        "gaussian.estimate",
        estimate.z_score.abs(),
        crate::gaussian::Z_BAND,
        format!(
            "A({n}) = {:.6}, estimate {:.6} +- {:.2e}",
            estimate.exact, estimate.estimate, estimate.standard_error
        ),
    ));
    let worst_moment = moment_rows(&estimate)
        .iter()
        .skip(1)
        .map(|(_, c)| c.z_score.abs())
        .fold(0.0f64, f64::max);
    checks.push(CheckResult::bound(
        "gaussian.moments",
        worst_moment,
        crate::gaussian::Z_BAND,
        "max |z| over lag-1 and cross moment checks",
    ));
    Ok(checks)
}

/// Execute the parsed command line and return the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let config = cli.resolve_config()?;
    match cli.command {
        Command::Spectrum => {
            let summary = cmd_spectrum(&config)?;
            println!("family: {}", summary.family);
            for (q, d, s) in &summary.rigidity {
                println!("q = {q:>8}  defect = {d:.6e}  system defect = {s:.6e}");
            }
            let psd = &summary.psd;
            match psd.failing_minor {
                None => println!("psd: ok on window {} (jitter {:.1e})", psd.window, psd.jitter),
                Some(m) => println!("psd: FAILED on window {} at minor {m}", psd.window),
            }
            Ok(exit_code::SUCCESS)
        }
        Command::Construct => {
            let report = cmd_construct(&config)?;
            println!("family: {}", report.family);
            print!("{}", format_peak_table(&report.peaks));
            if let Some(o) = &report.diagnostics.oracle {
                println!(
                    "oracle (window {}): max |delta a| = {:.3e}, max |delta cross| = {:.3e}",
                    o.window, o.max_a_delta, o.max_cross_delta
                );
            }
            Ok(exit_code::SUCCESS)
        }
        Command::Verify => {
            let report = cmd_verify(&config)?;
            for c in &report.checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                println!("{tag} {:<30} {:>12.3e} (tol {:.1e})  {}", c.name, c.value, c.tolerance, c.detail);
            }
            if report.passed() {
                Ok(exit_code::SUCCESS)
            } else {
                let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
                eprintln!("verification failed: {}", names.join(", "));
                Ok(exit_code::VALIDATION)
            }
        }
        Command::Simulate => {
            let report = cmd_simulate(&config)?;
            println!(
                "A({}) exact = {:.8}  estimate = {:.8}  se = {:.3e}  z = {:+.3}",
                report.n, report.exact, report.estimate, report.standard_error, report.z_score
            );
            if let Some(t) = &report.truncated {
                println!("truncated at M = {}: estimate = {:.8}  bias = {:.3e}", t.level, t.estimate, t.bias);
            }
            if report.passes() {
                Ok(exit_code::SUCCESS)
            } else {
                eprintln!("estimate outside the {}-SE band", crate::gaussian::Z_BAND);
                Ok(exit_code::VALIDATION)
            }
        }
    }
}
