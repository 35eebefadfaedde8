//! Run configuration: one JSON document, normalized into a canonical form.
//!
//! ```json
//! {
//!   "spectrum": { "name": "arc", "epsilon": 0.5 },
//!   "k": 4,
//!   "max_horizon": 10000,
//!   "oracle": { "enabled": true, "cap": 512 },
//!   "simulation": { "n": 10, "samples": 200000, "seed": 1, "truncation": 8.0 },
//!   "output_dir": "out",
//!   "format": "both"
//! }
//! ```
//!
//! Every key is optional. Relative density-table paths are resolved against
//! the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::SimulationConfig;
use crate::krylov::TimeSequence;
use crate::oracle::DEFAULT_ORACLE_CAP;
use crate::spectral::{QuadratureDensity, SpectrumFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectrumSpec {
    #[default]
    Lebesgue,
    Arc {
        epsilon: f64,
    },
    ConvolutionTruncated {
        base: u32,
        factors: u32,
    },
    Mixture {
        components: Vec<MixtureComponent>,
    },
    /// Two-column CSV `(theta, density)` with a header row.
    QuadratureDensity {
        path: PathBuf,
        nodes: usize,
    },
    Table {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub spectrum: SpectrumSpec,
}

impl SpectrumSpec {
    pub fn resolve(&self) -> Result<SpectrumFamily> {
        let family = match self {
            SpectrumSpec::Lebesgue => SpectrumFamily::Lebesgue,
            SpectrumSpec::Arc { epsilon } => SpectrumFamily::Arc { epsilon: *epsilon },
            SpectrumSpec::ConvolutionTruncated { base, factors } => {
                SpectrumFamily::ConvolutionTruncated {
                    base: *base,
                    factors: *factors,
                }
            }
            SpectrumSpec::Mixture { components } => SpectrumFamily::Mixture(
                components
                    .iter()
                    .map(|c| Ok((c.weight, c.spectrum.resolve()?)))
                    .collect::<Result<_>>()?,
            ),
            SpectrumSpec::QuadratureDensity { path, nodes } => {
                SpectrumFamily::QuadratureDensity(QuadratureDensity::new(
                    read_density_table(path)?,
                    *nodes,
                )?)
            }
            SpectrumSpec::Table { values } => SpectrumFamily::Table(values.clone()),
        };
        family.validate()?;
        Ok(family)
    }

    fn rebase(&mut self, base: &Path) {
        match self {
            SpectrumSpec::QuadratureDensity { path, .. } if path.is_relative() => {
                *path = base.join(&*path);
            }
            SpectrumSpec::Mixture { components } => {
                components.iter_mut().for_each(|c| c.spectrum.rebase(base));
            }
            _ => {}
        }
    }
}

#[derive(Debug, Deserialize)]
struct DensityRow {
    theta: f64,
    density: f64,
}

fn read_density_table(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| {
        Error::InvalidDensity(format!("cannot read {}: {e}", path.display()))
    })?;
    reader
        .deserialize::<DensityRow>()
        .map(|row| row.map(|r| (r.theta, r.density)).map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub enabled: bool,
    pub cap: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            cap: DEFAULT_ORACLE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub truncation: Option<f64>,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            n: 10,
            samples: 200_000,
            seed: 20_251_016,
            truncation: None,
        }
    }
}

impl SimulationSection {
    pub fn to_config(&self) -> SimulationConfig {
        SimulationConfig {
            n: self.n,
            samples: self.samples,
            seed: self.seed,
            truncation: self.truncation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumReportConfig {
    /// Correlations are tabulated for lags `0..=lags`.
    pub lags: u64,
    /// Points of the Wiener-average curve.
    pub wiener_n: Vec<u64>,
    /// Lags at which rigidity defects are reported.
    pub q_list: Vec<u64>,
    pub psd_window: usize,
}

impl Default for SpectrumReportConfig {
    fn default() -> Self {
        Self {
            lags: 64,
            wiener_n: (0..=12).map(|e| 1u64 << e).collect(),
            q_list: (0..=10).map(|e| 1u64 << e).collect(),
            psd_window: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub spectrum: SpectrumSpec,
    /// Ladder depth `K`.
    pub k: usize,
    pub max_horizon: usize,
    pub time_sequence: TimeSequence,
    pub oracle: OracleConfig,
    pub simulation: SimulationSection,
    pub spectrum_report: SpectrumReportConfig,
    pub output_dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            spectrum: SpectrumSpec::default(),
            k: 4,
            max_horizon: 10_000,
            time_sequence: TimeSequence::default(),
            oracle: OracleConfig::default(),
            simulation: SimulationSection::default(),
            spectrum_report: SpectrumReportConfig::default(),
            output_dir: PathBuf::from("out"),
            format: OutputFormat::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<RunConfig>(text)
            .map(RunConfig::normalized)
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Read a config file; relative table paths become relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            config.spectrum.rebase(dir);
        }
        Ok(config)
    }

    /// Canonical form: sorted, deduplicated lag lists.
    pub fn normalized(mut self) -> Self {
        for list in [
            &mut self.spectrum_report.wiener_n,
            &mut self.spectrum_report.q_list,
        ] {
            list.sort_unstable();
            list.dedup();
        }
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.max_horizon == 0 {
            return Err(Error::InvalidParameter("max_horizon must be at least 1".into()));
        }
        self.time_sequence.validate()?;
        if self.spectrum_report.psd_window == 0 {
            return Err(Error::InvalidParameter("psd_window must be at least 1".into()));
        }
        if self.spectrum_report.wiener_n.contains(&0) {
            return Err(Error::InvalidParameter("wiener_n entries must be positive".into()));
        }
        if self.spectrum_report.q_list.contains(&0) {
            return Err(Error::InvalidParameter("q_list entries must be positive".into()));
        }
        self.simulation.to_config().validate()
    }
}
