//! Run configuration: a TOML (or JSON) document whose sections mirror the
//! core types. Every frequency or rate carries an explicit unit tag.

use std::path::{Path, PathBuf};

use fluxlab_core::fit::RateParameterization;
use fluxlab_core::readout::{
    confusion_from_model, empirical_confusion, symmetric_eol_confusion,
    threshold_for_false_negative,
};
use fluxlab_core::{
    CavityResponse, CircuitParams, ConfusionMatrix, Frequency, RampSpec, RateMatrix, ReadoutConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{core_error, CliError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    /// Not part of the config hash or of the embedded config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circuit: Option<CircuitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<RatesSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<ReadoutSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qnd: Option<QndSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dephasing: Option<DephasingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramsey: Option<RamseySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chevron: Option<ChevronSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flux_sweep: Option<FluxSweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecaySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lz: Option<LzSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitSection {
    pub e_c: Frequency,
    pub e_j: Frequency,
    pub e_l: Frequency,
    /// Φ_ext / Φ₀.
    #[serde(default)]
    pub phi_ext: f64,
    #[serde(default = "default_basis_size")]
    pub basis_size: usize,
    /// Levels reported by `spectrum` and kept for driven simulations.
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_basis_size() -> usize {
    fluxlab_core::spectrum::DEFAULT_BASIS_SIZE
}

fn default_levels() -> usize {
    fluxlab_core::driven::DEFAULT_DRIVE_LEVELS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub g10: Frequency,
    pub g12: Frequency,
    pub g20: Frequency,
    pub g21: Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutSection {
    pub kappa: Frequency,
    pub omega_bare: Frequency,
    pub drive_frequency: Frequency,
    /// Dressed ω₀, ω₁, ω₂; alternatively give `omega_1`, `chi_01`, `chi_02`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dressed: Option<[Frequency; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_1: Option<Frequency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi_01: Option<Frequency>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi_02: Option<Frequency>,
    pub efficiency: f64,
    pub photon_number: f64,
    /// Seconds.
    pub t_meas: f64,
    #[serde(default)]
    pub response: CavityResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionSource {
    /// Measured FN/FP rates used directly.
    #[default]
    Empirical,
    /// Gaussian readout model with the threshold placed to give `false_negative`.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionSection {
    pub false_negative: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub false_positive: Option<f64>,
    pub eol_fidelity: f64,
    /// Full 3×3 EOL matrix overriding `eol_fidelity`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eol_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub source: ConfusionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub init_state: usize,
    /// Idle time between checks (s).
    pub t_ec: f64,
    /// Checks per shot for the raster and the summary.
    pub m: usize,
    pub shots: usize,
    #[serde(default = "one")]
    pub flag_policy: usize,
    pub qnd_error_per_check: f64,
    /// Explicit check counts of the survival curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_grid: Option<Vec<usize>>,
    /// Otherwise: `points` check counts spread over `[0, window]` (s).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tec_grid: Option<Vec<f64>>,
    /// Shots written to the flag raster CSV.
    #[serde(default)]
    pub raster_shots: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyAxis {
    pub start: Frequency,
    pub stop: Frequency,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QndSection {
    pub checks: usize,
    /// Seconds.
    pub total_time: f64,
    /// Calibrate the backaction so the operating point yields this ε_QND ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_error: Option<f64>,
    /// ... or give the coefficient c directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient: Option<f64>,
    pub shots: usize,
    pub photon_grid: Vec<f64>,
    pub drive: FrequencyAxis,
    /// Also evaluate exactly at the three dressed frequencies.
    #[serde(default = "yes")]
    pub include_dressed: bool,
    #[serde(default = "default_qnd_states")]
    pub initial_states: Vec<usize>,
}

fn yes() -> bool {
    true
}

fn default_qnd_states() -> Vec<usize> {
    vec![0, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DephasingSection {
    pub photon_grid: Vec<f64>,
    pub drive: FrequencyAxis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RamseyMode {
    #[default]
    Analytic,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RamseySection {
    /// Seconds; `inf` disables relaxation.
    pub t1_logical: f64,
    pub gamma_phi_residual: Frequency,
    pub detuning: Frequency,
    #[serde(default)]
    pub readout_during_delay: bool,
    /// Largest delay (s); delays are evenly spaced from 0.
    pub delay_max: f64,
    pub points: usize,
    #[serde(default)]
    pub mode: RamseyMode,
    #[serde(default = "default_ramsey_shots")]
    pub shots: usize,
}

fn default_ramsey_shots() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChevronSection {
    /// Pulse duration (s).
    pub duration: f64,
    pub amplitude: FrequencyAxis,
    /// Carrier offset from ω₀₂/2.
    pub detuning: FrequencyAxis,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxSweepSection {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    pub init_state: usize,
    /// Seconds.
    pub t_max: f64,
    pub points: usize,
    /// Gillespie trajectories compared with the exact populations; 0 skips them.
    #[serde(default)]
    pub trajectories: usize,
    /// Trajectories written out jump by jump.
    #[serde(default)]
    pub export_trajectories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LzSection {
    pub gap: Frequency,
    pub span: Frequency,
    /// Seconds.
    pub ramp_duration: f64,
    #[serde(default = "unit_factor")]
    pub sweep_factor: f64,
}

fn unit_factor() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// CSV dataset, relative to the config file.
    pub data: PathBuf,
    #[serde(default)]
    pub parameterization: RateParameterization,
    #[serde(default = "default_starts")]
    pub starts: usize,
    /// Starting rates for `fit-rates`; falls back to `[rates]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<RatesSection>,
}

fn default_starts() -> usize {
    5
}

impl FitSection {
    /// Defaults for a dataset named only on the command line.
    pub fn for_data(data: PathBuf) -> Self {
        Self {
            data,
            parameterization: RateParameterization::default(),
            starts: default_starts(),
            initial: None,
        }
    }
}

/// Parses a config document; the format follows the file extension.
pub fn parse_config(text: &str, path: &Path) -> Result<RunConfig, CliError> {
    let is_json = path.extension().is_some_and(|e| e == "json");
    let located = |e: String, field: String| {
        let at = if field.is_empty() || field == "." {
            String::new()
        } else {
            format!(" at `{field}`")
        };
        CliError::Config(format!("{}{at}: {e}", path.display()))
    };
    if is_json {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| located(e.to_string(), String::new()))?;
        // A run summary embeds its resolved config under `config`.
        let value = match value {
            serde_json::Value::Object(mut map)
                if map.contains_key("config") && map.contains_key("subcommand") =>
            {
                map.remove("config").expect("checked")
            }
            other => other,
        };
        serde_path_to_error::deserialize(value)
            .map_err(|e| located(e.inner().to_string(), e.path().to_string()))
    } else {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let message = e.inner().message().to_string();
            located(message, e.path().to_string())
        })
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("--config {}: {e}", path.display())))?;
    parse_config(&text, path)
}

/// Fetches a section required by `command`.
pub fn section<'a, T>(value: &'a Option<T>, name: &str, command: &str) -> Result<&'a T, CliError> {
    value.as_ref().ok_or_else(|| {
        CliError::Config(format!("missing section [{name}] required by `{command}`"))
    })
}

pub fn field<T: Clone>(value: &Option<T>, path: &str, command: &str) -> Result<T, CliError> {
    value
        .clone()
        .ok_or_else(|| CliError::Config(format!("missing key `{path}` required by `{command}`")))
}

fn ensure_field(ok: bool, path: &str, reason: impl std::fmt::Display) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("`{path}`: {reason}")))
    }
}

impl FrequencyAxis {
    /// Evenly spaced grid in rad/s.
    pub fn grid(&self, path: &str) -> Result<Vec<f64>, CliError> {
        ensure_field(self.points >= 1, &format!("{path}.points"), "must be >= 1")?;
        Ok(linspace(
            self.start.angular(),
            self.stop.angular(),
            self.points,
        ))
    }
}

pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![start];
    }
    (0..points)
        .map(|k| start + (stop - start) * k as f64 / (points - 1) as f64)
        .collect()
}

impl CircuitSection {
    pub fn params(&self) -> Result<CircuitParams, CliError> {
        CircuitParams::new(
            self.e_c.angular(),
            self.e_j.angular(),
            self.e_l.angular(),
            self.phi_ext,
        )
        .map(|p| p.with_basis_size(self.basis_size))
        .and_then(|p| p.validate().map(|_| p))
        .map_err(|e| core_error("circuit", e))
    }
}

impl RatesSection {
    pub fn matrix(&self, path: &str) -> Result<RateMatrix, CliError> {
        RateMatrix::new(
            self.g10.angular(),
            self.g12.angular(),
            self.g20.angular(),
            self.g21.angular(),
        )
        .map_err(|e| core_error(path, e))
    }
}

impl ReadoutSection {
    pub fn model(&self) -> Result<ReadoutConfig, CliError> {
        let dressed = match (&self.dressed, &self.omega_1, &self.chi_01, &self.chi_02) {
            (Some(d), None, None, None) => [d[0].angular(), d[1].angular(), d[2].angular()],
            (None, Some(w1), Some(c01), Some(c02)) => {
                let omega_0 = w1.angular() + c01.angular();
                [omega_0, w1.angular(), omega_0 - c02.angular()]
            }
            _ => {
                return Err(CliError::Config(
                    "`readout`: give either `dressed` or all of `omega_1`, `chi_01`, `chi_02`"
                        .into(),
                ))
            }
        };
        let cfg = ReadoutConfig {
            kappa: self.kappa.angular(),
            omega_bare: self.omega_bare.angular(),
            dressed,
            efficiency: self.efficiency,
            photon_number: self.photon_number,
            t_meas: self.t_meas,
            drive_frequency: self.drive_frequency.angular(),
            response: self.response,
        };
        cfg.validate().map_err(|e| core_error("readout", e))?;
        Ok(cfg)
    }
}

impl ConfusionSection {
    pub fn erasure(&self, readout: Option<&ReadoutConfig>) -> Result<ConfusionMatrix, CliError> {
        match self.source {
            ConfusionSource::Empirical => {
                let fp = self.false_positive.ok_or_else(|| {
                    CliError::Config(
                        "missing key `confusion.false_positive` (source = empirical)".into(),
                    )
                })?;
                empirical_confusion(self.false_negative, fp).map_err(|e| core_error("confusion", e))
            }
            ConfusionSource::Model => {
                ensure_field(
                    self.false_positive.is_none(),
                    "confusion.false_positive",
                    "is determined by the readout model when source = model",
                )?;
                let cfg = readout.ok_or_else(|| {
                    CliError::Config(
                        "missing section [readout] required by `confusion.source = model`".into(),
                    )
                })?;
                let threshold = threshold_for_false_negative(self.false_negative)
                    .map_err(|e| core_error("confusion", e))?;
                confusion_from_model(cfg, &[threshold]).map_err(|e| core_error("confusion", e))
            }
        }
    }

    pub fn eol(&self) -> Result<ConfusionMatrix, CliError> {
        match &self.eol_matrix {
            Some(m) => {
                ConfusionMatrix::new(m.clone()).map_err(|e| core_error("confusion.eol_matrix", e))
            }
            None => symmetric_eol_confusion(self.eol_fidelity)
                .map_err(|e| core_error("confusion.eol_fidelity", e)),
        }
    }
}

impl LzSection {
    pub fn ramp(&self) -> Result<RampSpec, CliError> {
        RampSpec::new(self.gap.angular(), self.span.angular(), self.ramp_duration)
            .and_then(|r| r.with_sweep_factor(self.sweep_factor))
            .map_err(|e| core_error("lz", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let text = "master_seed = 1\n[lz]\ngap = \"48e6 two_pi_hz\"\nspan = \"8.6e6 two_pi_hz\"\nramp_duration = 1e-8\nextra = 3\n";
        let err = parse_config(text, Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("lz"), "{err}");
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn unit_tag_errors_name_the_field() {
        let text = "master_seed = 1\n[lz]\ngap = \"48e6hz\"\nspan = \"8.6e6 two_pi_hz\"\nramp_duration = 1e-8\n";
        let err = parse_config(text, Path::new("x.toml")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("lz.gap"), "{err}");
    }

    #[test]
    fn untagged_frequencies_are_rejected() {
        let text = "master_seed = 1\n[lz]\ngap = 3.0e8\nspan = \"8.6e6 two_pi_hz\"\nramp_duration = 1e-8\n";
        let err = parse_config(text, Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("lz.gap"), "{err}");
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(1.0, 2.0, 3), vec![1.0, 1.5, 2.0]);
        assert_eq!(linspace(4.0, 9.0, 1), vec![4.0]);
    }
}
