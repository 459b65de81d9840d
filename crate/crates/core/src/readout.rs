//! Dispersive readout model.
//!
//! The resonator responds to a drive at ω_d with a state-dependent coherent
//! amplitude. From those amplitudes follow the intra-cavity photon numbers,
//! the measurement-induced dephasing of the logical subspace, and a
//! Gaussian discrimination model for assignment errors.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{ensure, ensure_probability, invalid, Result};

/// Label index of the "computational" outcome of an erasure check.
pub const COMPUTATIONAL: usize = 0;
/// Label index of the "erasure" outcome of an erasure check.
pub const ERASURE: usize = 1;

/// How the integrated cavity signal is modelled over the measurement window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CavityResponse {
    /// The field sits at its steady-state amplitude for the whole window.
    SteadyState,
    /// The field rings up from vacuum when the drive turns on, and the
    /// signal is a boxcar integral over the window.
    #[default]
    RingUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutConfig {
    pub kappa: f64,
    pub omega_bare: f64,
    /// Dressed resonator frequencies ω₀, ω₁, ω₂ for qubit states |0⟩, |1⟩, |2⟩.
    pub dressed: [f64; 3],
    pub efficiency: f64,
    /// Intra-cavity photon number when driving on resonance.
    pub photon_number: f64,
    pub t_meas: f64,
    pub drive_frequency: f64,
    #[serde(default)]
    pub response: CavityResponse,
}

impl ReadoutConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.kappa > 0.0 && self.kappa.is_finite(),
            "kappa",
            "must be > 0",
        )?;
        ensure(
            self.efficiency > 0.0 && self.efficiency <= 1.0,
            "efficiency",
            format!("{} is not in (0, 1]", self.efficiency),
        )?;
        ensure(
            self.photon_number >= 0.0 && self.photon_number.is_finite(),
            "photon_number",
            "must be >= 0",
        )?;
        ensure(
            self.t_meas > 0.0 && self.t_meas.is_finite(),
            "t_meas",
            "must be > 0",
        )?;
        for w in self
            .dressed
            .iter()
            .chain([&self.omega_bare, &self.drive_frequency])
        {
            ensure(w.is_finite(), "dressed", "frequencies must be finite")?;
        }
        Ok(())
    }

    /// χ₀₁ = ω₀ − ω₁.
    pub fn chi_01(&self) -> f64 {
        self.dressed[0] - self.dressed[1]
    }

    /// χ₀₂ = ω₀ − ω₂.
    pub fn chi_02(&self) -> f64 {
        self.dressed[0] - self.dressed[2]
    }

    pub fn with_drive(self, drive_frequency: f64) -> Self {
        Self {
            drive_frequency,
            ..self
        }
    }

    pub fn with_photon_number(self, photon_number: f64) -> Self {
        Self {
            photon_number,
            ..self
        }
    }
}

fn check_state(state: usize) -> Result<()> {
    ensure(state < 3, "state", format!("{state} is not 0, 1 or 2"))
}

/// Photon number n_i = n·κ² / (κ² + 4(ω_i − ω_d)²) when the qubit is in `state`.
pub fn photon_number(cfg: &ReadoutConfig, state: usize) -> Result<f64> {
    check_state(state)?;
    let detuning = cfg.dressed[state] - cfg.drive_frequency;
    let k2 = cfg.kappa * cfg.kappa;
    Ok(cfg.photon_number * k2 / (k2 + 4.0 * detuning * detuning))
}

/// Measurement-induced dephasing rate Γ_m (s⁻¹) of the {|0⟩, |2⟩} subspace.
pub fn dephasing_rate(cfg: &ReadoutConfig) -> f64 {
    let n0 = photon_number(cfg, 0).expect("state 0");
    let n2 = photon_number(cfg, 2).expect("state 2");
    let chi = cfg.chi_02();
    let offset = cfg.omega_bare - cfg.drive_frequency;
    (n0 + n2) * cfg.kappa * chi * chi / (cfg.kappa * cfg.kappa + chi * chi + 4.0 * offset * offset)
}

/// ε_φ = 1 − exp(−Γ t).
pub fn dephasing_error(rate: f64, t_meas: f64) -> f64 {
    -(-rate * t_meas).exp_m1()
}

pub fn dephasing_error_per_check(cfg: &ReadoutConfig) -> f64 {
    dephasing_error(dephasing_rate(cfg), cfg.t_meas)
}

/// Steady-state field α_i with |α_i|² = n_i.
pub fn steady_amplitude(cfg: &ReadoutConfig, state: usize) -> Result<Complex64> {
    check_state(state)?;
    let half = 0.5 * cfg.kappa;
    let lambda = Complex64::new(half, cfg.dressed[state] - cfg.drive_frequency);
    Ok(cfg.photon_number.sqrt() * half / lambda)
}

/// Time-integrated field over the window, divided by `t_meas`. Equal to the
/// steady-state amplitude for [`CavityResponse::SteadyState`].
fn mean_amplitude(cfg: &ReadoutConfig, state: usize) -> Result<Complex64> {
    let alpha = steady_amplitude(cfg, state)?;
    Ok(match cfg.response {
        CavityResponse::SteadyState => alpha,
        CavityResponse::RingUp => {
            let t = cfg.t_meas;
            let lambda = Complex64::new(0.5 * cfg.kappa, cfg.dressed[state] - cfg.drive_frequency);
            let transient = (1.0 - (-lambda * t).exp()) / (lambda * t);
            alpha * (1.0 - transient)
        }
    })
}

/// Signal-to-noise ratio between the pointer states of `i` and `j`:
/// `2|ᾱ_i − ᾱ_j|·√(η κ t_meas / 2)`, with ᾱ the window-averaged field.
pub fn separation_snr(cfg: &ReadoutConfig, i: usize, j: usize) -> Result<f64> {
    let d = (mean_amplitude(cfg, i)? - mean_amplitude(cfg, j)?).norm();
    Ok(2.0 * d * (cfg.efficiency * cfg.kappa * cfg.t_meas / 2.0).sqrt())
}

/// Positions of the three pointer states on the discrimination axis, in
/// units of the noise standard deviation. The axis runs from |1⟩ (at 0)
/// towards |0⟩ (at SNR₀₁ > 0).
pub fn projected_means(cfg: &ReadoutConfig) -> Result<[f64; 3]> {
    let scale = 2.0 * (cfg.efficiency * cfg.kappa * cfg.t_meas / 2.0).sqrt();
    let beta = [
        mean_amplitude(cfg, 0)? * scale,
        mean_amplitude(cfg, 1)? * scale,
        mean_amplitude(cfg, 2)? * scale,
    ];
    let axis = beta[0] - beta[1];
    if axis.norm() == 0.0 {
        return Ok([0.0; 3]);
    }
    let unit = axis / axis.norm();
    Ok(beta.map(|b| ((b - beta[1]) * unit.conj()).re))
}

/// Assignment probabilities: `entries[true_state][label]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    entries: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn new(entries: Vec<Vec<f64>>) -> Result<Self> {
        ensure(
            entries.len() == 3,
            "confusion",
            "needs one row per state (3)",
        )?;
        let labels = entries[0].len();
        ensure(
            labels == 2 || labels == 3,
            "confusion",
            "needs 2 or 3 label columns",
        )?;
        for row in &entries {
            ensure(row.len() == labels, "confusion", "rows have unequal length")?;
            for &p in row {
                ensure_probability(p, "confusion")?;
            }
            let sum: f64 = row.iter().sum();
            ensure(
                (sum - 1.0).abs() <= 1e-12,
                "confusion",
                format!("row sums to {sum}"),
            )?;
        }
        Ok(Self { entries })
    }

    /// Perfect erasure check.
    pub fn ideal_erasure() -> Self {
        empirical_confusion(0.0, 0.0).expect("valid")
    }

    /// Perfect three-state readout.
    pub fn ideal_eol() -> Self {
        symmetric_eol_confusion(1.0).expect("valid")
    }

    pub fn num_labels(&self) -> usize {
        self.entries[0].len()
    }

    pub fn get(&self, state: usize, label: usize) -> f64 {
        self.entries[state][label]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// Draw an assigned label for `state`.
    pub fn sample<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        let row = &self.entries[state];
        let mut u = rng.random::<f64>();
        for (label, &p) in row.iter().enumerate() {
            if u < p {
                return label;
            }
            u -= p;
        }
        // u landed in the rounding gap at the top; take the last nonzero label
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    /// Mean of the diagonal (three-label matrices).
    pub fn mean_fidelity(&self) -> f64 {
        (0..self.num_labels())
            .map(|k| self.entries[k][k])
            .sum::<f64>()
            / self.num_labels() as f64
    }

    /// P(computational | |1⟩) for an erasure check.
    pub fn false_negative(&self) -> f64 {
        self.entries[1][COMPUTATIONAL]
    }

    /// P(erasure | computational), averaged over |0⟩ and |2⟩.
    pub fn false_positive(&self) -> f64 {
        0.5 * (self.entries[0][ERASURE] + self.entries[2][ERASURE])
    }
}

/// Erasure-check confusion built from measured misassignment rates.
pub fn empirical_confusion(fn_rate: f64, fp_rate: f64) -> Result<ConfusionMatrix> {
    ensure_probability(fn_rate, "fn_rate")?;
    ensure_probability(fp_rate, "fp_rate")?;
    let comp = vec![1.0 - fp_rate, fp_rate];
    ConfusionMatrix::new(vec![comp.clone(), vec![fn_rate, 1.0 - fn_rate], comp])
}

/// Three-state readout with fidelity `f` on the diagonal and the remaining
/// probability split evenly between the two wrong labels.
pub fn symmetric_eol_confusion(fidelity: f64) -> Result<ConfusionMatrix> {
    ensure_probability(fidelity, "fidelity")?;
    let off = 0.5 * (1.0 - fidelity);
    let rows = (0..3)
        .map(|i| {
            (0..3)
                .map(|j| if i == j { fidelity } else { off })
                .collect()
        })
        .collect();
    ConfusionMatrix::new(rows)
}

/// P(X > x) for a unit-variance Gaussian centred at `mean`.
fn upper_tail(x: f64, mean: f64) -> f64 {
    0.5 * erfc((x - mean) / std::f64::consts::SQRT_2)
}

/// Gaussian confusion matrix on the projected axis of [`projected_means`].
///
/// One threshold gives an erasure check: signals below it are labelled
/// erasure. Two ascending thresholds give a three-state readout where the
/// three intervals are assigned to the states in order of their projected
/// means.
pub fn confusion_from_model(cfg: &ReadoutConfig, thresholds: &[f64]) -> Result<ConfusionMatrix> {
    let means = projected_means(cfg)?;
    confusion_from_means(&means, thresholds)
}

pub fn confusion_from_means(means: &[f64; 3], thresholds: &[f64]) -> Result<ConfusionMatrix> {
    match thresholds {
        [t] => {
            let rows = means
                .iter()
                .map(|&m| {
                    let above = upper_tail(*t, m);
                    let mut row = vec![0.0; 2];
                    row[COMPUTATIONAL] = above;
                    row[ERASURE] = 1.0 - above;
                    row
                })
                .collect();
            ConfusionMatrix::new(rows)
        }
        [lo, hi] => {
            if !(lo <= hi) {
                return Err(invalid(
                    "thresholds",
                    format!("{lo} > {hi}: thresholds must ascend"),
                ));
            }
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
            let rows = means
                .iter()
                .map(|&m| {
                    let above_hi = upper_tail(*hi, m);
                    let below_lo = 1.0 - upper_tail(*lo, m);
                    let middle = 1.0 - above_hi - below_lo;
                    let mut row = vec![0.0; 3];
                    row[order[0]] = below_lo;
                    row[order[1]] = middle.max(0.0);
                    row[order[2]] = above_hi;
                    row
                })
                .collect();
            ConfusionMatrix::new(rows)
        }
        _ => Err(invalid("thresholds", "expected one or two thresholds")),
    }
}

/// Erasure-check threshold giving false-negative rate `fn_rate` for the model.
pub fn threshold_for_false_negative(fn_rate: f64) -> Result<f64> {
    ensure(
        fn_rate > 0.0 && fn_rate < 1.0,
        "fn_rate",
        "must be in (0, 1)",
    )?;
    // |1⟩ sits at the origin of the projected axis.
    let mut t = std::f64::consts::SQRT_2 * erfc_inv(2.0 * fn_rate);
    // statrs' inverse is good to ~1e-10; two Newton steps on the tail reach ulp level.
    for _ in 0..2 {
        let density = (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        t += (upper_tail(t, 0.0) - fn_rate) / density;
    }
    Ok(t)
}

/// Erasure-check confusion with the threshold halfway between |1⟩ and the
/// mean of the two computational pointer states.
pub fn midpoint_confusion(cfg: &ReadoutConfig) -> Result<ConfusionMatrix> {
    let means = projected_means(cfg)?;
    let threshold = 0.5 * (means[1] + 0.5 * (means[0] + means[2]));
    confusion_from_means(&means, &[threshold])
}

/// Erasure-check fidelity 1 − P(computational | 1) − P(erasure | computational)
/// at the midpoint threshold.
pub fn midpoint_fidelity(cfg: &ReadoutConfig) -> Result<f64> {
    let confusion = midpoint_confusion(cfg)?;
    Ok(1.0 - confusion.false_negative() - confusion.false_positive())
}

/// Per-check QND error inferred from normalized survival probabilities p̃₀,
/// p̃₂ after `m` checks: `1 − ((p̃₀ + p̃₂)/2)^(1/m)`.
pub fn qnd_error(p0_tilde: f64, p2_tilde: f64, m: usize) -> Result<f64> {
    ensure(m >= 1, "m", "at least one check is required")?;
    ensure_probability(p0_tilde, "p0_tilde")?;
    ensure_probability(p2_tilde, "p2_tilde")?;
    let mean = 0.5 * (p0_tilde + p2_tilde);
    Ok(-(mean.ln() / m as f64).exp_m1())
}

/// Measurement backaction: each check scrambles state `i` with probability
/// `coefficient · n_i(ω_d)`, capped at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackactionModel {
    pub coefficient: f64,
}

impl BackactionModel {
    pub fn new(coefficient: f64) -> Result<Self> {
        ensure(
            coefficient >= 0.0 && coefficient.is_finite(),
            "coefficient",
            "must be >= 0",
        )?;
        Ok(Self { coefficient })
    }

    pub fn kick_probability(&self, cfg: &ReadoutConfig, state: usize) -> Result<f64> {
        Ok((self.coefficient * photon_number(cfg, state)?).min(1.0))
    }

    pub fn kick_probabilities(&self, cfg: &ReadoutConfig) -> [f64; 3] {
        [0, 1, 2].map(|s| self.kick_probability(cfg, s).expect("valid state"))
    }
}
