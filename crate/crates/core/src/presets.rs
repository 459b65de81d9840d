//! Device and protocol values reported for the zero-flux fluxonium erasure
//! qubit. All frequencies in rad/s, rates in s⁻¹, times in s.

use crate::dynamics::{RampSpec, RateMatrix};
use crate::protocol::{ErasureExperimentConfig, QndSequence};
use crate::readout::{
    empirical_confusion, symmetric_eol_confusion, BackactionModel, CavityResponse, ReadoutConfig,
};
use crate::spectrum::CircuitParams;
use crate::units::two_pi;

pub const E_C: f64 = 1.72e9;
pub const E_J: f64 = 7.07e9;
pub const E_L: f64 = 0.32e9;

/// Reported ω₀₁ and ω₁₂ at zero flux (Hz, multiply by 2π).
pub const OMEGA_01_HZ: f64 = 5.77e9;
pub const OMEGA_12_HZ: f64 = 48.0e6;

pub const KAPPA_HZ: f64 = 1.02e6;
pub const CHI_01_HZ: f64 = -4.096e6;
pub const CHI_02_HZ: f64 = -147e3;
pub const READOUT_DRIVE_HZ: f64 = 6.993e9;
/// Offset of the erasure-check drive below the |1⟩-dressed resonator.
pub const DRIVE_BELOW_OMEGA_1_HZ: f64 = 0.1e6;
/// Bare resonator frequency. Only ever a fit output; this value places the
/// measurement-induced dephasing at the operating point at ≈45 s⁻¹.
pub const BARE_RESONATOR_HZ: f64 = 6.985_343e9;
pub const EFFICIENCY: f64 = 0.298;
pub const PHOTON_NUMBER: f64 = 2.3;
pub const T_MEAS: f64 = 1.6e-6;

pub const FALSE_NEGATIVE: f64 = 0.049;
pub const FALSE_POSITIVE: f64 = 0.567;
pub const MIDPOINT_FIDELITY: f64 = 0.869;
pub const EOL_FIDELITY: f64 = 0.861;
pub const QND_ERROR_BOUND: f64 = 1e-3;
pub const T_EC: f64 = 5e-6;

pub const T1_LOGICAL_UNSELECTED: f64 = 193e-6;
pub const T1_LOGICAL_POSTSELECTED: f64 = 869e-6;
pub const T2_LOGICAL: f64 = 70.4e-6;
pub const DEPHASING_RATE: f64 = 45.0;
pub const DEPHASING_ERROR_PER_CHECK: f64 = 7.2e-5;

pub const EOL_FLUX: f64 = 1.3e-3;
pub const EOL_SHIFT_HZ: f64 = 8.6e6;
pub const EOL_RAMP: f64 = 10e-9;

pub const QND_CHECKS: usize = 29;
pub const QND_TOTAL_TIME: f64 = 50e-6;
pub const RAMAN_PULSE: f64 = 480e-9;
/// Checks in the sample traces at t_EC = 5 μs (t_tot = 153.4 μs).
pub const SAMPLE_CHECKS: usize = 23;
pub const SHOTS: usize = 100_000;

pub fn circuit() -> CircuitParams {
    CircuitParams::new(two_pi(E_C), two_pi(E_J), two_pi(E_L), 0.0).expect("valid preset")
}

/// Zero-flux transition rates; Γ₂₀ could not be extracted and is set to 0.
pub fn zero_flux_rates() -> RateMatrix {
    RateMatrix::new(two_pi(1.22e3), two_pi(0.88e3), 0.0, two_pi(1.21e3)).expect("valid preset")
}

/// Erasure-check readout at zero flux.
pub fn readout() -> ReadoutConfig {
    let drive = two_pi(READOUT_DRIVE_HZ);
    let omega_1 = drive + two_pi(DRIVE_BELOW_OMEGA_1_HZ);
    let omega_0 = omega_1 + two_pi(CHI_01_HZ);
    let omega_2 = omega_0 - two_pi(CHI_02_HZ);
    ReadoutConfig {
        kappa: two_pi(KAPPA_HZ),
        omega_bare: two_pi(BARE_RESONATOR_HZ),
        dressed: [omega_0, omega_1, omega_2],
        efficiency: EFFICIENCY,
        photon_number: PHOTON_NUMBER,
        t_meas: T_MEAS,
        drive_frequency: drive,
        response: CavityResponse::RingUp,
    }
}

/// Flux ramp to the end-of-line bias point.
pub fn eol_ramp() -> RampSpec {
    RampSpec::new(two_pi(OMEGA_12_HZ), two_pi(EOL_SHIFT_HZ), EOL_RAMP).expect("valid preset")
}

/// Erasure-conversion experiment with the reported detection errors.
pub fn erasure_experiment() -> ErasureExperimentConfig {
    ErasureExperimentConfig {
        rates: zero_flux_rates(),
        erasure_confusion: empirical_confusion(FALSE_NEGATIVE, FALSE_POSITIVE)
            .expect("valid preset"),
        eol_confusion: symmetric_eol_confusion(EOL_FIDELITY).expect("valid preset"),
        qnd_error_per_check: QND_ERROR_BOUND,
        t_meas: T_MEAS,
        t_ec: T_EC,
        m: SAMPLE_CHECKS,
        init_state: 2,
        shots: SHOTS,
        master_seed: 0,
        flag_policy: 1,
    }
}

/// QND characterisation sequence without backaction; see
/// [`crate::protocol::calibrate_backaction`].
pub fn qnd_sequence() -> QndSequence {
    QndSequence {
        rates: zero_flux_rates(),
        readout: readout(),
        backaction: BackactionModel::new(0.0).expect("valid preset"),
        checks: QND_CHECKS,
        total_time: QND_TOTAL_TIME,
        shots: SHOTS,
        master_seed: 0,
    }
}
