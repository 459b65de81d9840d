//! Coherent driven dynamics in the truncated fluxonium eigenbasis.
//!
//! A flat-top charge drive gives the lab-frame Hamiltonian
//! `H(t) = diag(levels) + A·cos(ω t + φ)·n̂`. It is integrated with a
//! fourth-order commutator-free Magnus scheme whose stages are exact
//! exponentials of Hermitian matrices, so the propagator is unitary to
//! rounding. Because `H` is periodic in the carrier, the propagator of one
//! period is computed once and raised to the required power.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure, invalid, Error, Result};
use crate::spectrum::SpectrumResult;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Fewest levels for which Stark shifts from non-participating levels show up.
pub const MIN_DRIVE_LEVELS: usize = 4;
pub const DEFAULT_DRIVE_LEVELS: usize = 6;
/// Integrator steps per period of the fastest frequency in the problem.
pub const STEPS_PER_FASTEST_PERIOD: f64 = 50.0;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `R_θ^{ij}(φ) = exp(−i(θ/2)(cos φ·X_ij + sin φ·Y_ij))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubspaceRotation {
    pub i: usize,
    pub j: usize,
    pub theta: f64,
    pub phi: f64,
}

impl SubspaceRotation {
    pub fn new(i: usize, j: usize, theta: f64, phi: f64) -> Result<Self> {
        ensure(i < j, "subspace", format!("({i}, {j}) must satisfy i < j"))?;
        ensure(
            (0.0..std::f64::consts::TAU).contains(&theta),
            "theta",
            format!("{theta} is outside [0, 2π)"),
        )?;
        ensure(phi.is_finite(), "phi", "must be finite")?;
        Ok(Self { i, j, theta, phi })
    }
}

pub fn rotation_unitary(rot: &SubspaceRotation, dim: usize) -> Result<CMatrix> {
    if rot.i >= rot.j || rot.j >= dim {
        return Err(Error::IndexOutOfRange {
            i: rot.i,
            j: rot.j,
            levels: dim,
        });
    }
    let (s, c) = (0.5 * rot.theta).sin_cos();
    let mut u = CMatrix::identity(dim, dim);
    u[(rot.i, rot.i)] = Complex64::from(c);
    u[(rot.j, rot.j)] = Complex64::from(c);
    u[(rot.i, rot.j)] = -I * s * Complex64::from_polar(1.0, -rot.phi);
    u[(rot.j, rot.i)] = -I * s * Complex64::from_polar(1.0, rot.phi);
    Ok(u)
}

/// Logical rotation in {|0⟩, |2⟩} built as `R_π^{01}(0)·R_θ^{12}(φ)·R_π^{01}(0)`.
pub fn compose_logical_rotation(theta: f64, phi: f64) -> Result<Matrix3<Complex64>> {
    let outer = rotation_unitary(&SubspaceRotation::new(0, 1, std::f64::consts::PI, 0.0)?, 3)?;
    let inner = rotation_unitary(&SubspaceRotation::new(1, 2, theta, phi)?, 3)?;
    let u = &outer * inner * &outer;
    Ok(Matrix3::from_fn(|r, c| u[(r, c)]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Envelope {
    /// Constant amplitude with instantaneous switching.
    #[default]
    FlatTop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DrivePulse {
    /// Coefficient of `n̂` (rad/s).
    pub amplitude: f64,
    pub carrier: f64,
    pub phase: f64,
    pub duration: f64,
    pub envelope: Envelope,
}

impl DrivePulse {
    pub fn new(amplitude: f64, carrier: f64, phase: f64, duration: f64) -> Result<Self> {
        let pulse = Self {
            amplitude,
            carrier,
            phase,
            duration,
            envelope: Envelope::FlatTop,
        };
        pulse.validate()?;
        Ok(pulse)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.amplitude >= 0.0 && self.amplitude.is_finite(),
            "amplitude",
            "must be >= 0",
        )?;
        ensure(
            self.carrier >= 0.0 && self.carrier.is_finite(),
            "carrier",
            "must be >= 0",
        )?;
        ensure(self.phase.is_finite(), "phase", "must be finite")?;
        ensure(
            self.duration > 0.0 && self.duration.is_finite(),
            "duration",
            "must be > 0",
        )?;
        Ok(())
    }
}

/// The static and drive parts of the Hamiltonian in the qubit eigenbasis.
struct DrivenSystem {
    energies: Vec<f64>,
    /// Real antisymmetric `K` with `n̂ = i·K`.
    charge: DMatrix<f64>,
}

impl DrivenSystem {
    fn new(spec: &SpectrumResult) -> Result<Self> {
        ensure(
            spec.num_levels() >= MIN_DRIVE_LEVELS,
            "levels",
            format!("driven simulation needs at least {MIN_DRIVE_LEVELS} levels"),
        )?;
        Ok(Self {
            energies: spec.levels.clone(),
            charge: spec.charge_operator.clone(),
        })
    }

    fn dim(&self) -> usize {
        self.energies.len()
    }

    /// `exp(−i·(a·D + b·n̂))` for real `a`, `b`.
    fn exp_hermitian(&self, a: f64, b: f64) -> CMatrix {
        let n = self.dim();
        let m = CMatrix::from_fn(n, n, |r, c| {
            let diag = if r == c { a * self.energies[r] } else { 0.0 };
            Complex64::new(diag, b * self.charge[(r, c)])
        });
        let eig = SymmetricEigen::new(m);
        let phases = DVector::from_iterator(
            n,
            eig.eigenvalues
                .iter()
                .map(|&l| Complex64::from_polar(1.0, -l)),
        );
        let v = eig.eigenvectors;
        let scaled = CMatrix::from_fn(n, n, |r, c| v[(r, c)] * phases[c]);
        scaled * v.adjoint()
    }

    /// Propagator over `[t0, t0 + span]` in `steps` Magnus steps.
    fn propagate(&self, pulse: &DrivePulse, t0: f64, span: f64, steps: usize) -> CMatrix {
        const C1: f64 = 0.5 - 0.288_675_134_594_812_9; // 1/2 − √3/6
        const C2: f64 = 0.5 + 0.288_675_134_594_812_9;
        const A1: f64 = 0.25 - 0.288_675_134_594_812_9; // (3 − 2√3)/12
        const A2: f64 = 0.25 + 0.288_675_134_594_812_9;
        let drive = |t: f64| pulse.amplitude * (pulse.carrier * t + pulse.phase).cos();
        let h = span / steps as f64;
        let mut u = CMatrix::identity(self.dim(), self.dim());
        for k in 0..steps {
            let t = t0 + k as f64 * h;
            let (f1, f2) = (drive(t + C1 * h), drive(t + C2 * h));
            // exp(−ih(a₂H₁ + a₁H₂)) acts first, then exp(−ih(a₁H₁ + a₂H₂)).
            let first = self.exp_hermitian(0.5 * h, h * (A2 * f1 + A1 * f2));
            let second = self.exp_hermitian(0.5 * h, h * (A1 * f1 + A2 * f2));
            u = second * first * u;
        }
        u
    }

    fn max_frequency(&self, pulse: &DrivePulse) -> f64 {
        let spread = self.energies.last().copied().unwrap_or(0.0);
        spread.max(pulse.carrier).max(pulse.amplitude)
    }
}

fn steps_for(span: f64, max_step: f64) -> Result<usize> {
    let steps = (span / max_step).ceil().max(1.0);
    if !(max_step > 1e-18) || steps > 1e9 {
        return Err(invalid(
            "step",
            format!("step size {max_step:e} s underflows for a {span:e} s span"),
        ));
    }
    Ok(steps as usize)
}

fn matrix_power(base: &CMatrix, mut exponent: u64) -> CMatrix {
    let mut result = CMatrix::identity(base.nrows(), base.ncols());
    let mut square = base.clone();
    while exponent > 0 {
        if exponent & 1 == 1 {
            result = &square * &result;
        }
        exponent >>= 1;
        if exponent > 0 {
            square = &square * &square;
        }
    }
    result
}

/// Propagator of the full pulse; `max_step` overrides the default step bound.
pub fn pulse_propagator(
    spec: &SpectrumResult,
    pulse: &DrivePulse,
    max_step: Option<f64>,
) -> Result<CMatrix> {
    pulse.validate()?;
    let system = DrivenSystem::new(spec)?;
    let n = system.dim();
    if pulse.amplitude == 0.0 {
        return Ok(CMatrix::from_diagonal(&DVector::from_iterator(
            n,
            system
                .energies
                .iter()
                .map(|&e| Complex64::from_polar(1.0, -e * pulse.duration)),
        )));
    }
    if pulse.carrier == 0.0 {
        // Static Hamiltonian: a single exact exponential.
        let b = pulse.amplitude * pulse.phase.cos() * pulse.duration;
        return Ok(system.exp_hermitian(pulse.duration, b));
    }
    let max_step = max_step.unwrap_or(
        std::f64::consts::TAU / (STEPS_PER_FASTEST_PERIOD * system.max_frequency(pulse)),
    );
    let period = std::f64::consts::TAU / pulse.carrier;
    let whole = (pulse.duration / period).floor();
    let remainder = pulse.duration - whole * period;
    let mut u = CMatrix::identity(n, n);
    if whole >= 1.0 {
        let one_period = system.propagate(pulse, 0.0, period, steps_for(period, max_step)?);
        u = matrix_power(&one_period, whole as u64);
    }
    if remainder > 0.0 {
        // H(t) repeats every period, so the tail starts at phase zero again.
        let tail = system.propagate(pulse, 0.0, remainder, steps_for(remainder, max_step)?);
        u = tail * u;
    }
    Ok(u)
}

fn check_normalized(state: &CVector, dim: usize) -> Result<()> {
    ensure(
        state.len() == dim,
        "init",
        format!("state has {} entries, expected {dim}", state.len()),
    )?;
    let norm = state.norm();
    ensure(
        (norm - 1.0).abs() < 1e-10,
        "init",
        format!("state norm {norm} is not 1"),
    )
}

pub fn simulate_drive(
    spec: &SpectrumResult,
    pulse: &DrivePulse,
    init: &CVector,
) -> Result<CVector> {
    simulate_drive_with_step(spec, pulse, init, None)
}

pub fn simulate_drive_with_step(
    spec: &SpectrumResult,
    pulse: &DrivePulse,
    init: &CVector,
    max_step: Option<f64>,
) -> Result<CVector> {
    check_normalized(init, spec.num_levels())?;
    let u = pulse_propagator(spec, pulse, max_step)?;
    let out = u * init;
    let norm = out.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::Internal(format!(
            "norm drifted to {norm} during the pulse"
        )));
    }
    Ok(out)
}

pub fn basis_state(dim: usize, k: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[k] = Complex64::from(1.0);
    v
}

pub fn populations(state: &CVector) -> Vec<f64> {
    state.iter().map(|a| a.norm_sqr()).collect()
}

/// `P₂` over an amplitude × detuning grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChevronMap {
    pub amplitudes: Vec<f64>,
    /// Carrier offset from ω₀₂/2 (rad/s).
    pub detunings: Vec<f64>,
    /// `p2[a][d]` for amplitude index `a` and detuning index `d`.
    pub p2: Vec<Vec<f64>>,
    pub duration: f64,
    pub repeats: usize,
}

impl ChevronMap {
    /// Detuning with the largest P₂ in each amplitude row.
    pub fn peak_detunings(&self) -> Vec<f64> {
        self.p2
            .iter()
            .map(|row| {
                let best = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map_or(0, |(k, _)| k);
                self.detunings[best]
            })
            .collect()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.p2
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                (lo.min(p), hi.max(p))
            })
    }
}

pub fn chevron_scan(
    spec: &SpectrumResult,
    duration: f64,
    amplitude_grid: &[f64],
    detuning_grid: &[f64],
    repeats: usize,
) -> Result<ChevronMap> {
    chevron_scan_with_step(spec, duration, amplitude_grid, detuning_grid, repeats, None)
}

pub fn chevron_scan_with_step(
    spec: &SpectrumResult,
    duration: f64,
    amplitude_grid: &[f64],
    detuning_grid: &[f64],
    repeats: usize,
    max_step: Option<f64>,
) -> Result<ChevronMap> {
    ensure(
        !amplitude_grid.is_empty(),
        "amplitude_grid",
        "must be nonempty",
    )?;
    ensure(
        !detuning_grid.is_empty(),
        "detuning_grid",
        "must be nonempty",
    )?;
    ensure(repeats == 1 || repeats == 2, "repeats", "must be 1 or 2")?;
    let half_02 = 0.5 * spec.transition_frequency(0, 2)?;
    let cells: Vec<(usize, usize)> = (0..amplitude_grid.len())
        .flat_map(|a| (0..detuning_grid.len()).map(move |d| (a, d)))
        .collect();
    let values = cells
        .par_iter()
        .map(|&(a, d)| {
            let pulse =
                DrivePulse::new(amplitude_grid[a], half_02 + detuning_grid[d], 0.0, duration)?;
            let u = pulse_propagator(spec, &pulse, max_step)?;
            // Each repetition restarts the carrier phase at its own start.
            let u = if repeats == 2 { &u * &u } else { u };
            Ok((u.column(0)[2]).norm_sqr())
        })
        .collect::<Result<Vec<f64>>>()?;
    let p2 = values
        .chunks(detuning_grid.len())
        .map(<[f64]>::to_vec)
        .collect();
    Ok(ChevronMap {
        amplitudes: amplitude_grid.to_vec(),
        detunings: detuning_grid.to_vec(),
        p2,
        duration,
        repeats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::spectrum::diagonalize;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn spectrum() -> SpectrumResult {
        diagonalize(&presets::circuit())
            .unwrap()
            .truncated(DEFAULT_DRIVE_LEVELS)
            .unwrap()
    }

    fn assert_unitary(u: &CMatrix, tol: f64) {
        let err = (u.adjoint() * u - CMatrix::identity(u.nrows(), u.ncols())).camax();
        assert!(err < tol, "unitarity error {err}");
    }

    #[test]
    fn rotation_basics() {
        let id = rotation_unitary(&SubspaceRotation::new(0, 1, 0.0, 0.3).unwrap(), 4).unwrap();
        assert!((id - CMatrix::identity(4, 4)).camax() < 1e-15);

        let flip = rotation_unitary(&SubspaceRotation::new(0, 1, PI, 0.0).unwrap(), 3).unwrap();
        assert_unitary(&flip, 1e-12);
        let out = populations(&(flip * basis_state(3, 0)));
        assert!((out[1] - 1.0).abs() < 1e-12);

        let half =
            rotation_unitary(&SubspaceRotation::new(1, 2, FRAC_PI_2, 1.1).unwrap(), 3).unwrap();
        let out = populations(&(half * basis_state(3, 1)));
        assert!(
            out[0].abs() < 1e-15 && (out[1] - 0.5).abs() < 1e-12 && (out[2] - 0.5).abs() < 1e-12
        );

        assert!(SubspaceRotation::new(2, 1, 0.1, 0.0).is_err());
        assert!(SubspaceRotation::new(0, 1, 7.0, 0.0).is_err());
        let bad = SubspaceRotation::new(0, 3, 0.1, 0.0).unwrap();
        assert!(rotation_unitary(&bad, 3).is_err());
    }

    /// Direct 3×3 product of the three rotations, written out by hand.
    fn explicit_logical(theta: f64, phi: f64) -> Matrix3<Complex64> {
        let z = Complex64::from(0.0);
        let one = Complex64::from(1.0);
        let x01 = Matrix3::new(z, -I, z, -I, z, z, z, z, one);
        let (s, c) = (0.5 * theta).sin_cos();
        let r12 = Matrix3::new(
            one,
            z,
            z,
            z,
            Complex64::from(c),
            -I * s * Complex64::from_polar(1.0, -phi),
            z,
            -I * s * Complex64::from_polar(1.0, phi),
            Complex64::from(c),
        );
        x01 * r12 * x01
    }

    #[test]
    fn logical_rotation_matches_explicit_product() {
        for (theta, phi) in [(PI, 0.0), (FRAC_PI_2, 0.4), (1.3, -2.0), (0.0, 0.0)] {
            let u = compose_logical_rotation(theta, phi).unwrap();
            assert!((u - explicit_logical(theta, phi)).camax() < 1e-15);
        }
        let pi = compose_logical_rotation(PI, 0.0).unwrap();
        assert!((pi[(2, 0)].norm_sqr() - 1.0).abs() < 1e-12);
        let half = compose_logical_rotation(FRAC_PI_2, 0.0).unwrap();
        assert!((half[(0, 0)].norm_sqr() - 0.5).abs() < 1e-12);
        assert!((half[(2, 0)].norm_sqr() - 0.5).abs() < 1e-12);
        assert!(half[(1, 0)].norm_sqr() < 1e-30);
    }

    #[test]
    fn logical_rotation_stays_in_computational_subspace() {
        for k in 0..12 {
            let theta = k as f64 * 0.5;
            let u = compose_logical_rotation(theta, 0.7 * k as f64).unwrap();
            assert!(u[(1, 0)].norm() < 1e-15 && u[(1, 2)].norm() < 1e-15);
            let transfer = u[(2, 0)].norm_sqr();
            assert!((transfer - (0.5 * theta).sin().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_amplitude_only_adds_phases() {
        let spec = spectrum();
        let init = CVector::from_fn(6, |k, _| Complex64::from_polar(1.0 / 6f64.sqrt(), k as f64));
        let pulse = DrivePulse::new(0.0, 1e10, 0.0, 100e-9).unwrap();
        let out = simulate_drive(&spec, &pulse, &init).unwrap();
        for (a, b) in populations(&out).iter().zip(populations(&init)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resonant_pi_pulse() {
        let spec = spectrum();
        let w01 = spec.transition_frequency(0, 1).unwrap();
        let amplitude = w01 / 200.0;
        let duration = PI / (amplitude * spec.charge_matrix_element(0, 1).unwrap());
        let pulse = DrivePulse::new(amplitude, w01, 0.0, duration).unwrap();
        let out = simulate_drive(&spec, &pulse, &basis_state(6, 0)).unwrap();
        let p = populations(&out);
        assert!((p[1] - 1.0).abs() < 0.02, "P1 = {}", p[1]);
    }

    #[test]
    fn pulse_propagator_is_unitary() {
        let spec = spectrum();
        let carrier = 0.5 * spec.transition_frequency(0, 2).unwrap();
        let pulse = DrivePulse::new(3e9, carrier, 0.2, 37.3e-9).unwrap();
        assert_unitary(&pulse_propagator(&spec, &pulse, None).unwrap(), 1e-9);
    }

    #[test]
    fn floquet_shortcut_matches_direct_integration() {
        let spec = spectrum();
        let system = DrivenSystem::new(&spec).unwrap();
        let carrier = 0.5 * spec.transition_frequency(0, 2).unwrap();
        let pulse = DrivePulse::new(2e9, carrier, 0.0, 5.3e-9).unwrap();
        let h = 1e-12;
        let fast = pulse_propagator(&spec, &pulse, Some(h)).unwrap();
        let direct = system.propagate(
            &pulse,
            0.0,
            pulse.duration,
            steps_for(pulse.duration, h).unwrap(),
        );
        assert!((fast - direct).camax() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = spectrum();
        let pulse = DrivePulse::new(1e8, 1e10, 0.0, 1e-9).unwrap();
        let unnormalized = basis_state(6, 0) * Complex64::from(2.0);
        assert!(simulate_drive(&spec, &pulse, &unnormalized).is_err());
        assert!(simulate_drive_with_step(&spec, &pulse, &basis_state(6, 0), Some(1e-30)).is_err());
        assert!(DrivePulse::new(-1.0, 1.0, 0.0, 1.0).is_err());
        assert!(DrivePulse::new(1.0, 1.0, 0.0, 0.0).is_err());
        let small = spec.truncated(3).unwrap();
        assert!(simulate_drive(&small, &pulse, &basis_state(3, 0)).is_err());
    }

    #[test]
    fn zero_amplitude_row_is_dark() {
        let spec = spectrum();
        let map = chevron_scan(&spec, 20e-9, &[0.0], &[-1e7, 0.0, 1e7], 1).unwrap();
        assert!(map.p2[0].iter().all(|&p| p < 1e-10));
        assert!(chevron_scan(&spec, 20e-9, &[], &[0.0], 1).is_err());
        assert!(chevron_scan(&spec, 20e-9, &[1.0], &[0.0], 3).is_err());
    }

    #[test]
    fn step_halving_converges() {
        let spec = spectrum();
        let carrier = 0.5 * spec.transition_frequency(0, 2).unwrap() + 2e6;
        let pulse = DrivePulse::new(4e9, carrier, 0.0, 480e-9).unwrap();
        let system = DrivenSystem::new(&spec).unwrap();
        let h = std::f64::consts::TAU / (STEPS_PER_FASTEST_PERIOD * system.max_frequency(&pulse));
        let coarse = populations(
            &simulate_drive_with_step(&spec, &pulse, &basis_state(6, 0), Some(h)).unwrap(),
        );
        let fine = populations(
            &simulate_drive_with_step(&spec, &pulse, &basis_state(6, 0), Some(h / 2.0)).unwrap(),
        );
        for (a, b) in coarse.iter().zip(&fine) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}
