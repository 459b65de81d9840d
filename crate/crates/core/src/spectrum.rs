//! Fluxonium spectrum and charge matrix elements.
//!
//! The Hamiltonian `H = 4E_C n² − E_J cos φ + (E_L/2)(φ + 2π Φ_ext/Φ₀)²` is
//! written in the Fock basis of the linear LC sub-circuit, shifted so the
//! inductive term is centred: with `θ = φ + φ_x`,
//! `H = ω_p (a†a + ½) − E_J cos(θ − φ_x)` and `θ = θ_zpf (a + a†)`.
//!
//! `cos(θ − φ_x)` is the Hermitian part of `e^{−iφ_x} exp(iθ)`. The phase
//! exponential is formed exactly on the eigenbasis of the truncated position
//! quadrature of a larger auxiliary space and then cut down to the working
//! basis, so the assembled matrix is real symmetric by construction.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure, Error, Result};

/// Smallest oscillator truncation accepted.
pub const MIN_BASIS_SIZE: usize = 40;
/// Default oscillator truncation before automatic doubling.
pub const DEFAULT_BASIS_SIZE: usize = 120;
/// Number of eigenpairs kept in a [`SpectrumResult`].
pub const NUM_LEVELS: usize = 10;
/// Relative change of levels 1..=5 tolerated between a basis and its double.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-8;

const HERMITICITY_TOLERANCE: f64 = 1e-12;
const PARITY_THRESHOLD: f64 = 0.99;

/// Fluxonium circuit energies (rad/s), external flux in units of Φ₀, and the
/// oscillator-basis truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CircuitParams {
    pub e_c: f64,
    pub e_j: f64,
    pub e_l: f64,
    pub phi_ext: f64,
    pub basis_size: usize,
}

impl CircuitParams {
    pub fn new(e_c: f64, e_j: f64, e_l: f64, phi_ext: f64) -> Result<Self> {
        let params = Self {
            e_c,
            e_j,
            e_l,
            phi_ext,
            basis_size: DEFAULT_BASIS_SIZE,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_flux(self, phi_ext: f64) -> Self {
        Self { phi_ext, ..self }
    }

    pub fn with_basis_size(self, basis_size: usize) -> Self {
        Self { basis_size, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.e_c > 0.0 && self.e_c.is_finite(),
            "e_c",
            "must be positive",
        )?;
        ensure(
            self.e_j >= 0.0 && self.e_j.is_finite(),
            "e_j",
            "must be non-negative",
        )?;
        ensure(
            self.e_l > 0.0 && self.e_l.is_finite(),
            "e_l",
            "must be positive",
        )?;
        ensure(self.phi_ext.is_finite(), "phi_ext", "must be finite")?;
        ensure(
            self.basis_size >= MIN_BASIS_SIZE,
            "basis_size",
            format!("must be at least {MIN_BASIS_SIZE}, got {}", self.basis_size),
        )
    }

    /// Plasma frequency `√(8 E_C E_L)` of the LC sub-circuit.
    pub fn plasma_frequency(&self) -> f64 {
        (8.0 * self.e_c * self.e_l).sqrt()
    }

    fn phase_zpf(&self) -> f64 {
        (2.0 * self.e_c / self.e_l).powf(0.25)
    }

    fn charge_zpf(&self) -> f64 {
        (self.e_l / (32.0 * self.e_c)).powf(0.25)
    }
}

/// Lowest eigenpairs of the fluxonium Hamiltonian.
#[derive(Debug, Clone)]
pub struct SpectrumResult {
    /// Eigenfrequencies relative to the ground state (rad/s), ascending.
    pub levels: Vec<f64>,
    /// `|⟨i|n̂|j⟩|`.
    pub charge_elements: DMatrix<f64>,
    /// `n̂` is purely imaginary in the real eigenbasis: `⟨i|n̂|j⟩ = i·charge_operator[(i, j)]`.
    /// Antisymmetric. Eigenvector signs are fixed so each vector's largest
    /// oscillator component is positive.
    pub charge_operator: DMatrix<f64>,
    /// ±1 parity labels; present only at integer or half-integer flux.
    pub parity: Option<Vec<i8>>,
    /// Truncation at which the result was accepted.
    pub basis_size: usize,
    pub phi_ext: f64,
}

impl SpectrumResult {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn transition_frequency(&self, i: usize, j: usize) -> Result<f64> {
        transition_frequency(self, i, j)
    }

    pub fn charge_matrix_element(&self, i: usize, j: usize) -> Result<f64> {
        charge_matrix_element(self, i, j)
    }

    /// Keeps the lowest `levels` eigenpairs.
    pub fn truncated(&self, levels: usize) -> Result<SpectrumResult> {
        ensure(
            levels >= 1 && levels <= self.num_levels(),
            "levels",
            format!("must be in 1..={}", self.num_levels()),
        )?;
        Ok(SpectrumResult {
            levels: self.levels[..levels].to_vec(),
            charge_elements: self
                .charge_elements
                .view((0, 0), (levels, levels))
                .into_owned(),
            charge_operator: self
                .charge_operator
                .view((0, 0), (levels, levels))
                .into_owned(),
            parity: self.parity.as_ref().map(|p| p[..levels].to_vec()),
            basis_size: self.basis_size,
            phi_ext: self.phi_ext,
        })
    }
}

/// `levels[j] − levels[i]`, requiring `i < j`.
pub fn transition_frequency(spec: &SpectrumResult, i: usize, j: usize) -> Result<f64> {
    if i >= j || j >= spec.num_levels() {
        return Err(Error::IndexOutOfRange {
            i,
            j,
            levels: spec.num_levels(),
        });
    }
    Ok(spec.levels[j] - spec.levels[i])
}

pub fn charge_matrix_element(spec: &SpectrumResult, i: usize, j: usize) -> Result<f64> {
    if i >= spec.num_levels() || j >= spec.num_levels() {
        return Err(Error::IndexOutOfRange {
            i,
            j,
            levels: spec.num_levels(),
        });
    }
    Ok(spec.charge_elements[(i, j)])
}

/// Diagonalizes at `params.basis_size`, doubling the truncation (at most
/// twice) until levels 1..=5 move by less than [`CONVERGENCE_TOLERANCE`].
pub fn diagonalize(params: &CircuitParams) -> Result<SpectrumResult> {
    Diagonalizer::default().diagonalize(params)
}

/// Diagonalizes at exactly `params.basis_size`, without a convergence check.
pub fn diagonalize_fixed(params: &CircuitParams) -> Result<SpectrumResult> {
    params.validate()?;
    solve(params, &PhaseBasis::new(auxiliary_size(params.basis_size)))
}

/// One row of a flux sweep. Frequencies in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluxPoint {
    pub flux: f64,
    pub omega_01: f64,
    pub omega_12: f64,
    pub omega_02: f64,
    pub n_01: f64,
    pub n_12: f64,
    pub n_02: f64,
}

/// Evaluates each flux point independently (in parallel); rows follow the
/// order of `flux_grid`.
pub fn sweep_flux(params: &CircuitParams, flux_grid: &[f64]) -> Result<Vec<FluxPoint>> {
    ensure(!flux_grid.is_empty(), "flux_grid", "must not be empty")?;
    params.validate()?;
    let diagonalizer = Diagonalizer::for_basis(params.basis_size);
    flux_grid
        .par_iter()
        .map(|&flux| {
            let spec = diagonalizer.diagonalize(&params.with_flux(flux))?;
            Ok(FluxPoint {
                flux,
                omega_01: spec.levels[1],
                omega_12: spec.levels[2] - spec.levels[1],
                omega_02: spec.levels[2],
                n_01: spec.charge_elements[(0, 1)],
                n_12: spec.charge_elements[(1, 2)],
                n_02: spec.charge_elements[(0, 2)],
            })
        })
        .collect()
}

/// Caches the flux-independent phase bases for the truncations the
/// convergence loop visits.
#[derive(Default)]
struct Diagonalizer {
    bases: Vec<PhaseBasis>,
}

impl Diagonalizer {
    fn for_basis(basis_size: usize) -> Self {
        let bases = (0..3)
            .map(|k| PhaseBasis::new(auxiliary_size(basis_size << k)))
            .collect();
        Self { bases }
    }

    fn basis(&self, n: usize) -> Option<&PhaseBasis> {
        self.bases.iter().find(|b| b.size == auxiliary_size(n))
    }

    fn diagonalize(&self, params: &CircuitParams) -> Result<SpectrumResult> {
        params.validate()?;
        let solve_at = |n: usize| {
            let p = params.with_basis_size(n);
            match self.basis(n) {
                Some(b) => solve(&p, b),
                None => solve(&p, &PhaseBasis::new(auxiliary_size(n))),
            }
        };
        let mut n = params.basis_size;
        let mut previous = solve_at(n)?;
        let mut change = f64::INFINITY;
        for _ in 0..2 {
            n *= 2;
            let next = solve_at(n)?;
            change = relative_level_change(&previous, &next);
            if change < CONVERGENCE_TOLERANCE {
                return Ok(next);
            }
            previous = next;
        }
        Err(Error::Convergence {
            change,
            basis_size: n,
        })
    }
}

fn relative_level_change(a: &SpectrumResult, b: &SpectrumResult) -> f64 {
    (1..6.min(a.num_levels()))
        .map(|j| ((a.levels[j] - b.levels[j]) / b.levels[j]).abs())
        .fold(0.0, f64::max)
}

fn auxiliary_size(n: usize) -> usize {
    2 * n + 16
}

/// Eigendecomposition of the truncated quadrature `a + a†`.
struct PhaseBasis {
    size: usize,
    nodes: DVector<f64>,
    vectors: DMatrix<f64>,
}

impl PhaseBasis {
    fn new(size: usize) -> Self {
        let mut x = DMatrix::<f64>::zeros(size, size);
        for k in 1..size {
            let s = (k as f64).sqrt();
            x[(k - 1, k)] = s;
            x[(k, k - 1)] = s;
        }
        let eig = SymmetricEigen::new(x);
        Self {
            size,
            nodes: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    /// `cos(scale·(a + a†) − shift)` restricted to the first `n` Fock states.
    fn cosine(&self, n: usize, scale: f64, shift: f64) -> DMatrix<f64> {
        let v = self.vectors.rows(0, n);
        let weights: Vec<f64> = self
            .nodes
            .iter()
            .map(|&x| (scale * x - shift).cos())
            .collect();
        let mut weighted = v.clone_owned();
        for (mut col, &w) in weighted.column_iter_mut().zip(&weights) {
            col *= w;
        }
        let mut c = &weighted * v.transpose();
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (c[(i, j)] + c[(j, i)]);
                c[(i, j)] = m;
                c[(j, i)] = m;
            }
        }
        c
    }
}

fn assemble_hamiltonian(params: &CircuitParams, phase: &PhaseBasis) -> DMatrix<f64> {
    let n = params.basis_size;
    let shift = TAU * params.phi_ext;
    let mut h = phase.cosine(n, params.phase_zpf(), shift) * (-params.e_j);
    let wp = params.plasma_frequency();
    for k in 0..n {
        h[(k, k)] += wp * (k as f64 + 0.5);
    }
    h
}

fn solve(params: &CircuitParams, phase: &PhaseBasis) -> Result<SpectrumResult> {
    let n = params.basis_size;
    let h = assemble_hamiltonian(params, phase);

    let scale = h.amax().max(f64::MIN_POSITIVE);
    let asymmetry = (&h - h.transpose()).amax() / scale;
    if asymmetry > HERMITICITY_TOLERANCE {
        return Err(Error::Internal(format!(
            "assembled Hamiltonian is not symmetric (relative deviation {asymmetry:.3e})"
        )));
    }

    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let keep = NUM_LEVELS.min(n);

    let mut vectors = DMatrix::<f64>::zeros(n, keep);
    for (col, &idx) in order.iter().take(keep).enumerate() {
        let mut v = eig.eigenvectors.column(idx).clone_owned();
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(col, &v);
    }

    let ground = eig.eigenvalues[order[0]];
    let levels: Vec<f64> = order
        .iter()
        .take(keep)
        .map(|&idx| eig.eigenvalues[idx] - ground)
        .collect();

    // (a† − a) applied to each kept eigenvector, then projected.
    let mut lowered = DMatrix::<f64>::zeros(n, keep);
    for c in 0..keep {
        for k in 0..n {
            let mut acc = 0.0;
            if k > 0 {
                acc += (k as f64).sqrt() * vectors[(k - 1, c)];
            }
            if k + 1 < n {
                acc -= ((k + 1) as f64).sqrt() * vectors[(k + 1, c)];
            }
            lowered[(k, c)] = acc;
        }
    }
    let mut charge_operator = vectors.transpose() * lowered * params.charge_zpf();
    for i in 0..keep {
        charge_operator[(i, i)] = 0.0;
        for j in (i + 1)..keep {
            let m = 0.5 * (charge_operator[(i, j)] - charge_operator[(j, i)]);
            charge_operator[(i, j)] = m;
            charge_operator[(j, i)] = -m;
        }
    }
    let charge_elements = charge_operator.map(f64::abs);

    let parity = parity_labels(params.phi_ext, &vectors);

    Ok(SpectrumResult {
        levels,
        charge_elements,
        charge_operator,
        parity,
        basis_size: n,
        phi_ext: params.phi_ext,
    })
}

/// Oscillator-parity expectation of each eigenvector, labelled when the flux
/// is a symmetry point and every expectation clears the threshold.
fn parity_labels(phi_ext: f64, vectors: &DMatrix<f64>) -> Option<Vec<i8>> {
    let twice = 2.0 * phi_ext;
    if (twice - twice.round()).abs() > 1e-12 {
        return None;
    }
    vectors
        .column_iter()
        .map(|v| {
            let p: f64 = v
                .iter()
                .enumerate()
                .map(|(k, &c)| if k % 2 == 0 { c * c } else { -c * c })
                .sum();
            if p > PARITY_THRESHOLD {
                Some(1)
            } else if p < -PARITY_THRESHOLD {
                Some(-1)
            } else {
                None
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    /// Closed-form Fock matrix elements of `cos(s(a + a†) − shift)` via the
    /// displacement operator and associated Laguerre polynomials.
    fn cosine_element_closed_form(m: usize, n: usize, s: f64, shift: f64) -> f64 {
        let (lo, hi) = (m.min(n), m.max(n));
        let k = hi - lo;
        let x = s * s;
        // L_lo^{(k)}(x) by upward recurrence in the degree.
        let (mut l_prev, mut l) = (0.0, 1.0);
        for d in 0..lo {
            let d = d as f64;
            let next = ((2.0 * d + 1.0 + k as f64 - x) * l - (d + k as f64) * l_prev) / (d + 1.0);
            l_prev = l;
            l = next;
        }
        let mut ratio = 1.0;
        for q in (lo + 1)..=hi {
            ratio /= q as f64;
        }
        let r = ratio.sqrt() * s.powi(k as i32) * (-x / 2.0).exp() * l;
        r * (k as f64 * std::f64::consts::FRAC_PI_2 - shift).cos()
    }

    #[test]
    fn phase_cosine_matches_closed_form() {
        let basis = PhaseBasis::new(auxiliary_size(60));
        let (s, shift) = (1.81, 0.37);
        let c = basis.cosine(60, s, shift);
        for m in 0..20 {
            for n in 0..20 {
                let exact = cosine_element_closed_form(m, n, s, shift);
                assert!(
                    (c[(m, n)] - exact).abs() < 1e-11,
                    "({m},{n}): {} vs {exact}",
                    c[(m, n)]
                );
            }
        }
    }

    #[test]
    fn harmonic_limit_is_equally_spaced() {
        let params = CircuitParams::new(1.72, 0.0, 0.32, 0.0).unwrap();
        let spec = diagonalize(&params).unwrap();
        let wp = params.plasma_frequency();
        for (k, &e) in spec.levels.iter().enumerate() {
            assert!((e - k as f64 * wp).abs() < 1e-10 * wp, "level {k}: {e}");
        }
    }

    #[test]
    fn reference_device_zero_flux_spectrum() {
        let spec = diagonalize(&presets::circuit()).unwrap();
        let w01 = spec.transition_frequency(0, 1).unwrap();
        let w12 = spec.transition_frequency(1, 2).unwrap();
        assert!((w01 / (TAU * 5.77e9) - 1.0).abs() < 0.05, "ω01 = {w01}");
        assert!((w12 / (TAU * 48.0e6) - 1.0).abs() < 0.10, "ω12 = {w12}");
        assert!(spec.charge_matrix_element(0, 2).unwrap() < 1e-10);
        assert!(spec.charge_matrix_element(0, 1).unwrap() > 0.0);
    }

    #[test]
    fn parity_selection_rule_at_symmetry_points() {
        for flux in [0.0, 0.5] {
            let spec = diagonalize(&presets::circuit().with_flux(flux)).unwrap();
            let parity = spec
                .parity
                .clone()
                .expect("parity defined at symmetry point");
            for i in 0..spec.num_levels() {
                assert!(spec.charge_elements[(i, i)] < 1e-10);
                for j in 0..spec.num_levels() {
                    if parity[i] == parity[j] {
                        assert!(
                            spec.charge_elements[(i, j)] < 1e-10,
                            "flux {flux} ({i},{j})"
                        );
                    }
                }
            }
        }
        let off = diagonalize(&presets::circuit().with_flux(0.05)).unwrap();
        assert!(off.parity.is_none());
    }

    #[test]
    fn flux_inversion_symmetry() {
        let plus = diagonalize(&presets::circuit().with_flux(0.031)).unwrap();
        let minus = diagonalize(&presets::circuit().with_flux(-0.031)).unwrap();
        for j in 1..plus.num_levels() {
            assert!(((plus.levels[j] - minus.levels[j]) / plus.levels[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn high_truncation_oracle() {
        for flux in [0.0013, 0.05] {
            let params = presets::circuit().with_flux(flux);
            let spec = diagonalize(&params).unwrap();
            let oracle = diagonalize_fixed(&params.with_basis_size(4 * params.basis_size)).unwrap();
            for j in 1..6 {
                assert!(((spec.levels[j] - oracle.levels[j]) / oracle.levels[j]).abs() < 1e-6);
            }
            for i in 0..6 {
                for j in 0..6 {
                    let (a, b) = (spec.charge_elements[(i, j)], oracle.charge_elements[(i, j)]);
                    assert!(
                        (a - b).abs() <= 1e-6 * b.max(1e-3),
                        "flux {flux} ({i},{j}): {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn index_errors() {
        let spec = diagonalize(&presets::circuit()).unwrap();
        assert!(spec.transition_frequency(1, 1).is_err());
        assert!(spec.transition_frequency(2, 1).is_err());
        assert!(spec.transition_frequency(0, NUM_LEVELS).is_err());
        assert!(spec.charge_matrix_element(0, NUM_LEVELS).is_err());
    }

    #[test]
    fn rejects_small_basis() {
        let params = presets::circuit().with_basis_size(10);
        assert!(matches!(
            diagonalize(&params),
            Err(Error::InvalidParameter {
                name: "basis_size",
                ..
            })
        ));
        assert!(CircuitParams::new(-1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn sweep_is_symmetric_and_dips_at_zero() {
        let grid: Vec<f64> = (-10..=10).map(|k| k as f64 * 0.01).collect();
        let rows = sweep_flux(&presets::circuit(), &grid).unwrap();
        assert_eq!(rows.len(), grid.len());
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row.flux, grid[k]);
            let mirror = &rows[grid.len() - 1 - k];
            assert!((row.n_02 - mirror.n_02).abs() < 1e-9);
        }
        let (argmin, _) = rows
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.n_02.total_cmp(&b.1.n_02))
            .unwrap();
        assert_eq!(grid[argmin], 0.0);
        assert!(rows[10].n_02 < 1e-10);
        // V shape: grows away from zero on both sides
        for k in 0..9 {
            assert!(rows[k].n_02 > rows[k + 1].n_02);
            assert!(rows[20 - k].n_02 > rows[19 - k].n_02);
        }
    }
}
