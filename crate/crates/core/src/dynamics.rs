//! Three-level relaxation dynamics.
//!
//! Populations obey the classical master equations
//!
//! ```text
//! dP0/dt =  Γ10 P1 + Γ20 P2
//! dP1/dt = −(Γ10 + Γ12) P1 + Γ21 P2
//! dP2/dt = −(Γ20 + Γ21) P2 + Γ12 P1
//! ```
//!
//! solved exactly with a matrix exponential, or unravelled into
//! continuous-time Markov-chain trajectories.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, ensure_probability, Result};
use crate::rng::substream;

pub const NUM_STATES: usize = 3;

/// Spontaneous transition rates (s⁻¹). There is no excitation out of |0⟩.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateMatrix {
    pub g10: f64,
    pub g12: f64,
    pub g20: f64,
    pub g21: f64,
}

impl RateMatrix {
    pub fn new(g10: f64, g12: f64, g20: f64, g21: f64) -> Result<Self> {
        let rates = Self { g10, g12, g20, g21 };
        rates.validate()?;
        Ok(rates)
    }

    pub fn zero() -> Self {
        Self {
            g10: 0.0,
            g12: 0.0,
            g20: 0.0,
            g21: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [
            ("g10", self.g10),
            ("g12", self.g12),
            ("g20", self.g20),
            ("g21", self.g21),
        ] {
            ensure(
                g >= 0.0 && g.is_finite(),
                name,
                format!("rate {g} must be finite and >= 0"),
            )?;
        }
        Ok(())
    }

    /// Rate of the jump `from → to` (zero for the diagonal and for |0⟩).
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        match (from, to) {
            (1, 0) => self.g10,
            (1, 2) => self.g12,
            (2, 0) => self.g20,
            (2, 1) => self.g21,
            _ => 0.0,
        }
    }

    pub fn exit_rate(&self, state: usize) -> f64 {
        (0..NUM_STATES).map(|to| self.rate(state, to)).sum()
    }

    /// Column-stochastic generator: `dP/dt = G·P`.
    pub fn generator(&self) -> Matrix3<f64> {
        Matrix3::new(
            0.0,
            self.g10,
            self.g20,
            0.0,
            -(self.g10 + self.g12),
            self.g21,
            0.0,
            self.g12,
            -(self.g20 + self.g21),
        )
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.g10, self.g12, self.g20, self.g21]
    }
}

/// Occupation probabilities of |0⟩, |1⟩, |2⟩.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PopulationState {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
}

impl PopulationState {
    pub fn new(p0: f64, p1: f64, p2: f64) -> Result<Self> {
        for (name, p) in [("p0", p0), ("p1", p1), ("p2", p2)] {
            ensure_probability(p, name)?;
        }
        let sum = p0 + p1 + p2;
        ensure(
            (sum - 1.0).abs() <= 1e-12,
            "populations",
            format!("sum to {sum}, not 1"),
        )?;
        Ok(Self { p0, p1, p2 })
    }

    /// All population in `state`.
    pub fn basis(state: usize) -> Result<Self> {
        ensure(
            state < NUM_STATES,
            "state",
            format!("{state} is not 0, 1 or 2"),
        )?;
        let mut p = [0.0; 3];
        p[state] = 1.0;
        Ok(Self::from_array(p))
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p0, self.p1, self.p2]
    }

    pub fn get(&self, state: usize) -> f64 {
        self.as_array()[state]
    }

    fn from_array(p: [f64; 3]) -> Self {
        Self {
            p0: p[0],
            p1: p[1],
            p2: p[2],
        }
    }

    fn from_vector(v: &Vector3<f64>) -> Self {
        // Rounding can leave −1e-17 where a population is exactly zero.
        Self::from_array([v[0].max(0.0), v[1].max(0.0), v[2].max(0.0)])
    }
}

/// `exp(A)` by scaling and squaring with a Taylor kernel.
pub fn expm3(a: &Matrix3<f64>) -> Matrix3<f64> {
    let norm = (0..3)
        .map(|c| a.column(c).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let b = a / 2f64.powi(squarings);
    let mut term = Matrix3::identity();
    let mut sum = Matrix3::identity();
    for k in 1..=24 {
        term = term * b / k as f64;
        sum += term;
        if term.amax() < 1e-18 * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Transfer matrix `exp(t·G)`; column `j` is the distribution at `t` given `j` at 0.
pub fn propagator(rates: &RateMatrix, t: f64) -> Result<Matrix3<f64>> {
    ensure(
        t >= 0.0 && t.is_finite(),
        "t",
        format!("duration {t} must be >= 0"),
    )?;
    Ok(expm3(&(rates.generator() * t)))
}

pub fn evolve_populations(
    rates: &RateMatrix,
    init: &PopulationState,
    t: f64,
) -> Result<PopulationState> {
    let u = propagator(rates, t)?;
    let p = Vector3::from(init.as_array());
    Ok(PopulationState::from_vector(&(u * p)))
}

/// Derived lifetimes (s). Undefined times are `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharacteristicTimes {
    /// `1/(Γ10 + Γ12)`: mean dwell time in the erasure state.
    pub erasure_state: f64,
    /// `1/Γ21`: mean time before a logical |2⟩ leaks into |1⟩.
    pub erasure_onset: f64,
    /// `−1/λ` for the largest nonzero generator eigenvalue λ.
    pub slowest: f64,
}

pub fn characteristic_times(rates: &RateMatrix) -> CharacteristicTimes {
    let inv = |r: f64| if r > 0.0 { 1.0 / r } else { f64::INFINITY };
    // Nonzero spectrum of G lives on the {|1⟩, |2⟩} block.
    let a = -(rates.g10 + rates.g12);
    let d = -(rates.g20 + rates.g21);
    let bc = rates.g21 * rates.g12;
    let half_trace = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + bc).max(0.0).sqrt();
    let scale = a.abs().max(d.abs());
    let slowest = [half_trace + disc, half_trace - disc]
        .into_iter()
        .filter(|l| l.abs() > 1e-12 * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    CharacteristicTimes {
        erasure_state: inv(rates.g10 + rates.g12),
        erasure_onset: inv(rates.g21),
        slowest: if slowest.is_finite() {
            -1.0 / slowest
        } else {
            f64::INFINITY
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Jump {
    pub time: f64,
    pub state: usize,
}

/// One realisation of the Markov chain over `[0, duration]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPath {
    pub initial: usize,
    pub jumps: Vec<Jump>,
    pub duration: f64,
}

impl TrajectoryPath {
    pub fn state_at(&self, t: f64) -> usize {
        let after = self.jumps.partition_point(|j| j.time <= t);
        if after == 0 {
            self.initial
        } else {
            self.jumps[after - 1].state
        }
    }

    pub fn final_state(&self) -> usize {
        self.jumps.last().map_or(self.initial, |j| j.state)
    }
}

fn pick_channel<R: Rng + ?Sized>(rates: &RateMatrix, state: usize, rng: &mut R) -> usize {
    let total = rates.exit_rate(state);
    let mut target = rng.random::<f64>() * total;
    let mut last = state;
    for to in 0..NUM_STATES {
        let r = rates.rate(state, to);
        if r > 0.0 {
            last = to;
            if target < r {
                return to;
            }
            target -= r;
        }
    }
    last
}

/// Exact (Gillespie) sampling of a trajectory of length `duration`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    rates: &RateMatrix,
    init: usize,
    duration: f64,
    rng: &mut R,
) -> Result<TrajectoryPath> {
    ensure(
        init < NUM_STATES,
        "init",
        format!("{init} is not 0, 1 or 2"),
    )?;
    ensure(
        duration >= 0.0 && duration.is_finite(),
        "duration",
        "must be >= 0",
    )?;
    let mut jumps = Vec::new();
    let mut state = init;
    let mut t = 0.0;
    loop {
        let exit = rates.exit_rate(state);
        if exit <= 0.0 {
            break;
        }
        let wait: f64 = rng.sample::<f64, _>(Exp1) / exit;
        t += wait;
        if t > duration {
            break;
        }
        state = pick_channel(rates, state, rng);
        jumps.push(Jump { time: t, state });
    }
    Ok(TrajectoryPath {
        initial: init,
        jumps,
        duration,
    })
}

/// State after evolving `state` for `dt` without recording the path.
pub fn advance<R: Rng + ?Sized>(
    rates: &RateMatrix,
    mut state: usize,
    dt: f64,
    rng: &mut R,
) -> usize {
    let mut remaining = dt;
    loop {
        let exit = rates.exit_rate(state);
        if exit <= 0.0 {
            return state;
        }
        let wait: f64 = rng.sample::<f64, _>(Exp1) / exit;
        if wait > remaining {
            return state;
        }
        remaining -= wait;
        state = pick_channel(rates, state, rng);
    }
}

/// `count` trajectories; trajectory `k` uses stream `k` of `master_seed`.
pub fn sample_ensemble(
    rates: &RateMatrix,
    init: usize,
    duration: f64,
    count: usize,
    master_seed: u64,
) -> Result<Vec<TrajectoryPath>> {
    (0..count)
        .into_par_iter()
        .map(|k| sample_trajectory(rates, init, duration, &mut substream(master_seed, k as u64)))
        .collect()
}

/// Linearised flux ramp through the |1⟩–|2⟩ avoided crossing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampSpec {
    /// ω₁₂ at the crossing (rad/s).
    pub frequency_gap: f64,
    /// Largest excursion δω₁₂ of the transition frequency (rad/s).
    pub detuning_span: f64,
    pub ramp_duration: f64,
    /// Sweep rate is `sweep_factor · detuning_span / ramp_duration`.
    pub sweep_factor: f64,
}

impl RampSpec {
    pub fn new(frequency_gap: f64, detuning_span: f64, ramp_duration: f64) -> Result<Self> {
        let ramp = Self {
            frequency_gap,
            detuning_span,
            ramp_duration,
            sweep_factor: 1.0,
        };
        ramp.validate()?;
        Ok(ramp)
    }

    pub fn with_sweep_factor(self, sweep_factor: f64) -> Result<Self> {
        let ramp = Self {
            sweep_factor,
            ..self
        };
        ramp.validate()?;
        Ok(ramp)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("frequency_gap", self.frequency_gap),
            ("detuning_span", self.detuning_span),
            ("ramp_duration", self.ramp_duration),
            ("sweep_factor", self.sweep_factor),
        ] {
            ensure(
                v > 0.0 && v.is_finite(),
                name,
                "must be positive and finite",
            )?;
        }
        Ok(())
    }

    /// dω₁₂/dt (rad/s²).
    pub fn sweep_rate(&self) -> f64 {
        self.sweep_factor * self.detuning_span / self.ramp_duration
    }
}

/// Natural log of the Landau–Zener transition probability, `−π ω₁₂² / ω̇₁₂`.
pub fn lz_exponent(ramp: &RampSpec) -> f64 {
    -std::f64::consts::PI * ramp.frequency_gap * ramp.frequency_gap / ramp.sweep_rate()
}

/// Probability of a non-adiabatic transition during the ramp.
pub fn lz_error(ramp: &RampSpec) -> f64 {
    lz_exponent(ramp).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use proptest::prelude::*;

    /// Fixed-step RK4 on the master equations.
    fn integrate(rates: &RateMatrix, init: [f64; 3], t: f64, step: f64) -> [f64; 3] {
        let g = rates.generator();
        let mut p = Vector3::from(init);
        let steps = (t / step).round() as usize;
        let h = t / steps as f64;
        for _ in 0..steps {
            let k1 = g * p;
            let k2 = g * (p + k1 * (h / 2.0));
            let k3 = g * (p + k2 * (h / 2.0));
            let k4 = g * (p + k3 * h);
            p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        [p[0], p[1], p[2]]
    }

    #[test]
    fn matches_fine_step_integration() {
        let rates = presets::zero_flux_rates();
        let init = PopulationState::basis(2).unwrap();
        let got = evolve_populations(&rates, &init, 40e-6).unwrap();
        let oracle = integrate(&rates, init.as_array(), 40e-6, 1e-9);
        for k in 0..3 {
            assert!((got.get(k) - oracle[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_rates_leave_state_unchanged() {
        let init = PopulationState::new(0.2, 0.3, 0.5).unwrap();
        let out = evolve_populations(&RateMatrix::zero(), &init, 1.0).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn ground_state_absorbs() {
        let rates = presets::zero_flux_rates();
        let out = evolve_populations(&rates, &PopulationState::basis(2).unwrap(), 0.05).unwrap();
        assert!((out.p0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_time_rejected() {
        let init = PopulationState::basis(0).unwrap();
        assert!(evolve_populations(&RateMatrix::zero(), &init, -1.0).is_err());
    }

    #[test]
    fn propagator_columns_sum_to_one() {
        let u = propagator(&presets::zero_flux_rates(), 123e-6).unwrap();
        for c in 0..3 {
            assert!((u.column(c).sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn reference_device_characteristic_times() {
        let times = characteristic_times(&presets::zero_flux_rates());
        assert!((times.erasure_state / 75.8e-6 - 1.0).abs() < 0.005);
        assert!((times.erasure_onset / 131.5e-6 - 1.0).abs() < 0.005);
        // slowest mode of the |1⟩,|2⟩ block
        assert!(times.slowest > times.erasure_state);
    }

    #[test]
    fn infinite_times_for_missing_channels() {
        let rates = RateMatrix::new(0.0, 0.0, 0.0, 5.0).unwrap();
        let times = characteristic_times(&rates);
        assert!(times.erasure_state.is_infinite());
        assert!((times.erasure_onset - 0.2).abs() < 1e-15);
        let none = characteristic_times(&RateMatrix::zero());
        assert!(none.slowest.is_infinite());
    }

    #[test]
    fn trajectory_from_ground_never_jumps() {
        let rates = presets::zero_flux_rates();
        let mut rng = substream(1, 0);
        for _ in 0..100 {
            let path = sample_trajectory(&rates, 0, 1e-3, &mut rng).unwrap();
            assert!(path.jumps.is_empty());
        }
        let frozen = sample_trajectory(&RateMatrix::zero(), 2, 1.0, &mut rng).unwrap();
        assert!(frozen.jumps.is_empty());
    }

    #[test]
    fn trajectory_path_invariants() {
        let rates = presets::zero_flux_rates();
        let mut rng = substream(3, 9);
        for _ in 0..200 {
            let path = sample_trajectory(&rates, 2, 500e-6, &mut rng).unwrap();
            let mut prev_state = path.initial;
            let mut prev_time = 0.0;
            for jump in &path.jumps {
                assert!(jump.time > prev_time && jump.time <= path.duration);
                assert_ne!(jump.state, prev_state);
                assert!(rates.rate(prev_state, jump.state) > 0.0);
                prev_state = jump.state;
                prev_time = jump.time;
            }
        }
    }

    #[test]
    fn ensemble_matches_master_equation() {
        let rates = presets::zero_flux_rates();
        let shots = 20_000;
        let t = 50e-6;
        let paths = sample_ensemble(&rates, 2, t, shots, 11).unwrap();
        let exact = evolve_populations(&rates, &PopulationState::basis(2).unwrap(), t).unwrap();
        for s in 0..3 {
            let count = paths.iter().filter(|p| p.state_at(t) == s).count();
            let p = exact.get(s);
            let sigma = (p * (1.0 - p) / shots as f64).sqrt();
            assert!((count as f64 / shots as f64 - p).abs() < 3.0 * sigma + 1e-12);
        }
    }

    #[test]
    fn lz_limits_and_reference_ramp() {
        let ramp = presets::eol_ramp();
        assert!(lz_error(&ramp) <= 1e-20);
        let sudden = RampSpec::new(1e-6, ramp.detuning_span, ramp.ramp_duration).unwrap();
        assert!((lz_error(&sudden) - 1.0).abs() < 1e-15);
        let slow = RampSpec::new(1e3, 1e3, 1e3).unwrap();
        assert!(lz_error(&slow) < 1e-300);
        assert!(RampSpec::new(0.0, 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn probability_is_conserved(
            g in prop::array::uniform4(0.0f64..2e4),
            log_t in -8.0f64..-1.0,
        ) {
            let rates = RateMatrix::new(g[0], g[1], g[2], g[3]).unwrap();
            let init = PopulationState::new(0.1, 0.3, 0.6).unwrap();
            let out = evolve_populations(&rates, &init, 10f64.powf(log_t)).unwrap();
            prop_assert!((out.p0 + out.p1 + out.p2 - 1.0).abs() < 1e-12);
        }

        #[test]
        fn semigroup(g in prop::array::uniform4(0.0f64..2e4), t1 in 0.0f64..3e-4, t2 in 0.0f64..3e-4) {
            let rates = RateMatrix::new(g[0], g[1], g[2], g[3]).unwrap();
            let init = PopulationState::basis(2).unwrap();
            let direct = evolve_populations(&rates, &init, t1 + t2).unwrap();
            let mid = evolve_populations(&rates, &init, t1).unwrap();
            let mid = PopulationState { p0: mid.p0, p1: mid.p1, p2: mid.p2 };
            let composed = evolve_populations(&rates, &mid, t2).unwrap();
            for k in 0..3 {
                prop_assert!((direct.get(k) - composed.get(k)).abs() < 1e-10);
            }
        }

        #[test]
        fn ground_population_is_monotone(g10 in 1.0f64..2e4, g12 in 0.0f64..2e4, g20 in 0.0f64..2e4, g21 in 0.0f64..2e4) {
            let rates = RateMatrix::new(g10, g12, g20, g21).unwrap();
            let init = PopulationState::basis(2).unwrap();
            let mut last = 0.0;
            for k in 0..40 {
                let p0 = evolve_populations(&rates, &init, k as f64 * 2e-5).unwrap().p0;
                prop_assert!(p0 >= last - 1e-14);
                last = p0;
            }
        }

        #[test]
        fn lz_monotonicity(gap in 1e6f64..1e9, span in 1e6f64..1e9, dur in 1e-9f64..1e-6) {
            let base = RampSpec::new(gap, span, dur).unwrap();
            let wider = RampSpec::new(gap * 1.1, span, dur).unwrap();
            let faster = RampSpec::new(gap, span * 1.1, dur).unwrap();
            prop_assert!(lz_exponent(&wider) < lz_exponent(&base));
            prop_assert!(lz_exponent(&faster) > lz_exponent(&base));
        }
    }
}
