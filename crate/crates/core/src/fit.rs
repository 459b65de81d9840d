//! Nonlinear least-squares fitting.
//!
//! A bounded Levenberg–Marquardt engine ([`least_squares`]) drives four
//! model fits: joint relaxation-rate fits of decay data, the dephasing-map
//! fit for the bare resonator frequency, single exponentials, and Ramsey
//! fringes. Parameter uncertainties come from the Jacobian at the optimum,
//! and parameters the data cannot pin down are flagged rather than dropped.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagator, RateMatrix};
use crate::error::{ensure, Error, Result};
use crate::readout::{dephasing_rate, ReadoutConfig};
use crate::rng::auxiliary_stream;

/// A parameter whose estimate lies within this many standard errors of zero
/// is not resolved by the data and is reported as unidentifiable.
pub const RESOLUTION_SIGMAS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            step_tolerance: 1e-10,
            cost_tolerance: 1e-12,
        }
    }
}

/// Outcome of [`least_squares`].
#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub residual_count: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Jacobian of the residuals at `params`.
    pub jacobian: DMatrix<f64>,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

impl LmReport {
    /// Parameter covariance, scaled by the reduced χ². Entries along
    /// directions the Jacobian cannot resolve are infinite.
    pub fn covariance(&self) -> DMatrix<f64> {
        let p = self.params.len();
        let dof = self.residual_count.saturating_sub(p);
        let scale = if dof > 0 { self.cost / dof as f64 } else { 1.0 };
        let norms: Vec<f64> = (0..p).map(|j| self.jacobian.column(j).norm()).collect();
        let mut cov = DMatrix::zeros(p, p);
        let mut blind = vec![false; p];
        for j in 0..p {
            if norms[j] == 0.0 || !norms[j].is_finite() {
                blind[j] = true;
            }
        }
        let scaled = DMatrix::from_fn(self.jacobian.nrows(), p, |r, c| {
            if blind[c] {
                0.0
            } else {
                self.jacobian[(r, c)] / norms[c]
            }
        });
        let svd = scaled.svd(false, true);
        let vt = svd.v_t.expect("requested V");
        let s_max = svd.singular_values.max();
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s <= 1e-9 * s_max || s == 0.0 {
                for j in 0..p {
                    if vt[(k, j)].abs() > 1e-6 {
                        blind[j] = true;
                    }
                }
                continue;
            }
            for a in 0..p {
                for b in 0..p {
                    cov[(a, b)] += vt[(k, a)] * vt[(k, b)] / (s * s);
                }
            }
        }
        for a in 0..p {
            for b in 0..p {
                cov[(a, b)] = if blind[a] || blind[b] {
                    if a == b {
                        f64::INFINITY
                    } else {
                        f64::NAN
                    }
                } else {
                    scale * cov[(a, b)] / (norms[a] * norms[b])
                };
            }
        }
        cov
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        let cov = self.covariance();
        (0..self.params.len()).map(|j| cov[(j, j)].sqrt()).collect()
    }
}

fn numerical_jacobian<F>(f: &F, p: &[f64], lower: &[f64], upper: &[f64], m: usize) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut jac = DMatrix::zeros(m, p.len());
    let mut probe = p.to_vec();
    for j in 0..p.len() {
        let h = (1e-6 * p[j].abs()).max(1e-12);
        let hi = (p[j] + h).min(upper[j]);
        let lo = (p[j] - h).max(lower[j]);
        if hi <= lo {
            continue;
        }
        probe[j] = hi;
        let r_hi = f(&probe);
        probe[j] = lo;
        let r_lo = f(&probe);
        probe[j] = p[j];
        for i in 0..m {
            jac[(i, j)] = (r_hi[i] - r_lo[i]) / (hi - lo);
        }
    }
    jac
}

fn clamp(p: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((x, &lo), &hi) in p.iter_mut().zip(lower).zip(upper) {
        *x = x.clamp(lo, hi);
    }
}

fn sum_squares(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Minimizes `Σ r_i(p)²` subject to `lower ≤ p ≤ upper` by damped
/// Gauss–Newton with Marquardt scaling and central-difference Jacobians.
pub fn least_squares<F>(
    residuals: F,
    p0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LmOptions,
) -> Result<LmReport>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = p0.len();
    ensure(
        n > 0 && lower.len() == n && upper.len() == n,
        "bounds",
        "length mismatch",
    )?;
    let mut p = p0.to_vec();
    clamp(&mut p, lower, upper);
    let mut r = residuals(&p);
    let m = r.len();
    ensure(
        m >= n,
        "data",
        format!("{m} residuals cannot determine {n} parameters"),
    )?;
    let mut cost = sum_squares(&r);
    if !cost.is_finite() {
        return Err(Error::FitDivergence {
            iterations: 0,
            reason: "non-finite residuals at the starting point".into(),
        });
    }
    let mut history = vec![cost];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = numerical_jacobian(&residuals, &p, lower, upper, m);
    while iterations < opts.max_iterations {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let rv = DVector::from_column_slice(&r);
        let gradient = jac.transpose() * &rv;
        let normal = jac.transpose() * &jac;
        let diag_floor = normal.diagonal().max() * 1e-15 + f64::MIN_POSITIVE;
        let mut accepted = None;
        while lambda < 1e20 {
            let mut damped = normal.clone();
            for j in 0..n {
                damped[(j, j)] += lambda * normal[(j, j)].max(diag_floor);
            }
            let Some(step) = damped.lu().solve(&(-&gradient)) else {
                lambda *= 4.0;
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp(&mut trial, lower, upper);
            let r_trial = residuals(&trial);
            let c_trial = sum_squares(&r_trial);
            if c_trial.is_finite() && c_trial <= cost {
                accepted = Some((trial, r_trial, c_trial));
                break;
            }
            lambda *= 4.0;
        }
        let Some((trial, r_trial, c_trial)) = accepted else {
            // No damping yields descent: a minimum to working precision.
            converged = true;
            break;
        };
        let step_norm = p
            .iter()
            .zip(&trial)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let p_norm = p.iter().map(|a| a * a).sum::<f64>().sqrt();
        let relative_drop = (cost - c_trial) / cost;
        p = trial;
        r = r_trial;
        cost = c_trial;
        history.push(cost);
        lambda = (lambda / 3.0).max(1e-12);
        jac = numerical_jacobian(&residuals, &p, lower, upper, m);
        if step_norm <= opts.step_tolerance * (p_norm + opts.step_tolerance)
            || relative_drop < opts.cost_tolerance
        {
            converged = true;
            break;
        }
    }
    if p.iter().any(|x| !x.is_finite()) {
        return Err(Error::FitDivergence {
            iterations,
            reason: "parameters became non-finite".into(),
        });
    }
    Ok(LmReport {
        params: p,
        cost,
        residual_count: m,
        iterations,
        converged,
        jacobian: jac,
        cost_history: history,
    })
}

fn require_converged(report: &LmReport) -> Result<()> {
    if report.converged {
        Ok(())
    } else {
        Err(Error::FitDivergence {
            iterations: report.iterations,
            reason: format!("tolerances not met (cost {:.3e})", report.cost),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    /// `None` when the data do not constrain the parameter at all.
    pub standard_error: Option<f64>,
    pub unidentifiable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    /// The data show no decay within the sampled window.
    NonDecaying,
    /// The sampling interval exceeds the Nyquist limit of the fitted detuning.
    AliasedDetuning,
    /// No oscillation contrast is present.
    ZeroContrast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: Vec<FitParameter>,
    /// Euclidean norm of the (weighted) residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub flags: Vec<FitFlag>,
}

impl FitResult {
    pub fn parameter(&self, name: &str) -> Option<&FitParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Value of `name`; panics on unknown names.
    pub fn value(&self, name: &str) -> f64 {
        self.parameter(name)
            .unwrap_or_else(|| panic!("no fit parameter `{name}`"))
            .value
    }

    pub fn standard_error(&self, name: &str) -> Option<f64> {
        self.parameter(name).and_then(|p| p.standard_error)
    }

    pub fn is_unidentifiable(&self, name: &str) -> bool {
        self.parameter(name).is_some_and(|p| p.unidentifiable)
    }

    pub fn has_flag(&self, flag: FitFlag) -> bool {
        self.flags.contains(&flag)
    }
}

fn parameter(name: &str, value: f64, se: f64) -> FitParameter {
    let finite = se.is_finite();
    FitParameter {
        name: name.to_string(),
        value,
        standard_error: finite.then_some(se),
        unidentifiable: !finite || RESOLUTION_SIGMAS * se > value.abs(),
    }
}

fn result(parameters: Vec<FitParameter>, report: &LmReport, flags: Vec<FitFlag>) -> FitResult {
    FitResult {
        parameters,
        residual_norm: report.cost.sqrt(),
        iterations: report.iterations,
        converged: report.converged,
        flags,
    }
}

fn weight(sigma: Option<f64>) -> f64 {
    match sigma {
        Some(s) if s > 0.0 => 1.0 / s,
        _ => 1.0,
    }
}

// ---------------------------------------------------------------------------
// Relaxation rates

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub t: f64,
    pub populations: [f64; 3],
    /// Uncertainty of each population; uniform weights when absent.
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySeries {
    pub initial_state: usize,
    pub points: Vec<DecayPoint>,
}

/// Population decay measured from |1⟩ and from |2⟩.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayDataset {
    pub series: Vec<DecaySeries>,
}

pub const MIN_DECAY_POINTS: usize = 8;

impl DecayDataset {
    pub fn validate(&self) -> Result<()> {
        ensure(!self.series.is_empty(), "series", "dataset is empty")?;
        for s in &self.series {
            ensure(
                s.initial_state == 1 || s.initial_state == 2,
                "initial_state",
                "must be 1 or 2",
            )?;
            ensure(
                s.points.len() >= MIN_DECAY_POINTS,
                "points",
                format!("each series needs at least {MIN_DECAY_POINTS} time points"),
            )?;
            for p in &s.points {
                ensure(p.t >= 0.0 && p.t.is_finite(), "t", "times must be >= 0")?;
                ensure(
                    p.populations.iter().all(|x| (0.0..=1.0).contains(x)),
                    "populations",
                    "must lie in [0, 1]",
                )?;
                let sum: f64 = p.populations.iter().sum();
                ensure(
                    (0.9..=1.1).contains(&sum),
                    "populations",
                    format!("sum {sum} outside [0.9, 1.1]"),
                )?;
            }
        }
        Ok(())
    }

    /// Noise-free data generated from `rates`.
    pub fn synthesize(rates: &RateMatrix, times: &[f64]) -> Result<Self> {
        let series = [1, 2]
            .into_iter()
            .map(|init| {
                let points = times
                    .iter()
                    .map(|&t| {
                        let u = propagator(rates, t)?;
                        Ok(DecayPoint {
                            t,
                            populations: [u[(0, init)], u[(1, init)], u[(2, init)]]
                                .map(|x| x.clamp(0.0, 1.0)),
                            sigma: None,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(DecaySeries {
                    initial_state: init,
                    points,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { series })
    }

    /// Adds Gaussian noise of standard deviation `sigma` to every population,
    /// clamping to [0, 1], and records `sigma` as the uncertainty.
    ///
    /// Like measured state fractions, the three noise terms of a point sum
    /// to zero: they are independent draws with their mean removed, rescaled
    /// by √(3/2) to keep the per-population standard deviation at `sigma`.
    pub fn with_noise<R: Rng + ?Sized>(mut self, sigma: f64, rng: &mut R) -> Self {
        let scale = sigma * 1.5f64.sqrt();
        for s in &mut self.series {
            for p in &mut s.points {
                let z: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let mean = z.iter().sum::<f64>() / 3.0;
                for (x, zk) in p.populations.iter_mut().zip(z) {
                    *x = (*x + scale * (zk - mean)).clamp(0.0, 1.0);
                }
                p.sigma = Some(sigma);
            }
        }
        self
    }

    fn residuals(&self, rates: &RateMatrix) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.residual_count());
        for s in &self.series {
            for p in &s.points {
                let w = weight(p.sigma);
                match propagator(rates, p.t) {
                    Ok(u) => {
                        for k in 0..3 {
                            out.push(w * (u[(k, s.initial_state)] - p.populations[k]));
                        }
                    }
                    Err(_) => out.extend([f64::NAN; 3]),
                }
            }
        }
        out
    }

    fn residual_count(&self) -> usize {
        3 * self.series.iter().map(|s| s.points.len()).sum::<usize>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RateParameterization {
    /// Fit `ln Γ`, which keeps every rate positive.
    #[default]
    Log,
    /// Fit `Γ` directly with a lower bound of zero.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFitOptions {
    pub parameterization: RateParameterization,
    pub starts: usize,
    /// Seeds the perturbations of the extra starting points.
    pub seed: u64,
    pub lm: LmOptions,
}

impl Default for RateFitOptions {
    fn default() -> Self {
        Self {
            parameterization: RateParameterization::Log,
            starts: 5,
            seed: 0,
            lm: LmOptions::default(),
        }
    }
}

const RATE_NAMES: [&str; 4] = ["g10", "g12", "g20", "g21"];

fn rates_from(values: &[f64]) -> RateMatrix {
    RateMatrix {
        g10: values[0],
        g12: values[1],
        g20: values[2],
        g21: values[3],
    }
}

/// Joint fit of the four relaxation rates to decay data from |1⟩ and |2⟩.
pub fn fit_rates(data: &DecayDataset, initial_guess: &RateMatrix) -> Result<FitResult> {
    fit_rates_with(data, initial_guess, &RateFitOptions::default())
}

pub fn fit_rates_with(
    data: &DecayDataset,
    initial_guess: &RateMatrix,
    opts: &RateFitOptions,
) -> Result<FitResult> {
    data.validate()?;
    initial_guess.validate()?;
    ensure(opts.starts >= 1, "starts", "need at least one start")?;
    let guess = initial_guess.as_array();
    let scale = guess.iter().cloned().fold(0.0, f64::max);
    ensure(
        scale > 0.0,
        "initial_guess",
        "at least one rate must be positive",
    )?;
    // Zero guesses cannot be perturbed multiplicatively (or logged).
    let floor = 1e-2 * scale;
    let guess = guess.map(|g| g.max(floor));

    let log = opts.parameterization == RateParameterization::Log;
    let g_min = 1e-9 * scale;
    let g_max = 1e4 * scale;
    let (lower, upper) = if log {
        (vec![g_min.ln(); 4], vec![g_max.ln(); 4])
    } else {
        (vec![0.0; 4], vec![g_max; 4])
    };
    let to_rates = |q: &[f64]| -> Vec<f64> {
        if log {
            q.iter().map(|x| x.exp()).collect()
        } else {
            q.to_vec()
        }
    };
    let residuals = |q: &[f64]| data.residuals(&rates_from(&to_rates(q)));

    let starts: Vec<[f64; 4]> = (0..opts.starts)
        .map(|k| {
            if k == 0 {
                return guess;
            }
            let mut rng = auxiliary_stream(opts.seed, k as u64);
            guess.map(|g| {
                let z: f64 = rng.sample(StandardNormal);
                g * (0.5 * z).exp()
            })
        })
        .collect();
    let reports: Vec<Result<LmReport>> = starts
        .par_iter()
        .map(|s| {
            let q0: Vec<f64> = if log {
                s.iter().map(|g| g.ln()).collect()
            } else {
                s.to_vec()
            };
            least_squares(residuals, &q0, &lower, &upper, &opts.lm)
        })
        .collect();
    let best = reports
        .into_iter()
        .filter_map(|r| r.ok())
        .filter(|r| r.converged)
        .min_by(|a, b| {
            let tie = 1e-12 * a.cost.max(b.cost);
            if (a.cost - b.cost).abs() <= tie {
                let norm = |r: &LmReport| to_rates(&r.params).iter().map(|x| x * x).sum::<f64>();
                norm(a).total_cmp(&norm(b))
            } else {
                a.cost.total_cmp(&b.cost)
            }
        })
        .ok_or_else(|| Error::FitDivergence {
            iterations: opts.lm.max_iterations,
            reason: "no start converged".into(),
        })?;

    let values = to_rates(&best.params);
    let se_q = best.standard_errors();
    let parameters = (0..4)
        .map(|j| {
            // Delta method for the log parameterization.
            let se = if log { values[j] * se_q[j] } else { se_q[j] };
            parameter(RATE_NAMES[j], values[j], se)
        })
        .collect();
    Ok(result(parameters, &best, Vec::new()))
}

// ---------------------------------------------------------------------------
// Measurement-induced dephasing

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DephasingPoint {
    pub photon_number: f64,
    pub drive_frequency: f64,
    /// Measured total dephasing rate Γ_φ (s⁻¹).
    pub gamma_phi: f64,
    pub sigma: Option<f64>,
}

pub const MIN_DEPHASING_POINTS: usize = 6;

/// Model value Γ_m(n, ω_d; ω_r⁰) + Γ'_φ.
pub fn dephasing_model(
    fixed: &ReadoutConfig,
    omega_bare: f64,
    residual: f64,
    point: &DephasingPoint,
) -> f64 {
    let cfg = ReadoutConfig {
        omega_bare,
        photon_number: point.photon_number,
        drive_frequency: point.drive_frequency,
        ..*fixed
    };
    dephasing_rate(&cfg) + residual
}

/// Fits the residual dephasing rate Γ'_φ and the bare resonator frequency
/// ω_r⁰ to a map of measured dephasing rates. `fixed.omega_bare`,
/// `fixed.photon_number` and `fixed.drive_frequency` are ignored.
pub fn fit_dephasing(map: &[DephasingPoint], fixed: &ReadoutConfig) -> Result<FitResult> {
    ensure(
        map.len() >= MIN_DEPHASING_POINTS,
        "map",
        format!("need at least {MIN_DEPHASING_POINTS} points"),
    )?;
    let distinct = |key: fn(&DephasingPoint) -> f64| {
        let mut v: Vec<f64> = map.iter().map(key).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    ensure(
        distinct(|p| p.photon_number) >= 2,
        "map",
        "must span at least two photon numbers",
    )?;
    if distinct(|p| p.drive_frequency) < 2 {
        return Err(Error::DegenerateData(
            "all points share one drive frequency; ω_r⁰ is only determined up to reflection".into(),
        ));
    }
    let kappa = fixed.kappa;
    let reference = map.iter().map(|p| p.drive_frequency).sum::<f64>() / map.len() as f64;
    let bare = |x: f64| reference + x * kappa;
    let residuals = |q: &[f64]| -> Vec<f64> {
        map.iter()
            .map(|p| weight(p.sigma) * (dephasing_model(fixed, bare(q[1]), q[0], p) - p.gamma_phi))
            .collect()
    };

    // Coarse scan over ω_r⁰ with Γ'_φ solved in closed form at each offset.
    let best_residual = |x: f64| -> (f64, f64) {
        let (mut num, mut den) = (0.0, 0.0);
        for p in map {
            let w = weight(p.sigma).powi(2);
            num += w * (p.gamma_phi - dephasing_model(fixed, bare(x), 0.0, p));
            den += w;
        }
        let g = (num / den).max(0.0);
        (g, sum_squares(&residuals(&[g, x])))
    };
    let mut start = (0.0, best_residual(0.0).0, best_residual(0.0).1);
    for k in -400..=400 {
        let x = 0.1 * k as f64;
        let (g, cost) = best_residual(x);
        if cost < start.2 {
            start = (x, g, cost);
        }
    }
    let span = map
        .iter()
        .map(|p| (p.drive_frequency - reference).abs())
        .fold(0.0, f64::max)
        / kappa;
    let limit = 100.0 + 10.0 * span;
    let report = least_squares(
        residuals,
        &[start.1, start.0],
        &[0.0, -limit],
        &[f64::INFINITY, limit],
        &LmOptions::default(),
    )?;
    require_converged(&report)?;
    let se = report.standard_errors();
    let omega = bare(report.params[1]);
    let mut omega_param = parameter("omega_r0", omega, se[1] * kappa);
    // Γ_m depends on ω_r⁰ only through the detuning; judge identifiability on that scale.
    let detuning_scale = (omega - reference).abs().max(kappa);
    omega_param.unidentifiable = !(RESOLUTION_SIGMAS * se[1] * kappa <= detuning_scale);
    Ok(result(
        vec![
            parameter("gamma_phi_residual", report.params[0], se[0]),
            omega_param,
        ],
        &report,
        Vec::new(),
    ))
}

// ---------------------------------------------------------------------------
// Exponential decay

fn bounded_offset_ls(
    t: &[f64],
    y: &[f64],
    w: &[f64],
    rate: f64,
    c_bounds: (f64, f64),
) -> (f64, f64, f64) {
    // Weighted linear least squares for y ≈ a·e^{−rate·t} + c with c clamped.
    let (mut swe, mut swee, mut sw, mut swy, mut swey) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&ti, &yi), &wi) in t.iter().zip(y).zip(w) {
        let e = (-rate * ti).exp();
        let w2 = wi * wi;
        sw += w2;
        swe += w2 * e;
        swee += w2 * e * e;
        swy += w2 * yi;
        swey += w2 * e * yi;
    }
    let det = sw * swee - swe * swe;
    let (mut a, mut c) = if det.abs() > 1e-14 * sw * swee {
        (
            (sw * swey - swe * swy) / det,
            (swee * swy - swe * swey) / det,
        )
    } else {
        (0.0, swy / sw)
    };
    if c < c_bounds.0 || c > c_bounds.1 {
        c = c.clamp(c_bounds.0, c_bounds.1);
        a = if swee > 0.0 {
            (swey - c * swe) / swee
        } else {
            0.0
        };
    }
    let cost = t
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&ti, &yi), &wi)| (wi * (a * (-rate * ti).exp() + c - yi)).powi(2))
        .sum();
    (a, c, cost)
}

/// Fits `a·exp(−t/T) + c`. Returns parameters `amplitude`, `T`, `offset`.
pub fn fit_exponential(points: &[(f64, f64)]) -> Result<FitResult> {
    fit_exponential_weighted(points, None, (f64::NEG_INFINITY, f64::INFINITY))
}

/// As [`fit_exponential`], with optional per-point σ and bounds on the offset.
pub fn fit_exponential_weighted(
    points: &[(f64, f64)],
    sigma: Option<&[f64]>,
    offset_bounds: (f64, f64),
) -> Result<FitResult> {
    ensure(points.len() >= 4, "points", "need at least 4 points")?;
    ensure(
        offset_bounds.0 <= offset_bounds.1,
        "offset_bounds",
        "lower exceeds upper",
    )?;
    if let Some(s) = sigma {
        ensure(
            s.len() == points.len(),
            "sigma",
            "one uncertainty per point",
        )?;
    }
    let t: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    ensure(
        t.iter().chain(&y).all(|v| v.is_finite()),
        "points",
        "must be finite",
    )?;
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|&x| weight(Some(x))).collect(),
        None => vec![1.0; points.len()],
    };
    let t_min = t.iter().cloned().fold(f64::INFINITY, f64::min);
    let span = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - t_min;
    ensure(span > 0.0, "points", "times must not all coincide")?;
    let y_scale = y
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);

    // Decay rate k = 1/T is fitted so that "no decay" sits at k = 0 inside the domain.
    // (a, c) enter linearly, so the cost is first minimized over k alone.
    let profile = |k: f64| bounded_offset_ls(&t, &y, &w, k, offset_bounds);
    let log_k = |j: f64| 10f64.powf(-3.0 + 5.0 * j / 120.0) / span;
    let best_j = (0..=120)
        .min_by(|&i, &j| {
            profile(log_k(i as f64))
                .2
                .total_cmp(&profile(log_k(j as f64)).2)
        })
        .unwrap_or(0) as f64;
    let (mut lo, mut hi) = ((best_j - 1.0).max(0.0), (best_j + 1.0).min(120.0));
    const GOLDEN: f64 = 0.618_033_988_749_894_8;
    for _ in 0..80 {
        let m1 = hi - GOLDEN * (hi - lo);
        let m2 = lo + GOLDEN * (hi - lo);
        if profile(log_k(m1)).2 <= profile(log_k(m2)).2 {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let k0 = log_k(0.5 * (lo + hi));
    let (a0, c0, _) = profile(k0);
    let residuals = |q: &[f64]| -> Vec<f64> {
        t.iter()
            .zip(&y)
            .zip(&w)
            .map(|((&ti, &yi), &wi)| wi * (q[0] * (-q[1] * ti).exp() + q[2] - yi))
            .collect()
    };
    let lower = [f64::NEG_INFINITY, 0.0, offset_bounds.0];
    let upper = [f64::INFINITY, 1e6 / span, offset_bounds.1];
    let start = [a0, k0, c0];
    let mut report = least_squares(&residuals, &start, &lower, &upper, &LmOptions::default())?;
    if !report.converged {
        // The polish can crawl along the near-degenerate amplitude/offset
        // valley; the profiled optimum is already converged in k.
        let r = residuals(&start);
        report = LmReport {
            params: start.to_vec(),
            cost: sum_squares(&r),
            residual_count: r.len(),
            iterations: report.iterations,
            converged: true,
            jacobian: numerical_jacobian(&residuals, &start, &lower, &upper, r.len()),
            cost_history: report.cost_history,
        };
    }
    require_converged(&report)?;
    let [a, k, c] = [report.params[0], report.params[1], report.params[2]];
    let se = report.standard_errors();
    let decay = a.abs() * (1.0 - (-k * span).exp());
    let non_decaying = decay <= 1e-9 * y_scale || k <= 1e-9 / span;
    let mut flags = Vec::new();
    let t_param = if non_decaying {
        flags.push(FitFlag::NonDecaying);
        FitParameter {
            name: "T".into(),
            value: f64::INFINITY,
            standard_error: None,
            unidentifiable: true,
        }
    } else {
        parameter("T", 1.0 / k, se[1] / (k * k))
    };
    Ok(result(
        vec![
            parameter("amplitude", a, se[0]),
            t_param,
            parameter("offset", c, se[2]),
        ],
        &report,
        flags,
    ))
}

// ---------------------------------------------------------------------------
// Ramsey fringes

/// `offset + amplitude·exp(−t/T2)·cos(detuning·t + phase)`.
pub fn ramsey_model(
    t: f64,
    amplitude: f64,
    t2: f64,
    detuning: f64,
    phase: f64,
    offset: f64,
) -> f64 {
    offset + amplitude * (-t / t2).exp() * (detuning * t + phase).cos()
}

/// Fits Ramsey fringes. Parameters: `T2`, `detuning`, `phase`, `offset`, `amplitude`.
pub fn fit_ramsey(points: &[(f64, f64)]) -> Result<FitResult> {
    ensure(points.len() >= 10, "points", "need at least 10 points")?;
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let t: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    ensure(
        t.iter().chain(&y).all(|v| v.is_finite()),
        "points",
        "must be finite",
    )?;
    let span = t[t.len() - 1] - t[0];
    ensure(span > 0.0, "points", "times must not all coincide")?;
    let max_gap = t.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let min_gap = t
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&g| g > 0.0)
        .fold(f64::INFINITY, f64::min);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let spread = y.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);

    let residuals = |q: &[f64]| -> Vec<f64> {
        t.iter()
            .zip(&y)
            .map(|(&ti, &yi)| q[0] * (-q[1] * ti).exp() * (q[2] * ti + q[3]).cos() + q[4] - yi)
            .collect()
    };
    let contrast_floor = 1e-9 * mean.abs().max(1e-300);
    let (start, zero_contrast) = if spread <= contrast_floor {
        ([0.0, 1.0 / span, 0.0, 0.0, mean], true)
    } else {
        // Periodogram over frequencies up to the Nyquist limit of the finest
        // spacing, then a scan of decay rates at the chosen frequency.
        let nyquist = std::f64::consts::PI / min_gap;
        let candidates = 4000;
        let mut best = (0.0, 0.0, -1.0);
        for j in 0..=candidates {
            let f = nyquist * j as f64 / candidates as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (&ti, &yi) in t.iter().zip(&y) {
                re += (yi - mean) * (f * ti).cos();
                im -= (yi - mean) * (f * ti).sin();
            }
            let power = re * re + im * im;
            if power > best.2 {
                best = (f, im.atan2(re), power);
            }
        }
        let (f, phase) = (best.0, best.1);
        let mut seed = [0.0, 0.0, f, phase, mean];
        let mut seed_cost = f64::INFINITY;
        for j in 0..=60 {
            let gamma = 10f64.powf(-2.0 + 3.0 * j as f64 / 60.0) / span;
            // amplitude by linear least squares at fixed shape
            let (mut num, mut den) = (0.0, 0.0);
            for (&ti, &yi) in t.iter().zip(&y) {
                let basis = (-gamma * ti).exp() * (f * ti + phase).cos();
                num += basis * (yi - mean);
                den += basis * basis;
            }
            let amp = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
            let q = [amp, gamma, f, phase, mean];
            let cost = sum_squares(&residuals(&q));
            if cost < seed_cost {
                seed = q;
                seed_cost = cost;
            }
        }
        (seed, false)
    };
    let report = least_squares(
        residuals,
        &start,
        &[0.0, 0.0, 0.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
        &[
            f64::INFINITY,
            1e6 / span,
            f64::INFINITY,
            f64::INFINITY,
            f64::INFINITY,
        ],
        &LmOptions::default(),
    )?;
    require_converged(&report)?;
    let q = &report.params;
    let se = report.standard_errors();
    let phase =
        (q[3] + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    let mut flags = Vec::new();
    let amp_param = parameter("amplitude", q[0], se[0]);
    let zero_contrast = zero_contrast || amp_param.unidentifiable;
    let t2 = if zero_contrast || q[1] == 0.0 {
        if zero_contrast {
            flags.push(FitFlag::ZeroContrast);
        }
        FitParameter {
            name: "T2".into(),
            value: if q[1] > 0.0 {
                1.0 / q[1]
            } else {
                f64::INFINITY
            },
            standard_error: None,
            unidentifiable: true,
        }
    } else {
        parameter("T2", 1.0 / q[1], se[1] / (q[1] * q[1]))
    };
    if q[2] > 0.0 && max_gap > std::f64::consts::PI / q[2] {
        flags.push(FitFlag::AliasedDetuning);
    }
    Ok(result(
        vec![
            t2,
            parameter("detuning", q[2], se[2]),
            parameter("phase", phase, se[3]),
            parameter("offset", q[4], se[4]),
            amp_param,
        ],
        &report,
        flags,
    ))
}
