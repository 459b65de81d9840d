//! Monte Carlo simulation of the erasure-check experiments.
//!
//! Every shot starts in `init_state` and runs `m` cycles, each an idle
//! interval `t_EC` followed by an erasure check of length `t_meas`. The
//! check label is drawn from the erasure confusion matrix using the true
//! state at the window midpoint; a non-QND kick may then move the qubit to
//! one of the other two states. An end-of-line (EOL) readout closes the
//! shot. Shot `k` draws only from random stream `k`, so ensembles are
//! reproducible for any thread count.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{advance, propagator, RateMatrix, NUM_STATES};
use crate::error::{ensure, ensure_probability, Error, Result};
use crate::fit::{fit_exponential_weighted, FitFlag, FitResult};
use crate::readout::{
    dephasing_rate, qnd_error, BackactionModel, ConfusionMatrix, ReadoutConfig, ERASURE,
};
use crate::rng::{substream, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErasureExperimentConfig {
    pub rates: RateMatrix,
    pub erasure_confusion: ConfusionMatrix,
    pub eol_confusion: ConfusionMatrix,
    pub qnd_error_per_check: f64,
    pub t_meas: f64,
    pub t_ec: f64,
    pub m: usize,
    pub init_state: usize,
    pub shots: usize,
    pub master_seed: u64,
    /// A shot is flagged once this many consecutive checks report erasure.
    pub flag_policy: usize,
}

impl ErasureExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        ensure(
            self.erasure_confusion.num_labels() == 2,
            "erasure_confusion",
            "needs 2 labels",
        )?;
        ensure(
            self.eol_confusion.num_labels() == 3,
            "eol_confusion",
            "needs 3 labels",
        )?;
        ensure_probability(self.qnd_error_per_check, "qnd_error_per_check")?;
        ensure(
            self.t_meas > 0.0 && self.t_meas.is_finite(),
            "t_meas",
            "must be > 0",
        )?;
        ensure(
            self.t_ec >= 0.0 && self.t_ec.is_finite(),
            "t_ec",
            "must be >= 0",
        )?;
        ensure(self.m >= 1, "m", "at least one check")?;
        ensure(
            self.init_state < NUM_STATES,
            "init_state",
            "must be 0, 1 or 2",
        )?;
        ensure(self.shots >= 1, "shots", "at least one shot")?;
        ensure(self.flag_policy >= 1, "flag_policy", "must be >= 1")?;
        Ok(())
    }

    pub fn cycle_time(&self) -> f64 {
        self.t_ec + self.t_meas
    }

    /// t_tot = m·(t_meas + t_EC).
    pub fn total_time(&self, m: usize) -> f64 {
        m as f64 * self.cycle_time()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShotRecord {
    /// Raw erasure label of every check.
    pub check_labels: Vec<bool>,
    /// True state at each check midpoint.
    pub check_states: Vec<u8>,
    pub eol_label: usize,
    pub true_final_state: usize,
    /// Result of applying the flag policy to `check_labels`.
    pub flagged: bool,
}

/// Length of the longest run of consecutive erasure labels.
pub fn longest_erasure_run(labels: &[bool]) -> usize {
    let mut best = 0;
    let mut run = 0;
    for &l in labels {
        run = if l { run + 1 } else { 0 };
        best = best.max(run);
    }
    best
}

fn kick<R: Rng + ?Sized>(state: usize, probability: f64, rng: &mut R) -> usize {
    if probability > 0.0 && rng.random::<f64>() < probability {
        // uniform over the two other states
        let step = 1 + rng.random_range(0..2);
        (state + step) % NUM_STATES
    } else {
        state
    }
}

/// One check cycle. Returns the state at the window midpoint and after the window.
fn check_cycle(
    cfg: &ErasureExperimentConfig,
    state: usize,
    rng: &mut StreamRng,
    mut on_midpoint: impl FnMut(usize, &mut StreamRng),
) -> (usize, usize) {
    let half = 0.5 * cfg.t_meas;
    let mut s = advance(&cfg.rates, state, cfg.t_ec, rng);
    s = advance(&cfg.rates, s, half, rng);
    let mid = s;
    on_midpoint(mid, rng);
    s = advance(&cfg.rates, s, half, rng);
    (mid, kick(s, cfg.qnd_error_per_check, rng))
}

fn simulate_shot(cfg: &ErasureExperimentConfig, shot: usize) -> ShotRecord {
    let mut rng = substream(cfg.master_seed, shot as u64);
    let mut labels = Vec::with_capacity(cfg.m);
    let mut states = Vec::with_capacity(cfg.m);
    let mut state = cfg.init_state;
    for _ in 0..cfg.m {
        let (mid, after) = check_cycle(cfg, state, &mut rng, |s, rng| {
            labels.push(cfg.erasure_confusion.sample(s, rng) == ERASURE);
        });
        states.push(mid as u8);
        state = after;
    }
    let eol_label = cfg.eol_confusion.sample(state, &mut rng);
    let flagged = longest_erasure_run(&labels) >= cfg.flag_policy;
    ShotRecord {
        check_labels: labels,
        check_states: states,
        eol_label,
        true_final_state: state,
        flagged,
    }
}

pub fn run_erasure_experiment(cfg: &ErasureExperimentConfig) -> Result<Vec<ShotRecord>> {
    cfg.validate()?;
    Ok((0..cfg.shots)
        .into_par_iter()
        .map(|k| simulate_shot(cfg, k))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalPoint {
    pub m: usize,
    pub t_tot: f64,
    pub p2_unselected: f64,
    pub p2_unselected_se: f64,
    /// `None` when no shot survives post-selection.
    pub p2_postselected: Option<f64>,
    pub p2_postselected_se: Option<f64>,
    pub survival_fraction: f64,
    pub survivors: u64,
    pub shots: u64,
}

/// Binomial standard error, floored so that p ∈ {0, 1} still carries weight.
fn binomial_se(p: f64, n: u64) -> f64 {
    let n = n as f64;
    ((p * (1.0 - p)).max(1.0 / n) / n).sqrt()
}

/// P₂ at the EOL readout after `m` checks, for every `m` in `m_grid`.
///
/// Each shot is simulated once up to the largest `m`; the curve at smaller
/// `m` reads the same trajectory earlier, with an independent EOL draw.
pub fn survival_curve(
    cfg: &ErasureExperimentConfig,
    m_grid: &[usize],
) -> Result<Vec<SurvivalPoint>> {
    cfg.validate()?;
    ensure(!m_grid.is_empty(), "m_grid", "must be nonempty")?;
    let m_max = *m_grid.iter().max().expect("nonempty");
    let g = m_grid.len();
    // counts per grid point: [eol = 2, survivors, survivors with eol = 2]
    let counts = (0..cfg.shots)
        .into_par_iter()
        .map(|shot| {
            let mut rng = substream(cfg.master_seed, shot as u64);
            let mut after = Vec::with_capacity(m_max + 1);
            let mut run_reached = Vec::with_capacity(m_max + 1);
            let mut state = cfg.init_state;
            let (mut run, mut flagged) = (0usize, false);
            after.push(state);
            run_reached.push(false);
            for _ in 0..m_max {
                let (_, s) = check_cycle(cfg, state, &mut rng, |mid, rng| {
                    let erased = cfg.erasure_confusion.sample(mid, rng) == ERASURE;
                    run = if erased { run + 1 } else { 0 };
                    flagged |= run >= cfg.flag_policy;
                });
                state = s;
                after.push(state);
                run_reached.push(flagged);
            }
            let mut local = vec![[0u64; 3]; g];
            for (slot, &m) in local.iter_mut().zip(m_grid) {
                let is_two = cfg.eol_confusion.sample(after[m], &mut rng) == 2;
                let survives = !run_reached[m];
                slot[0] += is_two as u64;
                slot[1] += survives as u64;
                slot[2] += (survives && is_two) as u64;
            }
            local
        })
        .reduce(
            || vec![[0u64; 3]; g],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    for k in 0..3 {
                        x[k] += y[k];
                    }
                }
                a
            },
        );
    let shots = cfg.shots as u64;
    Ok(m_grid
        .iter()
        .zip(counts)
        .map(|(&m, [two, survivors, survivors_two])| {
            let p2 = two as f64 / shots as f64;
            let post = (survivors > 0).then(|| survivors_two as f64 / survivors as f64);
            SurvivalPoint {
                m,
                t_tot: cfg.total_time(m),
                p2_unselected: p2,
                p2_unselected_se: binomial_se(p2, shots),
                p2_postselected: post,
                p2_postselected_se: post.map(|p| binomial_se(p, survivors)),
                survival_fraction: survivors as f64 / shots as f64,
                survivors,
                shots,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Unselected,
    Postselected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifetimeEstimate {
    /// Fitted T₁L (s); infinite when the curve does not decay.
    pub t1: f64,
    pub standard_error: Option<f64>,
    pub fit: FitResult,
}

/// Offset bounds of the `a·exp(−t/T) + c` lifetime model.
pub const LIFETIME_OFFSET_BOUNDS: (f64, f64) = (0.0, 0.5);

/// Characteristic logical lifetime from a survival curve.
pub fn logical_lifetime(curve: &[SurvivalPoint], selection: Selection) -> Result<LifetimeEstimate> {
    let mut points = Vec::new();
    let mut sigma = Vec::new();
    for p in curve {
        let (value, se) = match selection {
            Selection::Unselected => (Some(p.p2_unselected), Some(p.p2_unselected_se)),
            Selection::Postselected => (p.p2_postselected, p.p2_postselected_se),
        };
        if let (Some(v), Some(s)) = (value, se) {
            points.push((p.t_tot, v));
            sigma.push(s);
        }
    }
    ensure(
        points.len() >= 4,
        "curve",
        "need at least 4 points with values",
    )?;
    let fit = fit_exponential_weighted(&points, Some(&sigma), LIFETIME_OFFSET_BOUNDS)?;
    let t1 = if fit.has_flag(FitFlag::NonDecaying) {
        f64::INFINITY
    } else {
        fit.value("T")
    };
    Ok(LifetimeEstimate {
        t1,
        standard_error: fit.standard_error("T"),
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TecPoint {
    pub t_ec: f64,
    pub t1_postselected: f64,
    pub standard_error: Option<f64>,
    pub t1_unselected: f64,
    /// Check counts with at least one surviving shot; `t1_postselected` is
    /// NaN when fewer than four remain.
    pub postselected_points: usize,
    pub checks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TecSweep {
    pub points: Vec<TecPoint>,
    /// Postselected T₁L never rises with t_EC beyond 3 combined standard errors.
    pub monotone: bool,
}

/// Check counts spreading `points` samples over `[0, window]` for a given cycle.
pub fn check_grid(window: f64, cycle: f64, points: usize) -> Vec<usize> {
    let m_max = (window / cycle).round().max(1.0) as usize;
    let mut grid: Vec<usize> = (0..points)
        .map(|k| ((k as f64 / (points - 1).max(1) as f64) * m_max as f64).round() as usize)
        .collect();
    grid.dedup();
    grid
}

/// Postselected lifetime for every t_EC, each from a survival curve over
/// `[0, window]` sampled at `points` check counts.
pub fn lifetime_vs_tec(
    cfg: &ErasureExperimentConfig,
    tec_grid: &[f64],
    window: f64,
    points: usize,
) -> Result<TecSweep> {
    ensure(!tec_grid.is_empty(), "tec_grid", "must be nonempty")?;
    ensure(window > 0.0, "window", "must be > 0")?;
    ensure(points >= 4, "points", "need at least 4 samples per curve")?;
    let mut out = Vec::with_capacity(tec_grid.len());
    for &t_ec in tec_grid {
        let run = ErasureExperimentConfig {
            t_ec,
            ..cfg.clone()
        };
        run.validate()?;
        let grid = check_grid(window, run.cycle_time(), points);
        let curve = survival_curve(&run, &grid)?;
        let unselected = logical_lifetime(&curve, Selection::Unselected)?;
        let postselected_points = curve.iter().filter(|p| p.p2_postselected.is_some()).count();
        // Aggressive flagging can leave too few survivors to fit; that is a
        // result of the sweep, not a failure of it.
        let (t1_postselected, standard_error) = if postselected_points >= 4 {
            let post = logical_lifetime(&curve, Selection::Postselected)?;
            (post.t1, post.standard_error)
        } else {
            (f64::NAN, None)
        };
        out.push(TecPoint {
            t_ec,
            t1_postselected,
            standard_error,
            t1_unselected: unselected.t1,
            postselected_points,
            checks: grid,
        });
    }
    let monotone = is_non_increasing(&out);
    Ok(TecSweep {
        points: out,
        monotone,
    })
}

fn is_non_increasing(points: &[TecPoint]) -> bool {
    let mut sorted: Vec<&TecPoint> = points
        .iter()
        .filter(|p| !p.t1_postselected.is_nan())
        .collect();
    sorted.sort_by(|a, b| a.t_ec.total_cmp(&b.t_ec));
    sorted.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        if a.t1_postselected.is_infinite() || b.t1_postselected <= a.t1_postselected {
            return true;
        }
        let se = |p: &TecPoint| p.standard_error.unwrap_or(f64::INFINITY);
        b.t1_postselected - a.t1_postselected <= 3.0 * se(a).hypot(se(b))
    })
}

// ---------------------------------------------------------------------------
// QND characterisation

/// A fixed train of erasure checks used to measure measurement backaction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QndSequence {
    pub rates: RateMatrix,
    pub readout: ReadoutConfig,
    pub backaction: BackactionModel,
    pub checks: usize,
    pub total_time: f64,
    pub shots: usize,
    pub master_seed: u64,
}

impl QndSequence {
    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        self.readout.validate()?;
        ensure(self.checks >= 1, "checks", "at least one check")?;
        ensure(self.shots >= 1, "shots", "at least one shot")?;
        ensure(
            self.idle_time() >= 0.0,
            "total_time",
            format!(
                "{} checks of {} s do not fit in {} s",
                self.checks, self.readout.t_meas, self.total_time
            ),
        )?;
        Ok(())
    }

    /// Idle time before each check.
    pub fn idle_time(&self) -> f64 {
        self.total_time / self.checks as f64 - self.readout.t_meas
    }

    fn kicks(&self, photon_number: f64, drive_frequency: f64) -> [f64; 3] {
        let cfg = self
            .readout
            .with_photon_number(photon_number)
            .with_drive(drive_frequency);
        self.backaction.kick_probabilities(&cfg)
    }
}

/// Exact probability of ending in `init` after the sequence, from the
/// Markov chain of relaxation and per-check kicks.
pub fn qnd_survival_exact(
    seq: &QndSequence,
    init: usize,
    photon_number: f64,
    drive_frequency: f64,
) -> Result<f64> {
    seq.validate()?;
    let q = seq.kicks(photon_number, drive_frequency);
    let cycle = propagator(&seq.rates, seq.idle_time() + seq.readout.t_meas)?;
    let kick = nalgebra::Matrix3::from_fn(|to, from| {
        if to == from {
            1.0 - q[from]
        } else {
            0.5 * q[from]
        }
    });
    let step = kick * cycle;
    let mut v = nalgebra::Vector3::zeros();
    v[init] = 1.0;
    for _ in 0..seq.checks {
        v = step * v;
    }
    Ok(v[init])
}

/// ε_QND implied by the exact chain at one operating point.
pub fn qnd_error_exact(seq: &QndSequence, photon_number: f64, drive_frequency: f64) -> Result<f64> {
    let tilde = |i| -> Result<f64> {
        Ok(qnd_survival_exact(seq, i, photon_number, drive_frequency)?
            / qnd_survival_exact(seq, i, 0.0, drive_frequency)?)
    };
    qnd_error(tilde(0)?.min(1.0), tilde(2)?.min(1.0), seq.checks)
}

/// Backaction coefficient for which the sequence at the readout operating
/// point yields `target` through the QND estimator.
pub fn calibrate_backaction(seq: &QndSequence, target: f64) -> Result<BackactionModel> {
    ensure(
        target > 0.0 && target < 0.5,
        "target",
        "must be in (0, 0.5)",
    )?;
    let (n, wd) = (seq.readout.photon_number, seq.readout.drive_frequency);
    ensure(
        n > 0.0,
        "photon_number",
        "calibration needs a driven readout",
    )?;
    let eps = |c: f64| -> Result<f64> {
        let trial = QndSequence {
            backaction: BackactionModel::new(c)?,
            ..seq.clone()
        };
        qnd_error_exact(&trial, n, wd)
    };
    let mut hi = 1.0 / n;
    while eps(hi)? < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Internal(
                "backaction calibration failed to bracket the target".into(),
            ));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eps(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    BackactionModel::new(0.5 * (lo + hi))
}

/// Final state of one sequence shot.
fn qnd_shot(seq: &QndSequence, init: usize, kicks: &[f64; 3], shot: usize) -> usize {
    let mut rng = substream(seq.master_seed, shot as u64);
    let idle = seq.idle_time();
    let mut state = init;
    for _ in 0..seq.checks {
        state = advance(&seq.rates, state, idle + seq.readout.t_meas, &mut rng);
        state = kick(state, kicks[state], &mut rng);
    }
    state
}

/// Normalized survival p̃ with its standard error, from paired shots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalRatio {
    pub value: f64,
    pub standard_error: f64,
}

/// Reference shots without measurement photons, reused across a map.
struct Reference {
    stays: Vec<bool>,
    count: u64,
}

fn reference(seq: &QndSequence, init: usize) -> Reference {
    let stays: Vec<bool> = (0..seq.shots)
        .into_par_iter()
        .map(|k| qnd_shot(seq, init, &[0.0; 3], k) == init)
        .collect();
    let count = stays.iter().filter(|&&s| s).count() as u64;
    Reference { stays, count }
}

fn survival_ratio(
    seq: &QndSequence,
    init: usize,
    kicks: &[f64; 3],
    reference: &Reference,
) -> SurvivalRatio {
    if reference.count == 0 {
        return SurvivalRatio {
            value: f64::NAN,
            standard_error: f64::NAN,
        };
    }
    let stays: Vec<bool> = (0..seq.shots)
        .into_par_iter()
        .map(|k| qnd_shot(seq, init, kicks, k) == init)
        .collect();
    let x = stays.iter().filter(|&&s| s).count() as f64;
    let y = reference.count as f64;
    let ratio = x / y;
    // Delta method on the paired per-shot indicators (common random numbers).
    let var: f64 = stays
        .iter()
        .zip(&reference.stays)
        .map(|(&a, &b)| (a as u8 as f64 - ratio * b as u8 as f64).powi(2))
        .sum::<f64>()
        / (y * y);
    SurvivalRatio {
        value: ratio,
        standard_error: var.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QndEstimate {
    pub p0_tilde: SurvivalRatio,
    pub p2_tilde: SurvivalRatio,
    pub qnd_error: f64,
    pub standard_error: f64,
}

/// Monte Carlo p̃₀, p̃₂ at one operating point, passed through the estimator.
pub fn qnd_estimate(
    seq: &QndSequence,
    photon_number: f64,
    drive_frequency: f64,
) -> Result<QndEstimate> {
    seq.validate()?;
    let kicks = seq.kicks(photon_number, drive_frequency);
    let p0 = survival_ratio(seq, 0, &kicks, &reference(seq, 0));
    let p2 = survival_ratio(seq, 2, &kicks, &reference(seq, 2));
    let mean = 0.5 * (p0.value + p2.value);
    let m = seq.checks as f64;
    let eps = qnd_error(p0.value.min(1.0), p2.value.min(1.0), seq.checks)?;
    let mean_se = 0.5 * p0.standard_error.hypot(p2.standard_error);
    let slope = mean.powf(1.0 / m - 1.0) / m;
    Ok(QndEstimate {
        p0_tilde: p0,
        p2_tilde: p2,
        qnd_error: eps,
        standard_error: slope * mean_se,
    })
}

/// p̃_i over a photon-number × drive-frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QndMap {
    pub photon_numbers: Vec<f64>,
    pub drive_frequencies: Vec<f64>,
    pub initial_states: Vec<usize>,
    /// `p_tilde[s][a][b]`: initial state `initial_states[s]`, photon number
    /// `a`, drive frequency `b`.
    pub p_tilde: Vec<Vec<Vec<f64>>>,
    pub standard_error: Vec<Vec<Vec<f64>>>,
}

impl QndMap {
    /// For each initial state, the drive frequency at which `1 − p̃` peaks
    /// in the row of the largest photon number.
    pub fn backaction_peaks(&self) -> Vec<f64> {
        let a = self
            .photon_numbers
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map_or(0, |(k, _)| k);
        self.p_tilde
            .iter()
            .map(|map| {
                let row = &map[a];
                let b = row
                    .iter()
                    .enumerate()
                    .min_by(|x, y| x.1.total_cmp(y.1))
                    .map_or(0, |(k, _)| k);
                self.drive_frequencies[b]
            })
            .collect()
    }
}

/// Merges the dressed resonator frequencies into an ascending drive grid.
///
/// Regular points closer than half the smallest grid spacing to a dressed
/// frequency are dropped, so every dressed row is resolved from its
/// neighbours instead of sitting next to a near-duplicate column.
pub fn with_dressed_rows(grid: &[f64], dressed: &[f64]) -> Vec<f64> {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let spacing = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let mut out: Vec<f64> = sorted
        .into_iter()
        .filter(|&w| {
            !spacing.is_finite() || dressed.iter().all(|&d| (w - d).abs() >= 0.5 * spacing)
        })
        .chain(dressed.iter().copied())
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

pub fn qnd_sequence(
    seq: &QndSequence,
    photon_grid: &[f64],
    drive_grid: &[f64],
    initial_states: &[usize],
) -> Result<QndMap> {
    seq.validate()?;
    ensure(!photon_grid.is_empty(), "photon_grid", "must be nonempty")?;
    ensure(!drive_grid.is_empty(), "drive_grid", "must be nonempty")?;
    ensure(
        !initial_states.is_empty(),
        "initial_states",
        "must be nonempty",
    )?;
    ensure(
        initial_states.iter().all(|&s| s < NUM_STATES),
        "initial_states",
        "must be 0, 1 or 2",
    )?;
    ensure(
        photon_grid.iter().all(|&n| n >= 0.0),
        "photon_grid",
        "must be >= 0",
    )?;
    let mut values = Vec::new();
    let mut errors = Vec::new();
    for &init in initial_states {
        let base = reference(seq, init);
        let mut v_rows = Vec::new();
        let mut e_rows = Vec::new();
        for &n in photon_grid {
            let (v, e): (Vec<f64>, Vec<f64>) = drive_grid
                .iter()
                .map(|&wd| {
                    let r = survival_ratio(seq, init, &seq.kicks(n, wd), &base);
                    (r.value, r.standard_error)
                })
                .unzip();
            v_rows.push(v);
            e_rows.push(e);
        }
        values.push(v_rows);
        errors.push(e_rows);
    }
    Ok(QndMap {
        photon_numbers: photon_grid.to_vec(),
        drive_frequencies: drive_grid.to_vec(),
        initial_states: initial_states.to_vec(),
        p_tilde: values,
        standard_error: errors,
    })
}

// ---------------------------------------------------------------------------
// Ramsey

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RamseyConfig {
    /// May be infinite.
    pub t1_logical: f64,
    pub gamma_phi_residual: f64,
    pub detuning: f64,
    pub readout_during_delay: Option<ReadoutConfig>,
    pub delay_grid: Vec<f64>,
}

impl RamseyConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.t1_logical > 0.0, "t1_logical", "must be > 0")?;
        ensure(
            self.gamma_phi_residual >= 0.0 && self.gamma_phi_residual.is_finite(),
            "gamma_phi_residual",
            "must be >= 0",
        )?;
        ensure(self.detuning.is_finite(), "detuning", "must be finite")?;
        ensure(
            !self.delay_grid.is_empty(),
            "delay_grid",
            "must be nonempty",
        )?;
        ensure(
            self.delay_grid.iter().all(|&t| t >= 0.0 && t.is_finite()),
            "delay_grid",
            "delays must be >= 0",
        )?;
        if let Some(r) = &self.readout_during_delay {
            r.validate()?;
        }
        Ok(())
    }

    /// Γ_φ = Γ'_φ + Γ_m.
    pub fn dephasing_rate(&self) -> f64 {
        self.gamma_phi_residual
            + self
                .readout_during_delay
                .as_ref()
                .map_or(0.0, dephasing_rate)
    }

    /// Envelope decay rate 1/T₂ = 1/(2T₁L) + Γ_φ.
    pub fn decay_rate(&self) -> f64 {
        0.5 / self.t1_logical + self.dephasing_rate()
    }
}

/// P(t) = 1/2 + (1/2)·exp(−t/T₂)·cos(δ t).
pub fn ramsey_signal(cfg: &RamseyConfig) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    let gamma = cfg.decay_rate();
    Ok(cfg
        .delay_grid
        .iter()
        .map(|&t| (t, 0.5 + 0.5 * (-gamma * t).exp() * (cfg.detuning * t).cos()))
        .collect())
}

/// Ramsey signal averaged over `shots` realisations of Gaussian phase
/// diffusion with variance 2Γ_φ·dt per interval; T₁ enters analytically.
pub fn ramsey_signal_stochastic(
    cfg: &RamseyConfig,
    shots: usize,
    master_seed: u64,
) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    ensure(shots >= 1, "shots", "at least one shot")?;
    let gamma_phi = cfg.dephasing_rate();
    let mut order: Vec<usize> = (0..cfg.delay_grid.len()).collect();
    order.sort_by(|&a, &b| cfg.delay_grid[a].total_cmp(&cfg.delay_grid[b]));
    // Fixed-size blocks summed in order keep the floating-point total
    // independent of how rayon splits the work.
    const BLOCK: usize = 1024;
    let blocks: Vec<Vec<f64>> = (0..shots.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; order.len()];
            for k in b * BLOCK..((b + 1) * BLOCK).min(shots) {
                let mut rng = substream(master_seed, k as u64);
                let mut phase = 0.0;
                let mut last = 0.0;
                for &i in &order {
                    let t = cfg.delay_grid[i];
                    let z: f64 = rng.sample(StandardNormal);
                    phase += (2.0 * gamma_phi * (t - last)).sqrt() * z;
                    last = t;
                    acc[i] += (cfg.detuning * t + phase).cos();
                }
            }
            acc
        })
        .collect();
    let mut sums = vec![0.0; order.len()];
    for block in blocks {
        sums.iter_mut().zip(block).for_each(|(x, y)| *x += y);
    }
    Ok(cfg
        .delay_grid
        .iter()
        .zip(sums)
        .map(|(&t, s)| {
            (
                t,
                0.5 + 0.5 * (-0.5 * t / cfg.t1_logical).exp() * s / shots as f64,
            )
        })
        .collect())
}
