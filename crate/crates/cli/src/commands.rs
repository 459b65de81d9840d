//! One function per subcommand. Each turns the resolved config into tables,
//! optional renderings and a JSON result block.

use std::path::Path;

use fluxlab_core::driven::chevron_scan_with_step;
use fluxlab_core::dynamics::{
    characteristic_times, evolve_populations, lz_error, lz_exponent, sample_ensemble,
};
use fluxlab_core::fit::{
    fit_dephasing, fit_ramsey, fit_rates_with, DecayDataset, DecayPoint, DecaySeries,
    DephasingPoint, RateFitOptions,
};
use fluxlab_core::protocol::{
    calibrate_backaction, check_grid, lifetime_vs_tec, logical_lifetime, qnd_error_exact,
    qnd_estimate, qnd_sequence, ramsey_signal, ramsey_signal_stochastic, run_erasure_experiment,
    survival_curve, with_dressed_rows, ErasureExperimentConfig, QndSequence, RamseyConfig,
    Selection, SurvivalPoint,
};
use fluxlab_core::readout::{dephasing_error_per_check, dephasing_rate, BackactionModel};
use fluxlab_core::spectrum::{diagonalize, sweep_flux};
use fluxlab_core::PopulationState;
use serde_json::{json, Value};

use crate::config::{field, linspace, section, RamseyMode, RunConfig};
use crate::error::{core_error, CliError};
use crate::output::{heatmap_svg, line_svg, Matrix, Table};

/// Everything a subcommand produces besides the summary wrapper.
#[derive(Debug, Default)]
pub struct Outputs {
    /// `(suffix, csv text)`; the primary table has an empty suffix.
    pub csv: Vec<(String, CsvBody)>,
    pub svg: Vec<(String, String)>,
    pub results: Value,
}

#[derive(Debug)]
pub enum CsvBody {
    Table(Table),
    Matrix(Matrix),
}

impl Outputs {
    fn table(&mut self, suffix: &str, table: Table) {
        self.csv.push((suffix.to_string(), CsvBody::Table(table)));
    }

    fn matrix(&mut self, suffix: &str, matrix: Matrix) {
        self.svg
            .push((suffix.to_string(), heatmap_svg(&matrix.value, &matrix)));
        self.csv.push((suffix.to_string(), CsvBody::Matrix(matrix)));
    }
}

fn hz(omega: f64) -> f64 {
    omega / std::f64::consts::TAU
}

fn opt(x: Option<f64>) -> f64 {
    x.unwrap_or(f64::NAN)
}

pub fn spectrum(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let circuit = section(&cfg.circuit, "circuit", "spectrum")?;
    let spec = diagonalize(&circuit.params()?).map_err(|e| core_error("circuit", e))?;
    let levels = circuit.levels.min(spec.num_levels());
    let spec = spec
        .truncated(levels)
        .map_err(|e| core_error("circuit.levels", e))?;
    let mut columns = vec![
        "level".to_string(),
        "energy_rad_per_s".into(),
        "energy_hz".into(),
        "parity".into(),
    ];
    columns.extend((0..levels).map(|j| format!("abs_n_{j}")));
    let mut table = Table {
        columns,
        ..Table::default()
    };
    table.comment(
        "energy relative to the ground state; parity is nan away from integer/half-integer flux",
    );
    table.comment(format!(
        "phi_ext: {}  basis_size: {}",
        spec.phi_ext, spec.basis_size
    ));
    for k in 0..levels {
        let parity = spec.parity.as_ref().map_or(f64::NAN, |p| f64::from(p[k]));
        let mut row = vec![k as f64, spec.levels[k], hz(spec.levels[k]), parity];
        row.extend((0..levels).map(|j| spec.charge_elements[(k, j)]));
        table.push(row);
    }
    let w = |i, j| spec.transition_frequency(i, j).unwrap_or(f64::NAN);
    let n = |i, j| spec.charge_matrix_element(i, j).unwrap_or(f64::NAN);
    let results = json!({
        "omega_01_rad_per_s": w(0, 1),
        "omega_12_rad_per_s": w(1, 2),
        "omega_02_rad_per_s": w(0, 2),
        "omega_01_hz": hz(w(0, 1)),
        "omega_12_hz": hz(w(1, 2)),
        "abs_n_01": n(0, 1),
        "abs_n_12": n(1, 2),
        "abs_n_02": n(0, 2),
        "basis_size": spec.basis_size,
    });
    let mut out = Outputs {
        results,
        ..Outputs::default()
    };
    out.table("", table);
    Ok(out)
}

pub fn flux_sweep(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let circuit = section(&cfg.circuit, "circuit", "flux-sweep")?;
    let sweep = section(&cfg.flux_sweep, "flux_sweep", "flux-sweep")?;
    let params = circuit.params()?;
    let grid = linspace(sweep.start, sweep.stop, sweep.points);
    // An empty grid is a valid request for an empty table.
    let points = if grid.is_empty() {
        Vec::new()
    } else {
        sweep_flux(&params, &grid).map_err(|e| core_error("flux_sweep", e))?
    };
    let mut table = Table::new(&[
        "phi_ext",
        "omega_01_rad_per_s",
        "omega_12_rad_per_s",
        "omega_02_rad_per_s",
        "abs_n_01",
        "abs_n_12",
        "abs_n_02",
    ]);
    table.comment("phi_ext in units of the flux quantum");
    for p in &points {
        table.push(vec![
            p.flux, p.omega_01, p.omega_12, p.omega_02, p.n_01, p.n_12, p.n_02,
        ]);
    }
    let mut out = Outputs {
        results: json!({ "points": points.len() }),
        ..Outputs::default()
    };
    out.svg.push((
        String::new(),
        line_svg(
            "matrix elements vs flux",
            "phi_ext",
            &grid,
            &[
                ("|n_01|", table.column("abs_n_01").unwrap_or_default()),
                ("|n_12|", table.column("abs_n_12").unwrap_or_default()),
                ("|n_02|", table.column("abs_n_02").unwrap_or_default()),
            ],
        ),
    ));
    out.table("", table);
    Ok(out)
}

pub fn chevron(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let circuit = section(&cfg.circuit, "circuit", "chevron")?;
    let scan = section(&cfg.chevron, "chevron", "chevron")?;
    let spec = diagonalize(&circuit.params()?)
        .and_then(|s| s.truncated(circuit.levels))
        .map_err(|e| core_error("circuit", e))?;
    let amplitudes = scan.amplitude.grid("chevron.amplitude")?;
    let detunings = scan.detuning.grid("chevron.detuning")?;
    let map = chevron_scan_with_step(
        &spec,
        scan.duration,
        &amplitudes,
        &detunings,
        scan.repeats,
        scan.max_step,
    )
    .map_err(|e| core_error("chevron", e))?;
    let peaks = map.peak_detunings();
    let driven: Vec<f64> = map
        .amplitudes
        .iter()
        .zip(&peaks)
        .filter(|(a, _)| **a > 0.0)
        .map(|(_, &p)| p)
        .collect();
    let (lo, hi) = map.min_max();
    let omega_02 = spec
        .transition_frequency(0, 2)
        .map_err(|e| core_error("circuit", e))?;
    let results = json!({
        "omega_02_rad_per_s": omega_02,
        "carrier_center_rad_per_s": 0.5 * omega_02,
        "peak_detunings_rad_per_s": peaks,
        "peak_detuning_non_decreasing": driven.windows(2).all(|w| w[1] >= w[0]),
        "p2_min": lo,
        "p2_max": hi,
    });
    let mut out = Outputs {
        results,
        ..Outputs::default()
    };
    out.matrix(
        "",
        Matrix {
            row_axis: "amplitude_rad_per_s".into(),
            column_axis: "detuning_rad_per_s".into(),
            value: "p2".into(),
            rows: map.amplitudes,
            columns: map.detunings,
            values: map.p2,
        },
    );
    Ok(out)
}

pub fn decay(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let rates = section(&cfg.rates, "rates", "decay")?.matrix("rates")?;
    let d = section(&cfg.decay, "decay", "decay")?;
    let init =
        PopulationState::basis(d.init_state).map_err(|e| core_error("decay.init_state", e))?;
    if !(d.t_max > 0.0) {
        return Err(CliError::Config("`decay.t_max`: must be > 0".into()));
    }
    let times = linspace(0.0, d.t_max, d.points);
    let mut columns = vec!["t_s", "p0", "p1", "p2"];
    if d.trajectories > 0 {
        columns.extend(["mc_p0", "mc_p1", "mc_p2"]);
    }
    let mut table = Table::new(&columns);
    let paths = if d.trajectories > 0 {
        sample_ensemble(
            &rates,
            d.init_state,
            d.t_max,
            d.trajectories,
            cfg.master_seed,
        )
        .map_err(|e| core_error("decay", e))?
    } else {
        Vec::new()
    };
    for &t in &times {
        let p = evolve_populations(&rates, &init, t).map_err(|e| core_error("decay", e))?;
        let mut row = p.as_array().to_vec();
        row.insert(0, t);
        if !paths.is_empty() {
            let mut counts = [0usize; 3];
            for path in &paths {
                counts[path.state_at(t)] += 1;
            }
            row.extend(counts.map(|c| c as f64 / paths.len() as f64));
        }
        table.push(row);
    }
    let times_ = characteristic_times(&rates);
    let mut out = Outputs {
        results: json!({
            "t_erasure_state_s": times_.erasure_state,
            "t_erasure_onset_s": times_.erasure_onset,
            "t_slowest_s": times_.slowest,
            "trajectories": d.trajectories,
        }),
        ..Outputs::default()
    };
    out.svg.push((
        String::new(),
        line_svg(
            "populations",
            "t_s",
            &times,
            &[
                ("p0", table.column("p0").unwrap_or_default()),
                ("p1", table.column("p1").unwrap_or_default()),
                ("p2", table.column("p2").unwrap_or_default()),
            ],
        ),
    ));
    out.table("", table);
    if d.export_trajectories > 0 {
        let export = sample_ensemble(
            &rates,
            d.init_state,
            d.t_max,
            d.export_trajectories,
            cfg.master_seed,
        )
        .map_err(|e| core_error("decay", e))?;
        let mut jumps = Table::new(&["shot", "jump_time_s", "state"]);
        jumps.comment("time 0 rows give the initial state");
        for (k, path) in export.iter().enumerate() {
            jumps.push(vec![k as f64, 0.0, path.initial as f64]);
            for j in &path.jumps {
                jumps.push(vec![k as f64, j.time, j.state as f64]);
            }
        }
        out.table("-trajectories", jumps);
    }
    Ok(out)
}

pub fn lz(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let lz = section(&cfg.lz, "lz", "lz")?;
    let ramp = lz.ramp()?;
    let mut table = Table::new(&["ramp_duration_s", "lz_error"]);
    table.comment(format!(
        "gap_rad_per_s: {}  span_rad_per_s: {}  sweep_factor: {}",
        ramp.frequency_gap, ramp.detuning_span, ramp.sweep_factor
    ));
    let mut durations = Vec::new();
    for k in 0..=40 {
        let t = ramp.ramp_duration * 10f64.powf(-2.0 + 4.0 * k as f64 / 40.0);
        let r = fluxlab_core::RampSpec {
            ramp_duration: t,
            ..ramp
        };
        durations.push(t);
        table.push(vec![t, lz_error(&r)]);
    }
    let mut out = Outputs {
        results: json!({
            "lz_error": lz_error(&ramp),
            "lz_exponent": lz_exponent(&ramp),
            "sweep_rate_rad_per_s2": ramp.sweep_rate(),
        }),
        ..Outputs::default()
    };
    let log_err: Vec<f64> = table
        .rows
        .iter()
        .map(|r| r[1].max(f64::MIN_POSITIVE).log10())
        .collect();
    let log_t: Vec<f64> = durations.iter().map(|t| t.log10()).collect();
    out.svg.push((
        String::new(),
        line_svg(
            "log10 lz_error",
            "log10 ramp_duration_s",
            &log_t,
            &[("log10 lz_error", log_err)],
        ),
    ));
    out.table("", table);
    Ok(out)
}

fn experiment_config(cfg: &RunConfig, command: &str) -> Result<ErasureExperimentConfig, CliError> {
    let rates = section(&cfg.rates, "rates", command)?.matrix("rates")?;
    let confusion = section(&cfg.confusion, "confusion", command)?;
    let e = section(&cfg.experiment, "experiment", command)?;
    let readout = cfg.readout.as_ref().map(|r| r.model()).transpose()?;
    let t_meas = readout.as_ref().map(|r| r.t_meas).ok_or_else(|| {
        CliError::Config(format!(
            "missing section [readout] required by `{command}` (t_meas)"
        ))
    })?;
    let config = ErasureExperimentConfig {
        rates,
        erasure_confusion: confusion.erasure(readout.as_ref())?,
        eol_confusion: confusion.eol()?,
        qnd_error_per_check: e.qnd_error_per_check,
        t_meas,
        t_ec: e.t_ec,
        m: e.m,
        init_state: e.init_state,
        shots: e.shots,
        master_seed: cfg.master_seed,
        flag_policy: e.flag_policy,
    };
    config.validate().map_err(|e| core_error("experiment", e))?;
    Ok(config)
}

fn survival_table(curve: &[SurvivalPoint]) -> Table {
    let mut table = Table::new(&[
        "m",
        "t_tot_s",
        "p2_unselected",
        "p2_unselected_se",
        "p2_postselected",
        "p2_postselected_se",
        "survival_fraction",
        "survivors",
    ]);
    table.comment("p2 from the end-of-line readout; postselected is nan when no shot survives");
    for p in curve {
        table.push(vec![
            p.m as f64,
            p.t_tot,
            p.p2_unselected,
            p.p2_unselected_se,
            opt(p.p2_postselected),
            opt(p.p2_postselected_se),
            p.survival_fraction,
            p.survivors as f64,
        ]);
    }
    table
}

fn lifetime_json(curve: &[SurvivalPoint], selection: Selection) -> Value {
    match logical_lifetime(curve, selection) {
        Ok(l) => json!({ "t1_s": l.t1, "t1_se_s": l.standard_error, "fit": l.fit }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

pub fn erasure_sim(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let command = "erasure-sim";
    let config = experiment_config(cfg, command)?;
    let e = section(&cfg.experiment, "experiment", command)?;
    let mut grid = match (&e.m_grid, e.window, e.points) {
        (Some(g), _, _) => g.clone(),
        (None, Some(w), Some(p)) if w > 0.0 && p >= 2 => check_grid(w, config.cycle_time(), p),
        _ => {
            return Err(CliError::Config(
                "`experiment`: give `m_grid`, or `window` (> 0) and `points` (>= 2)".into(),
            ))
        }
    };
    grid.push(config.m);
    grid.sort_unstable();
    grid.dedup();
    let curve = survival_curve(&config, &grid).map_err(|e| core_error("experiment", e))?;
    let at_m = curve.iter().find(|p| p.m == config.m).copied();
    let table = survival_table(&curve);
    let mut out = Outputs {
        results: json!({
            "cycle_time_s": config.cycle_time(),
            "at_m": at_m,
            "lifetime_unselected": lifetime_json(&curve, Selection::Unselected),
            "lifetime_postselected": lifetime_json(&curve, Selection::Postselected),
        }),
        ..Outputs::default()
    };
    out.svg.push((
        String::new(),
        line_svg(
            "P2 vs total time",
            "t_tot_s",
            &table.column("t_tot_s").unwrap_or_default(),
            &[
                (
                    "unselected",
                    table.column("p2_unselected").unwrap_or_default(),
                ),
                (
                    "postselected",
                    table.column("p2_postselected").unwrap_or_default(),
                ),
            ],
        ),
    ));
    out.table("", table);
    if e.raster_shots > 0 {
        let shots = run_erasure_experiment(&ErasureExperimentConfig {
            shots: e.raster_shots,
            ..config.clone()
        })
        .map_err(|e| core_error("experiment", e))?;
        let mut columns: Vec<String> = vec!["shot".into()];
        columns.extend((1..=config.m).map(|k| format!("check_{k}")));
        columns.extend([
            "eol_label".into(),
            "true_final_state".into(),
            "flagged".into(),
        ]);
        let mut raster = Table {
            columns,
            ..Table::default()
        };
        raster.comment("check_k = 1 when check k reported an erasure");
        for (k, s) in shots.iter().enumerate() {
            let mut row = vec![k as f64];
            row.extend(s.check_labels.iter().map(|&l| f64::from(u8::from(l))));
            row.extend([
                s.eol_label as f64,
                s.true_final_state as f64,
                f64::from(u8::from(s.flagged)),
            ]);
            raster.push(row);
        }
        out.table("-raster", raster);
    }
    Ok(out)
}

pub fn lifetime_vs_tec_cmd(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let command = "lifetime-vs-tec";
    let config = experiment_config(cfg, command)?;
    let e = section(&cfg.experiment, "experiment", command)?;
    let tec = field(&e.tec_grid, "experiment.tec_grid", command)?;
    let window = field(&e.window, "experiment.window", command)?;
    let points = field(&e.points, "experiment.points", command)?;
    let sweep =
        lifetime_vs_tec(&config, &tec, window, points).map_err(|e| core_error("experiment", e))?;
    let mut table = Table::new(&[
        "t_ec_s",
        "t1_postselected_s",
        "t1_postselected_se_s",
        "t1_unselected_s",
        "postselected_points",
    ]);
    for p in &sweep.points {
        table.push(vec![
            p.t_ec,
            p.t1_postselected,
            opt(p.standard_error),
            p.t1_unselected,
            p.postselected_points as f64,
        ]);
    }
    let mut out = Outputs {
        results: json!({ "points": sweep.points, "monotone_non_increasing": sweep.monotone }),
        ..Outputs::default()
    };
    out.svg.push((
        String::new(),
        line_svg(
            "postselected T1L vs t_EC",
            "t_ec_s",
            &tec,
            &[(
                "t1_postselected_s",
                table.column("t1_postselected_s").unwrap_or_default(),
            )],
        ),
    ));
    out.table("", table);
    Ok(out)
}

pub fn qnd_map(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let command = "qnd-map";
    let rates = section(&cfg.rates, "rates", command)?.matrix("rates")?;
    let readout = section(&cfg.readout, "readout", command)?.model()?;
    let q = section(&cfg.qnd, "qnd", command)?;
    let mut seq = QndSequence {
        rates,
        readout,
        backaction: BackactionModel::new(0.0).map_err(|e| core_error("qnd", e))?,
        checks: q.checks,
        total_time: q.total_time,
        shots: q.shots,
        master_seed: cfg.master_seed,
    };
    seq.validate().map_err(|e| core_error("qnd", e))?;
    seq.backaction = match (q.target_error, q.coefficient) {
        (Some(target), None) => {
            calibrate_backaction(&seq, target).map_err(|e| core_error("qnd.target_error", e))?
        }
        (None, Some(c)) => BackactionModel::new(c).map_err(|e| core_error("qnd.coefficient", e))?,
        _ => {
            return Err(CliError::Config(
                "`qnd`: give exactly one of `target_error`, `coefficient`".into(),
            ))
        }
    };
    let mut drives = q.drive.grid("qnd.drive")?;
    if q.include_dressed {
        drives = with_dressed_rows(&drives, &readout.dressed);
    }
    let map = qnd_sequence(&seq, &q.photon_grid, &drives, &q.initial_states)
        .map_err(|e| core_error("qnd", e))?;
    let (n, wd) = (readout.photon_number, readout.drive_frequency);
    let estimate = qnd_estimate(&seq, n, wd).map_err(|e| core_error("qnd", e))?;
    let exact = qnd_error_exact(&seq, n, wd).map_err(|e| core_error("qnd", e))?;
    let peaks: Vec<Value> = map
        .initial_states
        .iter()
        .zip(map.backaction_peaks())
        .map(|(&s, peak)| {
            json!({
                "initial_state": s,
                "peak_drive_rad_per_s": peak,
                "dressed_rad_per_s": readout.dressed[s],
                "on_dressed_row": peak == readout.dressed[s],
            })
        })
        .collect();
    let mut out = Outputs {
        results: json!({
            "backaction_coefficient": seq.backaction.coefficient,
            "idle_time_s": seq.idle_time(),
            "operating_point": { "estimate": estimate, "exact_qnd_error": exact },
            "backaction_peaks": peaks,
        }),
        ..Outputs::default()
    };
    for (k, &s) in map.initial_states.iter().enumerate() {
        out.matrix(
            &format!("-p{s}"),
            Matrix {
                row_axis: "photon_number".into(),
                column_axis: "drive_frequency_rad_per_s".into(),
                value: format!("p{s}_tilde"),
                rows: map.photon_numbers.clone(),
                columns: map.drive_frequencies.clone(),
                values: map.p_tilde[k].clone(),
            },
        );
        out.csv.push((
            format!("-p{s}-se"),
            CsvBody::Matrix(Matrix {
                row_axis: "photon_number".into(),
                column_axis: "drive_frequency_rad_per_s".into(),
                value: format!("p{s}_tilde_se"),
                rows: map.photon_numbers.clone(),
                columns: map.drive_frequencies.clone(),
                values: map.standard_error[k].clone(),
            }),
        ));
    }
    Ok(out)
}

pub fn dephasing_map(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let command = "dephasing-map";
    let readout = section(&cfg.readout, "readout", command)?.model()?;
    let d = section(&cfg.dephasing, "dephasing", command)?;
    if d.photon_grid.iter().any(|&n| !(n >= 0.0)) {
        return Err(CliError::Config(
            "`dephasing.photon_grid`: photon numbers must be >= 0".into(),
        ));
    }
    let drives = d.drive.grid("dephasing.drive")?;
    let values: Vec<Vec<f64>> = d
        .photon_grid
        .iter()
        .map(|&n| {
            drives
                .iter()
                .map(|&wd| dephasing_rate(&readout.with_photon_number(n).with_drive(wd)))
                .collect()
        })
        .collect();
    let mut out = Outputs {
        results: json!({
            "operating_point": {
                "gamma_m_per_s": dephasing_rate(&readout),
                "dephasing_error_per_check": dephasing_error_per_check(&readout),
            }
        }),
        ..Outputs::default()
    };
    out.matrix(
        "",
        Matrix {
            row_axis: "photon_number".into(),
            column_axis: "drive_frequency_rad_per_s".into(),
            value: "gamma_m_per_s".into(),
            rows: d.photon_grid.clone(),
            columns: drives,
            values,
        },
    );
    Ok(out)
}

pub fn ramsey(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let command = "ramsey";
    let r = section(&cfg.ramsey, "ramsey", command)?;
    let readout = if r.readout_during_delay {
        Some(section(&cfg.readout, "readout", command)?.model()?)
    } else {
        None
    };
    if r.points < 2 || !(r.delay_max > 0.0) {
        return Err(CliError::Config(
            "`ramsey`: delay_max must be > 0 and points >= 2".into(),
        ));
    }
    let ramsey = RamseyConfig {
        t1_logical: r.t1_logical,
        gamma_phi_residual: r.gamma_phi_residual.angular(),
        detuning: r.detuning.angular(),
        readout_during_delay: readout,
        delay_grid: linspace(0.0, r.delay_max, r.points),
    };
    let signal = match r.mode {
        RamseyMode::Analytic => ramsey_signal(&ramsey),
        RamseyMode::Stochastic => ramsey_signal_stochastic(&ramsey, r.shots, cfg.master_seed),
    }
    .map_err(|e| core_error("ramsey", e))?;
    let mut table = Table::new(&["delay_s", "p"]);
    for &(t, p) in &signal {
        table.push(vec![t, p]);
    }
    let fit = match fit_ramsey(&signal) {
        Ok(f) => serde_json::to_value(f).unwrap_or(Value::Null),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let mut out = Outputs {
        results: json!({
            "dephasing_rate_per_s": ramsey.dephasing_rate(),
            "t2_s": 1.0 / ramsey.decay_rate(),
            "fit": fit,
        }),
        ..Outputs::default()
    };
    out.svg.push((
        String::new(),
        line_svg(
            "Ramsey",
            "delay_s",
            &ramsey.delay_grid,
            &[("p", table.column("p").unwrap_or_default())],
        ),
    ));
    out.table("", table);
    Ok(out)
}

struct CsvRows {
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_csv(path: &Path) -> Result<CsvRows, CliError> {
    let bad = |e: String| CliError::Config(format!("`fit.data` ({}): {e}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(CsvRows { headers, rows })
}

impl CsvRows {
    fn index(&self, name: &str, path: &Path) -> Result<usize, CliError> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Config(format!(
                "`fit.data` ({}): missing column `{name}`",
                path.display()
            ))
        })
    }

    fn number(&self, row: &(u64, Vec<String>), k: usize, path: &Path) -> Result<f64, CliError> {
        row.1[k].parse().map_err(|_| {
            CliError::Config(format!(
                "`fit.data` ({}): line {}: `{}` in column `{}` is not a number",
                path.display(),
                row.0,
                row.1[k],
                self.headers[k]
            ))
        })
    }
}

pub fn fit_rates_cmd(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let command = "fit-rates";
    let f = section(&cfg.fit, "fit", command)?;
    let guess = match (&f.initial, &cfg.rates) {
        (Some(r), _) => r.matrix("fit.initial")?,
        (None, Some(r)) => r.matrix("rates")?,
        (None, None) => {
            return Err(CliError::Config(
                "missing section [fit.initial] or [rates] required by `fit-rates`".into(),
            ))
        }
    };
    let data = read_csv(&f.data)?;
    let cols = ["initial_state", "t_s", "p0", "p1", "p2"]
        .map(|c| data.index(c, &f.data))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let sigma = data.headers.iter().position(|h| h == "sigma");
    let mut series: Vec<DecaySeries> = Vec::new();
    for row in &data.rows {
        let v = cols
            .iter()
            .map(|&k| data.number(row, k, &f.data))
            .collect::<Result<Vec<_>, _>>()?;
        let s = sigma.map(|k| data.number(row, k, &f.data)).transpose()?;
        let init = v[0] as usize;
        let point = DecayPoint {
            t: v[1],
            populations: [v[2], v[3], v[4]],
            sigma: s,
        };
        match series.iter_mut().find(|x| x.initial_state == init) {
            Some(x) => x.points.push(point),
            None => series.push(DecaySeries {
                initial_state: init,
                points: vec![point],
            }),
        }
    }
    let dataset = DecayDataset { series };
    dataset.validate().map_err(|e| core_error("fit.data", e))?;
    let opts = RateFitOptions {
        parameterization: f.parameterization,
        starts: f.starts,
        seed: cfg.master_seed,
        ..RateFitOptions::default()
    };
    let result = fit_rates_with(&dataset, &guess, &opts).map_err(|e| core_error("fit", e))?;
    Ok(Outputs {
        results: serde_json::to_value(result).unwrap_or(Value::Null),
        ..Outputs::default()
    })
}

pub fn fit_dephasing_cmd(cfg: &RunConfig) -> Result<Outputs, CliError> {
    let command = "fit-dephasing";
    let f = section(&cfg.fit, "fit", command)?;
    let readout = section(&cfg.readout, "readout", command)?.model()?;
    let data = read_csv(&f.data)?;
    let cols = [
        "photon_number",
        "drive_frequency_rad_per_s",
        "gamma_phi_per_s",
    ]
    .map(|c| data.index(c, &f.data))
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let sigma = data.headers.iter().position(|h| h == "sigma");
    let points = data
        .rows
        .iter()
        .map(|row| {
            let v = cols
                .iter()
                .map(|&k| data.number(row, k, &f.data))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(DephasingPoint {
                photon_number: v[0],
                drive_frequency: v[1],
                gamma_phi: v[2],
                sigma: sigma.map(|k| data.number(row, k, &f.data)).transpose()?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let result = fit_dephasing(&points, &readout).map_err(|e| core_error("fit", e))?;
    Ok(Outputs {
        results: serde_json::to_value(result).unwrap_or(Value::Null),
        ..Outputs::default()
    })
}
