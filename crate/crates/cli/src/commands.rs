//! Subcommand implementations. Each writes its tables and one JSON sidecar
//! through a single [`ArtifactWriter`].

use std::path::PathBuf;

use hyqa_core::dynamics::{
    energy_levels, integrate_anneal, locate_gap_minimum, nodes_on_grid, prepare_rotation, spectral_sweep,
    temperature_sweep, SpectralSweep,
};
use hyqa_core::eigensolver::eigenpairs_at;
use hyqa_core::rates::{
    pair_coefficients, rate_convolution, rate_marcus, rate_redfield, rate_single_qubit,
    rate_single_qubit_small_delta, rate_time_domain, single_qubit_pair, RateResult,
};
use hyqa_core::{ms_to_time_units, time_units_to_ms, BathParams, Error};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::checks::{self, Check};
use crate::output::{num, opt, ArtifactWriter, Table};
use crate::{CliError, Command, RunConfig};

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    match command {
        Command::Rates => rates(cfg),
        Command::Anneal => anneal(cfg),
        Command::Sweep => sweep(cfg),
        Command::Spectrum => spectrum(cfg),
        Command::SingleQubit => single_qubit(cfg),
        Command::Validate => validate(cfg),
    }
}

/// `n` evenly spaced points on `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// `n` log-spaced points on `[a, b]`, `a > 0`.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

fn gap_summary(gap_minimum: (f64, f64)) -> serde_json::Value {
    json!({ "s": gap_minimum.0, "gap_mK": gap_minimum.1 })
}

/// Turn collected per-item failures into a numerical error after the
/// artifacts are on disk.
fn fail_on(failures: &[String], total: usize, what: &str, written: Vec<PathBuf>) -> Result<Vec<PathBuf>, CliError> {
    if failures.is_empty() {
        Ok(written)
    } else {
        Err(CliError::Core(Error::Numerical(format!(
            "{} of {total} {what} failed; first: {}",
            failures.len(),
            failures[0]
        ))))
    }
}

pub fn spectrum(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let ham = cfg.hamiltonian()?;
    let s = &cfg.solver;
    let k = cfg.run.spectrum_levels.unwrap_or(s.levels);
    let lanczos = cfg.lanczos();
    let grid = linspace(s.s_start, s.s_end, cfg.run.s_points);
    let levels = energy_levels(&ham, &grid, k, &lanczos)?;
    let gap_minimum = locate_gap_minimum(&ham, s.s_start, s.s_end, s.max_ds, &lanczos)?;
    let at_min = eigenpairs_at(&ham, gap_minimum.0, k, &lanczos, None)?;

    let mut table = Table::new(["s".to_string()].into_iter().chain((0..k).map(|i| format!("E_{i}"))).chain(["gap_01".to_string()]));
    for (s, e) in grid.iter().zip(&levels) {
        let mut row = vec![num(*s)];
        row.extend(e.iter().map(|x| num(*x)));
        row.push(num(e[1] - e[0]));
        table.push(row);
    }
    let mut w = ArtifactWriter::new(cfg)?;
    w.table("spectrum", &table)?;
    let above: Vec<f64> = at_min.energies.iter().map(|e| e - at_min.energies[0]).collect();
    w.sidecar(
        "spectrum",
        cfg,
        &json!({
            "levels": k,
            "gap_minimum": gap_summary(gap_minimum),
            "excitations_at_minimum_mK": above,
        }),
    )?;
    Ok(w.into_written())
}

#[derive(Serialize)]
struct RateFailure {
    s: f64,
    temperature: f64,
    t_f_ms: f64,
    method: &'static str,
    message: String,
}

pub fn rates(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let ham = cfg.hamiltonian()?;
    let opts = cfg.anneal_options()?;
    let [m, n] = cfg.run.pair;
    if m.max(n) >= opts.levels {
        return Err(CliError::Config(format!(
            "pair ({m}, {n}) needs at least {} levels, solver.levels is {}",
            m.max(n) + 1,
            opts.levels
        )));
    }
    let (gap_minimum, track) = prepare_rotation(&ham, &opts)?;
    let grid = linspace(opts.s_start, opts.s_end, cfg.run.s_points);
    let nodes = nodes_on_grid(&ham, &grid, &opts, track.as_ref())?;
    let baths: Vec<BathParams> = cfg.run.temp_mk.iter().map(|&t| cfg.bath_at(t)).collect::<Result<_, _>>()?;

    let n_nodes = nodes.len();
    let jobs: Vec<(usize, usize, f64)> = (0..baths.len())
        .flat_map(|b| cfg.run.tf_ms.iter().flat_map(move |&tf| (0..n_nodes).map(move |i| (b, i, tf))))
        .collect();
    type Methods = (&'static str, fn(&hyqa_core::rates::PairCoefficients, &BathParams) -> hyqa_core::Result<RateResult>);
    let methods: [Methods; 4] = [
        ("convolution", rate_convolution),
        ("time_domain", rate_time_domain),
        ("redfield", |pc, b| Ok(rate_redfield(pc, b))),
        ("marcus", rate_marcus),
    ];
    let results: Vec<(Vec<String>, Vec<RateFailure>)> = jobs
        .par_iter()
        .map(|&(b, i, tf)| {
            let bath = &baths[b];
            let node = &nodes[i];
            let mut fails = Vec::new();
            let fail = |method: &'static str, e: &dyn std::fmt::Display| RateFailure {
                s: node.s,
                temperature: bath.temperature(),
                t_f_ms: tf,
                method,
                message: e.to_string(),
            };
            let mut row = vec![num(bath.temperature()), num(tf), num(node.s), num(node.theta)];
            match pair_coefficients(&node.frame, m, n, ms_to_time_units(tf)) {
                Ok(pc) => {
                    row.push(num(pc.omega));
                    row.push(num(pc.a));
                    let mut gamma_tau = None;
                    for (name, f) in &methods {
                        match f(&pc, bath) {
                            Ok(r) => {
                                if *name == "convolution" {
                                    gamma_tau = Some(r.applicability);
                                }
                                row.push(num(r.gamma));
                            }
                            Err(e) => {
                                fails.push(fail(name, &e));
                                row.push(String::new());
                            }
                        }
                    }
                    row.push(opt(gamma_tau));
                }
                Err(e) => {
                    fails.push(fail("coefficients", &e));
                    row.extend(std::iter::repeat_n(String::new(), 7));
                }
            }
            (row, fails)
        })
        .collect();

    let mut table = Table::new([
        "T_mK", "t_f_ms", "s", "theta", "omega_mK", "hamming", "convolution", "time_domain", "redfield", "marcus",
        "gamma_tau",
    ]);
    let mut failures = Vec::new();
    for (row, f) in results {
        table.push(row);
        failures.extend(f);
    }
    // Marcus has no zero-Hamming limit; those blanks are expected
    let hard: Vec<String> = failures
        .iter()
        .filter(|f| !(f.method == "marcus" && f.message.contains("Hamming")))
        .map(|f| format!("{} at s = {}: {}", f.method, f.s, f.message))
        .collect();
    let mut w = ArtifactWriter::new(cfg)?;
    w.table("rates", &table)?;
    w.sidecar(
        "rates",
        cfg,
        &json!({
            "pair": [m, n],
            "rate": "from level m into level n, per mK^-1 (1 mK^-1 = 7.6382 ns)",
            "rotated": track.is_some(),
            "gap_minimum": gap_summary(gap_minimum),
            "failures": failures,
        }),
    )?;
    fail_on(&hard, jobs.len(), "rate evaluations", w.into_written())
}

fn solve_sweep(cfg: &RunConfig) -> Result<(SpectralSweep, hyqa_core::dynamics::AnnealOptions), CliError> {
    let ham = cfg.hamiltonian()?;
    let opts = cfg.anneal_options()?;
    let sweep = spectral_sweep(&ham, &opts)?;
    Ok((sweep, opts))
}

fn sweep_summary(sweep: &SpectralSweep) -> serde_json::Value {
    json!({
        "nodes": sweep.nodes.len(),
        "levels": sweep.levels,
        "target_state": sweep.target,
        "gap_minimum": gap_summary(sweep.gap_minimum),
        "rotation_end_theta": sweep.track.as_ref().map(|t| t.theta_at(f64::INFINITY)),
    })
}

pub fn anneal(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let (sweep, opts) = solve_sweep(cfg)?;
    let k = opts.levels;
    let runs: Vec<(f64, f64)> = cfg
        .run
        .temp_mk
        .iter()
        .flat_map(|&t| cfg.run.tf_ms.iter().map(move |&tf| (t, tf)))
        .collect();
    let results: Vec<_> = runs
        .par_iter()
        .map(|&(t, tf)| {
            cfg.bath_at(t)
                .and_then(|b| integrate_anneal(&sweep, &b, ms_to_time_units(tf), &opts).map_err(CliError::from))
        })
        .collect();

    let columns = ["T_mK", "t_f_ms", "s", "t_ms"]
        .into_iter()
        .map(String::from)
        .chain((1..=k).map(|i| format!("p_{i}")))
        .chain((1..=k).map(|i| format!("p_inst_{i}")))
        .chain(["theta", "gap_mK", "max_gamma_tau", "p_gm"].into_iter().map(String::from));
    let mut table = Table::new(columns);
    let mut runs_json = Vec::new();
    let mut failures = Vec::new();
    for (&(t, tf), res) in runs.iter().zip(results) {
        match res {
            Ok(traj) => {
                for smp in &traj.samples {
                    let mut row = vec![num(t), num(tf), num(smp.s), num(time_units_to_ms(smp.t))];
                    row.extend(smp.p.iter().map(|x| num(*x)));
                    row.extend(smp.p_instantaneous.iter().map(|x| num(*x)));
                    row.extend([num(smp.theta), num(smp.gap), num(smp.max_gamma_tau), num(smp.p_target)]);
                    table.push(row);
                }
                runs_json.push(json!({
                    "T_mK": t, "t_f_ms": tf, "p_gm": traj.p_gm_final, "max_gamma_tau": traj.max_gamma_tau,
                    "explicit_steps": traj.explicit_steps, "exponential_steps": traj.exponential_steps,
                    "rejected_steps": traj.rejected_steps, "max_conservation_error": traj.max_conservation_error,
                }));
            }
            Err(e) => {
                failures.push(format!("T = {t} mK, t_f = {tf} ms: {e}"));
                runs_json.push(json!({ "T_mK": t, "t_f_ms": tf, "error": e.to_string() }));
            }
        }
    }
    let mut w = ArtifactWriter::new(cfg)?;
    w.table("anneal", &table)?;
    w.sidecar("anneal", cfg, &json!({ "sweep": sweep_summary(&sweep), "runs": runs_json }))?;
    fail_on(&failures, runs.len(), "anneals", w.into_written())
}

pub fn sweep(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let (sweep, opts) = solve_sweep(cfg)?;
    let template = cfg.bath()?;
    let tfs: Vec<f64> = cfg.run.tf_ms.iter().map(|&x| ms_to_time_units(x)).collect();
    let cells = temperature_sweep(&sweep, &template, &cfg.run.temp_mk, &tfs, &opts);

    let mut table = Table::new(["T_mK", "t_f_ms", "P_GM", "max_gamma_tau", "error"]);
    let mut failures = Vec::new();
    for c in &cells {
        let tf_ms = time_units_to_ms(c.t_f);
        table.push(vec![
            num(c.temperature),
            num(tf_ms),
            opt(c.p_gm),
            opt(c.max_gamma_tau),
            c.error.clone().unwrap_or_default(),
        ]);
        if let Some(e) = &c.error {
            failures.push(format!("T = {} mK, t_f = {tf_ms} ms: {e}", c.temperature));
        }
    }
    // per anneal time: the temperature of largest P_GM
    let best: Vec<_> = cfg
        .run
        .tf_ms
        .iter()
        .zip(&tfs)
        .map(|(&ms, &tf)| {
            let row: Vec<_> = cells.iter().filter(|c| c.t_f == tf).collect();
            let argmax = row
                .iter()
                .enumerate()
                .filter_map(|(i, c)| c.p_gm.map(|p| (i, p)))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            json!({
                "t_f_ms": ms,
                "best_T_mK": argmax.map(|(i, _)| row[i].temperature),
                "interior_maximum": argmax.is_some_and(|(i, _)| i > 0 && i + 1 < row.len()),
            })
        })
        .collect();
    let mut w = ArtifactWriter::new(cfg)?;
    w.table("sweep", &table)?;
    w.sidecar("sweep", cfg, &json!({ "sweep": sweep_summary(&sweep), "best_temperature": best }))?;
    fail_on(&failures, cells.len(), "sweep cells", w.into_written())
}

pub fn single_qubit(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let r = &cfg.run;
    let delta = r.sq_delta;
    let hs = logspace(r.h_min, r.h_max, r.h_points);
    let mut table = Table::new(["T_mK", "h_mK", "omega0_mK", "hybrid", "small_delta", "redfield", "marcus"]);
    let mut peaks = Vec::new();
    for &t in &r.temp_mk {
        let bath = cfg.bath_at(t)?;
        let rows: Vec<(f64, Vec<String>)> = hs
            .par_iter()
            .map(|&h| -> Result<(f64, Vec<String>), CliError> {
                let pc = single_qubit_pair(h, delta)?;
                let hybrid = rate_single_qubit(h, delta, &bath)?.gamma;
                let row = vec![
                    num(t),
                    num(h),
                    num(h.hypot(delta)),
                    num(hybrid),
                    num(rate_single_qubit_small_delta(h, delta, &bath)?),
                    num(rate_redfield(&pc, &bath).gamma),
                    num(rate_marcus(&pc, &bath)?.gamma),
                ];
                Ok((hybrid, row))
            })
            .collect::<Result<_, _>>()?;
        let (imax, _) = rows
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
            .expect("h grid is nonempty");
        peaks.push(json!({
            "T_mK": t,
            "peak_h_mK": hs[imax],
            "eps_l_mK": bath.eps_l(),
            "w_mK": bath.w(),
        }));
        for (_, row) in rows {
            table.push(row);
        }
    }
    let mut w = ArtifactWriter::new(cfg)?;
    w.table("single_qubit", &table)?;
    w.sidecar(
        "single-qubit",
        cfg,
        &json!({ "delta_mK": delta, "rate": "relaxation rate per mK^-1", "peaks": peaks }),
    )?;
    Ok(w.into_written())
}

/// The quick invariant suite run by `validate`.
pub fn validation_checks(cfg: &RunConfig) -> Result<Vec<Check>, CliError> {
    let seed = cfg.seed;
    let draws = cfg.run.validate_draws.max(1);
    let regimes: Vec<BathParams> = [(0.25, 2.0), (0.25, 10.0), (0.1, 10.0)]
        .iter()
        .map(|&(eta, w)| BathParams::from_width(w, eta, cfg.bath.omega_c, 10.0))
        .collect::<Result<_, _>>()?;
    let mut out = vec![
        checks::detailed_balance(seed, draws),
        // agreement needs η ln(ω_c/W)/2π ≪ 1, hence the small coupling
        checks::time_domain_agreement(seed.wrapping_add(1), draws.min(6), 1e-4, cfg.bath.omega_c),
        checks::marcus_limit(seed.wrapping_add(2), draws),
        checks::redfield_limit(seed.wrapping_add(3), draws),
        checks::zero_hamming(seed.wrapping_add(4), draws),
        checks::single_qubit_closed_form(&regimes, 12),
        checks::gaussian_normalization(seed.wrapping_add(5), draws),
        checks::envelope_balance(seed.wrapping_add(6), draws),
        checks::lanczos_vs_dense(seed.wrapping_add(7), 4, 8, 4),
        checks::couplings_vs_finite_differences(seed.wrapping_add(8), 4, 4),
        checks::lz_rotation_angle(100),
        checks::lz_rotated_coupling(20),
    ];
    out.extend(checks::frozen_boltzmann(&[2, 4]));
    out.extend(checks::cutoff_sensitivity(&cfg.bath()?));
    Ok(out)
}

pub fn checks_table(checks: &[Check]) -> Table {
    let mut t = Table::new(["check", "passed", "value", "threshold", "informational", "detail"]);
    for c in checks {
        t.push(vec![
            c.name.clone(),
            c.passed.to_string(),
            num(c.value),
            num(c.threshold),
            c.informational.to_string(),
            c.detail.clone(),
        ]);
    }
    t
}

pub fn validate(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let checks = validation_checks(cfg)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let mut w = ArtifactWriter::new(cfg)?;
    w.table("validate", &checks_table(&checks))?;
    w.sidecar(
        "validate",
        cfg,
        &json!({ "passed": failed.is_empty(), "failed": failed, "checks": checks }),
    )?;
    let written = w.into_written();
    if failed.is_empty() {
        Ok(written)
    } else {
        Err(CliError::Validation(format!("{} check(s) failed: {}", failed.len(), failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        let g = logspace(1.0, 100.0, 3);
        assert!((g[1] - 10.0).abs() < 1e-12 && (g[2] - 100.0).abs() < 1e-12);
    }
}
