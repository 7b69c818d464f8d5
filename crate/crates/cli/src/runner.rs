//! Mode orchestration. Every mode loads its input, runs its part of the
//! pipeline, and writes report.json plus summary.txt even when a stage
//! fails, so a broken run still leaves evidence behind. Exit codes: 0 when
//! every certificate passes, 2 when the run completed but a certificate did
//! not hold (including failed potential conditions), 1 on hard errors.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, ensure, Context, Result};
use serde_json::{json, Map, Value};

use olpdg_core::linalg::Definiteness;
use olpdg_core::potential::{check_conditions, DEFAULT_CONDITION_TOL};
use olpdg_core::smartgrid::{default_scenario, extract_report, to_nzdg, SmartGridScenario};
use olpdg_core::verify::{BestResponseReport, KktReport};
use olpdg_core::{solve_game, verify_trajectory, LqGame, PipelineOutput, SolveOptions};

use crate::artifacts;
use crate::format::{self, InputDoc};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CERT_FAIL: i32 = 2;

#[derive(Debug, Clone)]
pub struct CommonOpts {
    pub out: PathBuf,
    pub tol: Option<f64>,
    pub seed: u64,
}

type Stage = (&'static str, anyhow::Error);

/// Accumulates the report document and the per-certificate summary lines.
struct RunLog {
    doc: Map<String, Value>,
    certs: Vec<(String, bool, String)>,
}

impl RunLog {
    fn new(mode: &str) -> Self {
        let mut doc = Map::new();
        doc.insert("schema".to_string(), json!(format::SCHEMA));
        doc.insert("mode".to_string(), json!(mode));
        RunLog {
            doc,
            certs: Vec::new(),
        }
    }

    fn put<T: serde::Serialize>(&mut self, key: &str, value: &T) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.doc.insert(key.to_string(), v);
    }

    fn cert(&mut self, name: impl Into<String>, pass: bool, evidence: String) {
        self.certs.push((name.into(), pass, evidence));
    }

    fn all_pass(&self) -> bool {
        self.certs.iter().all(|(_, pass, _)| *pass)
    }

    fn flush(&mut self, dir: &Path, error: Option<(&str, String)>) -> Result<()> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let result = match (&error, self.all_pass()) {
            (Some((stage, _)), _) => format!("ERROR at stage {stage}"),
            (None, true) => "PASS".to_string(),
            (None, false) => "FAIL".to_string(),
        };
        if let Some((stage, message)) = &error {
            self.doc.insert(
                "error".to_string(),
                json!({"stage": stage, "message": message}),
            );
        }
        self.doc.insert("result".to_string(), json!(result));

        let mut summary = String::new();
        for (name, pass, evidence) in &self.certs {
            let verdict = if *pass { "pass" } else { "FAIL" };
            summary.push_str(&format!("{name}: {verdict} ({evidence})\n"));
        }
        if let Some((stage, message)) = &error {
            summary.push_str(&format!("error at stage {stage}: {message}\n"));
        }
        summary.push_str(&format!("result: {result}\n"));

        let report = serde_json::to_string_pretty(&Value::Object(self.doc.clone()))
            .context("serializing report")?;
        fs::write(dir.join("report.json"), report + "\n")
            .with_context(|| format!("writing {}", dir.join("report.json").display()))?;
        fs::write(dir.join("summary.txt"), &summary)
            .with_context(|| format!("writing {}", dir.join("summary.txt").display()))?;
        print!("{summary}");
        Ok(())
    }
}

/// Flush failure artifacts and attach the stage name to the error.
fn abort(mut log: RunLog, dir: &Path, stage: &'static str, err: anyhow::Error) -> anyhow::Error {
    let message = format!("{err:#}");
    if let Err(flush_err) = log.flush(dir, Some((stage, message))) {
        return err.context(format!(
            "stage {stage} (failure artifacts could not be written: {flush_err})"
        ));
    }
    err.context(format!("stage {stage}"))
}

fn solve_options(c: &CommonOpts) -> SolveOptions {
    let defaults = SolveOptions::default();
    SolveOptions {
        seed: c.seed,
        kkt_tol: c.tol.unwrap_or(defaults.kkt_tol),
        ..defaults
    }
}

fn load_game_like(input: &Path) -> Result<LqGame> {
    match format::load_input(input)? {
        InputDoc::Game(g) => Ok(g),
        InputDoc::Scenario(sc) => {
            to_nzdg(&sc).map_err(|e| anyhow!("building the game from the scenario: {e}"))
        }
    }
}

fn load_scenario(input: &Path) -> Result<SmartGridScenario> {
    match format::load_input(input)? {
        InputDoc::Scenario(sc) => Ok(sc),
        InputDoc::Game(_) => Err(anyhow!(
            "{} is a game file; this mode needs kind = \"smartgrid\"",
            input.display()
        )),
    }
}

/// Validation plus potential conditions on the symmetrized data, mirroring
/// what the solver does internally. Returns whether the conditions hold.
fn precheck(log: &mut RunLog, game: &LqGame, tol: f64) -> std::result::Result<bool, Stage> {
    let validation = game.validate();
    log.put("validation", &validation);
    if !validation.is_valid() {
        return Err((
            "validate",
            anyhow!("game fails validation: {}", validation.errors.join("; ")),
        ));
    }
    let report = check_conditions(&game.clone().symmetrized(), tol);
    log.cert(
        "potential conditions",
        report.is_potential,
        format!(
            "worst deviation {:.3e}, {} violations at tolerance {:.1e}",
            report.worst_deviation,
            report.violations.len(),
            tol
        ),
    );
    log.put("potential", &report);
    Ok(report.is_potential)
}

#[allow(clippy::too_many_arguments)]
fn record_certificates(
    log: &mut RunLog,
    opts: &SolveOptions,
    kkt: &KktReport,
    kkt_pass: bool,
    feasible: bool,
    min_margin: f64,
    sufficiency_complete: bool,
    hessian_pd: bool,
    hessian_min_pivot: f64,
    hessian_definiteness: Definiteness,
    best_response: &[BestResponseReport],
    certified: bool,
) {
    let bound = opts.kkt_tol * kkt.scale;
    log.put(
        "kkt",
        &json!({
            "residuals": kkt,
            "max_residual": kkt.max_residual(),
            "bound": bound,
            "pass": kkt_pass,
        }),
    );
    log.put("feasible", &feasible);
    log.put("min_margin", &min_margin);
    log.put(
        "hessian",
        &json!({
            "sufficiency_complete": sufficiency_complete,
            "positive_definite": hessian_pd,
            "min_pivot": hessian_min_pivot,
            "definiteness": hessian_definiteness,
        }),
    );
    log.put("best_response", &best_response);
    log.put("certified", &certified);

    log.cert(
        "kkt residuals",
        kkt_pass,
        format!("max {:.3e} vs bound {:.3e}", kkt.max_residual(), bound),
    );
    log.cert(
        "feasibility",
        feasible,
        format!("min constraint margin {min_margin:.3e}"),
    );
    log.cert(
        "hessian positive definite",
        hessian_pd,
        format!("min pivot {hessian_min_pivot:.3e}"),
    );
    for rep in best_response {
        let allowance = opts.br_gap_tol * (1.0 + rep.traj_cost.abs());
        let pass = rep.gap >= -allowance && rep.sampled_gap >= -allowance;
        log.cert(
            format!("best response player {}", rep.player),
            pass,
            format!(
                "gap {:.3e}, sampled {:.3e}, allowance {:.3e}",
                rep.gap, rep.sampled_gap, allowance
            ),
        );
    }
}

enum SolveFlow {
    NotPotential,
    Solved(Box<PipelineOutput>),
}

fn solve_and_record(
    log: &mut RunLog,
    game: &LqGame,
    c: &CommonOpts,
) -> std::result::Result<SolveFlow, Stage> {
    let opts = solve_options(c);
    log.put("options", &opts);
    if !precheck(log, game, opts.potential_tol)? {
        return Ok(SolveFlow::NotPotential);
    }
    let out = solve_game(game, &opts).map_err(|e| ("solve", anyhow!(e)))?;
    log.put(
        "lcp",
        &json!({"status": out.lcp_status, "pivots": out.lcp_pivots, "dim": out.lcp_dim}),
    );
    log.cert(
        "lcp",
        true,
        format!(
            "{:?} after {} pivots, dimension {}",
            out.lcp_status, out.lcp_pivots, out.lcp_dim
        ),
    );
    log.put("costs", &out.costs);
    log.put("potential_total", &out.potential_total);
    record_certificates(
        log,
        &opts,
        &out.kkt,
        out.kkt_pass,
        out.feasible,
        out.min_margin,
        out.sufficiency_complete,
        out.hessian_pd,
        out.hessian_min_pivot,
        out.hessian_definiteness,
        &out.best_response,
        out.certified,
    );
    artifacts::write_trajectory_csv(&c.out.join("trajectory.csv"), &game.dims, &out.trajectory)
        .map_err(|e| ("artifacts", e))?;
    artifacts::write_lcp_csv(&c.out.join("lcp.csv"), &out).map_err(|e| ("artifacts", e))?;
    Ok(SolveFlow::Solved(Box::new(out)))
}

pub fn run_check(input: &Path, c: &CommonOpts) -> Result<i32> {
    fs::create_dir_all(&c.out)?;
    let mut log = RunLog::new("check");
    log.put("input", &input.display().to_string());
    let game = match load_game_like(input) {
        Ok(g) => g,
        Err(e) => return Err(abort(log, &c.out, "load", e)),
    };
    let tol = c.tol.unwrap_or(DEFAULT_CONDITION_TOL);
    match precheck(&mut log, &game, tol) {
        Ok(is_potential) => {
            log.flush(&c.out, None)?;
            Ok(if is_potential { EXIT_PASS } else { EXIT_CERT_FAIL })
        }
        Err((stage, e)) => Err(abort(log, &c.out, stage, e)),
    }
}

pub fn run_solve(input: &Path, c: &CommonOpts) -> Result<i32> {
    fs::create_dir_all(&c.out)?;
    let mut log = RunLog::new("solve");
    log.put("input", &input.display().to_string());
    let game = match load_game_like(input) {
        Ok(g) => g,
        Err(e) => return Err(abort(log, &c.out, "load", e)),
    };
    match solve_and_record(&mut log, &game, c) {
        Ok(SolveFlow::NotPotential) => {
            log.flush(&c.out, None)?;
            Ok(EXIT_CERT_FAIL)
        }
        Ok(SolveFlow::Solved(out)) => {
            log.flush(&c.out, None)?;
            Ok(if out.certified { EXIT_PASS } else { EXIT_CERT_FAIL })
        }
        Err((stage, e)) => Err(abort(log, &c.out, stage, e)),
    }
}

pub fn run_verify(input: &Path, c: &CommonOpts) -> Result<i32> {
    fs::create_dir_all(&c.out)?;
    let mut log = RunLog::new("verify");
    log.put("input", &input.display().to_string());
    let game = match load_game_like(input) {
        Ok(g) => g,
        Err(e) => return Err(abort(log, &c.out, "load", e)),
    };
    let traj_path = c.out.join("trajectory.csv");
    log.put("trajectory", &traj_path.display().to_string());
    let traj = match artifacts::read_trajectory_csv(&traj_path, &game.dims) {
        Ok(t) => t,
        Err(e) => return Err(abort(log, &c.out, "ingest", e)),
    };
    let opts = solve_options(c);
    log.put("options", &opts);
    match precheck(&mut log, &game, opts.potential_tol) {
        Ok(true) => {}
        Ok(false) => {
            log.flush(&c.out, None)?;
            return Ok(EXIT_CERT_FAIL);
        }
        Err((stage, e)) => return Err(abort(log, &c.out, stage, e)),
    }
    let ver = match verify_trajectory(&game, &traj, &opts) {
        Ok(v) => v,
        Err(e) => return Err(abort(log, &c.out, "certify", anyhow!(e))),
    };
    log.put("costs", &ver.costs);
    log.put("potential_total", &ver.potential_total);
    record_certificates(
        &mut log,
        &opts,
        &ver.kkt,
        ver.kkt_pass,
        ver.feasible,
        ver.min_margin,
        ver.sufficiency_complete,
        ver.hessian_pd,
        ver.hessian_min_pivot,
        ver.hessian_definiteness,
        &ver.best_response,
        ver.certified,
    );
    log.flush(&c.out, None)?;
    Ok(if ver.certified { EXIT_PASS } else { EXIT_CERT_FAIL })
}

/// Smart grid solve plus scenario-level readback. Returns the exit code,
/// each user's total stored energy, and whether the run certified.
fn smartgrid_core(
    log: &mut RunLog,
    sc: &SmartGridScenario,
    c: &CommonOpts,
) -> std::result::Result<(i32, Vec<f64>, bool), Stage> {
    format::save_scenario(&c.out.join("scenario.toml"), sc).map_err(|e| ("artifacts", e))?;
    let game = to_nzdg(sc).map_err(|e| ("build", anyhow!(e)))?;
    let out = match solve_and_record(log, &game, c)? {
        SolveFlow::Solved(out) => out,
        // The transformation shares every coupling term, so a failed
        // condition check means corrupt input, not a soft certificate miss.
        SolveFlow::NotPotential => {
            return Err((
                "potential",
                anyhow!("scenario transformation unexpectedly fails the potential conditions"),
            ))
        }
    };
    let rep = extract_report(&out.trajectory, sc).map_err(|e| ("report", anyhow!(e)))?;
    artifacts::write_grid_series_csv(&c.out.join("grid_series.csv"), sc, &rep)
        .map_err(|e| ("artifacts", e))?;

    let totals: Vec<f64> = (0..sc.users)
        .map(|i| (0..=sc.horizon).map(|k| rep.storage[k][i]).sum())
        .collect();
    let cap_ok = (0..sc.users).all(|i| {
        (0..=sc.horizon)
            .all(|k| rep.storage[k][i] >= -1e-9 && rep.storage[k][i] <= sc.kmax[i] + 1e-9)
    });
    let head_min = rep
        .storage_margin
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    log.put(
        "grid",
        &json!({
            "total_storage": totals,
            "unsatisfied_demand": rep.unsatisfied_demand,
            "unbalance": rep.unbalance,
            "storage_cost": rep.storage_cost,
            "incentive": rep.incentive,
            "salvage": rep.salvage,
            "cost_totals": rep.total,
            "min_headroom_margin": head_min,
        }),
    );
    log.cert(
        "battery bounds",
        cap_ok,
        "levels within [0, Kmax] for every user and stage".to_string(),
    );
    log.cert(
        "storage headroom",
        head_min >= -1e-9,
        format!("min margin {head_min:.3e}"),
    );
    let certified = out.certified && cap_ok && head_min >= -1e-9;
    let code = if certified { EXIT_PASS } else { EXIT_CERT_FAIL };
    Ok((code, totals, certified))
}

pub fn run_smartgrid(input: Option<&Path>, c: &CommonOpts) -> Result<i32> {
    fs::create_dir_all(&c.out)?;
    let mut log = RunLog::new("smartgrid");
    let sc = match input {
        None => {
            log.put("input", &"builtin default scenario");
            default_scenario()
        }
        Some(p) => {
            log.put("input", &p.display().to_string());
            match load_scenario(p) {
                Ok(sc) => sc,
                Err(e) => return Err(abort(log, &c.out, "load", e)),
            }
        }
    };
    match smartgrid_core(&mut log, &sc, c) {
        Ok((code, _, _)) => {
            log.flush(&c.out, None)?;
            Ok(code)
        }
        Err((stage, e)) => Err(abort(log, &c.out, stage, e)),
    }
}

// TODO: sweep other scenario knobs (eps headroom, bcost) once someone needs them.
fn parse_sweep_param(param: &str, users: usize) -> Result<usize> {
    let idx: usize = param
        .strip_prefix('a')
        .and_then(|rest| rest.parse().ok())
        .with_context(|| {
            format!("unsupported sweep parameter `{param}`; expected a<user>, for example a2")
        })?;
    ensure!(
        (1..=users).contains(&idx),
        "sweep parameter `{param}` out of range: the scenario has {users} users"
    );
    Ok(idx - 1)
}

pub fn run_sweep(
    input: Option<&Path>,
    c: &CommonOpts,
    param: &str,
    scales: &[f64],
) -> Result<i32> {
    fs::create_dir_all(&c.out)?;
    let mut log = RunLog::new("sweep");
    log.put("param", &param);
    log.put("scales", &scales);
    let base = match input {
        None => {
            log.put("input", &"builtin default scenario");
            default_scenario()
        }
        Some(p) => {
            log.put("input", &p.display().to_string());
            match load_scenario(p) {
                Ok(sc) => sc,
                Err(e) => return Err(abort(log, &c.out, "load", e)),
            }
        }
    };
    let user = match parse_sweep_param(param, base.users) {
        Ok(u) => u,
        Err(e) => return Err(abort(log, &c.out, "config", e)),
    };
    if scales.is_empty() {
        return Err(abort(
            log,
            &c.out,
            "config",
            anyhow!("--scale needs at least one factor"),
        ));
    }

    let mut rows = Vec::new();
    let mut all_certified = true;
    for &scale in scales {
        let mut sc = base.clone();
        for k in 0..=sc.horizon {
            sc.aincent[k][user] *= scale;
        }
        let sub = CommonOpts {
            out: c.out.join(format!("{param}_{scale}")),
            tol: c.tol,
            seed: c.seed,
        };
        if let Err(e) = fs::create_dir_all(&sub.out) {
            return Err(abort(log, &c.out, "artifacts", anyhow!(e)));
        }
        let mut sublog = RunLog::new("smartgrid");
        sublog.put("input", &format!("sweep point {param} x {scale}"));
        match smartgrid_core(&mut sublog, &sc, &sub) {
            Ok((_, totals, certified)) => {
                if let Err(e) = sublog.flush(&sub.out, None) {
                    return Err(abort(log, &c.out, "artifacts", e));
                }
                let shown: Vec<String> = totals.iter().map(|t| format!("{t:.2}")).collect();
                log.cert(
                    format!("{param} x {scale}"),
                    certified,
                    format!("total storage {}", shown.join(" / ")),
                );
                all_certified &= certified;
                rows.push((scale, totals, certified));
            }
            Err((stage, e)) => {
                let message = format!("{e:#}");
                let _ = sublog.flush(&sub.out, Some((stage, message.clone())));
                return Err(abort(
                    log,
                    &c.out,
                    stage,
                    anyhow!("sweep point {param} x {scale}: {message}"),
                ));
            }
        }
    }
    if let Err(e) = artifacts::write_sweep_csv(&c.out.join("sweep.csv"), base.users, &rows) {
        return Err(abort(log, &c.out, "artifacts", e));
    }
    let sweep_rows: Vec<Value> = rows
        .iter()
        .map(|(scale, totals, certified)| {
            json!({"scale": scale, "total_storage": totals, "certified": certified})
        })
        .collect();
    log.put("sweep", &sweep_rows);
    log.flush(&c.out, None)?;
    Ok(if all_certified { EXIT_PASS } else { EXIT_CERT_FAIL })
}
