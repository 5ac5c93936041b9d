//! Subcommands of the batch runner. Each writes its artifacts under the
//! output directory and returns the process exit code with the report.
//!
//! Exit codes: 0 success, 1 infeasible parameters, failed checks or invalid
//! input, 2 no contraction, 3 divergence.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::data::DataRecipe;
use crate::error::{Error, Result};
use crate::fields::{read_field, write_field, BoundaryField, Field};
use crate::kernels::kernel_bound_probe;
use crate::morrey::{block_identity_probe, conjugate, holder_probe, riesz_probe, MorreySpec, RieszSetting};
use crate::params::{check_admissible, ExponentSet};
use crate::report::ProbeReport;
use crate::solver::Solver;
use crate::verify::{
    check_axial_symmetry, check_positivity, check_self_similarity, check_trace_convergence, default_test_functions,
    stability_experiment, DefectReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_NO_CONTRACTION: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoContraction { .. } => EXIT_NO_CONTRACTION,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_FAILED,
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub code: i32,
    /// The JSON document also written to disk.
    pub report: String,
}

/// `{command, input_hash, config, report}` with sorted keys.
fn envelope(command: &str, cfg: &ExperimentConfig, hash: &str, report: impl Serialize) -> Result<String> {
    let doc = json!({
        "command": command,
        "config": serde_json::to_value(cfg)?,
        "input_hash": hash,
        "report": serde_json::to_value(report)?,
    });
    let mut s = serde_json::to_string_pretty(&sort(doc))?;
    s.push('\n');
    Ok(s)
}

/// Recursively sorted object keys.
fn sort(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let sorted: BTreeMap<String, Value> = map.into_iter().map(|(k, v)| (k, sort(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(sort).collect()),
        other => other,
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn failure(command: &str, cfg: &ExperimentConfig, hash: &str, e: &Error) -> Result<Outcome> {
    let report = json!({ "error": e.to_string(), "exit_code": exit_code(e) });
    let text = envelope(command, cfg, hash, report)?;
    write(&out_dir(cfg)?, &format!("{command}.json"), &text)?;
    Ok(Outcome { code: exit_code(e), report: text })
}

/// Default configuration as JSON.
pub fn cmd_init() -> String {
    let mut s = ExperimentConfig::default().to_json();
    s.push('\n');
    s
}

pub fn cmd_check_params(cfg: &ExperimentConfig) -> Result<Outcome> {
    let hash = cfg.content_hash(b"");
    let exps = match cfg.exponents() {
        Ok(e) => e,
        Err(e) => return failure("check-params", cfg, &hash, &e),
    };
    let report = check_admissible(&exps);
    let body = json!({ "exponents": exps, "admissibility": report });
    let text = envelope("check-params", cfg, &hash, body)?;
    write(&out_dir(cfg)?, "check-params.json", &text)?;
    Ok(Outcome { code: if report.admissible { EXIT_OK } else { EXIT_FAILED }, report: text })
}

fn admissible_exponents(cfg: &ExperimentConfig) -> Result<ExponentSet> {
    let exps = cfg.exponents()?;
    let report = check_admissible(&exps);
    if !report.admissible {
        let failed: Vec<&str> = report.failed().map(|c| c.name.as_str()).collect();
        return Err(Error::InvalidArgument(format!("inadmissible exponents: {}", failed.join("; "))));
    }
    Ok(exps)
}

fn build_data(recipe: &DataRecipe, cfg: &ExperimentConfig) -> Result<BoundaryField> {
    recipe.build(&cfg.half_space_grid()?.tan)
}

/// Solves and writes `solution.bin`, `iterations.csv` and `solve.json`.
pub fn cmd_solve(cfg: &ExperimentConfig, timing: bool) -> Result<Outcome> {
    let hash = cfg.content_hash(b"");
    match solve_inner(cfg, timing, &hash) {
        Ok(o) => Ok(o),
        Err(e) => failure("solve", cfg, &hash, &e),
    }
}

fn solve_inner(cfg: &ExperimentConfig, timing: bool, hash: &str) -> Result<Outcome> {
    let exps = admissible_exponents(cfg)?;
    let ops = cfg.operators_engine()?;
    let solver = Solver::new(&ops, &exps, cfg.solver.clone())?;
    let phi = build_data(&cfg.data, cfg)?;
    let rec = solver.solve(&phi)?;
    let dir = out_dir(cfg)?;
    let mut w = BufWriter::new(fs::File::create(dir.join("solution.bin"))?);
    write_field(&mut w, &rec.u)?;
    drop(w);
    let mut csv = Vec::new();
    rec.write_csv(&mut csv, timing)?;
    fs::write(dir.join("iterations.csv"), csv)?;
    let mut rows = rec.log.clone();
    if !timing {
        rows.iter_mut().for_each(|r| r.wall_seconds = 0.0);
    }
    let body = json!({
        "converged": rec.converged,
        "iterations": rec.iterations,
        "x_norm": rec.x_norm,
        "residuals": rec.residuals,
        "ratios": rec.ratios,
        "stayed_in_ball": rec.stayed_in_ball(),
        "min_u": rec.u.min(),
        "max_abs_u": rec.u.max_abs(),
        "tail_bound_i1": ops.tail_bound(phi.max_abs(), ops.times().t_min),
    });
    let text = envelope("solve", cfg, hash, body)?;
    write(&dir, "solve.json", &text)?;
    Ok(Outcome { code: if rec.converged { EXIT_OK } else { EXIT_FAILED }, report: text })
}

/// Runs the enabled verifiers on a stored solution; writes `verify.json`.
pub fn cmd_verify(cfg: &ExperimentConfig, solution: &Path) -> Result<Outcome> {
    let bytes = match fs::read(solution) {
        Ok(b) => b,
        Err(e) => return failure("verify", cfg, &cfg.content_hash(b""), &Error::Io(e)),
    };
    let hash = cfg.content_hash(&bytes);
    match verify_inner(cfg, &bytes, &hash) {
        Ok(o) => Ok(o),
        Err(e) => failure("verify", cfg, &hash, &e),
    }
}

fn verify_inner(cfg: &ExperimentConfig, bytes: &[u8], hash: &str) -> Result<Outcome> {
    let u: Field = read_field(&mut &bytes[..])?;
    let ops = cfg.operators_engine()?;
    if u.grid != *ops.grid() || u.times != *ops.times() {
        return Err(Error::InvalidArgument("solution file does not match the configured grids".into()));
    }
    let exps = admissible_exponents(cfg)?;
    let phi = build_data(&cfg.data, cfg)?;
    let v = &cfg.verify;
    let mut reports: Vec<DefectReport> = Vec::new();
    if v.self_similarity.enabled {
        reports.push(match cfg.data.homogeneity() {
            Some(k) if (k - exps.params.self_similar_degree()).abs() < 1e-12 => {
                check_self_similarity(&u, &phi, k, &v.self_similarity.options).unwrap_or_else(|e| failed_check("self-similarity", &e))
            }
            _ => DefectReport::skipped("self-similarity", "data is not homogeneous of the self-similar degree"),
        });
    }
    if v.symmetry.enabled {
        reports.push(if cfg.data.is_radial() {
            check_axial_symmetry(&u, &v.symmetry.options)?
        } else {
            DefectReport::skipped("axial-symmetry", "data is not radial")
        });
    }
    if v.positivity.enabled {
        reports.push(check_positivity(&u, cfg.data.is_nonnegative(), &v.positivity.options));
    }
    if v.trace.enabled {
        let u0 = crate::fields::trace(&u);
        let psi = default_test_functions(&u.grid.tan);
        reports.push(check_trace_convergence(&u0, &phi, &psi, &v.trace.options)?);
    }
    if v.stability.enabled {
        let solver = Solver::new(&ops, &exps, cfg.solver.clone())?;
        let a = build_data(&v.stability.options.perturbation, cfg)?;
        reports.push(match stability_experiment(&solver, &phi, &a, &v.stability.options.options) {
            Ok((r, _, _)) => r,
            Err(e) => failed_check("stability", &e),
        });
    }
    let code = if reports.iter().any(|r| r.failed()) { EXIT_FAILED } else { EXIT_OK };
    let text = envelope("verify", cfg, hash, &reports)?;
    write(&out_dir(cfg)?, "verify.json", &text)?;
    Ok(Outcome { code, report: text })
}

fn failed_check(property: &str, e: &Error) -> DefectReport {
    let mut r = DefectReport::skipped(property, "");
    r.status = crate::verify::Status::Fail;
    r.note = Some(e.to_string());
    r
}

/// Kernel bounds, Hölder, Riesz (boundary and trace), contraction and block
/// approximate identity; writes `probe.json`.
pub fn cmd_probe(cfg: &ExperimentConfig) -> Result<Outcome> {
    let hash = cfg.content_hash(b"");
    match probe_inner(cfg, &hash) {
        Ok(o) => Ok(o),
        Err(e) => failure("probe", cfg, &hash, &e),
    }
}

/// The probe suite without file output.
pub fn run_probes(cfg: &ExperimentConfig) -> Result<Vec<ProbeReport>> {
    let seed = cfg.require_seed()?;
    let exps = admissible_exponents(cfg)?;
    let p = &cfg.probes;
    let grid = cfg.half_space_grid()?;
    let n = grid.n;
    let d = n - 1;
    let mu = exps.params.mu;
    let policy = &cfg.solver.policy;
    let mut out = vec![kernel_bound_probe(n, p.kernel_samples, p.kernel_theta, exps.q2, seed)?];
    let q2 = exps.q2;
    out.push(holder_probe(
        &grid.tan,
        [
            MorreySpec::boundary(q2, mu, d)?,
            MorreySpec::boundary(q2 / (exps.params.p2 - 1.0), mu, d)?,
            MorreySpec::boundary(q2 / exps.params.p2, mu, d)?,
        ],
        p.holder_trials,
        seed,
        policy,
        p.holder_slack,
    )?);
    let base = crate::data::Bump { amplitude: 1.0, width: 1.0, center: vec![0.0; d] };
    let nm = n as f64 - mu;
    // Boundary: L^2-type source into a q = 6 target.
    let (s1, s2) = (2.0, 6.0);
    let gamma_b = (d as f64 - mu) / s1 - (d as f64 - mu) / s2;
    out.push(riesz_probe(
        &RieszSetting::Boundary(grid.tan.clone()),
        &base,
        &p.riesz_dilations,
        gamma_b,
        &MorreySpec::boundary(s1, mu, d)?,
        &MorreySpec::boundary(s2, mu, d)?,
        policy,
        p.riesz_tolerance,
    )?);
    let base_n = crate::data::Bump { amplitude: 1.0, width: 1.0, center: vec![0.0; n] };
    let (t1, t2) = (2.0, 4.0);
    let gamma_t = nm / t1 - (nm - 1.0) / t2;
    out.push(riesz_probe(
        &RieszSetting::Trace(grid.clone()),
        &base_n,
        &p.riesz_dilations,
        gamma_t,
        &MorreySpec::half_space(t1, mu, n)?,
        &MorreySpec::boundary(t2, mu, d)?,
        policy,
        p.riesz_tolerance,
    )?);
    let ops = cfg.operators_engine()?;
    let solver = Solver::new(&ops, &exps, cfg.solver.clone())?;
    let phi = build_data(&cfg.data, cfg)?;
    out.push(solver.contraction_probe(&phi, p.contraction_pairs, seed)?);
    out.push(block_identity_probe(&grid.tan, conjugate(q2), mu, p.blocks, &p.block_times, seed)?);
    Ok(out)
}

fn probe_inner(cfg: &ExperimentConfig, hash: &str) -> Result<Outcome> {
    let reports = run_probes(cfg)?;
    let code = if reports.iter().all(|r| r.pass && r.max_ratio.is_finite()) { EXIT_OK } else { EXIT_FAILED };
    let text = envelope("probe", cfg, hash, &reports)?;
    write(&out_dir(cfg)?, "probe.json", &text)?;
    Ok(Outcome { code, report: text })
}
