//! Subcommand implementations: simulate, certify, pf, sweep.
//!
//! Every command returns the process exit code on success and a
//! [`CliError`] (which also carries an exit code) on failure. Numeric
//! artifacts — trajectory/diagnostic CSVs, certificate JSON, sweep
//! summaries, pf output — are deterministic functions of (config, seed,
//! version); `run.json` additionally records wall time and is the one
//! artifact exempt from byte reproducibility.

use crate::config::{self, CliError, ModelKind};
use crate::{JobArgs, PfArgs};
use diffpos::certify::{alignment_ratio, certify_diffpos, sync_distance, CertError, DPCertificate};
use diffpos::dynamics::{variational_flow_multi, DynError, SystemSpec, Trajectory, DEFAULT_STEP};
use diffpos::positivity::{is_positive_map, pf_split, CertMode, TimeKind};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::{json, Value};
use std::fs;
use std::path::Path;
use std::time::Instant;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn io_err(what: &str, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("cannot write {what}: {e}"))
}

/// Integration failures that still produce a partial trajectory (exit 3),
/// as opposed to calling-convention mistakes (exit 2).
fn is_runtime(e: &DynError) -> bool {
    matches!(
        e,
        DynError::FieldBlowUp { .. }
            | DynError::DomainViolation(_)
            | DynError::NonFinite(_)
            | DynError::Lie(_)
    )
}

fn map_cert_err(e: CertError) -> CliError {
    match &e {
        CertError::Dyn(d) if is_runtime(d) => CliError::Runtime(e.to_string()),
        CertError::Lie(_) => CliError::Runtime(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

/// Report times `k·h_report` strictly inside the horizon (leaving at least
/// one base step for the landing segment), then the horizon itself.
fn report_grid(t_final: f64, h_report: f64, h: f64) -> Vec<f64> {
    let mut ts = Vec::new();
    let mut k = 1u64;
    loop {
        let t = (k as f64) * h_report;
        if t > t_final - h * (1.0 - 1e-9) {
            break;
        }
        ts.push(t);
        k += 1;
    }
    ts.push(t_final);
    ts
}

/// Writes `run.json`: command echo, full config, crate version, wall time,
/// artifact list, plus any command-specific extras.
fn write_run_json(
    dir: &Path,
    command: &str,
    cfg: &Value,
    outputs: &[&str],
    extra: Value,
    wall_time_s: f64,
) -> Result<(), CliError> {
    let mut doc = json!({
        "command": command,
        "config": cfg,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": wall_time_s,
        "outputs": outputs,
    });
    if let (Some(map), Value::Object(ext)) = (doc.as_object_mut(), extra) {
        for (k, v) in ext {
            map.insert(k, v);
        }
    }
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| CliError::Runtime(e.to_string()))?
        + "\n";
    fs::write(dir.join("run.json"), text).map_err(|e| io_err("run.json", e))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Integrates the configured model over `[0, T]`, recording the state (and
/// the optional variational tangent) on the report grid, and writes
/// `trajectory.csv`, `diagnostics.csv` and `run.json`. A field blow-up or
/// domain escape still writes the partial trajectory and exits 3.
pub fn simulate(args: &JobArgs) -> Result<u8, CliError> {
    let start = Instant::now();
    let cfg = config::load_config(&args.config)?;
    let built = config::build_model(config::get(&cfg, "model")?)?;
    let sys = &built.sys;
    let n = sys.group.dim();
    let discrete = sys.time_kind == TimeKind::Discrete;

    let integ = config::get(&cfg, "integrator")?;
    let t_final = config::get_f64(integ, "T")?;
    if !t_final.is_finite() || t_final <= 0.0 {
        return Err(CliError::config("integrator.T must be positive"));
    }
    let h = config::opt_f64(integ, "h")?.unwrap_or(if discrete { 1.0 } else { DEFAULT_STEP });
    if discrete {
        if (h - 1.0).abs() > 1e-9 {
            return Err(CliError::config(
                "discrete-time systems step with integrator.h = 1",
            ));
        }
        let r = t_final.round();
        if (t_final - r).abs() > 1e-9 || r < 1.0 {
            return Err(CliError::config(
                "integrator.T must be a positive integer step count for discrete-time systems",
            ));
        }
    } else if !h.is_finite() || h <= 0.0 || h > t_final {
        return Err(CliError::config(
            "integrator.h must be positive and no larger than T",
        ));
    }
    let mut h_report = config::opt_f64(integ, "h_report")?.unwrap_or(10.0 * h);
    if discrete {
        h_report = h_report.round().max(1.0);
    } else if !h_report.is_finite() || h_report < h * (1.0 - 1e-9) {
        return Err(CliError::config(
            "integrator.h_report must be at least the base step h",
        ));
    }

    let init = config::get_f64_array(&cfg, "initial_state")?;
    if init.len() != n {
        return Err(CliError::config(format!(
            "initial_state must have {n} coordinates, got {}",
            init.len()
        )));
    }
    if !init.iter().all(|x| x.is_finite()) {
        return Err(CliError::config("initial_state must be finite"));
    }
    let g0 = sys
        .group
        .exp(&DVector::from_vec(init))
        .map_err(CliError::config)?;

    let tangent: Option<DVector<f64>> = match cfg.get("tangent") {
        None | Some(Value::Null) => None,
        Some(_) => {
            let v = config::get_f64_array(&cfg, "tangent")?;
            if v.len() != n {
                return Err(CliError::config(format!(
                    "tangent must have {n} coordinates, got {}",
                    v.len()
                )));
            }
            let v = DVector::from_vec(v);
            if !v.iter().all(|x| x.is_finite()) || v.norm() == 0.0 {
                return Err(CliError::config("tangent must be finite and nonzero"));
            }
            Some(v)
        }
    };
    let v0 = match &tangent {
        Some(v) => DMatrix::from_column_slice(n, 1, v.as_slice()),
        None => DMatrix::zeros(n, 0),
    };

    // Segment-wise integration between report times, so a blow-up loses at
    // most one report interval and switching weights see absolute time.
    let grid = report_grid(t_final, h_report, h);
    let mut times = vec![0.0];
    let mut points = vec![g0.clone()];
    let mut tanmats = vec![v0.clone()];
    let mut g = g0;
    let mut v = v0;
    let mut t_prev = 0.0;
    let mut blow: Option<String> = None;
    for &t_next in &grid {
        match variational_flow_multi(sys, t_prev, &g, &v, t_next - t_prev, h) {
            Ok((seg, mats)) => {
                g = seg.endpoint().clone();
                v = mats.last().expect("nonempty segment").clone();
                times.push(t_next);
                points.push(g.clone());
                tanmats.push(v.clone());
                t_prev = t_next;
            }
            Err(e) if is_runtime(&e) => {
                blow = Some(e.to_string());
                break;
            }
            Err(e) => return Err(CliError::Config(e.to_string())),
        }
    }

    fs::create_dir_all(&args.out).map_err(|e| io_err("output directory", e))?;
    let report = Trajectory {
        times,
        points,
        tangents: tangent
            .as_ref()
            .map(|_| tanmats.iter().map(|m| m.column(0).into_owned()).collect()),
    };
    let traj_csv = match built.kind {
        ModelKind::Pendulum => report
            .to_csv_with_names(&["theta", "v"])
            .map_err(|e| CliError::Config(e.to_string()))?,
        _ => report.to_csv(),
    };
    fs::write(args.out.join("trajectory.csv"), traj_csv)
        .map_err(|e| io_err("trajectory.csv", e))?;
    let diag = diagnostics_csv(sys, built.kind, &report)?;
    fs::write(args.out.join("diagnostics.csv"), diag)
        .map_err(|e| io_err("diagnostics.csv", e))?;

    let blow_up = match &blow {
        Some(msg) => json!({ "last_time": t_prev, "message": msg }),
        None => Value::Null,
    };
    write_run_json(
        &args.out,
        "simulate",
        &cfg,
        &["trajectory.csv", "diagnostics.csv"],
        json!({ "blow_up": blow_up }),
        start.elapsed().as_secs_f64(),
    )?;
    match blow {
        Some(msg) => Err(CliError::Runtime(format!(
            "integration stopped after t = {t_prev}: {msg} (partial trajectory written)"
        ))),
        None => Ok(0),
    }
}

/// Model-specific scalar series on the report grid.
///
/// * pendulum — `speed`, the body-velocity norm (vanishes at equilibria);
/// * torus — `residual`, the instantaneous deviation of the phase
///   velocities from their mean (zero exactly when the network is locked),
///   plus `phi` when a tangent is carried;
/// * rotation networks — `sync_distance`, the largest pairwise rotation
///   angle, plus `phi`;
/// * linear consensus — `spread`, max − min of the coordinates.
///
/// `phi` is the tangent's off-consensus to on-consensus ratio; it decays to
/// zero when the consensus directions dominate the linearized flow.
fn diagnostics_csv(
    sys: &SystemSpec,
    kind: ModelKind,
    traj: &Trajectory,
) -> Result<String, CliError> {
    let rt = |e: CertError| CliError::Runtime(e.to_string());
    let with_phi =
        traj.tangents.is_some() && matches!(kind, ModelKind::Torus(_) | ModelKind::So3(_));
    let phi: Option<Vec<f64>> = if with_phi {
        let basis = dominant_basis(kind, sys.group.dim());
        Some(alignment_ratio(traj, &basis).map_err(rt)?)
    } else {
        None
    };
    let mut out = String::from("t");
    out.push_str(match kind {
        ModelKind::Pendulum => ",speed",
        ModelKind::Torus(_) => ",residual",
        ModelKind::So3(_) => ",sync_distance",
        ModelKind::Linear(_) => ",spread",
    });
    if phi.is_some() {
        out.push_str(",phi");
    }
    out.push('\n');
    for (i, &t) in traj.times.iter().enumerate() {
        let p = &traj.points[i];
        // A recorded state whose diagnostic cannot be evaluated (e.g. the
        // sample that triggered a domain violation) gets NaN, not a failed
        // run: the trajectory row itself is still valid.
        let stat = match kind {
            ModelKind::Pendulum => sys.field(t, p).map(|w| w.norm()).unwrap_or(f64::NAN),
            ModelKind::Torus(nn) => sys
                .field(t, p)
                .map(|w| {
                    let mean = w.iter().sum::<f64>() / (nn as f64);
                    w.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max)
                })
                .unwrap_or(f64::NAN),
            ModelKind::So3(_) => sync_distance(p).unwrap_or(f64::NAN),
            ModelKind::Linear(_) => {
                let c = p.flat_coords();
                let mx = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mn = c.iter().cloned().fold(f64::INFINITY, f64::min);
                mx - mn
            }
        };
        out.push_str(&format!("{t},{stat}"));
        if let Some(ph) = &phi {
            out.push_str(&format!(",{}", ph[i]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// The frame-constant directions that dominate a locked network: the
/// all-ones phase shift on the torus, the three common-rotation columns on
/// a rotation power.
fn dominant_basis(kind: ModelKind, dim: usize) -> Vec<DVector<f64>> {
    match kind {
        ModelKind::Torus(_) => vec![DVector::from_element(dim, 1.0)],
        ModelKind::So3(_) => (0..3)
            .map(|j| DVector::from_fn(dim, |i, _| if i % 3 == j { 1.0 } else { 0.0 }))
            .collect(),
        _ => Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

fn opt_seed(blk: &Value) -> Result<Option<u64>, CliError> {
    match blk.get("seed") {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| CliError::config("certification.seed must be a nonnegative integer")),
    }
}

/// Parses the model + cone + certification blocks, runs the contraction
/// certification and writes `certificate.json` into `out_dir`. Shared by
/// `certify` and each `sweep` grid point.
fn certify_into(
    cfg: &Value,
    out_dir: &Path,
    seed_cli: Option<u64>,
) -> Result<DPCertificate, CliError> {
    let built = config::build_model(config::get(cfg, "model")?)?;
    let cone = config::build_cone(config::get(cfg, "cone")?)?;
    let blk = config::get(cfg, "certification")?;
    let t_horizon = config::get_f64(blk, "T")?;
    let eps = config::get_f64(blk, "eps")?;
    let n_states = config::get_usize(blk, "n_states")?;
    let n_rays = config::get_usize(blk, "n_rays")?;
    let seed = seed_cli.or(opt_seed(blk)?).ok_or_else(|| {
        CliError::config("a seed is mandatory: set certification.seed or pass --seed")
    })?;
    let region = config::build_region(built.sys.group, config::get(blk, "region")?)?;
    let cert = certify_diffpos(
        &built.sys, &cone, &region, t_horizon, eps, n_states, n_rays, seed,
    )
    .map_err(map_cert_err)?;
    fs::create_dir_all(out_dir).map_err(|e| io_err("output directory", e))?;
    fs::write(out_dir.join("certificate.json"), cert.to_json())
        .map_err(|e| io_err("certificate.json", e))?;
    Ok(cert)
}

/// Runs a sampled cone-contraction certification: exit 0 on pass, 1 on a
/// sound run whose evidence rejects uniform strict contraction.
pub fn certify(args: &JobArgs) -> Result<u8, CliError> {
    let start = Instant::now();
    let cfg = config::load_config(&args.config)?;
    let cert = certify_into(&cfg, &args.out, args.seed)?;
    write_run_json(
        &args.out,
        "certify",
        &cfg,
        &["certificate.json"],
        json!({ "pass": cert.pass }),
        start.elapsed().as_secs_f64(),
    )?;
    Ok(if cert.pass { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// pf
// ---------------------------------------------------------------------------

/// Checks a linear map for strict cone positivity and, when it holds,
/// prints the dominant/complementary spectral splitting as JSON on
/// standard output. A non-strict map prints its certificate instead and
/// exits 1.
pub fn pf(args: &PfArgs) -> Result<u8, CliError> {
    let (mat_v, cone_v): (Value, Value) = if let Some(cfg_path) = &args.config {
        let cfg = config::load_config(cfg_path)?;
        (
            config::get(&cfg, "matrix")?.clone(),
            config::get(&cfg, "cone")?.clone(),
        )
    } else if let (Some(mp), Some(cp)) = (&args.matrix, &args.cone) {
        let mraw = config::load_config(mp)?;
        let craw = config::load_config(cp)?;
        let m = if mraw.is_array() {
            mraw
        } else {
            config::get(&mraw, "matrix")?.clone()
        };
        let c = match craw.get("cone") {
            Some(inner) => inner.clone(),
            None => craw,
        };
        (m, c)
    } else {
        return Err(CliError::config(
            "provide --config, or --matrix together with --cone",
        ));
    };
    let map = config::build_matrix(&mat_v)?;
    let cone = config::build_cone(&cone_v)?;
    let mode = CertMode::auto_for(&cone);
    let cert = is_positive_map(&map, &cone, mode).map_err(CliError::config)?;
    if !(cert.positive && cert.strict) {
        let payload = cert.to_json();
        println!("{payload}");
        eprintln!(
            "diffpos: map is not strictly positive for this cone (margin {}); no splitting computed",
            cert.margin
        );
        write_pf_json(args.out.as_deref(), &payload)?;
        return Ok(1);
    }
    match pf_split(&map, &cone) {
        Ok(split) => {
            let payload = split.to_json();
            println!("{payload}");
            write_pf_json(args.out.as_deref(), &payload)?;
            Ok(0)
        }
        Err(e) => {
            eprintln!("diffpos: splitting failed: {e}");
            Ok(1)
        }
    }
}

fn write_pf_json(out: Option<&Path>, payload: &str) -> Result<(), CliError> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_err("output directory", e))?;
        fs::write(dir.join("pf.json"), format!("{payload}\n"))
            .map_err(|e| io_err("pf.json", e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    key: f64,
    display: String,
    pass: Option<bool>,
    margin: Option<f64>,
    voided: Option<usize>,
    error: Option<String>,
}

/// Grid values: an explicit `values` array, or an inclusive arithmetic
/// progression `{from, to, step}`.
fn build_grid(blk: &Value) -> Result<Vec<Value>, CliError> {
    if let Some(list) = blk.get("values") {
        let rows = list
            .as_array()
            .ok_or_else(|| CliError::config("sweep.values must be an array of numbers"))?;
        for v in rows {
            if !v.as_f64().is_some_and(f64::is_finite) {
                return Err(CliError::config("sweep.values must be finite numbers"));
            }
        }
        return Ok(rows.clone());
    }
    if blk.get("from").is_some() {
        let from = config::get_f64(blk, "from")?;
        let to = config::get_f64(blk, "to")?;
        let step = config::get_f64(blk, "step")?;
        if !step.is_finite() || step <= 0.0 || !from.is_finite() || !to.is_finite() {
            return Err(CliError::config(
                "sweep range needs finite from/to and a positive step",
            ));
        }
        let mut vals = Vec::new();
        let mut k = 0u64;
        loop {
            let x = from + (k as f64) * step;
            if x > to + 1e-9 * step {
                break;
            }
            vals.push(Value::from(x));
            k += 1;
        }
        return Ok(vals);
    }
    Err(CliError::config(
        "sweep needs either \"values\" or a {from, to, step} range",
    ))
}

/// Writes `value` at the dotted `path` inside `cfg`. All parent objects
/// must already exist; the leaf is inserted or overwritten.
fn set_path(cfg: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!(
            "sweep.parameter \"{path}\" is not a dotted path"
        )));
    }
    let mut cur = cfg;
    for p in &parts[..parts.len() - 1] {
        cur = cur.get_mut(*p).ok_or_else(|| {
            CliError::config(format!(
                "sweep.parameter \"{path}\": config has no object \"{p}\""
            ))
        })?;
    }
    let leaf = parts[parts.len() - 1];
    cur.as_object_mut()
        .ok_or_else(|| {
            CliError::config(format!(
                "sweep.parameter \"{path}\": parent of \"{leaf}\" is not an object"
            ))
        })?
        .insert(leaf.to_string(), value);
    Ok(())
}

fn run_point(
    cfg: &Value,
    param: &str,
    leaf: &str,
    val: &Value,
    out_root: &Path,
    seed_cli: Option<u64>,
) -> SweepRow {
    let key = val.as_f64().expect("grid values validated numeric");
    let display = val.to_string();
    let dir = out_root.join(format!("{leaf}={display}"));
    let start = Instant::now();
    let mut point_cfg = cfg.clone();
    let outcome = set_path(&mut point_cfg, param, val.clone())
        .and_then(|()| certify_into(&point_cfg, &dir, seed_cli));
    match outcome {
        Ok(cert) => {
            let run = write_run_json(
                &dir,
                "certify",
                &point_cfg,
                &["certificate.json"],
                json!({ "pass": cert.pass }),
                start.elapsed().as_secs_f64(),
            );
            let error = run.err().map(|e| e.to_string());
            SweepRow {
                key,
                display,
                pass: Some(cert.pass),
                margin: cert.min_final_margin,
                voided: Some(cert.voided),
                error,
            }
        }
        Err(e) => SweepRow {
            key,
            display,
            pass: None,
            margin: None,
            voided: None,
            error: Some(e.to_string()),
        },
    }
}

/// Re-runs the certification pipeline over a parameter grid, one output
/// subdirectory per grid point, and summarizes pass/fail and margins in
/// `sweep.csv` (rows sorted by grid value). Individual grid-point failures
/// become rows, never aborts.
pub fn sweep(args: &JobArgs) -> Result<u8, CliError> {
    let start = Instant::now();
    let cfg = config::load_config(&args.config)?;
    let blk = config::get(&cfg, "sweep")?;
    let param = config::get_str(blk, "parameter")?;
    let grid = build_grid(blk)?;
    if grid.is_empty() {
        return Err(CliError::config("sweep grid is empty"));
    }
    // Surface an unreachable parameter path as a config error up front
    // rather than as one identical failure row per grid point.
    set_path(&mut cfg.clone(), param, grid[0].clone())?;
    let leaf = param.rsplit('.').next().expect("validated dotted path");

    fs::create_dir_all(&args.out).map_err(|e| io_err("output directory", e))?;
    let threads = config::resolve_threads(args.threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        grid.par_iter()
            .map(|v| run_point(&cfg, param, leaf, v, &args.out, args.seed))
            .collect()
    });
    rows.sort_by(|a, b| {
        a.key
            .partial_cmp(&b.key)
            .expect("finite grid keys")
            .then_with(|| a.display.cmp(&b.display))
    });

    let mut csv = format!("{leaf},pass,min_final_margin,voided,error\n");
    for r in &rows {
        let pass = r.pass.map(|p| p.to_string()).unwrap_or_default();
        let margin = r.margin.map(|m| m.to_string()).unwrap_or_default();
        let voided = r.voided.map(|v| v.to_string()).unwrap_or_default();
        let error = r
            .error
            .as_deref()
            .unwrap_or("")
            .replace(',', ";")
            .replace('\n', " ");
        csv.push_str(&format!(
            "{},{pass},{margin},{voided},{error}\n",
            r.display
        ));
    }
    fs::write(args.out.join("sweep.csv"), csv).map_err(|e| io_err("sweep.csv", e))?;

    write_run_json(
        &args.out,
        "sweep",
        &cfg,
        &["sweep.csv"],
        json!({ "points": rows.len(), "threads": threads }),
        start.elapsed().as_secs_f64(),
    )?;
    Ok(0)
}
