//! JSON job-configuration parsing: model, cone, region and integrator
//! builders shared by all subcommands.
//!
//! A job config is one JSON object:
//!
//! ```json
//! {
//!   "model":         { "model": "pendulum", "rho": 2.5, "u": 2.0 },
//!   "integrator":    { "h": 1e-3, "T": 50.0, "h_report": 1e-2 },
//!   "initial_state": [0.0, 0.0],
//!   "tangent":       [1.0, 0.0],
//!   "cone":          { "variant": "polyhedral", "normals": [[1,0],[1,1]] },
//!   "certification": { "T": 5.0, "eps": 0.05, "n_states": 32, "n_rays": 32,
//!                      "seed": 7, "region": { "kind": "box", "lo": [0,-3], "hi": [6.2832,3] } },
//!   "sweep":         { "parameter": "model.rho", "values": [0.5, 1.0, 2.5] }
//! }
//! ```
//!
//! Each subcommand reads the blocks it needs and ignores the rest, so one
//! config can drive simulate, certify and sweep alike.

use diffpos::certify::RegionSampler;
use diffpos::cones::Cone;
use diffpos::dynamics::SystemSpec;
use diffpos::lie::GroupSpec;
use diffpos::models::{
    linear_consensus, make_coupling, pendulum, so3_consensus, torus_consensus, Coupling,
    CouplingKind, Digraph, EdgeWeights, SO3Reshape,
};
use diffpos::positivity::TimeKind;
use nalgebra::{DMatrix, Vector3};
use serde_json::Value;
use std::fmt;
use std::path::Path;

/// CLI-level failure, carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Configuration problem (malformed JSON, schema violation, bad value).
    Config(String),
    /// Runtime blow-up or domain escape during integration.
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn config<T: fmt::Display>(msg: T) -> CliError {
        CliError::Config(msg.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

/// Reads and parses a JSON config file.
pub fn load_config(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{} is not valid JSON: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Value accessors
// ---------------------------------------------------------------------------

pub fn get<'a>(v: &'a Value, key: &str) -> Result<&'a Value, CliError> {
    v.get(key)
        .ok_or_else(|| CliError::config(format!("missing field \"{key}\"")))
}

pub fn get_f64(v: &Value, key: &str) -> Result<f64, CliError> {
    get(v, key)?
        .as_f64()
        .ok_or_else(|| CliError::config(format!("field \"{key}\" must be a number")))
}

pub fn get_usize(v: &Value, key: &str) -> Result<usize, CliError> {
    get(v, key)?
        .as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| CliError::config(format!("field \"{key}\" must be a nonnegative integer")))
}

pub fn get_str<'a>(v: &'a Value, key: &str) -> Result<&'a str, CliError> {
    get(v, key)?
        .as_str()
        .ok_or_else(|| CliError::config(format!("field \"{key}\" must be a string")))
}

pub fn get_f64_array(v: &Value, key: &str) -> Result<Vec<f64>, CliError> {
    get(v, key)?
        .as_array()
        .ok_or_else(|| CliError::config(format!("field \"{key}\" must be an array")))?
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| CliError::config(format!("field \"{key}\" must hold numbers")))
        })
        .collect()
}

pub fn opt_f64(v: &Value, key: &str) -> Result<Option<f64>, CliError> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(_) => get_f64(v, key).map(Some),
    }
}

// ---------------------------------------------------------------------------
// Model building
// ---------------------------------------------------------------------------

/// Which benchmark family a built system belongs to (drives CSV naming and
/// which diagnostics apply).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Pendulum,
    Torus(usize),
    So3(usize),
    Linear(usize),
}

pub struct BuiltModel {
    pub sys: SystemSpec,
    pub kind: ModelKind,
}

/// Builds the system described by the config's `model` block.
pub fn build_model(model: &Value) -> Result<BuiltModel, CliError> {
    let name = get_str(model, "model")?;
    match name {
        "pendulum" => {
            let rho = get_f64(model, "rho")?;
            let u = opt_f64(model, "u")?.unwrap_or(0.0);
            let sys = pendulum(rho, u).map_err(CliError::config)?;
            Ok(BuiltModel {
                sys,
                kind: ModelKind::Pendulum,
            })
        }
        "torus_consensus" => {
            let n = get_usize(model, "N")?;
            let graph = build_graph(n, model)?;
            let couplings = build_couplings(model, graph.edges().len())?;
            let omega = get_f64_array(model, "omega")?;
            let sys = torus_consensus(&graph, couplings, &omega).map_err(CliError::config)?;
            Ok(BuiltModel {
                sys,
                kind: ModelKind::Torus(n),
            })
        }
        "so3_consensus" => {
            let n = get_usize(model, "N")?;
            let graph = build_graph(n, model)?;
            let reshape = build_reshape(get(model, "reshape")?)?;
            let omega_rows = get(model, "omega")?
                .as_array()
                .ok_or_else(|| CliError::config("field \"omega\" must be an array of [x,y,z]"))?;
            let mut omegas = Vec::with_capacity(omega_rows.len());
            for row in omega_rows {
                let r: Vec<f64> = row
                    .as_array()
                    .filter(|a| a.len() == 3)
                    .ok_or_else(|| CliError::config("each omega entry must be [x,y,z]"))?
                    .iter()
                    .map(|x| x.as_f64().unwrap_or(f64::NAN))
                    .collect();
                omegas.push(Vector3::new(r[0], r[1], r[2]));
            }
            let sys = so3_consensus(&graph, &reshape, &omegas).map_err(CliError::config)?;
            Ok(BuiltModel {
                sys,
                kind: ModelKind::So3(n),
            })
        }
        "linear_consensus" => {
            let n = get_usize(model, "N")?;
            let graph = build_graph(n, model)?;
            let time = match get_str(model, "time")? {
                "continuous" => TimeKind::Continuous,
                "discrete" => TimeKind::Discrete,
                other => {
                    return Err(CliError::config(format!(
                        "field \"time\" must be \"continuous\" or \"discrete\", got \"{other}\""
                    )))
                }
            };
            let sys = linear_consensus(&graph, time).map_err(CliError::config)?;
            Ok(BuiltModel {
                sys,
                kind: ModelKind::Linear(n),
            })
        }
        other => Err(CliError::config(format!("unknown model \"{other}\""))),
    }
}

/// Edge list plus constant or switching weights and the optional δ bound.
fn build_graph(n: usize, model: &Value) -> Result<Digraph, CliError> {
    let edge_rows = get(model, "edges")?
        .as_array()
        .ok_or_else(|| CliError::config("field \"edges\" must be an array of [k,i] pairs"))?;
    let mut edges = Vec::with_capacity(edge_rows.len());
    for row in edge_rows {
        let pair = row
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| CliError::config("each edge must be a [k,i] pair"))?;
        let k = pair[0]
            .as_u64()
            .ok_or_else(|| CliError::config("edge endpoints must be nonnegative integers"))?;
        let i = pair[1]
            .as_u64()
            .ok_or_else(|| CliError::config("edge endpoints must be nonnegative integers"))?;
        edges.push((k as usize, i as usize));
    }
    let delta = opt_f64(model, "delta")?;
    let weights = if let Some(sw) = model.get("switching") {
        let dwell = get_f64(sw, "dwell")?;
        let frames = get(sw, "frames")?
            .as_array()
            .ok_or_else(|| CliError::config("field \"frames\" must be an array of weight rows"))?
            .iter()
            .map(|row| {
                row.as_array()
                    .ok_or_else(|| CliError::config("each frame must be an array of weights"))?
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .ok_or_else(|| CliError::config("weights must be numbers"))
                    })
                    .collect::<Result<Vec<f64>, _>>()
            })
            .collect::<Result<Vec<Vec<f64>>, _>>()?;
        EdgeWeights::Switch { dwell, frames }
    } else if model.get("weights").is_some() {
        EdgeWeights::Const(get_f64_array(model, "weights")?)
    } else {
        EdgeWeights::Const(vec![1.0; edges.len()])
    };
    Digraph::new(n, edges, weights, delta).map_err(CliError::config)
}

/// One coupling per edge: either a single `coupling` replicated, or a
/// per-edge `couplings` array.
fn build_couplings(model: &Value, n_edges: usize) -> Result<Vec<Coupling>, CliError> {
    if let Some(list) = model.get("couplings") {
        let rows = list
            .as_array()
            .ok_or_else(|| CliError::config("field \"couplings\" must be an array"))?;
        rows.iter().map(build_coupling).collect()
    } else {
        let c = build_coupling(get(model, "coupling")?)?;
        Ok(vec![c; n_edges])
    }
}

fn build_coupling(v: &Value) -> Result<Coupling, CliError> {
    let kind = match get_str(v, "kind")? {
        "sine" => CouplingKind::Sine,
        "barrier_sync" => CouplingKind::BarrierSync,
        "repulsive_balance" => CouplingKind::RepulsiveBalance,
        "linear_gain" => CouplingKind::LinearGain,
        other => {
            return Err(CliError::config(format!(
                "unknown coupling kind \"{other}\" (expected sine, barrier_sync, repulsive_balance or linear_gain)"
            )))
        }
    };
    let gain = opt_f64(v, "gain")?.unwrap_or(1.0);
    make_coupling(kind, gain).map_err(CliError::config)
}

fn build_reshape(v: &Value) -> Result<SO3Reshape, CliError> {
    match get_str(v, "kind")? {
        "linear" => Ok(SO3Reshape::linear()),
        "sine_half" => Ok(SO3Reshape::sine_half()),
        "barrier" => Ok(SO3Reshape::barrier()),
        other => Err(CliError::config(format!(
            "unknown reshape kind \"{other}\" (expected linear, sine_half or barrier)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Cones, regions, matrices
// ---------------------------------------------------------------------------

/// Builds a cone from its JSON description (the cone library's schema).
pub fn build_cone(v: &Value) -> Result<Cone, CliError> {
    Cone::from_json(&v.to_string()).map_err(CliError::config)
}

/// Builds a sampling region on the system's group from the config block.
pub fn build_region(group: GroupSpec, v: &Value) -> Result<RegionSampler, CliError> {
    match get_str(v, "kind")? {
        "box" => {
            let lo = get_f64_array(v, "lo")?;
            let hi = get_f64_array(v, "hi")?;
            RegionSampler::coordinate_box(group, lo, hi).map_err(CliError::config)
        }
        "pairwise_ball" => {
            let bound = get_f64(v, "bound")?;
            RegionSampler::pairwise_ball(group, bound).map_err(CliError::config)
        }
        other => Err(CliError::config(format!(
            "unknown region kind \"{other}\" (expected box or pairwise_ball)"
        ))),
    }
}

/// Parses a matrix from either `[[...], ...]` or `{"matrix": [[...], ...]}`.
pub fn build_matrix(v: &Value) -> Result<DMatrix<f64>, CliError> {
    let rows_val = if v.is_array() { v } else { get(v, "matrix")? };
    let rows = rows_val
        .as_array()
        .ok_or_else(|| CliError::config("matrix must be an array of rows"))?;
    let n = rows.len();
    if n == 0 {
        return Err(CliError::config("matrix must be nonempty"));
    }
    let mut data = Vec::with_capacity(n * n);
    for row in rows {
        let r = row
            .as_array()
            .filter(|r| r.len() == n)
            .ok_or_else(|| CliError::config("matrix must be square"))?;
        for x in r {
            data.push(
                x.as_f64()
                    .ok_or_else(|| CliError::config("matrix entries must be numbers"))?,
            );
        }
    }
    Ok(DMatrix::from_row_slice(n, n, &data))
}

/// Resolves the worker-thread count: CLI flag, then `DIFFPOS_THREADS`, then
/// all available cores.
pub fn resolve_threads(cli: Option<usize>) -> usize {
    cli.filter(|&n| n > 0)
        .or_else(|| {
            std::env::var("DIFFPOS_THREADS")
                .ok()
                .and_then(|s| s.parse().ok())
                .filter(|&n| n > 0)
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}
