//! Concrete benchmark systems: the planar pendulum on the cylinder,
//! phase-coupled oscillators on the torus, attitude consensus on SO(3)^N and
//! linear consensus in ℝ^N, together with the coupling-function library and
//! the exact pairwise SO(3) linearization block.
//!
//! Every model ships with its analytic variational generator attached, so
//! the finite-difference reconstruction in [`crate::dynamics`] serves as an
//! independent oracle: the two are compared in tests here and again in the
//! acceptance suite.
//!
//! # Consensus structure
//!
//! The interconnections are directed graphs whose edge weights may switch
//! piecewise-constantly in time (with an optional uniform lower bound δ on
//! every present weight). For phase oscillators
//!
//! ```text
//!     ϑ̇ₖ = ωₖ + Σ_{(k,i)∈E} a_{ki}(t)·f_{ki}(ϑᵢ − ϑₖ),
//! ```
//!
//! the generator has off-diagonal entries `a_{ki}·f′_{ki}` and diagonal
//! entries minus the row sum, so `A·𝟏 = 0` holds exactly: disagreement
//! dynamics are insensitive to rigid rotations. On SO(3)^N the same
//! structure holds blockwise: each edge contributes the 3×3 block
//! `B = Dφ(w)·J_r(w)⁻¹` (the derivative of the geodesic coupling
//! `φ(w) = f(‖w‖)·w/‖w‖` through the right Jacobian), the diagonal picks up
//! `−B` for each incident edge, and a nonzero intrinsic velocity Ωₖ adds the
//! frame-transport term `−ad_{Ωₖ}` — so the block rows annihilate common
//! rotations exactly when all intrinsic velocities vanish.

use crate::dynamics::{DynError, SystemSpec, BLOWUP_NORM};
use crate::lie::{cot_half, hat, so3_log, wrap_angle, wrap_diff, GroupSpec, Point};
use crate::positivity::{LinearMap, TimeKind};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use std::sync::Arc;
use thiserror::Error;

/// Errors raised while constructing models.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    /// A parameter is outside its admissible set.
    #[error("bad parameters: {0}")]
    BadParams(String),
    /// Edge weights violate nonnegativity, finiteness or the δ lower bound.
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    /// A scalar argument left its admissible open interval.
    #[error("argument {value} outside ({lo}, {hi})")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },
    /// The edge list is malformed (self-loop or vertex out of range).
    #[error("bad graph: {0}")]
    BadGraph(String),
}

// ---------------------------------------------------------------------------
// Couplings on the circle
// ---------------------------------------------------------------------------

/// The built-in coupling families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingKind {
    /// `f(α) = g·sin α` on (−π/2, π/2) — the classical phase coupling,
    /// restricted to the interval where its slope is positive.
    Sine,
    /// `f(α) = g·tan(α/2)` on (−π, π) — odd, strictly increasing, diverging
    /// at ±π; pulls phases together and walls off antipodal configurations.
    BarrierSync,
    /// `f(α) = −g·cot(α/2)` on (0, 2π) — vanishes at π, slope `g/2·csc²(α/2)`,
    /// diverging repulsion as phases coincide; drives phases apart toward
    /// balanced patterns.
    RepulsiveBalance,
    /// `f(α) = g·α` on (−π, π) — linear gain.
    LinearGain,
    /// User-supplied pair of functions.
    Custom,
}

/// A scalar coupling `f` with its derivative and open domain.
///
/// Raw phase differences are first wrapped into the 2π-window the domain
/// sits in (symmetric windows use `(−π, π]`, one-sided ones `[0, 2π)`), then
/// checked against the open interval.
#[derive(Clone)]
pub struct Coupling {
    /// Which family this coupling belongs to.
    pub kind: CouplingKind,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    fprime: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Open interval on which `f` is defined and strictly increasing.
    pub domain: (f64, f64),
}

impl std::fmt::Debug for Coupling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Coupling")
            .field("kind", &self.kind)
            .field("domain", &self.domain)
            .finish()
    }
}

impl Coupling {
    /// A user-supplied coupling; the caller asserts monotonicity on the
    /// stated open domain.
    pub fn custom<F, G>(f: F, fprime: G, domain: (f64, f64)) -> Coupling
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Coupling {
            kind: CouplingKind::Custom,
            f: Arc::new(f),
            fprime: Arc::new(fprime),
            domain,
        }
    }

    /// Wraps a raw phase difference into the window containing the domain.
    fn wrap(&self, raw: f64) -> f64 {
        if self.domain.0 >= 0.0 {
            wrap_angle(raw)
        } else {
            wrap_diff(raw)
        }
    }

    fn check(&self, alpha: f64) -> Result<f64, DynError> {
        if alpha > self.domain.0 && alpha < self.domain.1 {
            Ok(alpha)
        } else {
            Err(DynError::DomainViolation(format!(
                "{:?} coupling: wrapped difference {alpha:.6} outside ({:.6}, {:.6})",
                self.kind, self.domain.0, self.domain.1
            )))
        }
    }

    /// Coupling value at a raw (unwrapped) phase difference.
    pub fn eval(&self, raw: f64) -> Result<f64, DynError> {
        let alpha = self.check(self.wrap(raw))?;
        Ok((self.f)(alpha))
    }

    /// Coupling slope at a raw (unwrapped) phase difference.
    pub fn slope(&self, raw: f64) -> Result<f64, DynError> {
        let alpha = self.check(self.wrap(raw))?;
        Ok((self.fprime)(alpha))
    }
}

/// Builds one of the standard couplings with a gain factor.
pub fn make_coupling(kind: CouplingKind, gain: f64) -> Result<Coupling, ModelError> {
    if !gain.is_finite() || gain <= 0.0 {
        return Err(ModelError::BadParams(format!(
            "coupling gain must be positive and finite, got {gain}"
        )));
    }
    let pi = std::f64::consts::PI;
    let c = match kind {
        CouplingKind::Sine => Coupling {
            kind,
            f: Arc::new(move |a: f64| gain * a.sin()),
            fprime: Arc::new(move |a: f64| gain * a.cos()),
            domain: (-pi / 2.0, pi / 2.0),
        },
        CouplingKind::BarrierSync => Coupling {
            kind,
            f: Arc::new(move |a: f64| gain * (a / 2.0).tan()),
            fprime: Arc::new(move |a: f64| {
                let t = (a / 2.0).tan();
                gain * 0.5 * (1.0 + t * t)
            }),
            domain: (-pi, pi),
        },
        CouplingKind::RepulsiveBalance => Coupling {
            kind,
            f: Arc::new(move |a: f64| {
                let h = a / 2.0;
                -gain * h.cos() / h.sin()
            }),
            fprime: Arc::new(move |a: f64| {
                let s = (a / 2.0).sin();
                gain * 0.5 / (s * s)
            }),
            domain: (0.0, 2.0 * pi),
        },
        CouplingKind::LinearGain => Coupling {
            kind,
            f: Arc::new(move |a: f64| gain * a),
            fprime: Arc::new(move |_a: f64| gain),
            domain: (-pi, pi),
        },
        CouplingKind::Custom => {
            return Err(ModelError::BadParams(
                "custom couplings are built with Coupling::custom".into(),
            ))
        }
    };
    Ok(c)
}

// ---------------------------------------------------------------------------
// Interconnection graphs
// ---------------------------------------------------------------------------

/// Per-edge weight schedules.
#[derive(Debug, Clone)]
pub enum EdgeWeights {
    /// Time-invariant weights, one per edge.
    Const(Vec<f64>),
    /// Piecewise-constant switching: frame `⌊t/dwell⌋ mod frames.len()` is
    /// active, each frame holding one weight per edge (zero = edge absent).
    Switch { dwell: f64, frames: Vec<Vec<f64>> },
}

/// A directed interconnection graph with (possibly switching) edge weights.
///
/// Edges are ordered pairs `(k, i)`: agent `k` listens to agent `i`. An
/// optional bound δ > 0 demands that every *present* weight (nonzero at the
/// active frame) is at least δ, so influences never fade out gradually.
#[derive(Debug, Clone)]
pub struct Digraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    weights: EdgeWeights,
    delta: Option<f64>,
}

impl Digraph {
    /// Validates and builds a weighted digraph.
    pub fn new(
        n: usize,
        edges: Vec<(usize, usize)>,
        weights: EdgeWeights,
        delta: Option<f64>,
    ) -> Result<Digraph, ModelError> {
        if n == 0 {
            return Err(ModelError::BadGraph("graph needs at least one vertex".into()));
        }
        for &(k, i) in &edges {
            if k == i {
                return Err(ModelError::BadGraph(format!("self-loop at vertex {k}")));
            }
            if k >= n || i >= n {
                return Err(ModelError::BadGraph(format!(
                    "edge ({k},{i}) outside vertex range 0..{n}"
                )));
            }
        }
        if let Some(d) = delta {
            if !d.is_finite() || d <= 0.0 {
                return Err(ModelError::BadParams(format!(
                    "delta bound must be positive, got {d}"
                )));
            }
        }
        let check_frame = |ws: &[f64]| -> Result<(), ModelError> {
            if ws.len() != edges.len() {
                return Err(ModelError::InvalidWeights(format!(
                    "expected {} weights, got {}",
                    edges.len(),
                    ws.len()
                )));
            }
            for (e, &w) in ws.iter().enumerate() {
                if !w.is_finite() || w < 0.0 {
                    return Err(ModelError::InvalidWeights(format!(
                        "weight {w} on edge {e} must be finite and nonnegative"
                    )));
                }
                if let Some(d) = delta {
                    if w > 0.0 && w < d {
                        return Err(ModelError::InvalidWeights(format!(
                            "present weight {w} on edge {e} is below the bound δ = {d}"
                        )));
                    }
                }
            }
            Ok(())
        };
        match &weights {
            EdgeWeights::Const(ws) => check_frame(ws)?,
            EdgeWeights::Switch { dwell, frames } => {
                if !dwell.is_finite() || *dwell <= 0.0 {
                    return Err(ModelError::BadParams(format!(
                        "dwell time must be positive, got {dwell}"
                    )));
                }
                if frames.is_empty() {
                    return Err(ModelError::InvalidWeights(
                        "switching schedule needs at least one frame".into(),
                    ));
                }
                for f in frames {
                    check_frame(f)?;
                }
            }
        }
        Ok(Digraph {
            n,
            edges,
            weights,
            delta,
        })
    }

    /// The complete digraph on `n` vertices with unit weights.
    pub fn complete(n: usize) -> Digraph {
        let edges: Vec<(usize, usize)> = (0..n)
            .flat_map(|k| (0..n).filter(move |&i| i != k).map(move |i| (k, i)))
            .collect();
        let m = edges.len();
        Digraph {
            n,
            edges,
            weights: EdgeWeights::Const(vec![1.0; m]),
            delta: None,
        }
    }

    /// Number of vertices.
    pub fn n(&self) -> usize {
        self.n
    }

    /// The ordered edge list.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// The δ lower bound, when set.
    pub fn delta(&self) -> Option<f64> {
        self.delta
    }

    /// Weight of edge `e` at time `t` (frame-cyclic for switching weights).
    pub fn weight_at(&self, t: f64, e: usize) -> f64 {
        match &self.weights {
            EdgeWeights::Const(ws) => ws[e],
            EdgeWeights::Switch { dwell, frames } => {
                let idx = (t / dwell).floor() as i64;
                let m = frames.len() as i64;
                frames[idx.rem_euclid(m) as usize][e]
            }
        }
    }

    /// True when every vertex reaches every other along directed edges
    /// (edge-list structure, ignoring the weight schedule).
    pub fn is_strongly_connected(&self) -> bool {
        let reach = |forward: bool| -> usize {
            let mut seen = vec![false; self.n];
            let mut stack = vec![0usize];
            seen[0] = true;
            let mut count = 1;
            while let Some(v) = stack.pop() {
                for &(k, i) in &self.edges {
                    let (from, to) = if forward { (k, i) } else { (i, k) };
                    if from == v && !seen[to] {
                        seen[to] = true;
                        count += 1;
                        stack.push(to);
                    }
                }
            }
            count
        };
        reach(true) == self.n && reach(false) == self.n
    }

    /// JSON description (edges and vertex count) for run reports.
    pub fn meta(&self) -> serde_json::Value {
        serde_json::json!({
            "N": self.n,
            "edges": self.edges.iter().map(|&(k, i)| vec![k, i]).collect::<Vec<_>>(),
            "delta": self.delta,
        })
    }
}

// ---------------------------------------------------------------------------
// Pendulum
// ---------------------------------------------------------------------------

/// Damped planar pendulum on the cylinder S¹×ℝ with constant torque:
/// `θ̇ = v`, `v̇ = −sin θ − ρ·v + u`, with the exact generator
/// `A(θ) = [[0, 1], [−cos θ, −ρ]]`.
pub fn pendulum(rho: f64, u: f64) -> Result<SystemSpec, ModelError> {
    if !rho.is_finite() || rho < 0.0 {
        return Err(ModelError::BadParams(format!(
            "damping must be nonnegative and finite, got {rho}"
        )));
    }
    if !u.is_finite() {
        return Err(ModelError::BadParams(format!("torque must be finite, got {u}")));
    }
    let sys = SystemSpec::new(GroupSpec::CylinderS1R, move |_t, g: &Point| {
        let (theta, v) = g.cylinder().expect("cylinder point");
        Ok(DVector::from_vec(vec![v, -theta.sin() - rho * v + u]))
    })
    .with_linearization(move |_t, g: &Point| {
        let (theta, _) = g.cylinder().expect("cylinder point");
        Ok(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -theta.cos(), -rho]))
    })
    .with_meta(serde_json::json!({"model": "pendulum", "rho": rho, "u": u}));
    Ok(sys)
}

// ---------------------------------------------------------------------------
// Torus consensus
// ---------------------------------------------------------------------------

/// Phase-coupled oscillators `ϑ̇ₖ = ωₖ + Σ a_{ki}(t)·f_{ki}(ϑᵢ − ϑₖ)` on
/// T^N, one coupling per edge, with the exact generator
/// `A_{ki} = a_{ki}·f′_{ki}`, `A_{kk} = −Σᵢ A_{ki}` (rows sum to zero
/// identically).
pub fn torus_consensus(
    graph: &Digraph,
    couplings: Vec<Coupling>,
    omegas: &[f64],
) -> Result<SystemSpec, ModelError> {
    let n = graph.n();
    if couplings.len() != graph.edges().len() {
        return Err(ModelError::BadParams(format!(
            "expected {} couplings (one per edge), got {}",
            graph.edges().len(),
            couplings.len()
        )));
    }
    if omegas.len() != n {
        return Err(ModelError::BadParams(format!(
            "expected {n} intrinsic frequencies, got {}",
            omegas.len()
        )));
    }
    if omegas.iter().any(|w| !w.is_finite()) {
        return Err(ModelError::BadParams("intrinsic frequencies must be finite".into()));
    }
    let meta = serde_json::json!({
        "model": "torus_consensus",
        "graph": graph.meta(),
        "coupling_kinds": couplings.iter().map(|c| format!("{:?}", c.kind)).collect::<Vec<_>>(),
        "omega": omegas,
    });

    let omega_f = DVector::from_row_slice(omegas);
    let graph_f = graph.clone();
    let couplings_f = couplings.clone();
    let graph_l = graph.clone();
    let couplings_l = couplings;

    let sys = SystemSpec::new(GroupSpec::Torus(n), move |t, g: &Point| {
        let angles = g.angles().expect("torus point");
        let mut out = omega_f.clone();
        for (e, &(k, i)) in graph_f.edges().iter().enumerate() {
            let w = graph_f.weight_at(t, e);
            if w == 0.0 {
                continue;
            }
            let term = w * with_edge_context(couplings_f[e].eval(angles[i] - angles[k]), k, i)?;
            if term.abs() > BLOWUP_NORM {
                return Err(DynError::FieldBlowUp {
                    norm: term.abs(),
                    limit: BLOWUP_NORM,
                    context: format!("edge ({k},{i})"),
                });
            }
            out[k] += term;
        }
        Ok(out)
    })
    .with_linearization(move |t, g: &Point| {
        let angles = g.angles().expect("torus point");
        let mut a = DMatrix::zeros(n, n);
        for (e, &(k, i)) in graph_l.edges().iter().enumerate() {
            let w = graph_l.weight_at(t, e);
            if w == 0.0 {
                continue;
            }
            let c = w * with_edge_context(couplings_l[e].slope(angles[i] - angles[k]), k, i)?;
            a[(k, i)] += c;
            a[(k, k)] -= c;
        }
        Ok(a)
    })
    .with_meta(meta);
    Ok(sys)
}

/// Prefixes coupling-domain errors with the offending edge.
fn with_edge_context(r: Result<f64, DynError>, k: usize, i: usize) -> Result<f64, DynError> {
    r.map_err(|e| match e {
        DynError::DomainViolation(msg) => {
            DynError::DomainViolation(format!("edge ({k},{i}): {msg}"))
        }
        other => other,
    })
}

// ---------------------------------------------------------------------------
// SO(3) reshaping functions and the pairwise block
// ---------------------------------------------------------------------------

/// A radial reshaping function `f` on the geodesic distance, defined on
/// (0, π) with `f(0⁺) = 0` and `f′ > 0`.
#[derive(Clone)]
pub struct SO3Reshape {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    fprime: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// True when `f(θ) → ∞` as `θ → π⁻` (antipodal barrier).
    pub barrier: bool,
}

impl std::fmt::Debug for SO3Reshape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SO3Reshape")
            .field("barrier", &self.barrier)
            .finish()
    }
}

impl SO3Reshape {
    /// `f(θ) = θ` — geodesic coupling with unit slope.
    pub fn linear() -> SO3Reshape {
        SO3Reshape {
            f: Arc::new(|r| r),
            fprime: Arc::new(|_| 1.0),
            barrier: false,
        }
    }

    /// `f(θ) = sin(θ/2)` — bounded chordal-type coupling.
    pub fn sine_half() -> SO3Reshape {
        SO3Reshape {
            f: Arc::new(|r: f64| (r / 2.0).sin()),
            fprime: Arc::new(|r: f64| 0.5 * (r / 2.0).cos()),
            barrier: false,
        }
    }

    /// `f(θ) = tan(θ/2)` — diverges at the antipodal set.
    pub fn barrier() -> SO3Reshape {
        SO3Reshape {
            f: Arc::new(|r: f64| (r / 2.0).tan()),
            fprime: Arc::new(|r: f64| {
                let t = (r / 2.0).tan();
                0.5 * (1.0 + t * t)
            }),
            barrier: true,
        }
    }

    /// User-supplied reshaping; the caller asserts `f(0⁺)=0`, `f′>0`.
    pub fn custom<F, G>(f: F, fprime: G, barrier: bool) -> SO3Reshape
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        SO3Reshape {
            f: Arc::new(f),
            fprime: Arc::new(fprime),
            barrier,
        }
    }

    fn check(theta: f64) -> Result<f64, DynError> {
        if theta > 0.0 && theta < std::f64::consts::PI {
            Ok(theta)
        } else {
            Err(DynError::DomainViolation(format!(
                "geodesic distance {theta:.6} outside (0, π)"
            )))
        }
    }

    /// Value `f(θ)` for θ ∈ (0, π).
    pub fn value(&self, theta: f64) -> Result<f64, DynError> {
        Ok((self.f)(Self::check(theta)?))
    }

    /// Slope `f′(θ)` for θ ∈ (0, π).
    pub fn slope(&self, theta: f64) -> Result<f64, DynError> {
        Ok((self.fprime)(Self::check(theta)?))
    }
}

/// The pairwise block in the adapted basis `{u₁ radial, u₂, u₃ = u₁×u₂}`:
///
/// ```text
///     Â(r) = [ f′(r)      0            0      ]
///            [ 0      (f/2)·cot(r/2)  −f/2    ]
///            [ 0       f/2        (f/2)·cot(r/2) ]
/// ```
///
/// with spectrum `{f′(r), (f/2)(cot(r/2) ± i)}` — all real parts positive
/// whenever `f, f′ > 0` on (0, π). As `r → 0⁺` with `f(r) = r` the block
/// tends to the identity. The skew part's sign depends on the orientation of
/// the completion `{u₂, u₃}`; the spectrum and the symmetric part do not.
pub fn so3_block(f: &SO3Reshape, r: f64) -> Result<LinearMap, ModelError> {
    if !(r > 0.0 && r < std::f64::consts::PI) {
        return Err(ModelError::OutOfDomain {
            value: r,
            lo: 0.0,
            hi: std::f64::consts::PI,
        });
    }
    let b = adapted_block(f, r).map_err(|e| ModelError::BadParams(e.to_string()))?;
    Ok(DMatrix::from_fn(3, 3, |i, j| b[(i, j)]))
}

/// Internal fixed-size version of [`so3_block`].
fn adapted_block(f: &SO3Reshape, r: f64) -> Result<Matrix3<f64>, DynError> {
    let fv = f.value(r)?;
    let fp = f.slope(r)?;
    let half = fv / 2.0;
    let q = cot_half(r);
    Ok(Matrix3::new(
        fp,
        0.0,
        0.0,
        0.0,
        half * q,
        -half,
        0.0,
        half,
        half * q,
    ))
}

/// Right-handed orthonormal frame with first column `u` (‖u‖ = 1): the
/// completion is Gram–Schmidt seeded with the canonical axis least aligned
/// with `u`, and `u₃ = u₁ × u₂` fixes the orientation.
fn adapted_frame(u: &Vector3<f64>) -> Matrix3<f64> {
    let m = (0..3)
        .min_by(|&a, &b| u[a].abs().partial_cmp(&u[b].abs()).expect("finite"))
        .expect("three axes");
    let mut e = Vector3::zeros();
    e[m] = 1.0;
    let u2 = (e - u * u[m]).normalize();
    let u3 = u.cross(&u2);
    Matrix3::from_columns(&[*u, u2, u3])
}

// ---------------------------------------------------------------------------
// SO(3)^N consensus
// ---------------------------------------------------------------------------

/// Attitude consensus on SO(3)^N: each agent carries a constant intrinsic
/// body velocity Ωₖ and steers along the weighted geodesic directions to its
/// neighbors, reshaped by `f`:
///
/// ```text
///     body velocity of k  =  Ωₖ + Σ_{(k,i)∈E} a_{ki}(t)·f(θ_{ki})·u_{ki},
/// ```
///
/// where `θ_{ki}·û_{ki} = log(gₖ⁻¹gᵢ)`. The analytic generator is assembled
/// per edge from the pairwise block conjugated into the global frame; the
/// diagonal collects `−B` per incident edge plus the frame-transport term
/// `−ad_{Ωₖ}`, so rows annihilate common rotations exactly when all Ωₖ = 0.
pub fn so3_consensus(
    graph: &Digraph,
    f: &SO3Reshape,
    omegas: &[Vector3<f64>],
) -> Result<SystemSpec, ModelError> {
    let n = graph.n();
    if omegas.len() != n {
        return Err(ModelError::BadParams(format!(
            "expected {n} intrinsic velocities, got {}",
            omegas.len()
        )));
    }
    if omegas.iter().any(|w| !(w.norm().is_finite())) {
        return Err(ModelError::BadParams("intrinsic velocities must be finite".into()));
    }
    let meta = serde_json::json!({
        "model": "so3_consensus",
        "graph": graph.meta(),
        "barrier": f.barrier,
        "omega": omegas.iter().map(|w| vec![w[0], w[1], w[2]]).collect::<Vec<_>>(),
    });

    let graph_f = graph.clone();
    let reshape_f = f.clone();
    let omegas_f: Vec<Vector3<f64>> = omegas.to_vec();
    let graph_l = graph.clone();
    let reshape_l = f.clone();
    let omegas_l: Vec<Vector3<f64>> = omegas.to_vec();

    let sys = SystemSpec::new(GroupSpec::SO3Power(n), move |t, g: &Point| {
        let rs = g.rotations().expect("rotation point");
        let mut out = DVector::zeros(3 * n);
        for (k, w) in omegas_f.iter().enumerate() {
            out.fixed_rows_mut::<3>(3 * k).copy_from(w);
        }
        for (e, &(k, i)) in graph_f.edges().iter().enumerate() {
            let w = graph_f.weight_at(t, e);
            if w == 0.0 {
                continue;
            }
            let rel = rs[k].transpose() * rs[i];
            let wvec = so3_log(&rel)?;
            let theta = wvec.norm();
            if theta <= 1e-12 {
                continue; // coincident attitudes contribute nothing (f(0⁺) = 0)
            }
            let fv = edge_ctx(reshape_f.value(theta), k, i)?;
            let term = wvec * (w * fv / theta);
            if term.norm() > BLOWUP_NORM {
                return Err(DynError::FieldBlowUp {
                    norm: term.norm(),
                    limit: BLOWUP_NORM,
                    context: format!("edge ({k},{i})"),
                });
            }
            let mut seg = out.fixed_rows_mut::<3>(3 * k);
            seg += term;
        }
        Ok(out)
    })
    .with_linearization(move |t, g: &Point| {
        let rs = g.rotations().expect("rotation point");
        let mut a = DMatrix::zeros(3 * n, 3 * n);
        for (k, w) in omegas_l.iter().enumerate() {
            let adk = hat(w);
            for r in 0..3 {
                for c in 0..3 {
                    a[(3 * k + r, 3 * k + c)] -= adk[(r, c)];
                }
            }
        }
        for (e, &(k, i)) in graph_l.edges().iter().enumerate() {
            let w = graph_l.weight_at(t, e);
            if w == 0.0 {
                continue;
            }
            let rel = rs[k].transpose() * rs[i];
            let wvec = so3_log(&rel)?;
            let theta = wvec.norm();
            if theta <= 1e-12 {
                // The limit block is f′(0⁺)·I; evaluate just off the origin.
                let fp = edge_ctx(reshape_l.slope(1e-9), k, i)?;
                for r in 0..3 {
                    a[(3 * k + r, 3 * i + r)] += w * fp;
                    a[(3 * k + r, 3 * k + r)] -= w * fp;
                }
                continue;
            }
            let u = wvec / theta;
            let frame = adapted_frame(&u);
            let block = frame * edge_ctx(adapted_block(&reshape_l, theta), k, i)? * frame.transpose() * w;
            for r in 0..3 {
                for c in 0..3 {
                    a[(3 * k + r, 3 * i + c)] += block[(r, c)];
                    a[(3 * k + r, 3 * k + c)] -= block[(r, c)];
                }
            }
        }
        Ok(a)
    })
    .with_meta(meta);
    Ok(sys)
}

/// Prefixes reshaping-domain errors with the offending edge.
fn edge_ctx<T>(r: Result<T, DynError>, k: usize, i: usize) -> Result<T, DynError> {
    r.map_err(|e| match e {
        DynError::DomainViolation(msg) => {
            DynError::DomainViolation(format!("edge ({k},{i}): {msg}"))
        }
        other => other,
    })
}

// ---------------------------------------------------------------------------
// Linear consensus
// ---------------------------------------------------------------------------

/// Linear consensus on ℝ^N built from the graph weights.
///
/// Continuous time: the Laplacian flow `ẋ = A(t)x` with `A_{ki} = a_{ki}`,
/// `A_{kk} = −Σ a_{ki}` (Metzler, zero row sums). Discrete time: the
/// row-stochastic update `x⁺ = A(t)x` with `A_{ki} = a_{ki}/(1 + Sₖ)` and
/// self-weight `A_{kk} = 1/(1 + Sₖ)` where `Sₖ` is the row's weight sum —
/// every row sums to one and every self-weight stays positive, so the δ
/// proportions between neighbors survive the normalization.
pub fn linear_consensus(graph: &Digraph, time: TimeKind) -> Result<SystemSpec, ModelError> {
    let n = graph.n();
    let meta = serde_json::json!({
        "model": "linear_consensus",
        "graph": graph.meta(),
        "time": match time { TimeKind::Discrete => "discrete", TimeKind::Continuous => "continuous" },
    });

    let build = {
        let graph = graph.clone();
        move |t: f64| -> DMatrix<f64> {
            let mut a = DMatrix::zeros(n, n);
            for (e, &(k, i)) in graph.edges().iter().enumerate() {
                let w = graph.weight_at(t, e);
                a[(k, i)] += w;
                a[(k, k)] -= w;
            }
            match time {
                TimeKind::Continuous => a,
                TimeKind::Discrete => {
                    // Convert the Laplacian rows into row-stochastic rows.
                    let mut s = DMatrix::zeros(n, n);
                    for k in 0..n {
                        let row_sum = -a[(k, k)];
                        let scale = 1.0 / (1.0 + row_sum);
                        let mut diag = 1.0;
                        for i in 0..n {
                            if i != k && a[(k, i)] != 0.0 {
                                s[(k, i)] = a[(k, i)] * scale;
                                diag -= s[(k, i)];
                            }
                        }
                        s[(k, k)] = diag;
                    }
                    s
                }
            }
        }
    };

    let build_f = build.clone();
    let build_l = build;
    let sys = SystemSpec::new(GroupSpec::EuclideanRn(n), move |t, g: &Point| {
        let x = g.euclidean().expect("euclidean point");
        let a = build_f(t);
        match time {
            TimeKind::Continuous => Ok(&a * x),
            // Per-step increment: x⁺ − x = (A − I)x.
            TimeKind::Discrete => Ok(&a * x - x),
        }
    })
    .with_linearization(move |t, _g: &Point| Ok(build_l(t)))
    .with_time_kind(time)
    .with_meta(meta);
    Ok(sys)
}
