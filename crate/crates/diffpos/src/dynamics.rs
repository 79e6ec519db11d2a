//! Flows and linearized (variational) flows in left-invariant frame
//! coordinates.
//!
//! A continuous-time system here is `ġ = dL_g·Ω(t, g)`: the state moves
//! along the left translate of its body velocity `Ω(t, g) ∈ 𝔤`, given in
//! frame coordinates. Trajectories are computed with a fixed-step four-stage
//! Runge–Kutta–Munthe-Kaas scheme, so every update is a single group
//! exponential `g⁺ = g·exp(û)` and points stay on the group to machine
//! precision regardless of step size. Discrete-time systems reuse the same
//! container: the field value is the per-step increment, `g⁺ = g·exp(Ω̂)`.
//!
//! # The variational generator
//!
//! Tangent vectors ride along in frame coordinates: `v(t)` holds the
//! coefficients of the flow differential `dψ_t|_{g₀}·δg` pulled back by left
//! translation. Writing the transported vector field in the left-invariant
//! frame and differentiating with the connection that makes the frame
//! parallel (`∇Eᵢ = 0`, torsion `−[·,·]`), the transport equation
//! `[X, J] = 0` becomes linear in the coefficients:
//!
//! ```text
//!     v̇ = A(t, g)·v,        A = DΩ − ad_Ω ,
//! ```
//!
//! where `(DΩ)_{ij} = d/ds Ωⁱ(g·exp(s·eⱼ))|₀` differentiates the frame
//! components and `ad_Ω` is the algebra-bracket term produced by the moving
//! frame. On abelian groups the bracket term vanishes and `A = DΩ`; on
//! SO(3) factors a constant body velocity still transports tangents by
//! `v(t) = exp(−t·ad_Ω)·v₀` (a rigid rotation of the frame coordinates, so
//! norms are preserved). Models supply `A` analytically;
//! [`fd_linearization`] reconstructs it from central differences of `Ω`
//! plus the same bracket correction, and the two routes are required to
//! agree in tests. An independent cross-check that `A` really is the
//! differential of the flow: tangents from [`variational_flow`] must match
//! finite differences of endpoint trajectories over perturbed initial
//! conditions, enforced here at relative 1e−4.
//!
//! # Determinism
//!
//! All integration is fixed-step with no adaptivity, so runs are exactly
//! reproducible: the same system, initial condition and step produce
//! bit-identical trajectories.

use crate::lie::{GroupSpec, LieError, Point};
use crate::positivity::TimeKind;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default integrator step for continuous-time flows.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Default finite-difference step for linearizations and pushforwards.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Body-velocity norm above which integration aborts. Barrier couplings
/// diverge by design as the configuration approaches the boundary of their
/// domain; past this magnitude the trajectory is meaningless.
pub const BLOWUP_NORM: f64 = 1e6;

/// Admissible range for finite-difference steps: below 1e−7 roundoff
/// dominates, above 1e−3 truncation does.
const FD_STEP_RANGE: (f64, f64) = (1e-7, 1e-3);

/// Relative slack used when comparing requested horizons and steps.
const TIME_SLACK: f64 = 1e-9;

/// Errors from flows, linearizations and pushforwards.
#[derive(Debug, Clone, Error)]
pub enum DynError {
    /// The body velocity exceeded [`BLOWUP_NORM`].
    #[error("field blow-up: ‖Ω‖ = {norm:.3e} exceeds {limit:.1e} ({context})")]
    FieldBlowUp {
        /// Norm of the offending field value (or single term).
        norm: f64,
        /// The guard threshold that was crossed.
        limit: f64,
        /// Where the blow-up happened (time, or the offending edge).
        context: String,
    },
    /// A state left the domain of a coupling or reshaping function.
    #[error("domain violation: {0}")]
    DomainViolation(String),
    /// No analytic linearization is attached and the finite-difference
    /// fallback is disabled.
    #[error("no analytic linearization and finite-difference fallback is disabled")]
    MissingLinearization,
    /// Invalid step/horizon combination.
    #[error("bad step: {0}")]
    BadStep(String),
    /// A closure returned a vector or matrix of the wrong size.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// A closure returned NaN or ±∞.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    /// Underlying group operation failed (cut locus, group mismatch, …).
    #[error(transparent)]
    Lie(#[from] LieError),
}

/// Body-velocity field `(t, g) ↦ Ω(t, g)` in frame coordinates.
///
/// Autonomous systems simply ignore `t`; the argument exists so that
/// switching interconnection topologies (piecewise-constant in time) fit the
/// same interface.
pub type FieldFn = dyn Fn(f64, &Point) -> Result<DVector<f64>, DynError> + Send + Sync;

/// Analytic variational generator `(t, g) ↦ A(t, g)`.
pub type LinFn = dyn Fn(f64, &Point) -> Result<DMatrix<f64>, DynError> + Send + Sync;

/// A dynamical system on a group, in left-invariant frame coordinates.
///
/// For continuous time the field is the body velocity (`ġ = dL_g·Ω̂`); for
/// discrete time it is the per-step increment (`g⁺ = g·exp(Ω̂)`) and the
/// linearization is the one-step tangent map itself.
pub struct SystemSpec {
    /// The group the system lives on.
    pub group: GroupSpec,
    /// Continuous flow or discrete iteration.
    pub time_kind: TimeKind,
    field_fn: Box<FieldFn>,
    lin_fn: Option<Box<LinFn>>,
    /// Finite-difference step for the linearization fallback; `None`
    /// disables the fallback.
    pub fd_h: Option<f64>,
    /// Free-form model parameters, carried along for reporting.
    pub meta: serde_json::Value,
}

impl std::fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SystemSpec")
            .field("group", &self.group)
            .field("time_kind", &self.time_kind)
            .field("has_linearization", &self.lin_fn.is_some())
            .field("fd_h", &self.fd_h)
            .field("meta", &self.meta)
            .finish()
    }
}

impl SystemSpec {
    /// A continuous-time system with the given body-velocity field and no
    /// analytic linearization.
    pub fn new<F>(group: GroupSpec, field: F) -> SystemSpec
    where
        F: Fn(f64, &Point) -> Result<DVector<f64>, DynError> + Send + Sync + 'static,
    {
        SystemSpec {
            group,
            time_kind: TimeKind::Continuous,
            field_fn: Box::new(field),
            lin_fn: None,
            fd_h: None,
            meta: serde_json::Value::Null,
        }
    }

    /// Attaches an analytic variational generator.
    pub fn with_linearization<L>(mut self, lin: L) -> SystemSpec
    where
        L: Fn(f64, &Point) -> Result<DMatrix<f64>, DynError> + Send + Sync + 'static,
    {
        self.lin_fn = Some(Box::new(lin));
        self
    }

    /// Enables the finite-difference fallback for the linearization.
    pub fn with_fd_fallback(mut self, h_fd: f64) -> SystemSpec {
        self.fd_h = Some(h_fd);
        self
    }

    /// Marks the system as discrete-time (unit steps).
    pub fn with_time_kind(mut self, kind: TimeKind) -> SystemSpec {
        self.time_kind = kind;
        self
    }

    /// Attaches model parameters for reporting.
    pub fn with_meta(mut self, meta: serde_json::Value) -> SystemSpec {
        self.meta = meta;
        self
    }

    /// True when an analytic linearization is attached.
    pub fn has_linearization(&self) -> bool {
        self.lin_fn.is_some()
    }

    /// Evaluates the field, validating length and finiteness.
    pub fn field(&self, t: f64, g: &Point) -> Result<DVector<f64>, DynError> {
        let omega = (self.field_fn)(t, g)?;
        let n = self.group.dim();
        if omega.len() != n {
            return Err(DynError::DimensionMismatch {
                expected: n,
                got: omega.len(),
            });
        }
        if !omega.iter().all(|x| x.is_finite()) {
            return Err(DynError::NonFinite("field value".into()));
        }
        Ok(omega)
    }

    /// Evaluates the variational generator: the analytic one when attached,
    /// otherwise the finite-difference reconstruction when enabled.
    pub fn linearization(&self, t: f64, g: &Point) -> Result<DMatrix<f64>, DynError> {
        let n = self.group.dim();
        let a = match &self.lin_fn {
            Some(lin) => lin(t, g)?,
            None => match self.fd_h {
                Some(h_fd) => fd_linearization(self, t, g, h_fd)?,
                None => return Err(DynError::MissingLinearization),
            },
        };
        if a.nrows() != n || a.ncols() != n {
            return Err(DynError::DimensionMismatch {
                expected: n * n,
                got: a.nrows() * a.ncols(),
            });
        }
        if !a.iter().all(|x| x.is_finite()) {
            return Err(DynError::NonFinite("linearization value".into()));
        }
        Ok(a)
    }
}

/// A computed trajectory: times, points and (optionally) frame-coordinate
/// tangents from the variational flow.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Strictly increasing sample times.
    pub times: Vec<f64>,
    /// Group elements, one per time.
    pub points: Vec<Point>,
    /// Variational tangents in frame coordinates, one per time.
    pub tangents: Option<Vec<DVector<f64>>>,
}

impl Trajectory {
    /// Number of recorded samples.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    /// True when nothing was recorded.
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Final point.
    pub fn endpoint(&self) -> &Point {
        self.points.last().expect("trajectory is nonempty")
    }

    /// Final time.
    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory is nonempty")
    }

    /// Final tangent, when the trajectory carries tangents.
    pub fn final_tangent(&self) -> Option<&DVector<f64>> {
        self.tangents.as_ref().and_then(|v| v.last())
    }

    /// Consistency check: matching lengths, strictly increasing times,
    /// finite coordinates, and (for rotation factors) orthonormality within
    /// 1e−8.
    pub fn validate(&self) -> Result<(), DynError> {
        if self.points.len() != self.times.len() {
            return Err(DynError::DimensionMismatch {
                expected: self.times.len(),
                got: self.points.len(),
            });
        }
        if let Some(tans) = &self.tangents {
            if tans.len() != self.times.len() {
                return Err(DynError::DimensionMismatch {
                    expected: self.times.len(),
                    got: tans.len(),
                });
            }
        }
        for w in self.times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(DynError::BadStep(format!(
                    "times not strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.flat_coords().iter().any(|x| !x.is_finite()) {
                return Err(DynError::NonFinite(format!("point at index {i}")));
            }
            if let Some(rs) = p.rotations() {
                for r in rs {
                    let defect = (r * r.transpose() - nalgebra::Matrix3::identity()).norm();
                    if defect > 1e-8 {
                        return Err(DynError::NonFinite(format!(
                            "rotation at index {i} has orthonormality defect {defect:.3e}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// CSV serialization with generic column names: header
    /// `t,q_1..q_n[,v_1..v_n]`, one row per sample. SO(3) factors occupy
    /// nine columns per agent (rotation matrices flattened row-major).
    pub fn to_csv(&self) -> String {
        let n = self
            .points
            .first()
            .map(|p| p.flat_coords().len())
            .unwrap_or(0);
        let names: Vec<String> = (1..=n).map(|j| format!("q_{j}")).collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        self.to_csv_with_names(&refs)
            .expect("generated names match the coordinate count")
    }

    /// CSV serialization with caller-supplied state column names (tangent
    /// columns, when present, are always `v_1..v_n`).
    pub fn to_csv_with_names(&self, names: &[&str]) -> Result<String, DynError> {
        let n = self
            .points
            .first()
            .map(|p| p.flat_coords().len())
            .unwrap_or(names.len());
        if names.len() != n {
            return Err(DynError::DimensionMismatch {
                expected: n,
                got: names.len(),
            });
        }
        let mut out = String::from("t");
        for name in names {
            out.push(',');
            out.push_str(name);
        }
        if self.tangents.is_some() {
            let m = self.tangents.as_ref().unwrap()[0].len();
            for j in 1..=m {
                out.push_str(&format!(",v_{j}"));
            }
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t}"));
            for x in self.points[i].flat_coords() {
                out.push_str(&format!(",{x}"));
            }
            if let Some(tans) = &self.tangents {
                for x in tans[i].iter() {
                    out.push_str(&format!(",{x}"));
                }
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Field evaluation with the blow-up guard applied.
fn checked_field(sys: &SystemSpec, t: f64, g: &Point) -> Result<DVector<f64>, DynError> {
    let omega = sys.field(t, g)?;
    let norm = omega.norm();
    if norm > BLOWUP_NORM {
        return Err(DynError::FieldBlowUp {
            norm,
            limit: BLOWUP_NORM,
            context: format!("t = {t:.6}"),
        });
    }
    Ok(omega)
}

/// Stage data for one Runge–Kutta–Munthe-Kaas step: the algebra increments
/// `u_i`, the stage points `g·exp(û_i)` and the pulled-back stage values
/// `k_i = dexp⁻¹_{u_i}·Ω(t + c_i h, g·exp(û_i))`.
struct Stages {
    k1: DVector<f64>,
    k2: DVector<f64>,
    k3: DVector<f64>,
    k4: DVector<f64>,
    g2: Point,
    g3: Point,
    g4: Point,
}

fn rkmk_stages(sys: &SystemSpec, t: f64, g: &Point, h: f64) -> Result<Stages, DynError> {
    let group = sys.group;
    let k1 = checked_field(sys, t, g)?;

    let u2 = &k1 * (h / 2.0);
    let g2 = g.compose(&group.exp(&u2)?)?;
    let k2 = group.dexpinv(&u2, &checked_field(sys, t + h / 2.0, &g2)?);

    let u3 = &k2 * (h / 2.0);
    let g3 = g.compose(&group.exp(&u3)?)?;
    let k3 = group.dexpinv(&u3, &checked_field(sys, t + h / 2.0, &g3)?);

    let u4 = &k3 * h;
    let g4 = g.compose(&group.exp(&u4)?)?;
    let k4 = group.dexpinv(&u4, &checked_field(sys, t + h, &g4)?);

    Ok(Stages {
        k1,
        k2,
        k3,
        k4,
        g2,
        g3,
        g4,
    })
}

/// One base step `g ↦ g·exp(h/6·(k₁+2k₂+2k₃+k₄))`.
fn rkmk_step(sys: &SystemSpec, t: f64, g: &Point, h: f64) -> Result<Point, DynError> {
    let s = rkmk_stages(sys, t, g, h)?;
    let u = (s.k1 + s.k2 * 2.0 + s.k3 * 2.0 + s.k4) * (h / 6.0);
    Ok(g.compose(&sys.group.exp(&u)?)?)
}

/// One joint base-and-tangent step. The tangent columns follow the classical
/// Runge–Kutta tableau with the generator evaluated at the group stage
/// points, which is exactly the Munthe-Kaas scheme on the product group
/// G × ℝⁿ (the tangent factor is abelian, so its `dexp⁻¹` is the identity);
/// fourth order is therefore preserved for both components.
fn rkmk_step_variational(
    sys: &SystemSpec,
    t: f64,
    g: &Point,
    v: &DMatrix<f64>,
    h: f64,
) -> Result<(Point, DMatrix<f64>), DynError> {
    let s = rkmk_stages(sys, t, g, h)?;
    let a1 = sys.linearization(t, g)?;
    let a2 = sys.linearization(t + h / 2.0, &s.g2)?;
    let a3 = sys.linearization(t + h / 2.0, &s.g3)?;
    let a4 = sys.linearization(t + h, &s.g4)?;

    let k1v = &a1 * v;
    let k2v = &a2 * &(v + &k1v * (h / 2.0));
    let k3v = &a3 * &(v + &k2v * (h / 2.0));
    let k4v = &a4 * &(v + &k3v * h);
    let v_next = v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);

    let u = (s.k1 + s.k2 * 2.0 + s.k3 * 2.0 + s.k4) * (h / 6.0);
    let g_next = g.compose(&sys.group.exp(&u)?)?;
    Ok((g_next, v_next))
}

/// Step schedule for a horizon: full steps of `h`, plus one shortened final
/// step so that the trajectory lands exactly on the requested horizon (the
/// remainder is dropped when it is negligible relative to `h`).
fn step_schedule(t_final: f64, h: f64) -> Result<(usize, f64), DynError> {
    if !t_final.is_finite() || t_final <= 0.0 {
        return Err(DynError::BadStep(format!("horizon T = {t_final} must be positive")));
    }
    if !h.is_finite() || h <= 0.0 {
        return Err(DynError::BadStep(format!("step h = {h} must be positive")));
    }
    if h > t_final * (1.0 + TIME_SLACK) {
        return Err(DynError::BadStep(format!(
            "step h = {h} exceeds horizon T = {t_final}"
        )));
    }
    let n_full = (t_final / h).floor() as usize;
    let remainder = t_final - (n_full as f64) * h;
    let last = if remainder > TIME_SLACK * h { remainder } else { 0.0 };
    Ok((n_full, last))
}

/// Integrates `ġ = dL_g·Ω(t, g)` from `g0` over `[0, T]` with fixed step
/// `h` (four-stage Munthe-Kaas; the final step is shortened to land exactly
/// on `T`). Discrete-time systems instead iterate unit steps
/// `g⁺ = g·exp(Ω̂)`; for those, `h` must be `1` and `T` an integer count.
///
/// Every recorded point is a group element to machine precision. Fails with
/// [`DynError::FieldBlowUp`] when the body velocity passes [`BLOWUP_NORM`]
/// (barrier couplings near the boundary of their domain).
pub fn flow(sys: &SystemSpec, g0: &Point, t_final: f64, h: f64) -> Result<Trajectory, DynError> {
    match sys.time_kind {
        TimeKind::Continuous => {
            let (n_full, last) = step_schedule(t_final, h)?;
            let mut times = Vec::with_capacity(n_full + 2);
            let mut points = Vec::with_capacity(n_full + 2);
            let mut g = g0.clone();
            times.push(0.0);
            points.push(g.clone());
            for j in 0..n_full {
                let t = (j as f64) * h;
                g = rkmk_step(sys, t, &g, h)?;
                times.push((j + 1) as f64 * h);
                points.push(g.clone());
            }
            if last > 0.0 {
                let t = (n_full as f64) * h;
                g = rkmk_step(sys, t, &g, last)?;
                times.push(t_final);
                points.push(g.clone());
            }
            Ok(Trajectory {
                times,
                points,
                tangents: None,
            })
        }
        TimeKind::Discrete => {
            let (steps, _) = discrete_schedule(t_final, h)?;
            let mut times = vec![0.0];
            let mut points = vec![g0.clone()];
            let mut g = g0.clone();
            for j in 0..steps {
                let omega = checked_field(sys, j as f64, &g)?;
                g = g.compose(&sys.group.exp(&omega)?)?;
                times.push((j + 1) as f64);
                points.push(g.clone());
            }
            Ok(Trajectory {
                times,
                points,
                tangents: None,
            })
        }
    }
}

/// Validates the discrete-time calling convention: unit step, integer count.
fn discrete_schedule(t_final: f64, h: f64) -> Result<(usize, f64), DynError> {
    if (h - 1.0).abs() > TIME_SLACK {
        return Err(DynError::BadStep(format!(
            "discrete-time systems step with h = 1 (got {h})"
        )));
    }
    let steps = t_final.round();
    if !t_final.is_finite() || steps < 1.0 || (t_final - steps).abs() > TIME_SLACK {
        return Err(DynError::BadStep(format!(
            "discrete horizon T = {t_final} must be a positive integer step count"
        )));
    }
    Ok((steps as usize, 1.0))
}

/// Integrates the base flow together with one variational tangent: the
/// returned trajectory carries `v(t)` solving `v̇ = A(t, g(t))·v` (or, in
/// discrete time, `v⁺ = A·v`), i.e. the flow differential applied to `v0`,
/// pulled back to frame coordinates.
pub fn variational_flow(
    sys: &SystemSpec,
    g0: &Point,
    v0: &DVector<f64>,
    t_final: f64,
    h: f64,
) -> Result<Trajectory, DynError> {
    let n = sys.group.dim();
    if v0.len() != n {
        return Err(DynError::DimensionMismatch {
            expected: n,
            got: v0.len(),
        });
    }
    let v0m = DMatrix::from_column_slice(n, 1, v0.as_slice());
    let (mut traj, mats) = variational_flow_multi(sys, 0.0, g0, &v0m, t_final, h)?;
    traj.tangents = Some(mats.into_iter().map(|m| m.column(0).into_owned()).collect());
    Ok(traj)
}

/// Multi-tangent variational flow from an arbitrary start time: integrates
/// the base point and a whole matrix of tangent columns jointly over
/// `[t0, t0 + T]`. This is the workhorse behind [`variational_flow`] and the
/// cone-contraction certification, which propagates many boundary rays at
/// once and needs the start time to handle switching interconnections.
pub fn variational_flow_multi(
    sys: &SystemSpec,
    t0: f64,
    g0: &Point,
    v0: &DMatrix<f64>,
    t_final: f64,
    h: f64,
) -> Result<(Trajectory, Vec<DMatrix<f64>>), DynError> {
    let n = sys.group.dim();
    if v0.nrows() != n {
        return Err(DynError::DimensionMismatch {
            expected: n,
            got: v0.nrows(),
        });
    }
    match sys.time_kind {
        TimeKind::Continuous => {
            let (n_full, last) = step_schedule(t_final, h)?;
            let mut times = Vec::with_capacity(n_full + 2);
            let mut points = Vec::with_capacity(n_full + 2);
            let mut mats = Vec::with_capacity(n_full + 2);
            let mut g = g0.clone();
            let mut v = v0.clone();
            times.push(t0);
            points.push(g.clone());
            mats.push(v.clone());
            for j in 0..n_full {
                let t = t0 + (j as f64) * h;
                let (gn, vn) = rkmk_step_variational(sys, t, &g, &v, h)?;
                g = gn;
                v = vn;
                times.push(t0 + (j + 1) as f64 * h);
                points.push(g.clone());
                mats.push(v.clone());
            }
            if last > 0.0 {
                let t = t0 + (n_full as f64) * h;
                let (gn, vn) = rkmk_step_variational(sys, t, &g, &v, last)?;
                g = gn;
                v = vn;
                times.push(t0 + t_final);
                points.push(g.clone());
                mats.push(v.clone());
            }
            Ok((
                Trajectory {
                    times,
                    points,
                    tangents: None,
                },
                mats,
            ))
        }
        TimeKind::Discrete => {
            let (steps, _) = discrete_schedule(t_final, h)?;
            let mut times = vec![t0];
            let mut points = vec![g0.clone()];
            let mut mats = vec![v0.clone()];
            let mut g = g0.clone();
            let mut v = v0.clone();
            for j in 0..steps {
                let t = t0 + j as f64;
                let a = sys.linearization(t, &g)?;
                let omega = checked_field(sys, t, &g)?;
                g = g.compose(&sys.group.exp(&omega)?)?;
                v = &a * &v;
                times.push(t0 + (j + 1) as f64);
                points.push(g.clone());
                mats.push(v.clone());
            }
            Ok((
                Trajectory {
                    times,
                    points,
                    tangents: None,
                },
                mats,
            ))
        }
    }
}

/// Finite-difference reconstruction of the variational generator
/// `A(t, g) = DΩ − ad_Ω`.
///
/// The component derivative `DΩ` is estimated column-by-column with central
/// differences along the frame directions, `(Ω(g·exp(h·êⱼ)) −
/// Ω(g·exp(−h·êⱼ)))/(2h)`, sharpened by one Richardson extrapolation level
/// `(4·D(h/2) − D(h))/3`; the bracket term `ad_{Ω(t,g)}` is exact. On
/// abelian groups the bracket term is zero, so a constant body velocity
/// yields `A ≈ 0`; on SO(3) factors it yields `A = −ad_Ω` exactly.
pub fn fd_linearization(
    sys: &SystemSpec,
    t: f64,
    g: &Point,
    h_fd: f64,
) -> Result<DMatrix<f64>, DynError> {
    check_fd_step(h_fd)?;
    let d_h = fd_component_jacobian(sys, t, g, h_fd)?;
    let d_h2 = fd_component_jacobian(sys, t, g, h_fd / 2.0)?;
    let extrapolated = (d_h2 * 4.0 - d_h) / 3.0;
    let omega = sys.field(t, g)?;
    Ok(extrapolated - sys.group.ad_matrix(&omega))
}

fn check_fd_step(h_fd: f64) -> Result<(), DynError> {
    if !h_fd.is_finite() || h_fd < FD_STEP_RANGE.0 || h_fd > FD_STEP_RANGE.1 {
        return Err(DynError::BadStep(format!(
            "finite-difference step {h_fd} outside [{:.0e}, {:.0e}]",
            FD_STEP_RANGE.0, FD_STEP_RANGE.1
        )));
    }
    Ok(())
}

/// Central-difference estimate of the frame-component derivative `DΩ`.
fn fd_component_jacobian(
    sys: &SystemSpec,
    t: f64,
    g: &Point,
    h: f64,
) -> Result<DMatrix<f64>, DynError> {
    let n = sys.group.dim();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = h;
        let gp = g.compose(&sys.group.exp(&e)?)?;
        e[j] = -h;
        let gm = g.compose(&sys.group.exp(&e)?)?;
        let diff = (sys.field(t, &gp)? - sys.field(t, &gm)?) / (2.0 * h);
        jac.set_column(j, &diff);
    }
    Ok(jac)
}

/// Finite-difference pushforward of a smooth map `F: G → G`: the frame
/// coordinates of `dF|_g` applied to `v`, computed as
/// `log(F(g)⁻¹·F(g·exp(s·v̂)))/s` with one first-order Richardson level
/// `2·D(s/2) − D(s)`. Cut-locus failures from the logarithm propagate.
pub fn discrete_pushforward(
    f_map: &dyn Fn(&Point) -> Result<Point, DynError>,
    g: &Point,
    v: &DVector<f64>,
    h_fd: f64,
) -> Result<DVector<f64>, DynError> {
    check_fd_step(h_fd)?;
    let group = g.group();
    let base_inv = f_map(g)?.inverse();
    let probe = |s: f64| -> Result<DVector<f64>, DynError> {
        let gp = g.compose(&group.exp(&(v * s))?)?;
        let w = base_inv.compose(&f_map(&gp)?)?.log()?;
        Ok(w / s)
    };
    let d1 = probe(h_fd)?;
    let d2 = probe(h_fd / 2.0)?;
    Ok(d2 * 2.0 - d1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cones::{Cone, MembershipGrade};
    use crate::lie::{hat, so3_exp, wrap_diff, TAU};
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;

    /// Planar pendulum on the cylinder: `θ̇ = v`, `v̇ = −sin θ − ρv + u`,
    /// with its exact variational generator.
    fn pendulum_sys(rho: f64, u: f64) -> SystemSpec {
        SystemSpec::new(GroupSpec::CylinderS1R, move |_t, g| {
            let (theta, v) = g.cylinder().expect("cylinder point");
            Ok(DVector::from_vec(vec![v, -theta.sin() - rho * v + u]))
        })
        .with_linearization(move |_t, g| {
            let (theta, _) = g.cylinder().expect("cylinder point");
            Ok(DMatrix::from_row_slice(
                2,
                2,
                &[0.0, 1.0, -theta.cos(), -rho],
            ))
        })
    }

    /// Two coupled oscillators `ϑ̇ₖ = ωₖ + sin(ϑᵢ − ϑₖ)` with the exact
    /// generator `[[−c, c], [c, −c]]`, `c = cos(ϑ₂ − ϑ₁)`.
    fn two_oscillators(omega1: f64, omega2: f64) -> SystemSpec {
        SystemSpec::new(GroupSpec::Torus(2), move |_t, g| {
            let a = g.angles().expect("torus point");
            let d = wrap_diff(a[1] - a[0]);
            Ok(DVector::from_vec(vec![
                omega1 + d.sin(),
                omega2 + (-d).sin(),
            ]))
        })
        .with_linearization(|_t, g| {
            let a = g.angles().expect("torus point");
            let c = wrap_diff(a[1] - a[0]).cos();
            Ok(DMatrix::from_row_slice(2, 2, &[-c, c, c, -c]))
        })
    }

    fn constant_sys(group: GroupSpec, omega: Vec<f64>) -> SystemSpec {
        SystemSpec::new(group, move |_t, _g| Ok(DVector::from_vec(omega.clone())))
    }

    #[test]
    fn constant_field_flow_is_one_parameter_subgroup() {
        let omega = vec![0.3, -0.2, 0.7];
        let sys = constant_sys(GroupSpec::SO3, omega.clone());
        let g0 = GroupSpec::SO3.identity();
        let traj = flow(&sys, &g0, 1.0, DEFAULT_STEP).unwrap();
        traj.validate().unwrap();
        let expected = so3_exp(&Vector3::new(omega[0], omega[1], omega[2]));
        let got = traj.endpoint().rotations().unwrap()[0];
        assert!((got - expected).norm() < 1e-8, "defect {:.3e}", (got - expected).norm());
    }

    #[test]
    fn zero_field_flow_is_constant() {
        let sys = constant_sys(GroupSpec::SO3Power(2), vec![0.0; 6]);
        let g0 = GroupSpec::SO3Power(2)
            .exp(&DVector::from_vec(vec![0.4, -0.2, 0.1, 0.9, 0.3, -0.5]))
            .unwrap();
        let traj = flow(&sys, &g0, 0.5, DEFAULT_STEP).unwrap();
        let drift: f64 = traj
            .endpoint()
            .flat_coords()
            .iter()
            .zip(g0.flat_coords())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-14, "drift {drift:.3e}");
    }

    #[test]
    fn circle_full_revolution_returns_to_start() {
        let sys = constant_sys(GroupSpec::Torus(1), vec![1.0]);
        let g0 = Point::from_angles(GroupSpec::Torus(1), &[1.2]).unwrap();
        let traj = flow(&sys, &g0, TAU, DEFAULT_STEP).unwrap();
        let d = wrap_diff(traj.endpoint().angles().unwrap()[0] - 1.2).abs();
        assert!(d < 1e-8, "angle defect {d:.3e}");
        assert!((traj.final_time() - TAU).abs() < 1e-12);
    }

    #[test]
    fn final_time_lands_within_one_step() {
        let sys = pendulum_sys(0.5, 0.0);
        let g0 = Point::from_cylinder(0.3, 0.1);
        // Horizon not divisible by the step: one shortened final step.
        let traj = flow(&sys, &g0, 0.0505, 1e-3).unwrap();
        assert!((traj.final_time() - 0.0505).abs() < 1e-12);
        assert_eq!(traj.len(), 52);
        traj.validate().unwrap();
        // Divisible horizon: no extra step.
        let traj = flow(&sys, &g0, 0.05, 1e-3).unwrap();
        assert!((traj.final_time() - 0.05).abs() < 1e-12);
        assert_eq!(traj.len(), 51);
    }

    #[test]
    fn step_validation_errors() {
        let sys = pendulum_sys(0.5, 0.0);
        let g0 = Point::from_cylinder(0.0, 0.0);
        for (t_final, h) in [(1.0, 2.0), (1.0, 0.0), (1.0, -0.1), (0.0, 1e-3), (-1.0, 1e-3), (f64::NAN, 1e-3)] {
            let res = flow(&sys, &g0, t_final, h);
            assert!(matches!(res, Err(DynError::BadStep(_))), "T={t_final}, h={h}");
        }
    }

    #[test]
    fn blowup_guard_reports_norm() {
        let sys = SystemSpec::new(GroupSpec::CylinderS1R, |_t, _g| {
            Ok(DVector::from_vec(vec![2e6, 0.0]))
        });
        let g0 = Point::from_cylinder(0.0, 0.0);
        match flow(&sys, &g0, 1.0, 1e-3) {
            Err(DynError::FieldBlowUp { norm, limit, .. }) => {
                assert!((norm - 2e6).abs() < 1.0);
                assert_eq!(limit, BLOWUP_NORM);
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn discrete_orbit_steps_by_unit() {
        // Row-stochastic averaging map x⁺ = Ax realized as increment (A−I)x.
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let a_field = a.clone();
        let a_lin = a.clone();
        let sys = SystemSpec::new(GroupSpec::EuclideanRn(2), move |_t, g| {
            let x = g.euclidean().expect("euclidean point");
            Ok(&a_field * x - x)
        })
        .with_linearization(move |_t, _g| Ok(a_lin.clone()))
        .with_time_kind(TimeKind::Discrete);
        let g0 = Point::from_euclidean(&[1.0, 0.0]);
        let traj = flow(&sys, &g0, 3.0, 1.0).unwrap();
        assert_eq!(traj.times, vec![0.0, 1.0, 2.0, 3.0]);
        let x = traj.endpoint().euclidean().unwrap().clone();
        assert!((x[0] - 0.5).abs() < 1e-15 && (x[1] - 0.5).abs() < 1e-15);
        // Non-unit step is rejected for discrete systems.
        assert!(matches!(
            flow(&sys, &g0, 3.0, 0.5),
            Err(DynError::BadStep(_))
        ));
        // The discrete variational flow composes the step maps: A³ has
        // columns equal to (0.5, 0.5) so every tangent collapses to consensus.
        let v0 = DVector::from_vec(vec![1.0, -1.0]);
        let traj = variational_flow(&sys, &g0, &v0, 3.0, 1.0).unwrap();
        let vt = traj.final_tangent().unwrap();
        assert!(vt.norm() < 1e-15, "disagreement should vanish, got {vt}");
    }

    #[test]
    fn variational_constant_velocity_keeps_tangent_abelian() {
        // With the analytic generator attached, A = 0 exactly.
        let sys = constant_sys(GroupSpec::Torus(2), vec![0.4, -0.1])
            .with_linearization(|_t, _g| Ok(DMatrix::zeros(2, 2)));
        let g0 = Point::from_angles(GroupSpec::Torus(2), &[0.0, 1.0]).unwrap();
        let v0 = DVector::from_vec(vec![1.0, 2.0]);
        let traj = variational_flow(&sys, &g0, &v0, 3.0, DEFAULT_STEP).unwrap();
        assert!((traj.final_tangent().unwrap() - &v0).norm() < 1e-14);
        // Same through the finite-difference fallback.
        let sys_fd = constant_sys(GroupSpec::Torus(2), vec![0.4, -0.1])
            .with_fd_fallback(DEFAULT_FD_STEP);
        let traj = variational_flow(&sys_fd, &g0, &v0, 3.0, DEFAULT_STEP).unwrap();
        assert!((traj.final_tangent().unwrap() - &v0).norm() < 1e-8);
    }

    #[test]
    fn variational_constant_velocity_rotates_tangent_so3() {
        // A constant body velocity on SO(3) transports tangents by the
        // bracket term alone: v(t) = exp(−t·ad_Ω)·v₀, an isometry.
        let omega = Vector3::new(0.3, -0.1, 0.5);
        let v0 = DVector::from_vec(vec![1.0, 2.0, -0.5]);
        let g0 = GroupSpec::SO3
            .exp(&DVector::from_vec(vec![0.2, 0.1, -0.3]))
            .unwrap();
        let expected = so3_exp(&(-omega)) * Vector3::new(v0[0], v0[1], v0[2]);

        for use_analytic in [true, false] {
            let base = constant_sys(GroupSpec::SO3, vec![omega[0], omega[1], omega[2]]);
            let sys = if use_analytic {
                base.with_linearization(move |_t, _g| {
                    Ok(DMatrix::from_fn(3, 3, |i, j| -hat(&omega)[(i, j)]))
                })
            } else {
                base.with_fd_fallback(DEFAULT_FD_STEP)
            };
            let traj = variational_flow(&sys, &g0, &v0, 1.0, DEFAULT_STEP).unwrap();
            let vt = traj.final_tangent().unwrap();
            let defect = (DVector::from_vec(vec![expected[0], expected[1], expected[2]]) - vt).norm();
            assert!(defect < 1e-9, "analytic={use_analytic}: defect {defect:.3e}");
            assert!((vt.norm() - v0.norm()).abs() < 1e-9, "norm must be preserved");
        }
    }

    #[test]
    fn variational_linear_decay() {
        let sys = SystemSpec::new(GroupSpec::EuclideanRn(3), |_t, g| {
            Ok(-g.euclidean().expect("euclidean point"))
        })
        .with_linearization(|_t, _g| Ok(-DMatrix::identity(3, 3)));
        let g0 = Point::from_euclidean(&[1.0, -2.0, 0.5]);
        let v0 = DVector::from_vec(vec![0.3, 0.4, -1.0]);
        let traj = variational_flow(&sys, &g0, &v0, 2.0, DEFAULT_STEP).unwrap();
        let scale = (-2.0f64).exp();
        assert!((traj.final_tangent().unwrap() - &v0 * scale).norm() < 1e-8);
        let x = traj.endpoint().euclidean().unwrap();
        assert!((x - DVector::from_vec(vec![1.0, -2.0, 0.5]) * scale).norm() < 1e-8);
    }

    #[test]
    fn variational_pendulum_boundary_tangent_enters_interior() {
        // Strictly damped pendulum: a tangent starting on the boundary of
        // the invariant cone {v₁ ≥ 0, v₁ + v₂ ≥ 0} is strictly inside after
        // time 1.
        let cone = Cone::polyhedral(vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        ])
        .unwrap();
        let sys = pendulum_sys(3.0, 0.0);
        let g0 = Point::from_cylinder(0.4, 0.1);
        let v0 = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(cone.contains(&v0, 0.0).unwrap(), MembershipGrade::Boundary);
        let traj = variational_flow(&sys, &g0, &v0, 1.0, DEFAULT_STEP).unwrap();
        let vt = traj.final_tangent().unwrap();
        let grade = cone.contains(vt, 0.0).unwrap();
        assert!(grade.is_interior(), "expected strict membership, got {grade:?}");
    }

    #[test]
    fn missing_linearization_is_reported() {
        let sys = constant_sys(GroupSpec::Torus(2), vec![0.1, 0.2]);
        let g0 = GroupSpec::Torus(2).identity();
        let v0 = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            variational_flow(&sys, &g0, &v0, 1.0, DEFAULT_STEP),
            Err(DynError::MissingLinearization)
        ));
    }

    #[test]
    fn fd_constant_velocity_zero_on_abelian() {
        let sys = constant_sys(GroupSpec::Torus(3), vec![0.7, -0.2, 1.3]);
        let g0 = Point::from_angles(GroupSpec::Torus(3), &[0.1, 2.0, 4.0]).unwrap();
        let a = fd_linearization(&sys, 0.0, &g0, DEFAULT_FD_STEP).unwrap();
        assert!(a.norm() < 1e-6, "‖A‖ = {:.3e}", a.norm());
    }

    #[test]
    fn fd_constant_velocity_is_bracket_term_on_so3() {
        let omega = Vector3::new(0.3, -0.1, 0.5);
        let sys = constant_sys(GroupSpec::SO3, vec![omega[0], omega[1], omega[2]]);
        let g0 = GroupSpec::SO3
            .exp(&DVector::from_vec(vec![0.5, 0.2, -0.1]))
            .unwrap();
        let a = fd_linearization(&sys, 0.0, &g0, DEFAULT_FD_STEP).unwrap();
        let expected = -hat(&omega);
        let defect = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (a[(i, j)] - expected[(i, j)]).abs())
            .fold(0.0, f64::max);
        assert!(defect < 1e-12, "defect {defect:.3e}");
    }

    #[test]
    fn fd_pendulum_linearization_matrix() {
        let sys = pendulum_sys(3.0, 0.0);
        let g0 = Point::from_cylinder(0.0, 0.7);
        let a = fd_linearization(&sys, 0.0, &g0, DEFAULT_FD_STEP).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -3.0]);
        assert!((a.clone() - &expected).norm() < 1e-6, "got {a}");
        // At the inverted position the restoring term flips sign.
        let g_top = Point::from_cylinder(std::f64::consts::PI, 0.0);
        let a = fd_linearization(&sys, 0.0, &g_top, DEFAULT_FD_STEP).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, -3.0]);
        assert!((a - expected).norm() < 1e-6);
    }

    #[test]
    fn fd_matches_analytic_on_two_oscillators() {
        let sys = two_oscillators(0.0, 0.0);
        let g0 = Point::from_angles(GroupSpec::Torus(2), &[0.0, std::f64::consts::PI / 3.0])
            .unwrap();
        let a_fd = fd_linearization(&sys, 0.0, &g0, DEFAULT_FD_STEP).unwrap();
        let a_exact = sys.linearization(0.0, &g0).unwrap();
        assert!((a_fd.clone() - &a_exact).norm() < 1e-6);
        let expected = DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 0.5, -0.5]);
        assert!((a_exact - expected).norm() < 1e-12);
    }

    #[test]
    fn fd_step_domain_checked() {
        let sys = pendulum_sys(1.0, 0.0);
        let g0 = Point::from_cylinder(0.0, 0.0);
        for h_fd in [1e-8, 1e-2, 0.0, -1e-5, f64::NAN] {
            assert!(matches!(
                fd_linearization(&sys, 0.0, &g0, h_fd),
                Err(DynError::BadStep(_))
            ));
        }
    }

    #[test]
    fn pushforward_of_identity_map_is_identity() {
        let g = GroupSpec::SO3
            .exp(&DVector::from_vec(vec![0.4, -0.2, 0.9]))
            .unwrap();
        let v = DVector::from_vec(vec![0.2, -0.4, 0.1]);
        let ident = |p: &Point| -> Result<Point, DynError> { Ok(p.clone()) };
        let out = discrete_pushforward(&ident, &g, &v, DEFAULT_FD_STEP).unwrap();
        // Re-orthonormalization noise of order machine-ε is divided by the
        // probe step, so ~1e−10 is the honest floor here.
        assert!((out - &v).norm() < 1e-9);
    }

    #[test]
    fn pushforward_of_left_translation_is_identity() {
        let a = GroupSpec::SO3
            .exp(&DVector::from_vec(vec![1.1, -0.3, 0.2]))
            .unwrap();
        let g = GroupSpec::SO3
            .exp(&DVector::from_vec(vec![0.1, 0.5, -0.7]))
            .unwrap();
        let v = DVector::from_vec(vec![-0.6, 0.2, 0.3]);
        let translate = move |p: &Point| -> Result<Point, DynError> { Ok(a.compose(p)?) };
        let out = discrete_pushforward(&translate, &g, &v, DEFAULT_FD_STEP).unwrap();
        assert!((out - &v).norm() < 1e-9);
    }

    #[test]
    fn pushforward_of_linear_map_applies_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.3, 0.2, 0.1, 0.8, 0.1, 0.2, 0.2, 0.6]);
        let a_map = a.clone();
        let linear = move |p: &Point| -> Result<Point, DynError> {
            let x = p.euclidean().expect("euclidean point");
            let y = &a_map * x;
            Ok(Point::from_euclidean(y.as_slice()))
        };
        let g = Point::from_euclidean(&[1.0, -2.0, 0.5]);
        let v = DVector::from_vec(vec![0.3, 0.4, -1.0]);
        let out = discrete_pushforward(&linear, &g, &v, DEFAULT_FD_STEP).unwrap();
        assert!((out - &a * &v).norm() < 1e-9);
    }

    #[test]
    fn integrator_error_shrinks_sixteen_fold() {
        // Large swing and coarse steps keep truncation well above the
        // roundoff floor of the h = 1e−5 reference solution.
        let sys = pendulum_sys(0.5, 0.0);
        let g0 = Point::from_cylinder(2.5, 0.0);
        let endpoint = |h: f64| {
            let traj = flow(&sys, &g0, 1.0, h).unwrap();
            let (theta, v) = traj.endpoint().cylinder().unwrap();
            (theta, v)
        };
        let reference = endpoint(1e-5);
        let err = |h: f64| {
            let (theta, v) = endpoint(h);
            ((wrap_diff(theta - reference.0)).powi(2) + (v - reference.1).powi(2)).sqrt()
        };
        let e_coarse = err(4e-2);
        let e_fine = err(2e-2);
        let ratio = e_coarse / e_fine;
        assert!(
            (10.0..=22.0).contains(&ratio),
            "expected ≈16× error reduction, got {ratio:.2} ({e_coarse:.3e} / {e_fine:.3e})"
        );
    }

    /// Central difference of flow endpoints over perturbed initial
    /// conditions: an independent realization of the flow differential.
    fn fd_of_flow(
        sys: &SystemSpec,
        g0: &Point,
        v0: &DVector<f64>,
        t_final: f64,
        h: f64,
        s: f64,
    ) -> DVector<f64> {
        let group = sys.group;
        let end = |start: &Point| flow(sys, start, t_final, h).unwrap().endpoint().clone();
        let base_inv = end(g0).inverse();
        let gp = g0.compose(&group.exp(&(v0 * s)).unwrap()).unwrap();
        let gm = g0.compose(&group.exp(&(v0 * -s)).unwrap()).unwrap();
        let wp = base_inv.compose(&end(&gp)).unwrap().log().unwrap();
        let wm = base_inv.compose(&end(&gm)).unwrap().log().unwrap();
        (wp - wm) / (2.0 * s)
    }

    #[test]
    fn variational_tangents_match_flow_differences() {
        let cases: Vec<(SystemSpec, Point, DVector<f64>)> = vec![
            (
                pendulum_sys(3.0, 0.5),
                Point::from_cylinder(0.7, -0.2),
                DVector::from_vec(vec![0.3, -0.5]),
            ),
            (
                two_oscillators(0.3, -0.1),
                Point::from_angles(GroupSpec::Torus(2), &[0.2, 1.1]).unwrap(),
                DVector::from_vec(vec![1.0, 0.4]),
            ),
            (
                constant_sys(GroupSpec::SO3, vec![0.4, -0.2, 0.6])
                    .with_fd_fallback(DEFAULT_FD_STEP),
                GroupSpec::SO3
                    .exp(&DVector::from_vec(vec![0.3, 0.3, -0.1]))
                    .unwrap(),
                DVector::from_vec(vec![0.5, 1.0, -0.3]),
            ),
        ];
        for (i, (sys, g0, v0)) in cases.iter().enumerate() {
            let traj = variational_flow(sys, g0, v0, 1.0, DEFAULT_STEP).unwrap();
            let vt = traj.final_tangent().unwrap();
            let v_fd = fd_of_flow(sys, g0, v0, 1.0, DEFAULT_STEP, 1e-4);
            let rel = (vt - &v_fd).norm() / v_fd.norm().max(1e-30);
            assert!(rel < 1e-4, "case {i}: relative defect {rel:.3e}");
        }
    }

    #[test]
    fn left_translated_initial_conditions_translate_the_flow() {
        // Constant fields are left-invariant, so the flow commutes with
        // left translation of the initial condition.
        let sys = constant_sys(GroupSpec::SO3Power(2), vec![0.3, -0.2, 0.1, 0.5, 0.0, -0.4]);
        let group = GroupSpec::SO3Power(2);
        let g0 = group
            .exp(&DVector::from_vec(vec![0.1, 0.2, -0.3, 0.7, -0.2, 0.4]))
            .unwrap();
        let shift = group
            .exp(&DVector::from_vec(vec![-0.6, 0.9, 0.2, 0.1, 1.1, -0.5]))
            .unwrap();
        let base = flow(&sys, &g0, 1.0, DEFAULT_STEP).unwrap();
        let shifted = flow(&sys, &shift.compose(&g0).unwrap(), 1.0, DEFAULT_STEP).unwrap();
        for (p, q) in base.points.iter().zip(&shifted.points) {
            let translated = shift.compose(p).unwrap();
            let defect: f64 = translated
                .flat_coords()
                .iter()
                .zip(q.flat_coords())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(defect < 1e-8, "defect {defect:.3e}");
        }
        // Pairwise couplings depend only on relative attitudes, so the same
        // equivariance holds for the oscillator system under a common shift.
        let sys = two_oscillators(0.2, 0.2);
        let g0 = Point::from_angles(GroupSpec::Torus(2), &[0.3, 1.4]).unwrap();
        let shift = Point::from_angles(GroupSpec::Torus(2), &[2.2, 2.2]).unwrap();
        let base = flow(&sys, &g0, 1.0, DEFAULT_STEP).unwrap();
        let shifted = flow(&sys, &shift.compose(&g0).unwrap(), 1.0, DEFAULT_STEP).unwrap();
        for (p, q) in base.points.iter().zip(&shifted.points) {
            let translated = shift.compose(p).unwrap();
            let d0 = wrap_diff(translated.angles().unwrap()[0] - q.angles().unwrap()[0]).abs();
            let d1 = wrap_diff(translated.angles().unwrap()[1] - q.angles().unwrap()[1]).abs();
            assert!(d0.max(d1) < 1e-8);
        }
    }

    #[test]
    fn trajectory_csv_layout() {
        let sys = constant_sys(GroupSpec::Torus(2), vec![0.5, -0.5])
            .with_linearization(|_t, _g| Ok(DMatrix::zeros(2, 2)));
        let g0 = Point::from_angles(GroupSpec::Torus(2), &[0.0, 1.0]).unwrap();
        let v0 = DVector::from_vec(vec![1.0, 2.0]);
        let traj = variational_flow(&sys, &g0, &v0, 0.01, 1e-3).unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,q_1,q_2,v_1,v_2");
        assert_eq!(csv.lines().count(), 1 + traj.len());
        let first: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(first[0], "0");
        assert_eq!(first[3], "1");

        // Rotations flatten to nine row-major columns per agent.
        let sys = constant_sys(GroupSpec::SO3, vec![0.1, 0.0, 0.0]);
        let traj = flow(&sys, &GroupSpec::SO3.identity(), 0.01, 1e-3).unwrap();
        let csv = traj.to_csv();
        assert_eq!(
            csv.lines().next().unwrap(),
            "t,q_1,q_2,q_3,q_4,q_5,q_6,q_7,q_8,q_9"
        );

        // Custom state names for model-specific reports.
        let sys = pendulum_sys(1.0, 0.0);
        let traj = flow(&sys, &Point::from_cylinder(0.2, 0.0), 0.01, 1e-3).unwrap();
        let csv = traj.to_csv_with_names(&["theta", "v"]).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "t,theta,v");
        assert!(matches!(
            traj.to_csv_with_names(&["only_one"]),
            Err(DynError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn so3_rotations_stay_orthonormal_over_long_flows() {
        let sys = constant_sys(GroupSpec::SO3, vec![0.9, -1.3, 0.4]);
        let g0 = GroupSpec::SO3.identity();
        let traj = flow(&sys, &g0, 20.0, 1e-2).unwrap();
        traj.validate().unwrap();
        let r = traj.endpoint().rotations().unwrap()[0];
        let defect = (r * r.transpose() - Matrix3::identity()).norm();
        assert!(defect < 1e-12, "defect {defect:.3e}");
    }

    proptest! {
        /// Constant fields on tori integrate to exact angle shifts, and the
        /// tangent of the variational flow stays put.
        #[test]
        fn prop_torus_constant_flow_is_exact(
            w in proptest::collection::vec(-2.0f64..2.0, 3),
            a in proptest::collection::vec(0.0f64..6.2, 3),
            t_final in 0.2f64..2.0,
        ) {
            let sys = constant_sys(GroupSpec::Torus(3), w.clone())
                .with_linearization(|_t, _g| Ok(DMatrix::zeros(3, 3)));
            let g0 = Point::from_angles(GroupSpec::Torus(3), &a).unwrap();
            let v0 = DVector::from_vec(vec![0.3, -1.0, 0.4]);
            let traj = variational_flow(&sys, &g0, &v0, t_final, DEFAULT_STEP).unwrap();
            let angles = traj.endpoint().angles().unwrap();
            for j in 0..3 {
                let expected = a[j] + w[j] * t_final;
                prop_assert!(wrap_diff(angles[j] - expected).abs() < 1e-8);
            }
            prop_assert!((traj.final_tangent().unwrap() - &v0).norm() < 1e-12);
        }

        /// The damped pendulum flow is well formed from arbitrary starts.
        #[test]
        fn prop_pendulum_flow_is_well_formed(
            theta in 0.0f64..6.2,
            v in -3.0f64..3.0,
            rho in 0.1f64..4.0,
        ) {
            let sys = pendulum_sys(rho, 0.0);
            let traj = flow(&sys, &Point::from_cylinder(theta, v), 1.0, 2e-3).unwrap();
            prop_assert!(traj.validate().is_ok());
            prop_assert_eq!(traj.len(), 501);
        }
    }
}
