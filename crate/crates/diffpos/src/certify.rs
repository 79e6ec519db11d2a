//! Trajectory-level certification of uniform strict cone contraction, plus
//! attractor diagnostics (phase locking, splay configurations, attitude
//! synchronization) and subalgebra checks for invariant distributions.
//!
//! # Method
//!
//! A flow is certified by sampling: draw states from a user-described region,
//! seed every boundary ray of the cone as a variational tangent, and push the
//! whole bundle forward with the variational integrator. Because the cone
//! field is carried by the moving frame, membership is graded against one
//! fixed cone in frame coordinates at every report time. A certificate
//! passes when no propagated ray ever exits the cone before the horizon and
//! every ray clears the `eps` interior band at the horizon.
//!
//! A pass is **numerical evidence over a finite horizon**, not a proof: the
//! region's forward invariance is only monitored (a trajectory that leaves
//! voids its sample and is reported), finitely many states and rays are
//! checked, and growth bounds hold on `[0, T]` only. The certificate records
//! all of this so downstream reports stay honest.
//!
//! Everything here is deterministic for a fixed `(seed, config)` pair:
//! samples come from counter-based generators, the scan order is fixed, and
//! aggregation uses associative minima, so re-runs produce byte-identical
//! reports.

use crate::cones::{Cone, ConeError, MembershipGrade};
use crate::dynamics::{variational_flow_multi, DynError, SystemSpec, Trajectory, DEFAULT_STEP};
use crate::lie::{so3_exp, wrap_angle, wrap_diff, GroupSpec, LieError, Point, TAU};
use crate::positivity::TimeKind;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Report-grid coarsening: tangents are renormalized and graded every
/// `REPORT_STRIDE` integrator steps (grading cost control at RK4 accuracy).
pub const REPORT_STRIDE: usize = 10;

/// Salt mixed into the state seed to derive the independent ray seed.
const RAY_SEED_SALT: u64 = 0x0EA5_11AB_1E00_0001;

/// Tolerance used when a pairwise bracket must lie in a span.
const SUBALGEBRA_TOL: f64 = 1e-10;

/// Errors raised by certification and diagnostics.
#[derive(Debug, Error)]
pub enum CertError {
    /// A parameter is outside its admissible set.
    #[error("bad parameters: {0}")]
    BadParams(String),
    /// The operation does not apply to this group.
    #[error("wrong group: {0}")]
    WrongGroup(String),
    /// Mismatched dimensions between system, cone or region.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// The averaging window holds fewer than one trajectory sample.
    #[error("window {window} too short for a trajectory spanning {span}")]
    WindowTooShort { window: f64, span: f64 },
    /// The supplied basis vectors are linearly dependent.
    #[error("basis vectors are linearly dependent")]
    DependentBasis,
    /// A tangent vanished, so no alignment ratio is defined.
    #[error("zero tangent has no alignment ratio")]
    DegenerateDirection,
    /// Cone-side failure.
    #[error(transparent)]
    Cone(#[from] ConeError),
    /// Dynamics-side failure.
    #[error(transparent)]
    Dyn(#[from] DynError),
    /// Group-side failure.
    #[error(transparent)]
    Lie(#[from] LieError),
}

// ---------------------------------------------------------------------------
// Region samplers
// ---------------------------------------------------------------------------

/// The shape of a sampling region.
#[derive(Debug, Clone)]
pub enum Region {
    /// Per-coordinate closed intervals in frame coordinates. Angular
    /// coordinates wrap: an interval spanning the full circle is
    /// unconstrained.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// All pairwise distances between agents below the bound (torus phases
    /// under the wrapped metric, attitudes under the geodesic metric).
    PairwiseBall { bound: f64 },
}

/// A sampling domain on a specific group, used both to draw certification
/// states and to monitor that trajectories stay where they started.
#[derive(Debug, Clone)]
pub struct RegionSampler {
    group: GroupSpec,
    region: Region,
}

impl RegionSampler {
    /// A coordinate box on a torus, cylinder or Euclidean group.
    pub fn coordinate_box(
        group: GroupSpec,
        lo: Vec<f64>,
        hi: Vec<f64>,
    ) -> Result<RegionSampler, CertError> {
        if matches!(group, GroupSpec::SO3 | GroupSpec::SO3Power(_)) {
            return Err(CertError::WrongGroup(
                "coordinate boxes are not defined on rotation groups; use a pairwise ball".into(),
            ));
        }
        let n = group.dim();
        if lo.len() != n {
            return Err(CertError::DimensionMismatch {
                expected: n,
                got: lo.len(),
            });
        }
        if hi.len() != n {
            return Err(CertError::DimensionMismatch {
                expected: n,
                got: hi.len(),
            });
        }
        for k in 0..n {
            if !(lo[k].is_finite() && hi[k].is_finite() && lo[k] < hi[k]) {
                return Err(CertError::BadParams(format!(
                    "box interval {k} = [{}, {}] must be finite and nonempty",
                    lo[k], hi[k]
                )));
            }
        }
        Ok(RegionSampler {
            group,
            region: Region::Box { lo, hi },
        })
    }

    /// A pairwise-distance ball on a torus or a rotation power.
    pub fn pairwise_ball(group: GroupSpec, bound: f64) -> Result<RegionSampler, CertError> {
        match group {
            GroupSpec::Torus(n) | GroupSpec::SO3Power(n) if n >= 2 => {}
            _ => {
                return Err(CertError::WrongGroup(
                    "pairwise balls need a torus or rotation power with at least two agents"
                        .into(),
                ))
            }
        }
        if !(bound > 0.0 && bound <= std::f64::consts::PI) {
            return Err(CertError::BadParams(format!(
                "pairwise bound must lie in (0, π], got {bound}"
            )));
        }
        Ok(RegionSampler {
            group,
            region: Region::PairwiseBall { bound },
        })
    }

    /// The group this region lives on.
    pub fn group(&self) -> &GroupSpec {
        &self.group
    }

    /// The region description.
    pub fn region(&self) -> &Region {
        &self.region
    }

    /// Which coordinates of the group are angles (and therefore wrap).
    fn angular_coord(&self, k: usize) -> bool {
        match self.group {
            GroupSpec::Circle | GroupSpec::Torus(_) => true,
            GroupSpec::CylinderS1R => k == 0,
            _ => false,
        }
    }

    /// Draws `count` states inside the region. Same seed, same states.
    pub fn sample(&self, seed: u64, count: usize) -> Result<Vec<Point>, CertError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        match &self.region {
            Region::Box { lo, hi } => {
                let n = self.group.dim();
                for _ in 0..count {
                    let coords: Vec<f64> = (0..n).map(|k| rng.gen_range(lo[k]..hi[k])).collect();
                    out.push(self.point_from_coords(&coords)?);
                }
            }
            Region::PairwiseBall { bound } => {
                let agents = match self.group {
                    GroupSpec::Torus(n) | GroupSpec::SO3Power(n) => n,
                    _ => unreachable!("validated in the constructor"),
                };
                let radius = bound / 2.0 * 0.999; // strict interior via triangle inequality
                match self.group {
                    GroupSpec::Torus(_) => {
                        for _ in 0..count {
                            let base = rng.gen_range(0.0..TAU);
                            let angles: Vec<f64> = (0..agents)
                                .map(|_| base + rng.gen_range(-radius..radius))
                                .collect();
                            out.push(
                                Point::from_angles(self.group.clone(), &angles)
                                    .map_err(CertError::Lie)?,
                            );
                        }
                    }
                    GroupSpec::SO3Power(_) => {
                        for _ in 0..count {
                            let base = so3_exp(&(random_direction(&mut rng)
                                * rng.gen_range(0.0..std::f64::consts::PI * 0.95)));
                            let rs: Vec<Matrix3<f64>> = (0..agents)
                                .map(|_| {
                                    base * so3_exp(
                                        &(random_direction(&mut rng)
                                            * rng.gen_range(0.0..radius)),
                                    )
                                })
                                .collect();
                            out.push(
                                Point::from_rotations(self.group.clone(), &rs)
                                    .map_err(CertError::Lie)?,
                            );
                        }
                    }
                    _ => unreachable!("validated in the constructor"),
                }
            }
        }
        Ok(out)
    }

    fn point_from_coords(&self, coords: &[f64]) -> Result<Point, CertError> {
        match self.group {
            GroupSpec::Circle | GroupSpec::Torus(_) => {
                Point::from_angles(self.group.clone(), coords).map_err(CertError::Lie)
            }
            GroupSpec::CylinderS1R => Ok(Point::from_cylinder(coords[0], coords[1])),
            GroupSpec::EuclideanRn(_) => Ok(Point::from_euclidean(coords)),
            _ => unreachable!("validated in the constructor"),
        }
    }

    /// True when the state satisfies the region constraints (with a tiny
    /// relative slack so boundary grazing does not void samples spuriously).
    pub fn contains(&self, g: &Point) -> bool {
        match &self.region {
            Region::Box { lo, hi } => {
                let coords: Vec<f64> = match self.group {
                    GroupSpec::Circle | GroupSpec::Torus(_) => {
                        g.angles().expect("torus point").iter().copied().collect()
                    }
                    GroupSpec::CylinderS1R => {
                        let (theta, v) = g.cylinder().expect("cylinder point");
                        vec![theta, v]
                    }
                    GroupSpec::EuclideanRn(_) => {
                        g.euclidean().expect("euclidean point").iter().copied().collect()
                    }
                    _ => return false,
                };
                coords.iter().enumerate().all(|(k, &x)| {
                    let span = hi[k] - lo[k];
                    if self.angular_coord(k) {
                        span >= TAU - 1e-9 || wrap_angle(x - lo[k]) <= span + 1e-12
                    } else {
                        x >= lo[k] - 1e-12 && x <= hi[k] + 1e-12
                    }
                })
            }
            Region::PairwiseBall { bound } => {
                let slack = bound * (1.0 + 1e-12);
                match self.group {
                    GroupSpec::Torus(_) => {
                        let angles = g.angles().expect("torus point");
                        let n = angles.len();
                        (0..n).all(|i| {
                            (i + 1..n)
                                .all(|k| wrap_diff(angles[i] - angles[k]).abs() <= slack)
                        })
                    }
                    GroupSpec::SO3Power(_) => {
                        let rs = g.rotations().expect("rotation point");
                        let n = rs.len();
                        (0..n).all(|i| {
                            (i + 1..n).all(|k| rotation_angle(&rs[i], &rs[k]) <= slack)
                        })
                    }
                    _ => false,
                }
            }
        }
    }
}

/// A uniformly random unit vector in ℝ³ (rejection from the cube).
fn random_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Geodesic angle between two rotations through the trace formula — total
/// (never errors, even at the antipode, where it returns π).
fn rotation_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos()
}

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

/// The weakest event a certification run observed.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCase {
    /// Index of the sampled state.
    pub state: usize,
    /// Index of the boundary ray.
    pub ray: usize,
    /// Report time of the event.
    pub time: f64,
    /// Scale-free cone margin at that event.
    pub margin: f64,
}

/// Outcome of a sampled contraction certification.
///
/// `pass` holds exactly when no propagated ray ever graded outside the cone
/// at an in-region report time, every surviving ray graded into the `eps`
/// interior at the horizon, and at least one sample survived. Voided samples
/// (trajectories that left the region or blew up) carry no supporting
/// evidence, but cone exits they exhibited while still inside the region
/// count against the certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct DPCertificate {
    /// Whether the sampled evidence supports uniform strict contraction.
    pub pass: bool,
    /// Certification horizon.
    pub t_horizon: f64,
    /// Required interior band at the horizon (scale-free margin units).
    pub eps: f64,
    /// Number of sampled states.
    pub n_states: usize,
    /// Number of boundary rays per state.
    pub n_rays: usize,
    /// Seed the state and ray draws derive from.
    pub seed: u64,
    /// Minimum horizon margin over surviving samples (None if none survived).
    pub min_final_margin: Option<f64>,
    /// The weakest observed event: the first worst cone exit if any ray
    /// escaped, otherwise the holder of the minimum horizon margin.
    pub worst_case: Option<WorstCase>,
    /// Number of sampled states voided by leaving the region or blowing up.
    pub voided: usize,
}

impl DPCertificate {
    /// Canonical JSON encoding (keys sorted, shortest-roundtrip floats), so
    /// identical runs serialize to identical bytes.
    pub fn to_json(&self) -> String {
        let worst = match &self.worst_case {
            Some(w) => serde_json::json!({
                "state": w.state,
                "ray": w.ray,
                "time": w.time,
                "margin": w.margin,
            }),
            None => serde_json::Value::Null,
        };
        serde_json::json!({
            "pass": self.pass,
            "T": self.t_horizon,
            "eps": self.eps,
            "n_states": self.n_states,
            "n_rays": self.n_rays,
            "seed": self.seed,
            "min_final_margin": self.min_final_margin,
            "worst_case": worst,
            "voided": self.voided,
            "note": "sampled evidence on a finite horizon; region invariance monitored, not proven",
        })
        .to_string()
    }
}

/// Certifies uniform strict cone contraction by boundary-ray propagation.
///
/// For each of `n_states` region samples, all `n_rays` cone boundary rays
/// are propagated jointly under the variational flow; tangents are
/// renormalized and graded against the frame-coordinate cone every
/// [`REPORT_STRIDE`] steps. A ray grading `Outside` before the horizon
/// fails the certificate with a witness; at the horizon every ray must
/// clear the `eps` interior band. Trajectories that leave the region or
/// blow up void their state (reported in `voided`). Scanning is
/// deterministic, so equal inputs give equal certificates.
pub fn certify_diffpos(
    sys: &SystemSpec,
    cone: &Cone,
    region: &RegionSampler,
    t_horizon: f64,
    eps: f64,
    n_states: usize,
    n_rays: usize,
    seed: u64,
) -> Result<DPCertificate, CertError> {
    let n = sys.group.dim();
    if cone.dim() != n {
        return Err(CertError::DimensionMismatch {
            expected: n,
            got: cone.dim(),
        });
    }
    if *region.group() != sys.group {
        return Err(CertError::WrongGroup(format!(
            "region lives on {:?} but the system on {:?}",
            region.group(),
            sys.group
        )));
    }
    if !(t_horizon > 0.0 && t_horizon.is_finite()) {
        return Err(CertError::BadParams(format!(
            "horizon must be positive and finite, got {t_horizon}"
        )));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CertError::BadParams(format!(
            "eps must be positive and finite, got {eps}"
        )));
    }
    if n_states == 0 || n_rays == 0 {
        return Err(CertError::BadParams(
            "need at least one state and one ray".into(),
        ));
    }

    let h = match sys.time_kind {
        TimeKind::Continuous => DEFAULT_STEP,
        TimeKind::Discrete => 1.0,
    };
    let h_report = REPORT_STRIDE as f64 * h;
    // Report grid 0 < t_1 < ... < t_K = T, built multiplicatively so the
    // final time is exact.
    let mut report_times = Vec::new();
    let mut k = 1usize;
    loop {
        let t = k as f64 * h_report;
        if t >= t_horizon - 1e-9 * h {
            report_times.push(t_horizon);
            break;
        }
        report_times.push(t);
        k += 1;
    }

    let states = region.sample(seed, n_states)?;
    let rays = cone.boundary_sample(n_rays, seed ^ RAY_SEED_SALT);
    let mut v0 = DMatrix::zeros(n, n_rays);
    for (r, ray) in rays.iter().enumerate() {
        v0.set_column(r, ray);
    }

    let mut voided = 0usize;
    let mut worst_violation: Option<WorstCase> = None;
    let mut worst_final: Option<WorstCase> = None;
    let mut all_eps = true;
    let mut survivors = 0usize;

    'states: for (s, g0) in states.iter().enumerate() {
        let mut g = g0.clone();
        let mut v = v0.clone();
        let mut t_prev = 0.0;
        // Horizon records are committed only if the state survives; cone
        // exits observed while the trajectory is still inside the region are
        // genuine counterevidence and are committed immediately, even if the
        // state is voided later.
        let mut local_final: Option<WorstCase> = None;
        let mut local_all_eps = true;

        for (ri, &t_report) in report_times.iter().enumerate() {
            let d = t_report - t_prev;
            let step = match variational_flow_multi(sys, t_prev, &g, &v, d, h) {
                Ok((traj, mats)) => (traj, mats),
                Err(
                    DynError::FieldBlowUp { .. }
                    | DynError::DomainViolation(_)
                    | DynError::Lie(_),
                ) => {
                    voided += 1;
                    continue 'states;
                }
                Err(other) => return Err(CertError::Dyn(other)),
            };
            g = step.0.endpoint().clone();
            v = step.1.last().expect("at least the initial tangent").clone();
            t_prev = t_report;

            if !region.contains(&g) {
                voided += 1;
                continue 'states;
            }

            let final_time = ri + 1 == report_times.len();
            for r in 0..n_rays {
                let mut col = v.column(r).into_owned();
                let norm = col.norm();
                if norm > 0.0 {
                    col /= norm;
                    v.set_column(r, &col);
                }
                let margin = cone.margin(&col)?;
                let grade = cone.contains(&col, eps)?;
                if final_time {
                    if local_final.as_ref().map_or(true, |w| margin < w.margin) {
                        local_final = Some(WorstCase {
                            state: s,
                            ray: r,
                            time: t_report,
                            margin,
                        });
                    }
                    if !matches!(grade, MembershipGrade::EpsInterior(_)) {
                        local_all_eps = false;
                    }
                } else if matches!(grade, MembershipGrade::Outside)
                    && worst_violation.as_ref().map_or(true, |w| margin < w.margin)
                {
                    worst_violation = Some(WorstCase {
                        state: s,
                        ray: r,
                        time: t_report,
                        margin,
                    });
                }
            }
        }

        survivors += 1;
        all_eps &= local_all_eps;
        if let Some(w) = local_final {
            if worst_final.as_ref().map_or(true, |b| w.margin < b.margin) {
                worst_final = Some(w);
            }
        }
    }

    let min_final_margin = worst_final.as_ref().map(|w| w.margin);
    let pass = survivors > 0
        && worst_violation.is_none()
        && all_eps
        && min_final_margin.map_or(false, |m| m >= eps);
    Ok(DPCertificate {
        pass,
        t_horizon,
        eps,
        n_states,
        n_rays,
        seed,
        min_final_margin,
        worst_case: worst_violation.or(worst_final),
        voided,
    })
}

// ---------------------------------------------------------------------------
// Attractor diagnostics
// ---------------------------------------------------------------------------

/// Frequency-synchronization residual over the trailing `window` of a torus
/// trajectory: the largest deviation of any agent's instantaneous frequency
/// from the network mean, together with the average mean frequency (the
/// locked rate when the residual is small).
pub fn phase_lock_residual(
    sys: &SystemSpec,
    traj: &Trajectory,
    window: f64,
) -> Result<(f64, f64), CertError> {
    let agents = match sys.group {
        GroupSpec::Torus(n) => n,
        _ => {
            return Err(CertError::WrongGroup(
                "phase locking is a torus diagnostic".into(),
            ))
        }
    };
    if traj.is_empty() {
        return Err(CertError::BadParams("empty trajectory".into()));
    }
    let t_end = traj.final_time();
    let span = t_end - traj.times[0];
    if !(window > 0.0) || t_end - window < traj.times[0] - 1e-9 {
        return Err(CertError::WindowTooShort { window, span });
    }
    let start = t_end - window;
    let mut residual: f64 = 0.0;
    let mut freq_sum = 0.0;
    let mut count = 0usize;
    for (idx, &t) in traj.times.iter().enumerate() {
        if t < start - 1e-12 {
            continue;
        }
        let f = sys.field(t, &traj.points[idx]).map_err(CertError::Dyn)?;
        let mean = f.sum() / agents as f64;
        let dev = f.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max);
        residual = residual.max(dev);
        freq_sum += mean;
        count += 1;
    }
    Ok((residual, freq_sum / count as f64))
}

/// Distance of a torus configuration from the nearest balanced spacing:
/// sorts the phases, computes consecutive wrapped gaps, and returns the
/// largest deviation of any gap from `2π/N`.
pub fn splay_check(theta: &Point) -> Result<f64, CertError> {
    let angles = theta
        .angles()
        .ok_or_else(|| CertError::WrongGroup("splay spacing is a torus diagnostic".into()))?;
    let n = angles.len();
    if n < 2 {
        return Err(CertError::BadParams(
            "splay spacing needs at least two phases".into(),
        ));
    }
    let mut sorted: Vec<f64> = angles.iter().map(|&a| wrap_angle(a)).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite angles"));
    let target = TAU / n as f64;
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let gap = if k + 1 == n {
            sorted[0] + TAU - sorted[n - 1]
        } else {
            sorted[k + 1] - sorted[k]
        };
        worst = worst.max((gap - target).abs());
    }
    Ok(worst)
}

/// Largest pairwise geodesic distance between agents of a rotation-power
/// configuration — zero exactly on the synchronization set, defined through
/// the antipode (no cut-locus failures), and invariant under common left
/// translation.
pub fn sync_distance(g: &Point) -> Result<f64, CertError> {
    let rs = g
        .rotations()
        .ok_or_else(|| CertError::WrongGroup("sync distance is a rotation diagnostic".into()))?;
    let n = rs.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for k in i + 1..n {
            worst = worst.max(rotation_angle(&rs[i], &rs[k]));
        }
    }
    Ok(worst)
}

/// True when the span of the given algebra directions is closed under the
/// group bracket (to `1e−10`), i.e. generates an invariant distribution
/// whose integral manifolds are translates of a subgroup.
pub fn check_invariant_distribution(
    group: &GroupSpec,
    basis: &[DVector<f64>],
) -> Result<bool, CertError> {
    let n = group.dim();
    if basis.is_empty() {
        return Err(CertError::BadParams("empty basis".into()));
    }
    for b in basis {
        if b.len() != n {
            return Err(CertError::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
    }
    let mut bmat = DMatrix::zeros(n, basis.len());
    for (j, b) in basis.iter().enumerate() {
        bmat.set_column(j, b);
    }
    let svd = bmat.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax.max(1.0))
        .count();
    if rank < basis.len() {
        return Err(CertError::DependentBasis);
    }
    for i in 0..basis.len() {
        for j in i + 1..basis.len() {
            let br = group.bracket(&basis[i], &basis[j]);
            let coeffs = svd
                .solve(&br, 1e-12)
                .map_err(|e| CertError::BadParams(e.to_string()))?;
            let residual = (&br - &bmat * coeffs).norm();
            if residual > SUBALGEBRA_TOL * (1.0 + br.norm()) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Per-sample alignment ratio of a tangent trajectory against a dominant
/// span: `Φ = ‖off-span component‖ / ‖in-span component‖` in frame
/// coordinates. `Φ = 0` means fully aligned; a tangent orthogonal to the
/// span reports `+∞` (it enters the ratio's domain as soon as the flow
/// tilts it); a vanished tangent is an error.
pub fn alignment_ratio(
    traj: &Trajectory,
    dominant_basis: &[DVector<f64>],
) -> Result<Vec<f64>, CertError> {
    let tangents = traj.tangents.as_ref().ok_or_else(|| {
        CertError::BadParams("trajectory carries no tangents; use the variational flow".into())
    })?;
    if dominant_basis.is_empty() {
        return Err(CertError::BadParams("empty dominant basis".into()));
    }
    let n = dominant_basis[0].len();
    let mut bmat = DMatrix::zeros(n, dominant_basis.len());
    for (j, b) in dominant_basis.iter().enumerate() {
        if b.len() != n {
            return Err(CertError::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        bmat.set_column(j, b);
    }
    let qr = bmat.qr();
    let q = qr.q();
    let r = qr.r();
    if (0..dominant_basis.len()).any(|j| r[(j, j)].abs() < 1e-12) {
        return Err(CertError::DependentBasis);
    }
    tangents
        .iter()
        .map(|v| {
            if v.len() != n {
                return Err(CertError::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
            if v.norm() == 0.0 {
                return Err(CertError::DegenerateDirection);
            }
            let v_par = &q * (q.transpose() * v);
            let v_perp = v - &v_par;
            let p = v_par.norm();
            Ok(if p == 0.0 {
                f64::INFINITY
            } else {
                v_perp.norm() / p
            })
        })
        .collect()
}
