//! Cones of rank k in frame coordinates.
//!
//! A *cone of rank k* is a closed set C ⊆ ℝⁿ with αC ⊆ C for every real α
//! (note: both signs), pointed apart from linear subspaces of dimension at
//! most k, and containing a k-dimensional subspace. The classical convex
//! case is k = 1 via the symmetric union K ∪ −K. This module provides the
//! four representations the analysis needs:
//!
//! - [`Cone::Polyhedral`]: K = {v : ⟨nᵢ, v⟩ ≥ 0 ∀i}, graded as K ∪ −K;
//!   with normal span of dimension l in ℝⁿ the rank is n − l + 1.
//! - [`Cone::Quadratic`]: C(P) = {v : vᵀPv ≥ 0} for symmetric invertible P
//!   with k positive eigenvalues — a quadratic cone of rank k.
//! - [`Cone::Orthant`]: the coordinate orthant as K ∪ −K (rank 1).
//! - [`Cone::Sync`]: synchronization cones for consensus on T^N and
//!   SO(3)^N, built from Q(v) = Σⱼ (𝟏ⱼᵀv)² − μ‖v‖² with m interleaved
//!   all-ones generators 𝟏ⱼ. For m = 1 the cone is the convex second-order
//!   branch {𝟏ᵀv ≥ 0, Q(v) ≥ 0}; for m = 3 it is the full symmetric
//!   quadratic cone of rank 3.
//!
//! # Grading and margins
//!
//! [`Cone::contains`] grades membership with a scale-free tolerance band of
//! `1e−9` around the boundary and an optional ε-contraction: quadratic-type
//! cones use the Rayleigh margin `Q(v)/‖v‖²` with ε-interior meaning
//! `Q(v) ≥ ε‖v‖²`; polyhedral-type cones use the normalized worst margin
//! `minᵢ ⟨nᵢ, v⟩/‖v‖` (the normals enter as given, un-normalized) with
//! ε-interior meaning every margin clears ε. The zero vector grades
//! `Boundary` by convention: it belongs to every cone but to no open
//! interior.
//!
//! # Parameter domain for synchronization cones
//!
//! The quadratic form Q has matrix P = Σⱼ 𝟏ⱼ𝟏ⱼᵀ − μI with eigenvalues
//! N − μ (multiplicity m, eigenspace span{𝟏ⱼ}) and −μ (elsewhere), so the
//! construction yields a proper cone of rank m exactly for μ ∈ (0, N);
//! μ = 0 and μ = N are the degenerate limiting cases (half space / bundle of
//! subspaces) and are rejected along with everything outside the interval.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative half-width of the boundary grading band.
pub const BOUNDARY_BAND: f64 = 1e-9;

/// Singularity threshold for quadratic cone matrices.
pub const SINGULAR_TOL: f64 = 1e-10;

/// Errors for cone construction and evaluation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConeError {
    /// Quadratic matrix is not symmetric within tolerance.
    #[error("matrix is not symmetric: asymmetry {0:.3e}")]
    NotSymmetric(f64),
    /// Quadratic matrix has an eigenvalue within 1e-10 of zero.
    #[error("matrix is singular: |lambda_min| = {0:.3e} <= 1e-10")]
    Singular(f64),
    /// Quadratic matrix is definite: the cone would be {0} or all of space.
    #[error("matrix is definite (all eigenvalues share a sign); not a proper cone")]
    Definite,
    /// Vector length does not match the cone's ambient dimension.
    #[error("dimension mismatch: cone lives in R^{expected}, vector has length {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// Synchronization-cone opening parameter outside the proper range.
    #[error("mu = {mu} outside (0, {limit}): the cone degenerates at the endpoints")]
    MuOutOfRange { mu: f64, limit: f64 },
    /// Synchronization cones exist for m = 1 (torus) and m = 3 (rotations).
    #[error("unsupported synchronization rank m = {0} (expected 1 or 3)")]
    BadSyncRank(usize),
    /// A quadratic-only operation was applied to another variant.
    #[error("operation requires a quadratic cone")]
    NotQuadratic,
    /// Polyhedral cone without constraints (or with a zero normal).
    #[error("invalid polyhedral data: {0}")]
    BadPolyhedral(String),
}

/// Result of grading a vector against a cone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MembershipGrade {
    /// Strictly violates a constraint (beyond the tolerance band).
    Outside,
    /// Within the relative tolerance band of the boundary (includes v = 0).
    Boundary,
    /// Strictly inside, but not by the requested ε.
    Interior,
    /// Inside with margin at least ε (the contracted cone C_ε).
    EpsInterior(f64),
}

impl MembershipGrade {
    /// True for `Interior` and `EpsInterior` (strict membership).
    pub fn is_interior(&self) -> bool {
        matches!(self, MembershipGrade::Interior | MembershipGrade::EpsInterior(_))
    }

    /// True unless the grade is `Outside` (closed-cone membership).
    pub fn is_inside(&self) -> bool {
        !matches!(self, MembershipGrade::Outside)
    }
}

/// A constant cone in frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum Cone {
    /// Intersection of half spaces {⟨nᵢ, v⟩ ≥ 0}, graded symmetrically.
    Polyhedral { normals: Vec<DVector<f64>> },
    /// {v : vᵀPv ≥ 0} with symmetric invertible P of signature (k, n−k).
    Quadratic { p: DMatrix<f64>, k: usize },
    /// The nonnegative orthant of ℝⁿ, graded symmetrically.
    Orthant { n: usize },
    /// Synchronization cone on m·N coordinates with opening parameter μ.
    Sync { m: usize, agents: usize, mu: f64 },
}

impl Cone {
    /// Build a quadratic cone from a symmetric matrix; the rank k is the
    /// number of positive eigenvalues. Rejects asymmetric matrices, matrices
    /// with an eigenvalue within `1e−10` of zero, and definite matrices.
    pub fn quadratic(p: DMatrix<f64>) -> Result<Cone, ConeError> {
        if !p.is_square() {
            return Err(ConeError::NotSymmetric(f64::INFINITY));
        }
        let scale = p.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
        let asym = (&p - p.transpose())
            .iter()
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
        if asym > 1e-9 * scale {
            return Err(ConeError::NotSymmetric(asym));
        }
        let eigs = p.clone().symmetric_eigenvalues();
        let min_abs = eigs.iter().fold(f64::INFINITY, |acc, l| acc.min(l.abs()));
        if min_abs <= SINGULAR_TOL {
            return Err(ConeError::Singular(min_abs));
        }
        let k = eigs.iter().filter(|l| **l > 0.0).count();
        if k == 0 || k == p.nrows() {
            return Err(ConeError::Definite);
        }
        Ok(Cone::Quadratic { p, k })
    }

    /// Build a polyhedral cone from its inward normals.
    pub fn polyhedral(normals: Vec<DVector<f64>>) -> Result<Cone, ConeError> {
        if normals.is_empty() {
            return Err(ConeError::BadPolyhedral("no normals given".into()));
        }
        let n = normals[0].len();
        for (i, nv) in normals.iter().enumerate() {
            if nv.len() != n {
                return Err(ConeError::BadPolyhedral(format!(
                    "normal {i} has length {} but normal 0 has length {n}",
                    nv.len()
                )));
            }
            if nv.norm() <= SINGULAR_TOL {
                return Err(ConeError::BadPolyhedral(format!("normal {i} is zero")));
            }
        }
        Ok(Cone::Polyhedral { normals })
    }

    /// The nonnegative orthant of ℝⁿ.
    pub fn orthant(n: usize) -> Cone {
        Cone::Orthant { n }
    }

    /// Build a synchronization cone: `m = 1` gives the convex phase-consensus
    /// branch on ℝ^N, `m = 3` the rank-3 rotation-consensus cone on ℝ^{3N}.
    /// Requires `0 < mu < N`; the cone degenerates at both endpoints.
    pub fn sync(m: usize, agents: usize, mu: f64) -> Result<Cone, ConeError> {
        if m != 1 && m != 3 {
            return Err(ConeError::BadSyncRank(m));
        }
        let limit = agents as f64;
        if !(mu > 0.0 && mu < limit) {
            return Err(ConeError::MuOutOfRange { mu, limit });
        }
        Ok(Cone::Sync { m, agents, mu })
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        match self {
            Cone::Polyhedral { normals } => normals[0].len(),
            Cone::Quadratic { p, .. } => p.nrows(),
            Cone::Orthant { n } => *n,
            Cone::Sync { m, agents, .. } => m * agents,
        }
    }

    /// Rank of the cone: the maximum dimension of a linear subspace it
    /// contains. Orthants (as K ∪ −K) have rank 1; a polyhedral cone whose
    /// normals span an l-dimensional subspace of ℝⁿ has rank n − l + 1;
    /// quadratic cones report their signature count; synchronization cones
    /// report m.
    pub fn rank(&self) -> usize {
        match self {
            Cone::Orthant { .. } => 1,
            Cone::Quadratic { k, .. } => *k,
            Cone::Sync { m, .. } => *m,
            Cone::Polyhedral { normals } => {
                let n = normals[0].len();
                let mut a = DMatrix::zeros(normals.len(), n);
                for (i, nv) in normals.iter().enumerate() {
                    a.row_mut(i).copy_from(&nv.transpose());
                }
                let l = a.rank(1e-10);
                n - l + 1
            }
        }
    }

    /// The generators 𝟏ⱼ of a synchronization cone: m interleaved all-ones
    /// patterns, mutually orthogonal with squared norm N each.
    pub fn sync_generators(m: usize, agents: usize) -> Vec<DVector<f64>> {
        (0..m)
            .map(|j| {
                DVector::from_fn(m * agents, |i, _| if i % m == j { 1.0 } else { 0.0 })
            })
            .collect()
    }

    /// The quadratic-form matrix for quadratic and synchronization cones
    /// (P = Σⱼ 𝟏ⱼ𝟏ⱼᵀ − μI for the latter); `None` for polyhedral/orthant.
    pub fn quadratic_form(&self) -> Option<DMatrix<f64>> {
        match self {
            Cone::Quadratic { p, .. } => Some(p.clone()),
            Cone::Sync { m, agents, mu } => {
                let n = m * agents;
                let mut p = DMatrix::identity(n, n) * (-*mu);
                for g in Self::sync_generators(*m, *agents) {
                    p += &g * g.transpose();
                }
                Some(p)
            }
            _ => None,
        }
    }

    /// Inward normals for polyhedral-type cones (orthants expand to the
    /// coordinate basis); `None` for quadratic/sync.
    pub fn half_space_normals(&self) -> Option<Vec<DVector<f64>>> {
        match self {
            Cone::Polyhedral { normals } => Some(normals.clone()),
            Cone::Orthant { n } => Some(
                (0..*n)
                    .map(|i| DVector::from_fn(*n, |j, _| if i == j { 1.0 } else { 0.0 }))
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Scale-free membership margin: the Rayleigh quotient `Q(v)/‖v‖²` for
    /// quadratic-type cones, the best symmetric normalized half-space margin
    /// for polyhedral-type cones. Positive inside, ~0 on the boundary,
    /// negative outside; `contains` grades exactly this number.
    pub fn margin(&self, v: &DVector<f64>) -> Result<f64, ConeError> {
        if v.len() != self.dim() {
            return Err(ConeError::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        let norm = v.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        match self {
            Cone::Polyhedral { .. } | Cone::Orthant { .. } => {
                let normals = self.half_space_normals().expect("polyhedral-type cone");
                let worst = |w: &DVector<f64>| {
                    normals
                        .iter()
                        .map(|nv| nv.dot(w))
                        .fold(f64::INFINITY, f64::min)
                };
                Ok(worst(v).max(worst(&(-v))) / norm)
            }
            Cone::Quadratic { p, .. } => Ok(v.dot(&(p * v)) / (norm * norm)),
            Cone::Sync { m, agents, mu } => {
                let gens = Self::sync_generators(*m, *agents);
                let q = gens.iter().map(|g| g.dot(v).powi(2)).sum::<f64>()
                    - mu * norm * norm;
                let q_rel = q / (norm * norm);
                if *m == 1 {
                    // Convex branch: a wrong-sign half space dominates the
                    // margin so that points deep in −K report negative.
                    let s = gens[0].dot(v) / ((*agents as f64).sqrt() * norm);
                    if s < 0.0 {
                        return Ok(q_rel.min(s));
                    }
                }
                Ok(q_rel)
            }
        }
    }

    /// Grade `v` against the cone with contraction parameter `eps ≥ 0`.
    ///
    /// The boundary band is `±1e−9` on the scale-free margin; `eps > 0`
    /// upgrades `Interior` to `EpsInterior(eps)` when the margin clears it.
    pub fn contains(&self, v: &DVector<f64>, eps: f64) -> Result<MembershipGrade, ConeError> {
        let margin = self.margin(v)?;
        if v.norm() == 0.0 {
            return Ok(MembershipGrade::Boundary);
        }
        Ok(if margin < -BOUNDARY_BAND {
            MembershipGrade::Outside
        } else if margin <= BOUNDARY_BAND {
            MembershipGrade::Boundary
        } else if eps > 0.0 && margin >= eps {
            MembershipGrade::EpsInterior(eps)
        } else {
            MembershipGrade::Interior
        })
    }

    /// The complementary cone of a quadratic cone: the cone of −P, of rank
    /// n − k. Errors on every other variant.
    pub fn complementary(&self) -> Result<Cone, ConeError> {
        match self {
            Cone::Quadratic { p, k } => Ok(Cone::Quadratic {
                p: -p,
                k: p.nrows() - k,
            }),
            _ => Err(ConeError::NotQuadratic),
        }
    }

    /// Deterministic unit vectors on the cone's boundary.
    ///
    /// Polyhedral-type cones are sampled stratified per active constraint
    /// (round-robin over faces); quadratic-type cones split a Gaussian draw
    /// across the positive/negative eigenspaces of P with equal quadratic
    /// magnitudes, so Q(v) = 0 holds by construction. The m = 1
    /// synchronization cone flips samples into the 𝟏ᵀv ≥ 0 branch. Same
    /// seed, same output.
    pub fn boundary_sample(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Cone::Orthant { .. } | Cone::Polyhedral { .. } => {
                self.sample_polyhedral_boundary(count, &mut rng)
            }
            Cone::Quadratic { p, .. } => {
                let (vecs, vals) = sorted_eigen(p);
                sample_quadratic_boundary(&vecs, &vals, count, &mut rng)
            }
            Cone::Sync { m, agents, .. } => {
                let p = self.quadratic_form().expect("sync cone has a form");
                let (vecs, vals) = sorted_eigen(&p);
                let mut samples = sample_quadratic_boundary(&vecs, &vals, count, &mut rng);
                if *m == 1 {
                    let one = &Self::sync_generators(1, *agents)[0];
                    for v in &mut samples {
                        if one.dot(v) < 0.0 {
                            *v = -v.clone();
                        }
                    }
                }
                samples
            }
        }
    }

    fn sample_polyhedral_boundary(
        &self,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<DVector<f64>> {
        let normals = self.half_space_normals().expect("polyhedral-type cone");
        let n = self.dim();
        let m = normals.len();
        let mut out = Vec::with_capacity(count);
        let mut face = 0usize;
        while out.len() < count {
            let nf = &normals[face % m];
            let mut found = None;
            for _ in 0..200 {
                let g = gaussian_vector(n, rng);
                let mut v = &g - nf * (nf.dot(&g) / nf.norm_squared());
                if v.norm() < 1e-9 {
                    continue;
                }
                let others_ok = |w: &DVector<f64>| {
                    normals
                        .iter()
                        .enumerate()
                        .all(|(j, nj)| j == face % m || nj.dot(w) >= 0.0)
                };
                if others_ok(&v) {
                    found = Some(v.normalize());
                    break;
                }
                v = -v;
                if others_ok(&v) {
                    found = Some(v.normalize());
                    break;
                }
            }
            if let Some(v) = found {
                out.push(v);
            }
            // Move on regardless: a face that is never active (degenerate
            // data) must not stall the sampler.
            face += 1;
        }
        out
    }
}

/// Eigenvectors/eigenvalues of a symmetric matrix sorted descending.
fn sorted_eigen(p: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let se = p.clone().symmetric_eigen();
    let n = p.nrows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|a, b| se.eigenvalues[*b].partial_cmp(&se.eigenvalues[*a]).unwrap());
    let mut vecs = DMatrix::zeros(n, n);
    let mut vals = DVector::zeros(n);
    for (pos, &i) in idx.iter().enumerate() {
        vecs.column_mut(pos).copy_from(&se.eigenvectors.column(i));
        vals[pos] = se.eigenvalues[i];
    }
    (vecs, vals)
}

/// Draw boundary points of {vᵀPv ≥ 0}: Gaussian coefficients on the
/// positive and negative eigenspaces, each rescaled to unit quadratic
/// magnitude, so the two contributions cancel exactly.
fn sample_quadratic_boundary(
    vecs: &DMatrix<f64>,
    vals: &DVector<f64>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<DVector<f64>> {
    let n = vals.len();
    let k = vals.iter().filter(|l| **l > 0.0).count();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let y = gaussian_vector(n, rng);
        let pos: f64 = (0..k).map(|i| vals[i] * y[i] * y[i]).sum();
        let neg: f64 = (k..n).map(|i| -vals[i] * y[i] * y[i]).sum();
        if pos <= 1e-12 || neg <= 1e-12 {
            continue;
        }
        let mut z = DVector::zeros(n);
        for i in 0..k {
            z[i] = y[i] / pos.sqrt();
        }
        for i in k..n {
            z[i] = y[i] / neg.sqrt();
        }
        let v = vecs * z;
        out.push(v.normalize());
    }
    out
}

/// Standard Gaussian vector via Box–Muller (keeps the dependency surface
/// to `rand`'s uniform source only, for cross-version determinism).
pub(crate) fn gaussian_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    })
}

/// Serialized form of a cone. Field names are part of the public schema.
#[derive(Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
enum ConeJson {
    Quadratic {
        #[serde(rename = "P")]
        p: Vec<Vec<f64>>,
    },
    Polyhedral {
        normals: Vec<Vec<f64>>,
    },
    Orthant {
        n: usize,
    },
    Sync {
        m: usize,
        #[serde(rename = "N")]
        agents: usize,
        mu: f64,
    },
}

impl Cone {
    /// Serialize to the documented JSON schema.
    pub fn to_json(&self) -> String {
        let mirror = match self {
            Cone::Quadratic { p, .. } => ConeJson::Quadratic {
                p: (0..p.nrows())
                    .map(|i| (0..p.ncols()).map(|j| p[(i, j)]).collect())
                    .collect(),
            },
            Cone::Polyhedral { normals } => ConeJson::Polyhedral {
                normals: normals.iter().map(|v| v.iter().copied().collect()).collect(),
            },
            Cone::Orthant { n } => ConeJson::Orthant { n: *n },
            Cone::Sync { m, agents, mu } => ConeJson::Sync {
                m: *m,
                agents: *agents,
                mu: *mu,
            },
        };
        serde_json::to_string(&mirror).expect("cone serialization is infallible")
    }

    /// Parse and validate a cone from the documented JSON schema.
    pub fn from_json(text: &str) -> Result<Cone, String> {
        let mirror: ConeJson = serde_json::from_str(text).map_err(|e| e.to_string())?;
        match mirror {
            ConeJson::Quadratic { p } => {
                let rows = p.len();
                if rows == 0 || p.iter().any(|r| r.len() != rows) {
                    return Err("P must be a nonempty square matrix".into());
                }
                let m = DMatrix::from_fn(rows, rows, |i, j| p[i][j]);
                Cone::quadratic(m).map_err(|e| e.to_string())
            }
            ConeJson::Polyhedral { normals } => {
                let vs = normals
                    .iter()
                    .map(|r| DVector::from_column_slice(r))
                    .collect();
                Cone::polyhedral(vs).map_err(|e| e.to_string())
            }
            ConeJson::Orthant { n } => {
                if n == 0 {
                    return Err("orthant dimension must be positive".into());
                }
                Ok(Cone::orthant(n))
            }
            ConeJson::Sync { m, agents, mu } => {
                Cone::sync(m, agents, mu).map_err(|e| e.to_string())
            }
        }
    }
}
