//! Lie groups and their elementary operations.
//!
//! This module provides the small zoo of matrix Lie groups the rest of the
//! crate works on: the circle S¹, the torus T^N, SO(3), finite powers
//! SO(3)^N, the cylinder S¹×ℝ and Euclidean space ℝ^N. All tangent data is
//! expressed in *left-invariant frame coordinates* (body coordinates): a
//! tangent vector δg ∈ T_g G is identified with the vector of coefficients of
//! dL_{g⁻¹} δg in a fixed basis of the Lie algebra. Under this identification
//! a left-invariant cone field becomes a single constant cone, which is what
//! makes the positivity machinery in the sibling modules linear-algebraic.
//!
//! # Conventions
//!
//! - Angles are stored wrapped to `[0, 2π)`; angle *differences* are reported
//!   in `(−π, π]`.
//! - `hat`/`vee` on so(3) use the cross-product convention `hat(ω)·x = ω × x`.
//! - The right Jacobian is defined by `exp(ŵ + δ̂) ≈ exp(ŵ)·exp(hat(J_r(w)δ))`;
//!   its inverse has the closed form `J_r⁻¹(w) = I + ŵ/2 + c₂(θ)·ŵ²` with
//!   `c₂ = 1/θ² − cot(θ/2)/(2θ)`. A finite-difference test in this module
//!   pins the sign convention, since several downstream linearizations
//!   depend on it.
//! - SO(3) points are re-orthonormalized after every composition via the
//!   symmetric polar projection, which bounds drift in long integrations.
//!
//! # Numerical domains
//!
//! The logarithm on SO(3) is branch-stable: the angle comes from
//! `atan2(‖skew‖, (tr−1)/2)` away from π and from a clamped `acos` with
//! symmetric-part axis extraction near π. Rotations whose angle is within
//! `1e−9` of π are rejected as [`LieError::CutLocus`] — the axis is
//! ill-defined there and no consumer in this crate has business evaluating
//! that close to the injectivity radius.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

/// Full turn; angles live in `[0, TAU)`.
pub const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Distance to the injectivity radius below which logs are rejected.
pub const CUT_LOCUS_TOL: f64 = 1e-9;

/// Norm below which a direction vector is reported as undefined.
const ZERO_DIRECTION_TOL: f64 = 1e-12;

/// Errors for Lie-group operations.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum LieError {
    /// Two points (or a point and coordinates) belong to different groups.
    #[error("group mismatch: {0}")]
    GroupMismatch(String),
    /// A logarithm was requested at (or within tolerance of) the cut locus.
    #[error("cut locus: {0}")]
    CutLocus(String),
    /// `vee` received a matrix that is not skew-symmetric within 1e-9.
    #[error("matrix is not skew-symmetric: asymmetry {0:.3e}")]
    NotSkew(f64),
    /// Coordinate vector length does not match the group dimension.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// The supported groups.
///
/// Every group here is a product of circles, lines and SO(3) factors, so all
/// of them carry a bi-invariant metric and their geodesics through a point
/// `g` are the one-parameter curves `g·exp(t·ω̂)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupSpec {
    /// The circle S¹ (angles mod 2π).
    Circle,
    /// The N-torus T^N.
    Torus(usize),
    /// Rotations of ℝ³.
    SO3,
    /// The product SO(3)^N (N independent rigid rotations).
    SO3Power(usize),
    /// The cylinder S¹ × ℝ (pendulum configuration space).
    CylinderS1R,
    /// Euclidean space ℝ^N viewed as an additive group.
    EuclideanRn(usize),
}

impl GroupSpec {
    /// Dimension of the Lie algebra (= length of frame-coordinate vectors).
    pub fn dim(&self) -> usize {
        match self {
            GroupSpec::Circle => 1,
            GroupSpec::Torus(n) => *n,
            GroupSpec::SO3 => 3,
            GroupSpec::SO3Power(n) => 3 * n,
            GroupSpec::CylinderS1R => 2,
            GroupSpec::EuclideanRn(n) => *n,
        }
    }

    /// The identity element.
    pub fn identity(&self) -> Point {
        match self {
            GroupSpec::Circle | GroupSpec::Torus(_) => Point {
                group: *self,
                data: PointData::Angles(DVector::zeros(self.dim())),
            },
            GroupSpec::SO3 | GroupSpec::SO3Power(_) => Point {
                group: *self,
                data: PointData::Rotations(vec![Matrix3::identity(); self.agent_count()]),
            },
            GroupSpec::CylinderS1R => Point {
                group: *self,
                data: PointData::Cylinder { theta: 0.0, v: 0.0 },
            },
            GroupSpec::EuclideanRn(n) => Point {
                group: *self,
                data: PointData::Euclidean(DVector::zeros(*n)),
            },
        }
    }

    /// Number of SO(3) factors (1 for `SO3`), or 0 for non-rotation groups.
    pub fn agent_count(&self) -> usize {
        match self {
            GroupSpec::SO3 => 1,
            GroupSpec::SO3Power(n) => *n,
            _ => 0,
        }
    }

    /// Group exponential of algebra coordinates.
    ///
    /// Rodrigues' formula on SO(3) factors, angle wrapping on circle factors,
    /// the identity map on Euclidean factors. Total: every coordinate vector
    /// of the right length maps to a point.
    pub fn exp(&self, omega: &DVector<f64>) -> Result<Point, LieError> {
        check_len(self.dim(), omega.len())?;
        let data = match self {
            GroupSpec::Circle | GroupSpec::Torus(_) => {
                PointData::Angles(omega.map(wrap_angle))
            }
            GroupSpec::SO3 | GroupSpec::SO3Power(_) => {
                let rs = (0..self.agent_count())
                    .map(|k| so3_exp(&Vector3::new(omega[3 * k], omega[3 * k + 1], omega[3 * k + 2])))
                    .collect();
                PointData::Rotations(rs)
            }
            GroupSpec::CylinderS1R => PointData::Cylinder {
                theta: wrap_angle(omega[0]),
                v: omega[1],
            },
            GroupSpec::EuclideanRn(_) => PointData::Euclidean(omega.clone()),
        };
        Ok(Point { group: *self, data })
    }

    /// Inverse of the right Jacobian of `exp` applied to a vector:
    /// `u̇ = dexpinv(u, ω)` reconstructs algebra velocities from body
    /// velocities along `t ↦ g₀·exp(û(t))`. Identity on abelian groups,
    /// closed-form `J_r⁻¹` per SO(3) factor.
    pub fn dexpinv(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match self {
            GroupSpec::SO3 | GroupSpec::SO3Power(_) => {
                let mut out = DVector::zeros(self.dim());
                for k in 0..self.agent_count() {
                    let uk = Vector3::new(u[3 * k], u[3 * k + 1], u[3 * k + 2]);
                    let vk = Vector3::new(v[3 * k], v[3 * k + 1], v[3 * k + 2]);
                    let w = so3_jr_inv(&uk) * vk;
                    for j in 0..3 {
                        out[3 * k + j] = w[j];
                    }
                }
                out
            }
            _ => v.clone(),
        }
    }

    /// Matrix of the adjoint representation of the Lie algebra,
    /// `ad_ω = [ω, ·]`, in frame coordinates. Zero on abelian groups,
    /// block-diagonal `hat(ω_k)` on SO(3) factors.
    pub fn ad_matrix(&self, omega: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        if let GroupSpec::SO3 | GroupSpec::SO3Power(_) = self {
            for k in 0..self.agent_count() {
                let wk = Vector3::new(omega[3 * k], omega[3 * k + 1], omega[3 * k + 2]);
                let h = hat(&wk);
                for r in 0..3 {
                    for c in 0..3 {
                        m[(3 * k + r, 3 * k + c)] = h[(r, c)];
                    }
                }
            }
        }
        m
    }

    /// Lie bracket of two algebra vectors in frame coordinates.
    pub fn bracket(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        match self {
            GroupSpec::SO3 | GroupSpec::SO3Power(_) => {
                let mut out = DVector::zeros(self.dim());
                for k in 0..self.agent_count() {
                    let ak = Vector3::new(a[3 * k], a[3 * k + 1], a[3 * k + 2]);
                    let bk = Vector3::new(b[3 * k], b[3 * k + 1], b[3 * k + 2]);
                    let c = ak.cross(&bk);
                    for j in 0..3 {
                        out[3 * k + j] = c[j];
                    }
                }
                out
            }
            _ => DVector::zeros(self.dim()),
        }
    }
}

/// Internal coordinate storage for a group element.
#[derive(Debug, Clone, PartialEq)]
enum PointData {
    /// Circle/torus angles in `[0, 2π)`.
    Angles(DVector<f64>),
    /// One rotation matrix per SO(3) factor.
    Rotations(Vec<Matrix3<f64>>),
    /// Cylinder coordinates (angle in `[0, 2π)`, fiber value).
    Cylinder { theta: f64, v: f64 },
    /// Euclidean coordinates.
    Euclidean(DVector<f64>),
}

/// An element of one of the supported groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    group: GroupSpec,
    data: PointData,
}

impl Point {
    /// The group this point belongs to.
    pub fn group(&self) -> GroupSpec {
        self.group
    }

    /// Build a circle/torus point from angles (wrapped into `[0, 2π)`).
    pub fn from_angles(group: GroupSpec, angles: &[f64]) -> Result<Point, LieError> {
        match group {
            GroupSpec::Circle | GroupSpec::Torus(_) => {
                check_len(group.dim(), angles.len())?;
                Ok(Point {
                    group,
                    data: PointData::Angles(DVector::from_iterator(
                        angles.len(),
                        angles.iter().map(|a| wrap_angle(*a)),
                    )),
                })
            }
            _ => Err(LieError::GroupMismatch(
                "from_angles requires a circle or torus group".into(),
            )),
        }
    }

    /// Build an SO(3)^N point from rotation matrices (re-orthonormalized).
    pub fn from_rotations(group: GroupSpec, rs: &[Matrix3<f64>]) -> Result<Point, LieError> {
        match group {
            GroupSpec::SO3 | GroupSpec::SO3Power(_) => {
                if rs.len() != group.agent_count() {
                    return Err(LieError::DimensionMismatch {
                        expected: group.agent_count(),
                        got: rs.len(),
                    });
                }
                Ok(Point {
                    group,
                    data: PointData::Rotations(rs.iter().map(orthonormalize).collect()),
                })
            }
            _ => Err(LieError::GroupMismatch(
                "from_rotations requires an SO(3) group".into(),
            )),
        }
    }

    /// Build a cylinder point from `(angle, fiber)` coordinates.
    pub fn from_cylinder(theta: f64, v: f64) -> Point {
        Point {
            group: GroupSpec::CylinderS1R,
            data: PointData::Cylinder {
                theta: wrap_angle(theta),
                v,
            },
        }
    }

    /// Build a Euclidean point.
    pub fn from_euclidean(x: &[f64]) -> Point {
        Point {
            group: GroupSpec::EuclideanRn(x.len()),
            data: PointData::Euclidean(DVector::from_column_slice(x)),
        }
    }

    /// Angles of a circle/torus point.
    pub fn angles(&self) -> Option<&DVector<f64>> {
        match &self.data {
            PointData::Angles(a) => Some(a),
            _ => None,
        }
    }

    /// Rotation matrices of an SO(3)^N point.
    pub fn rotations(&self) -> Option<&[Matrix3<f64>]> {
        match &self.data {
            PointData::Rotations(r) => Some(r),
            _ => None,
        }
    }

    /// Cylinder coordinates `(angle, fiber)`.
    pub fn cylinder(&self) -> Option<(f64, f64)> {
        match self.data {
            PointData::Cylinder { theta, v } => Some((theta, v)),
            _ => None,
        }
    }

    /// Euclidean coordinates.
    pub fn euclidean(&self) -> Option<&DVector<f64>> {
        match &self.data {
            PointData::Euclidean(x) => Some(x),
            _ => None,
        }
    }

    /// Flat coordinate row for CSV output: angles for tori, 9 row-major
    /// entries per SO(3) factor, `(theta, v)` for the cylinder, raw
    /// coordinates for ℝ^N.
    pub fn flat_coords(&self) -> Vec<f64> {
        match &self.data {
            PointData::Angles(a) => a.iter().copied().collect(),
            PointData::Rotations(rs) => {
                let mut out = Vec::with_capacity(9 * rs.len());
                for r in rs {
                    for i in 0..3 {
                        for j in 0..3 {
                            out.push(r[(i, j)]);
                        }
                    }
                }
                out
            }
            PointData::Cylinder { theta, v } => vec![*theta, *v],
            PointData::Euclidean(x) => x.iter().copied().collect(),
        }
    }

    /// Group composition `self · other`. SO(3) factors are
    /// re-orthonormalized after the product.
    pub fn compose(&self, other: &Point) -> Result<Point, LieError> {
        if self.group != other.group {
            return Err(LieError::GroupMismatch(format!(
                "{:?} vs {:?}",
                self.group, other.group
            )));
        }
        let data = match (&self.data, &other.data) {
            (PointData::Angles(a), PointData::Angles(b)) => {
                PointData::Angles(DVector::from_iterator(
                    a.len(),
                    a.iter().zip(b.iter()).map(|(x, y)| wrap_angle(x + y)),
                ))
            }
            (PointData::Rotations(a), PointData::Rotations(b)) => PointData::Rotations(
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| orthonormalize(&(x * y)))
                    .collect(),
            ),
            (
                PointData::Cylinder { theta: t1, v: v1 },
                PointData::Cylinder { theta: t2, v: v2 },
            ) => PointData::Cylinder {
                theta: wrap_angle(t1 + t2),
                v: v1 + v2,
            },
            (PointData::Euclidean(a), PointData::Euclidean(b)) => PointData::Euclidean(a + b),
            _ => unreachable!("group equality guarantees matching representations"),
        };
        Ok(Point {
            group: self.group,
            data,
        })
    }

    /// Group inverse.
    pub fn inverse(&self) -> Point {
        let data = match &self.data {
            PointData::Angles(a) => PointData::Angles(a.map(|x| wrap_angle(-x))),
            PointData::Rotations(rs) => {
                PointData::Rotations(rs.iter().map(|r| r.transpose()).collect())
            }
            PointData::Cylinder { theta, v } => PointData::Cylinder {
                theta: wrap_angle(-theta),
                v: -v,
            },
            PointData::Euclidean(x) => PointData::Euclidean(-x),
        };
        Point {
            group: self.group,
            data,
        }
    }

    /// Group logarithm relative to the identity, in algebra coordinates.
    ///
    /// Fails with [`LieError::CutLocus`] when any factor sits within
    /// `1e−9` of its injectivity radius (π for circles and SO(3) factors).
    pub fn log(&self) -> Result<DVector<f64>, LieError> {
        match &self.data {
            PointData::Angles(a) => {
                let mut out = DVector::zeros(a.len());
                for (i, x) in a.iter().enumerate() {
                    let d = wrap_diff(*x);
                    if d.abs() >= std::f64::consts::PI - CUT_LOCUS_TOL {
                        return Err(LieError::CutLocus(format!(
                            "angle component {i} at {d:.12} is within 1e-9 of \u{3c0}"
                        )));
                    }
                    out[i] = d;
                }
                Ok(out)
            }
            PointData::Rotations(rs) => {
                let mut out = DVector::zeros(3 * rs.len());
                for (k, r) in rs.iter().enumerate() {
                    let w = so3_log(r)?;
                    for j in 0..3 {
                        out[3 * k + j] = w[j];
                    }
                }
                Ok(out)
            }
            PointData::Cylinder { theta, v } => {
                let d = wrap_diff(*theta);
                if d.abs() >= std::f64::consts::PI - CUT_LOCUS_TOL {
                    return Err(LieError::CutLocus(format!(
                        "cylinder angle at {d:.12} is within 1e-9 of \u{3c0}"
                    )));
                }
                Ok(DVector::from_column_slice(&[d, *v]))
            }
            PointData::Euclidean(x) => Ok(x.clone()),
        }
    }

    /// Bi-invariant Riemannian distance and unit direction from `self`
    /// toward `gi`, both expressed at `self` in frame coordinates.
    ///
    /// Returns `(theta, Some(u))` with `‖u‖ = 1`, or `(0, None)` when the
    /// points coincide (direction undefined).
    pub fn distance_and_direction(
        &self,
        gi: &Point,
    ) -> Result<(f64, Option<DVector<f64>>), LieError> {
        let rel = self.inverse().compose(gi)?;
        let w = rel.log()?;
        let theta = w.norm();
        if theta <= ZERO_DIRECTION_TOL {
            Ok((0.0, None))
        } else {
            Ok((theta, Some(w / theta)))
        }
    }

    /// Adjoint action `Ad(g)·ω` in frame coordinates: the identity on
    /// abelian groups, `R_k ω_k` per SO(3) factor.
    pub fn adjoint(&self, omega: &DVector<f64>) -> Result<DVector<f64>, LieError> {
        check_len(self.group.dim(), omega.len())?;
        match &self.data {
            PointData::Rotations(rs) => {
                let mut out = DVector::zeros(3 * rs.len());
                for (k, r) in rs.iter().enumerate() {
                    let wk = Vector3::new(omega[3 * k], omega[3 * k + 1], omega[3 * k + 2]);
                    let v = r * wk;
                    for j in 0..3 {
                        out[3 * k + j] = v[j];
                    }
                }
                Ok(out)
            }
            _ => Ok(omega.clone()),
        }
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), LieError> {
    if expected == got {
        Ok(())
    } else {
        Err(LieError::DimensionMismatch { expected, got })
    }
}

/// Wrap an angle into `[0, 2π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x % TAU;
    if y < 0.0 {
        y += TAU;
    }
    // `-1e-17 % TAU` rounds to TAU after the correction; fold it back.
    if y >= TAU {
        y = 0.0;
    }
    y
}

/// Wrap an angle difference into `(−π, π]`.
pub fn wrap_diff(x: f64) -> f64 {
    let y = wrap_angle(x);
    if y > std::f64::consts::PI {
        y - TAU
    } else {
        y
    }
}

/// Skew-symmetric matrix of ω: `hat(ω)·x = ω × x`.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

/// Inverse of [`hat`]. Fails with [`LieError::NotSkew`] when the matrix has
/// asymmetry `max|Ω + Ωᵀ|` above `1e−9`.
pub fn vee(m: &Matrix3<f64>) -> Result<Vector3<f64>, LieError> {
    let sym = m + m.transpose();
    let asym = sym.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if asym > 1e-9 {
        return Err(LieError::NotSkew(asym));
    }
    Ok(Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]))
}

/// Rodrigues' formula: `exp(hat(w))` with series fallbacks near zero.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let (a, b) = if theta2 < 1e-16 {
        // sin θ/θ and (1−cos θ)/θ² expanded to machine precision.
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let h = hat(w);
    Matrix3::identity() + h * a + h * h * b
}

/// Branch-stable logarithm on SO(3).
///
/// The angle comes from `atan2` away from π; within `1e−4` of π the axis is
/// recovered from the symmetric part (where the skew part cancels
/// catastrophically) and within `1e−9` of π the map is rejected as
/// [`LieError::CutLocus`].
pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>, LieError> {
    let pi = std::f64::consts::PI;
    let skew = Vector3::new(
        (r[(2, 1)] - r[(1, 2)]) / 2.0,
        (r[(0, 2)] - r[(2, 0)]) / 2.0,
        (r[(1, 0)] - r[(0, 1)]) / 2.0,
    );
    let cos_theta = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin_theta = skew.norm();
    let theta = sin_theta.atan2(cos_theta);

    if theta >= pi - CUT_LOCUS_TOL {
        return Err(LieError::CutLocus(format!(
            "rotation angle {theta:.12} is within 1e-9 of \u{3c0}"
        )));
    }
    if theta < pi - 1e-4 {
        // w = θ/(2 sin θ) · vee(R − Rᵀ); series for the removable singularity.
        let factor = if theta < 1e-4 {
            let t2 = theta * theta;
            1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0
        } else {
            theta / sin_theta
        };
        Ok(skew * factor)
    } else {
        // Near π: (R + Rᵀ)/2 = I + (1 − cos θ)·(uuᵀ − I); extract the axis
        // from the dominant column of uuᵀ, fix the sign from the skew part.
        let s = (r + r.transpose()) / 2.0;
        let uut = (s - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
        let mut best = 0;
        for j in 1..3 {
            if uut[(j, j)] > uut[(best, best)] {
                best = j;
            }
        }
        let col = uut.column(best);
        let mut u = Vector3::new(col[0], col[1], col[2]) / uut[(best, best)].sqrt();
        if u.dot(&skew) < 0.0 {
            u = -u;
        }
        Ok(u * theta)
    }
}

/// Closed-form inverse of the right Jacobian of the SO(3) exponential:
/// `J_r⁻¹(w) = I + ŵ/2 + c₂(θ)·ŵ²`, `c₂ = 1/θ² − cot(θ/2)/(2θ)`.
pub fn so3_jr_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let c2 = if theta2 < 1e-12 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        1.0 / theta2 - cot_half(theta) / (2.0 * theta)
    };
    let h = hat(w);
    Matrix3::identity() + h / 2.0 + h * h * c2
}

/// `cot(θ/2)` evaluated stably on `(0, 2π)`.
pub fn cot_half(theta: f64) -> f64 {
    let half = theta / 2.0;
    half.cos() / half.sin()
}

/// Symmetric polar projection of a near-rotation matrix onto SO(3).
fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd of 3x3 always succeeds");
    let vt = svd.v_t.expect("svd of 3x3 always succeeds");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        // Flip the weakest singular direction; only reachable for inputs far
        // from SO(3), which composition never produces.
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}
