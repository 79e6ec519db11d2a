//! Differential positivity analysis on Lie groups.
//!
//! A smooth dynamical system on a manifold is *differentially positive* when
//! its linearization maps a field of cones into itself along every
//! trajectory. On a Lie group with a left-invariant cone field the whole
//! story can be told in frame coordinates: the cone becomes a single constant
//! cone in the Lie algebra, the linearized flow becomes a matrix curve, and
//! positivity becomes a checkable linear-algebra property with quantitative
//! margins. Strict positivity with respect to a cone of rank k forces the
//! linearization to split into a dominant k-dimensional subspace inside the
//! cone and a complementary contracting one — the rank-k generalization of
//! the Perron–Frobenius eigenvector — which is what ultimately yields global
//! convergence results for consensus-type dynamics on the torus and on
//! SO(3)^N, and for the damped pendulum on the cylinder.
//!
//! The crate is organized bottom-up:
//!
//! - [`lie`]: the groups themselves (circle, torus, SO(3), SO(3)^N, cylinder,
//!   ℝ^n), exponential/logarithm, distances, adjoints and Jacobians.
//! - [`cones`]: constant cones of arbitrary rank in frame coordinates —
//!   quadratic, polyhedral, orthant and synchronization cones — with
//!   membership grading and boundary sampling.
//! - [`positivity`]: cone-invariance certificates for maps and vector-field
//!   generators, Perron–Frobenius-type splittings, contraction ratios and
//!   consensus Lyapunov functions.
//! - [`dynamics`]: geometric integration of group flows, variational flows
//!   in frame coordinates, and finite-difference linearizations used as an
//!   independent cross-check of every analytic model.
//! - [`models`]: the concrete systems — damped pendulum on the cylinder,
//!   coupled phase oscillators on T^N, rigid-body consensus on SO(3)^N, and
//!   discrete linear consensus.
//! - [`certify`]: trajectory-level positivity certification over sampled
//!   regions, plus the domain-specific diagnostics (phase locking, splay
//!   states, synchronization distance, invariant-distribution checks).

pub mod cones;
pub mod certify;
pub mod dynamics;
pub mod lie;
pub mod models;
pub mod positivity;
