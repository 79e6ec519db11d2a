//! Positivity of linear maps and generators with respect to cones.
//!
//! A linear map T is *positive* with respect to a cone C when T(C) ⊆ C and
//! *strictly positive* when T(C \ {0}) ⊂ int C. For flows one checks the
//! generator instead: A is (strictly) positive when its flux through every
//! boundary direction of the cone points (strictly) inward — for a
//! polyhedral face with inward normal nᵢ the flux is ⟨nᵢ, Av⟩ on the active
//! set, for a quadratic cone {vᵀPv ≥ 0} it is d/dt(vᵀPv) = vᵀ(PA + AᵀP)v on
//! the boundary vᵀPv = 0.
//!
//! Three certification modes are provided and kept deliberately independent
//! so they can cross-check each other:
//!
//! - [`CertMode::ExactSProcedure`] (quadratic-type cones): positivity of a
//!   map is equivalent to ∃λ ≥ 0 with TᵀPT − λP ⪰ 0; the optimal margin
//!   `max_λ λ_min(TᵀPT − λP)` is concave in λ and found by golden-section
//!   search. Generators use the same idea with M = PA + AᵀP and λ free in
//!   sign; for 2×2 problems — where that relaxation can be lossy — the
//!   finitely many boundary lines are enumerated exactly instead.
//! - [`CertMode::SignPattern`] (orthant): positivity of a map is entrywise
//!   nonnegativity; strictness is primitivity (irreducible with a positive
//!   diagonal entry, tested through positivity of (I + T)^{n−1}).
//!   Generators are Metzler matrices; strictness is positivity of every
//!   off-diagonal entry.
//! - [`CertMode::Sampled`]: propagate deterministic boundary rays and grade
//!   the images (maps) or the boundary flux (generators). Works for every
//!   cone variant and is the fallback where no exact test exists.
//!
//! Strict positivity with respect to a cone of rank k forces a spectral
//! splitting: [`pf_split`] computes the dominant k-dimensional invariant
//! subspace W₁ (inside the cone) and the complementary invariant subspace
//! W₂ (meeting the cone only at 0), together with the spectral gap
//! min|σ₁|/max|σ₂| > 1 — the rank-k generalization of the Perron–Frobenius
//! eigenvector. [`contraction_ratio`] measures a direction's distance from
//! W₁ in the oblique splitting, and the consensus Lyapunov functionals
//! (max − min and the Birkhoff-type log ratio) quantify contraction for the
//! classical consensus cones.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cones::{gaussian_vector, Cone};

/// Dense linear map in frame coordinates.
pub type LinearMap = DMatrix<f64>;

/// Tolerance separating "strict" from "marginal" certificates.
const STRICT_TOL: f64 = 1e-12;

/// Errors for positivity analysis.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum PositivityError {
    /// Requested certification mode has no test for this cone variant.
    #[error("unsupported combination: {0}")]
    UnsupportedCombination(String),
    /// Map/cone dimensions disagree.
    #[error("dimension mismatch: map is {map}x{map}, cone lives in R^{cone}")]
    DimensionMismatch { map: usize, cone: usize },
    /// Matrix contains NaN or infinite entries.
    #[error("matrix has non-finite entries")]
    NonFinite,
    /// The k-th and (k+1)-th eigenvalue moduli coincide within tolerance.
    #[error("spectral gap degenerate: |lambda_{k}| = {mod_k:.6e}, |lambda_{k1}| = {mod_k1:.6e}", k1 = k + 1)]
    GapDegenerate { k: usize, mod_k: f64, mod_k1: f64 },
    /// The computed subspaces violate the cone inclusion/exclusion checks.
    #[error("cone violation: {0}")]
    ConeViolation(String),
    /// Subspace iteration failed to reach the required residual.
    #[error("subspace iteration did not converge: residual {0:.3e}")]
    ConvergenceFailure(f64),
    /// Birkhoff functional requires strictly positive coordinates.
    #[error("non-positive coordinate {value} at index {index}")]
    NonPositive { index: usize, value: f64 },
    /// Direction has no component along W1.
    #[error("degenerate direction: no component along the dominant subspace")]
    DegenerateDirection,
}

/// Certification strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CertMode {
    /// Exact test for quadratic-type cones via the S-procedure.
    ExactSProcedure,
    /// Exact entrywise/graph test for the orthant.
    SignPattern,
    /// Deterministic boundary-ray propagation (any cone).
    Sampled { n_rays: usize, seed: u64 },
}

impl CertMode {
    /// The natural exact mode for a cone, falling back to sampling for
    /// general polyhedral cones.
    pub fn auto_for(cone: &Cone) -> CertMode {
        match cone {
            Cone::Quadratic { .. } | Cone::Sync { .. } => CertMode::ExactSProcedure,
            Cone::Orthant { .. } => CertMode::SignPattern,
            Cone::Polyhedral { .. } => CertMode::Sampled {
                n_rays: 1000,
                seed: 0,
            },
        }
    }
}

/// Outcome of a positivity test.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    /// The cone is mapped into itself (flux nonnegative for generators).
    pub positive: bool,
    /// The cone interior absorbs the boundary (strict flux / primitivity).
    pub strict: bool,
    /// Scale-free margin; positive exactly when strict.
    pub margin: f64,
    /// The mode that produced this certificate.
    pub mode: CertMode,
    /// A cone vector witnessing the failure, when not positive.
    pub witness: Option<DVector<f64>>,
}

impl Certificate {
    fn new(
        positive: bool,
        strict: bool,
        margin: f64,
        mode: CertMode,
        witness: Option<DVector<f64>>,
    ) -> Certificate {
        Certificate {
            positive,
            strict,
            margin,
            mode,
            witness: if positive { None } else { witness },
        }
    }

    /// Serialize to the documented JSON schema
    /// `{"positive":, "strict":, "margin":, "mode":, "witness":}`.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Mirror<'a> {
            positive: bool,
            strict: bool,
            margin: f64,
            mode: &'a CertMode,
            witness: Option<Vec<f64>>,
        }
        serde_json::to_string(&Mirror {
            positive: self.positive,
            strict: self.strict,
            margin: self.margin,
            mode: &self.mode,
            witness: self.witness.as_ref().map(|w| w.iter().copied().collect()),
        })
        .expect("certificate serialization is infallible")
    }
}

/// Rank-k Perron–Frobenius splitting of a strictly positive map.
#[derive(Debug, Clone, PartialEq)]
pub struct PFSplit {
    /// Orthonormal basis (n×k) of the dominant invariant subspace.
    pub w1: DMatrix<f64>,
    /// Orthonormal basis (n×(n−k)) of the complementary invariant subspace.
    pub w2: DMatrix<f64>,
    /// Spectral gap min|σ₁| / max|σ₂| > 1.
    pub gap: f64,
}

impl PFSplit {
    /// Serialize to `{"W1": [[...]], "W2": [[...]], "gap": ...}` (row-major).
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Mirror {
            #[serde(rename = "W1")]
            w1: Vec<Vec<f64>>,
            #[serde(rename = "W2")]
            w2: Vec<Vec<f64>>,
            gap: f64,
        }
        let rows = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect()
        };
        serde_json::to_string(&Mirror {
            w1: rows(&self.w1),
            w2: rows(&self.w2),
            gap: self.gap,
        })
        .expect("split serialization is infallible")
    }
}

fn check_map(t: &LinearMap, cone: &Cone) -> Result<(), PositivityError> {
    if t.iter().any(|x| !x.is_finite()) {
        return Err(PositivityError::NonFinite);
    }
    if !t.is_square() || t.nrows() != cone.dim() {
        return Err(PositivityError::DimensionMismatch {
            map: t.nrows(),
            cone: cone.dim(),
        });
    }
    Ok(())
}

/// Decide whether `T(C) ⊆ C`, with strictness and a scale-free margin.
pub fn is_positive_map(
    t: &LinearMap,
    cone: &Cone,
    mode: CertMode,
) -> Result<Certificate, PositivityError> {
    check_map(t, cone)?;
    match mode {
        CertMode::ExactSProcedure => match cone {
            Cone::Quadratic { .. } | Cone::Sync { .. } => exact_map_quadratic(t, cone, mode),
            _ => Err(PositivityError::UnsupportedCombination(
                "exact S-procedure requires a quadratic-type cone".into(),
            )),
        },
        CertMode::SignPattern => match cone {
            Cone::Orthant { .. } => Ok(sign_pattern_map(t, mode)),
            _ => Err(PositivityError::UnsupportedCombination(
                "sign-pattern test requires the orthant".into(),
            )),
        },
        CertMode::Sampled { n_rays, seed } => Ok(sampled_map(t, cone, n_rays, seed, mode)),
    }
}

/// Decide whether the flow of `v̇ = Av` keeps the cone invariant, by the
/// boundary-flux criterion, with strictness and a scale-free margin.
pub fn is_positive_generator(
    a: &LinearMap,
    cone: &Cone,
    mode: CertMode,
) -> Result<Certificate, PositivityError> {
    check_map(a, cone)?;
    match mode {
        CertMode::ExactSProcedure => match cone {
            Cone::Quadratic { .. } | Cone::Sync { .. } => exact_generator_quadratic(a, cone, mode),
            Cone::Orthant { .. } => Ok(metzler_generator(a, mode)),
            Cone::Polyhedral { .. } if cone.dim() == 2 => exact_generator_planar(a, cone, mode),
            _ => Err(PositivityError::UnsupportedCombination(
                "no exact generator test for general polyhedral cones (use Sampled)".into(),
            )),
        },
        CertMode::SignPattern => match cone {
            Cone::Orthant { .. } => Ok(metzler_generator(a, mode)),
            _ => Err(PositivityError::UnsupportedCombination(
                "sign-pattern test requires the orthant".into(),
            )),
        },
        CertMode::Sampled { n_rays, seed } => Ok(sampled_generator(a, cone, n_rays, seed, mode)),
    }
}

/// Boundary flux of the generator `A` at a boundary direction `v`,
/// un-normalized: the worst active-constraint rate ⟨nᵢ, Av⟩ for
/// polyhedral-type cones, the quadratic rate vᵀ(PA + AᵀP)v for
/// quadratic-type cones. Positive flux points inward.
pub fn generator_flux(a: &LinearMap, cone: &Cone, v: &DVector<f64>) -> f64 {
    match cone {
        Cone::Quadratic { .. } | Cone::Sync { .. } => {
            let p = cone.quadratic_form().expect("quadratic-type cone");
            let m = &p * a + a.transpose() * &p;
            v.dot(&(&m * v))
        }
        _ => {
            let normals = cone.half_space_normals().expect("polyhedral-type cone");
            // Work on the representative in K (the cone is graded as K∪−K).
            let worst = |w: &DVector<f64>| {
                normals
                    .iter()
                    .map(|nv| nv.dot(w))
                    .fold(f64::INFINITY, f64::min)
            };
            let v = if worst(v) >= worst(&(-v)) { v.clone() } else { -v };
            let vnorm = v.norm();
            let mut flux = f64::INFINITY;
            for nv in &normals {
                let active = nv.dot(&v).abs() <= 1e-9 * nv.norm() * vnorm;
                if active {
                    flux = flux.min(nv.dot(&(a * &v)));
                }
            }
            if flux == f64::INFINITY {
                // No active constraint: interior direction, vacuous flux.
                f64::INFINITY
            } else {
                flux
            }
        }
    }
}

/// Maximize a concave scalar function on [lo, hi] by golden-section search.
fn golden_max(mut lo: f64, mut hi: f64, iters: usize, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let x = (lo + hi) / 2.0;
    (x, f(x))
}

fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) / 2.0;
    sym.symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, l| acc.min(*l))
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values[0]
}

fn min_abs_eig_sym(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, l| acc.min(l.abs()))
}

/// Exact map test on {vᵀPv ≥ 0}: maximize λ_min(TᵀPT − λP) over λ ≥ 0.
fn exact_map_quadratic(
    t: &LinearMap,
    cone: &Cone,
    mode: CertMode,
) -> Result<Certificate, PositivityError> {
    let p = cone.quadratic_form().expect("quadratic-type cone");
    let tpt = t.transpose() * &p * t;
    let lam_max = 10.0 * spectral_norm(t).powi(2) / min_abs_eig_sym(&p) + 1.0;
    let (_, mut h) = golden_max(0.0, lam_max, 200, |lam| min_sym_eig(&(&tpt - &p * lam)));
    // The boundary of the search interval is a valid candidate too.
    h = h.max(min_sym_eig(&tpt));
    let scale = spectral_norm(&tpt).max(1e-300);
    let tol = 1e-9 * scale;
    let mut positive = h >= -tol;
    let mut strict = h > tol;
    let mut margin = h;
    let mut witness = None;

    // Convex branch of the m=1 synchronization cone: the quadratic test
    // treats K ∪ −K; additionally require T not to swap the branches.
    if let Cone::Sync { m: 1, agents, .. } = cone {
        let one = &Cone::sync_generators(1, *agents)[0];
        let swap = one.dot(&(t * one));
        if positive && swap < 0.0 {
            positive = false;
            strict = false;
            margin = margin.min(swap / (one.norm() * (t * one).norm()).max(1e-300));
            witness = Some(one.clone() / one.norm());
        }
    }

    if !positive && witness.is_none() {
        witness = Some(search_map_witness(t, cone, 2000, 0x5EED));
    }
    if !positive {
        margin = margin.min(-tol);
    }
    Ok(Certificate::new(positive, strict, margin, mode, witness))
}

/// Find an (approximately) worst cone vector whose image leaves the cone.
fn search_map_witness(t: &LinearMap, cone: &Cone, n_rays: usize, seed: u64) -> DVector<f64> {
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut consider = |v: DVector<f64>| {
        let img = t * &v;
        let m = cone.margin(&img).unwrap_or(f64::INFINITY);
        if best.as_ref().map_or(true, |(b, _)| m < *b) {
            best = Some((m, v));
        }
    };
    for v in cone.boundary_sample(n_rays / 2, seed) {
        consider(v);
    }
    // Interior samples: rejection-sample the cone.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let n = cone.dim();
    let mut found = 0;
    let mut tries = 0;
    while found < n_rays / 2 && tries < 50 * n_rays {
        tries += 1;
        let v = gaussian_vector(n, &mut rng);
        if cone.margin(&v).map_or(false, |m| m >= 0.0) {
            consider(v.normalize());
            found += 1;
        }
    }
    best.expect("at least one ray was considered").1
}

/// Entrywise/graph test on the orthant: positive ⟺ T ≥ 0; strict ⟺
/// primitive (irreducible with a positive diagonal entry).
fn sign_pattern_map(t: &LinearMap, mode: CertMode) -> Certificate {
    let n = t.nrows();
    let tol = 1e-12;
    let mut min_entry = f64::INFINITY;
    let mut min_pos = (0, 0);
    for i in 0..n {
        for j in 0..n {
            if t[(i, j)] < min_entry {
                min_entry = t[(i, j)];
                min_pos = (i, j);
            }
        }
    }
    if min_entry < -tol {
        // The basis vector of the offending column leaves the orthant.
        let mut w = DVector::zeros(n);
        w[min_pos.1] = 1.0;
        return Certificate::new(false, false, min_entry, mode, Some(w));
    }
    // Irreducibility: (I + T)^{n−1} strictly positive entrywise.
    let mut reach = DMatrix::identity(n, n) + t;
    let mut acc = DMatrix::identity(n, n);
    let mut k = n.saturating_sub(1);
    while k > 0 {
        if k % 2 == 1 {
            acc = &acc * &reach;
        }
        reach = &reach * &reach;
        k /= 2;
        // Clamp to avoid overflow for large powers; only the sign matters.
        acc.iter_mut().for_each(|x| *x = x.min(1e100));
        reach.iter_mut().for_each(|x| *x = x.min(1e100));
    }
    let reach_min = acc.iter().fold(f64::INFINITY, |m, x| m.min(*x));
    let diag_max = (0..n).map(|i| t[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    let margin = reach_min.min(diag_max).max(0.0);
    let strict = margin > tol;
    Certificate::new(true, strict, margin, mode, None)
}

/// Metzler test on the orthant: positive ⟺ off-diagonal ≥ 0; strict ⟺
/// every off-diagonal entry strictly positive.
fn metzler_generator(a: &LinearMap, mode: CertMode) -> Certificate {
    let n = a.nrows();
    let tol = 1e-12;
    let mut min_off = f64::INFINITY;
    let mut min_pos = (0, 1);
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)] < min_off {
                min_off = a[(i, j)];
                min_pos = (i, j);
            }
        }
    }
    if n == 1 {
        // No boundary directions beyond 0: trivially positive, not strict.
        return Certificate::new(true, false, 0.0, mode, None);
    }
    if min_off < -tol {
        let mut w = DVector::zeros(n);
        w[min_pos.1] = 1.0;
        return Certificate::new(false, false, min_off, mode, Some(w));
    }
    let margin = min_off.max(0.0);
    Certificate::new(true, margin > tol, margin, mode, None)
}

/// Exact generator test on {vᵀPv ≥ 0}: for n ≥ 3 maximize
/// λ_min(PA + AᵀP − λP) over free λ; for n = 2 enumerate the two boundary
/// lines of the quadric exactly.
fn exact_generator_quadratic(
    a: &LinearMap,
    cone: &Cone,
    mode: CertMode,
) -> Result<Certificate, PositivityError> {
    let p = cone.quadratic_form().expect("quadratic-type cone");
    let m = &p * a + a.transpose() * &p;
    let n = p.nrows();
    let scale = spectral_norm(&m).max(min_abs_eig_sym(&p));
    let tol = 1e-9 * scale.max(1e-300);

    if n == 2 {
        // Boundary of a planar quadratic cone: two lines through the origin.
        let (h, w) = planar_quadric_worst_flux(&m, &p);
        let positive = h >= -tol;
        let strict = h > tol;
        return Ok(Certificate::new(positive, strict, h, mode, Some(w)));
    }

    let lam_span = 10.0 * spectral_norm(&m) / min_abs_eig_sym(&p) + 1.0;
    let (_, mut h) = golden_max(-lam_span, lam_span, 200, |lam| {
        min_sym_eig(&(&m - &p * lam))
    });
    h = h.max(min_sym_eig(&m));
    let positive = h >= -tol;
    let strict = h > tol;
    let witness = if positive {
        None
    } else {
        Some(search_generator_witness(a, cone, 2000, 0x5EED))
    };
    Ok(Certificate::new(positive, strict, h, mode, witness))
}

/// Worst normalized flux over the two lines {vᵀPv = 0} in the plane,
/// with the achieving unit vector.
fn planar_quadric_worst_flux(m: &DMatrix<f64>, p: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let se = p.clone().symmetric_eigen();
    let (ip, im) = if se.eigenvalues[0] > 0.0 { (0, 1) } else { (1, 0) };
    let (lp, lm) = (se.eigenvalues[ip], se.eigenvalues[im]);
    let wp = se.eigenvectors.column(ip).into_owned();
    let wm = se.eigenvectors.column(im).into_owned();
    let mut worst = (f64::INFINITY, DVector::zeros(2));
    for sign in [1.0, -1.0] {
        let v = (&wp * (-lm).sqrt() + &wm * sign * lp.sqrt()).normalize();
        let flux = v.dot(&(m * &v));
        if flux < worst.0 {
            worst = (flux, v);
        }
    }
    worst
}

/// Exact generator test for planar polyhedral cones: the boundary of K is a
/// pair of edge rays, each the 90°-rotation of an active normal oriented to
/// satisfy the remaining constraints.
fn exact_generator_planar(
    a: &LinearMap,
    cone: &Cone,
    mode: CertMode,
) -> Result<Certificate, PositivityError> {
    let normals = cone.half_space_normals().expect("polyhedral-type cone");
    let mut worst = (f64::INFINITY, None);
    for nf in &normals {
        for sign in [1.0, -1.0] {
            let ray = DVector::from_column_slice(&[-sign * nf[1], sign * nf[0]]).normalize();
            let feasible = normals.iter().all(|nv| nv.dot(&ray) >= -1e-12);
            if !feasible {
                continue;
            }
            // Flux of every active constraint at this edge.
            for nv in &normals {
                if nv.dot(&ray).abs() <= 1e-9 * nv.norm() {
                    let flux = nv.dot(&(a * &ray));
                    if flux < worst.0 {
                        worst = (flux, Some(ray.clone()));
                    }
                }
            }
        }
    }
    let (h, witness) = worst;
    if h == f64::INFINITY {
        // Normals span nothing active (degenerate); treat as vacuously positive.
        return Ok(Certificate::new(true, false, 0.0, mode, None));
    }
    let tol = 1e-9 * spectral_norm(a).max(1e-300);
    let positive = h >= -tol;
    let strict = h > tol;
    Ok(Certificate::new(positive, strict, h, mode, witness))
}

fn search_generator_witness(a: &LinearMap, cone: &Cone, n_rays: usize, seed: u64) -> DVector<f64> {
    let mut best: Option<(f64, DVector<f64>)> = None;
    for v in cone.boundary_sample(n_rays, seed) {
        let flux = generator_flux(a, cone, &v);
        if best.as_ref().map_or(true, |(b, _)| flux < *b) {
            best = Some((flux, v));
        }
    }
    best.expect("sampler returns requested rays").1
}

/// Sampled map test: grade the images of deterministic boundary rays plus
/// an equal number of in-cone rays.
///
/// The interior rays matter: for a nonconvex cone of rank ≥ 2 a map can
/// send the entire boundary strictly inside while an open set of interior
/// directions still escapes (the image "band" wraps differently), so a
/// boundary-only sample would certify a false positive.
fn sampled_map(t: &LinearMap, cone: &Cone, n_rays: usize, seed: u64, mode: CertMode) -> Certificate {
    let n_rays = n_rays.max(1);
    let mut min_margin = f64::INFINITY;
    let mut witness = None;
    let consider = |v: DVector<f64>, min_margin: &mut f64, witness: &mut Option<DVector<f64>>| {
        let img = t * &v;
        let m = cone.margin(&img).expect("dimensions checked");
        if m < *min_margin {
            *min_margin = m;
            *witness = Some(v);
        }
    };
    for v in cone.boundary_sample(n_rays, seed) {
        consider(v, &mut min_margin, &mut witness);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1A7E_9001);
    let n = cone.dim();
    let mut kept = 0;
    let mut tries = 0;
    while kept < n_rays && tries < 100 * n_rays {
        tries += 1;
        let v = gaussian_vector(n, &mut rng);
        if cone.margin(&v).map_or(false, |m| m >= 0.0) {
            consider(v.normalize(), &mut min_margin, &mut witness);
            kept += 1;
        }
    }
    let positive = min_margin >= -1e-9;
    let strict = min_margin > STRICT_TOL;
    Certificate::new(positive, strict, min_margin, mode, witness)
}

/// Sampled generator test: normalized inward flux on boundary rays.
fn sampled_generator(
    a: &LinearMap,
    cone: &Cone,
    n_rays: usize,
    seed: u64,
    mode: CertMode,
) -> Certificate {
    let quadratic = matches!(cone, Cone::Quadratic { .. } | Cone::Sync { .. });
    let mut min_flux = f64::INFINITY;
    let mut witness = None;
    for v in cone.boundary_sample(n_rays.max(1), seed) {
        // Samples are unit vectors, so the ‖v‖²- (or ‖v‖-) normalization of
        // the flux margin is the identity here.
        let flux = generator_flux(a, cone, &v);
        if flux < min_flux {
            min_flux = flux;
            witness = Some(v);
        }
    }
    if min_flux == f64::INFINITY {
        return Certificate::new(true, false, 0.0, mode, None);
    }
    let scale = spectral_norm(a).max(1e-300);
    let tol = if quadratic { 1e-9 * scale } else { 1e-12 };
    let positive = min_flux >= -tol;
    let strict = min_flux > tol;
    Certificate::new(positive, strict, min_flux, mode, witness)
}

/// Compute the rank-k Perron–Frobenius splitting of a strictly positive map.
///
/// Eigenvalue moduli are taken from the dense (complex) spectrum; the
/// dominant invariant subspace is refined by orthogonal subspace iteration
/// on T (for W₁) and on Tᵀ (whose dominant subspace's orthogonal complement
/// is W₂), stopping at residual ‖T·W − W·(WᵀTW)‖ ≤ 1e−10·‖T‖. The result is
/// validated against the cone: sampled directions of W₁ must grade interior,
/// and W₂ must avoid the cone (for quadratic-type cones: WᵀPW ≺ 0).
pub fn pf_split(t: &LinearMap, cone: &Cone) -> Result<PFSplit, PositivityError> {
    check_map(t, cone)?;
    let n = t.nrows();
    let k = cone.rank();
    if k == 0 || k >= n {
        return Err(PositivityError::ConeViolation(format!(
            "cone rank {k} admits no splitting of R^{n}"
        )));
    }
    // Sorted eigenvalue moduli for the gap and the degeneracy check.
    let moduli = {
        let mut m: Vec<f64> = t.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        m.sort_by(|a, b| b.partial_cmp(a).unwrap());
        m
    };
    let (mod_k, mod_k1) = (moduli[k - 1], moduli[k]);
    if mod_k - mod_k1 <= 1e-9 * mod_k {
        return Err(PositivityError::GapDegenerate {
            k,
            mod_k,
            mod_k1,
        });
    }
    let gap = mod_k / mod_k1;

    let w1 = dominant_subspace(t, k)?;
    let u1 = dominant_subspace(&t.transpose(), k)?;
    let w2 = orthogonal_complement(&u1);
    // W2 is T-invariant because it is the annihilator of the dominant left
    // subspace; verify the residual all the same.
    let res2 = invariance_residual(t, &w2);
    let scale = t.norm().max(1e-300);
    if res2 > 1e-8 * scale {
        return Err(PositivityError::ConvergenceFailure(res2 / scale));
    }

    // Cone checks: sampled interior for W1, exclusion for W2.
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1FF);
    for _ in 0..100 {
        let c = gaussian_vector(k, &mut rng);
        let v = &w1 * c;
        if v.norm() < 1e-9 {
            continue;
        }
        let grade = cone
            .contains(&v, 0.0)
            .map_err(|e| PositivityError::ConeViolation(e.to_string()))?;
        if !grade.is_interior() {
            return Err(PositivityError::ConeViolation(format!(
                "a dominant-subspace direction grades {grade:?}"
            )));
        }
    }
    if let Some(p) = cone.quadratic_form() {
        let restricted = w2.transpose() * &p * &w2;
        let lmax = -min_sym_eig(&(-restricted));
        if lmax >= -1e-10 * spectral_norm(&p) {
            return Err(PositivityError::ConeViolation(format!(
                "P restricted to the complementary subspace is not negative definite (lambda_max = {lmax:.3e})"
            )));
        }
    } else {
        for _ in 0..100 {
            let c = gaussian_vector(n - k, &mut rng);
            let v = &w2 * c;
            if v.norm() < 1e-9 {
                continue;
            }
            let grade = cone
                .contains(&v, 0.0)
                .map_err(|e| PositivityError::ConeViolation(e.to_string()))?;
            if grade.is_inside() && v.norm() > 1e-9 {
                return Err(PositivityError::ConeViolation(
                    "complementary subspace meets the cone away from 0".into(),
                ));
            }
        }
    }
    Ok(PFSplit { w1, w2, gap })
}

/// ‖T·W − W·(WᵀTW)‖ for orthonormal W.
fn invariance_residual(t: &LinearMap, w: &DMatrix<f64>) -> f64 {
    (t * w - w * (w.transpose() * t * w)).norm()
}

/// Dominant k-dimensional invariant subspace by orthogonal subspace
/// iteration with QR re-orthonormalization.
fn dominant_subspace(t: &LinearMap, k: usize) -> Result<DMatrix<f64>, PositivityError> {
    let n = t.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0001);
    let mut x = DMatrix::from_fn(n, k, |_, _| 0.0);
    for j in 0..k {
        x.set_column(j, &gaussian_vector(n, &mut rng));
    }
    x = thin_q(&x);
    let scale = t.norm().max(1e-300);
    let mut residual = f64::INFINITY;
    for _ in 0..10_000 {
        x = thin_q(&(t * &x));
        residual = invariance_residual(t, &x);
        if residual <= 1e-10 * scale {
            return Ok(x);
        }
    }
    if residual <= 1e-8 * scale {
        Ok(x)
    } else {
        Err(PositivityError::ConvergenceFailure(residual / scale))
    }
}

/// Thin Q factor of a full-column-rank matrix.
fn thin_q(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().qr().q()
}

/// Orthonormal basis of the orthogonal complement of an orthonormal n×k
/// basis, built by projecting deterministic Gaussian draws and
/// re-orthonormalizing (twice, for numerical hygiene).
fn orthogonal_complement(u: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.nrows();
    let k = u.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0002);
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n - k);
    while cols.len() < n - k {
        let mut v = gaussian_vector(n, &mut rng);
        v -= u * (u.transpose() * &v);
        for c in &cols {
            let d = c.dot(&v);
            v -= c * d;
        }
        // Second orthogonalization pass.
        v -= u * (u.transpose() * &v);
        for c in &cols {
            let d = c.dot(&v);
            v -= c * d;
        }
        if v.norm() > 1e-8 {
            cols.push(v.normalize());
        }
    }
    DMatrix::from_columns(&cols)
}

/// Which notion of time a consensus matrix refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeKind {
    /// Row-stochastic update x⁺ = Ax.
    Discrete,
    /// Metzler row-sum-zero flow ẋ = Ax.
    Continuous,
}

/// Consensus Lyapunov functional flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LyapunovKind {
    /// max_i x_i − min_i x_i.
    Tsitsiklis,
    /// log(max_i x_i / min_i x_i); requires x > 0.
    Birkhoff,
}

/// Evaluate a consensus Lyapunov functional. Both vanish exactly on the
/// consensus subspace (constant vectors).
pub fn consensus_lyapunov(x: &DVector<f64>, kind: LyapunovKind) -> Result<f64, PositivityError> {
    assert!(x.len() > 0, "empty state");
    let max = x.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let min = x.iter().fold(f64::INFINITY, |a, b| a.min(*b));
    match kind {
        LyapunovKind::Tsitsiklis => Ok(max - min),
        LyapunovKind::Birkhoff => {
            if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| **v <= 0.0) {
                return Err(PositivityError::NonPositive {
                    index: i,
                    value: *v,
                });
            }
            Ok((max / min).ln())
        }
    }
}

/// Check the standard consensus normalization: row sums 1 with nonnegative
/// entries (discrete) or row sums 0 with Metzler sign pattern (continuous),
/// both to tolerance 1e−12.
pub fn check_consensus_matrix(a: &LinearMap, time: TimeKind) -> bool {
    if !a.is_square() {
        return false;
    }
    let n = a.nrows();
    let tol = 1e-12;
    for i in 0..n {
        let row_sum: f64 = (0..n).map(|j| a[(i, j)]).sum();
        match time {
            TimeKind::Discrete => {
                if (row_sum - 1.0).abs() > tol {
                    return false;
                }
                for j in 0..n {
                    if a[(i, j)] < -tol {
                        return false;
                    }
                }
            }
            TimeKind::Continuous => {
                if row_sum.abs() > tol {
                    return false;
                }
                for j in 0..n {
                    if i != j && a[(i, j)] < -tol {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Ratio ‖v₂‖/‖v₁‖ of the components of `v` in the oblique direct-sum
/// decomposition v = v₁ + v₂, v₁ ∈ W₁, v₂ ∈ W₂. Zero exactly on W₁;
/// directions without a W₁ component are degenerate.
pub fn contraction_ratio(v: &DVector<f64>, split: &PFSplit) -> Result<f64, PositivityError> {
    let n = v.len();
    let k = split.w1.ncols();
    assert_eq!(split.w1.nrows(), n, "split/vector dimension mismatch");
    let mut stacked = DMatrix::zeros(n, n);
    for j in 0..k {
        stacked.set_column(j, &split.w1.column(j).into_owned());
    }
    for j in 0..n - k {
        stacked.set_column(k + j, &split.w2.column(j).into_owned());
    }
    let coeffs = stacked
        .lu()
        .solve(v)
        .ok_or(PositivityError::DegenerateDirection)?;
    let v1 = &split.w1 * coeffs.rows(0, k).into_owned();
    let v2 = &split.w2 * coeffs.rows(k, n - k).into_owned();
    if v1.norm() <= 1e-12 * v.norm() {
        return Err(PositivityError::DegenerateDirection);
    }
    Ok(v2.norm() / v1.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn diag(entries: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(entries))
    }

    fn cone_p_11m1() -> Cone {
        Cone::quadratic(diag(&[1.0, 1.0, -1.0])).unwrap()
    }

    fn pendulum_cone() -> Cone {
        Cone::polyhedral(vec![
            DVector::from_column_slice(&[1.0, 0.0]),
            DVector::from_column_slice(&[1.0, 1.0]),
        ])
        .unwrap()
    }

    fn pendulum_a(theta: f64, rho: f64) -> LinearMap {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -theta.cos(), -rho])
    }

    #[test]
    fn diagonal_map_is_strictly_positive_exact() {
        let t = diag(&[3.0, 2.0, 0.5]);
        let cert = is_positive_map(&t, &cone_p_11m1(), CertMode::ExactSProcedure).unwrap();
        assert!(cert.positive && cert.strict);
        // Hand value: max over lambda of min(9−λ, 4−λ, λ−0.25) at λ = 2.125.
        assert_abs_diff_eq!(cert.margin, 1.875, epsilon = 1e-6);
        assert!(cert.witness.is_none());
    }

    #[test]
    fn diagonal_map_boundary_ray_oracle() {
        // Independent oracle: 10^3 boundary rays, every image margin > 0.
        let t = diag(&[3.0, 2.0, 0.5]);
        let cone = cone_p_11m1();
        for v in cone.boundary_sample(1000, 99) {
            let img = &t * &v;
            assert!(cone.margin(&img).unwrap() > 0.0);
        }
        let cert = is_positive_map(
            &t,
            &cone,
            CertMode::Sampled {
                n_rays: 1000,
                seed: 99,
            },
        )
        .unwrap();
        assert!(cert.positive && cert.strict);
    }

    #[test]
    fn identity_is_positive_not_strict() {
        for cone in [cone_p_11m1(), Cone::orthant(3)] {
            let t = DMatrix::identity(3, 3);
            let mode = CertMode::auto_for(&cone);
            let cert = is_positive_map(&t, &cone, mode).unwrap();
            assert!(cert.positive, "{cone:?}");
            assert!(!cert.strict, "{cone:?}");
            assert!(cert.margin.abs() <= 1e-9, "{cone:?}: {}", cert.margin);
        }
    }

    #[test]
    fn permutation_preserves_orthant_not_strictly() {
        let t = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let cert = is_positive_map(&t, &Cone::orthant(2), CertMode::SignPattern).unwrap();
        assert!(cert.positive);
        assert!(!cert.strict);
    }

    #[test]
    fn entrywise_positive_map_is_strict_on_orthant() {
        let t = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0]);
        let cert = is_positive_map(&t, &Cone::orthant(3), CertMode::SignPattern).unwrap();
        assert!(cert.positive && cert.strict && cert.margin > 0.0);
    }

    #[test]
    fn negative_entry_fails_with_basis_witness() {
        let t = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.0, 1.0]);
        let cert = is_positive_map(&t, &Cone::orthant(2), CertMode::SignPattern).unwrap();
        assert!(!cert.positive && !cert.strict);
        assert!(cert.margin < 0.0);
        let w = cert.witness.unwrap();
        assert_eq!(w, DVector::from_column_slice(&[0.0, 1.0]));
    }

    #[test]
    fn rotation_fails_quadratic_cone() {
        // Quarter-turn swaps the light cone's interior and exterior regions.
        let t = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let cone = Cone::quadratic(diag(&[1.0, -1.0])).unwrap();
        let cert = is_positive_map(&t, &cone, CertMode::ExactSProcedure).unwrap();
        assert!(!cert.positive);
        let w = cert.witness.unwrap();
        assert!(cone.margin(&(&t * &w)).unwrap() < 0.0, "witness must fail");
    }

    #[test]
    fn unsupported_combinations_error() {
        let t = DMatrix::identity(2, 2);
        assert!(matches!(
            is_positive_map(&t, &pendulum_cone(), CertMode::ExactSProcedure),
            Err(PositivityError::UnsupportedCombination(_))
        ));
        assert!(matches!(
            is_positive_map(&t, &cone_p_11m1(), CertMode::SignPattern),
            Err(PositivityError::DimensionMismatch { .. })
        ));
        let t3 = DMatrix::identity(3, 3);
        assert!(matches!(
            is_positive_map(&t3, &cone_p_11m1(), CertMode::SignPattern),
            Err(PositivityError::UnsupportedCombination(_))
        ));
    }

    #[test]
    fn pendulum_generator_flux_reference_values() {
        let cone = pendulum_cone();
        let a = pendulum_a(0.0, 3.0);
        // Ray (0,1): the constraint v1 >= 0 is active, flux = (Av)_1 = 1.
        let f1 = generator_flux(&a, &cone, &DVector::from_column_slice(&[0.0, 1.0]));
        assert_abs_diff_eq!(f1, 1.0, epsilon = 1e-14);
        // Ray (1,−1): the constraint v1+v2 >= 0 is active, flux = ρ−1−cosθ.
        let f2 = generator_flux(&a, &cone, &DVector::from_column_slice(&[1.0, -1.0]));
        assert_abs_diff_eq!(f2, 3.0 - 1.0 - 1.0, epsilon = 1e-14);
        let cert = is_positive_generator(&a, &cone, CertMode::ExactSProcedure).unwrap();
        assert!(cert.positive && cert.strict);
    }

    #[test]
    fn underdamped_pendulum_fails_with_witness() {
        let cone = pendulum_cone();
        let a = pendulum_a(0.0, 0.5);
        let f = generator_flux(&a, &cone, &DVector::from_column_slice(&[1.0, -1.0]));
        assert_abs_diff_eq!(f, -1.5, epsilon = 1e-14);
        let cert = is_positive_generator(&a, &cone, CertMode::ExactSProcedure).unwrap();
        assert!(!cert.positive);
        let w = cert.witness.unwrap();
        // The witness is the edge ray along (1,−1).
        assert_abs_diff_eq!(w[0] / w[1], -1.0, epsilon = 1e-12);
        // Sampled mode agrees.
        let cert_s = is_positive_generator(
            &a,
            &cone,
            CertMode::Sampled {
                n_rays: 200,
                seed: 3,
            },
        )
        .unwrap();
        assert!(!cert_s.positive);
    }

    #[test]
    fn zero_generator_positive_not_strict() {
        for cone in [cone_p_11m1(), Cone::orthant(3)] {
            let a = DMatrix::zeros(3, 3);
            let cert = is_positive_generator(&a, &cone, CertMode::ExactSProcedure).unwrap();
            assert!(cert.positive && !cert.strict, "{cone:?}");
        }
    }

    #[test]
    fn metzler_detection_on_orthant() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let cert = is_positive_generator(&a, &Cone::orthant(2), CertMode::SignPattern).unwrap();
        assert!(cert.positive && cert.strict);
        let b = DMatrix::from_row_slice(2, 2, &[-1.0, -0.1, 1.0, -1.0]);
        let cert = is_positive_generator(&b, &Cone::orthant(2), CertMode::SignPattern).unwrap();
        assert!(!cert.positive);
    }

    #[test]
    fn pf_split_diagonal_case() {
        let t = diag(&[3.0, 2.0, 0.5]);
        let split = pf_split(&t, &cone_p_11m1()).unwrap();
        assert_abs_diff_eq!(split.gap, 4.0, epsilon = 1e-12);
        assert_eq!(split.w1.ncols(), 2);
        assert_eq!(split.w2.ncols(), 1);
        // W1 = span(e1, e2): the e3 row of W1 vanishes.
        assert!(split.w1[(2, 0)].abs() < 1e-9 && split.w1[(2, 1)].abs() < 1e-9);
        // W2 = span(e3).
        assert!(split.w2[(2, 0)].abs() > 1.0 - 1e-9);
    }

    #[test]
    fn pf_split_consensus_matrix() {
        let t = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0]);
        let split = pf_split(&t, &Cone::orthant(3)).unwrap();
        assert_abs_diff_eq!(split.gap, 4.0, epsilon = 1e-10);
        let ones = DVector::from_column_slice(&[1.0, 1.0, 1.0]).normalize();
        let dot = split.w1.column(0).dot(&ones).abs();
        assert_abs_diff_eq!(dot, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn pf_split_rejects_equal_moduli() {
        // Scaled quarter-turn: both eigenvalue moduli equal 2.
        let t = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        let cone = Cone::quadratic(diag(&[1.0, -1.0])).unwrap();
        assert!(matches!(
            pf_split(&t, &cone),
            Err(PositivityError::GapDegenerate { .. })
        ));
    }

    #[test]
    fn pf_split_rejects_cone_violation() {
        // Strictly dominant direction e3 lies OUTSIDE the cone of diag(1,1,-1).
        let t = diag(&[0.5, 0.25, 3.0]);
        assert!(matches!(
            pf_split(&t, &cone_p_11m1()),
            Err(PositivityError::ConeViolation(_))
        ));
    }

    #[test]
    fn pf_split_invariance_residuals() {
        let t = DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 1.0, 0.3, 1.0, 2.0, 0.7, 0.3, 0.7, 2.5],
        );
        let split = pf_split(&t, &Cone::orthant(3)).unwrap();
        let scale = t.norm();
        assert!(invariance_residual(&t, &split.w1) <= 1e-8 * scale);
        assert!(invariance_residual(&t, &split.w2) <= 1e-8 * scale);
        // Bases orthonormal.
        let g1 = split.w1.transpose() * &split.w1;
        assert!((g1 - DMatrix::identity(1, 1)).norm() < 1e-12);
    }

    #[test]
    fn lyapunov_reference_values() {
        let x = DVector::from_column_slice(&[1.0, 2.0, 4.0]);
        assert_abs_diff_eq!(
            consensus_lyapunov(&x, LyapunovKind::Tsitsiklis).unwrap(),
            3.0
        );
        assert_abs_diff_eq!(
            consensus_lyapunov(&x, LyapunovKind::Birkhoff).unwrap(),
            4.0f64.ln(),
            epsilon = 1e-12
        );
        let c = DVector::from_column_slice(&[2.5, 2.5, 2.5]);
        assert_eq!(consensus_lyapunov(&c, LyapunovKind::Tsitsiklis).unwrap(), 0.0);
        assert_eq!(consensus_lyapunov(&c, LyapunovKind::Birkhoff).unwrap(), 0.0);
        let bad = DVector::from_column_slice(&[1.0, -0.5]);
        assert!(matches!(
            consensus_lyapunov(&bad, LyapunovKind::Birkhoff),
            Err(PositivityError::NonPositive { index: 1, .. })
        ));
    }

    #[test]
    fn consensus_matrix_checks() {
        let d = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.3, 0.7]);
        assert!(check_consensus_matrix(&d, TimeKind::Discrete));
        let c = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        assert!(check_consensus_matrix(&c, TimeKind::Continuous));
        let bad = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 1.0, -1.0]);
        assert!(!check_consensus_matrix(&bad, TimeKind::Discrete));
    }

    #[test]
    fn contraction_ratio_coordinate_split() {
        let split = PFSplit {
            w1: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            w2: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            gap: 2.0,
        };
        let v = DVector::from_column_slice(&[1.0, 2.0]);
        assert_abs_diff_eq!(contraction_ratio(&v, &split).unwrap(), 2.0);
        let in_w1 = DVector::from_column_slice(&[3.0, 0.0]);
        assert_eq!(contraction_ratio(&in_w1, &split).unwrap(), 0.0);
        let in_w2 = DVector::from_column_slice(&[0.0, 1.0]);
        assert!(matches!(
            contraction_ratio(&in_w2, &split),
            Err(PositivityError::DegenerateDirection)
        ));
    }

    #[test]
    fn certificate_json_schema() {
        let t = diag(&[3.0, 2.0, 0.5]);
        let cert = is_positive_map(&t, &cone_p_11m1(), CertMode::ExactSProcedure).unwrap();
        let text = cert.to_json();
        for key in ["\"positive\":", "\"strict\":", "\"margin\":", "\"mode\":", "\"witness\":"] {
            assert!(text.contains(key), "missing {key} in {text}");
        }
        let split = pf_split(&t, &cone_p_11m1()).unwrap();
        let sj = split.to_json();
        assert!(sj.contains("\"W1\":") && sj.contains("\"W2\":") && sj.contains("\"gap\":"));
    }

    #[test]
    fn strict_map_contracts_toward_w1() {
        let t = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0]);
        let cone = Cone::orthant(3);
        let split = pf_split(&t, &cone).unwrap();
        for v0 in cone.boundary_sample(20, 17) {
            let mut v = v0;
            let mut prev = f64::INFINITY;
            let mut last = f64::NAN;
            for m in 0..=50 {
                let r = match contraction_ratio(&v, &split) {
                    Ok(r) => r,
                    Err(_) => break,
                };
                // Monotonicity is meaningful above the linear-solve noise
                // floor (~1e-10); below it only boundedness is asserted.
                if prev > 1e-9 {
                    assert!(
                        r <= prev * (1.0 + 1e-12),
                        "ratio increased at power {m}: {r} > {prev}"
                    );
                }
                prev = r;
                last = r;
                v = &t * &v;
                v /= v.norm();
            }
            assert!(last < 1e-8, "ratio failed to vanish: {last}");
        }
    }

    proptest! {
        /// Exact and sampled map tests agree on the positivity flag for
        /// random maps on random planar/3D quadratic cones; cases within
        /// 1e−6 of the decision boundary are skipped as genuinely ambiguous
        /// at sampling resolution.
        #[test]
        fn prop_exact_vs_sampled_agreement(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = if seed % 2 == 0 { 2 } else { 3 };
            let t = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.5..1.5));
            let p = {
                let mut d: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
                d[n - 1] = -rng.gen_range(0.2..2.0);
                let q = thin_q(&DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)));
                let m = &q * DMatrix::from_diagonal(&DVector::from_vec(d)) * q.transpose();
                (m.clone() + m.transpose()) / 2.0
            };
            let cone = Cone::quadratic(p.clone()).unwrap();
            let exact = is_positive_map(&t, &cone, CertMode::ExactSProcedure).unwrap();
            // Filter instances whose decision margin is small relative to
            // the problem scale: there the violating set is a sliver that
            // finite sampling legitimately cannot resolve.
            let scale = (t.transpose() * &p * &t).norm();
            prop_assume!(exact.margin.abs() > 1e-3 * scale);
            let sampled = is_positive_map(
                &t, &cone, CertMode::Sampled { n_rays: 1000, seed: seed ^ 0xF00 }).unwrap();
            prop_assert_eq!(exact.positive, sampled.positive,
                "exact margin {} vs sampled margin {}", exact.margin, sampled.margin);
        }

        /// Birkhoff contraction: row-stochastic matrices never increase the
        /// log ratio, and uniformly positive ones strictly decrease it.
        #[test]
        fn prop_birkhoff_monotone(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..6);
            let delta = 0.1;
            let mut a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0));
            for i in 0..n {
                let s: f64 = (0..n).map(|j| a[(i, j)]).sum();
                for j in 0..n { a[(i, j)] /= s; }
            }
            let x = DVector::from_fn(n, |_, _| rng.gen_range(0.1..10.0));
            let vb = consensus_lyapunov(&x, LyapunovKind::Birkhoff).unwrap();
            let vb_next = consensus_lyapunov(&(&a * &x), LyapunovKind::Birkhoff).unwrap();
            prop_assert!(vb_next <= vb + 1e-12);
            // Uniformly positive variant: mix with the flat matrix.
            let flat = DMatrix::from_element(n, n, 1.0 / n as f64);
            let au = &a * (1.0 - delta * n as f64 / 2.0).max(0.1) + &flat * delta;
            let mut au = au;
            for i in 0..n {
                let s: f64 = (0..n).map(|j| au[(i, j)]).sum();
                for j in 0..n { au[(i, j)] /= s; }
            }
            if vb > 1e-9 {
                let vb_u = consensus_lyapunov(&(&au * &x), LyapunovKind::Birkhoff).unwrap();
                prop_assert!(vb_u < vb, "strict decrease failed: {vb_u} !< {vb}");
            }
        }

        /// Tsitsiklis functional is non-increasing along Euler steps of
        /// Metzler row-sum-zero flows.
        #[test]
        fn prop_tsitsiklis_monotone_metzler(seed in 0u64..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..5);
            let mut a = DMatrix::from_fn(n, n, |i, j| {
                if i == j { 0.0 } else { rng.gen_range(0.0..1.0) }
            });
            for i in 0..n {
                let s: f64 = (0..n).map(|j| a[(i, j)]).sum();
                a[(i, i)] = -s;
            }
            let mut x = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
            let h = 1e-3;
            let mut v = consensus_lyapunov(&x, LyapunovKind::Tsitsiklis).unwrap();
            for _ in 0..10_000 {
                x = &x + (&a * &x) * h;
                let v_next = consensus_lyapunov(&x, LyapunovKind::Tsitsiklis).unwrap();
                prop_assert!(v_next <= v + 1e-12);
                v = v_next;
            }
        }

        /// The PF splitting residual invariant on random strictly positive
        /// orthant maps.
        #[test]
        fn prop_pf_residual(seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(3..6);
            let t = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.05..1.0));
            let split = match pf_split(&t, &Cone::orthant(n)) {
                Ok(s) => s,
                Err(PositivityError::GapDegenerate { .. }) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            };
            let scale = t.norm();
            prop_assert!(invariance_residual(&t, &split.w1) <= 1e-8 * scale);
            prop_assert!(invariance_residual(&t, &split.w2) <= 1e-8 * scale);
            prop_assert!(split.gap > 1.0);
        }
    }
}
