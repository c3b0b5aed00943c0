//! Geometric primitives: point clouds, minimal circumspheres, barycentric
//! coordinates, open-simplex membership, and general-position diagnostics.
//!
//! All predicates work in double precision with tolerances scaled by the
//! bounding-box diameter of the cloud. Ties (points sitting exactly on a
//! decision boundary) are surfaced, never resolved silently.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest ambient dimension supported by the stack-allocated solvers.
pub const MAX_DIM: usize = 8;

/// Point-subset size cutoff below which general-position checks are
/// exhaustive over all subsets of size `dim + 2`.
pub const EXHAUSTIVE_GP_CUTOFF: usize = 60;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("points are affinely dependent (pivot {pivot:.3e} below tolerance {tol:.3e})")]
    AffinelyDependent { pivot: f64, tol: f64 },
    #[error("query point lies outside the affine hull (residual {residual:.3e} > {tol:.3e})")]
    OutOfAffineHull { residual: f64, tol: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("ambient dimension {dim} exceeds supported maximum {MAX_DIM}")]
    DimensionTooLarge { dim: usize },
    #[error("subset size {size} is out of range for dimension {dim}")]
    BadSubsetSize { size: usize, dim: usize },
    #[error("coordinates must be finite")]
    NonFinite,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("unknown point label {label}")]
    UnknownLabel { label: usize },
}

/// Relative tolerances for the geometric predicates. Scaled by the cloud's
/// bounding-box diameter before use (see [`ScaledTolerances`]).
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Tolerances {
    /// Equidistance / on-sphere tests (relative).
    pub on_sphere: f64,
    /// Strict positivity of barycentric coordinates.
    pub simplex: f64,
    /// General-position determinant and conditioning tests.
    pub gen_pos: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { on_sphere: 1e-9, simplex: 1e-10, gen_pos: 1e-7 }
    }
}

/// Tolerances resolved against a concrete cloud scale.
#[derive(Debug, Clone, Copy)]
pub struct ScaledTolerances {
    /// Bounding-box diameter used as the length scale (1.0 for degenerate clouds).
    pub scale: f64,
    pub on_sphere_rel: f64,
    pub on_sphere_abs: f64,
    pub simplex_abs: f64,
    pub gen_pos: f64,
}

impl ScaledTolerances {
    pub fn new(base: &Tolerances, diameter: f64) -> Self {
        let scale = if diameter > 0.0 { diameter } else { 1.0 };
        ScaledTolerances {
            scale,
            on_sphere_rel: base.on_sphere,
            on_sphere_abs: base.on_sphere * scale,
            simplex_abs: base.simplex * scale,
            gen_pos: base.gen_pos,
        }
    }

    /// Width of the on-sphere band around a sphere of the given radius.
    /// Relative to the radius itself so that large clouds do not flag
    /// coincidences unrelated to the local configuration.
    pub fn sphere_band(&self, radius: f64) -> f64 {
        self.on_sphere_rel * radius
    }

    /// Distance below which two points count as coincident.
    pub fn coincidence(&self) -> f64 {
        self.on_sphere_abs
    }
}

/// Axis-aligned box, used for enumeration windows, grid bounds and Poisson
/// sampling regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len(), "box corners must share a dimension");
        BoundingBox { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(lo, hi)| hi - lo).product()
    }

    pub fn dilate(&self, margin: f64) -> BoundingBox {
        BoundingBox {
            lo: self.lo.iter().map(|v| v - margin).collect(),
            hi: self.hi.iter().map(|v| v + margin).collect(),
        }
    }

    pub fn side_lengths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(lo, hi)| hi - lo).collect()
    }

    pub fn diameter(&self) -> f64 {
        self.side_lengths().iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    pub fn from_points<'a>(points: impl Iterator<Item = &'a [f64]>, dim: usize) -> BoundingBox {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for p in points {
            for (j, v) in p.iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
        BoundingBox { lo, hi }
    }
}

/// A finite labeled point set in `R^d`. Labels are stable integers; clouds
/// loaded from CSV label points by row index.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
    labels: Vec<usize>,
}

impl PointCloud {
    pub fn new(dim: usize, rows: Vec<Vec<f64>>) -> Result<Self, GeometryError> {
        if dim == 0 || dim > MAX_DIM {
            return Err(GeometryError::DimensionTooLarge { dim });
        }
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(GeometryError::DimensionMismatch { expected: dim, got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(GeometryError::NonFinite);
            }
            coords.extend_from_slice(row);
        }
        let labels = (0..rows.len()).collect();
        Ok(PointCloud { dim, coords, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox::from_points(self.iter_points(), self.dim)
    }

    /// Bounding-box diagonal; the length scale for all tolerances.
    pub fn diameter(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.bounding_box().diameter()
    }

    pub fn scaled_tolerances(&self, base: &Tolerances) -> ScaledTolerances {
        ScaledTolerances::new(base, self.diameter())
    }
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

/// The unique sphere within the affine hull of its support through all
/// support points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circumsphere {
    pub center: Vec<f64>,
    pub radius: f64,
    pub support: Vec<usize>,
}

/// Stack-allocated output of the small simplex solver: circumcenter, radius
/// and barycentric weights of the center with respect to the support.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SimplexSolve {
    pub center: [f64; MAX_DIM],
    pub radius: f64,
    pub weights: [f64; MAX_DIM + 1],
    pub m: usize,
    pub dim: usize,
}

impl SimplexSolve {
    pub fn center_slice(&self) -> &[f64] {
        &self.center[..self.dim]
    }

    pub fn weights_slice(&self) -> &[f64] {
        &self.weights[..self.m]
    }
}

/// Circumcenter solver over the affine hull of `m` points (`1 <= m <= dim+1`).
///
/// Reduces to the hull with a pivoted modified Gram-Schmidt basis, then
/// forward-substitutes the triangular equidistance system. Returns `None`
/// when the points are affinely dependent beyond the conditioning tolerance;
/// in enumeration contexts such subsets cannot support a critical point and
/// are skipped rather than reported.
pub(crate) fn solve_simplex<'a, F>(
    points: F,
    m: usize,
    dim: usize,
    tol: &ScaledTolerances,
) -> Option<SimplexSolve>
where
    F: Fn(usize) -> &'a [f64],
{
    debug_assert!(dim <= MAX_DIM && m >= 1 && m <= dim + 1);
    let x0 = points(0);
    let mut out = SimplexSolve {
        center: [0.0; MAX_DIM],
        radius: 0.0,
        weights: [0.0; MAX_DIM + 1],
        m,
        dim,
    };
    if m == 1 {
        out.center[..dim].copy_from_slice(x0);
        out.weights[0] = 1.0;
        return Some(out);
    }

    // Difference vectors and orthonormal basis of their span.
    let mut diffs = [[0.0f64; MAX_DIM]; MAX_DIM];
    let mut basis = [[0.0f64; MAX_DIM]; MAX_DIM];
    // g[i][j] = diffs[i] . basis[j]; lower triangular by construction.
    let mut g = [[0.0f64; MAX_DIM]; MAX_DIM];
    let q = m - 1;
    let pivot_tol = tol.gen_pos * tol.scale;
    for i in 0..q {
        let xi = points(i + 1);
        for j in 0..dim {
            diffs[i][j] = xi[j] - x0[j];
        }
        let mut u = diffs[i];
        // Two orthogonalization passes keep the basis orthogonal even for
        // thin simplices, where a single pass loses O(eps * cond) accuracy.
        for _ in 0..2 {
            for j in 0..i {
                let proj: f64 = (0..dim).map(|t| u[t] * basis[j][t]).sum();
                g[i][j] += proj;
                for t in 0..dim {
                    u[t] -= proj * basis[j][t];
                }
            }
        }
        let norm: f64 = (0..dim).map(|t| u[t] * u[t]).sum::<f64>().sqrt();
        if norm < pivot_tol {
            return None;
        }
        g[i][i] = norm;
        for t in 0..dim {
            basis[i][t] = u[t] / norm;
        }
    }

    // Equidistance from x0 and x_i: 2 (x_i - x0) . (c - x0) = |x_i - x0|^2.
    // In basis coordinates y this is the triangular system G y = rhs.
    let mut y = [0.0f64; MAX_DIM];
    for i in 0..q {
        let rhs: f64 = (0..dim).map(|t| diffs[i][t] * diffs[i][t]).sum::<f64>() * 0.5;
        let mut acc = rhs;
        for j in 0..i {
            acc -= g[i][j] * y[j];
        }
        y[i] = acc / g[i][i];
    }

    for t in 0..dim {
        let mut c = x0[t];
        for j in 0..q {
            c += y[j] * basis[j][t];
        }
        out.center[t] = c;
    }
    out.radius = (0..q).map(|j| y[j] * y[j]).sum::<f64>().sqrt();

    // Barycentric weights of the center: G^T w = y by back substitution.
    let mut w = [0.0f64; MAX_DIM + 1];
    for i in (0..q).rev() {
        let mut acc = y[i];
        for j in i + 1..q {
            acc -= g[j][i] * w[j + 1];
        }
        w[i + 1] = acc / g[i][i];
    }
    w[0] = 1.0 - w[1..=q].iter().sum::<f64>();
    out.weights = w;
    Some(out)
}

/// Minimal circumsphere of a subset of cloud points, identified by labels.
pub fn circumsphere(
    cloud: &PointCloud,
    labels: &[usize],
    tol: &ScaledTolerances,
) -> Result<Circumsphere, GeometryError> {
    let dim = cloud.dim();
    let m = labels.len();
    if m == 0 || m > dim + 1 {
        return Err(GeometryError::BadSubsetSize { size: m, dim });
    }
    for &l in labels {
        if l >= cloud.len() {
            return Err(GeometryError::UnknownLabel { label: l });
        }
    }
    let solve = solve_simplex(|i| cloud.point(labels[i]), m, dim, tol).ok_or(
        GeometryError::AffinelyDependent { pivot: 0.0, tol: tol.gen_pos * tol.scale },
    )?;
    Ok(Circumsphere {
        center: solve.center_slice().to_vec(),
        radius: solve.radius,
        support: labels.to_vec(),
    })
}

/// Barycentric coordinates of `q` with respect to affinely independent
/// points. Errors when `q` lies off the affine hull beyond tolerance.
pub fn barycentric_coords(
    q: &[f64],
    points: &[&[f64]],
    tol: &ScaledTolerances,
) -> Result<Vec<f64>, GeometryError> {
    let m = points.len();
    if m == 0 {
        return Err(GeometryError::EmptyCloud);
    }
    let dim = points[0].len();
    if dim > MAX_DIM {
        return Err(GeometryError::DimensionTooLarge { dim });
    }
    if q.len() != dim {
        return Err(GeometryError::DimensionMismatch { expected: dim, got: q.len() });
    }
    if m == 1 {
        let residual = dist(q, points[0]);
        if residual > tol.on_sphere_abs {
            return Err(GeometryError::OutOfAffineHull { residual, tol: tol.on_sphere_abs });
        }
        return Ok(vec![1.0]);
    }

    let x0 = points[0];
    let q_dim = m - 1;
    let mut diffs = [[0.0f64; MAX_DIM]; MAX_DIM];
    let mut basis = [[0.0f64; MAX_DIM]; MAX_DIM];
    let mut g = [[0.0f64; MAX_DIM]; MAX_DIM];
    let pivot_tol = tol.gen_pos * tol.scale;
    for i in 0..q_dim {
        let xi = points[i + 1];
        for j in 0..dim {
            diffs[i][j] = xi[j] - x0[j];
        }
        let mut u = diffs[i];
        for _ in 0..2 {
            for j in 0..i {
                let proj: f64 = (0..dim).map(|t| u[t] * basis[j][t]).sum();
                g[i][j] += proj;
                for t in 0..dim {
                    u[t] -= proj * basis[j][t];
                }
            }
        }
        let norm: f64 = (0..dim).map(|t| u[t] * u[t]).sum::<f64>().sqrt();
        if norm < pivot_tol {
            return Err(GeometryError::AffinelyDependent { pivot: norm, tol: pivot_tol });
        }
        g[i][i] = norm;
        for t in 0..dim {
            basis[i][t] = u[t] / norm;
        }
    }

    // Project q - x0 onto the basis and check the out-of-hull residual.
    let mut z = [0.0f64; MAX_DIM];
    let mut delta = [0.0f64; MAX_DIM];
    for t in 0..dim {
        delta[t] = q[t] - x0[t];
    }
    for j in 0..q_dim {
        z[j] = (0..dim).map(|t| delta[t] * basis[j][t]).sum();
    }
    let mut res_sq = 0.0;
    for t in 0..dim {
        let mut r = delta[t];
        for j in 0..q_dim {
            r -= z[j] * basis[j][t];
        }
        res_sq += r * r;
    }
    let residual = res_sq.sqrt();
    if residual > tol.on_sphere_abs {
        return Err(GeometryError::OutOfAffineHull { residual, tol: tol.on_sphere_abs });
    }

    let mut w = vec![0.0f64; m];
    for i in (0..q_dim).rev() {
        let mut acc = z[i];
        for j in i + 1..q_dim {
            acc -= g[j][i] * w[j + 1];
        }
        w[i + 1] = acc / g[i][i];
    }
    w[0] = 1.0 - w[1..].iter().sum::<f64>();
    Ok(w)
}

/// Classification of a point against the open simplex spanned by a point set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimplexPosition {
    /// All barycentric coordinates strictly positive beyond tolerance.
    Inside,
    /// Some coordinate within the tolerance band around zero: a tie that
    /// general-position inputs do not produce.
    Boundary,
    Outside,
}

pub(crate) fn classify_weights(weights: &[f64], tol: &ScaledTolerances) -> SimplexPosition {
    if weights.iter().any(|w| *w <= -tol.simplex_abs) {
        SimplexPosition::Outside
    } else if weights.iter().any(|w| *w < tol.simplex_abs) {
        SimplexPosition::Boundary
    } else {
        SimplexPosition::Inside
    }
}

pub fn simplex_position(
    q: &[f64],
    points: &[&[f64]],
    tol: &ScaledTolerances,
) -> Result<SimplexPosition, GeometryError> {
    if points.len() == 1 {
        return Ok(if dist(q, points[0]) <= tol.coincidence() {
            SimplexPosition::Inside
        } else {
            SimplexPosition::Outside
        });
    }
    let w = barycentric_coords(q, points, tol)?;
    Ok(classify_weights(&w, tol))
}

/// True iff `q` lies strictly inside the open simplex spanned by `points`.
/// For a single point, true iff `q` coincides with it.
pub fn in_open_simplex(
    q: &[f64],
    points: &[&[f64]],
    tol: &ScaledTolerances,
) -> Result<bool, GeometryError> {
    Ok(simplex_position(q, points, tol)? == SimplexPosition::Inside)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Coincidence,
    AffineDependence,
    Cosphericity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub labels: Vec<usize>,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralPositionReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl GeneralPositionReport {
    pub fn from_violations(violations: Vec<Violation>) -> Self {
        GeneralPositionReport { ok: violations.is_empty(), violations }
    }
}

/// Exhaustive general-position check over all subsets of size `<= dim + 2`.
///
/// Intended for clouds below [`EXHAUSTIVE_GP_CUTOFF`]; larger clouds should
/// be checked through the candidate supports seen during critical-point
/// enumeration (see `critical::check_general_position`).
pub fn check_general_position(cloud: &PointCloud, tol: &ScaledTolerances) -> GeneralPositionReport {
    let n = cloud.len();
    let d = cloud.dim();
    let mut violations = Vec::new();

    for (i, j) in (0..n).tuple_combinations() {
        if dist(cloud.point(i), cloud.point(j)) <= tol.coincidence() {
            violations.push(Violation {
                labels: vec![cloud.label(i), cloud.label(j)],
                kind: ViolationKind::Coincidence,
            });
        }
    }

    // Affine dependence: smallest singular value of the difference matrix,
    // normalized by the cloud scale.
    for m in 3..=(d + 1).min(n) {
        for subset in (0..n).combinations(m) {
            let x0 = cloud.point(subset[0]);
            let mat = DMatrix::from_fn(m - 1, d, |r, c| {
                (cloud.point(subset[r + 1])[c] - x0[c]) / tol.scale
            });
            let sv = mat.singular_values();
            if sv.iter().any(|s| *s < tol.gen_pos) {
                violations.push(Violation {
                    labels: subset.iter().map(|&i| cloud.label(i)).collect(),
                    kind: ViolationKind::AffineDependence,
                });
            }
        }
    }

    // Cosphericity: d+2 points on a common (d-1)-sphere make the lifted
    // determinant vanish.
    if n >= d + 2 {
        for subset in (0..n).combinations(d + 2) {
            let mut centroid = vec![0.0; d];
            for &i in &subset {
                for (t, v) in cloud.point(i).iter().enumerate() {
                    centroid[t] += v / (d + 2) as f64;
                }
            }
            let mat = DMatrix::from_fn(d + 2, d + 2, |r, c| {
                let p = cloud.point(subset[r]);
                if c < d {
                    (p[c] - centroid[c]) / tol.scale
                } else if c == d {
                    (0..d).map(|t| {
                        let v = (p[t] - centroid[t]) / tol.scale;
                        v * v
                    }).sum()
                } else {
                    1.0
                }
            });
            if mat.determinant().abs() < tol.gen_pos {
                violations.push(Violation {
                    labels: subset.iter().map(|&i| cloud.label(i)).collect(),
                    kind: ViolationKind::Cosphericity,
                });
            }
        }
    }

    GeneralPositionReport::from_violations(violations)
}

/// Independent oracle for circumcenters used by tests and the Clarke check:
/// parametrizes the center as an affine combination of the support and
/// solves the dense m-by-m system with LU.
pub fn circumcenter_affine_oracle(points: &[&[f64]]) -> Option<(Vec<f64>, f64)> {
    let m = points.len();
    let d = points[0].len();
    if m == 1 {
        return Some((points[0].to_vec(), 0.0));
    }
    // Row i (i = 1..m-1): 2 (x_i - x_0) . (sum_j a_j x_j) = |x_i|^2 - |x_0|^2.
    // Row 0: sum_j a_j = 1.
    let mut a = DMatrix::zeros(m, m);
    let mut b = DVector::zeros(m);
    for j in 0..m {
        a[(0, j)] = 1.0;
    }
    b[0] = 1.0;
    for i in 1..m {
        let norm_i: f64 = points[i].iter().map(|v| v * v).sum();
        let norm_0: f64 = points[0].iter().map(|v| v * v).sum();
        b[i] = norm_i - norm_0;
        for j in 0..m {
            let dot: f64 = (0..d).map(|t| 2.0 * (points[i][t] - points[0][t]) * points[j][t]).sum();
            a[(i, j)] = dot;
        }
    }
    let alpha = a.lu().solve(&b)?;
    let mut center = vec![0.0; d];
    for j in 0..m {
        for t in 0..d {
            center[t] += alpha[j] * points[j][t];
        }
    }
    let radius = dist(&center, points[0]);
    Some((center, radius))
}
