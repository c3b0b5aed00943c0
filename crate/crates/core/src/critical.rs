//! Critical points of the k-NN distance function.
//!
//! A candidate support is a small affinely independent subset whose
//! circumcenter might be critical. Classification checks the open-simplex
//! condition on the circumcenter, counts data points strictly inside the
//! circumball, and derives the index and homology budget. Enumeration is
//! brute force over subsets on small clouds and neighbor-graph pruned on
//! large ones, with a certified radius bound so pruning cannot drop
//! critical points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    self, classify_weights, dist, solve_simplex, BoundingBox, Circumsphere, GeneralPositionReport,
    GeometryError, PointCloud, ScaledTolerances, SimplexPosition, Violation, ViolationKind,
    EXHAUSTIVE_GP_CUTOFF,
};
use crate::knn::{self, KnnError};

/// Cloud size up to which enumeration scans all subsets of size `<= d+1`.
pub const BRUTE_FORCE_CUTOFF: usize = 60;

#[derive(Debug, Error)]
pub enum CriticalError {
    #[error("general-position violation involving points {labels:?}: {detail}")]
    GeneralPositionViolation { labels: Vec<usize>, detail: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Knn(#[from] KnnError),
}

/// A critical point of the k-NN distance function.
///
/// `boundary` holds the labels on the critical sphere, `interior` the labels
/// strictly inside the critical ball, `weights` the barycentric coefficients
/// expressing the center over the boundary points (all strictly positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub center: Vec<f64>,
    pub radius: f64,
    pub boundary: Vec<usize>,
    pub interior: Vec<usize>,
    pub index: usize,
    pub delta: u64,
    pub weights: Vec<f64>,
}

impl CriticalPoint {
    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }
}

/// An affinely independent subset of the cloud together with its
/// circumsphere, the raw material of classification.
#[derive(Debug, Clone)]
pub struct CandidateSubset {
    pub labels: Vec<usize>,
    pub circumsphere: Circumsphere,
}

impl CandidateSubset {
    pub fn new(
        cloud: &PointCloud,
        labels: &[usize],
        tol: &ScaledTolerances,
    ) -> Result<Self, CriticalError> {
        let mut labels = labels.to_vec();
        labels.sort_unstable();
        let circumsphere = geometry::circumsphere(cloud, &labels, tol)?;
        Ok(CandidateSubset { labels, circumsphere })
    }
}

/// Outcome of the Morse-function sanity checks over an enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorseValidation {
    /// True when all positive critical values are pairwise distinct beyond
    /// tolerance. Zero-radius minima (k = 1) share the value 0 by
    /// construction and are exempt.
    pub distinct_values: bool,
    /// Smallest gap between consecutive distinct critical values, when at
    /// least two exist.
    pub min_gap: Option<f64>,
    pub nondegenerate: bool,
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as u64
}

/// The homology-change budget of a critical point: `C(n_boundary - 1, index)`.
pub fn delta(n_boundary: usize, index: usize) -> u64 {
    debug_assert!(n_boundary >= 1);
    binomial(n_boundary - 1, index)
}

/// Signed sum of budgets, `sum_c (-1)^{index} delta_c`. Equals 1 on any
/// complete enumeration because the k-fold cover is eventually all of space.
pub fn euler_sum(crits: &[CriticalPoint]) -> i64 {
    crits
        .iter()
        .map(|c| if c.index % 2 == 0 { c.delta as i64 } else { -(c.delta as i64) })
        .sum()
}

/// Flat spatial bucket grid for ball queries during interior counting.
struct BucketGrid {
    lo: Vec<f64>,
    cell: f64,
    dims: Vec<usize>,
    buckets: Vec<Vec<u32>>,
}

impl BucketGrid {
    fn build(cloud: &PointCloud, cell: f64) -> BucketGrid {
        let bbox = cloud.bounding_box();
        let d = cloud.dim();
        let mut dims = Vec::with_capacity(d);
        let mut total = 1usize;
        for t in 0..d {
            let side = (bbox.hi[t] - bbox.lo[t]).max(0.0);
            let n = ((side / cell).floor() as usize + 1).max(1);
            dims.push(n);
            total = total.saturating_mul(n);
        }
        let mut grid = BucketGrid { lo: bbox.lo, cell, dims, buckets: vec![Vec::new(); total] };
        for (i, p) in cloud.iter_points().enumerate() {
            let idx = grid.bucket_of(p);
            grid.buckets[idx].push(i as u32);
        }
        grid
    }

    fn coord(&self, t: usize, x: f64) -> isize {
        ((x - self.lo[t]) / self.cell).floor() as isize
    }

    fn bucket_of(&self, p: &[f64]) -> usize {
        let mut idx = 0usize;
        for t in 0..p.len() {
            let c = self.coord(t, p[t]).clamp(0, self.dims[t] as isize - 1) as usize;
            idx = idx * self.dims[t] + c;
        }
        idx
    }

    fn for_each_in_ball(&self, center: &[f64], radius: f64, mut f: impl FnMut(u32)) {
        let d = self.dims.len();
        let mut lo_c = vec![0isize; d];
        let mut hi_c = vec![0isize; d];
        for t in 0..d {
            lo_c[t] = self.coord(t, center[t] - radius).clamp(0, self.dims[t] as isize - 1);
            hi_c[t] = self.coord(t, center[t] + radius).clamp(0, self.dims[t] as isize - 1);
        }
        let mut cursor = lo_c.clone();
        loop {
            let mut idx = 0usize;
            for t in 0..d {
                idx = idx * self.dims[t] + cursor[t] as usize;
            }
            for &i in &self.buckets[idx] {
                f(i);
            }
            let mut t = d;
            loop {
                if t == 0 {
                    return;
                }
                t -= 1;
                if cursor[t] < hi_c[t] {
                    cursor[t] += 1;
                    for u in t + 1..d {
                        cursor[u] = lo_c[u];
                    }
                    break;
                }
                if t == 0 {
                    return;
                }
            }
        }
    }
}

/// Shared classification core. `grid` narrows the interior scan to points
/// near the candidate ball; without it the scan is a full pass.
fn classify_core(
    cloud: &PointCloud,
    labels: &[usize],
    k: usize,
    tol: &ScaledTolerances,
    grid: Option<&BucketGrid>,
) -> Result<Option<CriticalPoint>, CriticalError> {
    let d = cloud.dim();
    let m = labels.len();
    debug_assert!(m >= 1 && m <= d + 1);
    if m == 1 && k != 1 {
        // A singleton supports a critical point only through the zero-radius
        // minimum of the plain distance function.
        return Ok(None);
    }

    let Some(solve) = solve_simplex(|i| cloud.point(labels[i]), m, d, tol) else {
        // Affinely dependent beyond the conditioning tolerance: such a
        // subset cannot support a critical point.
        return Ok(None);
    };
    let center = solve.center_slice();
    let radius = solve.radius;
    let weights = solve.weights_slice();

    if m > 1 {
        match classify_weights(weights, tol) {
            SimplexPosition::Outside => return Ok(None),
            SimplexPosition::Boundary => {
                return Err(CriticalError::GeneralPositionViolation {
                    labels: labels.to_vec(),
                    detail: "circumcenter lies on the boundary of the support simplex".into(),
                })
            }
            SimplexPosition::Inside => {}
        }
    }

    let band = tol.sphere_band(radius);
    let mut interior: Vec<usize> = Vec::new();
    let mut on_band: Vec<usize> = Vec::new();
    let mut visit = |i: usize| {
        if labels.contains(&i) {
            return;
        }
        let dd = dist(center, cloud.point(i));
        if (dd - radius).abs() <= band || (radius == 0.0 && dd <= tol.coincidence()) {
            on_band.push(i);
        } else if dd < radius {
            interior.push(i);
        }
    };
    match grid {
        Some(g) => {
            let query = radius + band + tol.coincidence();
            g.for_each_in_ball(center, query, |i| visit(i as usize));
        }
        None => {
            for i in 0..cloud.len() {
                visit(i);
            }
        }
    }

    let qualifies = |j: usize| j + 1 <= k && m + j >= k && m + j - k <= d;
    let j_lo = interior.len();
    if !on_band.is_empty() {
        // A point within the on-sphere band makes the interior count, and
        // hence the index, ambiguous. Only abort when the ambiguity could
        // matter; candidates rejected under every reading are just rejected.
        if (j_lo..=j_lo + on_band.len()).any(qualifies) {
            let mut involved = labels.to_vec();
            involved.extend(on_band.iter().map(|&i| cloud.label(i)));
            return Err(CriticalError::GeneralPositionViolation {
                labels: involved,
                detail: format!(
                    "point within {band:.3e} of the candidate sphere (radius {radius:.6e})"
                ),
            });
        }
        return Ok(None);
    }
    if !qualifies(j_lo) {
        return Ok(None);
    }

    let index = m + j_lo - k;
    interior.sort_unstable();
    let mut boundary: Vec<(usize, f64)> =
        labels.iter().zip(weights).map(|(&l, &w)| (cloud.label(l), w)).collect();
    boundary.sort_by_key(|(l, _)| *l);
    Ok(Some(CriticalPoint {
        center: center.to_vec(),
        radius,
        boundary: boundary.iter().map(|(l, _)| *l).collect(),
        interior: interior.iter().map(|&i| cloud.label(i)).collect(),
        index,
        delta: delta(m, index),
        weights: boundary.iter().map(|(_, w)| *w).collect(),
    }))
}

/// Classifies one candidate subset. Returns the critical point when the
/// circumcenter lies in the open support simplex, at most `k - 1` points sit
/// strictly inside the circumball, and the resulting index is in `0..=d`.
pub fn classify(
    candidate: &CandidateSubset,
    cloud: &PointCloud,
    k: usize,
    tol: &ScaledTolerances,
) -> Result<Option<CriticalPoint>, CriticalError> {
    if k == 0 || k > cloud.len() {
        return Err(KnnError::KTooLarge { k, n: cloud.len() }.into());
    }
    classify_core(cloud, &candidate.labels, k, tol, None)
}

/// Independent criticality test through the generalized-gradient condition:
/// the zero vector must be a strictly interior convex combination of the
/// vectors from the boundary points to the center. Solved as a small least
/// squares system, on a different path from the barycentric solver.
pub fn clarke_criticality(center: &[f64], points: &[&[f64]], tol: &ScaledTolerances) -> bool {
    use nalgebra::{DMatrix, DVector};
    let m = points.len();
    let d = center.len();
    if m == 1 {
        return dist(center, points[0]) <= tol.coincidence();
    }
    let mean_r: f64 = points.iter().map(|p| dist(center, p)).sum::<f64>() / m as f64;
    if mean_r <= 0.0 {
        return false;
    }
    let a = DMatrix::from_fn(d + 1, m, |r, c| {
        if r < d {
            (center[r] - points[c][r]) / mean_r
        } else {
            1.0
        }
    });
    let mut b = DVector::zeros(d + 1);
    b[d] = 1.0;
    let svd = a.clone().svd(true, true);
    let Ok(lambda) = svd.solve(&b, 1e-12) else {
        return false;
    };
    let residual = (&a * &lambda - &b).norm();
    residual <= 1e-7 && lambda.iter().all(|v| *v > tol.simplex_abs)
}

/// Re-verifies a classified critical point through [`clarke_criticality`].
pub fn clarke_check(cp: &CriticalPoint, cloud: &PointCloud, tol: &ScaledTolerances) -> bool {
    let pts: Vec<&[f64]> = cp.boundary.iter().map(|&l| cloud.point(l)).collect();
    clarke_criticality(&cp.center, &pts, tol)
}

/// Candidate support sizes for the enumeration: singletons only for k = 1.
fn size_range(k: usize, d: usize) -> (usize, usize) {
    (if k == 1 { 1 } else { 2 }, d + 1)
}

enum Visit {
    Classify,
    CollectViolations(Vec<Violation>),
}

struct Enumeration<'a> {
    cloud: &'a PointCloud,
    k: usize,
    tol: &'a ScaledTolerances,
    out: Vec<CriticalPoint>,
    mode: Visit,
}

impl<'a> Enumeration<'a> {
    fn visit(
        &mut self,
        labels: &[usize],
        grid: Option<&BucketGrid>,
    ) -> Result<(), CriticalError> {
        match classify_core(self.cloud, labels, self.k, self.tol, grid) {
            Ok(Some(cp)) => {
                self.out.push(cp);
                Ok(())
            }
            Ok(None) => Ok(()),
            Err(CriticalError::GeneralPositionViolation { labels, detail }) => match &mut self.mode
            {
                Visit::Classify => {
                    Err(CriticalError::GeneralPositionViolation { labels, detail })
                }
                Visit::CollectViolations(violations) => {
                    violations.push(Violation { labels, kind: ViolationKind::Cosphericity });
                    Ok(())
                }
            },
            Err(e) => Err(e),
        }
    }
}

/// Certified upper bound on the k-NN distance over the bounding box: a grid
/// maximum plus the 1-Lipschitz slack for the cell diagonal. Every critical
/// center lies in the convex hull of the cloud, so no critical radius can
/// exceed this bound.
fn radius_bound_certified(cloud: &PointCloud, k: usize) -> f64 {
    let d = cloud.dim();
    let bbox = cloud.bounding_box();
    let res_per_axis: usize = match d {
        1 => 1024,
        2 => 96,
        3 => 20,
        _ => 6,
    };
    let sides = bbox.side_lengths();
    let half_diag = 0.5
        * sides
            .iter()
            .map(|s| {
                let h = s / res_per_axis as f64;
                h * h
            })
            .sum::<f64>()
            .sqrt();
    let mut max_val = 0.0f64;
    let mut x = vec![0.0; d];
    let total = res_per_axis.pow(d as u32);
    for cell in 0..total {
        let mut rem = cell;
        for t in (0..d).rev() {
            let c = rem % res_per_axis;
            rem /= res_per_axis;
            x[t] = bbox.lo[t] + (c as f64 + 0.5) * sides[t] / res_per_axis as f64;
        }
        let v = knn::kth_distance(cloud, k, &x);
        if v > max_val {
            max_val = v;
        }
    }
    max_val + half_diag
}

/// Maximum over the cloud of the distance to the k-th nearest other point.
fn radius_bound_graph(cloud: &PointCloud, k: usize) -> f64 {
    let n = cloud.len();
    let mut best = 0.0f64;
    let mut dists: Vec<f64> = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        for j in 0..n {
            if j != i {
                dists.push(dist(cloud.point(i), cloud.point(j)));
            }
        }
        let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
        if *kth > best {
            best = *kth;
        }
    }
    best
}

fn drive_enumeration(en: &mut Enumeration<'_>) -> Result<(), CriticalError> {
    let cloud = en.cloud;
    let n = cloud.len();
    let d = cloud.dim();
    let k = en.k;
    let (m_lo, m_hi) = size_range(k, d);

    if m_lo == 1 {
        for i in 0..n {
            en.visit(&[i], None)?;
        }
    }

    if d == 1 {
        // Sorted scan: a pair can only be critical when at most k - 1 points
        // separate its members, so only rank offsets up to k matter.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| cloud.point(a)[0].total_cmp(&cloud.point(b)[0]));
        for s in 1..=k.min(n - 1) {
            for i in 0..n - s {
                let mut pair = [order[i], order[i + s]];
                pair.sort_unstable();
                en.visit(&pair, None)?;
            }
        }
        return Ok(());
    }

    if n <= BRUTE_FORCE_CUTOFF {
        let mut stack: Vec<usize> = Vec::with_capacity(m_hi);
        fn rec(
            en: &mut Enumeration<'_>,
            stack: &mut Vec<usize>,
            start: usize,
            m_hi: usize,
        ) -> Result<(), CriticalError> {
            let n = en.cloud.len();
            for i in start..n {
                stack.push(i);
                if stack.len() >= 2 {
                    en.visit(&stack.clone(), None)?;
                }
                if stack.len() < m_hi {
                    rec(en, stack, i + 1, m_hi)?;
                }
                stack.pop();
            }
            Ok(())
        }
        rec(en, &mut stack, 0, m_hi)?;
        return Ok(());
    }

    // Pruned path: every pair on a critical sphere of radius r is within 2r
    // of each other, and r is bounded by the certified maximum of the k-NN
    // distance over the hull, so candidate supports are cliques of the
    // 2R-neighbor graph.
    let r_bound = radius_bound_graph(cloud, k)
        .max(radius_bound_certified(cloud, k))
        * (1.0 + 1e-9)
        + en.tol.on_sphere_abs;
    let reach = 2.0 * r_bound;
    let grid = BucketGrid::build(cloud, r_bound.max(1e-12 * en.tol.scale));

    let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut local: Vec<u32> = Vec::new();
        grid.for_each_in_ball(cloud.point(i), reach, |j| {
            if (j as usize) > i && dist(cloud.point(i), cloud.point(j as usize)) <= reach {
                local.push(j);
            }
        });
        local.sort_unstable();
        neighbors[i] = local;
    }

    let mut stack: Vec<usize> = Vec::with_capacity(m_hi);
    let mut cand_stack: Vec<Vec<u32>> = vec![Vec::new(); m_hi + 1];
    #[allow(clippy::too_many_arguments)]
    fn extend(
        en: &mut Enumeration<'_>,
        grid: &BucketGrid,
        reach: f64,
        r_bound: f64,
        neighbors: &[Vec<u32>],
        stack: &mut Vec<usize>,
        cand_stack: &mut Vec<Vec<u32>>,
        depth: usize,
        m_hi: usize,
    ) -> Result<(), CriticalError> {
        let cands = std::mem::take(&mut cand_stack[depth]);
        for (pos, &j) in cands.iter().enumerate() {
            stack.push(j as usize);
            if stack.len() >= 2 {
                en.visit(&stack.clone(), Some(grid))?;
            }
            if stack.len() < m_hi {
                let mut next: Vec<u32> = std::mem::take(&mut cand_stack[depth + 1]);
                next.clear();
                for &q in &cands[pos + 1..] {
                    if dist(en.cloud.point(j as usize), en.cloud.point(q as usize)) <= reach {
                        next.push(q);
                    }
                }
                cand_stack[depth + 1] = next;
                extend(en, grid, reach, r_bound, neighbors, stack, cand_stack, depth + 1, m_hi)?;
            }
            stack.pop();
        }
        cand_stack[depth] = cands;
        Ok(())
    }
    for i in 0..n {
        stack.clear();
        stack.push(i);
        cand_stack[1] = neighbors[i].clone();
        extend(en, &grid, reach, r_bound, &neighbors, &mut stack, &mut cand_stack, 1, m_hi)?;
    }
    Ok(())
}

fn sort_critical_points(crits: &mut [CriticalPoint]) {
    crits.sort_by(|a, b| a.radius.total_cmp(&b.radius).then_with(|| a.boundary.cmp(&b.boundary)));
}

/// Enumerates all critical points of the k-NN distance function, optionally
/// restricted to centers inside `window` (all sampled points participate
/// regardless). Sorted by radius, ties broken by boundary labels.
pub fn enumerate_critical_points(
    cloud: &PointCloud,
    k: usize,
    window: Option<&BoundingBox>,
    tol: &ScaledTolerances,
) -> Result<Vec<CriticalPoint>, CriticalError> {
    if k == 0 || k > cloud.len() {
        return Err(KnnError::KTooLarge { k, n: cloud.len() }.into());
    }
    let mut en = Enumeration { cloud, k, tol, out: Vec::new(), mode: Visit::Classify };
    drive_enumeration(&mut en)?;
    let mut crits = en.out;
    if let Some(w) = window {
        crits.retain(|c| w.contains(&c.center));
    }
    sort_critical_points(&mut crits);
    Ok(crits)
}

/// General-position check sized to the enumeration: exhaustive over subsets
/// on small clouds, and over the candidate supports actually visited by the
/// pruned enumeration on large ones.
pub fn check_general_position(
    cloud: &PointCloud,
    k: usize,
    tol: &ScaledTolerances,
) -> GeneralPositionReport {
    if cloud.len() <= EXHAUSTIVE_GP_CUTOFF {
        return geometry::check_general_position(cloud, tol);
    }
    let mut violations: Vec<Violation> = Vec::new();
    for i in 0..cloud.len() {
        for j in i + 1..cloud.len() {
            if dist(cloud.point(i), cloud.point(j)) <= tol.coincidence() {
                violations.push(Violation {
                    labels: vec![cloud.label(i), cloud.label(j)],
                    kind: ViolationKind::Coincidence,
                });
            }
        }
    }
    let mut en = Enumeration {
        cloud,
        k: k.min(cloud.len()).max(1),
        tol,
        out: Vec::new(),
        mode: Visit::CollectViolations(Vec::new()),
    };
    // Classification errors are collected instead of propagated in this mode.
    let _ = drive_enumeration(&mut en);
    if let Visit::CollectViolations(mut collected) = en.mode {
        violations.append(&mut collected);
    }
    GeneralPositionReport::from_violations(violations)
}

/// Checks the Morse assumptions over an enumeration: distinct positive
/// critical values and nondegenerate supports.
pub fn validate_morse(crits: &[CriticalPoint], tol: &ScaledTolerances) -> MorseValidation {
    let gap_tol = tol.on_sphere_abs;
    let mut radii: Vec<f64> = crits.iter().map(|c| c.radius).collect();
    radii.sort_by(f64::total_cmp);
    let has_zero = radii.iter().any(|r| *r <= gap_tol);
    let positives: Vec<f64> = radii.iter().copied().filter(|r| *r > gap_tol).collect();

    let mut values: Vec<f64> = Vec::new();
    if has_zero {
        values.push(0.0);
    }
    values.extend(&positives);

    let mut min_gap: Option<f64> = None;
    for w in values.windows(2) {
        let gap = w[1] - w[0];
        min_gap = Some(min_gap.map_or(gap, |g: f64| g.min(gap)));
    }
    let distinct_values = positives.windows(2).all(|w| w[1] - w[0] > gap_tol);
    let nondegenerate = crits.iter().all(|c| {
        !c.boundary.is_empty()
            && c.weights.iter().all(|w| *w > 0.0 && w.is_finite())
            && (c.radius > 0.0 || c.boundary.len() == 1)
    });
    MorseValidation { distinct_values, min_gap, nondegenerate }
}
