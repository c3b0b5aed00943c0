//! The k-nearest-neighbor distance function and its min-max / order-k
//! Voronoi structure. Deliberately exact: full scans and order statistics,
//! no spatial index, so every other module can treat these as ground truth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dist, PointCloud, ScaledTolerances};

#[derive(Debug, Error)]
pub enum KnnError {
    #[error("k = {k} exceeds the number of points {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be positive")]
    KZero,
    #[error("C({n}, {k}) = {count:.3e} subsets exceed the enumeration guard of {guard:.1e}")]
    TooManySubsets { n: usize, k: usize, count: f64, guard: f64 },
    #[error("query dimension {got} does not match cloud dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Result of a k-NN distance query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnQueryResult {
    /// The k-th smallest distance from the query to the cloud.
    pub value: f64,
    /// Label of the point realizing the k-th smallest distance.
    pub kth_neighbor: usize,
    /// The k smallest distances with labels, ascending.
    pub sorted_prefix: Vec<(f64, usize)>,
    /// Set when another point sits at the k-th distance within tolerance;
    /// a tie here signals a general-position violation at the query.
    pub tied: bool,
}

fn check_k(cloud: &PointCloud, k: usize) -> Result<(), KnnError> {
    if k == 0 {
        return Err(KnnError::KZero);
    }
    if k > cloud.len() {
        return Err(KnnError::KTooLarge { k, n: cloud.len() });
    }
    Ok(())
}

/// The k-th smallest distance from `x` to the cloud, with the full sorted
/// prefix. Selection over the complete distance list.
pub fn knn_distance(
    cloud: &PointCloud,
    k: usize,
    x: &[f64],
    tol: &ScaledTolerances,
) -> Result<KnnQueryResult, KnnError> {
    check_k(cloud, k)?;
    if x.len() != cloud.dim() {
        return Err(KnnError::DimensionMismatch { expected: cloud.dim(), got: x.len() });
    }
    let mut dists: Vec<(f64, usize)> = cloud
        .iter_points()
        .enumerate()
        .map(|(i, p)| (dist(x, p), cloud.label(i)))
        .collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let value = dists[k - 1].0;
    let kth_neighbor = dists[k - 1].1;
    let band = tol.on_sphere_abs;
    let tied = dists
        .iter()
        .enumerate()
        .any(|(i, (d, _))| i != k - 1 && (d - value).abs() <= band);
    Ok(KnnQueryResult { value, kth_neighbor, sorted_prefix: dists[..k].to_vec(), tied })
}

/// Lean k-th distance used in hot loops (grid sampling, radius bounds).
pub(crate) fn kth_distance(cloud: &PointCloud, k: usize, x: &[f64]) -> f64 {
    debug_assert!(k >= 1 && k <= cloud.len());
    if k <= 8 {
        // Insertion into a small buffer of the k smallest squared distances.
        let mut best = [f64::INFINITY; 8];
        for p in cloud.iter_points() {
            let d = crate::geometry::dist_sq(x, p);
            if d < best[k - 1] {
                let mut i = k - 1;
                while i > 0 && best[i - 1] > d {
                    best[i] = best[i - 1];
                    i -= 1;
                }
                best[i] = d;
            }
        }
        best[k - 1].sqrt()
    } else {
        let mut dists: Vec<f64> =
            cloud.iter_points().map(|p| crate::geometry::dist_sq(x, p)).collect();
        let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
        kth.sqrt()
    }
}

/// Guard on the number of k-subsets `minmax_eval` will enumerate.
pub const MINMAX_SUBSET_GUARD: f64 = 1e6;

fn binomial_f64(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
        if !acc.is_finite() {
            return f64::INFINITY;
        }
    }
    acc
}

/// Evaluates the k-NN distance through its min-max representation: the
/// minimum over all k-subsets of the maximum distance to the subset.
/// An independent route that must agree with [`knn_distance`] everywhere.
pub fn minmax_eval(cloud: &PointCloud, k: usize, x: &[f64]) -> Result<f64, KnnError> {
    check_k(cloud, k)?;
    if x.len() != cloud.dim() {
        return Err(KnnError::DimensionMismatch { expected: cloud.dim(), got: x.len() });
    }
    let n = cloud.len();
    let count = binomial_f64(n, k);
    if count > MINMAX_SUBSET_GUARD {
        return Err(KnnError::TooManySubsets { n, k, count, guard: MINMAX_SUBSET_GUARD });
    }
    let dists: Vec<f64> = cloud.iter_points().map(|p| dist(x, p)).collect();
    let mut best = f64::INFINITY;
    // Lexicographic enumeration of k-subsets of 0..n.
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let max = idx.iter().map(|&i| dists[i]).fold(f64::NEG_INFINITY, f64::max);
        if max < best {
            best = max;
        }
        // Advance to the next combination.
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(best);
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return Ok(best);
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// True iff `y` belongs to the order-k Voronoi cell of the subset `labels`:
/// every subset point is at least as close to `y` as every other point,
/// within tolerance.
pub fn order_k_cell_contains(
    labels: &[usize],
    cloud: &PointCloud,
    y: &[f64],
    tol: &ScaledTolerances,
) -> bool {
    let mut in_subset = vec![false; cloud.len()];
    for &l in labels {
        in_subset[l] = true;
    }
    let mut max_in = f64::NEG_INFINITY;
    let mut min_out = f64::INFINITY;
    for (i, p) in cloud.iter_points().enumerate() {
        let d = dist(y, p);
        if in_subset[i] {
            max_in = max_in.max(d);
        } else {
            min_out = min_out.min(d);
        }
    }
    max_in <= min_out + tol.on_sphere_abs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Tolerances;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_cloud(xs: &[f64]) -> PointCloud {
        PointCloud::new(1, xs.iter().map(|x| vec![*x]).collect()).unwrap()
    }

    fn tols(cloud: &PointCloud) -> ScaledTolerances {
        cloud.scaled_tolerances(&Tolerances::default())
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PointCloud {
        let rows = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        PointCloud::new(dim, rows).unwrap()
    }

    #[test]
    fn knn_line_examples() {
        let cloud = line_cloud(&[0.0, 1.0, 3.0]);
        let t = tols(&cloud);
        let r = knn_distance(&cloud, 2, &[0.0], &t).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.kth_neighbor, 1);
        let r = knn_distance(&cloud, 1, &[0.0], &t).unwrap();
        assert_eq!(r.value, 0.0);
        let r = knn_distance(&cloud, 3, &[0.0], &t).unwrap();
        assert_eq!(r.value, 3.0);
    }

    #[test]
    fn knn_matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cloud = random_cloud(&mut rng, 10, 2);
        let t = tols(&cloud);
        let x = [0.5, 0.5];
        let mut all: Vec<f64> = cloud.iter_points().map(|p| dist(&x, p)).collect();
        all.sort_by(f64::total_cmp);
        let r = knn_distance(&cloud, 3, &x, &t).unwrap();
        assert_eq!(r.value, all[2]);
        assert_eq!(kth_distance(&cloud, 3, &x), all[2]);
    }

    #[test]
    fn kth_distance_selection_path_matches_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let cloud = random_cloud(&mut rng, 30, 2);
        let x = [0.3, 0.8];
        let mut all: Vec<f64> = cloud.iter_points().map(|p| dist(&x, p)).collect();
        all.sort_by(f64::total_cmp);
        // k > 8 exercises the select_nth path.
        assert!((kth_distance(&cloud, 12, &x) - all[11]).abs() < 1e-15);
    }

    #[test]
    fn minmax_line_examples() {
        let cloud = line_cloud(&[0.0, 1.0, 3.0]);
        assert_eq!(minmax_eval(&cloud, 2, &[0.0]).unwrap(), 1.0);
        assert_eq!(minmax_eval(&cloud, 3, &[0.0]).unwrap(), 3.0);
    }

    #[test]
    fn minmax_equals_knn_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cloud = random_cloud(&mut rng, 8, 2);
        let t = tols(&cloud);
        for _ in 0..100 {
            let x = [rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5)];
            let a = knn_distance(&cloud, 3, &x, &t).unwrap().value;
            let b = minmax_eval(&cloud, 3, &x).unwrap();
            assert!((a - b).abs() < 1e-12, "minmax {b} vs knn {a}");
        }
    }

    #[test]
    fn minmax_guard_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cloud = random_cloud(&mut rng, 60, 2);
        assert!(matches!(
            minmax_eval(&cloud, 20, &[0.5, 0.5]),
            Err(KnnError::TooManySubsets { .. })
        ));
    }

    #[test]
    fn order_k_cell_examples() {
        let cloud = line_cloud(&[0.0, 1.0]);
        let t = tols(&cloud);
        assert!(order_k_cell_contains(&[0], &cloud, &[0.4], &t));

        let cloud = line_cloud(&[0.0, 1.0, 2.0]);
        let t = tols(&cloud);
        assert!(order_k_cell_contains(&[0, 1], &cloud, &[0.5], &t));
        assert!(!order_k_cell_contains(&[0, 2], &cloud, &[0.5], &t));
    }

    #[test]
    fn tie_flag_fires_on_equidistant_query() {
        let cloud = line_cloud(&[0.0, 2.0, 5.0]);
        let t = tols(&cloud);
        let r = knn_distance(&cloud, 1, &[1.0], &t).unwrap();
        assert!(r.tied);
        let r = knn_distance(&cloud, 1, &[0.9], &t).unwrap();
        assert!(!r.tied);
    }

    #[test]
    fn k_too_large_is_rejected() {
        let cloud = line_cloud(&[0.0, 1.0]);
        let t = tols(&cloud);
        assert!(matches!(
            knn_distance(&cloud, 3, &[0.0], &t),
            Err(KnnError::KTooLarge { .. })
        ));
    }

    proptest! {
        // Monotone in k, 1-Lipschitz in x, and the sub-level identity
        // against a direct count of points within radius.
        #[test]
        fn knn_invariants(
            seed in 0u64..500,
            k in 1usize..5,
            r in 0.0f64..1.5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cloud = random_cloud(&mut rng, 12, 2);
            let t = cloud.scaled_tolerances(&Tolerances::default());
            let x = [rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2)];
            let y = [rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2)];
            let dk = knn_distance(&cloud, k, &x, &t).unwrap().value;
            let dk1 = knn_distance(&cloud, k + 1, &x, &t).unwrap().value;
            prop_assert!(dk <= dk1 + 1e-15);
            let dy = knn_distance(&cloud, k, &y, &t).unwrap().value;
            prop_assert!((dk - dy).abs() <= dist(&x, &y) + 1e-12);
            // x is r-covered k-fold iff at least k points lie within r.
            let count = cloud.iter_points().filter(|p| dist(&x, p) <= r).count();
            prop_assert_eq!(dk <= r, count >= k);
        }
    }
}
