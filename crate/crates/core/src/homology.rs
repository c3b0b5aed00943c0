//! Small simplicial complexes with Betti numbers over GF(2).
//!
//! Used to build the auxiliary complex of a critical point both from the
//! closed-form skeleton description and from raw order-k Voronoi membership
//! data, and to compare the two.

use std::collections::BTreeSet;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critical::CriticalPoint;
use crate::geometry::{PointCloud, ScaledTolerances};
use crate::knn::order_k_cell_contains;

/// Hard cap on complex size for the dense GF(2) elimination.
pub const SIMPLEX_GUARD: usize = 100_000;

#[derive(Debug, Error)]
pub enum HomologyError {
    #[error("complex has {simplices} simplices, above the limit of {SIMPLEX_GUARD}")]
    TooLarge { simplices: usize },
}

/// A finite simplicial complex: a set of vertex subsets closed under faces.
/// Simplices are stored as sorted vertex lists.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SimplicialComplex {
    simplices: BTreeSet<Vec<usize>>,
}

impl SimplicialComplex {
    pub fn empty() -> Self {
        SimplicialComplex::default()
    }

    /// Inserts a simplex together with all of its faces.
    pub fn insert_closure(&mut self, simplex: &[usize]) {
        let mut vertices: Vec<usize> = simplex.to_vec();
        vertices.sort_unstable();
        vertices.dedup();
        for size in 1..=vertices.len() {
            for face in vertices.iter().copied().combinations(size) {
                self.simplices.insert(face);
            }
        }
    }

    pub fn simplices(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.simplices.iter()
    }

    pub fn simplex_count(&self) -> usize {
        self.simplices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simplices.is_empty()
    }

    pub fn contains(&self, simplex: &[usize]) -> bool {
        let mut v = simplex.to_vec();
        v.sort_unstable();
        self.simplices.contains(&v)
    }

    /// Dimension of the complex, `None` when empty.
    pub fn dim(&self) -> Option<usize> {
        self.simplices.iter().map(|s| s.len() - 1).max()
    }

    pub fn vertices(&self) -> Vec<usize> {
        self.simplices.iter().filter(|s| s.len() == 1).map(|s| s[0]).collect()
    }

    /// Alternating sum of simplex counts by dimension.
    pub fn euler_characteristic(&self) -> i64 {
        self.simplices
            .iter()
            .map(|s| if (s.len() - 1) % 2 == 0 { 1i64 } else { -1i64 })
            .sum()
    }
}

/// Betti numbers `beta_0..beta_m` of a complex over GF(2).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BettiVector(pub Vec<usize>);

impl std::fmt::Display for BettiVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({})", self.0.iter().map(|b| b.to_string()).join(", "))
    }
}

/// The `skeleton_dim`-skeleton of the full simplex on vertices `1..=n`:
/// every subset of size at most `skeleton_dim + 1`.
pub fn skeleton_complex(n_vertices: usize, skeleton_dim: usize) -> SimplicialComplex {
    assert!(
        skeleton_dim + 1 <= n_vertices,
        "skeleton dimension {skeleton_dim} too large for {n_vertices} vertices"
    );
    let mut complex = SimplicialComplex::empty();
    for size in 1..=skeleton_dim + 1 {
        for subset in (1..=n_vertices).combinations(size) {
            complex.simplices.insert(subset);
        }
    }
    complex
}

/// GF(2) rank of a boundary matrix given as column bitsets.
fn gf2_rank(mut columns: Vec<Vec<u64>>) -> usize {
    let mut pivots: Vec<(usize, Vec<u64>)> = Vec::new();
    let mut rank = 0;
    'cols: for col in columns.iter_mut() {
        loop {
            let Some(low) = lowest_unset_scan(col) else {
                continue 'cols;
            };
            if let Some((_, pivot)) = pivots.iter().find(|(l, _)| *l == low) {
                for (c, p) in col.iter_mut().zip(pivot) {
                    *c ^= p;
                }
            } else {
                pivots.push((low, col.clone()));
                rank += 1;
                continue 'cols;
            }
        }
    }
    rank
}

fn lowest_unset_scan(col: &[u64]) -> Option<usize> {
    for (w, word) in col.iter().enumerate().rev() {
        if *word != 0 {
            return Some(w * 64 + 63 - word.leading_zeros() as usize);
        }
    }
    None
}

/// Betti numbers over GF(2) by dense boundary-matrix elimination.
pub fn betti_gf2(complex: &SimplicialComplex) -> Result<BettiVector, HomologyError> {
    let total = complex.simplex_count();
    if total > SIMPLEX_GUARD {
        return Err(HomologyError::TooLarge { simplices: total });
    }
    if total == 0 {
        return Ok(BettiVector(vec![]));
    }
    let top_dim = complex.dim().unwrap();

    // Index simplices per dimension.
    let mut by_dim: Vec<Vec<&Vec<usize>>> = vec![Vec::new(); top_dim + 1];
    for s in complex.simplices() {
        by_dim[s.len() - 1].push(s);
    }
    let mut id_maps: Vec<std::collections::BTreeMap<&Vec<usize>, usize>> = Vec::new();
    for dim_list in &by_dim {
        id_maps.push(dim_list.iter().enumerate().map(|(i, s)| (*s, i)).collect());
    }

    // rank of the boundary map from dimension q to q-1, for q = 1..=top_dim.
    let mut ranks = vec![0usize; top_dim + 2];
    for q in 1..=top_dim {
        let rows = by_dim[q - 1].len();
        let words = rows.div_ceil(64);
        let mut columns: Vec<Vec<u64>> = Vec::with_capacity(by_dim[q].len());
        let mut face = Vec::with_capacity(q);
        for s in &by_dim[q] {
            let mut col = vec![0u64; words];
            for drop in 0..s.len() {
                face.clear();
                face.extend(s.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, v)| *v));
                let row = id_maps[q - 1][&face];
                col[row / 64] |= 1u64 << (row % 64);
            }
            columns.push(col);
        }
        ranks[q] = gf2_rank(columns);
    }

    let betti = (0..=top_dim)
        .map(|q| by_dim[q].len() - ranks[q] - ranks[q + 1])
        .collect();
    Ok(BettiVector(betti))
}

/// One candidate order-k subset at a critical point: the interior points
/// plus a choice of boundary points, with its cell-membership verdict and
/// the complement of its boundary part (1-based positions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliarySubset {
    pub members: Vec<usize>,
    pub in_cell: bool,
    pub nbar: Vec<usize>,
}

/// The auxiliary complex of a critical point built from order-k Voronoi
/// membership data. Vertices are 1-based positions into `boundary`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryComplex {
    pub boundary: Vec<usize>,
    pub subsets: Vec<AuxiliarySubset>,
    pub complex: SimplicialComplex,
}

/// Builds the auxiliary complex of `cp` from data: enumerate the k-subsets
/// containing the interior points, keep those whose order-k cell contains
/// the center, and generate the complex from the complements of their
/// boundary parts.
pub fn auxiliary_complex_from_data(
    cp: &CriticalPoint,
    cloud: &PointCloud,
    k: usize,
    tol: &ScaledTolerances,
) -> AuxiliaryComplex {
    let nb = cp.boundary.len();
    let t = k - cp.interior.len();
    debug_assert!(t >= 1 && t <= nb);
    let mut subsets = Vec::new();
    let mut complex = SimplicialComplex::empty();
    for chosen in (0..nb).combinations(t) {
        let mut members: Vec<usize> = cp.interior.clone();
        members.extend(chosen.iter().map(|&pos| cp.boundary[pos]));
        members.sort_unstable();
        let in_cell = order_k_cell_contains(&members, cloud, &cp.center, tol);
        let nbar: Vec<usize> =
            (0..nb).filter(|pos| !chosen.contains(pos)).map(|pos| pos + 1).collect();
        if in_cell && !nbar.is_empty() {
            complex.insert_closure(&nbar);
        }
        subsets.push(AuxiliarySubset { members, in_cell, nbar });
    }
    AuxiliaryComplex { boundary: cp.boundary.clone(), subsets, complex }
}

/// The closed-form prediction for the auxiliary complex of a critical
/// point: the `(index - 1)`-skeleton on its boundary points, empty for
/// local minima.
pub fn expected_auxiliary_complex(cp: &CriticalPoint) -> SimplicialComplex {
    if cp.index == 0 {
        SimplicialComplex::empty()
    } else {
        skeleton_complex(cp.boundary.len(), cp.index - 1)
    }
}
