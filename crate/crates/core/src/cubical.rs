//! Cubical grid oracle for sub-level sets of the k-NN distance in the plane.
//!
//! Rasterizes the k-fold cover on a cell grid, computes Betti numbers of the
//! covered region (components by union-find over edge-adjacent cells, first
//! homology from the Euler characteristic of the cell complex), and compares
//! the homology just below and just above each critical value against the
//! predicted budget. Every comparison is run at two resolutions; agreement
//! is the stability certificate, disagreement is reported, never patched.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critical::CriticalPoint;
use crate::geometry::{BoundingBox, PointCloud, ScaledTolerances};
use crate::homology::BettiVector;
use crate::knn::{kth_distance, KnnError};

/// Smallest admissible grid resolution (cells per axis).
pub const MIN_RESOLUTION: usize = 64;

#[derive(Debug, Error)]
pub enum CubicalError {
    #[error("grid resolution {resolution} is below the minimum of {MIN_RESOLUTION}")]
    ResolutionTooLow { resolution: usize },
    #[error("the cubical oracle is restricted to dimension 2, got {dim}")]
    DimensionNot2 { dim: usize },
    #[error(transparent)]
    Knn(#[from] KnnError),
}

/// The k-NN distance sampled at the centers of a square cell grid.
#[derive(Debug, Clone)]
pub struct GridField {
    pub bounds: BoundingBox,
    pub resolution: usize,
    /// Row-major, `values[iy * resolution + ix]`.
    pub values: Vec<f64>,
}

/// Samples the k-NN distance at every cell center of a `resolution` by
/// `resolution` grid over `bounds`.
pub fn sample_grid(
    cloud: &PointCloud,
    k: usize,
    bounds: &BoundingBox,
    resolution: usize,
) -> Result<GridField, CubicalError> {
    if cloud.dim() != 2 {
        return Err(CubicalError::DimensionNot2 { dim: cloud.dim() });
    }
    if resolution < MIN_RESOLUTION {
        return Err(CubicalError::ResolutionTooLow { resolution });
    }
    if k == 0 || k > cloud.len() {
        return Err(KnnError::KTooLarge { k, n: cloud.len() }.into());
    }
    let res = resolution;
    let sx = (bounds.hi[0] - bounds.lo[0]) / res as f64;
    let sy = (bounds.hi[1] - bounds.lo[1]) / res as f64;
    let mut values = vec![0.0f64; res * res];
    values.par_chunks_mut(res).enumerate().for_each(|(iy, row)| {
        let y = bounds.lo[1] + (iy as f64 + 0.5) * sy;
        for (ix, v) in row.iter_mut().enumerate() {
            let x = bounds.lo[0] + (ix as f64 + 0.5) * sx;
            *v = kth_distance(cloud, k, &[x, y]);
        }
    });
    Ok(GridField { bounds: bounds.clone(), resolution: res, values })
}

/// Bit-packed boolean grid of covered cells.
struct BitMask {
    res: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl BitMask {
    fn zeroed(res: usize) -> BitMask {
        let words_per_row = res.div_ceil(64);
        BitMask { res, words_per_row, bits: vec![0u64; words_per_row * res] }
    }

    fn row(&self, y: usize) -> &[u64] {
        &self.bits[y * self.words_per_row..(y + 1) * self.words_per_row]
    }
}

fn mask_from_field(field: &GridField, r: f64) -> BitMask {
    let res = field.resolution;
    let mut mask = BitMask::zeroed(res);
    for y in 0..res {
        let row = &field.values[y * res..(y + 1) * res];
        let out = &mut mask.bits[y * mask.words_per_row..(y + 1) * mask.words_per_row];
        for (x, v) in row.iter().enumerate() {
            if *v <= r {
                out[x / 64] |= 1u64 << (x % 64);
            }
        }
    }
    mask
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> UnionFind {
        UnionFind { parent: Vec::new() }
    }

    fn add(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[ra as usize] = rb;
        }
    }

    fn roots(&mut self) -> usize {
        (0..self.parent.len() as u32).filter(|&i| self.find(i) == i).count()
    }
}

/// Maximal runs of set bits in a packed row, as half-open column intervals.
fn extract_runs(row: &[u64], out: &mut Vec<(u32, u32)>) {
    out.clear();
    for (w, &word) in row.iter().enumerate() {
        let mut x = word;
        let mut pos = (w * 64) as u32;
        while x != 0 {
            let tz = x.trailing_zeros();
            x >>= tz;
            pos += tz;
            let ones = (!x).trailing_zeros();
            let start = pos;
            let end = pos + ones;
            if ones >= 64 {
                x = 0;
            } else {
                x >>= ones;
            }
            pos = end;
            match out.last_mut() {
                Some(last) if last.1 == start => last.1 = end,
                _ => out.push((start, end)),
            }
        }
    }
}

/// OR of a row with its one-cell left shift, into a buffer wide enough for
/// `res + 1` lattice columns.
fn or_shl1(row: &[u64], out: &mut [u64]) {
    let mut carry = 0u64;
    for (w, &word) in row.iter().enumerate() {
        out[w] = word | (word << 1) | carry;
        carry = word >> 63;
    }
    if out.len() > row.len() {
        out[row.len()] = carry;
    }
}

fn popcount(words: &[u64]) -> u64 {
    words.iter().map(|w| w.count_ones() as u64).sum()
}

fn shl1_into(row: &[u64], out: &mut [u64]) {
    let mut carry = 0u64;
    for (w, &word) in row.iter().enumerate() {
        out[w] = (word << 1) | carry;
        carry = word >> 63;
    }
}

fn shr1_into(row: &[u64], out: &mut [u64]) {
    for w in 0..row.len() {
        let carry = if w + 1 < row.len() { row[w + 1] << 63 } else { 0 };
        out[w] = (row[w] >> 1) | carry;
    }
}

fn horizontal_spread(row: &[u64], tmp: &mut [u64], out: &mut [u64]) {
    shl1_into(row, out);
    shr1_into(row, tmp);
    for w in 0..row.len() {
        out[w] |= row[w] | tmp[w];
    }
}

/// Morphological closing with the 8-neighborhood: dilation then erosion by
/// one cell. Bridges gaps of up to two cells, which at a safely bracketed
/// threshold can only be rasterization artifacts: any genuinely separate
/// features would meet at a critical value excluded from the bracket.
fn close8(mask: &BitMask) -> BitMask {
    let res = mask.res;
    let words = mask.words_per_row;
    let top_mask = if res % 64 == 0 { u64::MAX } else { (1u64 << (res % 64)) - 1 };

    // Horizontal spreads of every row, then vertical OR of three rows.
    let mut spread = vec![0u64; words * res];
    let mut tmp = vec![0u64; words];
    for y in 0..res {
        let (a, b) = (y * words, (y + 1) * words);
        horizontal_spread(&mask.bits[a..b], &mut tmp, &mut spread[a..b]);
    }
    let mut dilated = BitMask::zeroed(res);
    for y in 0..res {
        let out = &mut dilated.bits[y * words..(y + 1) * words];
        for w in 0..words {
            let mut v = spread[y * words + w];
            if y > 0 {
                v |= spread[(y - 1) * words + w];
            }
            if y + 1 < res {
                v |= spread[(y + 1) * words + w];
            }
            out[w] = v;
        }
        out[words - 1] &= top_mask;
    }

    // Erosion: AND of the 3x3 neighborhood, borders erode away.
    let mut shrunk = vec![0u64; words * res];
    let mut tmp2 = vec![0u64; words];
    for y in 0..res {
        let (a, b) = (y * words, (y + 1) * words);
        let row = &dilated.bits[a..b];
        shl1_into(row, &mut tmp);
        shr1_into(row, &mut tmp2);
        for w in 0..words {
            shrunk[a + w] = row[w] & tmp[w] & tmp2[w];
        }
        // Past the last column the shift brings in zeros; keep the frame
        // empty instead of wrapping.
        shrunk[b - 1] &= top_mask >> 1;
    }
    let mut eroded = BitMask::zeroed(res);
    for y in 0..res {
        if y == 0 || y + 1 == res {
            continue;
        }
        let out = &mut eroded.bits[y * words..(y + 1) * words];
        for w in 0..words {
            out[w] = shrunk[y * words + w]
                & shrunk[(y - 1) * words + w]
                & shrunk[(y + 1) * words + w];
        }
    }
    eroded
}

/// Betti numbers of the covered region: components by union-find over
/// edge-adjacent cells, then `beta_1 = beta_0 - chi` with `chi = V - E + F`
/// over the cell complex (shared faces identified). Solid planar regions
/// have no second homology.
fn mask_betti(mask: &BitMask) -> BettiVector {
    let res = mask.res;
    let words = mask.words_per_row;

    let mut uf = UnionFind::new();
    let mut prev: Vec<(u32, u32, u32)> = Vec::new();
    let mut runs: Vec<(u32, u32)> = Vec::new();
    for y in 0..res {
        extract_runs(mask.row(y), &mut runs);
        let mut cur: Vec<(u32, u32, u32)> = Vec::with_capacity(runs.len());
        for &(s, e) in runs.iter() {
            cur.push((s, e, uf.add()));
        }
        let mut pi = 0usize;
        for &(s, e, id) in &cur {
            while pi < prev.len() && prev[pi].1 <= s {
                pi += 1;
            }
            let mut pj = pi;
            while pj < prev.len() && prev[pj].0 < e {
                uf.union(id, prev[pj].2);
                pj += 1;
            }
        }
        prev = cur;
    }
    let beta0 = uf.roots();

    // chi = V - E + F by streaming popcounts over lattice rows. A lattice
    // vertex whose four incident cells form a checkerboard joins two cells
    // that edge-adjacency keeps apart; counting it once per locally
    // connected pair keeps chi consistent with the union-find components,
    // otherwise every near-tangency of two covered fronts mints a phantom
    // 1-cycle.
    let wide = words + 1;
    let mut buf_a = vec![0u64; wide];
    let mut buf_b = vec![0u64; wide];
    let zero_row = vec![0u64; words];
    let mut v_count = 0u64;
    let mut eh_count = 0u64;
    let mut ev_count = 0u64;
    let mut f_count = 0u64;
    for y in 0..=res {
        let prev_row = if y == 0 { &zero_row[..] } else { mask.row(y - 1) };
        let cur_row = if y == res { &zero_row[..] } else { mask.row(y) };
        or_shl1(prev_row, &mut buf_a);
        or_shl1(cur_row, &mut buf_b);
        for w in 0..wide {
            v_count += (buf_a[w] | buf_b[w]).count_ones() as u64;
        }
        let mut carry_p = 0u64;
        let mut carry_c = 0u64;
        for w in 0..words {
            eh_count += (prev_row[w] | cur_row[w]).count_ones() as u64;
            // Checkerboard vertices: exactly the two diagonal cells covered.
            let nw = (prev_row[w] << 1) | carry_p;
            let sw = (cur_row[w] << 1) | carry_c;
            let ne = prev_row[w];
            let se = cur_row[w];
            carry_p = prev_row[w] >> 63;
            carry_c = cur_row[w] >> 63;
            let cb = (nw & se & !ne & !sw) | (ne & sw & !nw & !se);
            v_count += cb.count_ones() as u64;
        }
        if y < res {
            ev_count += popcount(&buf_b);
            f_count += popcount(cur_row);
        }
    }
    let chi = v_count as i64 - (eh_count + ev_count) as i64 + f_count as i64;
    let beta1 = beta0 as i64 - chi;
    debug_assert!(beta1 >= 0, "beta_1 = {beta1} from beta_0 = {beta0}, chi = {chi}");
    BettiVector(vec![beta0, beta1.max(0) as usize])
}

/// Betti numbers of the rasterized sub-level set at radius `r`.
pub fn betti_sublevel(field: &GridField, r: f64) -> BettiVector {
    mask_betti(&mask_from_field(field, r))
}

/// Betti numbers of the sub-level set after morphological closing, which
/// removes single-cell rasterization artifacts (fragmented thin slivers,
/// pockets pinched off at concave corners). Safe whenever genuine features
/// at `r` are wider than two cells.
pub fn betti_sublevel_regularized(field: &GridField, r: f64) -> BettiVector {
    mask_betti(&close8(&mask_from_field(field, r)))
}

/// One member of a critical-value record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiltrationMember {
    /// Position of the critical point in the enumeration handed in.
    pub rank: usize,
    pub radius: f64,
    pub index: usize,
    pub delta: u64,
}

/// Homology changes measured across one critical value, or across a
/// minimal cluster of critical values the grid cannot separate.
///
/// Generic Morse inputs with well-spaced values give one member per record.
/// The zero-radius minima of the plain distance function share the value 0
/// and are always grouped. Values closer together than the finest grid can
/// bracket are verified jointly: the telescoped homology changes over the
/// cluster interval must decompose into per-member birth/death splits of
/// the predicted budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiltrationRecord {
    /// Mean critical value of the members.
    pub radius: f64,
    pub epsilon: f64,
    /// Betti numbers are compared between these two filtration levels,
    /// `min radius - epsilon` and `max radius + epsilon`.
    pub threshold_low: f64,
    pub threshold_high: f64,
    /// Coarse and fine grid resolutions (the fine grid is twice the coarse).
    pub resolutions: [usize; 2],
    pub members: Vec<FiltrationMember>,
    pub delta_budget: u64,
    /// Betti numbers at the two thresholds on the fine grid.
    pub betti_before: BettiVector,
    pub betti_after: BettiVector,
    /// Same, on the coarse grid; disagreement with the fine grid marks the
    /// record unstable.
    pub coarse_betti_before: BettiVector,
    pub coarse_betti_after: BettiVector,
    /// Total births and deaths attributed to the members. Their sum equals
    /// the budget exactly when the record passes.
    pub delta_plus: i64,
    pub delta_minus: i64,
    pub stable: bool,
    pub pass: bool,
}

/// Decides whether the measured per-dimension changes can be explained by
/// the members: every unit of a member's budget is a birth in its index
/// dimension or a death one below, minima only ever give births, and the
/// plane has no second homology. Returns the attributed (births, deaths)
/// totals when a split exists.
fn attribute_changes(budget_by_index: &[u64; 3], net: &[i64; 2]) -> Option<(u64, u64)> {
    let s = budget_by_index;
    // b[d] = births in dimension d; deaths in d come from index d+1 budgets.
    // In the plane beta_2 = 0 forces b[2] = 0, so the chain solves uniquely.
    let b1 = net[1] + s[2] as i64;
    if b1 < 0 || b1 > s[1] as i64 {
        return None;
    }
    let b0 = net[0] + s[1] as i64 - b1;
    if b0 != s[0] as i64 {
        return None;
    }
    let births = s[0] as i64 + b1;
    let deaths = (s[1] as i64 - b1) + s[2] as i64;
    Some((births as u64, deaths as u64))
}

fn min_pairwise_distance(cloud: &PointCloud) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..cloud.len() {
        for j in i + 1..cloud.len() {
            best = best.min(crate::geometry::dist(cloud.point(i), cloud.point(j)));
        }
    }
    best
}

/// Fine-grid cap for ordinary records.
const CLUSTER_CAP: usize = 2048;
/// Fine-grid cap for the zero-radius record, whose tiny disks may need
/// finer cells than any positive value.
const ZERO_CAP: usize = 4096;

/// Verifies the homology effect of the critical values of an enumeration by
/// comparing grid Betti numbers just below and just above each value.
///
/// `epsilon` overrides the default of 0.4 times the gap to the adjacent
/// critical values. Each record is computed on a coarse/fine grid pair
/// starting at (`resolution`, `2 * resolution`) and doubled until the cells
/// are small enough to bracket the value against its neighbors; values
/// closer together than the capped grid can separate are verified as one
/// cluster. Coarse/fine agreement is the stability certificate.
pub fn homology_change_report(
    cloud: &PointCloud,
    k: usize,
    crits: &[CriticalPoint],
    epsilon: Option<f64>,
    resolution: usize,
    tol: &ScaledTolerances,
) -> Result<Vec<FiltrationRecord>, CubicalError> {
    if cloud.dim() != 2 {
        return Err(CubicalError::DimensionNot2 { dim: cloud.dim() });
    }
    if resolution < MIN_RESOLUTION {
        return Err(CubicalError::ResolutionTooLow { resolution });
    }
    if crits.is_empty() {
        return Ok(Vec::new());
    }

    let mut order: Vec<usize> = (0..crits.len()).collect();
    order.sort_by(|&a, &b| crits[a].radius.total_cmp(&crits[b].radius));
    let r_max = crits[*order.last().unwrap()].radius;

    // Square bounds covering the cloud padded by the largest radius any
    // record can evaluate at (epsilon never exceeds 0.4 of a value gap, so
    // 1.4 * r_max bounds every threshold).
    let bbox = cloud.bounding_box();
    let pad = 1.4 * r_max * 1.02 + epsilon.unwrap_or(0.0) + 1e-9 * tol.scale;
    let side = bbox.side_lengths().iter().fold(0.0f64, |a, b| a.max(*b)) + 2.0 * pad;
    let cx = 0.5 * (bbox.lo[0] + bbox.hi[0]);
    let cy = 0.5 * (bbox.lo[1] + bbox.hi[1]);
    let bounds = BoundingBox::new(
        vec![cx - side / 2.0, cy - side / 2.0],
        vec![cx + side / 2.0, cy + side / 2.0],
    );

    // Exact-tie groups first (the zero-radius minima in particular), then
    // merge neighbors whose gap the capped grid cannot bracket: a grid with
    // cells of size h only locates filtration events to about 0.7 h on the
    // value axis.
    let gap_tol = tol.on_sphere_abs;
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for &rank in &order {
        match clusters.last_mut() {
            Some(g) if crits[rank].radius - crits[*g.last().unwrap()].radius <= gap_tol => {
                g.push(rank)
            }
            _ => clusters.push(vec![rank]),
        }
    }
    let min_resolvable_gap = 5.0 * side / CLUSTER_CAP as f64;
    let mut merged: Vec<Vec<usize>> = Vec::new();
    for group in clusters {
        match merged.last_mut() {
            Some(prev)
                if crits[group[0]].radius - crits[*prev.last().unwrap()].radius
                    < min_resolvable_gap =>
            {
                prev.extend(group)
            }
            _ => merged.push(group),
        }
    }
    let clusters = merged;

    let lows: Vec<f64> = clusters.iter().map(|g| crits[g[0]].radius).collect();
    let highs: Vec<f64> = clusters.iter().map(|g| crits[*g.last().unwrap()].radius).collect();

    let mut dmin_cache: Option<f64> = None;
    let mut field_cache: HashMap<usize, GridField> = HashMap::new();
    let mut records = Vec::with_capacity(clusters.len());
    for (gi, group) in clusters.iter().enumerate() {
        let zero_cluster = highs[gi] <= gap_tol;
        let gap_below = if gi == 0 {
            if zero_cluster {
                f64::INFINITY
            } else {
                lows[gi]
            }
        } else {
            lows[gi] - highs[gi - 1]
        };
        let gap_above =
            if gi + 1 < clusters.len() { lows[gi + 1] - highs[gi] } else { f64::INFINITY };
        let gap = gap_below.min(gap_above);
        let eps = epsilon.unwrap_or(if gap.is_finite() { 0.4 * gap } else { 0.05 * tol.scale });

        // Cells must locate the bracketing thresholds on the value axis;
        // for the zero record the epsilon-disks must also neither vanish
        // nor merge across the closest pair.
        let mut h_req = 0.5 * eps;
        if zero_cluster {
            let dmin = *dmin_cache.get_or_insert_with(|| min_pairwise_distance(cloud));
            h_req = h_req.min(0.4 * dmin);
        }
        let cap = if zero_cluster { ZERO_CAP } else { CLUSTER_CAP };
        let mut fine = 2 * resolution;
        while side / fine as f64 > h_req && fine < cap {
            fine *= 2;
        }
        let coarse = fine / 2;

        let threshold_low = lows[gi] - eps;
        let threshold_high = highs[gi] + eps;
        // Measurements go through the morphological closing: thin slivers
        // and corner pockets of the raster flicker with the lattice phase,
        // while every genuine feature inside a safe bracket is wider than
        // two cells (a thinner one would meet a critical value excluded
        // from the bracket).
        let mut betti_at = |res: usize, r: f64| -> Result<BettiVector, CubicalError> {
            if !field_cache.contains_key(&res) {
                let field = sample_grid(cloud, k, &bounds, res)?;
                field_cache.insert(res, field);
            }
            Ok(betti_sublevel_regularized(&field_cache[&res], r))
        };
        let coarse_before = betti_at(coarse, threshold_low)?;
        let coarse_after = betti_at(coarse, threshold_high)?;
        let fine_before = betti_at(fine, threshold_low)?;
        let fine_after = betti_at(fine, threshold_high)?;
        let stable = coarse_before == fine_before && coarse_after == fine_after;

        let members: Vec<FiltrationMember> = group
            .iter()
            .map(|&rank| FiltrationMember {
                rank,
                radius: crits[rank].radius,
                index: crits[rank].index,
                delta: crits[rank].delta,
            })
            .collect();
        let budget: u64 = members.iter().map(|m| m.delta).sum();
        let mut budget_by_index = [0u64; 3];
        for m in &members {
            budget_by_index[m.index.min(2)] += m.delta;
        }
        let net = [
            fine_after.0[0] as i64 - fine_before.0[0] as i64,
            fine_after.0[1] as i64 - fine_before.0[1] as i64,
        ];
        let (delta_plus, delta_minus, feasible) =
            match attribute_changes(&budget_by_index, &net) {
                Some((births, deaths)) => (births as i64, deaths as i64, true),
                None => {
                    (net.iter().map(|d| (*d).max(0)).sum(), net.iter().map(|d| (-*d).max(0)).sum(), false)
                }
            };
        let pass = stable && feasible;

        records.push(FiltrationRecord {
            radius: members.iter().map(|m| m.radius).sum::<f64>() / members.len() as f64,
            epsilon: eps,
            threshold_low,
            threshold_high,
            resolutions: [coarse, fine],
            members,
            delta_budget: budget,
            betti_before: fine_before,
            betti_after: fine_after,
            coarse_betti_before: coarse_before,
            coarse_betti_after: coarse_after,
            delta_plus,
            delta_minus,
            stable,
            pass,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::enumerate_critical_points;
    use crate::geometry::Tolerances;
    use crate::knn::knn_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud2(rows: &[[f64; 2]]) -> PointCloud {
        PointCloud::new(2, rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn tols(cloud: &PointCloud) -> ScaledTolerances {
        cloud.scaled_tolerances(&Tolerances::default())
    }

    #[test]
    fn grid_values_match_direct_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<[f64; 2]> =
            (0..10).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
        let cloud = cloud2(&rows);
        let t = tols(&cloud);
        let bounds = BoundingBox::new(vec![-0.2, -0.2], vec![1.2, 1.2]);
        let field = sample_grid(&cloud, 3, &bounds, 64).unwrap();
        for _ in 0..50 {
            let ix = rng.gen_range(0..64usize);
            let iy = rng.gen_range(0..64usize);
            let x = bounds.lo[0] + (ix as f64 + 0.5) * (bounds.hi[0] - bounds.lo[0]) / 64.0;
            let y = bounds.lo[1] + (iy as f64 + 0.5) * (bounds.hi[1] - bounds.lo[1]) / 64.0;
            let direct = knn_distance(&cloud, 3, &[x, y], &t).unwrap().value;
            assert_eq!(field.values[iy * 64 + ix], direct);
        }
    }

    #[test]
    fn betti_of_empty_and_full_levels() {
        let cloud = cloud2(&[[0.3, 0.4], [0.7, 0.6]]);
        let bounds = BoundingBox::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let field = sample_grid(&cloud, 1, &bounds, 64).unwrap();
        assert_eq!(betti_sublevel(&field, -1.0).0, vec![0, 0]);
        assert_eq!(betti_sublevel(&field, 10.0).0, vec![1, 0]);
    }

    #[test]
    fn three_balls_bound_a_hole() {
        // Equilateral triple with side 1: the disks merge pairwise at
        // r = 0.5 and the central hole fills at the circumradius 0.577.
        let h = 3.0f64.sqrt() / 2.0;
        let cloud = cloud2(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]);
        let bounds = BoundingBox::new(vec![-0.8, -0.8], vec![1.8, 1.8]);
        let field = sample_grid(&cloud, 1, &bounds, 512).unwrap();
        assert_eq!(betti_sublevel(&field, 0.3).0, vec![3, 0]);
        assert_eq!(betti_sublevel(&field, 0.54).0, vec![1, 1]);
        assert_eq!(betti_sublevel(&field, 0.6).0, vec![1, 0]);
    }

    #[test]
    fn pair_first_coverage_record() {
        let cloud = cloud2(&[[0.0, 0.0], [1.0, 0.0]]);
        let t = tols(&cloud);
        let crits = enumerate_critical_points(&cloud, 2, None, &t).unwrap();
        assert_eq!(crits.len(), 1);
        let records = homology_change_report(&cloud, 2, &crits, None, 64, &t).unwrap();
        assert_eq!(records.len(), 1);
        let rec = &records[0];
        assert_eq!(rec.betti_before.0, vec![0, 0]);
        assert_eq!(rec.betti_after.0, vec![1, 0]);
        assert_eq!(rec.delta_plus, 1);
        assert_eq!(rec.delta_minus, 0);
        assert!(rec.pass, "record: {rec:?}");
    }

    #[test]
    fn betti_constant_between_critical_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<[f64; 2]> =
            (0..12).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
        let cloud = cloud2(&rows);
        let t = tols(&cloud);
        let crits = enumerate_critical_points(&cloud, 2, None, &t).unwrap();
        let radii: Vec<f64> = crits.iter().map(|c| c.radius).collect();
        let bounds = BoundingBox::new(vec![-0.8, -0.8], vec![1.8, 1.8]);
        let field = sample_grid(&cloud, 2, &bounds, 512).unwrap();
        for w in radii.windows(2).take(6) {
            let (lo, hi) = (w[0], w[1]);
            if hi - lo < 1e-6 {
                continue;
            }
            let probes = [lo + 0.25 * (hi - lo), lo + 0.5 * (hi - lo), lo + 0.75 * (hi - lo)];
            let first = betti_sublevel(&field, probes[0]);
            for p in &probes[1..] {
                assert_eq!(betti_sublevel(&field, *p), first, "between {lo} and {hi}");
            }
        }
    }

    #[test]
    fn coverage_is_monotone_in_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<[f64; 2]> =
            (0..8).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
        let cloud = cloud2(&rows);
        let bounds = BoundingBox::new(vec![-0.5, -0.5], vec![1.5, 1.5]);
        let field = sample_grid(&cloud, 2, &bounds, 64).unwrap();
        let mut last = 0usize;
        for step in 0..10 {
            let r = 0.05 * step as f64;
            let covered = field.values.iter().filter(|v| **v <= r).count();
            assert!(covered >= last);
            last = covered;
        }
    }

    #[test]
    fn zero_radius_group_counts_all_minima() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows: Vec<[f64; 2]> =
            (0..10).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
        let cloud = cloud2(&rows);
        let t = tols(&cloud);
        let crits = enumerate_critical_points(&cloud, 1, None, &t).unwrap();
        let records = homology_change_report(&cloud, 1, &crits, None, 128, &t).unwrap();
        let zero = &records[0];
        assert_eq!(zero.members.len(), 10);
        assert_eq!(zero.delta_budget, 10);
        assert_eq!(zero.delta_plus, 10);
        assert!(zero.pass, "zero record: {zero:?}");
    }

    #[test]
    fn resolution_guard() {
        let cloud = cloud2(&[[0.0, 0.0], [1.0, 0.0]]);
        let bounds = BoundingBox::new(vec![-1.0, -1.0], vec![2.0, 2.0]);
        assert!(matches!(
            sample_grid(&cloud, 1, &bounds, 32),
            Err(CubicalError::ResolutionTooLow { .. })
        ));
    }

    #[test]
    fn total_change_bookkeeping() {
        // Summed over all records, the per-dimension changes telescope from
        // the empty set to a single contractible blob.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let rows: Vec<[f64; 2]> =
            (0..12).map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
        let cloud = cloud2(&rows);
        let t = tols(&cloud);
        for k in [1usize, 2] {
            let crits = enumerate_critical_points(&cloud, k, None, &t).unwrap();
            let records = homology_change_report(&cloud, k, &crits, None, 256, &t).unwrap();
            assert!(records.iter().all(|r| r.pass), "k={k}: {records:#?}");
            let first = records.first().unwrap();
            let last = records.last().unwrap();
            assert_eq!(first.betti_before.0, vec![0, 0]);
            assert_eq!(last.betti_after.0, vec![1, 0]);
            let mut net = [0i64; 2];
            for rec in &records {
                net[0] += rec.betti_after.0[0] as i64 - rec.betti_before.0[0] as i64;
                net[1] += rec.betti_after.0[1] as i64 - rec.betti_before.0[1] as i64;
            }
            assert_eq!(net, [1, 0]);
        }
    }
}

#[cfg(test)]
mod mask_diag {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Independent digital-topology oracle: foreground components by
    // 4-connected flood fill, holes as bounded 8-connected background
    // components.
    fn naive_betti(cells: &[Vec<bool>]) -> (usize, usize) {
        let res = cells.len();
        let mut seen = vec![vec![false; res]; res];
        let mut comps = 0;
        for y in 0..res {
            for x in 0..res {
                if cells[y][x] && !seen[y][x] {
                    comps += 1;
                    let mut stack = vec![(x, y)];
                    seen[y][x] = true;
                    while let Some((cx, cy)) = stack.pop() {
                        let mut push = |nx: usize, ny: usize| {
                            if cells[ny][nx] && !seen[ny][nx] {
                                seen[ny][nx] = true;
                                stack.push((nx, ny));
                            }
                        };
                        if cx > 0 { push(cx - 1, cy); }
                        if cx + 1 < res { push(cx + 1, cy); }
                        if cy > 0 { push(cx, cy - 1); }
                        if cy + 1 < res { push(cx, cy + 1); }
                    }
                }
            }
        }
        // Background: 8-connected, seeded from the frame; remaining
        // background components are the holes.
        let mut bg_seen = vec![vec![false; res]; res];
        let mut flood = |sx: usize, sy: usize, bg_seen: &mut Vec<Vec<bool>>| {
            if cells[sy][sx] || bg_seen[sy][sx] {
                return false;
            }
            let mut stack = vec![(sx, sy)];
            bg_seen[sy][sx] = true;
            while let Some((cx, cy)) = stack.pop() {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let nx = cx as i64 + dx;
                        let ny = cy as i64 + dy;
                        if nx < 0 || ny < 0 || nx >= res as i64 || ny >= res as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if !cells[ny][nx] && !bg_seen[ny][nx] {
                            bg_seen[ny][nx] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            true
        };
        for i in 0..res {
            flood(i, 0, &mut bg_seen);
            flood(i, res - 1, &mut bg_seen);
            flood(0, i, &mut bg_seen);
            flood(res - 1, i, &mut bg_seen);
        }
        let mut holes = 0;
        for y in 0..res {
            for x in 0..res {
                if flood(x, y, &mut bg_seen) {
                    holes += 1;
                }
            }
        }
        (comps, holes)
    }

    #[test]
    fn mask_betti_matches_digital_topology_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..90 {
            let res = [48usize, 65, 130][trial % 3];
            let density = [0.2, 0.45, 0.6, 0.75][trial % 4];
            let cells: Vec<Vec<bool>> = (0..res)
                .map(|_| (0..res).map(|_| rng.gen_bool(density)).collect())
                .collect();
            let mut mask = BitMask::zeroed(res);
            for y in 0..res {
                for x in 0..res {
                    if cells[y][x] {
                        mask.bits[y * mask.words_per_row + x / 64] |= 1u64 << (x % 64);
                    }
                }
            }
            let got = mask_betti(&mask);
            let (comps, holes) = naive_betti(&cells);
            assert_eq!(got.0[0], comps, "trial {trial} res {res} density {density}");
            assert_eq!(got.0[1], holes, "trial {trial} res {res} density {density}");
        }
    }
}

#[cfg(test)]
mod record_diag {
    use super::*;
    use crate::critical::enumerate_critical_points;
    use crate::geometry::Tolerances;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sweep_around_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let rows: Vec<Vec<f64>> =
            (0..12).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
        let cloud = PointCloud::new(2, rows).unwrap();
        let t = cloud.scaled_tolerances(&Tolerances::default());
        let crits = enumerate_critical_points(&cloud, 1, None, &t).unwrap();
        for c in &crits {
            if (0.130..0.147).contains(&c.radius) {
                println!("crit r={:.9} mu={} boundary={:?} center=({:.4},{:.4})",
                    c.radius, c.index, c.boundary, c.center[0], c.center[1]);
            }
        }
        let bbox = cloud.bounding_box();
        let side = bbox.side_lengths().iter().fold(0.0f64, |a: f64, b| a.max(*b)) + 2.0 * 0.45;
        let cx = 0.5 * (bbox.lo[0] + bbox.hi[0]);
        let cy = 0.5 * (bbox.lo[1] + bbox.hi[1]);
        let bounds = BoundingBox::new(
            vec![cx - side / 2.0, cy - side / 2.0],
            vec![cx + side / 2.0, cy + side / 2.0],
        );
        for res in [1024usize, 2048, 4096] {
            let field = sample_grid(&cloud, 1, &bounds, res).unwrap();
            let mut line = format!("res {res}: ");
            for step in 0..18 {
                let r = 0.1360 + 0.0005 * step as f64;
                let b = betti_sublevel(&field, r);
                line += &format!("{:.4}:[{},{}] ", r, b.0[0], b.0[1]);
            }
            println!("{line}");
        }
    }
}
