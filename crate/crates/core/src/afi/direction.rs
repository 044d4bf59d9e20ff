//! Direction clustering, per-direction aggregates and the pairwise
//! correlation between two neighborhoods.

use serde::Serialize;

use crate::math::{dot3, norm3, sub, Vec3};

use super::lattice::LatticeBasis;

/// Aggregate of the neighbors that fell into one lattice direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirCluster {
    pub index: usize,
    /// Mean offset from the center.
    pub direction: Vec3,
    /// Sum of member features.
    pub feature: Vec<f64>,
    /// Sum of member correlations.
    pub correlation: f64,
}

/// Per-direction aggregates of one center. Only non-empty directions are
/// stored, in increasing lattice index; absent directions are zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DirectionalState {
    pub clusters: Vec<DirCluster>,
}

impl DirectionalState {
    pub fn get(&self, index: usize) -> Option<&DirCluster> {
        self.clusters
            .binary_search_by_key(&index, |c| c.index)
            .ok()
            .map(|k| &self.clusters[k])
    }

    /// `Σ_i l_i f_i` over the stored directions.
    pub fn weighted_feature(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for c in &self.clusters {
            for (o, f) in out.iter_mut().zip(&c.feature) {
                *o += c.correlation * f;
            }
        }
        out
    }
}

/// Lattice direction of each neighbor offset by largest cosine, ties to the
/// lowest index. A neighbor coincident with the center gets direction 0.
pub fn direction_cluster(center: Vec3, neighbors: &[Vec3], basis: &LatticeBasis) -> Vec<usize> {
    neighbors
        .iter()
        .map(|&p| nearest_direction(sub(p, center), basis))
        .collect()
}

pub(crate) fn nearest_direction(offset: Vec3, basis: &LatticeBasis) -> usize {
    if norm3(offset) == 0.0 {
        return 0;
    }
    // |offset| is common to all candidates, so the dot product ranks the cosines
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &n) in basis.normals.iter().enumerate() {
        let v = dot3(offset, n);
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Mean offset, summed feature and summed correlation per direction.
/// Neighbors coincident with the center contribute nothing.
pub fn aggregate(
    center: Vec3,
    neighbors: &[Vec3],
    ids: &[usize],
    feats: &[&[f64]],
    corrs: &[f64],
) -> DirectionalState {
    let dim = feats.first().map_or(0, |f| f.len());
    let mut order: Vec<usize> = (0..neighbors.len())
        .filter(|&k| norm3(sub(neighbors[k], center)) > 0.0)
        .collect();
    order.sort_by_key(|&k| (ids[k], k));
    let mut clusters: Vec<DirCluster> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for k in order {
        let off = sub(neighbors[k], center);
        if clusters.last().is_none_or(|c| c.index != ids[k]) {
            clusters.push(DirCluster {
                index: ids[k],
                direction: [0.0; 3],
                feature: vec![0.0; dim],
                correlation: 0.0,
            });
            counts.push(0);
        }
        let c = clusters.last_mut().unwrap();
        for a in 0..3 {
            c.direction[a] += off[a];
        }
        for (o, f) in c.feature.iter_mut().zip(feats[k]) {
            *o += f;
        }
        c.correlation += corrs[k];
        *counts.last_mut().unwrap() += 1;
    }
    for (c, n) in clusters.iter_mut().zip(counts) {
        for a in 0..3 {
            c.direction[a] /= n as f64;
        }
    }
    DirectionalState { clusters }
}

/// Parallel-direction statistics of one state against a connecting vector:
/// summed correlation of the directions within `γ` of ±`v`, and the longest
/// such direction on the positive and negative side (0 when none).
fn parallel_stats(state: &DirectionalState, v: Vec3, v_norm: f64, gamma: f64) -> (f64, f64, f64) {
    let mut l = 0.0;
    let mut d_pos: f64 = 0.0;
    let mut d_neg: f64 = 0.0;
    for c in &state.clusters {
        let dn = norm3(c.direction);
        if dn == 0.0 {
            continue;
        }
        let s = dot3(v, c.direction) / (v_norm * dn);
        if s > gamma {
            l += c.correlation;
            d_pos = d_pos.max(dn);
        } else if s < -gamma {
            l += c.correlation;
            d_neg = d_neg.max(dn);
        }
    }
    (l, d_pos, d_neg)
}

/// Correlation between two neighborhoods with centers `pa`, `pb`, measured
/// along the connecting vector `pa - pb`: the product of the correlations
/// of their parallel directions and a distance term
/// `(d_a⁺ + d_a⁻)(d_b⁺ + d_b⁻) / (|pa - pb| + d_a⁻ + d_b⁺)²`.
/// Coincident centers give 0.
pub fn pair_correlation(a: &DirectionalState, b: &DirectionalState, pa: Vec3, pb: Vec3, gamma: f64) -> f64 {
    let v = sub(pa, pb);
    let vn = norm3(v);
    if vn == 0.0 {
        return 0.0;
    }
    let (la, da_pos, da_neg) = parallel_stats(a, v, vn, gamma);
    if la == 0.0 {
        return 0.0;
    }
    let (lb, db_pos, db_neg) = parallel_stats(b, v, vn, gamma);
    let lc = la * lb;
    if lc == 0.0 {
        return 0.0;
    }
    let denom = vn + da_neg + db_pos;
    lc * (da_pos + da_neg) * (db_pos + db_neg) / (denom * denom)
}

/// Upsampling evidence of fine point `n` for coarse neighbor `k`: summed
/// correlation of the directions of `state` (belonging to `n`) within `γ` of
/// ±`(pn - pk)`.
pub fn parallel_correlation(state: &DirectionalState, pn: Vec3, pk: Vec3, gamma: f64) -> f64 {
    let v = sub(pn, pk);
    let vn = norm3(v);
    if vn == 0.0 {
        return 0.0;
    }
    parallel_stats(state, v, vn, gamma).0
}
