//! Encoder/decoder of the flat-interaction network.
//!
//! Every layer computes a directional state and an updated feature for all
//! points of its input set, then keeps a farthest-point subset as the input
//! of the next layer. The decoder walks back up, blending the coarse
//! features of each fine point's nearest coarse points with the fine point's
//! own encoder feature of the same layer.

use rayon::prelude::*;

use crate::labels::{ClassId, LabelField, UNLABELED};
use crate::math::{argmax, softmax, softmax_in_place, Vec3};
use crate::spatial::{farthest_from_centroid, farthest_point_sampling, KdTree};

use super::config::AfiConfig;
use super::direction::{aggregate, direction_cluster, pair_correlation, parallel_correlation, DirectionalState};
use super::lattice::{fibonacci_lattice, LatticeBasis};

/// Anchor weight of a center's own input feature.
const SELF_WEIGHT: f64 = 0.1;
/// Weight of the neighborhood max-pooled feature.
const POOL_WEIGHT: f64 = 1e-8;

/// One encoder layer, indexed by the points of its input set.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub points: Vec<Vec3>,
    pub states: Vec<DirectionalState>,
    pub features: Vec<Vec<f64>>,
    /// Whether any labeled point reached this feature.
    pub evidence: Vec<bool>,
    /// Positions (into `points`) kept for the next layer.
    pub sampled: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Encoded {
    pub num_classes: usize,
    pub layers: Vec<EncoderLayer>,
}

/// One-hot features; unlabeled points get the zero vector.
pub fn one_hot(labels: &[ClassId], num_classes: usize) -> Vec<Vec<f64>> {
    labels
        .iter()
        .map(|&l| {
            let mut f = vec![0.0; num_classes];
            if l != UNLABELED {
                f[l as usize] = 1.0;
            }
            f
        })
        .collect()
}

pub fn encode(points: &[Vec3], labels: &[ClassId], num_classes: usize, cfg: &AfiConfig) -> Encoded {
    let basis = fibonacci_lattice(cfg.lattice_m);
    let mut pts = points.to_vec();
    let mut feats = one_hot(labels, num_classes);
    let mut evidence: Vec<bool> = labels.iter().map(|&l| l != UNLABELED).collect();
    let mut states: Option<Vec<DirectionalState>> = None;
    let mut layers = Vec::with_capacity(cfg.rates.len());
    for &rate in &cfg.rates {
        let layer = encode_layer(&pts, &feats, &evidence, states.as_deref(), &basis, rate, cfg);
        pts = layer.sampled.iter().map(|&i| layer.points[i]).collect();
        feats = layer.sampled.iter().map(|&i| layer.features[i].clone()).collect();
        evidence = layer.sampled.iter().map(|&i| layer.evidence[i]).collect();
        states = Some(layer.sampled.iter().map(|&i| layer.states[i].clone()).collect());
        layers.push(layer);
    }
    Encoded { num_classes, layers }
}

fn encode_layer(
    pts: &[Vec3],
    feats: &[Vec<f64>],
    evidence: &[bool],
    prev: Option<&[DirectionalState]>,
    basis: &LatticeBasis,
    rate: f64,
    cfg: &AfiConfig,
) -> EncoderLayer {
    let n = pts.len();
    let c = feats.first().map_or(0, |f| f.len());
    let tree = KdTree::new(pts);
    let k = cfg.knn.min(n.saturating_sub(1));
    let per_point: Vec<(DirectionalState, Vec<f64>, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let nb: Vec<usize> = tree.knn(&pts[i], k, Some(i)).into_iter().map(|(j, _)| j).collect();
            let nb_pts: Vec<Vec3> = nb.iter().map(|&j| pts[j]).collect();
            let corrs: Vec<f64> = match prev {
                None => vec![1.0 / nb.len().max(1) as f64; nb.len()],
                Some(prev) => {
                    let raw: Vec<f64> = nb
                        .iter()
                        .map(|&j| pair_correlation(&prev[i], &prev[j], pts[i], pts[j], cfg.gamma))
                        .collect();
                    softmax(&raw)
                }
            };
            let ids = direction_cluster(pts[i], &nb_pts, basis);
            let nb_feats: Vec<&[f64]> = nb.iter().map(|&j| feats[j].as_slice()).collect();
            let state = aggregate(pts[i], &nb_pts, &ids, &nb_feats, &corrs);
            let mut f = state.weighted_feature(c);
            let mut pool = vec![f64::NEG_INFINITY; c];
            for nf in &nb_feats {
                for (p, v) in pool.iter_mut().zip(nf.iter()) {
                    *p = p.max(*v);
                }
            }
            for d in 0..c {
                let pooled = if nb.is_empty() { 0.0 } else { pool[d] };
                f[d] += SELF_WEIGHT * feats[i][d] + POOL_WEIGHT * pooled;
            }
            softmax_in_place(&mut f);
            let ev = evidence[i] || nb.iter().any(|&j| evidence[j]);
            (state, f, ev)
        })
        .collect();
    let count = ((rate * n as f64).ceil() as usize).clamp(1.min(n), n);
    let sampled = if n == 0 {
        Vec::new()
    } else {
        farthest_point_sampling(pts, count, farthest_from_centroid(pts))
    };
    let mut states = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    let mut ev = Vec::with_capacity(n);
    for (s, f, e) in per_point {
        states.push(s);
        features.push(f);
        ev.push(e);
    }
    EncoderLayer {
        points: pts.to_vec(),
        states,
        features,
        evidence: ev,
        sampled,
    }
}

/// Final per-point features of the input set, with evidence flags.
pub fn decode_features(enc: &Encoded, cfg: &AfiConfig) -> (Vec<Vec<f64>>, Vec<bool>) {
    let Some(last) = enc.layers.last() else {
        return (Vec::new(), Vec::new());
    };
    let mut h: Vec<Vec<f64>> = last.sampled.iter().map(|&i| last.features[i].clone()).collect();
    let mut ev: Vec<bool> = last.sampled.iter().map(|&i| last.evidence[i]).collect();
    for layer in enc.layers.iter().rev() {
        let coarse: Vec<Vec3> = layer.sampled.iter().map(|&i| layer.points[i]).collect();
        let tree = KdTree::new(&coarse);
        let k = cfg.knn_up.min(coarse.len());
        let (next_h, next_ev): (Vec<Vec<f64>>, Vec<bool>) = (0..layer.points.len())
            .into_par_iter()
            .map(|n| {
                let p = layer.points[n];
                let nb: Vec<usize> = tree.knn(&p, k, None).into_iter().map(|(j, _)| j).collect();
                let raw: Vec<f64> = nb
                    .iter()
                    .map(|&j| parallel_correlation(&layer.states[n], p, coarse[j], cfg.gamma))
                    .collect();
                let w = softmax(&raw);
                let mut f = layer.features[n].clone();
                for (&j, wj) in nb.iter().zip(&w) {
                    for (o, v) in f.iter_mut().zip(&h[j]) {
                        *o += wj * v;
                    }
                }
                softmax_in_place(&mut f);
                (f, layer.evidence[n] || nb.iter().any(|&j| ev[j]))
            })
            .unzip();
        h = next_h;
        ev = next_ev;
    }
    (h, ev)
}

/// Labels from decoded features: argmax, or UNLABELED where no labeled
/// point contributed.
pub fn decode(enc: &Encoded, cfg: &AfiConfig) -> LabelField {
    let (h, ev) = decode_features(enc, cfg);
    LabelField::new(
        h.iter()
            .zip(ev)
            .map(|(f, e)| match (e, argmax(f)) {
                (true, Some(c)) => c as ClassId,
                _ => UNLABELED,
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<Vec3> {
        (0..n * n).map(|i| [(i % n) as f64 * 0.25, (i / n) as f64 * 0.25, 0.0]).collect()
    }

    #[test]
    fn single_class_grid_is_fixed() {
        let pts = grid(20);
        let labels = vec![1; pts.len()];
        let cfg = AfiConfig::default();
        let enc = encode(&pts, &labels, 3, &cfg);
        for layer in &enc.layers {
            for f in &layer.features {
                assert_eq!(argmax(f), Some(1));
                assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(decode(&enc, &cfg).as_slice(), labels.as_slice());
    }

    #[test]
    fn layer_sizes_follow_rates() {
        let pts = grid(10);
        let enc = encode(&pts, &vec![0; 100], 2, &AfiConfig::default());
        let sizes: Vec<usize> = enc.layers.iter().map(|l| l.sampled.len()).collect();
        assert_eq!(sizes, vec![34, 12, 4, 2]);
    }

    #[test]
    fn no_labels_stay_unlabeled() {
        let pts = grid(6);
        let cfg = AfiConfig::default();
        let enc = encode(&pts, &vec![UNLABELED; 36], 2, &cfg);
        assert!(decode(&enc, &cfg).as_slice().iter().all(|&l| l == UNLABELED));
    }

    #[test]
    fn tiny_inputs() {
        let cfg = AfiConfig::default();
        let enc = encode(&[[0.0; 3]], &[0], 2, &cfg);
        assert_eq!(decode(&enc, &cfg).as_slice(), &[0]);
        let enc = encode(&[[0.0; 3], [1.0, 0.0, 0.0]], &[1, UNLABELED], 2, &cfg);
        assert_eq!(decode(&enc, &cfg).as_slice(), &[1, 1]);
    }
}
