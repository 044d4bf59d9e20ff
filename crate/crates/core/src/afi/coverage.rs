//! Random replacement of predictions by pseudo-labels, more likely close to
//! the sensor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labels::{LabelField, UNLABELED};

/// `β e^{-d/T} / (1 + β e^{-d/T})` with `T = S / ln β`.
pub fn coverage_probability(d: f64, beta: f64, s_dist: f64) -> f64 {
    let t = s_dist / beta.ln();
    let w = beta * (-d / t).exp();
    w / (1.0 + w)
}

/// Horizontal distance of a point from the sensor origin.
pub fn horizontal_distance(p: [f32; 3]) -> f64 {
    (p[0] as f64).hypot(p[1] as f64)
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in [0, 1) for one point. The stream is keyed by the point's
/// coordinates, so draws do not depend on point order.
pub fn point_uniform(seed: u64, p: [f32; 3]) -> f64 {
    let key = mix(mix(mix(p[0].to_bits() as u64) ^ p[1].to_bits() as u64) ^ p[2].to_bits() as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng.random::<f64>()
}

/// Each point that has a pseudo-label takes it with probability
/// [`coverage_probability`] of its horizontal distance; others keep the
/// prediction.
pub fn coverage_sample(
    predict: &LabelField,
    pseudo: &LabelField,
    points: &[[f32; 3]],
    beta: f64,
    s_dist: f64,
    seed: u64,
) -> Result<LabelField> {
    let n = predict.len();
    for (len, what) in [(pseudo.len(), "pseudo-labels"), (points.len(), "points")] {
        if len != n {
            return Err(Error::LengthMismatch {
                what: what.into(),
                expected: n,
                actual: len,
            });
        }
    }
    let out = (0..n)
        .map(|i| {
            let q = pseudo.get(i);
            if q != UNLABELED
                && point_uniform(seed, points[i]) < coverage_probability(horizontal_distance(points[i]), beta, s_dist)
            {
                q
            } else {
                predict.get(i)
            }
        })
        .collect();
    Ok(LabelField::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn law_at_anchor_distances() {
        assert!((coverage_probability(0.0, 4.0, 15.0) - 0.8).abs() < 1e-15);
        assert!((coverage_probability(15.0, 4.0, 15.0) - 0.5).abs() < 1e-15);
        assert!(coverage_probability(100.0, 4.0, 15.0) < 0.01);
    }

    #[test]
    fn unlabeled_pseudo_never_replaces() {
        let predict = LabelField::new(vec![1, 1]);
        let pseudo = LabelField::new(vec![UNLABELED, UNLABELED]);
        let out = coverage_sample(&predict, &pseudo, &[[0.0; 3], [1.0, 0.0, 0.0]], 4.0, 15.0, 3).unwrap();
        assert_eq!(out, predict);
    }

    #[test]
    fn draws_depend_on_coordinates_only() {
        let a = point_uniform(5, [1.0, 2.0, 3.0]);
        assert_eq!(a, point_uniform(5, [1.0, 2.0, 3.0]));
        assert_ne!(a, point_uniform(5, [1.0, 2.0, 3.5]));
        assert_ne!(a, point_uniform(6, [1.0, 2.0, 3.0]));
    }
}
