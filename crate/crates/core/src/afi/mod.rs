//! Flat-interaction label propagation.
//!
//! Entry point [`afi`]: clear predictions outside every camera's view,
//! optionally cover predictions with pseudo-labels, then run the
//! encoder/decoder over the one-hot labels.

pub mod config;
pub mod coverage;
pub mod direction;
pub mod lattice;
pub mod network;

pub use config::AfiConfig;
pub use coverage::{coverage_probability, coverage_sample};
pub use direction::{aggregate, direction_cluster, pair_correlation, DirCluster, DirectionalState};
pub use lattice::{fibonacci_lattice, LatticeBasis};
pub use network::{decode, encode, Encoded, EncoderLayer};

use crate::error::{Error, Result};
use crate::labels::{ClassId, LabelField, UNLABELED};
use crate::math::point_f64;

/// Sets every point outside the field of view to UNLABELED.
pub fn clear_confused(predict: &LabelField, fov: &[bool]) -> Result<LabelField> {
    if fov.len() != predict.len() {
        return Err(Error::LengthMismatch {
            what: "field-of-view mask".into(),
            expected: predict.len(),
            actual: fov.len(),
        });
    }
    Ok(LabelField::new(
        predict
            .as_slice()
            .iter()
            .zip(fov)
            .map(|(&l, &seen)| if seen { l } else { UNLABELED })
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct AfiInput<'a> {
    pub points: &'a [[f32; 3]],
    pub predict: &'a LabelField,
    /// Points seen by at least one camera; `None` keeps every prediction.
    pub fov: Option<&'a [bool]>,
    /// Pseudo-labels used for coverage when enabled.
    pub pseudo: Option<&'a LabelField>,
    pub num_classes: usize,
}

/// Labels after clearing, optional coverage and propagation. The result
/// does not depend on the order of the input points.
pub fn afi(input: AfiInput<'_>, cfg: &AfiConfig) -> Result<LabelField> {
    cfg.validate()?;
    let n = input.points.len();
    if input.predict.len() != n {
        return Err(Error::LengthMismatch {
            what: "predictions".into(),
            expected: n,
            actual: input.predict.len(),
        });
    }
    input.predict.validate(input.num_classes)?;
    let mut labels = match input.fov {
        Some(fov) => clear_confused(input.predict, fov)?,
        None => input.predict.clone(),
    };
    if cfg.coverage_enabled {
        if let Some(pseudo) = input.pseudo {
            pseudo.validate(input.num_classes)?;
            labels = coverage_sample(&labels, pseudo, input.points, cfg.beta, cfg.s_dist, cfg.seed)?;
        }
    }
    let order = entry_order(input.points, labels.as_slice());
    let pts: Vec<_> = order.iter().map(|&i| point_f64(input.points[i])).collect();
    let sorted: Vec<ClassId> = order.iter().map(|&i| labels.get(i)).collect();
    let enc = encode(&pts, &sorted, input.num_classes, cfg);
    let out = decode(&enc, cfg);
    let mut result = vec![UNLABELED; n];
    for (k, &i) in order.iter().enumerate() {
        result[i] = out.get(k);
    }
    Ok(LabelField::new(result))
}

/// Coordinates, then label, then index. Points that tie on the first two
/// keys are interchangeable, so the network sees the same input for every
/// permutation of the points.
fn entry_order(points: &[[f32; 3]], labels: &[ClassId]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        pa[0]
            .total_cmp(&pb[0])
            .then(pa[1].total_cmp(&pb[1]))
            .then(pa[2].total_cmp(&pb[2]))
            .then(labels[a].cmp(&labels[b]))
            .then(a.cmp(&b))
    });
    order
}
