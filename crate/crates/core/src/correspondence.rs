//! Superpixel / superpoint pairing.
//!
//! Each teacher mask that receives at least one projected point becomes a
//! pair: the mask (superpixel, represented by its normalized mask feature) and
//! the set of points whose pseudo-label it supplied (superpoint).

use serde::Serialize;

use crate::classdict::PromptId;
use crate::error::{Error, Result};
use crate::io::{SceneBundle, Teacher};
use crate::labels::ClassId;
use crate::math::{norm, point_f64, Vec3};
use crate::projection::{assign_masks, MaskAssignment};
use crate::spatial::{canonical_order, farthest_from_centroid, farthest_point_sampling, KdTree};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuperPair {
    pub camera: usize,
    /// Position of the mask in its image's mask list.
    pub mask: usize,
    /// Global mask index (row of `mask_feats.f32`).
    pub mask_index: u32,
    pub label: ClassId,
    pub text: PromptId,
    /// Member points in canonical coordinate order.
    pub points: Vec<usize>,
    /// Unit-norm mask feature.
    pub superpixel: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correspondence {
    pub pairs: Vec<SuperPair>,
}

impl Correspondence {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Mask-guided pairing for a scene.
    pub fn build(bundle: &SceneBundle, teacher: &Teacher) -> Result<Self> {
        let assignments = assign_masks(bundle, teacher)?;
        Self::from_assignments(bundle, teacher, &assignments)
    }

    pub fn from_assignments(
        bundle: &SceneBundle,
        teacher: &Teacher,
        assignments: &[Option<MaskAssignment>],
    ) -> Result<Self> {
        let mut members: Vec<Vec<Vec<usize>>> = teacher
            .images
            .iter()
            .map(|img| vec![Vec::new(); img.masks.len()])
            .collect();
        for &i in &canonical_order(&bundle.points) {
            if let Some(a) = assignments[i] {
                members[a.camera][a.mask].push(i);
            }
        }
        let mut pairs = Vec::new();
        for c in 0..teacher.images.len() {
            for (m, points) in std::mem::take(&mut members[c]).into_iter().enumerate() {
                if points.is_empty() {
                    continue;
                }
                pairs.push(make_pair(teacher, c, m, points)?);
            }
        }
        Ok(Self { pairs })
    }

    /// k-NN grouping used when superpixels are switched off: as many groups
    /// as mask pairs, centered at farthest-point samples of the covered
    /// points, each holding the center's `k` nearest covered points. A group
    /// inherits mask, label and text of its center.
    pub fn knn_groups(
        bundle: &SceneBundle,
        teacher: &Teacher,
        assignments: &[Option<MaskAssignment>],
        k: usize,
    ) -> Result<Self> {
        let target = Self::from_assignments(bundle, teacher, assignments)?.len();
        let covered: Vec<usize> = canonical_order(&bundle.points)
            .into_iter()
            .filter(|&i| assignments[i].is_some())
            .collect();
        if covered.is_empty() {
            return Ok(Self { pairs: Vec::new() });
        }
        let pts: Vec<Vec3> = covered.iter().map(|&i| point_f64(bundle.points[i])).collect();
        let start = farthest_from_centroid(&pts);
        let centers = farthest_point_sampling(&pts, target, start);
        let tree = KdTree::new(&pts);
        let mut pairs = Vec::with_capacity(centers.len());
        for c in centers {
            let mut group: Vec<usize> = tree.knn(&pts[c], k.max(1), None).into_iter().map(|(j, _)| j).collect();
            group.sort_unstable();
            let a = assignments[covered[c]].unwrap();
            let points = group.into_iter().map(|j| covered[j]).collect();
            pairs.push(make_pair(teacher, a.camera, a.mask, points)?);
        }
        Ok(Self { pairs })
    }
}

fn make_pair(teacher: &Teacher, camera: usize, mask: usize, points: Vec<usize>) -> Result<SuperPair> {
    let img = &teacher.images[camera];
    let info = &img.masks[mask];
    let feat = img.features.row_f64(mask);
    let n = norm(&feat);
    if n == 0.0 {
        return Err(Error::ZeroNorm(format!("mask feature {}", info.index)));
    }
    Ok(SuperPair {
        camera,
        mask,
        mask_index: info.index,
        label: info.label,
        text: info.text,
        points,
        superpixel: feat.iter().map(|v| v / n).collect(),
    })
}

/// Mean of member embeddings per pair, L2-normalized. `embeddings` is
/// row-major N×`dim`.
pub fn pool_superpoints(embeddings: &[f64], dim: usize, corr: &Correspondence) -> Result<Vec<Vec<f64>>> {
    corr.pairs
        .iter()
        .enumerate()
        .map(|(r, pair)| {
            let mean = mean_rows(embeddings, dim, &pair.points);
            if mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("superpoint {r}")));
            }
            let n = norm(&mean);
            if n == 0.0 {
                return Err(Error::ZeroNorm(format!("pooled superpoint {r}")));
            }
            Ok(mean.into_iter().map(|v| v / n).collect())
        })
        .collect()
}

pub(crate) fn mean_rows(data: &[f64], dim: usize, rows: &[usize]) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for &i in rows {
        for (a, v) in acc.iter_mut().zip(&data[i * dim..(i + 1) * dim]) {
            *a += v;
        }
    }
    let inv = 1.0 / rows.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMatrix;
    use crate::io::{Mask, MaskSet};
    use crate::projection::CalibratedCamera;

    fn one_camera_scene(points: Vec<[f32; 3]>) -> SceneBundle {
        let n = points.len();
        SceneBundle {
            name: "t".into(),
            points,
            raw_features: FeatureMatrix::zeros(n, 1),
            cameras: vec![CalibratedCamera {
                width: 4,
                height: 1,
                intrinsics: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                translation: [0.0; 3],
            }],
            gt_labels: None,
        }
    }

    // three 1-pixel-wide masks at u = 0, 1, 2 of a 4x1 image
    fn three_masks() -> Teacher {
        let masks = (0..3)
            .map(|i| Mask { index: i, label: i as u16, text: i, rle: vec![(i, 1)] })
            .collect();
        let feats = FeatureMatrix::new(3, 2, vec![3.0, 4.0, 1.0, 0.0, 0.0, 2.0]).unwrap();
        Teacher {
            images: vec![MaskSet::new(0, 4, 1, masks, feats).unwrap()],
            text_feats: FeatureMatrix::new(3, 2, vec![1.0; 6]).unwrap(),
        }
    }

    #[test]
    fn unhit_mask_is_dropped() {
        // u = x / z: points at u = 0 and u = 2 only
        let scene = one_camera_scene(vec![[0.0, 0.0, 1.0], [2.0, 0.0, 1.0], [4.0, 0.0, 2.0]]);
        let corr = Correspondence::build(&scene, &three_masks()).unwrap();
        assert_eq!(corr.len(), 2);
        assert_eq!(corr.pairs[0].points, vec![0]);
        assert_eq!(corr.pairs[1].points, vec![1, 2]);
        assert_eq!(corr.pairs[0].superpixel, vec![0.6, 0.8]);
    }

    #[test]
    fn every_mask_hit() {
        let scene = one_camera_scene(vec![[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [2.0, 0.0, 1.0]]);
        let corr = Correspondence::build(&scene, &three_masks()).unwrap();
        assert_eq!(corr.len(), 3);
    }

    fn corr_of(groups: Vec<Vec<usize>>) -> Correspondence {
        Correspondence {
            pairs: groups
                .into_iter()
                .map(|points| SuperPair {
                    camera: 0,
                    mask: 0,
                    mask_index: 0,
                    label: 0,
                    text: 0,
                    points,
                    superpixel: vec![1.0],
                })
                .collect(),
        }
    }

    #[test]
    fn single_point_pool_is_identity() {
        let e = [0.6, 0.0, 0.8];
        let pooled = pool_superpoints(&e, 3, &corr_of(vec![vec![0]])).unwrap();
        assert_eq!(pooled, vec![vec![0.6, 0.0, 0.8]]);
    }

    #[test]
    fn opposite_embeddings_fail() {
        let e = [1.0, -2.0, -1.0, 2.0];
        let err = pool_superpoints(&e, 2, &corr_of(vec![vec![0, 1]])).unwrap_err();
        assert!(matches!(err, Error::ZeroNorm(_)));
    }
}
