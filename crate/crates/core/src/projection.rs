//! Pinhole projection of LiDAR points into calibrated cameras and
//! mask-based pseudo-labeling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{SceneBundle, Teacher};
use crate::labels::{ClassId, LabelField, UNLABELED};
use crate::math::{point_f64, Vec3};

/// Pinhole camera. Matrices are row-major; `rotation`/`translation` map
/// world coordinates into the camera frame (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedCamera {
    pub width: u32,
    pub height: u32,
    pub intrinsics: [f64; 9],
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl CalibratedCamera {
    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        let r = &self.rotation;
        if k.iter().chain(r).chain(&self.translation).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("camera calibration".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera", "zero image size"));
        }
        if k[3] != 0.0 || k[6] != 0.0 || k[7] != 0.0 {
            return Err(Error::invalid("camera", "intrinsics not upper-triangular"));
        }
        if k[0] <= 0.0 || k[4] <= 0.0 {
            return Err(Error::invalid("camera", "focal lengths must be positive"));
        }
        if k[8] != 1.0 {
            return Err(Error::invalid("camera", "intrinsics[2][2] must be 1"));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|c| r[i * 3 + c] * r[j * 3 + c]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-9 {
                    return Err(Error::invalid("camera", "rotation not orthonormal"));
                }
            }
        }
        Ok(())
    }

    /// Camera looking from `eye` at `target` with world +z as up.
    pub fn look_at(eye: Vec3, target: Vec3, width: u32, height: u32, hfov_deg: f64) -> Self {
        use crate::math::{cross, dot3, normalize3, sub};
        let forward = normalize3(sub(target, eye));
        let right = normalize3(cross(forward, [0.0, 0.0, 1.0]));
        let down = cross(forward, right);
        let rotation = [
            right[0], right[1], right[2], down[0], down[1], down[2], forward[0], forward[1],
            forward[2],
        ];
        let translation = [-dot3(right, eye), -dot3(down, eye), -dot3(forward, eye)];
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        let intrinsics = [
            f,
            0.0,
            width as f64 / 2.0,
            0.0,
            f,
            height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        ];
        Self {
            width,
            height,
            intrinsics,
            rotation,
            translation,
        }
    }

    pub fn to_camera_frame(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + t[0],
            r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + t[1],
            r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + t[2],
        ]
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        let r = &self.rotation;
        let t = &self.translation;
        // -R^T t
        [
            -(r[0] * t[0] + r[3] * t[1] + r[6] * t[2]),
            -(r[1] * t[0] + r[4] * t[1] + r[7] * t[2]),
            -(r[2] * t[0] + r[5] * t[1] + r[8] * t[2]),
        ]
    }

    /// Unit ray direction in world coordinates through the center of pixel (u, v).
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        let k = &self.intrinsics;
        let y = (v - k[5]) / k[4];
        let x = (u - k[2] - k[1] * y) / k[0];
        let r = &self.rotation;
        let d = [
            r[0] * x + r[3] * y + r[6],
            r[1] * x + r[4] * y + r[7],
            r[2] * x + r[5] * y + r[8],
        ];
        crate::math::normalize3(d)
    }

    /// Pixel and depth of a world point, if it lands in front of the camera
    /// and inside the image. Pixel coordinates are rounded half-to-even.
    pub fn project_point(&self, p: Vec3) -> Option<(u32, u32, f64)> {
        let c = self.to_camera_frame(p);
        let z = c[2];
        if !(z > 0.0) {
            return None;
        }
        let k = &self.intrinsics;
        let u = ((k[0] * c[0] + k[1] * c[1]) / z + k[2]).round_ties_even();
        let v = (k[4] * c[1] / z + k[5]).round_ties_even();
        if u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64 {
            Some((u as u32, v as u32, z))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    pub point: usize,
    pub camera: usize,
    pub u: u32,
    pub v: u32,
    pub depth: f64,
}

/// Projects every point into one camera. Points behind the camera or outside
/// the image produce no hit; output is ordered by point index.
pub fn project(points: &[[f32; 3]], camera: &CalibratedCamera, camera_index: usize) -> Vec<PixelHit> {
    points
        .par_iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            camera
                .project_point(point_f64(p))
                .map(|(u, v, depth)| PixelHit {
                    point: i,
                    camera: camera_index,
                    u,
                    v,
                    depth,
                })
        })
        .collect()
}

/// Hits for all cameras of a bundle, camera-major.
pub fn project_all(bundle: &SceneBundle) -> Vec<PixelHit> {
    bundle
        .cameras
        .iter()
        .enumerate()
        .flat_map(|(c, cam)| project(&bundle.points, cam, c))
        .collect()
}

/// Which camera and mask supplies a point's pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskAssignment {
    pub camera: usize,
    /// Position of the mask inside its image's mask list.
    pub mask: usize,
    pub depth: f64,
}

/// Per point, the nearest-depth hit that falls inside a mask. Equal depths
/// resolve to the lowest camera index.
pub fn assign_masks(bundle: &SceneBundle, teacher: &Teacher) -> Result<Vec<Option<MaskAssignment>>> {
    if teacher.images.len() != bundle.cameras.len() {
        return Err(Error::invalid(
            "teacher",
            format!(
                "{} mask sets for {} cameras",
                teacher.images.len(),
                bundle.cameras.len()
            ),
        ));
    }
    for (c, (img, cam)) in teacher.images.iter().zip(&bundle.cameras).enumerate() {
        if img.width != cam.width || img.height != cam.height {
            return Err(Error::invalid(
                "teacher",
                format!("image {c} size does not match camera {c}"),
            ));
        }
    }
    let assignments = bundle
        .points
        .par_iter()
        .map(|&p| {
            let p = point_f64(p);
            let mut best: Option<MaskAssignment> = None;
            for (c, cam) in bundle.cameras.iter().enumerate() {
                let Some((u, v, depth)) = cam.project_point(p) else {
                    continue;
                };
                let Some(mask) = teacher.images[c].mask_at(u, v) else {
                    continue;
                };
                // strict comparison keeps the lower camera index on ties
                if best.is_none_or(|b| depth < b.depth) {
                    best = Some(MaskAssignment {
                        camera: c,
                        mask,
                        depth,
                    });
                }
            }
            best
        })
        .collect();
    Ok(assignments)
}

/// Pseudo-labels from teacher masks; points without a masked hit stay
/// [`UNLABELED`].
pub fn pseudo_labels(bundle: &SceneBundle, teacher: &Teacher) -> Result<LabelField> {
    let assignments = assign_masks(bundle, teacher)?;
    Ok(labels_from_assignments(&assignments, teacher))
}

pub fn labels_from_assignments(assignments: &[Option<MaskAssignment>], teacher: &Teacher) -> LabelField {
    LabelField::new(
        assignments
            .iter()
            .map(|a| match a {
                Some(a) => teacher.images[a.camera].masks[a.mask].label,
                None => UNLABELED,
            })
            .collect::<Vec<ClassId>>(),
    )
}

/// True for points seen by at least one camera.
pub fn fov_mask(bundle: &SceneBundle) -> Vec<bool> {
    bundle
        .points
        .par_iter()
        .map(|&p| {
            let p = point_f64(p);
            bundle.cameras.iter().any(|c| c.project_point(p).is_some())
        })
        .collect()
}
