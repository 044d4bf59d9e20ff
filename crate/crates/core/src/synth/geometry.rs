//! Scene layout: a bounded ground plane, axis-aligned boxes and vertical
//! cylinders, with ray casting and area-uniform surface sampling.

use rand::Rng;

use crate::labels::ClassId;
use crate::math::Vec3;

/// Coordinates live on a 2^-10 m grid so that offsets between points, and
/// translated copies of a scene, are exact in floating point.
pub const GRID: f64 = 1024.0;

pub fn quantize(x: f64) -> f64 {
    (x * GRID).round() / GRID
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Square `[-extent, extent]²` at z = 0.
    Ground { extent: f64 },
    Cuboid { min: Vec3, max: Vec3 },
    /// Vertical cylinder standing on the ground.
    Cylinder { center: [f64; 2], radius: f64, height: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Object {
    pub class: ClassId,
    pub shape: Shape,
}

impl Object {
    /// Footprint rectangle on the ground, `[xmin, ymin, xmax, ymax]`.
    pub fn footprint(&self) -> Option<[f64; 4]> {
        match self.shape {
            Shape::Ground { .. } => None,
            Shape::Cuboid { min, max } => Some([min[0], min[1], max[0], max[1]]),
            Shape::Cylinder { center, radius, .. } => Some([
                center[0] - radius,
                center[1] - radius,
                center[0] + radius,
                center[1] + radius,
            ]),
        }
    }

    fn covers_ground(&self, x: f64, y: f64) -> bool {
        match self.shape {
            Shape::Ground { .. } => false,
            Shape::Cuboid { min, max } => x >= min[0] && x <= max[0] && y >= min[1] && y <= max[1],
            Shape::Cylinder { center, radius, .. } => {
                (x - center[0]).powi(2) + (y - center[1]).powi(2) <= radius * radius
            }
        }
    }
}

/// Nearest intersection along a ray: object position and hit point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub object: usize,
    pub point: Vec3,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub objects: Vec<Object>,
}

impl Layout {
    pub fn raycast(&self, origin: Vec3, dir: Vec3) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        for (k, obj) in self.objects.iter().enumerate() {
            let t = match obj.shape {
                Shape::Ground { extent } => ray_ground(origin, dir, extent),
                Shape::Cuboid { min, max } => ray_box(origin, dir, min, max),
                Shape::Cylinder { center, radius, height } => ray_cylinder(origin, dir, center, radius, height),
            };
            if let Some(t) = t {
                if best.is_none_or(|b| t < b.t) {
                    let point = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
                    best = Some(RayHit { object: k, point, t });
                }
            }
        }
        best
    }

    /// Surfaces that can be sampled, with their sampling weight.
    pub fn surfaces(&self, object_density: f64) -> Vec<(Surface, f64)> {
        let mut out = Vec::new();
        for (k, obj) in self.objects.iter().enumerate() {
            match obj.shape {
                Shape::Ground { extent } => out.push((Surface::Ground(k), 4.0 * extent * extent)),
                Shape::Cuboid { min, max } => {
                    let (w, d, h) = (max[0] - min[0], max[1] - min[1], max[2] - min[2]);
                    out.push((Surface::BoxTop(k), w * d * object_density));
                    out.push((Surface::BoxSideX(k, false), d * h * object_density));
                    out.push((Surface::BoxSideX(k, true), d * h * object_density));
                    out.push((Surface::BoxSideY(k, false), w * h * object_density));
                    out.push((Surface::BoxSideY(k, true), w * h * object_density));
                }
                Shape::Cylinder { radius, height, .. } => {
                    out.push((Surface::CylinderSide(k), 2.0 * std::f64::consts::PI * radius * height * object_density));
                    out.push((Surface::CylinderTop(k), std::f64::consts::PI * radius * radius * object_density));
                }
            }
        }
        out
    }

    /// A point on `surface` and its unit normal, or `None` when the sample
    /// falls on ground hidden under an object.
    pub fn sample<R: Rng>(&self, surface: Surface, rng: &mut R) -> Option<(Vec3, Vec3)> {
        match surface {
            Surface::Ground(k) => {
                let Shape::Ground { extent } = self.objects[k].shape else { unreachable!() };
                let x = rng.random_range(-extent..extent);
                let y = rng.random_range(-extent..extent);
                if self.objects.iter().any(|o| o.covers_ground(x, y)) {
                    return None;
                }
                Some(([x, y, 0.0], [0.0, 0.0, 1.0]))
            }
            Surface::BoxTop(k) => {
                let (min, max) = self.cuboid(k);
                let x = rng.random_range(min[0]..max[0]);
                let y = rng.random_range(min[1]..max[1]);
                Some(([x, y, max[2]], [0.0, 0.0, 1.0]))
            }
            Surface::BoxSideX(k, high) => {
                let (min, max) = self.cuboid(k);
                let y = rng.random_range(min[1]..max[1]);
                let z = rng.random_range(min[2]..max[2]);
                let (x, nx) = if high { (max[0], 1.0) } else { (min[0], -1.0) };
                Some(([x, y, z], [nx, 0.0, 0.0]))
            }
            Surface::BoxSideY(k, high) => {
                let (min, max) = self.cuboid(k);
                let x = rng.random_range(min[0]..max[0]);
                let z = rng.random_range(min[2]..max[2]);
                let (y, ny) = if high { (max[1], 1.0) } else { (min[1], -1.0) };
                Some(([x, y, z], [0.0, ny, 0.0]))
            }
            Surface::CylinderSide(k) => {
                let Shape::Cylinder { center, radius, height } = self.objects[k].shape else { unreachable!() };
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let z = rng.random_range(0.0..height);
                let (s, c) = a.sin_cos();
                Some(([center[0] + radius * c, center[1] + radius * s, z], [c, s, 0.0]))
            }
            Surface::CylinderTop(k) => {
                let Shape::Cylinder { center, radius, height } = self.objects[k].shape else { unreachable!() };
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let r = radius * rng.random::<f64>().sqrt();
                Some(([center[0] + r * a.cos(), center[1] + r * a.sin(), height], [0.0, 0.0, 1.0]))
            }
        }
    }

    fn cuboid(&self, k: usize) -> (Vec3, Vec3) {
        match self.objects[k].shape {
            Shape::Cuboid { min, max } => (min, max),
            _ => unreachable!("surface does not belong to a cuboid"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    Ground(usize),
    BoxTop(usize),
    /// Side at min x (false) or max x (true).
    BoxSideX(usize, bool),
    BoxSideY(usize, bool),
    CylinderSide(usize),
    CylinderTop(usize),
}

impl Surface {
    pub fn object(self) -> usize {
        match self {
            Surface::Ground(k)
            | Surface::BoxTop(k)
            | Surface::BoxSideX(k, _)
            | Surface::BoxSideY(k, _)
            | Surface::CylinderSide(k)
            | Surface::CylinderTop(k) => k,
        }
    }
}

const EPS: f64 = 1e-9;

fn ray_ground(o: Vec3, d: Vec3, extent: f64) -> Option<f64> {
    if d[2] >= 0.0 || o[2] <= 0.0 {
        return None;
    }
    let t = -o[2] / d[2];
    let x = o[0] + t * d[0];
    let y = o[1] + t * d[1];
    (x.abs() <= extent && y.abs() <= extent).then_some(t)
}

fn ray_box(o: Vec3, d: Vec3, min: Vec3, max: Vec3) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < min[a] || o[a] > max[a] {
                return None;
            }
            continue;
        }
        let ta = (min[a] - o[a]) / d[a];
        let tb = (max[a] - o[a]) / d[a];
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t0 <= t1 && t0 > EPS).then_some(t0)
}

fn ray_cylinder(o: Vec3, d: Vec3, c: [f64; 2], r: f64, h: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let (ox, oy) = (o[0] - c[0], o[1] - c[1]);
    let a = d[0] * d[0] + d[1] * d[1];
    if a > 1e-15 {
        let b = 2.0 * (ox * d[0] + oy * d[1]);
        let cc = ox * ox + oy * oy - r * r;
        let disc = b * b - 4.0 * a * cc;
        if disc >= 0.0 {
            let t = (-b - disc.sqrt()) / (2.0 * a);
            let z = o[2] + t * d[2];
            if t > EPS && (0.0..=h).contains(&z) {
                best = Some(t);
            }
        }
    }
    if d[2].abs() > 1e-15 {
        let t = (h - o[2]) / d[2];
        let x = ox + t * d[0];
        let y = oy + t * d[1];
        if t > EPS && x * x + y * y <= r * r && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_and_ground_ordering() {
        let layout = Layout {
            objects: vec![
                Object { class: 0, shape: Shape::Ground { extent: 10.0 } },
                Object {
                    class: 1,
                    shape: Shape::Cuboid { min: [-1.0, -1.0, 0.0], max: [1.0, 1.0, 2.0] },
                },
            ],
        };
        let down = layout.raycast([0.0, 0.0, 5.0], [0.0, 0.0, -1.0]).unwrap();
        assert_eq!(down.object, 1);
        assert!((down.t - 3.0).abs() < 1e-12);
        let beside = layout.raycast([5.0, 0.0, 5.0], [0.0, 0.0, -1.0]).unwrap();
        assert_eq!(beside.object, 0);
        assert!(layout.raycast([20.0, 0.0, 5.0], [0.0, 0.0, -1.0]).is_none());
    }

    #[test]
    fn cylinder_side_and_top() {
        let layout = Layout {
            objects: vec![Object {
                class: 2,
                shape: Shape::Cylinder { center: [0.0, 0.0], radius: 0.5, height: 2.0 },
            }],
        };
        let side = layout.raycast([-3.0, 0.0, 1.0], [1.0, 0.0, 0.0]).unwrap();
        assert!((side.t - 2.5).abs() < 1e-12);
        let top = layout.raycast([0.1, 0.0, 4.0], [0.0, 0.0, -1.0]).unwrap();
        assert!((top.t - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quantize_to_grid() {
        assert_eq!(quantize(0.0004), 0.0);
        assert_eq!(quantize(0.0006), 1.0 / 1024.0);
    }
}
