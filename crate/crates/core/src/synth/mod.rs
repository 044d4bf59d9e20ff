//! Deterministic synthetic scenes and teacher outputs with exact ground
//! truth.
//!
//! Scenes are a ground plane ("road") with axis-aligned boxes (cars,
//! buildings) and vertical cylinders (pedestrians), watched by a ring of
//! inward-facing cameras. Teacher masks are connected regions of a ray-cast
//! object image. Points are only kept when every camera that sees them shows
//! their own class at their pixel, so a noise-free teacher reproduces the
//! ground truth exactly on covered points.

pub mod geometry;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classdict::{ClassDictionary, ClassEntry};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::io::{Mask, MaskSet, SceneBundle, Teacher};
use crate::labels::{ClassId, LabelField};
use crate::math::{norm, point_f64, Vec3};
use crate::projection::CalibratedCamera;

use geometry::{quantize, Layout, Object, Shape, Surface};

pub const BUILTIN_CLASSES: [&str; 4] = ["road", "car", "pedestrian", "building"];

const BUILTIN_PROMPTS: [(&str, [&str; 3]); 4] = [
    ("road", ["road", "street", "asphalt"]),
    ("car", ["car", "sedan", "vehicle"]),
    ("pedestrian", ["pedestrian", "person", "walker"]),
    ("building", ["building", "house", "wall"]),
];

const PROTOTYPE_SEED: u64 = 0x5eed_7e47;
const MASK_FEATURE_SIGMA: f64 = 0.1;

// RNG stream ids
const STREAM_LAYOUT: u64 = 1;
const STREAM_POINTS: u64 = 2;
const STREAM_FEATURES: u64 = 3;
const STREAM_TEACHER: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// One mask per connected region of a class.
    Semantic,
    /// One mask per connected region of an object instance.
    Panoptic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_points: usize,
    pub classes: Vec<String>,
    /// Probability that a mask's label is replaced by another class.
    pub noise_rate: f64,
    /// Classes whose masks may be mislabeled; empty means all.
    pub noisy_classes: Vec<String>,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub n_cameras: usize,
    /// Half-width of the ground square (m).
    pub extent: f64,
    pub cars: usize,
    pub pedestrians: usize,
    pub buildings: usize,
    /// Sampling density of object surfaces relative to the ground.
    pub object_density: f64,
    /// Side of the ground tiles that split ground masks (m); 0 disables.
    pub ground_tile: f64,
    pub mask_mode: MaskMode,
    pub image_width: u32,
    pub image_height: u32,
    pub hfov_deg: f64,
    pub camera_height: f64,
    /// Camera ring radius as a multiple of `extent`.
    pub camera_distance: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_points: 5000,
            classes: BUILTIN_CLASSES.iter().map(|s| s.to_string()).collect(),
            noise_rate: 0.0,
            noisy_classes: Vec::new(),
            feature_dim: 32,
            embed_dim: 16,
            n_cameras: 4,
            extent: 20.0,
            cars: 3,
            pedestrians: 4,
            buildings: 2,
            object_density: 4.0,
            ground_tile: 0.0,
            mask_mode: MaskMode::Semantic,
            image_width: 480,
            image_height: 320,
            hfov_deg: 90.0,
            camera_height: 2.5,
            camera_distance: 1.1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("synth spec", reason));
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate must be in [0,1), got {}", self.noise_rate));
        }
        if self.n_points < 100 {
            return bad(format!("n_points must be at least 100, got {}", self.n_points));
        }
        if self.classes.is_empty() {
            return bad("no classes".into());
        }
        for (i, c) in self.classes.iter().enumerate() {
            if !BUILTIN_CLASSES.contains(&c.as_str()) {
                return bad(format!("unknown class {c:?}"));
            }
            if self.classes[..i].contains(c) {
                return bad(format!("class {c:?} listed twice"));
            }
        }
        if let Some(c) = self.noisy_classes.iter().find(|c| !self.classes.contains(c)) {
            return bad(format!("noisy class {c:?} is not a scene class"));
        }
        if self.noise_rate > 0.0 && self.classes.len() < 2 {
            return bad("label noise needs at least two classes".into());
        }
        if self.feature_dim < 5 {
            return bad(format!("feature_dim must be at least 5, got {}", self.feature_dim));
        }
        if self.embed_dim < self.classes.len() {
            return bad(format!(
                "embed_dim {} cannot hold {} orthogonal class prototypes",
                self.embed_dim,
                self.classes.len()
            ));
        }
        if !(self.extent > 0.0 && self.extent < 4000.0) {
            return bad(format!("extent must be in (0, 4000), got {}", self.extent));
        }
        if !(self.object_density > 0.0) || self.ground_tile < 0.0 {
            return bad("object_density must be positive and ground_tile non-negative".into());
        }
        if self.image_width == 0 || self.image_height == 0 || !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return bad("image size must be positive and hfov_deg in (0, 180)".into());
        }
        if !(self.camera_height > 0.0) || !(self.camera_distance > 0.0) {
            return bad("camera_height and camera_distance must be positive".into());
        }
        Ok(())
    }

    fn class_id(&self, name: &str) -> Option<ClassId> {
        self.classes.iter().position(|c| c == name).map(|i| i as ClassId)
    }
}

/// Dictionary of the built-in classes, ids in the order given.
pub fn builtin_dictionary(classes: &[String]) -> Result<ClassDictionary> {
    let entries = classes
        .iter()
        .enumerate()
        .map(|(id, name)| {
            let (_, prompts) = BUILTIN_PROMPTS
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::invalid("synth spec", format!("unknown class {name:?}")))?;
            Ok(ClassEntry {
                id: id as ClassId,
                name: name.clone(),
                prompts: prompts.iter().map(|p| p.to_string()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ClassDictionary::new(entries)
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn overlaps(a: [f64; 4], b: [f64; 4], margin: f64) -> bool {
    a[0] - margin < b[2] && b[0] - margin < a[2] && a[1] - margin < b[3] && b[1] - margin < a[3]
}

/// Object layout of a spec. Ground comes first when "road" is a class.
pub fn generate_layout(spec: &SynthSpec) -> Layout {
    let mut r = rng(spec.seed, STREAM_LAYOUT);
    let mut objects = Vec::new();
    if let Some(c) = spec.class_id("road") {
        objects.push(Object {
            class: c,
            shape: Shape::Ground { extent: quantize(spec.extent) },
        });
    }
    let e = spec.extent;
    let lim = 0.8 * e;
    let place = |objects: &mut Vec<Object>, class: ClassId, size: [f64; 3], cylinder: bool, r: &mut ChaCha8Rng| {
        for _ in 0..1000 {
            let cx = quantize(r.random_range(-lim..lim));
            let cy = quantize(r.random_range(-lim..lim));
            let (hx, hy) = (quantize(size[0] / 2.0), quantize(size[1] / 2.0));
            let fp = [cx - hx, cy - hy, cx + hx, cy + hy];
            if objects.iter().filter_map(|o: &Object| o.footprint()).any(|o| overlaps(o, fp, 1.0)) {
                continue;
            }
            let shape = if cylinder {
                Shape::Cylinder { center: [cx, cy], radius: hx, height: quantize(size[2]) }
            } else {
                Shape::Cuboid { min: [fp[0], fp[1], 0.0], max: [fp[2], fp[3], quantize(size[2])] }
            };
            objects.push(Object { class, shape });
            return;
        }
    };
    if let Some(c) = spec.class_id("building") {
        for _ in 0..spec.buildings {
            let size = [r.random_range(5.0..9.0), r.random_range(5.0..9.0), r.random_range(4.0..9.0)];
            place(&mut objects, c, size, false, &mut r);
        }
    }
    if let Some(c) = spec.class_id("car") {
        for _ in 0..spec.cars {
            let size = if r.random::<bool>() { [4.2, 1.8, 1.5] } else { [1.8, 4.2, 1.5] };
            place(&mut objects, c, size, false, &mut r);
        }
    }
    if let Some(c) = spec.class_id("pedestrian") {
        for _ in 0..spec.pedestrians {
            place(&mut objects, c, [0.6, 0.6, 1.75], true, &mut r);
        }
    }
    Layout { objects }
}

/// Ring of cameras around the origin, all looking at the scene center.
pub fn ring_cameras(spec: &SynthSpec) -> Vec<CalibratedCamera> {
    let radius = spec.camera_distance * spec.extent;
    (0..spec.n_cameras)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / spec.n_cameras as f64;
            let eye = [radius * a.cos(), radius * a.sin(), spec.camera_height];
            CalibratedCamera::look_at(eye, [0.0, 0.0, 0.0], spec.image_width, spec.image_height, spec.hfov_deg)
        })
        .collect()
}

/// Ray-cast hit per pixel (row-major): object position and hit point.
pub fn render_objects(layout: &Layout, cam: &CalibratedCamera) -> Vec<Option<(u32, Vec3)>> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let origin = cam.center();
    (0..w * h)
        .into_par_iter()
        .map(|px| {
            let ray = cam.pixel_ray((px % w) as f64, (px / w) as f64);
            layout.raycast(origin, ray).map(|hit| (hit.object as u32, hit.point))
        })
        .collect()
}

/// Scene of a spec. Point coordinates lie on a 2^-10 m grid.
pub fn generate_scene(spec: &SynthSpec) -> Result<SceneBundle> {
    spec.validate()?;
    let layout = generate_layout(spec);
    let cameras = ring_cameras(spec);
    let images: Vec<Vec<Option<(u32, Vec3)>>> = cameras.iter().map(|c| render_objects(&layout, c)).collect();
    let surfaces = layout.surfaces(spec.object_density);
    let total: f64 = surfaces.iter().map(|s| s.1).sum();
    let mut r = rng(spec.seed, STREAM_POINTS);
    let mut points: Vec<[f32; 3]> = Vec::with_capacity(spec.n_points);
    let mut normals: Vec<Vec3> = Vec::with_capacity(spec.n_points);
    let mut classes: Vec<ClassId> = Vec::with_capacity(spec.n_points);
    let max_attempts = 1000 * spec.n_points;
    let mut attempts = 0;
    while points.len() < spec.n_points {
        attempts += 1;
        if attempts > max_attempts || surfaces.is_empty() {
            return Err(Error::invalid("synth spec", "could not place enough visible points"));
        }
        let mut pick = r.random::<f64>() * total;
        let mut surface: Surface = surfaces[surfaces.len() - 1].0;
        for &(s, w) in &surfaces {
            if pick < w {
                surface = s;
                break;
            }
            pick -= w;
        }
        let Some((p, n)) = layout.sample(surface, &mut r) else {
            continue;
        };
        let q = [quantize(p[0]) as f32, quantize(p[1]) as f32, quantize(p[2]) as f32];
        let class = layout.objects[surface.object()].class;
        let consistent = cameras.iter().zip(&images).all(|(cam, img)| match cam.project_point(point_f64(q)) {
            None => true,
            Some((u, v, _)) => match img[v as usize * cam.width as usize + u as usize] {
                Some((obj, _)) => layout.objects[obj as usize].class == class,
                None => false,
            },
        });
        if consistent {
            points.push(q);
            normals.push(n);
            classes.push(class);
        }
    }
    let raw_features = point_features(spec, &points, &normals, &classes)?;
    let bundle = SceneBundle {
        name: format!("synth-{}", spec.seed),
        points,
        raw_features,
        cameras,
        gt_labels: Some(LabelField::new(classes)),
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Height, verticality of the normal, a noisy class channel, normalized
/// planar position and random Fourier features of the position.
fn point_features(spec: &SynthSpec, points: &[[f32; 3]], normals: &[Vec3], classes: &[ClassId]) -> Result<FeatureMatrix> {
    let e = spec.feature_dim;
    let n_classes = spec.classes.len() as f64;
    let n_fourier = e - 5;
    let mut r = rng(spec.seed, STREAM_FEATURES);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let freqs: Vec<(Vec3, f64)> = (0..n_fourier)
        .map(|j| {
            let scale = (1.0 + 7.0 * j as f64 / n_fourier.max(1) as f64) / spec.extent;
            let w = [unit.sample(&mut r) * scale, unit.sample(&mut r) * scale, unit.sample(&mut r) * scale];
            (w, r.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let mut data = Vec::with_capacity(points.len() * e);
    for ((p, n), &c) in points.iter().zip(normals).zip(classes) {
        let p = point_f64(*p);
        data.push(p[2] / 2.0);
        data.push(n[2].abs());
        data.push((c as f64 + 0.5) / n_classes + 0.1 * unit.sample(&mut r));
        data.push(p[0] / spec.extent);
        data.push(p[1] / spec.extent);
        for (w, b) in &freqs {
            data.push((w[0] * p[0] + w[1] * p[1] + w[2] * p[2] + b).cos());
        }
    }
    FeatureMatrix::new(points.len(), e, data.into_iter().map(|v| v as f32).collect())
}

/// Orthonormal class prototypes (rows), fixed for a given embedding size.
pub fn class_prototypes(num_classes: usize, embed_dim: usize) -> Vec<Vec<f64>> {
    let mut r = ChaCha8Rng::seed_from_u64(PROTOTYPE_SEED ^ embed_dim as u64);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    while out.len() < num_classes {
        let mut v: Vec<f64> = (0..embed_dim).map(|_| unit.sample(&mut r)).collect();
        for _ in 0..2 {
            for q in &out {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
        }
        let n = norm(&v);
        if n > 1e-6 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

/// Teacher output plus the labels its masks would carry without noise.
#[derive(Debug, Clone)]
pub struct SynthTeacher {
    pub teacher: Teacher,
    /// Noise-free label per global mask index.
    pub true_labels: Vec<ClassId>,
}

fn pixel_key(spec: &SynthSpec, layout: &Layout, obj: u32, hit: Vec3) -> u64 {
    let id = match spec.mask_mode {
        MaskMode::Semantic => layout.objects[obj as usize].class as u64,
        MaskMode::Panoptic => obj as u64,
    };
    let tile = match layout.objects[obj as usize].shape {
        Shape::Ground { .. } if spec.ground_tile > 0.0 => {
            let tx = (hit[0] / spec.ground_tile).floor() as i64 + (1 << 19);
            let ty = (hit[1] / spec.ground_tile).floor() as i64 + (1 << 19);
            ((tx as u64) << 20) | ty as u64
        }
        _ => 0,
    };
    (id << 40) | tile
}

/// Connected components (4-neighborhood) of equal keys, numbered in
/// row-major order of their first pixel. Returns the component of each
/// pixel and the key of each component.
fn components(keys: &[Option<u64>], w: usize, h: usize) -> (Vec<u32>, Vec<u64>) {
    const NONE: u32 = u32::MAX;
    let mut comp = vec![NONE; keys.len()];
    let mut comp_keys = Vec::new();
    let mut stack = Vec::new();
    for start in 0..keys.len() {
        let Some(key) = keys[start] else { continue };
        if comp[start] != NONE {
            continue;
        }
        let id = comp_keys.len() as u32;
        comp_keys.push(key);
        comp[start] = id;
        stack.push(start);
        while let Some(px) = stack.pop() {
            let (x, y) = (px % w, px / w);
            let mut visit = |q: usize| {
                if comp[q] == NONE && keys[q] == Some(key) {
                    comp[q] = id;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(px - 1);
            }
            if x + 1 < w {
                visit(px + 1);
            }
            if y > 0 {
                visit(px - w);
            }
            if y + 1 < h {
                visit(px + w);
            }
        }
    }
    (comp, comp_keys)
}

/// Teacher masks for a scene generated from `spec`.
pub fn generate_teacher(bundle: &SceneBundle, dict: &ClassDictionary, spec: &SynthSpec) -> Result<SynthTeacher> {
    spec.validate()?;
    if dict.num_classes() != spec.classes.len() {
        return Err(Error::invalid("synth teacher", "dictionary does not match the spec classes"));
    }
    let layout = generate_layout(spec);
    let protos = class_prototypes(dict.num_classes(), spec.embed_dim);
    let noisy: Vec<bool> = spec
        .classes
        .iter()
        .map(|c| spec.noisy_classes.is_empty() || spec.noisy_classes.contains(c))
        .collect();
    let mut r = rng(spec.seed, STREAM_TEACHER);
    let sigma = Normal::new(0.0, MASK_FEATURE_SIGMA).expect("valid sigma");
    let mut images = Vec::with_capacity(bundle.cameras.len());
    let mut true_labels = Vec::new();
    for (ci, cam) in bundle.cameras.iter().enumerate() {
        let (w, h) = (cam.width as usize, cam.height as usize);
        let hits = render_objects(&layout, cam);
        let keys: Vec<Option<u64>> = hits
            .iter()
            .map(|hit| hit.map(|(obj, p)| pixel_key(spec, &layout, obj, p)))
            .collect();
        let (comp, comp_keys) = components(&keys, w, h);
        let mut runs: Vec<Vec<(u32, u32)>> = vec![Vec::new(); comp_keys.len()];
        let mut px = 0;
        while px < comp.len() {
            let c = comp[px];
            let start = px;
            while px < comp.len() && comp[px] == c {
                px += 1;
            }
            if c != u32::MAX {
                runs[c as usize].push((start as u32, (px - start) as u32));
            }
        }
        let mut masks = Vec::with_capacity(comp_keys.len());
        let mut feats = Vec::with_capacity(comp_keys.len());
        for (k, rle) in runs.into_iter().enumerate() {
            let truth = component_class(spec, &layout, comp_keys[k]);
            let mut label = truth;
            if spec.noise_rate > 0.0 && noisy[truth as usize] && r.random::<f64>() < spec.noise_rate {
                let other = r.random_range(0..dict.num_classes() - 1) as ClassId;
                label = if other < truth { other } else { other + 1 };
            }
            let prompts = dict.prompts_of(label);
            let text = prompts[r.random_range(0..prompts.len())];
            let mut f: Vec<f64> = protos[label as usize].iter().map(|&p| p + sigma.sample(&mut r)).collect();
            let n = norm(&f);
            f.iter_mut().for_each(|v| *v /= n);
            masks.push(Mask {
                index: true_labels.len() as u32,
                label,
                text,
                rle,
            });
            feats.push(f);
            true_labels.push(truth);
        }
        let features = FeatureMatrix::from_rows_f64(&feats, spec.embed_dim)?;
        images.push(MaskSet::new(ci, cam.width, cam.height, masks, features)?);
    }
    let text_rows: Vec<Vec<f64>> = (0..dict.num_prompts())
        .map(|t| dict.class_of_prompt(t as u32).map(|c| protos[c as usize].clone()))
        .collect::<Result<_>>()?;
    Ok(SynthTeacher {
        teacher: Teacher {
            images,
            text_feats: FeatureMatrix::from_rows_f64(&text_rows, spec.embed_dim)?,
        },
        true_labels,
    })
}

fn component_class(spec: &SynthSpec, layout: &Layout, key: u64) -> ClassId {
    let id = key >> 40;
    match spec.mask_mode {
        MaskMode::Semantic => id as ClassId,
        MaskMode::Panoptic => layout.objects[id as usize].class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n_points: 800,
            image_width: 160,
            image_height: 100,
            ..Default::default()
        }
    }

    #[test]
    fn exact_point_count_and_determinism() {
        let spec = small();
        let a = generate_scene(&spec).unwrap();
        assert_eq!(a.points.len(), 800);
        assert_eq!(a, generate_scene(&spec).unwrap());
    }

    #[test]
    fn road_only_scene() {
        let spec = SynthSpec {
            classes: vec!["road".into()],
            ..small()
        };
        let b = generate_scene(&spec).unwrap();
        assert!(b.gt_labels.unwrap().as_slice().iter().all(|&l| l == 0));
        assert!(b.points.iter().all(|p| p[2] == 0.0));
    }

    #[test]
    fn coordinates_on_grid() {
        let b = generate_scene(&small()).unwrap();
        for p in &b.points {
            for &c in p {
                assert_eq!((c as f64 * 1024.0).fract(), 0.0);
            }
        }
    }

    #[test]
    fn prototypes_orthonormal() {
        let p = class_prototypes(4, 16);
        for i in 0..4 {
            for j in 0..4 {
                let d: f64 = p[i].iter().zip(&p[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn components_split_and_number_row_major() {
        let keys = [Some(1), Some(1), None, Some(2), None, Some(1), Some(2), Some(2)];
        let (comp, ck) = components(&keys, 4, 2);
        assert_eq!(comp, vec![0, 0, u32::MAX, 1, u32::MAX, 0, 1, 1]);
        assert_eq!(ck, vec![1, 2]);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_scene(&SynthSpec { noise_rate: 1.0, ..small() }).is_err());
        assert!(generate_scene(&SynthSpec { n_points: 99, ..small() }).is_err());
        assert!(generate_scene(&SynthSpec { classes: vec!["tree".into()], ..small() }).is_err());
    }
}
