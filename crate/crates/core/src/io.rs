//! On-disk formats.
//!
//! A scene directory holds `scene.json` (dimensions, calibration, byte order),
//! `points.f32` (N×3), `features.f32` (N×E) and optionally `gt_labels.u16`.
//! A teacher directory holds `masks.json` (per-image run-length masks),
//! `mask_feats.f32` (R×D) and `text_feats.f32` (T×D). All binary payloads are
//! little-endian and headerless.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{f32s_from_le_bytes, f32s_to_le_bytes, FeatureMatrix};
use crate::labels::{ClassId, LabelField};
use crate::projection::CalibratedCamera;

pub const BYTE_ORDER: &str = "little-endian";
pub const SCENE_HEADER: &str = "scene.json";
pub const POINTS_FILE: &str = "points.f32";
pub const FEATURES_FILE: &str = "features.f32";
pub const GT_FILE: &str = "gt_labels.u16";
pub const MASKS_HEADER: &str = "masks.json";
pub const MASK_FEATS_FILE: &str = "mask_feats.f32";
pub const TEXT_FEATS_FILE: &str = "text_feats.f32";

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub name: String,
    pub points: Vec<[f32; 3]>,
    pub raw_features: FeatureMatrix,
    pub cameras: Vec<CalibratedCamera>,
    pub gt_labels: Option<LabelField>,
}

impl SceneBundle {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::invalid("scene", "no points"));
        }
        if self.raw_features.dim() == 0 {
            return Err(Error::invalid("scene", "feature dimension is zero"));
        }
        if self.raw_features.rows() != self.points.len() {
            return Err(Error::LengthMismatch {
                what: "feature rows".into(),
                expected: self.points.len(),
                actual: self.raw_features.rows(),
            });
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        if self.raw_features.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("raw features".into()));
        }
        if let Some(gt) = &self.gt_labels {
            if gt.len() != self.points.len() {
                return Err(Error::LengthMismatch {
                    what: "gt labels".into(),
                    expected: self.points.len(),
                    actual: gt.len(),
                });
            }
        }
        for cam in &self.cameras {
            cam.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneHeader {
    byte_order: String,
    name: String,
    n_points: usize,
    feature_dim: usize,
    has_gt_labels: bool,
    cameras: Vec<CalibratedCamera>,
}

pub fn write_bundle(bundle: &SceneBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = SceneHeader {
        byte_order: BYTE_ORDER.into(),
        name: bundle.name.clone(),
        n_points: bundle.points.len(),
        feature_dim: bundle.raw_features.dim(),
        has_gt_labels: bundle.gt_labels.is_some(),
        cameras: bundle.cameras.clone(),
    };
    write_json(&dir.join(SCENE_HEADER), &header)?;
    let flat: Vec<f32> = bundle.points.iter().flatten().copied().collect();
    write_bytes(&dir.join(POINTS_FILE), &f32s_to_le_bytes(&flat))?;
    write_bytes(&dir.join(FEATURES_FILE), &bundle.raw_features.to_le_bytes())?;
    let gt_path = dir.join(GT_FILE);
    match &bundle.gt_labels {
        Some(gt) => write_bytes(&gt_path, &gt.to_le_bytes())?,
        None if gt_path.exists() => fs::remove_file(&gt_path).map_err(|e| Error::io(&gt_path, e))?,
        None => {}
    }
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<SceneBundle> {
    let header: SceneHeader = read_json(&dir.join(SCENE_HEADER))?;
    check_byte_order(&header.byte_order)?;
    if header.n_points == 0 {
        return Err(Error::invalid("scene header", "n_points must be at least 1"));
    }
    if header.feature_dim == 0 {
        return Err(Error::invalid("scene header", "feature_dim must be at least 1"));
    }
    let n = header.n_points;
    let flat = read_f32s(&dir.join(POINTS_FILE), n * 3)?;
    let points = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let feats = read_f32s(&dir.join(FEATURES_FILE), n * header.feature_dim)?;
    let raw_features = FeatureMatrix::new(n, header.feature_dim, feats)?;
    let gt_labels = if header.has_gt_labels {
        let path = dir.join(GT_FILE);
        let bytes = read_exact_len(&path, n * 2)?;
        Some(LabelField::from_le_bytes(&bytes)?)
    } else {
        None
    };
    let bundle = SceneBundle {
        name: header.name,
        points,
        raw_features,
        cameras: header.cameras,
        gt_labels,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// One teacher mask. `index` is the mask's global row in `mask_feats.f32`;
/// `text` is the row of its prompt in `text_feats.f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    pub index: u32,
    pub label: ClassId,
    pub text: u32,
    /// Row-major `(start, run)` pixel runs.
    pub rle: Vec<(u32, u32)>,
}

/// Teacher output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub camera: usize,
    pub width: u32,
    pub height: u32,
    pub masks: Vec<Mask>,
    /// Mask features, row `i` belongs to `masks[i]`.
    pub features: FeatureMatrix,
    owner: Vec<u32>,
}

const NO_MASK: u32 = u32::MAX;

impl MaskSet {
    pub fn new(
        camera: usize,
        width: u32,
        height: u32,
        masks: Vec<Mask>,
        features: FeatureMatrix,
    ) -> Result<Self> {
        if features.rows() != masks.len() {
            return Err(Error::LengthMismatch {
                what: format!("mask features of image {camera}"),
                expected: masks.len(),
                actual: features.rows(),
            });
        }
        let n_pixels = width as usize * height as usize;
        let mut owner = vec![NO_MASK; n_pixels];
        // highest global index paints last
        let mut order: Vec<usize> = (0..masks.len()).collect();
        order.sort_by_key(|&i| masks[i].index);
        for i in order {
            for &(start, run) in &masks[i].rle {
                let end = start as usize + run as usize;
                if end > n_pixels {
                    return Err(Error::invalid(
                        "mask rle",
                        format!(
                            "run ({start}, {run}) of mask {} overruns {width}x{height} image",
                            masks[i].index
                        ),
                    ));
                }
                owner[start as usize..end].fill(i as u32);
            }
        }
        Ok(Self {
            camera,
            width,
            height,
            masks,
            features,
            owner,
        })
    }

    /// Position in `masks` of the mask owning pixel (u, v).
    pub fn mask_at(&self, u: u32, v: u32) -> Option<usize> {
        if u >= self.width || v >= self.height {
            return None;
        }
        match self.owner[v as usize * self.width as usize + u as usize] {
            NO_MASK => None,
            m => Some(m as usize),
        }
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Row-major run-length encoding of a boolean pixel mask.
pub fn encode_rle(pixels: impl IntoIterator<Item = bool>) -> Vec<(u32, u32)> {
    let mut runs = Vec::new();
    let mut current: Option<(u32, u32)> = None;
    for (i, on) in pixels.into_iter().enumerate() {
        match (on, current.as_mut()) {
            (true, Some(run)) => run.1 += 1,
            (true, None) => current = Some((i as u32, 1)),
            (false, Some(_)) => runs.push(current.take().unwrap()),
            (false, None) => {}
        }
    }
    runs.extend(current);
    runs
}

#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub images: Vec<MaskSet>,
    /// One row per dictionary prompt.
    pub text_feats: FeatureMatrix,
}

impl Teacher {
    pub fn embed_dim(&self) -> usize {
        self.text_feats.dim()
    }

    pub fn mask_count(&self) -> usize {
        self.images.iter().map(|m| m.masks.len()).sum()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MasksHeader {
    byte_order: String,
    embed_dim: usize,
    n_texts: usize,
    images: Vec<ImageRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageRecord {
    camera: usize,
    width: u32,
    height: u32,
    masks: Vec<Mask>,
}

pub fn write_teacher(teacher: &Teacher, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = teacher.embed_dim();
    let total = teacher.mask_count();
    let mut feats = vec![0f32; total * d];
    for img in &teacher.images {
        if img.features.dim() != d {
            return Err(Error::LengthMismatch {
                what: "mask feature dimension".into(),
                expected: d,
                actual: img.features.dim(),
            });
        }
        for (m, mask) in img.masks.iter().enumerate() {
            let row = mask.index as usize;
            if row >= total {
                return Err(Error::invalid("teacher", format!("mask index {row} out of range")));
            }
            feats[row * d..(row + 1) * d].copy_from_slice(img.features.row(m));
        }
    }
    if feats.iter().any(|v| !v.is_finite()) || teacher.text_feats.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("teacher features".into()));
    }
    let header = MasksHeader {
        byte_order: BYTE_ORDER.into(),
        embed_dim: d,
        n_texts: teacher.text_feats.rows(),
        images: teacher
            .images
            .iter()
            .map(|img| ImageRecord {
                camera: img.camera,
                width: img.width,
                height: img.height,
                masks: img.masks.clone(),
            })
            .collect(),
    };
    write_json(&dir.join(MASKS_HEADER), &header)?;
    write_bytes(&dir.join(MASK_FEATS_FILE), &f32s_to_le_bytes(&feats))?;
    write_bytes(&dir.join(TEXT_FEATS_FILE), &teacher.text_feats.to_le_bytes())?;
    Ok(())
}

pub fn read_teacher(dir: &Path) -> Result<Teacher> {
    let header: MasksHeader = read_json(&dir.join(MASKS_HEADER))?;
    check_byte_order(&header.byte_order)?;
    let d = header.embed_dim;
    if d == 0 {
        return Err(Error::invalid("masks header", "embed_dim must be at least 1"));
    }
    let total: usize = header.images.iter().map(|i| i.masks.len()).sum();
    let feats_path = dir.join(MASK_FEATS_FILE);
    let bytes = read_file(&feats_path)?;
    if bytes.len() != total * d * 4 {
        return Err(Error::LengthMismatch {
            what: format!(
                "{} (feature rows vs mask count {total})",
                feats_path.display()
            ),
            expected: total * d * 4,
            actual: bytes.len(),
        });
    }
    let all_feats = f32s_from_le_bytes(&bytes);
    let text = read_f32s(&dir.join(TEXT_FEATS_FILE), header.n_texts * d)?;
    let text_feats = FeatureMatrix::new(header.n_texts, d, text)?;

    let mut seen = vec![false; total];
    let mut images = Vec::with_capacity(header.images.len());
    for rec in header.images {
        let mut rows = Vec::with_capacity(rec.masks.len() * d);
        for m in &rec.masks {
            let i = m.index as usize;
            if i >= total || std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid(
                    "masks header",
                    format!("mask index {i} duplicated or out of range"),
                ));
            }
            if m.text as usize >= header.n_texts {
                return Err(Error::invalid(
                    "masks header",
                    format!("mask {i} refers to text row {} of {}", m.text, header.n_texts),
                ));
            }
            rows.extend_from_slice(&all_feats[i * d..(i + 1) * d]);
        }
        let features = FeatureMatrix::new(rec.masks.len(), d, rows)?;
        images.push(MaskSet::new(rec.camera, rec.width, rec.height, rec.masks, features)?);
    }
    Ok(Teacher { images, text_feats })
}

pub fn write_labels(labels: &LabelField, path: &Path) -> Result<()> {
    write_bytes(path, &labels.to_le_bytes())
}

pub fn read_labels(path: &Path) -> Result<LabelField> {
    LabelField::from_le_bytes(&read_file(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(PathBuf::from(path))),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn read_exact_len(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            what: path.display().to_string(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes)
}

fn read_f32s(path: &Path, count: usize) -> Result<Vec<f32>> {
    let values = f32s_from_le_bytes(&read_exact_len(path, count * 4)?);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(path.display().to_string()));
    }
    Ok(values)
}

fn check_byte_order(s: &str) -> Result<()> {
    if s != BYTE_ORDER {
        return Err(Error::invalid("header", format!("unsupported byte order {s:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_bundle() -> SceneBundle {
        SceneBundle {
            name: "tiny".into(),
            points: vec![[1.0, 2.0, 3.0]],
            raw_features: FeatureMatrix::new(1, 1, vec![0.5]).unwrap(),
            cameras: vec![],
            gt_labels: None,
        }
    }

    #[test]
    fn single_point_layout() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&tiny_bundle(), dir.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, vec!["features.f32", "points.f32", "scene.json"]);
        assert_eq!(fs::metadata(dir.path().join(POINTS_FILE)).unwrap().len(), 12);
        assert_eq!(read_bundle(dir.path()).unwrap(), tiny_bundle());
    }

    #[test]
    fn nan_coordinate_rejected() {
        let mut b = tiny_bundle();
        b.points[0][1] = f32::NAN;
        let dir = tempfile::tempdir().unwrap();
        let err = write_bundle(&b, dir.path()).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
    }

    #[test]
    fn truncated_points_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&tiny_bundle(), dir.path()).unwrap();
        fs::write(dir.path().join(POINTS_FILE), [0u8; 8]).unwrap();
        let err = read_bundle(dir.path()).unwrap_err();
        assert!(err.to_string().contains("length mismatch"), "{err}");
    }

    #[test]
    fn zero_point_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&tiny_bundle(), dir.path()).unwrap();
        let path = dir.path().join(SCENE_HEADER);
        let text = fs::read_to_string(&path).unwrap().replace("\"n_points\": 1", "\"n_points\": 0");
        fs::write(&path, text).unwrap();
        assert!(read_bundle(dir.path()).is_err());
    }

    #[test]
    fn missing_file_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&tiny_bundle(), dir.path()).unwrap();
        fs::remove_file(dir.path().join(FEATURES_FILE)).unwrap();
        assert!(matches!(read_bundle(dir.path()), Err(Error::MissingFile(_))));
    }

    fn two_mask_teacher() -> Teacher {
        let masks = vec![
            Mask { index: 0, label: 1, text: 0, rle: vec![(0, 4)] },
            Mask { index: 1, label: 2, text: 1, rle: vec![(2, 4)] },
        ];
        let feats = FeatureMatrix::new(2, 4, (0..8).map(|v| v as f32).collect()).unwrap();
        let text = FeatureMatrix::new(2, 4, vec![1.0; 8]).unwrap();
        Teacher {
            images: vec![MaskSet::new(0, 4, 2, masks, feats).unwrap()],
            text_feats: text,
        }
    }

    #[test]
    fn teacher_round_trip_and_overlap() {
        let dir = tempfile::tempdir().unwrap();
        let t = two_mask_teacher();
        write_teacher(&t, dir.path()).unwrap();
        let back = read_teacher(dir.path()).unwrap();
        assert_eq!(back, t);
        let img = &back.images[0];
        assert_eq!(img.masks.len(), 2);
        assert_eq!((img.features.rows(), img.features.dim()), (2, 4));
        assert_eq!(img.features.row(1), &[4.0, 5.0, 6.0, 7.0]);
        // pixels 2 and 3 are claimed by both; the higher index wins
        assert_eq!(img.mask_at(1, 0), Some(0));
        assert_eq!(img.mask_at(2, 0), Some(1));
        assert_eq!(img.mask_at(1, 1), Some(1));
        assert_eq!(img.mask_at(2, 1), None);
    }

    #[test]
    fn feature_row_count_must_match() {
        let dir = tempfile::tempdir().unwrap();
        write_teacher(&two_mask_teacher(), dir.path()).unwrap();
        fs::write(dir.path().join(MASK_FEATS_FILE), vec![0u8; 3 * 4 * 4]).unwrap();
        let err = read_teacher(dir.path()).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { .. }), "{err}");
    }

    #[test]
    fn rle_overrun_rejected() {
        let masks = vec![Mask { index: 0, label: 0, text: 0, rle: vec![(6, 3)] }];
        let feats = FeatureMatrix::zeros(1, 2);
        assert!(MaskSet::new(0, 4, 2, masks, feats).is_err());
    }

    #[test]
    fn rle_encoding() {
        let px = [false, true, true, false, true];
        assert_eq!(encode_rle(px), vec![(1, 2), (4, 1)]);
        assert!(encode_rle([false; 3]).is_empty());
    }
}
