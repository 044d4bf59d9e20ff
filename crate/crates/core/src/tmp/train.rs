//! Toy projection head trained with the tri-modal objective.
//!
//! The head is an affine map from raw point features to the teacher's
//! embedding space. A superpoint embedding is the head applied to the mean
//! raw feature of its points, which equals the mean of the per-point
//! embeddings. Each step uses every pair of the scene as one batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classdict::{semi_positive_weights, ClassDictionary};
use crate::correspondence::{mean_rows, Correspondence};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::io::{SceneBundle, Teacher};
use crate::labels::{ClassId, UNLABELED};
use crate::math::{argmax, cosine};
use crate::projection::assign_masks;

use super::loss::{loss_tmp, TmpBatch, DEFAULT_ALPHA_IMAGE, DEFAULT_ALPHA_TEXT, DEFAULT_TAU};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Row-major `output_dim × input_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ProjectionHead {
    /// Weights then bias drawn from uniform(-0.1, 0.1).
    pub fn init(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..input_dim * output_dim).map(|_| rng.random_range(-0.1..0.1)).collect();
        let bias = (0..output_dim).map(|_| rng.random_range(-0.1..0.1)).collect();
        Self {
            input_dim,
            output_dim,
            weights,
            bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.input_dim * self.output_dim {
            return Err(Error::LengthMismatch {
                what: "head weights".into(),
                expected: self.input_dim * self.output_dim,
                actual: self.weights.len(),
            });
        }
        if self.bias.len() != self.output_dim {
            return Err(Error::LengthMismatch {
                what: "head bias".into(),
                expected: self.output_dim,
                actual: self.bias.len(),
            });
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head".into()));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let e = self.input_dim;
        (0..self.output_dim)
            .map(|o| {
                let w = &self.weights[o * e..(o + 1) * e];
                self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Embeddings of every point, row-major `N × output_dim`.
    pub fn embed_points(&self, features: &FeatureMatrix) -> Vec<f64> {
        (0..features.rows())
            .flat_map(|i| self.apply(&features.row_f64(i)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub tau: f64,
    pub alpha_image: f64,
    pub alpha_text: f64,
    /// Mask-guided superpoints; when false, k-NN groups of `knn` points.
    pub superpoints: bool,
    pub knn: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 0.5,
            seed: 0,
            tau: DEFAULT_TAU,
            alpha_image: DEFAULT_ALPHA_IMAGE,
            alpha_text: DEFAULT_ALPHA_TEXT,
            superpoints: true,
            knn: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub l_ip: f64,
    pub l_tp: f64,
    pub l_tmp: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub head: ProjectionHead,
    /// Losses evaluated before each update.
    pub trace: Vec<TraceRow>,
    pub correspondence: Correspondence,
}

/// Everything a step needs that does not depend on the head.
struct Problem {
    dim: usize,
    /// Mean raw feature per pair, row-major `R × E`.
    means: Vec<f64>,
    batch: TmpBatch,
    alpha: Vec<f64>,
}

fn build_problem(
    bundle: &SceneBundle,
    teacher: &Teacher,
    dict: &ClassDictionary,
    cfg: &TrainConfig,
) -> Result<(Problem, Correspondence)> {
    let assignments = assign_masks(bundle, teacher)?;
    let corr = if cfg.superpoints {
        Correspondence::from_assignments(bundle, teacher, &assignments)?
    } else {
        Correspondence::knn_groups(bundle, teacher, &assignments, cfg.knn)?
    };
    if corr.is_empty() {
        return Err(Error::invalid("training data", "no mask receives any point"));
    }
    let e = bundle.raw_features.dim();
    let raw: Vec<f64> = bundle.raw_features.data().iter().map(|&v| v as f64).collect();
    let means: Vec<f64> = corr.pairs.iter().flat_map(|p| mean_rows(&raw, e, &p.points)).collect();
    let dim = teacher.embed_dim();
    let prompts: Vec<u32> = corr.pairs.iter().map(|p| p.text).collect();
    if let Some(&t) = prompts.iter().find(|&&t| t as usize >= teacher.text_feats.rows()) {
        return Err(Error::invalid("teacher", format!("text index {t} out of range")));
    }
    let text_rows: Vec<Vec<f64>> = prompts.iter().map(|&t| teacher.text_feats.row_f64(t as usize)).collect();
    let alpha = semi_positive_weights(&FeatureMatrix::from_rows_f64(&text_rows, dim)?, &prompts, dict)?;
    let batch = TmpBatch {
        dim,
        superpoints: vec![0.0; corr.len() * dim],
        superpixels: corr.pairs.iter().flat_map(|p| p.superpixel.iter().copied()).collect(),
        texts: text_rows.concat(),
        prompts,
        tau: cfg.tau,
        alpha_image: cfg.alpha_image,
        alpha_text: cfg.alpha_text,
    };
    Ok((
        Problem {
            dim: e,
            means,
            batch,
            alpha,
        },
        corr,
    ))
}

pub fn train_toy_head(
    bundle: &SceneBundle,
    teacher: &Teacher,
    dict: &ClassDictionary,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    let (mut prob, corr) = build_problem(bundle, teacher, dict, cfg)?;
    let e = prob.dim;
    let d = prob.batch.dim;
    let r = corr.len();
    let mut head = ProjectionHead::init(e, d, cfg.seed);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        for i in 0..r {
            let m = head.apply(&prob.means[i * e..(i + 1) * e]);
            prob.batch.superpoints[i * d..(i + 1) * d].copy_from_slice(&m);
        }
        if prob.batch.superpoints.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step });
        }
        let report = loss_tmp(&prob.batch, &prob.alpha).map_err(|err| match err {
            Error::ZeroNorm(_) | Error::NonFinite(_) => Error::Diverged { step },
            other => other,
        })?;
        if !report.l_tmp.is_finite() {
            return Err(Error::Diverged { step });
        }
        trace.push(TraceRow {
            step,
            l_ip: report.l_ip,
            l_tp: report.l_tp,
            l_tmp: report.l_tmp,
        });
        let g = &report.grad_superpoints;
        for i in 0..r {
            let x = &prob.means[i * e..(i + 1) * e];
            for o in 0..d {
                let go = g[i * d + o];
                if go == 0.0 {
                    continue;
                }
                head.bias[o] -= cfg.lr * go;
                let w = &mut head.weights[o * e..(o + 1) * e];
                for (wk, xk) in w.iter_mut().zip(x) {
                    *wk -= cfg.lr * go * xk;
                }
            }
        }
    }
    Ok(TrainOutput {
        head,
        trace,
        correspondence: corr,
    })
}

/// Class of the dictionary prompt whose text feature is closest (cosine) to
/// `embedding`; ties go to the lowest prompt id.
pub fn nearest_text_class(embedding: &[f64], text_feats: &FeatureMatrix, dict: &ClassDictionary) -> Result<ClassId> {
    let sims: Vec<f64> = (0..text_feats.rows())
        .map(|t| cosine(embedding, &text_feats.row_f64(t)))
        .collect();
    match argmax(&sims) {
        Some(t) => dict.class_of_prompt(t as u32),
        None => Ok(UNLABELED),
    }
}

/// Per-point prediction: nearest text class of each point's head embedding.
pub fn predict_points(
    head: &ProjectionHead,
    features: &FeatureMatrix,
    text_feats: &FeatureMatrix,
    dict: &ClassDictionary,
) -> Result<Vec<ClassId>> {
    let emb = head.embed_points(features);
    let d = head.output_dim;
    (0..features.rows())
        .map(|i| nearest_text_class(&emb[i * d..(i + 1) * d], text_feats, dict))
        .collect()
}

/// Fraction of superpoints whose pooled embedding's nearest text class
/// equals the majority ground-truth class of their points. Superpoints
/// without labeled points are skipped.
pub fn superpoint_accuracy(
    head: &ProjectionHead,
    bundle: &SceneBundle,
    teacher: &Teacher,
    dict: &ClassDictionary,
    corr: &Correspondence,
) -> Result<f64> {
    let gt = bundle
        .gt_labels
        .as_ref()
        .ok_or_else(|| Error::invalid("scene", "ground-truth labels required"))?;
    let e = bundle.raw_features.dim();
    let raw: Vec<f64> = bundle.raw_features.data().iter().map(|&v| v as f64).collect();
    let mut hits = 0usize;
    let mut total = 0usize;
    for pair in &corr.pairs {
        let Some(truth) = majority(pair.points.iter().map(|&i| gt.get(i))) else {
            continue;
        };
        let m = head.apply(&mean_rows(&raw, e, &pair.points));
        total += 1;
        if nearest_text_class(&m, &teacher.text_feats, dict)? == truth {
            hits += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Most frequent labeled class; ties go to the lowest id.
pub(crate) fn majority(labels: impl Iterator<Item = ClassId>) -> Option<ClassId> {
    let mut counts: std::collections::BTreeMap<ClassId, usize> = Default::default();
    for l in labels.filter(|&l| l != UNLABELED) {
        *counts.entry(l).or_default() += 1;
    }
    let mut best: Option<(ClassId, usize)> = None;
    for (c, n) in counts {
        if best.map_or(true, |b| n > b.1) {
            best = Some((c, n));
        }
    }
    best.map(|b| b.0)
}
