//! Superpixel-superpoint and text-superpoint contrastive losses.
//!
//! Similarities are cosines, so rows need not be unit length; gradients are
//! taken with respect to the superpoint rows only and include the
//! normalization Jacobian `d cos(a, p)/dp = (â - cos·p̂) / |p|`.

use rayon::prelude::*;
use serde::Serialize;

use crate::classdict::PromptId;
use crate::error::{Error, Result};
use crate::math::{dot, norm};

pub const DEFAULT_TAU: f64 = 0.07;
pub const DEFAULT_ALPHA_IMAGE: f64 = 0.5;
pub const DEFAULT_ALPHA_TEXT: f64 = 0.5;

/// One contrastive batch. All matrices are row-major `R'×dim`; row `i` of
/// each matrix belongs to the same superpixel/superpoint pair.
#[derive(Debug, Clone)]
pub struct TmpBatch {
    pub dim: usize,
    pub superpoints: Vec<f64>,
    pub superpixels: Vec<f64>,
    pub texts: Vec<f64>,
    /// Prompt of each row; rows sharing a prompt are not negatives of each
    /// other in the text loss.
    pub prompts: Vec<PromptId>,
    pub tau: f64,
    pub alpha_image: f64,
    pub alpha_text: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossValue {
    pub loss: f64,
    /// Row-major `R'×dim`.
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub l_ip: f64,
    pub l_tp: f64,
    pub l_tmp: f64,
    pub grad_superpoints: Vec<f64>,
}

impl TmpBatch {
    pub fn rows(&self) -> usize {
        self.prompts.len()
    }

    pub fn superpoint(&self, i: usize) -> &[f64] {
        &self.superpoints[i * self.dim..(i + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rows();
        if r == 0 {
            return Err(Error::invalid("batch", "no rows"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("batch", "zero feature dimension"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::invalid("batch", format!("tau must be positive, got {}", self.tau)));
        }
        for (w, name) in [(self.alpha_image, "alpha_image"), (self.alpha_text, "alpha_text")] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid("batch", format!("{name} must be in [0,1], got {w}")));
            }
        }
        for (m, name) in [
            (&self.superpoints, "superpoints"),
            (&self.superpixels, "superpixels"),
            (&self.texts, "texts"),
        ] {
            if m.len() != r * self.dim {
                return Err(Error::LengthMismatch {
                    what: format!("batch {name}"),
                    expected: r * self.dim,
                    actual: m.len(),
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("batch {name}")));
            }
            if let Some(i) = (0..r).find(|&i| norm(&m[i * self.dim..(i + 1) * self.dim]) == 0.0) {
                return Err(Error::ZeroNorm(format!("batch {name} row {i}")));
            }
        }
        Ok(())
    }
}

/// Image-superpoint loss: every other superpoint is a negative.
pub fn loss_ip(batch: &TmpBatch) -> Result<LossValue> {
    batch.validate()?;
    Ok(contrastive(batch, &batch.superpixels, |_, _| Some(1.0)))
}

/// Text-superpoint loss with semi-positive weights `alpha` (row-major
/// `R'×R'`). Rows carrying the same prompt as the anchor are left out of its
/// denominator; the other negatives are scaled by `1 - alpha_ij`.
pub fn loss_tp(batch: &TmpBatch, alpha: &[f64]) -> Result<LossValue> {
    batch.validate()?;
    check_alpha(alpha, batch.rows())?;
    let r = batch.rows();
    let prompts = &batch.prompts;
    Ok(contrastive(batch, &batch.texts, |i, j| {
        (prompts[i] != prompts[j]).then(|| 1.0 - alpha[i * r + j])
    }))
}

/// Weighted sum of both losses and their gradients.
pub fn loss_tmp(batch: &TmpBatch, alpha: &[f64]) -> Result<LossReport> {
    let ip = loss_ip(batch)?;
    let tp = loss_tp(batch, alpha)?;
    let (wi, wt) = (batch.alpha_image, batch.alpha_text);
    Ok(LossReport {
        l_ip: ip.loss,
        l_tp: tp.loss,
        l_tmp: wi * ip.loss + wt * tp.loss,
        grad_superpoints: ip.grad.iter().zip(&tp.grad).map(|(a, b)| wi * a + wt * b).collect(),
    })
}

fn check_alpha(alpha: &[f64], r: usize) -> Result<()> {
    if alpha.len() != r * r {
        return Err(Error::LengthMismatch {
            what: "semi-positive weights".into(),
            expected: r * r,
            actual: alpha.len(),
        });
    }
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("semi-positive weights".into()));
    }
    for i in 0..r {
        for j in (i + 1)..r {
            if (alpha[i * r + j] - alpha[j * r + i]).abs() > 1e-9 {
                return Err(Error::invalid(
                    "semi-positive weights",
                    format!("asymmetric at ({i}, {j})"),
                ));
            }
        }
    }
    Ok(())
}

/// Shared InfoNCE core. `coef(i, j)` for `j != i` is the logit scale of a
/// negative, or `None` to leave `j` out of row `i`'s denominator; the
/// positive always has scale 1.
fn contrastive<F>(batch: &TmpBatch, anchors: &[f64], coef: F) -> LossValue
where
    F: Fn(usize, usize) -> Option<f64> + Sync,
{
    let r = batch.rows();
    let dim = batch.dim;
    let tau = batch.tau;
    let row = |m: &'_ [f64], i: usize| -> Vec<f64> { m[i * dim..(i + 1) * dim].to_vec() };
    let a_hat: Vec<Vec<f64>> = (0..r).map(|i| unit(&row(anchors, i))).collect();
    let p_norm: Vec<f64> = (0..r).map(|j| norm(batch.superpoint(j))).collect();
    let p_hat: Vec<Vec<f64>> = (0..r).map(|j| unit(batch.superpoint(j))).collect();
    let sim: Vec<f64> = (0..r * r)
        .map(|k| dot(&a_hat[k / r], &p_hat[k % r]))
        .collect();

    // per anchor row: loss term and dL/ds_ij (before the 1/R' factor)
    let rows: Vec<(f64, Vec<f64>)> = (0..r)
        .into_par_iter()
        .map(|i| {
            let mut terms: Vec<(usize, f64, f64)> = Vec::with_capacity(r);
            for j in 0..r {
                let c = if j == i { Some(1.0) } else { coef(i, j) };
                if let Some(c) = c {
                    terms.push((j, c, c * sim[i * r + j] / tau));
                }
            }
            let max = terms.iter().map(|t| t.2).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = terms.iter().map(|t| (t.2 - max).exp()).sum();
            let lse = max + sum.ln();
            let loss = lse - sim[i * r + i] / tau;
            let mut ds = vec![0.0; r];
            for &(j, c, z) in &terms {
                let q = (z - lse).exp();
                let delta = if j == i { 1.0 } else { 0.0 };
                ds[j] = (q - delta) * c / tau;
            }
            (loss, ds)
        })
        .collect();

    let inv_r = 1.0 / r as f64;
    let loss = rows.iter().map(|(l, _)| l).sum::<f64>() * inv_r;
    let grad: Vec<f64> = (0..r)
        .into_par_iter()
        .flat_map_iter(|j| {
            let mut g = vec![0.0; dim];
            if p_norm[j] > 0.0 {
                for (i, (_, ds)) in rows.iter().enumerate() {
                    let w = ds[j] * inv_r / p_norm[j];
                    if w == 0.0 {
                        continue;
                    }
                    let s = sim[i * r + j];
                    for d in 0..dim {
                        g[d] += w * (a_hat[i][d] - s * p_hat[j][d]);
                    }
                }
            }
            g
        })
        .collect();
    LossValue { loss, grad }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / n).collect()
    }
}
