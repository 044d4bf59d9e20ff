//! End-to-end run over one scene: pseudo-labels, optional head training
//! and prediction, optional propagation, with metrics per stage.

use serde::{Deserialize, Serialize};

use crate::afi::{afi, AfiConfig, AfiInput};
use crate::classdict::ClassDictionary;
use crate::error::Result;
use crate::eval::{confusion, miou, Metrics};
use crate::io::{SceneBundle, Teacher};
use crate::labels::LabelField;
use crate::projection::{fov_mask, pseudo_labels};
use crate::tmp::{predict_points, superpoint_accuracy, train_toy_head, ProjectionHead, TraceRow, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Train the projection head and predict with it; otherwise the
    /// pseudo-labels are the prediction.
    pub tmp: bool,
    pub afi: bool,
    pub train: TrainConfig,
    pub afi_config: AfiConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tmp: true,
            afi: true,
            train: TrainConfig::default(),
            afi_config: AfiConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageMetrics {
    pub stage: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub pseudo: LabelField,
    pub predict: LabelField,
    pub afi: Option<LabelField>,
    pub head: Option<ProjectionHead>,
    pub trace: Vec<TraceRow>,
    /// Nearest-text accuracy of the trained superpoints.
    pub superpoint_accuracy: Option<f64>,
    /// Present when the scene has ground truth.
    pub metrics: Vec<StageMetrics>,
}

impl PipelineResult {
    /// Output of the last enabled stage.
    pub fn final_labels(&self) -> &LabelField {
        self.afi.as_ref().unwrap_or(&self.predict)
    }
}

pub fn run_pipeline(
    bundle: &SceneBundle,
    teacher: &Teacher,
    dict: &ClassDictionary,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    cfg.afi_config.validate()?;
    let c = dict.num_classes();
    let pseudo = pseudo_labels(bundle, teacher)?;
    pseudo.validate(c)?;
    let (predict, head, trace, sp_acc) = if cfg.tmp {
        let out = train_toy_head(bundle, teacher, dict, &cfg.train)?;
        let labels = predict_points(&out.head, &bundle.raw_features, &teacher.text_feats, dict)?;
        let acc = match bundle.gt_labels {
            Some(_) => Some(superpoint_accuracy(&out.head, bundle, teacher, dict, &out.correspondence)?),
            None => None,
        };
        (LabelField::new(labels), Some(out.head), out.trace, acc)
    } else {
        (pseudo.clone(), None, Vec::new(), None)
    };
    let afi_out = if cfg.afi {
        let fov = fov_mask(bundle);
        Some(afi(
            AfiInput {
                points: &bundle.points,
                predict: &predict,
                fov: Some(&fov),
                pseudo: Some(&pseudo),
                num_classes: c,
            },
            &cfg.afi_config,
        )?)
    } else {
        None
    };
    let mut metrics = Vec::new();
    if let Some(gt) = &bundle.gt_labels {
        let mut stages = vec![("pseudo", &pseudo)];
        if cfg.tmp {
            stages.push(("predict", &predict));
        }
        if let Some(a) = &afi_out {
            stages.push(("afi", a));
        }
        for (stage, labels) in stages {
            metrics.push(StageMetrics {
                stage: stage.to_string(),
                metrics: miou(&confusion(gt, labels, c)?),
            });
        }
    }
    Ok(PipelineResult {
        pseudo,
        predict,
        afi: afi_out,
        head,
        trace,
        superpoint_accuracy: sp_acc,
        metrics,
    })
}
