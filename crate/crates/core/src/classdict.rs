//! Class dictionary: maps open-vocabulary prompts onto dataset classes.
//!
//! Prompt ids are positions in the flattened prompt list (class order, then
//! prompt order within a class). They double as row indices into the teacher's
//! text-feature matrix.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::labels::{ClassId, UNLABELED};
use crate::math::{dot, norm};

pub type PromptId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: ClassId,
    pub name: String,
    pub prompts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DictFile", into = "DictFile")]
pub struct ClassDictionary {
    classes: Vec<ClassEntry>,
    prompts: Vec<(String, ClassId)>,
    by_text: HashMap<String, PromptId>,
}

#[derive(Serialize, Deserialize)]
struct DictFile {
    classes: Vec<ClassEntry>,
}

impl TryFrom<DictFile> for ClassDictionary {
    type Error = Error;
    fn try_from(f: DictFile) -> Result<Self> {
        ClassDictionary::new(f.classes)
    }
}

impl From<ClassDictionary> for DictFile {
    fn from(d: ClassDictionary) -> Self {
        DictFile { classes: d.classes }
    }
}

impl ClassDictionary {
    pub fn new(classes: Vec<ClassEntry>) -> Result<Self> {
        let mut prompts = Vec::new();
        let mut by_text = HashMap::new();
        for (pos, c) in classes.iter().enumerate() {
            if c.id as usize != pos {
                return Err(Error::invalid(
                    "class dictionary",
                    format!("class {:?} has id {} at position {pos}", c.name, c.id),
                ));
            }
            if c.id == UNLABELED {
                return Err(Error::invalid("class dictionary", "class id collides with UNLABELED"));
            }
            if c.prompts.is_empty() {
                return Err(Error::invalid(
                    "class dictionary",
                    format!("class {:?} has no prompts", c.name),
                ));
            }
            for p in &c.prompts {
                if by_text.insert(p.clone(), prompts.len() as PromptId).is_some() {
                    return Err(Error::invalid(
                        "class dictionary",
                        format!("prompt {p:?} registered twice"),
                    ));
                }
                prompts.push((p.clone(), c.id));
            }
        }
        Ok(Self {
            classes,
            prompts,
            by_text,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn class_name(&self, id: ClassId) -> Option<&str> {
        self.classes.get(id as usize).map(|c| c.name.as_str())
    }

    pub fn class_by_name(&self, name: &str) -> Option<ClassId> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.id)
    }

    pub fn prompt_id(&self, prompt: &str) -> Result<PromptId> {
        self.by_text
            .get(prompt)
            .copied()
            .ok_or_else(|| Error::UnknownPrompt(prompt.to_string()))
    }

    pub fn prompt_text(&self, id: PromptId) -> Option<&str> {
        self.prompts.get(id as usize).map(|(t, _)| t.as_str())
    }

    /// Owning class of a registered prompt.
    pub fn resolve(&self, prompt: &str) -> Result<ClassId> {
        let id = self.prompt_id(prompt)?;
        Ok(self.prompts[id as usize].1)
    }

    pub fn class_of_prompt(&self, id: PromptId) -> Result<ClassId> {
        self.prompts
            .get(id as usize)
            .map(|p| p.1)
            .ok_or_else(|| Error::UnknownPrompt(format!("#{id}")))
    }

    /// Prompt ids belonging to `class`, in dictionary order.
    pub fn prompts_of(&self, class: ClassId) -> Vec<PromptId> {
        self.prompts
            .iter()
            .enumerate()
            .filter(|(_, p)| p.1 == class)
            .map(|(i, _)| i as PromptId)
            .collect()
    }
}

/// Semi-positive weights between the rows of a batch.
///
/// `text_feats` row `i` is the text feature of the prompt `prompts[i]`. The
/// weight is the cosine of the two text features when the rows carry distinct
/// prompts of the same class and 0 otherwise. Negative cosines are kept.
/// Returns a row-major `R×R` matrix.
pub fn semi_positive_weights(
    text_feats: &FeatureMatrix,
    prompts: &[PromptId],
    dict: &ClassDictionary,
) -> Result<Vec<f64>> {
    let r = text_feats.rows();
    if prompts.len() != r {
        return Err(Error::LengthMismatch {
            what: "prompt ids".into(),
            expected: r,
            actual: prompts.len(),
        });
    }
    let rows: Vec<Vec<f64>> = (0..r).map(|i| text_feats.row_f64(i)).collect();
    let norms: Vec<f64> = rows.iter().map(|v| norm(v)).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNorm(format!("text feature row {i}")));
    }
    let classes = prompts
        .iter()
        .map(|&p| dict.class_of_prompt(p))
        .collect::<Result<Vec<_>>>()?;
    let mut alpha = vec![0.0; r * r];
    for i in 0..r {
        for j in (i + 1)..r {
            if classes[i] == classes[j] && prompts[i] != prompts[j] {
                let c = dot(&rows[i], &rows[j]) / (norms[i] * norms[j]);
                alpha[i * r + j] = c;
                alpha[j * r + i] = c;
            }
        }
    }
    Ok(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_dict() -> ClassDictionary {
        let entry = |id, name: &str, prompts: &[&str]| ClassEntry {
            id,
            name: name.into(),
            prompts: prompts.iter().map(|s| s.to_string()).collect(),
        };
        ClassDictionary::new(vec![
            entry(0, "road", &["road", "street"]),
            entry(1, "car", &["car", "sedan", "taxi"]),
        ])
        .unwrap()
    }

    #[test]
    fn resolves_prompts() {
        let d = sample_dict();
        assert_eq!(d.resolve("sedan").unwrap(), 1);
        assert_eq!(d.resolve("car").unwrap(), d.resolve("taxi").unwrap());
        assert!(matches!(d.resolve("zeppelin"), Err(Error::UnknownPrompt(_))));
        assert_eq!(d.prompt_id("street").unwrap(), 1);
        assert_eq!(d.prompts_of(1), vec![2, 3, 4]);
    }

    #[test]
    fn rejects_duplicate_and_empty_prompts() {
        let dup = vec![
            ClassEntry { id: 0, name: "a".into(), prompts: vec!["x".into()] },
            ClassEntry { id: 1, name: "b".into(), prompts: vec!["x".into()] },
        ];
        assert!(ClassDictionary::new(dup).is_err());
        let empty = vec![ClassEntry { id: 0, name: "a".into(), prompts: vec![] }];
        assert!(ClassDictionary::new(empty).is_err());
    }

    #[test]
    fn json_round_trip() {
        let d = sample_dict();
        let s = serde_json::to_string(&d).unwrap();
        assert!(s.starts_with("{\"classes\":[{\"id\":0,\"name\":\"road\""));
        let back: ClassDictionary = serde_json::from_str(&s).unwrap();
        assert_eq!(back.classes(), d.classes());
    }

    fn feats(rows: &[[f64; 2]]) -> FeatureMatrix {
        FeatureMatrix::from_rows_f64(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), 2).unwrap()
    }

    #[test]
    fn weights_follow_class_and_prompt() {
        let d = sample_dict();
        let (s, c) = (60f64.to_radians().sin(), 60f64.to_radians().cos());
        // rows: road, car, sedan(60 deg from car), car again
        let f = feats(&[[1.0, 0.0], [1.0, 0.0], [c, s], [1.0, 0.0]]);
        let a = semi_positive_weights(&f, &[0, 2, 3, 2], &d).unwrap();
        let at = |i: usize, j: usize| a[i * 4 + j];
        assert_eq!(at(0, 1), 0.0, "different classes");
        assert!((at(1, 2) - 0.5).abs() < 1e-7, "{}", at(1, 2));
        assert_eq!(at(1, 3), 0.0, "same prompt");
        for i in 0..4 {
            assert_eq!(at(i, i), 0.0);
            for j in 0..4 {
                assert_eq!(at(i, j), at(j, i));
            }
        }
    }

    #[test]
    fn identical_features_weight_one() {
        let d = sample_dict();
        let f = feats(&[[0.6, 0.8], [0.6, 0.8]]);
        let a = semi_positive_weights(&f, &[2, 4], &d).unwrap();
        assert!((a[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn zero_row_rejected() {
        let d = sample_dict();
        let f = feats(&[[0.0, 0.0], [1.0, 0.0]]);
        assert!(matches!(
            semi_positive_weights(&f, &[2, 3], &d),
            Err(Error::ZeroNorm(_))
        ));
    }
}
