//! Per-point label arrays.

use crate::error::{Error, Result};

pub type ClassId = u16;

/// Sentinel for points without a label. Stored on disk as `0xFFFF`.
pub const UNLABELED: ClassId = u16::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelField {
    labels: Vec<ClassId>,
}

impl LabelField {
    pub fn new(labels: Vec<ClassId>) -> Self {
        Self { labels }
    }

    pub fn unlabeled(n: usize) -> Self {
        Self {
            labels: vec![UNLABELED; n],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn as_slice(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn as_mut_slice(&mut self) -> &mut [ClassId] {
        &mut self.labels
    }

    pub fn into_inner(self) -> Vec<ClassId> {
        self.labels
    }

    pub fn get(&self, i: usize) -> ClassId {
        self.labels[i]
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labels[i] != UNLABELED
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != UNLABELED).count()
    }

    /// Checks every id is below `num_classes` or is [`UNLABELED`].
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .position(|&l| l != UNLABELED && l as usize >= num_classes)
        {
            Some(i) => Err(Error::invalid(
                "label field",
                format!(
                    "label {} at point {i} out of range for {num_classes} classes",
                    self.labels[i]
                ),
            )),
            None => Ok(()),
        }
    }

    /// One past the largest assigned id, or 0 when nothing is labeled.
    pub fn num_classes_hint(&self) -> usize {
        self.labels
            .iter()
            .filter(|&&l| l != UNLABELED)
            .map(|&l| l as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.labels.iter().flat_map(|l| l.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(2) {
            return Err(Error::LengthMismatch {
                what: "label field (odd byte count)".into(),
                expected: bytes.len() + 1,
                actual: bytes.len(),
            });
        }
        Ok(Self {
            labels: bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect(),
        })
    }
}

impl From<Vec<ClassId>> for LabelField {
    fn from(labels: Vec<ClassId>) -> Self {
        Self::new(labels)
    }
}
