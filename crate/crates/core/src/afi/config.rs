use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AfiConfig {
    /// Minimum direction cosine for two directions to count as parallel.
    pub gamma: f64,
    /// Odds of taking the pseudo-label at horizontal distance 0.
    pub beta: f64,
    /// Horizontal distance (m) at which the coverage probability is 1/2.
    pub s_dist: f64,
    /// Number of lattice directions.
    pub lattice_m: usize,
    /// Keep ratio of each downsampling layer; its length is the depth.
    pub rates: Vec<f64>,
    /// Encoder neighborhood size.
    pub knn: usize,
    /// Decoder neighborhood size.
    pub knn_up: usize,
    pub coverage_enabled: bool,
    pub seed: u64,
}

impl Default for AfiConfig {
    fn default() -> Self {
        Self {
            gamma: 0.995,
            beta: 4.0,
            s_dist: 15.0,
            lattice_m: 60,
            rates: vec![1.0 / 3.0; 4],
            knn: 16,
            knn_up: 3,
            coverage_enabled: true,
            seed: 0,
        }
    }
}

impl AfiConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("afi config", reason));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must be in (0,1), got {}", self.gamma));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.s_dist > 0.0 && self.s_dist.is_finite()) {
            return bad(format!("s_dist must be positive, got {}", self.s_dist));
        }
        if self.lattice_m < 4 {
            return bad(format!("lattice_m must be at least 4, got {}", self.lattice_m));
        }
        if let Some(r) = self.rates.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return bad(format!("rates must be in (0,1], got {r}"));
        }
        if self.knn == 0 || self.knn_up == 0 {
            return bad("neighborhood sizes must be positive".into());
        }
        Ok(())
    }

    /// Temperature of the coverage law, `S / ln β`.
    pub fn coverage_temperature(&self) -> f64 {
        self.s_dist / self.beta.ln()
    }
}
