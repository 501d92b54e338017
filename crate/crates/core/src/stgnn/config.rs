use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and objective hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Hidden width `D`.
    pub hidden: usize,
    pub heads: usize,
    /// Number of interleaved blocks `N_l`.
    pub blocks: usize,
    /// Temporal convolution width, odd.
    pub kernel: usize,
    pub distance_cap: u16,
    pub lambda_logic: f64,
    pub lambda_loss: f64,
    pub dropout: f64,
    /// Seeds parameter initialization and dropout masks.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 32,
            heads: 4,
            blocks: 2,
            kernel: 3,
            distance_cap: 8,
            lambda_logic: 1.0,
            lambda_loss: 1.0,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return bad(format!("width {} must be a positive multiple of heads {}", self.hidden, self.heads));
        }
        if self.blocks == 0 {
            return bad("at least one block is required".into());
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        let lambdas_ok = self.lambda_logic >= 0.0 && self.lambda_loss >= 0.0;
        if !lambdas_ok || self.lambda_logic + self.lambda_loss == 0.0 {
            return bad("loss weights must be non-negative and not both zero".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        Ok(())
    }
}
