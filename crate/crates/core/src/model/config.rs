use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    /// Number of Transformer blocks.
    pub n_blocks: usize,
    pub n_heads: usize,
    pub dropout_rate: f64,
    pub attention_dropout_rate: f64,
    /// Hidden width of the fusion attention network; `None` means `d`.
    pub fusion_width: Option<usize>,
    pub n_variables: usize,
    pub n_demographics: usize,
    pub max_observations: usize,
    /// Hours per unit of model time.
    pub time_scale: f64,
    /// Interpretable variant: pools initial embeddings and feeds raw
    /// demographics straight to the heads.
    pub interpretable: bool,
}

impl ModelConfig {
    /// Defaults: `d = 50`, 2 blocks, 4 heads, dropout 0.2.
    pub fn new(n_variables: usize, n_demographics: usize) -> Self {
        Self {
            d: 50,
            n_blocks: 2,
            n_heads: 4,
            dropout_rate: 0.2,
            attention_dropout_rate: 0.2,
            fusion_width: None,
            n_variables,
            n_demographics,
            max_observations: 512,
            time_scale: 48.0,
            interpretable: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.n_heads == 0 || self.n_variables == 0 || self.n_demographics == 0 {
            return fail(format!(
                "d, n_heads, n_variables, n_demographics must be positive: {self:?}"
            ));
        }
        if self.n_heads > self.d {
            return fail(format!("n_heads = {} exceeds d = {}", self.n_heads, self.d));
        }
        if self.max_observations == 0 {
            return fail("max_observations must be positive".into());
        }
        if self.fusion_width == Some(0) {
            return fail("fusion_width must be positive".into());
        }
        for (name, r) in [
            ("dropout_rate", self.dropout_rate),
            ("attention_dropout_rate", self.attention_dropout_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return fail(format!("{name} must be in [0, 1), got {r}"));
            }
        }
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return fail(format!(
                "time_scale must be positive, got {}",
                self.time_scale
            ));
        }
        Ok(())
    }

    /// Hidden width of each continuous value embedding: `⌊√d⌋`.
    pub fn cve_hidden(&self) -> usize {
        let mut k = (self.d as f64).sqrt() as usize;
        while (k + 1) * (k + 1) <= self.d {
            k += 1;
        }
        while k * k > self.d {
            k -= 1;
        }
        k.max(1)
    }

    /// Per-head width `⌊d / h⌋`; the concatenated heads are projected back to `d`.
    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }

    pub fn fusion_hidden(&self) -> usize {
        self.fusion_width.unwrap_or(self.d)
    }

    /// Width of `[e^d, e^T]` fed to the prediction heads.
    pub fn head_input_dim(&self) -> usize {
        if self.interpretable {
            self.n_demographics + self.d
        } else {
            2 * self.d
        }
    }

    /// Short stable fingerprint of the configuration.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}
