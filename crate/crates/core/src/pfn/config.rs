use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the PFN transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PfnConfig {
    pub n_layers: usize,
    pub emb_dim: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub max_features: usize,
    pub max_classes: usize,
    /// Applied to attention and feed-forward outputs during training only.
    pub dropout: f64,
}

impl Default for PfnConfig {
    fn default() -> Self {
        Self { n_layers: 3, emb_dim: 128, n_heads: 4, ff_dim: 256, max_features: 100, max_classes: 10, dropout: 0.0 }
    }
}

impl PfnConfig {
    /// The 12-layer depth of the full-size model, other widths unchanged.
    pub fn full_depth() -> Self {
        Self { n_layers: 12, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.n_layers == 0 || self.emb_dim == 0 || self.ff_dim == 0 || self.max_features == 0 {
            return bad("layer count and widths must be positive".into());
        }
        if self.n_heads == 0 || !self.emb_dim.is_multiple_of(self.n_heads) {
            return bad(format!("emb_dim {} is not divisible by n_heads {}", self.emb_dim, self.n_heads));
        }
        if self.max_classes < 2 {
            return bad(format!("max_classes must be at least 2, got {}", self.max_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Label-embedding row used for query tokens.
    pub fn query_token(&self) -> usize {
        self.max_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_must_divide_width() {
        assert!(PfnConfig { n_heads: 3, ..Default::default() }.validate().is_err());
        assert!(PfnConfig { max_classes: 1, ..Default::default() }.validate().is_err());
        PfnConfig::default().validate().unwrap();
        PfnConfig::full_depth().validate().unwrap();
    }
}
