use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positional {
    Sinusoidal,
    Learned,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Shared latent width of every modality.
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    /// Hidden widths of the classifier head.
    pub head_hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev weighted-F1 improvement before stopping.
    pub patience: usize,
    pub warmup_epochs: usize,
    pub clip_norm: f64,
    pub weight_decay: f64,
    pub focal_gamma: f64,
    /// Per-class focal weights; `None` uses inverse training frequency scaled to mean 1.
    pub focal_alpha: Option<Vec<f64>>,
    pub mixup_prob: f64,
    /// Both shape parameters of the Beta distribution mixup draws from.
    pub mixup_beta: f64,
    pub positional: Positional,
    /// Table length for learned positional encodings; longer inputs are rejected.
    pub max_frames: usize,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            d: 128,
            layers: 2,
            heads: 4,
            dropout: 0.5,
            head_hidden: vec![512, 256],
            lr: 5e-5,
            batch_size: 2,
            max_epochs: 100,
            patience: 20,
            warmup_epochs: 10,
            clip_norm: 1.0,
            weight_decay: 1e-4,
            focal_gamma: 2.0,
            focal_alpha: None,
            mixup_prob: 0.5,
            mixup_beta: 0.2,
            positional: Positional::Sinusoidal,
            max_frames: 512,
            seed: 0,
        }
    }
}

impl FusionConfig {
    /// The small configuration used for gradient checks.
    pub fn tiny() -> Self {
        FusionConfig {
            d: 8,
            layers: 1,
            heads: 2,
            dropout: 0.0,
            head_hidden: vec![16, 8],
            mixup_prob: 0.0,
            ..FusionConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("d = {} must be a positive multiple of heads = {}", self.d, self.heads));
        }
        if self.d % 2 != 0 {
            return bad(format!("d = {} must be even", self.d));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.head_hidden.contains(&0) {
            return bad("head hidden widths must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be finite and non-negative", self.lr));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if !(self.clip_norm > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("clip_norm must be positive and weight_decay non-negative".into());
        }
        if !(self.focal_gamma >= 0.0) {
            return bad(format!("focal_gamma {} must be non-negative", self.focal_gamma));
        }
        if let Some(alpha) = &self.focal_alpha {
            if alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                return bad("focal_alpha entries must be positive".into());
            }
        }
        if !(0.0..=1.0).contains(&self.mixup_prob) || !(self.mixup_beta > 0.0) {
            return bad("mixup_prob must be in [0, 1] and mixup_beta positive".into());
        }
        if self.positional == Positional::Learned && self.max_frames == 0 {
            return bad("learned positional encodings need max_frames > 0".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        FusionConfig::default().validate().unwrap();
        FusionConfig::tiny().validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads_and_bad_dropout() {
        let c = FusionConfig { heads: 3, ..FusionConfig::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = FusionConfig { dropout: 1.0, ..FusionConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<FusionConfig>(r#"{"d": 16, "heds": 2}"#).is_err());
        let c: FusionConfig = serde_json::from_str(r#"{"positional": "learned"}"#).unwrap();
        assert_eq!(c.positional, Positional::Learned);
    }
}
