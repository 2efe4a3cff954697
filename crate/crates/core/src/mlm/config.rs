use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    pub init_seed: u64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig {
            vocab_size: 5000,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_seq_len: 128,
            dropout_rate: 0.1,
            init_seed: 42,
        }
    }
}

impl MlmConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= crate::textproc::SPECIALS.len() {
            return Err(Error::Config("vocab_size must exceed the reserved tokens".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuningMode {
    #[default]
    Full,
    Adapter,
    Prefix,
    Prompt,
}

impl TuningMode {
    pub const ALL: [TuningMode; 4] = [
        TuningMode::Full,
        TuningMode::Adapter,
        TuningMode::Prompt,
        TuningMode::Prefix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TuningMode::Full => "full",
            TuningMode::Adapter => "adapter",
            TuningMode::Prefix => "prefix",
            TuningMode::Prompt => "prompt",
        }
    }

    /// Row label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            TuningMode::Full => "Full Fine-Tune",
            TuningMode::Adapter => "Adapter Tune",
            TuningMode::Prefix => "Prefix Tune",
            TuningMode::Prompt => "Prompt Tune",
        }
    }
}

impl fmt::Display for TuningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TuningMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(TuningMode::Full),
            "adapter" => Ok(TuningMode::Adapter),
            "prefix" => Ok(TuningMode::Prefix),
            "prompt" => Ok(TuningMode::Prompt),
            other => Err(Error::Invalid(format!("unknown tuning mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeftConfig {
    pub adapter_bottleneck_dim: usize,
    pub prefix_length: usize,
    pub prompt_length: usize,
    pub peft_init_seed: u64,
}

impl Default for PeftConfig {
    fn default() -> Self {
        PeftConfig {
            adapter_bottleneck_dim: 16,
            prefix_length: 8,
            prompt_length: 8,
            peft_init_seed: 42,
        }
    }
}

impl PeftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.adapter_bottleneck_dim == 0 || self.prefix_length == 0 || self.prompt_length == 0 {
            return Err(Error::Config("PEFT sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub mask_fraction: f64,
    pub mask_token_prob: f64,
    pub random_token_prob: f64,
    pub keep_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2,
            seed: 42,
            batch_size: 16,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            mask_fraction: 0.15,
            mask_token_prob: 0.8,
            random_token_prob: 0.1,
            keep_prob: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_fraction) || self.mask_fraction == 0.0 {
            return Err(Error::Config("mask_fraction must be in (0, 1]".into()));
        }
        let probs = [self.mask_token_prob, self.random_token_prob, self.keep_prob];
        if probs.iter().any(|p| *p < 0.0) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "mask/random/keep probabilities must be non-negative and sum to 1".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        MlmConfig::default().validate().unwrap();
        PeftConfig::default().validate().unwrap();
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let c = MlmConfig {
            d_model: 30,
            n_heads: 4,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = MlmConfig {
            n_layers: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let t = TrainConfig {
            keep_prob: 0.2,
            ..Default::default()
        };
        assert!(t.validate().is_err());
        let t = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(t.validate().is_err());
        assert!(PeftConfig {
            prefix_length: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn tuning_mode_parse() {
        for m in TuningMode::ALL {
            assert_eq!(m.name().parse::<TuningMode>().unwrap(), m);
        }
        assert!("lora".parse::<TuningMode>().is_err());
    }
}
