//! Run configuration.
//!
//! One TOML file drives every pipeline stage. Every section has defaults, so
//! an empty file is a valid config; unknown keys are rejected at parse time.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::NecessityRule;
use crate::error::{Error, Result};

pub const DEFAULT_TEMPLATE: &str =
    "The topic of the request is [MASK] [MASK] [MASK]. This request necessity is [MASK].";

/// Code snippet whose encoding fills prefix rows when a request has too little code.
pub const DEFAULT_GENERIC_SNIPPET: &str =
    "def main(args):\n    result = []\n    for item in args:\n        result.append(item)\n    return result\n";

pub const ENV_BACKBONE: &str = "UNIPCR_BACKBONE";
pub const ENV_CODE_ENCODER: &str = "UNIPCR_CODE_ENCODER";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub dfg: DfgConfig,
    pub prompting: PromptConfig,
    pub prefix: PrefixConfig,
    pub model: ModelConfig,
    pub answering: AnswerConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Rare-tag threshold: tags seen fewer times are removed.
    pub theta: usize,
    pub split_ratios: [f64; 3],
    pub seed: u64,
    pub necessity_rule: NecessityRule,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            theta: 50,
            split_ratios: [8.0, 1.0, 1.0],
            seed: 42,
            necessity_rule: NecessityRule::ScoreSign,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DfgConfig {
    pub langs: Vec<String>,
}

impl Default for DfgConfig {
    fn default() -> Self {
        Self {
            langs: ["python", "c", "cpp", "java", "javascript", "csharp"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    pub template: String,
    pub n_topic_masks: usize,
    pub n_necessity_masks: usize,
    /// Total model input length, in positions.
    pub budget: usize,
    pub title_budget: usize,
    /// Upper bound on prefix + graph slots.
    pub code_budget: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            template: DEFAULT_TEMPLATE.to_string(),
            n_topic_masks: 3,
            n_necessity_masks: 1,
            budget: 512,
            title_budget: 32,
            code_budget: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixInitMode {
    SharedAvg,
    PerRequest,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrefixConfig {
    pub length: usize,
    pub init_mode: PrefixInitMode,
    pub generic_snippet: String,
    /// Number of training requests averaged for `shared_avg` init.
    pub init_sample: usize,
}

impl Default for PrefixConfig {
    fn default() -> Self {
        Self {
            length: 8,
            init_mode: PrefixInitMode::SharedAvg,
            generic_snippet: DEFAULT_GENERIC_SNIPPET.to_string(),
            init_sample: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagTargetMode {
    /// One truth tag drawn uniformly on every visit.
    Sample,
    /// Target mass 1/|l_r| on every truth tag.
    Soft,
    /// One truth tag drawn once per request and kept for the whole run.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn to_dtype(self) -> candle_core::DType {
        match self {
            Precision::F32 => candle_core::DType::F32,
            Precision::F64 => candle_core::DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// `micro` for a seeded random init, or a path to a safetensors file.
    pub backbone: String,
    pub code_encoder: String,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub code_hidden: usize,
    pub code_layers: usize,
    pub code_heads: usize,
    pub code_max_tokens: usize,
    pub max_vocab: usize,
    pub vocab_min_count: usize,
    pub dtype: Precision,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub checkpoint_interval: usize,
    /// Hard cap on optimizer steps; 0 means no cap.
    pub max_steps: usize,
    pub seed: u64,
    pub freeze_backbone: bool,
    pub tag_target: TagTargetMode,
    pub pad_word: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: "micro".into(),
            code_encoder: "micro".into(),
            hidden: 64,
            layers: 2,
            heads: 4,
            ffn: 128,
            code_hidden: 64,
            code_layers: 1,
            code_heads: 4,
            code_max_tokens: 256,
            max_vocab: 8000,
            vocab_min_count: 2,
            dtype: Precision::F32,
            lr: 1e-5,
            epochs: 6,
            batch_size: 16,
            checkpoint_interval: 10_000,
            max_steps: 0,
            seed: 42,
            freeze_backbone: false,
            tag_target: TagTargetMode::Sample,
            pad_word: "[PADW]".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    /// Rank label-space tags by summed log-probability of their verbalization.
    Scored,
    /// Decode top tokens, then map them onto labels by exact match / edit distance.
    Generative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NecessityTie {
    Necessary,
    Unnecessary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnswerConfig {
    pub mode: AnswerMode,
    pub top_k: usize,
    pub necessity_tie: NecessityTie,
}

impl Default for AnswerConfig {
    fn default() -> Self {
        Self {
            mode: AnswerMode::Scored,
            top_k: 10,
            necessity_tie: NecessityTie::Unnecessary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionDenominator {
    /// hits / min(K, |truth|)
    Min,
    /// hits / K
    K,
}

impl PrecisionDenominator {
    pub fn label(self) -> &'static str {
        match self {
            PrecisionDenominator::Min => "min",
            PrecisionDenominator::K => "k",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub precision_denominator: PrecisionDenominator,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![3, 5, 10],
            precision_denominator: PrecisionDenominator::Min,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Load a config file and apply asset-path environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        config.apply_env_overrides();
        Ok(config)
    }

    pub fn apply_env_overrides(&mut self) {
        if let Ok(v) = std::env::var(ENV_BACKBONE) {
            self.model.backbone = v;
        }
        if let Ok(v) = std::env::var(ENV_CODE_ENCODER) {
            self.model.code_encoder = v;
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.theta < 1 {
            return Err(Error::Config("corpus.theta must be >= 1".into()));
        }
        if c.split_ratios.iter().any(|r| !r.is_finite() || *r < 0.0)
            || c.split_ratios.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::Config(
                "corpus.split_ratios must be non-negative with a positive sum".into(),
            ));
        }
        let p = &self.prompting;
        if p.n_topic_masks == 0 || p.n_necessity_masks == 0 {
            return Err(Error::Config("prompting mask arities must be >= 1".into()));
        }
        let masks = p.template.matches(crate::tokenizer::MASK).count();
        if masks != p.n_topic_masks + p.n_necessity_masks {
            return Err(Error::Config(format!(
                "prompting.template has {masks} mask tokens, expected {}",
                p.n_topic_masks + p.n_necessity_masks
            )));
        }
        if self.prefix.length == 0 {
            return Err(Error::Config("prefix.length must be >= 1".into()));
        }
        if self.prefix.length > p.code_budget {
            return Err(Error::Config(
                "prefix.length must fit inside prompting.code_budget".into(),
            ));
        }
        let m = &self.model;
        if m.hidden == 0 || m.heads == 0 || m.hidden % m.heads != 0 {
            return Err(Error::Config("model.hidden must be a multiple of model.heads".into()));
        }
        if m.code_hidden == 0 || m.code_heads == 0 || m.code_hidden % m.code_heads != 0 {
            return Err(Error::Config(
                "model.code_hidden must be a multiple of model.code_heads".into(),
            ));
        }
        if m.layers == 0 || m.ffn == 0 || m.code_layers == 0 || m.code_max_tokens == 0 {
            return Err(Error::Config("model layer sizes must be >= 1".into()));
        }
        if !(m.lr >= 0.0 && m.lr.is_finite()) {
            return Err(Error::Config("model.lr must be finite and >= 0".into()));
        }
        if m.epochs == 0 || m.batch_size == 0 || m.checkpoint_interval == 0 {
            return Err(Error::Config(
                "model.epochs, batch_size and checkpoint_interval must be >= 1".into(),
            ));
        }
        if self.answering.top_k == 0 {
            return Err(Error::Config("answering.top_k must be >= 1".into()));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config("eval.ks must be non-empty and positive".into()));
        }
        Ok(())
    }

    /// Hash of every section that shapes model weights or inputs. A checkpoint
    /// refuses to serve a config whose hash differs.
    pub fn model_hash(&self) -> String {
        #[derive(Serialize)]
        struct ModelView<'a> {
            prompting: &'a PromptConfig,
            prefix: &'a PrefixConfig,
            model: ModelViewInner<'a>,
        }
        #[derive(Serialize)]
        struct ModelViewInner<'a> {
            hidden: usize,
            layers: usize,
            heads: usize,
            ffn: usize,
            code_hidden: usize,
            code_layers: usize,
            code_heads: usize,
            code_max_tokens: usize,
            pad_word: &'a str,
        }
        let m = &self.model;
        let view = ModelView {
            prompting: &self.prompting,
            prefix: &self.prefix,
            model: ModelViewInner {
                hidden: m.hidden,
                layers: m.layers,
                heads: m.heads,
                ffn: m.ffn,
                code_hidden: m.code_hidden,
                code_layers: m.code_layers,
                code_heads: m.code_heads,
                code_max_tokens: m.code_max_tokens,
                pad_word: &m.pad_word,
            },
        };
        let json = serde_json::to_vec(&view).expect("config view serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let config = RunConfig::from_toml_str("").unwrap();
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.corpus.theta, 50);
        assert_eq!(config.model.lr, 1e-5);
        assert_eq!(config.model.epochs, 6);
        assert_eq!(config.model.checkpoint_interval, 10_000);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_toml_str("[model]\ncurvature = 3.0\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = RunConfig::from_toml_str("[nonsense]\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn template_mask_arity_checked() {
        let err = RunConfig::from_toml_str(
            "[prompting]\ntemplate = \"topic [MASK]. necessity [MASK].\"\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("mask tokens"));
    }

    #[test]
    fn roundtrip_and_hash_stability() {
        let mut config = RunConfig::default();
        config.corpus.necessity_rule = NecessityRule::ScoreThreshold { k: 3 };
        let back = RunConfig::from_toml_str(&config.to_toml()).unwrap();
        assert_eq!(back, config);
        assert_eq!(back.model_hash(), config.model_hash());
        let mut other = config.clone();
        other.model.lr = 0.5;
        assert_eq!(other.model_hash(), config.model_hash());
        other.prefix.length = 4;
        assert_ne!(other.model_hash(), config.model_hash());
    }
}
