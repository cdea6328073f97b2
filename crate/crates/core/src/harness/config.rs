use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use sha2::{Digest, Sha256};

use crate::attention::{AttentionConfig, FusionScheme, LateCombine};
use crate::corpus::SynthConfig;
use crate::decoder::DecoderConfig;
use crate::encoder::{EncoderConfig, DEFAULT_UNCERTAIN_HIGH, DEFAULT_UNCERTAIN_LOW};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenData,
    PretrainEncoder,
    FinetuneConcepts,
    TrainDecoder,
    Evaluate,
    Visualize,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::GenData,
        Stage::PretrainEncoder,
        Stage::FinetuneConcepts,
        Stage::TrainDecoder,
        Stage::Evaluate,
        Stage::Visualize,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::PretrainEncoder => "pretrain-encoder",
            Stage::FinetuneConcepts => "finetune-concepts",
            Stage::TrainDecoder => "train-decoder",
            Stage::Evaluate => "evaluate",
            Stage::Visualize => "visualize",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown stage {s:?}")))
    }
}

/// Source of the concept probabilities fed to word-level attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConceptMode {
    /// Concept attention bypassed; `c_att` is zero.
    Off,
    /// Encoder concept-head predictions.
    Predicted,
    /// Ground-truth concept indicators.
    Oracle,
}

impl ConceptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConceptMode::Off => "off",
            ConceptMode::Predicted => "predicted",
            ConceptMode::Oracle => "oracle",
        }
    }
}

impl FromStr for ConceptMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(ConceptMode::Off),
            "predicted" => Ok(ConceptMode::Predicted),
            "oracle" => Ok(ConceptMode::Oracle),
            other => Err(Error::Validation(format!("unknown concept mode {other:?}"))),
        }
    }
}

/// The report-generation systems compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AblationRow {
    /// Concatenated global features, no attention.
    MvH,
    /// Early fusion with visual attention.
    AttE,
    /// Late fusion with visual attention.
    AttL,
    /// Late fusion plus predicted medical concepts.
    AttLMc,
    /// Late fusion plus ground-truth concepts.
    AttLMcOracle,
}

impl AblationRow {
    pub const ALL: [AblationRow; 5] = [
        AblationRow::MvH,
        AblationRow::AttE,
        AblationRow::AttL,
        AblationRow::AttLMc,
        AblationRow::AttLMcOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationRow::MvH => "MvH",
            AblationRow::AttE => "MvH+AttE",
            AblationRow::AttL => "MvH+AttL",
            AblationRow::AttLMc => "MvH+AttL+MC",
            AblationRow::AttLMcOracle => "MvH+AttL+MC*",
        }
    }

    pub fn fusion(self) -> FusionScheme {
        match self {
            AblationRow::MvH => FusionScheme::Concat,
            AblationRow::AttE => FusionScheme::Early,
            _ => FusionScheme::Late,
        }
    }

    pub fn concepts(self) -> ConceptMode {
        match self {
            AblationRow::AttLMc => ConceptMode::Predicted,
            AblationRow::AttLMcOracle => ConceptMode::Oracle,
            _ => ConceptMode::Off,
        }
    }

    /// Applies this row's fusion scheme and concept mode to `cfg`.
    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        RunConfig {
            fusion: self.fusion(),
            use_concepts: self.concepts(),
            ..cfg.clone()
        }
    }
}

/// Every knob of a run. The seed and all hyperparameters are recorded with
/// each artifact; file locations are handled by the IO layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // data
    pub n_samples: usize,
    pub test_fraction: f64,
    pub min_count: usize,
    pub concept_threshold: usize,
    pub synth: SynthConfig,
    // encoder
    pub channels: Vec<usize>,
    pub lambda_cvc: f64,
    pub epochs: usize,
    pub concept_epochs: usize,
    // optimisation
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    // decoder
    pub decoder_epochs: usize,
    pub decoder_train_limit: Option<usize>,
    pub fusion: FusionScheme,
    pub late_combine: LateCombine,
    pub use_concepts: ConceptMode,
    pub freeze_encoder: bool,
    pub max_sentences: usize,
    pub max_words: usize,
    pub d_h_sent: usize,
    pub d_h_word: usize,
    pub d_embed: usize,
    pub d_concept: usize,
    pub d_att: usize,
    pub d_att_concept: usize,
    pub stop_threshold: f64,
    // visualisation
    pub uncertainty_low: f64,
    pub uncertainty_high: f64,
    pub visualize_ids: Vec<String>,
    pub visualize_labels: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_samples: 2000,
            test_fraction: 0.2,
            min_count: 3,
            concept_threshold: 20,
            synth: SynthConfig::default(),
            channels: vec![8, 16, 32],
            lambda_cvc: 1.0,
            epochs: 10,
            concept_epochs: 5,
            learning_rate: 1e-3,
            batch_size: 16,
            grad_clip: 5.0,
            decoder_epochs: 10,
            decoder_train_limit: None,
            fusion: FusionScheme::Late,
            late_combine: LateCombine::Project,
            use_concepts: ConceptMode::Predicted,
            freeze_encoder: true,
            max_sentences: 8,
            max_words: 20,
            d_h_sent: 128,
            d_h_word: 128,
            d_embed: 64,
            d_concept: 32,
            d_att: 64,
            d_att_concept: 64,
            stop_threshold: 0.5,
            uncertainty_low: DEFAULT_UNCERTAIN_LOW,
            uncertainty_high: DEFAULT_UNCERTAIN_HIGH,
            visualize_ids: Vec::new(),
            visualize_labels: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn image_size(&self) -> usize {
        self.synth.image_size
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n_samples < 10 {
            return bad(format!("n_samples must be >= 10, got {}", self.n_samples));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must be in (0,1), got {}", self.test_fraction));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!("grad_clip must be > 0, got {}", self.grad_clip));
        }
        if self.concept_threshold == 0 {
            return bad("concept_threshold must be >= 1".into());
        }
        if !(0.0 < self.uncertainty_low && self.uncertainty_low < self.uncertainty_high && self.uncertainty_high < 1.0) {
            return bad("uncertainty thresholds must satisfy 0 < low < high < 1".into());
        }
        if let Some(&l) = self.visualize_labels.iter().find(|&&l| l >= crate::encoder::N_OBS) {
            return bad(format!("visualize label {l} out of range 0..14"));
        }
        self.encoder_config(1).validate()?;
        Ok(())
    }

    pub fn encoder_config(&self, n_concepts: usize) -> EncoderConfig {
        EncoderConfig {
            image_size: self.synth.image_size,
            channels: self.channels.clone(),
            d_v: *self.channels.last().unwrap_or(&1),
            n_concepts,
            lambda_cvc: self.lambda_cvc,
        }
    }

    pub fn model_config(&self, n_concepts: usize, vocab_size: usize) -> ModelConfig {
        let encoder = self.encoder_config(n_concepts);
        let d_v = encoder.d_v;
        ModelConfig {
            attention: AttentionConfig {
                d_v,
                d_h_sent: self.d_h_sent,
                d_a: self.d_att,
                d_c: self.d_concept,
                d_h_word: self.d_h_word,
                d_a_concept: self.d_att_concept,
            },
            decoder: DecoderConfig {
                max_sentences: self.max_sentences,
                max_words: self.max_words,
                d_h_sent: self.d_h_sent,
                d_h_word: self.d_h_word,
                d_embed: self.d_embed,
                d_concept: self.d_concept,
                context_dim: self.fusion.context_dim(d_v),
                vocab_size,
                teacher_forcing: true,
                stop_threshold: self.stop_threshold,
            },
            encoder,
            fusion: self.fusion,
            late_combine: self.late_combine,
        }
    }

    /// Digest of every field, for provenance of run outputs.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(format!("{self:?}").as_bytes()).into()
    }
}

/// Architecture of the full encoder/decoder model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub attention: AttentionConfig,
    pub decoder: DecoderConfig,
    pub fusion: FusionScheme,
    pub late_combine: LateCombine,
}

impl ModelConfig {
    pub fn arch_string(&self) -> String {
        format!(
            "{}|{}|attention:d_a={};d_a_concept={}|fusion={};combine={}",
            self.encoder.arch_string(),
            self.decoder.arch_string(),
            self.attention.d_a,
            self.attention.d_a_concept,
            self.fusion,
            self.late_combine.as_str()
        )
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.arch_string().as_bytes()).into()
    }
}

/// Architecture fingerprint of an encoder-only checkpoint.
pub fn encoder_fingerprint(cfg: &EncoderConfig) -> [u8; 32] {
    Sha256::digest(cfg.arch_string().as_bytes()).into()
}
