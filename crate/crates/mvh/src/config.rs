//! Line-oriented `key = value` run configuration.
//!
//! Blank lines and `#` comments (full-line or trailing) are ignored. Every key
//! may appear at most once; unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mvh_core::harness::{AblationRow, RunConfig};

use crate::error::{AppError, AppResult};

/// Where a run reads and writes. Unset paths default to locations inside `out_dir`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Paths {
    pub out_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub encoder_checkpoint: Option<PathBuf>,
    pub concept_checkpoint: Option<PathBuf>,
    pub decoder_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FileConfig {
    pub run: RunConfig,
    pub paths: Paths,
    /// Systems trained and scored side by side by the `evaluate` stage; empty
    /// means "score the decoder checkpoint only".
    pub ablation: Vec<AblationRow>,
}

impl FileConfig {
    pub fn out_dir(&self) -> PathBuf {
        self.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.paths.data_dir.clone().unwrap_or_else(|| self.out_dir().join("data"))
    }

    pub fn encoder_checkpoint(&self) -> PathBuf {
        self.paths.encoder_checkpoint.clone().unwrap_or_else(|| self.out_dir().join("encoder.ckpt"))
    }

    pub fn concept_checkpoint(&self) -> PathBuf {
        self.paths.concept_checkpoint.clone().unwrap_or_else(|| self.out_dir().join("concepts.ckpt"))
    }

    pub fn decoder_checkpoint(&self) -> PathBuf {
        self.paths.decoder_checkpoint.clone().unwrap_or_else(|| self.out_dir().join("decoder.ckpt"))
    }
}

fn invalid(line: usize, msg: impl std::fmt::Display) -> AppError {
    AppError::Invalid(format!("config line {line}: {msg}"))
}

fn num<T: FromStr>(line: usize, key: &str, v: &str) -> AppResult<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| invalid(line, format!("{key}: cannot parse {v:?}: {e}")))
}

fn list<T: FromStr>(line: usize, key: &str, v: &str) -> AppResult<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(line, key, s))
        .collect()
}

fn boolean(line: usize, key: &str, v: &str) -> AppResult<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(invalid(line, format!("{key}: expected true/false, got {v:?}"))),
    }
}

fn ablation_row(line: usize, v: &str) -> AppResult<AblationRow> {
    AblationRow::ALL
        .into_iter()
        .find(|r| r.name().eq_ignore_ascii_case(v))
        .ok_or_else(|| {
            let names: Vec<&str> = AblationRow::ALL.iter().map(|r| r.name()).collect();
            invalid(line, format!("unknown ablation system {v:?}; expected one of {}", names.join(", ")))
        })
}

pub fn parse_config(text: &str) -> AppResult<FileConfig> {
    let mut cfg = FileConfig::default();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| invalid(line, format!("expected `key = value`, got {content:?}")))?;
        let (key, v) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(invalid(line, format!("duplicate key {key:?}")));
        }
        let r = &mut cfg.run;
        let core = |e: mvh_core::Error| invalid(line, e);
        match key {
            "seed" => r.seed = num(line, key, v)?,
            "n_samples" => r.n_samples = num(line, key, v)?,
            "test_fraction" => r.test_fraction = num(line, key, v)?,
            "min_count" => r.min_count = num(line, key, v)?,
            "concept_threshold" => r.concept_threshold = num(line, key, v)?,
            "image_size" => r.synth.image_size = num(line, key, v)?,
            "p_normal" => r.synth.p_normal = num(line, key, v)?,
            "max_active" => r.synth.max_active = num(line, key, v)?,
            "mild_intensity" => r.synth.mild_intensity = num(line, key, v)?,
            "severe_intensity" => r.synth.severe_intensity = num(line, key, v)?,
            "lateral_gain" => r.synth.lateral_gain = num(line, key, v)?,
            "frontal_noise" => r.synth.frontal_noise = num(line, key, v)?,
            "lateral_noise" => r.synth.lateral_noise = num(line, key, v)?,
            "faint_prob" => r.synth.faint_prob = num(line, key, v)?,
            "faint_gain" => r.synth.faint_gain = num(line, key, v)?,
            "comparison_prob" => r.synth.comparison_prob = num(line, key, v)?,
            "channels" => r.channels = list(line, key, v)?,
            "lambda_cvc" => r.lambda_cvc = num(line, key, v)?,
            "epochs" => r.epochs = num(line, key, v)?,
            "concept_epochs" => r.concept_epochs = num(line, key, v)?,
            "learning_rate" => r.learning_rate = num(line, key, v)?,
            "batch_size" => r.batch_size = num(line, key, v)?,
            "grad_clip" => r.grad_clip = num(line, key, v)?,
            "decoder_epochs" => r.decoder_epochs = num(line, key, v)?,
            "decoder_train_limit" => r.decoder_train_limit = Some(num(line, key, v)?),
            "fusion" => r.fusion = v.parse().map_err(core)?,
            "late_combine" => r.late_combine = v.parse().map_err(core)?,
            "use_concepts" => r.use_concepts = v.parse().map_err(core)?,
            "freeze_encoder" => r.freeze_encoder = boolean(line, key, v)?,
            "max_sentences" => r.max_sentences = num(line, key, v)?,
            "max_words" => r.max_words = num(line, key, v)?,
            "d_h_sent" => r.d_h_sent = num(line, key, v)?,
            "d_h_word" => r.d_h_word = num(line, key, v)?,
            "d_embed" => r.d_embed = num(line, key, v)?,
            "d_concept" => r.d_concept = num(line, key, v)?,
            "d_att" => r.d_att = num(line, key, v)?,
            "d_att_concept" => r.d_att_concept = num(line, key, v)?,
            "stop_threshold" => r.stop_threshold = num(line, key, v)?,
            "uncertainty_low" => r.uncertainty_low = num(line, key, v)?,
            "uncertainty_high" => r.uncertainty_high = num(line, key, v)?,
            "visualize_ids" => r.visualize_ids = list(line, key, v)?,
            "visualize_labels" => r.visualize_labels = list(line, key, v)?,
            "out_dir" => cfg.paths.out_dir = Some(PathBuf::from(v)),
            "data_dir" => cfg.paths.data_dir = Some(PathBuf::from(v)),
            "encoder_checkpoint" => cfg.paths.encoder_checkpoint = Some(PathBuf::from(v)),
            "concept_checkpoint" => cfg.paths.concept_checkpoint = Some(PathBuf::from(v)),
            "decoder_checkpoint" => cfg.paths.decoder_checkpoint = Some(PathBuf::from(v)),
            "ablation" => {
                cfg.ablation = if v == "all" {
                    AblationRow::ALL.to_vec()
                } else {
                    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| ablation_row(line, s)).collect::<AppResult<_>>()?
                }
            }
            other => return Err(invalid(line, format!("unknown key {other:?}"))),
        }
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> AppResult<FileConfig> {
    let text = crate::fsio::read_text(path)?;
    parse_config(&text)
}
