//! Synthetic multi-view corpus, report tokenization, vocabulary and concept mining.

mod concepts;
mod synth;
mod text;

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Tensor};

pub use concepts::{mine_concepts, ConceptSet, CONCEPT_LEXICON, REAL_CORPUS_CONCEPT_THRESHOLD};
pub use synth::{generate_dataset, pattern_mask, severity_words, template_words, Plant, SynthConfig, View};
pub use text::{build_vocabulary, detokenize, tokenize, Vocabulary};

pub const PAD_ID: usize = 0;
pub const START_ID: usize = 1;
pub const END_ID: usize = 2;
pub const UNK_ID: usize = 3;

pub const PAD: &str = "<pad>";
pub const START: &str = "<start>";
pub const END: &str = "<end>";
pub const UNK: &str = "<unk>";

/// Reserved tokens in id order.
pub const RESERVED: [&str; 4] = [PAD, START, END, UNK];

/// Minimum number of sentences a report must have to be kept.
pub const MIN_REPORT_SENTENCES: usize = 3;

/// One patient: paired views, labels and the reference report.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewSample {
    pub id: String,
    pub frontal: Tensor,
    pub lateral: Tensor,
    /// 14 binary observation labels.
    pub obs_labels: Vec<f64>,
    /// Binary indicators over the mined concept set; empty until concepts are mined.
    pub concept_labels: Vec<f64>,
    /// Report as written, one sentence per `.`.
    pub report_text: String,
    /// Tokenized report, each sentence wrapped in ⟨start⟩/⟨end⟩.
    pub report: Vec<Vec<String>>,
    /// Generator ground truth for planted patterns; empty for samples read from disk.
    pub plants: Vec<Plant>,
}

impl MultiViewSample {
    /// Checks the structural invariants every stored sample must satisfy.
    pub fn validate(&self, image_size: usize) -> Result<()> {
        let want = [1, image_size, image_size];
        if self.frontal.shape() != want || self.lateral.shape() != want {
            return Err(Error::Data(alloc::format!("sample {} is missing a view of size {image_size}", self.id)));
        }
        if self.obs_labels.len() != crate::encoder::N_OBS || self.obs_labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Data(alloc::format!("sample {} has malformed observation labels", self.id)));
        }
        if self.report.len() < MIN_REPORT_SENTENCES {
            return Err(Error::Data(alloc::format!(
                "sample {} report has {} sentences, need at least {MIN_REPORT_SENTENCES}",
                self.id,
                self.report.len()
            )));
        }
        Ok(())
    }
}

/// Drops samples whose report is too short, keeping order.
pub fn filter_short_reports(samples: Vec<MultiViewSample>) -> Vec<MultiViewSample> {
    samples
        .into_iter()
        .filter(|s| s.report.len() >= MIN_REPORT_SENTENCES)
        .collect()
}

const SPLIT_SALT: u64 = 0x5eed_5b17;

/// Patient-level split into `(train, test)` index lists, each in ascending order.
pub fn split_dataset(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Validation(alloc::format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    idx.shuffle(&mut rng);
    let n_test = libm::round(n as f64 * test_fraction) as usize;
    let mut test: Vec<usize> = idx[..n_test].to_vec();
    let mut train: Vec<usize> = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}
