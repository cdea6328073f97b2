use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

/// Clinical terms eligible as concepts: the pathology and anatomy words of
/// the report templates.
pub const CONCEPT_LEXICON: &[&str] = &[
    "abnormality",
    "atelectasis",
    "bibasilar",
    "bony",
    "cardiomediastinal",
    "cardiomegaly",
    "cardiopulmonary",
    "consolidation",
    "disease",
    "edema",
    "effusion",
    "enlarged",
    "fracture",
    "heart",
    "lesion",
    "left",
    "lobe",
    "lower",
    "lung",
    "lungs",
    "nodular",
    "opacity",
    "pacemaker",
    "pleural",
    "pneumonia",
    "pneumothorax",
    "pulmonary",
    "rib",
    "right",
    "silhouette",
    "thickening",
];

/// Occurrence cutoff used on the real report corpus (69 concepts there).
pub const REAL_CORPUS_CONCEPT_THRESHOLD: usize = 80;

/// Mined concepts, most frequent first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptSet {
    pub tokens: Vec<String>,
    pub counts: Vec<usize>,
    pub threshold: usize,
}

impl ConceptSet {
    /// Builds from an ordered token list (as stored in `concepts.txt`).
    pub fn from_tokens(tokens: Vec<String>, threshold: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Config("concept set is empty".into()));
        }
        let counts = alloc::vec![0; tokens.len()];
        Ok(Self { tokens, counts, threshold })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// 1.0 for each concept that literally occurs in the report, else 0.0.
    pub fn indicator(&self, report: &[Vec<String>]) -> Vec<f64> {
        self.tokens
            .iter()
            .map(|c| {
                let hit = report.iter().any(|s| s.iter().any(|t| t == c));
                if hit {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Lexicon terms with at least `threshold` occurrences in `corpus`, ordered by
/// descending count then lexicographically.
pub fn mine_concepts<'a, I>(corpus: I, threshold: usize, lexicon: &[&str]) -> Result<ConceptSet>
where
    I: IntoIterator<Item = &'a Vec<Vec<String>>>,
{
    if threshold == 0 {
        return Err(Error::Validation("concept threshold must be >= 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = lexicon.iter().map(|&t| (t, 0)).collect();
    for report in corpus {
        for sentence in report {
            for t in sentence {
                if let Some(c) = counts.get_mut(t.as_str()) {
                    *c += 1;
                }
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= threshold).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    if kept.is_empty() {
        return Err(Error::Config(alloc::format!(
            "no lexicon term reaches {threshold} occurrences"
        )));
    }
    Ok(ConceptSet {
        tokens: kept.iter().map(|(t, _)| t.to_string()).collect(),
        counts: kept.iter().map(|(_, c)| *c).collect(),
        threshold,
    })
}
