use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{END, END_ID, RESERVED, START, START_ID, UNK, UNK_ID};
use crate::{Error, Result};

/// De-identification placeholders ("XXXX") become ⟨unk⟩.
fn is_deid_artifact(tok: &str) -> bool {
    tok.len() >= 3 && tok.chars().all(|c| c == 'x')
}

fn clean_token(raw: &str) -> String {
    let kept: String = raw
        .chars()
        .filter(|c| c.is_alphanumeric() || *c == '-')
        .collect();
    kept.trim_matches('-').to_string()
}

/// Lowercases, splits sentences on `.` and tokens on whitespace, strips
/// punctuation (keeping in-word hyphens) and wraps every sentence in
/// ⟨start⟩/⟨end⟩.
pub fn tokenize(text: &str) -> Result<Vec<Vec<String>>> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for sentence in lower.split('.') {
        let mut toks: Vec<String> = Vec::new();
        for raw in sentence.split_whitespace() {
            let t = clean_token(raw);
            if t.is_empty() {
                continue;
            }
            if is_deid_artifact(&t) {
                toks.push(UNK.to_string());
            } else {
                toks.push(t);
            }
        }
        if toks.is_empty() {
            continue;
        }
        let mut wrapped = Vec::with_capacity(toks.len() + 2);
        wrapped.push(START.to_string());
        wrapped.extend(toks);
        wrapped.push(END.to_string());
        out.push(wrapped);
    }
    if out.is_empty() {
        return Err(Error::Data("report is empty after tokenization".into()));
    }
    Ok(out)
}

/// Joins the words of each sentence with single spaces, dropping sentinel
/// tokens; one output line per sentence.
pub fn detokenize<S: AsRef<str>>(sentences: &[Vec<S>]) -> String {
    let mut lines = Vec::new();
    for s in sentences {
        let words: Vec<&str> = s
            .iter()
            .map(AsRef::as_ref)
            .filter(|t| *t != START && *t != END && *t != RESERVED[0])
            .collect();
        lines.push(words.join(" "));
    }
    lines.join("\n")
}

/// Bidirectional token/id map. Ids 0..4 are ⟨pad⟩, ⟨start⟩, ⟨end⟩, ⟨unk⟩;
/// kept tokens follow in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Builds from an id-ordered token list that starts with the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(Error::Data("vocabulary must start with <pad> <start> <end> <unk>".into()));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(alloc::format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or the ⟨unk⟩ id when it was dropped.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(UNK)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, report: &[Vec<String>]) -> Vec<Vec<usize>> {
        report
            .iter()
            .map(|s| s.iter().map(|t| self.id(t)).collect())
            .collect()
    }

    pub fn decode(&self, ids: &[Vec<usize>]) -> Vec<Vec<String>> {
        ids.iter()
            .map(|s| s.iter().map(|&i| self.token(i).to_string()).collect())
            .collect()
    }
}

/// Keeps every non-reserved token seen at least `min_count` times.
pub fn build_vocabulary<'a, I>(corpus: I, min_count: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a Vec<Vec<String>>>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for report in corpus {
        for sentence in report {
            for t in sentence {
                if !RESERVED.contains(&t.as_str()) {
                    *counts.entry(t.as_str()).or_default() += 1;
                }
            }
        }
    }
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(
        counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .map(|(t, _)| t.to_string()),
    );
    debug_assert_eq!(tokens[START_ID], START);
    debug_assert_eq!(tokens[END_ID], END);
    Vocabulary::from_tokens(tokens).expect("reserved prefix and unique keys")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_wraps_sentences() {
        let t = tokenize("No acute disease.").unwrap();
        assert_eq!(t, vec![vec!["<start>", "no", "acute", "disease", "<end>"]]);
        assert_eq!(tokenize("A. B.").unwrap().len(), 2);
    }

    #[test]
    fn tokenize_handles_punctuation_and_deid() {
        let t = tokenize("Right-sided effusion, stable; compared to XXXX.").unwrap();
        assert_eq!(
            t[0],
            vec!["<start>", "right-sided", "effusion", "stable", "compared", "to", "<unk>", "<end>"]
        );
        assert!(matches!(tokenize(" . , ."), Err(Error::Data(_))));
    }

    #[test]
    fn vocabulary_min_count() {
        let corpus = vec![
            tokenize("a b c. a b.").unwrap(),
            tokenize("a c. a b.").unwrap(),
        ];
        let v = build_vocabulary(&corpus, 3);
        assert!(v.contains("a") && v.contains("b"));
        assert_eq!(v.id("c"), UNK_ID);
        assert_eq!(&v.tokens()[..4], &RESERVED.map(String::from));
        assert_eq!(v, build_vocabulary(&corpus, 3));
    }

    #[test]
    fn detokenize_strips_sentinels() {
        let t = tokenize("The heart is normal. Lungs clear.").unwrap();
        assert_eq!(detokenize(&t), "the heart is normal\nlungs clear");
    }
}
