//! Report-generation and observation-classification metrics.
//!
//! Text metrics operate on flattened token sequences (one per report) with the
//! ⟨start⟩/⟨end⟩/⟨pad⟩ sentinels removed. BLEU pools n-gram counts over the
//! corpus; ROUGE-L and METEOR-lite average per-pair scores.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::corpus::{END_ID, PAD_ID, START_ID};
use crate::math;
use crate::{Error, Result};

/// Flattens sentences into one token stream without sentinels.
pub fn flatten_report(sentences: &[Vec<usize>]) -> Vec<usize> {
    sentences
        .iter()
        .flatten()
        .copied()
        .filter(|&t| t != START_ID && t != END_ID && t != PAD_ID)
        .collect()
}

fn check_pairs(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<()> {
    if hyps.is_empty() {
        return Err(Error::Validation("empty hypothesis set".into()));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Validation(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(())
}

fn ngram_counts(tokens: &[usize], n: usize) -> BTreeMap<&[usize], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-`n` with clipped n-gram precision and brevity penalty.
///
/// Any zero precision up to order `n` makes the score 0.
pub fn bleu_n(hyps: &[Vec<usize>], refs: &[Vec<usize>], n: usize) -> Result<f64> {
    check_pairs(hyps, refs)?;
    if !(1..=4).contains(&n) {
        return Err(Error::Validation(format!("BLEU order must be 1..=4, got {n}")));
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let (mut matched, mut total) = (0usize, 0usize);
        for (h, r) in hyps.iter().zip(refs) {
            let hc = ngram_counts(h, order);
            let rc = ngram_counts(r, order);
            for (g, c) in hc {
                matched += c.min(rc.get(g).copied().unwrap_or(0));
                total += c;
            }
        }
        if matched == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += math::ln(matched as f64 / total as f64);
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let bp = if c < r { math::exp(1.0 - r as f64 / c as f64) } else { 1.0 };
    Ok(bp * math::exp(log_sum / n as f64))
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[usize], b: &[usize]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = alloc::vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean LCS-based F1 over pairs.
pub fn rouge_l(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<f64> {
    check_pairs(hyps, refs)?;
    let total: f64 = hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| {
            let l = lcs_len(h, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / h.len() as f64;
            let rc = l / r.len() as f64;
            2.0 * p * rc / (p + rc)
        })
        .sum();
    Ok(total / hyps.len() as f64)
}

/// Exact-match unigram alignment: each hypothesis token, left to right, takes
/// the earliest unused identical reference token. Returns `(matches, chunks)`.
fn align(h: &[usize], r: &[usize]) -> (usize, usize) {
    let mut used = alloc::vec![false; r.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (i, &t) in h.iter().enumerate() {
        if let Some(j) = (0..r.len()).find(|&j| !used[j] && r[j] == t) {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    let mut chunks = 0;
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let continues = k > 0 && pairs[k - 1].0 + 1 == i && pairs[k - 1].1 + 1 == j;
        if !continues {
            chunks += 1;
        }
    }
    (pairs.len(), chunks)
}

/// METEOR restricted to exact matches: `F_mean·(1 − 0.5·(chunks/matches)³)`,
/// `F_mean = 10PR/(R + 9P)`, averaged over pairs.
pub fn meteor_lite(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<f64> {
    check_pairs(hyps, refs)?;
    let total: f64 = hyps.iter().zip(refs).map(|(h, r)| meteor_pair(h, r)).sum();
    Ok(total / hyps.len() as f64)
}

fn meteor_pair(h: &[usize], r: &[usize]) -> f64 {
    let (m, chunks) = align(h, r);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / h.len() as f64;
    let rc = m as f64 / r.len() as f64;
    let fmean = 10.0 * p * rc / (rc + 9.0 * p);
    let penalty = 0.5 * math::powi(chunks as f64 / m as f64, 3);
    fmean * (1.0 - penalty)
}

/// Mann–Whitney ROC-AUC; tied scores count one half.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Validation("scores and labels differ in length".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks (1-based) over tie groups.
    let mut ranks = alloc::vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("ROC-AUC needs both classes".into()));
    }
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y == 1.0).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Per-label AUCs (None where undefined) and their mean over defined labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AucSummary {
    pub per_label: Vec<Option<f64>>,
    pub avg: f64,
    pub undefined: Vec<usize>,
}

/// `scores[i][j]`, `labels[i][j]` for sample `i`, label `j`.
pub fn avg_auc(scores: &[Vec<f64>], labels: &[Vec<f64>]) -> Result<AucSummary> {
    let Some(first) = scores.first() else {
        return Err(Error::Validation("no samples to score".into()));
    };
    let n_labels = first.len();
    let mut per_label = Vec::with_capacity(n_labels);
    let mut undefined = Vec::new();
    for j in 0..n_labels {
        let s: Vec<f64> = scores.iter().map(|r| r[j]).collect();
        let y: Vec<f64> = labels.iter().map(|r| r[j]).collect();
        match roc_auc(&s, &y) {
            Ok(a) => per_label.push(Some(a)),
            Err(Error::UndefinedMetric(_)) => {
                per_label.push(None);
                undefined.push(j);
            }
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = per_label.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::UndefinedMetric("every label is single-class".into()));
    }
    let avg = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(AucSummary {
        per_label,
        avg,
        undefined,
    })
}

/// Text and classification scores for one system.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub bleu: [f64; 4],
    pub meteor: f64,
    pub rouge_l: f64,
    pub auc: AucSummary,
}

impl ScoreReport {
    pub fn text_scores(hyps: &[Vec<usize>], refs: &[Vec<usize>], auc: AucSummary) -> Result<Self> {
        let mut bleu = [0.0; 4];
        for (n, b) in bleu.iter_mut().enumerate() {
            *b = bleu_n(hyps, refs, n + 1)?;
        }
        Ok(Self {
            bleu,
            meteor: meteor_lite(hyps, refs)?,
            rouge_l: rouge_l(hyps, refs)?,
            auc,
        })
    }
}
