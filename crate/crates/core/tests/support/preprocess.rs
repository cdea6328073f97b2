//! Runs the text preprocessing chain over the fixture corpus and compares the
//! rendered result with the checked-in golden files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mvh_core::corpus::{
    build_vocabulary, filter_short_reports, mine_concepts, tokenize, MultiViewSample, CONCEPT_LEXICON,
};
use mvh_core::Tensor;

pub const MIN_COUNT: usize = 3;
pub const CONCEPT_THRESHOLD: usize = 2;

/// Fixture directory given the directory of the `mvh-core` manifest.
pub fn fixtures_dir(core_manifest_dir: &Path) -> PathBuf {
    core_manifest_dir.join("tests").join("fixtures")
}

fn sample(id: &str, text: &str) -> MultiViewSample {
    MultiViewSample {
        id: id.to_string(),
        frontal: Tensor::zeros(&[1, 4, 4]),
        lateral: Tensor::zeros(&[1, 4, 4]),
        obs_labels: vec![0.0; 14],
        concept_labels: Vec::new(),
        report_text: text.to_string(),
        report: tokenize(text).expect("fixture reports contain words"),
        plants: Vec::new(),
    }
}

/// `(file name, rendered contents)` for every golden file.
pub fn render(corpus: &str) -> Vec<(&'static str, String)> {
    let samples: Vec<MultiViewSample> = corpus
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (id, text) = l.split_once('|').expect("id | text");
            sample(id.trim(), text.trim())
        })
        .collect();
    let all: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let kept = filter_short_reports(samples);

    let mut tokens = String::new();
    for id in &all {
        match kept.iter().find(|s| &s.id == id) {
            None => writeln!(tokens, "{id} dropped").unwrap(),
            Some(s) => {
                writeln!(tokens, "{id}").unwrap();
                for sentence in &s.report {
                    writeln!(tokens, "  {}", sentence.join(" ")).unwrap();
                }
            }
        }
    }

    let reports: Vec<&Vec<Vec<String>>> = kept.iter().map(|s| &s.report).collect();
    let vocab = build_vocabulary(reports.iter().copied(), MIN_COUNT);
    let mut vocab_txt = String::new();
    for (i, t) in vocab.tokens().iter().enumerate() {
        writeln!(vocab_txt, "{i} {t}").unwrap();
    }

    let mut encoded = String::new();
    for s in &kept {
        let ids: Vec<String> = vocab
            .encode(&s.report)
            .iter()
            .map(|sent| sent.iter().map(usize::to_string).collect::<Vec<_>>().join(" "))
            .collect();
        writeln!(encoded, "{} {}", s.id, ids.join(" | ")).unwrap();
    }

    let concepts = mine_concepts(reports.iter().copied(), CONCEPT_THRESHOLD, CONCEPT_LEXICON).unwrap();
    let mut concepts_txt = String::new();
    for (t, c) in concepts.tokens.iter().zip(&concepts.counts) {
        writeln!(concepts_txt, "{t} {c}").unwrap();
    }

    vec![
        ("tokens.golden", tokens),
        ("vocab.golden", vocab_txt),
        ("encoded.golden", encoded),
        ("concepts.golden", concepts_txt),
    ]
}

/// Names of golden files whose contents differ from a fresh render.
pub fn mismatches(dir: &Path) -> Vec<String> {
    let corpus = std::fs::read_to_string(dir.join("reports.txt")).expect("fixture corpus");
    render(&corpus)
        .into_iter()
        .filter(|(name, got)| std::fs::read_to_string(dir.join(name)).ok().as_deref() != Some(got.as_str()))
        .map(|(name, _)| name.to_string())
        .collect()
}
