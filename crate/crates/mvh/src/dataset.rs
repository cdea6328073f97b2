//! On-disk dataset directory.
//!
//! ```text
//! dataset.txt            key = value manifest (seed, split fraction, sizes)
//! images/{id}_{f|l}.pgm  the two views
//! reports/{id}.txt       reference report
//! labels.csv             sample_id, 14 observation columns, one column per concept
//! vocab.txt              one token per line, in id order
//! concepts.txt           `token count` per line, most frequent first
//! ```

use std::path::Path;

use mvh_core::corpus::{tokenize, ConceptSet, MultiViewSample, View, Vocabulary};
use mvh_core::encoder::{N_OBS, OBSERVATIONS};
use mvh_core::harness::{Prepared, RunConfig};

use crate::error::{AppError, AppResult};
use crate::fsio::{atomic_write, read_text};
use crate::pgm;

/// Parameters the stored split and artifacts were built with.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub test_fraction: f64,
    pub image_size: usize,
    pub n_samples: usize,
    pub min_count: usize,
    pub concept_threshold: usize,
}

impl Manifest {
    pub fn from_config(cfg: &RunConfig, n_samples: usize) -> Self {
        Self {
            seed: cfg.seed,
            test_fraction: cfg.test_fraction,
            image_size: cfg.image_size(),
            n_samples,
            min_count: cfg.min_count,
            concept_threshold: cfg.concept_threshold,
        }
    }

    fn render(&self) -> String {
        format!(
            "seed = {}\ntest_fraction = {}\nimage_size = {}\nn_samples = {}\nmin_count = {}\nconcept_threshold = {}\n",
            self.seed, self.test_fraction, self.image_size, self.n_samples, self.min_count, self.concept_threshold
        )
    }

    fn parse(text: &str) -> AppResult<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for l in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| AppError::Invalid(format!("dataset.txt: bad line {l:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: std::str::FromStr>(kv: &std::collections::BTreeMap<String, String>, k: &str) -> AppResult<T> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| AppError::Invalid(format!("dataset.txt: missing or malformed {k}")))
        }
        Ok(Self {
            seed: get(&kv, "seed")?,
            test_fraction: get(&kv, "test_fraction")?,
            image_size: get(&kv, "image_size")?,
            n_samples: get(&kv, "n_samples")?,
            min_count: get(&kv, "min_count")?,
            concept_threshold: get(&kv, "concept_threshold")?,
        })
    }
}

fn image_path(dir: &Path, id: &str, view: View) -> std::path::PathBuf {
    dir.join("images").join(format!("{id}_{}.pgm", view.letter()))
}

fn csv_err(path: &Path, e: csv::Error) -> AppError {
    AppError::Invalid(format!("{}: {e}", path.display()))
}

fn obs_column(name: &str) -> String {
    name.replace(' ', "_")
}

pub fn write_dataset(dir: &Path, prepared: &Prepared, manifest: &Manifest) -> AppResult<()> {
    let side = manifest.image_size;
    for s in &prepared.samples {
        for (view, img) in [(View::Frontal, &s.frontal), (View::Lateral, &s.lateral)] {
            let text = pgm::encode(side, side, img.data(), manifest.seed)?;
            atomic_write(&image_path(dir, &s.id, view), text.as_bytes())?;
        }
        let mut report = s.report_text.clone();
        if !report.ends_with('\n') {
            report.push('\n');
        }
        atomic_write(&dir.join("reports").join(format!("{}.txt", s.id)), report.as_bytes())?;
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sample_id".to_string()];
    header.extend(OBSERVATIONS.iter().map(|o| obs_column(o)));
    header.extend(prepared.concepts.tokens.iter().cloned());
    let labels = dir.join("labels.csv");
    w.write_record(&header).map_err(|e| csv_err(&labels, e))?;
    for s in &prepared.samples {
        let mut row = vec![s.id.clone()];
        row.extend(s.obs_labels.iter().chain(&s.concept_labels).map(|&y| format!("{}", y as u8)));
        w.write_record(&row).map_err(|e| csv_err(&labels, e))?;
    }
    let bytes = w.into_inner().map_err(|e| AppError::Invalid(e.to_string()))?;
    atomic_write(&labels, &bytes)?;

    let mut vocab = prepared.vocab.tokens().join("\n");
    vocab.push('\n');
    atomic_write(&dir.join("vocab.txt"), vocab.as_bytes())?;
    let concepts: String = prepared
        .concepts
        .tokens
        .iter()
        .zip(&prepared.concepts.counts)
        .map(|(t, c)| format!("{t} {c}\n"))
        .collect();
    atomic_write(&dir.join("concepts.txt"), concepts.as_bytes())?;
    atomic_write(&dir.join("dataset.txt"), manifest.render().as_bytes())
}

fn binary(v: &str, path: &Path, line: usize) -> AppResult<f64> {
    match v.trim() {
        "0" => Ok(0.0),
        "1" => Ok(1.0),
        other => Err(AppError::Invalid(format!("{}:{line}: expected 0 or 1, got {other:?}", path.display()))),
    }
}

/// Reads a dataset directory and rebuilds the split recorded in its manifest.
///
/// `cfg` supplies everything except the split seed and fraction, which come
/// from the manifest so that a later `--seed` cannot silently leak test samples.
pub fn read_dataset(dir: &Path, cfg: &RunConfig) -> AppResult<(Prepared, Manifest)> {
    let manifest = Manifest::parse(&read_text(&dir.join("dataset.txt"))?)?;
    if manifest.image_size != cfg.image_size() {
        return Err(AppError::Invalid(format!(
            "dataset images are {}px but the config expects {}px",
            manifest.image_size,
            cfg.image_size()
        )));
    }
    let vocab_tokens: Vec<String> = read_text(&dir.join("vocab.txt"))?
        .lines()
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let vocab = Vocabulary::from_tokens(vocab_tokens)?;

    let mut tokens = Vec::new();
    let mut counts = Vec::new();
    let concepts_path = dir.join("concepts.txt");
    for (i, l) in read_text(&concepts_path)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut parts = l.split_whitespace();
        let tok = parts.next().unwrap_or_default().to_string();
        let count = match parts.next() {
            Some(c) => c
                .parse()
                .map_err(|_| AppError::Invalid(format!("{}:{}: bad count {c:?}", concepts_path.display(), i + 1)))?,
            None => 0,
        };
        tokens.push(tok);
        counts.push(count);
    }
    let mut concepts = ConceptSet::from_tokens(tokens, manifest.concept_threshold)?;
    concepts.counts = counts;

    let labels = dir.join("labels.csv");
    let text = read_text(&labels)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| csv_err(&labels, e))?.clone();
    let want = 1 + N_OBS + concepts.len();
    if header.len() != want || header.iter().skip(1 + N_OBS).ne(concepts.tokens.iter().map(String::as_str)) {
        return Err(AppError::Invalid(format!(
            "{}: header has {} columns, expected sample_id + {N_OBS} observations + the {} concepts of concepts.txt",
            labels.display(),
            header.len(),
            concepts.len()
        )));
    }
    let mut samples = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(&labels, e))?;
        let line = i + 2;
        let id = rec[0].to_string();
        let vals = rec.iter().skip(1).map(|v| binary(v, &labels, line)).collect::<AppResult<Vec<f64>>>()?;
        let report_text = read_text(&dir.join("reports").join(format!("{id}.txt")))?.trim_end().to_string();
        let read_view = |view| -> AppResult<_> { pgm::decode(&read_text(&image_path(dir, &id, view))?)?.into_tensor() };
        samples.push(MultiViewSample {
            frontal: read_view(View::Frontal)?,
            lateral: read_view(View::Lateral)?,
            obs_labels: vals[..N_OBS].to_vec(),
            concept_labels: vals[N_OBS..].to_vec(),
            report: tokenize(&report_text)?,
            report_text,
            plants: Vec::new(),
            id,
        });
    }
    let split_cfg = RunConfig {
        seed: manifest.seed,
        test_fraction: manifest.test_fraction,
        ..cfg.clone()
    };
    let prepared = Prepared::new(samples, vocab, concepts, &split_cfg)?;
    Ok((prepared, manifest))
}
