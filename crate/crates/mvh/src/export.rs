//! Text outputs: score tables, generated reports, heatmaps, training logs.

use std::path::Path;

use mvh_core::corpus::{detokenize, Vocabulary};
use mvh_core::decoder::Report;
use mvh_core::encoder::Band;
use mvh_core::harness::{ConceptEpoch, DecoderEpoch, EncoderEpoch, Visualization};
use mvh_core::metrics::ScoreReport;

use crate::error::{AppError, AppResult};
use crate::fsio::atomic_write;
use crate::pgm;

pub const SCORE_COLUMNS: [&str; 9] = [
    "system", "seed", "bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l", "avg_auc",
];

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> AppResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| AppError::Invalid(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| AppError::Invalid(e.to_string()))?;
    atomic_write(path, &bytes)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn score_row(system: &str, seed: u64, s: &ScoreReport) -> Vec<String> {
    let mut row = vec![system.to_string(), seed.to_string()];
    row.extend(s.bleu.iter().chain([&s.meteor, &s.rouge_l, &s.auc.avg]).map(f64::to_string));
    row
}

pub fn write_scores(path: &Path, seed: u64, rows: &[(String, &ScoreReport)]) -> AppResult<()> {
    let rows: Vec<Vec<String>> = rows.iter().map(|(n, s)| score_row(n, seed, s)).collect();
    write_csv(path, &SCORE_COLUMNS, &rows)
}

/// Report text with one sentence per line, words separated by single spaces.
pub fn report_text(report: &Report, vocab: &Vocabulary) -> String {
    let mut out: String = detokenize(&vocab.decode(&report.sentences))
        .lines()
        .filter(|l| !l.is_empty())
        .flat_map(|l| [l, "\n"])
        .collect();
    if out.is_empty() {
        out.push('\n');
    }
    out
}

/// One `{id}.txt` per sample plus `run.txt` recording the seed.
pub fn write_reports(dir: &Path, seed: u64, reports: &[(String, Report)], vocab: &Vocabulary) -> AppResult<()> {
    for (id, r) in reports {
        atomic_write(&dir.join(format!("{id}.txt")), report_text(r, vocab).as_bytes())?;
    }
    atomic_write(&dir.join("run.txt"), format!("seed = {seed}\nreports = {}\n", reports.len()).as_bytes())
}

pub fn write_visualization(dir: &Path, seed: u64, vis: &Visualization) -> AppResult<()> {
    for h in &vis.heatmaps {
        let stem = format!("{}_{}_{}", h.sample_id, h.view.as_str(), h.label);
        let side = h.heatmap.side;
        let text = pgm::encode(side, side, &h.heatmap.values, seed)?;
        atomic_write(&dir.join(format!("{stem}.pgm")), text.as_bytes())?;
        let mut csv = format!("# seed {seed}\n");
        for row in h.heatmap.values.chunks(side) {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        atomic_write(&dir.join(format!("{stem}.csv")), csv.as_bytes())?;
    }
    let mut txt = format!("# seed {seed}\n# sample_id\tobservation\tprobability\n");
    for (id, entries) in &vis.uncertainty {
        for e in entries.iter().filter(|e| e.band == Band::Uncertain) {
            txt.push_str(&format!("{id}\t{}\t{:.4}\n", e.label, e.prob));
        }
    }
    atomic_write(&dir.join("uncertainty.txt"), txt.as_bytes())
}

pub fn write_encoder_log(path: &Path, seed: u64, log: &[EncoderEpoch]) -> AppResult<()> {
    let rows: Vec<Vec<String>> = log
        .iter()
        .map(|e| {
            vec![
                seed.to_string(),
                e.epoch.to_string(),
                e.loss.to_string(),
                e.bce_front.to_string(),
                e.bce_lat.to_string(),
                e.cvc.to_string(),
                opt(e.heldout_auc),
            ]
        })
        .collect();
    write_csv(path, &["seed", "epoch", "loss", "bce_front", "bce_lat", "cvc", "heldout_auc"], &rows)
}

pub fn write_concept_log(path: &Path, seed: u64, log: &[ConceptEpoch]) -> AppResult<()> {
    let rows: Vec<Vec<String>> = log
        .iter()
        .map(|e| vec![seed.to_string(), e.epoch.to_string(), e.train_bce.to_string(), opt(e.heldout_bce)])
        .collect();
    write_csv(path, &["seed", "epoch", "train_bce", "heldout_bce"], &rows)
}

pub fn write_decoder_log(path: &Path, seed: u64, log: &[DecoderEpoch]) -> AppResult<()> {
    let rows: Vec<Vec<String>> = log
        .iter()
        .map(|e| {
            vec![
                seed.to_string(),
                e.epoch.to_string(),
                e.word_loss.to_string(),
                e.stop_loss.to_string(),
                e.steps.to_string(),
            ]
        })
        .collect();
    write_csv(path, &["seed", "epoch", "word_loss", "stop_loss", "steps"], &rows)
}

/// Per-label held-out AUCs of an encoder, one row per view setting.
pub fn write_auc_table(path: &Path, seed: u64, rows: &[(&str, &mvh_core::metrics::AucSummary)]) -> AppResult<()> {
    let mut header = vec!["seed", "setting", "avg"];
    header.extend(mvh_core::encoder::OBSERVATIONS);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, a)| {
            let mut r = vec![seed.to_string(), name.to_string(), a.avg.to_string()];
            r.extend(a.per_label.iter().map(|&v| opt(v)));
            r
        })
        .collect();
    write_csv(path, &header, &body)
}
