//! Deterministic synthetic stand-in for paired chest x-rays and reports.
//!
//! Each observation owns a home cell on a 4×4 grid and a distinct 6×6 glyph.
//! An active observation is drawn in both views: the frontal view uses the
//! home cell, the lateral view the transposed cell, each with its own
//! positional jitter, gain and background noise. Severity (mild/severe)
//! scales the glyph intensity and picks the adjective in the report sentence.
//! Some findings are faint in one of the two views, so each view alone misses
//! evidence the other one carries.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{tokenize, MultiViewSample};
use crate::encoder::N_OBS;
use crate::params::name_hash;
use crate::{Error, Result, Tensor};

const GLYPH: usize = 6;
const GRID: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Frontal,
    Lateral,
}

impl View {
    pub fn as_str(self) -> &'static str {
        match self {
            View::Frontal => "frontal",
            View::Lateral => "lateral",
        }
    }

    /// Single-letter suffix used in dataset file names.
    pub fn letter(self) -> char {
        match self {
            View::Frontal => 'f',
            View::Lateral => 'l',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub image_size: usize,
    /// Probability that a sample has no active observation.
    pub p_normal: f64,
    /// Upper bound on active observations per sample.
    pub max_active: usize,
    pub mild_intensity: f64,
    pub severe_intensity: f64,
    pub lateral_gain: f64,
    pub frontal_noise: f64,
    pub lateral_noise: f64,
    /// Probability that a planted pattern is attenuated in one (random) view.
    pub faint_prob: f64,
    /// Intensity multiplier of the attenuated view; keeps the glyph above the noise ceiling.
    pub faint_gain: f64,
    /// Probability of a leading comparison sentence carrying a de-identification artifact.
    pub comparison_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            p_normal: 0.25,
            max_active: 3,
            mild_intensity: 0.5,
            severe_intensity: 0.95,
            lateral_gain: 0.8,
            frontal_noise: 0.1,
            lateral_noise: 0.15,
            faint_prob: 0.3,
            faint_gain: 0.45,
            comparison_prob: 0.1,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let cell = self.image_size / GRID;
        if self.image_size % GRID != 0 || cell < GLYPH + 2 {
            return Err(Error::Config(format!(
                "image_size {} too small for the pattern grid (need a multiple of {GRID} with cells >= {} px)",
                self.image_size,
                GLYPH + 2
            )));
        }
        if !(0.0..=1.0).contains(&self.faint_prob) || !(self.faint_gain > 0.0 && self.faint_gain <= 1.0) {
            return Err(Error::Config("faint_prob must be in [0,1] and faint_gain in (0,1]".into()));
        }
        if self.max_active == 0 || self.max_active > N_OBS {
            return Err(Error::Config(format!("max_active must be in 1..={N_OBS}")));
        }
        Ok(())
    }
}

/// Ground truth for one planted observation in one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub label: usize,
    pub severe: bool,
    /// `(x0, y0, side)` of the glyph box in the frontal view, pixels.
    pub frontal_box: (usize, usize, usize),
    pub lateral_box: (usize, usize, usize),
    /// View in which the pattern was attenuated, if any.
    pub faint: Option<View>,
}

impl Plant {
    pub fn bbox(&self, view: View) -> (usize, usize, usize) {
        match view {
            View::Frontal => self.frontal_box,
            View::Lateral => self.lateral_box,
        }
    }

    /// Pixel coordinates `(x, y)` covered by the glyph in `view`.
    pub fn mask_pixels(&self, view: View) -> Vec<(usize, usize)> {
        let (x0, y0, side) = self.bbox(view);
        let scale = side / GLYPH;
        let mut px = Vec::new();
        for y in 0..side {
            for x in 0..side {
                if pattern_mask(self.label, y / scale, x / scale) {
                    px.push((x0 + x, y0 + y));
                }
            }
        }
        px
    }
}

/// Whether glyph cell `(r, c)` (each in 0..6) is lit for observation `label`.
pub fn pattern_mask(label: usize, r: usize, c: usize) -> bool {
    let (ri, ci) = (r as i64, c as i64);
    match label {
        0 => true,
        1 => r % 2 == 0,
        2 => c % 2 == 0,
        3 => (r + c) % 2 == 0,
        4 => (r + c) % 3 == 0,
        5 => (ri - ci).rem_euclid(3) == 0,
        6 => r % 2 == 0 && c % 2 == 0,
        7 => r % 3 == 0,
        8 => c % 3 == 0,
        9 => r == 0 || r == 5 || c == 0 || c == 5,
        10 => r == c || r + c == 5,
        11 => (2..4).contains(&r) || (2..4).contains(&c),
        12 => (r / 2) % 2 == 0,
        13 => (c / 2) % 2 == 0,
        _ => false,
    }
}

fn home_cell(label: usize, view: View) -> (usize, usize) {
    let (row, col) = (label / GRID, label % GRID);
    match view {
        View::Frontal => (row, col),
        View::Lateral => (col, row),
    }
}

struct Template {
    group: usize,
    text: &'static str,
    mild: &'static str,
    severe: &'static str,
    impression: &'static str,
}

const TEMPLATES: [Template; N_OBS] = [
    Template { group: 0, text: "the cardiomediastinal silhouette is {} enlarged", mild: "mildly", severe: "markedly", impression: "enlarged cardiomediastinum" },
    Template { group: 0, text: "there is {} cardiomegaly", mild: "mild", severe: "severe", impression: "cardiomegaly" },
    Template { group: 1, text: "there is {} opacity in the right lung", mild: "faint", severe: "dense", impression: "lung opacity" },
    Template { group: 1, text: "a {} nodular lesion is seen in the left lung", mild: "small", severe: "large", impression: "lung lesion" },
    Template { group: 1, text: "there is {} pulmonary edema", mild: "mild", severe: "severe", impression: "pulmonary edema" },
    Template { group: 1, text: "{} consolidation is present in the left lower lobe", mild: "patchy", severe: "dense", impression: "consolidation" },
    Template { group: 1, text: "there are {} signs of pneumonia in the right lower lobe", mild: "early", severe: "extensive", impression: "pneumonia" },
    Template { group: 1, text: "there is {} bibasilar atelectasis", mild: "mild", severe: "severe", impression: "atelectasis" },
    Template { group: 2, text: "there is a {} right pneumothorax", mild: "small", severe: "large", impression: "pneumothorax" },
    Template { group: 2, text: "there is a {} left pleural effusion", mild: "small", severe: "large", impression: "pleural effusion" },
    Template { group: 2, text: "there is {} pleural thickening", mild: "mild", severe: "severe", impression: "pleural thickening" },
    Template { group: 3, text: "there is an {} rib fracture", mild: "old", severe: "acute", impression: "rib fracture" },
    Template { group: 4, text: "a {} lead pacemaker is in place", mild: "single", severe: "dual", impression: "pacemaker placement" },
    Template { group: 4, text: "no {} acute finding is identified", mild: "other", severe: "additional", impression: "no acute finding" },
];

const NORMALS: [(usize, &str); 4] = [
    (0, "the heart size is normal"),
    (1, "the lungs are clear"),
    (2, "there is no pneumothorax or pleural effusion"),
    (3, "no acute bony abnormality is seen"),
];

const N_GROUPS: usize = 5;
const NORMAL_IMPRESSION: &str = "no acute cardiopulmonary disease";
const COMPARISON: &str = "comparison is made to the prior exam from XXXX";

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Report text for the given active observations; sentences ordered by anatomy group.
fn compose_report(active: &[(usize, bool)], comparison: bool) -> String {
    let mut sentences: Vec<String> = Vec::new();
    if comparison {
        sentences.push(COMPARISON.to_string());
    }
    for group in 0..N_GROUPS {
        let mut any = false;
        for &(label, severe) in active {
            let t = &TEMPLATES[label];
            if t.group == group {
                any = true;
                sentences.push(t.text.replace("{}", if severe { t.severe } else { t.mild }));
            }
        }
        if !any {
            if let Some((_, s)) = NORMALS.iter().find(|(g, _)| *g == group) {
                sentences.push(s.to_string());
            }
        }
    }
    match active.first() {
        None => sentences.push(NORMAL_IMPRESSION.to_string()),
        Some(&(label, _)) => sentences.push(format!("findings are consistent with {}", TEMPLATES[label].impression)),
    }
    let mut text = sentences.iter().map(|s| capitalize(s)).collect::<Vec<_>>().join(". ");
    text.push('.');
    text
}

fn render(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    view: View,
    active: &[(usize, bool)],
    faint: &[Option<View>],
) -> (Tensor, Vec<(usize, usize, usize)>) {
    let s = cfg.image_size;
    let cell = s / GRID;
    let scale = cell / (GLYPH + 2);
    let side = GLYPH * scale;
    let (noise, gain) = match view {
        View::Frontal => (cfg.frontal_noise, 1.0),
        View::Lateral => (cfg.lateral_noise, cfg.lateral_gain),
    };
    let mut img: Vec<f64> = (0..s * s).map(|_| rng.random_range(0.0..noise)).collect();
    let mut boxes = Vec::with_capacity(active.len());
    for (&(label, severe), &fv) in active.iter().zip(faint) {
        let (row, col) = home_cell(label, view);
        let slack = cell - side;
        let jx = rng.random_range(0..=slack);
        let jy = rng.random_range(0..=slack);
        let (x0, y0) = (col * cell + jx, row * cell + jy);
        let base = if severe { cfg.severe_intensity } else { cfg.mild_intensity };
        let vis = if fv == Some(view) { cfg.faint_gain } else { 1.0 };
        let amp = gain * vis * base * rng.random_range(0.9..1.1);
        for y in 0..side {
            for x in 0..side {
                if pattern_mask(label, y / scale, x / scale) {
                    let p = &mut img[(y0 + y) * s + x0 + x];
                    *p = (*p + amp).min(1.0);
                }
            }
        }
        boxes.push((x0, y0, side));
    }
    // 8-bit quantisation so that PGM storage is lossless.
    for p in img.iter_mut() {
        *p = libm::round(*p * 255.0) / 255.0;
    }
    (Tensor::new(&[1, s, s], img).expect("square image"), boxes)
}

/// Generates `n_samples` samples; sample `i` depends only on `(seed, i)`.
pub fn generate_dataset(seed: u64, n_samples: usize, cfg: &SynthConfig) -> Result<Vec<MultiViewSample>> {
    cfg.validate()?;
    if n_samples < 10 {
        return Err(Error::Config(format!("n_samples must be >= 10, got {n_samples}")));
    }
    (0..n_samples).map(|i| generate_sample(seed, i, cfg)).collect()
}

fn generate_sample(seed: u64, i: usize, cfg: &SynthConfig) -> Result<MultiViewSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&format!("sample:{i}")));
    let n_active = if rng.random_bool(cfg.p_normal) {
        0
    } else {
        rng.random_range(1..=cfg.max_active)
    };
    let mut labels: Vec<usize> = sample(&mut rng, N_OBS, n_active).into_vec();
    labels.sort_unstable();
    let active: Vec<(usize, bool)> = labels.iter().map(|&l| (l, rng.random_bool(0.5))).collect();
    let faint: Vec<Option<View>> = active
        .iter()
        .map(|_| {
            if rng.random_bool(cfg.faint_prob) {
                Some(if rng.random_bool(0.5) { View::Frontal } else { View::Lateral })
            } else {
                None
            }
        })
        .collect();
    let comparison = rng.random_bool(cfg.comparison_prob);
    let (frontal, fboxes) = render(cfg, &mut rng, View::Frontal, &active, &faint);
    let (lateral, lboxes) = render(cfg, &mut rng, View::Lateral, &active, &faint);
    let mut obs_labels = vec![0.0; N_OBS];
    let mut plants = Vec::with_capacity(active.len());
    for (j, &(label, severe)) in active.iter().enumerate() {
        obs_labels[label] = 1.0;
        plants.push(Plant {
            label,
            severe,
            frontal_box: fboxes[j],
            lateral_box: lboxes[j],
            faint: faint[j],
        });
    }
    let report_text = compose_report(&active, comparison);
    let report = tokenize(&report_text)?;
    Ok(MultiViewSample {
        id: format!("s{i:05}"),
        frontal,
        lateral,
        obs_labels,
        concept_labels: Vec::new(),
        report_text,
        report,
        plants,
    })
}

/// Words of the finding sentence for `label` (without severity adjective).
pub fn template_words(label: usize) -> Vec<&'static str> {
    TEMPLATES[label].text.split(' ').filter(|w| *w != "{}").collect()
}

/// Severity adjectives for `label` as `(mild, severe)`.
pub fn severity_words(label: usize) -> (&'static str, &'static str) {
    (TEMPLATES[label].mild, TEMPLATES[label].severe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MIN_REPORT_SENTENCES;

    #[test]
    fn glyphs_are_distinct() {
        for a in 0..N_OBS {
            for b in (a + 1)..N_OBS {
                let differs = (0..GLYPH).any(|r| (0..GLYPH).any(|c| pattern_mask(a, r, c) != pattern_mask(b, r, c)));
                assert!(differs, "{a} and {b}");
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig::default();
        let a = generate_dataset(7, 12, &cfg).unwrap();
        let b = generate_dataset(7, 12, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(8, 12, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn reports_respect_structure() {
        let cfg = SynthConfig::default();
        for s in generate_dataset(3, 200, &cfg).unwrap() {
            assert!(s.report.len() >= MIN_REPORT_SENTENCES);
            assert!(s.report.len() <= 8);
            for sent in &s.report {
                assert!(sent.len() - 1 <= 20);
            }
            if s.obs_labels.iter().all(|&y| y == 0.0) {
                let normals: Vec<&str> = NORMALS.iter().map(|(_, t)| *t).chain([NORMAL_IMPRESSION, COMPARISON]).collect();
                for line in s.report_text.split(". ") {
                    let l = line.trim_end_matches('.').to_lowercase();
                    assert!(normals.iter().any(|n| n.to_lowercase() == l), "{l}");
                }
            }
            s.validate(32).unwrap();
        }
    }

    #[test]
    fn planted_patterns_appear_in_both_views() {
        let cfg = SynthConfig::default();
        for s in generate_dataset(11, 100, &cfg).unwrap() {
            for p in &s.plants {
                for (view, img) in [(View::Frontal, &s.frontal), (View::Lateral, &s.lateral)] {
                    let noise = if view == View::Frontal { cfg.frontal_noise } else { cfg.lateral_noise };
                    for (x, y) in p.mask_pixels(view) {
                        assert!(img.data()[y * 32 + x] >= noise, "{} label {} {view:?}", s.id, p.label);
                    }
                }
            }
        }
    }

    #[test]
    fn too_small_images_rejected() {
        let cfg = SynthConfig { image_size: 16, ..SynthConfig::default() };
        assert!(matches!(generate_dataset(1, 20, &cfg), Err(Error::Config(_))));
        assert!(generate_dataset(1, 5, &SynthConfig::default()).is_err());
    }
}
