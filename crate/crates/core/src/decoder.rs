//! Hierarchical sentence/word LSTM decoder.
//!
//! The sentence LSTM consumes `[context ; h_prev]` per sentence and emits a
//! sentence state plus a stop probability. Each sentence state seeds a fresh
//! word LSTM (through a learned `tanh` projection) whose input at every step
//! is `[embedding(prev word) ; c_att]`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{ConceptMemory, FusionMemory};
use crate::autodiff::{Tape, Var};
use crate::corpus::{END_ID, PAD_ID, START_ID};
use crate::params::ParamStore;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub max_sentences: usize,
    pub max_words: usize,
    pub d_h_sent: usize,
    pub d_h_word: usize,
    pub d_embed: usize,
    pub d_concept: usize,
    pub context_dim: usize,
    pub vocab_size: usize,
    pub teacher_forcing: bool,
    pub stop_threshold: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            max_sentences: 8,
            max_words: 20,
            d_h_sent: 128,
            d_h_word: 128,
            d_embed: 64,
            d_concept: 32,
            context_dim: 32,
            vocab_size: 4,
            teacher_forcing: true,
            stop_threshold: 0.5,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sentences == 0 || self.max_words == 0 {
            return Err(Error::Config("decoder caps must be >= 1".into()));
        }
        if self.vocab_size <= END_ID {
            return Err(Error::Config("vocabulary must contain the reserved tokens".into()));
        }
        if !(0.0..=1.0).contains(&self.stop_threshold) {
            return Err(Error::Config(format!("stop_threshold must be in [0,1], got {}", self.stop_threshold)));
        }
        for (n, v) in [
            ("d_h_sent", self.d_h_sent),
            ("d_h_word", self.d_h_word),
            ("d_embed", self.d_embed),
            ("d_concept", self.d_concept),
            ("context_dim", self.context_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{n} must be positive")));
            }
        }
        Ok(())
    }

    pub fn arch_string(&self) -> String {
        format!(
            "decoder:d_h_sent={};d_h_word={};d_embed={};d_concept={};context_dim={};vocab={}",
            self.d_h_sent, self.d_h_word, self.d_embed, self.d_concept, self.context_dim, self.vocab_size
        )
    }
}

pub const SENT_LSTM: &str = "decoder.sent.lstm";
pub const WORD_LSTM: &str = "decoder.word.lstm";
pub const EMBED: &str = "decoder.embed";
pub const CONCEPT_EMBED: &str = "concepts.embed";

/// Adds freshly initialised decoder tensors (including concept embeddings).
pub fn init_params(cfg: &DecoderConfig, n_concepts: usize, seed: u64, store: &mut ParamStore) -> Result<()> {
    cfg.validate()?;
    init_lstm(store, seed, SENT_LSTM, cfg.context_dim + cfg.d_h_sent, cfg.d_h_sent);
    init_lstm(store, seed, WORD_LSTM, cfg.d_embed + cfg.d_concept, cfg.d_h_word);
    store.init_uniform(seed, "decoder.stop.weight", &[1, cfg.d_h_sent], cfg.d_h_sent);
    store.init_zeros("decoder.stop.bias", &[1]);
    store.init_uniform(seed, "decoder.word_init.weight", &[cfg.d_h_word, cfg.d_h_sent], cfg.d_h_sent);
    store.init_zeros("decoder.word_init.bias", &[cfg.d_h_word]);
    store.init_uniform(seed, EMBED, &[cfg.vocab_size, cfg.d_embed], cfg.d_embed);
    store.init_uniform(seed, "decoder.out.weight", &[cfg.vocab_size, cfg.d_h_word], cfg.d_h_word);
    store.init_zeros("decoder.out.bias", &[cfg.vocab_size]);
    store.init_uniform(seed, CONCEPT_EMBED, &[n_concepts.max(1), cfg.d_concept], cfg.d_concept);
    Ok(())
}

/// Adds LSTM tensors `{prefix}.w_ih [4h, d_in]`, `.w_hh [4h, h]`, `.bias [4h]`.
///
/// Gate rows are ordered input, forget, candidate, output.
pub fn init_lstm(store: &mut ParamStore, seed: u64, prefix: &str, d_in: usize, d_h: usize) {
    store.init_uniform(seed, &format!("{prefix}.w_ih"), &[4 * d_h, d_in], d_in + d_h);
    store.init_uniform(seed, &format!("{prefix}.w_hh"), &[4 * d_h, d_h], d_in + d_h);
    store.init_zeros(&format!("{prefix}.bias"), &[4 * d_h]);
}

/// Hidden and cell state of an LSTM.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, d_h: usize) -> Result<Self> {
        let h = tape.leaf(&[d_h], vec![0.0; d_h], false)?;
        let c = tape.leaf(&[d_h], vec![0.0; d_h], false)?;
        Ok(Self { h, c })
    }
}

/// One standard LSTM step.
pub fn lstm_step(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, state: LstmState) -> Result<LstmState> {
    let w_ih = store.bind(tape, &format!("{prefix}.w_ih"))?;
    let w_hh = store.bind(tape, &format!("{prefix}.w_hh"))?;
    let b = store.bind(tape, &format!("{prefix}.bias"))?;
    let d_h = tape.shape(state.h)[0];
    if tape.shape(w_hh) != [4 * d_h, d_h] {
        return Err(Error::shape("lstm_step", tape.shape(w_hh), &[4 * d_h, d_h]));
    }
    let zx = tape.matvec(w_ih, x)?;
    let zh = tape.matvec(w_hh, state.h)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add(z, b)?;
    let zi = tape.slice(z, 0, d_h)?;
    let zf = tape.slice(z, d_h, d_h)?;
    let zg = tape.slice(z, 2 * d_h, d_h)?;
    let zo = tape.slice(z, 3 * d_h, d_h)?;
    let i = tape.sigmoid(zi)?;
    let f = tape.sigmoid(zf)?;
    let g = tape.tanh(zg)?;
    let o = tape.sigmoid(zo)?;
    let fc = tape.mul(f, state.c)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok(LstmState { h, c })
}

fn linear(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = store.bind(tape, &format!("{prefix}.weight"))?;
    let b = store.bind(tape, &format!("{prefix}.bias"))?;
    let z = tape.matvec(w, x)?;
    tape.add(z, b)
}

/// Sentence LSTM step on `[context ; h_prev]`; returns the new state and the stop probability.
pub fn sentence_step(tape: &mut Tape, store: &ParamStore, context: Var, state: LstmState) -> Result<(LstmState, Var)> {
    let x = tape.concat(&[context, state.h])?;
    let next = lstm_step(tape, store, SENT_LSTM, x, state)?;
    let z = linear(tape, store, "decoder.stop", next.h)?;
    let stop = tape.sigmoid(z)?;
    Ok((next, stop))
}

/// Initial word-LSTM state derived from a sentence state.
pub fn word_init(tape: &mut Tape, store: &ParamStore, h_sent: Var) -> Result<LstmState> {
    let z = linear(tape, store, "decoder.word_init", h_sent)?;
    let h = tape.tanh(z)?;
    let d = tape.shape(h)[0];
    let c = tape.leaf(&[d], vec![0.0; d], false)?;
    Ok(LstmState { h, c })
}

/// Word LSTM step on `[embedding(prev_word) ; c_att]`; returns the new state and vocabulary logits.
pub fn word_step(
    tape: &mut Tape,
    store: &ParamStore,
    prev_word: usize,
    c_att: Var,
    state: LstmState,
) -> Result<(LstmState, Var)> {
    let table = store.bind(tape, EMBED)?;
    let emb = tape.embedding_lookup(table, prev_word)?;
    let x = tape.concat(&[emb, c_att])?;
    let next = lstm_step(tape, store, WORD_LSTM, x, state)?;
    let logits = linear(tape, store, "decoder.out", next.h)?;
    Ok((next, logits))
}

/// Where the word decoder's concept context comes from.
#[derive(Debug, Clone, Copy)]
pub enum ConceptSource<'a> {
    /// No concept attention; `c_att` is the zero vector.
    Off,
    /// Per-concept probabilities (predicted, or ground-truth indicators for the oracle run).
    Probs(&'a [f64]),
}

/// Per-sample decoding context shared by training and generation.
pub struct DecodeContext {
    fusion: FusionMemory,
    concepts: Option<ConceptMemory>,
    d_concept: usize,
}

impl DecodeContext {
    pub fn new(tape: &mut Tape, store: &ParamStore, fusion: FusionMemory, concepts: ConceptSource<'_>, d_concept: usize) -> Result<Self> {
        let concepts = match concepts {
            ConceptSource::Off => None,
            ConceptSource::Probs(p) => {
                let emb = store.bind(tape, CONCEPT_EMBED)?;
                if tape.shape(emb)[0] != p.len() {
                    return Err(Error::shape("concept_attend", tape.shape(emb), &[p.len()]));
                }
                let probs = tape.leaf(&[p.len()], p.to_vec(), false)?;
                Some(ConceptMemory::new(tape, store, emb, probs)?)
            }
        };
        Ok(Self {
            fusion,
            concepts,
            d_concept,
        })
    }

    fn concept_context(&self, tape: &mut Tape, store: &ParamStore, h_w_prev: Var) -> Result<Var> {
        match &self.concepts {
            Some(mem) => Ok(mem.attend(tape, store, h_w_prev)?.0),
            None => tape.leaf(&[self.d_concept], vec![0.0; self.d_concept], false),
        }
    }
}

/// Teacher-forced outputs for one reference report.
pub struct TeacherForced {
    /// Logits per sentence per predicted position.
    pub logits: Vec<Vec<Var>>,
    pub stop_probs: Vec<Var>,
}

/// Runs the decoder under teacher forcing over `reference` sentences.
///
/// Each reference sentence is `[⟨start⟩, w₁, …, wₙ, ⟨end⟩]`.
pub fn teacher_force(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &DecoderConfig,
    ctx: &DecodeContext,
    reference: &[Vec<usize>],
) -> Result<TeacherForced> {
    check_caps(cfg, reference)?;
    let mut sent = LstmState::zeros(tape, cfg.d_h_sent)?;
    let mut logits = Vec::with_capacity(reference.len());
    let mut stop_probs = Vec::with_capacity(reference.len());
    for sentence in reference {
        let (context, _) = ctx.fusion.context(tape, store, sent.h)?;
        let (next, stop) = sentence_step(tape, store, context, sent)?;
        sent = next;
        stop_probs.push(stop);
        let mut word = word_init(tape, store, sent.h)?;
        let mut row = Vec::with_capacity(sentence.len() - 1);
        for &prev in &sentence[..sentence.len() - 1] {
            let c_att = ctx.concept_context(tape, store, word.h)?;
            let (next, l) = word_step(tape, store, prev, c_att, word)?;
            word = next;
            row.push(l);
        }
        logits.push(row);
    }
    Ok(TeacherForced { logits, stop_probs })
}

/// Rejects references that do not fit the decoder caps.
pub fn check_caps(cfg: &DecoderConfig, reference: &[Vec<usize>]) -> Result<()> {
    if reference.is_empty() || reference.len() > cfg.max_sentences {
        return Err(Error::Validation(format!(
            "report has {} sentences, caps allow 1..={}",
            reference.len(),
            cfg.max_sentences
        )));
    }
    for s in reference {
        if s.len() < 2 || s.len() - 1 > cfg.max_words {
            return Err(Error::Validation(format!(
                "sentence of {} tokens exceeds word cap {}",
                s.len(),
                cfg.max_words
            )));
        }
    }
    Ok(())
}

/// Handles to the decomposed report loss.
#[derive(Debug, Clone, Copy)]
pub struct ReportLoss {
    pub total: Var,
    pub words: Var,
    pub stop: Var,
}

/// Summed word cross entropy plus BCE of the stop gate (1 only at the last sentence).
///
/// `logits[s][t]` predicts `reference[s][t + 1]`.
pub fn report_loss(
    tape: &mut Tape,
    logits: &[Vec<Var>],
    reference: &[Vec<usize>],
    stop_probs: &[Var],
) -> Result<ReportLoss> {
    if logits.len() != reference.len() || stop_probs.len() != reference.len() {
        return Err(Error::shape("report_loss", &[logits.len(), stop_probs.len()], &[reference.len()]));
    }
    let mut terms = Vec::new();
    for (row, sentence) in logits.iter().zip(reference) {
        if row.len() + 1 != sentence.len() {
            return Err(Error::shape("report_loss", &[row.len()], &[sentence.len()]));
        }
        for (&l, &target) in row.iter().zip(&sentence[1..]) {
            terms.push(tape.cross_entropy(l, target)?);
        }
    }
    let all = tape.concat(&terms)?;
    let words = tape.sum(all)?;
    let n = stop_probs.len();
    let stops = tape.concat(stop_probs)?;
    let target: Vec<f64> = (0..n).map(|i| if i + 1 == n { 1.0 } else { 0.0 }).collect();
    let stop = tape.bce_loss(stops, &target)?;
    let total = tape.add(words, stop)?;
    Ok(ReportLoss { total, words, stop })
}

/// Generated report: token-id sentences, each starting with ⟨start⟩.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Report {
    pub sentences: Vec<Vec<usize>>,
}

fn greedy_pick(logits: &[f64], first: bool) -> usize {
    let mut best = usize::MAX;
    let mut bv = f64::NEG_INFINITY;
    for (i, &v) in logits.iter().enumerate() {
        if i == PAD_ID || i == START_ID || (first && i == END_ID) {
            continue;
        }
        if v > bv {
            bv = v;
            best = i;
        }
    }
    best
}

/// Greedy decoding.
///
/// Sentences are produced until the stop gate exceeds `stop_threshold` (the
/// sentence that triggered the stop is kept) or `max_sentences` is reached.
/// Each sentence ends at ⟨end⟩ or after `max_words` tokens and always holds at
/// least one word.
pub fn generate(tape: &mut Tape, store: &ParamStore, cfg: &DecoderConfig, ctx: &DecodeContext) -> Result<Report> {
    let mut sent = LstmState::zeros(tape, cfg.d_h_sent)?;
    let mut report = Report::default();
    for _ in 0..cfg.max_sentences {
        let (context, _) = ctx.fusion.context(tape, store, sent.h)?;
        let (next, stop) = sentence_step(tape, store, context, sent)?;
        sent = next;
        let mut word = word_init(tape, store, sent.h)?;
        let mut tokens = vec![START_ID];
        let mut prev = START_ID;
        for step in 0..cfg.max_words {
            let c_att = ctx.concept_context(tape, store, word.h)?;
            let (next, l) = word_step(tape, store, prev, c_att, word)?;
            word = next;
            prev = greedy_pick(tape.value(l), step == 0);
            tokens.push(prev);
            if prev == END_ID {
                break;
            }
        }
        report.sentences.push(tokens);
        if tape.scalar(stop) > cfg.stop_threshold {
            break;
        }
    }
    Ok(report)
}

/// One LSTM step with explicit weights, outside any model store.
pub fn lstm_step_values(
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut store = ParamStore::new();
    store.insert("cell.w_ih", w_ih.clone());
    store.insert("cell.w_hh", w_hh.clone());
    store.insert("cell.bias", bias.clone());
    let mut tape = Tape::new();
    let xv = tape.leaf(&[x.len()], x.to_vec(), false)?;
    let hv = tape.leaf(&[h.len()], h.to_vec(), false)?;
    let cv = tape.leaf(&[c.len()], c.to_vec(), false)?;
    let out = lstm_step(&mut tape, &store, "cell", xv, LstmState { h: hv, c: cv })?;
    Ok((tape.value(out.h).to_vec(), tape.value(out.c).to_vec()))
}
