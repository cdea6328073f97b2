use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{AblationRow, ConceptMode, ModelConfig, RunConfig};
use crate::attention::{self, FusionMemory, ViewFeatures};
use crate::autodiff::{clip_global_norm, Adam, AdamConfig, Tape, Var};
use crate::corpus::{
    build_vocabulary, filter_short_reports, mine_concepts, split_dataset, ConceptSet, MultiViewSample, View,
    Vocabulary, CONCEPT_LEXICON,
};
use crate::decoder::{self, ConceptSource, DecodeContext, Report};
use crate::encoder::{
    self, EncoderConfig, EncoderOutput, Heatmap, UncertaintyEntry, BACKBONE_PREFIX, CONCEPT_HEAD_PREFIX,
    OBS_HEAD_PREFIX,
};
use crate::metrics::{self, AucSummary, ScoreReport};
use crate::params::{name_hash, ParamStore};
use crate::{Error, Result, Tensor};

/// Parameters plus optimizer state: everything a checkpoint carries.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamStore,
    pub adam: Adam,
}

impl TrainState {
    fn new(params: ParamStore, lr: f64) -> Result<Self> {
        Ok(Self {
            params,
            adam: Adam::new(AdamConfig { lr, ..AdamConfig::default() })?,
        })
    }
}

/// Failure of a training stage.
#[derive(Debug)]
pub enum StageError {
    /// Bad input or configuration; nothing was trained.
    Invalid(Error),
    /// Training diverged; `last_good` holds the state before the failing step.
    Aborted { error: Error, last_good: Box<TrainState> },
}

impl StageError {
    pub fn error(&self) -> &Error {
        match self {
            StageError::Invalid(e) | StageError::Aborted { error: e, .. } => e,
        }
    }
}

impl From<Error> for StageError {
    fn from(e: Error) -> Self {
        StageError::Invalid(e)
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageError::Invalid(e) => write!(f, "{e}"),
            StageError::Aborted { error, .. } => write!(f, "training aborted: {error}"),
        }
    }
}

fn step_failure(state: &TrainState, e: Error) -> StageError {
    match e {
        Error::NonFinite(_) | Error::Training { .. } => StageError::Aborted {
            error: e,
            last_good: Box::new(state.clone()),
        },
        other => StageError::Invalid(other),
    }
}

/// Clips accumulated gradients and applies one Adam step. Leaves the
/// parameters untouched when any gradient is non-finite.
fn apply_step(state: &mut TrainState, clip: f64) -> Result<()> {
    let norm = clip_global_norm(state.params.grads_mut(), clip);
    if !norm.is_finite() {
        return Err(Error::Training {
            param: "<global>".into(),
            reason: "non-finite gradient norm".into(),
        });
    }
    state.adam.step_tensors(state.params.iter_mut())
}

fn epoch_order(n: usize, seed: u64, stage: &str, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ name_hash(&format!("order:{stage}:{epoch}")));
    idx.shuffle(&mut rng);
    idx
}

/// Dataset with its split, vocabulary and concept set.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub samples: Vec<MultiViewSample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub vocab: Vocabulary,
    pub concepts: ConceptSet,
}

impl Prepared {
    /// Reassembles stored artifacts; the split is recomputed from the seed.
    pub fn new(samples: Vec<MultiViewSample>, vocab: Vocabulary, concepts: ConceptSet, cfg: &RunConfig) -> Result<Self> {
        let mut samples = samples;
        for s in &mut samples {
            s.validate(cfg.image_size())?;
            if s.concept_labels.is_empty() {
                s.concept_labels = concepts.indicator(&s.report);
            } else if s.concept_labels.len() != concepts.len() {
                return Err(Error::Data(format!(
                    "sample {} has {} concept labels, concept set has {}",
                    s.id,
                    s.concept_labels.len(),
                    concepts.len()
                )));
            }
        }
        let (train, test) = split_dataset(samples.len(), cfg.test_fraction, cfg.seed)?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::Data(format!("{} samples cannot be split", samples.len())));
        }
        Ok(Self {
            samples,
            train,
            test,
            vocab,
            concepts,
        })
    }

    pub fn train_samples(&self) -> Vec<&MultiViewSample> {
        self.train.iter().map(|&i| &self.samples[i]).collect()
    }

    pub fn test_samples(&self) -> Vec<&MultiViewSample> {
        self.test.iter().map(|&i| &self.samples[i]).collect()
    }
}

/// Filters short reports, splits, and builds vocabulary and concepts from the
/// training reports only.
pub fn build_artifacts(samples: Vec<MultiViewSample>, cfg: &RunConfig) -> Result<Prepared> {
    let n_before = samples.len();
    let mut samples = filter_short_reports(samples);
    if samples.len() < n_before {
        log::warn!("dropped {} samples with short reports", n_before - samples.len());
    }
    for s in &mut samples {
        s.concept_labels.clear();
    }
    let (train, _) = split_dataset(samples.len(), cfg.test_fraction, cfg.seed)?;
    let train_reports: Vec<&Vec<Vec<String>>> = train.iter().map(|&i| &samples[i].report).collect();
    let vocab = build_vocabulary(train_reports.iter().copied(), cfg.min_count);
    let concepts = mine_concepts(train_reports.iter().copied(), cfg.concept_threshold, CONCEPT_LEXICON)?;
    Prepared::new(samples, vocab, concepts, cfg)
}

/// Encoder tensors initialised from the run seed.
pub fn init_encoder_params(cfg: &RunConfig, n_concepts: usize) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    encoder::init_params(&cfg.encoder_config(n_concepts), cfg.seed, &mut store)?;
    Ok(store)
}

/// Fresh attention and decoder tensors added to `store`.
pub fn init_decoder_params(cfg: &RunConfig, model: &ModelConfig, store: &mut ParamStore) -> Result<()> {
    attention::init_params(&model.attention, cfg.seed, store);
    decoder::init_params(&model.decoder, model.encoder.n_concepts, cfg.seed, store)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedStage<L> {
    pub state: TrainState,
    pub log: Vec<L>,
}

/// Per-epoch means over training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub bce_front: f64,
    pub bce_lat: f64,
    pub cvc: f64,
    /// Max-fused average AUC on the held-out samples.
    pub heldout_auc: Option<f64>,
}

/// Held-out classification quality of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderEval {
    pub frontal: AucSummary,
    pub lateral: AucSummary,
    pub fused: AucSummary,
    /// Every view scored as an independent image (both views pooled).
    pub per_image: AucSummary,
    /// Mean over samples of `Σⱼ (ŷ_f − ŷ_l)²`.
    pub disagreement: f64,
}

pub fn evaluate_encoder(params: &ParamStore, enc: &EncoderConfig, samples: &[&MultiViewSample]) -> Result<EncoderEval> {
    let feats = frozen_features(params, enc, samples)?;
    encoder_eval_from(&feats, samples)
}

fn encoder_eval_from(feats: &[FrozenFeatures], samples: &[&MultiViewSample]) -> Result<EncoderEval> {
    let labels: Vec<Vec<f64>> = samples.iter().map(|s| s.obs_labels.clone()).collect();
    let front: Vec<Vec<f64>> = feats.iter().map(|f| f.front.obs_probs.data().to_vec()).collect();
    let lat: Vec<Vec<f64>> = feats.iter().map(|f| f.lat.obs_probs.data().to_vec()).collect();
    let fused: Vec<Vec<f64>> = front
        .iter()
        .zip(&lat)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.max(*y)).collect())
        .collect();
    let disagreement = front
        .iter()
        .zip(&lat)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum::<f64>()
        / front.len().max(1) as f64;
    let pooled: Vec<Vec<f64>> = front.iter().chain(&lat).cloned().collect();
    let pooled_labels: Vec<Vec<f64>> = labels.iter().chain(&labels).cloned().collect();
    Ok(EncoderEval {
        per_image: metrics::avg_auc(&pooled, &pooled_labels)?,
        frontal: metrics::avg_auc(&front, &labels)?,
        lateral: metrics::avg_auc(&lat, &labels)?,
        fused: metrics::avg_auc(&fused, &labels)?,
        disagreement,
    })
}

/// Stage 1: minimises view-wise BCE plus the view-consistency penalty over
/// paired views. Only backbone and observation head are trained.
pub fn pretrain_encoder(
    cfg: &RunConfig,
    enc: &EncoderConfig,
    params: ParamStore,
    train: &[&MultiViewSample],
    heldout: &[&MultiViewSample],
) -> core::result::Result<TrainedStage<EncoderEpoch>, StageError> {
    enc.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training samples".into()).into());
    }
    let mut state = TrainState::new(params, cfg.learning_rate)?;
    state.params.set_all_trainable(false);
    state.params.set_trainable(BACKBONE_PREFIX, true);
    state.params.set_trainable(OBS_HEAD_PREFIX, true);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, "encoder", epoch);
        let mut sums = [0.0; 4];
        for batch in order.chunks(cfg.batch_size) {
            let step = (|| -> Result<[f64; 4]> {
                let mut tape = Tape::new();
                let mut totals = Vec::with_capacity(batch.len());
                let mut parts = [0.0; 4];
                for &i in batch {
                    let s = train[i];
                    let f = encoder::encode_on_tape(&mut tape, &state.params, enc, &s.frontal)?;
                    let l = encoder::encode_on_tape(&mut tape, &state.params, enc, &s.lateral)?;
                    let loss = encoder::encoder_loss_on_tape(&mut tape, f.obs_probs, l.obs_probs, &s.obs_labels, enc.lambda_cvc)?;
                    for (p, v) in parts.iter_mut().zip([loss.total, loss.bce_front, loss.bce_lat, loss.cvc]) {
                        *p += tape.scalar(v);
                    }
                    totals.push(loss.total);
                }
                backward_mean(&mut tape, &mut state.params, &totals)?;
                Ok(parts)
            })();
            let parts = step.map_err(|e| step_failure(&state, e))?;
            apply_step(&mut state, cfg.grad_clip).map_err(|e| step_failure(&state, e))?;
            for (s, p) in sums.iter_mut().zip(parts) {
                *s += p;
            }
        }
        let n = train.len() as f64;
        let heldout_auc = if heldout.is_empty() {
            None
        } else {
            evaluate_encoder(&state.params, enc, heldout).ok().map(|e| e.fused.avg)
        };
        let entry = EncoderEpoch {
            epoch,
            loss: sums[0] / n,
            bce_front: sums[1] / n,
            bce_lat: sums[2] / n,
            cvc: sums[3] / n,
            heldout_auc,
        };
        log::info!(
            "encoder epoch {epoch}: loss {:.4} (bce_f {:.4}, bce_l {:.4}, cvc {:.4}) heldout auc {:?}",
            entry.loss,
            entry.bce_front,
            entry.bce_lat,
            entry.cvc,
            entry.heldout_auc
        );
        log.push(entry);
    }
    state.params.set_all_trainable(false);
    Ok(TrainedStage { state, log })
}

/// Backpropagates the mean of the per-sample losses into the store's grad buffers.
fn backward_mean(tape: &mut Tape, params: &mut ParamStore, totals: &[Var]) -> Result<()> {
    let all = tape.concat(totals)?;
    let total = tape.sum(all)?;
    let grads = tape.backward(total)?;
    params.zero_grad();
    params.accumulate(tape, &grads, 1.0 / totals.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptEpoch {
    pub epoch: usize,
    /// Mean two-view concept BCE per training sample.
    pub train_bce: f64,
    pub heldout_bce: Option<f64>,
}

fn local_features(params: &ParamStore, enc: &EncoderConfig, image: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = encoder::backbone(&mut tape, params, enc, image)?;
    Ok(tape.to_tensor(v))
}

fn concept_loss_on_tape(tape: &mut Tape, params: &ParamStore, locals: &(Tensor, Tensor), target: &[f64]) -> Result<Var> {
    let f = tape.constant(&locals.0)?;
    let l = tape.constant(&locals.1)?;
    let hf = encoder::heads(tape, params, f)?;
    let hl = encoder::heads(tape, params, l)?;
    let bf = tape.bce_loss(hf.concept_probs, target)?;
    let bl = tape.bce_loss(hl.concept_probs, target)?;
    tape.add(bf, bl)
}

/// Stage 2: trains only the concept head on top of the frozen backbone.
pub fn finetune_concepts(
    cfg: &RunConfig,
    enc: &EncoderConfig,
    params: ParamStore,
    train: &[&MultiViewSample],
    heldout: &[&MultiViewSample],
) -> core::result::Result<TrainedStage<ConceptEpoch>, StageError> {
    enc.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training samples".into()).into());
    }
    if let Some(s) = train.iter().chain(heldout).find(|s| s.concept_labels.len() != enc.n_concepts) {
        return Err(Error::Data(format!(
            "sample {} has {} concept labels, encoder expects {}",
            s.id,
            s.concept_labels.len(),
            enc.n_concepts
        ))
        .into());
    }
    let mut state = TrainState::new(params, cfg.learning_rate)?;
    state.params.set_all_trainable(false);
    let locals = |set: &[&MultiViewSample], p: &ParamStore| -> Result<Vec<(Tensor, Tensor)>> {
        set.iter()
            .map(|s| Ok((local_features(p, enc, &s.frontal)?, local_features(p, enc, &s.lateral)?)))
            .collect()
    };
    let train_locals = locals(train, &state.params)?;
    let held_locals = locals(heldout, &state.params)?;
    state.params.set_trainable(CONCEPT_HEAD_PREFIX, true);
    let mut log = Vec::with_capacity(cfg.concept_epochs);
    for epoch in 0..cfg.concept_epochs {
        let order = epoch_order(train.len(), cfg.seed, "concepts", epoch);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let step = (|| -> Result<f64> {
                let mut tape = Tape::new();
                let mut totals = Vec::with_capacity(batch.len());
                let mut part = 0.0;
                for &i in batch {
                    let loss = concept_loss_on_tape(&mut tape, &state.params, &train_locals[i], &train[i].concept_labels)?;
                    part += tape.scalar(loss);
                    totals.push(loss);
                }
                backward_mean(&mut tape, &mut state.params, &totals)?;
                Ok(part)
            })();
            sum += step.map_err(|e| step_failure(&state, e))?;
            apply_step(&mut state, cfg.grad_clip).map_err(|e| step_failure(&state, e))?;
        }
        let heldout_bce = if heldout.is_empty() {
            None
        } else {
            let mut total = 0.0;
            for (loc, s) in held_locals.iter().zip(heldout) {
                let mut tape = Tape::new();
                let loss = concept_loss_on_tape(&mut tape, &state.params, loc, &s.concept_labels)?;
                total += tape.scalar(loss);
            }
            Some(total / heldout.len() as f64)
        };
        let entry = ConceptEpoch {
            epoch,
            train_bce: sum / train.len() as f64,
            heldout_bce,
        };
        log::info!("concept epoch {epoch}: bce {:.4} heldout {:?}", entry.train_bce, entry.heldout_bce);
        log.push(entry);
    }
    state.params.set_all_trainable(false);
    Ok(TrainedStage { state, log })
}

/// Rank of true concepts among all concepts when sorted by predicted probability.
#[derive(Debug, Clone, PartialEq)]
pub struct RankStats {
    /// Mean 1-based rank of the true concepts.
    pub mean_rank: f64,
    /// Expected mean rank under random ordering, `(p + 1) / 2`.
    pub chance: f64,
    pub n_concepts_ranked: usize,
}

pub fn concept_rank_stats(params: &ParamStore, enc: &EncoderConfig, samples: &[&MultiViewSample]) -> Result<RankStats> {
    let feats = frozen_features(params, enc, samples)?;
    let (mut total, mut n) = (0.0, 0usize);
    for (f, s) in feats.iter().zip(samples) {
        let probs = f.concept_probs();
        let mut order: Vec<usize> = (0..probs.len()).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
        for (rank, &c) in order.iter().enumerate() {
            if s.concept_labels[c] == 1.0 {
                total += (rank + 1) as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("no sample carries any concept".into()));
    }
    Ok(RankStats {
        mean_rank: total / n as f64,
        chance: (enc.n_concepts as f64 + 1.0) / 2.0,
        n_concepts_ranked: n,
    })
}

/// Encoder outputs of both views, computed once with frozen weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenFeatures {
    pub front: EncoderOutput,
    pub lat: EncoderOutput,
}

impl FrozenFeatures {
    /// Max over views of the concept probabilities.
    pub fn concept_probs(&self) -> Vec<f64> {
        max_views(&self.front.concept_probs, &self.lat.concept_probs)
    }

    /// Max over views of the observation probabilities.
    pub fn obs_probs(&self) -> Vec<f64> {
        max_views(&self.front.obs_probs, &self.lat.obs_probs)
    }
}

fn max_views(a: &Tensor, b: &Tensor) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(x, y)| x.max(*y)).collect()
}

pub fn frozen_features(params: &ParamStore, enc: &EncoderConfig, samples: &[&MultiViewSample]) -> Result<Vec<FrozenFeatures>> {
    samples
        .iter()
        .map(|s| {
            Ok(FrozenFeatures {
                front: encoder::encode(params, enc, &s.frontal)?,
                lat: encoder::encode(params, enc, &s.lateral)?,
            })
        })
        .collect()
}

/// Per-epoch means over the trained (non-skipped) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderEpoch {
    pub epoch: usize,
    pub word_loss: f64,
    pub stop_loss: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDecoder {
    pub state: TrainState,
    pub log: Vec<DecoderEpoch>,
    /// Mean word loss per sample of every optimizer step, in order.
    pub step_word_loss: Vec<f64>,
    /// Ids of samples whose reference exceeds the decoder caps.
    pub skipped: Vec<String>,
}

/// Builds the per-sample decoding context on `tape`.
fn decode_context(
    tape: &mut Tape,
    params: &ParamStore,
    cfg: &RunConfig,
    model: &ModelConfig,
    sample: &MultiViewSample,
    feats: Option<&FrozenFeatures>,
) -> Result<DecodeContext> {
    let (front, lat, predicted) = match feats {
        Some(f) => {
            let front = ViewFeatures {
                local: tape.constant(&f.front.local_features)?,
                global: tape.constant(&f.front.global_feature)?,
            };
            let lat = ViewFeatures {
                local: tape.constant(&f.lat.local_features)?,
                global: tape.constant(&f.lat.global_feature)?,
            };
            (front, lat, f.concept_probs())
        }
        None => {
            let f = encoder::encode_on_tape(tape, params, &model.encoder, &sample.frontal)?;
            let l = encoder::encode_on_tape(tape, params, &model.encoder, &sample.lateral)?;
            let predicted = tape
                .value(f.concept_probs)
                .iter()
                .zip(tape.value(l.concept_probs))
                .map(|(x, y)| x.max(*y))
                .collect();
            (
                ViewFeatures { local: f.local, global: f.global },
                ViewFeatures { local: l.local, global: l.global },
                predicted,
            )
        }
    };
    let fusion = FusionMemory::new(tape, params, model.fusion, model.late_combine, front, lat)?;
    let source = match cfg.use_concepts {
        ConceptMode::Off => ConceptSource::Off,
        ConceptMode::Predicted => ConceptSource::Probs(&predicted),
        ConceptMode::Oracle => ConceptSource::Probs(&sample.concept_labels),
    };
    DecodeContext::new(tape, params, fusion, source, model.decoder.d_concept)
}

/// Stage 3: teacher-forced training of attention and decoder on top of the
/// encoder in `params`. Decoder tensors are freshly initialised from the seed.
///
/// With `freeze_encoder` the encoder runs once per sample up front (or uses
/// `features`, aligned with `train`); otherwise the backbone is trained too.
pub fn train_decoder(
    cfg: &RunConfig,
    model: &ModelConfig,
    params: ParamStore,
    train: &[&MultiViewSample],
    vocab: &Vocabulary,
    features: Option<&[FrozenFeatures]>,
) -> core::result::Result<TrainedDecoder, StageError> {
    model.encoder.validate()?;
    model.decoder.validate()?;
    if model.decoder.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "decoder vocabulary {} does not match vocabulary of {} tokens",
            model.decoder.vocab_size,
            vocab.len()
        ))
        .into());
    }
    for name in [format!("{CONCEPT_HEAD_PREFIX}weight"), format!("{BACKBONE_PREFIX}0.weight")] {
        params.get(&name)?;
    }
    let limit = cfg.decoder_train_limit.unwrap_or(train.len()).min(train.len());
    let owned;
    let feats: Option<&[FrozenFeatures]> = match (cfg.freeze_encoder, features) {
        (false, _) => None,
        (true, Some(f)) => {
            if f.len() != train.len() {
                return Err(Error::Validation("features do not align with training samples".into()).into());
            }
            Some(f)
        }
        (true, None) => {
            owned = frozen_features(&params, &model.encoder, &train[..limit])?;
            Some(&owned[..])
        }
    };
    let mut params = params;
    init_decoder_params(cfg, model, &mut params)?;
    let mut state = TrainState::new(params, cfg.learning_rate)?;
    state.params.set_all_trainable(false);
    for prefix in ["attn.", "fusion.", "decoder.", "concepts."] {
        state.params.set_trainable(prefix, true);
    }
    if !cfg.freeze_encoder {
        state.params.set_trainable(BACKBONE_PREFIX, true);
    }

    let mut usable = Vec::with_capacity(limit);
    let mut skipped = Vec::new();
    for (i, s) in train[..limit].iter().enumerate() {
        let reference = vocab.encode(&s.report);
        match decoder::check_caps(&model.decoder, &reference) {
            Ok(()) => usable.push((i, reference)),
            Err(e) => {
                log::warn!("skipping sample {}: {e}", s.id);
                skipped.push(s.id.clone());
            }
        }
    }
    if usable.is_empty() {
        return Err(Error::Data("no training report fits the decoder caps".into()).into());
    }

    let mut log = Vec::with_capacity(cfg.decoder_epochs);
    let mut step_word_loss = Vec::new();
    for epoch in 0..cfg.decoder_epochs {
        let order = epoch_order(usable.len(), cfg.seed, "decoder", epoch);
        let (mut words, mut stops, mut steps) = (0.0, 0.0, 0);
        for batch in order.chunks(cfg.batch_size) {
            let step = (|| -> Result<(f64, f64)> {
                let mut tape = Tape::new();
                let mut totals = Vec::with_capacity(batch.len());
                let (mut w, mut st) = (0.0, 0.0);
                for &u in batch {
                    let (i, reference) = &usable[u];
                    let f = feats.map(|f| &f[*i]);
                    let ctx = decode_context(&mut tape, &state.params, cfg, model, train[*i], f)?;
                    let tf = decoder::teacher_force(&mut tape, &state.params, &model.decoder, &ctx, reference)?;
                    let loss = decoder::report_loss(&mut tape, &tf.logits, reference, &tf.stop_probs)?;
                    w += tape.scalar(loss.words);
                    st += tape.scalar(loss.stop);
                    totals.push(loss.total);
                }
                backward_mean(&mut tape, &mut state.params, &totals)?;
                Ok((w, st))
            })();
            let (w, st) = step.map_err(|e| step_failure(&state, e))?;
            apply_step(&mut state, cfg.grad_clip).map_err(|e| step_failure(&state, e))?;
            step_word_loss.push(w / batch.len() as f64);
            words += w;
            stops += st;
            steps += 1;
        }
        let n = usable.len() as f64;
        let entry = DecoderEpoch {
            epoch,
            word_loss: words / n,
            stop_loss: stops / n,
            steps,
        };
        log::info!(
            "decoder epoch {epoch}: word loss {:.4}, stop loss {:.4}",
            entry.word_loss,
            entry.stop_loss
        );
        log.push(entry);
    }
    state.params.set_all_trainable(false);
    Ok(TrainedDecoder {
        state,
        log,
        step_word_loss,
        skipped,
    })
}

/// Scores plus the generated report of every test sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub scores: ScoreReport,
    pub reports: Vec<(String, Report)>,
}

/// Greedy generation over `test`, text metrics against the references and
/// max-fused observation AUC.
pub fn evaluate(
    cfg: &RunConfig,
    model: &ModelConfig,
    params: &ParamStore,
    test: &[&MultiViewSample],
    vocab: &Vocabulary,
    features: Option<&[FrozenFeatures]>,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Data("no test samples to evaluate".into()));
    }
    let owned;
    let feats = match features {
        Some(f) if f.len() == test.len() => f,
        Some(_) => return Err(Error::Validation("features do not align with test samples".into())),
        None => {
            owned = frozen_features(params, &model.encoder, test)?;
            &owned[..]
        }
    };
    let mut hyps = Vec::with_capacity(test.len());
    let mut refs = Vec::with_capacity(test.len());
    let mut reports = Vec::with_capacity(test.len());
    for (s, f) in test.iter().zip(feats) {
        let mut tape = Tape::new();
        let ctx = decode_context(&mut tape, params, cfg, model, s, Some(f))?;
        let report = decoder::generate(&mut tape, params, &model.decoder, &ctx)?;
        hyps.push(metrics::flatten_report(&report.sentences));
        refs.push(metrics::flatten_report(&vocab.encode(&s.report)));
        reports.push((s.id.clone(), report));
    }
    let scores: Vec<Vec<f64>> = feats.iter().map(FrozenFeatures::obs_probs).collect();
    let labels: Vec<Vec<f64>> = test.iter().map(|s| s.obs_labels.clone()).collect();
    let auc = metrics::avg_auc(&scores, &labels)?;
    Ok(Evaluation {
        scores: ScoreReport::text_scores(&hyps, &refs, auc)?,
        reports,
    })
}

/// Trains and evaluates one decoder per ablation row on a shared encoder.
pub fn run_ablation(
    cfg: &RunConfig,
    prepared: &Prepared,
    encoder_params: &ParamStore,
    rows: &[AblationRow],
) -> core::result::Result<Vec<(AblationRow, Evaluation)>, StageError> {
    let train = prepared.train_samples();
    let test = prepared.test_samples();
    let enc = cfg.encoder_config(prepared.concepts.len());
    let limit = cfg.decoder_train_limit.unwrap_or(train.len()).min(train.len());
    let train = &train[..limit];
    let train_feats = frozen_features(encoder_params, &enc, train)?;
    let test_feats = frozen_features(encoder_params, &enc, &test)?;
    let mut out = Vec::with_capacity(rows.len());
    for &row in rows {
        let row_cfg = RunConfig {
            freeze_encoder: true,
            ..row.apply(cfg)
        };
        let model = row_cfg.model_config(prepared.concepts.len(), prepared.vocab.len());
        let trained = train_decoder(&row_cfg, &model, encoder_params.clone(), train, &prepared.vocab, Some(&train_feats))?;
        let eval = evaluate(&row_cfg, &model, &trained.state.params, &test, &prepared.vocab, Some(&test_feats))?;
        log::info!("{}: BLEU-4 {:.4}", row.name(), eval.scores.bleu[3]);
        out.push((row, eval));
    }
    Ok(out)
}

/// One Grad-CAM map.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewHeatmap {
    pub sample_id: String,
    pub view: View,
    pub label: usize,
    pub heatmap: Heatmap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Visualization {
    /// Ordered by requested id, then view (frontal first), then label.
    pub heatmaps: Vec<ViewHeatmap>,
    /// Banded max-fused observation probabilities per requested sample.
    pub uncertainty: Vec<(String, Vec<UncertaintyEntry>)>,
}

/// Grad-CAM maps for every requested (sample, view, label) and the
/// uncertainty bands of each requested sample.
pub fn visualize(
    cfg: &RunConfig,
    enc: &EncoderConfig,
    params: &ParamStore,
    samples: &[MultiViewSample],
    ids: &[String],
    labels: &[usize],
) -> Result<Visualization> {
    if let Some(&l) = labels.iter().find(|&&l| l >= encoder::N_OBS) {
        return Err(Error::Validation(format!("label index {l} out of range 0..{}", encoder::N_OBS)));
    }
    let mut chosen = Vec::with_capacity(ids.len());
    for id in ids {
        match samples.iter().find(|s| &s.id == id) {
            Some(s) => chosen.push(s),
            None => {
                let shown: Vec<&str> = samples.iter().take(10).map(|s| s.id.as_str()).collect();
                let more = if samples.len() > 10 {
                    format!(", … ({} in total)", samples.len())
                } else {
                    String::new()
                };
                return Err(Error::Validation(format!(
                    "unknown sample id {id:?}; available: {}{more}",
                    shown.join(", ")
                )));
            }
        }
    }
    let mut heatmaps = Vec::new();
    let mut uncertainty = Vec::new();
    for s in chosen {
        for (view, image) in [(View::Frontal, &s.frontal), (View::Lateral, &s.lateral)] {
            for &label in labels {
                heatmaps.push(ViewHeatmap {
                    sample_id: s.id.clone(),
                    view,
                    label,
                    heatmap: encoder::grad_cam(params, enc, image, label)?,
                });
            }
        }
        let f = encoder::encode(params, enc, &s.frontal)?;
        let l = encoder::encode(params, enc, &s.lateral)?;
        let fused = encoder::fuse_view_predictions(&f.obs_probs, &l.obs_probs)?;
        let bands = encoder::uncertainty_report(&fused, cfg.uncertainty_low, cfg.uncertainty_high)?;
        uncertainty.push((s.id.clone(), bands));
    }
    Ok(Visualization { heatmaps, uncertainty })
}
