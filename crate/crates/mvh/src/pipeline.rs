//! Runs one CLI stage: reads its inputs from disk, trains or scores, writes outputs.

use std::path::{Path, PathBuf};

use mvh_core::corpus::generate_dataset;
use mvh_core::encoder::{EncoderConfig, N_OBS};
use mvh_core::harness::{self as h, encoder_fingerprint, Prepared, StageError, Stage, TrainState};

use crate::checkpoint::{self, Checkpoint};
use crate::config::FileConfig;
use crate::dataset::{read_dataset, write_dataset, Manifest};
use crate::error::{AppError, AppResult};
use crate::export;

pub fn run(stage: Stage, cfg: &FileConfig) -> AppResult<()> {
    cfg.run.validate()?;
    match stage {
        Stage::GenData => gen_data(cfg),
        Stage::PretrainEncoder => pretrain(cfg),
        Stage::FinetuneConcepts => finetune(cfg),
        Stage::TrainDecoder => train_decoder(cfg),
        Stage::Evaluate => evaluate(cfg),
        Stage::Visualize => visualize(cfg),
    }
}

fn gen_data(cfg: &FileConfig) -> AppResult<()> {
    let r = &cfg.run;
    let samples = generate_dataset(r.seed, r.n_samples, &r.synth)?;
    let prepared = h::build_artifacts(samples, r)?;
    let manifest = Manifest::from_config(r, prepared.samples.len());
    write_dataset(&cfg.data_dir(), &prepared, &manifest)?;
    log::info!(
        "wrote {} samples ({} train / {} test), {} vocabulary tokens, {} concepts to {}",
        prepared.samples.len(),
        prepared.train.len(),
        prepared.test.len(),
        prepared.vocab.len(),
        prepared.concepts.len(),
        cfg.data_dir().display()
    );
    Ok(())
}

fn dataset(cfg: &FileConfig) -> AppResult<Prepared> {
    let (prepared, manifest) = read_dataset(&cfg.data_dir(), &cfg.run)?;
    if manifest.seed != cfg.run.seed {
        log::info!("dataset split uses its generation seed {}, run seed is {}", manifest.seed, cfg.run.seed);
    }
    Ok(prepared)
}

/// Saves the last good state of an aborted stage and converts the error.
fn aborted(cfg: &FileConfig, stage: Stage, fingerprint: [u8; 32], e: StageError) -> AppError {
    match e {
        StageError::Invalid(e) => e.into(),
        StageError::Aborted { error, last_good } => {
            let saved = cfg.out_dir().join(format!("{stage}.last_good.ckpt"));
            let ckpt = Checkpoint {
                seed: cfg.run.seed,
                state: *last_good,
                fingerprint,
            };
            if let Err(io) = checkpoint::save(&saved, &ckpt) {
                log::error!("could not save last good state: {io}");
            }
            AppError::Aborted { error, saved }
        }
    }
}

fn save(cfg: &FileConfig, path: &Path, state: TrainState, fingerprint: [u8; 32]) -> AppResult<()> {
    checkpoint::save(
        path,
        &Checkpoint {
            seed: cfg.run.seed,
            state,
            fingerprint,
        },
    )?;
    log::info!("checkpoint written to {}", path.display());
    Ok(())
}

fn encoder_config(cfg: &FileConfig, prepared: &Prepared) -> (EncoderConfig, [u8; 32]) {
    let enc = cfg.run.encoder_config(prepared.concepts.len());
    let fp = encoder_fingerprint(&enc);
    (enc, fp)
}

fn pretrain(cfg: &FileConfig) -> AppResult<()> {
    let prepared = dataset(cfg)?;
    let (enc, fp) = encoder_config(cfg, &prepared);
    let params = h::init_encoder_params(&cfg.run, prepared.concepts.len())?;
    let test = prepared.test_samples();
    let trained = h::pretrain_encoder(&cfg.run, &enc, params, &prepared.train_samples(), &test)
        .map_err(|e| aborted(cfg, Stage::PretrainEncoder, fp, e))?;
    let out = cfg.out_dir();
    let seed = cfg.run.seed;
    export::write_encoder_log(&out.join("encoder_log.csv"), seed, &trained.log)?;
    let eval = h::evaluate_encoder(&trained.state.params, &enc, &test)?;
    export::write_auc_table(
        &out.join("encoder_auc.csv"),
        seed,
        &[
            ("frontal", &eval.frontal),
            ("lateral", &eval.lateral),
            ("per_image", &eval.per_image),
            ("fused", &eval.fused),
        ],
    )?;
    log::info!("held-out fused AUC {:.4}, view disagreement {:.4}", eval.fused.avg, eval.disagreement);
    save(cfg, &cfg.encoder_checkpoint(), trained.state, fp)
}

fn finetune(cfg: &FileConfig) -> AppResult<()> {
    let prepared = dataset(cfg)?;
    let (enc, fp) = encoder_config(cfg, &prepared);
    let ckpt = checkpoint::load(&cfg.encoder_checkpoint(), &fp)?;
    let test = prepared.test_samples();
    let trained = h::finetune_concepts(&cfg.run, &enc, ckpt.state.params, &prepared.train_samples(), &test)
        .map_err(|e| aborted(cfg, Stage::FinetuneConcepts, fp, e))?;
    export::write_concept_log(&cfg.out_dir().join("concept_log.csv"), cfg.run.seed, &trained.log)?;
    let ranks = h::concept_rank_stats(&trained.state.params, &enc, &test)?;
    log::info!("held-out mean concept rank {:.2} (chance {:.2})", ranks.mean_rank, ranks.chance);
    save(cfg, &cfg.concept_checkpoint(), trained.state, fp)
}

fn train_decoder(cfg: &FileConfig) -> AppResult<()> {
    let prepared = dataset(cfg)?;
    let (_, enc_fp) = encoder_config(cfg, &prepared);
    let ckpt = checkpoint::load(&cfg.concept_checkpoint(), &enc_fp)?;
    let model = cfg.run.model_config(prepared.concepts.len(), prepared.vocab.len());
    let train = prepared.train_samples();
    let limit = cfg.run.decoder_train_limit.unwrap_or(train.len()).min(train.len());
    let trained = h::train_decoder(&cfg.run, &model, ckpt.state.params, &train[..limit], &prepared.vocab, None)
        .map_err(|e| aborted(cfg, Stage::TrainDecoder, model.fingerprint(), e))?;
    if !trained.skipped.is_empty() {
        log::warn!("{} reports exceeded the sentence/word caps and were skipped", trained.skipped.len());
    }
    export::write_decoder_log(&cfg.out_dir().join("decoder_log.csv"), cfg.run.seed, &trained.log)?;
    save(cfg, &cfg.decoder_checkpoint(), trained.state, model.fingerprint())
}

/// Directory-safe system name, e.g. `MvH+AttL+MC*` → `mvh_attl_mc_oracle`.
pub fn system_slug(name: &str) -> String {
    name.to_lowercase().replace('*', "_oracle").replace('+', "_")
}

fn evaluate(cfg: &FileConfig) -> AppResult<()> {
    let prepared = dataset(cfg)?;
    let out = cfg.out_dir();
    let seed = cfg.run.seed;
    let test = prepared.test_samples();
    if cfg.ablation.is_empty() {
        let model = cfg.run.model_config(prepared.concepts.len(), prepared.vocab.len());
        let ckpt = checkpoint::load(&cfg.decoder_checkpoint(), &model.fingerprint())?;
        let eval = h::evaluate(&cfg.run, &model, &ckpt.state.params, &test, &prepared.vocab, None)?;
        let system = format!("{}+concepts={}", cfg.run.fusion, cfg.run.use_concepts.as_str());
        export::write_reports(&out.join("generated"), seed, &eval.reports, &prepared.vocab)?;
        export::write_scores(&out.join("scores.csv"), seed, &[(system, &eval.scores)])?;
        log::info!("BLEU-4 {:.4}, ROUGE-L {:.4}", eval.scores.bleu[3], eval.scores.rouge_l);
        return Ok(());
    }
    let (_, enc_fp) = encoder_config(cfg, &prepared);
    let ckpt = checkpoint::load(&cfg.concept_checkpoint(), &enc_fp)?;
    let results = h::run_ablation(&cfg.run, &prepared, &ckpt.state.params, &cfg.ablation).map_err(|e| {
        let fp = cfg.run.model_config(prepared.concepts.len(), prepared.vocab.len()).fingerprint();
        aborted(cfg, Stage::Evaluate, fp, e)
    })?;
    for (row, eval) in &results {
        export::write_reports(&out.join("generated").join(system_slug(row.name())), seed, &eval.reports, &prepared.vocab)?;
    }
    let rows: Vec<(String, _)> = results.iter().map(|(r, e)| (r.name().to_string(), &e.scores)).collect();
    export::write_scores(&out.join("scores.csv"), seed, &rows)
}

fn visualize(cfg: &FileConfig) -> AppResult<()> {
    let prepared = dataset(cfg)?;
    let (enc, fp) = encoder_config(cfg, &prepared);
    let ckpt = checkpoint::load(&cfg.concept_checkpoint(), &fp)?;
    let ids: Vec<String> = if cfg.run.visualize_ids.is_empty() {
        prepared.test_samples().iter().take(4).map(|s| s.id.clone()).collect()
    } else {
        cfg.run.visualize_ids.clone()
    };
    let labels: Vec<usize> = if cfg.run.visualize_labels.is_empty() {
        (0..N_OBS).collect()
    } else {
        cfg.run.visualize_labels.clone()
    };
    let vis = h::visualize(&cfg.run, &enc, &ckpt.state.params, &prepared.samples, &ids, &labels)?;
    let dir: PathBuf = cfg.out_dir().join("heatmaps");
    export::write_visualization(&dir, cfg.run.seed, &vis)?;
    log::info!("{} heatmaps written to {}", vis.heatmaps.len(), dir.display());
    Ok(())
}

