//! Multi-view fusion and the two attention mechanisms.
//!
//! Visual attention scores each local region against the previous sentence
//! state, `aᵢ = W_a·tanh(W_v·vᵢ + W_s·h)`, and returns the softmax-weighted sum
//! of region vectors. Concept attention does the same over concept embeddings
//! scaled by their predicted probabilities and keyed by the previous word
//! state.
//!
//! The region projections `W_v·vᵢ` (and `W_c·(ŷ_n c_n)`) do not depend on the
//! recurrent state, so they are computed once per sample in a memory object
//! and reused at every decoding step.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::params::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub d_v: usize,
    pub d_h_sent: usize,
    pub d_a: usize,
    pub d_c: usize,
    pub d_h_word: usize,
    pub d_a_concept: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            d_v: 32,
            d_h_sent: 128,
            d_a: 64,
            d_c: 32,
            d_h_word: 128,
            d_a_concept: 64,
        }
    }
}

/// How frontal and lateral features reach the sentence decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionScheme {
    /// Concatenated global features, no attention.
    Concat,
    /// One attention pass over the stacked `2k` region bank.
    Early,
    /// Separate attention per view, combined afterwards.
    Late,
}

impl FusionScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionScheme::Concat => "concat",
            FusionScheme::Early => "early",
            FusionScheme::Late => "late",
        }
    }

    /// Width of the context vector handed to the sentence LSTM.
    pub fn context_dim(self, d_v: usize) -> usize {
        match self {
            FusionScheme::Concat => 2 * d_v,
            _ => d_v,
        }
    }
}

impl fmt::Display for FusionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(FusionScheme::Concat),
            "early" => Ok(FusionScheme::Early),
            "late" => Ok(FusionScheme::Late),
            other => Err(Error::Validation(format!("unknown fusion scheme {other:?}"))),
        }
    }
}

/// Combine operator for the two attended vectors of late fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LateCombine {
    /// `W_late·[v_f ; v_l]` back to `d_v`.
    Project,
    /// `(v_f + v_l) / 2`.
    Mean,
}

impl FromStr for LateCombine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "project" => Ok(LateCombine::Project),
            "mean" => Ok(LateCombine::Mean),
            other => Err(Error::Validation(format!("unknown late-fusion combine {other:?}"))),
        }
    }
}

impl LateCombine {
    pub fn as_str(self) -> &'static str {
        match self {
            LateCombine::Project => "project",
            LateCombine::Mean => "mean",
        }
    }
}

pub const VISUAL_W_V: &str = "attn.visual.w_v";
pub const VISUAL_W_S: &str = "attn.visual.w_s";
pub const VISUAL_W_A: &str = "attn.visual.w_a";
pub const CONCEPT_W_C: &str = "attn.concept.w_c";
pub const CONCEPT_W_W: &str = "attn.concept.w_w";
pub const CONCEPT_W_A: &str = "attn.concept.w_a";
pub const LATE_PROJ: &str = "fusion.late.proj";

/// Adds attention and fusion tensors to `store`.
pub fn init_params(cfg: &AttentionConfig, seed: u64, store: &mut ParamStore) {
    store.init_uniform(seed, VISUAL_W_V, &[cfg.d_a, cfg.d_v], cfg.d_v);
    store.init_uniform(seed, VISUAL_W_S, &[cfg.d_a, cfg.d_h_sent], cfg.d_h_sent);
    store.init_uniform(seed, VISUAL_W_A, &[1, cfg.d_a], cfg.d_a);
    store.init_uniform(seed, CONCEPT_W_C, &[cfg.d_a_concept, cfg.d_c], cfg.d_c);
    store.init_uniform(seed, CONCEPT_W_W, &[cfg.d_a_concept, cfg.d_h_word], cfg.d_h_word);
    store.init_uniform(seed, CONCEPT_W_A, &[1, cfg.d_a_concept], cfg.d_a_concept);
    store.init_uniform(seed, LATE_PROJ, &[cfg.d_v, 2 * cfg.d_v], 2 * cfg.d_v);
}

/// Precomputed region projections for one bank of local features.
#[derive(Debug, Clone, Copy)]
pub struct VisualMemory {
    regions: Var,
    projected: Var,
    k: usize,
    d_v: usize,
}

impl VisualMemory {
    /// `regions` is a `[k, d_v]` bank.
    pub fn new(tape: &mut Tape, store: &ParamStore, regions: Var) -> Result<Self> {
        let s = tape.shape(regions).to_vec();
        if s.len() != 2 || s[0] == 0 {
            return Err(Error::shape("visual_attend", &s, &[0, 0]));
        }
        let w_v = store.bind(tape, VISUAL_W_V)?;
        let w_vt = tape.transpose(w_v)?;
        let projected = tape.matmul(regions, w_vt)?;
        Ok(Self {
            regions,
            projected,
            k: s[0],
            d_v: s[1],
        })
    }

    /// Attends the bank with the previous sentence state; returns `(v_att, alpha)`.
    pub fn attend(&self, tape: &mut Tape, store: &ParamStore, h_prev: Var) -> Result<(Var, Var)> {
        let w_s = store.bind(tape, VISUAL_W_S)?;
        let w_a = store.bind(tape, VISUAL_W_A)?;
        let q = tape.matvec(w_s, h_prev)?;
        attend_common(tape, self.projected, q, w_a, self.regions, self.k, self.d_v)
    }
}

fn attend_common(
    tape: &mut Tape,
    projected: Var,
    query: Var,
    w_a: Var,
    values: Var,
    k: usize,
    d: usize,
) -> Result<(Var, Var)> {
    let pre = tape.add_row_broadcast(projected, query)?;
    let act = tape.tanh(pre)?;
    let da = tape.shape(w_a)[1];
    let w_a = tape.reshape(w_a, &[da])?;
    let scores = tape.matvec(act, w_a)?;
    let alpha = tape.softmax(scores)?;
    let row = tape.reshape(alpha, &[1, k])?;
    let att = tape.matmul(row, values)?;
    let att = tape.reshape(att, &[d])?;
    Ok((att, alpha))
}

/// Single-shot visual attention over `v: [k, d_v]`.
pub fn visual_attend(tape: &mut Tape, store: &ParamStore, v: Var, h_prev: Var) -> Result<(Var, Var)> {
    VisualMemory::new(tape, store, v)?.attend(tape, store, h_prev)
}

/// Precomputed concept projections `W_c·(ŷ_n c_n)` for one sample.
#[derive(Debug, Clone, Copy)]
pub struct ConceptMemory {
    embeddings: Var,
    projected: Var,
    p: usize,
    d_c: usize,
}

impl ConceptMemory {
    /// `embeddings: [p, d_c]`, `probs: [p]`.
    pub fn new(tape: &mut Tape, store: &ParamStore, embeddings: Var, probs: Var) -> Result<Self> {
        let s = tape.shape(embeddings).to_vec();
        if s.len() != 2 || s[0] == 0 {
            return Err(Error::Config("concept attention needs at least one concept".into()));
        }
        let scaled = tape.scale_rows(embeddings, probs)?;
        let w_c = store.bind(tape, CONCEPT_W_C)?;
        let w_ct = tape.transpose(w_c)?;
        let projected = tape.matmul(scaled, w_ct)?;
        Ok(Self {
            embeddings,
            projected,
            p: s[0],
            d_c: s[1],
        })
    }

    /// Attends the concepts with the previous word state; returns `(c_att, alpha_c)`.
    pub fn attend(&self, tape: &mut Tape, store: &ParamStore, h_w_prev: Var) -> Result<(Var, Var)> {
        let w_w = store.bind(tape, CONCEPT_W_W)?;
        let w_a = store.bind(tape, CONCEPT_W_A)?;
        let q = tape.matvec(w_w, h_w_prev)?;
        attend_common(tape, self.projected, q, w_a, self.embeddings, self.p, self.d_c)
    }
}

/// Single-shot concept attention.
pub fn concept_attend(
    tape: &mut Tape,
    store: &ParamStore,
    c: Var,
    concept_probs: Var,
    h_w_prev: Var,
) -> Result<(Var, Var)> {
    ConceptMemory::new(tape, store, c, concept_probs)?.attend(tape, store, h_w_prev)
}

/// One view's encoder features as tape handles.
#[derive(Debug, Clone, Copy)]
pub struct ViewFeatures {
    pub local: Var,
    pub global: Var,
}

/// Per-sample state for producing sentence contexts under a fusion scheme.
#[derive(Debug, Clone)]
pub enum FusionMemory {
    Concat { context: Var },
    Early { bank: VisualMemory },
    Late { front: VisualMemory, lat: VisualMemory, combine: LateCombine },
}

impl FusionMemory {
    pub fn new(
        tape: &mut Tape,
        store: &ParamStore,
        scheme: FusionScheme,
        combine: LateCombine,
        front: ViewFeatures,
        lat: ViewFeatures,
    ) -> Result<Self> {
        Ok(match scheme {
            FusionScheme::Concat => FusionMemory::Concat {
                context: tape.concat(&[front.global, lat.global])?,
            },
            FusionScheme::Early => {
                let stacked = tape.concat(&[front.local, lat.local])?;
                FusionMemory::Early {
                    bank: VisualMemory::new(tape, store, stacked)?,
                }
            }
            FusionScheme::Late => FusionMemory::Late {
                front: VisualMemory::new(tape, store, front.local)?,
                lat: VisualMemory::new(tape, store, lat.local)?,
                combine,
            },
        })
    }

    /// Sentence-input context for the previous sentence state, plus the attention weights used.
    pub fn context(&self, tape: &mut Tape, store: &ParamStore, h_prev: Var) -> Result<(Var, Vec<Var>)> {
        match self {
            FusionMemory::Concat { context } => Ok((*context, vec![])),
            FusionMemory::Early { bank } => {
                let (att, alpha) = bank.attend(tape, store, h_prev)?;
                Ok((att, vec![alpha]))
            }
            FusionMemory::Late { front, lat, combine } => {
                let (af, alpha_f) = front.attend(tape, store, h_prev)?;
                let (al, alpha_l) = lat.attend(tape, store, h_prev)?;
                let ctx = match combine {
                    LateCombine::Project => {
                        let both = tape.concat(&[af, al])?;
                        let w = store.bind(tape, LATE_PROJ)?;
                        tape.matvec(w, both)?
                    }
                    LateCombine::Mean => {
                        let s = tape.add(af, al)?;
                        tape.scale(s, 0.5)?
                    }
                };
                Ok((ctx, vec![alpha_f, alpha_l]))
            }
        }
    }
}

/// One-step fusion helper.
pub fn fuse(
    tape: &mut Tape,
    store: &ParamStore,
    scheme: FusionScheme,
    combine: LateCombine,
    front: ViewFeatures,
    lat: ViewFeatures,
    h_prev: Var,
) -> Result<Var> {
    let mem = FusionMemory::new(tape, store, scheme, combine, front, lat)?;
    Ok(mem.context(tape, store, h_prev)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn setup(seed: u64) -> (AttentionConfig, ParamStore) {
        let cfg = AttentionConfig {
            d_v: 2,
            d_h_sent: 3,
            d_a: 4,
            d_c: 2,
            d_h_word: 3,
            d_a_concept: 4,
        };
        let mut store = ParamStore::new();
        init_params(&cfg, seed, &mut store);
        (cfg, store)
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("late".parse::<FusionScheme>().unwrap(), FusionScheme::Late);
        assert!(matches!("sum".parse::<FusionScheme>(), Err(Error::Validation(_))));
    }

    #[test]
    fn concat_scheme_joins_globals() {
        let (_, store) = setup(1);
        let mut tape = Tape::new();
        let z = tape.leaf(&[1, 2], vec![0.0, 0.0], false).unwrap();
        let g1 = tape.leaf(&[2], vec![1.0, 2.0], false).unwrap();
        let g2 = tape.leaf(&[2], vec![3.0, 4.0], false).unwrap();
        let h = tape.leaf(&[3], vec![0.0; 3], false).unwrap();
        let ctx = fuse(
            &mut tape,
            &store,
            FusionScheme::Concat,
            LateCombine::Project,
            ViewFeatures { local: z, global: g1 },
            ViewFeatures { local: z, global: g2 },
            h,
        )
        .unwrap();
        assert_eq!(tape.value(ctx), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn singleton_region_gets_all_mass() {
        let (_, store) = setup(2);
        let mut tape = Tape::new();
        let v = tape.leaf(&[1, 2], vec![0.3, -0.7], false).unwrap();
        let h = tape.leaf(&[3], vec![0.1, 0.2, 0.3], false).unwrap();
        let (att, alpha) = visual_attend(&mut tape, &store, v, h).unwrap();
        assert_eq!(tape.value(alpha), &[1.0]);
        assert_eq!(tape.value(att), &[0.3, -0.7]);
    }

    #[test]
    fn zero_scorer_gives_uniform_attention() {
        let (_, mut store) = setup(3);
        store.insert(VISUAL_W_A, Tensor::zeros(&[1, 4]));
        let mut tape = Tape::new();
        let v = tape.leaf(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0], false).unwrap();
        let h = tape.leaf(&[3], vec![0.5, -0.5, 0.2], false).unwrap();
        let (att, alpha) = visual_attend(&mut tape, &store, v, h).unwrap();
        for &a in tape.value(alpha) {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
        let out = tape.value(att);
        assert!((out[0] - 3.0).abs() < 1e-12 && (out[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn single_concept_and_uniform_concepts() {
        let (_, mut store) = setup(4);
        let mut tape = Tape::new();
        let c = tape.leaf(&[1, 2], vec![0.4, 0.1], false).unwrap();
        let p = tape.leaf(&[1], vec![0.8], false).unwrap();
        let h = tape.leaf(&[3], vec![0.1; 3], false).unwrap();
        let (_, alpha) = concept_attend(&mut tape, &store, c, p, h).unwrap();
        assert_eq!(tape.value(alpha), &[1.0]);

        store.insert(CONCEPT_W_A, Tensor::zeros(&[1, 4]));
        let mut tape = Tape::new();
        let c = tape.leaf(&[4, 2], (0..8).map(|i| i as f64 * 0.1).collect(), false).unwrap();
        let p = tape.leaf(&[4], vec![0.5; 4], false).unwrap();
        let h = tape.leaf(&[3], vec![0.3; 3], false).unwrap();
        let (_, alpha) = concept_attend(&mut tape, &store, c, p, h).unwrap();
        assert!(tape.value(alpha).iter().all(|&a| (a - 0.25).abs() < 1e-15));
    }

    #[test]
    fn identical_views_early_and_late() {
        let (_, store) = setup(5);
        let mut tape = Tape::new();
        let local_data = vec![0.1, 0.9, -0.4, 0.3, 0.8, -0.2];
        let v = tape.leaf(&[3, 2], local_data.clone(), false).unwrap();
        let g = tape.mean_pool(v).unwrap();
        let h = tape.leaf(&[3], vec![0.2, -0.1, 0.4], false).unwrap();
        let view = ViewFeatures { local: v, global: g };

        let early = fuse(&mut tape, &store, FusionScheme::Early, LateCombine::Project, view, view, h).unwrap();
        let mut dup = local_data.clone();
        dup.extend_from_slice(&local_data);
        let bank = tape.leaf(&[6, 2], dup, false).unwrap();
        let (direct, _) = visual_attend(&mut tape, &store, bank, h).unwrap();
        assert_eq!(tape.value(early), tape.value(direct));

        let late = fuse(&mut tape, &store, FusionScheme::Late, LateCombine::Mean, view, view, h).unwrap();
        let (single, _) = visual_attend(&mut tape, &store, v, h).unwrap();
        for (a, b) in tape.value(late).iter().zip(tape.value(single)) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
