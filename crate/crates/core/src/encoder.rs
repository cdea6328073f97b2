//! Convolutional multi-view image encoder.
//!
//! A stack of `conv3×3 → relu → maxpool2×2` blocks turns a single-channel
//! image into a `g×g` grid of `d_v`-dimensional region vectors (the local
//! features). Their mean is the global feature, which feeds two linear +
//! sigmoid heads: one for the 14 radiographic observations, one for the mined
//! medical concepts.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::params::ParamStore;
use crate::{Error, Result, Tensor};

/// Number of radiographic observation labels.
pub const N_OBS: usize = 14;

/// Observation label names, in label-index order.
pub const OBSERVATIONS: [&str; N_OBS] = [
    "enlarged cardiomediastinum",
    "cardiomegaly",
    "lung opacity",
    "lung lesion",
    "edema",
    "consolidation",
    "pneumonia",
    "atelectasis",
    "pneumothorax",
    "pleural effusion",
    "pleural other",
    "fracture",
    "support devices",
    "no finding",
];

/// Parameter name prefix for the backbone convolutions.
pub const BACKBONE_PREFIX: &str = "encoder.conv";
/// Parameter name prefix for the observation classifier.
pub const OBS_HEAD_PREFIX: &str = "encoder.obs.";
/// Parameter name prefix for the concept classifier.
pub const CONCEPT_HEAD_PREFIX: &str = "encoder.concept.";

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub channels: Vec<usize>,
    pub d_v: usize,
    pub n_concepts: usize,
    pub lambda_cvc: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: vec![8, 16, 32],
            d_v: 32,
            n_concepts: 1,
            lambda_cvc: 1.0,
        }
    }
}

impl EncoderConfig {
    /// Side length of the final feature grid.
    pub fn grid(&self) -> usize {
        self.image_size >> self.channels.len()
    }

    /// Number of local regions.
    pub fn k(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("encoder needs at least one non-empty conv block".into()));
        }
        let div = 1usize << self.channels.len();
        if self.image_size == 0 || self.image_size % div != 0 {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by 2^{}",
                self.image_size,
                self.channels.len()
            )));
        }
        if self.d_v != *self.channels.last().unwrap() {
            return Err(Error::Config(format!(
                "d_v ({}) must equal the last conv width ({})",
                self.d_v,
                self.channels.last().unwrap()
            )));
        }
        if self.n_concepts == 0 {
            return Err(Error::Config("encoder needs at least one concept output".into()));
        }
        if !(self.lambda_cvc >= 0.0) {
            return Err(Error::Config(format!("lambda_cvc must be >= 0, got {}", self.lambda_cvc)));
        }
        Ok(())
    }

    /// Canonical text used for architecture fingerprints.
    pub fn arch_string(&self) -> String {
        format!(
            "encoder:image_size={};channels={:?};d_v={};n_obs={};n_concepts={}",
            self.image_size, self.channels, self.d_v, N_OBS, self.n_concepts
        )
    }
}

/// Adds freshly initialised encoder tensors to `store`.
///
/// Convolutions and heads use He-uniform bounds: with the narrower
/// 1/√fan_in bound the ReLU stack shrinks activations block by block and the
/// default schedule cannot separate the observations in ten epochs.
pub fn init_params(cfg: &EncoderConfig, seed: u64, store: &mut ParamStore) -> Result<()> {
    cfg.validate()?;
    let mut cin = 1;
    for (i, &c) in cfg.channels.iter().enumerate() {
        store.init_he_uniform(seed, &format!("encoder.conv{i}.weight"), &[c, cin, 3, 3], cin * 9);
        store.init_zeros(&format!("encoder.conv{i}.bias"), &[c]);
        cin = c;
    }
    store.init_he_uniform(seed, "encoder.obs.weight", &[N_OBS, cfg.d_v], cfg.d_v);
    store.init_zeros("encoder.obs.bias", &[N_OBS]);
    store.init_he_uniform(seed, "encoder.concept.weight", &[cfg.n_concepts, cfg.d_v], cfg.d_v);
    store.init_zeros("encoder.concept.bias", &[cfg.n_concepts]);
    Ok(())
}

/// Handles to the encoder's outputs on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub local: Var,
    pub global: Var,
    pub obs_logits: Var,
    pub obs_probs: Var,
    pub concept_logits: Var,
    pub concept_probs: Var,
}

/// Values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub local_features: Tensor,
    pub global_feature: Tensor,
    pub obs_probs: Tensor,
    pub concept_probs: Tensor,
}

fn check_image(cfg: &EncoderConfig, image: &Tensor) -> Result<()> {
    let want = [1, cfg.image_size, cfg.image_size];
    if image.shape() != want {
        return Err(Error::shape("encode", image.shape(), &want));
    }
    Ok(())
}

/// Runs the backbone on the tape, returning the `[k, d_v]` local features.
pub fn backbone(tape: &mut Tape, store: &ParamStore, cfg: &EncoderConfig, image: &Tensor) -> Result<Var> {
    check_image(cfg, image)?;
    let mut x = tape.constant(image)?;
    for i in 0..cfg.channels.len() {
        let w = store.bind(tape, &format!("encoder.conv{i}.weight"))?;
        let b = store.bind(tape, &format!("encoder.conv{i}.bias"))?;
        let c = tape.conv2d(x, w, b)?;
        let r = tape.relu(c)?;
        x = tape.max_pool(r)?;
    }
    // [d_v, g, g] -> [k, d_v]
    let flat = tape.reshape(x, &[cfg.d_v, cfg.k()])?;
    tape.transpose(flat)
}

/// Applies pooling and both classification heads to local features on the tape.
pub fn heads(tape: &mut Tape, store: &ParamStore, local: Var) -> Result<EncoderVars> {
    let global = tape.mean_pool(local)?;
    let (obs_logits, obs_probs) = linear_sigmoid(tape, store, "encoder.obs", global)?;
    let (concept_logits, concept_probs) = linear_sigmoid(tape, store, "encoder.concept", global)?;
    Ok(EncoderVars {
        local,
        global,
        obs_logits,
        obs_probs,
        concept_logits,
        concept_probs,
    })
}

fn linear_sigmoid(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<(Var, Var)> {
    let w = store.bind(tape, &format!("{prefix}.weight"))?;
    let b = store.bind(tape, &format!("{prefix}.bias"))?;
    let z = tape.matvec(w, x)?;
    let logits = tape.add(z, b)?;
    let probs = tape.sigmoid(logits)?;
    Ok((logits, probs))
}

/// Full forward pass recorded on `tape`.
pub fn encode_on_tape(tape: &mut Tape, store: &ParamStore, cfg: &EncoderConfig, image: &Tensor) -> Result<EncoderVars> {
    let local = backbone(tape, store, cfg, image)?;
    heads(tape, store, local)
}

impl EncoderVars {
    pub fn to_output(&self, tape: &Tape) -> EncoderOutput {
        EncoderOutput {
            local_features: tape.to_tensor(self.local),
            global_feature: tape.to_tensor(self.global),
            obs_probs: tape.to_tensor(self.obs_probs),
            concept_probs: tape.to_tensor(self.concept_probs),
        }
    }
}

/// Deterministic inference pass.
pub fn encode(store: &ParamStore, cfg: &EncoderConfig, image: &Tensor) -> Result<EncoderOutput> {
    let mut tape = Tape::new();
    let vars = encode_on_tape(&mut tape, store, cfg, image)?;
    Ok(vars.to_output(&tape))
}

/// Handles to the decomposed multi-view loss.
#[derive(Debug, Clone, Copy)]
pub struct EncoderLoss {
    pub total: Var,
    pub bce_front: Var,
    pub bce_lat: Var,
    pub cvc: Var,
}

/// BCE on both views plus `λ·Σⱼ(ŷ_f − ŷ_l)²`.
pub fn encoder_loss_on_tape(
    tape: &mut Tape,
    front_probs: Var,
    lat_probs: Var,
    labels: &[f64],
    lambda_cvc: f64,
) -> Result<EncoderLoss> {
    let bce_front = tape.bce_loss(front_probs, labels)?;
    let bce_lat = tape.bce_loss(lat_probs, labels)?;
    let cvc = tape.mse_loss(front_probs, lat_probs)?;
    let both = tape.add(bce_front, bce_lat)?;
    let weighted = tape.scale(cvc, lambda_cvc)?;
    let total = tape.add(both, weighted)?;
    Ok(EncoderLoss {
        total,
        bce_front,
        bce_lat,
        cvc,
    })
}

/// Value of the multi-view loss for two already computed outputs.
pub fn encoder_loss(front: &EncoderOutput, lat: &EncoderOutput, labels: &Tensor, lambda_cvc: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let f = tape.constant(&front.obs_probs)?;
    let l = tape.constant(&lat.obs_probs)?;
    let loss = encoder_loss_on_tape(&mut tape, f, l, labels.data(), lambda_cvc)?;
    Ok(tape.scalar(loss.total))
}

/// Elementwise maximum of two per-view prediction vectors.
pub fn fuse_view_predictions(front: &Tensor, lat: &Tensor) -> Result<Tensor> {
    if front.shape() != lat.shape() {
        return Err(Error::shape("fuse_view_predictions", front.shape(), lat.shape()));
    }
    let data = front.data().iter().zip(lat.data()).map(|(a, b)| a.max(*b)).collect();
    Tensor::new(front.shape(), data)
}

/// Square class-activation grid, row-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub side: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    /// Row-major index of the hottest cell (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// Grad-CAM over the last conv block for observation `class_index`.
///
/// Channel weights are the region-averaged gradients of the class logit with
/// respect to the local features; the map is `relu(Σ_c w_c·map_c)` scaled to
/// [0, 1] by min-max normalisation.
pub fn grad_cam(store: &ParamStore, cfg: &EncoderConfig, image: &Tensor, class_index: usize) -> Result<Heatmap> {
    if class_index >= N_OBS {
        return Err(Error::Validation(format!(
            "class index {class_index} out of range 0..{N_OBS}"
        )));
    }
    let mut tape = Tape::new();
    let local_vals = {
        let v = backbone(&mut tape, store, cfg, image)?;
        tape.to_tensor(v)
    };
    let mut tape = Tape::new();
    let local = tape.variable(&local_vals)?;
    let vars = heads(&mut tape, store, local)?;
    let logit = tape.slice(vars.obs_logits, class_index, 1)?;
    let grads = tape.backward(logit)?;
    let g = grads.get(local).ok_or(Error::NonFinite("grad_cam"))?;
    let (k, d) = (cfg.k(), cfg.d_v);
    let mut weights = vec![0.0; d];
    for i in 0..k {
        for c in 0..d {
            weights[c] += g[i * d + c] / k as f64;
        }
    }
    let raw: Vec<f64> = (0..k)
        .map(|i| {
            let s: f64 = (0..d).map(|c| weights[c] * local_vals.data()[i * d + c]).sum();
            s.max(0.0)
        })
        .collect();
    Ok(Heatmap {
        side: cfg.grid(),
        values: min_max_normalize(&raw),
    })
}

fn min_max_normalize(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        return vec![0.0; raw.len()];
    }
    if max - min <= f64::EPSILON * max {
        return vec![1.0; raw.len()];
    }
    raw.iter().map(|v| (v - min) / (max - min)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    Negative,
    Uncertain,
    Positive,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::Negative => "negative",
            Band::Uncertain => "uncertain",
            Band::Positive => "positive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyEntry {
    pub label: &'static str,
    pub prob: f64,
    pub band: Band,
}

pub const DEFAULT_UNCERTAIN_LOW: f64 = 0.4;
pub const DEFAULT_UNCERTAIN_HIGH: f64 = 0.6;

/// Bands each observation probability as negative, uncertain (`low ≤ p ≤ high`) or positive.
pub fn uncertainty_report(obs_probs: &Tensor, low: f64, high: f64) -> Result<Vec<UncertaintyEntry>> {
    if !(0.0 < low && low < high && high < 1.0) {
        return Err(Error::Validation(format!(
            "uncertainty thresholds must satisfy 0 < low < high < 1, got {low}, {high}"
        )));
    }
    if obs_probs.len() != N_OBS {
        return Err(Error::shape("uncertainty_report", obs_probs.shape(), &[N_OBS]));
    }
    Ok(obs_probs
        .data()
        .iter()
        .zip(OBSERVATIONS)
        .map(|(&p, label)| {
            let band = if p < low {
                Band::Negative
            } else if p > high {
                Band::Positive
            } else {
                Band::Uncertain
            };
            UncertaintyEntry { label, prob: p, band }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            image_size: 8,
            channels: vec![2, 3],
            d_v: 3,
            n_concepts: 2,
            lambda_cvc: 1.0,
        }
    }

    #[test]
    fn region_count_follows_depth() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.k(), 16);
        assert_eq!(tiny().k(), 4);
        let bad = EncoderConfig { image_size: 12, ..EncoderConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_heads_give_half_probabilities() {
        let cfg = tiny();
        let mut store = ParamStore::new();
        init_params(&cfg, 1, &mut store).unwrap();
        for name in ["encoder.obs.weight", "encoder.obs.bias"] {
            store.get_mut(name).unwrap().data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let img = Tensor::zeros(&[1, 8, 8]);
        let out = encode(&store, &cfg, &img).unwrap();
        assert!(out.obs_probs.data().iter().all(|&p| p == 0.5));
        assert_eq!(out.local_features.shape(), &[4, 3]);
    }

    #[test]
    fn global_is_mean_of_regions() {
        let cfg = tiny();
        let mut store = ParamStore::new();
        init_params(&cfg, 3, &mut store).unwrap();
        let img = Tensor::new(&[1, 8, 8], (0..64).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let out = encode(&store, &cfg, &img).unwrap();
        for c in 0..3 {
            let mean: f64 = (0..4).map(|i| out.local_features.row(i)[c]).sum::<f64>() / 4.0;
            assert!((mean - out.global_feature.data()[c]).abs() < 1e-9);
        }
    }

    #[test]
    fn wrong_image_size_is_shape_error() {
        let cfg = tiny();
        let mut store = ParamStore::new();
        init_params(&cfg, 3, &mut store).unwrap();
        let err = encode(&store, &cfg, &Tensor::zeros(&[1, 4, 4])).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn view_fusion_is_elementwise_max() {
        let a = Tensor::from_vec(vec![0.2, 0.9]).unwrap();
        let b = Tensor::from_vec(vec![0.7, 0.1]).unwrap();
        assert_eq!(fuse_view_predictions(&a, &b).unwrap().data(), &[0.7, 0.9]);
        assert_eq!(fuse_view_predictions(&a, &a).unwrap(), a);
        assert_eq!(fuse_view_predictions(&a, &b).unwrap(), fuse_view_predictions(&b, &a).unwrap());
        assert!(fuse_view_predictions(&a, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn identical_views_have_no_consistency_penalty() {
        let probs = Tensor::from_vec(vec![0.3; N_OBS]).unwrap();
        let out = EncoderOutput {
            local_features: Tensor::zeros(&[1, 1]),
            global_feature: Tensor::zeros(&[1]),
            obs_probs: probs.clone(),
            concept_probs: Tensor::zeros(&[1]),
        };
        let labels = Tensor::from_vec(vec![1.0; N_OBS]).unwrap();
        let with = encoder_loss(&out, &out, &labels, 1.0).unwrap();
        let without = encoder_loss(&out, &out, &labels, 0.0).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn disagreeing_views_boundary_case() {
        let mk = |p: f64| EncoderOutput {
            local_features: Tensor::zeros(&[1, 1]),
            global_feature: Tensor::zeros(&[1]),
            obs_probs: Tensor::from_vec(vec![p; N_OBS]).unwrap(),
            concept_probs: Tensor::zeros(&[1]),
        };
        let labels = Tensor::from_vec(vec![1.0; N_OBS]).unwrap();
        let (f, l) = (mk(1.0 - 1e-9), mk(1e-9));
        let loss = encoder_loss(&f, &l, &labels, 1.0).unwrap();
        let lat_bce = -14.0 * (1e-9f64).ln();
        let front_bce = -14.0 * (1.0 - 1e-9f64).ln();
        let cvc = 14.0 * (1.0 - 2e-9f64).powi(2);
        assert!((loss - (lat_bce + front_bce + cvc)).abs() < 1e-6);
    }

    #[test]
    fn uncertainty_bands() {
        let mut p = vec![0.5; N_OBS];
        p[1] = 0.05;
        p[2] = 0.95;
        let rep = uncertainty_report(&Tensor::from_vec(p).unwrap(), 0.4, 0.6).unwrap();
        assert_eq!(rep[0].band, Band::Uncertain);
        assert_eq!(rep[1].band, Band::Negative);
        assert_eq!(rep[2].band, Band::Positive);
        let t = Tensor::from_vec(vec![0.5; N_OBS]).unwrap();
        assert!(uncertainty_report(&t, 0.6, 0.4).is_err());
        assert!(uncertainty_report(&t, 0.0, 0.4).is_err());
    }

    #[test]
    fn grad_cam_zero_conv_gives_zero_map() {
        let cfg = tiny();
        let mut store = ParamStore::new();
        init_params(&cfg, 5, &mut store).unwrap();
        let names: Vec<String> = store.names().filter(|n| n.starts_with(BACKBONE_PREFIX)).map(String::from).collect();
        for n in names {
            store.get_mut(&n).unwrap().data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let img = Tensor::new(&[1, 8, 8], vec![0.7; 64]).unwrap();
        let hm = grad_cam(&store, &cfg, &img, 3).unwrap();
        assert_eq!(hm.side, 2);
        assert!(hm.values.iter().all(|&v| v == 0.0));
        assert!(matches!(grad_cam(&store, &cfg, &img, 14), Err(Error::Validation(_))));
    }

    #[test]
    fn grad_cam_values_are_normalized() {
        let cfg = tiny();
        let mut store = ParamStore::new();
        init_params(&cfg, 9, &mut store).unwrap();
        let img = Tensor::new(&[1, 8, 8], (0..64).map(|i| ((i * 37) % 11) as f64 / 11.0).collect()).unwrap();
        for c in 0..N_OBS {
            let hm = grad_cam(&store, &cfg, &img, c).unwrap();
            assert!(hm.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
