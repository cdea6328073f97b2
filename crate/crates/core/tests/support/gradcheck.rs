//! Central finite-difference checks of every tape op and of the full
//! encoder and decoder graphs on tiny configurations. Each check panics with
//! the offending tensor and its relative error.

use mvh_core::attention::{self, AttentionConfig, FusionMemory, FusionScheme, LateCombine, ViewFeatures};
use mvh_core::autodiff::{Tape, Var};
use mvh_core::decoder::{self, ConceptSource, DecodeContext, DecoderConfig};
use mvh_core::encoder::{self, EncoderConfig};
use mvh_core::params::ParamStore;
use mvh_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// ‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)
fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / na.max(nn).max(1e-8)
}

/// Projects any output onto fixed random weights so the check covers every element.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let n = tape.value(out).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let shape = tape.shape(out).to_vec();
    let wv = tape.leaf(&shape, w, false).unwrap();
    let m = tape.mul(out, wv).unwrap();
    tape.sum(m).unwrap()
}

/// Checks d/d(inputs) of `f` against central differences.
fn check_inputs<F>(name: &str, inputs: &[Tensor], f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |ins: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t).unwrap()).collect();
        let out = f(&mut tape, &vars);
        let l = project(&mut tape, out, 99);
        tape.scalar(l)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t).unwrap()).collect();
    let out = f(&mut tape, &vars);
    let loss = project(&mut tape, out, 99);
    let grads = tape.backward(loss).unwrap();
    for (k, (v, t)) in vars.iter().zip(inputs).enumerate() {
        let analytic = grads.get(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        let mut numeric = vec![0.0; t.len()];
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= H;
            numeric[j] = (eval(&plus) - eval(&minus)) / (2.0 * H);
        }
        let e = rel_err(&analytic, &numeric);
        assert!(e < TOL, "{name}: input {k} rel err {e:e}\n analytic {analytic:?}\n numeric {numeric:?}");
    }
}

/// Checks d/d(params) of `f` for every tensor in `store`.
fn check_store<F>(name: &str, store: &ParamStore, f: F)
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let mut store = store.clone();
    store.set_all_trainable(true);
    let mut tape = Tape::new();
    let loss = f(&mut tape, &store);
    let grads = tape.backward(loss).unwrap();
    let bound: Vec<(String, Var)> = tape.named_vars().map(|(n, v)| (n.to_string(), v)).collect();
    assert!(!bound.is_empty(), "{name}: no parameters bound");
    let eval = |s: &ParamStore| -> f64 {
        let mut t = Tape::new();
        let l = f(&mut t, s);
        t.scalar(l)
    };
    for (pname, var) in bound {
        let n = store.get(&pname).unwrap().len();
        let analytic = grads.get(var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let mut numeric = vec![0.0; n];
        for j in 0..n {
            let mut s = store.clone();
            s.get_mut(&pname).unwrap().data_mut()[j] += H;
            let up = eval(&s);
            s.get_mut(&pname).unwrap().data_mut()[j] -= 2.0 * H;
            let down = eval(&s);
            numeric[j] = (up - down) / (2.0 * H);
        }
        let e = rel_err(&analytic, &numeric);
        let na: f64 = analytic.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(e < TOL, "{name}: param {pname} rel err {e:e} (grad norm {na:e})");
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn linear_algebra_ops() {
    let mut r = rng(1);
    let a = rand_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[4, 2], -1.0, 1.0);
    let x = rand_tensor(&mut r, &[4], -1.0, 1.0);
    check_inputs("matmul", &[a.clone(), b], |t, v| t.matmul(v[0], v[1]).unwrap());
    check_inputs("matvec", &[a.clone(), x], |t, v| t.matvec(v[0], v[1]).unwrap());
    check_inputs("transpose", &[a.clone()], |t, v| t.transpose(v[0]).unwrap());
    let row = rand_tensor(&mut r, &[4], -1.0, 1.0);
    check_inputs("add_row_broadcast", &[a.clone(), row], |t, v| t.add_row_broadcast(v[0], v[1]).unwrap());
    let s = rand_tensor(&mut r, &[3], -1.0, 1.0);
    check_inputs("scale_rows", &[a.clone(), s], |t, v| t.scale_rows(v[0], v[1]).unwrap());
    check_inputs("reshape", &[a.clone()], |t, v| t.reshape(v[0], &[2, 6]).unwrap());
    check_inputs("mean_pool", &[a], |t, v| t.mean_pool(v[0]).unwrap());
}

pub fn elementwise_ops() {
    let mut r = rng(2);
    let a = rand_tensor(&mut r, &[5], -2.0, 2.0);
    let b = rand_tensor(&mut r, &[5], -2.0, 2.0);
    check_inputs("add", &[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap());
    check_inputs("sub", &[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]).unwrap());
    check_inputs("mul", &[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]).unwrap());
    check_inputs("scale", &[a.clone()], |t, v| t.scale(v[0], -1.7).unwrap());
    check_inputs("tanh", &[a.clone()], |t, v| t.tanh(v[0]).unwrap());
    check_inputs("sigmoid", &[a.clone()], |t, v| t.sigmoid(v[0]).unwrap());
    // keep clear of the kink at zero
    let away = Tensor::from_vec(vec![-1.3, -0.2, 0.4, 0.9, 2.0]).unwrap();
    check_inputs("relu", &[away], |t, v| t.relu(v[0]).unwrap());
    check_inputs("softmax", &[a.clone()], |t, v| t.softmax(v[0]).unwrap());
    check_inputs("sum", &[a], |t, v| t.sum(v[0]).unwrap());
}

pub fn structural_ops() {
    let mut r = rng(3);
    let a = rand_tensor(&mut r, &[3], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[4], -1.0, 1.0);
    check_inputs("concat vectors", &[a.clone(), b.clone()], |t, v| t.concat(&[v[0], v[1], v[0]]).unwrap());
    let m1 = rand_tensor(&mut r, &[2, 3], -1.0, 1.0);
    let m2 = rand_tensor(&mut r, &[4, 3], -1.0, 1.0);
    check_inputs("concat rows", &[m1, m2], |t, v| t.concat(&[v[0], v[1]]).unwrap());
    check_inputs("slice", &[b], |t, v| t.slice(v[0], 1, 2).unwrap());
    let table = rand_tensor(&mut r, &[5, 3], -1.0, 1.0);
    check_inputs("embedding_lookup", &[table], |t, v| {
        let x = t.embedding_lookup(v[0], 2).unwrap();
        let y = t.embedding_lookup(v[0], 2).unwrap();
        let z = t.embedding_lookup(v[0], 4).unwrap();
        let s = t.add(x, y).unwrap();
        t.mul(s, z).unwrap()
    });
}

pub fn conv_and_pool_ops() {
    let mut r = rng(4);
    let x = rand_tensor(&mut r, &[2, 4, 4], -1.0, 1.0);
    let w = rand_tensor(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[3], -1.0, 1.0);
    check_inputs("conv2d", &[x, w, b], |t, v| t.conv2d(v[0], v[1], v[2]).unwrap());
    // distinct values so no pooling window has a tie
    let mut vals: Vec<f64> = (0..2 * 4 * 6).map(|i| i as f64 * 0.1).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, r.random_range(0..=i));
    }
    let p = Tensor::new(&[2, 4, 6], vals).unwrap();
    check_inputs("max_pool", &[p], |t, v| t.max_pool(v[0]).unwrap());
}

pub fn loss_ops() {
    let mut r = rng(5);
    let p = rand_tensor(&mut r, &[6], 0.05, 0.95);
    let y = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
    check_inputs("bce", &[p], |t, v| t.bce_loss(v[0], &y).unwrap());
    let a = rand_tensor(&mut r, &[6], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[6], -1.0, 1.0);
    check_inputs("mse", &[a, b], |t, v| t.mse_loss(v[0], v[1]).unwrap());
    let logits = rand_tensor(&mut r, &[7], -3.0, 3.0);
    check_inputs("cross_entropy", &[logits], |t, v| t.cross_entropy(v[0], 4).unwrap());
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        image_size: 8,
        channels: vec![2, 3],
        d_v: 3,
        n_concepts: 4,
        lambda_cvc: 0.7,
    }
}

/// Redraws every tensor from U(−a, a): the default init leaves tiny graphs so
/// flat that some gradients fall below finite-difference resolution.
fn redraw(store: &mut ParamStore, seed: u64, a: f64) {
    let mut r = rng(seed);
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names {
        for x in store.get_mut(&n).unwrap().data_mut() {
            *x = r.random_range(-a..a);
        }
    }
}

pub fn full_encoder_graph() {
    let cfg = tiny_encoder();
    let mut store = ParamStore::new();
    encoder::init_params(&cfg, 11, &mut store).unwrap();
    redraw(&mut store, 12, 0.5);
    let mut r = rng(13);
    let front = rand_tensor(&mut r, &[1, 8, 8], 0.0, 1.0);
    let lat = rand_tensor(&mut r, &[1, 8, 8], 0.0, 1.0);
    let labels: Vec<f64> = (0..14).map(|j| (j % 3 == 0) as u8 as f64).collect();
    let concepts = [1.0, 0.0, 0.0, 1.0];
    check_store("encoder loss", &store, |t, s| {
        let f = encoder::encode_on_tape(t, s, &cfg, &front).unwrap();
        let l = encoder::encode_on_tape(t, s, &cfg, &lat).unwrap();
        let loss = encoder::encoder_loss_on_tape(t, f.obs_probs, l.obs_probs, &labels, cfg.lambda_cvc).unwrap();
        let c = t.bce_loss(f.concept_probs, &concepts).unwrap();
        t.add(loss.total, c).unwrap()
    });
}

struct TinyModel {
    enc: EncoderConfig,
    dec: DecoderConfig,
    store: ParamStore,
    front: Tensor,
    lat: Tensor,
}

fn tiny_model(scheme: FusionScheme) -> TinyModel {
    let enc = tiny_encoder();
    let att = AttentionConfig {
        d_v: enc.d_v,
        d_h_sent: 4,
        d_a: 3,
        d_c: 2,
        d_h_word: 3,
        d_a_concept: 3,
    };
    let dec = DecoderConfig {
        max_sentences: 3,
        max_words: 4,
        d_h_sent: 4,
        d_h_word: 3,
        d_embed: 2,
        d_concept: 2,
        context_dim: scheme.context_dim(enc.d_v),
        vocab_size: 7,
        teacher_forcing: true,
        stop_threshold: 0.5,
    };
    let mut store = ParamStore::new();
    encoder::init_params(&enc, 21, &mut store).unwrap();
    attention::init_params(&att, 22, &mut store);
    decoder::init_params(&dec, enc.n_concepts, 23, &mut store).unwrap();
    redraw(&mut store, 24, 0.8);
    let mut r = rng(25);
    TinyModel {
        front: rand_tensor(&mut r, &[1, 8, 8], 0.0, 1.0),
        lat: rand_tensor(&mut r, &[1, 8, 8], 0.0, 1.0),
        enc,
        dec,
        store,
    }
}

fn decoder_graph(scheme: FusionScheme, combine: LateCombine, concepts: Option<&[f64]>) {
    let m = tiny_model(scheme);
    let reference = vec![vec![1, 4, 5, 2], vec![1, 6, 2], vec![1, 5, 4, 6, 2]];
    let tag = format!("decoder {scheme} {} concepts={}", combine.as_str(), concepts.is_some());
    check_store(&tag, &m.store, |t, s| {
        let f = encoder::encode_on_tape(t, s, &m.enc, &m.front).unwrap();
        let l = encoder::encode_on_tape(t, s, &m.enc, &m.lat).unwrap();
        let fusion = FusionMemory::new(
            t,
            s,
            scheme,
            combine,
            ViewFeatures { local: f.local, global: f.global },
            ViewFeatures { local: l.local, global: l.global },
        )
        .unwrap();
        let source = match concepts {
            Some(p) => ConceptSource::Probs(p),
            None => ConceptSource::Off,
        };
        let ctx = DecodeContext::new(t, s, fusion, source, m.dec.d_concept).unwrap();
        let tf = decoder::teacher_force(t, s, &m.dec, &ctx, &reference).unwrap();
        decoder::report_loss(t, &tf.logits, &reference, &tf.stop_probs).unwrap().total
    });
}

pub fn decoder_concat_fusion() {
    decoder_graph(FusionScheme::Concat, LateCombine::Project, None);
}

pub fn decoder_early_fusion_with_concepts() {
    decoder_graph(FusionScheme::Early, LateCombine::Project, Some(&[0.9, 0.1, 0.6, 0.3]));
}

pub fn decoder_late_fusion_projected() {
    decoder_graph(FusionScheme::Late, LateCombine::Project, Some(&[1.0, 0.0, 1.0, 0.0]));
}

pub fn decoder_late_fusion_mean() {
    decoder_graph(FusionScheme::Late, LateCombine::Mean, None);
}

/// Every check, for callers that want to report them one by one.
pub const ALL: &[(&str, fn())] = &[
    ("linear_algebra_ops", linear_algebra_ops),
    ("elementwise_ops", elementwise_ops),
    ("structural_ops", structural_ops),
    ("conv_and_pool_ops", conv_and_pool_ops),
    ("loss_ops", loss_ops),
    ("full_encoder_graph", full_encoder_graph),
    ("decoder_concat_fusion", decoder_concat_fusion),
    ("decoder_early_fusion_with_concepts", decoder_early_fusion_with_concepts),
    ("decoder_late_fusion_projected", decoder_late_fusion_projected),
    ("decoder_late_fusion_mean", decoder_late_fusion_mean),
];
