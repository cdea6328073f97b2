use mvh_core::autodiff::{clip_global_norm, Tape};
use mvh_core::corpus::{split_dataset, tokenize, END, START};
use mvh_core::encoder::fuse_view_predictions;
use mvh_core::metrics::{bleu_n, lcs_len, meteor_lite, roc_auc, rouge_l};
use mvh_core::Tensor;
use proptest::prelude::*;

fn tokens() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(4usize..12, 1..12)
}

proptest! {
    #[test]
    fn softmax_is_a_simplex_point(x in prop::collection::vec(-30.0f64..30.0, 1..12)) {
        let mut t = Tape::new();
        let v = t.leaf(&[x.len()], x.clone(), false).unwrap();
        let y = t.softmax(v).unwrap();
        let p = t.value(y);
        prop_assert!(p.iter().all(|&q| q >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for i in 0..x.len() {
            for j in 0..x.len() {
                if x[i] < x[j] {
                    prop_assert!(p[i] <= p[j]);
                }
            }
        }
    }

    #[test]
    fn view_fusion_is_symmetric_and_idempotent(
        a in prop::collection::vec(0.0f64..1.0, 14),
        b in prop::collection::vec(0.0f64..1.0, 14),
    ) {
        let (ta, tb) = (Tensor::from_vec(a.clone()).unwrap(), Tensor::from_vec(b).unwrap());
        let ab = fuse_view_predictions(&ta, &tb).unwrap();
        prop_assert_eq!(&ab, &fuse_view_predictions(&tb, &ta).unwrap());
        let aa = fuse_view_predictions(&ta, &ta).unwrap();
        prop_assert_eq!(aa.data(), &a[..]);
        for ((m, x), y) in ab.data().iter().zip(ta.data()).zip(tb.data()) {
            prop_assert!(m >= x && m >= y);
        }
    }

    #[test]
    fn text_metrics_are_bounded(h in tokens(), r in tokens()) {
        let (hs, rs) = (vec![h.clone()], vec![r.clone()]);
        for n in 1..=4 {
            let b = bleu_n(&hs, &rs, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
        }
        let f = rouge_l(&hs, &rs).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((f - rouge_l(&rs, &hs).unwrap()).abs() < 1e-15);
        let m = meteor_lite(&hs, &rs).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert!(lcs_len(&h, &r) <= h.len().min(r.len()));
    }

    #[test]
    fn identical_hypotheses_score_perfectly(h in prop::collection::vec(tokens(), 1..4)) {
        let long: Vec<Vec<usize>> = h.iter().map(|s| [s.as_slice(), s.as_slice(), s.as_slice(), s.as_slice()].concat()).collect();
        for n in 1..=4 {
            prop_assert_eq!(bleu_n(&long, &long, n).unwrap(), 1.0);
        }
        prop_assert_eq!(rouge_l(&h, &h).unwrap(), 1.0);
    }

    #[test]
    fn auc_flips_under_negation(scores in prop::collection::vec(-5.0f64..5.0, 2..30), seed in 0u64..1000) {
        let labels: Vec<f64> = (0..scores.len()).map(|i| ((seed >> (i % 10)) & 1) as f64).collect();
        prop_assume!(labels.contains(&0.0) && labels.contains(&1.0));
        let a = roc_auc(&scores, &labels).unwrap();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let b = roc_auc(&neg, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_partitions_indices(n in 2usize..300, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let (train, test) = split_dataset(n, frac, seed).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_dataset(n, frac, seed).unwrap(), (train, test));
    }

    #[test]
    fn tokenized_sentences_are_wrapped(text in "[a-zA-Z ,.\\-]{0,80}") {
        // Text without any word is rejected outright.
        let Ok(sentences) = tokenize(&text) else {
            prop_assert!(!text.chars().any(|c| c.is_ascii_alphabetic()));
            return Ok(());
        };
        for s in sentences {
            prop_assert!(s.len() >= 3);
            prop_assert_eq!(s.first().map(String::as_str), Some(START));
            prop_assert_eq!(s.last().map(String::as_str), Some(END));
            prop_assert!(s[1..s.len() - 1].iter().all(|t| t != START && t != END && !t.is_empty()));
        }
    }

    #[test]
    fn clipping_caps_the_global_norm(g in prop::collection::vec(-100.0f64..100.0, 1..20), max in 0.1f64..10.0) {
        let mut a = g.clone();
        let before = clip_global_norm([a.as_mut_slice()], max);
        let after = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(after <= max * (1.0 + 1e-12) || before <= max);
        if before <= max {
            prop_assert_eq!(a, g);
        }
    }
}
