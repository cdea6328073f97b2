//! Hand-worked metric examples. Token ids: the=4, cat=5, sat=6, down=7, a..d = 8..11.

use mvh_core::metrics::{bleu_n, lcs_len, meteor_lite, roc_auc, rouge_l};

const THE: usize = 4;
const CAT: usize = 5;
const SAT: usize = 6;
const DOWN: usize = 7;

pub const TOL: f64 = 1e-9;

pub struct Case {
    pub name: &'static str,
    pub got: f64,
    pub want: f64,
    /// Must match to the last bit rather than to `TOL`.
    pub exact: bool,
}

impl Case {
    pub fn holds(&self) -> bool {
        if self.exact {
            self.got == self.want
        } else {
            (self.got - self.want).abs() < TOL
        }
    }
}

fn case(name: &'static str, got: f64, want: f64) -> Case {
    Case { name, got, want, exact: false }
}

pub fn cases() -> Vec<Case> {
    let mut out = Vec::new();

    // "the" occurs once in the reference, so only 1 of 3 hypothesis unigrams
    // counts; c = 3 > r = 2 so there is no brevity penalty.
    out.push(case("bleu1 clipped repeats", bleu_n(&[vec![THE, THE, THE]], &[vec![THE, CAT]], 1).unwrap(), 1.0 / 3.0));

    let corpus = vec![vec![THE, CAT, SAT, DOWN, THE, CAT], vec![CAT, SAT, DOWN, DOWN]];
    for (n, name) in [(1, "identical bleu1"), (2, "identical bleu2"), (3, "identical bleu3"), (4, "identical bleu4")] {
        out.push(Case { name, got: bleu_n(&corpus, &corpus, n).unwrap(), want: 1.0, exact: true });
    }

    // LCS("a b c d", "a c d") = 3 → P = 3/4, R = 1, F1 = 2·0.75/1.75.
    let (a, b, c, d) = (8, 9, 10, 11);
    out.push(case("lcs skipped token", lcs_len(&[a, b, c, d], &[a, c, d]) as f64, 3.0));
    out.push(case("rouge-l skipped token", rouge_l(&[vec![a, b, c, d]], &[vec![a, c, d]]).unwrap(), 1.5 / 1.75));

    // P = 1, R = 3/4, one chunk over 3 matches.
    let (p, r) = (1.0, 0.75);
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (1.0f64 / 3.0).powi(3);
    out.push(case(
        "meteor truncated hypothesis",
        meteor_lite(&[vec![THE, CAT, SAT]], &[vec![THE, CAT, SAT, DOWN]]).unwrap(),
        f_mean * (1.0 - penalty),
    ));

    // Positives 0.35, 0.8 against negatives 0.1, 0.4: 3 of 4 pairs concordant.
    out.push(case("auc pair counting", roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.75));
    out.push(case("auc ties count half", roc_auc(&[0.5, 0.5, 0.9], &[0.0, 1.0, 1.0]).unwrap(), 0.75));
    out
}
