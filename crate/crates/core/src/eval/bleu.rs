use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenSeq;
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Corpus-level BLEU with its components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts(ids: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut m = HashMap::new();
    if ids.len() >= n {
        for w in ids.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram BLEU up to 4-grams, accumulated over the corpus, without
/// smoothing. A `None` hypothesis (failed decode) matches nothing and has
/// length zero.
pub fn corpus_bleu_opt(hyps: &[Option<&[u32]>], refs: &[TokenSeq]) -> Result<BleuScore> {
    if hyps.len() != refs.len() || hyps.is_empty() {
        return Err(Error::contract(format!(
            "BLEU needs equal nonempty lists, got {} hyps and {} refs",
            hyps.len(),
            refs.len()
        )));
    }
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let (mut c, mut r) = (0, 0);
    for (h, rf) in hyps.iter().zip(refs) {
        let h = h.unwrap_or(&[]);
        c += h.len();
        r += rf.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(rf.ids(), n);
            total[n - 1] += h.len().saturating_sub(n - 1);
            matched[n - 1] += hc.iter().map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if total[n] == 0 { 0.0 } else { matched[n] as f64 / total[n] as f64 };
    }
    let bp = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * bp * mean_log.exp()
    };
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty: bp,
        hyp_len: c,
        ref_len: r,
    })
}

pub fn corpus_bleu(hyps: &[TokenSeq], refs: &[TokenSeq]) -> Result<BleuScore> {
    let h: Vec<Option<&[u32]>> = hyps.iter().map(|s| Some(s.ids())).collect();
    corpus_bleu_opt(&h, refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(ids: &[u32]) -> TokenSeq {
        TokenSeq::new(ids.to_vec()).unwrap()
    }

    #[test]
    fn identity_scores_hundred() {
        let r = vec![seq(&[4, 5, 6, 7]), seq(&[8, 9, 10, 11, 12])];
        let b = corpus_bleu(&r, &r).unwrap();
        assert!((b.score - 100.0).abs() < 1e-9);
        assert_eq!(b.brevity_penalty, 1.0);
    }

    #[test]
    fn short_hypothesis_brevity_penalty() {
        let b = corpus_bleu(&[seq(&[4, 5, 6, 7])], &[seq(&[4, 5, 6, 7, 8])]).unwrap();
        assert_eq!(b.precisions, [1.0; 4]);
        assert!((b.score - 77.88).abs() < 0.01, "{}", b.score);
        assert!((b.brevity_penalty - (-0.25f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn no_four_gram_overlap_is_zero() {
        let b = corpus_bleu(&[seq(&[4, 5, 6, 8, 7])], &[seq(&[4, 5, 6, 7, 8])]).unwrap();
        assert_eq!(b.precisions[3], 0.0);
        assert!(b.precisions[0] > 0.0);
        assert_eq!(b.score, 0.0);
    }

    #[test]
    fn clipping_limits_repeats() {
        // "the the the the" vs "the cat": unigram precision 1/4.
        let b = corpus_bleu(&[seq(&[4, 4, 4, 4])], &[seq(&[4, 5])]).unwrap();
        assert_eq!(b.precisions[0], 0.25);
    }

    #[test]
    fn failed_decodes_and_bad_lists() {
        let r = vec![seq(&[4, 5, 6, 7]), seq(&[4, 5, 6, 7])];
        let b = corpus_bleu_opt(&[Some(&[4, 5, 6, 7]), None], &r).unwrap();
        assert_eq!(b.hyp_len, 4);
        assert!(b.score < 100.0 && b.score > 0.0);
        assert!(corpus_bleu(&[], &[]).is_err());
        assert!(corpus_bleu(&r[..1], &r).is_err());
    }

    #[test]
    fn not_symmetric() {
        let a = vec![seq(&[4, 5, 6, 7])];
        let b = vec![seq(&[4, 5, 6, 7, 8])];
        assert_ne!(corpus_bleu(&a, &b).unwrap().score, corpus_bleu(&b, &a).unwrap().score);
    }

    fn arb_seqs() -> impl Strategy<Value = Vec<TokenSeq>> {
        prop::collection::vec(prop::collection::vec(4u32..12, 1..10), 1..8)
            .prop_map(|v| v.into_iter().map(|s| TokenSeq::new(s).unwrap()).collect())
    }

    proptest! {
        #[test]
        fn self_bleu_is_hundred_or_short(xs in arb_seqs()) {
            let b = corpus_bleu(&xs, &xs).unwrap();
            // Corpora with no 4-gram at all score zero by definition.
            if xs.iter().any(|s| s.len() >= 4) {
                prop_assert!((b.score - 100.0).abs() < 1e-9);
            } else {
                prop_assert_eq!(b.score, 0.0);
            }
        }

        #[test]
        fn exact_matches_never_lower_score(xs in arb_seqs(), extra in arb_seqs()) {
            let base = corpus_bleu(&xs, &xs).unwrap().score;
            let mut more = xs.clone();
            more.extend(extra);
            prop_assert!(corpus_bleu(&more, &more).unwrap().score >= base - 1e-9);
        }

        #[test]
        fn score_in_range(h in arb_seqs(), r in arb_seqs()) {
            let n = h.len().min(r.len());
            let b = corpus_bleu(&h[..n], &r[..n]).unwrap();
            prop_assert!((0.0..=100.0 + 1e-9).contains(&b.score));
            prop_assert!(b.brevity_penalty > 0.0 && b.brevity_penalty <= 1.0);
        }
    }
}
