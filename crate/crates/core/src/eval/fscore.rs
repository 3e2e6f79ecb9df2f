use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenSeq;
use crate::error::{Error, Result};

/// Occurrence counts of tokens in a reference training corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FreqTable {
    counts: HashMap<u32, usize>,
}

impl FreqTable {
    pub fn count(&self, tok: u32) -> usize {
        self.counts.get(&tok).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

pub fn freq_table<'a>(sents: impl IntoIterator<Item = &'a TokenSeq>) -> FreqTable {
    let mut counts = HashMap::new();
    for s in sents {
        for &t in s.ids() {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    FreqTable { counts }
}

/// Frequency buckets: unseen, seen fewer than 20 times, and frequent.
pub const BUCKETS: [&str; 3] = ["<1", "[1,20)", ">=20"];

pub fn bucket_of(count: usize) -> usize {
    match count {
        0 => 0,
        1..=19 => 1,
        _ => 2,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hyp_count: usize,
    pub ref_count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketedFScore {
    pub buckets: [BucketScore; 3],
}

/// Word f-measure per frequency bucket using clipped bag-of-words matching
/// within each sentence pair. A `None` hypothesis contributes no tokens.
pub fn bucketed_word_fscore_opt(hyps: &[Option<&[u32]>], refs: &[TokenSeq], freq: &FreqTable) -> Result<BucketedFScore> {
    if hyps.len() != refs.len() {
        return Err(Error::contract("hypothesis and reference lists differ in length"));
    }
    let mut matched = [0usize; 3];
    let mut hyp_n = [0usize; 3];
    let mut ref_n = [0usize; 3];
    for (h, r) in hyps.iter().zip(refs) {
        let mut rc: HashMap<u32, usize> = HashMap::new();
        for &t in r.ids() {
            *rc.entry(t).or_insert(0) += 1;
            ref_n[bucket_of(freq.count(t))] += 1;
        }
        for &t in h.unwrap_or(&[]) {
            let b = bucket_of(freq.count(t));
            hyp_n[b] += 1;
            if let Some(k) = rc.get_mut(&t).filter(|k| **k > 0) {
                *k -= 1;
                matched[b] += 1;
            }
        }
    }
    let mut out = BucketedFScore::default();
    for b in 0..3 {
        let p = if hyp_n[b] == 0 { 0.0 } else { matched[b] as f64 / hyp_n[b] as f64 };
        let r = if ref_n[b] == 0 { 0.0 } else { matched[b] as f64 / ref_n[b] as f64 };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        out.buckets[b] = BucketScore {
            precision: p,
            recall: r,
            f1,
            hyp_count: hyp_n[b],
            ref_count: ref_n[b],
        };
    }
    Ok(out)
}

pub fn bucketed_word_fscore(hyps: &[TokenSeq], refs: &[TokenSeq], freq: &FreqTable) -> Result<BucketedFScore> {
    let h: Vec<Option<&[u32]>> = hyps.iter().map(|s| Some(s.ids())).collect();
    bucketed_word_fscore_opt(&h, refs, freq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(ids: &[u32]) -> TokenSeq {
        TokenSeq::new(ids.to_vec()).unwrap()
    }

    #[test]
    fn freq_counts() {
        let c = vec![seq(&[4, 4, 5])];
        let f = freq_table(&c);
        assert_eq!(f.count(4), 2);
        assert_eq!(f.count(5), 1);
        assert_eq!(f.count(6), 0);
        assert_eq!(f.total(), 3);
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(bucket_of(0), 0);
        assert_eq!(bucket_of(1), 1);
        assert_eq!(bucket_of(19), 1);
        assert_eq!(bucket_of(20), 2);
    }

    #[test]
    fn clipped_hand_count() {
        // ref "a a b", hyp "a b b": a clips to 1, b clips to 1.
        let freq = freq_table(&[seq(&[4, 5])]);
        let s = bucketed_word_fscore(&[seq(&[4, 5, 5])], &[seq(&[4, 4, 5])], &freq).unwrap();
        let b = s.buckets[1];
        assert!((b.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((b.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((b.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.buckets[0].ref_count + s.buckets[2].ref_count, 0);
    }

    #[test]
    fn identity_and_disjoint() {
        let freq = freq_table(&[seq(&[4; 25]), seq(&[5])]);
        let refs = vec![seq(&[4, 5, 6]), seq(&[4, 6])];
        let s = bucketed_word_fscore(&refs, &refs, &freq).unwrap();
        assert!(s.buckets.iter().all(|b| b.f1 == 1.0));
        let other = vec![seq(&[7, 8]), seq(&[9])];
        let s = bucketed_word_fscore(&other, &refs, &freq).unwrap();
        assert!(s.buckets.iter().all(|b| b.f1 == 0.0));
    }

    proptest! {
        #[test]
        fn joint_permutation_invariant(
            pairs in prop::collection::vec((prop::collection::vec(4u32..10, 1..6), prop::collection::vec(4u32..10, 1..6)), 1..8),
            rot in 0usize..8,
        ) {
            let freq = freq_table(&[seq(&[4, 5, 5])]);
            let h: Vec<TokenSeq> = pairs.iter().map(|p| seq(&p.0)).collect();
            let r: Vec<TokenSeq> = pairs.iter().map(|p| seq(&p.1)).collect();
            let a = bucketed_word_fscore(&h, &r, &freq).unwrap();
            let k = rot % h.len();
            let (mut h2, mut r2) = (h.clone(), r.clone());
            h2.rotate_left(k);
            r2.rotate_left(k);
            let b = bucketed_word_fscore(&h2, &r2, &freq).unwrap();
            prop_assert_eq!(&a, &b);
            for s in b.buckets {
                prop_assert!((0.0..=1.0).contains(&s.f1));
            }
        }
    }
}
