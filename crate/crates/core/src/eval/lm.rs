use std::collections::{HashMap, HashSet};

use crate::corpus::TokenSeq;
use crate::error::{Error, Result};

/// Internal symbols for sentence boundaries and unknown tokens. They sit
/// above any real token id.
const BOS_SYM: u32 = u32::MAX - 2;
const END_SYM: u32 = u32::MAX - 1;
const UNK_SYM: u32 = u32::MAX;

pub const DISCOUNT: f64 = 0.75;

#[derive(Debug, Default, Clone, PartialEq)]
struct ContextStats {
    next: HashMap<u32, usize>,
    total: usize,
}

/// Interpolated absolute-discounting n-gram model.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    order: usize,
    end_events: bool,
    discount: f64,
    /// Scored symbols: training tokens, unk, and the end event if enabled.
    vocab: Vec<u32>,
    known: HashSet<u32>,
    /// Keyed by context length, then context.
    stats: Vec<HashMap<Vec<u32>, ContextStats>>,
}

pub fn train_lm(sents: &[TokenSeq], order: usize) -> Result<NgramLm> {
    NgramLm::train(sents, order, true)
}

impl NgramLm {
    pub fn train(sents: &[TokenSeq], order: usize, end_events: bool) -> Result<Self> {
        Self::train_discounted(sents, order, end_events, DISCOUNT)
    }

    /// As [`NgramLm::train`] with a custom discount in `[0, 1)`. A zero
    /// discount gives unsmoothed relative frequencies, under which unseen
    /// events are impossible.
    pub fn train_discounted(sents: &[TokenSeq], order: usize, end_events: bool, discount: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::contract(format!("discount {discount} outside [0, 1)")));
        }
        if order < 1 {
            return Err(Error::contract("n-gram order must be at least 1"));
        }
        if sents.is_empty() {
            return Err(Error::contract("language model corpus is empty"));
        }
        let mut known: HashSet<u32> = HashSet::new();
        let mut stats: Vec<HashMap<Vec<u32>, ContextStats>> = vec![HashMap::new(); order];
        for s in sents {
            let padded = Self::pad(order, s.ids(), end_events);
            known.extend(s.ids().iter().copied());
            for i in order - 1..padded.len() {
                let w = padded[i];
                for ctx_len in 0..order {
                    let ctx = padded[i - ctx_len..i].to_vec();
                    let e = stats[ctx_len].entry(ctx).or_default();
                    *e.next.entry(w).or_insert(0) += 1;
                    e.total += 1;
                }
            }
        }
        let mut vocab: Vec<u32> = known.iter().copied().collect();
        vocab.sort_unstable();
        vocab.push(UNK_SYM);
        if end_events {
            vocab.push(END_SYM);
        }
        Ok(Self {
            order,
            end_events,
            discount,
            vocab,
            known,
            stats,
        })
    }

    fn pad(order: usize, ids: &[u32], end: bool) -> Vec<u32> {
        let mut p = vec![BOS_SYM; order - 1];
        p.extend_from_slice(ids);
        if end {
            p.push(END_SYM);
        }
        p
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of scored symbols, including unk and the end event.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn map(&self, t: u32) -> u32 {
        if t == END_SYM || self.known.contains(&t) {
            t
        } else {
            UNK_SYM
        }
    }

    /// `p(w | ctx)` where `ctx` holds the preceding symbols (most recent
    /// last); only the last `order - 1` are used.
    fn prob_sym(&self, ctx: &[u32], w: u32) -> f64 {
        let mut p = 1.0 / self.vocab.len() as f64;
        let max_ctx = (self.order - 1).min(ctx.len());
        for ctx_len in 0..=max_ctx {
            let c = &ctx[ctx.len() - ctx_len..];
            let Some(st) = self.stats[ctx_len].get(c) else {
                break;
            };
            let count = st.next.get(&w).copied().unwrap_or(0) as f64;
            let total = st.total as f64;
            let types = st.next.len() as f64;
            let d = self.discount;
            p = (count - d).max(0.0) / total + d * types / total * p;
        }
        p
    }

    /// Conditional distribution over every scored symbol after `ctx`
    /// (real token ids; sentence start is implied by a short context).
    pub fn distribution(&self, ctx: &[u32]) -> Vec<f64> {
        let full = self.context(ctx);
        self.vocab.iter().map(|&w| self.prob_sym(&full, w)).collect()
    }

    fn context(&self, ctx: &[u32]) -> Vec<u32> {
        let mut full = vec![BOS_SYM; self.order - 1];
        full.extend(ctx.iter().map(|&t| self.map(t)));
        full
    }

    /// Sum of natural-log probabilities and number of scored events.
    pub fn log_prob(&self, sent: &[u32]) -> (f64, usize) {
        let padded = Self::pad(self.order, &sent.iter().map(|&t| self.map(t)).collect::<Vec<_>>(), self.end_events);
        let mut lp = 0.0;
        for i in self.order - 1..padded.len() {
            let p = self.prob_sym(&padded[..i], padded[i]);
            assert!(p > 0.0, "zero-probability event");
            lp += p.ln();
        }
        (lp, padded.len() + 1 - self.order)
    }
}

/// `exp(-mean log p)` over every token and end event of `sents`.
pub fn perplexity(lm: &NgramLm, sents: &[TokenSeq]) -> Result<f64> {
    if sents.is_empty() {
        return Err(Error::contract("perplexity of an empty corpus"));
    }
    let (mut lp, mut n) = (0.0, 0usize);
    for s in sents {
        let (l, k) = lm.log_prob(s.ids());
        lp += l;
        n += k;
    }
    Ok((-lp / n as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(ids: &[u32]) -> TokenSeq {
        TokenSeq::new(ids.to_vec()).unwrap()
    }

    /// Unigram probability of a seen token, interpolated with a uniform floor
    /// over the two seen types plus unk.
    fn unigram_oracle(count: f64, total: f64, types: f64, vocab: f64) -> f64 {
        (count - DISCOUNT).max(0.0) / total + DISCOUNT * types / total / vocab
    }

    #[test]
    fn unigram_counts() {
        let lm = NgramLm::train(&[seq(&[4, 4, 5])], 1, false).unwrap();
        let pa = lm.prob_sym(&[], 4);
        let pb = lm.prob_sym(&[], 5);
        assert!((pa - unigram_oracle(2.0, 3.0, 2.0, 3.0)).abs() < 1e-12);
        assert!((pb - unigram_oracle(1.0, 3.0, 2.0, 3.0)).abs() < 1e-12);
    }

    #[test]
    fn unigram_hand_perplexity() {
        // Undiscounted probabilities 2/3 and 1/3: the text "a b" scores
        // (2/9)^(-1/2).
        let lm = NgramLm::train_discounted(&[seq(&[4, 4, 5])], 1, false, 0.0).unwrap();
        assert!((lm.prob_sym(&[], 4) - 2.0 / 3.0).abs() < 1e-12);
        assert!((lm.prob_sym(&[], 5) - 1.0 / 3.0).abs() < 1e-12);
        let ppl = perplexity(&lm, &[seq(&[4, 5])]).unwrap();
        assert!((ppl - 2.121).abs() < 1e-3, "{ppl}");
    }

    #[test]
    fn uniform_unigram_perplexity_is_vocab() {
        let toks: Vec<u32> = (4..14).collect();
        let lm = NgramLm::train_discounted(&[seq(&toks)], 1, false, 0.0).unwrap();
        let ppl = perplexity(&lm, &[seq(&toks)]).unwrap();
        assert!((ppl - 10.0).abs() < 1e-9);
    }

    #[test]
    fn contracts() {
        assert!(NgramLm::train(&[seq(&[4])], 0, true).is_err());
        assert!(NgramLm::train_discounted(&[seq(&[4])], 2, true, 1.0).is_err());
        assert!(train_lm(&[], 3).is_err());
        let lm = train_lm(&[seq(&[4])], 3).unwrap();
        assert!(perplexity(&lm, &[]).is_err());
    }

    #[test]
    fn deterministic_training() {
        let c = vec![seq(&[4, 5, 6]), seq(&[5, 6, 4, 4])];
        assert_eq!(train_lm(&c, 3).unwrap(), train_lm(&c, 3).unwrap());
    }

    #[test]
    fn training_text_beats_shuffled_text() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base: Vec<u32> = (4..40).collect();
        let corpus: Vec<TokenSeq> = (0..200)
            .map(|i| {
                let start = (i * 7) % 30;
                seq(&base[start..start + 6])
            })
            .collect();
        let lm = train_lm(&corpus, 3).unwrap();
        let shuffled: Vec<TokenSeq> = corpus
            .iter()
            .map(|s| {
                let mut v = s.ids().to_vec();
                v.shuffle(&mut rng);
                seq(&v)
            })
            .collect();
        assert!(perplexity(&lm, &corpus).unwrap() <= perplexity(&lm, &shuffled).unwrap());
    }

    #[test]
    fn unknown_tokens_get_unk_mass() {
        let lm = train_lm(&[seq(&[4, 5])], 2).unwrap();
        let (lp, n) = lm.log_prob(&[99]);
        assert!(lp.is_finite());
        assert_eq!(n, 2);
    }

    proptest! {
        #[test]
        fn conditionals_normalize(
            corpus in prop::collection::vec(prop::collection::vec(4u32..12, 1..8), 1..10),
            ctx in prop::collection::vec(4u32..14, 0..4),
            order in 1usize..4,
        ) {
            let sents: Vec<TokenSeq> = corpus.iter().map(|s| seq(s)).collect();
            let lm = train_lm(&sents, order).unwrap();
            let total: f64 = lm.distribution(&ctx).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6, "{}", total);
            // Contexts reachable from training data.
            let s = &corpus[0];
            let reach = &s[..s.len().min(order)];
            let total: f64 = lm.distribution(reach).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
    }
}
