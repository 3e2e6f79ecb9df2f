//! Corpus BLEU, frequency-bucketed word f-measure, and n-gram perplexity.

pub mod bleu;
pub mod fscore;
pub mod lm;

pub use bleu::{corpus_bleu, corpus_bleu_opt, BleuScore};
pub use fscore::{bucket_of, bucketed_word_fscore, bucketed_word_fscore_opt, freq_table, BucketScore, BucketedFScore, FreqTable, BUCKETS};
pub use lm::{perplexity, train_lm, NgramLm};
