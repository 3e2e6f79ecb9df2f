//! Vocabulary, corpora, the synthetic benchmark generator, batching and file I/O.

pub mod batch;
pub mod domain;
pub mod io;
pub mod types;
pub mod vocab;

pub use batch::{make_batches, Batch, Batching, PaddedIds};
pub use domain::{
    generate_domain_corpus, generate_splits, gold_translate, DomainSpec, DomainSplits, DomainTag, Lexicon,
    SentencePool, SplitSizes, TermKind,
};
pub use io::{read_corpus, read_lines, read_triples, write_corpus, write_lines, write_pairs, write_seqs, write_triples};
pub use types::{MonoCorpus, PairCorpus, Provenance, RepairSide, Side, TokenSeq, TripleCorpus};
pub use vocab::{build_vocab, Vocab, BOS, EOS, PAD, UNK};
