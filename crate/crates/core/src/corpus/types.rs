use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An integer-encoded sentence without boundary markers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSeq(Vec<u32>);

impl TokenSeq {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::contract("token sequences must be non-empty"));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_ids(self) -> Vec<u32> {
        self.0
    }
}

impl AsRef<[u32]> for TokenSeq {
    fn as_ref(&self) -> &[u32] {
        &self.0
    }
}

/// Which language a monolingual corpus is written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Source,
    Target,
}

impl Side {
    pub fn other(self) -> Self {
        match self {
            Side::Source => Side::Target,
            Side::Target => Side::Source,
        }
    }
}

/// Where the source side of a training pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Authentic,
    BackTranslated,
    Repaired,
    Copied,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Authentic => "authentic",
            Provenance::BackTranslated => "back-translated",
            Provenance::Repaired => "repaired",
            Provenance::Copied => "copied",
        })
    }
}

/// Deduplicated sentences in one language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonoCorpus {
    sents: Vec<TokenSeq>,
    pub side: Side,
    pub domain: String,
}

impl MonoCorpus {
    /// Keeps the first occurrence of every sentence.
    pub fn new(sents: Vec<TokenSeq>, side: Side, domain: impl Into<String>) -> Self {
        let mut seen = HashSet::new();
        let sents = sents.into_iter().filter(|s| seen.insert(s.clone())).collect();
        Self {
            sents,
            side,
            domain: domain.into(),
        }
    }

    pub fn sents(&self) -> &[TokenSeq] {
        &self.sents
    }

    pub fn len(&self) -> usize {
        self.sents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sents.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sents.iter().map(TokenSeq::len).sum()
    }
}

/// Aligned sentence pairs, each tagged with the origin of its source side.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairCorpus {
    src: Vec<TokenSeq>,
    tgt: Vec<TokenSeq>,
    provenance: Vec<Provenance>,
}

impl PairCorpus {
    pub fn new(src: Vec<TokenSeq>, tgt: Vec<TokenSeq>, provenance: Vec<Provenance>) -> Result<Self> {
        if src.len() != tgt.len() || src.len() != provenance.len() {
            return Err(Error::contract(format!(
                "pair corpus sides differ: {} / {} / {}",
                src.len(),
                tgt.len(),
                provenance.len()
            )));
        }
        Ok(Self {
            src,
            tgt,
            provenance,
        })
    }

    pub fn with_provenance(src: Vec<TokenSeq>, tgt: Vec<TokenSeq>, p: Provenance) -> Result<Self> {
        let n = src.len();
        Self::new(src, tgt, vec![p; n])
    }

    pub fn push(&mut self, src: TokenSeq, tgt: TokenSeq, p: Provenance) {
        self.src.push(src);
        self.tgt.push(tgt);
        self.provenance.push(p);
    }

    pub fn extend(&mut self, other: &PairCorpus) {
        self.src.extend_from_slice(&other.src);
        self.tgt.extend_from_slice(&other.tgt);
        self.provenance.extend_from_slice(&other.provenance);
    }

    pub fn src(&self) -> &[TokenSeq] {
        &self.src
    }

    pub fn tgt(&self) -> &[TokenSeq] {
        &self.tgt
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TokenSeq, &TokenSeq, Provenance)> {
        self.src
            .iter()
            .zip(&self.tgt)
            .zip(&self.provenance)
            .map(|((s, t), &p)| (s, t, p))
    }

    /// The same pairs with source and target exchanged.
    pub fn swapped(&self) -> PairCorpus {
        Self {
            src: self.tgt.clone(),
            tgt: self.src.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn truncated(&self, n: usize) -> PairCorpus {
        let n = n.min(self.len());
        Self {
            src: self.src[..n].to_vec(),
            tgt: self.tgt[..n].to_vec(),
            provenance: self.provenance[..n].to_vec(),
        }
    }
}

/// Which repair model a triple corpus trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RepairSide {
    /// `(x̂, ŷ) → x`: repairs synthetic source sentences.
    Source,
    /// `(ŷ, x̂) → y`: repairs synthetic target sentences.
    Target,
}

impl RepairSide {
    pub fn name(self) -> &'static str {
        match self {
            RepairSide::Source => "src",
            RepairSide::Target => "tgt",
        }
    }
}

/// Round-trip training triples for a repair model.
///
/// `draft` is the round-tripped sentence in the reference language, `mid`
/// the intermediate translation in the other language, `reference` the
/// authentic sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleCorpus {
    draft: Vec<TokenSeq>,
    mid: Vec<TokenSeq>,
    reference: Vec<TokenSeq>,
    pub side: RepairSide,
}

impl TripleCorpus {
    pub fn new(
        draft: Vec<TokenSeq>,
        mid: Vec<TokenSeq>,
        reference: Vec<TokenSeq>,
        side: RepairSide,
    ) -> Result<Self> {
        if draft.len() != mid.len() || draft.len() != reference.len() {
            return Err(Error::contract(format!(
                "triple corpus columns differ: {} / {} / {}",
                draft.len(),
                mid.len(),
                reference.len()
            )));
        }
        Ok(Self {
            draft,
            mid,
            reference,
            side,
        })
    }

    pub fn empty(side: RepairSide) -> Self {
        Self {
            draft: Vec::new(),
            mid: Vec::new(),
            reference: Vec::new(),
            side,
        }
    }

    pub fn push(&mut self, draft: TokenSeq, mid: TokenSeq, reference: TokenSeq) {
        self.draft.push(draft);
        self.mid.push(mid);
        self.reference.push(reference);
    }

    pub fn extend(&mut self, other: &TripleCorpus) -> Result<()> {
        if other.side != self.side {
            return Err(Error::contract("merging triples of different sides"));
        }
        self.draft.extend_from_slice(&other.draft);
        self.mid.extend_from_slice(&other.mid);
        self.reference.extend_from_slice(&other.reference);
        Ok(())
    }

    pub fn draft(&self) -> &[TokenSeq] {
        &self.draft
    }

    pub fn mid(&self) -> &[TokenSeq] {
        &self.mid
    }

    pub fn reference(&self) -> &[TokenSeq] {
        &self.reference
    }

    pub fn len(&self) -> usize {
        self.draft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draft.is_empty()
    }

    pub fn truncated(&self, n: usize) -> TripleCorpus {
        let n = n.min(self.len());
        Self {
            draft: self.draft[..n].to_vec(),
            mid: self.mid[..n].to_vec(),
            reference: self.reference[..n].to_vec(),
            side: self.side,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(ids: &[u32]) -> TokenSeq {
        TokenSeq::new(ids.to_vec()).unwrap()
    }

    #[test]
    fn empty_sequence_rejected() {
        assert!(TokenSeq::new(vec![]).is_err());
    }

    #[test]
    fn mono_corpus_deduplicates() {
        let c = MonoCorpus::new(vec![seq(&[4]), seq(&[5]), seq(&[4])], Side::Source, "B");
        assert_eq!(c.len(), 2);
        assert_eq!(c.sents()[1], seq(&[5]));
    }

    #[test]
    fn pair_corpus_length_mismatch() {
        assert!(PairCorpus::new(vec![seq(&[4])], vec![], vec![Provenance::Authentic]).is_err());
    }

    #[test]
    fn triple_corpus_length_mismatch() {
        assert!(TripleCorpus::new(vec![seq(&[4])], vec![seq(&[5])], vec![], RepairSide::Source).is_err());
    }
}
