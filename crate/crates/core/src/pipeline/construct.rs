use crate::corpus::{PairCorpus, Provenance, RepairSide, TokenSeq, TripleCorpus};
use crate::error::{Error, Result};
use crate::model::{decode_batch, dr_decode_batch, DecodeParams, Direction, DrModel, NmtModel};

/// A constructed corpus and the input rows that could not be used.
#[derive(Debug, Clone, PartialEq)]
pub struct Built<C> {
    pub corpus: C,
    /// Input indices whose decode failed (no end marker or empty output).
    pub failed: Vec<usize>,
}

fn translate(model: &NmtModel, sents: &[TokenSeq], params: &DecodeParams, threads: usize) -> Result<Vec<Option<TokenSeq>>> {
    if sents.is_empty() {
        return Ok(Vec::new());
    }
    Ok(decode_batch(model, sents, params, threads)?
        .into_iter()
        .map(|d| d.sentence())
        .collect())
}

/// Translates monolingual text in `model`'s input language and pairs each
/// output with its input. Pairs keep (source language, target language)
/// order whatever the model direction.
pub fn back_translate(
    model: &NmtModel,
    mono: &[TokenSeq],
    params: &DecodeParams,
    threads: usize,
) -> Result<Built<PairCorpus>> {
    let out = translate(model, mono, params, threads)?;
    let mut corpus = PairCorpus::default();
    let mut failed = Vec::new();
    for (i, (m, t)) in mono.iter().zip(out).enumerate() {
        match (t, model.direction) {
            (Some(t), Direction::TgtToSrc) => corpus.push(t, m.clone(), Provenance::BackTranslated),
            (Some(t), Direction::SrcToTgt) => corpus.push(m.clone(), t, Provenance::BackTranslated),
            (None, _) => failed.push(i),
        }
    }
    Ok(Built { corpus, failed })
}

/// Translates `mono` with `first` and the result back with `second`, giving
/// (draft, mid, reference) triples for repairing `first`'s input language.
pub fn round_trip(
    first: &NmtModel,
    second: &NmtModel,
    mono: &[TokenSeq],
    params: &DecodeParams,
    threads: usize,
) -> Result<Built<TripleCorpus>> {
    if second.direction != first.direction.reverse() {
        return Err(Error::contract("round trip needs opposite directions"));
    }
    let side = match first.direction {
        Direction::SrcToTgt => RepairSide::Source,
        Direction::TgtToSrc => RepairSide::Target,
    };
    let mid = translate(first, mono, params, threads)?;
    let keep: Vec<usize> = (0..mono.len()).filter(|&i| mid[i].is_some()).collect();
    let mids: Vec<TokenSeq> = keep.iter().map(|&i| mid[i].clone().expect("kept")).collect();
    let back = translate(second, &mids, params, threads)?;
    let mut corpus = TripleCorpus::empty(side);
    let mut failed: Vec<usize> = (0..mono.len()).filter(|&i| mid[i].is_none()).collect();
    for ((&i, m), b) in keep.iter().zip(mids).zip(back) {
        match b {
            Some(draft) => corpus.push(draft, m, mono[i].clone()),
            None => failed.push(i),
        }
    }
    failed.sort_unstable();
    Ok(Built { corpus, failed })
}

/// Rewrites the side of each back-translated pair that `dr` repairs,
/// conditioning on the other side. Rows whose repair fails keep their draft
/// and are listed in `failed`; every output row is tagged repaired.
pub fn repair_corpus(
    dr: &DrModel,
    synthetic: &PairCorpus,
    params: &DecodeParams,
    threads: usize,
) -> Result<Built<PairCorpus>> {
    if synthetic.provenance().iter().any(|&p| p != Provenance::BackTranslated) {
        return Err(Error::contract("repair expects back-translated pairs only"));
    }
    let (drafts, conds) = match dr.side {
        RepairSide::Source => (synthetic.src(), synthetic.tgt()),
        RepairSide::Target => (synthetic.tgt(), synthetic.src()),
    };
    let out = if synthetic.is_empty() {
        Vec::new()
    } else {
        dr_decode_batch(dr, drafts, conds, params, threads)?
    };
    let mut corpus = PairCorpus::default();
    let mut failed = Vec::new();
    for (i, d) in out.iter().enumerate() {
        let fixed = d.sentence().unwrap_or_else(|| {
            failed.push(i);
            drafts[i].clone()
        });
        match dr.side {
            RepairSide::Source => corpus.push(fixed, conds[i].clone(), Provenance::Repaired),
            RepairSide::Target => corpus.push(conds[i].clone(), fixed, Provenance::Repaired),
        }
    }
    Ok(Built { corpus, failed })
}

/// Pairs every monolingual sentence with itself.
pub fn copy_corpus(mono: &[TokenSeq]) -> PairCorpus {
    PairCorpus::with_provenance(mono.to_vec(), mono.to_vec(), Provenance::Copied).expect("equal columns")
}

/// Authentic pairs followed by synthetic ones, provenance kept.
pub fn mix_semi_supervised(authentic: &PairCorpus, synthetic: &PairCorpus) -> PairCorpus {
    let mut out = authentic.clone();
    out.extend(synthetic);
    out
}

/// Repair triples from authentic pairs: the reference side is back-translated
/// from the other side to give the draft.
pub fn authentic_triples(
    to_src: &NmtModel,
    to_tgt: &NmtModel,
    authentic: &PairCorpus,
    side: RepairSide,
    params: &DecodeParams,
    threads: usize,
) -> Result<Built<TripleCorpus>> {
    if to_src.direction != Direction::TgtToSrc || to_tgt.direction != Direction::SrcToTgt {
        return Err(Error::contract("authentic triples need one model per direction"));
    }
    let (model, cond, refs) = match side {
        RepairSide::Source => (to_src, authentic.tgt(), authentic.src()),
        RepairSide::Target => (to_tgt, authentic.src(), authentic.tgt()),
    };
    let drafts = translate(model, cond, params, threads)?;
    let mut corpus = TripleCorpus::empty(side);
    let mut failed = Vec::new();
    for (i, d) in drafts.into_iter().enumerate() {
        match d {
            Some(d) => corpus.push(d, cond[i].clone(), refs[i].clone()),
            None => failed.push(i),
        }
    }
    Ok(Built { corpus, failed })
}

/// Training columns `[input, output]` of a pair corpus for `dir`.
pub fn direction_columns(pairs: &PairCorpus, dir: Direction) -> [&[TokenSeq]; 2] {
    match dir {
        Direction::SrcToTgt => [pairs.src(), pairs.tgt()],
        Direction::TgtToSrc => [pairs.tgt(), pairs.src()],
    }
}

/// Training columns `[draft, conditioning, reference]` of a triple corpus.
pub fn triple_columns(t: &TripleCorpus) -> [&[TokenSeq]; 3] {
    [t.draft(), t.mid(), t.reference()]
}
