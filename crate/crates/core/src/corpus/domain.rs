//! Synthetic two-domain translation benchmark with a gold oracle.
//!
//! Source sentences mix a shared lexicon with per-domain terms. The target
//! side is a token map followed by swapping each adjacent pair of positions.
//! A prefix of the shared lexicon (the conflict set) translates differently
//! in each domain, and a prefix of each domain lexicon (the synonyms) shares
//! its target images with the other domain's synonyms. Some domain terms
//! form fixed two-word collocations (head, tail).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::types::{MonoCorpus, PairCorpus, Provenance, Side, TokenSeq};
use super::vocab::{build_vocab, Vocab};
use crate::error::{Error, Result};

/// One of the two benchmark domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DomainTag {
    Out,
    In,
}

impl DomainTag {
    pub fn other(self) -> Self {
        match self {
            DomainTag::Out => DomainTag::In,
            DomainTag::In => DomainTag::Out,
        }
    }

    fn index(self) -> usize {
        match self {
            DomainTag::Out => 0,
            DomainTag::In => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    /// Names of the out-of-domain and in-domain domains; their lowercase form
    /// prefixes source terms, the uppercase form prefixes target images.
    pub names: [String; 2],
    pub shared_size: usize,
    pub conflict_size: usize,
    pub domain_size: usize,
    pub synonym_size: usize,
    pub collocations: usize,
    /// Fraction of sentence tokens that are domain terms.
    pub mix_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of out-of-domain training pairs drawn from the in-domain
    /// sampler, with collocation tails excluded.
    pub leak_rate: f64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        Self {
            names: ["A".into(), "B".into()],
            shared_size: 80,
            conflict_size: 10,
            domain_size: 20,
            synonym_size: 10,
            collocations: 5,
            mix_rate: 0.3,
            min_len: 3,
            max_len: 12,
            leak_rate: 0.015,
        }
    }
}

/// Role of a domain-lexicon index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    Synonym,
    Head,
    Tail,
    Single,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::contract(format!("domain spec: {m}")));
        if self.shared_size == 0 || self.domain_size == 0 {
            return bad("lexicons must be non-empty");
        }
        if self.conflict_size > self.shared_size {
            return bad("conflict set larger than the shared lexicon");
        }
        if self.synonym_size + 2 * self.collocations > self.domain_size {
            return bad("synonyms and collocations exceed the domain lexicon");
        }
        if !(0.0..=1.0).contains(&self.mix_rate) || !(0.0..1.0).contains(&self.leak_rate) {
            return bad("rates must lie in [0, 1]");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("invalid sentence length range");
        }
        if self.names[0] == self.names[1] || self.names.iter().any(|n| n.is_empty() || n.contains(char::is_whitespace)) {
            return bad("domain names must be distinct, non-empty, without whitespace");
        }
        let lex = self.lexicon_tokens();
        let total: usize = lex.iter().map(Vec::len).sum();
        let unique: HashSet<&String> = lex.iter().flatten().collect();
        if unique.len() != total {
            return Err(Error::contract("vocabulary collision across lexicons"));
        }
        Ok(())
    }

    pub fn name(&self, d: DomainTag) -> &str {
        &self.names[d.index()]
    }

    pub fn term_kind(&self, k: usize) -> TermKind {
        let y = self.synonym_size;
        let c = self.collocations;
        if k < y {
            TermKind::Synonym
        } else if k < y + c {
            TermKind::Head
        } else if k < y + 2 * c {
            TermKind::Tail
        } else {
            TermKind::Single
        }
    }

    fn width(&self) -> usize {
        let n = self.shared_size.max(self.domain_size);
        n.saturating_sub(1).to_string().len().max(2)
    }

    pub fn shared_token(&self, k: usize) -> String {
        format!("s{:0w$}", k, w = self.width())
    }

    pub fn term_token(&self, d: DomainTag, k: usize) -> String {
        format!("{}{:0w$}", self.name(d).to_lowercase(), k, w = self.width())
    }

    /// Target image of shared token `k` in domain `d`.
    pub fn shared_image(&self, d: DomainTag, k: usize) -> String {
        if k < self.conflict_size {
            format!("S{}{:0w$}", self.name(d).to_uppercase(), k, w = self.width())
        } else {
            format!("S{:0w$}", k, w = self.width())
        }
    }

    /// Target image of domain term `k` of domain `d`.
    pub fn term_image(&self, d: DomainTag, k: usize) -> String {
        if k < self.synonym_size {
            format!("Y{:0w$}", k, w = self.width())
        } else {
            format!("{}{:0w$}", self.name(d).to_uppercase(), k, w = self.width())
        }
    }

    /// Source shared, source terms of each domain, then every target image,
    /// each list free of duplicates.
    fn lexicon_tokens(&self) -> Vec<Vec<String>> {
        let shared: Vec<String> = (0..self.shared_size).map(|k| self.shared_token(k)).collect();
        let mut groups = vec![shared];
        for d in [DomainTag::Out, DomainTag::In] {
            groups.push((0..self.domain_size).map(|k| self.term_token(d, k)).collect());
        }
        let mut images = Vec::new();
        let mut seen = HashSet::new();
        for d in [DomainTag::Out, DomainTag::In] {
            let all = (0..self.shared_size)
                .map(|k| self.shared_image(d, k))
                .chain((0..self.domain_size).map(|k| self.term_image(d, k)));
            for t in all {
                if seen.insert(t.clone()) {
                    images.push(t);
                }
            }
        }
        groups.push(images);
        groups
    }

    /// The benchmark vocabulary: reserved ids, source lexicons, target images.
    pub fn vocab(&self) -> Result<Vocab> {
        self.validate()?;
        let groups = self.lexicon_tokens();
        Ok(build_vocab(groups.iter().map(|g| g.iter().map(String::as_str))))
    }

    pub fn to_kv(&self) -> String {
        let mut m = BTreeMap::new();
        m.insert("names", format!("{},{}", self.names[0], self.names[1]));
        m.insert("shared_size", self.shared_size.to_string());
        m.insert("conflict_size", self.conflict_size.to_string());
        m.insert("domain_size", self.domain_size.to_string());
        m.insert("synonym_size", self.synonym_size.to_string());
        m.insert("collocations", self.collocations.to_string());
        m.insert("mix_rate", self.mix_rate.to_string());
        m.insert("min_len", self.min_len.to_string());
        m.insert("max_len", self.max_len.to_string());
        m.insert("leak_rate", self.leak_rate.to_string());
        m.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Applies `key=value` settings on top of `self`. Unknown keys fail.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid value `{value}` for domain key `{key}`"));
        let int = || value.parse::<usize>().map_err(|_| bad());
        let real = || value.parse::<f64>().map_err(|_| bad());
        match key {
            "names" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(bad());
                }
                self.names = [parts[0].to_string(), parts[1].to_string()];
            }
            "shared_size" => self.shared_size = int()?,
            "conflict_size" => self.conflict_size = int()?,
            "domain_size" => self.domain_size = int()?,
            "synonym_size" => self.synonym_size = int()?,
            "collocations" => self.collocations = int()?,
            "mix_rate" => self.mix_rate = real()?,
            "min_len" => self.min_len = int()?,
            "max_len" => self.max_len = int()?,
            "leak_rate" => self.leak_rate = real()?,
            _ => return Err(Error::Config(format!("unknown domain key `{key}`"))),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            spec.set(k.trim(), v.trim())?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text)
    }
}

impl fmt::Display for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv())
    }
}

/// Id-level view of a spec against its vocabulary.
#[derive(Debug, Clone)]
pub struct Lexicon {
    spec: DomainSpec,
    vocab: Vocab,
    shared: Vec<u32>,
    terms: [Vec<u32>; 2],
    maps: [HashMap<u32, u32>; 2],
}

impl Lexicon {
    pub fn new(spec: &DomainSpec) -> Result<Self> {
        let vocab = spec.vocab()?;
        let id = |t: String| vocab.id(&t).expect("lexicon token in vocabulary");
        let shared: Vec<u32> = (0..spec.shared_size).map(|k| id(spec.shared_token(k))).collect();
        let mut terms: [Vec<u32>; 2] = Default::default();
        let mut maps: [HashMap<u32, u32>; 2] = Default::default();
        for d in [DomainTag::Out, DomainTag::In] {
            let m = &mut maps[d.index()];
            for (k, &s) in shared.iter().enumerate() {
                m.insert(s, id(spec.shared_image(d, k)));
            }
            for k in 0..spec.domain_size {
                let t = id(spec.term_token(d, k));
                terms[d.index()].push(t);
                m.insert(t, id(spec.term_image(d, k)));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            vocab,
            shared,
            terms,
            maps,
        })
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn shared_ids(&self) -> &[u32] {
        &self.shared
    }

    pub fn term_ids(&self, d: DomainTag) -> &[u32] {
        &self.terms[d.index()]
    }

    pub fn is_term(&self, d: DomainTag, id: u32) -> bool {
        self.terms[d.index()].contains(&id)
    }

    /// Token map followed by swapping positions (2k, 2k+1).
    pub fn gold_translate(&self, d: DomainTag, src: &TokenSeq) -> Result<TokenSeq> {
        let map = &self.maps[d.index()];
        let mut out = src
            .ids()
            .iter()
            .map(|t| {
                map.get(t).copied().ok_or_else(|| {
                    Error::contract(format!(
                        "token `{}` is not in the {} lexicon",
                        self.vocab.token(*t).unwrap_or("?"),
                        self.spec.name(d)
                    ))
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        for pair in out.chunks_exact_mut(2) {
            pair.swap(0, 1);
        }
        TokenSeq::new(out)
    }

    /// Draws one source sentence. With `allow_tails` false, collocation heads
    /// are emitted alone and tails never occur.
    pub fn sample_sentence<R: Rng>(&self, d: DomainTag, rng: &mut R, allow_tails: bool) -> TokenSeq {
        let s = &self.spec;
        let terms = &self.terms[d.index()];
        let units: Vec<usize> = (0..s.domain_size)
            .filter(|&k| s.term_kind(k) != TermKind::Tail)
            .collect();
        let singles: Vec<usize> = units
            .iter()
            .copied()
            .filter(|&k| !allow_tails || s.term_kind(k) != TermKind::Head)
            .collect();
        let mean_unit = if allow_tails && !units.is_empty() {
            (units.len() + s.collocations) as f64 / units.len() as f64
        } else {
            1.0
        };
        // Unit rate that makes the expected token share of domain terms equal mix_rate.
        let p = s.mix_rate;
        let q = p / (mean_unit * (1.0 - p) + p);
        let len = rng.gen_range(s.min_len..=s.max_len);
        let mut ids = Vec::with_capacity(len);
        while ids.len() < len {
            if !units.is_empty() && rng.gen_bool(q) {
                let mut k = units[rng.gen_range(0..units.len())];
                let is_head = allow_tails && s.term_kind(k) == TermKind::Head;
                if is_head && ids.len() + 1 < len {
                    ids.push(terms[k]);
                    ids.push(terms[k + s.collocations]);
                    continue;
                }
                if is_head {
                    if singles.is_empty() {
                        ids.push(self.shared[rng.gen_range(0..self.shared.len())]);
                        continue;
                    }
                    k = singles[rng.gen_range(0..singles.len())];
                }
                ids.push(terms[k]);
            } else {
                ids.push(self.shared[rng.gen_range(0..self.shared.len())]);
            }
        }
        TokenSeq::new(ids).expect("min_len >= 1")
    }
}

pub fn gold_translate(spec: &DomainSpec, d: DomainTag, src: &TokenSeq) -> Result<TokenSeq> {
    Lexicon::new(spec)?.gold_translate(d, src)
}

/// Sizes of the generated splits of one domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub mono_src: usize,
    pub mono_tgt: usize,
    pub dev: usize,
    pub test: usize,
}

/// Every split of one domain. The target monolingual corpus keeps the hidden
/// source sentences it was generated from, aligned by index.
#[derive(Debug, Clone)]
pub struct DomainSplits {
    pub train: PairCorpus,
    pub mono_src: MonoCorpus,
    pub mono_tgt: MonoCorpus,
    pub mono_tgt_gold: Vec<TokenSeq>,
    pub mono_src_gold: Vec<TokenSeq>,
    pub dev: PairCorpus,
    pub test: PairCorpus,
    /// Training pairs drawn from the other domain.
    pub leaked: usize,
}

/// Exact-match set of source sentences already used by some split.
#[derive(Debug, Default, Clone)]
pub struct SentencePool {
    seen: HashSet<TokenSeq>,
}

impl SentencePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, s: &TokenSeq) -> bool {
        self.seen.contains(s)
    }

    pub fn insert(&mut self, s: TokenSeq) -> bool {
        self.seen.insert(s)
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

fn draw_unique<R: Rng>(
    lex: &Lexicon,
    d: DomainTag,
    n: usize,
    allow_tails: bool,
    rng: &mut R,
    pool: &mut SentencePool,
) -> Result<Vec<TokenSeq>> {
    let mut out = Vec::with_capacity(n);
    let mut misses = 0usize;
    while out.len() < n {
        let s = lex.sample_sentence(d, rng, allow_tails);
        if pool.insert(s.clone()) {
            out.push(s);
            misses = 0;
        } else {
            misses += 1;
            if misses > 10_000 {
                return Err(Error::contract("sentence space exhausted while deduplicating"));
            }
        }
    }
    Ok(out)
}

fn gold_pairs(lex: &Lexicon, d: DomainTag, src: Vec<TokenSeq>) -> Result<PairCorpus> {
    let tgt = src.iter().map(|s| lex.gold_translate(d, s)).collect::<Result<Vec<_>>>()?;
    PairCorpus::with_provenance(src, tgt, Provenance::Authentic)
}

/// Generates all splits of domain `d`, mutually disjoint on the source side and
/// disjoint from everything already in `pool`. When `leak` is set, that share
/// of the training pairs comes from the other domain.
pub fn generate_splits(
    lex: &Lexicon,
    d: DomainTag,
    sizes: SplitSizes,
    leak: bool,
    seed: u64,
    pool: &mut SentencePool,
) -> Result<DomainSplits> {
    let salt = match d {
        DomainTag::Out => 0x6f75_7400,
        DomainTag::In => 0x696e_0000,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    let n_leak = if leak {
        (lex.spec.leak_rate * sizes.train as f64).round() as usize
    } else {
        0
    };
    let n_leak = n_leak.min(sizes.train);
    let dev = draw_unique(lex, d, sizes.dev, true, &mut rng, pool)?;
    let test = draw_unique(lex, d, sizes.test, true, &mut rng, pool)?;
    let own = draw_unique(lex, d, sizes.train - n_leak, true, &mut rng, pool)?;
    let foreign = draw_unique(lex, d.other(), n_leak, false, &mut rng, pool)?;
    let mono_src = draw_unique(lex, d, sizes.mono_src, true, &mut rng, pool)?;
    let mono_tgt_src = draw_unique(lex, d, sizes.mono_tgt, true, &mut rng, pool)?;

    let mut train = gold_pairs(lex, d, own)?;
    let foreign_pairs = gold_pairs(lex, d.other(), foreign)?;
    // Interleave leaked pairs at evenly spaced positions.
    if !foreign_pairs.is_empty() {
        let mut merged = PairCorpus::default();
        let stride = train.len() / foreign_pairs.len() + 1;
        let mut f = foreign_pairs.iter();
        for (i, (s, t, p)) in train.iter().enumerate() {
            if i % stride == 0 {
                if let Some((fs, ft, fp)) = f.next() {
                    merged.push(fs.clone(), ft.clone(), fp);
                }
            }
            merged.push(s.clone(), t.clone(), p);
        }
        for (fs, ft, fp) in f {
            merged.push(fs.clone(), ft.clone(), fp);
        }
        train = merged;
    }

    let mono_tgt_gold = mono_tgt_src.clone();
    let mono_tgt_sents = mono_tgt_src
        .iter()
        .map(|s| lex.gold_translate(d, s))
        .collect::<Result<Vec<_>>>()?;
    let mono_src_gold = mono_src
        .iter()
        .map(|s| lex.gold_translate(d, s))
        .collect::<Result<Vec<_>>>()?;
    let name = lex.spec.name(d).to_string();
    Ok(DomainSplits {
        train,
        mono_src: MonoCorpus::new(mono_src, Side::Source, name.clone()),
        mono_tgt: MonoCorpus::new(mono_tgt_sents, Side::Target, name),
        mono_tgt_gold,
        mono_src_gold,
        dev: gold_pairs(lex, d, dev)?,
        test: gold_pairs(lex, d, test)?,
        leaked: n_leak,
    })
}

/// `n` training pairs plus source and target monolingual corpora of `n`
/// sentences each, all drawn from disjoint sentence pools.
pub fn generate_domain_corpus(
    spec: &DomainSpec,
    d: DomainTag,
    n: usize,
    seed: u64,
) -> Result<(PairCorpus, MonoCorpus, MonoCorpus)> {
    if n == 0 {
        return Err(Error::contract("corpus size must be at least 1"));
    }
    let lex = Lexicon::new(spec)?;
    let sizes = SplitSizes {
        train: n,
        mono_src: n,
        mono_tgt: n,
        dev: 0,
        test: 0,
    };
    let s = generate_splits(&lex, d, sizes, false, seed, &mut SentencePool::new())?;
    Ok((s.train, s.mono_src, s.mono_tgt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::new(&DomainSpec::default()).unwrap()
    }

    fn seq(lex: &Lexicon, text: &str) -> TokenSeq {
        lex.vocab().encode_sentence(text).unwrap()
    }

    #[test]
    fn vocab_size_is_analytic() {
        let s = DomainSpec::default();
        // Images: shared non-conflict, two conflict copies, synonyms, and two
        // copies of the remaining domain terms.
        let images = (s.shared_size - s.conflict_size)
            + 2 * s.conflict_size
            + s.synonym_size
            + 2 * (s.domain_size - s.synonym_size);
        let expected = 4 + s.shared_size + 2 * s.domain_size + images;
        assert_eq!(s.vocab().unwrap().len(), expected);
        assert_eq!(expected, 244);
    }

    #[test]
    fn conflict_tokens_translate_per_domain() {
        let l = lex();
        let x = seq(&l, "s03");
        let a = l.gold_translate(DomainTag::Out, &x).unwrap();
        let b = l.gold_translate(DomainTag::In, &x).unwrap();
        assert_eq!(l.vocab().decode_sentence(a.ids()), "SA03");
        assert_eq!(l.vocab().decode_sentence(b.ids()), "SB03");
    }

    #[test]
    fn reorder_swaps_adjacent_pairs() {
        let l = lex();
        let x = seq(&l, "s11 s12 s13");
        let y = l.gold_translate(DomainTag::In, &x).unwrap();
        assert_eq!(l.vocab().decode_sentence(y.ids()), "S12 S11 S13");
    }

    #[test]
    fn synonyms_share_images() {
        let l = lex();
        let a = l.gold_translate(DomainTag::Out, &seq(&l, "a02 a15")).unwrap();
        let b = l.gold_translate(DomainTag::In, &seq(&l, "b02 b15")).unwrap();
        assert_eq!(l.vocab().decode_sentence(a.ids()), "A15 Y02");
        assert_eq!(l.vocab().decode_sentence(b.ids()), "B15 Y02");
    }

    #[test]
    fn foreign_and_unknown_tokens_rejected() {
        let l = lex();
        assert!(l.gold_translate(DomainTag::In, &seq(&l, "s01 a04")).is_err());
        assert!(l.gold_translate(DomainTag::In, &TokenSeq::new(vec![3]).unwrap()).is_err());
    }

    #[test]
    fn name_collision_rejected() {
        let mut s = DomainSpec::default();
        s.names = ["S".into(), "B".into()];
        assert!(matches!(s.validate(), Err(Error::Contract(_))));
    }

    #[test]
    fn kv_round_trip() {
        let mut s = DomainSpec::default();
        s.mix_rate = 0.25;
        s.names = ["news".into(), "med".into()];
        let back = DomainSpec::from_kv(&s.to_kv()).unwrap();
        assert_eq!(back, s);
        assert!(DomainSpec::from_kv("bogus=1").is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let s = DomainSpec::default();
        let a = generate_domain_corpus(&s, DomainTag::In, 200, 7).unwrap();
        let b = generate_domain_corpus(&s, DomainTag::In, 200, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_domain_corpus(&s, DomainTag::In, 200, 8).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn mono_pools_are_disjoint() {
        let s = DomainSpec::default();
        let lex = Lexicon::new(&s).unwrap();
        let (pairs, src, tgt) = generate_domain_corpus(&s, DomainTag::In, 500, 1).unwrap();
        let hidden: Vec<TokenSeq> = {
            let sizes = SplitSizes {
                train: 500,
                mono_src: 500,
                mono_tgt: 500,
                dev: 0,
                test: 0,
            };
            generate_splits(&lex, DomainTag::In, sizes, false, 1, &mut SentencePool::new())
                .unwrap()
                .mono_tgt_gold
        };
        let src_set: HashSet<&TokenSeq> = src.sents().iter().collect();
        assert!(hidden.iter().all(|h| !src_set.contains(h)));
        assert!(pairs.src().iter().all(|p| !src_set.contains(p)));
        assert_eq!(tgt.len(), 500);
    }

    #[test]
    fn domain_term_rate_matches_mix_rate() {
        let s = DomainSpec::default();
        let lex = Lexicon::new(&s).unwrap();
        let (pairs, _, _) = generate_domain_corpus(&s, DomainTag::In, 1000, 3).unwrap();
        let (mut terms, mut total) = (0usize, 0usize);
        for x in pairs.src() {
            total += x.len();
            terms += x.ids().iter().filter(|&&t| lex.is_term(DomainTag::In, t)).count();
        }
        let rate = terms as f64 / total as f64;
        assert!((rate - s.mix_rate).abs() <= 0.05, "{rate}");
    }

    #[test]
    fn collocation_heads_carry_tails() {
        let s = DomainSpec::default();
        let lex = Lexicon::new(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let terms = lex.term_ids(DomainTag::In).to_vec();
        for _ in 0..300 {
            let x = lex.sample_sentence(DomainTag::In, &mut rng, true);
            let ids = x.ids();
            for (i, &t) in ids.iter().enumerate() {
                if let Some(k) = terms.iter().position(|&u| u == t) {
                    match s.term_kind(k) {
                        TermKind::Head => assert_eq!(ids[i + 1], terms[k + s.collocations]),
                        TermKind::Tail => assert_eq!(ids[i - 1], terms[k - s.collocations]),
                        _ => {}
                    }
                }
            }
            let y = lex.sample_sentence(DomainTag::In, &mut rng, false);
            assert!(y
                .ids()
                .iter()
                .all(|t| terms.iter().position(|u| u == t).map_or(true, |k| s.term_kind(k) != TermKind::Tail)));
        }
    }

    #[test]
    fn splits_are_mutually_disjoint_with_leak() {
        let s = DomainSpec {
            leak_rate: 0.05,
            ..DomainSpec::default()
        };
        let lex = Lexicon::new(&s).unwrap();
        let sizes = SplitSizes {
            train: 400,
            mono_src: 100,
            mono_tgt: 100,
            dev: 50,
            test: 50,
        };
        let mut pool = SentencePool::new();
        let sp = generate_splits(&lex, DomainTag::Out, sizes, true, 5, &mut pool).unwrap();
        assert_eq!(sp.leaked, 20);
        assert_eq!(sp.train.len(), 400);
        let mut all: Vec<&TokenSeq> = sp.train.src().iter().collect();
        all.extend(sp.mono_src.sents());
        all.extend(&sp.mono_tgt_gold);
        all.extend(sp.dev.src());
        all.extend(sp.test.src());
        let n = all.len();
        let uniq: HashSet<&TokenSeq> = all.into_iter().collect();
        assert_eq!(uniq.len(), n);
        let leaked_terms = sp
            .train
            .src()
            .iter()
            .flat_map(|x| x.ids())
            .filter(|&&t| lex.is_term(DomainTag::In, t))
            .count();
        assert!(leaked_terms > 0);
    }
}
