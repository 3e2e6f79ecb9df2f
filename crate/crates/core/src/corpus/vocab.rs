use std::collections::HashMap;

use super::types::TokenSeq;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Bijective token ↔ id table with four reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// Only the reserved entries.
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.add(t);
        }
        v
    }

    /// Builds from a token list in id order; the first four must be the
    /// reserved markers.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED {
            return Err(Error::contract("vocabulary must start with the reserved tokens"));
        }
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in tokens {
            if v.index.contains_key(&t) {
                return Err(Error::contract(format!("duplicate vocabulary token `{t}`")));
            }
            v.add(&t);
        }
        Ok(v)
    }

    /// Returns the id of `token`, appending it when new.
    pub fn add(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Whitespace tokenization; unknown tokens map to `<unk>`.
    pub fn encode_sentence(&self, text: &str) -> Result<TokenSeq> {
        let ids: Vec<u32> = text
            .split_whitespace()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect();
        TokenSeq::new(ids).map_err(|_| Error::contract("cannot encode an empty sentence"))
    }

    pub fn decode_sentence(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Reserved ids, then every whitespace token of the inputs in first-seen order.
pub fn build_vocab<'a, I, S>(corpora: I) -> Vocab
where
    I: IntoIterator<Item = S>,
    S: IntoIterator<Item = &'a str>,
{
    let mut v = Vocab::new();
    for corpus in corpora {
        for line in corpus {
            for tok in line.split_whitespace() {
                v.add(tok);
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_gives_reserved_only() {
        let v = build_vocab(Vec::<Vec<&str>>::new());
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("</s>"), Some(EOS));
    }

    #[test]
    fn first_seen_order_is_stable() {
        let a = build_vocab([vec!["b a", "c b"], vec!["d"]]);
        let b = build_vocab([vec!["b a", "c b"], vec!["d"]]);
        assert_eq!(a, b);
        assert_eq!(&a.tokens()[4..], ["b", "a", "c", "d"]);
    }

    #[test]
    fn encode_decode_round_trip_and_unk() {
        let v = build_vocab([vec!["Alpha beta", "gamma"]]);
        let s = v.encode_sentence("gamma Alpha beta").unwrap();
        assert_eq!(v.decode_sentence(s.ids()), "gamma Alpha beta");
        let s = v.encode_sentence("alpha zeta").unwrap();
        assert_eq!(s.ids(), &[UNK, UNK]);
        assert!(v.encode_sentence("   ").is_err());
    }

    #[test]
    fn from_tokens_validates() {
        assert!(Vocab::from_tokens(vec!["x".into()]).is_err());
        let mut toks: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        toks.push("a".into());
        toks.push("a".into());
        assert!(Vocab::from_tokens(toks).is_err());
    }
}
