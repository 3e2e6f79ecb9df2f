use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and regularization of a transformer encoder-decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_hidden: usize,
    pub dropout: f64,
    pub eps_ls: f64,
    /// Longest sequence including the boundary marker.
    pub max_len: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    /// Reuse the decoder input embedding as the output projection.
    pub tie_embeddings: bool,
    /// In repair models, attend to the conditioning sentence before the draft.
    pub condition_first: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            num_heads: 4,
            d_model: 64,
            d_hidden: 128,
            dropout: 0.1,
            eps_ls: 0.2,
            max_len: 16,
            src_vocab: 0,
            tgt_vocab: 0,
            tie_embeddings: false,
            condition_first: true,
        }
    }
}

impl TransformerConfig {
    pub fn with_vocab(mut self, src_vocab: usize, tgt_vocab: usize) -> Self {
        self.src_vocab = src_vocab;
        self.tgt_vocab = tgt_vocab;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::contract(format!("transformer config: {m}")));
        if self.num_layers == 0 || self.num_heads == 0 || self.d_model < 2 || self.d_hidden == 0 {
            return fail("layers, heads and widths must be positive".into());
        }
        if self.d_model % self.num_heads != 0 {
            return fail(format!("d_model {} not divisible by {} heads", self.d_model, self.num_heads));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.eps_ls) {
            return fail("dropout and label smoothing must lie in [0, 1)".into());
        }
        if self.max_len < 2 {
            return fail("max_len must be at least 2".into());
        }
        // Ids 0..4 are reserved markers.
        if self.src_vocab <= 4 || self.tgt_vocab <= 4 {
            return fail(format!(
                "vocabularies of {} / {} leave no room beyond the reserved ids",
                self.src_vocab, self.tgt_vocab
            ));
        }
        Ok(())
    }
}

/// Translation direction of an NMT model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    SrcToTgt,
    TgtToSrc,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::SrcToTgt => "src2tgt",
            Direction::TgtToSrc => "tgt2src",
        }
    }

    pub fn reverse(self) -> Self {
        match self {
            Direction::SrcToTgt => Direction::TgtToSrc,
            Direction::TgtToSrc => Direction::SrcToTgt,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "src2tgt" => Some(Direction::SrcToTgt),
            "tgt2src" => Some(Direction::TgtToSrc),
            _ => None,
        }
    }
}
