use super::config::TransformerConfig;
use super::layers::{
    decode_logits, decoder_shapes, encode, encoder_shapes, init_params, source_input, target_io, zeroed_memory,
};
use super::{ModelKind, Seq2Seq};
use crate::autodiff::{Graph, NodeId, ParamSet, Real};
use crate::corpus::{Batch, RepairSide};
use crate::error::{Error, Result};

/// Dual-source repair model: one encoder over the draft translation, one
/// over the conditioning sentence, and a decoder whose layers run
/// self-attention, then cross-attention over both encoders (conditioning
/// first by default), then the feed-forward block.
///
/// `config.src_vocab` is the conditioning language, `config.tgt_vocab` the
/// language of drafts and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DrModel {
    pub config: TransformerConfig,
    pub params: ParamSet,
    pub side: RepairSide,
}

pub(crate) fn dr_shapes(cfg: &TransformerConfig) -> Vec<(String, Vec<usize>)> {
    let mut shapes = Vec::new();
    encoder_shapes(cfg, "draft_enc", cfg.tgt_vocab, &mut shapes);
    encoder_shapes(cfg, "cond_enc", cfg.src_vocab, &mut shapes);
    decoder_shapes(cfg, &["cond", "draft"], &mut shapes);
    shapes
}

pub fn init_dr(config: &TransformerConfig, side: RepairSide, seed: u64) -> Result<DrModel> {
    config.validate()?;
    let params = init_params(dr_shapes(config), config.d_model, seed)?;
    Ok(DrModel {
        config: config.clone(),
        params,
        side,
    })
}

impl DrModel {
    /// Decoder logits for a `[draft, conditioning, reference]` batch. With
    /// `zero_condition` the conditioning encoder output is replaced by zeros.
    pub fn logits<R: Real>(
        &self,
        g: &mut Graph<R>,
        batch: &Batch,
        zero_condition: bool,
    ) -> Result<(NodeId, Vec<usize>, Vec<R>)> {
        if batch.columns.len() != 3 {
            return Err(Error::contract("repair batches have three columns"));
        }
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let cfg = &self.config;
        let draft = source_input(&batch.columns[0], cfg.max_len)?;
        let cond = source_input(&batch.columns[1], cfg.max_len)?;
        let (dec_in, targets, weights) = target_io::<R>(&batch.columns[2], cfg.max_len)?;
        let draft_mem = encode(g, &self.params, cfg, "draft_enc", &draft)?;
        let mut cond_mem = encode(g, &self.params, cfg, "cond_enc", &cond)?;
        if zero_condition {
            cond_mem = zeroed_memory(g, &cond_mem)?;
        }
        let memories = if cfg.condition_first {
            [("cond", &cond_mem), ("draft", &draft_mem)]
        } else {
            [("draft", &draft_mem), ("cond", &cond_mem)]
        };
        let logits = decode_logits(g, &self.params, cfg, &dec_in, &memories)?;
        Ok((logits, targets, weights))
    }

    /// Loss with the conditioning encoder output zeroed.
    pub fn ablated_loss(&self, batch: &Batch) -> Result<f64> {
        let mut g = Graph::<f32>::new();
        let (logits, targets, weights) = self.logits(&mut g, batch, true)?;
        let l = g.cross_entropy(logits, &targets, &weights, self.config.eps_ls)?;
        Ok(g.scalar(l) as f64)
    }
}

impl Seq2Seq for DrModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Dr(self.side)
    }

    fn config(&self) -> &TransformerConfig {
        &self.config
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn loss_graph<R: Real>(&self, g: &mut Graph<R>, batch: &Batch) -> Result<NodeId> {
        let (logits, targets, weights) = self.logits(g, batch, false)?;
        g.cross_entropy(logits, &targets, &weights, self.config.eps_ls)
    }
}

/// Mean label-smoothed negative log-likelihood of the reference given draft
/// and conditioning sentence, without dropout.
pub fn dr_loss(model: &DrModel, batch: &Batch) -> Result<f64> {
    model.eval_loss(batch)
}
