use super::config::{Direction, TransformerConfig};
use super::layers::{decode_logits, decoder_shapes, encode, encoder_shapes, init_params, source_input, target_io};
use super::{ModelKind, Seq2Seq};
use crate::autodiff::{Graph, NodeId, ParamSet, Real};
use crate::corpus::Batch;
use crate::error::{Error, Result};

/// Single-source encoder-decoder translation model.
#[derive(Debug, Clone, PartialEq)]
pub struct NmtModel {
    pub config: TransformerConfig,
    pub params: ParamSet,
    pub direction: Direction,
}

pub(crate) fn nmt_shapes(cfg: &TransformerConfig) -> Vec<(String, Vec<usize>)> {
    let mut shapes = Vec::new();
    encoder_shapes(cfg, "enc", cfg.src_vocab, &mut shapes);
    decoder_shapes(cfg, &["cross"], &mut shapes);
    shapes
}

pub fn init_nmt(config: &TransformerConfig, direction: Direction, seed: u64) -> Result<NmtModel> {
    config.validate()?;
    let params = init_params(nmt_shapes(config), config.d_model, seed)?;
    Ok(NmtModel {
        config: config.clone(),
        params,
        direction,
    })
}

impl NmtModel {
    /// Decoder logits for a `[src, tgt]` batch under teacher forcing.
    pub fn logits<R: Real>(&self, g: &mut Graph<R>, batch: &Batch) -> Result<(NodeId, Vec<usize>, Vec<R>)> {
        if batch.columns.len() != 2 {
            return Err(Error::contract("translation batches have two columns"));
        }
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let cfg = &self.config;
        let src = source_input(&batch.columns[0], cfg.max_len)?;
        let (dec_in, targets, weights) = target_io::<R>(&batch.columns[1], cfg.max_len)?;
        let mem = encode(g, &self.params, cfg, "enc", &src)?;
        let logits = decode_logits(g, &self.params, cfg, &dec_in, &[("cross", &mem)])?;
        Ok((logits, targets, weights))
    }
}

impl Seq2Seq for NmtModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Nmt(self.direction)
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
        let (logits, targets, weights) = self.logits(g, batch)?;
        g.cross_entropy(logits, &targets, &weights, self.config.eps_ls)
    }
}

/// Mean label-smoothed cross-entropy per target token (padding excluded),
/// without dropout.
pub fn nmt_loss(model: &NmtModel, batch: &Batch) -> Result<f64> {
    model.eval_loss(batch)
}
