//! Transformer translation models and the dual-source repair model.

pub mod config;
pub mod decode;
pub mod dr;
pub mod gradcheck;
mod layers;
pub mod nmt;

pub use config::{Direction, TransformerConfig};
pub use decode::{decode, decode_batch, dr_decode, dr_decode_batch, incremental_log_probs, DecodeParams, Decoded, Strategy};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use dr::{dr_loss, init_dr, DrModel};
pub use nmt::{init_nmt, nmt_loss, NmtModel};

use crate::autodiff::{Graph, NodeId, ParamSet, Real};
use crate::corpus::{Batch, RepairSide};
use crate::error::Result;

/// What a parameter set belongs to; checkpoints carry it as a tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Nmt(Direction),
    Dr(RepairSide),
}

impl ModelKind {
    pub fn tag(self) -> String {
        match self {
            ModelKind::Nmt(d) => format!("nmt.{}", d.name()),
            ModelKind::Dr(s) => format!("dr.{}", s.name()),
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        let (family, rest) = tag.split_once('.')?;
        match family {
            "nmt" => Direction::parse(rest).map(ModelKind::Nmt),
            "dr" => match rest {
                "src" => Some(ModelKind::Dr(RepairSide::Source)),
                "tgt" => Some(ModelKind::Dr(RepairSide::Target)),
                _ => None,
            },
            _ => None,
        }
    }
}

/// A trainable sequence-to-sequence model whose batches end with the
/// reference column.
pub trait Seq2Seq: Clone {
    fn kind(&self) -> ModelKind;
    fn config(&self) -> &TransformerConfig;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Scalar training loss of `batch` on graph `g`.
    fn loss_graph<R: Real>(&self, g: &mut Graph<R>, batch: &Batch) -> Result<NodeId>;

    /// Loss without dropout.
    fn eval_loss(&self, batch: &Batch) -> Result<f64> {
        let mut g = Graph::<f32>::new();
        let l = self.loss_graph(&mut g, batch)?;
        Ok(g.scalar(l) as f64)
    }
}
