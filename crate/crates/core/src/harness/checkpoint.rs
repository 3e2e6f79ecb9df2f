//! Binary checkpoints: magic, format version, model kind tag, JSON config
//! echo, then every parameter in sorted id order as little-endian f32.

use std::fs;
use std::path::Path;

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::model::{init_dr, init_nmt, DrModel, ModelKind, NmtModel, Seq2Seq, TransformerConfig};

const MAGIC: &[u8; 8] = b"DRBTCKPT";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

pub fn encode_checkpoint<M: Seq2Seq>(model: &M) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_bytes(&mut out, model.kind().tag().as_bytes());
    put_bytes(&mut out, serde_json::to_string(model.config())?.as_bytes());
    put_u32(&mut out, model.params().len() as u32);
    for (id, t) in model.params().iter() {
        put_bytes(&mut out, id.as_bytes());
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes atomically: a temporary sibling file is renamed into place.
pub fn save_checkpoint<M: Seq2Seq>(model: &M, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("non-UTF-8 string".into()))
    }
}

/// Decoded checkpoint contents before they are bound to a model type.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCheckpoint {
    pub kind: ModelKind,
    pub config: TransformerConfig,
    pub params: ParamSet,
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<RawCheckpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let tag = r.string()?;
    let kind = ModelKind::parse(&tag).ok_or_else(|| Error::Checkpoint(format!("unknown model kind `{tag}`")))?;
    let config: TransformerConfig = serde_json::from_str(&r.string()?)?;
    let n = r.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..n {
        let id = r.string()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().product::<usize>();
        let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        params.insert(id, Tensor::new(shape, values)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(RawCheckpoint { kind, config, params })
}

fn read(path: &Path) -> Result<RawCheckpoint> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Parameter ids and shapes must equal those of a model built from the
/// stored config.
fn check_shapes(expected: &ParamSet, got: &ParamSet) -> Result<()> {
    let want: Vec<(&String, &[usize])> = expected.iter().map(|(k, t)| (k, t.shape())).collect();
    let have: Vec<(&String, &[usize])> = got.iter().map(|(k, t)| (k, t.shape())).collect();
    if want != have {
        return Err(Error::Checkpoint("parameter ids or shapes do not match the config".into()));
    }
    Ok(())
}

pub fn load_nmt(path: &Path) -> Result<NmtModel> {
    let raw = read(path)?;
    let ModelKind::Nmt(direction) = raw.kind else {
        return Err(Error::Checkpoint(format!("expected a translation model, found `{}`", raw.kind.tag())));
    };
    let mut m = init_nmt(&raw.config, direction, 0)?;
    check_shapes(&m.params, &raw.params)?;
    m.params = raw.params;
    Ok(m)
}

pub fn load_dr(path: &Path) -> Result<DrModel> {
    let raw = read(path)?;
    let ModelKind::Dr(side) = raw.kind else {
        return Err(Error::Checkpoint(format!("expected a repair model, found `{}`", raw.kind.tag())));
    };
    let mut m = init_dr(&raw.config, side, 0)?;
    check_shapes(&m.params, &raw.params)?;
    m.params = raw.params;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::RepairSide;
    use crate::model::Direction;

    fn cfg() -> TransformerConfig {
        TransformerConfig {
            d_model: 8,
            d_hidden: 8,
            num_heads: 2,
            ..TransformerConfig::default()
        }
        .with_vocab(12, 12)
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let m = init_nmt(&cfg(), Direction::TgtToSrc, 3).unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&m, &p).unwrap();
        assert_eq!(load_nmt(&p).unwrap(), m);
        let d = init_dr(&cfg(), RepairSide::Target, 4).unwrap();
        save_checkpoint(&d, &p).unwrap();
        assert_eq!(load_dr(&p).unwrap(), d);
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = init_nmt(&cfg(), Direction::SrcToTgt, 3).unwrap();
        let bytes = encode_checkpoint(&m).unwrap();
        let p = dir.path().join("m.ckpt");
        for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
            fs::write(&p, &bytes[..cut]).unwrap();
            assert!(load_nmt(&p).is_err(), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        fs::write(&p, &extra).unwrap();
        assert!(load_nmt(&p).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        fs::write(&p, &v2).unwrap();
        assert!(matches!(load_nmt(&p), Err(Error::Checkpoint(m)) if m.contains("version")));
    }

    #[test]
    fn kind_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&init_nmt(&cfg(), Direction::SrcToTgt, 1).unwrap(), &p).unwrap();
        assert!(load_dr(&p).is_err());
        save_checkpoint(&init_dr(&cfg(), RepairSide::Source, 1).unwrap(), &p).unwrap();
        assert!(load_nmt(&p).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut m = init_nmt(&cfg(), Direction::SrcToTgt, 1).unwrap();
        m.config.d_hidden = 16;
        let bytes = encode_checkpoint(&m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        fs::write(&p, bytes).unwrap();
        assert!(load_nmt(&p).is_err());
    }
}
