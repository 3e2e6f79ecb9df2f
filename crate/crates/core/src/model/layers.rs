//! Parameter layout, initialization and graph construction shared by the
//! translation and repair models.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TransformerConfig;
use crate::autodiff::{sinusoidal_positions, AttnSpec, Graph, NodeId, ParamSet, Real, Tensor};
use crate::corpus::{PaddedIds, BOS, EOS, PAD};
use crate::error::{Error, Result};

pub(crate) const LN_EPS: f64 = 1e-5;

fn attention_shapes(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>)>) {
    for m in ["q", "k", "v", "o"] {
        out.push((format!("{prefix}.{m}.w"), vec![d, d]));
        out.push((format!("{prefix}.{m}.b"), vec![d]));
    }
    norm_shapes(&format!("{prefix}.norm"), d, out);
}

fn norm_shapes(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>)>) {
    out.push((format!("{prefix}.gain"), vec![d]));
    out.push((format!("{prefix}.bias"), vec![d]));
}

fn ffn_shapes(prefix: &str, d: usize, h: usize, out: &mut Vec<(String, Vec<usize>)>) {
    out.push((format!("{prefix}.in.w"), vec![d, h]));
    out.push((format!("{prefix}.in.b"), vec![h]));
    out.push((format!("{prefix}.out.w"), vec![h, d]));
    out.push((format!("{prefix}.out.b"), vec![d]));
    norm_shapes(&format!("{prefix}.norm"), d, out);
}

pub(crate) fn encoder_shapes(cfg: &TransformerConfig, prefix: &str, vocab: usize, out: &mut Vec<(String, Vec<usize>)>) {
    let d = cfg.d_model;
    out.push((format!("{prefix}.embed"), vec![vocab, d]));
    for l in 0..cfg.num_layers {
        attention_shapes(&format!("{prefix}.layer{l}.self"), d, out);
        ffn_shapes(&format!("{prefix}.layer{l}.ffn"), d, cfg.d_hidden, out);
    }
}

/// Decoder with one cross-attention block per name in `cross`.
pub(crate) fn decoder_shapes(cfg: &TransformerConfig, cross: &[&str], out: &mut Vec<(String, Vec<usize>)>) {
    let d = cfg.d_model;
    out.push(("dec.embed".into(), vec![cfg.tgt_vocab, d]));
    for l in 0..cfg.num_layers {
        attention_shapes(&format!("dec.layer{l}.self"), d, out);
        for c in cross {
            attention_shapes(&format!("dec.layer{l}.{c}"), d, out);
        }
        ffn_shapes(&format!("dec.layer{l}.ffn"), d, cfg.d_hidden, out);
    }
    if !cfg.tie_embeddings {
        out.push(("dec.out.w".into(), vec![d, cfg.tgt_vocab]));
    }
    out.push(("dec.out.b".into(), vec![cfg.tgt_vocab]));
}

/// Seeded initialization, drawn in sorted parameter order: embeddings
/// uniform with variance `1/d`, weight matrices Xavier-uniform, biases zero,
/// layer-norm gains one.
pub(crate) fn init_params(shapes: Vec<(String, Vec<usize>)>, d_model: usize, seed: u64) -> Result<ParamSet> {
    let mut shapes = shapes;
    shapes.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    for (id, shape) in shapes {
        let n: usize = shape.iter().product();
        let values: Vec<f32> = if id.ends_with(".embed") {
            let a = (3.0 / d_model as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-a..a) as f32).collect()
        } else if id.ends_with(".w") {
            let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-a..a) as f32).collect()
        } else if id.ends_with(".gain") {
            vec![1.0; n]
        } else {
            vec![0.0; n]
        };
        ps.insert(id, Tensor::new(shape, values)?)?;
    }
    Ok(ps)
}

/// Padded id matrix fed to an embedding, with per-row valid lengths.
#[derive(Debug, Clone)]
pub(crate) struct SeqInput {
    pub ids: Vec<usize>,
    pub lens: Vec<usize>,
    pub width: usize,
}

impl SeqInput {
    pub fn batch(&self) -> usize {
        self.lens.len()
    }
}

/// Encoder input: each sentence followed by end-of-sentence.
pub(crate) fn source_input(col: &PaddedIds, max_len: usize) -> Result<SeqInput> {
    let width = col.width + 1;
    check_width(width, max_len)?;
    let mut ids = vec![PAD as usize; col.rows() * width];
    for r in 0..col.rows() {
        let row = col.row(r);
        for (t, &id) in row.iter().enumerate() {
            ids[r * width + t] = id as usize;
        }
        ids[r * width + row.len()] = EOS as usize;
    }
    Ok(SeqInput {
        ids,
        lens: col.lens.iter().map(|l| l + 1).collect(),
        width,
    })
}

/// Teacher-forcing decoder input (`<s>` + sentence), targets (sentence +
/// `</s>`) and per-position weights (zero on padding).
pub(crate) fn target_io<R: Real>(col: &PaddedIds, max_len: usize) -> Result<(SeqInput, Vec<usize>, Vec<R>)> {
    let width = col.width + 1;
    check_width(width, max_len)?;
    let n = col.rows() * width;
    let mut ids = vec![PAD as usize; n];
    let mut targets = vec![PAD as usize; n];
    let mut weights = vec![R::zero(); n];
    for r in 0..col.rows() {
        let row = col.row(r);
        ids[r * width] = BOS as usize;
        for (t, &id) in row.iter().enumerate() {
            ids[r * width + t + 1] = id as usize;
            targets[r * width + t] = id as usize;
        }
        targets[r * width + row.len()] = EOS as usize;
        for w in &mut weights[r * width..r * width + row.len() + 1] {
            *w = R::one();
        }
    }
    let lens = col.lens.iter().map(|l| l + 1).collect();
    Ok((SeqInput { ids, lens, width }, targets, weights))
}

fn check_width(width: usize, max_len: usize) -> Result<()> {
    if width > max_len {
        return Err(Error::contract(format!(
            "sequence of {width} positions exceeds max_len {max_len}"
        )));
    }
    Ok(())
}

/// Scaled token embedding plus fixed sinusoidal positions.
fn embed<R: Real>(g: &mut Graph<R>, params: &ParamSet, cfg: &TransformerConfig, table: &str, inp: &SeqInput) -> Result<NodeId> {
    let d = cfg.d_model;
    let t = g.param(params, table)?;
    let e = g.gather(t, &inp.ids)?;
    let e = g.scale(e, R::lit((d as f64).sqrt()));
    let pe = sinusoidal_positions(inp.width, d);
    let mut pos = Vec::with_capacity(inp.ids.len() * d);
    for _ in 0..inp.batch() {
        pos.extend(pe.iter().map(|&v| R::from_f32_lossy(v)));
    }
    let p = g.input(inp.ids.len(), d, pos)?;
    let x = g.add(e, p)?;
    Ok(g.dropout(x))
}

fn affine<R: Real>(g: &mut Graph<R>, params: &ParamSet, prefix: &str, x: NodeId) -> Result<NodeId> {
    let w = g.param(params, &format!("{prefix}.w"))?;
    let b = g.param(params, &format!("{prefix}.b"))?;
    g.linear(x, w, Some(b))
}

/// Multi-head attention of `xq` over `xkv`, followed by the residual
/// connection and layer norm.
fn attention_block<R: Real>(
    g: &mut Graph<R>,
    params: &ParamSet,
    prefix: &str,
    xq: NodeId,
    xkv: NodeId,
    spec: AttnSpec,
) -> Result<NodeId> {
    let q = affine(g, params, &format!("{prefix}.q"), xq)?;
    let k = affine(g, params, &format!("{prefix}.k"), xkv)?;
    let v = affine(g, params, &format!("{prefix}.v"), xkv)?;
    let a = g.attention(q, k, v, spec)?;
    let o = affine(g, params, &format!("{prefix}.o"), a)?;
    residual_norm(g, params, &format!("{prefix}.norm"), xq, o)
}

fn ffn_block<R: Real>(g: &mut Graph<R>, params: &ParamSet, prefix: &str, x: NodeId) -> Result<NodeId> {
    let h = affine(g, params, &format!("{prefix}.in"), x)?;
    let h = g.relu(h);
    let o = affine(g, params, &format!("{prefix}.out"), h)?;
    residual_norm(g, params, &format!("{prefix}.norm"), x, o)
}

fn residual_norm<R: Real>(g: &mut Graph<R>, params: &ParamSet, prefix: &str, x: NodeId, y: NodeId) -> Result<NodeId> {
    let y = g.dropout(y);
    let s = g.add(x, y)?;
    let gain = g.param(params, &format!("{prefix}.gain"))?;
    let bias = g.param(params, &format!("{prefix}.bias"))?;
    g.layer_norm(s, gain, bias, R::lit(LN_EPS))
}

/// Encoder output for one input column.
#[derive(Debug, Clone)]
pub(crate) struct Memory {
    pub node: NodeId,
    pub lens: Vec<usize>,
    pub width: usize,
}

pub(crate) fn encode<R: Real>(
    g: &mut Graph<R>,
    params: &ParamSet,
    cfg: &TransformerConfig,
    prefix: &str,
    inp: &SeqInput,
) -> Result<Memory> {
    let mut x = embed(g, params, cfg, &format!("{prefix}.embed"), inp)?;
    for l in 0..cfg.num_layers {
        let spec = AttnSpec {
            batch: inp.batch(),
            heads: cfg.num_heads,
            q_len: inp.width,
            k_len: inp.width,
            key_lens: inp.lens.clone(),
            causal: false,
        };
        x = attention_block(g, params, &format!("{prefix}.layer{l}.self"), x, x, spec)?;
        x = ffn_block(g, params, &format!("{prefix}.layer{l}.ffn"), x)?;
    }
    Ok(Memory {
        node: x,
        lens: inp.lens.clone(),
        width: inp.width,
    })
}

/// Decoder logits `[batch * width, tgt_vocab]`. `memories` pairs each
/// cross-attention block name with the encoder output it attends to, in
/// application order.
pub(crate) fn decode_logits<R: Real>(
    g: &mut Graph<R>,
    params: &ParamSet,
    cfg: &TransformerConfig,
    inp: &SeqInput,
    memories: &[(&str, &Memory)],
) -> Result<NodeId> {
    let mut x = embed(g, params, cfg, "dec.embed", inp)?;
    for l in 0..cfg.num_layers {
        let spec = AttnSpec {
            batch: inp.batch(),
            heads: cfg.num_heads,
            q_len: inp.width,
            k_len: inp.width,
            key_lens: inp.lens.clone(),
            causal: true,
        };
        x = attention_block(g, params, &format!("dec.layer{l}.self"), x, x, spec)?;
        for (name, mem) in memories {
            let spec = AttnSpec {
                batch: inp.batch(),
                heads: cfg.num_heads,
                q_len: inp.width,
                k_len: mem.width,
                key_lens: mem.lens.clone(),
                causal: false,
            };
            x = attention_block(g, params, &format!("dec.layer{l}.{name}"), x, mem.node, spec)?;
        }
        x = ffn_block(g, params, &format!("dec.layer{l}.ffn"), x)?;
    }
    let b = g.param(params, "dec.out.b")?;
    if cfg.tie_embeddings {
        let e = g.param(params, "dec.embed")?;
        g.linear_t(x, e, Some(b))
    } else {
        let w = g.param(params, "dec.out.w")?;
        g.linear(x, w, Some(b))
    }
}

/// A memory of the same layout whose values are all zero.
pub(crate) fn zeroed_memory<R: Real>(g: &mut Graph<R>, mem: &Memory) -> Result<Memory> {
    let (r, c) = g.shape(mem.node);
    let node = g.input(r, c, vec![R::zero(); r * c])?;
    Ok(Memory {
        node,
        lens: mem.lens.clone(),
        width: mem.width,
    })
}
