//! Batched beam search with an incremental (key/value cached) decoder.

use serde::{Deserialize, Serialize};

use super::config::TransformerConfig;
use super::dr::DrModel;
use super::layers::{encode, source_input, Memory, LN_EPS};
use super::nmt::NmtModel;
use crate::autodiff::{layer_norm_row, matmul, sinusoidal_positions, Graph, MatRef, ParamSet};
use crate::corpus::{Batch, PaddedIds, TokenSeq, BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Greedy,
    Beam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub strategy: Strategy,
    pub beam_size: usize,
    /// Exponent α of the length normalization `(Σ log p) / len^α`.
    pub length_penalty: f64,
    /// Output tokens allowed before the end-of-sentence marker.
    pub max_decode_len: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self::beam(4, 0.6, 15)
    }
}

impl DecodeParams {
    pub fn greedy(max_decode_len: usize) -> Self {
        Self {
            strategy: Strategy::Greedy,
            beam_size: 1,
            length_penalty: 0.0,
            max_decode_len,
        }
    }

    pub fn beam(beam_size: usize, length_penalty: f64, max_decode_len: usize) -> Self {
        Self {
            strategy: Strategy::Beam,
            beam_size,
            length_penalty,
            max_decode_len,
        }
    }

    pub fn effective_beam(&self) -> usize {
        match self.strategy {
            Strategy::Greedy => 1,
            Strategy::Beam => self.beam_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_decode_len == 0 {
            return Err(Error::contract("beam size and decode length must be at least 1"));
        }
        Ok(())
    }
}

/// Result of decoding one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<u32>,
    /// No end-of-sentence was produced within the length budget.
    pub truncated: bool,
    /// Length-normalized log-probability.
    pub score: f64,
}

impl Decoded {
    /// The output as a sentence, or `None` when truncated or empty.
    pub fn sentence(&self) -> Option<TokenSeq> {
        if self.truncated {
            return None;
        }
        TokenSeq::new(self.tokens.clone()).ok()
    }
}

struct AttW<'a> {
    q: (&'a [f32], &'a [f32]),
    k: (&'a [f32], &'a [f32]),
    v: (&'a [f32], &'a [f32]),
    o: (&'a [f32], &'a [f32]),
    norm: (&'a [f32], &'a [f32]),
}

struct LayerW<'a> {
    self_att: AttW<'a>,
    cross: Vec<AttW<'a>>,
    ffn_in: (&'a [f32], &'a [f32]),
    ffn_out: (&'a [f32], &'a [f32]),
    ffn_norm: (&'a [f32], &'a [f32]),
}

/// Borrowed decoder weights.
struct DecoderW<'a> {
    cfg: &'a TransformerConfig,
    embed: &'a [f32],
    layers: Vec<LayerW<'a>>,
    out_w: Option<&'a [f32]>,
    out_b: &'a [f32],
}

fn get<'a>(ps: &'a ParamSet, id: &str) -> Result<&'a [f32]> {
    Ok(ps.require(id)?.values())
}

fn pair<'a>(ps: &'a ParamSet, prefix: &str, a: &str, b: &str) -> Result<(&'a [f32], &'a [f32])> {
    Ok((get(ps, &format!("{prefix}.{a}"))?, get(ps, &format!("{prefix}.{b}"))?))
}

fn att_w<'a>(ps: &'a ParamSet, prefix: &str) -> Result<AttW<'a>> {
    Ok(AttW {
        q: pair(ps, prefix, "q.w", "q.b")?,
        k: pair(ps, prefix, "k.w", "k.b")?,
        v: pair(ps, prefix, "v.w", "v.b")?,
        o: pair(ps, prefix, "o.w", "o.b")?,
        norm: pair(ps, prefix, "norm.gain", "norm.bias")?,
    })
}

impl<'a> DecoderW<'a> {
    fn new(cfg: &'a TransformerConfig, ps: &'a ParamSet, cross: &[&str]) -> Result<Self> {
        let mut layers = Vec::new();
        for l in 0..cfg.num_layers {
            let p = format!("dec.layer{l}");
            layers.push(LayerW {
                self_att: att_w(ps, &format!("{p}.self"))?,
                cross: cross
                    .iter()
                    .map(|c| att_w(ps, &format!("{p}.{c}")))
                    .collect::<Result<_>>()?,
                ffn_in: pair(ps, &format!("{p}.ffn"), "in.w", "in.b")?,
                ffn_out: pair(ps, &format!("{p}.ffn"), "out.w", "out.b")?,
                ffn_norm: pair(ps, &format!("{p}.ffn"), "norm.gain", "norm.bias")?,
            });
        }
        Ok(Self {
            cfg,
            embed: get(ps, "dec.embed")?,
            layers,
            out_w: if cfg.tie_embeddings { None } else { Some(get(ps, "dec.out.w")?) },
            out_b: get(ps, "dec.out.b")?,
        })
    }
}

/// `x · w + b` for `x` of `rows × din`.
fn affine(x: &[f32], rows: usize, din: usize, (w, b): (&[f32], &[f32])) -> Vec<f32> {
    let dout = b.len();
    let mut out = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        out.extend_from_slice(b);
    }
    matmul(MatRef::new(x, rows, din), MatRef::new(w, din, dout), &mut out, true);
    out
}

fn residual_norm(x: &mut [f32], y: &[f32], d: usize, (gain, bias): (&[f32], &[f32])) {
    let mut tmp = vec![0.0f32; d];
    for (xr, yr) in x.chunks_mut(d).zip(y.chunks(d)) {
        for c in 0..d {
            tmp[c] = xr[c] + yr[c];
        }
        layer_norm_row(&tmp, gain, bias, LN_EPS as f32, xr, None);
    }
}

/// Attention of one query row over `len` key/value rows, per head.
fn attend(q: &[f32], keys: &[f32], values: &[f32], len: usize, heads: usize, out: &mut [f32]) {
    let d = q.len();
    let hd = d / heads;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut p = vec![0.0f32; len];
    for h in 0..heads {
        let c0 = h * hd;
        let qh = &q[c0..c0 + hd];
        let mut max = f32::NEG_INFINITY;
        for j in 0..len {
            let s = crate::autodiff::dot(qh, &keys[j * d + c0..j * d + c0 + hd]) * scale;
            p[j] = s;
            if s > max {
                max = s;
            }
        }
        let mut sum = 0.0f32;
        for pj in p.iter_mut() {
            *pj = (*pj - max).exp();
            sum += *pj;
        }
        let inv = 1.0 / sum;
        let o = &mut out[c0..c0 + hd];
        o.fill(0.0);
        for j in 0..len {
            let w = p[j] * inv;
            let vr = &values[j * d + c0..j * d + c0 + hd];
            for c in 0..hd {
                o[c] += w * vr[c];
            }
        }
    }
}

/// Keys and values of one source sentence for every cross-attention block,
/// indexed `[layer][block]`.
struct SourceMemory {
    kv: Vec<Vec<(Vec<f32>, Vec<f32>)>>,
}

/// Per-hypothesis self-attention cache, indexed `[layer]`.
#[derive(Clone)]
struct RowCache {
    k: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

struct IncrementalDecoder<'a> {
    w: DecoderW<'a>,
    pe: Vec<f32>,
    sources: Vec<SourceMemory>,
}

impl<'a> IncrementalDecoder<'a> {
    /// `memories[m]` is one encoder output (graph values, `batch × width`
    /// rows) for the `m`-th cross-attention block.
    fn new(w: DecoderW<'a>, memories: &[(&[f32], &Memory)]) -> Self {
        let cfg = w.cfg;
        let d = cfg.d_model;
        let batch = memories[0].1.lens.len();
        let mut sources = Vec::with_capacity(batch);
        for b in 0..batch {
            let mut kv = Vec::with_capacity(cfg.num_layers);
            for layer in &w.layers {
                let mut blocks = Vec::with_capacity(memories.len());
                for (m, (vals, mem)) in memories.iter().enumerate() {
                    let len = mem.lens[b];
                    let rows = &vals[b * mem.width * d..(b * mem.width + len) * d];
                    let att = &layer.cross[m];
                    blocks.push((affine(rows, len, d, att.k), affine(rows, len, d, att.v)));
                }
                kv.push(blocks);
            }
            sources.push(SourceMemory { kv });
        }
        let pe = sinusoidal_positions(cfg.max_len, d);
        Self { w, pe, sources }
    }

    /// Log-probabilities of the next token for each row.
    fn step(&self, tokens: &[u32], pos: usize, src_of: &[usize], caches: &mut [RowCache], mem_lens: &[Vec<usize>]) -> Vec<f32> {
        let cfg = self.w.cfg;
        let d = cfg.d_model;
        let n = tokens.len();
        let scale = (d as f32).sqrt();
        let mut x = Vec::with_capacity(n * d);
        for &t in tokens {
            let e = &self.w.embed[t as usize * d..(t as usize + 1) * d];
            let p = &self.pe[pos * d..(pos + 1) * d];
            x.extend(e.iter().zip(p).map(|(&e, &p)| e * scale + p));
        }
        let mut att = vec![0.0f32; n * d];
        for (l, layer) in self.w.layers.iter().enumerate() {
            let sa = &layer.self_att;
            let q = affine(&x, n, d, sa.q);
            let k = affine(&x, n, d, sa.k);
            let v = affine(&x, n, d, sa.v);
            for r in 0..n {
                let c = &mut caches[r];
                c.k[l].extend_from_slice(&k[r * d..(r + 1) * d]);
                c.v[l].extend_from_slice(&v[r * d..(r + 1) * d]);
                attend(&q[r * d..(r + 1) * d], &c.k[l], &c.v[l], pos + 1, cfg.num_heads, &mut att[r * d..(r + 1) * d]);
            }
            let o = affine(&att, n, d, sa.o);
            residual_norm(&mut x, &o, d, sa.norm);
            for (m, ca) in layer.cross.iter().enumerate() {
                let q = affine(&x, n, d, ca.q);
                for r in 0..n {
                    let s = src_of[r];
                    let (keys, values) = &self.sources[s].kv[l][m];
                    attend(&q[r * d..(r + 1) * d], keys, values, mem_lens[m][s], cfg.num_heads, &mut att[r * d..(r + 1) * d]);
                }
                let o = affine(&att, n, d, ca.o);
                residual_norm(&mut x, &o, d, ca.norm);
            }
            let mut h = affine(&x, n, d, layer.ffn_in);
            for v in &mut h {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let o = affine(&h, n, cfg.d_hidden, layer.ffn_out);
            residual_norm(&mut x, &o, d, layer.ffn_norm);
        }
        let vocab = cfg.tgt_vocab;
        let mut logits = Vec::with_capacity(n * vocab);
        for _ in 0..n {
            logits.extend_from_slice(self.w.out_b);
        }
        let w = match self.w.out_w {
            Some(w) => MatRef::new(w, d, vocab),
            None => MatRef::new(self.w.embed, vocab, d).t(),
        };
        matmul(MatRef::new(&x, n, d), w, &mut logits, true);
        for row in logits.chunks_mut(vocab) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f32>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        logits
    }
}

struct Hyp {
    tokens: Vec<u32>,
    score: f64,
    row: usize,
}

struct Finished {
    tokens: Vec<u32>,
    norm: f64,
}

/// Beam search for every source of the batch. Candidates are ranked by
/// score, ties broken by hypothesis rank then lower token id.
fn beam_search(dec: &IncrementalDecoder<'_>, mem_lens: &[Vec<usize>], params: &DecodeParams) -> Vec<Decoded> {
    let cfg = dec.w.cfg;
    let beam = params.effective_beam();
    let max_out = params.max_decode_len.min(cfg.max_len - 1);
    let alpha = params.length_penalty;
    let norm = |score: f64, len: usize| if alpha == 0.0 { score } else { score / (len as f64).powf(alpha) };
    let n_src = dec.sources.len();
    let empty_cache = RowCache {
        k: vec![Vec::new(); cfg.num_layers],
        v: vec![Vec::new(); cfg.num_layers],
    };
    let mut caches: Vec<RowCache> = vec![empty_cache; n_src];
    let mut alive: Vec<Vec<Hyp>> = (0..n_src)
        .map(|s| {
            vec![Hyp {
                tokens: Vec::new(),
                score: 0.0,
                row: s,
            }]
        })
        .collect();
    let mut finished: Vec<Vec<Finished>> = (0..n_src).map(|_| Vec::new()).collect();
    let mut last_alive: Vec<Option<(Vec<u32>, f64)>> = vec![None; n_src];
    let vocab = cfg.tgt_vocab;

    for pos in 0..=max_out {
        let mut tokens = Vec::new();
        let mut src_of = Vec::new();
        for (s, hyps) in alive.iter().enumerate() {
            for h in hyps {
                tokens.push(*h.tokens.last().unwrap_or(&BOS));
                src_of.push(s);
            }
        }
        if tokens.is_empty() {
            break;
        }
        let logp = dec.step(&tokens, pos, &src_of, &mut caches, mem_lens);
        let mut new_caches = Vec::with_capacity(caches.len());
        for s in 0..n_src {
            if alive[s].is_empty() {
                continue;
            }
            let mut cands: Vec<(f64, usize, u32)> = Vec::with_capacity(alive[s].len() * vocab);
            for (rank, h) in alive[s].iter().enumerate() {
                let row = &logp[h.row * vocab..(h.row + 1) * vocab];
                for (t, &lp) in row.iter().enumerate() {
                    let t = t as u32;
                    if t == PAD || t == BOS || t == UNK || (t == EOS && pos == 0) {
                        continue;
                    }
                    cands.push((h.score + lp as f64, rank, t));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::with_capacity(beam);
            for &(score, rank, t) in cands.iter().take(2 * beam) {
                let parent = &alive[s][rank];
                if t == EOS {
                    finished[s].push(Finished {
                        tokens: parent.tokens.clone(),
                        norm: norm(score, parent.tokens.len() + 1),
                    });
                    if finished[s].len() >= beam {
                        break;
                    }
                } else if pos < max_out && next.len() < beam {
                    let mut tokens = parent.tokens.clone();
                    tokens.push(t);
                    next.push((tokens, score, parent.row));
                }
                if next.len() >= beam {
                    break;
                }
            }
            if let Some(best) = alive[s].first() {
                last_alive[s] = Some((best.tokens.clone(), best.score));
            }
            if finished[s].len() >= beam {
                next.clear();
            }
            alive[s] = next
                .into_iter()
                .map(|(tokens, score, parent_row)| {
                    new_caches.push(caches[parent_row].clone());
                    Hyp {
                        tokens,
                        score,
                        row: new_caches.len() - 1,
                    }
                })
                .collect();
        }
        caches = new_caches;
    }

    (0..n_src)
        .map(|s| {
            let mut best: Option<&Finished> = None;
            for f in &finished[s] {
                if best.map_or(true, |b| f.norm > b.norm) {
                    best = Some(f);
                }
            }
            match best {
                Some(f) => Decoded {
                    tokens: f.tokens.clone(),
                    truncated: false,
                    score: f.norm,
                },
                None => {
                    let (tokens, score) = alive[s]
                        .first()
                        .map(|h| (h.tokens.clone(), h.score))
                        .or_else(|| last_alive[s].clone())
                        .unwrap_or_default();
                    let len = tokens.len().max(1);
                    Decoded {
                        tokens,
                        truncated: true,
                        score: norm(score, len),
                    }
                }
            }
        })
        .collect()
}

const DECODE_CHUNK: usize = 64;

fn padded(rows: &[&TokenSeq]) -> PaddedIds {
    PaddedIds::new(rows)
}

fn check_inputs(inputs: &[&TokenSeq], cfg: &TransformerConfig) -> Result<()> {
    if let Some(s) = inputs.iter().find(|s| s.len() + 1 > cfg.max_len) {
        return Err(Error::contract(format!(
            "input of {} tokens exceeds max_len {}",
            s.len(),
            cfg.max_len
        )));
    }
    Ok(())
}

/// Decodes every source in fixed-size chunks, distributing chunks over
/// `threads` workers. Output is independent of the thread count.
fn chunked<F>(n: usize, threads: usize, f: F) -> Result<Vec<Decoded>>
where
    F: Fn(std::ops::Range<usize>) -> Result<Vec<Decoded>> + Sync,
{
    let chunks: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(DECODE_CHUNK)
        .map(|s| s..(s + DECODE_CHUNK).min(n))
        .collect();
    let threads = threads.max(1).min(chunks.len().max(1));
    if threads == 1 {
        let mut out = Vec::with_capacity(n);
        for c in chunks {
            out.extend(f(c)?);
        }
        return Ok(out);
    }
    let results: Vec<Result<Vec<Decoded>>> = std::thread::scope(|scope| {
        let f = &f;
        let chunks = &chunks;
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                scope.spawn(move || {
                    chunks
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| i % threads == w)
                        .map(|(i, c)| (i, f(c.clone())))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut all: Vec<(usize, Result<Vec<Decoded>>)> =
            handles.into_iter().flat_map(|h| h.join().expect("decode worker panicked")).collect();
        all.sort_by_key(|(i, _)| *i);
        all.into_iter().map(|(_, r)| r).collect()
    });
    let mut out = Vec::with_capacity(n);
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Translates every sentence of `srcs`.
pub fn decode_batch(model: &NmtModel, srcs: &[TokenSeq], params: &DecodeParams, threads: usize) -> Result<Vec<Decoded>> {
    params.validate()?;
    let cfg = &model.config;
    check_inputs(&srcs.iter().collect::<Vec<_>>(), cfg)?;
    chunked(srcs.len(), threads, |range| {
        let rows: Vec<&TokenSeq> = srcs[range].iter().collect();
        let col = padded(&rows);
        let inp = source_input(&col, cfg.max_len)?;
        let mut g = Graph::<f32>::new();
        let mem = encode(&mut g, &model.params, cfg, "enc", &inp)?;
        let w = DecoderW::new(cfg, &model.params, &["cross"])?;
        let dec = IncrementalDecoder::new(w, &[(g.value(mem.node), &mem)]);
        Ok(beam_search(&dec, &[mem.lens.clone()], params))
    })
}

pub fn decode(model: &NmtModel, src: &TokenSeq, params: &DecodeParams) -> Result<Decoded> {
    Ok(decode_batch(model, std::slice::from_ref(src), params, 1)?.remove(0))
}

/// Repairs each `drafts[i]` given `conditions[i]`.
pub fn dr_decode_batch(
    model: &DrModel,
    drafts: &[TokenSeq],
    conditions: &[TokenSeq],
    params: &DecodeParams,
    threads: usize,
) -> Result<Vec<Decoded>> {
    params.validate()?;
    if drafts.len() != conditions.len() {
        return Err(Error::contract("drafts and conditioning sentences differ in count"));
    }
    let cfg = &model.config;
    check_inputs(&drafts.iter().chain(conditions).collect::<Vec<_>>(), cfg)?;
    chunked(drafts.len(), threads, |range| {
        let d_rows: Vec<&TokenSeq> = drafts[range.clone()].iter().collect();
        let c_rows: Vec<&TokenSeq> = conditions[range].iter().collect();
        let d_inp = source_input(&padded(&d_rows), cfg.max_len)?;
        let c_inp = source_input(&padded(&c_rows), cfg.max_len)?;
        let mut g = Graph::<f32>::new();
        let d_mem = encode(&mut g, &model.params, cfg, "draft_enc", &d_inp)?;
        let c_mem = encode(&mut g, &model.params, cfg, "cond_enc", &c_inp)?;
        let (names, mems) = if cfg.condition_first {
            (["cond", "draft"], [&c_mem, &d_mem])
        } else {
            (["draft", "cond"], [&d_mem, &c_mem])
        };
        let w = DecoderW::new(cfg, &model.params, &names)?;
        let dec = IncrementalDecoder::new(w, &[(g.value(mems[0].node), mems[0]), (g.value(mems[1].node), mems[1])]);
        Ok(beam_search(&dec, &[mems[0].lens.clone(), mems[1].lens.clone()], params))
    })
}

pub fn dr_decode(model: &DrModel, draft: &TokenSeq, conditioning: &TokenSeq, params: &DecodeParams) -> Result<Decoded> {
    Ok(dr_decode_batch(
        model,
        std::slice::from_ref(draft),
        std::slice::from_ref(conditioning),
        params,
        1,
    )?
    .remove(0))
}

/// Per-position log-probabilities of the incremental decoder under teacher
/// forcing; used to check it against the graph forward pass.
pub fn incremental_log_probs(model: &NmtModel, batch: &Batch) -> Result<Vec<f32>> {
    let cfg = &model.config;
    let inp = source_input(&batch.columns[0], cfg.max_len)?;
    let mut g = Graph::<f32>::new();
    let mem = encode(&mut g, &model.params, cfg, "enc", &inp)?;
    let w = DecoderW::new(cfg, &model.params, &["cross"])?;
    let dec = IncrementalDecoder::new(w, &[(g.value(mem.node), &mem)]);
    let tgt = &batch.columns[1];
    let n = tgt.rows();
    let width = tgt.width + 1;
    let vocab = cfg.tgt_vocab;
    let mut out = vec![0.0f32; n * width * vocab];
    let mut caches = vec![
        RowCache {
            k: vec![Vec::new(); cfg.num_layers],
            v: vec![Vec::new(); cfg.num_layers],
        };
        n
    ];
    let src_of: Vec<usize> = (0..n).collect();
    for pos in 0..width {
        let tokens: Vec<u32> = (0..n)
            .map(|r| if pos == 0 { BOS } else { tgt.ids[r * tgt.width + pos - 1] })
            .collect();
        let lp = dec.step(&tokens, pos, &src_of, &mut caches, &[mem.lens.clone()]);
        for r in 0..n {
            out[(r * width + pos) * vocab..(r * width + pos + 1) * vocab].copy_from_slice(&lp[r * vocab..(r + 1) * vocab]);
        }
    }
    Ok(out)
}
