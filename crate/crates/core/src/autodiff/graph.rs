//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Every node holds a `[rows, cols]` value. Nodes are appended in execution
//! order, so the tape is acyclic by construction and the backward pass is a
//! single reverse sweep.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::kernels::{dot, layer_norm_row};
use super::real::{matmul, MatRef, Real};
use super::tensor::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

/// Layout of a batched multi-head attention call.
#[derive(Debug, Clone)]
pub struct AttnSpec {
    pub batch: usize,
    pub heads: usize,
    pub q_len: usize,
    pub k_len: usize,
    /// Valid key count per batch row; keys past it are masked.
    pub key_lens: Vec<usize>,
    pub causal: bool,
}

enum Op<R> {
    Input,
    Param(String),
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        /// `w` is stored `[out, in]`.
        transposed: bool,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, R),
    Relu(NodeId),
    Dropout {
        x: NodeId,
        mask: Vec<R>,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<R>,
        inv_std: Vec<R>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        spec: AttnSpec,
        probs: Vec<R>,
    },
    SumAll(NodeId),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<R>,
        eps_ls: f64,
        probs: Vec<R>,
        denom: f64,
    },
}

struct Node<R> {
    rows: usize,
    cols: usize,
    value: Vec<R>,
    op: Op<R>,
}

/// Gradients produced by [`Graph::backward`], keyed by parameter id.
#[derive(Debug, Clone, Default)]
pub struct Gradients<R> {
    pub by_param: BTreeMap<String, Vec<R>>,
}

impl Gradients<f32> {
    /// Writes gradients into `params`; parameters absent from the graph
    /// receive zeros.
    pub fn write_into(self, params: &mut ParamSet) -> Result<()> {
        let mut by_param = self.by_param;
        for (id, t) in params.iter_mut() {
            let g = by_param.remove(id).unwrap_or_else(|| vec![0.0; t.len()]);
            t.set_grad(g)?;
        }
        if let Some(id) = by_param.keys().next() {
            return Err(Error::contract(format!(
                "gradient for parameter `{id}` not in the set"
            )));
        }
        Ok(())
    }
}

pub struct Graph<R: Real> {
    nodes: Vec<Node<R>>,
    params: BTreeMap<String, NodeId>,
    dropout: Option<(R, ChaCha8Rng)>,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    /// Inference graph: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            dropout: None,
        }
    }

    /// Training graph with Bernoulli dropout drawn from `rng`.
    pub fn with_dropout(p: f64, rng: ChaCha8Rng) -> Self {
        let mut g = Self::new();
        if p > 0.0 {
            g.dropout = Some((R::lit(p), rng));
        }
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[R] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, id: NodeId) -> R {
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<R>, op: Op<R>) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite forward value");
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, rows: usize, cols: usize, value: Vec<R>) -> Result<NodeId> {
        if value.len() != rows * cols {
            return Err(Error::contract(format!(
                "input of {} values for shape [{rows}, {cols}]",
                value.len()
            )));
        }
        Ok(self.push(rows, cols, value, Op::Input))
    }

    /// Leaf for parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet, id: &str) -> Result<NodeId> {
        if let Some(&n) = self.params.get(id) {
            return Ok(n);
        }
        let t = params.require(id)?;
        let (rows, cols) = t.matrix_dims();
        let value = t.values().iter().map(|&v| R::from_f32_lossy(v)).collect();
        let n = self.push(rows, cols, value, Op::Param(id.to_string()));
        self.params.insert(id.to_string(), n);
        Ok(n)
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (rows, cols) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::contract(format!("id {bad} outside table of {rows}")));
        }
        let t = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&t[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(
            ids.len(),
            cols,
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// `x · w + b` with `w` shaped `[in, out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        self.linear_impl(x, w, b, false)
    }

    /// `x · wᵀ + b` with `w` shaped `[out, in]`, e.g. an embedding table
    /// reused as the output projection.
    pub fn linear_t(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        self.linear_impl(x, w, b, true)
    }

    fn linear_impl(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, transposed: bool) -> Result<NodeId> {
        let (n, din) = self.shape(x);
        let (wr, wc) = self.shape(w);
        let (win, dout) = if transposed { (wc, wr) } else { (wr, wc) };
        if din != win {
            return Err(Error::contract(format!(
                "linear: input width {din} vs weight input dim {win}"
            )));
        }
        if let Some(b) = b {
            if self.nodes[b.0].value.len() != dout {
                return Err(Error::contract("linear: bias width"));
            }
        }
        let mut out = vec![R::zero(); n * dout];
        if let Some(b) = b {
            let bv = &self.nodes[b.0].value;
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bv);
            }
        }
        let wm = MatRef::new(&self.nodes[w.0].value, wr, wc);
        matmul(
            MatRef::new(&self.nodes[x.0].value, n, din),
            if transposed { wm.t() } else { wm },
            &mut out,
            b.is_some(),
        );
        Ok(self.push(
            n,
            dout,
            out,
            Op::Linear {
                x,
                w,
                b,
                transposed,
            },
        ))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<(usize, usize)> {
        let sa = self.shape(a);
        if sa != self.shape(b) {
            return Err(Error::contract(format!(
                "{what}: shapes {sa:?} vs {:?}",
                self.shape(b)
            )));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_shape(a, b, "add")?;
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(r, c, out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.same_shape(a, b, "mul")?;
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(r, c, out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, s: R) -> NodeId {
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|&x| x * s).collect();
        self.push(r, c, out, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0]
            .value
            .iter()
            .map(|&x| if x > R::zero() { x } else { R::zero() })
            .collect();
        self.push(r, c, out, Op::Relu(a))
    }

    /// Inverted dropout; identity on inference graphs.
    pub fn dropout(&mut self, a: NodeId) -> NodeId {
        let Some((p, rng)) = self.dropout.as_mut() else {
            return a;
        };
        let p = *p;
        let keep = R::one() / (R::one() - p);
        let n = self.nodes[a.0].value.len();
        let pf = p.as_f64();
        let mask: Vec<R> = (0..n)
            .map(|_| if rng.gen::<f64>() < pf { R::zero() } else { keep })
            .collect();
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0]
            .value
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        self.push(r, c, out, Op::Dropout { x: a, mask })
    }

    /// Row-wise layer normalization over the last dimension.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: R) -> Result<NodeId> {
        let (rows, cols) = self.shape(x);
        if self.nodes[gain.0].value.len() != cols || self.nodes[bias.0].value.len() != cols {
            return Err(Error::contract("layer_norm: gain/bias width"));
        }
        if cols < 2 {
            return Err(Error::contract("layer_norm needs at least two features"));
        }
        let mut out = vec![R::zero(); rows * cols];
        let mut xhat = vec![R::zero(); rows * cols];
        let mut inv_std = vec![R::zero(); rows];
        {
            let xv = &self.nodes[x.0].value;
            let g = &self.nodes[gain.0].value;
            let b = &self.nodes[bias.0].value;
            for r in 0..rows {
                let s = r * cols..(r + 1) * cols;
                inv_std[r] = layer_norm_row(
                    &xv[s.clone()],
                    g,
                    b,
                    eps,
                    &mut out[s.clone()],
                    Some(&mut xhat[s]),
                );
            }
        }
        Ok(self.push(
            rows,
            cols,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Scaled dot-product attention over `heads` column groups.
    ///
    /// `q` is `[batch * q_len, d]`, `k` and `v` are `[batch * k_len, d]`.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, spec: AttnSpec) -> Result<NodeId> {
        let (qr, d) = self.shape(q);
        let (kr, dk_) = self.shape(k);
        let (vr, dv) = self.shape(v);
        if qr != spec.batch * spec.q_len
            || kr != spec.batch * spec.k_len
            || vr != kr
            || dk_ != d
            || dv != d
            || spec.heads == 0
            || d % spec.heads != 0
            || spec.key_lens.len() != spec.batch
        {
            return Err(Error::contract("attention: inconsistent shapes"));
        }
        if spec
            .key_lens
            .iter()
            .any(|&l| l == 0 || l > spec.k_len)
        {
            return Err(Error::contract("attention: key length out of range"));
        }
        let hd = d / spec.heads;
        let scale = R::one() / R::from_usize(hd).unwrap().sqrt();
        let (tq, tk) = (spec.q_len, spec.k_len);
        let mut out = vec![R::zero(); qr * d];
        let mut probs = vec![R::zero(); spec.batch * spec.heads * tq * tk];
        {
            let qv = &self.nodes[q.0].value;
            let kv = &self.nodes[k.0].value;
            let vv = &self.nodes[v.0].value;
            for b in 0..spec.batch {
                for h in 0..spec.heads {
                    let c0 = h * hd;
                    for i in 0..tq {
                        let valid = visible_keys(&spec, b, i);
                        let qrow = &qv[(b * tq + i) * d + c0..(b * tq + i) * d + c0 + hd];
                        let p = &mut probs[((b * spec.heads + h) * tq + i) * tk..][..tk];
                        let mut max = R::neg_infinity();
                        for j in 0..valid {
                            let krow = &kv[(b * tk + j) * d + c0..(b * tk + j) * d + c0 + hd];
                            let s = dot(qrow, krow) * scale;
                            p[j] = s;
                            if s > max {
                                max = s;
                            }
                        }
                        let mut sum = R::zero();
                        for pj in p.iter_mut().take(valid) {
                            *pj = (*pj - max).exp();
                            sum += *pj;
                        }
                        let inv = R::one() / sum;
                        let orow = &mut out[(b * tq + i) * d + c0..(b * tq + i) * d + c0 + hd];
                        for j in 0..valid {
                            p[j] *= inv;
                            let w = p[j];
                            let vrow = &vv[(b * tk + j) * d + c0..(b * tk + j) * d + c0 + hd];
                            for c in 0..hd {
                                orow[c] += w * vrow[c];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            qr,
            d,
            out,
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            },
        ))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.iter().map(|v| v.as_f64()).sum();
        self.push(1, 1, vec![R::lit(s)], Op::SumAll(a))
    }

    /// Weighted mean label-smoothed cross-entropy of `logits` rows against
    /// `targets`. Rows with zero weight (padding) contribute nothing.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        weights: &[R],
        eps_ls: f64,
    ) -> Result<NodeId> {
        let (rows, vocab) = self.shape(logits);
        if targets.len() != rows || weights.len() != rows {
            return Err(Error::contract("cross_entropy: target count"));
        }
        if !(0.0..1.0).contains(&eps_ls) {
            return Err(Error::contract("cross_entropy: smoothing outside [0, 1)"));
        }
        let denom: f64 = weights.iter().map(|w| w.as_f64()).sum();
        if denom <= 0.0 {
            return Err(Error::contract("cross_entropy: no weighted rows"));
        }
        let lv = &self.nodes[logits.0].value;
        let mut probs = vec![R::zero(); rows * vocab];
        let mut total = 0.0f64;
        for r in 0..rows {
            let w = weights[r].as_f64();
            if w == 0.0 {
                continue;
            }
            let t = targets[r];
            if t >= vocab {
                return Err(Error::contract(format!("target {t} outside vocabulary")));
            }
            let row = &lv[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(R::neg_infinity(), R::max).as_f64();
            let mut sum = 0.0f64;
            let mut sum_logits = 0.0f64;
            for &l in row {
                let l = l.as_f64();
                sum += (l - max).exp();
                sum_logits += l;
            }
            let lse = max + sum.ln();
            let logp_t = row[t].as_f64() - lse;
            let mean_logp = sum_logits / vocab as f64 - lse;
            let loss = -(1.0 - eps_ls) * logp_t - eps_ls * mean_logp;
            total += w * loss;
            let pr = &mut probs[r * vocab..(r + 1) * vocab];
            for (p, &l) in pr.iter_mut().zip(row) {
                *p = R::lit((l.as_f64() - lse).exp());
            }
        }
        let value = R::lit(total / denom);
        Ok(self.push(
            1,
            1,
            vec![value],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                eps_ls,
                probs,
                denom,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<R>> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::contract("backward from a non-scalar node"));
        }
        let mut grads: Vec<Option<Vec<R>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![R::one()]);
        let mut out = Gradients::default();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(name) => {
                    out.by_param.insert(name.clone(), g);
                }
                Op::Gather { table, ids } => {
                    let cols = node.cols;
                    let tg = grad_buf(&mut grads, &self.nodes, *table);
                    for (r, &i) in ids.iter().enumerate() {
                        let dst = &mut tg[i * cols..(i + 1) * cols];
                        for (d, &s) in dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *d += s;
                        }
                    }
                }
                Op::Linear {
                    x,
                    w,
                    b,
                    transposed,
                } => {
                    let (n, din) = self.shape(*x);
                    let dout = node.cols;
                    let (wr, wc) = self.shape(*w);
                    {
                        let wm = MatRef::new(&self.nodes[w.0].value, wr, wc);
                        let gx = grad_buf(&mut grads, &self.nodes, *x);
                        matmul(
                            MatRef::new(&g, n, dout),
                            if *transposed { wm } else { wm.t() },
                            gx,
                            true,
                        );
                    }
                    {
                        let xm = MatRef::new(&self.nodes[x.0].value, n, din);
                        let gm = MatRef::new(&g, n, dout);
                        let gw = grad_buf(&mut grads, &self.nodes, *w);
                        if *transposed {
                            matmul(gm.t(), xm, gw, true);
                        } else {
                            matmul(xm.t(), gm, gw, true);
                        }
                    }
                    if let Some(b) = b {
                        let gb = grad_buf(&mut grads, &self.nodes, *b);
                        for row in g.chunks(dout) {
                            for (d, &s) in gb.iter_mut().zip(row) {
                                *d += s;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for t in [*a, *b] {
                        let gt = grad_buf(&mut grads, &self.nodes, t);
                        for (d, &s) in gt.iter_mut().zip(&g) {
                            *d += s;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    {
                        let bv = &self.nodes[b.0].value;
                        let ga = grad_buf(&mut grads, &self.nodes, a);
                        for i in 0..g.len() {
                            ga[i] += g[i] * bv[i];
                        }
                    }
                    {
                        let av = &self.nodes[a.0].value;
                        let gb = grad_buf(&mut grads, &self.nodes, b);
                        for i in 0..g.len() {
                            gb[i] += g[i] * av[i];
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = grad_buf(&mut grads, &self.nodes, *a);
                    for (d, &v) in ga.iter_mut().zip(&g) {
                        *d += v * *s;
                    }
                }
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].value;
                    let ga = grad_buf(&mut grads, &self.nodes, *a);
                    for i in 0..g.len() {
                        if av[i] > R::zero() {
                            ga[i] += g[i];
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let gx = grad_buf(&mut grads, &self.nodes, *x);
                    for i in 0..g.len() {
                        gx[i] += g[i] * mask[i];
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (rows, cols) = (node.rows, node.cols);
                    let gv = &self.nodes[gain.0].value;
                    let n = R::from_usize(cols).unwrap();
                    {
                        let gg = grad_buf(&mut grads, &self.nodes, *gain);
                        for r in 0..rows {
                            for c in 0..cols {
                                gg[c] += g[r * cols + c] * xhat[r * cols + c];
                            }
                        }
                    }
                    {
                        let gb = grad_buf(&mut grads, &self.nodes, *bias);
                        for r in 0..rows {
                            for c in 0..cols {
                                gb[c] += g[r * cols + c];
                            }
                        }
                    }
                    let gx = grad_buf(&mut grads, &self.nodes, *x);
                    let mut dxhat = vec![R::zero(); cols];
                    for r in 0..rows {
                        let s = r * cols;
                        let mut mean_d = R::zero();
                        let mut mean_dx = R::zero();
                        for c in 0..cols {
                            let d = g[s + c] * gv[c];
                            dxhat[c] = d;
                            mean_d += d;
                            mean_dx += d * xhat[s + c];
                        }
                        mean_d = mean_d / n;
                        mean_dx = mean_dx / n;
                        for c in 0..cols {
                            gx[s + c] += inv_std[r] * (dxhat[c] - mean_d - xhat[s + c] * mean_dx);
                        }
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    spec,
                    probs,
                } => {
                    let d = node.cols;
                    let hd = d / spec.heads;
                    let scale = R::one() / R::from_usize(hd).unwrap().sqrt();
                    let (tq, tk) = (spec.q_len, spec.k_len);
                    let mut gq = vec![R::zero(); spec.batch * tq * d];
                    let mut gk = vec![R::zero(); spec.batch * tk * d];
                    let mut gv = vec![R::zero(); spec.batch * tk * d];
                    let qv = &self.nodes[q.0].value;
                    let kv = &self.nodes[k.0].value;
                    let vv = &self.nodes[v.0].value;
                    let mut dp = vec![R::zero(); tk];
                    for b in 0..spec.batch {
                        for h in 0..spec.heads {
                            let c0 = h * hd;
                            for i in 0..tq {
                                let valid = visible_keys(spec, b, i);
                                let p = &probs[((b * spec.heads + h) * tq + i) * tk..][..tk];
                                let qo = (b * tq + i) * d + c0;
                                let grow = &g[qo..qo + hd];
                                let mut sum_pdp = R::zero();
                                for j in 0..valid {
                                    let vo = (b * tk + j) * d + c0;
                                    dp[j] = dot(grow, &vv[vo..vo + hd]);
                                    sum_pdp += p[j] * dp[j];
                                    let gvr = &mut gv[vo..vo + hd];
                                    for c in 0..hd {
                                        gvr[c] += p[j] * grow[c];
                                    }
                                }
                                for j in 0..valid {
                                    let ds = p[j] * (dp[j] - sum_pdp) * scale;
                                    if ds == R::zero() {
                                        continue;
                                    }
                                    let ko = (b * tk + j) * d + c0;
                                    for c in 0..hd {
                                        gq[qo + c] += ds * kv[ko + c];
                                        gk[ko + c] += ds * qv[qo + c];
                                    }
                                }
                            }
                        }
                    }
                    for (t, src) in [(*q, gq), (*k, gk), (*v, gv)] {
                        let buf = grad_buf(&mut grads, &self.nodes, t);
                        for (d, s) in buf.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                Op::SumAll(a) => {
                    let ga = grad_buf(&mut grads, &self.nodes, *a);
                    for d in ga.iter_mut() {
                        *d += g[0];
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    eps_ls,
                    probs,
                    denom,
                } => {
                    let (rows, vocab) = self.shape(*logits);
                    let uni = R::lit(eps_ls / vocab as f64);
                    let hit = R::lit(1.0 - eps_ls);
                    let gl = grad_buf(&mut grads, &self.nodes, *logits);
                    let g0 = g[0].as_f64() / denom;
                    for r in 0..rows {
                        if weights[r] == R::zero() {
                            continue;
                        }
                        let coef = R::lit(g0 * weights[r].as_f64());
                        let pr = &probs[r * vocab..(r + 1) * vocab];
                        let gr = &mut gl[r * vocab..(r + 1) * vocab];
                        for c in 0..vocab {
                            gr[c] += coef * (pr[c] - uni);
                        }
                        gr[targets[r]] -= coef * hit;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Keys visible to query `i` of batch row `b`.
fn visible_keys(spec: &AttnSpec, b: usize, i: usize) -> usize {
    let l = spec.key_lens[b];
    if spec.causal {
        l.min(i + 1)
    } else {
        l
    }
}

fn grad_buf<'a, R: Real>(
    grads: &'a mut [Option<Vec<R>>],
    nodes: &[Node<R>],
    id: NodeId,
) -> &'a mut Vec<R> {
    grads[id.0].get_or_insert_with(|| vec![R::zero(); nodes[id.0].value.len()])
}
