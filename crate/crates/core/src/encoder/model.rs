//! Forward pass with cached activations and the matching backward pass.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::ops::{self, NormCache};
use super::weights::EncoderWeights;

/// Hidden states of one sequence: index 0 is the embedding layer, index `l`
/// the output of block `l`; the last entry is passed through the final
/// layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub seq_len: usize,
    pub dim: usize,
    pub layers: Vec<Vec<f64>>,
}

impl HiddenStates {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn row(&self, layer: usize, pos: usize) -> &[f64] {
        &self.layers[layer][pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.layers.last().expect("at least the embedding layer")
    }
}

/// Upstream gradients with respect to hidden states; empty layers are zero.
#[derive(Debug, Clone)]
pub struct StateGrads {
    pub seq_len: usize,
    pub dim: usize,
    pub layers: Vec<Vec<f64>>,
}

impl StateGrads {
    pub fn new(num_states: usize, seq_len: usize, dim: usize) -> Self {
        StateGrads {
            seq_len,
            dim,
            layers: vec![Vec::new(); num_states],
        }
    }

    pub fn for_states(states: &HiddenStates) -> Self {
        Self::new(states.layers.len(), states.seq_len, states.dim)
    }

    pub fn row_mut(&mut self, layer: usize, pos: usize) -> &mut [f64] {
        let n = self.seq_len * self.dim;
        let l = &mut self.layers[layer];
        if l.is_empty() {
            l.resize(n, 0.0);
        }
        &mut l[pos * self.dim..(pos + 1) * self.dim]
    }

    fn layer(&self, layer: usize) -> Option<&[f64]> {
        let l = &self.layers[layer];
        (!l.is_empty()).then_some(l.as_slice())
    }
}

#[derive(Debug, Clone)]
struct BlockCache {
    ln1: NormCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    attn_mask: Option<Vec<f64>>,
    ln2: NormCache,
    h2: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    ffn_mask: Option<Vec<f64>>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    ids: Vec<u32>,
    valid: usize,
    emb_mask: Option<Vec<f64>>,
    blocks: Vec<BlockCache>,
    final_ln: NormCache,
    pub states: HiddenStates,
}

fn dropout_mask(rng: Option<&mut Rng>, p: f64, n: usize) -> Option<Vec<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some((0..n).map(|_| if rng.gen_bool(p) { 0.0 } else { keep }).collect())
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

impl EncoderWeights {
    fn check_input(&self, ids: &[u32], valid: usize) -> Result<()> {
        let cfg = &self.config;
        if ids.is_empty() {
            return Err(Error::invalid("empty input sequence"));
        }
        if ids.len() > cfg.max_positions {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds max_positions {}",
                ids.len(),
                cfg.max_positions
            )));
        }
        if valid == 0 || valid > ids.len() {
            return Err(Error::invalid(format!("valid length {valid} outside 1..={}", ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::invalid(format!("token id {bad} ≥ vocab_size {}", cfg.vocab_size)));
        }
        Ok(())
    }

    /// Runs the encoder on `ids`, attending only to the first `valid`
    /// positions. Dropout is applied only when `dropout_rng` is given.
    pub fn forward_cached(&self, ids: &[u32], valid: usize, mut dropout_rng: Option<&mut Rng>) -> Result<ForwardCache> {
        self.check_input(ids, valid)?;
        let cfg = &self.config;
        let (n, d, f, h, dh) = (ids.len(), cfg.model_dim, cfg.ffn_dim, cfg.heads, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = vec![0.0; n * d];
        for (p, &id) in ids.iter().enumerate() {
            let tok = &self.token_embedding[id as usize * d..(id as usize + 1) * d];
            let pos = &self.position_embedding[p * d..(p + 1) * d];
            for c in 0..d {
                x[p * d + c] = tok[c] + pos[c];
            }
        }
        let emb_mask = dropout_mask(dropout_rng.as_deref_mut(), cfg.dropout, n * d);
        apply_mask(&mut x, &emb_mask);

        let mut layers = Vec::with_capacity(cfg.layers + 1);
        let mut blocks = Vec::with_capacity(cfg.layers);
        layers.push(x.clone());

        for w in &self.layers {
            let (h1, ln1) = ops::layer_norm(&x, &w.ln1_gain, &w.ln1_bias);
            let mut q = ops::matmul(&h1, &w.wq, n, d, d);
            ops::add_row_bias(&mut q, &w.bq);
            let mut k = ops::matmul(&h1, &w.wk, n, d, d);
            ops::add_row_bias(&mut k, &w.bk);
            let mut v = ops::matmul(&h1, &w.wv, n, d, d);
            ops::add_row_bias(&mut v, &w.bv);

            let mut probs = vec![0.0; h * n * n];
            let mut ctx = vec![0.0; n * d];
            for head in 0..h {
                let off = head * dh;
                for i in 0..n {
                    let qi = &q[i * d + off..i * d + off + dh];
                    let row = &mut probs[(head * n + i) * n..(head * n + i + 1) * n];
                    for j in 0..valid {
                        row[j] = ops::dot(qi, &k[j * d + off..j * d + off + dh]) * scale;
                    }
                    ops::masked_softmax(row, valid);
                    let out = &mut ctx[i * d + off..i * d + off + dh];
                    for j in 0..valid {
                        let pj = row[j];
                        for (o, vv) in out.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                            *o += pj * vv;
                        }
                    }
                }
            }
            let mut attn = ops::matmul(&ctx, &w.wo, n, d, d);
            ops::add_row_bias(&mut attn, &w.bo);
            let attn_mask = dropout_mask(dropout_rng.as_deref_mut(), cfg.dropout, n * d);
            apply_mask(&mut attn, &attn_mask);
            ops::add_assign(&mut x, &attn);

            let (h2, ln2) = ops::layer_norm(&x, &w.ln2_gain, &w.ln2_bias);
            let mut ff_pre = ops::matmul(&h2, &w.w1, n, d, f);
            ops::add_row_bias(&mut ff_pre, &w.b1);
            let ff_act: Vec<f64> = ff_pre.iter().map(|&z| ops::gelu(z)).collect();
            let mut ff = ops::matmul(&ff_act, &w.w2, n, f, d);
            ops::add_row_bias(&mut ff, &w.b2);
            let ffn_mask = dropout_mask(dropout_rng.as_deref_mut(), cfg.dropout, n * d);
            apply_mask(&mut ff, &ffn_mask);
            ops::add_assign(&mut x, &ff);

            layers.push(x.clone());
            blocks.push(BlockCache {
                ln1,
                h1,
                q,
                k,
                v,
                probs,
                ctx,
                attn_mask,
                ln2,
                h2,
                ff_pre,
                ff_act,
                ffn_mask,
            });
        }
        let (out, final_ln) = ops::layer_norm(&x, &self.final_ln_gain, &self.final_ln_bias);
        *layers.last_mut().unwrap() = out;

        Ok(ForwardCache {
            ids: ids.to_vec(),
            valid,
            emb_mask,
            blocks,
            final_ln,
            states: HiddenStates {
                seq_len: n,
                dim: d,
                layers,
            },
        })
    }

    /// Dropout-free hidden states of one unpadded sequence.
    pub fn hidden_states(&self, ids: &[u32]) -> Result<HiddenStates> {
        Ok(self.forward_cached(ids, ids.len(), None)?.states)
    }

    /// Accumulates parameter gradients into `grads` given upstream gradients
    /// with respect to the hidden states of `cache`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &StateGrads, grads: &mut EncoderWeights) {
        let cfg = &self.config;
        let (n, d, f, h, dh) = (cache.ids.len(), cfg.model_dim, cfg.ffn_dim, cfg.heads, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let top = cfg.layers;
        let valid = cache.valid;

        let mut dx = match upstream.layer(top) {
            Some(g) => ops::layer_norm_backward(
                g,
                &cache.final_ln,
                &self.final_ln_gain,
                &mut grads.final_ln_gain,
                &mut grads.final_ln_bias,
            ),
            None => vec![0.0; n * d],
        };

        for b in (0..top).rev() {
            if b + 1 < top {
                if let Some(g) = upstream.layer(b + 1) {
                    ops::add_assign(&mut dx, g);
                }
            }
            let w = &self.layers[b];
            let gw = &mut grads.layers[b];
            let c = &cache.blocks[b];

            // feed-forward sublayer
            let mut dff = dx.clone();
            apply_mask(&mut dff, &c.ffn_mask);
            ops::col_sum_acc(&mut gw.b2, &dff);
            ops::matmul_at_b_acc(&mut gw.w2, &c.ff_act, &dff, n, f, d);
            let mut dpre = ops::matmul_a_bt(&dff, &w.w2, n, d, f);
            for (g, &z) in dpre.iter_mut().zip(&c.ff_pre) {
                *g *= ops::gelu_grad(z);
            }
            ops::col_sum_acc(&mut gw.b1, &dpre);
            ops::matmul_at_b_acc(&mut gw.w1, &c.h2, &dpre, n, d, f);
            let dh2 = ops::matmul_a_bt(&dpre, &w.w1, n, f, d);
            let dmid = ops::layer_norm_backward(&dh2, &c.ln2, &w.ln2_gain, &mut gw.ln2_gain, &mut gw.ln2_bias);
            ops::add_assign(&mut dx, &dmid);

            // attention sublayer
            let mut dattn = dx.clone();
            apply_mask(&mut dattn, &c.attn_mask);
            ops::col_sum_acc(&mut gw.bo, &dattn);
            ops::matmul_at_b_acc(&mut gw.wo, &c.ctx, &dattn, n, d, d);
            let dctx = ops::matmul_a_bt(&dattn, &w.wo, n, d, d);

            let mut dq = vec![0.0; n * d];
            let mut dk = vec![0.0; n * d];
            let mut dv = vec![0.0; n * d];
            let mut dp = vec![0.0; n];
            for head in 0..h {
                let off = head * dh;
                for i in 0..n {
                    let p = &c.probs[(head * n + i) * n..(head * n + i + 1) * n];
                    let dci = &dctx[i * d + off..i * d + off + dh];
                    let mut weighted = 0.0;
                    for j in 0..valid {
                        dp[j] = ops::dot(dci, &c.v[j * d + off..j * d + off + dh]);
                        weighted += dp[j] * p[j];
                        for (g, &x) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dci) {
                            *g += p[j] * x;
                        }
                    }
                    for j in 0..valid {
                        let ds = p[j] * (dp[j] - weighted) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for t in 0..dh {
                            dq[i * d + off + t] += ds * c.k[j * d + off + t];
                            dk[j * d + off + t] += ds * c.q[i * d + off + t];
                        }
                    }
                }
            }
            ops::col_sum_acc(&mut gw.bq, &dq);
            ops::col_sum_acc(&mut gw.bk, &dk);
            ops::col_sum_acc(&mut gw.bv, &dv);
            ops::matmul_at_b_acc(&mut gw.wq, &c.h1, &dq, n, d, d);
            ops::matmul_at_b_acc(&mut gw.wk, &c.h1, &dk, n, d, d);
            ops::matmul_at_b_acc(&mut gw.wv, &c.h1, &dv, n, d, d);
            let mut dh1 = ops::matmul_a_bt(&dq, &w.wq, n, d, d);
            ops::add_assign(&mut dh1, &ops::matmul_a_bt(&dk, &w.wk, n, d, d));
            ops::add_assign(&mut dh1, &ops::matmul_a_bt(&dv, &w.wv, n, d, d));
            let din = ops::layer_norm_backward(&dh1, &c.ln1, &w.ln1_gain, &mut gw.ln1_gain, &mut gw.ln1_bias);
            ops::add_assign(&mut dx, &din);
        }

        if let Some(g) = upstream.layer(0) {
            ops::add_assign(&mut dx, g);
        }
        apply_mask(&mut dx, &cache.emb_mask);
        for (p, &id) in cache.ids.iter().enumerate() {
            let row = &dx[p * d..(p + 1) * d];
            ops::add_assign(&mut grads.token_embedding[id as usize * d..(id as usize + 1) * d], row);
            ops::add_assign(&mut grads.position_embedding[p * d..(p + 1) * d], row);
        }
    }

    /// Attention distributions of every layer and head, `[layer][head][query][key]`.
    pub fn attention_probs(&self, ids: &[u32], valid: usize) -> Result<Vec<Vec<Vec<Vec<f64>>>>> {
        let cache = self.forward_cached(ids, valid, None)?;
        let n = ids.len();
        Ok(cache
            .blocks
            .iter()
            .map(|b| {
                (0..self.config.heads)
                    .map(|head| (0..n).map(|i| b.probs[(head * n + i) * n..(head * n + i + 1) * n].to_vec()).collect())
                    .collect()
            })
            .collect())
    }

    /// Normalized (pre-affine) outputs of every layer norm, in order
    /// ln1, ln2 per block, then the final one.
    pub fn normalized_activations(&self, ids: &[u32]) -> Result<Vec<Vec<f64>>> {
        let cache = self.forward_cached(ids, ids.len(), None)?;
        let mut out = Vec::new();
        for b in &cache.blocks {
            out.push(b.ln1.xhat.clone());
            out.push(b.ln2.xhat.clone());
        }
        out.push(cache.final_ln.xhat.clone());
        Ok(out)
    }
}
