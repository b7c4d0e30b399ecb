//! Tape-free inference: batched greedy decoding with per-layer key/value
//! caches. Uses the same kernels as the tape ops, so logits agree with
//! [`super::forward`] up to matrix-product rounding.

use super::{AttnIdx, FfIdx, ModelError, ModelParams, LN_EPS};
use crate::tensor::{attention_kernel, dot, gemm, layer_norm_kernel, softmax_in_place, AttentionLayout, Segment};
use crate::tokenizer::{BOS, EOS, PAD};

struct Weights<'a> {
    p: &'a ModelParams,
    d: usize,
    heads: usize,
}

impl Weights<'_> {
    fn data(&self, i: usize) -> &[f64] {
        self.p.tensors()[i].data()
    }

    fn linear(&self, x: &[f64], w: usize, b: usize) -> Vec<f64> {
        let shape = self.p.tensors()[w].shape();
        let (k, n) = (shape[0], shape[1]);
        let m = x.len() / k;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, x, (k as isize, 1), self.data(w), (n as isize, 1), &mut out, 0.0);
        let bias = self.data(b);
        for row in out.chunks_mut(n) {
            for (o, c) in row.iter_mut().zip(bias) {
                *o += c;
            }
        }
        out
    }

    fn ln(&self, x: &[f64], (g, b): (usize, usize)) -> Vec<f64> {
        layer_norm_kernel(x, self.d, self.data(g), self.data(b), LN_EPS).0
    }

    fn ff(&self, x: &[f64], f: FfIdx) -> Vec<f64> {
        let mut h = self.linear(x, f.w1, f.b1);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        self.linear(&h, f.w2, f.b2)
    }

    fn embed_rows(&self, embed: usize, ids: &[usize], positions: &[usize]) -> Vec<f64> {
        let d = self.d;
        let longest = positions.iter().max().map_or(0, |p| p + 1);
        let table = super::sinusoidal_positions(longest, d);
        let scale = (d as f64).sqrt();
        let e = self.data(embed);
        let mut out = Vec::with_capacity(ids.len() * d);
        for (&id, &p) in ids.iter().zip(positions) {
            for c in 0..d {
                out.push(e[id * d + c] * scale + table[p * d + c]);
            }
        }
        out
    }

    /// One query row attending over `keys`/`values` rows (all `d` wide).
    fn attend_one(&self, q: &[f64], keys: &[f64], values: &[f64], valid: Option<&[bool]>, out: &mut [f64]) {
        let d = self.d;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let n = keys.len() / d;
        let mut probs = vec![0.0; n];
        for h in 0..self.heads {
            let off = h * dh;
            let qh = &q[off..off + dh];
            for j in 0..n {
                probs[j] = if valid.is_none_or(|v| v[j]) {
                    dot(qh, &keys[j * d + off..][..dh]) * scale
                } else {
                    f64::NEG_INFINITY
                };
            }
            softmax_in_place(&mut probs);
            let o = &mut out[off..off + dh];
            for (j, &p) in probs.iter().enumerate() {
                if p != 0.0 {
                    for (a, b) in o.iter_mut().zip(&values[j * d + off..][..dh]) {
                        *a += p * b;
                    }
                }
            }
        }
    }
}

fn add_in_place(x: &mut [f64], y: &[f64]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

struct Hyp {
    tokens: Vec<usize>,
    /// Per decoder layer: cached self-attention keys and values.
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    done: bool,
}

/// Greedy decoding for several sources at once. Each output starts with
/// `BOS`, then appends the argmax token (lowest id on ties) until `EOS` or
/// until `max_len` tokens have been generated (further capped so the
/// sequence fits `max_seq_len`).
pub fn greedy_decode_batch<S: AsRef<[usize]>>(
    params: &ModelParams,
    srcs: &[S],
    max_len: usize,
) -> Result<Vec<Vec<usize>>, ModelError> {
    for s in srcs {
        params.check_ids(s.as_ref())?;
    }
    if srcs.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = params.config();
    let w = Weights {
        p: params,
        d: cfg.d_model,
        heads: cfg.num_heads,
    };
    let d = w.d;
    let lay = params.layout();

    // Encoder over all sources stacked.
    let src_seqs: Vec<&[usize]> = srcs.iter().map(|s| s.as_ref()).collect();
    let ids: Vec<usize> = src_seqs.iter().flat_map(|s| s.iter().copied()).collect();
    let positions: Vec<usize> = src_seqs.iter().flat_map(|s| 0..s.len()).collect();
    let valid: Vec<bool> = ids.iter().map(|&id| id != PAD).collect();
    let mut starts = Vec::with_capacity(src_seqs.len());
    let mut segs = Vec::with_capacity(src_seqs.len());
    let mut off = 0;
    for s in &src_seqs {
        starts.push(off);
        segs.push(Segment {
            q_start: off,
            q_len: s.len(),
            k_start: off,
            k_len: s.len(),
        });
        off += s.len();
    }
    let enc_layout = AttentionLayout {
        num_heads: w.heads,
        causal: false,
        segments: segs,
        key_valid: valid.clone(),
    };
    let mut x = w.embed_rows(lay.embed, &ids, &positions);
    for l in &lay.enc {
        let h = w.ln(&x, l.ln1);
        let a = self_attention(&w, &h, l.attn, &enc_layout);
        add_in_place(&mut x, &a);
        let h = w.ln(&x, l.ln2);
        add_in_place(&mut x, &w.ff(&h, l.ff));
    }
    let memory = w.ln(&x, lay.enc_ln);
    let cross_kv: Vec<(Vec<f64>, Vec<f64>)> = lay
        .dec
        .iter()
        .map(|l| {
            (
                w.linear(&memory, l.cross.wk, l.cross.bk),
                w.linear(&memory, l.cross.wv, l.cross.bv),
            )
        })
        .collect();

    let limit = max_len.min(cfg.max_seq_len - 1);
    let mut hyps: Vec<Hyp> = src_seqs
        .iter()
        .map(|_| Hyp {
            tokens: vec![BOS],
            keys: vec![Vec::new(); lay.dec.len()],
            values: vec![Vec::new(); lay.dec.len()],
            done: limit == 0,
        })
        .collect();
    let embed = w.data(lay.embed);
    let vocab = cfg.vocab_size;

    for step in 0..limit {
        let active: Vec<usize> = (0..hyps.len()).filter(|&i| !hyps[i].done).collect();
        if active.is_empty() {
            break;
        }
        let last: Vec<usize> = active.iter().map(|&i| *hyps[i].tokens.last().unwrap()).collect();
        let mut y = w.embed_rows(lay.embed, &last, &vec![step; active.len()]);
        for (li, l) in lay.dec.iter().enumerate() {
            let h = w.ln(&y, l.ln1);
            let q = w.linear(&h, l.self_attn.wq, l.self_attn.bq);
            let k = w.linear(&h, l.self_attn.wk, l.self_attn.bk);
            let v = w.linear(&h, l.self_attn.wv, l.self_attn.bv);
            let mut o = vec![0.0; y.len()];
            for (r, &i) in active.iter().enumerate() {
                let hyp = &mut hyps[i];
                hyp.keys[li].extend_from_slice(&k[r * d..(r + 1) * d]);
                hyp.values[li].extend_from_slice(&v[r * d..(r + 1) * d]);
                w.attend_one(&q[r * d..(r + 1) * d], &hyp.keys[li], &hyp.values[li], None, &mut o[r * d..(r + 1) * d]);
            }
            add_in_place(&mut y, &w.linear(&o, l.self_attn.wo, l.self_attn.bo));

            let h = w.ln(&y, l.ln2);
            let q = w.linear(&h, l.cross.wq, l.cross.bq);
            let (ck, cv) = &cross_kv[li];
            let mut o = vec![0.0; y.len()];
            for (r, &i) in active.iter().enumerate() {
                let (s, n) = (starts[i], src_seqs[i].len());
                w.attend_one(
                    &q[r * d..(r + 1) * d],
                    &ck[s * d..(s + n) * d],
                    &cv[s * d..(s + n) * d],
                    Some(&valid[s..s + n]),
                    &mut o[r * d..(r + 1) * d],
                );
            }
            add_in_place(&mut y, &w.linear(&o, l.cross.wo, l.cross.bo));

            let h = w.ln(&y, l.ln3);
            add_in_place(&mut y, &w.ff(&h, l.ff));
        }
        let out = w.ln(&y, lay.dec_ln);
        let mut logits = vec![0.0; active.len() * vocab];
        gemm(active.len(), d, vocab, &out, (d as isize, 1), embed, (1, d as isize), &mut logits, 0.0);
        for (r, &i) in active.iter().enumerate() {
            let row = &logits[r * vocab..(r + 1) * vocab];
            let mut best = 0;
            for (t, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = t;
                }
            }
            let hyp = &mut hyps[i];
            hyp.tokens.push(best);
            if best == EOS || step + 1 == limit {
                hyp.done = true;
            }
        }
    }
    Ok(hyps.into_iter().map(|h| h.tokens).collect())
}

fn self_attention(w: &Weights<'_>, h: &[f64], a: AttnIdx, layout: &AttentionLayout) -> Vec<f64> {
    let q = w.linear(h, a.wq, a.bq);
    let k = w.linear(h, a.wk, a.bk);
    let v = w.linear(h, a.wv, a.bv);
    let (o, _) = attention_kernel(&q, &k, &v, w.d, layout);
    w.linear(&o, a.wo, a.bo)
}

pub fn greedy_decode(params: &ModelParams, src: &[usize], max_len: usize) -> Result<Vec<usize>, ModelError> {
    Ok(greedy_decode_batch(params, &[src], max_len)?.remove(0))
}
