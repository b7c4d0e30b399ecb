use super::{AttnIdx, FfIdx, Layout, ModelError, ModelParams, LN_EPS};
use crate::rng::SplitMix64;
use crate::tensor::{AttentionLayout, Segment, Tape, Tensor, Var};
use crate::tokenizer::PAD;

/// Evaluation runs deterministically; training applies dropout from `rng`.
pub enum ForwardMode<'a> {
    Eval,
    Train { rng: &'a mut SplitMix64 },
}

/// Loads every parameter tensor onto the tape, in layout order.
pub fn load_params(tape: &mut Tape, params: &ModelParams, trainable: bool) -> Vec<Var> {
    params
        .tensors()
        .iter()
        .map(|t| tape.leaf(t.clone(), trainable))
        .collect()
}

struct Ctx<'m, 'r> {
    vars: &'m [Var],
    layout: Layout,
    d: usize,
    heads: usize,
    dropout: f64,
    mode: &'m mut ForwardMode<'r>,
}

impl Ctx<'_, '_> {
    fn dropout(&mut self, tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
        let ForwardMode::Train { rng } = &mut *self.mode else {
            return Ok(x);
        };
        if self.dropout == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.dropout;
        let mask = (0..tape.value(x).len())
            .map(|_| if rng.next_f64() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        Ok(tape.mask(x, mask)?)
    }

    fn ln(&self, tape: &mut Tape, x: Var, (g, b): (usize, usize)) -> Result<Var, ModelError> {
        Ok(tape.layer_norm(x, self.vars[g], self.vars[b], LN_EPS)?)
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: usize, b: usize) -> Result<Var, ModelError> {
        let y = tape.matmul(x, self.vars[w])?;
        Ok(tape.add_row(y, self.vars[b])?)
    }

    fn mha(
        &self,
        tape: &mut Tape,
        xq: Var,
        xkv: Var,
        a: AttnIdx,
        layout: AttentionLayout,
    ) -> Result<Var, ModelError> {
        let q = self.linear(tape, xq, a.wq, a.bq)?;
        let k = self.linear(tape, xkv, a.wk, a.bk)?;
        let v = self.linear(tape, xkv, a.wv, a.bv)?;
        let o = tape.attention(q, k, v, layout)?;
        self.linear(tape, o, a.wo, a.bo)
    }

    fn ff(&self, tape: &mut Tape, x: Var, f: FfIdx) -> Result<Var, ModelError> {
        let h = self.linear(tape, x, f.w1, f.b1)?;
        let h = tape.relu(h)?;
        self.linear(tape, h, f.w2, f.b2)
    }

    fn embed(&mut self, tape: &mut Tape, seqs: &[&[usize]]) -> Result<Var, ModelError> {
        let ids: Vec<usize> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
        let x = tape.gather(self.vars[self.layout.embed], &ids)?;
        let x = tape.scale(x, (self.d as f64).sqrt())?;
        let longest = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let table = super::sinusoidal_positions(longest, self.d);
        let mut pos = Vec::with_capacity(ids.len() * self.d);
        for s in seqs {
            pos.extend_from_slice(&table[..s.len() * self.d]);
        }
        let pos = tape.constant(Tensor::new(vec![ids.len(), self.d], pos)?);
        let x = tape.add(x, pos)?;
        self.dropout(tape, x)
    }
}

fn segments(q: &[&[usize]], k: &[&[usize]]) -> Vec<Segment> {
    let mut out = Vec::with_capacity(q.len());
    let (mut qs, mut ks) = (0, 0);
    for (a, b) in q.iter().zip(k) {
        out.push(Segment {
            q_start: qs,
            q_len: a.len(),
            k_start: ks,
            k_len: b.len(),
        });
        qs += a.len();
        ks += b.len();
    }
    out
}

fn not_pad(seqs: &[&[usize]]) -> Vec<bool> {
    seqs.iter().flat_map(|s| s.iter().map(|&id| id != PAD)).collect()
}

/// Teacher-forced forward pass over a batch of `(source, decoder input)`
/// sequences stacked row-wise. Returns logits `[Σ|tgt| × vocab]`, rows in
/// batch order.
pub fn forward_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    vars: &[Var],
    srcs: &[&[usize]],
    tgts: &[&[usize]],
    mode: &mut ForwardMode<'_>,
) -> Result<Var, ModelError> {
    if srcs.is_empty() || srcs.len() != tgts.len() {
        return Err(ModelError::Empty);
    }
    for s in srcs.iter().chain(tgts) {
        params.check_ids(s)?;
    }
    let cfg = params.config();
    let mut ctx = Ctx {
        vars,
        layout: params.layout(),
        d: cfg.d_model,
        heads: cfg.num_heads,
        dropout: cfg.dropout_rate,
        mode,
    };

    let src_valid = not_pad(srcs);
    let enc_layout = AttentionLayout {
        num_heads: ctx.heads,
        causal: false,
        segments: segments(srcs, srcs),
        key_valid: src_valid.clone(),
    };
    let mut x = ctx.embed(tape, srcs)?;
    for l in ctx.layout.enc.clone() {
        let h = ctx.ln(tape, x, l.ln1)?;
        let a = ctx.mha(tape, h, h, l.attn, enc_layout.clone())?;
        let a = ctx.dropout(tape, a)?;
        x = tape.add(x, a)?;
        let h = ctx.ln(tape, x, l.ln2)?;
        let f = ctx.ff(tape, h, l.ff)?;
        let f = ctx.dropout(tape, f)?;
        x = tape.add(x, f)?;
    }
    let memory = ctx.ln(tape, x, ctx.layout.enc_ln)?;

    let self_layout = AttentionLayout {
        num_heads: ctx.heads,
        causal: true,
        segments: segments(tgts, tgts),
        key_valid: not_pad(tgts),
    };
    let cross_layout = AttentionLayout {
        num_heads: ctx.heads,
        causal: false,
        segments: segments(tgts, srcs),
        key_valid: src_valid,
    };
    let mut y = ctx.embed(tape, tgts)?;
    for l in ctx.layout.dec.clone() {
        let h = ctx.ln(tape, y, l.ln1)?;
        let a = ctx.mha(tape, h, h, l.self_attn, self_layout.clone())?;
        let a = ctx.dropout(tape, a)?;
        y = tape.add(y, a)?;
        let h = ctx.ln(tape, y, l.ln2)?;
        let c = ctx.mha(tape, h, memory, l.cross, cross_layout.clone())?;
        let c = ctx.dropout(tape, c)?;
        y = tape.add(y, c)?;
        let h = ctx.ln(tape, y, l.ln3)?;
        let f = ctx.ff(tape, h, l.ff)?;
        let f = ctx.dropout(tape, f)?;
        y = tape.add(y, f)?;
    }
    let out = ctx.ln(tape, y, ctx.layout.dec_ln)?;
    Ok(tape.matmul_nt(out, vars[ctx.layout.embed])?)
}

/// Logits `[|tgt| × vocab]` for a single pair, evaluation mode.
pub fn forward(params: &ModelParams, src: &[usize], tgt: &[usize]) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let vars = load_params(&mut tape, params, false);
    let logits = forward_on_tape(&mut tape, params, &vars, &[src], &[tgt], &mut ForwardMode::Eval)?;
    Ok(tape.value(logits).clone())
}
