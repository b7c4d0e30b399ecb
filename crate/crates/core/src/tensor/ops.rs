use super::{Node, Result, Tape, Tensor, TensorError, Var};

/// Segment layout for the fused multi-head attention op.
///
/// Queries and keys of several sequences are stacked row-wise; each segment
/// names the query rows `[q_start, q_start + q_len)` that attend to key rows
/// `[k_start, k_start + k_len)`. Keys flagged invalid (padding) receive zero
/// weight. With `causal`, query `i` of a segment only sees keys `j <= i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayout {
    pub num_heads: usize,
    pub causal: bool,
    pub segments: Vec<Segment>,
    pub key_valid: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

pub(super) enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize, b_transposed: bool },
    Add { a: Var, b: Var },
    AddRow { x: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Relu { x: Var },
    Sum { x: Var },
    Softmax { x: Var, outer: usize, n: usize, inner: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, ignore: usize, probs: Vec<f64>, count: usize },
    Gather { table: Var, ids: Vec<usize> },
    Mask { x: Var, mask: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, layout: AttentionLayout, probs: Vec<f64> },
}

impl Op {
    pub(super) fn operands(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::AddRow { x, bias } => vec![*x, *bias],
            Op::Scale { x, .. }
            | Op::Relu { x }
            | Op::Sum { x }
            | Op::Softmax { x, .. }
            | Op::Mask { x, .. } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Gather { table, .. } => vec![*table],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }

    pub(super) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::AddRow { .. } => "add_row",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Relu { .. } => "relu",
            Op::Sum { .. } => "sum",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Gather { .. } => "gather",
            Op::Mask { .. } => "mask",
            Op::Attention { .. } => "attention",
        }
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: bounds asserted above; strides address only elements inside those bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward pass of [`Tape::attention`] on raw row-major buffers. Returns the
/// output rows and the attention weights in segment/head/query order.
pub(crate) fn attention_kernel(
    qd: &[f64],
    kd: &[f64],
    vd: &[f64],
    d: usize,
    layout: &AttentionLayout,
) -> (Vec<f64>, Vec<f64>) {
    let heads = layout.num_heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; qd.len()];
    let mut probs = Vec::new();
    for s in &layout.segments {
        for h in 0..heads {
            let off = h * dh;
            for i in 0..s.q_len {
                let qrow = &qd[(s.q_start + i) * d + off..][..dh];
                let base = probs.len();
                for j in 0..s.k_len {
                    let visible = layout.key_valid[s.k_start + j] && !(layout.causal && j > i);
                    probs.push(if visible {
                        let krow = &kd[(s.k_start + j) * d + off..][..dh];
                        dot(qrow, krow) * scale
                    } else {
                        f64::NEG_INFINITY
                    });
                }
                softmax_in_place(&mut probs[base..]);
                let orow = &mut out[(s.q_start + i) * d + off..][..dh];
                for j in 0..s.k_len {
                    let p = probs[base + j];
                    if p != 0.0 {
                        let vrow = &vd[(s.k_start + j) * d + off..][..dh];
                        for (o, x) in orow.iter_mut().zip(vrow) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
    }
    (out, probs)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-wise normalization over `cols`; returns `(y, xhat, rstd)`.
pub(crate) fn layer_norm_kernel(
    src: &[f64],
    cols: usize,
    g: &[f64],
    b: &[f64],
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = src.len() / cols;
    let mut xhat = vec![0.0; src.len()];
    let mut rstd = vec![0.0; rows];
    let mut data = vec![0.0; src.len()];
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let s = 1.0 / (var + eps).sqrt();
        rstd[r] = s;
        for c in 0..cols {
            let h = (row[c] - mean) * s;
            xhat[r * cols + c] = h;
            data[r * cols + c] = h * g[c] + b[c];
        }
    }
    (data, xhat, rstd)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

impl Tape {
    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(TensorError::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    /// Matrix product `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`, without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_transposed: bool) -> Result<Var> {
        let name = if b_transposed { "matmul_nt" } else { "matmul" };
        let (m, k) = self.matrix_dims(a, name)?;
        let (br, bc) = self.matrix_dims(b, name)?;
        let (kb, n) = if b_transposed { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(self.mismatch(name, a, b));
        }
        let mut out = vec![0.0; m * n];
        let b_strides = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            b_strides,
            &mut out,
            0.0,
        );
        let value = Tensor { shape: vec![m, n], data: out };
        self.record(name, value, Op::MatMul { a, b, m, k, n, b_transposed })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor { shape: self.shape(a).to_vec(), data };
        self.record("add", value, Op::Add { a, b })
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, cols) = self.value(x).as_matrix();
        if self.shape(bias) != [cols] {
            return Err(self.mismatch("add_row", x, bias));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(v, c)| v + c))
            .collect();
        let value = Tensor { shape: self.shape(x).to_vec(), data };
        self.record("add_row", value, Op::AddRow { x, bias })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor { shape: self.shape(a).to_vec(), data };
        self.record("mul", value, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        let value = Tensor { shape: self.shape(x).to_vec(), data };
        self.record("scale", value, Op::Scale { x, c })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor { shape: self.shape(x).to_vec(), data };
        self.record("relu", value, Op::Relu { x })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.record("sum", Tensor::scalar(total), Op::Sum { x })
    }

    /// Elementwise product with a fixed mask (dropout, with the keep scaling
    /// folded into the mask values).
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(TensorError::Shape {
                op: "mask",
                lhs: self.shape(x).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = self.value(x).data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor { shape: self.shape(x).to_vec(), data };
        self.record("mask", value, Op::Mask { x, mask })
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::Axis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        let mut lane = vec![0.0; n];
        for o in 0..outer {
            for i in 0..inner {
                for (j, slot) in lane.iter_mut().enumerate() {
                    *slot = src[(o * n + j) * inner + i];
                }
                softmax_in_place(&mut lane);
                for (j, p) in lane.iter().enumerate() {
                    data[(o * n + j) * inner + i] = *p;
                }
            }
        }
        let value = Tensor { shape, data };
        self.record("softmax", value, Op::Softmax { x, outer, n, inner })
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (_, cols) = self.value(x).as_matrix();
        if self.shape(gain) != [cols] {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.shape(bias) != [cols] {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        let (data, xhat, rstd) = layer_norm_kernel(
            self.value(x).data(),
            cols,
            self.value(gain).data(),
            self.value(bias).data(),
            eps,
        );
        let value = Tensor { shape: self.shape(x).to_vec(), data };
        self.record("layer_norm", value, Op::LayerNorm { x, gain, bias, xhat, rstd })
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits: [T×V]`. Positions whose target equals `ignore` are skipped;
    /// with no scored position the loss is 0.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Result<Var> {
        let (rows, vocab) = self.matrix_dims(logits, "cross_entropy")?;
        if targets.len() != rows {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                lhs: vec![rows, vocab],
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t != ignore && t >= vocab) {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: bad,
                limit: vocab,
            });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = 0.0;
        let mut count = 0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &mut probs[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            if t != ignore {
                total += lse - row[t];
                count += 1;
            }
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        self.record(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
        )
    }

    /// Selects rows of `table: [V×d]`, producing `[ids.len()×d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(table, "gather")?;
        if ids.is_empty() {
            return Err(TensorError::Invalid("gather: empty id list".into()));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::Index {
                    op: "gather",
                    index: id,
                    limit: rows,
                });
            }
            data.extend_from_slice(&src[id * cols..(id + 1) * cols]);
        }
        let value = Tensor { shape: vec![ids.len(), cols], data };
        self.record("gather", value, Op::Gather { table, ids: ids.to_vec() })
    }

    /// Fused scaled dot-product multi-head attention over stacked sequences.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttentionLayout) -> Result<Var> {
        let (nq, d) = self.matrix_dims(q, "attention")?;
        let (nk, dk) = self.matrix_dims(k, "attention")?;
        if dk != d || self.shape(v) != self.shape(k) {
            return Err(self.mismatch("attention", q, k));
        }
        if layout.num_heads == 0 || d % layout.num_heads != 0 || layout.key_valid.len() != nk {
            return Err(TensorError::Invalid("attention: bad layout".into()));
        }
        for s in &layout.segments {
            if s.q_start + s.q_len > nq || s.k_start + s.k_len > nk {
                return Err(TensorError::Invalid("attention: segment out of range".into()));
            }
        }
        let (out, probs) =
            attention_kernel(self.value(q).data(), self.value(k).data(), self.value(v).data(), d, &layout);
        let value = Tensor { shape: vec![nq, d], data: out };
        self.record("attention", value, Op::Attention { q, k, v, layout, probs })
    }
}

fn val(nodes: &[Node], v: Var) -> &[f64] {
    nodes[v.0].value.data()
}

fn wants(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].requires_grad
}

/// Vector-Jacobian products of node `i` given its output gradient `g`.
pub(super) fn backward(nodes: &[Node], i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let mut out = Vec::new();
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::MatMul { a, b, m, k, n, b_transposed } => {
            if wants(nodes, a) {
                // dA = G · Bᵀ   ([m×n] · [n×k])
                let mut da = vec![0.0; m * k];
                let bt = if b_transposed { (k as isize, 1) } else { (1, n as isize) };
                gemm(m, n, k, g, (n as isize, 1), val(nodes, b), bt, &mut da, 0.0);
                out.push((a, da));
            }
            if wants(nodes, b) {
                let mut db = vec![0.0; k * n];
                if b_transposed {
                    // B is [n×k]: dB = Gᵀ · A
                    gemm(n, m, k, g, (1, n as isize), val(nodes, a), (k as isize, 1), &mut db, 0.0);
                } else {
                    // dB = Aᵀ · G
                    gemm(k, m, n, val(nodes, a), (1, k as isize), g, (n as isize, 1), &mut db, 0.0);
                }
                out.push((b, db));
            }
        }
        &Op::Add { a, b } => {
            out.push((a, g.to_vec()));
            out.push((b, g.to_vec()));
        }
        &Op::AddRow { x, bias } => {
            out.push((x, g.to_vec()));
            if wants(nodes, bias) {
                let cols = val(nodes, bias).len();
                let mut db = vec![0.0; cols];
                for row in g.chunks(cols) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                out.push((bias, db));
            }
        }
        &Op::Mul { a, b } => {
            let (av, bv) = (val(nodes, a), val(nodes, b));
            out.push((a, g.iter().zip(bv).map(|(g, y)| g * y).collect()));
            out.push((b, g.iter().zip(av).map(|(g, x)| g * x).collect()));
        }
        &Op::Scale { x, c } => out.push((x, g.iter().map(|v| v * c).collect())),
        &Op::Relu { x } => {
            let xv = val(nodes, x);
            out.push((x, g.iter().zip(xv).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect()));
        }
        &Op::Sum { x } => out.push((x, vec![g[0]; val(nodes, x).len()])),
        Op::Mask { x, mask } => out.push((*x, g.iter().zip(mask).map(|(g, m)| g * m).collect())),
        &Op::Softmax { x, outer, n, inner } => {
            let y = nodes[i].value.data();
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for c in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + c;
                    let dot: f64 = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                    for j in 0..n {
                        dx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                    }
                }
            }
            out.push((x, dx));
        }
        Op::LayerNorm { x, gain, bias, xhat, rstd } => {
            let gv = val(nodes, *gain);
            let cols = gv.len();
            if wants(nodes, *x) {
                let mut dx = vec![0.0; xhat.len()];
                for (r, s) in rstd.iter().enumerate() {
                    let row = r * cols..(r + 1) * cols;
                    let (gr, hr) = (&g[row.clone()], &xhat[row.clone()]);
                    let dh: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                    let mean_dh = dh.iter().sum::<f64>() / cols as f64;
                    let mean_dhh = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                    for c in 0..cols {
                        dx[r * cols + c] = s * (dh[c] - mean_dh - hr[c] * mean_dhh);
                    }
                }
                out.push((*x, dx));
            }
            let mut dgain = vec![0.0; cols];
            let mut dbias = vec![0.0; cols];
            for (gr, hr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                for c in 0..cols {
                    dgain[c] += gr[c] * hr[c];
                    dbias[c] += gr[c];
                }
            }
            out.push((*gain, dgain));
            out.push((*bias, dbias));
        }
        Op::CrossEntropy { logits, targets, ignore, probs, count } => {
            let mut dx = vec![0.0; probs.len()];
            if *count > 0 {
                let vocab = probs.len() / targets.len();
                let w = g[0] / *count as f64;
                for (r, &t) in targets.iter().enumerate() {
                    if t == *ignore {
                        continue;
                    }
                    let row = r * vocab..(r + 1) * vocab;
                    for (d, p) in dx[row.clone()].iter_mut().zip(&probs[row]) {
                        *d = w * p;
                    }
                    dx[r * vocab + t] -= w;
                }
            }
            out.push((*logits, dx));
        }
        Op::Gather { table, ids } => {
            let tv = val(nodes, *table);
            let cols = nodes[i].value.shape()[1];
            let mut dt = vec![0.0; tv.len()];
            for (r, &id) in ids.iter().enumerate() {
                for c in 0..cols {
                    dt[id * cols + c] += g[r * cols + c];
                }
            }
            out.push((*table, dt));
        }
        Op::Attention { q, k, v, layout, probs } => {
            let (qd, kd, vd) = (val(nodes, *q), val(nodes, *k), val(nodes, *v));
            let d = nodes[i].value.shape()[1];
            let heads = layout.num_heads;
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let mut dq = vec![0.0; qd.len()];
            let mut dk = vec![0.0; kd.len()];
            let mut dv = vec![0.0; vd.len()];
            let mut cursor = 0;
            let mut ds = Vec::new();
            for s in &layout.segments {
                for h in 0..heads {
                    let off = h * dh;
                    for i in 0..s.q_len {
                        let p = &probs[cursor..cursor + s.k_len];
                        cursor += s.k_len;
                        let qi = (s.q_start + i) * d + off;
                        let grow = &g[qi..qi + dh];
                        ds.clear();
                        let mut dot = 0.0;
                        for (j, &pj) in p.iter().enumerate() {
                            let kj = (s.k_start + j) * d + off;
                            let dp = if pj != 0.0 {
                                grow.iter().zip(&vd[kj..kj + dh]).map(|(a, b)| a * b).sum::<f64>()
                            } else {
                                0.0
                            };
                            dot += pj * dp;
                            ds.push(dp);
                            if pj != 0.0 {
                                for c in 0..dh {
                                    dv[kj + c] += pj * grow[c];
                                }
                            }
                        }
                        for (j, &pj) in p.iter().enumerate() {
                            if pj == 0.0 {
                                continue;
                            }
                            let w = pj * (ds[j] - dot) * scale;
                            let kj = (s.k_start + j) * d + off;
                            for c in 0..dh {
                                dq[qi + c] += w * kd[kj + c];
                                dk[kj + c] += w * qd[qi + c];
                            }
                        }
                    }
                }
            }
            out.push((*q, dq));
            out.push((*k, dk));
            out.push((*v, dv));
        }
    }
    out
}
