//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node whose inputs were recorded earlier, so the
//! node order is a topological order and [`Tape::backward`] is a single
//! reverse sweep. The tape also counts matmul FLOPs (`2*m*k*n` per product)
//! for the forward and backward sweeps separately.

use crate::error::{Error, Result};
use crate::kernels::{self, Strided};
use crate::tensor::{gelu, gelu_grad, Element, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Additive mask applied to attention scores above the diagonal.
pub const CAUSAL_MASK: f64 = -1e9;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Gelu(Var),
    SoftmaxRows(Var),
    Sum(Var),
    LayerNorm {
        x: Var,
        w: Var,
        b: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    forward_flops: u64,
    backward_flops: u64,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mm_flops(m: usize, k: usize, n: usize) -> u64 {
    2 * m as u64 * k as u64 * n as u64
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            forward_flops: 0,
            backward_flops: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Matmul FLOPs executed by recorded forward operations.
    pub fn forward_flops(&self) -> u64 {
        self.forward_flops
    }

    /// Matmul FLOPs executed by the backward sweep.
    pub fn backward_flops(&self) -> u64 {
        self.backward_flops
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).as_rows();
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_rowmajor(
            m,
            k,
            n,
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            false,
        );
        self.forward_flops += mm_flops(m, k, n);
        let mut shape = self.value(a).shape().to_vec();
        *shape.last_mut().expect("matmul lhs has a dimension") = n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), rg))
    }

    /// Element-wise addition; a 1-D right operand matching the trailing
    /// dimension is broadcast as a bias row.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        if va.shape() == vb.shape() {
            let out = va.add(vb)?;
            Ok(self.push(out, Op::Add(a, b), rg))
        } else {
            let out = va.add_bias(vb)?;
            Ok(self.push(out, Op::AddBias(a, b), rg))
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    /// Softmax over the trailing dimension, stabilized by max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.last_dim() == 0 {
            return Err(Error::Shape("softmax over an empty dimension".into()));
        }
        x.check_finite("softmax input")?;
        let mut out = x.clone();
        let n = out.last_dim();
        for row in out.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SoftmaxRows(a), rg))
    }

    pub fn layer_norm(&mut self, x: Var, w: Var, b: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (rows, e) = xv.as_rows();
        let (wv, bv) = (self.value(w), self.value(b));
        if wv.shape() != [e] || bv.shape() != [e] {
            return Err(Error::Shape(format!(
                "layer_norm affine params {:?}/{:?} vs width {e}",
                wv.shape(),
                bv.shape()
            )));
        }
        let mut out = vec![T::zero(); rows * e];
        let mut xhat = vec![T::zero(); rows * e];
        let mut rstd = vec![T::zero(); rows];
        let inv_e = T::from_f64(1.0 / e as f64);
        let eps = T::from_f64(eps);
        for r in 0..rows {
            let row = &xv.data()[r * e..(r + 1) * e];
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) * inv_e;
            let var = row
                .iter()
                .fold(T::zero(), |s, &v| s + (v - mean) * (v - mean))
                * inv_e;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..e {
                let h = (row[j] - mean) * rs;
                xhat[r * e + j] = h;
                out[r * e + j] = h * wv.data()[j] + bv.data()[j];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                w,
                b,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Gathers rows of a `[vocab, width]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (vocab, e) = t.dims2()?;
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= vocab {
                return Err(Error::TokenOutOfRange { id, vocab });
            }
            out.extend_from_slice(&t.data()[id * e..(id + 1) * e]);
        }
        let out = Tensor::new(vec![ids.len(), e], out)?;
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Multi-head causal self-attention on `[batch*seq, heads*head_dim]`
    /// queries, keys and values: per head `softmax(Q K^T / sqrt(D) + M) V`
    /// with `M` the additive causal mask.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    ) -> Result<Var> {
        let shape = self.value(q).shape().to_vec();
        let (n, e) = self.value(q).as_rows();
        if self.value(k).shape() != shape.as_slice() || self.value(v).shape() != shape.as_slice() {
            return Err(Error::Shape("attention q/k/v shapes differ".into()));
        }
        if n != batch * seq || heads == 0 || e % heads != 0 {
            return Err(Error::Shape(format!(
                "attention geometry: rows {n}, width {e}, batch {batch}, seq {seq}, heads {heads}"
            )));
        }
        let d = e / heads;
        let scale = T::from_f64(1.0 / (d as f64).sqrt());
        let mask = T::from_f64(CAUSAL_MASK);
        let (qd, kd, vd) = (
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
        );
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        let mut out = vec![T::zero(); n * e];
        for b in 0..batch {
            for h in 0..heads {
                let base = b * seq * e + h * d;
                let p = &mut probs[(b * heads + h) * seq * seq..][..seq * seq];
                kernels::gemm(
                    seq,
                    d,
                    seq,
                    qd,
                    Strided::rowmajor(base, e),
                    kd,
                    Strided::transposed(base, e),
                    p,
                    Strided::rowmajor(0, seq),
                    false,
                );
                for i in 0..seq {
                    let row = &mut p[i * seq..(i + 1) * seq];
                    for (j, x) in row.iter_mut().enumerate() {
                        *x = *x * scale;
                        if j > i {
                            *x = *x + mask;
                        }
                    }
                    softmax_in_place(row);
                }
                kernels::gemm(
                    seq,
                    seq,
                    d,
                    p,
                    Strided::rowmajor(0, seq),
                    vd,
                    Strided::rowmajor(base, e),
                    &mut out,
                    Strided::rowmajor(base, e),
                    false,
                );
            }
        }
        self.forward_flops += 2 * batch as u64 * heads as u64 * mm_flops(seq, d, seq);
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let out = Tensor::new(shape, out)?;
        Ok(self.push(
            out,
            Op::CausalAttention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (`[rows, vocab]`).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, vocab) = lv.as_rows();
        if targets.len() != rows {
            return Err(Error::Shape(format!(
                "cross_entropy: {} targets for {rows} rows",
                targets.len()
            )));
        }
        let mut probs = lv.data().to_vec();
        let mut total = 0.0f64;
        for (r, &t) in targets.iter().enumerate() {
            if t >= vocab {
                return Err(Error::TokenOutOfRange { id: t, vocab });
            }
            let row = &mut probs[r * vocab..(r + 1) * vocab];
            let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
            let lse = row.iter().fold(T::zero(), |s, &x| s + (x - max).exp()).ln() + max;
            total += (lse - row[t]).as_f64();
            for x in row.iter_mut() {
                *x = (*x - lse).exp();
            }
        }
        let loss = T::from_f64(total / rows.max(1) as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar loss. Returns `d loss / d v` for every
    /// recorded value that requires a gradient and is reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut flops = 0u64;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (m, k) = av.as_rows();
                    let n = bv.last_dim();
                    if self.nodes[a.0].requires_grad {
                        let mut da = vec![T::zero(); m * k];
                        kernels::matmul_ex(
                            m,
                            n,
                            k,
                            g.data(),
                            false,
                            bv.data(),
                            true,
                            &mut da,
                            false,
                        );
                        flops += mm_flops(m, n, k);
                        accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), da)?);
                    }
                    if self.nodes[b.0].requires_grad {
                        let mut db = vec![T::zero(); k * n];
                        kernels::matmul_ex(
                            k,
                            m,
                            n,
                            av.data(),
                            true,
                            g.data(),
                            false,
                            &mut db,
                            false,
                        );
                        flops += mm_flops(k, m, n);
                        accumulate(&mut grads, *b, Tensor::new(vec![k, n], db)?);
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, *b, g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, g.mul(bv)?);
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, *b, g.mul(av)?);
                    }
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads, *a, g.map(|x| x * s));
                }
                Op::AddBias(a, bias) => {
                    if self.nodes[bias.0].requires_grad {
                        let n = g.last_dim();
                        let mut db = vec![T::zero(); n];
                        for row in g.data().chunks(n) {
                            for (d, &x) in db.iter_mut().zip(row) {
                                *d = *d + x;
                            }
                        }
                        accumulate(&mut grads, *bias, Tensor::new(vec![n], db)?);
                    }
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Gelu(a) => {
                    let x = &self.nodes[a.0].value;
                    let dx: Vec<T> = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&gy, &xv)| gy * gelu_grad(xv))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(x.shape().to_vec(), dx)?);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let n = y.last_dim();
                    let mut dx = g.into_data();
                    for (drow, yrow) in dx.chunks_mut(n).zip(y.data().chunks(n)) {
                        softmax_backward_in_place(drow, yrow);
                    }
                    accumulate(&mut grads, *a, Tensor::new(y.shape().to_vec(), dx)?);
                }
                Op::Sum(a) => {
                    let gy = g.item()?;
                    let shape = self.nodes[a.0].value.shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(&shape, gy));
                }
                Op::LayerNorm {
                    x,
                    w,
                    b,
                    xhat,
                    rstd,
                } => {
                    let wv = &self.nodes[w.0].value;
                    let e = wv.len();
                    let rows = rstd.len();
                    if self.nodes[w.0].requires_grad || self.nodes[b.0].requires_grad {
                        let mut dw = vec![T::zero(); e];
                        let mut db = vec![T::zero(); e];
                        for r in 0..rows {
                            for j in 0..e {
                                let gy = g.data()[r * e + j];
                                dw[j] = dw[j] + gy * xhat[r * e + j];
                                db[j] = db[j] + gy;
                            }
                        }
                        if self.nodes[w.0].requires_grad {
                            accumulate(&mut grads, *w, Tensor::new(vec![e], dw)?);
                        }
                        if self.nodes[b.0].requires_grad {
                            accumulate(&mut grads, *b, Tensor::new(vec![e], db)?);
                        }
                    }
                    if self.nodes[x.0].requires_grad {
                        let inv_e = T::from_f64(1.0 / e as f64);
                        let mut dx = vec![T::zero(); rows * e];
                        for r in 0..rows {
                            let gr = &g.data()[r * e..(r + 1) * e];
                            let hr = &xhat[r * e..(r + 1) * e];
                            let mut mean_dh = T::zero();
                            let mut mean_dh_h = T::zero();
                            for j in 0..e {
                                let dh = gr[j] * wv.data()[j];
                                mean_dh = mean_dh + dh;
                                mean_dh_h = mean_dh_h + dh * hr[j];
                            }
                            mean_dh = mean_dh * inv_e;
                            mean_dh_h = mean_dh_h * inv_e;
                            for j in 0..e {
                                let dh = gr[j] * wv.data()[j];
                                dx[r * e + j] = rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                            }
                        }
                        let shape = self.nodes[x.0].value.shape().to_vec();
                        accumulate(&mut grads, *x, Tensor::new(shape, dx)?);
                    }
                }
                Op::Embedding { table, ids } => {
                    let tv = &self.nodes[table.0].value;
                    let e = tv.last_dim();
                    let mut dt = Tensor::zeros(tv.shape());
                    let dd = dt.data_mut();
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..e {
                            dd[id * e + j] = dd[id * e + j] + g.data()[r * e + j];
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::CausalAttention {
                    q,
                    k,
                    v,
                    batch,
                    seq,
                    heads,
                    probs,
                } => {
                    let (batch, seq, heads) = (*batch, *seq, *heads);
                    let (qv, kv, vv) = (
                        &self.nodes[q.0].value,
                        &self.nodes[k.0].value,
                        &self.nodes[v.0].value,
                    );
                    let shape = qv.shape().to_vec();
                    let (n, e) = qv.as_rows();
                    let d = e / heads;
                    let scale = T::from_f64(1.0 / (d as f64).sqrt());
                    let mut dq = vec![T::zero(); n * e];
                    let mut dk = vec![T::zero(); n * e];
                    let mut dv = vec![T::zero(); n * e];
                    let mut dp = vec![T::zero(); seq * seq];
                    for b in 0..batch {
                        for h in 0..heads {
                            let base = b * seq * e + h * d;
                            let p = &probs[(b * heads + h) * seq * seq..][..seq * seq];
                            // dP = dO V^T
                            kernels::gemm(
                                seq,
                                d,
                                seq,
                                g.data(),
                                Strided::rowmajor(base, e),
                                vv.data(),
                                Strided::transposed(base, e),
                                &mut dp,
                                Strided::rowmajor(0, seq),
                                false,
                            );
                            // dV = P^T dO
                            kernels::gemm(
                                seq,
                                seq,
                                d,
                                p,
                                Strided::transposed(0, seq),
                                g.data(),
                                Strided::rowmajor(base, e),
                                &mut dv,
                                Strided::rowmajor(base, e),
                                false,
                            );
                            for (drow, prow) in dp.chunks_mut(seq).zip(p.chunks(seq)) {
                                softmax_backward_in_place(drow, prow);
                                for x in drow.iter_mut() {
                                    *x = *x * scale;
                                }
                            }
                            // dQ = dS K, dK = dS^T Q
                            kernels::gemm(
                                seq,
                                seq,
                                d,
                                &dp,
                                Strided::rowmajor(0, seq),
                                kv.data(),
                                Strided::rowmajor(base, e),
                                &mut dq,
                                Strided::rowmajor(base, e),
                                false,
                            );
                            kernels::gemm(
                                seq,
                                seq,
                                d,
                                &dp,
                                Strided::transposed(0, seq),
                                qv.data(),
                                Strided::rowmajor(base, e),
                                &mut dk,
                                Strided::rowmajor(base, e),
                                false,
                            );
                        }
                    }
                    flops += 4 * batch as u64 * heads as u64 * mm_flops(seq, d, seq);
                    let (q, k, v) = (*q, *k, *v);
                    if self.nodes[q.0].requires_grad {
                        accumulate(&mut grads, q, Tensor::new(shape.clone(), dq)?);
                    }
                    if self.nodes[k.0].requires_grad {
                        accumulate(&mut grads, k, Tensor::new(shape.clone(), dk)?);
                    }
                    if self.nodes[v.0].requires_grad {
                        accumulate(&mut grads, v, Tensor::new(shape, dv)?);
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let gy = g.item()?;
                    let lv = &self.nodes[logits.0].value;
                    let vocab = lv.last_dim();
                    let rows = targets.len();
                    let s = gy * T::from_f64(1.0 / rows.max(1) as f64);
                    let mut dl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        dl[r * vocab + t] = dl[r * vocab + t] - T::one();
                    }
                    for x in dl.iter_mut() {
                        *x = *x * s;
                    }
                    accumulate(&mut grads, *logits, Tensor::new(lv.shape().to_vec(), dl)?);
                }
            }
            self.backward_flops += flops;
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e = *e + *x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn softmax_in_place<T: Element>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    let inv = T::one() / sum;
    for x in row.iter_mut() {
        *x = *x * inv;
    }
}

/// Turns `dy` into `dx = y * (dy - <dy, y>)` in place.
fn softmax_backward_in_place<T: Element>(dy: &mut [T], y: &[T]) {
    let dot = dy.iter().zip(y).fold(T::zero(), |s, (&a, &b)| s + a * b);
    for (d, &yv) in dy.iter_mut().zip(y) {
        *d = yv * (*d - dot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_uniform_and_large_inputs() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let s = tape.softmax_rows(a).unwrap();
        for &p in tape.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let b = tape.constant(t(&[2], &[1000.0, 1000.0]));
        let s = tape.softmax_rows(b).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2], &[f64::NAN, 0.0]));
        assert!(matches!(tape.softmax_rows(a), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 7.0]));
        let loss = tape.sum(w);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(Error::NotScalar(_))));
    }

    #[test]
    fn squared_residual_gradient_matches_closed_form() {
        // loss = sum((W x - y)^2), dL/dW = 2 (W x - y) x^T
        let w0 = [1.0, 2.0, -1.0, 0.5];
        let x0 = [3.0, -1.0];
        let y0 = [0.25, 2.0];
        let mut tape = Tape::<f64>::new();
        let w = tape.param(t(&[2, 2], &w0));
        let x = tape.constant(t(&[2, 1], &x0));
        let y = tape.constant(t(&[2, 1], &y0));
        let wx = tape.matmul(w, x).unwrap();
        let r = tape.sub(wx, y).unwrap();
        let sq = tape.mul(r, r).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        let res = [
            w0[0] * x0[0] + w0[1] * x0[1] - y0[0],
            w0[2] * x0[0] + w0[3] * x0[1] - y0[1],
        ];
        let want = [
            2.0 * res[0] * x0[0],
            2.0 * res[0] * x0[1],
            2.0 * res[1] * x0[0],
            2.0 * res[1] * x0[1],
        ];
        let got = grads.get(w).unwrap().data();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn matmul_flops_are_counted() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::zeros(&[3, 4]));
        let b = tape.param(Tensor::zeros(&[4, 5]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.forward_flops(), 2 * 3 * 4 * 5);
        let loss = tape.sum(c);
        tape.backward(loss).unwrap();
        assert_eq!(tape.backward_flops(), 2 * 2 * 3 * 4 * 5);
    }

    #[test]
    fn cross_entropy_uniform_is_log_vocab() {
        let mut tape = Tape::<f64>::new();
        let l = tape.param(Tensor::zeros(&[2, 4]));
        let loss = tape.cross_entropy(l, &[0, 3]).unwrap();
        assert!((tape.value(loss).item().unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!(matches!(
            tape.cross_entropy(l, &[0, 4]),
            Err(Error::TokenOutOfRange { id: 4, vocab: 4 })
        ));
    }

    #[test]
    fn cross_entropy_confident_correct_is_near_zero() {
        let mut tape = Tape::<f64>::new();
        let l = tape.param(t(&[1, 3], &[0.0, 60.0, 0.0]));
        let loss = tape.cross_entropy(l, &[1]).unwrap();
        assert!(tape.value(loss).item().unwrap() < 1e-25);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 4], &[2.5; 4]));
        let w = tape.constant(t(&[4], &[1.0; 4]));
        let b = tape.constant(t(&[4], &[0.0; 4]));
        let y = tape.layer_norm(x, w, b, 1e-5).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0; 4]);
    }

    #[test]
    fn embedding_rejects_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let table = tape.param(Tensor::zeros(&[3, 2]));
        assert!(matches!(
            tape.embedding(table, &[0, 3]),
            Err(Error::TokenOutOfRange { id: 3, vocab: 3 })
        ));
    }
}
