//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its output value and enough cached state to run the reverse sweep.
//! [`Graph::backward`] walks the tape in reverse from a scalar loss and
//! returns gradients for every node that depends on a parameter.
//!
//! Attention, layer normalization and batch normalization are recorded as
//! single fused nodes; everything else is elementwise or a matrix product.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{gemm, MatMut, MatRef};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probability clamp used by the cross-entropy losses.
pub const PROB_EPS: f64 = 1e-7;
/// Variance epsilon of layer and batch normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param,
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    GatherRows {
        src: Var,
        index: Vec<Option<usize>>,
    },
    ConcatRows(Vec<Var>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_mean: Vec<T>,
        batch_var_unbiased: Vec<T>,
    },
    BatchNormFrozen {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        seq: usize,
        heads: usize,
        mask: Vec<bool>,
        probs: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Bce {
        p: Var,
        targets: Vec<T>,
    },
    Ce {
        p: Var,
        classes: Vec<usize>,
    },
    Grl {
        x: Var,
        lambda: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// One forward pass worth of recorded operations.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, Var>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// Inference graph: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            dropout_rng: None,
        }
    }

    /// Training graph: dropout draws its masks from `rng`.
    pub fn training(rng: ChaCha8Rng) -> Self {
        Self {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            dropout_rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    /// Hands back the dropout stream so callers can continue it across graphs.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.dropout_rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, &[])
    }

    /// Leaf bound to a learnable array; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(&id) {
            return *v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, &[]);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add: shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| *x + *y).collect();
        let out = Tensor::from_vec(va.shape(), data);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// `x + bias` with `bias` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(bias));
        let d = vx.last_dim();
        assert_eq!(vb.len(), d, "add_row: bias length");
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(d) {
            for (a, b) in row.iter_mut().zip(vb.data()) {
                *a += *b;
            }
        }
        let out = Tensor::from_vec(vx.shape(), data);
        self.push(out, Op::AddRow(x, bias), &[x, bias])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul: shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| *x * *y).collect();
        let out = Tensor::from_vec(va.shape(), data);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| *v * c).collect();
        let out = Tensor::from_vec(vx.shape(), data);
        self.push(out, Op::Scale(x, c), &[x])
    }

    /// `x @ w` where `x` is `(.., k)` and `w` is `(k, m)`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        assert_eq!(vw.shape().len(), 2, "matmul: weight must be 2-d");
        let (k, m) = (vw.shape()[0], vw.shape()[1]);
        assert_eq!(vx.last_dim(), k, "matmul: inner dimension");
        let n = vx.rows();
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().expect("matmul input has an axis") = m;
        let mut out = vec![T::zero(); n * m];
        gemm(
            T::one(),
            MatRef::row_major(vx.data(), 0, n, k),
            MatRef::row_major(vw.data(), 0, k, m),
            T::zero(),
            MatMut::row_major(&mut out, 0, n, m),
        );
        self.push(Tensor::from_vec(&shape, out), Op::MatMul(x, w), &[x, w])
    }

    /// `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| gelu_fwd(*v)).collect();
        let out = Tensor::from_vec(vx.shape(), data);
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let data = vx.data().iter().map(|v| sigmoid(*v)).collect();
        let out = Tensor::from_vec(vx.shape(), data);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let d = vx.last_dim();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(d) {
            softmax_in_place(row);
        }
        let out = Tensor::from_vec(vx.shape(), data);
        self.push(out, Op::Softmax(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let s: T = vx.data().iter().copied().sum();
        let m = s / T::lit(vx.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// Rows `ids` of the `(V, d)` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        assert_eq!(vt.shape().len(), 2, "embedding: table must be 2-d");
        let (rows, d) = (vt.shape()[0], vt.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::protocol(format!(
                    "embedding index {id} out of range for table of {rows} rows"
                )));
            }
            out.extend_from_slice(&vt.data()[id * d..(id + 1) * d]);
        }
        let out = Tensor::from_vec(&[ids.len(), d], out);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Row gather; `None` entries produce zero rows.
    pub fn gather_rows(&mut self, src: Var, index: &[Option<usize>]) -> Var {
        let vs = self.value(src);
        let d = vs.last_dim();
        let n = vs.rows();
        let mut out = vec![T::zero(); index.len() * d];
        for (dst, idx) in out.chunks_mut(d).zip(index) {
            if let Some(i) = *idx {
                assert!(i < n, "gather_rows: index {i} out of {n}");
                dst.copy_from_slice(&vs.data()[i * d..(i + 1) * d]);
            }
        }
        let out = Tensor::from_vec(&[index.len(), d], out);
        self.push(
            out,
            Op::GatherRows {
                src,
                index: index.to_vec(),
            },
            &[src],
        )
    }

    /// Stacks the rows of several `(n_i, d)` tensors.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let d = self.value(parts[0]).last_dim();
        let mut data = Vec::new();
        for p in parts {
            let vp = self.value(*p);
            assert_eq!(vp.last_dim(), d, "concat_rows: width mismatch");
            data.extend_from_slice(vp.data());
        }
        let n = data.len() / d;
        let out = Tensor::from_vec(&[n, d], data);
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Normalizes each row of `x` over its trailing axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let eps = T::lit(NORM_EPS);
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = vx.last_dim();
        let n = vx.rows();
        let inv_d = T::lit(1.0 / d as f64);
        let mut xhat = vec![T::zero(); n * d];
        let mut inv_std = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * d];
        for r in 0..n {
            let row = &vx.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_d;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for c in 0..d {
                let h = (row[c] - mean) * inv;
                xhat[r * d + c] = h;
                out[r * d + c] = h * vg.data()[c] + vb.data()[c];
            }
        }
        let out = Tensor::from_vec(vx.shape(), out);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Batch normalization of `(n, d)` input using the statistics of this batch.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let eps = T::lit(NORM_EPS);
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = vx.last_dim();
        let n = vx.rows();
        let inv_n = T::lit(1.0 / n as f64);
        let mut mean = vec![T::zero(); d];
        for row in vx.data().chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += *v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_n);
        let mut var = vec![T::zero(); d];
        for row in vx.data().chunks(d) {
            for c in 0..d {
                let dv = row[c] - mean[c];
                var[c] += dv * dv;
            }
        }
        let unbiased_scale = if n > 1 {
            T::lit(1.0 / (n - 1) as f64)
        } else {
            T::zero()
        };
        let batch_var_unbiased: Vec<T> = var.iter().map(|v| *v * unbiased_scale).collect();
        var.iter_mut().for_each(|v| *v *= inv_n);
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); n * d];
        let mut out = vec![T::zero(); n * d];
        for r in 0..n {
            for c in 0..d {
                let h = (vx.data()[r * d + c] - mean[c]) * inv_std[c];
                xhat[r * d + c] = h;
                out[r * d + c] = h * vg.data()[c] + vb.data()[c];
            }
        }
        let out = Tensor::from_vec(vx.shape(), out);
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var_unbiased,
            },
            &[x, gamma, beta],
        )
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_frozen(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
    ) -> Var {
        let eps = T::lit(NORM_EPS);
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = vx.last_dim();
        let n = vx.rows();
        let inv_std: Vec<T> = running_var
            .iter()
            .map(|v| T::one() / (*v + eps).sqrt())
            .collect();
        let mut xhat = vec![T::zero(); n * d];
        let mut out = vec![T::zero(); n * d];
        for r in 0..n {
            for c in 0..d {
                let h = (vx.data()[r * d + c] - running_mean[c]) * inv_std[c];
                xhat[r * d + c] = h;
                out[r * d + c] = h * vg.data()[c] + vb.data()[c];
            }
        }
        let out = Tensor::from_vec(vx.shape(), out);
        self.push(
            out,
            Op::BatchNormFrozen {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Batch mean and unbiased variance recorded by a [`Graph::batch_norm`] node.
    pub fn batch_stats(&self, v: Var) -> Option<(&[T], &[T])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm {
                batch_mean,
                batch_var_unbiased,
                ..
            } => Some((batch_mean, batch_var_unbiased)),
            _ => None,
        }
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q`, `k`, `v` are `(batch * seq, d)`; `key_mask` has one flag per
    /// position and masked keys receive exactly zero weight. Every sequence
    /// needs at least one attendable key.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        seq: usize,
        heads: usize,
        key_mask: &[bool],
    ) -> Result<Var> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        let d = vq.last_dim();
        let rows = vq.rows();
        assert_eq!(vk.shape(), vq.shape(), "attention: key shape");
        assert_eq!(vv.shape(), vq.shape(), "attention: value shape");
        assert!(seq > 0 && rows % seq == 0, "attention: rows not a multiple of seq");
        assert_eq!(key_mask.len(), rows, "attention: mask length");
        assert!(heads > 0 && d % heads == 0, "attention: heads must divide width");
        let batch = rows / seq;
        let dh = d / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        for b in 0..batch {
            if !key_mask[b * seq..(b + 1) * seq].iter().any(|m| *m) {
                return Err(Error::numeric(format!(
                    "attention sequence {b} has no attendable position"
                )));
            }
        }
        let (qd, kd, vd) = (vq.data(), vk.data(), vv.data());
        let mut probs = vec![T::zero(); batch * heads * seq * seq];
        let mut out = vec![T::zero(); rows * d];
        for b in 0..batch {
            let mask = &key_mask[b * seq..(b + 1) * seq];
            for h in 0..heads {
                let col = h * dh;
                for i in 0..seq {
                    let qi = &qd[(b * seq + i) * d + col..][..dh];
                    let p = &mut probs[((b * heads + h) * seq + i) * seq..][..seq];
                    let mut max = T::neg_infinity();
                    for j in 0..seq {
                        if mask[j] {
                            let kj = &kd[(b * seq + j) * d + col..][..dh];
                            let s = dot(qi, kj) * scale;
                            p[j] = s;
                            if s > max {
                                max = s;
                            }
                        }
                    }
                    let mut total = T::zero();
                    for j in 0..seq {
                        if mask[j] {
                            let e = (p[j] - max).exp();
                            p[j] = e;
                            total += e;
                        }
                    }
                    let oi = &mut out[(b * seq + i) * d + col..][..dh];
                    for j in 0..seq {
                        if mask[j] {
                            p[j] /= total;
                            let vj = &vd[(b * seq + j) * d + col..][..dh];
                            axpy(p[j], vj, oi);
                        }
                    }
                }
            }
        }
        let out = Tensor::from_vec(vq.shape(), out);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                seq,
                heads,
                mask: key_mask.to_vec(),
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Attention weights of an attention node as `(batch, heads, seq, seq)`.
    pub fn attention_weights(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Inverted dropout; the identity on inference graphs or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
        let Some(rng) = self.dropout_rng.as_mut() else {
            return x;
        };
        if rate == 0.0 {
            return x;
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let n = self.nodes[x.0].value.len();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let vx = self.value(x);
        let data = vx.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect();
        let out = Tensor::from_vec(vx.shape(), data);
        self.push(out, Op::Dropout { x, mask }, &[x])
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 `targets`.
    pub fn bce(&mut self, p: Var, targets: &[T]) -> Var {
        let vp = self.value(p);
        assert_eq!(vp.len(), targets.len(), "bce: target count");
        let loss = bce_mean(vp.data(), targets);
        self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                targets: targets.to_vec(),
            },
            &[p],
        )
    }

    /// Mean `-ln p[class]` over the rows of a `(n, k)` probability matrix.
    pub fn cross_entropy(&mut self, p: Var, classes: &[usize]) -> Result<Var> {
        let vp = self.value(p);
        let k = vp.last_dim();
        assert_eq!(vp.rows(), classes.len(), "cross_entropy: class count");
        let mut total = T::zero();
        for (row, &c) in vp.data().chunks(k).zip(classes) {
            if c >= k {
                return Err(Error::protocol(format!(
                    "class index {c} out of range for {k} classes"
                )));
            }
            total += ce_single(row, c);
        }
        let loss = total / T::lit(classes.len() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Ce {
                p,
                classes: classes.to_vec(),
            },
            &[p],
        ))
    }

    /// Gradient reversal: identity forward, `-lambda` times the incoming gradient backward.
    pub fn grl(&mut self, x: Var, lambda: T) -> Var {
        let out = self.value(x).clone();
        self.push(out, Op::Grl { x, lambda }, &[x])
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 || lv.shape().iter().any(|&s| s != 1) {
            return Err(Error::protocol(format!(
                "backward requires a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !lv.item().is_finite() {
            return Err(Error::numeric(format!("non-finite loss {}", lv.item())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self.param_nodes.iter().map(|(id, v)| (*id, *v)).collect();
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.nodes[bias.0].needs_grad {
                    let d = g.last_dim();
                    let mut gb = vec![T::zero(); d];
                    for row in g.data().chunks(d) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += *v;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Tensor::from_vec(&shape, gb));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    let d = g.data().iter().zip(vb.data()).map(|(x, y)| *x * *y).collect();
                    self.accumulate(grads, *a, Tensor::from_vec(va.shape(), d));
                }
                if self.nodes[b.0].needs_grad {
                    let d = g.data().iter().zip(va.data()).map(|(x, y)| *x * *y).collect();
                    self.accumulate(grads, *b, Tensor::from_vec(vb.shape(), d));
                }
            }
            Op::Scale(x, c) => {
                let d = g.data().iter().map(|v| *v * *c).collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), d));
            }
            Op::MatMul(x, w) => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (k, m) = (vw.shape()[0], vw.shape()[1]);
                let n = vx.rows();
                if self.nodes[x.0].needs_grad {
                    let mut dx = vec![T::zero(); n * k];
                    gemm(
                        T::one(),
                        MatRef::row_major(g.data(), 0, n, m),
                        MatRef::row_major(vw.data(), 0, k, m).t(),
                        T::zero(),
                        MatMut::row_major(&mut dx, 0, n, k),
                    );
                    self.accumulate(grads, *x, Tensor::from_vec(vx.shape(), dx));
                }
                if self.nodes[w.0].needs_grad {
                    let mut dw = vec![T::zero(); k * m];
                    gemm(
                        T::one(),
                        MatRef::row_major(vx.data(), 0, n, k).t(),
                        MatRef::row_major(g.data(), 0, n, m),
                        T::zero(),
                        MatMut::row_major(&mut dw, 0, k, m),
                    );
                    self.accumulate(grads, *w, Tensor::from_vec(vw.shape(), dw));
                }
            }
            Op::Gelu(x) => {
                let vx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(gv, xv)| *gv * gelu_grad(*xv))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(vx.shape(), d));
            }
            Op::Sigmoid(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, y)| *gv * *y * (T::one() - *y))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), d));
            }
            Op::Softmax(x) => {
                let k = g.last_dim();
                let mut d = vec![T::zero(); g.len()];
                for ((dr, gr), pr) in d
                    .chunks_mut(k)
                    .zip(g.data().chunks(k))
                    .zip(node.value.data().chunks(k))
                {
                    let s: T = gr.iter().zip(pr).map(|(a, b)| *a * *b).sum();
                    for c in 0..k {
                        dr[c] = pr[c] * (gr[c] - s);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), d));
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::filled(&shape, g.item()));
            }
            Op::Mean(x) => {
                let vx = self.value(*x);
                let v = g.item() / T::lit(vx.len() as f64);
                self.accumulate(grads, *x, Tensor::filled(vx.shape(), v));
            }
            Op::Embedding { table, ids } => {
                let vt = self.value(*table);
                let d = vt.shape()[1];
                let mut dt = Tensor::zeros(vt.shape());
                let buf = dt.data_mut();
                for (row, &id) in g.data().chunks(d).zip(ids) {
                    for (acc, v) in buf[id * d..(id + 1) * d].iter_mut().zip(row) {
                        *acc += *v;
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::GatherRows { src, index } => {
                let vs = self.value(*src);
                let d = vs.last_dim();
                let mut ds = Tensor::zeros(vs.shape());
                let buf = ds.data_mut();
                for (row, idx) in g.data().chunks(d).zip(index) {
                    if let Some(i) = *idx {
                        for (acc, v) in buf[i * d..(i + 1) * d].iter_mut().zip(row) {
                            *acc += *v;
                        }
                    }
                }
                self.accumulate(grads, *src, ds);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let vp = self.value(*p);
                    let len = vp.len();
                    if self.nodes[p.0].needs_grad {
                        let slice = g.data()[offset..offset + len].to_vec();
                        self.accumulate(grads, *p, Tensor::from_vec(vp.shape(), slice));
                    }
                    offset += len;
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let vg = self.value(*gamma);
                let d = g.last_dim();
                let n = g.rows();
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let mut dx = vec![T::zero(); n * d];
                let inv_d = T::lit(1.0 / d as f64);
                for r in 0..n {
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let hr = &xhat[r * d..(r + 1) * d];
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for c in 0..d {
                        dgamma[c] += gr[c] * hr[c];
                        dbeta[c] += gr[c];
                        let dh = gr[c] * vg.data()[c];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[c];
                    }
                    for c in 0..d {
                        let dh = gr[c] * vg.data()[c];
                        dx[r * d + c] = inv_std[r] * (dh - inv_d * sum_dh - hr[c] * inv_d * sum_dh_h);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), dx));
                self.accumulate(grads, *gamma, Tensor::from_vec(vg.shape(), dgamma));
                let bshape = self.value(*beta).shape().to_vec();
                self.accumulate(grads, *beta, Tensor::from_vec(&bshape, dbeta));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                ..
            } => {
                let vg = self.value(*gamma);
                let d = g.last_dim();
                let n = g.rows();
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let mut sum_dh = vec![T::zero(); d];
                let mut sum_dh_h = vec![T::zero(); d];
                for r in 0..n {
                    for c in 0..d {
                        let gv = g.data()[r * d + c];
                        let h = xhat[r * d + c];
                        dgamma[c] += gv * h;
                        dbeta[c] += gv;
                        let dh = gv * vg.data()[c];
                        sum_dh[c] += dh;
                        sum_dh_h[c] += dh * h;
                    }
                }
                let inv_n = T::lit(1.0 / n as f64);
                let mut dx = vec![T::zero(); n * d];
                for r in 0..n {
                    for c in 0..d {
                        let dh = g.data()[r * d + c] * vg.data()[c];
                        let h = xhat[r * d + c];
                        dx[r * d + c] =
                            inv_std[c] * (dh - inv_n * sum_dh[c] - h * inv_n * sum_dh_h[c]);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), dx));
                self.accumulate(grads, *gamma, Tensor::from_vec(vg.shape(), dgamma));
                let bshape = self.value(*beta).shape().to_vec();
                self.accumulate(grads, *beta, Tensor::from_vec(&bshape, dbeta));
            }
            Op::BatchNormFrozen {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let vg = self.value(*gamma);
                let d = g.last_dim();
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let mut dx = vec![T::zero(); g.len()];
                for (r, row) in g.data().chunks(d).enumerate() {
                    for c in 0..d {
                        dgamma[c] += row[c] * xhat[r * d + c];
                        dbeta[c] += row[c];
                        dx[r * d + c] = row[c] * vg.data()[c] * inv_std[c];
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), dx));
                self.accumulate(grads, *gamma, Tensor::from_vec(vg.shape(), dgamma));
                let bshape = self.value(*beta).shape().to_vec();
                self.accumulate(grads, *beta, Tensor::from_vec(&bshape, dbeta));
            }
            Op::Attention {
                q,
                k,
                v,
                seq,
                heads,
                mask,
                probs,
            } => {
                let (seq, heads) = (*seq, *heads);
                let (vq, vk, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let d = vq.last_dim();
                let rows = vq.rows();
                let batch = rows / seq;
                let dh = d / heads;
                let scale = T::lit(1.0 / (dh as f64).sqrt());
                let (qd, kd, vd, gd) = (vq.data(), vk.data(), vv.data(), g.data());
                let mut dq = vec![T::zero(); rows * d];
                let mut dk = vec![T::zero(); rows * d];
                let mut dv = vec![T::zero(); rows * d];
                let mut dp = vec![T::zero(); seq];
                for b in 0..batch {
                    let m = &mask[b * seq..(b + 1) * seq];
                    for h in 0..heads {
                        let col = h * dh;
                        for i in 0..seq {
                            let p = &probs[((b * heads + h) * seq + i) * seq..][..seq];
                            let gi = &gd[(b * seq + i) * d + col..][..dh];
                            let mut s = T::zero();
                            for j in 0..seq {
                                if m[j] {
                                    let vj = &vd[(b * seq + j) * d + col..][..dh];
                                    dp[j] = dot(gi, vj);
                                    s += dp[j] * p[j];
                                    axpy(p[j], gi, &mut dv[(b * seq + j) * d + col..][..dh]);
                                }
                            }
                            let qi = &qd[(b * seq + i) * d + col..][..dh];
                            for j in 0..seq {
                                if m[j] {
                                    let ds = p[j] * (dp[j] - s) * scale;
                                    let kj = &kd[(b * seq + j) * d + col..][..dh];
                                    axpy(ds, kj, &mut dq[(b * seq + i) * d + col..][..dh]);
                                    axpy(ds, qi, &mut dk[(b * seq + j) * d + col..][..dh]);
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *q, Tensor::from_vec(vq.shape(), dq));
                self.accumulate(grads, *k, Tensor::from_vec(vk.shape(), dk));
                self.accumulate(grads, *v, Tensor::from_vec(vv.shape(), dv));
            }
            Op::Dropout { x, mask } => {
                let d = g.data().iter().zip(mask).map(|(a, m)| *a * *m).collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), d));
            }
            Op::Bce { p, targets } => {
                let vp = self.value(*p);
                let n = T::lit(targets.len() as f64);
                let eps = T::lit(PROB_EPS);
                let upstream = g.item();
                let d = vp
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(pv, y)| {
                        let pc = clamp_prob(*pv, eps);
                        upstream * (-*y / pc + (T::one() - *y) / (T::one() - pc)) / n
                    })
                    .collect();
                self.accumulate(grads, *p, Tensor::from_vec(vp.shape(), d));
            }
            Op::Ce { p, classes } => {
                let vp = self.value(*p);
                let k = vp.last_dim();
                let n = T::lit(classes.len() as f64);
                let eps = T::lit(PROB_EPS);
                let upstream = g.item();
                let mut d = vec![T::zero(); vp.len()];
                for (r, &c) in classes.iter().enumerate() {
                    let pc = clamp_prob(vp.data()[r * k + c], eps);
                    d[r * k + c] = -upstream / (pc * n);
                }
                self.accumulate(grads, *p, Tensor::from_vec(vp.shape(), d));
            }
            Op::Grl { x, lambda } => {
                let factor = -*lambda;
                let d = g.data().iter().map(|v| *v * factor).collect();
                self.accumulate(grads, *x, Tensor::from_vec(g.shape(), d));
            }
        }
    }
}

/// Output of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to the node `v`, if it depends on a parameter.
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(pid, _)| *pid == id)
            .and_then(|(_, v)| self.of(*v))
    }

    /// Parameter gradients indexed by [`ParamId`]; parameters unused by the graph get `None`.
    pub fn into_param_grads(mut self, param_count: usize) -> Vec<Option<Tensor<T>>> {
        let mut out: Vec<Option<Tensor<T>>> = (0..param_count).map(|_| None).collect();
        for (id, v) in &self.params {
            out[id.0] = self.grads[v.0].take();
        }
        out
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * *xv;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_A) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn clamp_prob<T: Scalar>(p: T, eps: T) -> T {
    p.max(eps).min(T::one() - eps)
}

pub(crate) fn bce_mean<T: Scalar>(p: &[T], targets: &[T]) -> T {
    let eps = T::lit(PROB_EPS);
    let total: T = p
        .iter()
        .zip(targets)
        .map(|(pv, y)| {
            let pc = clamp_prob(*pv, eps);
            -(*y * pc.ln() + (T::one() - *y) * (T::one() - pc).ln())
        })
        .sum();
    total / T::lit(p.len() as f64)
}

pub(crate) fn ce_single<T: Scalar>(probs: &[T], class: usize) -> T {
    -clamp_prob(probs[class], T::lit(PROB_EPS)).ln()
}
