//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of that scalar with respect to every node that needs one.

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::numeric::functional::{gelu, gelu_grad, layer_norm_row, softmax_in_place, LOG_CLAMP};
use crate::numeric::tensor::gemm;
use crate::numeric::{Real, Tensor};

enum Op<F> {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    AddBias(usize, usize),
    Scale(usize, F),
    MatMul(usize, usize),
    Gelu(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Gather {
        table: usize,
        ids: Vec<usize>,
    },
    SelectRows {
        src: usize,
        rows: Vec<usize>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        key_mask: Vec<bool>,
        probs: Vec<F>,
    },
    Dropout {
        src: usize,
        mask: Vec<F>,
    },
    Softmax(usize),
    CrossEntropy {
        probs: usize,
        target: usize,
    },
    WeightedSum(Vec<(usize, F)>),
    Sum(usize),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// The tape.
pub struct Graph<F: Real> {
    nodes: RefCell<Vec<Node<F>>>,
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, F: Real> {
    graph: &'g Graph<F>,
    id: usize,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node recorded after the first `len`. Vars pointing past
    /// the cut must not be used afterwards.
    pub fn truncate(&self, len: usize) {
        self.nodes.borrow_mut().truncate(len);
    }

    /// Leaf node. Gradients are tracked iff the tensor's `requires_grad` is set.
    pub fn leaf(&self, tensor: Tensor<F>) -> Var<'_, F> {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs)
    }

    pub fn constant(&self, tensor: Tensor<F>) -> Var<'_, F> {
        self.push(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn param(&self, tensor: Tensor<F>) -> Var<'_, F> {
        self.push(tensor.with_requires_grad(true), Op::Leaf, true)
    }

    fn push(&self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor<F>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// Attention probabilities recorded by an attention node, laid out
    /// `[heads, queries, keys]`.
    pub fn attention_probs(&self, var: Var<'_, F>) -> Option<(usize, Vec<F>)> {
        match &self.nodes.borrow()[var.id].op {
            Op::Attention { heads, probs, .. } => Some((*heads, probs.clone())),
            _ => None,
        }
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<Gradients<F>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward from a non-scalar of shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        if !nodes[loss.id].value.all_finite() {
            return Err(Error::Numeric("loss is not finite".into()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![F::one()]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if nodes[id].needs_grad {
                backprop(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, var: Var<'_, F>) -> Option<&[F]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var<'_, F>) -> Option<Vec<F>> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

fn accumulate<F: Real>(
    nodes: &[Node<F>],
    grads: &mut [Option<Vec<F>>],
    id: usize,
    f: impl FnOnce(&mut [F]),
) {
    if !nodes[id].needs_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![F::zero(); nodes[id].value.len()]);
    f(slot);
}

fn backprop<F: Real>(nodes: &[Node<F>], id: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &p in [a, b].iter() {
                accumulate(nodes, grads, *p, |ga| {
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                });
            }
        }
        Op::Mul(a, b) => {
            let av = nodes[*a].value.values();
            let bv = nodes[*b].value.values();
            accumulate(nodes, grads, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * bv[i];
                }
            });
            accumulate(nodes, grads, *b, |gb| {
                for i in 0..gb.len() {
                    gb[i] += g[i] * av[i];
                }
            });
        }
        Op::AddBias(a, b) => {
            accumulate(nodes, grads, *a, |ga| {
                for (x, &y) in ga.iter_mut().zip(g) {
                    *x += y;
                }
            });
            let n = nodes[*b].value.len();
            accumulate(nodes, grads, *b, |gb| {
                for row in g.chunks(n) {
                    for (x, &y) in gb.iter_mut().zip(row) {
                        *x += y;
                    }
                }
            });
        }
        Op::Scale(a, s) => {
            accumulate(nodes, grads, *a, |ga| {
                for (x, &y) in ga.iter_mut().zip(g) {
                    *x += *s * y;
                }
            });
        }
        Op::MatMul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (m, k) = (av.rows(), av.cols());
            let n = bv.cols();
            accumulate(nodes, grads, *a, |ga| {
                gemm(m, n, k, g, false, bv.values(), true, ga, true);
            });
            accumulate(nodes, grads, *b, |gb| {
                gemm(k, m, n, av.values(), true, g, false, gb, true);
            });
        }
        Op::Gelu(a) => {
            let av = nodes[*a].value.values();
            accumulate(nodes, grads, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * gelu_grad(av[i]);
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let gv = nodes[*gain].value.values();
            let n = gv.len();
            let nf = F::from_usize(n).unwrap();
            accumulate(nodes, grads, *x, |gx| {
                let mut dxhat = vec![F::zero(); n];
                for (r, &istd) in inv_std.iter().enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    let xr = &xhat[r * n..(r + 1) * n];
                    let mut mean_d = F::zero();
                    let mut mean_dx = F::zero();
                    for i in 0..n {
                        dxhat[i] = gr[i] * gv[i];
                        mean_d += dxhat[i];
                        mean_dx += dxhat[i] * xr[i];
                    }
                    mean_d /= nf;
                    mean_dx /= nf;
                    let out = &mut gx[r * n..(r + 1) * n];
                    for i in 0..n {
                        out[i] += istd * (dxhat[i] - mean_d - xr[i] * mean_dx);
                    }
                }
            });
            accumulate(nodes, grads, *gain, |gg| {
                for (gr, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                    for i in 0..n {
                        gg[i] += gr[i] * xr[i];
                    }
                }
            });
            accumulate(nodes, grads, *bias, |gb| {
                for gr in g.chunks(n) {
                    for i in 0..n {
                        gb[i] += gr[i];
                    }
                }
            });
        }
        Op::Gather { table, ids } => {
            let h = nodes[*table].value.cols();
            accumulate(nodes, grads, *table, |gt| {
                for (r, &tok) in ids.iter().enumerate() {
                    for c in 0..h {
                        gt[tok * h + c] += g[r * h + c];
                    }
                }
            });
        }
        Op::SelectRows { src, rows } => {
            let h = nodes[*src].value.cols();
            accumulate(nodes, grads, *src, |gs| {
                for (r, &row) in rows.iter().enumerate() {
                    for c in 0..h {
                        gs[row * h + c] += g[r * h + c];
                    }
                }
            });
        }
        Op::Attention {
            q,
            k,
            v,
            heads,
            key_mask,
            probs,
        } => attention_backward(nodes, grads, g, (*q, *k, *v), *heads, key_mask, probs),
        Op::Dropout { src, mask } => {
            accumulate(nodes, grads, *src, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * mask[i];
                }
            });
        }
        Op::Softmax(a) => {
            let p = nodes[id].value.values();
            let dot: F = p.iter().zip(g).map(|(&pi, &gi)| pi * gi).sum();
            accumulate(nodes, grads, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += p[i] * (g[i] - dot);
                }
            });
        }
        Op::CrossEntropy { probs, target } => {
            let p = nodes[*probs].value.values()[*target];
            if p > F::from_f64_lossy(LOG_CLAMP) {
                accumulate(nodes, grads, *probs, |gp| {
                    gp[*target] -= g[0] / p;
                });
            }
        }
        Op::WeightedSum(terms) => {
            for &(t, w) in terms {
                accumulate(nodes, grads, t, |gt| {
                    gt[0] += w * g[0];
                });
            }
        }
        Op::Sum(a) => {
            accumulate(nodes, grads, *a, |ga| {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            });
        }
    }
}

fn attention_backward<F: Real>(
    nodes: &[Node<F>],
    grads: &mut [Option<Vec<F>>],
    g: &[F],
    (q, k, v): (usize, usize, usize),
    heads: usize,
    key_mask: &[bool],
    probs: &[F],
) {
    let qv = nodes[q].value.values();
    let kv = nodes[k].value.values();
    let vv = nodes[v].value.values();
    let n = nodes[q].value.rows();
    let h = nodes[q].value.cols();
    let d = h / heads;
    let scale = F::from_usize(d).unwrap().sqrt().recip();

    let mut dq = vec![F::zero(); n * h];
    let mut dk = vec![F::zero(); n * h];
    let mut dvv = vec![F::zero(); n * h];
    let mut dp = vec![F::zero(); n];
    for hd in 0..heads {
        let off = hd * d;
        let p_head = &probs[hd * n * n..(hd + 1) * n * n];
        for i in 0..n {
            let p_row = &p_head[i * n..(i + 1) * n];
            let g_row = &g[i * h + off..i * h + off + d];
            let mut dot = F::zero();
            for j in 0..n {
                if !key_mask[j] {
                    dp[j] = F::zero();
                    continue;
                }
                let v_row = &vv[j * h + off..j * h + off + d];
                let mut s = F::zero();
                for c in 0..d {
                    s += g_row[c] * v_row[c];
                    dvv[j * h + off + c] += p_row[j] * g_row[c];
                }
                dp[j] = s;
                dot += p_row[j] * s;
            }
            for j in 0..n {
                if !key_mask[j] {
                    continue;
                }
                let ds = p_row[j] * (dp[j] - dot) * scale;
                if ds == F::zero() {
                    continue;
                }
                for c in 0..d {
                    dq[i * h + off + c] += ds * kv[j * h + off + c];
                    dk[j * h + off + c] += ds * qv[i * h + off + c];
                }
            }
        }
    }
    for (id, delta) in [(q, dq), (k, dk), (v, dvv)] {
        accumulate(nodes, grads, id, |gx| {
            for (x, y) in gx.iter_mut().zip(delta) {
                *x += y;
            }
        });
    }
}

impl<'g, F: Real> Var<'g, F> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<F> {
        self.graph
    }

    /// Copy of the node's value.
    pub fn value(&self) -> Tensor<F> {
        self.graph.value(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.value(self.id).shape().to_vec()
    }

    pub fn item(&self) -> F {
        self.graph.value(self.id).item()
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.graph.value(self.id).values().to_vec()
    }

    fn unary(&self, value: Tensor<F>, op: Op<F>) -> Var<'g, F> {
        let needs = self.graph.needs(&[self.id]);
        self.graph.push(value, op, needs)
    }

    pub fn add(&self, other: Var<'g, F>) -> Result<Var<'g, F>> {
        let value = {
            let a = self.graph.value(self.id);
            let b = self.graph.value(other.id);
            if a.shape() != b.shape() {
                return Err(Error::Dimension(format!(
                    "add {:?} + {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let vals = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(&x, &y)| x + y)
                .collect();
            Tensor::new(a.shape().to_vec(), vals)?
        };
        let needs = self.graph.needs(&[self.id, other.id]);
        Ok(self.graph.push(value, Op::Add(self.id, other.id), needs))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'g, F>) -> Result<Var<'g, F>> {
        let value = {
            let a = self.graph.value(self.id);
            let b = self.graph.value(other.id);
            if a.shape() != b.shape() {
                return Err(Error::Dimension(format!(
                    "mul {:?} * {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let vals = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(&x, &y)| x * y)
                .collect();
            Tensor::new(a.shape().to_vec(), vals)?
        };
        let needs = self.graph.needs(&[self.id, other.id]);
        Ok(self.graph.push(value, Op::Mul(self.id, other.id), needs))
    }

    /// Adds a vector to every row.
    pub fn add_bias(&self, bias: Var<'g, F>) -> Result<Var<'g, F>> {
        let value = {
            let a = self.graph.value(self.id);
            let b = self.graph.value(bias.id);
            if b.len() != a.cols() {
                return Err(Error::Dimension(format!(
                    "bias of length {} for rows of width {}",
                    b.len(),
                    a.cols()
                )));
            }
            let mut out = a.clone().with_requires_grad(false);
            for r in 0..out.rows() {
                for (x, &y) in out.row_mut(r).iter_mut().zip(b.values()) {
                    *x += y;
                }
            }
            out
        };
        let needs = self.graph.needs(&[self.id, bias.id]);
        Ok(self.graph.push(value, Op::AddBias(self.id, bias.id), needs))
    }

    pub fn scale(&self, s: F) -> Var<'g, F> {
        let mut value = self.value().with_requires_grad(false);
        for x in value.values_mut() {
            *x *= s;
        }
        self.unary(value, Op::Scale(self.id, s))
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&self, other: Var<'g, F>) -> Result<Var<'g, F>> {
        let value = {
            let a = self.graph.value(self.id);
            let b = self.graph.value(other.id);
            if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
                return Err(Error::Dimension(format!(
                    "matmul {:?} x {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            let mut out = vec![F::zero(); m * n];
            gemm(
                m,
                k,
                n,
                a.values(),
                false,
                b.values(),
                false,
                &mut out,
                false,
            );
            Tensor::new(vec![m, n], out)?
        };
        let needs = self.graph.needs(&[self.id, other.id]);
        Ok(self.graph.push(value, Op::MatMul(self.id, other.id), needs))
    }

    /// `x W + b` for a row-major batch `x`.
    pub fn linear(&self, weight: Var<'g, F>, bias: Option<Var<'g, F>>) -> Result<Var<'g, F>> {
        let out = self.matmul(weight)?;
        match bias {
            Some(b) => out.add_bias(b),
            None => Ok(out),
        }
    }

    pub fn gelu(&self) -> Var<'g, F> {
        let mut value = self.value().with_requires_grad(false);
        for x in value.values_mut() {
            *x = gelu(*x);
        }
        self.unary(value, Op::Gelu(self.id))
    }

    /// Row-wise layer normalization.
    pub fn layer_norm(&self, gain: Var<'g, F>, bias: Var<'g, F>, eps: F) -> Result<Var<'g, F>> {
        let (value, xhat, inv_std) = {
            let x = self.graph.value(self.id);
            let gv = self.graph.value(gain.id);
            let bv = self.graph.value(bias.id);
            let n = x.cols();
            if gv.len() != n || bv.len() != n {
                return Err(Error::Dimension(format!(
                    "layer_norm width {n} with gain {} bias {}",
                    gv.len(),
                    bv.len()
                )));
            }
            let mut out = vec![F::zero(); x.len()];
            let mut xhat = vec![F::zero(); x.len()];
            let mut inv_std = Vec::with_capacity(x.rows());
            for r in 0..x.rows() {
                inv_std.push(layer_norm_row(
                    x.row(r),
                    gv.values(),
                    bv.values(),
                    eps,
                    &mut out[r * n..(r + 1) * n],
                    Some(&mut xhat[r * n..(r + 1) * n]),
                ));
            }
            (Tensor::new(x.shape().to_vec(), out)?, xhat, inv_std)
        };
        let needs = self.graph.needs(&[self.id, gain.id, bias.id]);
        Ok(self.graph.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// Row lookup: `self` is a `[vocab, h]` table.
    pub fn gather(&self, ids: &[usize]) -> Result<Var<'g, F>> {
        let value = {
            let t = self.graph.value(self.id);
            let (rows, h) = (t.rows(), t.cols());
            let mut out = Vec::with_capacity(ids.len() * h);
            for &id in ids {
                if id >= rows {
                    return Err(Error::Index(format!("row {id} of a {rows}-row table")));
                }
                out.extend_from_slice(t.row(id));
            }
            Tensor::new(vec![ids.len(), h], out)?
        };
        Ok(self.unary(
            value,
            Op::Gather {
                table: self.id,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Var<'g, F>> {
        let value = {
            let t = self.graph.value(self.id);
            let h = t.cols();
            let mut out = Vec::with_capacity(rows.len() * h);
            for &r in rows {
                if r >= t.rows() {
                    return Err(Error::Index(format!("row {r} of {}", t.rows())));
                }
                out.extend_from_slice(t.row(r));
            }
            Tensor::new(vec![rows.len(), h], out)?
        };
        Ok(self.unary(
            value,
            Op::SelectRows {
                src: self.id,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn row(&self, r: usize) -> Result<Var<'g, F>> {
        self.select_rows(&[r])
    }

    /// Multi-head scaled dot-product attention over `[n, h]` projections.
    /// Keys with `key_mask[j] == false` receive no attention.
    pub fn attention(
        &self,
        k: Var<'g, F>,
        v: Var<'g, F>,
        heads: usize,
        key_mask: &[bool],
    ) -> Result<Var<'g, F>> {
        let (value, probs) = {
            let qv = self.graph.value(self.id);
            let kv = self.graph.value(k.id);
            let vv = self.graph.value(v.id);
            let (n, h) = (qv.rows(), qv.cols());
            if kv.shape() != qv.shape() || vv.shape() != qv.shape() {
                return Err(Error::Dimension("attention q/k/v shapes differ".into()));
            }
            if heads == 0 || h % heads != 0 {
                return Err(Error::Dimension(format!("{heads} heads for width {h}")));
            }
            if key_mask.len() != n || !key_mask.iter().any(|&m| m) {
                return Err(Error::Dimension("attention key mask".into()));
            }
            let d = h / heads;
            let scale = F::from_usize(d).unwrap().sqrt().recip();
            let (q, kk, vvv) = (qv.values(), kv.values(), vv.values());
            let mut probs = vec![F::zero(); heads * n * n];
            let mut out = vec![F::zero(); n * h];
            for hd in 0..heads {
                let off = hd * d;
                for i in 0..n {
                    let row = &mut probs[(hd * n + i) * n..(hd * n + i + 1) * n];
                    let qi = &q[i * h + off..i * h + off + d];
                    for j in 0..n {
                        if key_mask[j] {
                            let kj = &kk[j * h + off..j * h + off + d];
                            row[j] = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<F>() * scale;
                        }
                    }
                    softmax_in_place(row, Some(key_mask));
                    let o = &mut out[i * h + off..i * h + off + d];
                    for j in 0..n {
                        if row[j] == F::zero() {
                            continue;
                        }
                        let vj = &vvv[j * h + off..j * h + off + d];
                        for c in 0..d {
                            o[c] += row[j] * vj[c];
                        }
                    }
                }
            }
            (Tensor::new(vec![n, h], out)?, probs)
        };
        let needs = self.graph.needs(&[self.id, k.id, v.id]);
        Ok(self.graph.push(
            value,
            Op::Attention {
                q: self.id,
                k: k.id,
                v: v.id,
                heads,
                key_mask: key_mask.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Elementwise product with a fixed (already rescaled) dropout mask.
    pub fn dropout(&self, mask: Vec<F>) -> Result<Var<'g, F>> {
        let mut value = self.value().with_requires_grad(false);
        if mask.len() != value.len() {
            return Err(Error::Dimension("dropout mask length".into()));
        }
        for (x, &m) in value.values_mut().iter_mut().zip(&mask) {
            *x *= m;
        }
        Ok(self.unary(value, Op::Dropout { src: self.id, mask }))
    }

    /// Softmax over all elements; entries where `mask` is false get 0.
    pub fn softmax(&self, mask: Option<&[bool]>) -> Result<Var<'g, F>> {
        let mut value = self.value().with_requires_grad(false);
        if value.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("softmax input is not finite".into()));
        }
        if let Some(m) = mask {
            if m.len() != value.len() || !m.iter().any(|&b| b) {
                return Err(Error::Dimension("softmax mask".into()));
            }
        }
        softmax_in_place(value.values_mut(), mask);
        Ok(self.unary(value, Op::Softmax(self.id)))
    }

    /// `-ln p[target]` with the probability clamped at 1e-12.
    pub fn cross_entropy(&self, target: usize) -> Result<Var<'g, F>> {
        let value = {
            let p = self.graph.value(self.id);
            let pt = *p
                .values()
                .get(target)
                .ok_or_else(|| Error::Index(format!("target {target} of {} classes", p.len())))?;
            Tensor::scalar(-pt.max(F::from_f64_lossy(LOG_CLAMP)).ln())
        };
        Ok(self.unary(
            value,
            Op::CrossEntropy {
                probs: self.id,
                target,
            },
        ))
    }

    pub fn softmax_cross_entropy(
        &self,
        target: usize,
        mask: Option<&[bool]>,
    ) -> Result<Var<'g, F>> {
        self.softmax(mask)?.cross_entropy(target)
    }

    pub fn sum(&self) -> Var<'g, F> {
        let s: F = self.graph.value(self.id).values().iter().copied().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }
}

/// `sum_i w_i * x_i` over single-element nodes.
pub fn weighted_sum<'g, F: Real>(
    graph: &'g Graph<F>,
    terms: &[(Var<'g, F>, F)],
) -> Result<Var<'g, F>> {
    let mut total = F::zero();
    for (v, w) in terms {
        let t = graph.value(v.id);
        if t.len() != 1 {
            return Err(Error::Dimension("weighted_sum over a non-scalar".into()));
        }
        total += *w * t.item();
    }
    let ids: Vec<usize> = terms.iter().map(|(v, _)| v.id).collect();
    let needs = graph.needs(&ids);
    Ok(graph.push(
        Tensor::scalar(total),
        Op::WeightedSum(terms.iter().map(|(v, w)| (v.id, *w)).collect()),
        needs,
    ))
}
