//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Tape`] records every operation of one forward pass. Nodes are appended
//! in evaluation order, so walking the tape backwards visits each node after
//! all of its consumers. Parameters are borrowed from a [`ParamStore`] for the
//! lifetime of the tape and their gradients are written to a [`Gradients`]
//! buffer owned by the caller, which lets several tapes run concurrently over
//! one immutable parameter snapshot.

use super::kernels;
use super::{gemm, Gradients, ParamId, ParamStore, Result, Tensor, TensorError};
use rand::Rng;
use std::borrow::Cow;
use std::collections::HashMap;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Boolean attention mask broadcast against a tensor of equal rank.
///
/// Every dimension of the mask either equals the target's or is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    shape: Vec<usize>,
    allowed: Vec<bool>,
}

impl Mask {
    pub fn new(shape: impl Into<Vec<usize>>, allowed: Vec<bool>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != allowed.len() {
            return Err(TensorError::BadLength {
                shape,
                expected,
                actual: allowed.len(),
            });
        }
        Ok(Self { shape, allowed })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Offset of the mask row matching each row of a tensor of `shape`.
    fn row_offsets(&self, shape: &[usize]) -> Result<Vec<usize>> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "softmax mask",
            left: shape.to_vec(),
            right: self.shape.clone(),
        };
        if shape.len() != self.shape.len() || shape.last() != self.shape.last() {
            return Err(mismatch());
        }
        if shape
            .iter()
            .zip(&self.shape)
            .any(|(&t, &m)| m != t && m != 1)
        {
            return Err(mismatch());
        }
        let lead = &shape[..shape.len() - 1];
        let mlead = &self.shape[..shape.len() - 1];
        // Mask strides (in rows) with zero stride on broadcast dimensions.
        let mut strides = vec![0usize; lead.len()];
        let mut acc = 1;
        for i in (0..lead.len()).rev() {
            strides[i] = if mlead[i] == 1 { 0 } else { acc };
            acc *= mlead[i];
        }
        let rows: usize = lead.iter().product();
        let cols = *shape.last().unwrap();
        let mut out = Vec::with_capacity(rows);
        let mut idx = vec![0usize; lead.len()];
        for _ in 0..rows {
            let r: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            out.push(r * cols);
            for d in (0..lead.len()).rev() {
                idx[d] += 1;
                if idx[d] < lead[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(out)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        layout: MatMulLayout,
    },
    Add(Var, Var),
    Mul(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Softmax {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu {
        x: Var,
    },
    Dropout {
        x: Var,
        multiplier: Vec<f64>,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    SplitHeads {
        x: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    Sum {
        x: Var,
    },
}

/// How the operands of a matmul are batched.
#[derive(Debug, Clone, Copy)]
enum MatMulLayout {
    /// `b` is a plain matrix shared by every batch of `a`.
    SharedRhs { rows: usize, k: usize, n: usize },
    /// `a` is a plain matrix shared by every batch of `b`.
    SharedLhs { batch: usize, m: usize, k: usize, n: usize },
    /// Equal batch prefixes, one product per batch entry.
    Batched { batch: usize, m: usize, k: usize, n: usize },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
}

/// One recorded forward computation.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    bound: HashMap<ParamId, Var>,
    store: Option<&'p ParamStore>,
    consumed: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
            store: None,
            consumed: false,
        }
    }

    /// A tape that binds parameters from `store`.
    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            ..Self::new()
        }
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of distinct parameters bound on this tape.
    pub fn bound_params(&self) -> usize {
        self.bound.len()
    }

    /// A constant input; receives no gradient outside the tape.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf)
    }

    /// Binds a parameter. Binding the same id twice yields the same `Var`,
    /// so a weight used in two places has a single storage site.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let store = self.store.expect("tape was created without a parameter store");
        let v = self.push(Cow::Borrowed(store.value(id)), Op::Param(id));
        self.bound.insert(id, v);
        v
    }

    /// Matrix product over the last two dimensions; `trans_b` multiplies by
    /// `bᵀ`. Batch prefixes must be equal, or one operand must be a matrix.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            left: sa.clone(),
            right: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, ka) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if ka != kb {
            return Err(mismatch());
        }
        let k = ka;
        let pa = &sa[..sa.len() - 2];
        let pb = &sb[..sb.len() - 2];
        let (layout, prefix) = if pb.is_empty() {
            let rows = pa.iter().product::<usize>() * m;
            (MatMulLayout::SharedRhs { rows, k, n }, pa.to_vec())
        } else if pa.is_empty() {
            let batch = pb.iter().product();
            (MatMulLayout::SharedLhs { batch, m, k, n }, pb.to_vec())
        } else if pa == pb {
            let batch = pa.iter().product();
            (MatMulLayout::Batched { batch, m, k, n }, pa.to_vec())
        } else {
            return Err(mismatch());
        };
        let mut shape = prefix;
        shape.extend([m, n]);
        let mut out = Tensor::zeros(shape);
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            let o = out.data_mut();
            match layout {
                MatMulLayout::SharedRhs { rows, k, n } => {
                    gemm(rows, k, n, av, false, bv, trans_b, o, false)
                }
                MatMulLayout::SharedLhs { batch, m, k, n } => {
                    for i in 0..batch {
                        gemm(
                            m,
                            k,
                            n,
                            av,
                            false,
                            &bv[i * k * n..(i + 1) * k * n],
                            trans_b,
                            &mut o[i * m * n..(i + 1) * m * n],
                            false,
                        );
                    }
                }
                MatMulLayout::Batched { batch, m, k, n } => {
                    for i in 0..batch {
                        gemm(
                            m,
                            k,
                            n,
                            &av[i * m * k..(i + 1) * m * k],
                            false,
                            &bv[i * k * n..(i + 1) * k * n],
                            trans_b,
                            &mut o[i * m * n..(i + 1) * m * n],
                            false,
                        );
                    }
                }
            }
        }
        Ok(self.push(
            Cow::Owned(out),
            Op::MatMul {
                a,
                b,
                trans_b,
                layout,
            },
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Cow::Owned(t), Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Cow::Owned(t), Op::Mul(a, b)))
    }

    /// Adds a vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.value(x), self.value(bias));
        if bs.numel() != xs.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: xs.shape().to_vec(),
                right: bs.shape().to_vec(),
            });
        }
        let mut out = xs.clone();
        let c = out.cols();
        for row in out.data_mut().chunks_mut(c) {
            row.iter_mut().zip(bs.data()).for_each(|(v, b)| *v += b);
        }
        Ok(self.push(Cow::Owned(out), Op::AddBias { x, bias }))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= c);
        self.push(Cow::Owned(out), Op::Scale { x, c })
    }

    /// Softmax over the last dimension; masked entries are exactly zero.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&Mask>) -> Result<Var> {
        let mut out = self.value(x).clone();
        let cols = out.cols();
        let offsets = mask.map(|m| m.row_offsets(out.shape())).transpose()?;
        for (r, row) in out.data_mut().chunks_mut(cols).enumerate() {
            let allowed = match (mask, &offsets) {
                (Some(m), Some(off)) => Some(&m.allowed[off[r]..off[r] + cols]),
                _ => None,
            };
            kernels::softmax_row(row, allowed, r)?;
        }
        Ok(self.push(Cow::Owned(out), Op::Softmax { x }))
    }

    /// Layer normalisation over the last dimension with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xs = self.value(x);
        let cols = xs.cols();
        if self.value(gain).numel() != cols || self.value(bias).numel() != cols {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: xs.shape().to_vec(),
                right: self.value(gain).shape().to_vec(),
            });
        }
        let mut xhat = vec![0.0; xs.numel()];
        let mut rstd = Vec::with_capacity(xs.rows());
        for (src, dst) in xs.data().chunks(cols).zip(xhat.chunks_mut(cols)) {
            rstd.push(kernels::layer_norm_row(src, eps, dst));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = Tensor::zeros(xs.shape().to_vec());
        for (dst, h) in out.data_mut().chunks_mut(cols).zip(xhat.chunks(cols)) {
            for j in 0..cols {
                dst[j] = h[j] * g[j] + b[j];
            }
        }
        Ok(self.push(
            Cow::Owned(out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = kernels::gelu(*v));
        self.push(Cow::Owned(out), Op::Gelu { x })
    }

    /// Inverted dropout. Returns `x` unchanged when not training or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::BadDropoutRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mut rng = crate::rng::stream(seed, &[]);
        let multiplier: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        out.data_mut()
            .iter_mut()
            .zip(&multiplier)
            .for_each(|(v, m)| *v *= m);
        Ok(self.push(Cow::Owned(out), Op::Dropout { x, multiplier }))
    }

    /// Gathers rows of `table` (shape `[rows, d]`); output is `[len, d]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(TensorError::Invalid(format!(
                "embedding table must be 2-D, got {:?}",
                t.shape()
            )));
        }
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        if indices.is_empty() {
            return Err(TensorError::Invalid("empty embedding lookup".into()));
        }
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange { index: i, rows });
            }
            out.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![indices.len(), d], out)?;
        Ok(self.push(
            Cow::Owned(out),
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// `[batch·seq, heads·dh]` → `[batch, heads, seq, dh]`.
    pub fn split_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let xs = self.value(x);
        let d = xs.cols();
        if xs.rows() != batch * seq || !d.is_multiple_of(heads) {
            return Err(TensorError::ShapeMismatch {
                op: "split_heads",
                left: xs.shape().to_vec(),
                right: vec![batch, seq, heads],
            });
        }
        let dh = d / heads;
        let src = xs.data();
        let mut out = Tensor::zeros(vec![batch, heads, seq, dh]);
        let o = out.data_mut();
        for b in 0..batch {
            for t in 0..seq {
                for h in 0..heads {
                    let s = (b * seq + t) * d + h * dh;
                    let dst = ((b * heads + h) * seq + t) * dh;
                    o[dst..dst + dh].copy_from_slice(&src[s..s + dh]);
                }
            }
        }
        Ok(self.push(
            Cow::Owned(out),
            Op::SplitHeads {
                x,
                batch,
                seq,
                heads,
            },
        ))
    }

    /// `[batch, heads, seq, dh]` → `[batch·seq, heads·dh]`.
    pub fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x);
        let &[batch, heads, seq, dh] = xs.shape() else {
            return Err(TensorError::Invalid(format!(
                "merge_heads expects rank 4, got {:?}",
                xs.shape()
            )));
        };
        let d = heads * dh;
        let src = xs.data();
        let mut out = Tensor::zeros(vec![batch * seq, d]);
        let o = out.data_mut();
        for b in 0..batch {
            for t in 0..seq {
                for h in 0..heads {
                    let s = ((b * heads + h) * seq + t) * dh;
                    let dst = (b * seq + t) * d + h * dh;
                    o[dst..dst + dh].copy_from_slice(&src[s..s + dh]);
                }
            }
        }
        Ok(self.push(
            Cow::Owned(out),
            Op::MergeHeads {
                x,
                batch,
                seq,
                heads,
            },
        ))
    }

    /// Mean over unmasked rows of `-log softmax(logits)[target]`.
    ///
    /// `ignore_class` is excluded from the normaliser and never a valid target.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
        ignore_class: Option<usize>,
    ) -> Result<Var> {
        let l = self.value(logits);
        let (rows, classes) = (l.rows(), l.cols());
        if targets.len() != rows || mask.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: l.shape().to_vec(),
                right: vec![targets.len(), mask.len()],
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::NoMaskedPositions);
        }
        let w = 1.0 / count as f64;
        let mut weights = vec![0.0; rows];
        let mut probs = vec![0.0; rows * classes];
        let mut total = 0.0;
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            let t = targets[r];
            if t >= classes || Some(t) == ignore_class {
                return Err(TensorError::BadTarget { target: t, classes });
            }
            let row = l.row(r);
            let lse = kernels::log_sum_exp(row, ignore_class);
            total += lse - row[t];
            weights[r] = w;
            let p = &mut probs[r * classes..(r + 1) * classes];
            for (j, pj) in p.iter_mut().enumerate() {
                *pj = if Some(j) == ignore_class {
                    0.0
                } else {
                    (row[j] - lse).exp()
                };
            }
        }
        let out = Tensor::scalar(total * w);
        Ok(self.push(
            Cow::Owned(out),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights,
                probs,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum { x })
    }

    /// Propagates gradients from the scalar `loss`, adding parameter
    /// gradients into `grads`. A tape supports a single backward pass.
    pub fn backward(&mut self, loss: Var, grads: &mut Gradients) -> Result<()> {
        if self.consumed {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.consumed = true;
        let mut g: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        g[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            self.backward_node(i, &gi, &mut g, grads);
        }
        Ok(())
    }

    fn backward_node(
        &self,
        i: usize,
        gout: &[f64],
        g: &mut [Option<Vec<f64>>],
        grads: &mut Gradients,
    ) {
        let nodes = &self.nodes;
        let size = |v: Var| nodes[v.0].value.numel();
        // Lazily allocated gradient slot for `v`.
        fn slot(g: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
            g[v.0].get_or_insert_with(|| vec![0.0; n])
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Param(id) => {
                grads
                    .get_mut(*id)
                    .data_mut()
                    .iter_mut()
                    .zip(gout)
                    .for_each(|(d, s)| *d += s);
            }
            Op::MatMul {
                a,
                b,
                trans_b,
                layout,
            } => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                let (na, nb) = (size(*a), size(*b));
                match *layout {
                    MatMulLayout::SharedRhs { rows, k, n } => {
                        // dA = dC·op(B)ᵀ
                        gemm(rows, n, k, gout, false, bv, !trans_b, slot(g, *a, na), true);
                        if *trans_b {
                            // B is n×k: dB = dCᵀ·A
                            gemm(n, rows, k, gout, true, av, false, slot(g, *b, nb), true);
                        } else {
                            gemm(k, rows, n, av, true, gout, false, slot(g, *b, nb), true);
                        }
                    }
                    MatMulLayout::SharedLhs { batch, m, k, n } => {
                        for bi in 0..batch {
                            let go = &gout[bi * m * n..(bi + 1) * m * n];
                            let bb = &bv[bi * k * n..(bi + 1) * k * n];
                            gemm(m, n, k, go, false, bb, !trans_b, slot(g, *a, na), true);
                            let db = &mut slot(g, *b, nb)[bi * k * n..(bi + 1) * k * n];
                            if *trans_b {
                                gemm(n, m, k, go, true, av, false, db, true);
                            } else {
                                gemm(k, m, n, av, true, go, false, db, true);
                            }
                        }
                    }
                    MatMulLayout::Batched { batch, m, k, n } => {
                        for bi in 0..batch {
                            let go = &gout[bi * m * n..(bi + 1) * m * n];
                            let ab = &av[bi * m * k..(bi + 1) * m * k];
                            let bb = &bv[bi * k * n..(bi + 1) * k * n];
                            let da = &mut slot(g, *a, na)[bi * m * k..(bi + 1) * m * k];
                            gemm(m, n, k, go, false, bb, !trans_b, da, true);
                            let db = &mut slot(g, *b, nb)[bi * k * n..(bi + 1) * k * n];
                            if *trans_b {
                                gemm(n, m, k, go, true, ab, false, db, true);
                            } else {
                                gemm(k, m, n, ab, true, go, false, db, true);
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    slot(g, *v, gout.len())
                        .iter_mut()
                        .zip(gout)
                        .for_each(|(d, s)| *d += s);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                let da = slot(g, *a, gout.len());
                for ((d, s), y) in da.iter_mut().zip(gout).zip(bv) {
                    *d += s * y;
                }
                let db = slot(g, *b, gout.len());
                for ((d, s), x) in db.iter_mut().zip(gout).zip(av) {
                    *d += s * x;
                }
            }
            Op::AddBias { x, bias } => {
                slot(g, *x, gout.len())
                    .iter_mut()
                    .zip(gout)
                    .for_each(|(d, s)| *d += s);
                let nbias = size(*bias);
                let db = slot(g, *bias, nbias);
                for row in gout.chunks(nbias) {
                    db.iter_mut().zip(row).for_each(|(d, s)| *d += s);
                }
            }
            Op::Scale { x, c } => {
                slot(g, *x, gout.len())
                    .iter_mut()
                    .zip(gout)
                    .for_each(|(d, s)| *d += s * c);
            }
            Op::Softmax { x } => {
                let y = &nodes[i].value;
                let cols = y.cols();
                let dx = slot(g, *x, gout.len());
                for ((yr, gr), dr) in y
                    .data()
                    .chunks(cols)
                    .zip(gout.chunks(cols))
                    .zip(dx.chunks_mut(cols))
                {
                    kernels::softmax_row_backward(yr, gr, dr);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gv = nodes[gain.0].value.data();
                let cols = gv.len();
                {
                    let dg = slot(g, *gain, cols);
                    for (gr, hr) in gout.chunks(cols).zip(xhat.chunks(cols)) {
                        for j in 0..cols {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                }
                {
                    let db = slot(g, *bias, cols);
                    for gr in gout.chunks(cols) {
                        db.iter_mut().zip(gr).for_each(|(d, s)| *d += s);
                    }
                }
                let dx = slot(g, *x, gout.len());
                let mut dxhat = vec![0.0; cols];
                for (r, ((gr, hr), dr)) in gout
                    .chunks(cols)
                    .zip(xhat.chunks(cols))
                    .zip(dx.chunks_mut(cols))
                    .enumerate()
                {
                    for j in 0..cols {
                        dxhat[j] = gr[j] * gv[j];
                    }
                    kernels::layer_norm_row_backward(hr, &dxhat, rstd[r], dr);
                }
            }
            Op::Gelu { x } => {
                let xv = nodes[x.0].value.data();
                let dx = slot(g, *x, gout.len());
                for ((d, s), v) in dx.iter_mut().zip(gout).zip(xv) {
                    *d += s * kernels::gelu_grad(*v);
                }
            }
            Op::Dropout { x, multiplier } => {
                let dx = slot(g, *x, gout.len());
                for ((d, s), m) in dx.iter_mut().zip(gout).zip(multiplier) {
                    *d += s * m;
                }
            }
            Op::Embedding { table, indices } => {
                let d = nodes[i].value.cols();
                let dt = slot(g, *table, size(*table));
                for (r, &idx) in indices.iter().enumerate() {
                    let dst = &mut dt[idx * d..(idx + 1) * d];
                    dst.iter_mut()
                        .zip(&gout[r * d..(r + 1) * d])
                        .for_each(|(a, b)| *a += b);
                }
            }
            Op::SplitHeads {
                x,
                batch,
                seq,
                heads,
            } => {
                let n = size(*x);
                let d = n / (batch * seq);
                let dh = d / heads;
                let dx = slot(g, *x, n);
                for b in 0..*batch {
                    for t in 0..*seq {
                        for h in 0..*heads {
                            let s = (b * seq + t) * d + h * dh;
                            let src = ((b * heads + h) * seq + t) * dh;
                            dx[s..s + dh]
                                .iter_mut()
                                .zip(&gout[src..src + dh])
                                .for_each(|(a, c)| *a += c);
                        }
                    }
                }
            }
            Op::MergeHeads {
                x,
                batch,
                seq,
                heads,
            } => {
                let n = size(*x);
                let d = n / (batch * seq);
                let dh = d / heads;
                let dx = slot(g, *x, n);
                for b in 0..*batch {
                    for t in 0..*seq {
                        for h in 0..*heads {
                            let s = ((b * heads + h) * seq + t) * dh;
                            let src = (b * seq + t) * d + h * dh;
                            dx[s..s + dh]
                                .iter_mut()
                                .zip(&gout[src..src + dh])
                                .for_each(|(a, c)| *a += c);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let scale = gout[0];
                let n = size(*logits);
                let classes = n / targets.len();
                let dl = slot(g, *logits, n);
                for (r, &w) in weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let f = w * scale;
                    let row = &mut dl[r * classes..(r + 1) * classes];
                    let p = &probs[r * classes..(r + 1) * classes];
                    row.iter_mut().zip(p).for_each(|(d, pj)| *d += f * pj);
                    row[targets[r]] -= f;
                }
            }
            Op::Sum { x } => {
                let s = gout[0];
                slot(g, *x, size(*x)).iter_mut().for_each(|d| *d += s);
            }
        }
    }
}
