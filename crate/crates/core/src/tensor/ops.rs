//! Differentiable operations and their backward rules.

use std::cell::Cell;

use super::shape::{self, broadcast_shapes, IndexMap};
use super::{gemm, Tensor};
use crate::error::{Error, Result};

/// Large negative logit added to invalid keys before the softmax.
pub(crate) const MASK_LOGIT: f64 = -1e9;
const LAYER_NORM_EPS: f64 = 1e-5;

thread_local! {
    static SIN_FAULT: Cell<bool> = const { Cell::new(false) };
}

/// Corrupts the backward rule of `sin` on the current thread until the
/// returned guard is dropped. Exists so gradient-check suites can be
/// mutation-tested against a known-bad derivative.
pub fn inject_gradient_fault() -> FaultGuard {
    SIN_FAULT.with(|f| f.set(true));
    FaultGuard(())
}

pub struct FaultGuard(());

impl Drop for FaultGuard {
    fn drop(&mut self) {
        SIN_FAULT.with(|f| f.set(false));
    }
}

/// Pointwise operation kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Mul,
    Sin,
    Relu,
    Scale(f64),
}

pub(crate) enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    Sin(Tensor),
    Relu(Tensor),
    MatMul(Tensor, Tensor),
    Reshape(Tensor),
    Permute(Tensor, Vec<usize>),
    BroadcastTo(Tensor),
    Concat(Vec<Tensor>, usize),
    Narrow(Tensor, usize, usize),
    Sum(Tensor),
    SumAxis(Tensor, usize),
    MaskedSoftmax(Tensor),
    LayerNorm {
        x: Tensor,
        gain: Tensor,
        bias: Tensor,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Mse {
        pred: Tensor,
        target: Vec<f64>,
        mask: Vec<f64>,
        count: f64,
    },
    CrossEntropy {
        logits: Tensor,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

fn finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn reduce_into(grad: &[f64], map: &IndexMap, n_in: usize) -> Vec<f64> {
    match map {
        IndexMap::Identity => grad.to_vec(),
        IndexMap::Table(t) => {
            let mut g = vec![0.0; n_in];
            for (i, &gi) in grad.iter().enumerate() {
                g[t[i]] += gi;
            }
            g
        }
    }
}

fn normalize_axis(op: &'static str, axis: isize, rank: usize) -> Result<usize> {
    let a = if axis < 0 { rank as isize + axis } else { axis };
    if a < 0 || a as usize >= rank {
        return Err(Error::invalid(op, format!("axis {axis} out of range for rank {rank}")));
    }
    Ok(a as usize)
}

impl Tensor {
    fn result(shape: Vec<usize>, data: Vec<f64>, op: Op, name: &'static str) -> Result<Tensor> {
        finite(name, &data)?;
        let rg = op.parents().iter().any(|p| p.requires_grad());
        Ok(Tensor::build(shape, data, rg, if rg { Some(op) } else { None }))
    }

    fn binary(&self, other: &Tensor, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(Vec<usize>, Vec<f64>)> {
        let out_shape =
            broadcast_shapes(self.shape(), other.shape()).ok_or_else(|| Error::shape(name, self.shape(), other.shape()))?;
        let ma = IndexMap::new(self.shape(), &out_shape);
        let mb = IndexMap::new(other.shape(), &out_shape);
        let a = self.data();
        let b = other.data();
        let n = shape::numel(&out_shape);
        let data = (0..n).map(|i| f(a[ma.get(i)], b[mb.get(i)])).collect();
        Ok((out_shape, data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (s, d) = self.binary(other, "add", |a, b| a + b)?;
        Self::result(s, d, Op::Add(self.clone(), other.clone()), "add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (s, d) = self.binary(other, "sub", |a, b| a - b)?;
        Self::result(s, d, Op::Sub(self.clone(), other.clone()), "sub")
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (s, d) = self.binary(other, "mul", |a, b| a * b)?;
        Self::result(s, d, Op::Mul(self.clone(), other.clone()), "mul")
    }

    pub fn scale(&self, k: f64) -> Result<Tensor> {
        let d = self.data().iter().map(|v| v * k).collect();
        Self::result(self.shape().to_vec(), d, Op::Scale(self.clone(), k), "scale")
    }

    pub fn sin(&self) -> Result<Tensor> {
        let d = self.data().iter().map(|v| v.sin()).collect();
        Self::result(self.shape().to_vec(), d, Op::Sin(self.clone()), "sin")
    }

    pub fn relu(&self) -> Result<Tensor> {
        let d = self.data().iter().map(|v| v.max(0.0)).collect();
        Self::result(self.shape().to_vec(), d, Op::Relu(self.clone()), "relu")
    }

    /// Dispatches a pointwise operation by kind. Binary kinds take two operands.
    pub fn elementwise(kind: Elementwise, operands: &[&Tensor]) -> Result<Tensor> {
        let arity = match kind {
            Elementwise::Add | Elementwise::Mul => 2,
            _ => 1,
        };
        if operands.len() != arity {
            return Err(Error::invalid(
                "elementwise",
                format!("{kind:?} takes {arity} operands, got {}", operands.len()),
            ));
        }
        match kind {
            Elementwise::Add => operands[0].add(operands[1]),
            Elementwise::Mul => operands[0].mul(operands[1]),
            Elementwise::Sin => operands[0].sin(),
            Elementwise::Relu => operands[0].relu(),
            Elementwise::Scale(k) => operands[0].scale(k),
        }
    }

    /// Batched matrix product `[..×p×q] · [..×q×r]` with broadcast batch axes.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() < 2 || b.len() < 2 || a[a.len() - 1] != b[b.len() - 2] {
            return Err(Error::shape("matmul", a, b));
        }
        let (p, q, r) = (a[a.len() - 2], a[a.len() - 1], b[b.len() - 1]);
        let batch = broadcast_shapes(&a[..a.len() - 2], &b[..b.len() - 2]).ok_or_else(|| Error::shape("matmul", a, b))?;
        let mut out_shape = batch.clone();
        out_shape.extend([p, r]);
        let mut out = vec![0.0; shape::numel(&out_shape)];
        let ad = self.data();
        let bd = other.data();
        if b.len() == 2 {
            // fold every batch axis of `a` into rows
            let rows = ad.len() / q.max(1);
            if q > 0 {
                gemm::nn(&ad, &bd, &mut out, rows, q, r);
            }
        } else {
            let nb = shape::numel(&batch);
            let ma = IndexMap::new(&a[..a.len() - 2], &batch);
            let mb = IndexMap::new(&b[..b.len() - 2], &batch);
            for i in 0..nb {
                let ao = ma.get(i) * p * q;
                let bo = mb.get(i) * q * r;
                gemm::nn(
                    &ad[ao..ao + p * q],
                    &bd[bo..bo + q * r],
                    &mut out[i * p * r..(i + 1) * p * r],
                    p,
                    q,
                    r,
                );
            }
        }
        drop((ad, bd));
        Self::result(out_shape, out, Op::MatMul(self.clone(), other.clone()), "matmul")
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        if shape::numel(new_shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), new_shape));
        }
        Self::result(new_shape.to_vec(), self.to_vec(), Op::Reshape(self.clone()), "reshape")
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::invalid(
                "permute",
                format!("{axes:?} is not a permutation of rank {rank}"),
            ));
        }
        let table = permute_table(self.shape(), axes);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let src = self.data();
        let d = table.iter().map(|&j| src[j]).collect();
        drop(src);
        Self::result(out_shape, d, Op::Permute(self.clone(), axes.to_vec()), "permute")
    }

    /// Swaps the two trailing axes.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::invalid("transpose", "rank must be at least 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 1, r - 2);
        self.permute(&axes)
    }

    pub fn broadcast_to(&self, target: &[usize]) -> Result<Tensor> {
        match broadcast_shapes(self.shape(), target) {
            Some(s) if s == target => {}
            _ => return Err(Error::shape("broadcast_to", self.shape(), target)),
        }
        let map = IndexMap::new(self.shape(), target);
        let src = self.data();
        let d = (0..shape::numel(target)).map(|i| src[map.get(i)]).collect();
        drop(src);
        Self::result(target.to_vec(), d, Op::BroadcastTo(self.clone()), "broadcast_to")
    }

    pub fn concat(parts: &[&Tensor], axis: isize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat", "no operands"))?;
        let ax = normalize_axis("concat", axis, first.rank())?;
        let mut out_shape = first.shape().to_vec();
        out_shape[ax] = 0;
        for p in parts {
            let ok = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == ax || a == b);
            if !ok {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
            out_shape[ax] += p.shape()[ax];
        }
        let outer: usize = out_shape[..ax].iter().product();
        let inner: usize = out_shape[ax + 1..].iter().product();
        let mut d = Vec::with_capacity(shape::numel(&out_shape));
        let guards: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (p, g) in parts.iter().zip(&guards) {
                let chunk = p.shape()[ax] * inner;
                d.extend_from_slice(&g[o * chunk..(o + 1) * chunk]);
            }
        }
        drop(guards);
        let op = Op::Concat(parts.iter().map(|p| (*p).clone()).collect(), ax);
        Self::result(out_shape, d, op, "concat")
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: isize, start: usize, len: usize) -> Result<Tensor> {
        let ax = normalize_axis("narrow", axis, self.rank())?;
        let extent = self.shape()[ax];
        if start + len > extent {
            return Err(Error::invalid(
                "narrow",
                format!("range {start}..{} exceeds extent {extent}", start + len),
            ));
        }
        let outer: usize = self.shape()[..ax].iter().product();
        let inner: usize = self.shape()[ax + 1..].iter().product();
        let mut out_shape = self.shape().to_vec();
        out_shape[ax] = len;
        let src = self.data();
        let mut d = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            d.extend_from_slice(&src[base..base + len * inner]);
        }
        drop(src);
        Self::result(out_shape, d, Op::Narrow(self.clone(), ax, start), "narrow")
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Result<Tensor> {
        let s = self.data().iter().sum();
        Self::result(vec![], vec![s], Op::Sum(self.clone()), "sum")
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel();
        if n == 0 {
            return Err(Error::invalid("mean", "empty tensor"));
        }
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Sums out one axis (removing it).
    pub fn sum_axis(&self, axis: isize) -> Result<Tensor> {
        let ax = normalize_axis("sum_axis", axis, self.rank())?;
        let extent = self.shape()[ax];
        let outer: usize = self.shape()[..ax].iter().product();
        let inner: usize = self.shape()[ax + 1..].iter().product();
        let mut out_shape = self.shape().to_vec();
        out_shape.remove(ax);
        let src = self.data();
        let mut d = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..extent {
                let base = (o * extent + k) * inner;
                for i in 0..inner {
                    d[o * inner + i] += src[base + i];
                }
            }
        }
        drop(src);
        Self::result(out_shape, d, Op::SumAxis(self.clone(), ax), "sum_axis")
    }

    /// Softmax over the last axis restricted to positions where `valid` is
    /// nonzero. `valid` is a constant broadcastable to `self`. Invalid
    /// positions come out as exactly zero.
    pub fn masked_softmax(&self, valid: &Tensor) -> Result<Tensor> {
        let out_shape = self.shape().to_vec();
        match broadcast_shapes(valid.shape(), &out_shape) {
            Some(s) if s == out_shape => {}
            _ => return Err(Error::shape("masked_softmax", self.shape(), valid.shape())),
        }
        let k = *out_shape
            .last()
            .ok_or_else(|| Error::invalid("masked_softmax", "rank 0 input"))?;
        let map = IndexMap::new(valid.shape(), &out_shape);
        let x = self.data();
        let m = valid.data();
        let mut y = vec![0.0; x.len()];
        for row in 0..x.len() / k.max(1) {
            let base = row * k;
            let mut any = false;
            let mut max = f64::NEG_INFINITY;
            for j in 0..k {
                let ok = m[map.get(base + j)] != 0.0;
                any |= ok;
                let logit = if ok { x[base + j] } else { x[base + j] + MASK_LOGIT };
                y[base + j] = logit;
                max = max.max(logit);
            }
            if !any {
                return Err(Error::DegenerateRow { row });
            }
            let mut total = 0.0;
            for j in 0..k {
                let e = (y[base + j] - max).exp();
                y[base + j] = e;
                total += e;
            }
            for j in 0..k {
                y[base + j] = if m[map.get(base + j)] != 0.0 {
                    y[base + j] / total
                } else {
                    0.0
                };
            }
        }
        drop((x, m));
        Self::result(out_shape, y, Op::MaskedSoftmax(self.clone()), "masked_softmax")
    }

    /// Per-row standardization over the last axis followed by an affine map.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::invalid("layer_norm", "rank 0 input"))?;
        if d == 0 {
            return Err(Error::invalid("layer_norm", "last axis must be nonempty"));
        }
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(Error::shape("layer_norm", self.shape(), gain.shape()));
        }
        let x = self.data();
        let g = gain.data();
        let b = bias.data();
        let rows = x.len() / d;
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        drop((x, g, b));
        let op = Op::LayerNorm {
            x: self.clone(),
            gain: gain.clone(),
            bias: bias.clone(),
            xhat,
            inv_std,
        };
        Self::result(self.shape().to_vec(), out, op, "layer_norm")
    }

    /// Mean squared error over entries where `mask` is nonzero.
    pub fn masked_mse(&self, target: &[f64], mask: &[f64]) -> Result<Tensor> {
        if target.len() != self.numel() || mask.len() != self.numel() {
            return Err(Error::invalid("mse", "target/mask length does not match prediction"));
        }
        let count: f64 = mask.iter().filter(|&&m| m != 0.0).count() as f64;
        if count == 0.0 {
            return Err(Error::EmptyTargets);
        }
        let p = self.data();
        let loss = p
            .iter()
            .zip(target)
            .zip(mask)
            .filter(|(_, &m)| m != 0.0)
            .map(|((p, t), _)| (p - t) * (p - t))
            .sum::<f64>()
            / count;
        drop(p);
        let op = Op::Mse {
            pred: self.clone(),
            target: target.to_vec(),
            mask: mask.iter().map(|&m| if m != 0.0 { 1.0 } else { 0.0 }).collect(),
            count,
        };
        Self::result(vec![], vec![loss], op, "mse")
    }

    pub fn mse(&self, target: &[f64]) -> Result<Tensor> {
        self.masked_mse(target, &vec![1.0; self.numel()])
    }

    /// Mean cross-entropy of `[B×C]` logits against class indices.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 || self.shape()[0] != labels.len() {
            return Err(Error::shape("cross_entropy", self.shape(), &[labels.len()]));
        }
        let c = self.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(
                "cross_entropy",
                format!("label {bad} out of range for {c} classes"),
            ));
        }
        let x = self.data();
        let mut probs = vec![0.0; x.len()];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &x[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for j in 0..c {
                probs[r * c + j] = (row[j] - max).exp() / z;
            }
            loss += z.ln() + max - row[label];
        }
        drop(x);
        let n = labels.len().max(1) as f64;
        let op = Op::CrossEntropy {
            logits: self.clone(),
            labels: labels.to_vec(),
            probs,
        };
        Self::result(vec![], vec![loss / n], op, "cross_entropy")
    }
}

fn permute_table(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = shape::strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = shape::numel(in_shape);
    let rank = axes.len();
    let mut table = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        table.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    table
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Sin(a)
            | Op::Relu(a)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::BroadcastTo(a)
            | Op::Narrow(a, _, _)
            | Op::Sum(a)
            | Op::SumAxis(a, _)
            | Op::MaskedSoftmax(a) => vec![a],
            Op::Concat(parts, _) => parts.iter().collect(),
            Op::LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
            Op::Mse { pred, .. } => vec![pred],
            Op::CrossEntropy { logits, .. } => vec![logits],
        }
    }

    /// Gradient contributions to each parent given the upstream gradient `g`.
    pub(crate) fn backward(&self, out: &[f64], out_shape: &[usize], g: &[f64]) -> Vec<(Tensor, Vec<f64>)> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self, Op::Sub(..)) { -1.0 } else { 1.0 };
                let ga = reduce_into(g, &IndexMap::new(a.shape(), out_shape), a.numel());
                let mut gb = reduce_into(g, &IndexMap::new(b.shape(), out_shape), b.numel());
                if sign < 0.0 {
                    gb.iter_mut().for_each(|v| *v = -*v);
                }
                vec![(a.clone(), ga), (b.clone(), gb)]
            }
            Op::Mul(a, b) => {
                let ma = IndexMap::new(a.shape(), out_shape);
                let mb = IndexMap::new(b.shape(), out_shape);
                let (ad, bd) = (a.data(), b.data());
                let mut ga = vec![0.0; a.numel()];
                let mut gb = vec![0.0; b.numel()];
                for (i, &gi) in g.iter().enumerate() {
                    let (ia, ib) = (ma.get(i), mb.get(i));
                    ga[ia] += gi * bd[ib];
                    gb[ib] += gi * ad[ia];
                }
                vec![(a.clone(), ga), (b.clone(), gb)]
            }
            Op::Scale(a, k) => vec![(a.clone(), g.iter().map(|v| v * k).collect())],
            Op::Sin(a) => {
                let faulty = SIN_FAULT.with(|f| f.get());
                let x = a.data();
                let ga = g
                    .iter()
                    .zip(x.iter())
                    .map(|(gi, xi)| if faulty { gi * xi.sin() } else { gi * xi.cos() })
                    .collect();
                vec![(a.clone(), ga)]
            }
            Op::Relu(a) => {
                let x = a.data();
                let ga = g
                    .iter()
                    .zip(x.iter())
                    .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                    .collect();
                vec![(a.clone(), ga)]
            }
            Op::MatMul(a, b) => matmul_backward(a, b, g),
            Op::Reshape(a) => vec![(a.clone(), g.to_vec())],
            Op::Permute(a, axes) => {
                let table = permute_table(a.shape(), axes);
                let mut ga = vec![0.0; a.numel()];
                for (i, &j) in table.iter().enumerate() {
                    ga[j] = g[i];
                }
                vec![(a.clone(), ga)]
            }
            Op::BroadcastTo(a) => {
                let map = IndexMap::new(a.shape(), out_shape);
                vec![(a.clone(), reduce_into(g, &map, a.numel()))]
            }
            Op::Concat(parts, ax) => {
                let outer: usize = out_shape[..*ax].iter().product();
                let inner: usize = out_shape[ax + 1..].iter().product();
                let mut grads: Vec<Vec<f64>> = parts.iter().map(|p| Vec::with_capacity(p.numel())).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (p, gp) in parts.iter().zip(grads.iter_mut()) {
                        let chunk = p.shape()[*ax] * inner;
                        gp.extend_from_slice(&g[off..off + chunk]);
                        off += chunk;
                    }
                }
                parts.iter().cloned().zip(grads).collect()
            }
            Op::Narrow(a, ax, start) => {
                let extent = a.shape()[*ax];
                let len = out_shape[*ax];
                let outer: usize = out_shape[..*ax].iter().product();
                let inner: usize = out_shape[ax + 1..].iter().product();
                let mut ga = vec![0.0; a.numel()];
                for o in 0..outer {
                    let dst = o * extent * inner + start * inner;
                    ga[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(a.clone(), ga)]
            }
            Op::Sum(a) => vec![(a.clone(), vec![g[0]; a.numel()])],
            Op::SumAxis(a, ax) => {
                let extent = a.shape()[*ax];
                let outer: usize = a.shape()[..*ax].iter().product();
                let inner: usize = a.shape()[ax + 1..].iter().product();
                let mut ga = vec![0.0; a.numel()];
                for o in 0..outer {
                    for k in 0..extent {
                        let base = (o * extent + k) * inner;
                        ga[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![(a.clone(), ga)]
            }
            Op::MaskedSoftmax(a) => {
                let k = *out_shape.last().unwrap_or(&1);
                let mut ga = vec![0.0; out.len()];
                for r in 0..out.len() / k.max(1) {
                    let y = &out[r * k..(r + 1) * k];
                    let gr = &g[r * k..(r + 1) * k];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        ga[r * k + j] = y[j] * (gr[j] - dot);
                    }
                }
                vec![(a.clone(), ga)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = gain.numel();
                let gd = gain.data();
                let rows = xhat.len() / d;
                let mut gx = vec![0.0; xhat.len()];
                let mut gg = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..rows {
                    let (mut s1, mut s2) = (0.0, 0.0);
                    for j in 0..d {
                        let gi = g[r * d + j];
                        let h = xhat[r * d + j];
                        gg[j] += gi * h;
                        gbias[j] += gi;
                        dxhat[j] = gi * gd[j];
                        s1 += dxhat[j];
                        s2 += dxhat[j] * h;
                    }
                    let scale = inv_std[r] / d as f64;
                    for j in 0..d {
                        gx[r * d + j] = scale * (d as f64 * dxhat[j] - s1 - xhat[r * d + j] * s2);
                    }
                }
                vec![(x.clone(), gx), (gain.clone(), gg), (bias.clone(), gbias)]
            }
            Op::Mse {
                pred,
                target,
                mask,
                count,
            } => {
                let p = pred.data();
                let gp = p
                    .iter()
                    .zip(target)
                    .zip(mask)
                    .map(|((p, t), m)| g[0] * 2.0 * m * (p - t) / count)
                    .collect();
                vec![(pred.clone(), gp)]
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = logits.shape()[1];
                let n = labels.len().max(1) as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| g[0] * p / n).collect();
                for (r, &l) in labels.iter().enumerate() {
                    gl[r * c + l] -= g[0] / n;
                }
                vec![(logits.clone(), gl)]
            }
        }
    }
}

fn matmul_backward(a: &Tensor, b: &Tensor, g: &[f64]) -> Vec<(Tensor, Vec<f64>)> {
    let (sa, sb) = (a.shape(), b.shape());
    let (p, q, r) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
    let ad = a.data();
    let bd = b.data();
    let mut ga = vec![0.0; ad.len()];
    let mut gb = vec![0.0; bd.len()];
    if sb.len() == 2 {
        let rows = ad.len() / q.max(1);
        if q > 0 {
            gemm::nt(g, &bd, &mut ga, rows, q, r);
            gemm::tn(&ad, g, &mut gb, rows, q, r);
        }
    } else {
        let batch = broadcast_shapes(&sa[..sa.len() - 2], &sb[..sb.len() - 2]).expect("checked in forward");
        let ma = IndexMap::new(&sa[..sa.len() - 2], &batch);
        let mb = IndexMap::new(&sb[..sb.len() - 2], &batch);
        for i in 0..shape::numel(&batch) {
            let ao = ma.get(i) * p * q;
            let bo = mb.get(i) * q * r;
            let gi = &g[i * p * r..(i + 1) * p * r];
            gemm::nt(gi, &bd[bo..bo + q * r], &mut ga[ao..ao + p * q], p, q, r);
            gemm::tn(&ad[ao..ao + p * q], gi, &mut gb[bo..bo + q * r], p, q, r);
        }
    }
    drop((ad, bd));
    vec![(a.clone(), ga), (b.clone(), gb)]
}
