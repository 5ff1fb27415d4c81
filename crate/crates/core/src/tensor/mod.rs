//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! Every operation returns a new [`Tensor`] that remembers its inputs, so the
//! graph is built dynamically during the forward pass. [`Tensor::backward`]
//! walks it in reverse topological order and accumulates `d loss / d node`
//! into every node that requires a gradient. The graph lives exactly as long
//! as the handles that reference it.

mod gemm;
mod ops;
pub(crate) mod shape;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use crate::error::{Error, Result};

use ops::Op;
pub use ops::{inject_gradient_fault, Elementwise, FaultGuard};

pub(crate) struct Node {
    shape: Vec<usize>,
    data: RwLock<Vec<f64>>,
    grad: Mutex<Option<Vec<f64>>>,
    requires_grad: bool,
    op: Option<Op>,
}

/// A reference-counted handle to a node of the differentiation graph.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<Op>) -> Tensor {
        debug_assert_eq!(shape::numel(&shape), data.len());
        Tensor(Arc::new(Node {
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            op,
        }))
    }

    fn checked(shape: &[usize], data: &[f64], op: &'static str) -> Result<()> {
        if shape::numel(shape) != data.len() {
            return Err(Error::invalid(
                op,
                format!("shape {shape:?} needs {} elements, got {}", shape::numel(shape), data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        Ok(())
    }

    /// A constant (no gradient) tensor.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::checked(shape, &data, "tensor")?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// A leaf tensor that accumulates gradients.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::checked(shape, &data, "param")?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::build(shape.to_vec(), vec![0.0; shape::numel(shape)], false, None)
    }

    pub fn scalar(value: f64) -> Result<Tensor> {
        Self::new(&[], vec![value])
    }

    /// Returns a constant copy detached from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        shape::numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Overwrites the values of a leaf in place. Used by optimizers and
    /// checkpoint loading; never call while a backward pass is pending.
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        Self::checked(&self.0.shape, values, "set_data")?;
        let mut d = self.0.data.write().expect("tensor data lock poisoned");
        d.copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        let mut d = self.0.data.write().expect("tensor data lock poisoned");
        f(&mut d);
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Reverse-mode sweep from a scalar loss.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 || self.0.shape.iter().any(|&d| d != 1) {
            return Err(Error::NonScalarLoss(self.0.shape.clone()));
        }
        if !self.0.requires_grad {
            return Ok(());
        }

        // post-order DFS over nodes that carry gradients
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = &t.0.op {
                for p in op.parents() {
                    if p.0.requires_grad && !seen.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            if let Some(op) = &node.0.op {
                let out = node.data();
                for (parent, pg) in op.backward(&out, &node.0.shape, &g) {
                    if !parent.0.requires_grad {
                        continue;
                    }
                    match pending.get_mut(&parent.id()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(parent.id(), pg);
                        }
                    }
                }
            }
            let mut slot = node.0.grad.lock().expect("grad lock poisoned");
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
