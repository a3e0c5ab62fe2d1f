//! Minimal layer library with hand-written backward passes.
//!
//! Each layer has a pure `forward` (evaluation mode, `&self`) and a
//! `forward_train`/`backward` pair that caches exactly what the gradient
//! needs. Learnable tensors are [`Param`]s, running statistics are
//! [`Buffer`]s, and both are reachable by name through [`Visit`].

mod block;
mod conv;
mod norm;

pub use block::{silu, sigmoid, Activation, ConvBnAct};
pub use conv::{Conv2d, Conv2dConfig, Init};
pub use norm::{BatchNorm2d, BatchNormConfig};

use crate::tensor::Real;

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Real> Param<T> {
    pub fn new(shape: Vec<usize>, value: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![T::zero(); value.len()];
        Self { value, grad, shape }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Non-learnable state saved with the model (batch-norm running statistics).
#[derive(Debug, Clone)]
pub struct Buffer<T> {
    pub value: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Real> Buffer<T> {
    pub fn new(shape: Vec<usize>, value: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        Self { value, shape }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Param,
    Buffer,
}

pub enum Slot<'a, T> {
    Param(&'a mut Param<T>),
    Buffer(&'a mut Buffer<T>),
}

impl<T: Real> Slot<'_, T> {
    pub fn kind(&self) -> TensorKind {
        match self {
            Slot::Param(_) => TensorKind::Param,
            Slot::Buffer(_) => TensorKind::Buffer,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Slot::Param(p) => p.shape(),
            Slot::Buffer(b) => b.shape(),
        }
    }

    pub fn value_mut(&mut self) -> &mut Vec<T> {
        match self {
            Slot::Param(p) => &mut p.value,
            Slot::Buffer(b) => &mut b.value,
        }
    }
}

/// Read-only view handed to [`Visit::visit`].
pub struct View<'a, T> {
    pub kind: TensorKind,
    pub shape: &'a [usize],
    pub value: &'a [T],
}

/// Named traversal over every parameter and buffer of a module tree.
///
/// Traversal order is fixed by construction, which the optimizer and the
/// checkpoint format rely on.
pub trait Visit<T: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, View<'_, T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, slot| {
            if let Slot::Param(p) = slot {
                p.zero_grad();
            }
        });
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, v| {
            if v.kind == TensorKind::Param {
                n += v.value.len();
            }
        });
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_param<T: Real>(
    prefix: &str,
    name: &str,
    p: &Param<T>,
    f: &mut dyn FnMut(&str, View<'_, T>),
) {
    f(&join(prefix, name), View { kind: TensorKind::Param, shape: p.shape(), value: &p.value });
}

pub(crate) fn visit_buffer<T: Real>(
    prefix: &str,
    name: &str,
    b: &Buffer<T>,
    f: &mut dyn FnMut(&str, View<'_, T>),
) {
    f(&join(prefix, name), View { kind: TensorKind::Buffer, shape: b.shape(), value: &b.value });
}
