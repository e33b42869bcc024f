//! Dense `f32` tensors with tape-free reverse-mode differentiation.
//!
//! Every tensor produced by an op keeps handles to its inputs and a closure
//! that maps the output gradient to one gradient per input. `backward` walks
//! that graph in reverse topological order. Leaf tensors created with
//! [`Tensor::parameter`] persist across graphs and accumulate gradients until
//! [`Tensor::zero_grad`] is called.

pub mod kernels;
mod ops;

use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use ops::*;

type GradFn = Box<dyn Fn(&[f32], &[Tensor]) -> Vec<Option<Vec<f32>>>>;

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    grad_fn: Option<GradFn>,
}

/// Shared handle to a node of the computation graph. Cloning is cheap.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish_non_exhaustive()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape("tensor", format!("dimensions must be positive, got {shape:?}")));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(Error::shape(
            "tensor",
            format!("shape {shape:?} holds {numel} values but buffer has {len}"),
        ));
    }
    Ok(())
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            grad_fn: None,
        }))
    }

    /// A constant (no gradient) tensor.
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// A trainable leaf tensor.
    pub fn parameter(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::leaf(shape.to_vec(), data, true))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn scalar(value: f32) -> Self {
        Self::leaf(vec![1], vec![value], false)
    }

    /// Result of an op. Graph bookkeeping is dropped when no parent needs a gradient.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f32>, parents: Vec<Tensor>, grad_fn: GradFn) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        if !requires_grad {
            return Self::leaf(shape, data, false);
        }
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: true,
            parents,
            grad_fn: Some(grad_fn),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.0.data.borrow()
    }

    /// Mutable access to the values. Only meaningful for leaves; mutating an
    /// intermediate invalidates gradients computed through it.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f32>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f32 {
        let data = self.0.data.borrow();
        debug_assert_eq!(data.len(), 1);
        data[0]
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.borrow().clone()
    }

    pub fn has_grad(&self) -> bool {
        self.0.grad.borrow().is_some()
    }

    pub(crate) fn grad_ref(&self) -> Ref<'_, Option<Vec<f32>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of the values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.0.shape.clone(), self.to_vec(), false)
    }

    fn accumulate_grad(&self, g: &[f32]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    fn ptr(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a scalar loss. Gradients are added onto any
    /// gradient already stored on the reachable tensors.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.0.shape.clone()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS; `order` ends up topologically sorted (inputs first).
        let mut order: Vec<Tensor> = Vec::new();
        let mut index: HashMap<*const Node, usize> = HashMap::new();
        let mut visited: HashMap<*const Node, ()> = HashMap::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                index.insert(t.ptr(), order.len());
                order.push(t);
                continue;
            }
            if visited.insert(t.ptr(), ()).is_some() {
                continue;
            }
            stack.push((t.clone(), true));
            for p in t.0.parents.iter().rev() {
                if p.requires_grad() && !visited.contains_key(&p.ptr()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        // Gradients contributed by this pass only; merged into the stored ones at the end.
        let mut pass: Vec<Option<Vec<f32>>> = vec![None; order.len()];
        pass[order.len() - 1] = Some(vec![1.0]);
        for i in (0..order.len()).rev() {
            let node = &order[i].0;
            let Some(grad_fn) = node.grad_fn.as_ref() else { continue };
            let Some(out_grad) = pass[i].take() else { continue };
            let input_grads = grad_fn(&out_grad, &node.parents);
            debug_assert_eq!(input_grads.len(), node.parents.len());
            for (parent, g) in node.parents.iter().zip(input_grads) {
                let (Some(g), true) = (g, parent.requires_grad()) else { continue };
                let j = index[&parent.ptr()];
                match pass[j].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => pass[j] = Some(g),
                }
            }
            pass[i] = Some(out_grad);
        }
        for (t, g) in order.iter().zip(pass) {
            if let Some(g) = g {
                t.accumulate_grad(&g);
            }
        }
        Ok(())
    }
}
