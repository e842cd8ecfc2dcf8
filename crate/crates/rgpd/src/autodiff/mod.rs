//! Reverse-mode automatic differentiation over dense row-major f64 tensors.
//!
//! Ops execute eagerly and record their backward rule as a closure; `backward`
//! on a scalar walks the DAG in reverse topological order and accumulates
//! gradients into every leaf created with `requires_grad`. The op set is
//! closed: only scalar- and column/row-broadcast are supported, so every
//! backward rule stays auditable.

mod ops;

pub mod gradcheck;


pub use gradcheck::finite_diff_check;

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Padding behaviour for the dilated depthwise convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvPadding {
    /// Zero "same" padding, output length == input length. Kernel must be odd.
    Same,
    /// y(i) = sum_j f(j) x(i - d*j); any kernel length, zeros before t=0.
    Causal,
}

pub(crate) type BackwardFn =
    Box<dyn Fn(&[f64], &[f64], &[(Vec<usize>, Vec<f64>)]) -> Vec<Vec<f64>>>;

pub(crate) struct Inner {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
    pub parents: Vec<Tensor>,
    pub backward: Option<BackwardFn>,
}

/// Dense multi-dimensional array with optional gradient.
///
/// Cloning is cheap (shared handle); values are immutable after creation
/// except through [`Tensor::set_values`], which is reserved for optimizer
/// steps between tapes.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &b.shape)
            .field("values", &b.values)
            .field("requires_grad", &b.requires_grad)
            .finish()
    }
}

pub(crate) fn check_finite(values: &[f64], ctx: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(ctx.to_string()));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::InvalidArg(format!(
                "shape {:?} does not match {} values",
                shape,
                values.len()
            )));
        }
        check_finite(&values, "Tensor::new")?;
        Ok(Tensor::raw(shape, values, false))
    }

    /// Leaf tensor participating in gradient computation.
    pub fn param(shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        let t = Tensor::new(shape, values)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::raw(vec![1], vec![v], false)
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::raw(shape, vec![0.0; n], false)
    }

    pub fn ones(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::raw(shape, vec![1.0; n], false)
    }

    pub(crate) fn raw(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Tensor {
        debug_assert!(values.iter().all(|v| v.is_finite()), "non-finite tensor");
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                values,
                grad: None,
                requires_grad,
                parents: Vec::new(),
                backward: None,
            })),
        }
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        debug_assert!(values.iter().all(|v| v.is_finite()), "non-finite op output");
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                values,
                grad: None,
                requires_grad,
                parents,
                backward: if requires_grad { Some(backward) } else { None },
            })),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Scalar extraction; panics if the tensor is not a single element.
    pub fn item(&self) -> f64 {
        let b = self.inner.borrow();
        assert_eq!(b.values.len(), 1, "item() on non-scalar tensor");
        b.values[0]
    }

    pub fn value_at(&self, i: usize) -> f64 {
        self.inner.borrow().values[i]
    }

    /// Constant copy detached from the tape.
    pub fn detach(&self) -> Tensor {
        let b = self.inner.borrow();
        Tensor::raw(b.shape.clone(), b.values.clone(), false)
    }

    /// Overwrite values in place. Only valid between tapes (optimizer steps);
    /// any recorded graph referencing this tensor becomes stale.
    pub fn set_values(&self, values: Vec<f64>) -> Result<()> {
        let mut b = self.inner.borrow_mut();
        if values.len() != b.values.len() {
            return Err(Error::invalid("set_values: length mismatch"));
        }
        check_finite(&values, "set_values")?;
        b.values = values;
        Ok(())
    }

    fn ptr(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate
    /// across repeated calls; use `zero_grad` between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        // Pass-local gradients, so a second backward call re-propagates
        // exactly one unit of seed instead of compounding stored grads.
        let mut local: HashMap<usize, Vec<f64>> = HashMap::new();
        local.insert(self.ptr(), vec![1.0]);
        for node in order.iter().rev() {
            let og = match local.get(&node.ptr()) {
                Some(g) => g.clone(),
                None => continue,
            };
            let b = node.inner.borrow();
            let backward = match &b.backward {
                Some(f) => f,
                None => continue,
            };
            let parent_data: Vec<(Vec<usize>, Vec<f64>)> = b
                .parents
                .iter()
                .map(|p| {
                    let pb = p.inner.borrow();
                    (pb.shape.clone(), pb.values.clone())
                })
                .collect();
            let contribs = backward(&og, &b.values, &parent_data);
            debug_assert_eq!(contribs.len(), b.parents.len());
            for (p, c) in b.parents.iter().zip(contribs) {
                if !p.requires_grad() {
                    continue;
                }
                let e = local
                    .entry(p.ptr())
                    .or_insert_with(|| vec![0.0; p.numel()]);
                for (a, d) in e.iter_mut().zip(&c) {
                    *a += d;
                }
            }
        }
        for node in &order {
            if let Some(g) = local.get(&node.ptr()) {
                let mut b = node.inner.borrow_mut();
                if !b.requires_grad {
                    continue;
                }
                match &mut b.grad {
                    Some(acc) => {
                        for (a, d) in acc.iter_mut().zip(g) {
                            *a += d;
                        }
                    }
                    None => b.grad = Some(g.clone()),
                }
            }
        }
        Ok(())
    }

    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashMap<usize, ()> = HashMap::new();
        // Iterative post-order DFS; (node, child cursor) stack.
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.ptr(), ());
        while let Some((node, cursor)) = stack.pop() {
            let next_child = {
                let b = node.inner.borrow();
                b.parents.get(cursor).cloned()
            };
            match next_child {
                Some(child) => {
                    stack.push((node, cursor + 1));
                    if !visited.contains_key(&child.ptr()) {
                        visited.insert(child.ptr(), ());
                        stack.push((child, 0));
                    }
                }
                None => order.push(node),
            }
        }
        order
    }
}
