//! Dense NCHW tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheaply clonable handle (`Rc`) to an immutable value
//! buffer plus an optional gradient buffer. Ops record their inputs and a
//! backward rule on the result; [`Tensor::backward`] replays the recorded
//! graph in reverse topological order and accumulates gradients into every
//! leaf created with `requires_grad`.
//!
//! Graphs are confined to one execution context: handles are not `Send`.
//! The number-crunching kernels underneath are data-parallel (see
//! [`kernels`]) and deterministic regardless of thread count.

pub mod io;
#[doc(hidden)]
pub mod kernels;
pub mod ops;

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type of a tensor: IEEE float with the traits the kernels need.
pub trait Scalar:
    Float + std::ops::AddAssign + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[Tensor<T>])>;

pub(crate) struct OpRecord<T: Scalar> {
    pub(crate) parents: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
}

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    op: Option<OpRecord<T>>,
}

/// Dense N-dimensional array, NCHW order for 4-D, row-major storage.
pub struct Tensor<T: Scalar = f32> {
    inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

impl<T: Scalar> Tensor<T> {
    fn build(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        op: Option<OpRecord<T>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
                op,
            }),
        }
    }

    /// Leaf tensor without gradient tracking.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Leaf parameter: gradients accumulate here during backward.
    pub fn param_from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![T::zero(); n], false, None)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    /// Fresh gradient-tracking leaf holding a copy of this tensor's values.
    pub fn detached_param(&self) -> Self {
        Self::build(
            self.inner.shape.clone(),
            self.inner.data.borrow().clone(),
            true,
            None,
        )
    }

    /// Fresh non-tracking leaf holding a copy of this tensor's values.
    pub fn detached(&self) -> Self {
        Self::build(
            self.inner.shape.clone(),
            self.inner.data.borrow().clone(),
            false,
            None,
        )
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let requires = parents.iter().any(|p| p.requires_grad());
        if requires {
            Self::build(shape, data, true, Some(OpRecord { parents, backward }))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.borrow().len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow the value buffer.
    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        let d = self.inner.data.borrow();
        if d.len() != 1 {
            return Err(Error::Contract(format!(
                "item() requires a scalar tensor, shape is {:?}",
                self.inner.shape
            )));
        }
        Ok(d[0])
    }

    /// Overwrite the value buffer in place. Intended for optimizer updates on
    /// leaves between steps, never on tensors inside a live graph.
    pub fn set_data(&self, values: &[T]) -> Result<()> {
        let mut d = self.inner.data.borrow_mut();
        if d.len() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "set_data with {} values on tensor of {} elements",
                values.len(),
                d.len()
            )));
        }
        d.copy_from_slice(values);
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Add `g` into the gradient buffer. No-op unless the tensor tracks
    /// gradients.
    pub fn accumulate_grad(&self, g: &[T]) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, &v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    fn take_grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow_mut().take()
    }

    pub fn is_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Reverse pass from a scalar output. Gradients of intermediate nodes are
    /// consumed; gradients of leaves accumulate across repeated calls until
    /// [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar output, shape is {:?}",
                self.inner.shape
            )));
        }
        let tape = Tape::record(self);
        // Seed on the output. A leaf output keeps it; an op output consumes it
        // below like any other intermediate.
        {
            let mut slot = self.inner.grad.borrow_mut();
            match slot.as_mut() {
                Some(buf) => buf[0] += T::one(),
                None => *slot = Some(vec![T::one()]),
            }
        }
        for node in tape.nodes.iter().rev() {
            let op = node.inner.op.as_ref().expect("tape holds op nodes only");
            let Some(g) = node.take_grad() else { continue };
            (op.backward)(&g, &op.parents);
        }
        Ok(())
    }
}

/// Recorded operations of one graph, in topological order: every entry
/// appears after all producers of its inputs. Built on demand from the
/// links ops leave on their results.
pub struct Tape<T: Scalar> {
    nodes: Vec<Tensor<T>>,
}

impl<T: Scalar> Tape<T> {
    /// Collect the op nodes reachable from `output`, producers first.
    pub fn record(output: &Tensor<T>) -> Self {
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // Iterative post-order DFS; second element tracks child expansion.
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(output.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if node.inner.op.is_none() {
                continue;
            }
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(op) = &node.inner.op {
                for p in &op.parents {
                    stack.push((p.clone(), false));
                }
            }
        }
        Tape { nodes: order }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids in recorded order.
    pub fn node_ids(&self) -> Vec<u64> {
        self.nodes.iter().map(|n| n.id()).collect()
    }

    /// Parent ids of the node at `index`, leaves included.
    pub fn parent_ids(&self, index: usize) -> Vec<u64> {
        self.nodes[index]
            .inner
            .op
            .as_ref()
            .map(|op| op.parents.iter().map(|p| p.id()).collect())
            .unwrap_or_default()
    }
}

/// Compare analytic gradients of a scalar-producing graph against central
/// finite differences on `input`. Returns the max over elements of
/// `|analytic - numeric| / max(|numeric|, 1e-8)`.
pub fn check_gradients<T, F>(graph_builder: F, input: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    let leaf = input.detached_param();
    let out = graph_builder(&leaf)?;
    if out.numel() != 1 {
        return Err(Error::Contract(
            "graph_builder must produce a scalar".into(),
        ));
    }
    if !out.is_finite() {
        return Err(Error::Numeric("non-finite graph output".into()));
    }
    out.backward()?;
    let analytic = leaf
        .grad()
        .unwrap_or_else(|| vec![T::zero(); input.numel()]);

    let base = input.to_vec();
    let eval = |data: Vec<T>| -> Result<f64> {
        let x = Tensor::from_vec(input.shape(), data)?;
        let y = graph_builder(&x)?;
        let v = y.item()?;
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite intermediate value".into()));
        }
        Ok(v.to_f64())
    };

    let mut max_rel = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += T::from_f64(eps);
        let mut minus = base.clone();
        minus[i] = minus[i] - T::from_f64(eps);
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic[i].to_f64();
        let rel = (a - numeric).abs() / numeric.abs().max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
