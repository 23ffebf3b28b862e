use std::cell::RefCell;
use std::rc::Rc;

use super::{DiffError, Result, Scalar, Tensor};

pub(crate) struct Node<T> {
    pub data: Vec<T>,
    pub shape: Vec<usize>,
    pub needs_grad: bool,
    pub leaf: bool,
}

type BackwardFn<T> = Box<dyn Fn(&mut BackwardScope<'_, T>)>;

struct TapeInner<T: Scalar> {
    nodes: Vec<Node<T>>,
    ops: Vec<BackwardFn<T>>,
    grads: Vec<Option<Vec<T>>>,
    ran_backward: bool,
}

/// Gradient propagation context handed to each recorded op during replay.
/// Ops read forward values through it and accumulate into input gradients.
pub(crate) struct BackwardScope<'a, T: Scalar> {
    nodes: &'a [Node<T>],
    grads: &'a mut Vec<Option<Vec<T>>>,
}

impl<T: Scalar> BackwardScope<'_, T> {
    /// Removes and returns the accumulated output gradient. By reverse
    /// replay order it is complete once the producing op runs, and no
    /// later op reads it, so moving it out is safe.
    pub fn take_grad(&mut self, id: usize) -> Option<Vec<T>> {
        self.grads[id].take()
    }

    /// Hands `f` the (zero-initialized on first touch) gradient buffer of
    /// node `id` plus read access to the node arena, so rules can read
    /// forward values while accumulating. No-op when the node opted out.
    pub fn with_grad(&mut self, id: usize, f: impl FnOnce(&mut [T], &[Node<T>])) {
        if !self.nodes[id].needs_grad {
            return;
        }
        let len = self.nodes[id].data.len();
        let buf = self.grads[id].get_or_insert_with(|| vec![T::zero(); len]);
        f(buf, self.nodes);
    }
}

/// Recording context for a single differentiable computation. Cloning is
/// shallow; all clones append to the same op list.
pub struct Tape<T: Scalar> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T: Scalar> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                ops: Vec::new(),
                grads: Vec::new(),
                ran_backward: false,
            })),
        }
    }

    /// Trainable input: receives a gradient on backward.
    pub fn leaf(&self, value: &Tensor<T>) -> Var<T> {
        self.push(value.shape().to_vec(), value.data().to_vec(), true, true)
    }

    /// Non-trainable input: participates in the forward pass only.
    pub fn constant(&self, value: &Tensor<T>) -> Var<T> {
        self.push(value.shape().to_vec(), value.data().to_vec(), false, true)
    }

    pub fn scalar(&self, value: T) -> Var<T> {
        self.push(vec![], vec![value], false, true)
    }

    /// Clears accumulated gradients and re-arms backward. Recorded ops and
    /// node values stay valid, so more ops may be appended and a second
    /// backward run from a new loss.
    pub fn reset_grads(&self) {
        let mut inner = self.inner.borrow_mut();
        for g in inner.grads.iter_mut() {
            *g = None;
        }
        inner.ran_backward = false;
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn push(&self, shape: Vec<usize>, data: Vec<T>, needs_grad: bool, leaf: bool) -> Var<T> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            data,
            shape,
            needs_grad,
            leaf,
        });
        inner.grads.push(None);
        Var {
            tape: self.clone(),
            id: inner.nodes.len() - 1,
        }
    }

    /// Records the output of an op. Validates finiteness, then registers
    /// `backward` unless no input carries gradient.
    pub(crate) fn record(
        &self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        needs_grad: bool,
        backward: impl Fn(&mut BackwardScope<'_, T>) + 'static,
    ) -> Result<Var<T>> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite { op: name });
        }
        let out = self.push(shape, data, needs_grad, false);
        if needs_grad {
            self.inner.borrow_mut().ops.push(Box::new(backward));
        }
        Ok(out)
    }

    pub(crate) fn same_tape(&self, other: &Tape<T>, op: &'static str) -> Result<()> {
        if Rc::ptr_eq(&self.inner, &other.inner) {
            Ok(())
        } else {
            Err(DiffError::TapeMismatch { op })
        }
    }

    /// Id the next recorded node will get; ops capture it for backward.
    pub(crate) fn next_id(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Read access to the node arena for forward kernels.
    pub(crate) fn with_nodes<R>(&self, f: impl FnOnce(&[Node<T>]) -> R) -> R {
        let inner = self.inner.borrow();
        f(&inner.nodes)
    }
}

/// Handle to a tensor recorded on a [`Tape`]. Ops on `Var` produce new
/// `Var`s on the same tape; see `diffcore::ops` for the op set.
pub struct Var<T: Scalar> {
    pub(crate) tape: Tape<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Self {
            tape: self.tape.clone(),
            id: self.id,
        }
    }
}

impl<T: Scalar> Var<T> {
    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].data.len()
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].needs_grad
    }

    /// Snapshot of the forward value.
    pub fn value(&self) -> Tensor<T> {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.id];
        Tensor::new(node.shape.clone(), node.data.clone()).expect("node shape is valid")
    }

    /// Forward value of a single-element tensor.
    pub fn item(&self) -> T {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.id];
        debug_assert_eq!(node.data.len(), 1);
        node.data[0]
    }

    /// Runs `f` over the forward value without copying it out.
    pub fn with_data<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        let inner = self.tape.inner.borrow();
        f(&inner.nodes[self.id].data)
    }

    /// Accumulated gradient, available on leaves after [`Var::backward`].
    pub fn grad(&self) -> Option<Tensor<T>> {
        let inner = self.tape.inner.borrow();
        inner.grads[self.id]
            .as_ref()
            .map(|g| Tensor::new(inner.nodes[self.id].shape.clone(), g.clone()).expect("grad shape"))
    }

    /// Re-enters the value as a constant: gradients stop here.
    pub fn detach(&self) -> Var<T> {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.id];
        let (shape, data) = (node.shape.clone(), node.data.clone());
        drop(inner);
        self.tape.push(shape, data, false, true)
    }

    /// Reverse-mode sweep from this scalar. Fills gradients for every
    /// `requires_grad` leaf (zeros where the loss does not reach). Errors
    /// on non-scalar values and on a second call without
    /// [`Tape::reset_grads`].
    pub fn backward(&self) -> Result<()> {
        {
            let inner = self.tape.inner.borrow();
            if inner.ran_backward {
                return Err(DiffError::DoubleBackward);
            }
            let node = &inner.nodes[self.id];
            if node.data.len() != 1 {
                return Err(DiffError::NonScalarLoss {
                    shape: node.shape.clone(),
                });
            }
        }
        let inner = &mut *self.tape.inner.borrow_mut();
        inner.grads[self.id] = Some(vec![T::one()]);
        let TapeInner {
            nodes, ops, grads, ..
        } = inner;
        {
            let mut scope = BackwardScope { nodes, grads };
            for op in ops.iter().rev() {
                op(&mut scope);
            }
        }
        for (id, node) in nodes.iter().enumerate() {
            if node.leaf && node.needs_grad && grads[id].is_none() {
                grads[id] = Some(vec![T::zero(); node.data.len()]);
            }
        }
        inner.ran_backward = true;
        Ok(())
    }
}
