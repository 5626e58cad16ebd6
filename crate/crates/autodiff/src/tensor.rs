use std::cell::Cell;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{ArrayD, IxDyn};

/// Dense dynamic-rank array of `f64`, the storage behind every [`Tensor`].
pub type Array = ArrayD<f64>;

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Whether newly created tensors record the operation that produced them.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

struct ModeGuard(bool);

impl Drop for ModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.0));
    }
}

/// Runs `f` with graph recording switched on or off, restoring the previous
/// mode afterwards (also on unwind).
pub fn with_grad_mode<R>(enabled: bool, f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(enabled));
    let _guard = ModeGuard(prev);
    f()
}

/// Runs `f` without recording any graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    with_grad_mode(false, f)
}

/// Backward rule of a recorded operation.
///
/// `grad` is the gradient flowing into `out`; the rule returns one gradient
/// per parent (or `None` when that parent receives nothing). Rules are written
/// with differentiable tensor ops so that gradients can themselves be
/// differentiated.
pub(crate) trait Op {
    fn name(&self) -> &'static str;
    fn backward(&self, out: &Tensor, grad: &Tensor, parents: &[Tensor]) -> Vec<Option<Tensor>>;
}

pub(crate) struct Node {
    pub(crate) id: usize,
    pub(crate) value: Array,
    pub(crate) requires_grad: bool,
    pub(crate) op: Option<Box<dyn Op>>,
    pub(crate) parents: Vec<Tensor>,
}

/// A reference-counted node in a computation graph.
///
/// Cloning is cheap and shares the node.
#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Node>);

impl Tensor {
    fn leaf(value: Array, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            op: None,
            parents: Vec::new(),
        }))
    }

    /// A leaf that does not participate in differentiation.
    pub fn constant(value: Array) -> Self {
        Self::leaf(value, false)
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn variable(value: Array) -> Self {
        Self::leaf(value, true)
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        Self::constant(ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape and data length agree"))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::constant(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::constant(ArrayD::from_elem(IxDyn(shape), v))
    }

    pub(crate) fn from_op(value: Array, op: impl Op + 'static, parents: Vec<Tensor>) -> Self {
        let track = is_grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !track {
            return Self::constant(value);
        }
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad: true,
            op: Some(Box::new(op)),
            parents,
        }))
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn value(&self) -> &Array {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn ndim(&self) -> usize {
        self.0.value.ndim()
    }

    pub fn len(&self) -> usize {
        self.0.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.value.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// The single value of a one-element tensor.
    ///
    /// Panics if the tensor holds more than one element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        *self.0.value.iter().next().unwrap()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.value.iter().copied().collect()
    }

    /// A constant copy of this value, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.0.value.clone())
    }

    pub(crate) fn op_name(&self) -> Option<&'static str> {
        self.0.op.as_ref().map(|op| op.name())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("op", &self.op_name().unwrap_or("leaf"))
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}
