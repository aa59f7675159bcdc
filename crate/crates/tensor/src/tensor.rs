use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, shape_err, Result};
use crate::Real;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Backward rule of a recorded operation.
pub(crate) trait GradFn<T: Real>: Send + Sync {
    fn inputs(&self) -> Vec<&Tensor<T>>;

    /// Gradient for every input, in `inputs()` order. `None` for inputs that
    /// do not require a gradient.
    fn backward(&self, out: &[T], grad: &[T]) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad_fn: Option<Box<dyn GradFn<T>>>,
}

/// Immutable, reference-counted dense tensor in row-major layout.
///
/// Operations on tensors that require a gradient record a backward rule;
/// everything else is plain eager computation with no bookkeeping.
pub struct Tensor<T: Real>(Arc<Node<T>>);

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dtype", &T::DTYPE)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    fn leaf(data: Arc<Vec<T>>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad_fn: None,
        }))
    }

    /// Output of an operation; the backward rule is kept only when some input
    /// requires a gradient.
    pub(crate) fn from_op(data: Vec<T>, shape: Vec<usize>, op: impl GradFn<T> + 'static) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        let requires_grad = op.inputs().iter().any(|t| t.requires_grad());
        let grad_fn: Option<Box<dyn GradFn<T>>> = if requires_grad { Some(Box::new(op)) } else { None };
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: Arc::new(data),
            requires_grad,
            grad_fn,
        }))
    }

    pub(crate) fn from_op_shared(data: Arc<Vec<T>>, shape: Vec<usize>, op: impl GradFn<T> + 'static) -> Self {
        let requires_grad = op.inputs().iter().any(|t| t.requires_grad());
        let grad_fn: Option<Box<dyn GradFn<T>>> = if requires_grad { Some(Box::new(op)) } else { None };
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad_fn,
        }))
    }

    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return shape_err(
                "from_vec",
                format!("{} elements cannot fill shape {:?}", data.len(), shape),
            );
        }
        Ok(Self::leaf(Arc::new(data), shape.to_vec(), false))
    }

    pub fn from_f64_slice(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(data.iter().map(|&v| T::from_f64(v)).collect(), shape)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf(Arc::new(vec![value; numel(shape)]), shape.to_vec(), false)
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(Arc::new(vec![value]), Vec::new(), false)
    }

    /// Standard normal samples drawn in row-major order.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self::leaf(Arc::new(data), shape.to_vec(), false)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::from_f64(rng.random_range(lo..hi)))
            .collect();
        Self::leaf(Arc::new(data), shape.to_vec(), false)
    }

    /// A new leaf sharing this tensor's data that records gradients.
    pub fn requires_grad_(&self) -> Self {
        Self::leaf(Arc::clone(&self.0.data), self.0.shape.clone(), true)
    }

    /// A new leaf sharing this tensor's data with no gradient tracking.
    pub fn detach(&self) -> Self {
        Self::leaf(Arc::clone(&self.0.data), self.0.shape.clone(), false)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.0.data)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn to_scalar(&self) -> Result<T> {
        if self.numel() != 1 {
            return shape_err("to_scalar", format!("tensor has shape {:?}", self.shape()));
        }
        Ok(self.0.data[0])
    }

    /// Element type conversion; the result is a fresh leaf without gradient.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        let data = self.0.data.iter().map(|v| U::from_f64(v.as_f64())).collect();
        Tensor::leaf(Arc::new(data), self.0.shape.clone(), false)
    }

    /// Same shape, every element finite.
    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Reverse-mode gradients of this scalar with respect to every leaf that
    /// requires a gradient.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.numel() != 1 {
            return shape_err("backward", format!("root must be a scalar, got {:?}", self.shape()));
        }
        let mut grads = Gradients { map: HashMap::new() };
        if !self.requires_grad() {
            return Ok(grads);
        }
        let order = self.topological_order();
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.0.grad_fn {
                Some(f) => {
                    let input_grads = f.backward(&node.0.data, &g);
                    for (input, ig) in f.inputs().into_iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), input.numel());
                        match pending.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += *b),
                            None => {
                                pending.insert(input.id(), ig);
                            }
                        }
                    }
                }
                None => {
                    let t = Tensor::leaf(Arc::new(g), node.shape().to_vec(), false);
                    grads.map.insert(node.id(), t);
                }
            }
        }
        Ok(grads)
    }

    /// Post-order over nodes that require a gradient.
    fn topological_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(f) = &node.0.grad_fn {
                for input in f.inputs() {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor<T>, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(())
    }

    pub(crate) fn check_rank_at_least(&self, rank: usize, op: &'static str) -> Result<()> {
        if self.rank() < rank {
            return invalid(op, format!("expected rank >= {rank}, got shape {:?}", self.shape()));
        }
        Ok(())
    }
}

/// Leaf gradients produced by [`Tensor::backward`].
pub struct Gradients<T: Real> {
    map: HashMap<u64, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&Tensor<T>> {
        self.map.get(&t.id())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
