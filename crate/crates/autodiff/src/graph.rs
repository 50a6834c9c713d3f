use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::Tensor;

/// Maps the upstream gradient of a node to gradients of its inputs.
///
/// Arguments are the node's inputs, the node itself and the upstream gradient.
/// Implementations must be written with [`Var`] operations so that the
/// returned gradients are themselves differentiable.
pub(crate) type BackwardFn = Box<dyn Fn(&[Var], &Var, &Var) -> Vec<Option<Var>>>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    inputs: Vec<Var>,
    backward: Option<BackwardFn>,
}

/// A value in the computation graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl Var {
    /// A graph input. Gradients are tracked when `requires_grad` is set.
    pub fn leaf(value: Tensor, requires_grad: bool) -> Self {
        Self(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            inputs: Vec::new(),
            backward: None,
        }))
    }

    pub fn constant(value: Tensor) -> Self {
        Self::leaf(value, false)
    }

    pub fn scalar(value: f64) -> Self {
        Self::constant(Tensor::scalar(value))
    }

    pub(crate) fn from_op(value: Tensor, inputs: Vec<Var>, backward: BackwardFn) -> Self {
        let track = is_grad_enabled() && inputs.iter().any(Var::requires_grad);
        if !track {
            return Self::constant(value);
        }
        Self(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad: true,
            inputs,
            backward: Some(backward),
        }))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// The value as a constant with no history.
    pub fn detach(&self) -> Var {
        Var::constant(self.value().clone())
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn id(&self) -> u64 {
        self.0.id
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("value", self.value())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Restores the previous grad-recording state when dropped.
pub struct GradModeGuard {
    previous: bool,
}

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.previous));
    }
}

pub fn set_grad_enabled(enabled: bool) -> GradModeGuard {
    let previous = GRAD_ENABLED.with(|g| g.replace(enabled));
    GradModeGuard { previous }
}

/// Disable graph recording on this thread until the guard drops.
pub fn no_grad() -> GradModeGuard {
    set_grad_enabled(false)
}

/// Gradients of a scalar `output` with respect to each of `wrt`.
///
/// With `create_graph` the returned gradients carry their own history and can
/// be differentiated again. Inputs that `output` does not depend on receive
/// zeros.
pub fn grad(output: &Var, wrt: &[Var], create_graph: bool) -> Vec<Var> {
    assert_eq!(
        output.value().len(),
        1,
        "grad() needs a scalar output, got shape {:?}",
        output.shape()
    );
    let zeros = |v: &Var| Var::constant(Tensor::zeros(v.shape()));
    if !output.requires_grad() {
        return wrt.iter().map(zeros).collect();
    }

    // Node ids increase with creation, so every input precedes its consumers.
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    let mut stack = vec![output.clone()];
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || !seen.insert(v.id()) {
            continue;
        }
        stack.extend(v.0.inputs.iter().cloned());
        order.push(v);
    }
    order.sort_by_key(|v| std::cmp::Reverse(v.id()));

    let _mode = set_grad_enabled(create_graph);
    let mut grads: HashMap<u64, Var> = HashMap::new();
    grads.insert(output.id(), Var::constant(Tensor::ones(output.shape())));
    for node in &order {
        let Some(backward) = node.0.backward.as_ref() else {
            continue;
        };
        let Some(upstream) = grads.get(&node.id()).cloned() else {
            continue;
        };
        let input_grads = backward(&node.0.inputs, node, &upstream);
        debug_assert_eq!(input_grads.len(), node.0.inputs.len());
        for (input, g) in node.0.inputs.iter().zip(input_grads) {
            let Some(g) = g else { continue };
            if !input.requires_grad() {
                continue;
            }
            debug_assert_eq!(g.shape(), input.shape(), "gradient shape mismatch");
            let merged = match grads.remove(&input.id()) {
                Some(existing) => existing.add(&g),
                None => g,
            };
            grads.insert(input.id(), merged);
        }
    }
    wrt.iter()
        .map(|v| grads.get(&v.id()).cloned().unwrap_or_else(|| zeros(v)))
        .collect()
}

/// First-order gradients as plain tensors.
pub fn backward(output: &Var, wrt: &[Var]) -> Vec<Tensor> {
    grad(output, wrt, false)
        .into_iter()
        .map(|g| g.value().clone())
        .collect()
}
