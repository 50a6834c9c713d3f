//! Minimal reverse-mode automatic differentiation for NCHW convolutional
//! networks on the CPU.
//!
//! Graphs are built eagerly from [`Var`] operations. [`grad`] walks the graph
//! backwards and, with `create_graph`, records the backward pass itself so it
//! can be differentiated again. Double backpropagation is what the gradient
//! penalty of a Wasserstein critic needs, and none of the usual CPU crates
//! provide it.
//!
//! ```
//! use autodiff::{grad, Tensor, Var};
//!
//! let x = Var::leaf(Tensor::new([2], vec![1.0, 2.0]), true);
//! let y = x.square().sum();
//! let dx = &grad(&y, &[x.clone()], true)[0];
//! assert_eq!(dx.value().data(), &[2.0, 4.0]);
//! // d/dx sum(dx) = 2 per element
//! let ddx = &grad(&dx.sum(), &[x], false)[0];
//! assert_eq!(ddx.value().data(), &[2.0, 2.0]);
//! ```

mod graph;
pub mod kernels;
mod ops;
pub mod optim;
mod tensor;

pub use graph::{backward, grad, is_grad_enabled, no_grad, set_grad_enabled, GradModeGuard, Var};
pub use kernels::ConvGeom;
pub use optim::{Adam, AdamState};
pub use tensor::Tensor;
