//! Dense `f64` tensors, an explicit op graph with reverse-mode
//! differentiation, Adam, and a simple weight-file format.
//!
//! ```
//! use gradcore::{Graph, Tensor, value_and_grad};
//!
//! let mut g = Graph::new();
//! let x = g.input("x");
//! let sq = g.square(x);
//! let s = g.sum(sq);
//! g.set_output(s);
//!
//! let x0 = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
//! let (v, grad) = value_and_grad(&g, &[("x", &x0)], "x").unwrap();
//! assert_eq!(v, 5.25);
//! assert_eq!(grad.data(), &[2.0, -4.0, 1.0]);
//! ```

pub mod adam;
pub mod error;
pub mod eval;
pub mod graph;
mod kernels;
pub mod tensor;
pub mod weights;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{GradError, Result};
pub use eval::{value_and_grad, EvalContext, Wrt};
pub use graph::{ConvSpec, Graph, Node, NodeId, Op, PadMode, ParamEntry, SobelAxis};
pub use tensor::Tensor;

/// Floor applied inside [`Graph::sqrt`].
pub const SQRT_FLOOR: f64 = 1e-12;
