//! Dense rank-4 tensors and a reverse-mode autodiff tape covering the
//! operations a convolutional graph network needs: convolution, batch norm,
//! pooling, dropout, linear maps, gather/scatter over graph edges, and the
//! classification losses.
//!
//! ```
//! use tgraphx_tensor::{Shape, Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_f64(Shape::vector(3), &[-1.0, 0.5, 2.0]).unwrap(), true);
//! let y = tape.relu(x).unwrap();
//! let loss = tape.sum_all(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 1.0]);
//! ```

pub mod checkpoint;
pub mod ctx;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod ops;
pub mod par;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use ctx::{derive_seed, Ctx};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use kernels::conv::ConvAlgo;
pub use ops::{BnConfig, BnOutput, Mode};
pub use params::{he_normal, scaled_normal, ParamEntry, ParamId, ParamStore};
pub use real::{Precision, Real};
pub use tape::{sigmoid, softplus, Gradients, Tape, Var};
pub use tensor::{Shape, Tensor};
