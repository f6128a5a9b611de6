//! `lrnet-tensor`: a compact CPU tensor library for training small
//! convolutional networks in double precision.
//!
//! Tensors are always four-dimensional (`[N, C, H, W]`). Operations on
//! [`Var`] record themselves on a [`Tape`]; [`Tape::backward`] then runs one
//! reverse sweep. Convolutions lower to `im2col` + GEMM.
//!
//! ```
//! use lrnet_tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::from_vec([1, 1, 1, 2], vec![1.0, -2.0]));
//! let y = x.relu().sum();
//! let grads = tape.backward(y);
//! assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 0.0]);
//! ```

pub mod gradcheck;
pub mod init;
pub mod kernels;
mod ops;
pub mod optim;
pub mod params;
mod tape;
mod tensor;

pub use ops::BN_EPS;
pub use optim::{Adam, Moments};
pub use params::{Binder, ParamEntry, ParamId, ParamKind, Params};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Dims, Tensor};
