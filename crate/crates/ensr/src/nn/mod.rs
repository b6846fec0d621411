//! A small reverse-mode autodiff engine and the layers built on it.
//!
//! Everything is f64 on the CPU with fixed iteration orders, so any
//! training run is exactly reproducible. Gradients are emitted as tape
//! nodes and can themselves be differentiated, which is what the
//! critic's gradient penalty requires.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use params::{ParamStore, VarMap};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
