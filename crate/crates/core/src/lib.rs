//! Multi-blank transducers: a transducer loss whose blank symbols may consume
//! several frames at once, decoders that skip frames accordingly, and a small
//! trainable model to exercise both.

pub mod data;
pub mod decode;
pub mod error;
pub mod loss;
pub mod numerics;
pub mod oracle;
pub mod toymodel;

pub use error::{Error, Result};
pub use loss::{
    loss_and_grad, under_normalize, ActivationLattice, AlphaBetaLattice, ArcWeightLattice, BlankSet,
    LossConfig, LossResult,
};
pub use numerics::{Tensor3, LOG_ZERO};
