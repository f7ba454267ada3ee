//! Margin dynamics of gradient flow and gradient descent on homogeneous models.
//!
//! The crate trains small bias-free networks with exponential-tail losses and
//! tracks normalized margins, smoothed margins, approximate KKT certificates and
//! asymptotic rates along the way. Losses are handled in log space throughout so
//! that training can run far past the point where the loss underflows `f64`.

// `!(x > y)` is used on purpose so that NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod gdtrain;
pub mod gradflow;
pub mod kkt;
pub mod losses;
pub mod margin;
pub mod models;
pub mod numerics;
pub mod objective;
pub mod param;
pub mod rates;
pub mod runner;

pub use dataset::{Dataset, Labels};
pub use error::{Error, Result};
pub use losses::LossSpec;
pub use models::{Family, HomogeneousModel, ModelSpec};
pub use param::ParamVector;
