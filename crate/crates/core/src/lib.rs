//! Kernel U-Net time-series forecasting trained with level-weighted
//! gradient descent.
//!
//! The crate is organised bottom-up:
//!
//! * [`math`]: dense `f64` matrices and the seeded random stream
//! * [`data`]: synthetic sinusoid series, splits and sliding windows
//! * [`model`]: the Kernel U-Net with hand-written backward passes
//! * [`optim`]: SGD, SGD with momentum, Adam and EW-SGDM
//! * [`train`]: loss, evaluation, early-stopped training and run records
//! * [`cli`]: the `kunet` command-line front end

pub mod cli;
pub mod data;
pub mod error;
pub mod math;
pub mod model;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
