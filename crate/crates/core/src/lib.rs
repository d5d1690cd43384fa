#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod conditioning;
pub mod degradation;
pub mod diffusion;
pub mod error;
pub mod math;
pub mod metrics;
pub mod networks;
pub mod numerics;
pub mod quave;
pub mod qwt;
pub mod synth;
pub mod wavelet;

pub use error::{Error, Result};
pub use numerics::{ImageGrid, ParamStore, Quaternion};
