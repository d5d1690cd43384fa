//! Orthonormal discrete wavelet transforms in one and two dimensions, and the
//! filter banks used by the dual-tree transforms.
//!
//! Signals are treated as periodic beyond their edges, which keeps every
//! transform here orthonormal (exact Parseval and perfect reconstruction) for
//! all filter families, including the asymmetric q-shift banks.

mod dwt;
mod filters;

pub use dwt::{
    dwt1d, dwt2d, dwt2d_multilevel, dwt2d_multilevel_with, dwt2d_separable, idwt1d, idwt2d,
    idwt2d_multilevel, idwt2d_multilevel_with, idwt2d_separable, SubbandSet,
};
pub use filters::{FilterFamily, FilterPair, Tree};
