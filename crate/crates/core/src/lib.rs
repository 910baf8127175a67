//! Semiclassical quasi-energy states for the time-periodic nonlocal
//! Gross–Pitaevskii equation.

// `!(x > 0.0)` is used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ehrenfest;
pub mod error;
pub mod floquet;
pub mod linalg;
pub mod model;
pub mod monodromy;
pub mod ode;
pub mod oracle;
pub mod phase;
pub mod pipeline;
pub mod quad;
pub mod semiclassics;
pub mod spectra;
pub mod wavepacket;

pub use error::{Error, ErrorClass, Result};
