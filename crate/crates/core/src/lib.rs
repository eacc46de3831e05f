//! Patch-level PHI masking for vision-language OCR.
//!
//! The pipeline: synthesize annotated documents ([`document`]), map PHI
//! boxes onto vision-encoder patch grids ([`grid`]), build per-hook masks
//! for a strategy ([`masking`]), run OCR through a backend ([`backend`]),
//! optionally redact the text ([`redact`]) and score leakage ([`eval`]).
//! [`experiment`] drives whole sweeps.

pub mod backend;
pub mod document;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod grid;
pub mod masking;
pub mod redact;

pub use error::{Error, Result};
