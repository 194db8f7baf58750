//! Long-range temporal dependency (LRTD) active learning for sequential
//! phase recognition.
//!
//! A recurrent clip encoder feeds a non-local block whose embedded-Gaussian
//! dependency matrix scores how strongly the frames of a clip depend on one
//! another. Clips with the weakest intra-clip dependency are sent for
//! annotation first.

pub mod alloop;
pub mod backbone;
pub mod datamodel;
pub mod error;
pub mod metrics;
pub mod nonlocal;
pub mod numkernel;
pub mod seed;
pub mod selector;

pub use error::{Error, Result};
