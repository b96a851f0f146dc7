//! Decide, per preference instance, whether the label should come from a
//! human annotator or a language model.
//!
//! Instances are described by tags. Candidate routings are sampled by adding
//! whole tag groups to the human set, represented as per-tag counts, and a
//! regression model fitted on measured candidate performance predicts which
//! routing yields the best downstream reward model.

pub mod analysis;
pub mod candidates;
pub mod error;
pub mod fingerprint;
pub mod io;
pub mod model;
pub mod oracle;
pub mod ppm;
pub mod routing;
pub mod seed;
pub mod tagging;

pub use error::{Error, ErrorClass, Result};
