//! Detection of topology-aware attention heads in causal attention maps over
//! serialized graphs, and redistribution of attention-sink mass toward the
//! structural tokens those heads already favor.
//!
//! * [`graphtext`]: graphs, edge-tuple serialization, the token-level mask
//! * [`attnops`]: attention tensors, budget breakdown, sink sharpening
//! * [`spectral`]: Laplacian, Dirichlet energy and the sink-mixing checks
//! * [`headscan`]: entropy filter, concentration score, Otsu selection
//! * [`synthmodel`]: seeded generator with planted heads, reconstruction probe
//! * [`calib`]: gamma calibration
//! * [`format`]: `SLSH` tensor files, CSV and PGM export

pub mod attnops;
pub mod calib;
pub mod error;
pub mod format;
pub mod graphtext;
pub mod headscan;
pub mod spectral;
pub mod synthmodel;

pub use error::{Error, Result};
