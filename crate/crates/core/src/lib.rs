//! Desk-scale laboratory for weight-space non-identifiability in
//! one-hidden-layer ReLU networks.

pub mod analysis;
pub mod error;
pub mod relu_net;
pub mod rng;
pub mod runio;
pub mod samplers;
pub mod split_diag;
pub mod symmetry_diag;
pub mod synth;
pub mod theory_oracle;

pub use error::{Error, Result};
pub use relu_net::{NetworkParams, ObjectiveConfig};
pub use samplers::{SampleTrace, SamplerConfig, SamplerKind};
pub use split_diag::AssignmentMap;
pub use synth::{Dataset, GroundTruth};
