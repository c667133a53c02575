//! Causal concept graph pipeline over activation matrices.
//!
//! The crate is organised around the three pipeline stages plus the
//! supporting machinery needed to validate them without any model inference:
//!
//! - [`sae`] — TopK sparse autoencoder training and application, mapping
//!   activation rows to exactly-k-sparse nonnegative concept codes.
//! - [`graph`] — sparse weighted DAG learning over selected concepts by
//!   acyclicity-constrained optimisation of a linear SEM.
//! - [`cfs`] — do-style concept ablations and the causal fidelity score
//!   comparing graph-guided target selection against baselines.
//! - [`stats`] — the paired significance-testing protocol (one-sided t,
//!   Bonferroni, Cohen's d, percentile bootstrap) and auxiliary analyses.
//! - [`synth`] — planted-ground-truth generators and oracle metrics so every
//!   stage is checkable end to end.
//! - [`io`] — binary/CSV/JSON file formats shared with the CLI.

pub mod cfs;
pub mod error;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod sae;
pub mod stats;
pub mod synth;
pub mod types;

pub use error::{CcgError, Result};
pub use types::{ActivationMatrix, ConceptMatrix};
