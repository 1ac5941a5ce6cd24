//! Action-based Lagrangian descriptors for Hamiltonian and noise-forced
//! flows.

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bench;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod integrate;
pub mod ld;
pub mod sections;

pub use analysis::{extract_features, extract_singular_features, FeatureMeasure, FeatureSet};
pub use dynamics::{PhaseState, SystemSpec};
pub use error::{Error, Result};
pub use integrate::{Method, StopBox};
pub use ld::{ld_field, stochastic_ld_field, FieldTriplet, LdParams, ScalarField};
pub use sections::{initial_conditions, Axis, SectionSpec};
