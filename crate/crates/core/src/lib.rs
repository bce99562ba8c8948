//! Pose estimation for cuboid bins in organized 3D scans.
//!
//! The crate covers the scan and pose data model, an edge-based analytic
//! fitter, ICP refinement against a sampled bin model, the two-vector
//! rotation parameterization with its symmetry handling and losses, error
//! metrics, and a ray-casting scan generator for synthetic test scenes.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod bin_spec;
pub mod cli;
pub mod icp;
pub mod kv;
pub mod metrics;
pub mod pose;
pub mod rotparam;
pub mod scan;
pub mod synth;

pub use bin_spec::BinSpec;
pub use pose::Pose;
pub use scan::StructuredScan;
