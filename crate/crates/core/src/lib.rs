//! Continuous infant affect recognition from face and body landmark streams.
//!
//! The pipeline runs:
//!
//! 1. [`ingest`]: parse frame and label files, bin them at 0.25 s
//!    ([`binning`]) into [`domain::Session`]s.
//! 2. [`preprocess`]: normalize landmarks and derive four feature groups
//!    (face distances, action units, body distances, body speeds).
//! 3. [`windows`]: aggregate every feature over a short and a long window
//!    ending at each bin and flag windows with enough confident bins.
//! 4. [`select`]: rank aggregates with Welch's t-test and keep the top 12 of
//!    each group, fit per training fold.
//! 5. [`model`]: grouped-branch network with joint or late fusion.
//! 6. [`eval`]: subject-wise cross-validation, AUC, and accuracy curves over
//!    time since true and predicted state transitions.
//!
//! [`synth`] generates seeded synthetic sessions in the ingest file formats.

pub mod binning;
pub mod domain;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod select;
pub mod synth;
pub mod windows;

pub use domain::{map_label, AffectLabel, Bin, FrameRecord, Modality, Point, Session};
pub use error::{Error, Result};
pub use preprocess::{ByGroup, FeatureGroupId, SessionFeatures};
pub use windows::{WindowConfig, WindowedSample};
