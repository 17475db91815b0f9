//! Similar-vs-adversarial dual-generator visual explanations.
//!
//! A frozen classifier is explained by two jointly trained image-to-image
//! generators: one keeps the classifier's decision, the other flips it,
//! and the per-pixel difference of their outputs is the explanation map.
//! The crate bundles a synthetic benchmark with box ground truth and the
//! weak-localization metrics used to score the maps.

pub mod cli;
pub mod config;
pub mod error;
pub mod explain;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use explain::{ExplanationMap, Method, Provenance};
pub use losses::{LossBreakdown, LossWeights};
pub use nn::{ClassifierNet, GenMode, GeneratorPair};
pub use synth::{Dataset, DatasetSpec, Sample};
pub use tensor::{Image, Shape, Tensor};
