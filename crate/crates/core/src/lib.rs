//! Zero-shot detection of machine-generated text from the local curvature of
//! a model's log-probability function, plus the baselines, metrics and
//! experiment harness around it.

pub mod backend;
pub mod curvature;
pub mod detector;
pub mod harness;
pub mod metrics;
pub mod passage;
pub mod perturbation;
pub mod seed;
pub mod synthetic;

pub use detector::{DiscrepancyEstimate, Method};
pub use passage::{Passage, ScoredPassage, TokenScoreRecord};
pub use perturbation::{MaskSpec, MaskedPassage};
