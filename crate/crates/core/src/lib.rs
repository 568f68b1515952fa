//! Sparse integer risk scores for binary clinical outcomes.
//!
//! A model assigns integer points to a handful of encoded features and maps
//! the point total to a probability through a logistic link with an integer
//! bias. The crate covers the whole path from a feature registry and an
//! entity source to stored datasets, fitted models, scoring tables and
//! threshold validation.

pub mod dataset;
pub mod error;
pub mod learner;
pub mod registry;
pub mod source;
pub mod store;
pub mod table;
pub mod validation;
pub mod workflow;

pub use dataset::{build_dataset, DataSet, ProjectConfig};
pub use error::{Error, ErrorDocument, ErrorKind, Result};
pub use learner::{FitConfig, FitControl, RiskModel};
pub use registry::{FeatureRegistry, FeatureSpec};
pub use store::{ProjectId, ProjectStore};
