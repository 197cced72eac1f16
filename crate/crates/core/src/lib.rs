//! Choosing which training points to augment.
//!
//! Points are scored by training loss, leave-one-out influence, or SVM
//! margin; a selection policy turns the scores into an augmentation subset;
//! the harness runs the round-based augment, retrain and evaluate loop and
//! reports accuracy-vs-budget curves.
//!
//! Module map:
//! * [`dataio`]: images, IDX files, feature CSVs, binary tasks
//! * [`transforms`]: translate / rotate / crop-zoom augmentation families
//! * [`linmodel`]: logistic regression (Newton) and linear SVM
//! * [`influence`]: Hessian factorization and leave-one-out influence
//! * [`selection`]: sampling policies, k-means strata, k-DPP
//! * [`harness`]: experiment loop and metrics

pub mod dataio;
pub mod error;
pub mod harness;
pub mod influence;
pub mod linalg;
pub mod linmodel;
pub mod seeds;
pub mod selection;
pub mod transforms;

pub use dataio::{Dataset, Label, LabeledExample, RawImage};
pub use error::{Error, Result};
pub use influence::{HessianFactor, ScoreMetric, ScoreVector};
pub use linmodel::{ModelParams, SvmFit, TrainConfig};
pub use transforms::{AugmentationFamily, TransformSpec};
