//! Contextual visual similarity on precomputed feature vectors.
//!
//! A triplet `(query, positive, negative)` defines a context: the positive
//! should look like the query and both should look unlike the negative. A
//! diagonal reweighting of the feature space is learned so that the context
//! holds, and the learned weights drive three applications:
//!
//! - [`search`]: attribute-specific retrieval from example images,
//! - [`analogy`]: answering `A : B :: C : ?` questions,
//! - [`discovery`]: clustering per-triplet weights into attributes.
//!
//! Heavy loops (independent learner runs, distance matrices) go through
//! [`par`], which uses rayon when the `parallel` feature is on.

pub mod analogy;
pub mod discovery;
pub mod error;
pub mod learner;
pub mod loss;
pub mod par;
pub mod rng;
pub mod search;
pub mod store;
pub mod synthgen;
pub mod types;

pub use error::{Error, Result};
pub use learner::{learn, LearnResult};
pub use loss::{gradient, reg_loss, score, total_loss, triplet_loss, LossReport, LossVariant};
pub use store::{FeatureStore, Format, Label};
pub use types::{reweighted_sqdist, HyperParams, Triplet, WeightVector};
