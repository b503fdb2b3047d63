//! Entropy-based classification of per-URL retweeting activity.
//!
//! Events `(url, user, timestamp)` are grouped into one [`Trace`] per URL.
//! Each trace is summarised by two Shannon entropies: the entropy of the
//! gaps between successive retweets and the entropy of the per-user
//! retweet counts. Those two numbers feed k-NN, an RBF-kernel SVM trained
//! with SMO, and a diagonal Gaussian mixture fitted by EM.
//!
//! ```
//! use retrace::{build_traces, featurize, Event};
//!
//! let events = vec![
//!     Event::new("u1", "a", 0).unwrap(),
//!     Event::new("u1", "b", 60).unwrap(),
//!     Event::new("u1", "c", 180).unwrap(),
//! ];
//! let traces = build_traces(events);
//! let fv = featurize(&traces["u1"]).unwrap();
//! assert_eq!(fv.h_time, 1.0);
//! ```

// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod cli;
pub mod cluster;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod model;
pub mod synth;
pub mod trace;

pub use classify::{KnnModel, Prediction, Standardizer, SvmModel, SvmParams};
pub use cluster::GmmModel;
pub use entropy::{featurize, FeatureVector, IntervalDistribution, UserDistribution};
pub use error::{Error, Result};
pub use trace::{build_traces, filter_popular, parse_events, ActivityClass, Event, EventFormat, Trace};

/// A point in the standardized (or raw) two-dimensional entropy plane:
/// `[h_time, h_user]`.
pub type Point = [f64; 2];

/// Dimensionality of the feature space.
pub const DIM: usize = 2;

pub(crate) const FEATURE_NAMES: [&str; DIM] = ["h_time", "h_user"];
