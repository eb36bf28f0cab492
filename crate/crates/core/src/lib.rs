//! Selective-feedback personalization for wearable fall detection.
//!
//! A deployed detector raises alerts; the wearer confirms or rejects them.
//! Feedback is embedded by a siamese network, clustered with DBSCAN, and a
//! gradient-ranked fraction of each cluster is merged with the original data
//! before the detector is retrained.

pub mod detector;
pub mod embedder;
pub mod error;
pub mod features;
pub mod harness;
pub mod io;
pub mod nn;
pub mod partition;
pub mod persist;
pub mod seeds;
pub mod selector;
pub mod simfeed;
pub mod window;

pub use error::{Error, Result};
pub use window::{AccelWindow, Dataset, FeedbackSample, Label, Provenance, Source, Verdict, WindowKey, WindowMeta};
