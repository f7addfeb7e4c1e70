//! Reward learning from heterogeneous human feedback.
//!
//! Raw interaction records ([`feedback::Measurement`]) are translated into
//! typed [`feedback::FeedbackInstance`]s, a joint reward model ensemble is fitted
//! from them, a query engine decides what to ask next, and a tabular agent
//! optimizes the learned reward. Simulated annotators answer queries from a
//! hidden ground-truth reward so every stage can be checked without people.

pub mod agent;
pub mod annotator;
pub mod error;
pub mod feedback;
pub mod goldens;
pub mod gridworld;
pub mod metrics;
pub mod query;
pub mod reward;
pub mod session;
pub mod store;
pub mod translator;

pub use error::{Error, Result};
