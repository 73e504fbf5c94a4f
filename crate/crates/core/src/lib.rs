//! Forecasting the future state of sensor-graph nodes that are never
//! observed.
//!
//! The crate contains a small reverse-mode differentiation engine
//! ([`tensor`]), graph and partition types ([`graph`]), an attention
//! message-passing layer ([`mpnn`]), the recurrent forecasting network
//! ([`model`]), the masked training and evaluation protocol ([`train`]),
//! comparison methods ([`baselines`]), dataset generation and ingestion
//! ([`data`]), and a seeded experiment runner ([`experiment`]).

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod model;
pub mod mpnn;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
