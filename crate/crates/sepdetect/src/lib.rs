//! Density-based detection of adversarial examples, built around a compact
//! feed-forward classifier whose last hidden layer is trained to keep class
//! means apart.
//!
//! The pipeline: generate or ingest a labeled dataset ([`data`]), train a
//! classifier with a combined cross-entropy + between-class-separation loss
//! ([`model`], [`objective`], [`trainer`]), craft FGSM adversarial examples
//! against it ([`attack`]), fit per-class kernel density estimates on the
//! last-hidden-layer features and calibrate a flagging threshold
//! ([`detector`]), and score the whole thing ([`evaluation`]).

pub mod attack;
pub mod data;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod hashing;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};
