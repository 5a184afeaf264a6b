//! Task-conditioned Transformer dialogue state tracking.
//!
//! A small from-scratch encoder conditioned on task tokens (`[INTENT]`,
//! `[SLOT-<key>]`) feeding slot-gate, span, intent and categorical heads,
//! together with the dialogue-state accumulation and evaluation metrics.

pub mod api;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod heads;
pub mod model;
pub mod numeric;
pub mod session;
pub mod tokenizer;
pub mod tracker;
pub mod train;

pub use error::{Error, Result};
