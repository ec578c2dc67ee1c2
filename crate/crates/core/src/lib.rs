//! Anomaly detection on human pose tracks by predicting poses forward and
//! backward in time.
//!
//! A future model and a past model each predict upcoming (respectively
//! preceding) poses at timescales 3, 5, 13 and 25 frames from intermediate
//! layers of one temporal conv stack. At test time the per-frame prediction
//! error of each (direction, timescale) pair is maxed over the people in the
//! frame, the pairs are averaged into an anomaly score, and scores are
//! evaluated with frame-level ROC-AUC.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod nn;
pub mod score;
pub mod seed;
pub mod synth;
pub mod train;
pub mod trajectory;

pub use error::{Error, Result};
