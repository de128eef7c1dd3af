//! Estimating 24-2 visual fields from peripapillary RNFL thickness with
//! recursive weight-shared 1D convolutional networks.
//!
//! The crate covers the whole pipeline: a small reverse-mode engine
//! ([`tensor`]), the network families ([`models`]), the weighted loss
//! ([`objective`]), exam files and synthetic data ([`dataio`]), training
//! and grid search ([`trainer`]), metrics ([`evalkit`]), the routed
//! ensemble ([`ensemble`]) and model files ([`checkpoint`]).

pub mod checkpoint;
pub mod dataio;
pub mod ensemble;
pub mod error;
pub mod evalkit;
pub mod grid;
pub mod models;
pub mod objective;
pub mod tensor;
pub mod trainer;

pub use error::{Error, ErrorCategory, Result};
