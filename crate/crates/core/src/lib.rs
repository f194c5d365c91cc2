//! Nonlinear Granger-causality discovery for multivariate time series.

pub mod contemp;
pub mod data;
pub mod error;
pub mod gpsic;
pub mod graph;
pub mod kernels;
pub mod kgc;
pub mod kpcr;
pub mod linalg;
pub mod lsngc;
pub mod optim;
pub mod seeding;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
