//! Two-timescale RIS and precoder design for near-field UE tracking with
//! an extended Kalman filter.
//!
//! The crate is organized bottom-up: [`geometry`] and [`channel`] synthesize
//! the propagation environment, [`precoding`] builds pilots and
//! block-diagonalization beamformers, [`tracker`] implements the
//! phase-gradient EKF, [`ris_opt`] and [`power`] implement the RIS profile
//! and power splitting designs, [`scheduler`] runs complete episodes, and
//! [`metrics`] / [`campaign`] turn episodes into statistics and files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod campaign;
pub mod channel;
pub mod config;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod power;
pub mod precoding;
pub mod ris_opt;
pub mod scenario;
pub mod scheduler;
pub mod tracker;

use nalgebra::{DMatrix, DVector};

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
