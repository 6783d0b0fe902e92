//! Shear-wave-speed (SWS) map reconstruction from 3-D ultrasound
//! displacement volumes.
//!
//! The pipeline takes a displacement volume `u(x, z, n)` (lateral, axial,
//! time), optionally interpolates it laterally, denoises each time-lateral
//! plane by isolating the traveling wavefront, and then estimates a 2-D
//! speed map by minimizing a Gaussian-neighborhood-coupled loss over the
//! discrete signal-group shift. Time-domain (normalized cross-correlation)
//! and phase-domain (magnitude-weighted phase-alignment MSE) losses are
//! provided, plus a weighted combination of the two.
//!
//! Supporting pieces: portable volume/map I/O ([`volume`]), a synthetic
//! phantom generator that doubles as the test oracle ([`phantom`]),
//! reference time-of-flight and Fourier-domain estimators ([`baselines`]),
//! and image-quality metrics ([`metrics`]).

pub mod baselines;
pub mod error;
pub(crate) mod fft;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod volume;

pub mod estimators;

pub use error::{Result, SwsError};
