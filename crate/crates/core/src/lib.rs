//! Slow-neutron diffraction by holographic sinusoidal phase gratings.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: grating, beam and material quantities plus closed-form kinematics.
//! - [`cwt`]: multiwave coupled-wave solver with two-wave and thin-grating limits.
//! - [`instrument`]: spectral/divergence averaging, rocking scans, detector reduction.
//! - [`analysis`]: rocking-curve fitting, three-port design search, Pendellösung scans.
//! - [`zernike`]: geometry and interference of a three-path interferometer.
//! - [`io`]: the CSV and plain-text file formats.
//!
//! All lengths are in meters and all angles in radians.

pub mod analysis;
pub mod cwt;
pub mod error;
pub mod instrument;
pub mod io;
pub mod model;
pub mod special;
pub mod zernike;

pub use error::{Error, Result};
