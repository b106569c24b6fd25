//! Near-field FMCW synthetic aperture radar toolkit: waveform and geometry
//! description, beat-signal simulation, image reconstruction, range-Doppler
//! processing, multiband fusion, and image metrics.

pub mod config;
pub mod error;
pub mod doppler;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod multiband;
pub mod pipeline;
pub mod recon;
pub mod scene;
pub mod simulate;
pub mod waveform;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Speed of light (m/s).
pub const C: f64 = 299_792_458.0;
