//! Compressive lidar depth estimation from sketches of photon time-stamps.
//!
//! Each pixel's time-stamps are summarised by a fixed-size vector of
//! empirical characteristic-function samples; depths and intensities are
//! then recovered from that vector alone.

pub mod analysis;
pub mod error;
pub mod estimate;
pub mod io;
pub mod model;
pub mod simulate;
pub mod sketch;

pub use error::{Error, Result};
pub use model::{gaussian_irf, model_cf, model_pmf, ImpulseResponse, ModelParams};
pub use simulate::{sample_photons, simulate_cube, LidarCube, PhotonCount, PhotonStream};
pub use sketch::{
    random_frequencies, sketch_stamps, truncated_frequencies, FrequencySet, Scheme, Sketch,
    SketchState,
};
