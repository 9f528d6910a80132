use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{wrap, ImpulseResponse};
use crate::sketch::Sketch;

const PHASE_FLOOR: f64 = 1e-12;

/// Trigonometric-mean depth `(T/2π)·arg z_1` mapped into `[0, T)`.
///
/// Needs the fundamental index `j = 1` in the sketch. Pure background gives
/// `z_1 ≈ 0`, where the phase is undefined.
pub fn circular_mean(sketch: &Sketch) -> Result<f64> {
    let z1 = sketch.at(1).ok_or(Error::MissingFrequency(1))?;
    if z1.norm() < PHASE_FLOOR {
        return Err(Error::UndefinedPhase(z1.norm()));
    }
    let t = sketch.freqs().bins() as f64;
    Ok(wrap(t * z1.arg() / (2.0 * PI), t))
}

/// [`circular_mean`] with the IRF phase `arg ĥ_1` removed, so an IRF that is
/// not centred on bin 0 does not bias the estimate.
pub fn circular_mean_irf(sketch: &Sketch, irf: &ImpulseResponse) -> Result<f64> {
    let t = sketch.freqs().bins();
    if irf.len() != t {
        return Err(Error::invalid(format!("IRF has {} bins, sketch has T = {t}", irf.len())));
    }
    let raw = circular_mean(sketch)?;
    let h1 = irf.h_hat()[1];
    let offset = if h1.norm() > 0.0 {
        t as f64 * h1.arg() / (2.0 * PI)
    } else {
        0.0
    };
    Ok(wrap(raw - offset, t as f64))
}
