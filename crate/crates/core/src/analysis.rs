//! Fisher information, Cramér–Rao bounds, the relative error percentage and
//! Monte-Carlo metrics.
//!
//! Free parameters are `(α_1, …, α_K, t_1, …, t_K)`; the background weight
//! `α_0 = 1 − Σ α_k` is eliminated through the simplex constraint, so every
//! information matrix is `2K × 2K`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimate::{
    cf_table, cf_table_derivatives, covariance_from_table, regularize, stacked_at,
};
use crate::model::{pmf_raw, shifted_irf, shifted_irf_derivative, ImpulseResponse, ModelParams};
use crate::sketch::{FrequencySet, Scheme};

/// Diagonal loading used when inverting sketch covariances.
pub const COVARIANCE_EPS: f64 = 1e-8;

const P_FLOOR: f64 = 1e-14;
const D_FLOOR: f64 = 1e-6;

/// Pmf and its derivatives in the free parameters.
fn pmf_jacobian(params: &ModelParams, irf: &ImpulseResponse) -> (Vec<f64>, Vec<Vec<f64>>) {
    let t = irf.len();
    let k = params.k();
    let p = pmf_raw(params, irf);
    let mut d = vec![vec![0.0; t]; 2 * k];
    for (i, &depth) in params.depths().iter().enumerate() {
        let a = params.alphas()[i + 1];
        for (dst, v) in d[i].iter_mut().zip(shifted_irf(irf, depth)) {
            *dst = v - 1.0 / t as f64;
        }
        for (dst, v) in d[k + i].iter_mut().zip(shifted_irf_derivative(irf, depth)) {
            *dst = a * v;
        }
    }
    (p, d)
}

/// Multinomial information `n Σ_c ∇P_c ∇P_cᵀ / P_c` over cells.
fn multinomial_fim(p: &[f64], d: &[Vec<f64>], n: f64) -> Result<DMatrix<f64>> {
    let dim = d.len();
    let mut fim = DMatrix::zeros(dim, dim);
    for (c, &pc) in p.iter().enumerate() {
        let largest = d.iter().fold(0.0f64, |m, row| m.max(row[c].abs()));
        if pc <= P_FLOOR {
            if pc <= 0.0 && largest > D_FLOOR {
                return Err(Error::SingularModel(c));
            }
            if largest <= D_FLOOR {
                continue;
            }
        }
        for a in 0..dim {
            for b in a..dim {
                let v = d[a][c] * d[b][c] / pc;
                fim[(a, b)] += v;
                if a != b {
                    fim[(b, a)] += v;
                }
            }
        }
    }
    Ok(fim * n)
}

/// Fisher information of `n` full-resolution time-stamps, summed exactly
/// over the `T` bins.
pub fn fim_full(params: &ModelParams, irf: &ImpulseResponse, n: f64) -> Result<DMatrix<f64>> {
    let (p, d) = pmf_jacobian(params, irf);
    multinomial_fim(&p, &d, n)
}

/// Fisher information of `n` photons pooled into `m̃` coarse cells.
pub fn fim_coarse(
    params: &ModelParams,
    irf: &ImpulseResponse,
    m_tilde: usize,
    n: f64,
) -> Result<DMatrix<f64>> {
    let t = irf.len();
    if m_tilde == 0 || m_tilde > t {
        return Err(Error::invalid(format!("m_tilde = {m_tilde} outside 1..={t}")));
    }
    let delta = t.div_ceil(m_tilde);
    let (p, d) = pmf_jacobian(params, irf);
    let pool = |v: &[f64]| {
        let mut out = vec![0.0; m_tilde];
        for (x, &val) in v.iter().enumerate() {
            out[x / delta] += val;
        }
        out
    };
    let pc = pool(&p);
    let dc: Vec<Vec<f64>> = d.iter().map(|row| pool(row)).collect();
    multinomial_fim(&pc, &dc, n)
}

/// Stacked Jacobian `∂z_θ/∂θ` (`2m × 2K`).
pub fn sketch_jacobian(
    params: &ModelParams,
    irf: &ImpulseResponse,
    freqs: &FrequencySet,
) -> DMatrix<f64> {
    let d = cf_table_derivatives(params.alphas(), params.depths(), irf);
    let cols: Vec<DVector<f64>> = d
        .iter()
        .map(|dp| DVector::from_vec(stacked_at(dp, freqs.indices())))
        .collect();
    DMatrix::from_columns(&cols)
}

/// Fisher information of a sketch of `n` photons under the Gaussian
/// approximation: `n Jᵀ Σ_θ⁻¹ J`.
pub fn fim_sketch(
    params: &ModelParams,
    irf: &ImpulseResponse,
    freqs: &FrequencySet,
    n: f64,
) -> Result<DMatrix<f64>> {
    if freqs.bins() != irf.len() {
        return Err(Error::invalid("frequency set and IRF disagree on T"));
    }
    let psi = cf_table(params.alphas(), params.depths(), irf);
    let mut sigma = covariance_from_table(&psi, freqs.indices());
    regularize(&mut sigma, COVARIANCE_EPS);
    let chol = sigma.cholesky().ok_or(Error::NonIdentifiable)?;
    let j = sketch_jacobian(params, irf, freqs);
    let solved = chol.solve(&j);
    let fim = j.transpose() * solved * n;
    Ok((&fim + fim.transpose()) * 0.5)
}

fn inverse_diagonal(fim: &DMatrix<f64>) -> Result<DVector<f64>> {
    if fim.nrows() == 0 || fim.nrows() != fim.ncols() {
        return Err(Error::invalid("information matrix must be square and non-empty"));
    }
    let inv = fim.clone().cholesky().ok_or(Error::NonIdentifiable)?.inverse();
    let diag = inv.diagonal();
    if diag.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonIdentifiable);
    }
    Ok(diag)
}

/// `sqrt(tr 𝓘⁻¹)`: the Cramér–Rao RMSE over all free parameters.
pub fn crb_rmse(fim: &DMatrix<f64>) -> Result<f64> {
    Ok(inverse_diagonal(fim)?.sum().sqrt())
}

/// Cramér–Rao RMSE of the depths alone (the last `K` free parameters).
pub fn crb_depth_rmse(fim: &DMatrix<f64>) -> Result<f64> {
    let diag = inverse_diagonal(fim)?;
    let k = diag.len() / 2;
    Ok(diag.rows(k, diag.len() - k).sum().sqrt())
}

/// `100 · (rmse_sketch − rmse_full) / rmse_full`.
pub fn rep(params: &ModelParams, irf: &ImpulseResponse, freqs: &FrequencySet) -> Result<f64> {
    Ok(efficiency_report(params, irf, freqs)?.rep)
}

/// REP of coarse binning into `m̃` cells.
pub fn rep_coarse(params: &ModelParams, irf: &ImpulseResponse, m_tilde: usize) -> Result<f64> {
    let full = crb_rmse(&fim_full(params, irf, 1.0)?)?;
    let coarse = crb_rmse(&fim_coarse(params, irf, m_tilde, 1.0)?)?;
    Ok(100.0 * (coarse - full) / full)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyReport {
    /// Cramér–Rao RMSE from the full data (single photon).
    pub rmse_full: f64,
    /// Cramér–Rao RMSE from the sketch (single photon).
    pub rmse_sketch: f64,
    pub rep: f64,
    pub m: usize,
    pub scheme: Scheme,
}

pub fn efficiency_report(
    params: &ModelParams,
    irf: &ImpulseResponse,
    freqs: &FrequencySet,
) -> Result<EfficiencyReport> {
    let rmse_full = crb_rmse(&fim_full(params, irf, 1.0)?)?;
    let rmse_sketch = crb_rmse(&fim_sketch(params, irf, freqs, 1.0)?)?;
    Ok(EfficiencyReport {
        rmse_full,
        rmse_sketch,
        rep: 100.0 * (rmse_sketch - rmse_full) / rmse_full,
        m: freqs.len(),
        scheme: freqs.scheme(),
    })
}

/// `min(|a − b|, T − |a − b|)` after reducing both into `[0, T)`.
pub fn circular_distance(a: f64, b: f64, t: f64) -> f64 {
    let d = (a - b).rem_euclid(t);
    d.min(t - d)
}

/// Root mean squared error; `circular` uses [`circular_distance`] on a
/// window of `t` bins.
pub fn rmse(estimates: &[f64], truths: &[f64], t: f64, circular: bool) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} estimates for {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::invalid("no estimates"));
    }
    let sq: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(&e, &g)| {
            let d = if circular { circular_distance(e, g, t) } else { e - g };
            d * d
        })
        .sum();
    Ok((sq / estimates.len() as f64).sqrt())
}

/// Fraction of absolute errors not exceeding `tol` (NaN for an empty list).
pub fn detection_rate(errors: &[f64], tol: f64) -> f64 {
    errors.iter().filter(|&&e| e.abs() <= tol).count() as f64 / errors.len() as f64
}

/// `rmse_a / rmse_b`; below 1 means `a` is more accurate.
pub fn rmse_ratio(rmse_a: f64, rmse_b: f64) -> Result<f64> {
    if rmse_b <= 0.0 || !rmse_b.is_finite() {
        return Err(Error::invalid(format!("reference RMSE must be positive, got {rmse_b}")));
    }
    Ok(rmse_a / rmse_b)
}

/// Large-sample standard deviation (in bins) of the circular-mean depth
/// estimate from `n` photons, by the delta method on `arg z_1`.
pub fn circular_mean_asymptotic_sd(params: &ModelParams, irf: &ImpulseResponse, n: f64) -> f64 {
    let t = irf.len();
    let psi = cf_table(params.alphas(), params.depths(), irf);
    let sigma = covariance_from_table(&psi, &[1]);
    let (c, s) = (psi[1].re, psi[1].im);
    let r2 = c * c + s * s;
    let g = DVector::from_vec(vec![-s / r2, c / r2]);
    let var = g.dot(&(&sigma * &g)) / n;
    t as f64 / (2.0 * PI) * var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gaussian_irf;
    use crate::sketch::truncated_frequencies;

    #[test]
    fn crb_of_diagonal() {
        let f = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 25.0]));
        assert!((crb_rmse(&f).unwrap() - 0.29f64.sqrt()).abs() < 1e-15);
        assert!(crb_rmse(&DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn metric_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0], 10.0, true).unwrap(), 0.0);
        assert!((rmse(&[0.0], &[999.0], 1000.0, true).unwrap() - 1.0).abs() < 1e-12);
        assert!((rmse(&[1.0, 3.0], &[2.0, 4.0], 10.0, false).unwrap() - 1.0).abs() < 1e-15);
        assert!(rmse(&[1.0], &[], 10.0, false).is_err());
        assert_eq!(detection_rate(&[0.0, 0.0], 0.0), 1.0);
        assert!((detection_rate(&[1.0, 5.0, 20.0], 10.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rmse_ratio(3.0, 3.0).unwrap(), 1.0);
        assert_eq!(rmse_ratio(2.0, 4.0).unwrap(), 0.5);
        assert!(rmse_ratio(1.0, 0.0).is_err());
    }

    #[test]
    fn fim_scales_with_n() {
        let irf = gaussian_irf(5.0, 250).unwrap();
        let p = ModelParams::new(vec![0.1, 0.9], vec![180.0]).unwrap();
        let a = fim_full(&p, &irf, 100.0).unwrap();
        let b = fim_full(&p, &irf, 200.0).unwrap();
        assert!((b - a * 2.0).abs().max() < 1e-9);
        let f = truncated_frequencies(250, 10).unwrap();
        let r1 = crb_rmse(&fim_sketch(&p, &irf, &f, 100.0).unwrap()).unwrap();
        let r4 = crb_rmse(&fim_sketch(&p, &irf, &f, 400.0).unwrap()).unwrap();
        assert!((r1 / r4 - 2.0).abs() < 1e-9);
    }
}
