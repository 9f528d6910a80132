//! Covariance of the real feature vector `[cos ω_j x; sin ω_j x]` and the
//! model characteristic function tabulated over the whole index grid.
//!
//! Sums and differences of orthogonal frequencies stay on the grid (indices
//! add modulo `T`), so every second moment is a single CF lookup.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::model::{shift_factor, ImpulseResponse, ModelParams};
use crate::sketch::FrequencySet;

/// `Ψ(ω_j)` for `j = 0..T` from raw weights (`alphas[0]` is the background).
pub(crate) fn cf_table(alphas: &[f64], depths: &[f64], irf: &ImpulseResponse) -> Vec<Complex64> {
    let all: Vec<usize> = (0..irf.len()).collect();
    cf_table_at(alphas, depths, irf, &all)
}

/// Indices a covariance over `idx` reads: the set itself, zero, and all
/// pairwise sums and differences modulo `T`.
pub(crate) fn table_support(idx: &[usize], t: usize) -> Vec<usize> {
    let mut used = vec![false; t];
    used[0] = true;
    for &a in idx {
        used[a % t] = true;
        for &b in idx {
            used[(a + b) % t] = true;
            used[(a + t - b % t) % t] = true;
        }
    }
    (0..t).filter(|&j| used[j]).collect()
}

/// [`cf_table`] filled only at `support`; other entries are zero.
pub(crate) fn cf_table_at(
    alphas: &[f64],
    depths: &[f64],
    irf: &ImpulseResponse,
    support: &[usize],
) -> Vec<Complex64> {
    let t = irf.len();
    let h = irf.h_hat();
    let mut psi = vec![Complex64::new(0.0, 0.0); t];
    psi[0] = Complex64::new(alphas[0], 0.0);
    for (a, &d) in alphas[1..].iter().zip(depths) {
        for &j in support {
            psi[j] += *a * h[j] * shift_factor(j, t, d).0;
        }
    }
    psi
}

/// Derivatives of the CF table with respect to the free parameters
/// `(α_1, …, α_K, t_1, …, t_K)`, with `α_0 = 1 − Σ α_k` eliminated.
pub(crate) fn cf_table_derivatives(
    alphas: &[f64],
    depths: &[f64],
    irf: &ImpulseResponse,
) -> Vec<Vec<Complex64>> {
    let all: Vec<usize> = (0..irf.len()).collect();
    cf_table_derivatives_at(alphas, depths, irf, &all)
}

/// [`cf_table_derivatives`] filled only at `support`.
pub(crate) fn cf_table_derivatives_at(
    alphas: &[f64],
    depths: &[f64],
    irf: &ImpulseResponse,
    support: &[usize],
) -> Vec<Vec<Complex64>> {
    let t = irf.len();
    let k = depths.len();
    let h = irf.h_hat();
    let mut out = vec![vec![Complex64::new(0.0, 0.0); t]; 2 * k];
    for (i, &d) in depths.iter().enumerate() {
        for &j in support {
            let (f, df) = shift_factor(j, t, d);
            out[i][j] = h[j] * f;
            out[k + i][j] = alphas[i + 1] * h[j] * df;
        }
        out[i][0] -= 1.0;
    }
    out
}

/// Stacked model sketch `[Re Ψ(ω_j); Im Ψ(ω_j)]` over `idx`.
pub(crate) fn stacked_at(psi: &[Complex64], idx: &[usize]) -> Vec<f64> {
    idx.iter()
        .map(|&j| psi[j].re)
        .chain(idx.iter().map(|&j| psi[j].im))
        .collect()
}

/// Second moments `E[u_a u_b]` of the stacked features, taken from a CF
/// table (or its derivative; the map is linear).
fn second_moments(psi: &[Complex64], idx: &[usize]) -> DMatrix<f64> {
    let t = psi.len();
    let m = idx.len();
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    for (p, &a) in idx.iter().enumerate() {
        for (q, &b) in idx.iter().enumerate().skip(p) {
            let sum = psi[(a + b) % t];
            let diff = psi[(a + t - b) % t];
            let cc = 0.5 * (diff.re + sum.re);
            let ss = 0.5 * (diff.re - sum.re);
            out[(p, q)] = cc;
            out[(q, p)] = cc;
            out[(m + p, m + q)] = ss;
            out[(m + q, m + p)] = ss;
            // E[cos a·sin b] = ½[sin(a+b) − sin(a−b)], and the mirrored pair
            let cs = 0.5 * (sum.im - diff.im);
            let sc = 0.5 * (sum.im + diff.im);
            out[(p, m + q)] = cs;
            out[(m + q, p)] = cs;
            out[(q, m + p)] = sc;
            out[(m + p, q)] = sc;
        }
    }
    out
}

/// Covariance of the stacked features from a CF table.
pub(crate) fn covariance_from_table(psi: &[Complex64], idx: &[usize]) -> DMatrix<f64> {
    let mean = DMatrix::from_column_slice(2 * idx.len(), 1, &stacked_at(psi, idx));
    second_moments(psi, idx) - &mean * mean.transpose()
}

/// Directional derivative of the covariance along a CF-table derivative.
pub(crate) fn covariance_derivative(
    psi: &[Complex64],
    dpsi: &[Complex64],
    idx: &[usize],
) -> DMatrix<f64> {
    let mean = DMatrix::from_column_slice(2 * idx.len(), 1, &stacked_at(psi, idx));
    let dmean = DMatrix::from_column_slice(2 * idx.len(), 1, &stacked_at(dpsi, idx));
    let outer = &dmean * mean.transpose();
    second_moments(dpsi, idx) - &outer - outer.transpose()
}

/// Covariance matrix (`2m × 2m`) of the stacked real feature vector
/// `[cos ω_j x; sin ω_j x]` under the model.
pub fn covariance(params: &ModelParams, irf: &ImpulseResponse, freqs: &FrequencySet) -> DMatrix<f64> {
    let psi = cf_table(params.alphas(), params.depths(), irf);
    covariance_from_table(&psi, freqs.indices())
}

/// Adds `eps · (tr Σ / 2m)` to the diagonal.
pub(crate) fn regularize(sigma: &mut DMatrix<f64>, eps: f64) -> f64 {
    let dim = sigma.nrows() as f64;
    let shift = eps * sigma.trace() / dim;
    for i in 0..sigma.nrows() {
        sigma[(i, i)] += shift;
    }
    shift
}
