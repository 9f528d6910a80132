//! Sketched maximum-likelihood estimation.
//!
//! The objective is the Gaussian approximation of the sketch likelihood,
//!
//! ```text
//! L(θ) = (m/2)·log det Σ_θ + n·(z_n − z_θ)ᵀ Σ_θ⁻¹ (z_n − z_θ)
//! ```
//!
//! on the stacked real vectors (length `2m`). Under the continuous-updating
//! weighting `Σ_θ` is re-evaluated at every candidate `θ`.
//!
//! The optimizer runs on unconstrained coordinates: `K` logits (the
//! background logit is pinned to 0, weights are their softmax) and `K`
//! angles `φ_k` with `t_k = T·φ_k/2π mod T`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::circular::circular_mean_irf;
use super::covariance::{
    cf_table_at, cf_table_derivatives_at, covariance_derivative, covariance_from_table, regularize,
    stacked_at, table_support,
};
use super::optim::{bfgs, BfgsOptions};
use super::{FitResult, InitMethod};
use crate::error::{Error, Result};
use crate::model::{wrap, ImpulseResponse, ModelParams};
use crate::sketch::Sketch;

/// Weighting matrix used by the moment-matching objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// `Σ_θ` recomputed at every evaluation (continuous updating).
    #[default]
    Cue,
    /// Least squares, `Σ = I`.
    Identity,
    /// `Σ` evaluated once at the starting point and held fixed.
    FixedSigma,
    /// Least-squares fit, then a fit with `Σ` fixed at that estimate.
    TwoStep,
}

/// How the starting point is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitStrategy {
    /// For `K = 1` the circular mean and a grid resolving the highest
    /// sketched frequency compete on loss; grid search otherwise.
    #[default]
    Auto,
    /// Grid search for every `K`.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    pub grad_tol: f64,
    /// Relative diagonal loading of the covariance.
    pub eps: f64,
    pub weighting: Weighting,
    pub init: InitStrategy,
    /// Points per axis of the initialization grid.
    pub grid_size: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 500,
            f_tol: 1e-10,
            x_tol: 1e-8,
            grad_tol: 1e-9,
            eps: 1e-8,
            weighting: Weighting::Cue,
            init: InitStrategy::Auto,
            grid_size: 16,
        }
    }
}

const GRID_BACKGROUND: f64 = 0.2;
const MIN_WEIGHT: f64 = 1e-6;

enum Weight {
    Cue,
    Identity,
    /// Inverse of a fixed covariance.
    Fixed(DMatrix<f64>),
}

struct Objective<'a> {
    irf: &'a ImpulseResponse,
    idx: Vec<usize>,
    support: Vec<usize>,
    z: DVector<f64>,
    n: f64,
    eps: f64,
    weight: Weight,
}

impl<'a> Objective<'a> {
    fn new(sketch: &Sketch, irf: &'a ImpulseResponse, eps: f64) -> Result<Self> {
        if irf.len() != sketch.freqs().bins() {
            return Err(Error::invalid(format!(
                "IRF has {} bins, sketch has T = {}",
                irf.len(),
                sketch.freqs().bins()
            )));
        }
        let idx = sketch.freqs().indices().to_vec();
        Ok(Objective {
            irf,
            support: table_support(&idx, irf.len()),
            idx,
            z: DVector::from_vec(sketch.stacked()),
            n: sketch.count() as f64,
            eps,
            weight: Weight::Cue,
        })
    }

    fn regularized_covariance(&self, alphas: &[f64], depths: &[f64]) -> DMatrix<f64> {
        let psi = cf_table_at(alphas, depths, self.irf, &self.support);
        let mut s = covariance_from_table(&psi, &self.idx);
        regularize(&mut s, self.eps);
        s
    }

    fn fix_weight(&mut self, alphas: &[f64], depths: &[f64]) -> Result<()> {
        let s = self.regularized_covariance(alphas, depths);
        let inv = s.cholesky().ok_or(Error::NonFiniteLoss)?.inverse();
        self.weight = Weight::Fixed(inv);
        Ok(())
    }

    /// Loss and, if requested, its gradient in `(α_1..α_K, t_1..t_K)`.
    fn eval(&self, alphas: &[f64], depths: &[f64], want_grad: bool) -> Result<(f64, Vec<f64>)> {
        let m = self.idx.len();
        let psi = cf_table_at(alphas, depths, self.irf, &self.support);
        let r = &self.z - DVector::from_vec(stacked_at(&psi, &self.idx));
        let dpsi = if want_grad {
            cf_table_derivatives_at(alphas, depths, self.irf, &self.support)
        } else {
            Vec::new()
        };
        let dz = |p: usize| DVector::from_vec(stacked_at(&dpsi[p], &self.idx));

        let (loss, grad) = match &self.weight {
            Weight::Identity => {
                let loss = self.n * r.dot(&r);
                let grad = (0..dpsi.len()).map(|p| -2.0 * self.n * r.dot(&dz(p))).collect();
                (loss, grad)
            }
            Weight::Fixed(w) => {
                let wr = w * &r;
                let loss = self.n * r.dot(&wr);
                let grad = (0..dpsi.len()).map(|p| -2.0 * self.n * wr.dot(&dz(p))).collect();
                (loss, grad)
            }
            Weight::Cue => {
                let mut s = covariance_from_table(&psi, &self.idx);
                regularize(&mut s, self.eps);
                let chol = s.cholesky().ok_or(Error::NonFiniteLoss)?;
                let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                let a = chol.solve(&r);
                let loss = 0.5 * m as f64 * log_det + self.n * r.dot(&a);
                let mut grad = Vec::with_capacity(dpsi.len());
                if want_grad {
                    let s_inv = chol.inverse();
                    for (p, d) in dpsi.iter().enumerate() {
                        let mut ds = covariance_derivative(&psi, d, &self.idx);
                        regularize(&mut ds, self.eps);
                        let tr = s_inv.component_mul(&ds).sum();
                        let quad = a.dot(&(&ds * &a));
                        grad.push(0.5 * m as f64 * tr - self.n * quad - 2.0 * self.n * a.dot(&dz(p)));
                    }
                }
                (loss, grad)
            }
        };
        if !loss.is_finite() || grad.iter().any(|g: &f64| !g.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
        Ok((loss, grad))
    }
}

/// SMLE objective at `theta` (continuous-updating weighting).
pub fn smle_loss(theta: &ModelParams, sketch: &Sketch, irf: &ImpulseResponse, eps: f64) -> Result<f64> {
    let obj = Objective::new(sketch, irf, eps)?;
    Ok(obj.eval(theta.alphas(), theta.depths(), false)?.0)
}

/// SMLE objective and its gradient in the free parameters
/// `(α_1, …, α_K, t_1, …, t_K)`; `α_0 = 1 − Σ α_k` absorbs changes.
pub fn smle_loss_gradient(
    theta: &ModelParams,
    sketch: &Sketch,
    irf: &ImpulseResponse,
    eps: f64,
) -> Result<(f64, Vec<f64>)> {
    let obj = Objective::new(sketch, irf, eps)?;
    obj.eval(theta.alphas(), theta.depths(), true)
}

fn to_theta(u: &[f64], k: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
    let max = u[..k].iter().fold(0.0f64, |m, &v| m.max(v));
    let mut alphas: Vec<f64> = std::iter::once(0.0)
        .chain(u[..k].iter().copied())
        .map(|l| (l - max).exp())
        .collect();
    let total: f64 = alphas.iter().sum();
    alphas.iter_mut().for_each(|a| *a /= total);
    let depths = u[k..].iter().map(|&phi| wrap(t * phi / (2.0 * PI), t)).collect();
    (alphas, depths)
}

fn to_u(alphas: &[f64], depths: &[f64], t: f64) -> Vec<f64> {
    let a0 = alphas[0].max(MIN_WEIGHT);
    alphas[1..]
        .iter()
        .map(|&a| (a.max(MIN_WEIGHT) / a0).ln())
        .chain(depths.iter().map(|&d| 2.0 * PI * d / t))
        .collect()
}

/// Chain rule from `(α_1..α_K, t_1..t_K)` to `(ℓ_1..ℓ_K, φ_1..φ_K)`.
fn to_u_gradient(grad: &[f64], alphas: &[f64], k: usize, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; 2 * k];
    for l in 0..k {
        let al = alphas[l + 1];
        out[l] = (0..k)
            .map(|i| {
                let ai = alphas[i + 1];
                let delta = if i == l { 1.0 } else { 0.0 };
                grad[i] * ai * (delta - al)
            })
            .sum();
        out[k + l] = grad[k + l] * t / (2.0 * PI);
    }
    out
}

fn grid_init(obj: &Objective<'_>, k: usize, grid: usize, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if grid < k {
        return Err(Error::invalid(format!("grid of {grid} points cannot place {k} surfaces")));
    }
    let step = t / grid as f64;
    let alphas: Vec<f64> = std::iter::once(GRID_BACKGROUND)
        .chain(std::iter::repeat_n((1.0 - GRID_BACKGROUND) / k as f64, k))
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        let depths: Vec<f64> = combo.iter().map(|&c| c as f64 * step).collect();
        if let Ok((loss, _)) = obj.eval(&alphas, &depths, false) {
            if best.as_ref().is_none_or(|(b, _)| loss < *b) {
                best = Some((loss, depths));
            }
        }
        // next strictly increasing combination
        let mut i = k;
        loop {
            if i == 0 {
                let (_, depths) = best.ok_or(Error::NonFiniteLoss)?;
                return Ok((alphas, depths));
            }
            i -= 1;
            if combo[i] < grid - k + i {
                combo[i] += 1;
                for j in i + 1..k {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Least-squares signal weight for one surface from the sketch magnitudes.
fn magnitude_weight(sketch: &Sketch, irf: &ImpulseResponse) -> f64 {
    let (num, den) = sketch
        .freqs()
        .indices()
        .iter()
        .zip(sketch.z())
        .fold((0.0, 0.0), |(n, d), (&j, z)| {
            let h = irf.h_hat()[j].norm();
            (n + z.norm() * h, d + h * h)
        });
    if den > 0.0 {
        (num / den).clamp(0.05, 0.95)
    } else {
        0.5
    }
}

/// Single-surface start: the circular mean competes with a grid fine enough to
/// resolve the highest sketched frequency, and the lowest loss wins.
fn single_surface_init(
    sketch: &Sketch,
    irf: &ImpulseResponse,
    obj: &Objective<'_>,
    options: &FitOptions,
) -> Result<(Vec<f64>, Vec<f64>, InitMethod)> {
    let t = irf.len();
    let a1 = magnitude_weight(sketch, irf);
    let alphas = vec![1.0 - a1, a1];
    let top = sketch.freqs().indices().iter().map(|&j| j.min(t - j)).max().unwrap_or(1);
    let points = options.grid_size.max(4 * top).min(t);
    let step = t as f64 / points as f64;
    let mut best: Option<(f64, f64, InitMethod)> = None;
    let mut consider = |depth: f64, method: InitMethod| {
        if let Ok((loss, _)) = obj.eval(&alphas, &[depth], false) {
            if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
                best = Some((loss, depth, method));
            }
        }
    };
    let grid_method = match circular_mean_irf(sketch, irf) {
        Ok(depth) => {
            consider(depth, InitMethod::CircularMean);
            InitMethod::Grid
        }
        Err(Error::MissingFrequency(_)) => InitMethod::Grid,
        Err(Error::UndefinedPhase(_)) => InitMethod::GridFallback,
        Err(e) => return Err(e),
    };
    for i in 0..points {
        consider(i as f64 * step, grid_method);
    }
    let (_, depth, method) = best.ok_or(Error::NonFiniteLoss)?;
    Ok((alphas, vec![depth], method))
}

fn initial_point(
    sketch: &Sketch,
    irf: &ImpulseResponse,
    obj: &Objective<'_>,
    k: usize,
    options: &FitOptions,
) -> Result<(Vec<f64>, Vec<f64>, InitMethod)> {
    if k == 1 && options.init == InitStrategy::Auto {
        return single_surface_init(sketch, irf, obj, options);
    }
    let (a, d) = grid_init(obj, k, options.grid_size, irf.len() as f64)?;
    Ok((a, d, InitMethod::Grid))
}

fn run(
    obj: &Objective<'_>,
    alphas: &[f64],
    depths: &[f64],
    k: usize,
    options: &FitOptions,
) -> Result<(Vec<f64>, Vec<f64>, f64, usize, bool, f64)> {
    let t = obj.irf.len() as f64;
    let u0 = to_u(alphas, depths, t);
    let f = |u: &[f64]| {
        let (a, d) = to_theta(u, k, t);
        let (loss, g) = obj.eval(&a, &d, true)?;
        Ok((loss, to_u_gradient(&g, &a, k, t)))
    };
    let opts = BfgsOptions {
        max_iter: options.max_iter,
        f_tol: options.f_tol,
        x_tol: options.x_tol,
        grad_tol: options.grad_tol,
        max_step: 1.0,
    };
    let min = bfgs(f, &u0, &opts)?;
    let (a, d) = to_theta(&min.x, k, t);
    let gnorm = min.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    Ok((a, d, min.f, min.iterations, min.converged, gnorm))
}

/// Fits `K` surfaces to a sketch by minimizing the SMLE objective.
///
/// For `K = 1` the starting point is whichever of the IRF-corrected circular
/// mean and the points of a uniform grid (at least four per period of the
/// highest sketched frequency) has the lowest loss. For `K ≥ 2` it is the
/// best point of a uniform grid over `[0, T)^K`. When `z_1` is numerically
/// zero the circular mean is undefined and only the grid is searched
/// ([`InitMethod::GridFallback`]).
pub fn smle_fit(
    sketch: &Sketch,
    irf: &ImpulseResponse,
    k: usize,
    options: &FitOptions,
) -> Result<FitResult> {
    check_order(sketch, k)?;
    let obj = Objective::new(sketch, irf, options.eps)?;
    let (alphas, depths, method) = initial_point(sketch, irf, &obj, k, options)?;
    fit_with(obj, alphas, depths, method, k, options)
}

/// [`smle_fit`] from a caller-supplied starting point.
pub fn smle_fit_from(
    sketch: &Sketch,
    irf: &ImpulseResponse,
    init: &ModelParams,
    options: &FitOptions,
) -> Result<FitResult> {
    let k = init.k();
    check_order(sketch, k)?;
    let obj = Objective::new(sketch, irf, options.eps)?;
    fit_with(
        obj,
        init.alphas().to_vec(),
        init.depths().to_vec(),
        InitMethod::Supplied,
        k,
        options,
    )
}

fn check_order(sketch: &Sketch, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if sketch.len() < k {
        return Err(Error::invalid(format!(
            "{} real measurements cannot identify {} parameters; need m >= K",
            2 * sketch.len(),
            2 * k
        )));
    }
    Ok(())
}

fn fit_with(
    mut obj: Objective<'_>,
    alphas: Vec<f64>,
    depths: Vec<f64>,
    method: InitMethod,
    k: usize,
    options: &FitOptions,
) -> Result<FitResult> {
    let init = ModelParams::new(alphas.clone(), depths.clone())?;
    let (a, d, loss, iterations, converged, grad_norm) = match options.weighting {
        Weighting::Cue => run(&obj, &alphas, &depths, k, options)?,
        Weighting::Identity => {
            obj.weight = Weight::Identity;
            run(&obj, &alphas, &depths, k, options)?
        }
        Weighting::FixedSigma => {
            obj.fix_weight(&alphas, &depths)?;
            run(&obj, &alphas, &depths, k, options)?
        }
        Weighting::TwoStep => {
            obj.weight = Weight::Identity;
            let (a1, d1, _, it1, _, _) = run(&obj, &alphas, &depths, k, options)?;
            obj.fix_weight(&a1, &d1)?;
            let (a, d, loss, it2, conv, g) = run(&obj, &a1, &d1, k, options)?;
            (a, d, loss, it1 + it2, conv, g)
        }
    };
    Ok(FitResult {
        params: ModelParams::new(a, d)?,
        loss,
        iterations,
        converged,
        init,
        init_method: method,
        grad_norm,
    })
}
