//! Small dense BFGS with Armijo backtracking, for the handful of
//! unconstrained coordinates the SMLE objective is optimized over.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct BfgsOptions {
    pub max_iter: usize,
    pub f_tol: f64,
    pub x_tol: f64,
    pub grad_tol: f64,
    /// Largest coordinate change tried by a single line search.
    pub max_step: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f`, which returns the value and gradient. Evaluation errors
/// and non-finite values count as `+∞` during the line search; the start
/// point itself must evaluate.
pub(crate) fn bfgs<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let dim = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g) = f(x.as_slice())?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    let mut g = DVector::from_vec(g);
    let mut h = DMatrix::<f64>::identity(dim, dim);
    let mut fresh = true;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if inf_norm(&g) <= opts.grad_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut d = -(&h * &g);
        let mut slope = d.dot(&g);
        if !(slope < 0.0) {
            h = DMatrix::identity(dim, dim);
            fresh = true;
            d = -g.clone();
            slope = d.dot(&g);
        }
        let dn = inf_norm(&d);
        if dn > opts.max_step {
            d *= opts.max_step / dn;
            slope *= opts.max_step / dn;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &d * step;
            if let Ok((fn_, gn)) = f(xn.as_slice()) {
                if fn_.is_finite()
                    && gn.iter().all(|v| v.is_finite())
                    && fn_ <= fx + 1e-4 * step * slope
                {
                    accepted = Some((xn, fn_, DVector::from_vec(gn)));
                    break;
                }
            }
            step *= 0.5;
        }

        let Some((xn, fn_, gn)) = accepted else {
            if !fresh {
                h = DMatrix::identity(dim, dim);
                fresh = true;
                continue;
            }
            // no descent at any resolvable step along steepest descent
            converged = step * inf_norm(&d) < opts.x_tol;
            break;
        };

        let s = &xn - &x;
        let y = &gn - &g;
        let df = (fx - fn_).abs();
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h *= sy / y.dot(&y);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ, expanded
            h += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = xn;
        g = gn;
        let prev = fx;
        fx = fn_;
        if df <= opts.f_tol * (1.0 + prev.abs()) && inf_norm(&s) <= opts.x_tol {
            converged = true;
            break;
        }
    }

    Ok(Minimum {
        x: x.as_slice().to_vec(),
        f: fx,
        grad: g.as_slice().to_vec(),
        iterations,
        converged,
    })
}
