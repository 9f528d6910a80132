//! Time-of-flight observation model.
//!
//! A photon time-stamp `x ∈ {0, …, T−1}` is drawn from the mixture
//!
//! ```text
//! π(x | θ) = Σ_k α_k · h(x − t_k) + α_0 / T
//! ```
//!
//! where `h` is the (normalized) impulse response, `t_k` are the surface
//! positions in bins and `α_0` is the background share. The time axis is
//! circular, so every shift is taken modulo `T`.
//!
//! Characteristic functions use the `+i` convention, `Ψ(ω_j) = E[e^{iω_j x}]`
//! with `ω_j = 2πj/T`. Sub-bin shifts are realized in the Fourier domain with
//! the band-limited (signed-frequency) phase factor, so the pmf returned by
//! [`model_pmf`] and the characteristic function returned by [`model_cf`] are
//! exact DFT pairs for every real-valued `t_k`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Forward transform with the characteristic-function sign:
/// `X[j] = Σ_t x[t] · e^{+i 2π j t / T}`.
pub fn dft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if buf.is_empty() {
        return buf;
    }
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()).process(&mut buf));
    buf
}

/// Inverse of [`dft`], keeping the real part:
/// `x[t] = Re (1/T) Σ_j X[j] · e^{−i 2π j t / T}`.
pub fn idft_real(spectrum: &[Complex64]) -> Vec<f64> {
    let n = spectrum.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf = spectrum.to_vec();
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n).process(&mut buf));
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Discrete impulse response over `T` bins with its cached transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    h: Vec<f64>,
    h_hat: Vec<Complex64>,
    bin_width: f64,
}

impl ImpulseResponse {
    fn from_normalized(h: Vec<f64>) -> Self {
        let mut h_hat = dft(&h);
        // unit mass by construction
        h_hat[0] = Complex64::new(1.0, 0.0);
        ImpulseResponse {
            h,
            h_hat,
            bin_width: 1.0,
        }
    }

    /// Number of time-stamp bins `T`.
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn h_hat(&self) -> &[Complex64] {
        &self.h_hat
    }

    /// Physical duration of one bin (metadata only, default 1).
    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn with_bin_width(mut self, bin_width: f64) -> Self {
        self.bin_width = bin_width;
        self
    }

    /// Index of the largest IRF sample (smallest index on ties).
    pub fn peak_index(&self) -> usize {
        argmax_first(&self.h)
    }

    /// `ĥ(ω_j)`; a lookup into the cached transform.
    pub fn cf(&self, j: usize) -> Result<Complex64> {
        self.h_hat.get(j).copied().ok_or_else(|| {
            Error::invalid(format!("frequency index {j} out of range 0..{}", self.len()))
        })
    }
}

pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn circular_distance(a: usize, b: usize, t: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(t - d)
}

/// Discretized Gaussian centred on bin 0 of the circular time axis.
pub fn gaussian_irf(sigma: f64, t: usize) -> Result<ImpulseResponse> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if t < 2 {
        return Err(Error::invalid(format!("T must be at least 2, got {t}")));
    }
    let h: Vec<f64> = (0..t)
        .map(|x| {
            let d = circular_distance(x, 0, t) as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    irf_from_samples(&h)
}

/// Gaussian (centred on bin 0) convolved circularly with a one-sided
/// exponential decay `e^{−t/τ}`: an asymmetric, long-tailed response.
pub fn exp_modified_gaussian_irf(sigma: f64, tau: f64, t: usize) -> Result<ImpulseResponse> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    let g = gaussian_irf(sigma, t)?;
    let decay: Vec<f64> = (0..t).map(|x| (-(x as f64) / tau).exp()).collect();
    let decay_hat = dft(&decay);
    let spectrum: Vec<Complex64> = g
        .h_hat
        .iter()
        .zip(&decay_hat)
        .map(|(a, b)| a * b)
        .collect();
    let h: Vec<f64> = idft_real(&spectrum).into_iter().map(|v| v.max(0.0)).collect();
    irf_from_samples(&h)
}

/// Normalizes measured IRF samples to unit mass.
pub fn irf_from_samples(values: &[f64]) -> Result<ImpulseResponse> {
    if values.len() < 2 {
        return Err(Error::invalid("IRF needs at least 2 samples"));
    }
    if let Some((i, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= 0.0) || !v.is_finite())
    {
        return Err(Error::invalid(format!("IRF sample {i} is {v}; must be finite and >= 0")));
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("IRF is all zero"));
    }
    let h = values.iter().map(|v| v / total).collect();
    Ok(ImpulseResponse::from_normalized(h))
}

/// Parses an IRF text file: one non-negative real per line. Blank lines and
/// lines starting with `#` are ignored.
pub fn parse_irf_text(text: &str) -> Result<ImpulseResponse> {
    let mut values = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            let v: f64 = trimmed
                .parse()
                .map_err(|_| Error::parse(offset, format!("not a number: {trimmed:?}")))?;
            values.push(v);
        }
        offset += line.len() as u64;
    }
    irf_from_samples(&values)
}

pub fn read_irf_file(path: impl AsRef<Path>) -> Result<ImpulseResponse> {
    let text = std::fs::read_to_string(path)?;
    parse_irf_text(&text)
}

/// Free function form of [`ImpulseResponse::cf`].
pub fn irf_cf(irf: &ImpulseResponse, j: usize) -> Result<Complex64> {
    irf.cf(j)
}

/// Mixture weights and surface positions `θ = (α_0, …, α_K, t_1, …, t_K)`.
///
/// Depths are kept sorted ascending; the weight of each surface moves with
/// its depth.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    alphas: Vec<f64>,
    depths: Vec<f64>,
}

impl ModelParams {
    /// `alphas = (α_0, α_1, …, α_K)`, `depths = (t_1, …, t_K)`.
    pub fn new(alphas: Vec<f64>, depths: Vec<f64>) -> Result<Self> {
        if alphas.len() != depths.len() + 1 {
            return Err(Error::invalid(format!(
                "expected {} weights for {} surfaces, got {}",
                depths.len() + 1,
                depths.len(),
                alphas.len()
            )));
        }
        if let Some(a) = alphas.iter().find(|a| !a.is_finite() || **a < -1e-12) {
            return Err(Error::invalid(format!("weight {a} is negative or not finite")));
        }
        if let Some(t) = depths.iter().find(|t| !t.is_finite()) {
            return Err(Error::invalid(format!("depth {t} is not finite")));
        }
        let total: f64 = alphas.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
        }
        let mut pairs: Vec<(f64, f64)> = depths
            .iter()
            .copied()
            .zip(alphas[1..].iter().map(|a| a.max(0.0) / total))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut sorted_alphas = Vec::with_capacity(alphas.len());
        sorted_alphas.push(alphas[0].max(0.0) / total);
        sorted_alphas.extend(pairs.iter().map(|p| p.1));
        Ok(ModelParams {
            alphas: sorted_alphas,
            depths: pairs.iter().map(|p| p.0).collect(),
        })
    }

    /// Background share `1/(1+sbr)`, signal mass split proportionally to
    /// `split` over the given depths.
    pub fn from_sbr(sbr: f64, split: &[f64], depths: Vec<f64>) -> Result<Self> {
        if !(sbr > 0.0) {
            return Err(Error::invalid(format!("SBR must be positive, got {sbr}")));
        }
        if split.len() != depths.len() {
            return Err(Error::invalid("signal split and depths differ in length"));
        }
        let norm: f64 = split.iter().sum();
        if !(norm > 0.0) {
            return Err(Error::invalid("signal split must have positive mass"));
        }
        let signal = if sbr.is_infinite() { 1.0 } else { sbr / (1.0 + sbr) };
        let mut alphas = vec![1.0 - signal];
        alphas.extend(split.iter().map(|s| signal * s / norm));
        ModelParams::new(alphas, depths)
    }

    /// Number of surfaces `K`.
    pub fn k(&self) -> usize {
        self.depths.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn background(&self) -> f64 {
        self.alphas[0]
    }

    pub fn signal_mass(&self) -> f64 {
        self.alphas[1..].iter().sum()
    }

    /// Detection-point signal-to-background ratio; infinite without background.
    pub fn sbr(&self) -> f64 {
        self.signal_mass() / self.background()
    }

    /// Same parameters with every depth wrapped into `[0, T)`.
    pub fn wrapped(&self, t: usize) -> Self {
        let depths = self.depths.iter().map(|d| wrap(*d, t as f64)).collect();
        ModelParams::new(self.alphas.clone(), depths).expect("wrapping keeps parameters valid")
    }
}

/// `x mod period` mapped into `[0, period)`.
pub fn wrap(x: f64, period: f64) -> f64 {
    let r = x.rem_euclid(period);
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Band-limited phase factor of a shift by `shift` bins at frequency index
/// `j`, and its derivative with respect to the shift.
///
/// Indices above `T/2` use the negative frequency `j − T`; the Nyquist index
/// of an even `T` uses the real factor `cos(π·shift)`. For integer shifts all
/// choices coincide with `e^{iω_j shift}`.
pub(crate) fn shift_factor(j: usize, t: usize, shift: f64) -> (Complex64, Complex64) {
    let j = j % t;
    if 2 * j == t {
        let (s, c) = (PI * shift).sin_cos();
        return (Complex64::new(c, 0.0), Complex64::new(-PI * s, 0.0));
    }
    let signed = if 2 * j < t { j as f64 } else { j as f64 - t as f64 };
    let nu = 2.0 * PI * signed / t as f64;
    // reduce the phase in exact arithmetic for integer shifts
    let phase = if shift.fract() == 0.0 && shift.abs() < 9.0e15 {
        let r = ((j as i128 * shift as i128).rem_euclid(t as i128)) as f64;
        2.0 * PI * r / t as f64
    } else {
        nu * shift
    };
    let f = Complex64::from_polar(1.0, phase);
    (f, Complex64::new(0.0, nu) * f)
}

/// Characteristic function of the observation model at index `j`.
///
/// The background term is the exact CF of the discrete uniform law on
/// `{0, …, T−1}`: one at `j = 0` and zero at every other index.
pub fn model_cf(params: &ModelParams, irf: &ImpulseResponse, j: usize) -> Result<Complex64> {
    if j >= irf.len() {
        return Err(Error::invalid(format!(
            "frequency index {j} out of range 0..{}",
            irf.len()
        )));
    }
    Ok(cf_raw(params.alphas(), params.depths(), irf, j))
}

/// Model CF for unsorted, unchecked parameter slices; `j` is reduced mod `T`.
pub(crate) fn cf_raw(alphas: &[f64], depths: &[f64], irf: &ImpulseResponse, j: usize) -> Complex64 {
    let t = irf.len();
    let j = j % t;
    let h = irf.h_hat[j];
    let mut acc = Complex64::new(if j == 0 { alphas[0] } else { 0.0 }, 0.0);
    for (a, &d) in alphas[1..].iter().zip(depths) {
        acc += *a * h * shift_factor(j, t, d).0;
    }
    acc
}

/// The IRF circularly shifted by a real number of bins.
///
/// Integer shifts are exact index rotations; fractional shifts apply the
/// band-limited phase factor in the Fourier domain.
pub fn shifted_irf(irf: &ImpulseResponse, shift: f64) -> Vec<f64> {
    let t = irf.len();
    let s = wrap(shift, t as f64);
    if s.fract() == 0.0 {
        let s = s as usize;
        return (0..t).map(|x| irf.h[(x + t - s) % t]).collect();
    }
    let spectrum: Vec<Complex64> = (0..t)
        .map(|j| irf.h_hat[j] * shift_factor(j, t, s).0)
        .collect();
    idft_real(&spectrum)
}

/// Derivative of [`shifted_irf`] with respect to the shift.
pub fn shifted_irf_derivative(irf: &ImpulseResponse, shift: f64) -> Vec<f64> {
    let t = irf.len();
    let s = wrap(shift, t as f64);
    let spectrum: Vec<Complex64> = (0..t)
        .map(|j| irf.h_hat[j] * shift_factor(j, t, s).1)
        .collect();
    idft_real(&spectrum)
}

/// Unclamped mixture pmf; an exact DFT pair with [`model_cf`].
pub(crate) fn pmf_raw(params: &ModelParams, irf: &ImpulseResponse) -> Vec<f64> {
    let t = irf.len();
    let mut p = vec![params.background() / t as f64; t];
    for (a, &d) in params.alphas()[1..].iter().zip(params.depths()) {
        for (pi, si) in p.iter_mut().zip(shifted_irf(irf, d)) {
            *pi += a * si;
        }
    }
    p
}

/// Probability of each time-stamp bin under `params`.
///
/// Negative round-off is clamped to zero. A fractional shift of an IRF that is
/// not band-limited can ring below zero by more than round-off; those lobes
/// are clamped too and the result renormalized, so the DFT identity with
/// [`model_cf`] then holds only approximately.
pub fn model_pmf(params: &ModelParams, irf: &ImpulseResponse) -> Vec<f64> {
    let mut p = pmf_raw(params, irf);
    let mut clamped = 0.0;
    for v in p.iter_mut() {
        if *v < 0.0 {
            clamped -= *v;
            *v = 0.0;
        }
    }
    if clamped > 1e-12 {
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= total);
    }
    p
}
