//! Histogram-domain baselines: coarse binning, log-matched filtering, EM,
//! maximum-peak and the low-pass (zero-padded inverse transform) readout.

use num_complex::Complex64;

use super::{FitResult, InitMethod};
use crate::error::{Error, Result};
use crate::model::{argmax_first, idft_real, ImpulseResponse, ModelParams};
use crate::simulate::PhotonStream;
use crate::sketch::{Scheme, Sketch};

/// Floor applied to IRF values before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Photon counts pooled into `m̃` cells of width `Δ = ⌈T/m̃⌉`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoarseHistogram {
    t: usize,
    m_tilde: usize,
    delta: usize,
    counts: Vec<u64>,
}

impl CoarseHistogram {
    pub fn bins(&self) -> usize {
        self.t
    }

    pub fn cells(&self) -> usize {
        self.m_tilde
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Cell boundaries `e_0 = 0 < … ≤ e_m̃ = T`; cell `c` is `[e_c, e_{c+1})`.
    pub fn edges(&self) -> Vec<usize> {
        cell_edges(self.t, self.m_tilde, self.delta)
    }
}

fn cell_edges(t: usize, m_tilde: usize, delta: usize) -> Vec<usize> {
    (0..=m_tilde).map(|c| (c * delta).min(t)).collect()
}

fn check_cells(t: usize, m_tilde: usize) -> Result<usize> {
    if m_tilde == 0 || m_tilde > t {
        return Err(Error::invalid(format!("m_tilde = {m_tilde} outside 1..={t}")));
    }
    Ok(t.div_ceil(m_tilde))
}

/// Pools a photon stream into `m̃` cells.
pub fn coarse_bin(stream: &PhotonStream, m_tilde: usize) -> Result<CoarseHistogram> {
    let t = stream.bins();
    let delta = check_cells(t, m_tilde)?;
    let mut counts = vec![0u64; m_tilde];
    for &x in stream.stamps() {
        counts[x as usize / delta] += 1;
    }
    Ok(CoarseHistogram {
        t,
        m_tilde,
        delta,
        counts,
    })
}

/// Pools a full histogram into `m̃` cells.
pub fn coarse_bin_histogram(hist: &[u32], m_tilde: usize) -> Result<CoarseHistogram> {
    let t = hist.len();
    let delta = check_cells(t, m_tilde)?;
    let mut counts = vec![0u64; m_tilde];
    for (x, &c) in hist.iter().enumerate() {
        counts[x / delta] += c as u64;
    }
    Ok(CoarseHistogram {
        t,
        m_tilde,
        delta,
        counts,
    })
}

fn check_hist(hist: &[u32], irf: &ImpulseResponse) -> Result<u64> {
    if hist.len() != irf.len() {
        return Err(Error::invalid(format!(
            "histogram has {} bins, IRF has {}",
            hist.len(),
            irf.len()
        )));
    }
    let total: u64 = hist.iter().map(|&c| c as u64).sum();
    if total == 0 {
        return Err(Error::EmptySketch);
    }
    Ok(total)
}

/// Log-matched filter: `argmax_t Σ_s hist[s]·log max(h[(s − t) mod T], ε)`
/// over integer shifts, smallest index on ties.
pub fn matched_filter(hist: &[u32], irf: &ImpulseResponse) -> Result<usize> {
    check_hist(hist, irf)?;
    let t = hist.len();
    let log_h: Vec<f64> = irf.h().iter().map(|&v| v.max(LOG_FLOOR).ln()).collect();
    let occupied: Vec<(usize, f64)> = hist
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(s, &c)| (s, c as f64))
        .collect();
    let scores: Vec<f64> = (0..t)
        .map(|shift| {
            occupied
                .iter()
                .map(|&(s, c)| c * log_h[(s + t - shift) % t])
                .sum()
        })
        .collect();
    Ok(argmax_first(&scores))
}

/// `argmax hist − peak(h)` modulo `T`.
pub fn max_peak(hist: &[u32], irf: &ImpulseResponse) -> Result<usize> {
    check_hist(hist, irf)?;
    let t = hist.len();
    let values: Vec<f64> = hist.iter().map(|&c| c as f64).collect();
    Ok((argmax_first(&values) + t - irf.peak_index()) % t)
}

/// Candidate shifts for depth readout from coarse cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoarseReadout {
    /// One candidate per cell: the shift that puts the IRF peak at the cell
    /// centre. Resolution is the cell width.
    #[default]
    CellCenter,
    /// Every integer shift `0..T`; a pulse wider than a cell is then located
    /// to sub-cell precision.
    Fine,
}

/// Cell probabilities `H_t(c) = Σ_{x ∈ cell c} h((x − t) mod T)` for a set
/// of candidate shifts, plus the background cell masses `w_c / T`.
struct CellModel {
    shifts: Vec<usize>,
    /// `probs[i][c]` for candidate `shifts[i]`.
    probs: Vec<Vec<f64>>,
    /// `log max(probs[i][c], ε)`.
    log_probs: Vec<Vec<f64>>,
    background: Vec<f64>,
}

impl CellModel {
    fn new(irf: &ImpulseResponse, edges: &[usize], shifts: Vec<usize>) -> Self {
        let t = irf.len();
        // circular prefix sums over two periods
        let mut prefix = vec![0.0; 2 * t + 1];
        for i in 0..2 * t {
            prefix[i + 1] = prefix[i] + irf.h()[i % t];
        }
        let cells = edges.len() - 1;
        let probs: Vec<Vec<f64>> = shifts
            .iter()
            .map(|&s| {
                (0..cells)
                    .map(|c| {
                        let (a, b) = (edges[c], edges[c + 1]);
                        match b - a {
                            0 => return 0.0,
                            // prefix differences lose the tails to cancellation
                            1 => return irf.h()[(a + t - s) % t],
                            _ => {}
                        }
                        // Σ_{x=a}^{b−1} h(x − s): indices (a − s) .. (b − s) mod T
                        let lo = (a + t - s) % t;
                        (prefix[lo + b - a] - prefix[lo]).max(0.0)
                    })
                    .collect()
            })
            .collect();
        let log_probs = probs
            .iter()
            .map(|p: &Vec<f64>| p.iter().map(|&q| q.max(LOG_FLOOR).ln()).collect())
            .collect();
        let background = (0..cells)
            .map(|c| (edges[c + 1] - edges[c]) as f64 / t as f64)
            .collect();
        CellModel {
            shifts,
            probs,
            log_probs,
            background,
        }
    }

    fn for_layout(irf: &ImpulseResponse, coarse: &CoarseHistogram, readout: CoarseReadout) -> Self {
        let t = irf.len();
        let edges = coarse.edges();
        let shifts = match readout {
            CoarseReadout::Fine => (0..t).collect(),
            CoarseReadout::CellCenter => {
                let peak = irf.peak_index();
                let mut s: Vec<usize> = edges
                    .windows(2)
                    .filter(|w| w[1] > w[0])
                    .map(|w| ((w[0] + w[1]) / 2 + t - peak) % t)
                    .collect();
                s.dedup();
                s
            }
        };
        CellModel::new(irf, &edges, shifts)
    }

    fn weighted_argmax(&self, weights: &[f64]) -> usize {
        let active: Vec<(usize, f64)> = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(c, &w)| (c, w))
            .collect();
        let scores: Vec<f64> = self
            .log_probs
            .iter()
            .map(|lp| active.iter().map(|&(c, w)| w * lp[c]).sum())
            .collect();
        argmax_first(&scores)
    }
}

/// Matched filter on coarse cells with the IRF aggregated to the cells.
pub fn coarse_matched_filter(
    coarse: &CoarseHistogram,
    irf: &ImpulseResponse,
    readout: CoarseReadout,
) -> Result<usize> {
    if coarse.bins() != irf.len() {
        return Err(Error::invalid("coarse histogram and IRF disagree on T"));
    }
    if coarse.total() == 0 {
        return Err(Error::EmptySketch);
    }
    let model = CellModel::for_layout(irf, coarse, readout);
    let weights: Vec<f64> = coarse.counts().iter().map(|&c| c as f64).collect();
    Ok(model.shifts[model.weighted_argmax(&weights)])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop when the log-likelihood gain falls below `tol·(1 + |ℓ|)`.
    pub tol: f64,
    /// Fit the uniform background weight; when false `α_0` is held at zero.
    pub background: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 200,
            tol: 1e-9,
            background: true,
        }
    }
}

/// EM fit with its observed-data log-likelihood after every iteration
/// (entry 0 is the starting point).
#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub result: FitResult,
    pub log_likelihood: Vec<f64>,
}

/// Generalized EM for `K` shifted-IRF components plus uniform background on
/// a full histogram. Shifts are integers.
pub fn em_fit(hist: &[u32], irf: &ImpulseResponse, k: usize, options: &EmOptions) -> Result<EmFit> {
    check_hist(hist, irf)?;
    let t = hist.len();
    let edges: Vec<usize> = (0..=t).collect();
    let model = CellModel::new(irf, &edges, (0..t).collect());
    let counts: Vec<f64> = hist.iter().map(|&c| c as f64).collect();
    em_cells(&model, &counts, k, options)
}

/// EM on coarse cells; the coarse-binning readout for several surfaces.
pub fn coarse_em_fit(
    coarse: &CoarseHistogram,
    irf: &ImpulseResponse,
    k: usize,
    readout: CoarseReadout,
    options: &EmOptions,
) -> Result<EmFit> {
    if coarse.bins() != irf.len() {
        return Err(Error::invalid("coarse histogram and IRF disagree on T"));
    }
    if coarse.total() == 0 {
        return Err(Error::EmptySketch);
    }
    let model = CellModel::for_layout(irf, coarse, readout);
    let counts: Vec<f64> = coarse.counts().iter().map(|&c| c as f64).collect();
    em_cells(&model, &counts, k, options)
}

fn log_likelihood(model: &CellModel, counts: &[f64], alphas: &[f64], comp: &[usize]) -> f64 {
    counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0.0)
        .map(|(c, &n)| {
            let p = alphas[0] * model.background[c]
                + comp
                    .iter()
                    .zip(&alphas[1..])
                    .map(|(&i, a)| a * model.probs[i][c])
                    .sum::<f64>();
            n * p.ln()
        })
        .sum()
}

/// Greedy start: the first component at the matched-filter optimum, each
/// further one at the shift that most increases the likelihood with weights
/// `(0.2, equal split)`.
fn greedy_init(model: &CellModel, counts: &[f64], k: usize) -> (Vec<f64>, Vec<usize>) {
    let mut comp = vec![model.weighted_argmax(counts)];
    while comp.len() < k {
        let kk = comp.len() + 1;
        let alphas: Vec<f64> = std::iter::once(0.2)
            .chain(std::iter::repeat_n(0.8 / kk as f64, kk))
            .collect();
        let mut best = (f64::NEG_INFINITY, 0);
        for i in 0..model.shifts.len() {
            if comp.contains(&i) {
                continue;
            }
            let mut trial = comp.clone();
            trial.push(i);
            let ll = log_likelihood(model, counts, &alphas, &trial);
            if ll > best.0 {
                best = (ll, i);
            }
        }
        comp.push(best.1);
    }
    let alphas = if k == 1 {
        vec![0.5, 0.5]
    } else {
        std::iter::once(0.2)
            .chain(std::iter::repeat_n(0.8 / k as f64, k))
            .collect()
    };
    (alphas, comp)
}

fn em_cells(model: &CellModel, counts: &[f64], k: usize, options: &EmOptions) -> Result<EmFit> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if model.shifts.len() < k {
        return Err(Error::invalid("fewer candidate shifts than surfaces"));
    }
    let total: f64 = counts.iter().sum();
    let cells = counts.len();
    let (mut alphas, mut comp) = greedy_init(model, counts, k);
    if !options.background {
        alphas[0] = 0.0;
        alphas.iter_mut().skip(1).for_each(|a| *a = 1.0 / k as f64);
    }
    let to_params = |alphas: &[f64], comp: &[usize]| {
        let depths = comp.iter().map(|&i| model.shifts[i] as f64).collect();
        ModelParams::new(alphas.to_vec(), depths)
    };
    let init = to_params(&alphas, &comp)?;
    let mut ll = log_likelihood(model, counts, &alphas, &comp);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        iterations += 1;
        // E-step: responsibility-weighted counts per component
        let mut weighted = vec![vec![0.0; cells]; k + 1];
        for c in 0..cells {
            if counts[c] == 0.0 {
                continue;
            }
            let mut parts = vec![alphas[0] * model.background[c]];
            parts.extend(comp.iter().zip(&alphas[1..]).map(|(&i, a)| a * model.probs[i][c]));
            let p: f64 = parts.iter().sum();
            if p > 0.0 {
                for (w, q) in weighted.iter_mut().zip(&parts) {
                    w[c] = counts[c] * q / p;
                }
            }
        }
        // M-step
        let new_alphas: Vec<f64> = weighted.iter().map(|w| w.iter().sum::<f64>() / total).collect();
        let mut new_comp = comp.clone();
        for (slot, w) in new_comp.iter_mut().zip(&weighted[1..]) {
            if w.iter().any(|&v| v > 0.0) {
                *slot = model.weighted_argmax(w);
            }
        }
        let alpha_only = log_likelihood(model, counts, &new_alphas, &comp);
        let full = log_likelihood(model, counts, &new_alphas, &new_comp);
        // keep the shift update only if it does not lower the likelihood
        let (next_ll, next_comp) = if full >= alpha_only { (full, new_comp) } else { (alpha_only, comp.clone()) };
        let gain = next_ll - ll;
        alphas = new_alphas;
        comp = next_comp;
        ll = next_ll;
        trace.push(ll);
        if gain.abs() <= options.tol * (1.0 + ll.abs()) {
            converged = true;
            break;
        }
    }
    Ok(EmFit {
        result: FitResult {
            params: to_params(&alphas, &comp)?,
            loss: -ll,
            iterations,
            converged,
            init,
            init_method: InitMethod::Greedy,
            grad_norm: f64::NAN,
        },
        log_likelihood: trace,
    })
}

/// Low-pass depth readout: embed the sketch in a length-`T` spectrum
/// (DC = 1, Hermitian symmetry), invert and take the argmax.
///
/// With `irf` given, the same readout applied to the IRF spectrum is
/// subtracted, which removes the offset of an asymmetric IRF.
pub fn ifft_estimate(sketch: &Sketch, irf: Option<&ImpulseResponse>) -> Result<usize> {
    if sketch.freqs().scheme() != Scheme::Truncated {
        return Err(Error::invalid("the low-pass readout needs a truncated frequency set"));
    }
    let t = sketch.freqs().bins();
    let peak = lowpass_argmax(t, sketch.z());
    match irf {
        None => Ok(peak),
        Some(irf) => {
            if irf.len() != t {
                return Err(Error::invalid("IRF and sketch disagree on T"));
            }
            let h: Vec<Complex64> = irf.h_hat()[1..=sketch.len()].to_vec();
            let offset = lowpass_argmax(t, &h);
            Ok((peak + t - offset) % t)
        }
    }
}

fn lowpass_argmax(t: usize, z: &[Complex64]) -> usize {
    let mut spectrum = vec![Complex64::new(0.0, 0.0); t];
    spectrum[0] = Complex64::new(1.0, 0.0);
    for (j, &v) in z.iter().enumerate().map(|(i, v)| (i + 1, v)) {
        spectrum[j] = v;
        spectrum[t - j] = v.conj();
    }
    argmax_first(&idft_real(&spectrum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gaussian_irf, irf_from_samples};

    #[test]
    fn coarse_bin_examples() {
        let s = PhotonStream::new(1000, vec![0, 620, 999]).unwrap();
        let c = coarse_bin(&s, 4).unwrap();
        assert_eq!(c.delta(), 250);
        assert_eq!(c.counts(), &[1, 0, 1, 1]);
        assert!(coarse_bin(&s, 0).is_err());
        assert!(coarse_bin(&s, 1001).is_err());
        let c = coarse_bin(&PhotonStream::new(10, vec![9]).unwrap(), 6).unwrap();
        assert_eq!(c.edges(), vec![0, 2, 4, 6, 8, 10, 10]);
        assert_eq!(c.counts(), &[0, 0, 0, 0, 1, 0]);
    }

    #[test]
    fn matched_filter_delta() {
        let irf = gaussian_irf(3.0, 100).unwrap();
        let mut h = vec![0u32; 100];
        h[42] = 7;
        assert_eq!(matched_filter(&h, &irf).unwrap(), 42);
        assert_eq!(max_peak(&h, &irf).unwrap(), 42);
        assert!(matched_filter(&[0; 100], &irf).is_err());
    }

    #[test]
    fn ifft_full_basis_recovers_histogram_argmax() {
        use crate::sketch::{sketch_from_histogram, truncated_frequencies};
        let mut h = vec![1u32; 40];
        h[17] = 9;
        h[3] = 4;
        let f = truncated_frequencies(40, 39).unwrap();
        let s = sketch_from_histogram(&h, &f).unwrap();
        assert_eq!(ifft_estimate(&s, None).unwrap(), 17);
    }

    #[test]
    fn cell_center_shifts_account_for_irf_peak() {
        let mut v = vec![0.0; 20];
        v[2] = 1.0;
        let irf = irf_from_samples(&v).unwrap();
        let mut hist = vec![0u32; 20];
        hist[7] = 5;
        let c = coarse_bin_histogram(&hist, 4).unwrap();
        // cell [5, 10) has centre 7; peak index 2 gives shift 5
        assert_eq!(coarse_matched_filter(&c, &irf, CoarseReadout::CellCenter).unwrap(), 5);
    }
}
