//! Monte-Carlo and information experiments. Each runner takes typed settings
//! and returns rows; the command layer turns them into CSV and plots.
//!
//! Trial `i` of grid cell `c` draws everything from
//! `split_seed(seed, c, i)`, so results do not depend on thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sketch_lidar::analysis::{
    circular_distance, circular_mean_asymptotic_sd, crb_depth_rmse, crb_rmse, detection_rate,
    fim_coarse, fim_full, fim_sketch,
};
use sketch_lidar::estimate::{
    circular_mean_irf, coarse_bin, coarse_matched_filter, ifft_estimate, matched_filter, max_peak,
    smle_fit, CoarseReadout, FitOptions,
};
use sketch_lidar::simulate::split_seed;
use sketch_lidar::{
    random_frequencies, sample_photons, sketch_stamps, truncated_frequencies, FrequencySet,
    ImpulseResponse, ModelParams, PhotonStream, Result, Scheme,
};

/// Root mean square of a list of errors.
pub fn rms(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// `max{2m/T, 2m/n}`: real values kept relative to the histogram or to the
/// raw time-stamps, whichever is smaller.
pub fn compression(two_m: usize, t: usize, n: f64) -> f64 {
    (two_m as f64 / t as f64).max(two_m as f64 / n)
}

fn trial_seed(seed: u64, cell: u64, trial: u64) -> u64 {
    split_seed(seed, cell, trial)
}

/// Uniform integer depth and `n` photons of a single-surface pixel.
fn single_surface_trial(
    irf: &ImpulseResponse,
    sbr: f64,
    n: usize,
    seed: u64,
) -> Result<(f64, PhotonStream)> {
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, 0, 0));
    let truth = rng.random_range(0..irf.len()) as f64;
    let p = ModelParams::from_sbr(sbr, &[1.0], vec![truth])?;
    Ok((truth, sample_photons(&p, irf, n, split_seed(seed, 1, 0))))
}

/// Error of an estimate, or the largest possible error if it failed.
fn error_of(estimate: Result<f64>, truth: f64, t: usize) -> f64 {
    match estimate {
        Ok(e) => circular_distance(e, truth, t as f64),
        Err(_) => t as f64 / 2.0,
    }
}

fn smle_depth(
    stream: &PhotonStream,
    freqs: &FrequencySet,
    irf: &ImpulseResponse,
    options: &FitOptions,
) -> Result<f64> {
    let z = sketch_stamps(stream.stamps(), freqs)?;
    Ok(smle_fit(&z, irf, 1, options)?.params.depths()[0])
}

fn frequencies(
    scheme: SchemeChoice,
    t: usize,
    m: usize,
    irf: &ImpulseResponse,
    seed: u64,
) -> Result<FrequencySet> {
    match scheme {
        SchemeChoice::Truncated => truncated_frequencies(t, m),
        SchemeChoice::Random => random_frequencies(t, m, irf, seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeChoice {
    Truncated,
    Random,
}

impl std::str::FromStr for SchemeChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "truncated" => Ok(SchemeChoice::Truncated),
            "random" => Ok(SchemeChoice::Random),
            _ => Err(format!("unknown scheme {s:?}; use truncated or random")),
        }
    }
}

impl SchemeChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            SchemeChoice::Truncated => "truncated",
            SchemeChoice::Random => "random",
        }
    }
}

pub fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::Truncated => "truncated",
        Scheme::Random { .. } => "random",
    }
}

/// Half the number of real measurements; `2m` must be even and positive.
pub fn half(two_m: usize) -> Result<usize> {
    if two_m == 0 || !two_m.is_multiple_of(2) {
        return Err(sketch_lidar::Error::InvalidArgument(format!(
            "2m = {two_m} must be a positive even number"
        )));
    }
    Ok(two_m / 2)
}

// ---------------------------------------------------------------------------

/// Circular-mean error distribution against its Gaussian limit.
#[derive(Debug, Clone)]
pub struct CltSettings {
    pub irf: ImpulseResponse,
    pub sbr: f64,
    pub depth: f64,
    pub ns: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Half-width of the "within" window, in bins.
    pub window: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CltRow {
    pub n: usize,
    pub trials: usize,
    pub undefined: usize,
    pub mean_error: f64,
    pub sd_empirical: f64,
    pub sd_asymptotic: f64,
    pub within: f64,
}

/// Rows per `n`, plus every signed error as `(n, trial, error)`.
pub fn run_clt(s: &CltSettings) -> Result<(Vec<CltRow>, Vec<(usize, usize, f64)>)> {
    let t = s.irf.len();
    let p = ModelParams::from_sbr(s.sbr, &[1.0], vec![s.depth])?;
    let f = truncated_frequencies(t, 1)?;
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for (c, &n) in s.ns.iter().enumerate() {
        let errors: Vec<Option<f64>> = (0..s.trials)
            .into_par_iter()
            .map(|i| {
                let stream = sample_photons(&p, &s.irf, n, trial_seed(s.seed, c as u64, i as u64));
                let z = sketch_stamps(stream.stamps(), &f).ok()?;
                let est = circular_mean_irf(&z, &s.irf).ok()?;
                // signed error on the circle
                let d = (est - s.depth).rem_euclid(t as f64);
                Some(if d > t as f64 / 2.0 { d - t as f64 } else { d })
            })
            .collect();
        let ok: Vec<f64> = errors.iter().flatten().copied().collect();
        let mean = ok.iter().sum::<f64>() / ok.len() as f64;
        let var = ok.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (ok.len() as f64 - 1.0);
        rows.push(CltRow {
            n,
            trials: s.trials,
            undefined: errors.len() - ok.len(),
            mean_error: mean,
            sd_empirical: var.sqrt(),
            sd_asymptotic: circular_mean_asymptotic_sd(&p, &s.irf, n as f64),
            within: detection_rate(&ok, s.window),
        });
        all.extend(errors.iter().enumerate().filter_map(|(i, e)| e.map(|e| (n, i, e))));
    }
    Ok((rows, all))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepScheme {
    Truncated,
    Random,
    Coarse,
}

impl std::str::FromStr for RepScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "truncated" => Ok(RepScheme::Truncated),
            "random" => Ok(RepScheme::Random),
            "coarse" => Ok(RepScheme::Coarse),
            _ => Err(format!("unknown scheme {s:?}; use truncated, random or coarse")),
        }
    }
}

impl RepScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            RepScheme::Truncated => "truncated",
            RepScheme::Random => "random",
            RepScheme::Coarse => "coarse",
        }
    }
}

/// Information loss of sketches and of coarse binning.
#[derive(Debug, Clone)]
pub struct RepSettings {
    pub irf: ImpulseResponse,
    pub irf_tag: String,
    pub depths: Vec<f64>,
    /// Relative signal weights of the surfaces.
    pub weights: Vec<f64>,
    pub sbrs: Vec<f64>,
    pub two_m: Vec<usize>,
    pub schemes: Vec<RepScheme>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepRow {
    pub scheme: RepScheme,
    pub two_m: usize,
    pub sbr: f64,
    pub irf_tag: String,
    pub rmse_full: f64,
    pub rmse_sketch: f64,
    pub rep: f64,
}

/// Single-photon Cramér–Rao RMSEs over all free parameters. A sketch too
/// small to identify the parameters has infinite RMSE.
pub fn run_rep(s: &RepSettings) -> Result<Vec<RepRow>> {
    let t = s.irf.len();
    let mut rows = Vec::new();
    for &sbr in &s.sbrs {
        let p = ModelParams::from_sbr(sbr, &s.weights, s.depths.clone())?;
        let full = crb_rmse(&fim_full(&p, &s.irf, 1.0)?)?;
        for &scheme in &s.schemes {
            for &two_m in &s.two_m {
                let fim = match scheme {
                    RepScheme::Coarse => fim_coarse(&p, &s.irf, two_m, 1.0),
                    RepScheme::Truncated => {
                        fim_sketch(&p, &s.irf, &truncated_frequencies(t, half(two_m)?)?, 1.0)
                    }
                    RepScheme::Random => fim_sketch(
                        &p,
                        &s.irf,
                        &random_frequencies(t, half(two_m)?, &s.irf, s.seed)?,
                        1.0,
                    ),
                };
                let sketch = fim.and_then(|f| crb_rmse(&f)).unwrap_or(f64::INFINITY);
                rows.push(RepRow {
                    scheme,
                    two_m,
                    sbr,
                    irf_tag: s.irf_tag.clone(),
                    rmse_full: full,
                    rmse_sketch: sketch,
                    rep: 100.0 * (sketch - full) / full,
                });
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------

/// RMSE and detection grids over `(n, SBR, 2m)` for one surface.
#[derive(Debug, Clone)]
pub struct ContourSettings {
    pub irf: ImpulseResponse,
    pub ns: Vec<usize>,
    pub sbrs: Vec<f64>,
    pub two_m: Vec<usize>,
    pub scheme: SchemeChoice,
    pub trials: usize,
    pub seed: u64,
    pub tolerances: Vec<f64>,
    pub fit: FitOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourRow {
    pub n: usize,
    pub sbr: f64,
    /// `None` for full-data methods.
    pub two_m: Option<usize>,
    pub method: &'static str,
    pub rmse: f64,
    pub detection: Vec<f64>,
    pub failures: usize,
    pub crb_full: f64,
    pub crb_sketch: f64,
    pub compression: f64,
}

pub const CONTOUR_SKETCH_METHODS: [&str; 3] = ["smle", "ifft", "coarse-mf"];
pub const CONTOUR_FULL_METHODS: [&str; 2] = ["matched-filter", "max-peak"];

struct ContourTrial {
    full: [f64; 2],
    /// Per `2m`: smle, ifft, coarse errors.
    sketched: Vec<[f64; 3]>,
    failures: usize,
}

pub fn run_contour(s: &ContourSettings) -> Result<Vec<ContourRow>> {
    let t = s.irf.len();
    let sets: Vec<FrequencySet> = s
        .two_m
        .iter()
        .map(|&tm| frequencies(s.scheme, t, half(tm)?, &s.irf, s.seed))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &n in &s.ns {
        for &sbr in &s.sbrs {
            let trials: Vec<ContourTrial> = (0..s.trials)
                .into_par_iter()
                .map(|i| {
                    let (truth, stream) =
                        single_surface_trial(&s.irf, sbr, n, trial_seed(s.seed, cell, i as u64))?;
                    let hist = stream.histogram();
                    let mut failures = 0;
                    let mut err = |e: Result<f64>| {
                        failures += e.is_err() as usize;
                        error_of(e, truth, t)
                    };
                    let full = [
                        err(matched_filter(&hist, &s.irf).map(|v| v as f64)),
                        err(max_peak(&hist, &s.irf).map(|v| v as f64)),
                    ];
                    let sketched = sets
                        .iter()
                        .zip(&s.two_m)
                        .map(|(f, &tm)| {
                            let smle = err(smle_depth(&stream, f, &s.irf, &s.fit));
                            let ifft = match s.scheme {
                                SchemeChoice::Truncated => err(sketch_stamps(stream.stamps(), f)
                                    .and_then(|z| ifft_estimate(&z, Some(&s.irf)))
                                    .map(|v| v as f64)),
                                SchemeChoice::Random => f64::NAN,
                            };
                            let coarse = err(coarse_bin(&stream, tm)
                                .and_then(|c| coarse_matched_filter(&c, &s.irf, CoarseReadout::CellCenter))
                                .map(|v| v as f64));
                            [smle, ifft, coarse]
                        })
                        .collect();
                    Ok(ContourTrial {
                        full,
                        sketched,
                        failures,
                    })
                })
                .collect::<Result<_>>()?;
            cell += 1;

            let reference = ModelParams::from_sbr(sbr, &[1.0], vec![(t / 2) as f64])?;
            let crb_full = fim_full(&reference, &s.irf, n as f64)
                .and_then(|f| crb_depth_rmse(&f))
                .unwrap_or(f64::INFINITY);
            let failures: usize = trials.iter().map(|tr| tr.failures).sum();
            let summary = |errors: &[f64]| -> (f64, Vec<f64>) {
                (rms(errors), s.tolerances.iter().map(|&tol| detection_rate(errors, tol)).collect())
            };
            for (k, method) in CONTOUR_FULL_METHODS.iter().enumerate() {
                let e: Vec<f64> = trials.iter().map(|tr| tr.full[k]).collect();
                let (rmse, detection) = summary(&e);
                rows.push(ContourRow {
                    n,
                    sbr,
                    two_m: None,
                    method,
                    rmse,
                    detection,
                    failures,
                    crb_full,
                    crb_sketch: f64::NAN,
                    compression: 1.0,
                });
            }
            for (mi, (&two_m, f)) in s.two_m.iter().zip(&sets).enumerate() {
                let crb_sketch = fim_sketch(&reference, &s.irf, f, n as f64)
                    .and_then(|f| crb_depth_rmse(&f))
                    .unwrap_or(f64::INFINITY);
                for (k, method) in CONTOUR_SKETCH_METHODS.iter().enumerate() {
                    if k == 1 && s.scheme == SchemeChoice::Random {
                        continue;
                    }
                    let e: Vec<f64> = trials.iter().map(|tr| tr.sketched[mi][k]).collect();
                    let (rmse, detection) = summary(&e);
                    rows.push(ContourRow {
                        n,
                        sbr,
                        two_m: Some(two_m),
                        method,
                        rmse,
                        detection,
                        failures,
                        crb_full,
                        crb_sketch,
                        compression: compression(two_m, t, n as f64),
                    });
                }
            }
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------

/// RMSE ratio of the sketch estimator against a reference estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub sbr: f64,
    pub n: usize,
    pub two_m: usize,
    pub rmse_sketch: f64,
    pub rmse_reference: f64,
    pub ratio: f64,
    /// A second reference (max-peak for the photon-starved grid), if any.
    pub rmse_other: f64,
}

/// Photon-starved grid: SMLE with `2m = n` against full-data matched
/// filtering. `m = max(1, ⌊n/2⌋)`.
#[derive(Debug, Clone)]
pub struct StarvedSettings {
    pub irf: ImpulseResponse,
    pub ns: Vec<usize>,
    pub sbrs: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

pub fn starved_m(n: usize) -> usize {
    (n / 2).max(1)
}

pub fn run_starved(s: &StarvedSettings) -> Result<Vec<RatioRow>> {
    let t = s.irf.len();
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &sbr in &s.sbrs {
        for &n in &s.ns {
            let f = truncated_frequencies(t, starved_m(n))?;
            let errors: Vec<[f64; 3]> = (0..s.trials)
                .into_par_iter()
                .map(|i| {
                    let (truth, stream) =
                        single_surface_trial(&s.irf, sbr, n, trial_seed(s.seed, cell, i as u64))?;
                    let hist = stream.histogram();
                    Ok([
                        error_of(smle_depth(&stream, &f, &s.irf, &s.fit), truth, t),
                        error_of(matched_filter(&hist, &s.irf).map(|v| v as f64), truth, t),
                        error_of(max_peak(&hist, &s.irf).map(|v| v as f64), truth, t),
                    ])
                })
                .collect::<Result<_>>()?;
            cell += 1;
            rows.push(ratio_row(sbr, n, 2 * f.len(), &errors));
        }
    }
    Ok(rows)
}

fn ratio_row(sbr: f64, n: usize, two_m: usize, errors: &[[f64; 3]]) -> RatioRow {
    let col = |k: usize| rms(&errors.iter().map(|e| e[k]).collect::<Vec<_>>());
    let (a, b) = (col(0), col(1));
    RatioRow {
        sbr,
        n,
        two_m,
        rmse_sketch: a,
        rmse_reference: b,
        ratio: if b > 0.0 { a / b } else { f64::NAN },
        rmse_other: col(2),
    }
}

/// How the low-pass readout compensates for the IRF position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IfftCorrection {
    /// Subtract the argmax of the equally low-passed IRF.
    Lowpass,
    /// Subtract the argmax of the IRF itself.
    Peak,
    None,
}

impl std::str::FromStr for IfftCorrection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lowpass" => Ok(IfftCorrection::Lowpass),
            "peak" => Ok(IfftCorrection::Peak),
            "none" => Ok(IfftCorrection::None),
            _ => Err(format!("unknown correction {s:?}; use lowpass, peak or none")),
        }
    }
}

/// SMLE against the low-pass readout on the same truncated sketch.
#[derive(Debug, Clone)]
pub struct IfftSettings {
    pub irf: ImpulseResponse,
    pub m: usize,
    pub ns: Vec<usize>,
    pub sbrs: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub correction: IfftCorrection,
    pub fit: FitOptions,
}

pub fn run_ifft_compare(s: &IfftSettings) -> Result<Vec<RatioRow>> {
    let t = s.irf.len();
    let f = truncated_frequencies(t, s.m)?;
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &sbr in &s.sbrs {
        for &n in &s.ns {
            let errors: Vec<[f64; 3]> = (0..s.trials)
                .into_par_iter()
                .map(|i| {
                    let (truth, stream) =
                        single_surface_trial(&s.irf, sbr, n, trial_seed(s.seed, cell, i as u64))?;
                    let z = sketch_stamps(stream.stamps(), &f)?;
                    let smle = smle_fit(&z, &s.irf, 1, &s.fit).map(|r| r.params.depths()[0]);
                    let ifft = match s.correction {
                        IfftCorrection::Lowpass => ifft_estimate(&z, Some(&s.irf)).map(|v| v as f64),
                        IfftCorrection::Peak => ifft_estimate(&z, None)
                            .map(|v| (v as f64 - s.irf.peak_index() as f64).rem_euclid(t as f64)),
                        IfftCorrection::None => ifft_estimate(&z, None).map(|v| v as f64),
                    };
                    Ok([error_of(smle, truth, t), error_of(ifft, truth, t), f64::NAN])
                })
                .collect::<Result<_>>()?;
            cell += 1;
            rows.push(ratio_row(sbr, n, 2 * s.m, &errors));
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------

/// Narrow-pulse sketch against coarse binning with narrow and wide pulses.
#[derive(Debug, Clone)]
pub struct PulseWidthSettings {
    pub narrow: ImpulseResponse,
    pub wide: ImpulseResponse,
    pub narrow_tag: String,
    pub wide_tag: String,
    pub sbr: f64,
    pub n: usize,
    pub two_m: usize,
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub fit: FitOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseWidthRow {
    pub method: &'static str,
    pub irf_tag: String,
    pub rmse: f64,
    pub detection: f64,
}

pub fn run_pulse_width(s: &PulseWidthSettings) -> Result<Vec<PulseWidthRow>> {
    let t = s.narrow.len();
    if s.wide.len() != t {
        return Err(sketch_lidar::Error::InvalidArgument(
            "narrow and wide IRFs must share T".into(),
        ));
    }
    let f = truncated_frequencies(t, half(s.two_m)?)?;
    let errors: Vec<[f64; 4]> = (0..s.trials)
        .into_par_iter()
        .map(|i| {
            let seed = trial_seed(s.seed, 0, i as u64);
            let (truth, narrow) = single_surface_trial(&s.narrow, s.sbr, s.n, seed)?;
            // same depth, independent photons through the wide pulse
            let p = ModelParams::from_sbr(s.sbr, &[1.0], vec![truth])?;
            let wide = sample_photons(&p, &s.wide, s.n, split_seed(seed, 2, 0));
            let coarse = |stream: &PhotonStream, irf: &ImpulseResponse| {
                coarse_bin(stream, s.two_m)
                    .and_then(|c| coarse_matched_filter(&c, irf, CoarseReadout::CellCenter))
                    .map(|v| v as f64)
            };
            Ok([
                error_of(smle_depth(&narrow, &f, &s.narrow, &s.fit), truth, t),
                error_of(coarse(&narrow, &s.narrow), truth, t),
                error_of(coarse(&wide, &s.wide), truth, t),
                error_of(matched_filter(&narrow.histogram(), &s.narrow).map(|v| v as f64), truth, t),
            ])
        })
        .collect::<Result<_>>()?;
    let names = ["smle", "coarse-mf", "coarse-mf", "matched-filter"];
    let tags = [&s.narrow_tag, &s.narrow_tag, &s.wide_tag, &s.narrow_tag];
    Ok((0..4)
        .map(|k| {
            let e: Vec<f64> = errors.iter().map(|x| x[k]).collect();
            PulseWidthRow {
                method: names[k],
                irf_tag: tags[k].clone(),
                rmse: rms(&e),
                detection: detection_rate(&e, s.tolerance),
            }
        })
        .collect())
}
