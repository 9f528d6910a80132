//! Seeded Monte-Carlo generation of photon streams and lidar cubes.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`).
//! Independent streams are derived with [`split_seed`], a SplitMix64-based
//! mixing of the master seed with one or two indices, so per-pixel and
//! per-trial generation never depends on scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::model::{model_pmf, ImpulseResponse, ModelParams};

/// Photon time-stamps recorded in one pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhotonStream {
    t: usize,
    stamps: Vec<u32>,
}

impl PhotonStream {
    pub fn new(t: usize, stamps: Vec<u32>) -> Result<Self> {
        if t == 0 || t > u32::MAX as usize {
            return Err(Error::invalid(format!("T = {t} is out of range")));
        }
        if let Some(x) = stamps.iter().find(|&&x| x as usize >= t) {
            return Err(Error::invalid(format!("time-stamp {x} outside [0, {t})")));
        }
        Ok(PhotonStream { t, stamps })
    }

    pub fn bins(&self) -> usize {
        self.t
    }

    pub fn stamps(&self) -> &[u32] {
        &self.stamps
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    /// Photon counts per bin.
    pub fn histogram(&self) -> Vec<u32> {
        let mut h = vec![0u32; self.t];
        for &x in &self.stamps {
            h[x as usize] += 1;
        }
        h
    }
}

/// Photon counts `n[i][j][t]` for an `N_r × N_c` scene, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LidarCube {
    rows: usize,
    cols: usize,
    t: usize,
    counts: Vec<u32>,
}

impl LidarCube {
    pub fn new(rows: usize, cols: usize, t: usize, counts: Vec<u32>) -> Result<Self> {
        if rows == 0 || cols == 0 || t == 0 {
            return Err(Error::invalid("cube dimensions must be positive"));
        }
        if counts.len() != rows * cols * t {
            return Err(Error::invalid(format!(
                "expected {} counts, got {}",
                rows * cols * t,
                counts.len()
            )));
        }
        Ok(LidarCube {
            rows,
            cols,
            t,
            counts,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bins(&self) -> usize {
        self.t
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Histogram of pixel `(i, j)`.
    pub fn pixel(&self, i: usize, j: usize) -> &[u32] {
        let start = (i * self.cols + j) * self.t;
        &self.counts[start..start + self.t]
    }

    pub fn pixel_total(&self, i: usize, j: usize) -> u64 {
        self.pixel(i, j).iter().map(|&c| c as u64).sum()
    }

    /// Mean photon count per pixel, `n̄`.
    pub fn mean_photons(&self) -> f64 {
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        total as f64 / (self.rows * self.cols) as f64
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed from `master` and two indices:
/// `mix(mix(mix(master) ^ a) ^ b)` with `mix` the SplitMix64 finalizer.
pub fn split_seed(master: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ a) ^ b)
}

/// Inverse-CDF sampler over a discrete pmf.
#[derive(Debug, Clone)]
pub struct PmfSampler {
    cdf: Vec<f64>,
}

impl PmfSampler {
    pub fn new(pmf: &[f64]) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p.max(0.0);
                acc
            })
            .collect();
        let total = acc;
        cdf.iter_mut().for_each(|c| *c /= total);
        PmfSampler { cdf }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c <= u);
        idx.min(self.cdf.len() - 1) as u32
    }
}

/// `n` i.i.d. time-stamps from the observation model, deterministic in `seed`.
pub fn sample_photons(
    params: &ModelParams,
    irf: &ImpulseResponse,
    n: usize,
    seed: u64,
) -> PhotonStream {
    let sampler = PmfSampler::new(&model_pmf(params, irf));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stamps = (0..n).map(|_| sampler.sample(&mut rng)).collect();
    PhotonStream {
        t: irf.len(),
        stamps,
    }
}

/// How many photons each simulated pixel receives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhotonCount {
    /// Poisson with the given mean.
    Poisson(f64),
    /// Exactly this many.
    Fixed(usize),
}

/// Simulates a cube from a row-major grid of per-pixel parameters.
///
/// Pixel `(i, j)` uses seed `split_seed(seed, i, j)`; its photon count and its
/// time-stamps are drawn from that one stream.
pub fn simulate_cube(
    scene: &[ModelParams],
    rows: usize,
    cols: usize,
    irf: &ImpulseResponse,
    count: PhotonCount,
    seed: u64,
) -> Result<LidarCube> {
    if scene.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "scene has {} pixels, expected {rows}x{cols}",
            scene.len()
        )));
    }
    let poisson = match count {
        PhotonCount::Poisson(mean) if mean > 0.0 && mean.is_finite() => {
            Some(Poisson::new(mean).map_err(|e| Error::invalid(e.to_string()))?)
        }
        PhotonCount::Poisson(mean) => {
            return Err(Error::invalid(format!("mean photon count must be positive, got {mean}")))
        }
        PhotonCount::Fixed(_) => None,
    };
    let t = irf.len();
    let mut counts = vec![0u32; rows * cols * t];
    for i in 0..rows {
        for j in 0..cols {
            let params = &scene[i * cols + j];
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, i as u64, j as u64));
            let n = match (count, &poisson) {
                (PhotonCount::Fixed(n), _) => n,
                (_, Some(p)) => p.sample(&mut rng) as usize,
                _ => unreachable!(),
            };
            let sampler = PmfSampler::new(&model_pmf(params, irf));
            let pixel = &mut counts[(i * cols + j) * t..(i * cols + j + 1) * t];
            for _ in 0..n {
                pixel[sampler.sample(&mut rng) as usize] += 1;
            }
        }
    }
    LidarCube::new(rows, cols, t, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gaussian_irf, irf_from_samples};

    #[test]
    fn zero_photons_give_empty_stream() {
        let irf = gaussian_irf(2.0, 20).unwrap();
        let p = ModelParams::new(vec![0.5, 0.5], vec![3.0]).unwrap();
        assert!(sample_photons(&p, &irf, 0, 1).is_empty());
    }

    #[test]
    fn delta_signal_lands_on_its_bin() {
        let mut v = vec![0.0; 64];
        v[0] = 1.0;
        let irf = irf_from_samples(&v).unwrap();
        let p = ModelParams::new(vec![0.0, 1.0], vec![42.0]).unwrap();
        let s = sample_photons(&p, &irf, 100, 9);
        assert!(s.stamps().iter().all(|&x| x == 42));
    }

    #[test]
    fn uniform_background_passes_binomial_check() {
        let irf = gaussian_irf(2.0, 100).unwrap();
        let p = ModelParams::new(vec![1.0], vec![]).unwrap();
        let n = 1_000_000;
        let h = sample_photons(&p, &irf, n, 2024).histogram();
        let mean = n as f64 / 100.0;
        let sd = (n as f64 * 0.01 * 0.99).sqrt();
        assert!(h.iter().all(|&c| (c as f64 - mean).abs() < 5.0 * sd));
        // chi-square with 99 dof: mean 99, sd ~14
        let chi2: f64 = h.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
        assert!(chi2 < 99.0 + 5.0 * (2.0f64 * 99.0).sqrt(), "chi2 = {chi2}");
    }

    #[test]
    fn empirical_pmf_close_in_total_variation() {
        let irf = gaussian_irf(5.0, 250).unwrap();
        let p = ModelParams::new(vec![0.3, 0.5, 0.2], vec![40.5, 180.25]).unwrap();
        let n = 1_000_000;
        let h = sample_photons(&p, &irf, n, 77).histogram();
        let pmf = model_pmf(&p, &irf);
        let tv: f64 = 0.5
            * h.iter()
                .zip(&pmf)
                .map(|(&c, q)| (c as f64 / n as f64 - q).abs())
                .sum::<f64>();
        assert!(tv < 0.005, "tv = {tv}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let irf = gaussian_irf(3.0, 50).unwrap();
        let p = ModelParams::new(vec![0.5, 0.5], vec![10.0]).unwrap();
        assert_eq!(sample_photons(&p, &irf, 500, 5), sample_photons(&p, &irf, 500, 5));
        assert_ne!(sample_photons(&p, &irf, 500, 5), sample_photons(&p, &irf, 500, 6));
    }

    #[test]
    fn cube_is_reproducible_and_pixels_differ() {
        let irf = gaussian_irf(3.0, 50).unwrap();
        let p = ModelParams::new(vec![0.5, 0.5], vec![10.0]).unwrap();
        let one = simulate_cube(std::slice::from_ref(&p), 1, 1, &irf, PhotonCount::Poisson(10.0), 3).unwrap();
        let again = simulate_cube(std::slice::from_ref(&p), 1, 1, &irf, PhotonCount::Poisson(10.0), 3).unwrap();
        assert_eq!(one, again);

        let scene = vec![p; 4];
        let cube = simulate_cube(&scene, 2, 2, &irf, PhotonCount::Poisson(200.0), 3).unwrap();
        assert_ne!(cube.pixel(0, 0), cube.pixel(0, 1));
        assert_ne!(cube.pixel(0, 0), cube.pixel(1, 0));
    }

    #[test]
    fn cube_mean_count_matches_poisson_mean() {
        let irf = gaussian_irf(3.0, 32).unwrap();
        let bg = ModelParams::new(vec![1.0], vec![]).unwrap();
        let scene = vec![bg; 400];
        let cube = simulate_cube(&scene, 20, 20, &irf, PhotonCount::Poisson(50.0), 11).unwrap();
        let sd_of_mean = (50.0f64 / 400.0).sqrt();
        assert!((cube.mean_photons() - 50.0).abs() < 5.0 * sd_of_mean);
    }

    #[test]
    fn split_seeds_differ() {
        assert_ne!(split_seed(1, 0, 1), split_seed(1, 1, 0));
        assert_ne!(split_seed(1, 0, 0), split_seed(2, 0, 0));
    }
}
