use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketch_lidar::analysis::circular_distance;
use sketch_lidar::estimate::{
    circular_mean, coarse_bin, covariance, em_fit, ifft_estimate, matched_filter, smle_fit,
    smle_loss, smle_loss_gradient, EmOptions, FitOptions, InitMethod, LOG_FLOOR,
};
use sketch_lidar::model::{exp_modified_gaussian_irf, gaussian_irf, model_cf, ImpulseResponse};
use sketch_lidar::simulate::split_seed;
use sketch_lidar::{
    sample_photons, sketch_stamps, truncated_frequencies, Error, ModelParams, PhotonStream, Sketch,
};

fn exact_sketch(p: &ModelParams, irf: &ImpulseResponse, m: usize, n: u64) -> Sketch {
    let f = truncated_frequencies(irf.len(), m).unwrap();
    let z = f.indices().iter().map(|&j| model_cf(p, irf, j).unwrap()).collect();
    Sketch::from_parts(f, z, n).unwrap()
}

#[test]
fn circular_mean_examples() {
    let f = truncated_frequencies(1000, 3).unwrap();
    let z = sketch_stamps(&[320; 50], &f).unwrap();
    assert!((circular_mean(&z).unwrap() - 320.0).abs() < 1e-9);

    let q = Sketch::from_parts(truncated_frequencies(1000, 1).unwrap(), vec![Complex64::new(0.0, 1.0)], 1).unwrap();
    assert!((circular_mean(&q).unwrap() - 250.0).abs() < 1e-9);

    let zero = Sketch::from_parts(truncated_frequencies(10, 1).unwrap(), vec![Complex64::new(0.0, 0.0)], 5).unwrap();
    assert!(matches!(circular_mean(&zero), Err(Error::UndefinedPhase(_))));

    let irf = gaussian_irf(2.0, 10).unwrap();
    let f = sketch_lidar::random_frequencies(10, 2, &irf, 0).unwrap();
    let no_fundamental = if f.position(1).is_some() { None } else { Some(f) };
    if let Some(f) = no_fundamental {
        let s = sketch_stamps(&[1, 2], &f).unwrap();
        assert!(matches!(circular_mean(&s), Err(Error::MissingFrequency(1))));
    }
}

#[test]
fn circular_mean_concentrates_around_the_depth() {
    let irf = gaussian_irf(15.0, 1000).unwrap();
    let p = ModelParams::from_sbr(1.0, &[1.0], vec![320.0]).unwrap();
    let f = truncated_frequencies(1000, 1).unwrap();
    let close = (0..1000)
        .filter(|&i| {
            let s = sample_photons(&p, &irf, 600, split_seed(5, i, 0));
            let t = circular_mean(&sketch_stamps(s.stamps(), &f).unwrap()).unwrap();
            (t - 320.0).abs() < 15.0
        })
        .count();
    assert!(close >= 900, "{close} of 1000 within 15 bins");
}

#[test]
fn covariance_matches_monte_carlo() {
    let irf = gaussian_irf(15.0, 1000).unwrap();
    let p = ModelParams::new(vec![0.5, 0.5], vec![320.0]).unwrap();
    let f = truncated_frequencies(1000, 5).unwrap();
    let n = 1_000_000;
    let stamps = sample_photons(&p, &irf, n, 4242);
    let feats: Vec<Vec<f64>> = stamps
        .stamps()
        .iter()
        .map(|&x| {
            let ph: Vec<f64> = f.indices().iter().map(|&j| 2.0 * std::f64::consts::PI * ((j * x as usize) % 1000) as f64 / 1000.0).collect();
            ph.iter().map(|a| a.cos()).chain(ph.iter().map(|a| a.sin())).collect()
        })
        .collect();
    let d = 10;
    let mean: Vec<f64> = (0..d).map(|a| feats.iter().map(|v| v[a]).sum::<f64>() / n as f64).collect();
    let model = covariance(&p, &irf, &f);
    for a in 0..d {
        for b in a..d {
            let prods: Vec<f64> = feats.iter().map(|v| (v[a] - mean[a]) * (v[b] - mean[b])).collect();
            let emp = prods.iter().sum::<f64>() / n as f64;
            let var = prods.iter().map(|q| (q - emp).powi(2)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            assert!((emp - model[(a, b)]).abs() < 3.0 * se + 1e-12, "entry ({a},{b}): {emp} vs {}", model[(a, b)]);
        }
    }
}

#[test]
fn loss_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let t = [100usize, 250, 1000][trial % 3];
        let k = 1 + trial % 2;
        let irf = gaussian_irf(rng.random_range(2.0..15.0), t).unwrap();
        let truth = ModelParams::from_sbr(2.0, &vec![1.0; k], (0..k).map(|i| (i as f64 + 0.3) * t as f64 / k as f64).collect()).unwrap();
        let f = truncated_frequencies(t, 3 + k).unwrap();
        let s = sketch_stamps(sample_photons(&truth, &irf, 1000, trial as u64).stamps(), &f).unwrap();

        let mut alphas = vec![rng.random_range(0.1..0.5)];
        let mut rest = 1.0 - alphas[0];
        for i in 0..k {
            let a = if i + 1 == k { rest } else { rest * rng.random_range(0.3..0.7) };
            rest -= a;
            alphas.push(a);
        }
        let depths: Vec<f64> = (0..k).map(|i| (i as f64 + rng.random_range(0.1..0.9)) * t as f64 / k as f64).collect();
        let theta = ModelParams::new(alphas.clone(), depths.clone()).unwrap();
        let (_, grad) = smle_loss_gradient(&theta, &s, &irf, 1e-8).unwrap();

        let h = 1e-5;
        let eval = |a: &[f64], d: &[f64]| smle_loss(&ModelParams::new(a.to_vec(), d.to_vec()).unwrap(), &s, &irf, 1e-8).unwrap();
        let mut fd = Vec::new();
        for i in 0..k {
            let (mut ap, mut am) = (alphas.clone(), alphas.clone());
            ap[i + 1] += h;
            ap[0] -= h;
            am[i + 1] -= h;
            am[0] += h;
            fd.push((eval(&ap, &depths) - eval(&am, &depths)) / (2.0 * h));
        }
        for i in 0..k {
            let (mut dp, mut dm) = (depths.clone(), depths.clone());
            dp[i] += h;
            dm[i] -= h;
            fd.push((eval(&alphas, &dp) - eval(&alphas, &dm)) / (2.0 * h));
        }
        for (a, b) in grad.iter().zip(&fd) {
            let rel = (a - b).abs() / b.abs().max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn smle_recovers_a_single_peak_from_ten_thousand_photons() {
    let irf = gaussian_irf(5.0, 250).unwrap();
    let p = ModelParams::new(vec![0.0, 1.0], vec![130.0]).unwrap();
    let s = sample_photons(&p, &irf, 10_000, 1);
    let z = sketch_stamps(s.stamps(), &truncated_frequencies(250, 5).unwrap()).unwrap();
    let fit = smle_fit(&z, &irf, 1, &FitOptions::default()).unwrap();
    assert!((fit.params.depths()[0] - 130.0).abs() < 0.1, "{:?}", fit.params);
    assert!(fit.params.alphas()[1] > 0.95);
    assert_eq!(fit.init_method, InitMethod::CircularMean);
}

#[test]
fn smle_inverts_an_exact_two_peak_sketch() {
    let irf = gaussian_irf(15.0, 1000).unwrap();
    let truth = ModelParams::new(vec![0.1, 0.675, 0.225], vec![320.0, 570.0]).unwrap();
    // a very large photon count makes the log-det term negligible
    let z = exact_sketch(&truth, &irf, 5, 100_000_000);
    let fit = smle_fit(&z, &irf, 2, &FitOptions::default()).unwrap();
    for (a, b) in fit.params.alphas().iter().zip(truth.alphas()) {
        assert!((a - b).abs() < 1e-3);
    }
    for (a, b) in fit.params.depths().iter().zip(truth.depths()) {
        assert!((a - b).abs() < 1e-3);
    }
    assert_eq!(fit.init_method, InitMethod::Grid);
}

#[test]
fn smle_survives_pure_background() {
    let irf = gaussian_irf(5.0, 100).unwrap();
    let f = truncated_frequencies(100, 4).unwrap();
    let stamps: Vec<u32> = (0..500).map(|x| x % 100).collect();
    let z = sketch_stamps(&stamps, &f).unwrap();
    let fit = smle_fit(&z, &irf, 1, &FitOptions::default()).unwrap();
    assert_eq!(fit.init_method, InitMethod::GridFallback);
    assert!(fit.loss.is_finite());
    assert!(fit.params.alphas()[1] < 0.05, "{:?}", fit.params);
}

#[test]
fn smle_stops_at_a_stationary_point() {
    let irf = gaussian_irf(5.0, 250).unwrap();
    let opts = FitOptions::default();
    for seed in 0..10 {
        let p = ModelParams::from_sbr(1.0, &[1.0], vec![40.0 + 17.0 * seed as f64]).unwrap();
        let s = sample_photons(&p, &irf, 1000, seed);
        let z = sketch_stamps(s.stamps(), &truncated_frequencies(250, 6).unwrap()).unwrap();
        let fit = smle_fit(&z, &irf, 1, &opts).unwrap();
        assert!(fit.converged);
        assert!(fit.grad_norm < 1e-4 * (1.0 + fit.loss.abs()), "seed {seed}: {}", fit.grad_norm);
    }
}

#[test]
fn coarse_binning_conserves_photons() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let t = rng.random_range(2..1500usize);
        let n = rng.random_range(0..3000usize);
        let stamps: Vec<u32> = (0..n).map(|_| rng.random_range(0..t as u32)).collect();
        let m = rng.random_range(1..=t);
        let c = coarse_bin(&PhotonStream::new(t, stamps).unwrap(), m).unwrap();
        assert_eq!(c.total(), n as u64);
        assert_eq!(c.counts().len(), m);
    }
}

#[test]
fn matched_filter_equals_exhaustive_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let t = rng.random_range(20..200usize);
        let irf = exp_modified_gaussian_irf(rng.random_range(1.0..4.0), rng.random_range(1.0..8.0), t).unwrap();
        let hist: Vec<u32> = (0..t).map(|_| if rng.random_bool(0.3) { rng.random_range(0..5) } else { 0 }).collect();
        if hist.iter().all(|&c| c == 0) {
            continue;
        }
        let mut best = (f64::NEG_INFINITY, 0);
        for shift in 0..t {
            let mut score = 0.0;
            for s in 0..t {
                let h = irf.h()[(s + t - shift) % t];
                score += hist[s] as f64 * h.max(LOG_FLOOR).ln();
            }
            if score > best.0 {
                best = (score, shift);
            }
        }
        assert_eq!(matched_filter(&hist, &irf).unwrap(), best.1);
    }
}

#[test]
fn matched_filter_finds_a_noiseless_shift() {
    let irf = gaussian_irf(3.0, 200).unwrap();
    for shift in [0usize, 17, 133, 199] {
        let hist: Vec<u32> = (0..200).map(|x| (1e5 * irf.h()[(x + 200 - shift) % 200]).round() as u32).collect();
        assert_eq!(matched_filter(&hist, &irf).unwrap(), shift);
    }
}

#[test]
fn estimators_are_shift_equivariant() {
    let t = 250usize;
    let irf = gaussian_irf(5.0, t).unwrap();
    let p = ModelParams::from_sbr(3.0, &[1.0], vec![70.0]).unwrap();
    let f = truncated_frequencies(t, 10).unwrap();
    for seed in 0..10u64 {
        let s = sample_photons(&p, &irf, 300, seed);
        let shift = (37 * seed as usize + 5) % t;
        let moved: Vec<u32> = s.stamps().iter().map(|&x| ((x as usize + shift) % t) as u32).collect();
        let moved = PhotonStream::new(t, moved).unwrap();

        let a = circular_mean(&sketch_stamps(s.stamps(), &f).unwrap()).unwrap();
        let b = circular_mean(&sketch_stamps(moved.stamps(), &f).unwrap()).unwrap();
        assert!(circular_distance(b, a + shift as f64, t as f64) < 1e-9);

        let a = matched_filter(&s.histogram(), &irf).unwrap();
        let b = matched_filter(&moved.histogram(), &irf).unwrap();
        assert_eq!(b, (a + shift) % t);

        let a = ifft_estimate(&sketch_stamps(s.stamps(), &f).unwrap(), None).unwrap();
        let b = ifft_estimate(&sketch_stamps(moved.stamps(), &f).unwrap(), None).unwrap();
        assert_eq!(b, (a + shift) % t);
    }
}

#[test]
fn em_matches_matched_filter_without_background() {
    let t = 250usize;
    let irf = gaussian_irf(5.0, t).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for trial in 0..50u64 {
        let depth = rng.random_range(0..t) as f64;
        let p = ModelParams::new(vec![0.0, 1.0], vec![depth]).unwrap();
        let n = if trial % 2 == 0 { 2000 } else { 30 };
        let hist = sample_photons(&p, &irf, n, trial).histogram();
        let options = EmOptions { background: false, ..EmOptions::default() };
        let em = em_fit(&hist, &irf, 1, &options).unwrap();
        assert_eq!(em.result.params.alphas()[0], 0.0);
        let mf = matched_filter(&hist, &irf).unwrap();
        assert_eq!(em.result.params.depths()[0] as usize, mf, "trial {trial}");
    }
}

#[test]
fn em_log_likelihood_never_decreases() {
    let irf = gaussian_irf(15.0, 1000).unwrap();
    let p = ModelParams::from_sbr(1.0, &[0.75, 0.25], vec![320.0, 570.0]).unwrap();
    for seed in 0..10 {
        let hist = sample_photons(&p, &irf, 500, seed).histogram();
        let em = em_fit(&hist, &irf, 2, &EmOptions::default()).unwrap();
        for w in em.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn em_recovers_two_peaks() {
    let irf = gaussian_irf(15.0, 1000).unwrap();
    let p = ModelParams::from_sbr(10.0, &[0.75, 0.25], vec![320.0, 570.0]).unwrap();
    let hits = (0..100u64)
        .filter(|&seed| {
            let hist = sample_photons(&p, &irf, 5000, split_seed(1, seed, 0)).histogram();
            let d = em_fit(&hist, &irf, 2, &EmOptions::default()).unwrap().result.params;
            (d.depths()[0] - 320.0).abs() <= 3.0 && (d.depths()[1] - 570.0).abs() <= 3.0
        })
        .count();
    assert!(hits >= 95, "{hits} of 100");
}

#[test]
fn ifft_readout_examples() {
    let irf = gaussian_irf(5.0, 250).unwrap();
    let p = ModelParams::new(vec![0.0, 1.0], vec![130.0]).unwrap();
    let z = exact_sketch(&p, &irf, 10, 1000);
    let t = ifft_estimate(&z, None).unwrap();
    assert!((t as f64 - 130.0).abs() <= 1.0);

    let rf = sketch_lidar::random_frequencies(250, 10, &irf, 1).unwrap();
    let zr = sketch_stamps(&[3, 4], &rf).unwrap();
    assert!(matches!(ifft_estimate(&zr, None), Err(Error::InvalidArgument(_))));
}

#[test]
fn ifft_offset_correction_reduces_bias_for_a_long_tail() {
    let t = 1000usize;
    let irf = exp_modified_gaussian_irf(10.0, 80.0, t).unwrap();
    let p = ModelParams::from_sbr(10.0, &[1.0], vec![430.0]).unwrap();
    let f = truncated_frequencies(t, 2).unwrap();
    let (mut raw, mut corrected) = (0.0, 0.0);
    for seed in 0..100 {
        let z = sketch_stamps(sample_photons(&p, &irf, 1000, seed).stamps(), &f).unwrap();
        raw += ifft_estimate(&z, None).unwrap() as f64 - 430.0;
        corrected += ifft_estimate(&z, Some(&irf)).unwrap() as f64 - 430.0;
    }
    let (raw, corrected) = (raw / 100.0, corrected / 100.0);
    assert!(raw > 20.0, "uncorrected bias {raw}");
    assert!(corrected.abs() < raw.abs() / 4.0, "corrected bias {corrected}");
}

#[test]
fn background_does_not_enter_the_model_sketch() {
    let irf = gaussian_irf(5.0, 250).unwrap();
    let a = ModelParams::new(vec![0.2, 0.48, 0.32], vec![50.0, 160.0]).unwrap();
    let b = ModelParams::new(vec![0.6, 0.24, 0.16], vec![50.0, 160.0]).unwrap();
    for j in 1..250 {
        let za = model_cf(&a, &irf, j).unwrap() / a.signal_mass();
        let zb = model_cf(&b, &irf, j).unwrap() / b.signal_mass();
        assert!((za - zb).norm() < 1e-14);
    }
}
