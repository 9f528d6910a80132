//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs serially so the reported runtimes are comparable.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketch_lidar::analysis::{crb_rmse, fim_full, fim_sketch};
use sketch_lidar::estimate::{covariance, em_fit, smle_loss, smle_loss_gradient, EmOptions, FitOptions};
use sketch_lidar::io::{read_cube, read_sketch, read_stream, write_cube, write_sketch, write_stream};
use sketch_lidar::model::{dft, exp_modified_gaussian_irf, gaussian_irf, model_cf};
use sketch_lidar::simulate::split_seed;
use sketch_lidar::sketch::sketch_from_histogram;
use sketch_lidar::{
    random_frequencies, sample_photons, simulate_cube, sketch_stamps, truncated_frequencies, Error,
    ModelParams, PhotonCount, PhotonStream,
};
use sklidar_cli::config::{parse_list, IrfSpec};
use sklidar_cli::experiments::{
    run_clt, run_contour, run_ifft_compare, run_pulse_width, run_rep, run_starved, CltSettings,
    ContourSettings, IfftCorrection, IfftSettings, PulseWidthSettings, RepScheme, RepSettings,
    SchemeChoice, StarvedSettings,
};

type Check = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn sketch_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for stream in 0..100u64 {
        let t = [153usize, 250, 1000][rng.random_range(0..3)];
        let n = rng.random_range(1..=10_000);
        let stamps: Vec<u32> = (0..n).map(|_| rng.random_range(0..t as u32)).collect();
        let m = rng.random_range(1..=50);
        let f = if stream % 2 == 0 {
            truncated_frequencies(t, m).unwrap()
        } else {
            random_frequencies(t, m, &gaussian_irf(5.0, t).unwrap(), stream).unwrap()
        };
        let streamed = sketch_stamps(&stamps, &f).unwrap();
        let hist = PhotonStream::new(t, stamps).unwrap().histogram();
        let spectrum = dft(&hist.iter().map(|&c| c as f64).collect::<Vec<_>>());
        for (i, &j) in f.indices().iter().enumerate() {
            worst = worst.max((streamed.z()[i] - spectrum[j] / n as f64).norm());
        }
        let via_hist = sketch_from_histogram(&hist, &f).unwrap();
        for (a, b) in streamed.z().iter().zip(via_hist.z()) {
            worst = worst.max((a - b).norm());
        }
    }
    verdict(worst < 1e-12, format!("max deviation {worst:.2e} over 100 streams"))
}

fn background_blindness() -> Check {
    let mut worst_sketch = 0.0f64;
    let mut worst_cf = 0.0f64;
    for &t in &[100usize, 153, 250, 1000] {
        let irf = exp_modified_gaussian_irf(2.0, 6.0, t).unwrap();
        let stamps: Vec<u32> = (0..t as u32).collect();
        for m in 1..=50.min(t - 1) {
            for f in [truncated_frequencies(t, m).unwrap(), random_frequencies(t, m, &irf, m as u64).unwrap()] {
                let z = sketch_stamps(&stamps, &f).unwrap();
                worst_sketch = z.z().iter().fold(worst_sketch, |w, v| w.max(v.norm()));
            }
        }
        let bg = ModelParams::new(vec![1.0], vec![]).unwrap();
        for j in 1..t {
            worst_cf = worst_cf.max(model_cf(&bg, &irf, j).unwrap().norm());
        }
    }
    verdict(
        worst_sketch < 1e-12 && worst_cf < 1e-12,
        format!("max |z| {worst_sketch:.2e}, max background CF {worst_cf:.2e}"),
    )
}

fn circular_mean_clt() -> Check {
    let settings = CltSettings {
        irf: gaussian_irf(15.0, 1000).unwrap(),
        sbr: 1.0,
        depth: 320.0,
        ns: vec![10, 100, 1000, 10_000],
        trials: 1000,
        seed: 1,
        window: 5.0,
    };
    let (rows, _) = run_clt(&settings).map_err(|e| e.to_string())?;
    let last = rows.iter().find(|r| r.n == 10_000).ok_or("no n=10000 row")?;
    let rel = (last.sd_empirical / last.sd_asymptotic - 1.0).abs();
    verdict(
        last.within >= 0.95 && rel <= 0.15,
        format!(
            "n=10000: {:.1}% within 5 bins, sd {:.3} vs asymptotic {:.3} ({:.1}% off)",
            100.0 * last.within,
            last.sd_empirical,
            last.sd_asymptotic,
            100.0 * rel
        ),
    )
}

fn rep_behaviour() -> Check {
    let irf = IrfSpec::Short.build(1000).unwrap();
    let settings = |depths: Vec<f64>, weights: Vec<f64>, two_m: Vec<usize>| RepSettings {
        irf: irf.clone(),
        irf_tag: "short".into(),
        depths,
        weights,
        sbrs: vec![10.0],
        two_m,
        schemes: vec![RepScheme::Truncated, RepScheme::Coarse],
        seed: 1,
    };
    let curve = |rows: &[sklidar_cli::experiments::RepRow], scheme: RepScheme| -> Vec<(usize, f64)> {
        rows.iter().filter(|r| r.scheme == scheme).map(|r| (r.two_m, r.rep)).collect()
    };
    let first_below = |c: &[(usize, f64)]| {
        c.iter()
            .position(|&(_, r)| r < 1.0)
            .filter(|&i| c[i..].iter().all(|&(_, r)| r < 1.0))
            .map(|i| c[i].0)
    };

    let one = run_rep(&settings(vec![430.0], vec![1.0], (2..=50).step_by(2).collect())).map_err(|e| e.to_string())?;
    let sketched = curve(&one, RepScheme::Truncated);
    let coarse = curve(&one, RepScheme::Coarse);
    let one_at = first_below(&sketched);
    let monotone = sketched.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-9) + 1e-12);
    let coarse_worse = sketched.iter().zip(&coarse).all(|(s, c)| s.0 == c.0 && c.1 > s.1);

    let two = run_rep(&settings(vec![320.0, 570.0], vec![0.75, 0.25], (4..=50).step_by(2).collect()))
        .map_err(|e| e.to_string())?;
    let two_curve = curve(&two, RepScheme::Truncated);
    let two_at = first_below(&two_curve);
    let at28 = two_curve.iter().find(|c| c.0 == 28).map_or(f64::NAN, |c| c.1);

    let describe = |at: Option<usize>| at.map_or("never".to_string(), |m| m.to_string());
    verdict(
        one_at.is_some_and(|m| m <= 24) && monotone && coarse_worse && two_at.is_some_and(|m| m <= 28),
        format!(
            "single peak REP<1% from 2m={}, monotone={monotone}, coarse worse everywhere={coarse_worse}; \
             two peaks REP<1% from 2m={} (REP at 28 = {at28:.2}%)",
            describe(one_at),
            describe(two_at)
        ),
    )
}

fn pulse_width() -> Check {
    let settings = PulseWidthSettings {
        narrow: gaussian_irf(5.0, 1000).unwrap(),
        wide: gaussian_irf(400.0, 1000).unwrap(),
        narrow_tag: "gaussian:5".into(),
        wide_tag: "gaussian:400".into(),
        sbr: 0.23,
        n: 100,
        two_m: 16,
        trials: 250,
        seed: 1,
        tolerance: 10.0,
        fit: FitOptions::default(),
    };
    let rows = run_pulse_width(&settings).map_err(|e| e.to_string())?;
    let find = |method: &str, tag: &str| {
        rows.iter()
            .find(|r| r.method == method && r.irf_tag == tag)
            .map(|r| r.rmse)
            .ok_or(format!("missing {method} {tag}"))
    };
    let smle = find("smle", "gaussian:5")?;
    let narrow = find("coarse-mf", "gaussian:5")?;
    let wide = find("coarse-mf", "gaussian:400")?;
    verdict(
        smle < narrow / 3.0 && smle < wide / 20.0,
        format!("RMSE smle {smle:.2}, coarse narrow {narrow:.2}, coarse wide {wide:.2}"),
    )
}

fn contour_parity() -> Check {
    let settings = ContourSettings {
        irf: gaussian_irf(5.0, 250).unwrap(),
        ns: vec![100],
        sbrs: vec![1.0],
        two_m: vec![12],
        scheme: SchemeChoice::Truncated,
        trials: 500,
        seed: 1,
        tolerances: vec![10.0],
        fit: FitOptions::default(),
    };
    let rows = run_contour(&settings).map_err(|e| e.to_string())?;
    let find = |method: &str| {
        rows.iter()
            .find(|r| r.method == method)
            .map(|r| (r.rmse, r.detection[0]))
            .ok_or(format!("missing {method}"))
    };
    let (smle_rmse, smle_det) = find("smle")?;
    let (mf_rmse, _) = find("matched-filter")?;
    let (coarse_rmse, coarse_det) = find("coarse-mf")?;
    verdict(
        smle_det >= 0.95 && smle_rmse <= 1.2 * mf_rmse && coarse_det < 0.95,
        format!(
            "2m=12: smle det {:.1}% RMSE {smle_rmse:.3}, matched filter RMSE {mf_rmse:.3}, \
             coarse det {:.1}% RMSE {coarse_rmse:.2}",
            100.0 * smle_det,
            100.0 * coarse_det
        ),
    )
}

fn photon_starved() -> Check {
    let settings = StarvedSettings {
        irf: gaussian_irf(3.0, 100).unwrap(),
        ns: (1..=15).collect(),
        sbrs: parse_list("logspace:0.01:100:9")?,
        trials: 1000,
        seed: 1,
        fit: FitOptions::default(),
    };
    let rows = run_starved(&settings).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let med = median(&ratios);
    verdict(med <= 1.2, format!("median R {med:.3} over {} grid points", ratios.len()))
}

fn ifft_comparison() -> Check {
    let settings = IfftSettings {
        irf: IrfSpec::Long.build(1000).unwrap(),
        m: 2,
        ns: vec![10, 30, 100, 300, 1000],
        sbrs: parse_list("logspace:0.1:100:7")?,
        trials: 1000,
        seed: 1,
        correction: IfftCorrection::Lowpass,
        fit: FitOptions::default(),
    };
    let rows = run_ifft_compare(&settings).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let worst = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let halved = ratios.iter().filter(|&&r| r <= 0.7).count();
    verdict(
        worst <= 1.05 && 2 * halved > ratios.len(),
        format!(
            "max R {worst:.3}, R <= 0.7 at {halved} of {} points, median R {:.3}",
            ratios.len(),
            median(&ratios)
        ),
    )
}

fn oracle_suite() -> Check {
    let mut failures = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst_grad = 0.0f64;
    for trial in 0..20 {
        let t = [100usize, 250, 1000][trial % 3];
        let k = 1 + trial % 2;
        let irf = gaussian_irf(rng.random_range(2.0..15.0), t).unwrap();
        let truth = ModelParams::from_sbr(
            2.0,
            &vec![1.0; k],
            (0..k).map(|i| (i as f64 + 0.3) * t as f64 / k as f64).collect(),
        )
        .unwrap();
        let f = truncated_frequencies(t, 3 + k).unwrap();
        let s = sketch_stamps(sample_photons(&truth, &irf, 1000, trial as u64).stamps(), &f).unwrap();
        let a0 = rng.random_range(0.1..0.5);
        let share = rng.random_range(0.3..0.7);
        let alphas = if k == 1 { vec![a0, 1.0 - a0] } else { vec![a0, (1.0 - a0) * share, (1.0 - a0) * (1.0 - share)] };
        let depths: Vec<f64> = (0..k).map(|i| (i as f64 + rng.random_range(0.1..0.9)) * t as f64 / k as f64).collect();
        let theta = ModelParams::new(alphas.clone(), depths.clone()).unwrap();
        let (_, grad) = smle_loss_gradient(&theta, &s, &irf, 1e-8).unwrap();
        let eval = |a: &[f64], d: &[f64]| {
            smle_loss(&ModelParams::new(a.to_vec(), d.to_vec()).unwrap(), &s, &irf, 1e-8).unwrap()
        };
        let h = 1e-5;
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
            worst_grad = worst_grad.max((a - b).abs() / b.abs().max(1e-3));
        }
    }
    if worst_grad >= 1e-4 {
        failures.push(format!("gradient rel err {worst_grad:.1e}"));
    }

    let irf = gaussian_irf(15.0, 1000).unwrap();
    let p = ModelParams::new(vec![0.5, 0.5], vec![320.0]).unwrap();
    let f = truncated_frequencies(1000, 5).unwrap();
    let n = 1_000_000;
    let d = 2 * f.len();
    let mut feats = Vec::with_capacity(n * d);
    for &x in sample_photons(&p, &irf, n, 4242).stamps() {
        let phases: Vec<f64> = f.indices().iter().map(|&j| 2.0 * PI * ((j * x as usize) % 1000) as f64 / 1000.0).collect();
        feats.extend(phases.iter().map(|a| a.cos()));
        feats.extend(phases.iter().map(|a| a.sin()));
    }
    let mean: Vec<f64> = (0..d).map(|a| feats.iter().skip(a).step_by(d).sum::<f64>() / n as f64).collect();
    let model = covariance(&p, &irf, &f);
    let mut worst_z = 0.0f64;
    for a in 0..d {
        for b in a..d {
            let prods: Vec<f64> = feats.chunks(d).map(|v| (v[a] - mean[a]) * (v[b] - mean[b])).collect();
            let emp = prods.iter().sum::<f64>() / n as f64;
            let var = prods.iter().map(|q| (q - emp).powi(2)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt().max(1e-15);
            worst_z = worst_z.max((emp - model[(a, b)]).abs() / se);
        }
    }
    if worst_z >= 3.0 {
        failures.push(format!("covariance off by {worst_z:.2} standard errors"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut psd = true;
    for _ in 0..50 {
        let t = [64usize, 100, 250][rng.random_range(0..3)];
        let irf = gaussian_irf(rng.random_range(2.0..8.0), t).unwrap();
        let a0 = rng.random_range(0.05..0.9);
        let p = ModelParams::new(vec![a0, 1.0 - a0], vec![rng.random_range(0.0..t as f64)]).unwrap();
        let f = truncated_frequencies(t, rng.random_range(2..20)).unwrap();
        for m in [fim_full(&p, &irf, 100.0).unwrap(), fim_sketch(&p, &irf, &f, 100.0).unwrap()] {
            let scale = m.abs().max().max(1.0);
            let eig = m.clone().symmetric_eigenvalues();
            psd &= (&m - m.transpose()).abs().max() <= 1e-10 * scale && eig.min() >= -1e-8 * eig.max();
        }
    }
    if !psd {
        failures.push("an information matrix is not symmetric PSD".into());
    }

    let irf = gaussian_irf(5.0, 250).unwrap();
    let p = ModelParams::new(vec![0.5, 0.5], vec![180.0]).unwrap();
    let full = crb_rmse(&fim_full(&p, &irf, 1.0).unwrap()).unwrap();
    let basis = crb_rmse(&fim_sketch(&p, &irf, &truncated_frequencies(250, 249).unwrap(), 1.0).unwrap()).unwrap();
    let crb_gap = (basis - full).abs() / full;
    if crb_gap >= 0.01 {
        failures.push(format!("full-basis CRB off by {:.2}%", 100.0 * crb_gap));
    }

    let irf = gaussian_irf(15.0, 1000).unwrap();
    let p = ModelParams::from_sbr(1.0, &[0.75, 0.25], vec![320.0, 570.0]).unwrap();
    let monotone = (0..10).all(|seed| {
        let hist = sample_photons(&p, &irf, 500, seed).histogram();
        let em = em_fit(&hist, &irf, 2, &EmOptions::default()).unwrap();
        em.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9)
    });
    if !monotone {
        failures.push("EM log-likelihood decreased".into());
    }

    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "gradient rel err {worst_grad:.1e}, covariance within {worst_z:.2} se, FIMs PSD, \
                 full-basis CRB gap {:.3}%, EM monotone",
                100.0 * crb_gap
            )
        } else {
            failures.join("; ")
        },
    )
}

fn file_formats() -> Check {
    let t = 250;
    let irf = gaussian_irf(3.0, t).unwrap();
    let p = ModelParams::from_sbr(1.0, &[1.0], vec![40.0]).unwrap();

    let stream = sample_photons(&p, &irf, 5000, 3);
    let mut first = Vec::new();
    write_stream(&mut first, &stream).unwrap();
    let mut second = Vec::new();
    write_stream(&mut second, &read_stream(&first[..]).unwrap()).unwrap();
    let stream_ok = first == second;

    let cube = simulate_cube(&vec![p.clone(); 12], 3, 4, &irf, PhotonCount::Poisson(80.0), split_seed(1, 2, 3)).unwrap();
    let mut first = Vec::new();
    write_cube(&mut first, &cube).unwrap();
    let mut second = Vec::new();
    write_cube(&mut second, &read_cube(&first[..]).unwrap()).unwrap();
    let cube_ok = first == second;
    let mut bad = first.clone();
    bad[8..12].copy_from_slice(&0u32.to_le_bytes());
    let cube_offset = matches!(read_cube(&bad[..]), Err(Error::Parse { offset: 8, .. }));

    let z = sketch_stamps(stream.stamps(), &random_frequencies(t, 9, &irf, 5).unwrap()).unwrap();
    let mut first = Vec::new();
    write_sketch(&mut first, &z).unwrap();
    let mut second = Vec::new();
    write_sketch(&mut second, &read_sketch(&first[..]).unwrap()).unwrap();
    let sketch_ok = first == second;
    let mut bad = first.clone();
    bad[0] = b'X';
    let sketch_offset = matches!(read_sketch(&bad[..]), Err(Error::Parse { offset: 0, .. }));

    let mut bad = Vec::new();
    write_stream(&mut bad, &stream).unwrap();
    bad[8..12].copy_from_slice(&0u32.to_le_bytes());
    let stream_offset = matches!(read_stream(&bad[..]), Err(Error::Parse { offset: 8, .. }));

    verdict(
        stream_ok && cube_ok && sketch_ok && cube_offset && sketch_offset && stream_offset,
        format!(
            "byte-identical stream={stream_ok} cube={cube_ok} sketch={sketch_ok}; \
             offsets named stream={stream_offset} cube={cube_offset} sketch={sketch_offset}"
        ),
    )
}

fn main() {
    let criteria: [(&str, u64, fn() -> Check); 10] = [
        ("sketch equals histogram DFT", 10, sketch_equivalence),
        ("background blindness", 1, background_blindness),
        ("circular-mean CLT", 120, circular_mean_clt),
        ("REP behaviour", 60, rep_behaviour),
        ("pulse-width comparison", 300, pulse_width),
        ("synthetic contour parity", 600, contour_parity),
        ("photon-starved ratio", 600, photon_starved),
        ("iFFT comparison", 600, ifft_comparison),
        ("oracle and derivative suite", 120, oracle_suite),
        ("file-format round trips", 5, file_formats),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.ends_with(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*budget);
        let (ok, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{label} {} {name}: {detail} [{:.1}s of {budget}s]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
