//! Subcommand implementations: read a config, run, write CSV and plots.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sketch_lidar::estimate::{
    circular_mean_irf, coarse_bin_histogram, coarse_em_fit, coarse_matched_filter, em_fit,
    ifft_estimate, matched_filter, smle_fit, CoarseReadout, EmOptions, FitOptions, FitResult,
    InitStrategy, Weighting,
};
use sketch_lidar::io::{
    read_cube, read_sketch, read_sketch_csv, read_sketch_set, read_stream_csv, write_cube,
    write_sketch, write_sketch_csv, write_sketch_set, write_stream, write_stream_csv, SketchSet,
    StreamReader,
};
use sketch_lidar::sketch::sketch_from_histogram;
use sketch_lidar::{
    random_frequencies, sample_photons, simulate_cube, truncated_frequencies, FrequencySet,
    ImpulseResponse, ModelParams, PhotonCount, PhotonStream, Sketch, SketchState,
};

use crate::config::Config;
use crate::experiments::{
    compression, half, run_clt, run_contour, run_ifft_compare, run_pulse_width, run_rep,
    run_starved, scheme_name, starved_m, CltSettings, ContourSettings, IfftSettings,
    PulseWidthSettings, RatioRow, RepScheme, RepSettings, SchemeChoice, StarvedSettings,
};
use crate::output::{heatmap, line_plot, num, LinePlot, Series, Table};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

/// Merged settings for one run.
pub struct Run {
    pub config: Config,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Run {
    pub fn new(mut config: Config, globals: &Globals) -> Result<Self> {
        if let Some(seed) = globals.seed {
            config.set("seed", seed);
        }
        if let Some(dir) = &globals.out_dir {
            config.set("out_dir", dir.display());
        }
        let seed = config.get_or("seed", 0u64)?;
        let out_dir = PathBuf::from(config.get_or("out_dir", String::from("."))?);
        Ok(Run {
            config,
            seed,
            out_dir,
        })
    }

    fn check(&self, keys: &[&str]) -> Result<()> {
        let mut all = vec!["seed", "out_dir", "experiment"];
        all.extend_from_slice(keys);
        Ok(self.config.check_keys(&all)?)
    }

    /// A path relative to the output directory unless absolute.
    fn out(&self, name: &str) -> PathBuf {
        let p = Path::new(name);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    fn prefix(&self, default: &str) -> Result<String> {
        Ok(self
            .config
            .get_or("experiment", default.to_string())?)
    }

    fn ensure_out_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("cannot create {}", self.out_dir.display()))
    }

    fn fit_options(&self) -> Result<FitOptions> {
        let c = &self.config;
        let d = FitOptions::default();
        let weighting = match c.get_or("weighting", String::from("cue"))?.as_str() {
            "cue" => Weighting::Cue,
            "identity" => Weighting::Identity,
            "fixed" => Weighting::FixedSigma,
            "two-step" => Weighting::TwoStep,
            other => bail!("unknown weighting {other:?}; use cue, identity, fixed or two-step"),
        };
        let init = match c.get_or("init", String::from("auto"))?.as_str() {
            "auto" => InitStrategy::Auto,
            "grid" => InitStrategy::Grid,
            other => bail!("unknown init {other:?}; use auto or grid"),
        };
        Ok(FitOptions {
            max_iter: c.get_or("max_iter", d.max_iter)?,
            grid_size: c.get_or("grid_size", d.grid_size)?,
            eps: c.get_or("eps", d.eps)?,
            weighting,
            init,
            ..d
        })
    }
}

const FIT_KEYS: [&str; 5] = ["weighting", "init", "grid_size", "max_iter", "eps"];

fn keys<'a>(own: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    own.iter().chain(extra).copied().collect()
}

fn parse_sbr(raw: &str) -> Result<f64> {
    let v: f64 = match raw.trim() {
        "inf" | "infinity" => f64::INFINITY,
        s => s.parse().with_context(|| format!("bad SBR {s:?}"))?,
    };
    if !(v > 0.0) {
        bail!("SBR must be positive, got {v}");
    }
    Ok(v)
}

fn surface_params(c: &Config, t: usize) -> Result<ModelParams> {
    let depths = c.list("depths")?;
    let weights = c.list_or("weights", &vec![1.0; depths.len()])?;
    let sbr = parse_sbr(c.get("sbr").unwrap_or("1"))?;
    if depths.iter().any(|&d| d < 0.0 || d >= t as f64) {
        bail!("depths must lie in [0, {t})");
    }
    Ok(ModelParams::from_sbr(sbr, &weights, depths)?)
}

// ---------------------------------------------------------------------------

pub fn simulate(run: &Run) -> Result<()> {
    run.check(&[
        "T", "irf", "sbr", "depths", "weights", "n", "count", "rows", "cols", "format", "output",
    ])?;
    let c = &run.config;
    let t: usize = c.require("T")?;
    let (irf, _) = c.irf("irf", t)?;
    let p = surface_params(c, t)?;
    let rows: usize = c.get_or("rows", 1)?;
    let cols: usize = c.get_or("cols", 1)?;
    let n: f64 = c.require("n")?;
    let count = match c.get_or("count", String::from("poisson"))?.as_str() {
        "poisson" => PhotonCount::Poisson(n),
        "fixed" => {
            if n < 0.0 || n.fract() != 0.0 {
                bail!("fixed photon count must be a nonnegative integer");
            }
            PhotonCount::Fixed(n as usize)
        }
        other => bail!("unknown count {other:?}; use poisson or fixed"),
    };
    let csv = match c.get_or("format", String::from("binary"))?.as_str() {
        "binary" => false,
        "csv" => true,
        other => bail!("unknown format {other:?}; use binary or csv"),
    };
    let output = run.out(&c.require::<String>("output")?);
    let single = rows == 1 && cols == 1 && c.get("rows").is_none();
    if single {
        let stream = match count {
            PhotonCount::Fixed(n) => sample_photons(&p, &irf, n, run.seed),
            PhotonCount::Poisson(_) => {
                let cube = simulate_cube(std::slice::from_ref(&p), 1, 1, &irf, count, run.seed)?;
                stream_from_histogram(cube.pixel(0, 0))?
            }
        };
        crate::output::write_atomic(&output, |w| {
            if csv {
                write_stream_csv(w, &stream)?
            } else {
                write_stream(w, &stream)?
            }
            Ok(())
        })?;
        println!(
            "wrote {}: T={} n={} sbr={}",
            output.display(),
            t,
            stream.len(),
            num(p.sbr())
        );
    } else {
        if csv {
            bail!("cubes are binary only");
        }
        let scene = vec![p.clone(); rows * cols];
        let cube = simulate_cube(&scene, rows, cols, &irf, count, run.seed)?;
        crate::output::write_atomic(&output, |w| Ok(write_cube(w, &cube)?))?;
        println!(
            "wrote {}: {}x{} pixels T={} mean photons={:.2} sbr={}",
            output.display(),
            rows,
            cols,
            t,
            cube.mean_photons(),
            num(p.sbr())
        );
    }
    Ok(())
}

/// Time-stamps in bin order from per-bin counts.
fn stream_from_histogram(hist: &[u32]) -> Result<PhotonStream> {
    let stamps = hist
        .iter()
        .enumerate()
        .flat_map(|(x, &c)| std::iter::repeat_n(x as u32, c as usize))
        .collect();
    Ok(PhotonStream::new(hist.len(), stamps)?)
}

// ---------------------------------------------------------------------------

enum Input {
    Stream(PhotonStream),
    Cube(sketch_lidar::LidarCube),
    Sketch(Sketch),
    Sketches(SketchSet),
}

fn magic(path: &Path) -> Result<[u8; 4]> {
    let mut buf = [0u8; 4];
    let mut f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let got = f.read(&mut buf)?;
    if got < 4 {
        buf = [0; 4];
    }
    Ok(buf)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn read_input(path: &Path) -> Result<Input> {
    let ctx = || format!("reading {}", path.display());
    Ok(match &magic(path)? {
        b"SKL1" => Input::Stream(sketch_lidar::io::read_stream(open(path)?).with_context(ctx)?),
        b"SKC1" => Input::Cube(read_cube(open(path)?).with_context(ctx)?),
        b"SKZ1" => Input::Sketch(read_sketch(open(path)?).with_context(ctx)?),
        b"SKS1" => Input::Sketches(read_sketch_set(open(path)?).with_context(ctx)?),
        _ => {
            let mut first = String::new();
            for line in open(path)?.lines() {
                let line = line?;
                if !line.trim().is_empty() && !line.trim_start().starts_with('#') {
                    first = line;
                    break;
                }
            }
            if first.contains("re") {
                Input::Sketch(read_sketch_csv(open(path)?).with_context(ctx)?)
            } else {
                Input::Stream(read_stream_csv(open(path)?).with_context(ctx)?)
            }
        }
    })
}

fn frequency_set(c: &Config, t: usize, seed: u64) -> Result<FrequencySet> {
    let m: usize = c.require("m")?;
    let scheme: SchemeChoice = c
        .get_or("scheme", String::from("truncated"))?
        .parse()
        .map_err(anyhow::Error::msg)?;
    Ok(match scheme {
        SchemeChoice::Truncated => truncated_frequencies(t, m)?,
        SchemeChoice::Random => {
            let (irf, _) = c
                .irf("irf", t)
                .context("the random scheme weights frequencies by the IRF; set irf")?;
            random_frequencies(t, m, &irf, seed)?
        }
    })
}

pub fn sketch(run: &Run) -> Result<()> {
    run.check(&["input", "scheme", "m", "irf", "format", "output"])?;
    let c = &run.config;
    let input = PathBuf::from(c.require::<String>("input")?);
    let output = run.out(&c.require::<String>("output")?);
    let csv = match c.get_or("format", String::from("binary"))?.as_str() {
        "binary" => false,
        "csv" => true,
        other => bail!("unknown format {other:?}; use binary or csv"),
    };
    match &magic(&input)? {
        b"SKL1" => {
            // one pass, constant memory
            let mut reader = StreamReader::new(open(&input)?)
                .with_context(|| format!("reading {}", input.display()))?;
            let freqs = frequency_set(c, reader.bins(), run.seed)?;
            let mut state = SketchState::new(freqs);
            while let Some(x) = reader.next_stamp()? {
                state.accumulate(x)?;
            }
            let z = state.finalize()?;
            write_one_sketch(&output, &z, csv)?;
            report_sketch(&output, &z);
        }
        b"SKC1" => {
            let cube = read_cube(open(&input)?)
                .with_context(|| format!("reading {}", input.display()))?;
            let freqs = frequency_set(c, cube.bins(), run.seed)?;
            let mut sketches = Vec::with_capacity(cube.rows() * cube.cols());
            for i in 0..cube.rows() {
                for j in 0..cube.cols() {
                    let hist = cube.pixel(i, j);
                    sketches.push(if hist.iter().all(|&x| x == 0) {
                        None
                    } else {
                        Some(sketch_from_histogram(hist, &freqs)?)
                    });
                }
            }
            if csv {
                bail!("cube sketches are binary only");
            }
            let set = SketchSet {
                rows: cube.rows(),
                cols: cube.cols(),
                sketches,
            };
            crate::output::write_atomic(&output, |w| Ok(write_sketch_set(w, &set)?))?;
            println!(
                "wrote {}: {}x{} sketches, m={} scheme={} compression={:.4}",
                output.display(),
                set.rows,
                set.cols,
                freqs.len(),
                scheme_name(freqs.scheme()),
                compression(2 * freqs.len(), cube.bins(), cube.mean_photons())
            );
        }
        _ => {
            let stream = read_stream_csv(open(&input)?)
                .with_context(|| format!("reading {}", input.display()))?;
            let freqs = frequency_set(c, stream.bins(), run.seed)?;
            let z = sketch_lidar::sketch_stamps(stream.stamps(), &freqs)?;
            write_one_sketch(&output, &z, csv)?;
            report_sketch(&output, &z);
        }
    }
    Ok(())
}

fn write_one_sketch(path: &Path, z: &Sketch, csv: bool) -> Result<()> {
    crate::output::write_atomic(path, |w| {
        if csv {
            write_sketch_csv(w, z)?
        } else {
            write_sketch(w, z)?
        }
        Ok(())
    })
}

fn report_sketch(path: &Path, z: &Sketch) {
    let f = z.freqs();
    println!(
        "wrote {}: n={} m={} scheme={} compression={:.4}",
        path.display(),
        z.count(),
        f.len(),
        scheme_name(f.scheme()),
        compression(2 * f.len(), f.bins(), z.count() as f64)
    );
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Method {
    Smle,
    CircularMean,
    Ifft,
    MatchedFilter,
    Em,
    CoarseMf,
    CoarseEm,
}

impl std::str::FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "smle" => Method::Smle,
            "circular-mean" => Method::CircularMean,
            "ifft" => Method::Ifft,
            "matched-filter" => Method::MatchedFilter,
            "em" => Method::Em,
            "coarse+mf" => Method::CoarseMf,
            "coarse+em" => Method::CoarseEm,
            _ => bail!(
                "unknown method {s:?}; use smle, circular-mean, ifft, matched-filter, em, coarse+mf or coarse+em"
            ),
        })
    }
}

impl Method {
    fn needs_sketch(self) -> bool {
        matches!(self, Method::Smle | Method::CircularMean | Method::Ifft)
    }
}

/// One fitted pixel.
struct PixelFit {
    i: usize,
    j: usize,
    alphas: Option<Vec<f64>>,
    depths: Vec<f64>,
    loss: f64,
    iterations: usize,
    converged: bool,
    init: &'static str,
    photons: f64,
    compression: Option<f64>,
}

impl PixelFit {
    fn from_result(i: usize, j: usize, r: &FitResult, photons: f64, compression: Option<f64>) -> Self {
        PixelFit {
            i,
            j,
            alphas: Some(r.params.alphas().to_vec()),
            depths: r.params.depths().to_vec(),
            loss: r.loss,
            iterations: r.iterations,
            converged: r.converged,
            init: r.init_method.as_str(),
            photons,
            compression,
        }
    }

    fn depth_only(i: usize, j: usize, depth: f64, photons: f64, compression: Option<f64>) -> Self {
        PixelFit {
            i,
            j,
            alphas: None,
            depths: vec![depth],
            loss: f64::NAN,
            iterations: 0,
            converged: true,
            init: "",
            photons,
            compression,
        }
    }
}

pub fn fit(run: &Run) -> Result<()> {
    run.check(&keys(
        &["input", "method", "K", "irf", "m_coarse", "readout", "em_iters", "background", "output"],
        &FIT_KEYS,
    ))?;
    let c = &run.config;
    let input = PathBuf::from(c.require::<String>("input")?);
    let method: Method = c.require::<String>("method")?.parse()?;
    let k: usize = c.get_or("K", 1)?;
    let output = run.out(&c.get_or("output", String::from("fit.csv"))?);
    let options = run.fit_options()?;
    let em = EmOptions {
        max_iter: c.get_or("em_iters", EmOptions::default().max_iter)?,
        background: match c.get_or("background", String::from("fit"))?.as_str() {
            "fit" => true,
            "none" => false,
            other => bail!("unknown background {other:?}; use fit or none"),
        },
        ..EmOptions::default()
    };
    let readout = match c.get_or("readout", String::from("center"))?.as_str() {
        "center" => CoarseReadout::CellCenter,
        "fine" => CoarseReadout::Fine,
        other => bail!("unknown readout {other:?}; use center or fine"),
    };
    if k != 1 && matches!(method, Method::CircularMean | Method::Ifft | Method::MatchedFilter | Method::CoarseMf) {
        bail!("method {} estimates a single surface; use K = 1", c.get("method").unwrap_or(""));
    }

    let data = read_input(&input)?;
    let t = match &data {
        Input::Stream(s) => s.bins(),
        Input::Cube(cube) => cube.bins(),
        Input::Sketch(z) => z.freqs().bins(),
        Input::Sketches(set) => set
            .sketches
            .iter()
            .flatten()
            .map(|z| z.freqs().bins())
            .next()
            .context("sketch set has no non-empty pixel")?,
    };
    let (irf, _) = c.irf("irf", t)?;

    let is_sketch = matches!(data, Input::Sketch(_) | Input::Sketches(_));
    if method.needs_sketch() != is_sketch {
        bail!(
            "method {} needs {} input",
            c.get("method").unwrap_or(""),
            if method.needs_sketch() { "sketch" } else { "photon stream or cube" }
        );
    }

    let mut fits = Vec::new();
    match data {
        Input::Sketch(z) => fits.push(fit_sketch(0, 0, &z, &irf, method, k, &options)?),
        Input::Sketches(set) => {
            for (p, z) in set.sketches.iter().enumerate() {
                if let Some(z) = z {
                    fits.push(fit_sketch(p / set.cols, p % set.cols, z, &irf, method, k, &options)?);
                }
            }
        }
        Input::Stream(s) => {
            let m_coarse = c.get_or("m_coarse", 0usize)?;
            fits.push(fit_full(0, 0, &s.histogram(), &irf, method, k, m_coarse, readout, &em)?);
        }
        Input::Cube(cube) => {
            let m_coarse = c.get_or("m_coarse", 0usize)?;
            for i in 0..cube.rows() {
                for j in 0..cube.cols() {
                    let hist = cube.pixel(i, j);
                    if hist.iter().any(|&x| x > 0) {
                        fits.push(fit_full(i, j, hist, &irf, method, k, m_coarse, readout, &em)?);
                    }
                }
            }
        }
    }

    let mut header: Vec<String> = ["i", "j", "K"].iter().map(|s| s.to_string()).collect();
    header.extend((0..=k).map(|a| format!("alpha_{a}")));
    header.extend((1..=k).map(|a| format!("t_{a}")));
    header.extend(["loss", "iterations", "converged", "init"].iter().map(|s| s.to_string()));
    header.extend((1..=k).map(|a| format!("intensity_{a}")));
    header.push("compression".into());
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    for f in &fits {
        let mut row = vec![f.i.to_string(), f.j.to_string(), k.to_string()];
        match &f.alphas {
            Some(a) => row.extend(a.iter().map(|&v| num(v))),
            None => row.extend((0..=k).map(|_| String::new())),
        }
        row.extend(f.depths.iter().map(|&v| num(v)));
        row.push(num(f.loss));
        row.push(f.iterations.to_string());
        row.push(f.converged.to_string());
        row.push(f.init.to_string());
        match &f.alphas {
            Some(a) => row.extend(a[1..].iter().map(|&v| num(v * f.photons))),
            None => row.extend((0..k).map(|_| String::new())),
        }
        row.push(f.compression.map(num).unwrap_or_default());
        table.push(row);
    }
    table.write(&output)?;
    let comp = fits.iter().filter_map(|f| f.compression).next();
    match comp {
        Some(v) => println!("wrote {}: {} pixels, compression={v:.4}", output.display(), fits.len()),
        None => println!("wrote {}: {} pixels", output.display(), fits.len()),
    }
    Ok(())
}

fn fit_sketch(
    i: usize,
    j: usize,
    z: &Sketch,
    irf: &ImpulseResponse,
    method: Method,
    k: usize,
    options: &FitOptions,
) -> Result<PixelFit> {
    let f = z.freqs();
    if f.bins() != irf.len() {
        bail!("pixel ({i},{j}) has T = {}, IRF has {}", f.bins(), irf.len());
    }
    let n = z.count() as f64;
    let comp = Some(compression(2 * f.len(), f.bins(), n));
    Ok(match method {
        Method::Smle => PixelFit::from_result(i, j, &smle_fit(z, irf, k, options)?, n, comp),
        Method::CircularMean => PixelFit::depth_only(i, j, circular_mean_irf(z, irf)?, n, comp),
        Method::Ifft => PixelFit::depth_only(i, j, ifft_estimate(z, Some(irf))? as f64, n, comp),
        _ => unreachable!("full-data methods are rejected earlier"),
    })
}

#[allow(clippy::too_many_arguments)]
fn fit_full(
    i: usize,
    j: usize,
    hist: &[u32],
    irf: &ImpulseResponse,
    method: Method,
    k: usize,
    m_coarse: usize,
    readout: CoarseReadout,
    em: &EmOptions,
) -> Result<PixelFit> {
    let n: f64 = hist.iter().map(|&c| c as f64).sum();
    let coarse = || -> Result<_> {
        if m_coarse == 0 {
            bail!("coarse methods need m_coarse (number of cells)");
        }
        Ok(coarse_bin_histogram(hist, m_coarse)?)
    };
    let coarse_comp = || Some(compression(m_coarse, hist.len(), n));
    Ok(match method {
        Method::MatchedFilter => PixelFit::depth_only(i, j, matched_filter(hist, irf)? as f64, n, None),
        Method::Em => PixelFit::from_result(i, j, &em_fit(hist, irf, k, em)?.result, n, None),
        Method::CoarseMf => PixelFit::depth_only(
            i,
            j,
            coarse_matched_filter(&coarse()?, irf, readout)? as f64,
            n,
            coarse_comp(),
        ),
        Method::CoarseEm => PixelFit::from_result(
            i,
            j,
            &coarse_em_fit(&coarse()?, irf, k, readout, em)?.result,
            n,
            coarse_comp(),
        ),
        _ => unreachable!("sketch methods are rejected earlier"),
    })
}

// ---------------------------------------------------------------------------

fn write_config_echo(run: &Run, prefix: &str) -> Result<()> {
    let path = run.out(&format!("{prefix}_config.txt"));
    crate::output::write_atomic(&path, |w| Ok(w.write_all(run.config.echo().as_bytes())?))
}

pub fn clt(run: &Run) -> Result<()> {
    run.check(&["T", "irf", "sbr", "depth", "n", "trials", "window"])?;
    let c = &run.config;
    let t: usize = c.require("T")?;
    let (irf, _) = c.irf("irf", t)?;
    let s = CltSettings {
        irf,
        sbr: parse_sbr(c.get("sbr").unwrap_or("1"))?,
        depth: c.require("depth")?,
        ns: c.counts("n")?,
        trials: c.require("trials")?,
        seed: run.seed,
        window: c.get_or("window", 5.0)?,
    };
    let (rows, errors) = run_clt(&s)?;
    run.ensure_out_dir()?;
    let prefix = run.prefix("clt")?;
    let mut table = Table::new(&[
        "n", "trials", "undefined", "mean_error", "sd_empirical", "sd_asymptotic", "within",
    ]);
    for r in &rows {
        table.push(vec![
            r.n.to_string(),
            r.trials.to_string(),
            r.undefined.to_string(),
            num(r.mean_error),
            num(r.sd_empirical),
            num(r.sd_asymptotic),
            num(r.within),
        ]);
        println!(
            "n={:>6} sd {:8.4} (asymptotic {:8.4}) within {} bins {:.3}",
            r.n, r.sd_empirical, r.sd_asymptotic, s.window, r.within
        );
    }
    table.write(&run.out(&format!("{prefix}.csv")))?;
    let mut et = Table::new(&["n", "trial", "error"]);
    for (n, i, e) in &errors {
        et.push(vec![n.to_string(), i.to_string(), num(*e)]);
    }
    et.write(&run.out(&format!("{prefix}_errors.csv")))?;
    line_plot(
        &run.out(&format!("{prefix}.svg")),
        &LinePlot {
            title: "Circular-mean error spread",
            x_label: "photons n",
            y_label: "standard deviation (bins)",
            log_x: true,
            log_y: true,
        },
        &[
            Series {
                label: "empirical".into(),
                points: rows.iter().map(|r| (r.n as f64, r.sd_empirical)).collect(),
            },
            Series {
                label: "asymptotic".into(),
                points: rows.iter().map(|r| (r.n as f64, r.sd_asymptotic)).collect(),
            },
        ],
    )?;
    write_config_echo(run, &prefix)
}

pub fn rep(run: &Run) -> Result<()> {
    run.check(&["T", "irf", "depths", "weights", "sbr", "two_m", "schemes"])?;
    let c = &run.config;
    let t: usize = c.require("T")?;
    let (irf, irf_tag) = c.irf("irf", t)?;
    let depths = c.list("depths")?;
    let schemes = c
        .get_or("schemes", String::from("truncated,random,coarse"))?
        .split(',')
        .map(|s| s.trim().parse::<RepScheme>().map_err(anyhow::Error::msg))
        .collect::<Result<Vec<_>>>()?;
    let s = RepSettings {
        irf,
        irf_tag,
        weights: c.list_or("weights", &vec![1.0; depths.len()])?,
        depths,
        sbrs: c.list("sbr")?,
        two_m: c.counts("two_m")?,
        schemes,
        seed: run.seed,
    };
    let rows = run_rep(&s)?;
    run.ensure_out_dir()?;
    let prefix = run.prefix("rep")?;
    let mut table = Table::new(&["scheme", "2m", "SBR", "irf_tag", "rmse_full", "rmse_sketch", "rep"]);
    for r in &rows {
        table.push(vec![
            r.scheme.as_str().into(),
            r.two_m.to_string(),
            num(r.sbr),
            r.irf_tag.clone(),
            num(r.rmse_full),
            num(r.rmse_sketch),
            num(r.rep),
        ]);
    }
    table.write(&run.out(&format!("{prefix}.csv")))?;
    let mut series = Vec::new();
    for &sbr in &s.sbrs {
        for &scheme in &s.schemes {
            series.push(Series {
                label: format!("{} SBR={}", scheme.as_str(), sbr),
                points: rows
                    .iter()
                    .filter(|r| r.scheme == scheme && r.sbr == sbr)
                    .map(|r| (r.two_m as f64, r.rep))
                    .collect(),
            });
        }
    }
    line_plot(
        &run.out(&format!("{prefix}.svg")),
        &LinePlot {
            title: "Relative error percentage",
            x_label: "real measurements 2m",
            y_label: "REP (%)",
            log_x: false,
            log_y: true,
        },
        &series,
    )?;
    println!("wrote {} rows to {}", rows.len(), run.out(&format!("{prefix}.csv")).display());
    write_config_echo(run, &prefix)
}

pub fn contour(run: &Run) -> Result<()> {
    run.check(&keys(
        &["T", "irf", "n", "sbr", "two_m", "scheme", "trials", "tolerances"],
        &FIT_KEYS,
    ))?;
    let c = &run.config;
    let t: usize = c.require("T")?;
    let (irf, _) = c.irf("irf", t)?;
    let s = ContourSettings {
        irf,
        ns: c.counts("n")?,
        sbrs: c.list("sbr")?,
        two_m: c.counts("two_m")?,
        scheme: c
            .get_or("scheme", String::from("truncated"))?
            .parse()
            .map_err(anyhow::Error::msg)?,
        trials: c.require("trials")?,
        seed: run.seed,
        tolerances: c.list_or("tolerances", &[10.0, 2.0])?,
        fit: run.fit_options()?,
    };
    let start = std::time::Instant::now();
    let rows = run_contour(&s)?;
    run.ensure_out_dir()?;
    let prefix = run.prefix("contour")?;
    let mut header: Vec<String> = ["n", "SBR", "2m", "method", "rmse"].iter().map(|s| s.to_string()).collect();
    header.extend(s.tolerances.iter().map(|t| format!("det_{t}")));
    header.extend(["failures", "crb_full", "crb_sketch", "compression"].iter().map(|s| s.to_string()));
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    for r in &rows {
        let mut row = vec![
            r.n.to_string(),
            num(r.sbr),
            r.two_m.map(|v| v.to_string()).unwrap_or_default(),
            r.method.into(),
            num(r.rmse),
        ];
        row.extend(r.detection.iter().map(|&d| num(d)));
        row.extend([r.failures.to_string(), num(r.crb_full), num(r.crb_sketch), num(r.compression)]);
        table.push(row);
    }
    table.write(&run.out(&format!("{prefix}.csv")))?;

    // level-set curves: smallest 2m reaching each RMSE level, per SBR
    let levels = s.tolerances.clone();
    for &n in &s.ns {
        for &level in &levels {
            let mut series = Vec::new();
            for method in crate::experiments::CONTOUR_SKETCH_METHODS {
                let points = s
                    .sbrs
                    .iter()
                    .filter_map(|&sbr| {
                        rows.iter()
                            .filter(|r| r.n == n && r.sbr == sbr && r.method == method && r.rmse <= level)
                            .filter_map(|r| r.two_m)
                            .min()
                            .map(|m| (sbr, m as f64))
                    })
                    .collect();
                series.push(Series {
                    label: method.into(),
                    points,
                });
            }
            line_plot(
                &run.out(&format!("{prefix}_n{n}_rmse{level}.svg")),
                &LinePlot {
                    title: &format!("RMSE <= {level} bins, n = {n}"),
                    x_label: "SBR",
                    y_label: "smallest 2m",
                    log_x: true,
                    log_y: false,
                },
                &series,
            )?;
        }
    }
    println!(
        "wrote {} rows to {} in {:.1}s",
        rows.len(),
        run.out(&format!("{prefix}.csv")).display(),
        start.elapsed().as_secs_f64()
    );
    write_config_echo(run, &prefix)
}

fn write_ratio(
    run: &Run,
    prefix: &str,
    t: usize,
    rows: &[RatioRow],
    reference: &str,
    other: Option<&str>,
    title: &str,
) -> Result<()> {
    let mut header = vec!["SBR", "n", "2m", "rmse_sketch"];
    let ref_col = format!("rmse_{reference}");
    header.push(&ref_col);
    let other_col = other.map(|o| format!("rmse_{o}"));
    if let Some(o) = &other_col {
        header.push(o);
    }
    header.extend(["ratio", "compression"]);
    let mut table = Table::new(&header);
    for r in rows {
        let mut row = vec![num(r.sbr), r.n.to_string(), r.two_m.to_string(), num(r.rmse_sketch), num(r.rmse_reference)];
        if other.is_some() {
            row.push(num(r.rmse_other));
        }
        row.push(num(r.ratio));
        row.push(num(compression(r.two_m, t, r.n as f64)));
        table.push(row);
    }
    table.write(&run.out(&format!("{prefix}.csv")))?;
    let mut sbrs: Vec<f64> = rows.iter().map(|r| r.sbr).collect();
    sbrs.dedup();
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let values: Vec<Vec<f64>> = sbrs
        .iter()
        .map(|&sbr| {
            ns.iter()
                .map(|&n| {
                    rows.iter()
                        .find(|r| r.sbr == sbr && r.n == n)
                        .map_or(f64::NAN, |r| r.ratio)
                })
                .collect()
        })
        .collect();
    heatmap(
        &run.out(&format!("{prefix}.svg")),
        title,
        "photons n",
        "SBR",
        &ns.iter().map(|n| n.to_string()).collect::<Vec<_>>(),
        &sbrs.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>(),
        &values,
    )?;
    let mut ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    println!(
        "wrote {} cells to {}; median ratio {:.3}, max {:.3}",
        rows.len(),
        run.out(&format!("{prefix}.csv")).display(),
        ratios[ratios.len() / 2],
        ratios[ratios.len() - 1]
    );
    write_config_echo(run, prefix)
}

pub fn starved(run: &Run) -> Result<()> {
    run.check(&keys(&["T", "irf", "n", "sbr", "trials"], &FIT_KEYS))?;
    let c = &run.config;
    let t: usize = c.require("T")?;
    let (irf, _) = c.irf("irf", t)?;
    let s = StarvedSettings {
        irf,
        ns: c.counts("n")?,
        sbrs: c.list("sbr")?,
        trials: c.require("trials")?,
        seed: run.seed,
        fit: run.fit_options()?,
    };
    if s.ns.contains(&0) {
        bail!("photon counts must be positive");
    }
    for &n in &s.ns {
        if 2 * starved_m(n) != n {
            eprintln!("note: n={n} uses 2m={}", 2 * starved_m(n));
        }
    }
    let rows = run_starved(&s)?;
    run.ensure_out_dir()?;
    let prefix = run.prefix("starved")?;
    write_ratio(run, &prefix, t, &rows, "mf", Some("max_peak"), "RMSE ratio, sketch / matched filter")
}

pub fn ifft_compare(run: &Run) -> Result<()> {
    run.check(&keys(&["T", "irf", "m", "n", "sbr", "trials", "correction"], &FIT_KEYS))?;
    let c = &run.config;
    let t: usize = c.require("T")?;
    let (irf, _) = c.irf("irf", t)?;
    let s = IfftSettings {
        irf,
        m: c.get_or("m", 2)?,
        ns: c.counts("n")?,
        sbrs: c.list("sbr")?,
        trials: c.require("trials")?,
        seed: run.seed,
        correction: c
            .get_or("correction", String::from("lowpass"))?
            .parse()
            .map_err(anyhow::Error::msg)?,
        fit: run.fit_options()?,
    };
    let rows = run_ifft_compare(&s)?;
    run.ensure_out_dir()?;
    let prefix = run.prefix("ifft_compare")?;
    write_ratio(run, &prefix, t, &rows, "ifft", None, "RMSE ratio, sketch / iFFT")
}

pub fn pulse_width(run: &Run) -> Result<()> {
    run.check(&keys(
        &["T", "irf", "wide_irf", "sbr", "n", "two_m", "trials", "tolerance"],
        &FIT_KEYS,
    ))?;
    let c = &run.config;
    let t: usize = c.require("T")?;
    let (narrow, narrow_tag) = c.irf("irf", t)?;
    let (wide, wide_tag) = c.irf("wide_irf", t)?;
    let two_m: usize = c.require("two_m")?;
    half(two_m)?;
    let s = PulseWidthSettings {
        narrow,
        wide,
        narrow_tag,
        wide_tag,
        sbr: parse_sbr(c.get("sbr").unwrap_or("1"))?,
        n: c.require("n")?,
        two_m,
        trials: c.require("trials")?,
        seed: run.seed,
        tolerance: c.get_or("tolerance", 10.0)?,
        fit: run.fit_options()?,
    };
    let rows = run_pulse_width(&s)?;
    run.ensure_out_dir()?;
    let prefix = run.prefix("pulse_width")?;
    let mut table = Table::new(&["method", "irf_tag", "rmse", "detection", "compression"]);
    for r in &rows {
        let comp = if r.method == "matched-filter" {
            1.0
        } else {
            compression(two_m, t, s.n as f64)
        };
        table.push(vec![r.method.into(), r.irf_tag.clone(), num(r.rmse), num(r.detection), num(comp)]);
        println!("{:15} {:18} rmse {:9.3} detection {:.3}", r.method, r.irf_tag, r.rmse, r.detection);
    }
    table.write(&run.out(&format!("{prefix}.csv")))?;
    write_config_echo(run, &prefix)
}
