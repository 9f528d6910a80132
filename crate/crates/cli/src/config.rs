//! Flat `key = value` experiment configs.
//!
//! Lines are `key = value`; `#` starts a comment. Every key can be
//! overridden on the command line as `--key value` or `--key=value`.
//!
//! Numeric lists accept three forms:
//!
//! ```text
//! 1,3,10            explicit values
//! 2:50:2            start:stop:step, stop included
//! logspace:0.01:100:9
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sketch_lidar::model::{exp_modified_gaussian_irf, gaussian_irf, read_irf_file};
use sketch_lidar::ImpulseResponse;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing required key '{0}'")]
    Missing(String),
    #[error("key '{key}': {message}")]
    Value { key: String, message: String },
    #[error("unknown key '{key}' (accepted: {accepted})")]
    Unknown { key: String, accepted: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] sketch_lidar::Error),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected 'key = value', got {line:?}"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            if values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: format!("duplicate key '{key}'"),
                });
            }
        }
        Ok(Config { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Applies `--key value` / `--key=value` pairs.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let flag = arg.strip_prefix("--").ok_or_else(|| ConfigError::Syntax {
                line: 0,
                message: format!("override {arg:?} must look like --key value"),
            })?;
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| ConfigError::Syntax {
                        line: 0,
                        message: format!("override --{flag} has no value"),
                    })?;
                    (flag.to_string(), v.clone())
                }
            };
            self.values.insert(key, value);
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.get(key).ok_or_else(|| ConfigError::Missing(key.into()))?;
        raw.parse().map_err(|e: T::Err| ConfigError::Value {
            key: key.into(),
            message: e.to_string(),
        })
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.get(key) {
            Some(_) => self.require(key),
            None => Ok(default),
        }
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.get(key).ok_or_else(|| ConfigError::Missing(key.into()))?;
        parse_list(raw).map_err(|message| ConfigError::Value {
            key: key.into(),
            message,
        })
    }

    pub fn list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            Some(_) => self.list(key),
            None => Ok(default.to_vec()),
        }
    }

    /// A list of nonnegative integers.
    pub fn counts(&self, key: &str) -> Result<Vec<usize>> {
        self.list(key)?
            .into_iter()
            .map(|v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(ConfigError::Value {
                        key: key.into(),
                        message: format!("{v} is not a nonnegative integer"),
                    })
                }
            })
            .collect()
    }

    pub fn irf(&self, key: &str, t: usize) -> Result<(ImpulseResponse, String)> {
        let raw = self.get(key).ok_or_else(|| ConfigError::Missing(key.into()))?;
        let spec: IrfSpec = raw.parse().map_err(|message| ConfigError::Value {
            key: key.into(),
            message,
        })?;
        Ok((spec.build(t)?, spec.tag()))
    }

    /// Rejects keys outside `accepted`, which catches typos in overrides.
    pub fn check_keys(&self, accepted: &[&str]) -> Result<()> {
        for key in self.values.keys() {
            if !accepted.contains(&key.as_str()) {
                return Err(ConfigError::Unknown {
                    key: key.clone(),
                    accepted: accepted.join(", "),
                });
            }
        }
        Ok(())
    }

    /// `key = value` lines, sorted by key.
    pub fn echo(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

pub fn parse_list(raw: &str) -> std::result::Result<Vec<f64>, String> {
    let num = |s: &str| -> std::result::Result<f64, String> {
        let v: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
        if v.is_nan() {
            return Err("NaN in list".into());
        }
        Ok(v)
    };
    let raw = raw.trim();
    if let Some(rest) = raw.strip_prefix("logspace:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err("logspace needs logspace:start:stop:count".into());
        }
        let (a, b) = (num(parts[0])?, num(parts[1])?);
        let count: usize = parts[2].trim().parse().map_err(|_| "bad logspace count".to_string())?;
        if a <= 0.0 || b <= 0.0 || count == 0 {
            return Err("logspace needs positive bounds and count".into());
        }
        if count == 1 {
            return Ok(vec![a]);
        }
        let (la, lb) = (a.log10(), b.log10());
        return Ok((0..count)
            .map(|i| 10f64.powf(la + (lb - la) * i as f64 / (count - 1) as f64))
            .collect());
    }
    if raw.contains(':') {
        let parts: Vec<&str> = raw.split(':').collect();
        if parts.len() != 3 {
            return Err("range needs start:stop:step".into());
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if step <= 0.0 || stop < start {
            return Err("range needs step > 0 and stop >= start".into());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        return Ok((0..count).map(|i| start + step * i as f64).collect());
    }
    let values: Vec<f64> = raw.split(',').map(num).collect::<std::result::Result<_, _>>()?;
    if values.is_empty() {
        return Err("empty list".into());
    }
    Ok(values)
}

/// Impulse-response specification.
#[derive(Debug, Clone, PartialEq)]
pub enum IrfSpec {
    /// Circular Gaussian with the given width in bins.
    Gaussian(f64),
    /// Short-tailed surrogate: Gaussian with σ = 0.01·T.
    Short,
    /// Long-tailed surrogate: exponentially modified Gaussian with
    /// σ = 0.01·T and decay 0.08·T.
    Long,
    /// Exponentially modified Gaussian `(σ, τ)` in bins.
    Emg(f64, f64),
    /// Text file of nonnegative samples, one per bin.
    File(PathBuf),
}

impl FromStr for IrfSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let float = |v: &str| v.parse::<f64>().map_err(|_| format!("bad IRF parameter {v:?}"));
        let parts: Vec<&str> = s.splitn(2, ':').collect();
        match parts.as_slice() {
            ["short"] => Ok(IrfSpec::Short),
            ["long"] => Ok(IrfSpec::Long),
            ["gaussian", sigma] => Ok(IrfSpec::Gaussian(float(sigma)?)),
            ["emg", rest] => {
                let (sigma, tau) = rest
                    .split_once(':')
                    .ok_or_else(|| "emg needs emg:<sigma>:<tau>".to_string())?;
                Ok(IrfSpec::Emg(float(sigma)?, float(tau)?))
            }
            ["file", path] => Ok(IrfSpec::File(PathBuf::from(path))),
            _ => Err(format!(
                "unknown IRF {s:?}; use gaussian:<sigma>, short, long, emg:<sigma>:<tau> or file:<path>"
            )),
        }
    }
}

impl IrfSpec {
    pub fn build(&self, t: usize) -> sketch_lidar::Result<ImpulseResponse> {
        match self {
            IrfSpec::Gaussian(sigma) => gaussian_irf(*sigma, t),
            IrfSpec::Short => gaussian_irf(0.01 * t as f64, t),
            IrfSpec::Long => exp_modified_gaussian_irf(0.01 * t as f64, 0.08 * t as f64, t),
            IrfSpec::Emg(sigma, tau) => exp_modified_gaussian_irf(*sigma, *tau, t),
            IrfSpec::File(path) => {
                let irf = read_irf_file(path)?;
                if irf.len() != t {
                    return Err(sketch_lidar::Error::InvalidArgument(format!(
                        "IRF file {} has {} bins, expected {t}",
                        path.display(),
                        irf.len()
                    )));
                }
                Ok(irf)
            }
        }
    }

    pub fn tag(&self) -> String {
        match self {
            IrfSpec::Gaussian(s) => format!("gaussian:{s}"),
            IrfSpec::Short => "short".into(),
            IrfSpec::Long => "long".into(),
            IrfSpec::Emg(s, t) => format!("emg:{s}:{t}"),
            IrfSpec::File(p) => format!("file:{}", p.display()),
        }
    }
}
