//! Run configuration shared by all CLI subcommands: a line-oriented
//! `key = value` file, overridden by command-line flags, with the paper's
//! experimental settings as defaults.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::model::ExampleTag;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("malformed value for key `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("malformed line {0}: expected `key = value`")]
    BadLine(usize),
    #[error("invalid value for `{key}`: {message}")]
    OutOfRange { key: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    Filter,
    Estimate,
    Fisher,
    McTable,
    Converge,
    Hist,
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Filter => "filter",
            Subcommand::Estimate => "estimate",
            Subcommand::Fisher => "fisher",
            Subcommand::McTable => "mc-table",
            Subcommand::Converge => "converge",
            Subcommand::Hist => "hist",
        };
        f.write_str(s)
    }
}

impl FromStr for Subcommand {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simulate" => Ok(Subcommand::Simulate),
            "filter" => Ok(Subcommand::Filter),
            "estimate" => Ok(Subcommand::Estimate),
            "fisher" => Ok(Subcommand::Fisher),
            "mc-table" => Ok(Subcommand::McTable),
            "converge" => Ok(Subcommand::Converge),
            "hist" => Ok(Subcommand::Hist),
            other => Err(format!("unknown subcommand `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Kalman,
    Wonham,
    Particle,
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FilterKind::Kalman => "kalman",
            FilterKind::Wonham => "wonham",
            FilterKind::Particle => "particle",
        };
        f.write_str(s)
    }
}

impl FromStr for FilterKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kalman" => Ok(FilterKind::Kalman),
            "wonham" => Ok(FilterKind::Wonham),
            "particle" => Ok(FilterKind::Particle),
            other => Err(format!("unknown filter `{other}`")),
        }
    }
}

fn example_name(tag: ExampleTag) -> &'static str {
    match tag {
        ExampleTag::Example1 => "example1",
        ExampleTag::Example2 => "example2",
        ExampleTag::Example3 => "example3",
        ExampleTag::Custom => "custom",
    }
}

fn parse_example(s: &str) -> Result<ExampleTag, String> {
    match s {
        "example1" => Ok(ExampleTag::Example1),
        "example2" => Ok(ExampleTag::Example2),
        "example3" => Ok(ExampleTag::Example3),
        other => Err(format!("unknown example `{other}`")),
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub example: ExampleTag,
    /// True (data-generating) parameter.
    pub alpha: f64,
    /// Filter parameter; defaults to `alpha`.
    pub theta: f64,
    pub t_total: f64,
    pub delta: f64,
    pub dt: f64,
    pub sigma_obs: f64,
    pub sigma_fast: f64,
    pub seed: u64,
    pub n_replicates: usize,
    pub n_particles: usize,
    pub n_bins: usize,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub deltas: Vec<f64>,
    /// True-parameter values for the `mc-table` sweep.
    pub alphas: Vec<f64>,
    pub filter: FilterKind,
    pub output: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::BadLine(lineno + 1))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

struct Raw {
    example: Option<ExampleTag>,
    alpha: Option<f64>,
    theta: Option<f64>,
    t_total: Option<f64>,
    delta: Option<f64>,
    dt: Option<f64>,
    sigma_obs: Option<f64>,
    sigma_fast: Option<f64>,
    seed: Option<u64>,
    n_replicates: Option<usize>,
    n_particles: Option<usize>,
    n_bins: Option<usize>,
    theta_lo: Option<f64>,
    theta_hi: Option<f64>,
    deltas: Option<Vec<f64>>,
    alphas: Option<Vec<f64>>,
    filter: Option<FilterKind>,
    output: Option<PathBuf>,
    input: Option<PathBuf>,
    subcommand: Option<Subcommand>,
}

impl Raw {
    fn empty() -> Self {
        Self {
            example: None,
            alpha: None,
            theta: None,
            t_total: None,
            delta: None,
            dt: None,
            sigma_obs: None,
            sigma_fast: None,
            seed: None,
            n_replicates: None,
            n_particles: None,
            n_bins: None,
            theta_lo: None,
            theta_hi: None,
            deltas: None,
            alphas: None,
            filter: None,
            output: None,
            input: None,
            subcommand: None,
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::BadValue {
                key: key.to_string(),
                message: e.to_string(),
            })
        }
        match key {
            "example" => {
                self.example = Some(parse_example(value).map_err(|m| ConfigError::BadValue {
                    key: key.into(),
                    message: m,
                })?)
            }
            "alpha" => self.alpha = Some(num(key, value)?),
            "theta" => self.theta = Some(num(key, value)?),
            "T" => self.t_total = Some(num(key, value)?),
            "delta" => self.delta = Some(num(key, value)?),
            "dt" => self.dt = Some(num(key, value)?),
            "Sigma" => self.sigma_obs = Some(num(key, value)?),
            "sigma" => self.sigma_fast = Some(num(key, value)?),
            "seed" => self.seed = Some(num(key, value)?),
            "n_replicates" => self.n_replicates = Some(num(key, value)?),
            "n_particles" => self.n_particles = Some(num(key, value)?),
            "n_bins" => self.n_bins = Some(num(key, value)?),
            "theta_lo" => self.theta_lo = Some(num(key, value)?),
            "theta_hi" => self.theta_hi = Some(num(key, value)?),
            "deltas" => {
                let parsed: Result<Vec<f64>, _> =
                    value.split(',').map(|p| p.trim().parse()).collect();
                self.deltas = Some(parsed.map_err(|e| ConfigError::BadValue {
                    key: key.into(),
                    message: format!("{e}"),
                })?);
            }
            "alphas" => {
                let parsed: Result<Vec<f64>, _> =
                    value.split(',').map(|p| p.trim().parse()).collect();
                self.alphas = Some(parsed.map_err(|e| ConfigError::BadValue {
                    key: key.into(),
                    message: format!("{e}"),
                })?);
            }
            "filter" => {
                self.filter = Some(value.parse().map_err(|m: String| ConfigError::BadValue {
                    key: key.into(),
                    message: m,
                })?)
            }
            "output" => self.output = Some(PathBuf::from(value)),
            "input" => self.input = Some(PathBuf::from(value)),
            "subcommand" => {
                self.subcommand =
                    Some(value.parse().map_err(|m: String| ConfigError::BadValue {
                        key: key.into(),
                        message: m,
                    })?)
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}

fn default_bounds(tag: ExampleTag) -> (f64, f64) {
    match tag {
        ExampleTag::Example3 => (0.01, 3.5),
        _ => (-2.0, 3.0),
    }
}

/// Builds a validated [`RunConfig`] from config-file pairs and flag
/// overrides (flags win). `seed` falls back to the `MSFM_SEED` environment
/// variable, then to 0.
pub fn parse_config(
    subcommand: Subcommand,
    file_pairs: &[(String, String)],
    overrides: &[(String, String)],
) -> Result<RunConfig, ConfigError> {
    let mut raw = Raw::empty();
    for (k, v) in file_pairs.iter().chain(overrides) {
        raw.set(k, v)?;
    }
    let example = raw.example.ok_or(ConfigError::MissingKey("example"))?;
    let (blo, bhi) = default_bounds(example);
    let alpha = raw.alpha.unwrap_or(match example {
        ExampleTag::Example3 => 0.7,
        _ => 0.0,
    });
    let seed = match raw.seed {
        Some(s) => s,
        None => std::env::var("MSFM_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0),
    };
    let cfg = RunConfig {
        subcommand: raw.subcommand.unwrap_or(subcommand),
        example,
        alpha,
        theta: raw.theta.unwrap_or(alpha),
        t_total: raw.t_total.unwrap_or(25.0),
        delta: raw.delta.unwrap_or(0.01),
        dt: raw.dt.unwrap_or(0.02),
        sigma_obs: raw.sigma_obs.unwrap_or(0.1),
        sigma_fast: raw.sigma_fast.unwrap_or(0.1),
        seed,
        n_replicates: raw.n_replicates.unwrap_or(500),
        n_particles: raw.n_particles.unwrap_or(1000),
        n_bins: raw.n_bins.unwrap_or(25),
        theta_lo: raw.theta_lo.unwrap_or(blo),
        theta_hi: raw.theta_hi.unwrap_or(bhi),
        deltas: raw.deltas.unwrap_or_else(|| vec![0.1, 0.04, 0.01]),
        alphas: raw.alphas.unwrap_or_else(|| match example {
            ExampleTag::Example1 => vec![0.0, 1.0, 1.5],
            ExampleTag::Example2 => vec![0.5, 1.0, 1.5],
            _ => vec![0.7, 1.0, 1.8],
        }),
        filter: raw.filter.unwrap_or(match example {
            ExampleTag::Example3 => FilterKind::Wonham,
            _ => FilterKind::Kalman,
        }),
        output: raw.output,
        input: raw.input,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: String| ConfigError::OutOfRange {
            key: key.into(),
            message,
        };
        if self.delta <= 0.0 || self.delta > 1.0 {
            return Err(bad("delta", format!("{} not in (0, 1]", self.delta)));
        }
        if self.dt <= 0.0 {
            return Err(bad("dt", "must be > 0".into()));
        }
        if self.t_total < self.dt {
            return Err(bad("T", "must be >= dt".into()));
        }
        if self.sigma_obs <= 0.0 {
            return Err(bad("Sigma", "must be > 0".into()));
        }
        if self.sigma_fast < 0.0 {
            return Err(bad("sigma", "must be >= 0".into()));
        }
        if self.theta_lo >= self.theta_hi {
            return Err(bad("theta_lo", "bounds must satisfy lo < hi".into()));
        }
        if self.n_replicates < 2 {
            return Err(bad("n_replicates", "must be >= 2".into()));
        }
        if self.n_particles < 2 {
            return Err(bad("n_particles", "must be >= 2".into()));
        }
        if self.n_bins < 2 {
            return Err(bad("n_bins", "must be >= 2".into()));
        }
        if self.deltas.is_empty() || self.deltas.iter().any(|&d| d <= 0.0 || d > 1.0) {
            return Err(bad("deltas", "must be nonempty, each in (0, 1]".into()));
        }
        if self.alphas.is_empty() {
            return Err(bad("alphas", "must be nonempty".into()));
        }
        if self.example == ExampleTag::Example3 && self.alpha < 0.0 {
            return Err(bad("alpha", "example3 needs alpha >= 0".into()));
        }
        Ok(())
    }

    /// Emits the configuration as `key = value` lines; `parse` of the result
    /// reproduces the configuration exactly.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("subcommand", self.subcommand.to_string());
        push("example", example_name(self.example).to_string());
        push("alpha", self.alpha.to_string());
        push("theta", self.theta.to_string());
        push("T", self.t_total.to_string());
        push("delta", self.delta.to_string());
        push("dt", self.dt.to_string());
        push("Sigma", self.sigma_obs.to_string());
        push("sigma", self.sigma_fast.to_string());
        push("seed", self.seed.to_string());
        push("n_replicates", self.n_replicates.to_string());
        push("n_particles", self.n_particles.to_string());
        push("n_bins", self.n_bins.to_string());
        push("theta_lo", self.theta_lo.to_string());
        push("theta_hi", self.theta_hi.to_string());
        push(
            "deltas",
            self.deltas
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        push(
            "alphas",
            self.alphas
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        push("filter", self.filter.to_string());
        if let Some(p) = &self.output {
            push("output", p.display().to_string());
        }
        if let Some(p) = &self.input {
            push("input", p.display().to_string());
        }
        out
    }

    /// Parses an emitted configuration.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let pairs = parse_kv(text)?;
        let sub = pairs
            .iter()
            .find(|(k, _)| k == "subcommand")
            .ok_or(ConfigError::MissingKey("subcommand"))?
            .1
            .parse()
            .map_err(|m: String| ConfigError::BadValue {
                key: "subcommand".into(),
                message: m,
            })?;
        parse_config(sub, &pairs, &[])
    }
}

/// Formats a float with 15 significant digits, the CSV output convention.
pub fn fmt_sig15(x: f64) -> String {
    format!("{x:.14e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_applied_from_flags_only() {
        let overrides = vec![
            ("example".to_string(), "example1".to_string()),
            ("alpha".to_string(), "0".to_string()),
            ("seed".to_string(), "7".to_string()),
        ];
        let cfg = parse_config(Subcommand::Simulate, &[], &overrides).unwrap();
        assert_eq!(cfg.t_total, 25.0);
        assert_eq!(cfg.delta, 0.01);
        assert_eq!(cfg.dt, 0.02);
        assert_eq!(cfg.sigma_obs, 0.1);
        assert_eq!(cfg.sigma_fast, 0.1);
        assert_eq!(cfg.n_replicates, 500);
        assert_eq!(cfg.n_particles, 1000);
        assert_eq!(cfg.n_bins, 25);
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn negative_delta_rejected_with_key_name() {
        let pairs = parse_kv("example = example1\ndelta = -1\n").unwrap();
        let err = parse_config(Subcommand::Simulate, &pairs, &[]).unwrap_err();
        assert!(err.to_string().contains("delta"), "{err}");
    }

    #[test]
    fn unknown_key_is_named() {
        let pairs = parse_kv("example = example1\nglorb = 3\n").unwrap();
        let err = parse_config(Subcommand::Simulate, &pairs, &[]).unwrap_err();
        assert!(err.to_string().contains("glorb"));
    }

    #[test]
    fn flags_override_file_values() {
        let pairs = parse_kv("example = example1\nalpha = 0.5\n").unwrap();
        let overrides = vec![("alpha".to_string(), "1.5".to_string())];
        let cfg = parse_config(Subcommand::Estimate, &pairs, &overrides).unwrap();
        assert_eq!(cfg.alpha, 1.5);
    }

    #[test]
    fn table1_row2_settings() {
        let text = "example = example1\nalpha = 1\nn_replicates = 500\n";
        let pairs = parse_kv(text).unwrap();
        let cfg = parse_config(Subcommand::McTable, &pairs, &[]).unwrap();
        assert_eq!(cfg.alpha, 1.0);
        assert_eq!(cfg.n_replicates, 500);
        assert_eq!(cfg.t_total, 25.0);
        assert_eq!(cfg.delta, 0.01);
    }

    #[test]
    fn emit_parse_round_trip() {
        let overrides = vec![
            ("example".to_string(), "example2".to_string()),
            ("alpha".to_string(), "1.25".to_string()),
            ("seed".to_string(), "99".to_string()),
            ("output".to_string(), "out.csv".to_string()),
            ("deltas".to_string(), "0.2,0.05".to_string()),
        ];
        let cfg = parse_config(Subcommand::Converge, &[], &overrides).unwrap();
        let round = RunConfig::parse(&cfg.emit()).unwrap();
        assert_eq!(cfg, round);
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = "# a comment\n\nexample = example1  # trailing\n";
        let pairs = parse_kv(text).unwrap();
        assert_eq!(pairs.len(), 1);
    }
}
