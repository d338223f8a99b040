//! Command-line flags, the TOML config file, and their merge into a [`RunConfig`].

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Universal self-attention approximator on a grid.
    Approximate,
    /// Cross-attention approximator of a pair target.
    Cross,
    /// Self-attention approximator on a sphere cover.
    Cover,
    /// Max-affine partition and value lookup for a step function.
    IndicatorDemo,
    /// Grid sizes times temperatures.
    Sweep,
    /// Run the built-in property checks.
    Verify,
    /// Print the trainable-parameter count of a cover construction.
    ParamsCount,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Approximate => "approximate",
            Self::Cross => "cross",
            Self::Cover => "cover",
            Self::IndicatorDemo => "indicator-demo",
            Self::Sweep => "sweep",
            Self::Verify => "verify",
            Self::ParamsCount => "params-count",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "maxaffine-attn", version, about = "Explicit attention approximators and their error reports")]
pub struct Cli {
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Registry name, optionally with an argument (const:0.7).
    #[arg(long)]
    pub function: Option<String>,
    /// Token dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Sequence length.
    #[arg(long)]
    pub n: Option<usize>,
    /// Half-width of the input box [-D, D].
    #[arg(long = "D")]
    pub half_width: Option<f64>,
    /// Grid points per coordinate; a comma list for sweeps.
    #[arg(long = "P", value_delimiter = ',')]
    pub points: Vec<usize>,
    /// Number of cover centers (random when no cover file is given).
    #[arg(long)]
    pub centers: Option<usize>,
    /// Cover file: `radius r` then one center per line.
    #[arg(long)]
    pub cover: Option<PathBuf>,
    /// Softmax temperature; a comma list for sweeps.
    #[arg(long, value_delimiter = ',')]
    pub temperature: Vec<f64>,
    /// Target sup error; picks the temperature (and P when absent).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Exponent of the L_p error.
    #[arg(long)]
    pub p: Option<f64>,
    /// Monte Carlo draws for the error estimates.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum Number {
    Int(i64),
    Float(f64),
}

impl Number {
    fn value(self) -> f64 {
        match self {
            Self::Int(i) => i as f64,
            Self::Float(f) => f,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            Self::One(x) => vec![x],
            Self::Many(v) => v,
        }
    }
}

/// Config file contents. Keys mirror the long flag names.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    function: Option<String>,
    d: Option<usize>,
    n: Option<usize>,
    #[serde(rename = "D")]
    half_width: Option<Number>,
    #[serde(rename = "P")]
    points: Option<OneOrMany<usize>>,
    centers: Option<usize>,
    cover: Option<PathBuf>,
    temperature: Option<OneOrMany<Number>>,
    epsilon: Option<Number>,
    p: Option<Number>,
    samples: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    format: Option<Format>,
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub function: Option<String>,
    pub d: usize,
    pub n: usize,
    pub half_width: f64,
    pub points: Vec<usize>,
    pub centers: Option<usize>,
    pub cover: Option<PathBuf>,
    pub temperature: Vec<f64>,
    pub epsilon: Option<f64>,
    pub p: f64,
    pub samples: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl RunConfig {
    /// Defaults: `d = n = 1`, `D = 1`, `p = 2`, 10^4 samples, seed 0, CSV on stdout.
    pub fn new(command: Command) -> Self {
        Self {
            command,
            function: None,
            d: 1,
            n: 1,
            half_width: 1.0,
            points: Vec::new(),
            centers: None,
            cover: None,
            temperature: Vec::new(),
            epsilon: None,
            p: 2.0,
            samples: 10_000,
            seed: 0,
            out: None,
            format: Format::Csv,
        }
    }

    pub fn from_cli(cli: Cli) -> CliResult<Self> {
        let file = match &cli.flags.config {
            Some(path) => parse_file(path)?,
            None => FileConfig::default(),
        };
        let flags = cli.flags;
        let mut cfg = Self::new(cli.command);
        let pick_list = |flag: Vec<_>, file: Option<Vec<_>>| if flag.is_empty() { file.unwrap_or_default() } else { flag };

        cfg.function = flags.function.or(file.function);
        cfg.d = flags.d.or(file.d).unwrap_or(cfg.d);
        cfg.n = flags.n.or(file.n).unwrap_or(cfg.n);
        cfg.half_width = flags.half_width.or(file.half_width.map(Number::value)).unwrap_or(cfg.half_width);
        cfg.points = pick_list(flags.points, file.points.map(OneOrMany::into_vec));
        cfg.centers = flags.centers.or(file.centers);
        cfg.cover = flags.cover.or(file.cover);
        cfg.temperature = if flags.temperature.is_empty() {
            file.temperature
                .map(|t| t.into_vec().into_iter().map(Number::value).collect())
                .unwrap_or_default()
        } else {
            flags.temperature
        };
        cfg.epsilon = flags.epsilon.or(file.epsilon.map(Number::value));
        cfg.p = flags.p.or(file.p.map(Number::value)).unwrap_or(cfg.p);
        cfg.samples = flags.samples.or(file.samples).unwrap_or(cfg.samples);
        cfg.seed = flags.seed.or(file.seed).unwrap_or(cfg.seed);
        cfg.out = flags.out.or(file.out);
        cfg.format = flags.format.or(file.format).unwrap_or(cfg.format);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks shared by every command.
    pub fn validate(&self) -> CliResult<()> {
        if self.d == 0 || self.n == 0 {
            return Err(CliError::usage("d and n must be at least 1"));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(CliError::usage(format!("D must be positive, got {}", self.half_width)));
        }
        if self.points.contains(&0) {
            return Err(CliError::usage("P must be at least 1"));
        }
        if self.centers == Some(0) {
            return Err(CliError::usage("centers must be at least 1"));
        }
        if let Some(t) = self.temperature.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(CliError::usage(format!("temperature must be positive, got {t}")));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e < 1.0) {
                return Err(CliError::usage(format!("epsilon must lie in (0, 1), got {e}")));
            }
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(CliError::usage(format!("p must be at least 1, got {}", self.p)));
        }
        if self.samples == 0 {
            return Err(CliError::usage("samples must be at least 1"));
        }
        Ok(())
    }
}

fn parse_file(path: &Path) -> CliResult<FileConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(toml::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn parse(args: &[&str]) -> CliResult<RunConfig> {
        let mut full = vec!["maxaffine-attn"];
        full.extend_from_slice(args);
        RunConfig::from_cli(Cli::try_parse_from(full).map_err(|e| CliError::usage(e.to_string()))?)
    }

    #[test]
    fn flags_parse_lists() {
        let cfg = parse(&["sweep", "--function", "sinprod", "--n", "2", "--P", "4,8,16", "--epsilon", "0.1"]).unwrap();
        assert_eq!(cfg.command, Command::Sweep);
        assert_eq!(cfg.points, vec![4, 8, 16]);
        assert_eq!(cfg.epsilon, Some(0.1));
        assert_eq!(cfg.samples, 10_000);
    }

    #[test]
    fn flags_override_file() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "function = \"linear\"\nd = 2\nD = 2\nP = [2, 4]\ntemperature = 5\nseed = 9").unwrap();
        let path = file.path().to_str().unwrap();
        let cfg = parse(&["approximate", "--config", path, "--seed", "3"]).unwrap();
        assert_eq!(cfg.function.as_deref(), Some("linear"));
        assert_eq!((cfg.d, cfg.half_width, cfg.seed), (2, 2.0, 3));
        assert_eq!(cfg.points, vec![2, 4]);
        assert_eq!(cfg.temperature, vec![5.0]);
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "colour = 3").unwrap();
        let path = file.path().to_str().unwrap();
        assert!(matches!(parse(&["verify", "--config", path]), Err(CliError::Config(_))));
        assert!(parse(&["approximate", "--epsilon", "1.5"]).is_err());
        assert!(parse(&["approximate", "--p", "0.5"]).is_err());
        assert!(parse(&["approximate", "--d", "0"]).is_err());
        assert!(parse(&["nonsense"]).is_err());
    }
}
