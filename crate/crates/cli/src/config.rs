//! Command-line flags, `key=value` config files and their merge.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use qreset::ModelParams;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "qreset", version, about = "Qubit under continuous measurement: trajectories, densities and counting statistics")]
pub struct Cli {
    #[command(flatten)]
    pub flags: Flags,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// No-click angle θ_t and ground-state population |a(t)|².
    Flow,
    /// Survival probability S(t).
    Survival,
    /// Monte Carlo ensemble: histogram, atom and mean count.
    Simulate,
    /// Mean count, mean click rate and P[N_t = n] for n ≤ 2.
    Counting,
    /// P(θ, t) from the renewal and spectral solutions, with optional Monte Carlo.
    Density,
    /// Solves a generator given in a spec file on a grid.
    Resolvent {
        /// `key=value` file with drift, diffusion, jump_rate, reset and advection.
        #[arg(long)]
        spec: PathBuf,
    },
    /// Runs the acceptance suite.
    Verify {
        /// Smaller ensembles and grids; same tolerances.
        #[arg(long)]
        quick: bool,
        /// Run only these criteria (1 to 11).
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Flow => "flow",
            Command::Survival => "survival",
            Command::Simulate => "simulate",
            Command::Counting => "counting",
            Command::Density => "density",
            Command::Resolvent { .. } => "resolvent",
            Command::Verify { .. } => "verify",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Every flag is optional so that unset flags fall through to the config
/// file and then to the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// `key=value` file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub gamma0: Option<f64>,
    #[arg(long, global = true, conflicts_with = "lambda")]
    pub gamma: Option<f64>,
    /// γ/(4γ₀); sets γ = 4γ₀λ.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Snapshot time.
    #[arg(long, global = true)]
    pub t: Option<f64>,
    /// End of the time axis for curves and ensembles.
    #[arg(long = "t-max", global = true)]
    pub t_max: Option<f64>,
    /// Fixed-step simulation with this step; event-driven when unset.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long = "n-traj", global = true)]
    pub n_traj: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    /// Points on the time or angle axis; cells for `resolvent`.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Tower truncation of the spectral series; adaptive when unset.
    #[arg(long = "trunc-M", global = true)]
    pub trunc_m: Option<usize>,
    /// Laplace-inversion nodes.
    #[arg(long, global = true)]
    pub nodes: Option<usize>,
    /// Initial angle.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub theta0: Option<f64>,
    /// Output path stem; `.csv` and `.json` are appended.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

/// A usage or configuration problem (exit code 2).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// How the measurement strength was specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strength {
    Gamma(f64),
    Lambda(f64),
}

/// Effective configuration after merging; echoed into every JSON summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub gamma0: f64,
    pub strength: Option<Strength>,
    pub t: Option<f64>,
    pub t_max: Option<f64>,
    pub dt: Option<f64>,
    pub n_traj: Option<u64>,
    pub seed: u64,
    pub bins: Option<usize>,
    pub grid: Option<usize>,
    pub trunc_m: Option<usize>,
    pub nodes: Option<usize>,
    pub theta0: f64,
    pub out: PathBuf,
    pub format: Format,
}

impl RunConfig {
    /// Model parameters; required by every subcommand except `verify`.
    pub fn params(&self) -> Result<ModelParams, ConfigError> {
        let p = match self.strength {
            Some(Strength::Gamma(g)) => ModelParams::new(self.gamma0, g),
            Some(Strength::Lambda(l)) => ModelParams::from_lambda(self.gamma0, l),
            None => return Err(bad("one of --gamma or --lambda is required")),
        };
        p.map_err(|e| bad(e.to_string()))
    }
}

/// Parses a `key=value` file. Blank lines and `#` comments are skipped;
/// `-` and `_` are interchangeable in keys.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("{}:{}: expected key=value", origin.display(), i + 1)))?;
        let key = k.trim().replace('-', "_");
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(bad(format!("{}:{}: duplicate key {key}", origin.display(), i + 1)));
        }
    }
    Ok(out)
}

fn take<T: std::str::FromStr>(file: &mut BTreeMap<String, String>, key: &str) -> Result<Option<T>, ConfigError> {
    match file.remove(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| bad(format!("config key {key}: cannot parse {v:?}"))),
    }
}

/// Merges flags over the config file over defaults.
pub fn resolve(flags: &Flags, command: &Command) -> Result<RunConfig, ConfigError> {
    let mut file = match &flags.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
            parse_key_values(&text, path)?
        }
        None => BTreeMap::new(),
    };
    let gamma0 = flags.gamma0.or(take(&mut file, "gamma0")?).unwrap_or(1.0);
    let file_gamma: Option<f64> = take(&mut file, "gamma")?;
    let file_lambda: Option<f64> = take(&mut file, "lambda")?;
    if file_gamma.is_some() && file_lambda.is_some() {
        return Err(bad("config file sets both gamma and lambda"));
    }
    // a strength flag replaces the file's strength whichever form either uses
    let strength = match (flags.gamma, flags.lambda) {
        (Some(g), _) => Some(Strength::Gamma(g)),
        (_, Some(l)) => Some(Strength::Lambda(l)),
        _ => file_gamma.map(Strength::Gamma).or(file_lambda.map(Strength::Lambda)),
    };
    let format = match flags.format {
        Some(f) => f,
        None => match file.remove("format").as_deref() {
            None | Some("csv") => Format::Csv,
            Some("json") => Format::Json,
            Some(other) => return Err(bad(format!("config key format: expected csv or json, got {other:?}"))),
        },
    };
    let cfg = RunConfig {
        command: command.name().to_string(),
        gamma0,
        strength,
        t: flags.t.or(take(&mut file, "t")?),
        t_max: flags.t_max.or(take(&mut file, "t_max")?),
        dt: flags.dt.or(take(&mut file, "dt")?),
        n_traj: flags.n_traj.or(take(&mut file, "n_traj")?),
        seed: flags.seed.or(take(&mut file, "seed")?).unwrap_or(0),
        bins: flags.bins.or(take(&mut file, "bins")?),
        grid: flags.grid.or(take(&mut file, "grid")?),
        trunc_m: flags.trunc_m.or(take(&mut file, "trunc_m")?),
        nodes: flags.nodes.or(take(&mut file, "nodes")?),
        theta0: flags.theta0.or(take(&mut file, "theta0")?).unwrap_or(0.0),
        out: flags
            .out
            .clone()
            .or(take(&mut file, "out")?)
            .unwrap_or_else(|| PathBuf::from(command.name())),
        format,
    };
    if let Some(key) = file.keys().next() {
        return Err(bad(format!("unknown config key {key}")));
    }
    for (name, v) in [("t", cfg.t), ("t-max", cfg.t_max)] {
        if v.is_some_and(|v| !(v.is_finite() && v >= 0.0)) {
            return Err(bad(format!("--{name} must be finite and >= 0")));
        }
    }
    if cfg.dt.is_some_and(|v| !(v.is_finite() && v > 0.0)) {
        return Err(bad("--dt must be finite and > 0"));
    }
    if !cfg.theta0.is_finite() {
        return Err(bad("--theta0 must be finite"));
    }
    for (name, v) in [("bins", cfg.bins), ("grid", cfg.grid), ("trunc-M", cfg.trunc_m), ("nodes", cfg.nodes)] {
        if v == Some(0) {
            return Err(bad(format!("--{name} must be >= 1")));
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(args: &[&str]) -> (Flags, Command) {
        let cli = Cli::try_parse_from(std::iter::once("qreset").chain(args.iter().copied())).unwrap();
        (cli.flags, cli.command)
    }

    #[test]
    fn key_values() {
        let m = parse_key_values("# c\n lambda = 0.5 \n\nt-max=3 # trailing\n", Path::new("x")).unwrap();
        assert_eq!(m["lambda"], "0.5");
        assert_eq!(m["t_max"], "3");
        assert!(parse_key_values("novalue\n", Path::new("x")).is_err());
        assert!(parse_key_values("a=1\na=2\n", Path::new("x")).is_err());
    }

    #[test]
    fn defaults() {
        let (f, c) = flags(&["survival", "--lambda", "0.5"]);
        let cfg = resolve(&f, &c).unwrap();
        assert_eq!(cfg.gamma0, 1.0);
        assert_eq!(cfg.strength, Some(Strength::Lambda(0.5)));
        assert_eq!(cfg.out, PathBuf::from("survival"));
        assert_eq!(cfg.format, Format::Csv);
        assert_eq!(cfg.params().unwrap().gamma(), 2.0);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "gamma = 3\nseed = 9\nt-max = 4\n").unwrap();
        let cfg_arg = path.to_str().unwrap();
        let (f, c) = flags(&["flow", "--config", cfg_arg, "--lambda", "1", "--seed", "2"]);
        let cfg = resolve(&f, &c).unwrap();
        assert_eq!(cfg.strength, Some(Strength::Lambda(1.0)));
        assert_eq!(cfg.seed, 2);
        assert_eq!(cfg.t_max, Some(4.0));
        let (f, c) = flags(&["flow", "--config", cfg_arg]);
        assert_eq!(resolve(&f, &c).unwrap().strength, Some(Strength::Gamma(3.0)));
    }

    #[test]
    fn rejects_bad_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "gamma = 3\nlambda = 1\n").unwrap();
        let (f, c) = flags(&["flow", "--config", path.to_str().unwrap()]);
        assert!(resolve(&f, &c).is_err());
        std::fs::write(&path, "colour = red\n").unwrap();
        assert!(resolve(&f, &c).is_err());
        let (f, c) = flags(&["flow", "--grid", "0", "--lambda", "1"]);
        assert!(resolve(&f, &c).is_err());
        let (f, c) = flags(&["flow"]);
        assert!(resolve(&f, &c).unwrap().params().is_err());
        assert!(Cli::try_parse_from(["qreset", "flow", "--gamma", "1", "--lambda", "1"]).is_err());
    }
}
