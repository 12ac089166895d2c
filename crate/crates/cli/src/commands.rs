//! Subcommand bodies. Each returns the tables and summary to write.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use qreset::counting::{count_prob, mean_count, mean_rate};
use qreset::noclick::{flow, propagator, survival, FlowMethod, WaveFunction};
use qreset::renewal::{density_closed, renewal_convolve, snapshot, steady_state, SnapshotMethod};
use qreset::resolvent::{discretize, invert_laplace, Advection, GeneratorSpec, ResetMeasure, DEFAULT_NODES};
use qreset::spectral::{build_basis_sub, finite_part, truncation_for, ContinuumBasis};
use qreset::trajectory::{empirical_atom_position, empirical_mean_count, ensemble, Scheme, TrajectoryConfig};
use qreset::{Angle, Error, ModelParams, Regime};

use crate::config::{parse_key_values, ConfigError, RunConfig};
use crate::output::{Artifact, Table};
use crate::verify;

#[derive(Debug)]
pub enum CommandError {
    /// Exit code 2.
    Usage(String),
    /// Exit code 1.
    Failed(String),
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommandError::Usage(m) | CommandError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError::Usage(e.0)
    }
}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument { .. } | Error::RegimeMismatch { .. } => CommandError::Usage(e.to_string()),
            _ => CommandError::Failed(e.to_string()),
        }
    }
}

type Outcome = Result<Artifact, CommandError>;

fn usage(msg: impl Into<String>) -> CommandError {
    CommandError::Usage(msg.into())
}

/// `n` evenly spaced points on `[0, end]`.
fn time_axis(end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![end];
    }
    (0..n).map(|k| end * k as f64 / (n - 1) as f64).collect()
}

/// Centres of `n` equal cells on `(−π, π]`.
fn angle_axis(n: usize) -> Vec<f64> {
    (0..n).map(|k| -PI + (k as f64 + 0.5) * 2.0 * PI / n as f64).collect()
}

fn echo_params(art: &mut Artifact, p: &ModelParams) {
    art.note("gamma0", p.gamma0());
    art.note("gamma", p.gamma());
    art.note("lambda", p.lambda());
    art.note("regime", format!("{:?}", p.regime()).to_lowercase());
}

pub fn flow_curves(cfg: &RunConfig) -> Outcome {
    let p = cfg.params()?;
    let th0 = Angle::new(cfg.theta0);
    let mut table = Table::new(&[("t", "time"), ("theta", "rad"), ("a_sq", "1")]);
    for t in time_axis(cfg.t_max.unwrap_or(10.0), cfg.grid.unwrap_or(401)) {
        let theta = flow(t, 0.0, th0, &p, FlowMethod::ClosedForm)?;
        let psi = propagator(t, WaveFunction::from_angle(th0), &p).normalized();
        table.push_all(&[t, theta.value(), psi.a.norm_sqr()]);
    }
    let mut art = Artifact::default();
    echo_params(&mut art, &p);
    art.note("fixed_points", format!("{:?}", p.fixed_points()));
    art.tables.push(("flow", table));
    Ok(art)
}

pub fn survival_curve(cfg: &RunConfig) -> Outcome {
    let p = cfg.params()?;
    let th0 = Angle::new(cfg.theta0);
    let mut table = Table::new(&[("t", "time"), ("S", "1")]);
    for t in time_axis(cfg.t_max.unwrap_or(10.0), cfg.grid.unwrap_or(401)) {
        table.push_all(&[t, survival(t, th0, &p)]);
    }
    let mut art = Artifact::default();
    echo_params(&mut art, &p);
    art.tables.push(("survival", table));
    Ok(art)
}

fn require_ground_start(cfg: &RunConfig, what: &str) -> Result<(), CommandError> {
    if Angle::new(cfg.theta0) != Angle::ZERO {
        return Err(usage(format!("{what} is defined for a start at theta0 = 0")));
    }
    Ok(())
}

pub fn counting_curves(cfg: &RunConfig) -> Outcome {
    let p = cfg.params()?;
    require_ground_start(cfg, "counting")?;
    let mut table = Table::new(&[
        ("t", "time"),
        ("mean_count", "1"),
        ("mean_rate", "1/time"),
        ("p0", "1"),
        ("p1", "1"),
        ("p2", "1"),
    ]);
    for t in time_axis(cfg.t_max.unwrap_or(5.0), cfg.grid.unwrap_or(101)) {
        table.push_all(&[
            t,
            mean_count(t, &p),
            mean_rate(t, &p),
            count_prob(0, t, &p)?,
            count_prob(1, t, &p)?,
            count_prob(2, t, &p)?,
        ]);
    }
    let mut art = Artifact::default();
    echo_params(&mut art, &p);
    art.note("long_time_rate", 0.5 * p.gamma());
    art.tables.push(("counting", table));
    Ok(art)
}

fn trajectory_config(cfg: &RunConfig, t_max: f64, grid: Vec<f64>, bins: usize) -> Result<TrajectoryConfig, CommandError> {
    let scheme = cfg.dt.map_or(Scheme::EventDriven, |dt| Scheme::Euler { dt });
    Ok(TrajectoryConfig::new(t_max, scheme, cfg.seed, grid)?.with_bins(bins)?)
}

pub fn simulate_ensemble(cfg: &RunConfig) -> Outcome {
    let p = cfg.params()?;
    let th0 = Angle::new(cfg.theta0);
    let t_max = cfg.t_max.or(cfg.t).unwrap_or(5.0);
    let t = cfg.t.unwrap_or(t_max);
    if t > t_max {
        return Err(usage(format!("--t {t} exceeds --t-max {t_max}")));
    }
    let n = cfg.n_traj.unwrap_or(10_000);
    if n == 0 {
        return Err(usage("--n-traj must be >= 1"));
    }
    let bins = cfg.bins.unwrap_or(250);
    let mut grid = time_axis(t_max, cfg.grid.unwrap_or(51));
    grid.push(t);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let tc = trajectory_config(cfg, t_max, grid, bins)?;
    let stats = ensemble(th0, n, &tc, &p)?;
    let at = stats.times.iter().find(|s| s.t == t).unwrap();
    let edges = stats.edges();
    let nf = n as f64;
    let mut hist = Table::new(&[("theta_lo", "rad"), ("theta_hi", "rad"), ("density", "1/rad"), ("stderr", "1/rad")]);
    for (k, &c) in at.bin_counts.iter().enumerate() {
        let w = edges[k + 1] - edges[k];
        let q = c as f64 / nf;
        hist.push_all(&[edges[k], edges[k + 1], q / w, (q * (1.0 - q) / nf).sqrt() / w]);
    }
    let ground = Angle::new(cfg.theta0) == Angle::ZERO;
    let mut mean = Table::new(&[("t", "time"), ("mean_count", "1"), ("stderr", "1"), ("exact", "1")]);
    for (tt, m, se) in empirical_mean_count(&stats) {
        mean.push(vec![Some(tt), Some(m), Some(se), ground.then(|| mean_count(tt, &p))]);
    }
    let mut art = Artifact::default();
    echo_params(&mut art, &p);
    art.note("t", t);
    art.note("n_traj", n);
    art.note("seed", cfg.seed);
    art.note("scheme", tc.scheme);
    let atom_mass = at.atom_count as f64 / nf;
    art.note("atom_mass", atom_mass);
    art.note("atom_mass_stderr", (atom_mass * (1.0 - atom_mass) / nf).sqrt());
    art.note("atom_mass_exact", survival(t, th0, &p));
    art.note("atom_position", empirical_atom_position(&stats, t).map(|a| a.value()));
    art.note("atom_position_exact", flow(t, 0.0, th0, &p, FlowMethod::ClosedForm)?.value());
    art.tables.push(("histogram", hist));
    art.tables.push(("mean", mean));
    Ok(art)
}

pub fn density_profile(cfg: &RunConfig) -> Outcome {
    let p = cfg.params()?;
    require_ground_start(cfg, "density")?;
    let t = cfg.t.unwrap_or(1.0);
    if t == 0.0 {
        return Err(usage("--t must be > 0 for density"));
    }
    let thetas = angle_axis(cfg.grid.unwrap_or(512));
    let snap = snapshot(t, &p, SnapshotMethod::Convolve)?;
    let analytic: Vec<f64> = thetas
        .iter()
        .map(|&x| {
            let a = Angle::new(x);
            density_closed(a, t, &p).or_else(|_| renewal_convolve(a, t, &p))
        })
        .collect::<Result<_, _>>()?;
    let mut art = Artifact::default();
    let spectral: Vec<Option<f64>> = match p.regime() {
        Regime::Sub if p.lambda() > 0.0 => {
            let m = match cfg.trunc_m {
                Some(m) => m,
                None => truncation_for(&p, 1e-4)?,
            };
            let basis = build_basis_sub(&p, m)?;
            art.note("spectral_truncation", m);
            thetas.iter().map(|&x| Some(finite_part(x, t, &basis))).collect()
        }
        Regime::Critical => ContinuumBasis::new(&p)?.density(&thetas, t, 1e-6)?.into_iter().map(Some).collect(),
        _ => vec![None; thetas.len()],
    };
    let steady: Vec<Option<f64>> = thetas.iter().map(|&x| steady_state(Angle::new(x), &p).ok()).collect();
    let (mut mc, mut mc_se) = (vec![None; thetas.len()], vec![None; thetas.len()]);
    if let Some(n) = cfg.n_traj.filter(|&n| n > 0) {
        let bins = cfg.bins.unwrap_or(250);
        let stats = ensemble(Angle::ZERO, n, &trajectory_config(cfg, t, vec![t], bins)?, &p)?;
        let ts = &stats.times[0];
        let edges = stats.edges();
        let nf = n as f64;
        for (i, &x) in thetas.iter().enumerate() {
            let k = edges.partition_point(|&e| e < x).clamp(1, bins) - 1;
            let w = edges[k + 1] - edges[k];
            let q = ts.bin_counts[k] as f64 / nf;
            mc[i] = Some(q / w);
            mc_se[i] = Some((q * (1.0 - q) / nf).sqrt() / w);
        }
        let m = ts.atom_count as f64 / nf;
        art.note("mc_atom_mass", m);
        art.note("mc_atom_stderr", (m * (1.0 - m) / nf).sqrt());
        art.note("n_traj", n);
    }
    let mut table = Table::new(&[
        ("theta", "rad"),
        ("analytic", "1/rad"),
        ("spectral", "1/rad"),
        ("mc_estimate", "1/rad"),
        ("mc_stderr", "1/rad"),
        ("steady", "1/rad"),
    ]);
    for i in 0..thetas.len() {
        table.push(vec![Some(thetas[i]), Some(analytic[i]), spectral[i], mc[i], mc_se[i], steady[i]]);
    }
    art.note("atom_position", snap.atom_position.value());
    art.note("atom_mass", snap.atom_mass);
    art.note("t", t);
    art.note("lambda", p.lambda());
    art.note("seed", cfg.seed);
    art.note("gamma0", p.gamma0());
    art.tables.push(("density", table));
    Ok(art)
}

type Field = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Compiles an expression in the single variable `theta`.
fn field(key: &str, text: &str) -> Result<Field, CommandError> {
    let expr = exmex::parse::<f64>(text).map_err(|e| usage(format!("{key}: {e}")))?;
    let vars: Vec<String> = exmex::Express::var_names(&expr).to_vec();
    match vars.as_slice() {
        [] => {
            let v = exmex::Express::eval(&expr, &[]).map_err(|e| usage(format!("{key}: {e}")))?;
            Ok(Arc::new(move |_| v))
        }
        [x] if x == "theta" => {
            // probe once so that evaluation errors surface as usage errors
            exmex::Express::eval(&expr, &[0.0]).map_err(|e| usage(format!("{key}: {e}")))?;
            Ok(Arc::new(move |th| exmex::Express::eval(&expr, &[th]).unwrap_or(f64::NAN)))
        }
        _ => Err(usage(format!("{key}: only the variable theta is allowed, found {vars:?}"))),
    }
}

/// Reads a generator spec file: `preset = qubit` starts from the qubit
/// generator; `drift`, `diffusion`, `jump_rate` (expressions in `theta`),
/// `reset` (`uniform`, `atom <angle>` or `density <expr>`) and `advection`
/// (`upwind` or `upwind-biased`) set or override parts.
pub fn read_generator(path: &Path, cfg: &RunConfig) -> Result<GeneratorSpec, CommandError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut kv = parse_key_values(&text, path)?;
    let mut spec = match kv.remove("preset").as_deref() {
        Some("qubit") => GeneratorSpec::qubit(&cfg.params()?),
        Some(other) => return Err(usage(format!("unknown preset {other:?}"))),
        None => GeneratorSpec::new(
            Arc::new(|_| 0.0),
            Arc::new(|_| 0.0),
            Arc::new(|_| 0.0),
            ResetMeasure::Density(Arc::new(|_| 0.5 / PI)),
        ),
    };
    for (key, value) in kv {
        match key.as_str() {
            "drift" => spec.drift = field(&key, &value)?,
            "diffusion" => spec.diffusion = field(&key, &value)?,
            "jump_rate" => spec.jump_rate = field(&key, &value)?,
            "reset" => {
                spec.reset = match value.split_once(char::is_whitespace) {
                    _ if value == "uniform" => ResetMeasure::Density(Arc::new(|_| 0.5 / PI)),
                    Some(("atom", a)) => {
                        let x: f64 = a.trim().parse().map_err(|_| usage(format!("reset: bad angle {a:?}")))?;
                        ResetMeasure::Atom(Angle::new(x))
                    }
                    Some(("density", e)) => ResetMeasure::Density(field("reset", e)?),
                    _ => return Err(usage(format!("reset: expected uniform, atom <angle> or density <expr>, got {value:?}"))),
                }
            }
            "advection" => {
                spec.advection = match value.as_str() {
                    "upwind" => Advection::Upwind,
                    "upwind-biased" | "upwind_biased" => Advection::UpwindBiased,
                    _ => return Err(usage(format!("advection: expected upwind or upwind-biased, got {value:?}"))),
                }
            }
            _ => return Err(usage(format!("{}: unknown key {key}", path.display()))),
        }
    }
    Ok(spec)
}

pub fn resolvent_solution(cfg: &RunConfig, spec_path: &Path) -> Outcome {
    let spec = read_generator(spec_path, cfg)?;
    let n = cfg.grid.unwrap_or(1024);
    let t = cfg.t.unwrap_or(1.0);
    if t == 0.0 {
        return Err(usage("--t must be > 0 for resolvent"));
    }
    let grid = discretize(&spec, n)?;
    let values = invert_laplace(Angle::new(cfg.theta0), t, &grid, cfg.nodes.unwrap_or(DEFAULT_NODES))?;
    let mut table = Table::new(&[("theta", "rad"), ("density", "1/rad")]);
    for (x, v) in grid.centres().into_iter().zip(&values) {
        table.push_all(&[x, *v]);
    }
    let mut art = Artifact::default();
    art.note("spec", spec_path.display().to_string());
    art.note("cells", n);
    art.note("t", t);
    art.note("mass", values.iter().sum::<f64>() * grid.spacing());
    art.tables.push(("resolvent", table));
    Ok(art)
}

/// Runs the selected criteria, printing a row as each finishes. The flag
/// is false when any criterion failed.
pub fn verify_suite(quick: bool, only: &[usize]) -> Result<(Artifact, bool), CommandError> {
    let total = verify::criterion_count();
    let ids: Vec<usize> = if only.is_empty() { (1..=total).collect() } else { only.to_vec() };
    if let Some(bad) = ids.iter().find(|&&i| i == 0 || i > total) {
        return Err(usage(format!("--only: no criterion {bad}; valid ids are 1 to {total}")));
    }
    let scale = verify::Scale { quick };
    let mut results = vec![];
    for id in ids {
        let c = verify::run_one(id, scale);
        println!("{}", verify::format_row(&c));
        results.push(c);
    }
    let passed = results.iter().filter(|c| c.passed).count();
    println!("{passed} of {} criteria passed", results.len());
    let mut art = Artifact::default();
    art.note("quick", quick);
    art.note("passed", passed);
    art.note("total", results.len());
    art.note("criteria", &results);
    Ok((art, passed == results.len()))
}
