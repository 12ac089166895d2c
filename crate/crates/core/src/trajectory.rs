//! Monte Carlo sampling of the click process.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Angle, ModelParams};
use crate::noclick::{first_click_quantile, flow_closed};
use crate::renewal::{Density, DistributionSnapshot};

/// Default number of histogram bins over `(−π, π]`.
pub const DEFAULT_BINS: usize = 250;

/// Click counts above this value share the last bucket of the count histogram.
pub const COUNT_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    /// Fixed-step update: drift, then a reset with probability `α dt`.
    Euler { dt: f64 },
    /// Exact inter-click times by inverting the survival function.
    EventDriven,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub t_max: f64,
    pub scheme: Scheme,
    pub seed: u64,
    /// Times at which the angle is recorded; sorted, within `[0, t_max]`.
    pub record_grid: Vec<f64>,
    /// Histogram bins used by [`ensemble`].
    pub bins: usize,
}

impl TrajectoryConfig {
    pub fn new(t_max: f64, scheme: Scheme, seed: u64, record_grid: Vec<f64>) -> Result<Self> {
        let cfg = TrajectoryConfig {
            t_max,
            scheme,
            seed,
            record_grid,
            bins: DEFAULT_BINS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_bins(mut self, bins: usize) -> Result<Self> {
        self.bins = bins;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max.is_finite() && self.t_max >= 0.0) {
            return Err(Error::invalid("t_max", format!("must be finite and >= 0, got {}", self.t_max)));
        }
        if let Scheme::Euler { dt } = self.scheme {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::invalid("dt", format!("must be finite and > 0, got {dt}")));
            }
        }
        if self.record_grid.iter().any(|&t| !(0.0..=self.t_max).contains(&t)) {
            return Err(Error::invalid("record_grid", "times must lie in [0, t_max]"));
        }
        if self.record_grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("record_grid", "times must be sorted"));
        }
        if self.bins == 0 {
            return Err(Error::invalid("bins", "must be >= 1"));
        }
        Ok(())
    }
}

/// One sampled path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub click_times: Vec<f64>,
    /// Angle at each time of the record grid.
    pub snapshots: Vec<(f64, Angle)>,
}

impl Trajectory {
    /// `N_t`, the number of clicks in `(0, t]`.
    pub fn count_at(&self, t: f64) -> usize {
        self.click_times.partition_point(|&c| c <= t)
    }
}

/// Random stream of trajectory `index` under base seed `seed`: the ChaCha
/// key comes from the seed and the stream id is the index.
fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Samples one path from `theta0`.
pub fn simulate(theta0: Angle, config: &TrajectoryConfig, p: &ModelParams) -> Result<Trajectory> {
    config.validate()?;
    check_euler_step(config, p)?;
    Ok(run(theta0, config, p, &mut stream(config.seed, 0)))
}

fn check_euler_step(config: &TrajectoryConfig, p: &ModelParams) -> Result<()> {
    if let Scheme::Euler { dt } = config.scheme {
        if dt * p.gamma() > 0.1 {
            return Err(Error::invalid(
                "dt",
                format!("dt*gamma = {} exceeds 0.1; reduce dt", dt * p.gamma()),
            ));
        }
    }
    Ok(())
}

fn run(theta0: Angle, config: &TrajectoryConfig, p: &ModelParams, rng: &mut ChaCha8Rng) -> Trajectory {
    match config.scheme {
        Scheme::EventDriven => run_event_driven(theta0, config, p, rng),
        Scheme::Euler { dt } => run_euler(theta0, dt, config, p, rng),
    }
}

fn run_event_driven(theta0: Angle, config: &TrajectoryConfig, p: &ModelParams, rng: &mut ChaCha8Rng) -> Trajectory {
    let mut clicks = Vec::new();
    let mut snapshots = Vec::with_capacity(config.record_grid.len());
    let mut grid = config.record_grid.iter().copied().peekable();
    let (mut last, mut start) = (0.0, theta0);
    loop {
        // u in (0, 1]
        let u = 1.0 - rng.random::<f64>();
        let wait = first_click_quantile(u, start, p).unwrap_or(f64::INFINITY);
        let next = last + wait;
        while let Some(&g) = grid.peek() {
            if g >= next {
                break;
            }
            snapshots.push((g, flow_closed(g - last, start, p)));
            grid.next();
        }
        if next > config.t_max {
            break;
        }
        clicks.push(next);
        last = next;
        start = Angle::PI;
    }
    Trajectory {
        click_times: clicks,
        snapshots,
    }
}

fn run_euler(theta0: Angle, dt: f64, config: &TrajectoryConfig, p: &ModelParams, rng: &mut ChaCha8Rng) -> Trajectory {
    let steps = (config.t_max / dt).round() as u64;
    let mut clicks = Vec::new();
    let mut snapshots = Vec::with_capacity(config.record_grid.len());
    let mut grid = config.record_grid.iter().copied().peekable();
    let mut theta = theta0.value();
    for k in 0..=steps {
        let now = k as f64 * dt;
        while let Some(&g) = grid.peek() {
            if g > now + 0.5 * dt {
                break;
            }
            snapshots.push((g, Angle::new(theta)));
            grid.next();
        }
        if k == steps {
            break;
        }
        theta += -2.0 * p.gamma0() * (1.0 + p.lambda() * theta.sin()) * dt;
        theta = Angle::new(theta).value();
        let rate = p.click_rate(Angle::new(theta));
        if rng.random::<f64>() < rate * dt {
            clicks.push(now + dt);
            theta = PI;
        }
    }
    Trajectory {
        click_times: clicks,
        snapshots,
    }
}

/// Per-record-time accumulators over an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    pub t: f64,
    pub sum_count: u64,
    pub sum_count_sq: u64,
    /// Trajectories with `k` clicks by `t`, the last bucket collecting `≥ COUNT_CAP`.
    pub count_hist: Vec<u64>,
    /// Angles of trajectories with at least one click.
    pub bin_counts: Vec<u64>,
    pub atom_count: u64,
    /// Range of angles of never-clicked trajectories (a single point in the
    /// event-driven scheme). Min and max keep the reduction order-free.
    pub atom_angle_range: (f64, f64),
    /// Smallest angle observed among clicked trajectories.
    pub min_clicked_angle: f64,
}

impl TimeStats {
    fn new(t: f64, bins: usize) -> Self {
        TimeStats {
            t,
            sum_count: 0,
            sum_count_sq: 0,
            count_hist: vec![0; COUNT_CAP + 1],
            bin_counts: vec![0; bins],
            atom_count: 0,
            atom_angle_range: (f64::INFINITY, f64::NEG_INFINITY),
            min_clicked_angle: f64::INFINITY,
        }
    }

    fn merge(mut self, other: TimeStats) -> Self {
        self.sum_count += other.sum_count;
        self.sum_count_sq += other.sum_count_sq;
        for (a, b) in self.count_hist.iter_mut().zip(other.count_hist) {
            *a += b;
        }
        for (a, b) in self.bin_counts.iter_mut().zip(other.bin_counts) {
            *a += b;
        }
        self.atom_count += other.atom_count;
        self.atom_angle_range = (
            self.atom_angle_range.0.min(other.atom_angle_range.0),
            self.atom_angle_range.1.max(other.atom_angle_range.1),
        );
        self.min_clicked_angle = self.min_clicked_angle.min(other.min_clicked_angle);
        self
    }
}

/// Ensemble summary over the record grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_traj: u64,
    pub bins: usize,
    pub times: Vec<TimeStats>,
}

impl EnsembleStats {
    /// Uniform bin edges over `[−π, π]`.
    pub fn edges(&self) -> Vec<f64> {
        bin_edges(self.bins)
    }

    fn at(&self, t: f64) -> Option<&TimeStats> {
        self.times.iter().find(|s| s.t == t)
    }

    /// Empirical `P(N_t = n)` for `n < COUNT_CAP`.
    pub fn count_frequency(&self, t: f64, n: usize) -> Option<f64> {
        let s = self.at(t)?;
        (n < COUNT_CAP).then(|| s.count_hist[n] as f64 / self.n_traj as f64)
    }
}

pub fn bin_edges(bins: usize) -> Vec<f64> {
    (0..=bins).map(|k| -PI + 2.0 * PI * k as f64 / bins as f64).collect()
}

fn bin_of(theta: f64, bins: usize) -> usize {
    let x = (theta + PI) / (2.0 * PI) * bins as f64;
    // θ in (−π, π] maps to bins [0, bins); the right edge π joins the last bin
    (x.ceil() as usize).clamp(1, bins) - 1
}

/// Simulates `n` independent trajectories. Trajectory `i` uses its own
/// random stream derived from `(config.seed, i)`, and all accumulators are
/// integers or sums of identical values, so the result does not depend on
/// the thread count.
pub fn ensemble(theta0: Angle, n: u64, config: &TrajectoryConfig, p: &ModelParams) -> Result<EnsembleStats> {
    if n == 0 {
        return Err(Error::invalid("n", "must be >= 1"));
    }
    config.validate()?;
    check_euler_step(config, p)?;
    let bins = config.bins;
    let empty = || {
        config
            .record_grid
            .iter()
            .map(|&t| TimeStats::new(t, bins))
            .collect::<Vec<_>>()
    };
    let times = (0..n)
        .into_par_iter()
        .fold(empty, |mut acc, i| {
            let traj = run(theta0, config, p, &mut stream(config.seed, i));
            for (s, &(t, angle)) in acc.iter_mut().zip(&traj.snapshots) {
                let k = traj.count_at(t);
                s.sum_count += k as u64;
                s.sum_count_sq += (k * k) as u64;
                s.count_hist[k.min(COUNT_CAP)] += 1;
                if k == 0 {
                    s.atom_count += 1;
                    let a = angle.value();
                    s.atom_angle_range = (s.atom_angle_range.0.min(a), s.atom_angle_range.1.max(a));
                } else {
                    s.bin_counts[bin_of(angle.value(), bins)] += 1;
                    s.min_clicked_angle = s.min_clicked_angle.min(angle.value());
                }
            }
            acc
        })
        .reduce(empty, |a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect());
    Ok(EnsembleStats { n_traj: n, bins, times })
}

/// Empirical snapshot at a recorded time: never-clicked trajectories form
/// the atom, placed at `predicted_atom`; the rest form the histogram.
pub fn histogram_with_atom(stats: &EnsembleStats, t: f64, predicted_atom: Angle) -> Result<DistributionSnapshot> {
    let s = stats
        .at(t)
        .ok_or_else(|| Error::invalid("t", format!("{t} is not on the record grid")))?;
    let n = stats.n_traj as f64;
    Ok(DistributionSnapshot {
        atom_position: predicted_atom,
        atom_mass: s.atom_count as f64 / n,
        continuous: Density::Histogram {
            edges: stats.edges(),
            mass: s.bin_counts.iter().map(|&c| c as f64 / n).collect(),
        },
        support: (-PI, PI),
        breaks: vec![],
        age: None,
    })
}

/// Midpoint of the angles of the never-clicked trajectories at a recorded time.
pub fn empirical_atom_position(stats: &EnsembleStats, t: f64) -> Option<Angle> {
    let s = stats.at(t)?;
    let (lo, hi) = s.atom_angle_range;
    (s.atom_count > 0).then(|| Angle::new(0.5 * (lo + hi)))
}

/// `(t, mean N_t, standard error)` over the record grid.
pub fn empirical_mean_count(stats: &EnsembleStats) -> Vec<(f64, f64, f64)> {
    let n = stats.n_traj as f64;
    stats
        .times
        .iter()
        .map(|s| {
            let mean = s.sum_count as f64 / n;
            let var = (s.sum_count_sq as f64 / n - mean * mean).max(0.0);
            let se = if stats.n_traj > 1 { (var / (n - 1.0)).sqrt() } else { 0.0 };
            (s.t, mean, se)
        })
        .collect()
}
