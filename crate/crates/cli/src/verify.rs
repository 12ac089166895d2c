//! The acceptance suite: eleven end-to-end checks at fixed tolerances.

use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;
use serde::Serialize;
use qreset::counting::{self, count_prob, count_prob_generating, mean_count, mean_rate, mgf, mgf_laplace};
use qreset::noclick::{flow, propagator, survival, FlowMethod, WaveFunction};
use qreset::renewal::{density_closed, renewal_convolve, snapshot, steady_snapshot, steady_state, SnapshotMethod};
use qreset::resolvent::{discretize, invert_laplace, GeneratorSpec, ResetMeasure, DEFAULT_NODES};
use qreset::spectral::{
    apply_generator, build_basis_sub, coeff_ck, finite_part, gram_check, jump_defect, truncation_for, ComplexField,
    ContinuumBasis, Side, DIFF_GRID,
};
use qreset::trajectory::{empirical_mean_count, ensemble, Scheme, TrajectoryConfig};
use qreset::{Angle, ModelParams};

type Outcome = Result<String, String>;

/// Problem sizes. `quick` shrinks ensembles and grids; tolerances and
/// statistical thresholds stay the same.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Scale {
    pub quick: bool,
}

impl Scale {
    fn n_traj(self) -> u64 {
        if self.quick {
            20_000
        } else {
            100_000
        }
    }

    fn theta_grid(self) -> usize {
        if self.quick {
            128
        } else {
            512
        }
    }
}

/// Outcome of one criterion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    /// Measured errors, or measured errors followed by the failing cases.
    pub detail: String,
}

fn params(lambda: f64) -> ModelParams {
    ModelParams::from_lambda(1.0, lambda).unwrap()
}

fn midpoints(n: usize) -> Vec<f64> {
    (0..n).map(|i| -PI + (i as f64 + 0.5) * 2.0 * PI / n as f64).collect()
}

fn verdict(failures: Vec<String>, summary: String) -> Outcome {
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}; {}", failures.join("; ")))
    }
}

fn survival_identity() -> Outcome {
    let rule = GaussLegendre::new(NonZeroUsize::new(8).unwrap());
    let mut worst: f64 = 0.0;
    let mut failures = vec![];
    for lambda in [0.25, 0.5, 1.0, 1.5, 3.0] {
        let p = params(lambda);
        for th0 in [Angle::ZERO, Angle::PI] {
            let rate = |s: f64| p.click_rate(flow(s, 0.0, th0, &p, FlowMethod::Numeric).unwrap());
            let ts: Vec<f64> = (0..50).map(|j| 10.0 * j as f64 / 49.0).collect();
            let mut integral = 0.0;
            for j in 0..ts.len() {
                if j > 0 {
                    let (a, b) = (ts[j - 1], ts[j]);
                    let panels = 4;
                    for k in 0..panels {
                        let lo = a + (b - a) * k as f64 / panels as f64;
                        let hi = lo + (b - a) / panels as f64;
                        integral += rule.integrate(lo, hi, rate);
                    }
                }
                let err = (survival(ts[j], th0, &p) - (-integral).exp()).abs();
                worst = worst.max(err);
                if err >= 1e-8 {
                    failures.push(format!("lambda={lambda} theta0={} t={:.3}: {err:.2e}", th0.value(), ts[j]));
                }
            }
        }
    }
    verdict(failures, format!("max |S - exp(-int alpha)| = {worst:.2e} (tol 1e-8)"))
}

fn critical_fastest_decay() -> Outcome {
    let t = 20.0;
    let s1 = survival(t, Angle::ZERO, &params(1.0));
    let mut failures = vec![];
    let mut ratios = vec![];
    for lambda in [0.5, 1.5] {
        let r = s1 / survival(t, Angle::ZERO, &params(lambda));
        ratios.push(format!("lambda={lambda}: {r:.2e}"));
        if r.is_nan() || r >= 1e-3 {
            failures.push(format!("lambda={lambda} ratio {r:.3e}"));
        }
    }
    verdict(failures, format!("S(20,1)/S(20,lambda): {}", ratios.join(", ")))
}

fn mean_count_check(scale: Scale) -> Outcome {
    let mut failures = vec![];
    let mut worst_z: f64 = 0.0;
    for (i, lambda) in [0.5, 1.0, 2.0, 3.0].into_iter().enumerate() {
        let p = params(lambda);
        let cfg = TrajectoryConfig::new(5.0, Scheme::EventDriven, 3_000 + i as u64, vec![1.0, 2.0, 5.0]).unwrap();
        let stats = ensemble(Angle::ZERO, scale.n_traj(), &cfg, &p).unwrap();
        for (t, m, se) in empirical_mean_count(&stats) {
            let z = (m - mean_count(t, &p)).abs() / se;
            worst_z = worst_z.max(z);
            if !(z < 3.0) {
                failures.push(format!("lambda={lambda} t={t}: {z:.2} SE"));
            }
        }
        let r0 = mean_rate(0.0, &p);
        if r0 != 0.0 {
            failures.push(format!("lambda={lambda}: mean_rate(0) = {r0:e}"));
        }
        let gap = (mean_rate(20.0, &p) - 0.5 * p.gamma()).abs();
        if gap >= 1e-6 {
            failures.push(format!("lambda={lambda}: |mean_rate(20) - gamma/2| = {gap:.2e} (tol 1e-6)"));
        }
    }
    verdict(failures, format!("Monte Carlo worst {worst_z:.2} SE; mean_rate(0)=0, late-rate gap checked"))
}

fn mgf_normalization() -> Outcome {
    let mut failures = vec![];
    let mut worst: f64 = 0.0;
    for lambda in [0.25, 0.5, 1.0, 1.5, 3.0] {
        let p = params(lambda);
        for t in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let e = (mgf(0.0, t, &p).unwrap() - 1.0).abs();
            worst = worst.max(e);
            if e >= 1e-10 {
                failures.push(format!("mgf(0,{t}) lambda={lambda}: {e:.2e}"));
            }
        }
        for sigma in [0.5, 1.0, 2.0] {
            let v = mgf_laplace(Complex64::new(sigma, 0.0), 0.0, &p).unwrap() * sigma;
            let e = (v - 1.0).norm();
            worst = worst.max(e);
            if e >= 1e-12 {
                failures.push(format!("sigma*mgf_laplace({sigma},0) lambda={lambda}: {e:.2e}"));
            }
        }
    }
    verdict(failures, format!("max deviation {worst:.2e}"))
}

fn count_distribution(scale: Scale) -> Outcome {
    let mut failures = vec![];
    let mut worst_z: f64 = 0.0;
    let mut sums = vec![];
    for (i, lambda) in [0.5, 1.0, 1.5].into_iter().enumerate() {
        let p = params(lambda);
        let n_traj = scale.n_traj();
        let cfg = TrajectoryConfig::new(2.0, Scheme::EventDriven, 5_000 + i as u64, vec![1.0, 2.0]).unwrap();
        let stats = ensemble(Angle::ZERO, n_traj, &cfg, &p).unwrap();
        for t in [1.0, 2.0] {
            for n in 0..=3 {
                let q = count_prob(n, t, &p).unwrap();
                let freq = stats.count_frequency(t, n).unwrap();
                let sigma = (q * (1.0 - q) / n_traj as f64).sqrt();
                let z = (freq - q).abs() / sigma;
                worst_z = worst_z.max(z);
                if !(z < 3.0) {
                    failures.push(format!("lambda={lambda} t={t} n={n}: {z:.2} sigma"));
                }
            }
            let total: f64 = (0..=12).map(|n| count_prob_generating(n, t, &p)).sum();
            sums.push(format!("{lambda}/{t}: {:.1e}", (total - 1.0).abs()));
            if (total - 1.0).abs() > 1e-6 {
                failures.push(format!("lambda={lambda} t={t}: |sum_(n<=12) - 1| = {:.2e}", (total - 1.0).abs()));
            }
        }
    }
    verdict(
        failures,
        format!("n<=3 worst {worst_z:.2} sigma; |sum_(n<=12) - 1| by lambda/t: {}", sums.join(", ")),
    )
}

fn histogram_reproduction(scale: Scale) -> Outcome {
    let mut failures = vec![];
    let mut exceed = 0usize;
    let mut tested = 0usize;
    let (mut chi2, mut dof) = (0.0, 0usize);
    let n_traj = scale.n_traj();
    for (i, lambda) in [0.5, 1.0, 1.5].into_iter().enumerate() {
        let p = params(lambda);
        let times = vec![0.5, 1.0, 2.0];
        let cfg = TrajectoryConfig::new(2.0, Scheme::EventDriven, 7_000 + i as u64, times.clone()).unwrap();
        let stats = ensemble(Angle::ZERO, n_traj, &cfg, &p).unwrap();
        let edges = stats.edges();
        for (k, &t) in times.iter().enumerate() {
            let snap = snapshot(t, &p, SnapshotMethod::Closed).unwrap();
            let predicted = snap.bin_masses(&edges);
            let ts = &stats.times[k];
            for (b, (&q, &count)) in predicted.iter().zip(&ts.bin_counts).enumerate() {
                let freq = count as f64 / n_traj as f64;
                let se = (q * (1.0 - q) / n_traj as f64).sqrt();
                tested += 1;
                if q > 0.0 {
                    let expected = q * n_traj as f64;
                    chi2 += (count as f64 - expected).powi(2) / expected;
                    dof += 1;
                }
                if (freq - q).abs() > 3.0 * se {
                    exceed += 1;
                    failures.push(format!(
                        "lambda={lambda} t={t} bin {b}: {:.2} SE (expected count {:.1})",
                        (freq - q).abs() / se.max(f64::MIN_POSITIVE),
                        q * n_traj as f64
                    ));
                }
            }
            let s = survival(t, Angle::ZERO, &p);
            let atom_freq = ts.atom_count as f64 / n_traj as f64;
            let se = (s * (1.0 - s) / n_traj as f64).sqrt();
            if (atom_freq - s).abs() > 3.0 * se {
                failures.push(format!("lambda={lambda} t={t}: atom {:.2} SE", (atom_freq - s).abs() / se));
            }
            // independent route: norm of the no-click wave function
            let psi = propagator(t, WaveFunction::from_angle(Angle::ZERO), &p);
            if (snap.atom_mass - psi.norm_sqr()).abs() >= 1e-8 {
                failures.push(format!("lambda={lambda} t={t}: analytic atom mismatch"));
            }
        }
    }
    verdict(
        failures,
        format!(
            "{exceed}/{tested} bins beyond 3 SE (chance level about {:.1}); pooled chi2 {chi2:.0} on {dof} bins, z = {:.2}",
            0.0027 * tested as f64,
            (chi2 - dof as f64) / (2.0 * dof as f64).sqrt()
        ),
    )
}

fn steady_state_check() -> Outcome {
    let mut failures = vec![];
    let mut masses = vec![];
    for lambda in [0.3, 0.7, 1.0, 1.2, 2.0, 5.0] {
        let p = params(lambda);
        let m = steady_snapshot(&p).unwrap().continuous_mass();
        masses.push(format!("{:.1e}", (m - 1.0).abs()));
        if (m - 1.0).abs() >= 1e-8 {
            failures.push(format!("lambda={lambda}: mass {m}"));
        }
        if let (Some(plus), Some(bp)) = (p.fixed_points().stable(), p.beta_prime()) {
            let plus = plus.value();
            for off in [1e-3, 0.1, 1.0] {
                let v = steady_state(Angle::new(plus - off), &p).unwrap();
                if v != 0.0 {
                    failures.push(format!("lambda={lambda}: P_inf({:.3}) = {v:e} below the stable point", plus - off));
                }
            }
            let offsets: Vec<f64> = (0..16).map(|k| 1e-8 * 10f64.powf(k as f64 / 5.0)).collect();
            let pts: Vec<(f64, f64)> = offsets
                .iter()
                .map(|&e| (e.ln(), steady_state(Angle::new(plus + e), &p).unwrap().ln()))
                .collect();
            let slope = fit_slope(&pts);
            let want = lambda / bp - 2.0;
            if (slope - want).abs() > 0.05 * want.abs() {
                failures.push(format!("lambda={lambda}: exponent {slope:.4} vs {want:.4}"));
            }
        }
    }
    // exponent changes sign at lambda = 2/sqrt(3)
    let crit = 2.0 / 3f64.sqrt();
    for (lambda, diverges) in [(crit - 0.02, false), (crit + 0.02, true)] {
        let p = params(lambda);
        let plus = p.fixed_points().stable().unwrap().value();
        let near = steady_state(Angle::new(plus + 1e-12), &p).unwrap();
        let far = steady_state(Angle::new(plus + 1e-6), &p).unwrap();
        if (near > far) != diverges {
            failures.push(format!("lambda={lambda:.4}: divergence threshold not seen"));
        }
    }
    verdict(failures, format!("|mass - 1| = [{}]; support and exponents checked", masses.join(", ")))
}

fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn spectral_agreement(scale: Scale) -> Outcome {
    let mut failures = vec![];
    let p = params(0.5);
    let m = truncation_for(&p, 1e-4).unwrap();
    let basis = build_basis_sub(&p, m).unwrap();
    let grid = midpoints(scale.theta_grid());
    let mut worst: f64 = 0.0;
    for t in [0.5, 1.0, 2.0] {
        for &th in &grid {
            let e = (finite_part(th, t, &basis) - renewal_convolve(Angle::new(th), t, &p).unwrap()).abs();
            worst = worst.max(e);
        }
    }
    if worst >= 1e-3 {
        failures.push(format!("series sup error {worst:.2e}"));
    }
    let small = build_basis_sub(&p, 12).unwrap();
    let gram = gram_check(&small, 12).unwrap().max_deviation();
    if gram >= 1e-8 {
        failures.push(format!("gram deviation {gram:.2e}"));
    }
    let mut residual: f64 = 0.0;
    let mut jump: f64 = 0.0;
    let sample: Vec<f64> = midpoints(DIFF_GRID).into_iter().step_by(5).collect();
    for mode in small.modes() {
        let (b1, b2, md) = (small.clone(), small.clone(), *mode);
        let f: ComplexField = Arc::new(move |x| b1.f(&md, x));
        let h: ComplexField = Arc::new(move |x| b2.h(&md, x));
        let lf = apply_generator(f.clone(), &p, Side::Forward);
        let lh = apply_generator(h.clone(), &p, Side::Adjoint);
        for &x in &sample {
            residual = residual.max((lf(x) - md.nu * f(x)).norm());
            residual = residual.max((lh(x) - md.nu.conj() * h(x)).norm());
        }
        jump = jump.max(jump_defect(&f, &p).norm());
    }
    if residual >= 1e-6 {
        failures.push(format!("generator residual {residual:.2e}"));
    }
    verdict(
        failures,
        format!("M={m}: sup error {worst:.2e}; gram {gram:.1e}; residual {residual:.1e}; jump {jump:.1e}"),
    )
}

/// Eighth-order central first and second derivatives.
fn central(f: &dyn Fn(f64) -> Complex64, x: f64, h: f64) -> (Complex64, Complex64) {
    let d1 = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
    let d2 = [8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0];
    let f0 = f(x);
    let (mut a, mut b) = (Complex64::new(0.0, 0.0), -205.0 / 72.0 * f0);
    for k in 1..=4 {
        let (fp, fm) = (f(x + k as f64 * h), f(x - k as f64 * h));
        a += d1[k - 1] * (fp - fm);
        b += d2[k - 1] * (fp + fm);
    }
    (a / h, b / (h * h))
}

fn critical_continuum(scale: Scale) -> Outcome {
    let mut failures = vec![];
    let p = params(1.0);
    let g0 = p.gamma0();
    let mut ic: f64 = 0.0;
    for k in [-3.0, -0.7, 0.0, 0.4, 2.5] {
        let want = Complex64::new(0.0, 2.0 * k).exp() / (2.0 * PI).sqrt();
        ic = ic.max((coeff_ck(k, 0.0, &p).unwrap() - want).norm());
    }
    if ic >= 1e-7 {
        failures.push(format!("c_k(0) error {ic:.2e}"));
    }
    let mut ode: f64 = 0.0;
    for t in [0.2, 0.8, 1.5, 3.0] {
        let c0 = |s: f64| coeff_ck(0.0, s, &p).unwrap();
        let c0dot = central(&c0, t, 0.01).0;
        let ck = |k: f64| coeff_ck(k, t, &p).unwrap();
        let (dk, dkk) = central(&ck, 0.0, 0.01);
        let a = 1.0 - g0 * t;
        let rhs = 4.0 * g0 * (a * a * ck(0.0) + Complex64::new(0.0, a) * dk - 0.25 * dkk);
        ode = ode.max((c0dot - rhs).norm());
        for k in [-1.3, 0.6, 2.0] {
            let dot = central(&|s: f64| coeff_ck(k, s, &p).unwrap(), t, 0.01).0;
            ode = ode.max((dot - c0dot * Complex64::new(0.0, -2.0 * k * g0 * t).exp()).norm());
        }
    }
    if ode >= 1e-7 {
        failures.push(format!("ODE residual {ode:.2e}"));
    }
    let basis = ContinuumBasis::new(&p).unwrap();
    let grid = midpoints(scale.theta_grid());
    let mut worst: f64 = 0.0;
    for t in [0.5, 1.0, 2.0] {
        let got = basis.density(&grid, t, 1e-5).unwrap();
        for (th, v) in grid.iter().zip(&got) {
            worst = worst.max((v - density_closed(Angle::new(*th), t, &p).unwrap()).abs());
        }
    }
    if worst >= 1e-3 {
        failures.push(format!("reconstruction error {worst:.2e}"));
    }
    verdict(failures, format!("c_k(0) {ic:.1e}; ODE residual {ode:.1e}; reconstruction sup {worst:.2e}"))
}

fn resolvent_check() -> Outcome {
    let mut failures = vec![];
    let p = params(0.5);
    let g = discretize(&GeneratorSpec::qubit(&p), 4096).unwrap();
    let mut worst: f64 = 0.0;
    for s in [0.5, 1.0, 2.0, 5.0] {
        let s = Complex64::new(s, 0.0);
        let got = qreset::resolvent::mean_rate_laplace(s, Angle::ZERO, &g).unwrap();
        worst = worst.max((got - counting::mean_rate_laplace(s, &p)).norm());
    }
    if worst >= 1e-4 {
        failures.push(format!("mean-rate transform error {worst:.2e}"));
    }
    let n = 128;
    let spec = GeneratorSpec::new(
        Arc::new(|_| 0.0),
        Arc::new(|_| 0.3),
        Arc::new(|_| 0.7),
        ResetMeasure::Density(Arc::new(|_| 1.0 / (2.0 * PI))),
    );
    let g = discretize(&spec, n).unwrap();
    let from = 20usize;
    let mut stepped: f64 = 0.0;
    let mut mass: f64 = 0.0;
    for t in [0.5, 1.0, 2.0] {
        let got = invert_laplace(Angle::new(g.centres()[from]), t, &g, DEFAULT_NODES).unwrap();
        let mut m = vec![0.0; n];
        m[from] = 1.0;
        let steps = 20_000;
        let dt = t / steps as f64;
        for _ in 0..steps {
            let k1 = g.apply(&m);
            let y: Vec<f64> = m.iter().zip(&k1).map(|(a, b)| a + 0.5 * dt * b).collect();
            let k2 = g.apply(&y);
            let y: Vec<f64> = m.iter().zip(&k2).map(|(a, b)| a + 0.5 * dt * b).collect();
            let k3 = g.apply(&y);
            let y: Vec<f64> = m.iter().zip(&k3).map(|(a, b)| a + dt * b).collect();
            let k4 = g.apply(&y);
            for i in 0..n {
                m[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        for (a, b) in got.iter().zip(&m) {
            stepped = stepped.max((a - b / g.spacing()).abs());
        }
        mass = mass.max((got.iter().sum::<f64>() * g.spacing() - 1.0).abs());
    }
    if stepped >= 1e-4 {
        failures.push(format!("time-stepping mismatch {stepped:.2e}"));
    }
    if mass >= 1e-5 {
        failures.push(format!("mass defect {mass:.2e}"));
    }
    verdict(
        failures,
        format!("mean-rate {worst:.1e}; vs RK4 {stepped:.1e}; mass {mass:.1e}"),
    )
}

fn relaxation_rate() -> Outcome {
    let lambda = 0.5;
    let p = params(lambda);
    let grid = midpoints(96);
    let inf: Vec<f64> = grid.iter().map(|&th| steady_state(Angle::new(th), &p).unwrap()).collect();
    let h = 2.0 * PI / grid.len() as f64;
    let pts: Vec<(f64, f64)> = (0..=120)
        .map(|k| {
            let t = 6.0 + 0.1 * k as f64;
            let norm: f64 = grid
                .iter()
                .zip(&inf)
                .map(|(&th, q)| (renewal_convolve(Angle::new(th), t, &p).unwrap() - q).powi(2))
                .sum::<f64>()
                * h;
            (t, 0.5 * norm.ln())
        })
        .collect();
    let rate = -fit_slope(&pts);
    let want = lambda * p.gamma0();
    let rel = (rate / want - 1.0).abs();
    verdict(
        if rel < 0.05 { vec![] } else { vec![format!("relative error {rel:.3}")] },
        format!("fitted L2 decay rate {rate:.4} vs {want} over t in [6, 18]"),
    )
}

const NAMES: [&str; 11] = [
    "survival identity",
    "critical fastest decay",
    "mean count",
    "mgf normalization",
    "count distribution",
    "histogram reproduction",
    "steady state",
    "spectral agreement",
    "critical continuum",
    "resolvent",
    "relaxation rate",
];

/// Runs criterion `id` (1 to 11).
pub fn run_one(id: usize, scale: Scale) -> Criterion {
    let outcome = std::panic::catch_unwind(|| dispatch(id, scale))
        .unwrap_or_else(|e| Err(format!("aborted: {}", panic_message(&e))));
    let (passed, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Criterion {
        id,
        name: NAMES[id - 1],
        passed,
        detail,
    }
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

fn dispatch(id: usize, scale: Scale) -> Outcome {
    match id {
        1 => survival_identity(),
        2 => critical_fastest_decay(),
        3 => mean_count_check(scale),
        4 => mgf_normalization(),
        5 => count_distribution(scale),
        6 => histogram_reproduction(scale),
        7 => steady_state_check(),
        8 => spectral_agreement(scale),
        9 => critical_continuum(scale),
        10 => resolvent_check(),
        11 => relaxation_rate(),
        _ => Err(format!("no criterion {id}")),
    }
}

pub fn criterion_count() -> usize {
    NAMES.len()
}

/// One table row.
pub fn format_row(c: &Criterion) -> String {
    format!("{} {:>2} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.id, c.name, c.detail)
}
