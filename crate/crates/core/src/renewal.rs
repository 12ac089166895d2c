//! Time-dependent angle distribution from the renewal structure of the
//! process: an atom carried by the never-clicked subpopulation plus a
//! continuous part built from the last reset to `π`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::counting::mean_rate;
use crate::error::{Error, Result};
use crate::model::{Angle, ModelParams, Regime};
use crate::noclick::{flow_closed, orbit_coord, survival, OrbitCoord};
use crate::quad;

/// Number of grid points used by [`DistributionSnapshot::grid`] callers by default.
pub const DEFAULT_GRID: usize = 2048;

/// Continuous part of a distribution on `(−π, π]`.
#[derive(Clone)]
pub enum Density {
    /// Pointwise density, zero outside the snapshot support.
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// Piecewise-constant estimate: `edges.len() == mass.len() + 1`.
    Histogram { edges: Vec<f64>, mass: Vec<f64> },
}

impl fmt::Debug for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Function(_) => f.write_str("Density::Function(..)"),
            Density::Histogram { edges, .. } => write!(f, "Density::Histogram({} bins)", edges.len() - 1),
        }
    }
}

/// `P(θ, t)` at one time: a point mass plus a density.
#[derive(Debug, Clone)]
pub struct DistributionSnapshot {
    pub atom_position: Angle,
    pub atom_mass: f64,
    pub continuous: Density,
    /// The continuous part vanishes outside `(support.0, support.1]`.
    pub support: (f64, f64),
    /// Interior points where the density is non-smooth (jumps or integrable
    /// singularities); used to split quadrature panels.
    pub breaks: Vec<f64>,
    /// Exact reparametrisation by time since the last reset, when known.
    pub age: Option<ResetAge>,
}

/// The continuous part written as a measure over the time `τ` since the
/// last reset: the angle is `θ_τ(0, π)` and the mass density is
/// `ᾱ_{t−τ} P₀^τ[0‖π]` (or `(γ/2) P₀^τ[0‖π]` in the steady state).
///
/// Integrals in `τ` stay accurate where the angle density has an
/// integrable singularity at the stable fixed point, which for large `λ`
/// hides mass in neighbourhoods narrower than `f64` resolves.
#[derive(Debug, Clone, Copy)]
pub struct ResetAge {
    params: ModelParams,
    /// `None` for the steady state.
    horizon: Option<f64>,
}

impl ResetAge {
    fn weight(&self, tau: f64) -> f64 {
        let p = &self.params;
        let rate = match self.horizon {
            Some(t) => mean_rate(t - tau, p),
            None => 0.5 * p.gamma(),
        };
        rate * survival(tau, Angle::PI, p)
    }

    /// Duration of one revolution (`λ < 1`).
    fn period(&self) -> Option<f64> {
        self.params.beta().map(|b| PI / (b * self.params.gamma0()))
    }

    /// Reset age beyond which the remaining mass is below `1e−17`.
    fn tail_cutoff(&self) -> f64 {
        let p = &self.params;
        let slowest = match p.regime() {
            Regime::Sub => 0.5 * p.gamma(),
            _ => p.click_rate(Angle::new(reach_floor(p))),
        };
        let amp = match p.regime() {
            Regime::Sub => 1.0 / (1.0 - p.lambda()),
            _ => 1.0,
        };
        (amp.ln() + 45.0) / slowest
    }

    fn integrate<F: Fn(f64) -> f64>(&self, f: F, lo: f64, hi: f64) -> f64 {
        let end = match self.horizon {
            Some(t) => hi.min(t),
            None => hi,
        };
        if end <= lo {
            return 0.0;
        }
        let g = |tau: f64| f(tau) * self.weight(tau);
        let mut breaks = vec![];
        if let Some(per) = self.period() {
            let mut k = (lo / per).floor() + 1.0;
            while k * per < end.min(lo + 1e4 * per) {
                breaks.push(k * per);
                k += 1.0;
            }
        }
        if end.is_finite() {
            quad::integrate_with_breaks(g, lo, end, &breaks, 1e-13).value
        } else {
            let cut = self.tail_cutoff().max(lo);
            quad::integrate_with_breaks(&g, lo, cut, &breaks, 1e-13).value + quad::integrate_to_infinity(&g, cut, 1e-15).value
        }
    }

    /// `∫ f(θ_τ(0, π)) dm(τ)` over every reset age.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let p = self.params;
        let hi = match (self.horizon, self.period()) {
            (Some(t), _) => t,
            (None, Some(_)) => self.tail_cutoff(),
            (None, None) => f64::INFINITY,
        };
        self.integrate(|tau| f(flow_closed(tau, Angle::PI, &p).value()), 0.0, hi)
    }

    /// Mass of angles in `(a, b]`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        let p = &self.params;
        let floor = reach_floor(p);
        let b = b.min(PI);
        if b <= a.max(floor) {
            return 0.0;
        }
        // ages at which θ_τ sweeps from b down to a
        let enter = tau0(Angle::new(b), p).unwrap_or(0.0);
        let leave = if a <= floor {
            self.period().unwrap_or(f64::INFINITY)
        } else {
            tau0(Angle::new(a), p).unwrap_or(f64::INFINITY)
        };
        let enter = if b >= PI { 0.0 } else { enter };
        match self.period() {
            None => self.integrate(|_| 1.0, enter, leave),
            Some(per) => {
                let stop = self.horizon.unwrap_or_else(|| self.tail_cutoff());
                let mut total = 0.0;
                let mut n = 0.0;
                while enter + n * per < stop {
                    total += self.integrate(|_| 1.0, enter + n * per, leave + n * per);
                    n += 1.0;
                }
                total
            }
        }
    }
}

impl DistributionSnapshot {
    /// Density of the continuous part at `theta`.
    pub fn density(&self, theta: f64) -> f64 {
        let theta = Angle::new(theta).value();
        if theta <= self.support.0 || theta > self.support.1 {
            return 0.0;
        }
        match &self.continuous {
            Density::Function(f) => f(theta),
            Density::Histogram { edges, mass } => {
                let k = edges.partition_point(|&e| e < theta).saturating_sub(1).min(mass.len() - 1);
                mass[k] / (edges[k + 1] - edges[k])
            }
        }
    }

    /// Mass of the continuous part between `a < b`, both in `[−π, π]`.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        if let Some(age) = &self.age {
            return age.mass_between(a, b);
        }
        let lo = a.max(self.support.0);
        let hi = b.min(self.support.1);
        if hi <= lo {
            return 0.0;
        }
        match &self.continuous {
            Density::Function(f) => {
                let breaks: Vec<f64> = self.breaks.iter().copied().filter(|&x| x > lo && x < hi).collect();
                quad::integrate_with_breaks(|x| f(x), lo, hi, &breaks, 1e-12).value
            }
            Density::Histogram { edges, mass } => {
                let mut total = 0.0;
                for (k, m) in mass.iter().enumerate() {
                    let (e0, e1) = (edges[k], edges[k + 1]);
                    let overlap = hi.min(e1) - lo.max(e0);
                    if overlap > 0.0 {
                        total += m * overlap / (e1 - e0);
                    }
                }
                total
            }
        }
    }

    /// Total mass of the continuous part.
    pub fn continuous_mass(&self) -> f64 {
        self.mass_between(-PI, PI)
    }

    /// Masses of the continuous part in consecutive bins.
    pub fn bin_masses(&self, edges: &[f64]) -> Vec<f64> {
        edges.windows(2).map(|w| self.mass_between(w[0], w[1])).collect()
    }

    /// `(θ, density)` at `n` bin centres of a uniform grid over `(−π, π]`.
    pub fn grid(&self, n: usize) -> Vec<(f64, f64)> {
        let h = 2.0 * PI / n as f64;
        (0..n)
            .map(|k| {
                let theta = -PI + (k as f64 + 0.5) * h;
                (theta, self.density(theta))
            })
            .collect()
    }

    /// Expectation of `f(θ)`, atom included.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let atom = self.atom_mass * f(self.atom_position.value());
        if let Some(age) = &self.age {
            return atom + age.expect(f);
        }
        let (lo, hi) = self.support;
        if hi <= lo {
            return atom;
        }
        let cont = match &self.continuous {
            Density::Function(d) => {
                let breaks: Vec<f64> = self.breaks.iter().copied().filter(|&x| x > lo && x < hi).collect();
                quad::integrate_with_breaks(|x| d(x) * f(x), lo, hi, &breaks, 1e-12).value
            }
            Density::Histogram { edges, mass } => mass
                .iter()
                .enumerate()
                .map(|(k, m)| m * f(0.5 * (edges[k] + edges[k + 1])))
                .sum(),
        };
        atom + cont
    }
}

/// First time the flow from `π` reaches `theta`.
pub fn tau0(theta: Angle, p: &ModelParams) -> Result<f64> {
    if theta == Angle::PI {
        return Ok(0.0);
    }
    let g0 = p.gamma0();
    match orbit_coord(theta.value(), p) {
        OrbitCoord::Phase(psi) => Ok((PI - psi) / (2.0 * p.beta().unwrap() * g0)),
        OrbitCoord::Shift(w) => {
            if w.is_finite() && w >= 0.0 {
                Ok(w / g0)
            } else {
                Err(Error::Unreachable {
                    theta: theta.value(),
                    reason: "the flow from pi stops at -pi/2".into(),
                })
            }
        }
        OrbitCoord::Ratio(r) => {
            if r > 0.0 && r <= 1.0 {
                Ok(-r.ln() / (2.0 * p.beta_prime().unwrap() * g0))
            } else {
                Err(Error::Unreachable {
                    theta: theta.value(),
                    reason: "the flow from pi stops at the stable fixed point".into(),
                })
            }
        }
    }
}

/// Lower end of the set reachable from `π` without a click (`−π` when the
/// whole circle is reachable).
fn reach_floor(p: &ModelParams) -> f64 {
    match p.regime() {
        Regime::Sub => -PI,
        Regime::Critical => -0.5 * PI,
        Regime::Super => p.fixed_points().stable().unwrap().value(),
    }
}

/// `e^{−γτ₀/2}` for a reachable angle, by the regime closed forms.
fn decay_at_first_visit(theta: f64, p: &ModelParams) -> f64 {
    let l = p.lambda();
    match p.regime() {
        Regime::Sub => {
            let b = p.beta().unwrap();
            let (s, c) = (0.5 * theta).sin_cos();
            // π/2 − arctan((λ + tan(θ/2))/β), continuous through θ = π
            let ang = 0.5 * PI - (s + l * c).atan2(b * c);
            (-2.0 * l / b * ang).exp()
        }
        Regime::Critical => {
            let (s, c) = (0.5 * theta).sin_cos();
            // 2/(1 + tan(θ/2)) = 2c/(s + c)
            (-2.0 * c / (s + c)).exp()
        }
        Regime::Super => {
            let (up, um) = p.half_tan_fixed_points().unwrap();
            let (s, c) = (0.5 * theta).sin_cos();
            let ratio = (s - up * c) / (s - um * c);
            ratio.powf(l / p.beta_prime().unwrap())
        }
    }
}

fn reachable(theta: f64, p: &ModelParams) -> bool {
    theta > reach_floor(p)
}

/// Steady-state density `P_∞(θ)`.
pub fn steady_state(theta: Angle, p: &ModelParams) -> Result<f64> {
    if p.lambda() == 0.0 {
        return Err(Error::invalid("lambda", "no steady state without measurement (lambda = 0)"));
    }
    let th = theta.value();
    if !reachable(th, p) {
        return Ok(0.0);
    }
    let d = p.drift_factor(th);
    let l = p.lambda();
    let base = decay_at_first_visit(th, p) / (d * d);
    Ok(match p.regime() {
        Regime::Sub => {
            let b = p.beta().unwrap();
            l * base / -(-2.0 * PI * l / b).exp_m1()
        }
        Regime::Critical => base,
        Regime::Super => l * base,
    })
}

/// `1 − (2/√(4−λ²)) e^{−λx} sin(ωx/γ₀ + arctan √(4/λ² − 1))` at `x = γ₀(t − τ₀)`,
/// continued through `λ = 2`.
fn relaxation_bracket(x: f64, p: &ModelParams) -> f64 {
    let l = p.lambda();
    let w2 = 4.0 - l * l;
    if w2.abs() < 1e-9 {
        return 1.0 - (-2.0 * x).exp() * (1.0 + 2.0 * x);
    }
    if w2 > 0.0 {
        let w = w2.sqrt();
        let shift = (4.0 / (l * l) - 1.0).sqrt().atan();
        1.0 - 2.0 / w * (-l * x).exp() * (w * x + shift).sin()
    } else {
        let w = (-w2).sqrt();
        let shift = (1.0 - 4.0 / (l * l)).sqrt().atanh();
        // e^{−λx} sinh(wx + a) without overflow
        let e = 0.5 * (((w - l) * x + shift).exp() - (-(w + l) * x - shift).exp());
        1.0 - 2.0 / w * e
    }
}

/// Continuous part of `P(θ, t)` from the regime closed forms.
///
/// For `λ < 1` only the single-visit window `γ₀t ≤ π/β` is covered; use
/// [`renewal_convolve`] beyond it.
pub fn density_closed(theta: Angle, t: f64, p: &ModelParams) -> Result<f64> {
    check_time(t)?;
    if let Some(b) = p.beta() {
        if p.gamma0() * t > PI / b * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "t",
                format!("closed form for lambda < 1 holds for t <= pi/(beta gamma0) = {}", PI / (b * p.gamma0())),
            ));
        }
    }
    let th = theta.value();
    if p.lambda() == 0.0 || !reachable(th, p) {
        return Ok(0.0);
    }
    let first = tau0(theta, p)?;
    if first > t {
        return Ok(0.0);
    }
    let l = p.lambda();
    let g0 = p.gamma0();
    let d = p.drift_factor(th);
    let shape = decay_at_first_visit(th, p) / (d * d);
    Ok(match p.regime() {
        Regime::Sub => {
            let w = (4.0 - l * l).sqrt();
            let osc = Complex64::new(-l, w) * (g0 * t);
            let back = Complex64::new(l, w) * (g0 * first);
            let term = (osc - back).exp() / Complex64::new(w, l);
            l * shape - 4.0 * l / w / (d * d) * term.re
        }
        Regime::Critical => relaxation_bracket(g0 * (t - first), p) * shape,
        Regime::Super => relaxation_bracket(g0 * (t - first), p) * l * shape,
    })
}

/// Continuous part of `P(θ, t)` by the renewal sum over visit times
/// `τₙ = τ₀ + nπ/(βγ₀)`, each weighted by `ᾱ_{t−τₙ} P₀^{τₙ}[0‖π]/|Ω(θ)|`.
pub fn renewal_convolve(theta: Angle, t: f64, p: &ModelParams) -> Result<f64> {
    check_time(t)?;
    let th = theta.value();
    if p.lambda() == 0.0 || !reachable(th, p) {
        return Ok(0.0);
    }
    let first = tau0(theta, p)?;
    let period = p.beta().map(|b| PI / (b * p.gamma0()));
    let d = p.drift_factor(th);
    let weight = 1.0 / (2.0 * p.gamma0() * d * d);
    let mut total = 0.0;
    let mut n = 0;
    loop {
        let tau = match period {
            Some(per) => first + n as f64 * per,
            None if n == 0 => first,
            None => break,
        };
        if tau > t {
            break;
        }
        total += mean_rate(t - tau, p) * (-0.5 * p.gamma() * tau).exp() * weight;
        n += 1;
    }
    Ok(total)
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("t", format!("must be finite and >= 0, got {t}")))
    }
}

/// Which evaluator backs the continuous part of a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotMethod {
    Closed,
    Convolve,
}

/// Full `P(·, t)` for a qubit starting in the ground state.
pub fn snapshot(t: f64, p: &ModelParams, method: SnapshotMethod) -> Result<DistributionSnapshot> {
    check_time(t)?;
    if method == SnapshotMethod::Closed {
        // surface the window error once instead of from inside the callable
        density_closed(Angle::PI, t, p)?;
    }
    let atom_position = flow_closed(t, Angle::ZERO, p);
    let atom_mass = survival(t, Angle::ZERO, p);
    let floor = reach_floor(p);
    let front = flow_closed(t, Angle::PI, p).value();
    let full_turn = p.beta().is_some_and(|b| p.gamma0() * t >= PI / b);
    let lo = if p.lambda() == 0.0 || t == 0.0 {
        PI
    } else if full_turn {
        -PI
    } else {
        front.max(floor)
    };
    let mut breaks = vec![];
    if full_turn {
        breaks.push(front);
    }
    if p.regime() == Regime::Super {
        breaks.push(floor);
    }
    let q = *p;
    let continuous: Arc<dyn Fn(f64) -> f64 + Send + Sync> = match method {
        SnapshotMethod::Closed => Arc::new(move |x| density_closed(Angle::new(x), t, &q).unwrap_or(0.0)),
        SnapshotMethod::Convolve => Arc::new(move |x| renewal_convolve(Angle::new(x), t, &q).unwrap_or(0.0)),
    };
    Ok(DistributionSnapshot {
        atom_position,
        atom_mass,
        continuous: Density::Function(continuous),
        support: (lo, PI),
        breaks,
        // the closed form is integrated in θ directly so that the two
        // evaluators stay independent
        age: (method == SnapshotMethod::Convolve).then_some(ResetAge {
            params: *p,
            horizon: Some(t),
        }),
    })
}

/// Steady state as a snapshot with an empty atom.
pub fn steady_snapshot(p: &ModelParams) -> Result<DistributionSnapshot> {
    steady_state(Angle::PI, p)?;
    let q = *p;
    let floor = reach_floor(p);
    Ok(DistributionSnapshot {
        atom_position: Angle::PI,
        atom_mass: 0.0,
        continuous: Density::Function(Arc::new(move |x| steady_state(Angle::new(x), &q).unwrap_or(0.0))),
        support: (floor, PI),
        breaks: vec![],
        age: Some(ResetAge {
            params: *p,
            horizon: None,
        }),
    })
}

/// Average density matrix `∫P(θ)|θ⟩⟨θ|dθ` with `|θ⟩ = (cos θ/2, i sin θ/2)`,
/// as `[[ρ₀₀, ρ₀₁], [ρ₁₀, ρ₁₁]]`.
pub fn density_matrix(snapshot: &DistributionSnapshot) -> [[Complex64; 2]; 2] {
    let norm = snapshot.expect(|_| 1.0);
    let c = snapshot.expect(f64::cos) / norm;
    let s = snapshot.expect(f64::sin) / norm;
    let r00 = Complex64::new(0.5 * (1.0 + c), 0.0);
    let r11 = Complex64::new(0.5 * (1.0 - c), 0.0);
    let r10 = Complex64::new(0.0, 0.5 * s);
    [[r00, r10.conj()], [r10, r11]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noclick::{flow, FlowMethod};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(lambda: f64) -> ModelParams {
        ModelParams::from_lambda(1.0, lambda).unwrap()
    }

    #[test]
    fn tau0_examples() {
        for lambda in [0.5, 1.0, 1.5] {
            assert_eq!(tau0(Angle::PI, &params(lambda)).unwrap(), 0.0);
        }
        assert_abs_diff_eq!(tau0(Angle::ZERO, &params(1.0)).unwrap(), 1.0, epsilon = 1e-15);
        assert!(tau0(Angle::new(-2.0), &params(1.0)).is_err());
        assert!(tau0(Angle::new(-1.0), &params(1.5)).is_err());
    }

    #[test]
    fn tau0_inverts_flow() {
        for lambda in [0.5, 1.0, 1.5] {
            let p = params(lambda);
            let floor = reach_floor(&p);
            for k in 1..=100 {
                let th = floor + (PI - floor) * k as f64 / 100.0;
                let t = tau0(Angle::new(th), &p).unwrap();
                let back = flow(t, 0.0, Angle::PI, &p, FlowMethod::Numeric).unwrap().value();
                let diff = Angle::new(back - th).value();
                assert!(diff.abs() < 1e-9, "lambda={lambda} th={th} diff={diff}");
            }
        }
    }

    #[test]
    fn tau0_matches_first_visit_decay() {
        // e^{−γτ₀/2} from the printed closed forms
        for lambda in [0.5, 1.0, 1.5, 3.0] {
            let p = params(lambda);
            for th in [0.3, 1.0, 2.5, -0.1] {
                if !reachable(th, &p) {
                    continue;
                }
                let t = tau0(Angle::new(th), &p).unwrap();
                assert_abs_diff_eq!((-0.5 * p.gamma() * t).exp(), decay_at_first_visit(th, &p), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn steady_state_normalized() {
        for lambda in [0.3, 0.7, 1.0, 1.2, 2.0, 5.0] {
            let p = params(lambda);
            let mass = steady_snapshot(&p).unwrap().continuous_mass();
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-8);
        }
        assert!(steady_state(Angle::PI, &params(0.0)).is_err());
        assert_eq!(steady_state(Angle::new(-1.0), &params(1.5)).unwrap(), 0.0);
    }

    #[test]
    fn steady_state_matches_age_weight() {
        // P_∞(θ_τ)|Ω(θ_τ)| = (γ/2) P₀^τ[0‖π] on the first revolution
        for lambda in [0.3, 1.0, 2.0, 5.0] {
            let p = params(lambda);
            let age = ResetAge { params: p, horizon: None };
            for tau in [0.05, 0.3, 1.0, 2.0] {
                let th = flow_closed(tau, Angle::PI, &p);
                let lhs = steady_state(th, &p).unwrap() * p.drift(th).abs();
                let want: f64 = age.weight(tau)
                    * p.beta().map_or(1.0, |b| 1.0 / -(-2.0 * PI * lambda / b).exp_m1());
                assert!((lhs - want).abs() < 1e-9 * want, "lambda={lambda} tau={tau} {lhs} {want}");
            }
        }
    }

    #[test]
    fn steady_state_angle_quadrature() {
        // direct θ quadrature of the closed form where the singularity at θ₊
        // is mild enough to resolve
        for lambda in [0.3, 0.7, 1.0, 1.2] {
            let p = params(lambda);
            let floor = reach_floor(&p);
            let q = quad::integrate(|x| steady_state(Angle::new(x), &p).unwrap(), floor, PI, 1e-12);
            assert!((q.value - 1.0).abs() < 1e-8, "lambda={lambda} {}", q.value);
        }
    }

    #[test]
    fn steady_state_local_exponent() {
        // P_∞ ~ (θ − θ₊)^{λ/β′ − 2}
        for lambda in [1.1, 1.3] {
            let p = params(lambda);
            let plus = p.fixed_points().stable().unwrap().value();
            let (e1, e2) = (1e-7, 1e-6);
            let a = steady_state(Angle::new(plus + e1), &p).unwrap();
            let b = steady_state(Angle::new(plus + e2), &p).unwrap();
            let slope = (b / a).ln() / (e2 / e1).ln();
            let want = lambda / p.beta_prime().unwrap() - 2.0;
            assert!((slope - want).abs() < 0.05 * want.abs(), "lambda={lambda} {slope} {want}");
        }
    }

    #[test]
    fn closed_and_convolved_agree() {
        for lambda in [0.5, 1.0, 1.5, 3.0] {
            let p = params(lambda);
            for t in [0.3, 1.0, 2.0, 3.5] {
                for k in 0..64 {
                    let th = -PI + (k as f64 + 0.5) * 2.0 * PI / 64.0;
                    let a = density_closed(Angle::new(th), t, &p).unwrap();
                    let b = renewal_convolve(Angle::new(th), t, &p).unwrap();
                    assert!((a - b).abs() < 1e-8 * (1.0 + b), "lambda={lambda} t={t} th={th} {a} {b}");
                }
            }
        }
        assert!(density_closed(Angle::ZERO, 4.0, &params(0.5)).is_err());
    }

    #[test]
    fn long_time_limit_is_steady_state() {
        for lambda in [1.0, 1.5, 3.0] {
            let p = params(lambda);
            for th in [0.5, 2.0, 3.0] {
                let a = density_closed(Angle::new(th), 20.0, &p).unwrap();
                let b = steady_state(Angle::new(th), &p).unwrap();
                assert_abs_diff_eq!(a, b, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn snapshots_normalized() {
        for lambda in [0.3, 0.5, 1.0, 1.5, 3.0] {
            let p = params(lambda);
            for t in [0.5, 1.0, 2.0, 5.0, 20.0] {
                let s = snapshot(t, &p, SnapshotMethod::Convolve).unwrap();
                let total = s.atom_mass + s.continuous_mass();
                assert!((total - 1.0).abs() < 1e-7, "lambda={lambda} t={t} total={total}");
            }
        }
        let p = params(0.5);
        let t = 3.0 * PI / p.beta().unwrap();
        let s = snapshot(t, &p, SnapshotMethod::Convolve).unwrap();
        assert_abs_diff_eq!(s.atom_mass + s.continuous_mass(), 1.0, epsilon = 1e-7);
    }

    #[test]
    fn closed_snapshots_normalized_by_angle_quadrature() {
        for lambda in [0.5, 1.0, 1.5] {
            let p = params(lambda);
            for t in [0.5, 1.0, 2.0] {
                let s = snapshot(t, &p, SnapshotMethod::Closed).unwrap();
                assert!(s.age.is_none());
                let total = s.atom_mass + s.continuous_mass();
                assert!((total - 1.0).abs() < 1e-7, "lambda={lambda} t={t} total={total}");
            }
        }
    }

    #[test]
    fn mean_click_rate_from_density() {
        for lambda in [0.5, 1.0, 1.5] {
            let p = params(lambda);
            for t in [0.5, 2.0, 6.0] {
                let s = snapshot(t, &p, SnapshotMethod::Convolve).unwrap();
                let rate = s.expect(|x| p.click_rate(Angle::new(x)));
                assert_abs_diff_eq!(rate, mean_rate(t, &p), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn master_equation_residual() {
        // ∂ₜP + ∂_θ(ΩP) + γ sin²(θ/2) P = 0 away from π and the atom
        let p = params(0.5);
        let (t, h) = (2.5, 1e-4);
        let atom = flow_closed(t, Angle::ZERO, &p).value();
        let front = flow_closed(t, Angle::PI, &p).value();
        let dens = |th: f64, t: f64| renewal_convolve(Angle::new(th), t, &p).unwrap();
        for k in 0..40 {
            let th = -3.0 + 6.0 * k as f64 / 39.0;
            if (th - atom).abs() < 0.05 || (th - front).abs() < 0.05 {
                continue;
            }
            let dt = (dens(th, t + h) - dens(th, t - h)) / (2.0 * h);
            let flux = |x: f64| p.drift(Angle::new(x)) * dens(x, t);
            let dth = (flux(th + h) - flux(th - h)) / (2.0 * h);
            let r = dt + dth + p.click_rate(Angle::new(th)) * dens(th, t);
            assert!(r.abs() < 1e-4, "th={th} r={r}");
        }
    }

    #[test]
    fn density_matrix_examples() {
        let atom = DistributionSnapshot {
            atom_position: Angle::ZERO,
            atom_mass: 1.0,
            continuous: Density::Histogram { edges: vec![-PI, PI], mass: vec![0.0] },
            support: (PI, PI),
            breaks: vec![],
            age: None,
        };
        let r = density_matrix(&atom);
        assert_abs_diff_eq!(r[0][0].re, 1.0);
        assert_abs_diff_eq!(r[1][1].re, 0.0);
        assert_abs_diff_eq!(r[0][1].norm(), 0.0);

        let s = steady_snapshot(&params(0.5)).unwrap();
        let r = density_matrix(&s);
        assert_abs_diff_eq!(r[0][0].re + r[1][1].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r[0][0].re, 0.5, epsilon = 1e-3);
        assert_abs_diff_eq!(r[0][1].norm(), 0.0, epsilon = 1e-3);
    }

    #[test]
    fn supports_for_strong_measurement() {
        let p = params(1.5);
        let plus = p.fixed_points().stable().unwrap().value();
        for t in [0.5, 2.0, 10.0] {
            let s = snapshot(t, &p, SnapshotMethod::Closed).unwrap();
            assert!(s.support.0 >= plus);
            assert_eq!(s.density(plus - 1e-3), 0.0);
        }
    }

    proptest! {
        #[test]
        fn density_nonnegative(lambda in 0.1f64..4.0, t in 0.01f64..8.0, th in -3.14f64..3.14) {
            let p = params(lambda);
            prop_assert!(renewal_convolve(Angle::new(th), t, &p).unwrap() >= -1e-14);
        }

        #[test]
        fn density_matrix_is_a_state(lambda in 0.1f64..3.0, t in 0.1f64..5.0) {
            let s = snapshot(t, &params(lambda), SnapshotMethod::Convolve).unwrap();
            let r = density_matrix(&s);
            let tr = r[0][0].re + r[1][1].re;
            let det = r[0][0].re * r[1][1].re - r[0][1].norm_sqr();
            prop_assert!((tr - 1.0).abs() < 1e-12);
            prop_assert!(det >= -1e-10);
            prop_assert!((r[0][1] - r[1][0].conj()).norm() < 1e-15);
        }
    }
}
