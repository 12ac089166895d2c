//! Deterministic evolution between clicks.
//!
//! With `u = tan(θ/2)` the drift equation becomes the constant-coefficient
//! Riccati equation `du/d(γ₀t) = −(u² + 2λu + 1)`, which is linearised by a
//! regime-specific coordinate on the circle:
//!
//! | regime | coordinate                         | evolution            |
//! |--------|------------------------------------|----------------------|
//! | λ < 1  | `ψ = 2 arctan((λ + u)/β)`          | `ψ ↦ ψ − 2βγ₀t` (mod 2π) |
//! | λ = 1  | `w = 1/(1 + u)`                    | `w ↦ w + γ₀t`        |
//! | λ > 1  | `R = (u − u₊)/(u − u₋)`            | `R ↦ R e^{−2β′γ₀t}`  |
//!
//! Each coordinate is evaluated from `sin(θ/2)` and `cos(θ/2)` so that the
//! passage through `θ = π` (where `u` is infinite) needs no special casing.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{Angle, ModelParams, Regime};

/// How [`flow`] evaluates the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowMethod {
    /// Exact solution through the linearising coordinate.
    ClosedForm,
    /// Adaptive Dormand–Prince integration of `dθ/dt = Ω(θ)`, tolerance 1e−10.
    Numeric,
}

/// Linearising coordinate of the no-click flow, see the module docs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum OrbitCoord {
    /// Phase `ψ ∈ (−π, π]`.
    Phase(f64),
    /// `w`, infinite at the saddle-node point.
    Shift(f64),
    /// `R`, infinite at the unstable fixed point.
    Ratio(f64),
}

/// `ψ(θ) = 2 arctan((λ + tan(θ/2))/β)`, with `ψ(π) = π`.
pub(crate) fn phase_of(theta: f64, lambda: f64, beta: f64) -> f64 {
    let (s, c) = (0.5 * theta).sin_cos();
    2.0 * (s + lambda * c).atan2(beta * c)
}

/// Inverse of [`phase_of`].
pub(crate) fn angle_of_phase(psi: f64, lambda: f64, beta: f64) -> f64 {
    let (s, c) = (0.5 * psi).sin_cos();
    Angle::new(2.0 * (beta * s - lambda * c).atan2(c)).value()
}

fn angle_from_half_tan(num: f64, den: f64) -> f64 {
    // θ/2 = atan2(num, den) with cos(θ/2) ≥ 0
    let (num, den) = if den < 0.0 { (-num, -den) } else { (num, den) };
    Angle::new(2.0 * num.atan2(den)).value()
}

pub(crate) fn orbit_coord(theta: f64, p: &ModelParams) -> OrbitCoord {
    let (s, c) = (0.5 * theta).sin_cos();
    match p.regime() {
        Regime::Sub => OrbitCoord::Phase(phase_of(theta, p.lambda(), p.beta().unwrap())),
        Regime::Critical => OrbitCoord::Shift(c / (s + c)),
        Regime::Super => {
            let (up, um) = p.half_tan_fixed_points().unwrap();
            OrbitCoord::Ratio((s - up * c) / (s - um * c))
        }
    }
}

pub(crate) fn angle_of_coord(coord: OrbitCoord, p: &ModelParams) -> f64 {
    match coord {
        OrbitCoord::Phase(psi) => angle_of_phase(psi, p.lambda(), p.beta().unwrap()),
        OrbitCoord::Shift(w) => {
            if w.is_infinite() {
                -0.5 * PI
            } else {
                angle_from_half_tan(1.0 - w, w)
            }
        }
        OrbitCoord::Ratio(r) => {
            let (up, um) = p.half_tan_fixed_points().unwrap();
            if r.is_infinite() {
                angle_from_half_tan(um, 1.0)
            } else {
                angle_from_half_tan(up - r * um, 1.0 - r)
            }
        }
    }
}

/// Advances an orbit coordinate by the dimensionless time `tau = γ₀Δt`.
pub(crate) fn advance_coord(coord: OrbitCoord, tau: f64, p: &ModelParams) -> OrbitCoord {
    match coord {
        OrbitCoord::Phase(psi) => {
            let b = p.beta().unwrap();
            OrbitCoord::Phase(Angle::new(psi - 2.0 * b * tau).value())
        }
        OrbitCoord::Shift(w) => OrbitCoord::Shift(w + tau),
        OrbitCoord::Ratio(r) => OrbitCoord::Ratio(r * (-2.0 * p.beta_prime().unwrap() * tau).exp()),
    }
}

/// `θ_t(s, θ_start)`: the no-click trajectory through `θ_start` at time `s`.
pub fn flow(t: f64, s: f64, theta_start: Angle, p: &ModelParams, method: FlowMethod) -> Result<Angle> {
    if !(t.is_finite() && s.is_finite()) || t < s {
        return Err(Error::invalid("t", format!("need finite t >= s, got t={t}, s={s}")));
    }
    let dt = t - s;
    Ok(match method {
        FlowMethod::ClosedForm => flow_closed(dt, theta_start, p),
        FlowMethod::Numeric => Angle::new(dopri5(
            |th| -2.0 * p.gamma0() * (1.0 + p.lambda() * th.sin()),
            theta_start.value(),
            dt,
            1e-10,
        )),
    })
}

/// Closed-form flow over a duration `dt ≥ 0`.
pub(crate) fn flow_closed(dt: f64, theta_start: Angle, p: &ModelParams) -> Angle {
    let c = orbit_coord(theta_start.value(), p);
    Angle::new(angle_of_coord(advance_coord(c, p.gamma0() * dt, p), p))
}

/// Dormand–Prince 5(4) for the scalar autonomous ODE `y' = f(y)` on `[0, t]`.
fn dopri5<F: Fn(f64) -> f64>(f: F, y0: f64, t: f64, tol: f64) -> f64 {
    const C: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    if t <= 0.0 {
        return y0;
    }
    let (mut x, mut y) = (0.0, y0);
    let mut h = (t * 1e-3).max(1e-12).min(t);
    let mut k = [0.0; 7];
    k[0] = f(y);
    while x < t {
        if x + h > t {
            h = t - x;
        }
        for stage in 1..7 {
            let mut acc = y;
            for (j, kj) in k.iter().enumerate().take(stage) {
                acc += h * C[stage - 1][j] * kj;
            }
            k[stage] = f(acc);
        }
        let mut y_new = y;
        for (j, kj) in k.iter().enumerate().take(6) {
            y_new += h * C[5][j] * kj;
        }
        let err: f64 = h * E.iter().zip(k.iter()).map(|(e, kk)| e * kk).sum::<f64>();
        let scale = tol * (1.0 + y.abs().max(y_new.abs()));
        let ratio = err.abs() / scale;
        if ratio <= 1.0 {
            x += h;
            y = y_new;
            // first-same-as-last
            k[0] = k[6];
        }
        let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    y
}

/// `−ln |Ω(θ)|` up to a regime constant, evaluated from the orbit
/// coordinate without cancellation. `None` at a fixed point of the drift.
fn log_inverse_drift(coord: OrbitCoord, p: &ModelParams) -> Option<f64> {
    match coord {
        OrbitCoord::Phase(psi) => {
            // 1 + λ sin θ = β² / (c² + (βs − λc)²) with (s, c) = sincos(ψ/2)
            let (s, c) = (0.5 * psi).sin_cos();
            let e = p.beta().unwrap() * s - p.lambda() * c;
            Some((c * c + e * e).ln())
        }
        OrbitCoord::Shift(w) => {
            // at λ = 1: 1 + sin θ = 1 / (w² + (1 − w)²)
            if !w.is_finite() {
                return None;
            }
            Some((w * w + (1.0 - w) * (1.0 - w)).ln())
        }
        OrbitCoord::Ratio(r) => {
            // (s − u₊c)(s − u₋c) = R (u₊ − u₋)² / ((1 − R)² + (u₊ − R u₋)²)
            if r == 0.0 || !r.is_finite() {
                return None;
            }
            let (up, um) = p.half_tan_fixed_points().unwrap();
            let d = if r.abs() > 1.0 {
                let v = 1.0 / r;
                2.0 * r.abs().ln() + ((v - 1.0).powi(2) + (up * v - um).powi(2)).ln()
            } else {
                ((1.0 - r).powi(2) + (up - r * um).powi(2)).ln()
            };
            Some(d - r.abs().ln())
        }
    }
}

/// `ln P₀ᵗ[0‖θ₀]` for `t ≥ 0`, given the orbit coordinate of `θ₀`.
fn log_survival(t: f64, theta0: Angle, c0: OrbitCoord, p: &ModelParams) -> f64 {
    let ct = advance_coord(c0, p.gamma0() * t, p);
    let lt = match ct {
        // R underflowed on its way to the stable point: use the R → 0 limit
        // with ln R carried separately
        OrbitCoord::Ratio(r) if r == 0.0 => match c0 {
            OrbitCoord::Ratio(r0) if r0 != 0.0 && r0.is_finite() => {
                let (up, _) = p.half_tan_fixed_points().unwrap();
                let ln_r = r0.abs().ln() - 2.0 * p.beta_prime().unwrap() * p.gamma0() * t;
                Some((1.0 + up * up).ln() - ln_r)
            }
            _ => None,
        },
        _ => log_inverse_drift(ct, p),
    };
    match (log_inverse_drift(c0, p), lt) {
        (Some(l0), Some(lt)) => (lt - l0 - 0.5 * p.gamma() * t).min(0.0),
        _ => -p.click_rate(theta0) * t,
    }
}

/// `P₀ᵗ[0‖θ₀]`: probability of no click during `(0, t]` starting from `θ₀`.
///
/// Equal to `Ω(θ₀)/Ω(θ_t) e^{−γt/2}`; at a fixed point of the drift this
/// degenerates to `exp(−α(θ₀) t)`.
pub fn survival(t: f64, theta0: Angle, p: &ModelParams) -> f64 {
    if t <= 0.0 || p.gamma() == 0.0 {
        return 1.0;
    }
    log_survival(t, theta0, orbit_coord(theta0.value(), p), p).exp()
}

/// Time `τ` at which `survival(τ, θ₀) = u`.
///
/// Returns `+∞` when `γ = 0` and `u < 1` (the detector never fires).
pub fn first_click_quantile(u: f64, theta0: Angle, p: &ModelParams) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::invalid("u", format!("must lie in (0, 1], got {u}")));
    }
    if u == 1.0 {
        return Ok(0.0);
    }
    if p.gamma() == 0.0 {
        return Ok(f64::INFINITY);
    }
    let c0 = orbit_coord(theta0.value(), p);
    let target = u.ln();
    let g = |tau: f64| log_survival(tau, theta0, c0, p) - target;
    let (mut lo, mut hi) = (0.0, 1.0 / p.gamma0());
    while g(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 / p.gamma0() {
            return Ok(f64::INFINITY);
        }
    }
    // Newton on ln S, whose slope is −α(θ_τ); bisection whenever a step
    // leaves the bracket
    let tol = 1e-14 * target.abs().max(1.0);
    let mut tau = 0.5 * (lo + hi);
    for _ in 0..200 {
        let v = g(tau);
        if v.abs() <= tol {
            return Ok(tau);
        }
        if v > 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let slope = -p.click_rate(flow_closed(tau, theta0, p));
        let next = if slope < 0.0 { tau - v / slope } else { f64::NAN };
        tau = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
    }
    Ok(tau)
}

/// Two-component state `a|ψ₀⟩ + b|ψ₁⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveFunction {
    pub a: Complex64,
    pub b: Complex64,
}

impl WaveFunction {
    pub const GROUND: WaveFunction = WaveFunction {
        a: Complex64::new(1.0, 0.0),
        b: Complex64::new(0.0, 0.0),
    };
    pub const EXCITED: WaveFunction = WaveFunction {
        a: Complex64::new(0.0, 0.0),
        b: Complex64::new(0.0, 1.0),
    };

    pub fn new(a: Complex64, b: Complex64) -> Self {
        WaveFunction { a, b }
    }

    /// The plane state `(cos θ/2, i sin θ/2)`.
    pub fn from_angle(theta: Angle) -> Self {
        let (s, c) = (0.5 * theta.value()).sin_cos();
        WaveFunction::new(Complex64::new(c, 0.0), Complex64::new(0.0, s))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.a.norm_sqr() + self.b.norm_sqr()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm_sqr().sqrt();
        WaveFunction::new(self.a / n, self.b / n)
    }
}

/// Unnormalised no-click state `exp(−iγ₀t H_eff) ψ₀`, with
/// `H_eff = [[0, 1], [1, −2iλ]]`.
///
/// Its squared norm is the survival probability.
pub fn propagator(t: f64, psi0: WaveFunction, p: &ModelParams) -> WaveFunction {
    let tau = p.gamma0() * t;
    let lambda = p.lambda();
    // exp(A) = e^{−λτ} [C·I + S·(A + λτ I)/τ],  A + λτI = τ[[λ, −i], [−i, −λ]]
    let (c, s) = match p.regime() {
        Regime::Sub => {
            let b = p.beta().unwrap();
            ((b * tau).cos(), (b * tau).sin() / b)
        }
        Regime::Critical => (1.0, tau),
        Regime::Super => {
            let b = p.beta_prime().unwrap();
            ((b * tau).cosh(), (b * tau).sinh() / b)
        }
    };
    let damp = (-lambda * tau).exp();
    let i = Complex64::i();
    let m00 = damp * (c + lambda * s);
    let m11 = damp * (c - lambda * s);
    let m01 = -i * damp * s;
    WaveFunction::new(m00 * psi0.a + m01 * psi0.b, m01 * psi0.a + m11 * psi0.b)
}

/// Angle of a state lying (up to global phase) on the `(cos θ/2, i sin θ/2)`
/// great circle.
pub fn bloch_angle(psi: WaveFunction) -> Result<Angle> {
    let n = psi.norm_sqr().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::invalid("psi", "state has zero or non-finite norm"));
    }
    let (a, b) = (psi.a / n, psi.b / n);
    let mag = a.norm();
    let (a_re, b_gauged) = if mag > 0.0 {
        (mag, b * a.conj() / mag)
    } else {
        (0.0, Complex64::new(0.0, b.norm()))
    };
    if b_gauged.re.abs() > 1e-9 {
        return Err(Error::invalid(
            "psi",
            format!("state is off the measurement plane (Re b = {:e} after gauge fixing)", b_gauged.re),
        ));
    }
    Ok(Angle::new(2.0 * b_gauged.im.atan2(a_re)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(lambda: f64) -> ModelParams {
        ModelParams::from_lambda(1.0, lambda).unwrap()
    }

    /// Survival from the ground state in the explicit trigonometric form.
    fn survival_ground_explicit(t: f64, p: &ModelParams) -> f64 {
        let tau = p.gamma0() * t;
        let damp = (-0.5 * p.gamma() * t).exp();
        match p.regime() {
            Regime::Sub => {
                let (b, phi) = (p.beta().unwrap(), p.phi().unwrap());
                damp / (b * b) * ((b * tau).sin().powi(2) + (b * tau + phi).sin().powi(2))
            }
            Regime::Critical => damp * (tau * tau + (1.0 + tau).powi(2)),
            Regime::Super => {
                let (b, phi) = (p.beta_prime().unwrap(), p.phi_prime().unwrap());
                damp / (b * b) * ((b * tau).sinh().powi(2) + (b * tau + phi).sinh().powi(2))
            }
        }
    }

    /// exp(−∫α) along the numerically integrated flow, by quadrature.
    fn survival_by_quadrature(t: f64, theta0: Angle, p: &ModelParams) -> f64 {
        let q = crate::quad::integrate(
            |s| p.click_rate(flow(s, 0.0, theta0, p, FlowMethod::Numeric).unwrap()),
            0.0,
            t,
            1e-12,
        );
        (-q.value).exp()
    }

    #[test]
    fn flow_unmeasured_is_rigid_rotation() {
        let p = params(0.0);
        let th = flow(1.0, 0.0, Angle::ZERO, &p, FlowMethod::ClosedForm).unwrap();
        assert_abs_diff_eq!(th.value(), -2.0, epsilon = 1e-14);
        let th = flow(3.0, 0.0, Angle::ZERO, &p, FlowMethod::ClosedForm).unwrap();
        assert_abs_diff_eq!(th.value(), Angle::new(-6.0).value(), epsilon = 1e-13);
    }

    #[test]
    fn flow_critical_matches_tangent_law() {
        let p = params(1.0);
        for t in [0.1, 1.0, 5.0, 100.0] {
            let th = flow(t, 0.0, Angle::ZERO, &p, FlowMethod::ClosedForm).unwrap();
            assert_abs_diff_eq!((PI / 4.0 - th.value() / 2.0).tan(), 1.0 + 2.0 * t, epsilon = 1e-9 * (1.0 + t));
        }
        let th = flow(1e9, 0.0, Angle::ZERO, &p, FlowMethod::ClosedForm).unwrap();
        assert_abs_diff_eq!(th.value(), -PI / 2.0, epsilon = 1e-8);
        // from π: tan(π/4 − θ/2) = −1 + 2t
        for t in [0.2, 0.5, 3.0] {
            let th = flow(t, 0.0, Angle::PI, &p, FlowMethod::ClosedForm).unwrap();
            assert_abs_diff_eq!((PI / 4.0 - th.value() / 2.0).tan(), -1.0 + 2.0 * t, epsilon = 1e-10);
        }
    }

    #[test]
    fn flow_explicit_forms_sub_and_super() {
        // λ<1 from 0 and from π: arctan forms
        let p = params(0.5);
        let (b, l) = (p.beta().unwrap(), p.lambda());
        for t in [0.3, 1.0, 2.5] {
            let th = flow(t, 0.0, Angle::ZERO, &p, FlowMethod::ClosedForm).unwrap().value();
            let lhs = ((l + (th / 2.0).tan()) / b).atan() - (l / b).atan();
            // compare modulo π (arctan branch)
            let d = lhs + b * t;
            assert_abs_diff_eq!(d - PI * (d / PI).round(), 0.0, epsilon = 1e-12);
            let th = flow(t, 0.0, Angle::PI, &p, FlowMethod::ClosedForm).unwrap().value();
            let d = ((l + (th / 2.0).tan()) / b).atan() - PI / 2.0 + b * t;
            assert_abs_diff_eq!(d - PI * (d / PI).round(), 0.0, epsilon = 1e-12);
        }
        // λ>1 sinh-ratio forms
        let p = params(1.5);
        let (b, f) = (p.beta_prime().unwrap(), p.phi_prime().unwrap());
        for t in [0.3, 1.0, 2.5] {
            let th = flow(t, 0.0, Angle::ZERO, &p, FlowMethod::ClosedForm).unwrap().value();
            assert_abs_diff_eq!((th / 2.0).tan(), -(b * t).sinh() / (b * t + f).sinh(), epsilon = 1e-12);
            let th = flow(t, 0.0, Angle::PI, &p, FlowMethod::ClosedForm).unwrap().value();
            assert_abs_diff_eq!((th / 2.0).tan(), -(b * t - f).sinh() / (b * t).sinh(), epsilon = 1e-10);
        }
    }

    #[test]
    fn flow_closed_matches_numeric() {
        let p = params(1.5);
        let a = flow(1.0, 0.0, Angle::PI, &p, FlowMethod::ClosedForm).unwrap();
        let b = flow(1.0, 0.0, Angle::PI, &p, FlowMethod::Numeric).unwrap();
        assert_abs_diff_eq!(a.value(), b.value(), epsilon = 1e-8);

        for lambda in [0.25, 0.5, 1.0, 1.5, 3.0] {
            let p = params(lambda);
            for start in [Angle::ZERO, Angle::PI] {
                let mut worst: f64 = 0.0;
                for k in 0..=100 {
                    let t = 0.1 * k as f64;
                    let a = flow(t, 0.0, start, &p, FlowMethod::ClosedForm).unwrap().value();
                    let b = flow(t, 0.0, start, &p, FlowMethod::Numeric).unwrap().value();
                    let d = crate::model::wrap_angle(a - b).abs();
                    worst = worst.max(d);
                }
                assert!(worst < 1e-7, "lambda={lambda} start={start:?} worst={worst:e}");
            }
        }
    }

    #[test]
    fn flow_rejects_backwards_time() {
        let p = params(0.5);
        assert!(flow(0.0, 1.0, Angle::ZERO, &p, FlowMethod::ClosedForm).is_err());
    }

    #[test]
    fn flow_from_fixed_points_is_stationary() {
        let p = params(2.0);
        let crate::model::FixedPoints::Pair { stable, unstable } = p.fixed_points() else {
            unreachable!()
        };
        for fp in [stable, unstable] {
            let th = flow(3.0, 0.0, fp, &p, FlowMethod::ClosedForm).unwrap();
            assert_abs_diff_eq!(th.value(), fp.value(), epsilon = 1e-9);
        }
    }

    #[test]
    fn propagator_identity_and_jordan_form() {
        for lambda in [0.3, 1.0, 2.0] {
            let p = params(lambda);
            let psi = propagator(0.0, WaveFunction::GROUND, &p);
            assert_eq!(psi, WaveFunction::GROUND);
        }
        let p = params(1.0);
        for t in [0.2, 1.0, 4.0] {
            let psi = propagator(t, WaveFunction::GROUND, &p);
            let e = (-t as f64).exp();
            assert_abs_diff_eq!(psi.a.re, e * (1.0 + t), epsilon = 1e-14);
            assert_abs_diff_eq!(psi.a.im, 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(psi.b.re, 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(psi.b.im, -e * t, epsilon = 1e-14);
        }
    }

    #[test]
    fn propagator_norm_is_survival() {
        let p = params(0.5);
        let psi = propagator(0.7, WaveFunction::GROUND, &p);
        assert_abs_diff_eq!(psi.norm_sqr(), survival(0.7, Angle::ZERO, &p), epsilon = 1e-10);
        for lambda in [0.0, 0.25, 0.5, 0.999, 1.0, 1.001, 1.5, 3.0, 8.0] {
            let p = params(lambda);
            for k in 0..40 {
                let t = 0.125 * k as f64;
                let psi = propagator(t, WaveFunction::GROUND, &p);
                assert_abs_diff_eq!(psi.norm_sqr(), survival(t, Angle::ZERO, &p), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn propagator_matches_matrix_exponential() {
        // independent route: Taylor series of exp(−iγ₀t H_eff)
        let i = Complex64::i();
        for (lambda, t) in [(0.5, 0.8), (1.0, 0.6), (2.5, 0.4)] {
            let p = params(lambda);
            let h = [
                [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
                [Complex64::new(1.0, 0.0), Complex64::new(0.0, -2.0 * lambda)],
            ];
            let a = h.map(|row| row.map(|x| -i * t * x));
            let mut term = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
            let mut sum = term;
            for k in 1..80 {
                term = [
                    (a[0][0] * term[0] + a[0][1] * term[1]) / k as f64,
                    (a[1][0] * term[0] + a[1][1] * term[1]) / k as f64,
                ];
                sum[0] += term[0];
                sum[1] += term[1];
            }
            let psi = propagator(t, WaveFunction::GROUND, &p);
            assert!((psi.a - sum[0]).norm() < 1e-13 && (psi.b - sum[1]).norm() < 1e-13);
        }
    }

    #[test]
    fn survival_examples() {
        let p = params(0.0);
        for t in [0.0, 1.0, 50.0] {
            assert_eq!(survival(t, Angle::ZERO, &p), 1.0);
        }
        let p = params(1.0);
        assert_abs_diff_eq!(survival(1.0, Angle::ZERO, &p), 5.0 * (-2.0f64).exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(
            survival_by_quadrature(1.0, Angle::ZERO, &p),
            5.0 * (-2.0f64).exp(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn survival_ratio_form_matches_explicit_form() {
        for lambda in [0.5, 0.2, 0.9, 1.0, 1.3, 4.0] {
            let p = params(lambda);
            for k in 0..=200 {
                let t = 0.05 * k as f64;
                let a = survival(t, Angle::ZERO, &p);
                let b = survival_ground_explicit(t, &p);
                assert!((a - b).abs() < 1e-10, "lambda={lambda} t={t} {a} {b}");
            }
        }
    }

    #[test]
    fn critical_decays_fastest() {
        let s1 = survival(20.0, Angle::ZERO, &params(1.0));
        for lambda in [0.5, 1.5] {
            let s = survival(20.0, Angle::ZERO, &params(lambda));
            assert!(s1 / s < 1e-3, "lambda={lambda} ratio={}", s1 / s);
        }
    }

    #[test]
    fn quantile_examples() {
        let p = params(1.0);
        assert_eq!(first_click_quantile(1.0, Angle::ZERO, &p).unwrap(), 0.0);
        let tau = first_click_quantile(5.0 * (-2.0f64).exp(), Angle::ZERO, &p).unwrap();
        assert_abs_diff_eq!(tau, 1.0, epsilon = 1e-10);
        assert!(first_click_quantile(0.0, Angle::ZERO, &p).is_err());
        assert!(first_click_quantile(1.5, Angle::ZERO, &p).is_err());
        assert_eq!(
            first_click_quantile(0.5, Angle::ZERO, &params(0.0)).unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn survival_long_times_past_ratio_underflow() {
        // beyond γ₀t ≈ 710/(2β′) the cross-ratio underflows; the decay rate
        // must stay α(θ₊)
        let p = ModelParams::from_lambda(1.0, 5.0).unwrap();
        let rate = p.click_rate(p.fixed_points().stable().unwrap());
        let s1 = survival(100.0, Angle::PI, &p);
        let s2 = survival(101.0, Angle::PI, &p);
        assert!(s1 > 0.0);
        assert_abs_diff_eq!((s1 / s2).ln(), rate, epsilon = 1e-9);
        let u = s1 * 1.0000001;
        let q = first_click_quantile(u, Angle::PI, &p).unwrap();
        assert_abs_diff_eq!(q, 100.0 - 1e-7 / rate, epsilon = 1e-6);
    }

    #[test]
    fn quantile_from_stable_fixed_point() {
        let p = params(2.0);
        let stable = p.fixed_points().stable().unwrap();
        let tau = first_click_quantile(0.3, stable, &p).unwrap();
        assert_abs_diff_eq!(survival(tau, stable, &p), 0.3, epsilon = 1e-11);
    }

    #[test]
    fn bloch_angle_examples() {
        assert_eq!(bloch_angle(WaveFunction::GROUND).unwrap(), Angle::ZERO);
        assert_abs_diff_eq!(bloch_angle(WaveFunction::EXCITED).unwrap().value(), PI, epsilon = 1e-15);
        // global phase is irrelevant
        let g = Complex64::from_polar(1.0, 0.7);
        let psi = WaveFunction::from_angle(Angle::new(-2.0));
        let rotated = WaveFunction::new(psi.a * g, psi.b * g);
        assert_abs_diff_eq!(bloch_angle(rotated).unwrap().value(), -2.0, epsilon = 1e-14);
        // off-plane state
        let off = WaveFunction::new(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)).normalized();
        assert!(bloch_angle(off).is_err());
    }

    #[test]
    fn propagated_state_follows_flow() {
        for lambda in [0.5, 1.0, 1.5] {
            let p = params(lambda);
            for k in 0..=30 {
                let t = 0.1 * k as f64;
                let psi = propagator(t, WaveFunction::GROUND, &p).normalized();
                let a = bloch_angle(psi).unwrap().value();
                let b = flow(t, 0.0, Angle::ZERO, &p, FlowMethod::ClosedForm).unwrap().value();
                assert!(crate::model::wrap_angle(a - b).abs() < 1e-8, "lambda={lambda} t={t}");
            }
        }
    }

    proptest! {
        #[test]
        fn survival_semigroup(
            lambda in prop::sample::select(vec![0.25, 0.5, 0.8, 1.0, 1.2, 1.5, 3.0]),
            theta0 in -PI..PI,
            t in 0.0f64..5.0,
            s in 0.0f64..5.0,
        ) {
            let p = params(lambda);
            let th0 = Angle::new(theta0);
            let lhs = survival(t + s, th0, &p);
            let mid = flow_closed(t, th0, &p);
            let rhs = survival(t, th0, &p) * survival(s, mid, &p);
            prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
        }

        #[test]
        fn survival_decreasing(lambda in 0.05f64..4.0, t in 0.0f64..8.0) {
            let p = params(lambda);
            let a = survival(t, Angle::ZERO, &p);
            let b = survival(t + 0.01, Angle::ZERO, &p);
            prop_assert!(b < a);
        }

        #[test]
        fn quantile_inverts_survival(lambda in 0.05f64..4.0, u in 1e-6f64..1.0, theta0 in -PI..PI) {
            let p = params(lambda);
            let th = Angle::new(theta0);
            let tau = first_click_quantile(u, th, &p).unwrap();
            prop_assert!((survival(tau, th, &p) - u).abs() < 1e-9);
        }
    }
}
