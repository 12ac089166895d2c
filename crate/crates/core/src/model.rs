//! Physical parameters, regime constants, and the angle vector field.
//!
//! The qubit state is confined to a great circle of the Bloch sphere and is
//! described by a single angle `θ ∈ (−π, π]`. Between detector clicks it
//! drifts with angular velocity
//!
//! ```text
//! Ω(θ) = −2γ₀ (1 + λ sin θ),      λ = γ / (4γ₀)
//! ```
//!
//! and clicks arrive at the state-dependent rate `α(θ) = γ sin²(θ/2)`, each
//! click resetting the angle to `π`.
//!
//! All regime-dependent constants are computed once in [`ModelParams::new`];
//! constants that do not apply to the current regime are `None`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the band around `λ = 1` (and `λ = 2`) that is treated as the
/// boundary case itself.
pub const CRITICAL_GUARD: f64 = 1e-9;

/// Wraps any real angle into `(−π, π]`.
///
/// `−π` maps to `π`.
pub fn wrap_angle(x: f64) -> f64 {
    if x > -PI && x <= PI {
        return x;
    }
    let mut r = x.rem_euclid(TAU);
    // rem_euclid may round up to exactly TAU for tiny negative inputs.
    if r >= TAU {
        r -= TAU;
    }
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// An angle on the circle, always stored in `(−π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Angle(f64);

impl Angle {
    /// The reset state `|ψ₁⟩`.
    pub const PI: Angle = Angle(PI);
    /// The ground state `|ψ₀⟩`.
    pub const ZERO: Angle = Angle(0.0);

    pub fn new(theta: f64) -> Self {
        Angle(wrap_angle(theta))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<f64> for Angle {
    fn from(theta: f64) -> Self {
        Angle::new(theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `λ < 1`: the drift never vanishes and the angle keeps rotating.
    Sub,
    /// `λ = 1`: saddle-node point at `θ = −π/2`.
    Critical,
    /// `λ > 1`: a stable/unstable pair of fixed points.
    Super,
}

/// Regime of the click-counting statistics, split at `λ = 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CountingRegime {
    /// `λ < 2`: damped oscillation in the mean count.
    Oscillatory,
    /// `λ = 2`: double root, polynomial-times-exponential transient.
    Confluent,
    /// `λ > 2`: purely exponential transient.
    Overdamped,
}

/// Physical rates plus every derived constant used by the analytic modules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    gamma0: f64,
    gamma: f64,
    lambda: f64,
    regime: Regime,
    counting_regime: CountingRegime,
    beta: Option<f64>,
    beta_prime: Option<f64>,
    phi: Option<f64>,
    phi_prime: Option<f64>,
    omega: Option<f64>,
    omega_prime: Option<f64>,
    varphi: Option<f64>,
    varphi_prime: Option<f64>,
}

impl ModelParams {
    /// Builds the parameter set from the Rabi scale `γ₀ > 0` and the
    /// measurement coupling `γ ≥ 0`.
    pub fn new(gamma0: f64, gamma: f64) -> Result<Self> {
        if !gamma0.is_finite() || gamma0 <= 0.0 {
            return Err(Error::invalid("gamma0", format!("must be finite and > 0, got {gamma0}")));
        }
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::invalid("gamma", format!("must be finite and >= 0, got {gamma}")));
        }
        let lambda = gamma / (4.0 * gamma0);

        let regime = if (lambda - 1.0).abs() < CRITICAL_GUARD {
            Regime::Critical
        } else if lambda < 1.0 {
            Regime::Sub
        } else {
            Regime::Super
        };
        let counting_regime = if (lambda - 2.0).abs() < CRITICAL_GUARD {
            CountingRegime::Confluent
        } else if lambda < 2.0 {
            CountingRegime::Oscillatory
        } else {
            CountingRegime::Overdamped
        };

        let (beta, phi) = match regime {
            Regime::Sub => {
                let b = ((1.0 - lambda) * (1.0 + lambda)).sqrt();
                (Some(b), Some(b.atan2(lambda)))
            }
            _ => (None, None),
        };
        let (beta_prime, phi_prime) = match regime {
            Regime::Super => {
                let b = ((lambda - 1.0) * (lambda + 1.0)).sqrt();
                (Some(b), Some((b / lambda).atanh()))
            }
            _ => (None, None),
        };
        let (omega, varphi) = match counting_regime {
            CountingRegime::Oscillatory => {
                let w = ((2.0 - lambda) * (2.0 + lambda)).sqrt();
                (Some(gamma0 * w), Some((lambda * w).atan2(lambda * lambda - 2.0)))
            }
            _ => (None, None),
        };
        let (omega_prime, varphi_prime) = match counting_regime {
            CountingRegime::Overdamped => {
                let w = ((lambda - 2.0) * (lambda + 2.0)).sqrt();
                (
                    Some(gamma0 * w),
                    Some((lambda * w / (lambda * lambda - 2.0)).atanh()),
                )
            }
            _ => (None, None),
        };

        Ok(ModelParams {
            gamma0,
            gamma,
            lambda,
            regime,
            counting_regime,
            beta,
            beta_prime,
            phi,
            phi_prime,
            omega,
            omega_prime,
            varphi,
            varphi_prime,
        })
    }

    /// Builds the parameter set from `γ₀` and the dimensionless `λ`, with
    /// `γ = 4γ₀λ`.
    pub fn from_lambda(gamma0: f64, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::invalid("lambda", format!("must be finite and >= 0, got {lambda}")));
        }
        Self::new(gamma0, 4.0 * gamma0 * lambda)
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn counting_regime(&self) -> CountingRegime {
        self.counting_regime
    }

    /// `β = √(1 − λ²)`, present for `λ < 1`.
    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    /// `β′ = √(λ² − 1)`, present for `λ > 1`.
    pub fn beta_prime(&self) -> Option<f64> {
        self.beta_prime
    }

    /// `φ ∈ (0, π/2]` with `tan φ = β/λ`, present for `λ < 1`.
    pub fn phi(&self) -> Option<f64> {
        self.phi
    }

    /// `φ′` with `tanh φ′ = β′/λ`, present for `λ > 1`.
    pub fn phi_prime(&self) -> Option<f64> {
        self.phi_prime
    }

    /// `ω = γ₀√(4 − λ²)`, present for `λ < 2`.
    pub fn omega(&self) -> Option<f64> {
        self.omega
    }

    /// `ω′ = γ₀√(λ² − 4)`, present for `λ > 2`.
    pub fn omega_prime(&self) -> Option<f64> {
        self.omega_prime
    }

    /// `ϕ ∈ (0, π)` with `tan ϕ = λ√(4−λ²)/(λ²−2)`, present for `λ < 2`.
    pub fn varphi(&self) -> Option<f64> {
        self.varphi
    }

    /// `ϕ′` with `tanh ϕ′ = λ√(λ²−4)/(λ²−2)`, present for `λ > 2`.
    pub fn varphi_prime(&self) -> Option<f64> {
        self.varphi_prime
    }

    /// `tan(θ±/2) = −λ ± √(λ²−1)` for `λ > 1`, returned as `(u₊, u₋)`.
    pub(crate) fn half_tan_fixed_points(&self) -> Option<(f64, f64)> {
        self.beta_prime.map(|b| {
            // u₊ = −λ + β′ suffers cancellation for large λ; use u₊u₋ = 1.
            let u_minus = -self.lambda - b;
            (1.0 / u_minus, u_minus)
        })
    }

    /// `1 + λ sin θ`, factored through the fixed points when they exist so
    /// that it stays accurate near `θ±`.
    pub fn drift_factor(&self, theta: f64) -> f64 {
        let (s, c) = (0.5 * theta).sin_cos();
        match (self.regime, self.half_tan_fixed_points()) {
            (_, Some((up, um))) => (s - up * c) * (s - um * c),
            // 1 + λ sin θ = (s + c)² + (λ − 1) sin θ
            (Regime::Critical, _) => (s + c) * (s + c) + (self.lambda - 1.0) * theta.sin(),
            _ => 1.0 + self.lambda * theta.sin(),
        }
    }

    /// Angular velocity `Ω(θ) = −2γ₀(1 + λ sin θ)`.
    pub fn drift(&self, theta: Angle) -> f64 {
        -2.0 * self.gamma0 * self.drift_factor(theta.value())
    }

    /// Click rate `α(θ) = γ sin²(θ/2)`.
    pub fn click_rate(&self, theta: Angle) -> f64 {
        let s = (0.5 * theta.value()).sin();
        self.gamma * s * s
    }

    /// Zeros of the drift together with their stability.
    pub fn fixed_points(&self) -> FixedPoints {
        match self.regime {
            Regime::Sub => FixedPoints::None,
            Regime::Critical => FixedPoints::Degenerate(Angle::new(-FRAC_PI_2)),
            Regime::Super => {
                let plus = -(1.0 / self.lambda).asin();
                FixedPoints::Pair {
                    stable: Angle::new(plus),
                    unstable: Angle::new(PI - plus),
                }
            }
        }
    }

    /// `dΩ/dθ = −2γ₀λ cos θ`; negative at a stable zero of the drift.
    pub fn drift_slope(&self, theta: Angle) -> f64 {
        -2.0 * self.gamma0 * self.lambda * theta.value().cos()
    }
}

/// Fixed points of the no-click drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FixedPoints {
    None,
    /// The saddle-node point at `λ = 1`.
    Degenerate(Angle),
    Pair { stable: Angle, unstable: Angle },
}

impl FixedPoints {
    pub fn stable(&self) -> Option<Angle> {
        match *self {
            FixedPoints::Pair { stable, .. } => Some(stable),
            FixedPoints::Degenerate(a) => Some(a),
            FixedPoints::None => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn params_sub_regime() {
        let p = ModelParams::new(1.0, 2.0).unwrap();
        assert_eq!(p.lambda(), 0.5);
        assert_eq!(p.regime(), Regime::Sub);
        assert_abs_diff_eq!(p.beta().unwrap(), 0.75f64.sqrt(), epsilon = 1e-15);
        assert!(p.beta_prime().is_none());
        let (b, l) = (p.beta().unwrap(), p.lambda());
        assert_abs_diff_eq!(b * b + l * l, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn params_critical_and_confluent() {
        let p = ModelParams::new(1.0, 4.0).unwrap();
        assert_eq!(p.regime(), Regime::Critical);
        assert!(p.beta().is_none() && p.beta_prime().is_none());
        assert!(p.phi().is_none() && p.phi_prime().is_none());

        let p = ModelParams::new(1.0, 8.0).unwrap();
        assert_eq!(p.lambda(), 2.0);
        assert_eq!(p.counting_regime(), CountingRegime::Confluent);
        assert!(p.omega().is_none() && p.omega_prime().is_none());
        let b = p.beta_prime().unwrap();
        assert_abs_diff_eq!(p.lambda().powi(2) - b * b, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn params_reject_bad_input() {
        assert!(ModelParams::new(0.0, 1.0).is_err());
        assert!(ModelParams::new(-1.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, -1e-3).is_err());
        assert!(ModelParams::new(f64::NAN, 1.0).is_err());
        assert!(ModelParams::new(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn drift_and_rate_examples() {
        let p = ModelParams::from_lambda(1.0, 0.5).unwrap();
        assert_abs_diff_eq!(p.drift(Angle::ZERO), -2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.drift(Angle::new(FRAC_PI_2)), -3.0, epsilon = 1e-15);
        let p1 = ModelParams::from_lambda(1.0, 1.0).unwrap();
        assert_abs_diff_eq!(p1.drift(Angle::new(-FRAC_PI_2)), 0.0, epsilon = 1e-15);

        let p = ModelParams::new(1.0, 2.0).unwrap();
        assert_eq!(p.click_rate(Angle::ZERO), 0.0);
        assert_abs_diff_eq!(p.click_rate(Angle::PI), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.click_rate(Angle::new(FRAC_PI_2)), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn fixed_point_examples() {
        let p = ModelParams::from_lambda(1.0, 0.5).unwrap();
        assert_eq!(p.fixed_points(), FixedPoints::None);

        let p = ModelParams::from_lambda(1.0, 1.0).unwrap();
        assert_eq!(p.fixed_points(), FixedPoints::Degenerate(Angle::new(-FRAC_PI_2)));

        let p = ModelParams::from_lambda(1.0, 2.0).unwrap();
        let FixedPoints::Pair { stable, unstable } = p.fixed_points() else {
            panic!("expected a pair");
        };
        assert_abs_diff_eq!(stable.value(), -PI / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(unstable.value(), -5.0 * PI / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.drift(stable), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.drift(unstable), 0.0, epsilon = 1e-14);
        assert!(p.drift_slope(stable) < 0.0);
        assert!(p.drift_slope(unstable) > 0.0);
        // sign change across each zero
        for (fp, sign) in [(stable, -1.0), (unstable, 1.0)] {
            let left = p.drift(Angle::new(fp.value() - 1e-3));
            let right = p.drift(Angle::new(fp.value() + 1e-3));
            assert!(left * right < 0.0);
            assert_eq!(right.signum(), sign);
        }
    }

    #[test]
    fn wrap_convention() {
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(3.0 * PI), PI);
        assert_abs_diff_eq!(wrap_angle(-2.0), -2.0);
        assert_abs_diff_eq!(wrap_angle(4.0), 4.0 - TAU, epsilon = 1e-15);
        assert_eq!(wrap_angle(-1e-300), -1e-300);
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_in_range(x in -1e4f64..1e4) {
            let w = wrap_angle(x);
            prop_assert!(w > -PI && w <= PI);
            prop_assert_eq!(wrap_angle(w), w);
            let k = ((x - w) / TAU).round();
            prop_assert!((x - w - k * TAU).abs() < 1e-9);
        }

        #[test]
        fn drift_bounded_away_from_zero_below_one(lambda in 0.0f64..0.999, theta in -PI..PI) {
            let p = ModelParams::from_lambda(1.3, lambda).unwrap();
            let w = p.drift(Angle::new(theta));
            prop_assert!(w <= -2.0 * 1.3 * (1.0 - lambda) * (1.0 - 1e-12));
        }

        #[test]
        fn click_rate_in_range(gamma in 0.0f64..10.0, theta in -PI..PI) {
            let p = ModelParams::new(1.0, gamma).unwrap();
            let a = p.click_rate(Angle::new(theta));
            prop_assert!((0.0..=gamma).contains(&a));
            prop_assert!(a <= p.click_rate(Angle::PI));
        }

        #[test]
        fn fixed_points_zero_drift(lambda in 1.0001f64..50.0) {
            let p = ModelParams::from_lambda(0.7, lambda).unwrap();
            let FixedPoints::Pair { stable, unstable } = p.fixed_points() else {
                panic!("expected pair");
            };
            let scale = 1e-14 * p.gamma0() * (1.0 + lambda);
            prop_assert!(p.drift(stable).abs() < scale);
            prop_assert!(p.drift(unstable).abs() < scale);
        }
    }
}
