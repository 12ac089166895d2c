//! Click-counting statistics for a qubit starting in the ground state.
//!
//! Times inside this module are made dimensionless with `γ₀` wherever the
//! closed forms allow it; public signatures take and return dimensionful
//! quantities.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{Angle, CountingRegime, ModelParams, Regime};
use crate::noclick::{flow_closed, survival};

/// Largest `n` accepted by [`count_prob`].
pub const DEFAULT_N_MAX: usize = 4;

const COUNT_PROB_TOL: f64 = 1e-8;

/// Zeros of the denominator of the Laplace-transformed generating function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicRoots {
    /// Sorted by decreasing real part, then decreasing imaginary part.
    pub sigma: [Complex64; 3],
    /// Set when two roots are closer than `1e−9·max(|σᵢ|, γ₀)`.
    pub confluent: bool,
}

/// Denominator coefficients in `m = μ/γ₀`, for the monic cubic
/// `m³ + a₂m² + a₁m + a₀` with `z = e^{−s}`.
fn denominator_coeffs(z: Complex64, lambda: f64) -> [Complex64; 3] {
    // μ(μ² + 4β²γ₀²) − γz(μ² − (γ/2)μ + 2γ₀²), with γ = 4λγ₀ and β² = 1 − λ²
    let a2 = -4.0 * lambda * z;
    let a1 = Complex64::from(4.0 * (1.0 - lambda) * (1.0 + lambda)) + 8.0 * lambda * lambda * z;
    let a0 = -8.0 * lambda * z;
    [a0, a1, a2]
}

fn cubic(m: Complex64, a: &[Complex64; 3]) -> (Complex64, Complex64) {
    let v = ((m + a[2]) * m + a[1]) * m + a[0];
    let d = (3.0 * m + 2.0 * a[2]) * m + a[1];
    (v, d)
}

/// Roots in `σ/γ₀` for a complex `z = e^{−s}`.
pub(crate) fn cubic_roots_z(z: Complex64, p: &ModelParams) -> [Complex64; 3] {
    let lambda = p.lambda();
    let a = denominator_coeffs(z, lambda);
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let companion = Matrix3::new(-a[2], -a[1], -a[0], one, zero, zero, zero, one, zero);
    let eig = companion
        .schur()
        .eigenvalues()
        .expect("complex Schur form is triangular");
    let mut roots = [eig[0], eig[1], eig[2]];
    for r in roots.iter_mut() {
        // Newton polish; skipped where the derivative vanishes (double root)
        for _ in 0..3 {
            let (v, d) = cubic(*r, &a);
            if d.norm() <= 1e-8 * (1.0 + r.norm_sqr()) {
                break;
            }
            let step = v / d;
            *r -= step;
            if step.norm() <= 1e-16 * (1.0 + r.norm()) {
                break;
            }
        }
    }
    // μ/γ₀ → σ/γ₀
    let shift = 2.0 * lambda;
    let mut sigma = roots.map(|m| m - shift);
    let tol = 1e-9 * sigma.iter().map(|s| s.norm()).fold(1.0, f64::max);
    sigma.sort_by(|x, y| {
        if (x.re - y.re).abs() <= tol {
            y.im.total_cmp(&x.im)
        } else {
            y.re.total_cmp(&x.re)
        }
    });
    sigma
}

fn is_confluent(sigma: &[Complex64; 3]) -> bool {
    let scale = sigma.iter().map(|s| s.norm()).fold(1.0, f64::max);
    let d = [
        (sigma[0] - sigma[1]).norm(),
        (sigma[0] - sigma[2]).norm(),
        (sigma[1] - sigma[2]).norm(),
    ];
    d.iter().copied().fold(f64::INFINITY, f64::min) < 1e-9 * scale
}

/// Roots `σ₁, σ₂, σ₃` of the generating-function denominator at `s ≥ 0`.
pub fn cubic_roots(s: f64, p: &ModelParams) -> Result<CubicRoots> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::invalid("s", format!("must be finite and >= 0, got {s}")));
    }
    let dimless = cubic_roots_z(Complex64::from((-s).exp()), p);
    Ok(CubicRoots {
        sigma: dimless.map(|x| x * p.gamma0()),
        confluent: is_confluent(&dimless),
    })
}

/// `sinh(x)/x`, accurate near zero.
fn sinhc(x: Complex64) -> Complex64 {
    if x.norm() < 1e-3 {
        let x2 = x * x;
        1.0 + x2 / 6.0 * (1.0 + x2 / 20.0)
    } else {
        x.sinh() / x
    }
}

/// Second divided difference of `F(σ) = N(σ)e^{σt}` over the three roots,
/// which is the residue sum of `N/D · e^{σt}`. Dimensionless throughout.
fn residue_sum(sigma: [Complex64; 3], z: Complex64, lambda: f64, tau: f64) -> Complex64 {
    let g_half = 2.0 * lambda;
    // numerator μ² + cμ + 4 with c = γ/2 − γz
    let lin = g_half - 2.0 * g_half * z;
    let num = |s: Complex64| {
        let mu = s + g_half;
        (mu + lin) * mu + 4.0
    };
    let f = |s: Complex64| num(s) * (s * tau).exp();
    // F[a, b] via the product rule, with (e^{at} − e^{bt})/(a − b) in sinhc form
    let first_dd = |a: Complex64, b: Complex64| {
        let m = 0.5 * (a + b);
        let d = 0.5 * (a - b);
        let e_ab = (m * tau).exp() * tau * sinhc(d * tau);
        let n_ab = a + b + 2.0 * g_half + lin;
        num(a) * e_ab + n_ab * (b * tau).exp()
    };

    // put the closest pair first
    let pairs = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];
    let (i, j, k) = pairs
        .iter()
        .copied()
        .min_by(|x, y| {
            let dx = (sigma[x.0] - sigma[x.1]).norm();
            let dy = (sigma[y.0] - sigma[y.1]).norm();
            dx.total_cmp(&dy)
        })
        .unwrap();
    let (a, b, c) = (sigma[i], sigma[j], sigma[k]);
    let scale = 1.0 + a.norm().max(b.norm()).max(c.norm());
    if (a - c).norm() < 1e-6 * scale && (b - c).norm() < 1e-6 * scale {
        // triple root: F''(m)/2
        let m = (a + b + c) / 3.0;
        let mu = m + g_half;
        let n0 = (mu + lin) * mu + 4.0;
        let n1 = 2.0 * mu + lin;
        return 0.5 * (2.0 + 2.0 * tau * n1 + tau * tau * n0) * (m * tau).exp();
    }
    let fab = first_dd(a, b);
    let fbc = (f(b) - f(c)) / (b - c);
    (fab - fbc) / (a - c)
}

/// `E[z^{N_t}]` for complex `z`; `z = e^{−s}` gives the moment generating
/// function.
pub(crate) fn generating_function(z: Complex64, t: f64, p: &ModelParams) -> Complex64 {
    if p.gamma() == 0.0 || t == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    let sigma = cubic_roots_z(z, p);
    residue_sum(sigma, z, p.lambda(), p.gamma0() * t)
}

/// `E[e^{−sN_t}]` by the three-pole expansion.
pub fn mgf(s: f64, t: f64, p: &ModelParams) -> Result<f64> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::invalid("s", format!("must be finite and >= 0, got {s}")));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::invalid("t", format!("must be finite and >= 0, got {t}")));
    }
    Ok(generating_function(Complex64::from((-s).exp()), t, p).re)
}

/// `ĝ_φ(σ) = ∫₀^∞ e^{−(σ+γ/2)t} sin²(βγ₀t − φ) dt` (defined for `λ < 1`).
pub fn g_hat(sigma: Complex64, shift: f64, p: &ModelParams) -> Result<Complex64> {
    let beta = p.beta().ok_or(Error::RegimeMismatch {
        op: "g_hat",
        regime: p.regime(),
    })?;
    let mu = sigma + 0.5 * p.gamma();
    if !(mu.re > 0.0) {
        return Err(Error::invalid(
            "sigma",
            format!("Re(sigma) must exceed -gamma/2 = {}, got {}", -0.5 * p.gamma(), sigma.re),
        ));
    }
    let bg = beta * p.gamma0();
    let (s2, c2) = (2.0 * shift).sin_cos();
    Ok(0.5 * (1.0 / mu - (mu * c2 + 2.0 * bg * s2) / (mu * mu + 4.0 * bg * bg)))
}

/// Laplace transform in time of `E[e^{−sN_t}]`.
pub fn mgf_laplace(sigma: Complex64, s: f64, p: &ModelParams) -> Result<Complex64> {
    if !(sigma.re > 0.0) {
        return Err(Error::invalid("sigma", format!("Re(sigma) must be > 0, got {}", sigma.re)));
    }
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::invalid("s", format!("must be finite and >= 0, got {s}")));
    }
    let (g0, g) = (p.gamma0(), p.gamma());
    let mu = sigma + 0.5 * g;
    let beta2 = (1.0 - p.lambda()) * (1.0 + p.lambda());
    let z = (-s).exp();
    let num = mu * mu + 0.5 * g * mu - g * z * mu + 4.0 * g0 * g0;
    let lead = mu * (mu * mu + 4.0 * beta2 * g0 * g0);
    let tail = g * z * (mu * mu - 0.5 * g * mu + 2.0 * g0 * g0);
    let den = lead - tail;
    let scale = lead.norm().max(tail.norm()).max(f64::MIN_POSITIVE);
    if den.norm() < 1e-12 * scale {
        return Err(Error::NearPole {
            what: "mgf_laplace",
            magnitude: den.norm() / scale,
        });
    }
    Ok(num / den)
}

/// The same transform assembled from `ĝ` by summing the geometric series
/// over click counts (`λ < 1` only).
pub fn mgf_laplace_resummed(sigma: Complex64, s: f64, p: &ModelParams) -> Result<Complex64> {
    let beta = p.beta().ok_or(Error::RegimeMismatch {
        op: "mgf_laplace_resummed",
        regime: p.regime(),
    })?;
    let phi = p.phi().unwrap();
    let b2 = beta * beta;
    let k = p.gamma() * (-s).exp() / b2;
    let g0 = g_hat(sigma, 0.0, p)?;
    let gp = g_hat(sigma, phi, p)?;
    let gm = g_hat(sigma, -phi, p)?;
    Ok((gm + g0 + k * g0 * (g0 + gp) / (1.0 - k * gp)) / b2)
}

/// Laplace transform of the mean click rate, `2γγ₀²/(σ(σ² + (γ/2)σ + 4γ₀²))`.
pub fn mean_rate_laplace(sigma: Complex64, p: &ModelParams) -> Complex64 {
    let (g0, g) = (p.gamma0(), p.gamma());
    2.0 * g * g0 * g0 / (sigma * ((sigma + 0.5 * g) * sigma + 4.0 * g0 * g0))
}

/// `E[N_t]` from the regime closed forms.
pub fn mean_count(t: f64, p: &ModelParams) -> f64 {
    let l = p.lambda();
    let tau = p.gamma0() * t;
    if l == 0.0 || t <= 0.0 {
        return 0.0;
    }
    let transient = match p.counting_regime() {
        CountingRegime::Oscillatory => {
            let w = p.omega().unwrap() / p.gamma0();
            // sin(ωt + ϕ)/sin ϕ = cos ωt + cot ϕ sin ωt, cot ϕ = (λ² − 2)/(λw)
            let (sn, cs) = (w * tau).sin_cos();
            (-l * tau).exp() * (l * l * cs + l * (l * l - 2.0) / w * sn)
        }
        CountingRegime::Confluent => return 4.0 * (-1.0 + tau + (-2.0 * tau).exp() * (1.0 + tau)),
        CountingRegime::Overdamped => {
            let w = p.omega_prime().unwrap() / p.gamma0();
            // sinh(ω′t + ϕ′)/sinh ϕ′ = cosh ω′t + coth ϕ′ sinh ω′t
            let c = (l * l - 2.0) / (l * w);
            0.5 * l * l * ((1.0 + c) * ((w - l) * tau).exp() + (1.0 - c) * (-(w + l) * tau).exp())
        }
    };
    2.0 * l * tau - l * l + transient
}

/// `ᾱ_t = dE[N_t]/dt`; exactly zero at `t = 0`.
pub fn mean_rate(t: f64, p: &ModelParams) -> f64 {
    let l = p.lambda();
    let tau = p.gamma0() * t.max(0.0);
    let decay = match p.counting_regime() {
        CountingRegime::Oscillatory => {
            let w = p.omega().unwrap() / p.gamma0();
            let (sn, cs) = (w * tau).sin_cos();
            (-l * tau).exp() * (cs + l * if w * tau == 0.0 { 0.0 } else { sn / w })
        }
        CountingRegime::Confluent => (-2.0 * tau).exp() * (1.0 + 2.0 * tau),
        CountingRegime::Overdamped => {
            let w = p.omega_prime().unwrap() / p.gamma0();
            let r = l / w;
            0.5 * ((1.0 + r) * ((w - l) * tau).exp() + (1.0 - r) * (-(w + l) * tau).exp())
        }
    };
    0.5 * p.gamma() * (1.0 - decay)
}

/// `E[N_t]` as `−∂ₛ mgf` at `s = 0`, by Richardson-extrapolated central
/// differences with step `1e−6`.
pub fn mean_count_from_mgf(t: f64, p: &ModelParams) -> f64 {
    let d = |h: f64| {
        let up = generating_function(Complex64::from((-h).exp()), t, p).re;
        let down = generating_function(Complex64::from(h.exp()), t, p).re;
        -(up - down) / (2.0 * h)
    };
    let h = 1e-6;
    (4.0 * d(0.5 * h) - d(h)) / 3.0
}

/// `P₀ᵗ[n]` for any `n`, read off the generating function on the unit circle
/// with a 64-point discrete Cauchy integral.
pub fn count_prob_generating(n: usize, t: f64, p: &ModelParams) -> f64 {
    const M: usize = 64;
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..M {
        let arg = 2.0 * PI * j as f64 / M as f64;
        let z = Complex64::from_polar(1.0, arg);
        acc += generating_function(z, t, p) * Complex64::from_polar(1.0, -arg * n as f64);
    }
    acc.re / M as f64
}

fn check_clicks(t: f64, clicks: &[f64]) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::invalid("t", format!("must be finite and > 0, got {t}")));
    }
    let mut prev = 0.0;
    for &c in clicks {
        if !(c > prev && c <= t) {
            return Err(Error::invalid(
                "clicks",
                format!("click times must be strictly increasing in (0, {t}], got {clicks:?}"),
            ));
        }
        prev = c;
    }
    Ok(())
}

/// Per-leg factors `sin²(θ/2)/(1 + λ sin θ)` at the end of a no-click leg,
/// in the closed trigonometric forms.
struct Legs {
    regime: Regime,
    rate: f64,
    shift: f64,
}

impl Legs {
    fn new(p: &ModelParams) -> Self {
        match p.regime() {
            Regime::Sub => Legs {
                regime: Regime::Sub,
                rate: p.beta().unwrap(),
                shift: p.phi().unwrap(),
            },
            Regime::Critical => Legs {
                regime: Regime::Critical,
                rate: 1.0,
                shift: 1.0,
            },
            Regime::Super => Legs {
                regime: Regime::Super,
                rate: p.beta_prime().unwrap(),
                shift: p.phi_prime().unwrap(),
            },
        }
    }

    /// Leg of dimensionless length `tau` starting from `θ = 0` (`from_pi =
    /// false`) or from the reset state.
    fn factor(&self, tau: f64, from_pi: bool) -> f64 {
        let b = self.rate;
        let x = b * tau;
        match self.regime {
            Regime::Sub => {
                let s = if from_pi { (x - self.shift).sin() } else { x.sin() };
                s * s / (b * b)
            }
            Regime::Critical => {
                let s = if from_pi { 1.0 - tau } else { tau };
                s * s
            }
            Regime::Super => {
                let s = if from_pi { (x - self.shift).sinh() } else { x.sinh() };
                s * s / (b * b)
            }
        }
    }
}

/// Closed-form density from gaps `Δ₀, …, Δₙ` (dimensionful).
fn epd_from_gaps(gaps: &[f64], legs: &Legs, p: &ModelParams) -> f64 {
    let n = gaps.len() - 1;
    let g0 = p.gamma0();
    let t: f64 = gaps.iter().sum();
    let mut prod = 1.0;
    for (k, &d) in gaps[..n].iter().enumerate() {
        prod *= legs.factor(g0 * d, k > 0);
    }
    let last_gap = gaps[n];
    let start = if n == 0 { Angle::ZERO } else { Angle::PI };
    let theta_t = flow_closed(last_gap, start, p).value();
    let half = (0.5 * theta_t).sin();
    // final leg: (leg factor)/sin²(θ_t/2) = 1/(1 + λ sin θ_t); the ratio form
    // is 0/0 where θ_t crosses 0
    let last = if half * half > 1e-6 {
        legs.factor(g0 * last_gap, n > 0) / (half * half)
    } else {
        1.0 / p.drift_factor(theta_t)
    };
    (-0.5 * p.gamma() * t).exp() * p.gamma().powi(n as i32) * prod * last
}

/// Exclusive probability density of clicks at exactly `clicks` in `(0, t]`,
/// starting from `θ₀ = 0`.
pub fn epd_joint(t: f64, clicks: &[f64], p: &ModelParams) -> Result<f64> {
    check_clicks(t, clicks)?;
    let mut gaps = Vec::with_capacity(clicks.len() + 1);
    let mut prev = 0.0;
    for &c in clicks {
        gaps.push(c - prev);
        prev = c;
    }
    gaps.push(t - prev);
    Ok(epd_from_gaps(&gaps, &Legs::new(p), p))
}

/// The same density assembled leg by leg from survival probabilities and
/// click rates along the flow.
pub fn epd_product(t: f64, clicks: &[f64], p: &ModelParams) -> Result<f64> {
    check_clicks(t, clicks)?;
    let mut value = 1.0;
    let mut start = Angle::ZERO;
    let mut prev = 0.0;
    for &c in clicks {
        let d = c - prev;
        value *= survival(d, start, p) * p.click_rate(flow_closed(d, start, p));
        start = Angle::PI;
        prev = c;
    }
    Ok(value * survival(t - prev, start, p))
}

/// `P₀ᵗ[n]` by quadrature of [`epd_joint`] over the ordered simplex,
/// for `n ≤ DEFAULT_N_MAX`.
pub fn count_prob(n: usize, t: f64, p: &ModelParams) -> Result<f64> {
    count_prob_with_max(n, t, p, DEFAULT_N_MAX)
}

/// [`count_prob`] with an explicit cap on `n`.
pub fn count_prob_with_max(n: usize, t: f64, p: &ModelParams, n_max: usize) -> Result<f64> {
    if n > n_max {
        return Err(Error::invalid("n", format!("{n} exceeds the quadrature cap {n_max}")));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::invalid("t", format!("must be finite and >= 0, got {t}")));
    }
    if n == 0 {
        return Ok(survival(t, Angle::ZERO, p));
    }
    if t == 0.0 || p.gamma() == 0.0 {
        return Ok(0.0);
    }
    let legs = Legs::new(p);
    // iterated Gauss–Legendre, order doubled until two successive rules agree
    let budget = 40_000_000f64;
    let mut order = 8usize;
    let mut previous = simplex_rule(n, t, order, &legs, p);
    loop {
        let next_order = 2 * order;
        if (next_order as f64).powi(n as i32) > budget {
            return Err(Error::NotConverged {
                what: "count_prob",
                change: f64::NAN,
                tolerance: COUNT_PROB_TOL,
            });
        }
        let next = simplex_rule(n, t, next_order, &legs, p);
        let change = (next - previous).abs();
        if change <= COUNT_PROB_TOL {
            return Ok(next);
        }
        previous = next;
        order = next_order;
    }
}

fn simplex_rule(n: usize, t: f64, order: usize, legs: &Legs, p: &ModelParams) -> f64 {
    let rule = GaussLegendre::new(NonZeroUsize::new(order).unwrap());
    let nodes = rule.as_node_weight_pairs();
    let mut clicks = vec![0.0; n];
    let mut gaps = vec![0.0; n + 1];
    nest(n, t, t, nodes, &mut clicks, &mut gaps, legs, p)
}

/// Integrates click `level − 1` over `(0, upper)`, deeper clicks fixed.
#[allow(clippy::too_many_arguments)]
fn nest(
    level: usize,
    t: f64,
    upper: f64,
    nodes: &[(f64, f64)],
    clicks: &mut [f64],
    gaps: &mut [f64],
    legs: &Legs,
    p: &ModelParams,
) -> f64 {
    let idx = level - 1;
    let half = 0.5 * upper;
    let mut acc = 0.0;
    for &(x, w) in nodes {
        clicks[idx] = half * (x + 1.0);
        let v = if idx == 0 {
            let n = clicks.len();
            gaps[0] = clicks[0];
            for k in 1..n {
                gaps[k] = clicks[k] - clicks[k - 1];
            }
            gaps[n] = t - clicks[n - 1];
            epd_from_gaps(gaps, legs, p)
        } else {
            nest(level - 1, t, clicks[idx], nodes, clicks, gaps, legs, p)
        };
        acc += w * v;
    }
    half * acc
}
