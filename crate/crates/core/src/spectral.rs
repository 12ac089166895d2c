//! Eigenfunction expansions of the master-equation generator for `λ ≤ 1`.
//!
//! Eigenvalues `ν` are dimensionless; a mode evolves as `e^{2γ₀νt}`. The
//! generator acts on densities as
//! `𝓛f = (1 + λ sin θ) f′ + λ(2 cos θ − 1) f` away from `π`, with the
//! reset entering through the jump `f(π−0) − f(−π+0) = 2λ∫sin²(θ/2) f`.
//! Pairings `⟨a, b⟩ = ∫ ā b dθ` are conjugate-linear on the left.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Angle, ModelParams, Regime};
use crate::noclick::{flow_closed, phase_of, survival};
use crate::quad;
use crate::renewal::{Density, DistributionSnapshot};

pub type ComplexField = Arc<dyn Fn(f64) -> Complex64 + Send + Sync>;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `ν± = (−λ ± i√(4−λ²))/2`.
fn nu_pair(lambda: f64) -> (Complex64, Complex64) {
    let w = (4.0 - lambda * lambda).sqrt();
    (Complex64::new(-0.5 * lambda, 0.5 * w), Complex64::new(-0.5 * lambda, -0.5 * w))
}

/// Label of a mode in the `λ < 1` basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeLabel {
    Steady,
    Plus,
    Minus,
    /// `ν_m = −λ + imβ`, `|m| ≥ 2`.
    Tower(i64),
}

/// One eigenpair: `f = C e^{bφ}/d²` and its adjoint partner `h`.
#[derive(Debug, Clone, Copy)]
pub struct Mode {
    pub label: ModeLabel,
    pub nu: Complex64,
    f_scale: Complex64,
    f_exp: Complex64,
    h_scale: Complex64,
    /// `a = (ν̄ + λ)/β`.
    h_exp: Complex64,
    /// `e^{−aπ}E_a(π)`, the boundary constant of the adjoint solution.
    h_edge: Complex64,
}

/// Complete bi-orthonormal system for `0 < λ < 1`, truncated at `|m| ≤ M`.
#[derive(Debug, Clone)]
pub struct BiorthoBasis {
    params: ModelParams,
    lambda: f64,
    beta: f64,
    /// `λ + iβ`, of unit modulus.
    rot: Complex64,
    truncation: usize,
    modes: Vec<Mode>,
}

/// Builds the `λ < 1` basis with tower modes `2 ≤ |m| ≤ truncation`.
pub fn build_basis_sub(p: &ModelParams, truncation: usize) -> Result<BiorthoBasis> {
    if p.regime() != Regime::Sub || p.lambda() == 0.0 {
        return Err(Error::RegimeMismatch {
            op: "build_basis_sub",
            regime: p.regime(),
        });
    }
    if truncation < 8 {
        return Err(Error::invalid("truncation", format!("need M >= 8, got {truncation}")));
    }
    let lambda = p.lambda();
    let beta = p.beta().unwrap();
    let mut basis = BiorthoBasis {
        params: *p,
        lambda,
        beta,
        rot: Complex64::new(lambda, beta),
        truncation,
        modes: Vec::with_capacity(2 * truncation + 1),
    };
    let (plus, minus) = nu_pair(lambda);
    let b0 = lambda / beta;
    basis.modes.push(Mode {
        label: ModeLabel::Steady,
        nu: c(0.0),
        f_scale: c(lambda / (2.0 * (PI * b0).sinh())),
        f_exp: c(b0),
        h_scale: c(1.0),
        h_exp: c(b0),
        h_edge: c(0.0),
    });
    for (label, nu, other) in [(ModeLabel::Plus, plus, minus), (ModeLabel::Minus, minus, plus)] {
        let scale = other / (2.0 * (other * (PI / beta)).sinh());
        basis.modes.push(basis.mode(label, nu, scale, -other / beta));
    }
    let norm = basis.free_norm();
    for m in 2..=truncation as i64 {
        for m in [m, -m] {
            let nu = Complex64::new(-lambda, m as f64 * beta);
            basis.modes.push(basis.mode(ModeLabel::Tower(m), nu, c(norm), Complex64::new(0.0, m as f64)));
        }
    }
    Ok(basis)
}

/// Smallest `M ≥ 8` whose omitted tower terms are bounded by `tol/2`
/// uniformly in `θ` and `t`.
pub fn truncation_for(p: &ModelParams, tol: f64) -> Result<usize> {
    let basis = build_basis_sub(p, 8)?;
    let sup_f = basis.free_norm() / (1.0 - basis.lambda).powi(2);
    let mut m = 8usize;
    loop {
        let r = basis.tower_weight(m as i64).norm().max(basis.tower_weight(-(m as i64)).norm());
        // terms fall off as m⁻³; both signs
        let tail = r * m as f64 * sup_f;
        if tail < 0.5 * tol || m > 1 << 20 {
            return Ok(m);
        }
        m = (m as f64 * 1.25).ceil() as usize;
    }
}

impl BiorthoBasis {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode_of(&self, label: ModeLabel) -> Option<&Mode> {
        self.modes.iter().find(|m| m.label == label)
    }

    pub fn nu_plus(&self) -> Complex64 {
        nu_pair(self.lambda).0
    }

    pub fn nu_minus(&self) -> Complex64 {
        nu_pair(self.lambda).1
    }

    /// `ν_m = −λ + imβ` for any integer `m`.
    pub fn nu_tower(&self, m: i64) -> Complex64 {
        Complex64::new(-self.lambda, m as f64 * self.beta)
    }

    /// `B_m = ν_m(ν_m − ν₋)(ν_m − ν₊)`.
    pub fn b_coeff(&self, m: i64) -> Complex64 {
        let nu = self.nu_tower(m);
        nu * (nu - self.nu_minus()) * (nu - self.nu_plus())
    }

    /// `((1−λ²)/4π²)^{1/4}`.
    pub fn free_norm(&self) -> f64 {
        (self.beta / (2.0 * PI)).sqrt()
    }

    /// Phase map `φ(θ)` with `φ(±π) = ±π`.
    pub fn phase(&self, theta: f64) -> f64 {
        phase_of(theta, self.lambda, self.beta)
    }

    fn drift_factor(&self, theta: f64) -> f64 {
        1.0 + self.lambda * theta.sin()
    }

    /// Right eigenfunction of the mode at `θ ∈ [−π, π]`; `±π` give the
    /// one-sided limits.
    pub fn f(&self, mode: &Mode, theta: f64) -> Complex64 {
        let d = self.drift_factor(theta);
        mode.f_scale * (mode.f_exp * self.phase(theta)).exp() / (d * d)
    }

    /// Adjoint eigenfunction with `𝓛†h = ν̄h` and `⟨h_a, f_b⟩ = δ_ab`.
    pub fn h(&self, mode: &Mode, theta: f64) -> Complex64 {
        if mode.label == ModeLabel::Steady {
            return c(1.0);
        }
        let (phi, d) = (self.phase(theta), self.drift_factor(theta));
        let a = mode.h_exp;
        let inner = self.q(a, phi) - (a * (PI - phi)).exp() * mode.h_edge;
        mode.h_scale * (1.0 - mode.nu.conj() * d * inner / self.beta.powi(3))
    }

    /// Free right eigenfunction `f̄_m` (no reset boundary condition).
    pub fn f_free(&self, m: i64, theta: f64) -> Complex64 {
        let d = self.drift_factor(theta);
        self.free_norm() * (I * (m as f64 * self.phase(theta))).exp() / (d * d)
    }

    /// Free adjoint eigenfunction `g_m` with `⟨g_m, f̄_n⟩ = δ_mn`.
    pub fn g_free(&self, m: i64, theta: f64) -> Complex64 {
        self.free_norm() * self.drift_factor(theta) * (I * (m as f64 * self.phase(theta))).exp()
    }

    /// `e^{−aφ}E_a(φ)` where `E_a′ = e^{aφ}(1 + λ² cos φ − λβ sin φ)`.
    fn q(&self, a: Complex64, phi: f64) -> Complex64 {
        let e = (I * phi).exp();
        1.0 / a + 0.5 * self.lambda * (self.rot * e / (a + I) + self.rot.conj() / e / (a - I))
    }

    fn mode(&self, label: ModeLabel, nu: Complex64, f_scale: Complex64, f_exp: Complex64) -> Mode {
        let a = f_exp.conj();
        let mut mode = Mode {
            label,
            nu,
            f_scale,
            f_exp,
            h_scale: c(1.0),
            h_exp: a,
            h_edge: self.q(a, PI),
        };
        mode.h_scale = 1.0 / self.unscaled_pairing(&mode).conj();
        mode
    }

    /// `⟨h, f⟩` of a mode whose adjoint has unit scale, in closed form.
    fn unscaled_pairing(&self, mode: &Mode) -> Complex64 {
        let b = mode.f_exp;
        let l = self.lambda;
        let terms = [(c(1.0), b), (0.5 * l * self.rot, b + I), (0.5 * l * self.rot.conj(), b - I)];
        let big_e = |phi: f64| -> Complex64 { terms.iter().map(|&(w, k)| w * (k * phi).exp() / k).sum() };
        let span = |k: Complex64| -> Complex64 {
            if k.norm() < 1e-300 {
                c(2.0 * PI)
            } else {
                2.0 * (k * PI).sinh() / k
            }
        };
        let b3 = self.beta.powi(3);
        let mass = (big_e(PI) - big_e(-PI)) / b3;
        let int_j = (terms.iter().map(|&(w, k)| w / k * span(k)).sum::<Complex64>() - 2.0 * PI * big_e(PI)) / b3;
        mode.f_scale * (mass - mode.nu / self.beta * int_j)
    }

    /// Part of `h_m` proportional to `g_m`, as its coefficient.
    #[cfg(test)]
    fn free_part(&self, mode: &Mode) -> Complex64 {
        mode.h_scale * mode.nu.conj() * (mode.h_exp * PI).exp() * mode.h_edge / self.beta.powi(3)
    }

    /// Coefficient of `f̄_m e^{2γ₀ν_m t}` in `P_f` for a start at `θ = 0`,
    /// after the `g_m` part of `h_m` has been resummed.
    fn tower_weight(&self, m: i64) -> Complex64 {
        let mode = self.mode(ModeLabel::Tower(m), self.nu_tower(m), c(self.free_norm()), Complex64::new(0.0, m as f64));
        self.rest_weight(&mode)
    }

    fn rest_weight(&self, mode: &Mode) -> Complex64 {
        let phi0 = self.phase(0.0);
        (mode.h_scale * (1.0 - mode.nu.conj() * self.q(mode.h_exp, phi0) / self.beta.powi(3))).conj()
    }

    /// `Φ(θ, t) = φ(θ) − φ(0) + 2γ₀tβ`.
    pub fn big_phase(&self, theta: f64, t: f64) -> f64 {
        self.phase(theta) - self.phase(0.0) + 2.0 * self.params.gamma0() * t * self.beta
    }
}

/// Pairing matrices computed by quadrature.
#[derive(Debug, Clone)]
pub struct GramCheck {
    pub labels: Vec<ModeLabel>,
    /// `⟨h_a, f_b⟩`.
    pub adjoint: Vec<Vec<Complex64>>,
    /// Tower labels `m` of the free system.
    pub free_labels: Vec<i64>,
    /// `⟨g_m, f̄_n⟩`.
    pub free: Vec<Vec<Complex64>>,
}

impl GramCheck {
    /// Largest deviation of either matrix from the identity.
    pub fn max_deviation(&self) -> f64 {
        let dev = |m: &Vec<Vec<Complex64>>| -> f64 {
            m.iter()
                .enumerate()
                .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, v)| (v - if i == j { 1.0 } else { 0.0 }).norm()))
                .fold(0.0, f64::max)
        };
        dev(&self.adjoint).max(dev(&self.free))
    }
}

fn pairing<A, B>(a: A, b: B) -> Result<Complex64>
where
    A: Fn(f64) -> Complex64,
    B: Fn(f64) -> Complex64,
{
    let (v, ok) = quad::integrate_complex(|x| a(x).conj() * b(x), -PI, PI, &[], 1e-12);
    if ok {
        Ok(v)
    } else {
        Err(Error::NotConverged {
            what: "gram quadrature",
            change: f64::NAN,
            tolerance: 1e-12,
        })
    }
}

/// Quadrature of `⟨h_a, f_b⟩` over the modes with `|m| ≤ up_to`, and of
/// `⟨g_m, f̄_n⟩` over `|m|, |n| ≤ up_to`.
pub fn gram_check(basis: &BiorthoBasis, up_to: usize) -> Result<GramCheck> {
    let modes: Vec<&Mode> = basis
        .modes
        .iter()
        .filter(|m| match m.label {
            ModeLabel::Tower(k) => k.unsigned_abs() as usize <= up_to,
            _ => true,
        })
        .collect();
    let adjoint = modes
        .par_iter()
        .map(|a| modes.iter().map(|b| pairing(|x| basis.h(a, x), |x| basis.f(b, x))).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let free_labels: Vec<i64> = (-(up_to as i64)..=up_to as i64).collect();
    let free = free_labels
        .par_iter()
        .map(|&m| free_labels.iter().map(|&n| pairing(|x| basis.g_free(m, x), |x| basis.f_free(n, x))).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(GramCheck {
        labels: modes.iter().map(|m| m.label).collect(),
        adjoint,
        free_labels,
        free,
    })
}

/// Continuous part `P_f(θ, t)` of the series solution for a start at `θ = 0`.
pub fn finite_part(theta: f64, t: f64, basis: &BiorthoBasis) -> f64 {
    let g0 = basis.params.gamma0();
    let d = basis.drift_factor(theta);
    let mut total = c(0.0);
    for mode in &basis.modes {
        let weight = match mode.label {
            ModeLabel::Steady => c(1.0),
            ModeLabel::Plus | ModeLabel::Minus => basis.h(mode, 0.0).conj(),
            ModeLabel::Tower(_) => basis.rest_weight(mode),
        };
        total += weight * (2.0 * g0 * t * mode.nu).exp() * basis.f(mode, theta);
    }
    // Σ_{|m|≥2} e^{imΦ} = 2πδ(Φ) − (1 + 2 cos Φ); the δ is the atom
    let big = basis.big_phase(theta, t);
    let quasi = basis.free_norm().powi(2) * (-2.0 * basis.lambda * g0 * t).exp() / (d * d) * (1.0 + 2.0 * big.cos());
    total.re - quasi
}

/// Series solution as a snapshot: analytic atom plus `P_f`.
pub fn density_series_sub(t: f64, basis: &BiorthoBasis) -> Result<DistributionSnapshot> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::invalid("t", format!("must be finite and > 0, got {t}")));
    }
    let p = basis.params;
    let b = basis.clone();
    let atom = flow_closed(t, Angle::ZERO, &p);
    let front = flow_closed(t, Angle::PI, &p).value();
    Ok(DistributionSnapshot {
        atom_position: atom,
        atom_mass: survival(t, Angle::ZERO, &p),
        continuous: Density::Function(Arc::new(move |x| finite_part(x, t, &b))),
        support: (-PI, PI),
        breaks: vec![front],
        age: None,
    })
}

/// Which operator [`apply_generator`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Forward,
    Adjoint,
}

/// Grid on which [`apply_generator`] differentiates.
pub const DIFF_GRID: usize = 4096;

/// Finite-difference weights for the `order`-th derivative at 0 on the
/// given nodes.
fn fd_weights(nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![vec![0.0; order + 1]; n];
    w[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0];
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i];
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    w[i][k] = c1 * (k as f64 * w[i - 1][k - 1] - c5 * w[i - 1][k]) / c2;
                }
                w[i][0] = -c1 * c5 * w[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                w[j][k] = (c4 * w[j][k] - k as f64 * w[j][k - 1]) / c3;
            }
            w[j][0] = c4 * w[j][0] / c3;
        }
        c1 = c2;
    }
    w.into_iter().map(|r| r[order]).collect()
}

/// Eighth-order derivative of `f` at `x`, one-sided when the central
/// stencil would leave `[lo, hi]`.
fn derivative<F: Fn(f64) -> Complex64 + ?Sized>(f: &F, x: f64, step: f64, lo: f64, hi: f64, order: usize) -> Complex64 {
    let offsets: Vec<f64> = if x - 4.0 * step <= lo {
        (0..9).map(f64::from).collect()
    } else if x + 4.0 * step > hi {
        (-8..=0).map(f64::from).collect()
    } else {
        (-4..=4).map(f64::from).collect()
    };
    let w = fd_weights(&offsets, order);
    let sum: Complex64 = offsets.iter().zip(&w).map(|(o, wi)| wi * f(x + o * step)).sum();
    sum / step.powi(order as i32)
}

/// `𝓛f` or `𝓛†f` away from the reset point, in units of `2γ₀`.
pub fn apply_generator(f: ComplexField, p: &ModelParams, side: Side) -> ComplexField {
    let l = p.lambda();
    let step = 2.0 * PI / DIFF_GRID as f64;
    Arc::new(move |x: f64| {
        let d = 1.0 + l * x.sin();
        let df = derivative(&*f, x, step, -PI, PI, 1);
        match side {
            Side::Forward => d * df + l * (2.0 * x.cos() - 1.0) * f(x),
            Side::Adjoint => -d * df - l * (1.0 - x.cos()) * (f(x) - f(PI)),
        }
    })
}

/// `f(π−0) − f(−π+0) − 2λ∫sin²(θ/2) f`, zero for densities in the domain
/// of `𝓛`.
pub fn jump_defect(f: &ComplexField, p: &ModelParams) -> Complex64 {
    let (integral, _) = quad::integrate_complex(|x| (0.5 * x).sin().powi(2) * f(x), -PI, PI, &[], 1e-13);
    f(PI) - f(-PI) - 2.0 * p.lambda() * integral
}

/// Point spectrum `{0, ν₊, ν₋}` at `λ = 1`.
#[derive(Debug, Clone, Copy)]
pub struct CriticalSystem {
    params: ModelParams,
    nu_plus: Complex64,
    nu_minus: Complex64,
}

fn check_critical(p: &ModelParams, op: &'static str) -> Result<()> {
    if p.regime() == Regime::Critical {
        Ok(())
    } else {
        Err(Error::RegimeMismatch { op, regime: p.regime() })
    }
}

/// `x(θ) = −2/(1 + tan(θ/2))`; maps `(−π/2, π]` onto `(−∞, 0]`.
pub fn critical_coordinate(theta: f64) -> f64 {
    let (s, c) = (0.5 * theta).sin_cos();
    -2.0 * c / (s + c)
}

pub fn point_spectrum_critical(p: &ModelParams) -> Result<CriticalSystem> {
    check_critical(p, "point_spectrum_critical")?;
    let (nu_plus, nu_minus) = nu_pair(1.0);
    Ok(CriticalSystem {
        params: *p,
        nu_plus,
        nu_minus,
    })
}

impl CriticalSystem {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn eigenvalue(&self, label: ModeLabel) -> Complex64 {
        match label {
            ModeLabel::Steady => c(0.0),
            ModeLabel::Plus => self.nu_plus,
            ModeLabel::Minus => self.nu_minus,
            ModeLabel::Tower(_) => c(f64::NAN),
        }
    }

    /// Eigenfunction supported on `[−π/2, π]`.
    pub fn f(&self, label: ModeLabel, theta: f64) -> Complex64 {
        let (s, co) = (0.5 * theta).sin_cos();
        if s + co <= 0.0 {
            return c(0.0);
        }
        let d = (s + co) * (s + co);
        let x = critical_coordinate(theta);
        let (scale, rate) = match label {
            ModeLabel::Steady => (c(1.0), c(1.0)),
            ModeLabel::Plus => (-self.nu_minus, -self.nu_minus),
            ModeLabel::Minus => (-self.nu_plus, -self.nu_plus),
            ModeLabel::Tower(_) => return c(f64::NAN),
        };
        let e = (rate * x).exp();
        if e.norm() == 0.0 {
            return c(0.0);
        }
        scale * e / (d * d)
    }

    /// Adjoint partner, `h₀ = 1` and `h_{ν±} = ∓i(cos θ − ν∓ sin θ)/√3`.
    pub fn h(&self, label: ModeLabel, theta: f64) -> Complex64 {
        let (s, co) = theta.sin_cos();
        match label {
            ModeLabel::Steady => c(1.0),
            ModeLabel::Plus => -I * (co - self.nu_minus * s) / 3f64.sqrt(),
            ModeLabel::Minus => I * (co - self.nu_plus * s) / 3f64.sqrt(),
            ModeLabel::Tower(_) => c(f64::NAN),
        }
    }
}

/// Continuum of improper eigenfunctions at `λ = 1`, labelled by real `k`.
#[derive(Debug, Clone, Copy)]
pub struct ContinuumBasis {
    params: ModelParams,
}

impl ContinuumBasis {
    pub fn new(p: &ModelParams) -> Result<Self> {
        check_critical(p, "ContinuumBasis")?;
        Ok(ContinuumBasis { params: *p })
    }

    /// `f_{ν_k} = e^{ikx}/(√(2π)(1 + sin θ)²)`, `ν_k = −1 + ik`.
    pub fn f(&self, k: f64, theta: f64) -> Complex64 {
        let d = 1.0 + theta.sin();
        (I * (k * critical_coordinate(theta))).exp() / ((2.0 * PI).sqrt() * d * d)
    }

    /// `g_{μ_k} = (1 + sin θ) e^{ikx}/√(2π)`, `μ_k = −1 − ik`.
    pub fn g(&self, k: f64, theta: f64) -> Complex64 {
        (1.0 + theta.sin()) * (I * (k * critical_coordinate(theta))).exp() / (2.0 * PI).sqrt()
    }

    /// Proper adjoint eigenfunction with `𝓛†h = ν_{−k} h`, `k ≠ 0`.
    pub fn h(&self, k: f64, theta: f64) -> Complex64 {
        let nu = Complex64::new(-1.0, -k);
        let (s, co) = theta.sin_cos();
        self.g(k, theta) + (1.0 / nu - ((nu + 1.0) * co + s) / (nu * nu + nu + 1.0)) / (2.0 * PI).sqrt()
    }

    /// Improper adjoint eigenfunction for `ν = −1`.
    pub fn h_improper(&self, theta: f64) -> f64 {
        let (s, co) = theta.sin_cos();
        (2.0 / 3.0 * (3.0 * s - co + 5.0) / (1.0 + (0.5 * theta).tan()) - 2.0) / (2.0 * PI).sqrt()
    }

    pub fn point_spectrum(&self) -> CriticalSystem {
        point_spectrum_critical(&self.params).unwrap()
    }

    /// Continuous part of `P(θ, t)` for a start at `θ = 0` from
    /// `∫c_k(t) e^{2ν_kγ₀t} f_{ν_k} dk`, with the `e^{2ik}` term of `c_k`
    /// routed to the atom.
    ///
    /// The integral runs under a Gaussian window of width `K`, by the
    /// trapezoid rule on a `k`-step fine enough to keep the aliased copies
    /// of the (compactly supported) integrand apart. `K` doubles from 32
    /// until the largest change over `thetas` drops below `tol`.
    pub fn density(&self, thetas: &[f64], t: f64, tol: f64) -> Result<Vec<f64>> {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::invalid("t", format!("must be finite and > 0, got {t}")));
        }
        let tau = 2.0 * self.params.gamma0() * t;
        let ys: Vec<f64> = thetas.iter().map(|&th| critical_coordinate(th) + tau).collect();
        let reach = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        let mut window: f64 = 32.0;
        let mut prev: Option<Vec<f64>> = None;
        while window <= 65536.0 {
            let period = 2.0 * (reach + tau) + 20.0 / window.sqrt() + 8.0;
            let dk = 2.0 * PI / period;
            let half = (6.0 * window / dk).ceil() as i64;
            let weights: Vec<Complex64> = (-half..=half)
                .into_par_iter()
                .map(|j| {
                    let k = j as f64 * dk;
                    (coeff_continuous(k, tau) * (-(k / window).powi(2)).exp()) * dk
                })
                .collect();
            let values: Vec<f64> = thetas
                .par_iter()
                .zip(&ys)
                .map(|(&th, &y)| {
                    let (s, co) = (0.5 * th).sin_cos();
                    if s + co <= 0.0 {
                        return 0.0;
                    }
                    let d = (s + co) * (s + co);
                    let step = (I * (dk * y)).exp();
                    let mut phase = (I * (-(half as f64) * dk * y)).exp();
                    let mut sum = c(0.0);
                    for (j, w) in weights.iter().enumerate() {
                        sum += w * phase;
                        phase *= step;
                        if j % 256 == 255 {
                            // keep the recurrence on the unit circle
                            phase /= phase.norm();
                        }
                    }
                    (-tau).exp() / ((2.0 * PI).sqrt() * d * d) * sum.re
                })
                .collect();
            if let Some(q) = &prev {
                let change = values.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if change < tol {
                    return Ok(values);
                }
            }
            prev = Some(values);
            window *= 2.0;
        }
        Err(Error::NotConverged {
            what: "continuum k-quadrature",
            change: f64::NAN,
            tolerance: tol,
        })
    }

    /// The same continuous part by closing the `k` contour: on
    /// `−2γ₀t ≤ x < 0` it is
    /// `e^{−τ}/d² Σⱼ aⱼ (−i) e^{iρⱼ(x+τ)}` and zero elsewhere.
    pub fn density_by_residues(&self, theta: f64, t: f64) -> f64 {
        let tau = 2.0 * self.params.gamma0() * t;
        let (s, co) = (0.5 * theta).sin_cos();
        if s + co <= 0.0 {
            return 0.0;
        }
        let x = critical_coordinate(theta);
        if !(x >= -tau && x < 0.0) {
            return 0.0;
        }
        let d = (s + co) * (s + co);
        let y = x + tau;
        let sum: Complex64 = continuous_poles().iter().map(|&(a, rho)| -I * a * (I * rho * y).exp()).sum();
        (-tau).exp() / (d * d) * sum.re
    }
}

/// `(aⱼ, ρⱼ)` with `√(2π)(c_k − e^{2ik}/√(2π)) = Σⱼ aⱼ (e^{−iτ(k−ρⱼ)} − 1)/(k − ρⱼ)`.
fn continuous_poles() -> [(Complex64, Complex64); 3] {
    let (plus, minus) = nu_pair(1.0);
    let r3 = 3f64.sqrt();
    [(I, -I), (minus / r3, I * minus), (-plus / r3, I * plus)]
}

fn coeff_continuous(k: f64, tau: f64) -> Complex64 {
    let k = c(k);
    continuous_poles()
        .iter()
        .map(|&(a, rho)| {
            let z = k - rho;
            // (e^{−iτz} − 1)/z without cancellation at small z
            let u = -I * tau * z;
            let ratio = if u.norm() < 1e-4 { -I * tau * (1.0 + u / 2.0 + u * u / 6.0) } else { u.exp_m1() / z };
            a * ratio
        })
        .sum::<Complex64>()
        / (2.0 * PI).sqrt()
}

trait ExpM1 {
    fn exp_m1(self) -> Self;
}

impl ExpM1 for Complex64 {
    fn exp_m1(self) -> Self {
        let (x, y) = (self.re, self.im);
        // e^{x+iy} − 1 = (eˣ − 1)cos y + (cos y − 1) + i eˣ sin y
        let em1 = x.exp_m1();
        let cm1 = -2.0 * (0.5 * y).sin().powi(2);
        Complex64::new(em1 * y.cos() + cm1, x.exp() * y.sin())
    }
}

/// Expansion coefficient `c_k(t)` of the `λ = 1` solution started at `θ = 0`.
pub fn coeff_ck(k: f64, t: f64, p: &ModelParams) -> Result<Complex64> {
    check_critical(p, "coeff_ck")?;
    let tau = 2.0 * p.gamma0() * t;
    Ok((I * (2.0 * k)).exp() / (2.0 * PI).sqrt() + coeff_continuous(k, tau))
}
