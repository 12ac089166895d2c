//! General resetting on the circle: a finite-volume generator with drift,
//! diffusion, a state-dependent reset rate and an arbitrary reset measure,
//! solved in the Laplace domain through the rank-one structure of the reset
//! term, and inverted numerically.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Matrix4;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Angle, ModelParams};
use crate::quad;

type Field = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Where a reset sends the state.
#[derive(Clone)]
pub enum ResetMeasure {
    Atom(Angle),
    /// Probability density on `(−π, π]`.
    Density(Field),
}

/// Face reconstruction for the drift flux.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Advection {
    /// First-order donor cell.
    Upwind,
    /// Linear upwind-biased reconstruction `κ = 1/3`; second order on
    /// smooth densities.
    #[default]
    UpwindBiased,
}

/// `∂ₜP = −∂_θ(ΩP) + ∂_θ(D ∂_θP) − γP + μ⟨γ, P⟩` on the periodic circle.
#[derive(Clone)]
pub struct GeneratorSpec {
    pub drift: Field,
    pub diffusion: Field,
    pub jump_rate: Field,
    pub reset: ResetMeasure,
    pub advection: Advection,
}

impl GeneratorSpec {
    pub fn new(drift: Field, diffusion: Field, jump_rate: Field, reset: ResetMeasure) -> Self {
        GeneratorSpec {
            drift,
            diffusion,
            jump_rate,
            reset,
            advection: Advection::default(),
        }
    }

    /// The measured qubit: no-click drift, click rate `γ sin²(θ/2)`, reset to `π`.
    pub fn qubit(p: &ModelParams) -> Self {
        let (a, b) = (*p, *p);
        GeneratorSpec::new(
            Arc::new(move |x| a.drift(Angle::new(x))),
            Arc::new(|_| 0.0),
            Arc::new(move |x| b.click_rate(Angle::new(x))),
            ResetMeasure::Atom(Angle::PI),
        )
    }

    pub fn with_advection(mut self, advection: Advection) -> Self {
        self.advection = advection;
        self
    }
}

/// Discretised generator acting on cell masses.
#[derive(Debug, Clone)]
pub struct GridOperator {
    n: usize,
    h: f64,
    /// Periodic 5-point band of the transport part: `band[i][d + 2]` couples
    /// row `i` to column `(i + d) mod n`.
    band: Vec<[f64; 5]>,
    /// Reset rate at cell centres.
    rate: Vec<f64>,
    /// Reset measure as cell masses.
    reset: Vec<f64>,
}

/// Linear-interpolation masses of a point on the cell-centre grid.
fn point_masses(theta: f64, n: usize, h: f64) -> Vec<(usize, f64)> {
    let x = (Angle::new(theta).value() + PI) / h - 0.5;
    let i0 = x.floor();
    let w = x - i0;
    let i0 = (i0 as i64).rem_euclid(n as i64) as usize;
    vec![(i0, 1.0 - w), ((i0 + 1) % n, w)]
}

/// Builds the grid operator with `n ≥ 64` cells.
pub fn discretize(spec: &GeneratorSpec, n: usize) -> Result<GridOperator> {
    if n < 64 {
        return Err(Error::invalid("n", format!("grid needs at least 64 cells, got {n}")));
    }
    let h = 2.0 * PI / n as f64;
    let face = |i: usize| -PI + i as f64 * h;
    let centre = |i: usize| -PI + (i as f64 + 0.5) * h;

    let mut band = vec![[0.0; 5]; n];
    let mut add = |row: usize, col: i64, v: f64| {
        let d = col - row as i64;
        // column indices here are within two cells of the row
        let d = if d > 2 { d - n as i64 } else if d < -2 { d + n as i64 } else { d };
        band[row][(d + 2) as usize] += v;
    };
    for i in 0..n {
        // face i separates cells i − 1 (left) and i (right)
        let om = (spec.drift)(face(i));
        let diff = (spec.diffusion)(face(i));
        if !(om.is_finite() && diff.is_finite() && diff >= 0.0) {
            return Err(Error::invalid("spec", format!("non-finite or negative field at theta={}", face(i))));
        }
        let ii = i as i64;
        let left = (ii - 1).rem_euclid(n as i64);
        // face value as weights on (cell offset from i, weight)
        let weights: &[(i64, f64)] = match (spec.advection, om > 0.0) {
            (Advection::Upwind, true) => &[(-1, 1.0)],
            (Advection::Upwind, false) => &[(0, 1.0)],
            (Advection::UpwindBiased, true) => &[(-2, -1.0 / 6.0), (-1, 5.0 / 6.0), (0, 1.0 / 3.0)],
            (Advection::UpwindBiased, false) => &[(-1, 1.0 / 3.0), (0, 5.0 / 6.0), (1, -1.0 / 6.0)],
        };
        for &(off, w) in weights {
            let col = (ii + off).rem_euclid(n as i64);
            let v = om * w / h;
            add(i, col, v);
            add(left as usize, col, -v);
        }
        let k = diff / (h * h);
        add(i, ii, -k);
        add(i, left, k);
        add(left as usize, ii, k);
        add(left as usize, left, -k);
    }

    let rate: Vec<f64> = (0..n).map(|i| (spec.jump_rate)(centre(i))).collect();
    if rate.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::invalid("jump_rate", "must be finite and >= 0 on the grid"));
    }
    let reset = match &spec.reset {
        ResetMeasure::Atom(a) => {
            let mut m = vec![0.0; n];
            for (i, w) in point_masses(a.value(), n, h) {
                m[i] += w;
            }
            m
        }
        ResetMeasure::Density(f) => {
            let total = quad::integrate(|x| f(x), -PI, PI, 1e-12).value;
            if (total - 1.0).abs() > 1e-8 {
                return Err(Error::invalid("reset", format!("density integrates to {total}, not 1")));
            }
            let m: Vec<f64> = (0..n)
                .map(|i| quad::integrate(|x| f(x), face(i), face(i) + h, 1e-14).value)
                .collect();
            let s: f64 = m.iter().sum();
            m.into_iter().map(|x| x / s).collect()
        }
    };
    Ok(GridOperator { n, h, band, rate, reset })
}

impl GridOperator {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn centres(&self) -> Vec<f64> {
        (0..self.n).map(|i| -PI + (i as f64 + 0.5) * self.h).collect()
    }

    /// `(L₀ + L₁) m` for cell masses `m`.
    pub fn apply(&self, m: &[f64]) -> Vec<f64> {
        let n = self.n;
        let flux_in: f64 = self.rate.iter().zip(m).map(|(r, x)| r * x).sum();
        (0..n)
            .map(|i| {
                let mut v = -self.rate[i] * m[i] + self.reset[i] * flux_in;
                for d in 0..5 {
                    v += self.band[i][d] * m[(i + n + d - 2) % n];
                }
                v
            })
            .collect()
    }

    /// Column sums of the full generator; zero up to rounding.
    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.n;
        let mut sums = vec![0.0; n];
        for i in 0..n {
            for d in 0..5 {
                sums[(i + n + d - 2) % n] += self.band[i][d];
            }
        }
        let reset_total: f64 = self.reset.iter().sum();
        for j in 0..n {
            sums[j] += self.rate[j] * (reset_total - 1.0);
        }
        sums
    }

    fn pair(&self, x: &[Complex64]) -> Complex64 {
        self.rate.iter().zip(x).map(|(r, v)| v * r).sum()
    }

    fn source(&self, theta: Angle) -> Vec<Complex64> {
        let mut e = vec![Complex64::new(0.0, 0.0); self.n];
        for (i, w) in point_masses(theta.value(), self.n, self.h) {
            e[i] += w;
        }
        e
    }

    /// Factorises `s − L₀`.
    fn shifted(&self, s: Complex64) -> Result<PeriodicSolver> {
        PeriodicSolver::new(self, s)
    }
}

/// Banded LU with partial pivoting; `kl = ku = 2`, fill up to `ku + kl`.
struct BandLu {
    n: usize,
    /// Row `i` holds columns `i − 2 ..= i + 4`.
    rows: Vec<[Complex64; 7]>,
    piv: Vec<usize>,
    mult: Vec<[Complex64; 2]>,
}

const KL: usize = 2;
const UW: usize = 4;

impl BandLu {
    fn at(rows: &mut [[Complex64; 7]], i: usize, j: usize) -> &mut Complex64 {
        &mut rows[i][j + KL - i]
    }

    fn new(mut rows: Vec<[Complex64; 7]>) -> Result<Self> {
        let n = rows.len();
        let mut piv = vec![0; n];
        let mut mult = vec![[Complex64::new(0.0, 0.0); 2]; n];
        let scale = rows
            .iter()
            .flat_map(|r| r.iter())
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        for k in 0..n {
            let last = (k + KL).min(n - 1);
            let mut p = k;
            let mut best = Self::at(&mut rows, k, k).norm();
            for i in k + 1..=last {
                let v = Self::at(&mut rows, i, k).norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-300 || best <= 1e-15 * scale * f64::EPSILON {
                return Err(Error::Singular { what: "s - L0" });
            }
            piv[k] = p;
            let right = (k + UW).min(n - 1);
            if p != k {
                for j in k..=right {
                    let a = *Self::at(&mut rows, k, j);
                    let b = *Self::at(&mut rows, p, j);
                    *Self::at(&mut rows, k, j) = b;
                    *Self::at(&mut rows, p, j) = a;
                }
            }
            let pivot = *Self::at(&mut rows, k, k);
            for i in k + 1..=last {
                let m = *Self::at(&mut rows, i, k) / pivot;
                mult[k][i - k - 1] = m;
                *Self::at(&mut rows, i, k) = Complex64::new(0.0, 0.0);
                if m != Complex64::new(0.0, 0.0) {
                    for j in k + 1..=right {
                        let u = *Self::at(&mut rows, k, j);
                        *Self::at(&mut rows, i, j) -= m * u;
                    }
                }
            }
        }
        Ok(BandLu { n, rows, piv, mult })
    }

    fn solve(&self, b: &mut [Complex64]) {
        let n = self.n;
        for k in 0..n {
            b.swap(k, self.piv[k]);
            for (o, m) in self.mult[k].iter().enumerate() {
                let i = k + o + 1;
                if i < n {
                    b[i] = b[i] - m * b[k];
                }
            }
        }
        for k in (0..n).rev() {
            let mut v = b[k];
            for j in k + 1..=(k + UW).min(n - 1) {
                v -= self.rows[k][j + KL - k] * b[j];
            }
            b[k] = v / self.rows[k][KL];
        }
    }
}

/// Solver for the periodic banded `s − L₀`: banded LU plus a rank-4
/// Woodbury correction for the wrap-around corners.
struct PeriodicSolver {
    lu: BandLu,
    corner_rows: [usize; 4],
    /// Wrapped entries of each corner row as `(column, value)`.
    corners: [Vec<(usize, Complex64)>; 4],
    /// `B⁻¹U`, one column per corner row.
    z: [Vec<Complex64>; 4],
    capacitance_inv: Matrix4<Complex64>,
}

impl PeriodicSolver {
    fn new(op: &GridOperator, s: Complex64) -> Result<Self> {
        let n = op.n;
        let zero = Complex64::new(0.0, 0.0);
        let mut rows = vec![[zero; 7]; n];
        let corner_rows = [0, 1, n - 2, n - 1];
        let mut corners: [Vec<(usize, Complex64)>; 4] = Default::default();
        for i in 0..n {
            rows[i][KL] += s + op.rate[i];
            for d in 0..5 {
                let v = -op.band[i][d];
                if v == 0.0 {
                    continue;
                }
                let col = i as i64 + d as i64 - 2;
                if (0..n as i64).contains(&col) {
                    rows[i][(col - i as i64 + KL as i64) as usize] += v;
                } else {
                    let c = col.rem_euclid(n as i64) as usize;
                    let slot = corner_rows.iter().position(|&r| r == i).unwrap();
                    corners[slot].push((c, Complex64::new(v, 0.0)));
                }
            }
        }
        let lu = BandLu::new(rows)?;
        let z: [Vec<Complex64>; 4] = std::array::from_fn(|k| {
            let mut e = vec![zero; n];
            e[corner_rows[k]] = Complex64::new(1.0, 0.0);
            lu.solve(&mut e);
            e
        });
        let mut cap = Matrix4::<Complex64>::identity();
        for r in 0..4 {
            for c in 0..4 {
                cap[(r, c)] += corners[r].iter().map(|&(j, v)| v * z[c][j]).sum::<Complex64>();
            }
        }
        let capacitance_inv = cap.try_inverse().ok_or(Error::Singular { what: "s - L0" })?;
        Ok(PeriodicSolver {
            lu,
            corner_rows,
            corners,
            z,
            capacitance_inv,
        })
    }

    fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let _ = self.corner_rows;
        let mut x = b.to_vec();
        self.lu.solve(&mut x);
        let vz = nalgebra::Vector4::from_fn(|r, _| self.corners[r].iter().map(|&(j, v)| v * x[j]).sum::<Complex64>());
        let w = self.capacitance_inv * vz;
        for (k, zk) in self.z.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(zk) {
                *xi -= zi * w[k];
            }
        }
        x
    }
}

/// Laplace-domain solution with its rank-one pieces.
struct LaplaceParts {
    /// Combined solution as cell masses.
    combined: Vec<Complex64>,
    /// `⟨γ, x⟩ / (1 − ⟨γ, y⟩)`.
    rate: Complex64,
}

fn solve_parts(s: Complex64, theta_from: Angle, grid: &GridOperator) -> Result<LaplaceParts> {
    let solver = grid.shifted(s)?;
    let x = solver.solve(&grid.source(theta_from));
    let mu: Vec<Complex64> = grid.reset.iter().map(|&m| Complex64::new(m, 0.0)).collect();
    let y = solver.solve(&mu);
    let denom = Complex64::new(1.0, 0.0) - grid.pair(&y);
    if denom.norm() < 1e-12 {
        return Err(Error::NearPole {
            what: "1 - <gamma, y>",
            magnitude: denom.norm(),
        });
    }
    let rate = grid.pair(&x) / denom;
    let combined = x.iter().zip(&y).map(|(a, b)| a + b * rate).collect();
    Ok(LaplaceParts { combined, rate })
}

fn check_rate(s: Complex64) -> Result<()> {
    if s.re > 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("s", format!("need finite s with Re(s) > 0, got {s}")))
    }
}

/// `(𝔏Pₜ)(s)(·|θ_from)` as a density on the cell centres.
pub fn laplace_transition(s: Complex64, theta_from: Angle, grid: &GridOperator) -> Result<Vec<Complex64>> {
    check_rate(s)?;
    let parts = solve_parts(s, theta_from, grid)?;
    Ok(parts.combined.into_iter().map(|m| m / grid.h).collect())
}

/// Laplace transform of the mean reset rate, `⟨γ, (𝔏Pₜ)(s)(·|θ_from)⟩`.
pub fn mean_rate_laplace(s: Complex64, theta_from: Angle, grid: &GridOperator) -> Result<Complex64> {
    check_rate(s)?;
    Ok(solve_parts(s, theta_from, grid)?.rate)
}

/// Default number of quadrature nodes for [`invert_laplace`].
pub const DEFAULT_NODES: usize = 32;

/// Tolerance on the node-doubling change, in the `L¹` norm of the density.
pub const INVERSION_TOL: f64 = 1e-5;

/// Quadrature used to invert the Laplace transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inversion {
    /// Optimised cotangent (Talbot) contour bending into `Re s < 0`.
    Contour,
    /// Bromwich line at `Re s = A/2t` as a Fourier series with Euler
    /// summation; only evaluates the resolvent in the right half-plane.
    Bromwich,
}

/// Inverse Laplace transform of the transition density at time `t`.
///
/// Tries the contour first and falls back to the Bromwich line when the
/// contour sweep fails. The contour needs the generator's pseudospectrum to
/// stay left of it, which holds for diffusion but not for transport: mass
/// arriving after `t` is weighted by `e^{|Re s|(t' − t)}` there.
pub fn invert_laplace(theta_from: Angle, t: f64, grid: &GridOperator, nodes: usize) -> Result<Vec<f64>> {
    match invert_laplace_with(theta_from, t, grid, nodes, Inversion::Contour) {
        Err(Error::NotConverged { .. }) | Err(Error::Singular { .. }) | Err(Error::NearPole { .. }) => {
            invert_laplace_with(theta_from, t, grid, nodes, Inversion::Bromwich)
        }
        other => other,
    }
}

/// [`invert_laplace`] with a fixed method. The result at `2·nodes` is
/// returned once it agrees with `nodes` to [`INVERSION_TOL`] in `L¹`; the
/// Bromwich series doubles `nodes` up to 64 times before giving up.
pub fn invert_laplace_with(
    theta_from: Angle,
    t: f64,
    grid: &GridOperator,
    nodes: usize,
    method: Inversion,
) -> Result<Vec<f64>> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::invalid("t", format!("must be finite and > 0, got {t}")));
    }
    let min = match method {
        Inversion::Contour => 4,
        Inversion::Bromwich => EULER_M + 2,
    };
    if nodes < min {
        return Err(Error::invalid("nodes", format!("need at least {min} nodes")));
    }
    let run = |k| match method {
        Inversion::Contour => contour(theta_from, t, grid, k),
        Inversion::Bromwich => bromwich(theta_from, t, grid, k),
    };
    // the Fourier series must resolve the smeared atom passing each cell,
    // so its node count keeps doubling; the contour gets one sweep
    let last = match method {
        Inversion::Contour => nodes,
        Inversion::Bromwich => nodes * MAX_DOUBLING,
    };
    let mut k = nodes;
    let mut coarse = run(k)?;
    loop {
        let fine = run(2 * k)?;
        let change: f64 = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).sum::<f64>() * grid.h;
        if change <= INVERSION_TOL {
            return Ok(fine);
        }
        if k >= last || !change.is_finite() {
            return Err(Error::NotConverged {
                what: "invert_laplace",
                change,
                tolerance: INVERSION_TOL,
            });
        }
        k *= 2;
        coarse = fine;
    }
}

const MAX_DOUBLING: usize = 64;

fn solve_many(points: &[Complex64], theta_from: Angle, grid: &GridOperator) -> Result<Vec<Vec<Complex64>>> {
    points
        .par_iter()
        .map(|&s| solve_parts(s, theta_from, grid).map(|p| p.combined))
        .collect()
}

/// Midpoint rule on `z(θ) = (N/t)(−a + bθ cot(cθ) + idθ)`, `θ ∈ (−π, π)`.
fn contour(theta_from: Angle, t: f64, grid: &GridOperator, n: usize) -> Result<Vec<f64>> {
    const A: f64 = 0.6122;
    const B: f64 = 0.5017;
    const C: f64 = 0.6407;
    const D: f64 = 0.2645;
    let n = n + n % 2;
    let scale = n as f64 / t;
    let half = n / 2;
    let nodes: Vec<(Complex64, Complex64)> = (0..half)
        .map(|j| {
            let th = (2 * j + 1) as f64 * PI / n as f64;
            let (s, c) = (C * th).sin_cos();
            let z = scale * Complex64::new(-A + B * th * c / s, D * th);
            let dz = scale * Complex64::new(B * c / s - B * C * th / (s * s), D);
            (z, dz)
        })
        .collect();
    let points: Vec<Complex64> = nodes.iter().map(|n| n.0).collect();
    let values = solve_many(&points, theta_from, grid)?;
    let mut acc = vec![0.0; grid.n];
    for ((z, dz), f) in nodes.iter().zip(&values) {
        let w = (z * t).exp() * dz;
        for (a, v) in acc.iter_mut().zip(f) {
            *a += (w * v).im;
        }
    }
    finish(acc, 2.0 / n as f64, grid)
}

const EULER_A: f64 = 18.4;
const EULER_M: usize = 11;

/// Fourier series on `Re s = A/2t` with `nodes − M` terms then binomial
/// averaging of the last `M + 1` partial sums.
fn bromwich(theta_from: Angle, t: f64, grid: &GridOperator, nodes: usize) -> Result<Vec<f64>> {
    let terms = nodes + 1;
    let points: Vec<Complex64> = (0..terms)
        .map(|k| Complex64::new(EULER_A, 2.0 * PI * k as f64) / (2.0 * t))
        .collect();
    let values = solve_many(&points, theta_from, grid)?;
    let first_avg = terms - EULER_M - 1;
    let mut partial = vec![0.0; grid.n];
    let mut acc = vec![0.0; grid.n];
    let mut binom = 1.0;
    for (k, f) in values.iter().enumerate() {
        let w = if k == 0 { 0.5 } else if k % 2 == 0 { 1.0 } else { -1.0 };
        for (p, v) in partial.iter_mut().zip(f) {
            *p += w * v.re;
        }
        if k >= first_avg {
            let j = k - first_avg;
            if j > 0 {
                binom *= (EULER_M + 1 - j) as f64 / j as f64;
            }
            let c = binom / 2f64.powi(EULER_M as i32);
            for (a, p) in acc.iter_mut().zip(&partial) {
                *a += c * p;
            }
        }
    }
    finish(acc, (0.5 * EULER_A).exp() / t, grid)
}

fn finish(acc: Vec<f64>, factor: f64, grid: &GridOperator) -> Result<Vec<f64>> {
    let out: Vec<f64> = acc.into_iter().map(|a| a * factor / grid.h).collect();
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NotConverged {
            what: "invert_laplace",
            change: f64::INFINITY,
            tolerance: INVERSION_TOL,
        })
    }
}
