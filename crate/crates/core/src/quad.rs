//! Adaptive quadrature.
//!
//! Each panel is integrated with the double-exponential (tanh-sinh) rule from
//! the `quadrature` crate, which tolerates integrable endpoint singularities.
//! The panel with the largest error estimate is bisected until the summed
//! estimate meets the tolerance or the panel budget runs out. Callers that
//! know where the integrand has kinks or jumps should pass them as
//! breakpoints.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;

const MAX_PANELS: usize = 4000;

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
    /// `false` when the panel budget ran out before the tolerance was met.
    pub converged: bool,
}

struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn panel<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64) -> Panel {
    let out = quadrature::double_exponential::integrate(f, lo, hi, tol);
    Panel {
        lo,
        hi,
        value: out.integral,
        error: out.error_estimate,
    }
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Quad {
    if a == b {
        return Quad {
            value: 0.0,
            error: 0.0,
            converged: true,
        };
    }
    if b < a {
        let q = integrate(f, b, a, tol);
        return Quad { value: -q.value, ..q };
    }
    let mut heap = BinaryHeap::new();
    heap.push(panel(&f, a, b, 0.25 * tol));
    let mut error = heap.peek().unwrap().error;
    while error > tol && heap.len() < MAX_PANELS {
        let worst = heap.pop().unwrap();
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            heap.push(worst);
            break;
        }
        let left = panel(&f, worst.lo, mid, 0.125 * tol);
        let right = panel(&f, mid, worst.hi, 0.125 * tol);
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // recompute sums to shed accumulated rounding in the running error
    let (mut value, mut err) = (0.0, 0.0);
    for p in &heap {
        value += p.value;
        err += p.error;
    }
    let roundoff = 64.0 * f64::EPSILON * heap.iter().map(|p| p.value.abs()).sum::<f64>();
    Quad {
        value,
        error: err,
        converged: err <= tol.max(roundoff),
    }
}

/// Integrates over `[a, b]` split at the given interior breakpoints.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> Quad {
    let mut points: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    points.sort_by(|x, y| x.total_cmp(y));
    points.dedup();
    let mut edges = Vec::with_capacity(points.len() + 2);
    edges.push(a);
    edges.extend(points);
    edges.push(b);
    let n = (edges.len() - 1) as f64;
    let mut acc = Quad {
        value: 0.0,
        error: 0.0,
        converged: true,
    };
    for w in edges.windows(2) {
        let q = integrate(&f, w[0], w[1], tol / n);
        acc.value += q.value;
        acc.error += q.error;
        acc.converged &= q.converged;
    }
    acc
}

/// Integrates over `[a, ∞)` through the map `t = a + x/(1 − x)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, tol: f64) -> Quad {
    integrate(
        |x: f64| {
            let one_minus = 1.0 - x;
            if one_minus <= 0.0 {
                return 0.0;
            }
            let t = a + x / one_minus;
            f(t) / (one_minus * one_minus)
        },
        0.0,
        1.0,
        tol,
    )
}

/// Complex-valued integrand; real and imaginary parts share the tolerance.
pub fn integrate_complex<F: Fn(f64) -> Complex64>(f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> (Complex64, bool) {
    let re = integrate_with_breaks(|x| f(x).re, a, b, breaks, 0.5 * tol);
    let im = integrate_with_breaks(|x| f(x).im, a, b, breaks, 0.5 * tol);
    (Complex64::new(re.value, im.value), re.converged && im.converged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn smooth_and_singular() {
        let q = integrate(|x| x.sin(), 0.0, PI, 1e-12);
        assert!((q.value - 2.0).abs() < 1e-12 && q.converged);
        // endpoint singularity x^(-2/3)
        let q = integrate(|x| x.powf(-2.0 / 3.0), 0.0, 1.0, 1e-10);
        assert!((q.value - 3.0).abs() < 1e-8, "{q:?}");
        let q = integrate(|x| (x * 40.0).cos(), -PI, PI, 1e-12);
        assert!(q.value.abs() < 1e-11);
    }

    #[test]
    fn reversed_and_breaks() {
        let q = integrate(|x| x, 1.0, 0.0, 1e-12);
        assert!((q.value + 0.5).abs() < 1e-13);
        let q = integrate_with_breaks(|x| if x < 0.3 { 1.0 } else { 0.0 }, 0.0, 1.0, &[0.3], 1e-12);
        assert!((q.value - 0.3).abs() < 1e-12);
    }

    #[test]
    fn semi_infinite() {
        let q = integrate_to_infinity(|t| (-2.0 * t).exp(), 0.0, 1e-12);
        assert!((q.value - 0.5).abs() < 1e-11, "{q:?}");
    }
}
