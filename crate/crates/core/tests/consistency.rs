//! Cross-module agreement through the public API.

use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use qreset::counting::{mean_count, mean_rate, mean_rate_laplace};
use qreset::noclick::{propagator, survival, WaveFunction};
use qreset::renewal::{density_closed, renewal_convolve, snapshot, SnapshotMethod};
use qreset::resolvent::{discretize, GeneratorSpec};
use qreset::spectral::{build_basis_sub, density_series_sub, finite_part};
use qreset::trajectory::{ensemble, simulate, Scheme, TrajectoryConfig};
use qreset::{Angle, ModelParams};

fn params(lambda: f64) -> ModelParams {
    ModelParams::from_lambda(1.0, lambda).unwrap()
}

#[test]
fn click_rate_of_the_density_is_the_mean_rate() {
    for lambda in [0.5, 1.0, 2.0] {
        let p = params(lambda);
        for t in [0.4, 1.5] {
            let snap = snapshot(t, &p, SnapshotMethod::Convolve).unwrap();
            let rate = snap.expect(|x| p.click_rate(Angle::new(x)));
            assert!((rate - mean_rate(t, &p)).abs() < 1e-7, "lambda={lambda} t={t}");
        }
    }
}

#[test]
fn series_snapshot_has_unit_mass() {
    let p = params(0.6);
    let basis = build_basis_sub(&p, 200).unwrap();
    for t in [0.3, 1.0, 3.0] {
        let snap = density_series_sub(t, &basis).unwrap();
        assert!((snap.atom_mass + snap.continuous_mass() - 1.0).abs() < 1e-5, "t={t}");
    }
}

#[test]
fn resolvent_mean_rate_at_two_resolutions() {
    // the discrete transform converges to the closed form as the grid refines
    let p = params(1.0);
    let s = Complex64::new(1.0, 0.5);
    let want = mean_rate_laplace(s, &p);
    let err = |n| {
        let g = discretize(&GeneratorSpec::qubit(&p), n).unwrap();
        (qreset::resolvent::mean_rate_laplace(s, Angle::ZERO, &g).unwrap() - want).norm()
    };
    let (coarse, fine) = (err(512), err(2048));
    assert!(fine < coarse && fine < 1e-4, "{coarse} {fine}");
}

#[test]
fn ensemble_is_reproducible_across_thread_counts() {
    let p = params(1.5);
    let cfg = TrajectoryConfig::new(2.0, Scheme::EventDriven, 11, vec![0.5, 2.0]).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| ensemble(Angle::ZERO, 2_000, &cfg, &p).unwrap())
    };
    assert_eq!(run(1), run(4));
    assert_eq!(simulate(Angle::ZERO, &cfg, &p).unwrap(), simulate(Angle::ZERO, &cfg, &p).unwrap());
}

#[test]
fn euler_and_event_driven_agree_on_the_mean() {
    let p = params(1.0);
    let n = 20_000;
    let mean = |scheme| {
        let cfg = TrajectoryConfig::new(1.0, scheme, 5, vec![1.0]).unwrap();
        let s = ensemble(Angle::ZERO, n, &cfg, &p).unwrap();
        s.times[0].sum_count as f64 / n as f64
    };
    let exact = mean_count(1.0, &p);
    assert!((mean(Scheme::EventDriven) - exact).abs() < 0.05);
    assert!((mean(Scheme::Euler { dt: 1e-3 }) - exact).abs() < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn survival_is_the_no_click_norm(lambda in 0.05f64..4.0, t in 0.0f64..6.0, th in -3.1f64..3.1) {
        let p = params(lambda);
        let psi = propagator(t, WaveFunction::from_angle(Angle::new(th)), &p);
        let s = survival(t, Angle::new(th), &p);
        prop_assert!((psi.norm_sqr() - s).abs() < 1e-10 * (1.0 + s));
    }

    #[test]
    fn series_matches_closed_form(lambda in 0.2f64..0.9, t in 0.2f64..2.5, k in 0usize..64) {
        let p = params(lambda);
        let th = -PI + (k as f64 + 0.5) * 2.0 * PI / 64.0;
        let basis = build_basis_sub(&p, 300).unwrap();
        let beta = p.beta().unwrap();
        let want = if t <= PI / beta {
            density_closed(Angle::new(th), t, &p).unwrap()
        } else {
            renewal_convolve(Angle::new(th), t, &p).unwrap()
        };
        prop_assert!((finite_part(th, t, &basis) - want).abs() < 2e-3);
    }
}
