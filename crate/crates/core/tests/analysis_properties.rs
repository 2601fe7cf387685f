use gapchannel::analysis::{self, ExchangeFit, Regime};
use gapchannel::Error;
use num_complex::Complex64;
use proptest::prelude::*;

type Rho = [[Complex64; 4]; 4];

fn random_density(entries: &[f64]) -> Rho {
    let g = |i: usize, j: usize| Complex64::new(entries[8 * i + 2 * j], entries[8 * i + 2 * j + 1]);
    let mut rho = [[Complex64::new(0.0, 0.0); 4]; 4];
    for (i, row) in rho.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..4).map(|k| g(i, k) * g(j, k).conj()).sum();
        }
    }
    let tr: f64 = (0..4).map(|i| rho[i][i].re).sum();
    for row in rho.iter_mut() {
        for v in row.iter_mut() {
            *v /= tr;
        }
    }
    rho
}

fn su2(a: f64, b: f64, c: f64) -> [[Complex64; 2]; 2] {
    let (s, co) = b.sin_cos();
    let p = Complex64::from_polar(1.0, a);
    let q = Complex64::from_polar(1.0, c);
    [[p * co, q * s], [-q.conj() * s, p.conj() * co]]
}

/// `(U ⊗ V) ρ (U ⊗ V)†` with the first factor on the high bit.
fn conjugate(rho: &Rho, u: &[[Complex64; 2]; 2], v: &[[Complex64; 2]; 2]) -> Rho {
    let w = |i: usize, j: usize| u[i >> 1][j >> 1] * v[i & 1][j & 1];
    let mut tmp = [[Complex64::new(0.0, 0.0); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            tmp[i][j] = (0..4).map(|k| w(i, k) * rho[k][j]).sum();
        }
    }
    let mut out = [[Complex64::new(0.0, 0.0); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| tmp[i][k] * w(j, k).conj()).sum();
        }
    }
    out
}

proptest! {
    #[test]
    fn approximate_negativity_is_monotone_and_concave(p in 0.0f64..1.0, q in 0.0f64..1.0) {
        let f = |x: f64| analysis::log_negativity_approx(x).unwrap();
        let (lo, hi) = if p < q { (p, q) } else { (q, p) };
        prop_assert!(f(lo) <= f(hi));
        prop_assert!(f(0.5 * (lo + hi)) >= 0.5 * (f(lo) + f(hi)) - 1e-15);
    }

    #[test]
    fn exact_negativity_ignores_local_unitaries(
        entries in proptest::collection::vec(-1.0f64..1.0, 32),
        angles in proptest::collection::vec(0.0f64..std::f64::consts::TAU, 6),
    ) {
        let rho = random_density(&entries);
        let before = analysis::log_negativity_exact(&rho).unwrap();
        let u = su2(angles[0], angles[1], angles[2]);
        let v = su2(angles[3], angles[4], angles[5]);
        let after = analysis::log_negativity_exact(&conjugate(&rho, &u, &v)).unwrap();
        prop_assert!((before - after).abs() < 1e-10, "{before} vs {after}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fit_recovers_noiseless_template(
        frequency in 0.01f64..0.1,
        decay in prop_oneof![Just(0.0), 0.002f64..0.02],
        cosh_frac in 0.0f64..0.8,
        a_minus in 0.3f64..0.5,
        phase in -0.5f64..0.5,
    ) {
        let truth = ExchangeFit {
            a_plus: 0.5,
            a_minus,
            frequency,
            phase,
            decay_rate: decay,
            cosh_rate: decay * cosh_frac,
            residual: 0.0,
        };
        let span = 6.0 * std::f64::consts::TAU / frequency;
        let times: Vec<f64> = (0..600).map(|i| span * i as f64 / 599.0).collect();
        let (s, r): (Vec<f64>, Vec<f64>) = times.iter().map(|&t| truth.evaluate(t)).unzip();
        let fit = analysis::fit_exchange(&times, &s, &r).unwrap();
        prop_assert!((fit.frequency - frequency).abs() < 1e-6 * frequency, "{fit:?}");
        prop_assert!((fit.decay_rate - decay).abs() < 1e-6 * decay.max(frequency), "{fit:?}");
        prop_assert_eq!(fit.regime(), Regime::classify(decay, frequency));
    }

    #[test]
    fn sweep_bracket_straddles_the_switch(edge in 0.05f64..0.95, resolution in 0.001f64..0.05) {
        let classify = |x: f64| Ok(if x < edge { Regime::Oscillatory } else { Regime::Damped });
        let est = analysis::bisect_regime(classify, 0.0, 1.0, resolution).unwrap();
        let (lo, hi) = est.bracket;
        prop_assert!(hi - lo <= resolution);
        prop_assert!(lo < edge && edge <= hi);
        prop_assert!((est.threshold_parameter - edge).abs() <= resolution);
        prop_assert_ne!(classify(lo).unwrap(), classify(hi).unwrap());
    }
}

#[test]
fn range_without_switch_is_rejected() {
    let err = analysis::bisect_regime(|_| Ok(Regime::Oscillatory), 0.4, 0.6, 0.01);
    assert!(matches!(err, Err(Error::NoRegimeChange { .. })), "{err:?}");
}

#[test]
fn approximate_negativity_endpoints() {
    assert_eq!(analysis::log_negativity_approx(0.0f64).unwrap(), 0.0);
    assert_eq!(analysis::log_negativity_approx(1.0f64).unwrap(), 1.0);
}
