//! Second-order master equation for two oscillator ancillas weakly coupled to
//! a gapped harmonic ring, in the limit of an infinite chain.
//!
//! With `N_jl = ⟨a_j† a_l⟩` for `j, l ∈ {S, R}` the rotating-wave closure reads
//!
//! ```text
//! dN/dt = −J_a² [ (X − iY) N + N (X + iY) ],
//! X = [[x0, x1], [x1, x0]],  Y = [[y0, y1], [y1, y0]],
//! ```
//!
//! where `x_Δ = Re C⁺_Δ / 2ω` and `y_Δ = Im(C⁺_Δ + C⁻_Δ) / 2ω` are built from
//! the one-sided Fourier transforms `C±_Δ = ∫₀^∞ dτ G_Δ(τ) e^{±iωτ}` of the
//! chain position correlation `G_Δ(τ) = ⟨q_{j+Δ}(τ) q_j(0)⟩`.
//! The real part comes from the resonance `ω_k = ω` and the imaginary parts
//! from a principal-value integral over the band. `y0` multiplies the
//! identity in the ancilla space and drops out of every second moment.

use num_traits::Zero;

use crate::config::format_f64;
use crate::ed::record_times;
use crate::error::{Error, Result};
use crate::model::{band_top, dispersion, HarmonicSystemConfig};
use crate::quad;
use crate::scalar::{Complex, Real};
use crate::trace::{self, TransferTrace};

/// Closest allowed approach of ω to a band edge, in units of Ω.
pub const BAND_EDGE_MARGIN: f64 = 1e-6;

const COEFF_TOL: f64 = 1e-13;
const MAX_SEGMENTS: usize = 20_000;

/// The chain parameters seen by the ancillas. Sites enter only through their
/// separation `Δ = |m_S − m_R|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationKernel<T> {
    pub separation: usize,
    pub omega_coupling: T,
    pub omega_onsite: T,
    pub omega_ancilla: T,
}

impl<T: Real> CorrelationKernel<T> {
    pub fn from_config(config: &HarmonicSystemConfig<T>) -> Self {
        Self {
            separation: config.separation(),
            omega_coupling: config.omega_coupling,
            omega_onsite: config.omega_onsite,
            omega_ancilla: config.omega_ancilla,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.omega_coupling > T::zero()) {
            return Err(Error::InvalidArgument("omega_coupling must be positive".into()));
        }
        if !(self.omega_onsite >= T::zero()) {
            return Err(Error::InvalidArgument("omega_onsite must be nonnegative".into()));
        }
        if !(self.omega_ancilla > T::zero()) {
            return Err(Error::InvalidArgument("omega_ancilla must be positive".into()));
        }
        Ok(())
    }

    /// `cos k*` for the wavenumber with `ω_k = ω`, continued outside the band:
    /// above 1 below the gap, below −1 above the band top.
    fn cos_resonance(&self) -> T {
        let w2 = self.omega_coupling * self.omega_coupling;
        T::one()
            - (self.omega_ancilla * self.omega_ancilla - self.omega_onsite * self.omega_onsite)
                / (T::c(2.0) * w2)
    }

    /// Wavenumber `k* ∈ (0, π)` in resonance with the ancillas, if any.
    pub fn resonant_wavenumber(&self) -> Option<T> {
        let c = self.cos_resonance();
        (c > -T::one() && c < T::one()).then(|| c.acos())
    }

    /// Group velocity `|dω/dk|` at `k*`.
    pub fn group_velocity(&self) -> Option<T> {
        self.resonant_wavenumber().map(|k| {
            self.omega_coupling * self.omega_coupling * k.sin() / self.omega_ancilla
        })
    }

    fn check_band_edges(&self) -> Result<()> {
        let margin = T::c(BAND_EDGE_MARGIN) * self.omega_coupling;
        let top = band_top(self.omega_coupling, self.omega_onsite);
        for edge in [self.omega_onsite, top] {
            if (self.omega_ancilla - edge).abs() < margin {
                return Err(Error::VanHove {
                    omega: self.omega_ancilla.as_f64(),
                    edge: edge.as_f64(),
                });
            }
        }
        Ok(())
    }
}

/// The asymptotic master-equation coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MasterCoefficients<T> {
    pub x0: T,
    pub x1: T,
    pub y0: T,
    pub y1: T,
    /// Whether ω lies strictly inside the chain band.
    pub resonant: bool,
}

impl<T: Real> MasterCoefficients<T> {
    pub fn zero() -> Self {
        Self {
            x0: T::zero(),
            x1: T::zero(),
            y0: T::zero(),
            y1: T::zero(),
            resonant: false,
        }
    }
}

/// `G_Δ(τ) = (1/2π) ∫₀^π dk cos(Δk) e^{−iω_k τ} / ω_k` for the infinite chain.
///
/// The gapless chain (Ω₀ = 0) is rejected: the integrand behaves as 1/(Ωk)
/// at k → 0 and the position correlation diverges logarithmically.
pub fn correlation_q<T: Real>(
    separation: usize,
    tau: T,
    omega_coupling: T,
    omega_onsite: T,
) -> Result<Complex<T>> {
    if !(omega_coupling > T::zero()) {
        return Err(Error::InvalidArgument("omega_coupling must be positive".into()));
    }
    if !(omega_onsite > T::zero()) {
        return Err(Error::GaplessChain(omega_onsite.as_f64()));
    }
    let d = T::from_count(separation);
    let integral = quad::adaptive(
        |k: T| {
            let w = dispersion(k, omega_coupling, omega_onsite);
            let amp = (d * k).cos() / w;
            let phase = w * tau;
            Complex::new(amp * phase.cos(), -amp * phase.sin())
        },
        T::zero(),
        T::pi(),
        T::c(1e-10) * T::two_pi(),
        T::zero(),
        200_000,
    )?;
    Ok(integral.value.scale(T::one() / T::two_pi()))
}

/// Principal value of `(1/π) ∫₀^π cos(Δk) / (c − cos k) dk`.
///
/// For |c| < 1 the pole at `k* = acos c` is handled by folding a symmetric
/// window `k* ± u`, `u ∈ (0, h]`, onto itself: the two simple poles cancel
/// analytically in
///
/// ```text
/// g(k*+u) + g(k*−u) = 2(P·A + Q·B) / (A² − B²),
/// A = 2 cos k* sin²(u/2),  B = sin k* sin u,
/// P = cos(Δk*) cos(Δu),    Q = sin(Δk*) sin(Δu),
/// ```
///
/// which is bounded and free of cancellation as u → 0.
fn lattice_green<T: Real>(separation: usize, c: T) -> Result<T> {
    let d = T::from_count(separation);
    let pi = T::pi();
    let tol = T::c(COEFF_TOL);
    let integrate = |f: &dyn Fn(T) -> T, a: T, b: T| -> Result<T> {
        Ok(quad::adaptive(f, a, b, tol, T::zero(), MAX_SEGMENTS)?.value)
    };
    let g = |k: T| (d * k).cos() / (c - k.cos());
    let total = if c.abs() < T::one() {
        let ks = c.acos();
        let (sk, ck) = (ks.sin(), ks.cos());
        let (cd, sd) = ((d * ks).cos(), (d * ks).sin());
        let h = ks.min(pi - ks) / T::c(2.0);
        let folded = |u: T| {
            let s = (u / T::c(2.0)).sin();
            let a = T::c(2.0) * ck * s * s;
            let b = sk * u.sin();
            let p = cd * (d * u).cos();
            let q = sd * (d * u).sin();
            T::c(2.0) * (p * a + q * b) / ((a - b) * (a + b))
        };
        integrate(&g, T::zero(), ks - h)?
            + integrate(&folded, T::zero(), h)?
            + integrate(&g, ks + h, pi)?
    } else {
        integrate(&g, T::zero(), pi)?
    };
    Ok(total / pi)
}

/// Evaluates x0, x1, y0, y1 for the kernel.
///
/// `x_Δ = cos(Δk*) / (4ω Ω² sin k*)` inside the band and zero outside;
/// `y_Δ = −(1/(2ω)) (1/2π) P∫₀^π 2 cos(Δk) / (ω_k² − ω²) dk`.
pub fn asymptotic_coefficients<T: Real>(kernel: &CorrelationKernel<T>) -> Result<MasterCoefficients<T>> {
    kernel.validate()?;
    kernel.check_band_edges()?;
    let w = kernel.omega_ancilla;
    let w2 = kernel.omega_coupling * kernel.omega_coupling;
    let c = kernel.cos_resonance();
    let two = T::c(2.0);

    // 2/(ω_k² − ω²) = 1/(Ω² (cos k* − cos k))
    let y = |delta: usize| -> Result<T> {
        let pv = lattice_green(delta, c)? * T::pi();
        Ok(-pv / (T::two_pi() * w2) / (two * w))
    };
    let y0 = y(0)?;
    let y1 = y(kernel.separation)?;

    let (x0, x1, resonant) = match kernel.resonant_wavenumber() {
        Some(ks) => {
            let denom = T::c(4.0) * w * w2 * ks.sin();
            let d = T::from_count(kernel.separation);
            (T::one() / denom, (d * ks).cos() / denom, true)
        }
        None => (T::zero(), T::zero(), false),
    };
    Ok(MasterCoefficients { x0, x1, y0, y1, resonant })
}

/// Ancilla occupations `(n_S, n_R)` at time `t`:
///
/// ```text
/// n_S,R = e^{−2J²x0 t} [A₊ cosh(2J²x1 t) ± A₋ cos(2J²y1 t)],  A± = (n_S0 ± n_R0)/2.
/// ```
pub fn occupations_closed_form<T: Real>(
    coeffs: &MasterCoefficients<T>,
    n_s0: T,
    n_r0: T,
    j_ancilla: T,
    t: T,
) -> (T, T) {
    let two = T::c(2.0);
    let g = two * j_ancilla * j_ancilla * t;
    let a_plus = (n_s0 + n_r0) / two;
    let a_minus = (n_s0 - n_r0) / two;
    // e^{−g x0} cosh(g x1) written without the overflowing cosh
    let sum = a_plus * ((-g * (coeffs.x0 - coeffs.x1)).exp() + (-g * (coeffs.x0 + coeffs.x1)).exp())
        / two;
    let diff = a_minus * (-g * coeffs.x0).exp() * (g * coeffs.y1).cos();
    (sum + diff, sum - diff)
}

/// Angular frequency `2J_a²|y1|` of the coherent exchange between the
/// ancillas when ω lies below the gap.
pub fn oscillation_frequency<T: Real>(coeffs: &MasterCoefficients<T>, j_ancilla: T) -> Result<T> {
    if coeffs.resonant {
        return Err(Error::InvalidArgument(
            "resonant coefficients describe damped transfer, not an oscillation".into(),
        ));
    }
    Ok(T::c(2.0) * j_ancilla * j_ancilla * coeffs.y1.abs())
}

/// First time `π/(2J_a²|y1|)` at which the excitation sits entirely on R.
pub fn perfect_transfer_time<T: Real>(coeffs: &MasterCoefficients<T>, j_ancilla: T) -> Result<T> {
    let f = oscillation_frequency(coeffs, j_ancilla)?;
    if f.is_zero() {
        return Err(Error::InvalidArgument("zero exchange frequency".into()));
    }
    Ok(T::pi() / f)
}

/// Closed-form trace for a sender starting with one quantum and an empty
/// receiver, with channels `n_S`, `n_R`.
pub fn closed_form_run<T: Real>(config: &HarmonicSystemConfig<T>, t_final: f64, dt_record: f64) -> Result<TransferTrace> {
    config.validate()?;
    let coeffs = asymptotic_coefficients(&CorrelationKernel::from_config(config))?;
    let mut kv = config.to_kv();
    kv.insert("t_final", format_f64(t_final));
    kv.insert("dt_record", format_f64(dt_record));
    let mut out = TransferTrace::new("master", kv, &[trace::N_S, trace::N_R]);
    for t in record_times(t_final, dt_record)? {
        let (s, r) = occupations_closed_form(&coeffs, T::one(), T::zero(), config.j_ancilla, T::c(t));
        out.push(t, &[s.as_f64(), r.as_f64()])?;
    }
    for (key, v) in [("x0", coeffs.x0), ("x1", coeffs.x1), ("y0", coeffs.y0), ("y1", coeffs.y1)] {
        out.diagnostics.insert(key, format_f64(v.as_f64()));
    }
    out.diagnostics.insert("resonant", coeffs.resonant);
    Ok(out)
}

type Mat2<T> = [[Complex<T>; 2]; 2];

fn mat_mul<T: Real>(a: &Mat2<T>, b: &Mat2<T>) -> Mat2<T> {
    let mut out = [[Complex::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn axpy<T: Real>(n: &Mat2<T>, k: &Mat2<T>, h: T) -> Mat2<T> {
    let mut out = *n;
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] += k[i][j] * h;
        }
    }
    out
}

/// Integrates the 2×2 closure for `⟨a_j† a_l⟩` with classical RK4 and
/// returns `(n_S, n_R)` at every point of `t_grid` (nondecreasing, starting
/// at or after 0).
pub fn integrate_master_numerically<T: Real>(
    coeffs: &MasterCoefficients<T>,
    n_s0: T,
    n_r0: T,
    j_ancilla: T,
    t_grid: &[T],
) -> Result<Vec<(T, T)>> {
    let j2 = j_ancilla * j_ancilla;
    let entry = |x: T, y: T| Complex::new(j2 * x, j2 * y);
    // L = J²(X + iY); dN/dt = −(L† N + N L)
    let l: Mat2<T> = [
        [entry(coeffs.x0, coeffs.y0), entry(coeffs.x1, coeffs.y1)],
        [entry(coeffs.x1, coeffs.y1), entry(coeffs.x0, coeffs.y0)],
    ];
    let l_dag: Mat2<T> = [
        [l[0][0].conj(), l[1][0].conj()],
        [l[0][1].conj(), l[1][1].conj()],
    ];
    let rate = l.iter().flatten().map(|z| (z.re * z.re + z.im * z.im).sqrt()).fold(T::zero(), |a, b| a + b);
    let rhs = |n: &Mat2<T>| -> Mat2<T> {
        let a = mat_mul(&l_dag, n);
        let b = mat_mul(n, &l);
        let mut out = [[Complex::zero(); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = -(a[i][j] + b[i][j]);
            }
        }
        out
    };
    let max_step = if rate > T::zero() { T::c(0.01) / rate } else { T::max_value().unwrap() };

    let mut n: Mat2<T> = [
        [Complex::new(n_s0, T::zero()), Complex::zero()],
        [Complex::zero(), Complex::new(n_r0, T::zero())],
    ];
    let mut t = T::zero();
    let mut out = Vec::with_capacity(t_grid.len());
    let half = T::c(0.5);
    let sixth = T::one() / T::c(6.0);
    for &target in t_grid {
        if target < t {
            return Err(Error::InvalidArgument("time grid must be nondecreasing and start at t >= 0".into()));
        }
        let span = target - t;
        if span > T::zero() {
            let steps = (span / max_step).ceil().to_usize().unwrap_or(usize::MAX).max(1);
            let h = span / T::from_count(steps);
            for _ in 0..steps {
                let k1 = rhs(&n);
                let k2 = rhs(&axpy(&n, &k1, h * half));
                let k3 = rhs(&axpy(&n, &k2, h * half));
                let k4 = rhs(&axpy(&n, &k3, h));
                for i in 0..2 {
                    for j in 0..2 {
                        n[i][j] += (k1[i][j] + (k2[i][j] + k3[i][j]) * T::c(2.0) + k4[i][j]) * (h * sixth);
                    }
                }
            }
            t = target;
        }
        let (ns, nr) = (n[0][0].re, n[1][1].re);
        if !(ns.is_finite() && nr.is_finite()) {
            return Err(Error::NoConvergence {
                what: "master equation integration",
                detail: format!("non-finite occupation at t = {}", target),
            });
        }
        out.push((ns, nr));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn kernel(onsite: f64, omega: f64, sep: usize) -> CorrelationKernel<f64> {
        CorrelationKernel {
            separation: sep,
            omega_coupling: 1.0,
            omega_onsite: onsite,
            omega_ancilla: omega,
        }
    }

    /// Closed forms of the lattice Green function on and off the band.
    fn green_closed_form(sep: usize, c: f64) -> f64 {
        let d = sep as f64;
        if c.abs() < 1.0 {
            let k = c.acos();
            -(d * k).sin() / k.sin()
        } else if c >= 1.0 {
            let kappa = c.acosh();
            (-d * kappa).exp() / kappa.sinh()
        } else {
            let kappa = (-c).acosh();
            -(-1f64).powi(sep as i32) * (-d * kappa).exp() / kappa.sinh()
        }
    }

    #[test]
    fn lattice_green_matches_closed_form() {
        for &c in &[1.5, 1.12, 1.0001, 0.9, 0.3, -0.2, -0.97, -1.3] {
            for sep in [0, 1, 4, 9, 20] {
                let got = lattice_green::<f64>(sep, c).unwrap();
                let want = green_closed_form(sep, c);
                assert!(
                    (got - want).abs() < 1e-9 * (1.0 + want.abs()),
                    "c={c} sep={sep}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn off_resonant_reference_values() {
        let c = asymptotic_coefficients(&kernel(0.7, 0.5, 9)).unwrap();
        assert!(!c.resonant);
        assert_eq!(c.x0, 0.0);
        assert_eq!(c.x1, 0.0);
        assert_relative_eq!(c.y1, -0.012_589_9, max_relative = 1e-4);
        assert!(c.y0 < 0.0);
    }

    #[test]
    fn resonant_reference_values() {
        let c = asymptotic_coefficients(&kernel(0.2, 0.5, 9)).unwrap();
        assert!(c.resonant);
        assert_relative_eq!(c.x0, 1.120_91, max_relative = 1e-5);
        assert_relative_eq!(c.x1, -0.586_94, max_relative = 1e-4);
        assert_relative_eq!(c.y1, -0.954_96, max_relative = 1e-4);
        assert!(c.x0 > c.x1.abs());
        // in-band principal value of the on-site Green function vanishes
        assert!(c.y0.abs() < 1e-10);
    }

    #[test]
    fn gapless_chain_coefficients_are_finite() {
        let c = asymptotic_coefficients(&kernel(0.0, 0.5, 9)).unwrap();
        assert!(c.resonant && c.x0.is_finite() && c.y1.is_finite());
    }

    #[test]
    fn band_edges_are_rejected() {
        for w in [0.7, (4.0f64 + 0.49).sqrt()] {
            let err = asymptotic_coefficients(&kernel(0.7, w, 9)).unwrap_err();
            assert!(matches!(err, Error::VanHove { .. }), "{err}");
        }
        assert!(asymptotic_coefficients(&kernel(0.7, 0.7 + 1e-3, 9)).unwrap().resonant);
        assert!(!asymptotic_coefficients(&kernel(0.7, 0.7 - 1e-3, 9)).unwrap().resonant);
    }

    #[test]
    fn closed_form_boundary_and_perfect_transfer() {
        let c = asymptotic_coefficients(&kernel(0.7, 0.5, 9)).unwrap();
        let (s, r) = occupations_closed_form(&c, 1.0, 0.0, 0.05, 0.0);
        assert_eq!((s, r), (1.0, 0.0));
        let t1 = perfect_transfer_time(&c, 0.05).unwrap();
        let (s, r) = occupations_closed_form(&c, 1.0, 0.0, 0.05, t1);
        assert!(s.abs() < 1e-15 && (r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn resonant_decay_with_transient() {
        let c = asymptotic_coefficients(&kernel(0.2, 0.5, 9)).unwrap();
        let samples: Vec<_> = (0..=200)
            .map(|i| occupations_closed_form(&c, 1.0, 0.0, 0.05, 10.0 * i as f64))
            .collect();
        let peak = samples.iter().map(|p| p.1).fold(0.0, f64::max);
        assert!(peak > 0.05 && peak < 0.5, "peak {peak}");
        let last = samples.last().unwrap();
        assert!(last.0 < 0.01 && last.1 < 0.01);
        for w in samples.windows(2) {
            assert!(w[1].0 + w[1].1 <= w[0].0 + w[0].1 + 1e-15);
        }
    }

    #[test]
    fn frequency_errors_on_resonant_input() {
        let c = asymptotic_coefficients(&kernel(0.2, 0.5, 9)).unwrap();
        assert!(oscillation_frequency(&c, 0.05).is_err());
    }

    #[test]
    fn frequency_scales_with_coupling_squared_and_vanishes_far_from_band() {
        let c = asymptotic_coefficients(&kernel(0.7, 0.5, 9)).unwrap();
        let f1 = oscillation_frequency(&c, 0.05).unwrap();
        let f2 = oscillation_frequency(&c, 0.1).unwrap();
        assert_relative_eq!(f2, 4.0 * f1, max_relative = 1e-14);
        let far = asymptotic_coefficients(&kernel(5.0, 0.5, 9)).unwrap();
        let f = oscillation_frequency(&far, 0.05).unwrap();
        assert!(f > 0.0 && f < 1e-15, "{f}");
    }

    #[test]
    fn numerical_integration_matches_closed_form() {
        for (onsite, jt) in [(0.7, 4e4), (0.2, 2000.0), (0.0, 2000.0)] {
            let c = asymptotic_coefficients(&kernel(onsite, 0.5, 9)).unwrap();
            let grid: Vec<f64> = (0..=50).map(|i| jt * i as f64 / 50.0).collect();
            let num = integrate_master_numerically(&c, 1.0, 0.0, 0.05, &grid).unwrap();
            for (t, (s, r)) in grid.iter().zip(num) {
                let (cs, cr) = occupations_closed_form(&c, 1.0, 0.0, 0.05, *t);
                assert!((s - cs).abs() < 1e-8 && (r - cr).abs() < 1e-8, "t={t}");
            }
        }
    }

    #[test]
    fn zero_coefficients_freeze_occupations() {
        let c = MasterCoefficients::<f64>::zero();
        let out = integrate_master_numerically(&c, 0.3, 0.6, 0.05, &[0.0, 10.0, 1e6]).unwrap();
        assert!(out.iter().all(|&(s, r)| s == 0.3 && r == 0.6));
    }

    #[test]
    fn correlation_is_real_at_equal_times_and_clusters() {
        let mut prev = f64::INFINITY;
        for sep in [0, 5, 10, 20] {
            let g = correlation_q(sep, 0.0f64, 1.0, 0.7).unwrap();
            assert!(g.im.abs() < 1e-12);
            assert!(g.re.abs() < prev);
            prev = g.re.abs();
        }
        assert!(correlation_q(0, 0.0f64, 1.0, 0.0).is_err());
    }

    #[test]
    fn correlation_at_equal_sites_matches_green_function() {
        // (1/2π)∫ dk/ω_k = (1/2π) ∫ dk / sqrt(2Ω²(c − cos k)) with c = 1 + Ω₀²/2Ω²
        let g = correlation_q(0, 0.0f64, 1.0, 0.7).unwrap().re;
        let c: f64 = 1.0 + 0.49 / 2.0;
        // complete elliptic form: (1/π)∫₀^π dk/sqrt(c − cos k) = (2/π) K(m)/sqrt(c+1), m = 2/(c+1)
        let m = 2.0 / (c + 1.0);
        let (mut a, mut b) = (1.0f64, (1.0 - m).sqrt());
        for _ in 0..30 {
            let (an, bn) = ((a + b) / 2.0, (a * b).sqrt());
            a = an;
            b = bn;
        }
        let k = PI / (2.0 * a);
        let want = (2.0 / PI) * k / (c + 1.0).sqrt() / 2.0 / 2f64.sqrt();
        assert_relative_eq!(g, want, max_relative = 1e-9);
    }

    proptest! {
        #[test]
        fn regime_dichotomy(onsite in 0.1f64..1.5, frac in 0.05f64..0.95) {
            let top = (4.0 + onsite * onsite).sqrt();
            let below = asymptotic_coefficients(&kernel(onsite, onsite * frac, 7)).unwrap();
            prop_assert!(!below.resonant && below.x0 == 0.0 && below.x1 == 0.0);
            let inside = asymptotic_coefficients(&kernel(onsite, onsite + (top - onsite) * frac, 7)).unwrap();
            prop_assert!(inside.resonant && inside.x0 > 0.0 && inside.x0 > inside.x1.abs());
        }

        #[test]
        fn off_resonant_total_is_conserved(t in 0.0f64..1e6, ns in 0.0f64..1.0, nr in 0.0f64..1.0) {
            let c = asymptotic_coefficients(&kernel(0.7, 0.5, 9)).unwrap();
            let (s, r) = occupations_closed_form(&c, ns, nr, 0.05, t);
            prop_assert!((s + r - ns - nr).abs() < 1e-12_f64);
        }
    }
}
