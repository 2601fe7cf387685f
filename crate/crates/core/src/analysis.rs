//! Post-processing of transfer traces: entanglement measures, the exchange
//! fit with its regime classification, and the gap-probe sweep.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::storage::Owned;
use nalgebra::{DMatrix, DVector, Dyn, Vector6, U6};
use num_traits::Zero;

use crate::config::format_f64;
use crate::ed::{self, KrylovPropagator};
use crate::error::{Error, Result};
use crate::gaussian::{self, TransferSampler};
use crate::master::{self, CorrelationKernel};
use crate::model::{dispersion, HarmonicSystemConfig, SpinSystemConfig};
use crate::mps::{self, GroundStateSettings, TrotterPlan, Truncation};
use crate::scalar::{Complex, Real};
use crate::trace::{self, TransferTrace};

/// A fit is damped when its decay rate exceeds this fraction of its
/// exchange frequency.
pub const DAMPING_RATIO: f64 = 1e-2;

const MIN_PERIODS: f64 = 2.0;
const MIN_DECAY_TIMES: f64 = 3.0;
const MIN_SAMPLES: usize = 16;
const SPECTRAL_OVERSAMPLING: usize = 8;
const MAX_SPECTRAL_BINS: usize = 1 << 15;
const FREQUENCY_CANDIDATES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Oscillatory,
    Damped,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Oscillatory => "oscillatory",
            Regime::Damped => "damped",
        }
    }

    /// Applies the classifier to a fitted decay rate and frequency.
    pub fn classify(decay_rate: f64, frequency: f64) -> Self {
        if decay_rate > DAMPING_RATIO * frequency.abs() {
            Regime::Damped
        } else {
            Regime::Oscillatory
        }
    }
}

/// `log₂(p + 1)`, the negativity carried by a transfer of probability `p`.
pub fn log_negativity_approx<T: Real>(p: T) -> Result<T> {
    if !(p >= T::zero() && p <= T::one()) {
        return Err(Error::InvalidArgument(format!(
            "transfer probability {} outside [0, 1]",
            p.as_f64()
        )));
    }
    Ok((p + T::one()).log2())
}

/// Eigenvalues of a Hermitian 4×4 matrix through its real 8×8 embedding.
fn hermitian_eigenvalues<T: Real>(m: &[[Complex<T>; 4]; 4]) -> Vec<T> {
    let real = DMatrix::<T>::from_fn(8, 8, |i, j| {
        let z = m[i % 4][j % 4];
        match (i < 4, j < 4) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let mut ev: Vec<T> = real.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    // every eigenvalue appears twice in the embedding
    ev.into_iter().step_by(2).collect()
}

fn density_tolerance<T: Real>() -> T {
    T::c(1e-10).max(T::machine_eps() * T::c(100.0))
}

fn validate_density<T: Real>(rho: &[[Complex<T>; 4]; 4]) -> Result<()> {
    let tol = density_tolerance::<T>();
    let mut trace = T::zero();
    for i in 0..4 {
        trace += rho[i][i].re;
        for j in 0..4 {
            let d = rho[i][j] - rho[j][i].conj();
            if (d.re * d.re + d.im * d.im).sqrt() > tol {
                return Err(Error::InvalidArgument("density matrix is not Hermitian".into()));
            }
        }
    }
    if (trace - T::one()).abs() > tol {
        return Err(Error::InvalidArgument(format!(
            "density matrix has trace {}",
            trace.as_f64()
        )));
    }
    let min = hermitian_eigenvalues(rho)[0];
    if min < -tol {
        return Err(Error::InvalidArgument(format!(
            "density matrix has negative eigenvalue {:e}",
            min.as_f64()
        )));
    }
    Ok(())
}

/// Partial transpose on the second qubit of a two-qubit operator with index
/// `2·a + b`.
pub fn partial_transpose<T: Real>(rho: &[[Complex<T>; 4]; 4]) -> [[Complex<T>; 4]; 4] {
    let mut out = [[Complex::zero(); 4]; 4];
    for a in 0..2 {
        for b in 0..2 {
            for ap in 0..2 {
                for bp in 0..2 {
                    out[2 * a + b][2 * ap + bp] = rho[2 * a + bp][2 * ap + b];
                }
            }
        }
    }
    out
}

/// `log₂ ‖ρ^{T_B}‖₁` of a two-qubit density matrix.
pub fn log_negativity_exact<T: Real>(rho: &[[Complex<T>; 4]; 4]) -> Result<T> {
    validate_density(rho)?;
    let norm = hermitian_eigenvalues(&partial_transpose(rho))
        .into_iter()
        .fold(T::zero(), |acc, x| acc + x.abs());
    Ok(norm.log2().max(T::zero()))
}

/// `½ ‖a − b‖₁` for two Hermitian 4×4 matrices.
pub fn trace_distance<T: Real>(a: &[[Complex<T>; 4]; 4], b: &[[Complex<T>; 4]; 4]) -> T {
    let mut d = [[Complex::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            d[i][j] = a[i][j] - b[i][j];
        }
    }
    hermitian_eigenvalues(&d)
        .into_iter()
        .fold(T::zero(), |acc, x| acc + x.abs())
        / T::c(2.0)
}

/// Reduced state of the control spin C and the receiver for
/// `(|↑_C⟩|φ₁⟩ + |↓_C⟩|φ₀⟩)/√2`, index `2·c + r`.
fn control_receiver_density<T: Real>(phi1: &[Complex<T>], phi0: &[Complex<T>], n_spins: usize) -> [[Complex<T>; 4]; 4] {
    let r_bit = 1usize << (n_spins - 1);
    let branches = [phi0, phi1];
    let half = T::c(0.5);
    let mut rho = [[Complex::zero(); 4]; 4];
    for a in 0..4 {
        for b in a..4 {
            let (ca, ra) = (a >> 1, a & 1);
            let (cb, rb) = (b >> 1, b & 1);
            let mut acc = Complex::zero();
            for rest in (0..1usize << n_spins).filter(|i| i & r_bit == 0) {
                let x = branches[ca][rest | (ra * r_bit)];
                let y = branches[cb][rest | (rb * r_bit)];
                acc += x * y.conj();
            }
            rho[a][b] = acc * half;
            rho[b][a] = (acc * half).conj();
        }
    }
    rho
}

/// Entanglement transfer run on the exact backend.
///
/// A control spin C, coupled to nothing, starts in the Bell superposition
/// `(|↑_C↑_S⟩ + |↓_C↓_S⟩)/√2` with R down and the chain in its ground state.
/// The trace carries the ancilla probabilities of the `↑_S` branch, the exact
/// negativity `E_N` of the C–R state and `E_N_approx = log₂(P_du + 1)`.
pub fn entanglement_run<T: Real>(config: &SpinSystemConfig<T>, t_final: f64, dt_record: f64) -> Result<TransferTrace> {
    let ground = ed::ground_state_chain(config)?.state;
    let mut phi1 = ground.with_ancillas(true, false)?;
    let mut phi0 = ground.with_ancillas(false, false)?;
    let h = ed::full_hamiltonian(config)?;
    let times = ed::record_times(t_final, dt_record)?;
    let mut kv = config.to_kv();
    kv.insert("t_final", format_f64(t_final));
    kv.insert("dt_record", format_f64(dt_record));
    let mut channels: Vec<String> = [trace::P_DD, trace::P_UD, trace::P_DU, trace::P_UU]
        .iter()
        .map(|s| s.to_string())
        .collect();
    channels.push(trace::E_N.into());
    channels.push(trace::E_N_APPROX.into());
    let mut out = TransferTrace::new("ed", kv, &channels);
    let mut prop1 = KrylovPropagator::new(&h);
    let mut prop0 = KrylovPropagator::new(&h);
    let mut t_prev = 0.0;
    let mut max_gap: f64 = 0.0;
    for &t in &times {
        let dt = T::c(t - t_prev);
        prop1.advance(&mut phi1.amplitudes, dt)?;
        prop0.advance(&mut phi0.amplitudes, dt)?;
        t_prev = t;
        let p = phi1.ancilla_density();
        let rho = control_receiver_density(&phi1.amplitudes, &phi0.amplitudes, phi1.n_spins);
        let e_exact = log_negativity_exact(&rho)?.as_f64();
        let p_du = p[1][1].re.as_f64();
        let e_approx = log_negativity_approx(p_du.clamp(0.0, 1.0))?;
        max_gap = max_gap.max((e_exact - e_approx).abs());
        out.push(
            t,
            &[p[0][0].re, p[2][2].re, p[1][1].re, p[3][3].re]
                .map(|x| x.as_f64())
                .into_iter()
                .chain([e_exact, e_approx])
                .collect::<Vec<_>>(),
        )?;
    }
    out.diagnostics.insert("max_negativity_deviation", format_f64(max_gap));
    out.diagnostics
        .insert("krylov_error_bound", format_f64(prop1.stats.error_bound.max(prop0.stats.error_bound)));
    Ok(out)
}

/// Parameters of the exchange template
///
/// ```text
/// n_S,R(t) = e^{−γt} [a₊ cosh(σt) ± a₋ cos(ft + δ)],  0 ≤ σ ≤ γ.
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExchangeFit {
    pub a_plus: f64,
    pub a_minus: f64,
    pub frequency: f64,
    pub phase: f64,
    pub decay_rate: f64,
    pub cosh_rate: f64,
    /// Root-mean-square residual over both channels.
    pub residual: f64,
}

impl ExchangeFit {
    pub fn evaluate(&self, t: f64) -> (f64, f64) {
        let g = self.decay_rate;
        let s = self.cosh_rate;
        let sum = self.a_plus * 0.5 * ((-(g - s) * t).exp() + (-(g + s) * t).exp());
        let diff = self.a_minus * (-g * t).exp() * (self.frequency * t + self.phase).cos();
        (sum + diff, sum - diff)
    }

    pub fn regime(&self) -> Regime {
        Regime::classify(self.decay_rate, self.frequency)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferMetrics {
    /// Peak of n_R or P(↓S↑R).
    pub max_received: f64,
    pub t_peak: f64,
    pub fitted_frequency: f64,
    pub fitted_decay_rate: f64,
    pub fitted_cosh_rate: f64,
    pub regime: Regime,
    pub fit_residual: f64,
}

/// Sender and receiver series of a trace: `n_S`, `n_R` for oscillators and
/// `P_ud`, `P_du` for spins.
pub fn transfer_channels(trace: &TransferTrace) -> Result<(&[f64], &[f64])> {
    if let (Some(s), Some(r)) = (trace.channel(trace::N_S), trace.channel(trace::N_R)) {
        return Ok((s, r));
    }
    Ok((trace.require(trace::P_UD)?, trace.require(trace::P_DU)?))
}

pub fn fit_transfer(trace: &TransferTrace) -> Result<TransferMetrics> {
    let (sender, receiver) = transfer_channels(trace)?;
    let fit = fit_exchange(trace.times(), sender, receiver)?;
    let (k, &max_received) = receiver
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::TraceTooShort("empty trace".into()))?;
    Ok(TransferMetrics {
        max_received,
        t_peak: trace.times()[k],
        fitted_frequency: fit.frequency,
        fitted_decay_rate: fit.decay_rate,
        fitted_cosh_rate: fit.cosh_rate,
        regime: fit.regime(),
        fit_residual: fit.residual,
    })
}

struct ExchangeProblem<'a> {
    times: &'a [f64],
    sender: &'a [f64],
    receiver: &'a [f64],
    /// (a₊, a₋, f, δ, g, c) with γ = g² and σ = γ c²/(1 + c²).
    p: Vector6<f64>,
}

impl ExchangeProblem<'_> {
    fn rates(p: &Vector6<f64>) -> (f64, f64) {
        let gamma = p[4] * p[4];
        let c2 = p[5] * p[5];
        (gamma, gamma * c2 / (1.0 + c2))
    }

    fn to_fit(&self) -> ExchangeFit {
        let (gamma, sigma) = Self::rates(&self.p);
        let (mut a_minus, mut frequency, mut phase) = (self.p[1], self.p[2], self.p[3]);
        if frequency < 0.0 {
            frequency = -frequency;
            phase = -phase;
        }
        if a_minus < 0.0 {
            a_minus = -a_minus;
            phase += std::f64::consts::PI;
        }
        let residual = self
            .residuals()
            .map(|r| (r.norm_squared() / r.len() as f64).sqrt())
            .unwrap_or(f64::INFINITY);
        ExchangeFit {
            a_plus: self.p[0],
            a_minus,
            frequency,
            phase: phase.rem_euclid(std::f64::consts::TAU),
            decay_rate: gamma,
            cosh_rate: sigma,
            residual,
        }
    }
}

impl LeastSquaresProblem<f64, Dyn, U6> for ExchangeProblem<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, U6>;
    type ParameterStorage = Owned<f64, U6>;

    fn set_params(&mut self, x: &Vector6<f64>) {
        self.p = *x;
    }

    fn params(&self) -> Vector6<f64> {
        self.p
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let (gamma, sigma) = Self::rates(&self.p);
        let [ap, am, f, d] = [self.p[0], self.p[1], self.p[2], self.p[3]];
        let n = self.times.len();
        let mut r = DVector::zeros(2 * n);
        for (k, &t) in self.times.iter().enumerate() {
            let sum = ap * 0.5 * ((-(gamma - sigma) * t).exp() + (-(gamma + sigma) * t).exp());
            let diff = am * (-gamma * t).exp() * (f * t + d).cos();
            r[2 * k] = sum + diff - self.sender[k];
            r[2 * k + 1] = sum - diff - self.receiver[k];
        }
        r.iter().all(|x| x.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<nalgebra::OMatrix<f64, Dyn, U6>> {
        let (gamma, sigma) = Self::rates(&self.p);
        let [ap, am, f, d, g, c] = [self.p[0], self.p[1], self.p[2], self.p[3], self.p[4], self.p[5]];
        let c2 = c * c;
        let s_frac = c2 / (1.0 + c2);
        let ds_dc = 2.0 * c / ((1.0 + c2) * (1.0 + c2));
        let n = self.times.len();
        let mut jac = nalgebra::OMatrix::<f64, Dyn, U6>::zeros(2 * n);
        for (k, &t) in self.times.iter().enumerate() {
            let slow = (-(gamma - sigma) * t).exp();
            let fast = (-(gamma + sigma) * t).exp();
            let ch = 0.5 * (slow + fast);
            let sh = 0.5 * (slow - fast);
            let env = (-gamma * t).exp();
            let (sin, cos) = (f * t + d).sin_cos();
            for (row, sign) in [(2 * k, 1.0), (2 * k + 1, -1.0)] {
                let d_gamma = -t * (ap * ch + sign * am * env * cos);
                let d_sigma = ap * t * sh;
                jac[(row, 0)] = ch;
                jac[(row, 1)] = sign * env * cos;
                jac[(row, 2)] = -sign * am * env * t * sin;
                jac[(row, 3)] = -sign * am * env * sin;
                jac[(row, 4)] = 2.0 * g * (d_gamma + s_frac * d_sigma);
                jac[(row, 5)] = d_sigma * g * g * ds_dc;
            }
        }
        jac.iter().all(|x| x.is_finite()).then_some(jac)
    }
}

/// Peaks of the windowed power spectrum of `x` on a uniform grid,
/// strongest first, with their complex amplitude.
fn spectral_peaks(times: &[f64], x: &[f64]) -> Vec<(f64, Complex<f64>)> {
    let span = times[times.len() - 1] - times[0];
    let dt_mean = span / (times.len() - 1) as f64;
    let d_omega = std::f64::consts::TAU / (span * SPECTRAL_OVERSAMPLING as f64);
    let bins = ((std::f64::consts::PI / dt_mean / d_omega) as usize).clamp(4, MAX_SPECTRAL_BINS);
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let spectrum: Vec<Complex<f64>> = (0..bins)
        .map(|j| {
            let w = j as f64 * d_omega;
            times.iter().zip(x).fold(Complex::zero(), |acc, (&t, &v)| {
                acc + Complex::from_polar(v - mean, -w * (t - times[0]))
            })
        })
        .collect();
    let power: Vec<f64> = spectrum.iter().map(|z| z.norm_sqr()).collect();
    let mut peaks: Vec<usize> = (1..bins - 1)
        .filter(|&j| power[j] >= power[j - 1] && power[j] > power[j + 1])
        .collect();
    peaks.sort_by(|&a, &b| power[b].total_cmp(&power[a]));
    peaks
        .into_iter()
        .take(FREQUENCY_CANDIDATES)
        .map(|j| {
            // parabolic refinement of the peak position
            let (l, c, r) = (power[j - 1], power[j], power[j + 1]);
            let denom = l - 2.0 * c + r;
            let shift = if denom.abs() > 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
            ((j as f64 + shift.clamp(-0.5, 0.5)) * d_omega, spectrum[j])
        })
        .collect()
}

/// Slope of the least-squares line through `(x, y)`.
fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Decay rate from the log-envelope of the sender–receiver difference, or
/// of their sum when the difference has too few extrema.
fn envelope_decay(times: &[f64], diff: &[f64], sum: &[f64]) -> f64 {
    let floor = 1e-12;
    let extrema: Vec<(f64, f64)> = (1..diff.len() - 1)
        .filter(|&k| diff[k].abs() >= diff[k - 1].abs() && diff[k].abs() > diff[k + 1].abs() && diff[k].abs() > floor)
        .map(|k| (times[k], diff[k].abs().ln()))
        .collect();
    let rate = slope(&extrema).or_else(|| {
        let pts: Vec<(f64, f64)> = times
            .iter()
            .zip(sum)
            .filter(|(_, &s)| s > floor)
            .map(|(&t, &s)| (t, s.ln()))
            .collect();
        slope(&pts)
    });
    rate.map_or(0.0, |s| (-s).max(0.0))
}

/// Rate of a fast initial drop of the sender–receiver sum onto a plateau,
/// taken from the time the excess over the late-time mean falls by `1/e`.
fn plateau_drop(times: &[f64], sum: &[f64]) -> Option<f64> {
    let late = &sum[sum.len() / 2..];
    let plateau = late.iter().sum::<f64>() / late.len() as f64;
    let excess = sum[0] - plateau;
    if excess <= 0.1 * sum[0].abs() {
        return None;
    }
    let k = sum.iter().position(|&s| s - plateau < excess / std::f64::consts::E)?;
    let t = times[k] - times[0];
    (t > 0.0).then(|| 0.5 / t)
}

/// Least-squares fit of the exchange template to a sender/receiver pair.
pub fn fit_exchange(times: &[f64], sender: &[f64], receiver: &[f64]) -> Result<ExchangeFit> {
    let n = times.len();
    if sender.len() != n || receiver.len() != n {
        return Err(Error::InvalidArgument("channel lengths differ from the time grid".into()));
    }
    if n < MIN_SAMPLES {
        return Err(Error::TraceTooShort(format!("{n} samples, need at least {MIN_SAMPLES}")));
    }
    let span = times[n - 1] - times[0];
    let diff: Vec<f64> = sender.iter().zip(receiver).map(|(s, r)| s - r).collect();
    let sum: Vec<f64> = sender.iter().zip(receiver).map(|(s, r)| s + r).collect();
    let gamma0 = envelope_decay(times, &diff, &sum);
    let mut starts: Vec<(f64, f64, f64)> = spectral_peaks(times, &diff)
        .into_iter()
        .map(|(w, z)| {
            let amp = 2.0 * z.norm() / n as f64;
            (w, amp.max(diff[0].abs() / 2.0), z.arg())
        })
        .collect();
    let crossings = diff.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    if crossings > 0 {
        let w = std::f64::consts::PI * crossings as f64 / span;
        starts.push((w, diff[0].abs() / 2.0, if diff[0] < 0.0 { std::f64::consts::PI } else { 0.0 }));
    }
    if starts.is_empty() {
        starts.push((std::f64::consts::PI / span, diff[0].abs() / 2.0, 0.0));
    }

    let mut rates = vec![(gamma0, 0.3), (gamma0 * 0.25, 0.3)];
    if let Some(drop) = plateau_drop(times, &sum) {
        rates.push((drop, 3.0));
    }

    let lm = LevenbergMarquardt::new().with_patience(400);
    let mut best: Option<ExchangeFit> = None;
    for (w, amp, phase) in starts {
        for &(gamma, c) in &rates {
            let problem = ExchangeProblem {
                times,
                sender,
                receiver,
                p: Vector6::new(sum[0] / 2.0, amp, w, phase, gamma.sqrt(), c),
            };
            let (solved, report) = lm.minimize(problem);
            if !report.termination.was_successful() {
                log::debug!("exchange fit from f = {w}: {:?}", report.termination);
                continue;
            }
            let fit = solved.to_fit();
            if fit.residual.is_finite() && best.is_none_or(|b| fit.residual < b.residual) {
                best = Some(fit);
            }
        }
    }
    let fit = best.ok_or_else(|| Error::FitFailed("no starting point converged".into()))?;
    let periods = span * fit.frequency / std::f64::consts::TAU;
    let decays = span * fit.decay_rate;
    if periods < MIN_PERIODS && decays < MIN_DECAY_TIMES {
        return Err(Error::TraceTooShort(format!(
            "trace spans {periods:.2} periods and {decays:.2} decay times; need {MIN_PERIODS} periods or {MIN_DECAY_TIMES} decay times"
        )));
    }
    Ok(fit)
}

/// Gaussian dynamics set against the closed-form master solution.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterComparison {
    /// Gaussian channels plus `n_S_master` and `n_R_master`.
    pub trace: TransferTrace,
    /// Largest `|n_gauss − n_master| / max(n_gauss, n_master)` over samples
    /// where the larger of the two exceeds the threshold.
    pub max_relative_deviation: f64,
    pub t_worst: f64,
    pub compared: usize,
}

/// Default comparison window `min(10⁵, t_rev)`.
pub fn comparison_window(config: &HarmonicSystemConfig<f64>) -> f64 {
    config.revival_time().min(1e5)
}

pub fn compare_with_master(
    config: &HarmonicSystemConfig<f64>,
    t_final: f64,
    dt_record: f64,
    threshold: f64,
) -> Result<MasterComparison> {
    let master = master::closed_form_run(config, t_final, dt_record)?;
    let mut trace = gaussian::transfer_run_at(config, master.times())?;
    let mut worst = (0.0, 0.0);
    let mut compared = 0;
    for (gauss, exact) in [(trace::N_S, trace::N_S), (trace::N_R, trace::N_R)] {
        let a = trace.require(gauss)?;
        let b = master.require(exact)?;
        for ((&t, &x), &y) in trace.times().iter().zip(a).zip(b) {
            let big = x.max(y);
            if big > threshold {
                compared += 1;
                let dev = (x - y).abs() / big;
                if dev > worst.0 {
                    worst = (dev, t);
                }
            }
        }
    }
    for (name, src) in [("n_S_master", trace::N_S), ("n_R_master", trace::N_R)] {
        trace.add_channel(name, master.require(src)?.to_vec())?;
    }
    trace.diagnostics.merge(&master.diagnostics);
    trace.diagnostics.insert("max_relative_deviation", format_f64(worst.0));
    Ok(MasterComparison {
        trace,
        max_relative_deviation: worst.0,
        t_worst: worst.1,
        compared,
    })
}

/// Bracket around the boundary between the two transfer regimes.
#[derive(Debug, Clone, PartialEq)]
pub struct GapEstimate {
    pub threshold_parameter: f64,
    pub bracket: (f64, f64),
    pub samples: Vec<(f64, Regime)>,
}

/// Spin dynamics used by a spin gap probe.
#[derive(Debug, Clone, PartialEq)]
pub enum SpinBackend {
    Ed,
    Mps { truncation: Truncation, dt: Option<f64> },
}

/// A system whose ancilla energy is swept: `b_ancilla` for spins,
/// `omega_ancilla` for oscillators.
#[derive(Debug, Clone, PartialEq)]
pub enum GapProbe {
    Spin {
        config: SpinSystemConfig<f64>,
        backend: SpinBackend,
        t_final: f64,
        dt_record: f64,
    },
    /// Gaussian dynamics over a window sized from the master-equation rates
    /// and capped at `t_max` and the ring's revival time.
    Harmonic {
        config: HarmonicSystemConfig<f64>,
        samples: usize,
        t_max: f64,
    },
}

impl GapProbe {
    pub fn parameter_name(&self) -> &'static str {
        match self {
            GapProbe::Spin { .. } => "b_ancilla",
            GapProbe::Harmonic { .. } => "omega_ancilla",
        }
    }

    /// Transfer trace with the swept parameter set to `value`.
    pub fn run(&self, value: f64) -> Result<TransferTrace> {
        match self {
            GapProbe::Spin {
                config,
                backend,
                t_final,
                dt_record,
            } => {
                let cfg = SpinSystemConfig {
                    b_ancilla: value,
                    ..config.clone()
                };
                match backend {
                    SpinBackend::Ed => ed::evolve_exact(&ed::initial_transfer_state(&cfg)?, &cfg, *t_final, *dt_record),
                    SpinBackend::Mps { truncation, dt } => {
                        let plan = TrotterPlan::for_system(&cfg, *dt, *truncation)?;
                        let psi = mps::initial_transfer_state(&cfg, &plan.layout, &GroundStateSettings::default())?;
                        mps::tebd_run(&psi, &cfg, &plan, *t_final, *dt_record)
                    }
                }
            }
            GapProbe::Harmonic { config, samples, t_max } => {
                let cfg = HarmonicSystemConfig {
                    omega_ancilla: value,
                    ..config.clone()
                };
                harmonic_probe_run(&cfg, *samples, *t_max)
            }
        }
    }

    pub fn classify(&self, value: f64) -> Result<Regime> {
        Ok(fit_transfer(&self.run(value)?)?.regime)
    }
}

/// Largest group velocity `max_k |dω_k/dk|` of the chain band.
fn max_group_velocity(config: &HarmonicSystemConfig<f64>) -> f64 {
    let w2 = config.omega_coupling * config.omega_coupling;
    (1..2048)
        .map(|j| {
            let k = std::f64::consts::PI * j as f64 / 2048.0;
            w2 * k.sin() / dispersion(k, config.omega_coupling, config.omega_onsite)
        })
        .fold(0.0, f64::max)
}

/// Earliest time at which a disturbance leaving one ancilla can reach the
/// other one the long way round the ring.
pub fn harmonic_return_time(config: &HarmonicSystemConfig<f64>) -> f64 {
    (config.n_sites - config.separation()) as f64 / max_group_velocity(config)
}

/// Observation window for the harmonic probe: eight exchange periods or four
/// decay times from the asymptotic rates, whichever is longer. Resonant
/// windows end before the ring's return time.
pub fn harmonic_probe_window(config: &HarmonicSystemConfig<f64>, t_max: f64) -> f64 {
    let j2 = 2.0 * config.j_ancilla * config.j_ancilla;
    let cap = 0.95 * harmonic_return_time(config);
    match master::asymptotic_coefficients(&CorrelationKernel::from_config(config)) {
        Ok(c) => {
            let f = j2 * c.y1.abs();
            let g = j2 * c.x0;
            let by_period = if f > 0.0 { 8.0 * std::f64::consts::TAU / f } else { 0.0 };
            let by_decay = if g > 0.0 { 4.0 / g } else { 0.0 };
            let wanted = by_period.max(by_decay);
            let wanted = if wanted > 0.0 { wanted.min(t_max) } else { t_max };
            if c.resonant {
                wanted.min(cap)
            } else {
                wanted
            }
        }
        Err(_) => cap.min(t_max),
    }
}

fn harmonic_probe_run(config: &HarmonicSystemConfig<f64>, samples: usize, t_max: f64) -> Result<TransferTrace> {
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let t_final = harmonic_probe_window(config, t_max);
    let sampler = TransferSampler::new(config)?;
    let mut kv = config.to_kv();
    kv.insert("t_final", format_f64(t_final));
    kv.insert("samples", samples);
    let mut out = TransferTrace::new("gaussian", kv, &[trace::N_S, trace::N_R]);
    for k in 0..samples {
        let t = t_final * k as f64 / (samples - 1) as f64;
        let (s, r) = sampler.ancilla_occupations(t);
        out.push(t, &[s, r])?;
    }
    Ok(out)
}

/// Sweeps `probe` over `[low, high]`, narrowing the bracket around the
/// regime change until it is no wider than `resolution`.
pub fn gap_probe_sweep(probe: &GapProbe, low: f64, high: f64, resolution: f64) -> Result<GapEstimate> {
    bisect_regime(|v| probe.classify(v), low, high, resolution)
}

/// Interval search on a regime classifier. Each round classifies the two
/// interior trisection points concurrently and keeps the lowest subinterval
/// whose ends disagree.
pub fn bisect_regime<F>(classify: F, low: f64, high: f64, resolution: f64) -> Result<GapEstimate>
where
    F: Fn(f64) -> Result<Regime> + Sync,
{
    if !(low < high) || !low.is_finite() || !high.is_finite() {
        return Err(Error::InvalidArgument(format!("bad sweep range [{low}, {high}]")));
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let (r_lo, r_hi) = rayon::join(|| classify(low), || classify(high));
    let (mut r_lo, mut r_hi) = (r_lo?, r_hi?);
    let mut samples = vec![(low, r_lo), (high, r_hi)];
    if r_lo == r_hi {
        return Err(Error::NoRegimeChange { low, high });
    }
    let (mut a, mut b) = (low, high);
    while b - a > resolution {
        let x1 = a + (b - a) / 3.0;
        let x2 = a + 2.0 * (b - a) / 3.0;
        let (r1, r2) = rayon::join(|| classify(x1), || classify(x2));
        let (r1, r2) = (r1?, r2?);
        log::info!("sweep: {x1} {} / {x2} {}", r1.as_str(), r2.as_str());
        samples.push((x1, r1));
        samples.push((x2, r2));
        if r_lo != r1 {
            (b, r_hi) = (x1, r1);
        } else if r1 != r2 {
            (a, b, r_lo, r_hi) = (x1, x2, r1, r2);
        } else {
            (a, r_lo) = (x2, r2);
        }
    }
    debug_assert_ne!(r_lo, r_hi);
    samples.sort_by(|p, q| p.0.total_cmp(&q.0));
    Ok(GapEstimate {
        threshold_parameter: 0.5 * (a + b),
        bracket: (a, b),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Boundary;
    use approx::assert_relative_eq;

    fn bell() -> [[Complex<f64>; 4]; 4] {
        let mut rho = [[Complex::zero(); 4]; 4];
        for i in [0, 3] {
            for j in [0, 3] {
                rho[i][j] = Complex::new(0.5, 0.0);
            }
        }
        rho
    }

    #[test]
    fn approximate_negativity_values() {
        assert_eq!(log_negativity_approx(0.0).unwrap(), 0.0);
        assert_eq!(log_negativity_approx(1.0).unwrap(), 1.0);
        assert_relative_eq!(log_negativity_approx(0.5).unwrap(), 0.584962500721156, epsilon = 1e-12);
        assert!(log_negativity_approx(1.1).is_err());
        assert!(log_negativity_approx(-0.1).is_err());
        assert!(log_negativity_approx(f64::NAN).is_err());
    }

    #[test]
    fn exact_negativity_of_reference_states() {
        assert_relative_eq!(log_negativity_exact(&bell()).unwrap(), 1.0, epsilon = 1e-12);
        let mut product = [[Complex::zero(); 4]; 4];
        product[1][1] = Complex::new(1.0, 0.0);
        assert_eq!(log_negativity_exact(&product).unwrap(), 0.0);
        let mut mixed = [[Complex::zero(); 4]; 4];
        for (i, row) in mixed.iter_mut().enumerate() {
            row[i] = Complex::new(0.25, 0.0);
        }
        assert_eq!(log_negativity_exact(&mixed).unwrap(), 0.0);
    }

    #[test]
    fn invalid_density_matrices_are_rejected() {
        let mut rho = bell();
        rho[0][0] = Complex::new(0.6, 0.0);
        assert!(log_negativity_exact(&rho).is_err());
        let mut rho = bell();
        rho[0][3] = Complex::new(0.5, 0.1);
        assert!(log_negativity_exact(&rho).is_err());
        let mut rho = [[Complex::zero(); 4]; 4];
        rho[0][0] = Complex::new(1.5, 0.0);
        rho[1][1] = Complex::new(-0.5, 0.0);
        assert!(log_negativity_exact(&rho).is_err());
    }

    #[test]
    fn trace_distance_of_orthogonal_states_is_one() {
        let mut a = [[Complex::zero(); 4]; 4];
        let mut b = a;
        a[0][0] = Complex::new(1.0, 0.0);
        b[3][3] = Complex::new(1.0, 0.0);
        assert_relative_eq!(trace_distance(&a, &b), 1.0, epsilon = 1e-14);
        assert!(trace_distance(&bell(), &bell()) < 1e-15);
    }

    fn synthetic(fit: &ExchangeFit, t_final: f64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let times: Vec<f64> = (0..n).map(|k| t_final * k as f64 / (n - 1) as f64).collect();
        let (s, r) = times.iter().map(|&t| fit.evaluate(t)).unzip();
        (times, s, r)
    }

    #[test]
    fn recovers_off_resonant_exchange() {
        let truth = ExchangeFit {
            a_plus: 0.5,
            a_minus: 0.5,
            frequency: 0.0062,
            phase: 0.0,
            decay_rate: 0.0,
            cosh_rate: 0.0,
            residual: 0.0,
        };
        let (t, s, r) = synthetic(&truth, 4000.0, 801);
        let fit = fit_exchange(&t, &s, &r).unwrap();
        assert_relative_eq!(fit.frequency, truth.frequency, max_relative = 1e-6);
        assert!(fit.decay_rate < 1e-10);
        assert_eq!(fit.regime(), Regime::Oscillatory);
    }

    #[test]
    fn recovers_damped_exchange() {
        let truth = ExchangeFit {
            a_plus: 0.5,
            a_minus: 0.5,
            frequency: 0.004,
            phase: 0.0,
            decay_rate: 0.01,
            cosh_rate: 0.004,
            residual: 0.0,
        };
        let (t, s, r) = synthetic(&truth, 600.0, 601);
        let fit = fit_exchange(&t, &s, &r).unwrap();
        assert_relative_eq!(fit.decay_rate, truth.decay_rate, max_relative = 1e-6);
        assert_relative_eq!(fit.cosh_rate, truth.cosh_rate, max_relative = 1e-6);
        assert_relative_eq!(fit.frequency, truth.frequency, max_relative = 1e-6);
        assert_eq!(fit.regime(), Regime::Damped);
    }

    #[test]
    fn short_traces_are_rejected() {
        let truth = ExchangeFit {
            a_plus: 0.5,
            a_minus: 0.5,
            frequency: 0.01,
            phase: 0.0,
            decay_rate: 0.0,
            cosh_rate: 0.0,
            residual: 0.0,
        };
        let (t, s, r) = synthetic(&truth, 600.0, 301);
        assert!(matches!(fit_exchange(&t, &s, &r), Err(Error::TraceTooShort(_))));
        assert!(matches!(fit_exchange(&t[..5], &s[..5], &r[..5]), Err(Error::TraceTooShort(_))));
    }

    #[test]
    fn bisection_brackets_a_step() {
        let est = bisect_regime(
            |x| Ok(if x < 0.37 { Regime::Oscillatory } else { Regime::Damped }),
            0.0,
            1.0,
            0.01,
        )
        .unwrap();
        assert!(est.bracket.1 - est.bracket.0 <= 0.01);
        assert!(est.bracket.0 < 0.37 && 0.37 <= est.bracket.1);
        assert!((est.threshold_parameter - 0.37).abs() <= 0.01);
        let err = bisect_regime(|_| Ok(Regime::Damped), 0.0, 1.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::NoRegimeChange { .. }));
    }

    #[test]
    fn entanglement_protocol_tracks_the_approximation() {
        let config = SpinSystemConfig {
            n_sites: 6,
            b_field: 1.0,
            j_x: 0.3,
            j_y: 0.0,
            j_z: 0.0,
            b_ancilla: 0.5,
            j_ancilla: 0.05,
            m_sender: 3,
            m_receiver: 4,
            boundary: Boundary::Open,
            allow_off_centre: true,
        };
        let tr = entanglement_run(&config, 400.0, 20.0).unwrap();
        let exact = tr.require(trace::E_N).unwrap();
        let approx = tr.require(trace::E_N_APPROX).unwrap();
        assert!(exact[0].abs() < 1e-10);
        for (e, a) in exact.iter().zip(approx) {
            assert!((e - a).abs() < 0.05, "{e} vs {a}");
        }
    }
}
