//! Exact first- and second-moment dynamics of the harmonic ring with its two
//! ancilla oscillators.
//!
//! Phase-space vectors are ordered `x = (q_1..q_M, p_1..p_M)` with the modes in
//! (chain 1..N, S, R) order. For `H = ½ pᵀp + ½ qᵀVq` and `V = U W² Uᵀ` the
//! normal coordinates `q̃ = Uᵀq`, `p̃ = Uᵀp` rotate independently:
//!
//! ```text
//! q̃_k(t) = cos(w_k t) q̃_k + sin(w_k t)/w_k p̃_k
//! p̃_k(t) = −w_k sin(w_k t) q̃_k + cos(w_k t) p̃_k
//! ```
//!
//! Second moments evolve linearly under any quadratic Hamiltonian, so the
//! sender's single-excitation Fock state is propagated exactly even though it
//! is not Gaussian.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::config::format_f64;
use crate::ed::record_times;
use crate::error::{Error, Result};
use crate::model::{build_quadratic_form, HarmonicSystemConfig, QuadraticForm};
use crate::scalar::Real;
use crate::trace::{self, TransferTrace};

/// Numerical floor below which a computed occupation is accepted as zero.
pub const OCCUPATION_FLOOR: f64 = 1e-9;

/// Means and symmetrized second moments about the mean,
/// `σ_ab = ½⟨{x_a, x_b}⟩ − ⟨x_a⟩⟨x_b⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentState<T: Real> {
    pub mean: DVector<T>,
    pub moments: DMatrix<T>,
}

impl<T: Real> SecondMomentState<T> {
    /// Number of modes M.
    pub fn modes(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn q2(&self, j: usize) -> T {
        self.moments[(j, j)]
    }

    pub fn p2(&self, j: usize) -> T {
        let m = self.modes();
        self.moments[(m + j, m + j)]
    }

    /// Whether `σ + (i/2)J` is positive semidefinite to `tol`, tested on the
    /// real embedding `[[σ, −J/2], [J/2, σ]]`.
    pub fn satisfies_uncertainty(&self, tol: T) -> bool {
        let n = self.moments.nrows();
        let m = n / 2;
        let half = T::c(0.5);
        let mut big = DMatrix::zeros(2 * n, 2 * n);
        big.view_mut((0, 0), (n, n)).copy_from(&self.moments);
        big.view_mut((n, n), (n, n)).copy_from(&self.moments);
        for k in 0..m {
            // J = [[0, I], [−I, 0]]
            big[(k, n + m + k)] = -half;
            big[(m + k, n + k)] = half;
            big[(n + k, m + k)] = half;
            big[(n + m + k, k)] = -half;
        }
        big.symmetric_eigenvalues().min() >= -tol
    }
}

/// Ground-state moments of the chain block: `⟨qqᵀ⟩ = V_c^{−1/2}/2`,
/// `⟨ppᵀ⟩ = V_c^{1/2}/2`.
pub fn chain_ground_moments<T: Real>(form: &QuadraticForm<T>) -> Result<SecondMomentState<T>> {
    let n = form.n_sites;
    let vc = form.chain_block();
    let eig = vc.symmetric_eigen();
    let min = eig.eigenvalues.min();
    let scale = eig.eigenvalues.amax().max(T::one());
    if min <= T::c(1e-12) * scale {
        return Err(Error::GaplessChain(min.max(T::zero()).sqrt().as_f64()));
    }
    let w: Vec<T> = eig.eigenvalues.iter().map(|&l| l.sqrt()).collect();
    let u = &eig.eigenvectors;
    let half = T::c(0.5);
    let mut moments = DMatrix::zeros(2 * n, 2 * n);
    let qq = u * DMatrix::from_diagonal(&DVector::from_iterator(n, w.iter().map(|&x| half / x))) * u.transpose();
    let pp = u * DMatrix::from_diagonal(&DVector::from_iterator(n, w.iter().map(|&x| half * x))) * u.transpose();
    moments.view_mut((0, 0), (n, n)).copy_from(&symmetrize(qq));
    moments.view_mut((n, n), (n, n)).copy_from(&symmetrize(pp));
    Ok(SecondMomentState {
        mean: DVector::zeros(2 * n),
        moments,
    })
}

fn symmetrize<T: Real>(m: DMatrix<T>) -> DMatrix<T> {
    (&m + m.transpose()) * T::c(0.5)
}

/// Chain in its ground state, sender in the first Fock state, receiver in
/// its vacuum; no cross-correlations, zero means.
pub fn initial_transfer_state<T: Real>(config: &HarmonicSystemConfig<T>) -> Result<SecondMomentState<T>> {
    let form = build_quadratic_form(config)?;
    transfer_state_for(&form, config.omega_ancilla)
}

fn transfer_state_for<T: Real>(form: &QuadraticForm<T>, w: T) -> Result<SecondMomentState<T>> {
    if !(w > T::zero()) {
        return Err(Error::InvalidArgument("ancilla frequency must be positive".into()));
    }
    let chain = chain_ground_moments(form)?;
    let n = form.n_sites;
    let m = n + 2;
    let mut moments = DMatrix::zeros(2 * m, 2 * m);
    moments
        .view_mut((0, 0), (n, n))
        .copy_from(&chain.moments.view((0, 0), (n, n)));
    moments
        .view_mut((m, m), (n, n))
        .copy_from(&chain.moments.view((n, n), (n, n)));
    let (s, r) = (form.sender(), form.receiver());
    let half = T::c(0.5);
    let three_half = T::c(1.5);
    moments[(s, s)] = three_half / w;
    moments[(m + s, m + s)] = three_half * w;
    moments[(r, r)] = half / w;
    moments[(m + r, m + r)] = half * w;
    Ok(SecondMomentState {
        mean: DVector::zeros(2 * m),
        moments,
    })
}

/// `n_j = (ω_j ⟨q_j²⟩ + ⟨p_j²⟩/ω_j − 1)/2` for mode `j`. With `include_means`
/// the coherent part `(ω_j q̄_j² + p̄_j²/ω_j)/2` is added.
pub fn occupation<T: Real>(state: &SecondMomentState<T>, j: usize, freq: T, include_means: bool) -> Result<T> {
    if !(freq > T::zero()) {
        return Err(Error::InvalidArgument(format!("mode frequency {freq} is not positive")));
    }
    if j >= state.modes() {
        return Err(Error::InvalidArgument(format!("mode {j} out of range")));
    }
    let m = state.modes();
    let mut q2 = state.q2(j);
    let mut p2 = state.p2(j);
    if include_means {
        q2 += state.mean[j] * state.mean[j];
        p2 += state.mean[m + j] * state.mean[m + j];
    }
    Ok(occupation_from(q2, p2, freq))
}

fn occupation_from<T: Real>(q2: T, p2: T, freq: T) -> T {
    (freq * q2 + p2 / freq - T::one()) / T::c(2.0)
}

/// Eigendecomposition `V = U diag(w²) Uᵀ` shared by every time sample.
#[derive(Debug, Clone)]
pub struct NormalModes<T: Real> {
    pub u: DMatrix<T>,
    pub freqs: DVector<T>,
}

impl<T: Real> NormalModes<T> {
    /// Fails for a form with a negative direction; zero modes are kept and
    /// propagate freely.
    pub fn new(form: &QuadraticForm<T>) -> Result<Self> {
        let eig = form.v.clone().symmetric_eigen();
        let scale = eig.eigenvalues.amax().max(T::one());
        let min = eig.eigenvalues.min();
        if min < -T::c(1e-12) * scale {
            return Err(Error::UnstableHamiltonian {
                min_eigenvalue: min.as_f64(),
            });
        }
        Ok(Self {
            freqs: eig.eigenvalues.map(|l| l.max(T::zero()).sqrt()),
            u: eig.eigenvectors,
        })
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Per-mode `(cos wt, sin(wt)/w, −w sin wt)`.
    fn rotation(&self, t: T) -> Vec<(T, T, T)> {
        self.freqs
            .iter()
            .map(|&w| {
                let (s, c) = (w * t).sin_cos();
                let s_over_w = if w > T::zero() { s / w } else { t };
                (c, s_over_w, -w * s)
            })
            .collect()
    }

    /// Site-basis phase-space vector expressed in normal coordinates.
    fn to_modes(&self, x: &DVector<T>) -> DVector<T> {
        let m = self.len();
        let mut out = DVector::zeros(2 * m);
        out.rows_mut(0, m).copy_from(&(self.u.transpose() * x.rows(0, m)));
        out.rows_mut(m, m).copy_from(&(self.u.transpose() * x.rows(m, m)));
        out
    }

    fn from_modes(&self, x: &DVector<T>) -> DVector<T> {
        let m = self.len();
        let mut out = DVector::zeros(2 * m);
        out.rows_mut(0, m).copy_from(&(&self.u * x.rows(0, m)));
        out.rows_mut(m, m).copy_from(&(&self.u * x.rows(m, m)));
        out
    }

    /// `Ũᵀ σ Ũ` with `Ũ = diag(U, U)`.
    fn moments_to_modes(&self, s: &DMatrix<T>) -> DMatrix<T> {
        let m = self.len();
        let ut = self.u.transpose();
        let mut out = DMatrix::zeros(2 * m, 2 * m);
        for (bi, bj) in [(0, 0), (0, m), (m, 0), (m, m)] {
            let block = s.view((bi, bj), (m, m));
            out.view_mut((bi, bj), (m, m)).copy_from(&(&ut * block * &self.u));
        }
        out
    }

    fn moments_from_modes(&self, s: &DMatrix<T>) -> DMatrix<T> {
        let m = self.len();
        let ut = self.u.transpose();
        let mut out = DMatrix::zeros(2 * m, 2 * m);
        for (bi, bj) in [(0, 0), (0, m), (m, 0), (m, m)] {
            let block = s.view((bi, bj), (m, m));
            out.view_mut((bi, bj), (m, m)).copy_from(&(&self.u * block * &ut));
        }
        out
    }
}

/// The linear map `x(0) ↦ x(t)` of Hamilton's equations.
#[derive(Debug, Clone)]
pub struct SymplecticPropagator<T: Real> {
    pub t: T,
    pub s: DMatrix<T>,
}

impl<T: Real> SymplecticPropagator<T> {
    pub fn new(modes: &NormalModes<T>, t: T) -> Self {
        let m = modes.len();
        let rot = modes.rotation(t);
        let mut r = DMatrix::zeros(2 * m, 2 * m);
        for (k, &(c, sw, mws)) in rot.iter().enumerate() {
            r[(k, k)] = c;
            r[(k, m + k)] = sw;
            r[(m + k, k)] = mws;
            r[(m + k, m + k)] = c;
        }
        let mut big_u = DMatrix::zeros(2 * m, 2 * m);
        big_u.view_mut((0, 0), (m, m)).copy_from(&modes.u);
        big_u.view_mut((m, m), (m, m)).copy_from(&modes.u);
        let s = &big_u * r * big_u.transpose();
        Self { t, s }
    }

    /// `max |SᵀJS − J|`.
    pub fn symplectic_defect(&self) -> T {
        let n = self.s.nrows();
        let m = n / 2;
        let mut j = DMatrix::zeros(n, n);
        for k in 0..m {
            j[(k, m + k)] = T::one();
            j[(m + k, k)] = -T::one();
        }
        (self.s.transpose() * &j * &self.s - j).amax()
    }
}

/// State after time `t` under the form, `(S x̄, S σ Sᵀ)`.
pub fn propagate<T: Real>(state: &SecondMomentState<T>, form: &QuadraticForm<T>, t: T) -> Result<SecondMomentState<T>> {
    let modes = NormalModes::new(form)?;
    propagate_with(state, &modes, t)
}

pub fn propagate_with<T: Real>(state: &SecondMomentState<T>, modes: &NormalModes<T>, t: T) -> Result<SecondMomentState<T>> {
    if state.modes() != modes.len() {
        return Err(Error::InvalidArgument("state and form sizes differ".into()));
    }
    let sigma = modes.moments_to_modes(&state.moments);
    let mean = modes.to_modes(&state.mean);
    let evolved = rotate_moments(&sigma, &modes.rotation(t));
    let m = modes.len();
    let rot = modes.rotation(t);
    let mut mean_t = DVector::zeros(2 * m);
    for (k, &(c, sw, mws)) in rot.iter().enumerate() {
        mean_t[k] = c * mean[k] + sw * mean[m + k];
        mean_t[m + k] = mws * mean[k] + c * mean[m + k];
    }
    Ok(SecondMomentState {
        mean: modes.from_modes(&mean_t),
        moments: symmetrize(modes.moments_from_modes(&evolved)),
    })
}

/// `R σ Rᵀ` for the block-diagonal mode rotation R.
fn rotate_moments<T: Real>(sigma: &DMatrix<T>, rot: &[(T, T, T)]) -> DMatrix<T> {
    let m = rot.len();
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    for b in 0..m {
        let (cb, sb, wb) = rot[b];
        for a in 0..m {
            let (ca, sa, wa) = rot[a];
            let qq = sigma[(a, b)];
            let qp = sigma[(a, m + b)];
            let pq = sigma[(m + a, b)];
            let pp = sigma[(m + a, m + b)];
            // rows: q_a' = ca q_a + sa p_a, p_a' = wa q_a + ca p_a
            let q_qb = ca * qq + sa * pq;
            let q_pb = ca * qp + sa * pp;
            let p_qb = wa * qq + ca * pq;
            let p_pb = wa * qp + ca * pp;
            out[(a, b)] = q_qb * cb + q_pb * sb;
            out[(a, m + b)] = q_qb * wb + q_pb * cb;
            out[(m + a, b)] = p_qb * cb + p_pb * sb;
            out[(m + a, m + b)] = p_qb * wb + p_pb * cb;
        }
    }
    out
}

/// Precomputed quantities for sampling the transfer observables at many times.
pub struct TransferSampler<T: Real> {
    modes: NormalModes<T>,
    sigma0: DMatrix<T>,
    mean0: DVector<T>,
    /// Chain normal-mode number operator in normal coordinates of the full
    /// system: `n_chain = ½ Tr(K σ̃) − N/2`.
    chain_kernel: DMatrix<T>,
    n_sites: usize,
    omega: T,
    sender: usize,
    receiver: usize,
}

/// One sample of the transfer observables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferSample<T> {
    pub n_sender: T,
    pub n_receiver: T,
    pub n_chain: T,
    pub energy: T,
}

impl<T: Real> TransferSampler<T> {
    pub fn new(config: &HarmonicSystemConfig<T>) -> Result<Self> {
        let form = build_quadratic_form(config)?;
        let state = transfer_state_for(&form, config.omega_ancilla)?;
        Self::with_state(&form, &state, config.omega_ancilla)
    }

    pub fn with_state(form: &QuadraticForm<T>, state: &SecondMomentState<T>, omega: T) -> Result<Self> {
        let modes = NormalModes::new(form)?;
        let n = form.n_sites;
        let m = n + 2;
        // chain number operator: ½ (qᵀ V_c^{1/2} q + pᵀ V_c^{−1/2} p) − N/2
        let eig = form.chain_block().symmetric_eigen();
        if eig.eigenvalues.min() <= T::zero() {
            return Err(Error::GaplessChain(0.0));
        }
        let uc = &eig.eigenvectors;
        let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.sqrt()));
        let isqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| T::one() / l.sqrt()));
        let kq = uc * sqrt * uc.transpose();
        let kp = uc * isqrt * uc.transpose();
        let mut k = DMatrix::zeros(2 * m, 2 * m);
        k.view_mut((0, 0), (n, n)).copy_from(&kq);
        k.view_mut((m, m), (n, n)).copy_from(&kp);
        let chain_kernel = modes.moments_to_modes(&k);
        Ok(Self {
            sigma0: modes.moments_to_modes(&state.moments),
            mean0: modes.to_modes(&state.mean),
            modes,
            chain_kernel,
            n_sites: n,
            omega,
            sender: form.sender(),
            receiver: form.receiver(),
        })
    }

    pub fn modes(&self) -> &NormalModes<T> {
        &self.modes
    }

    /// `⟨x_j(t)²⟩` for site-basis coordinate row `row` of the Heisenberg map.
    fn site_second_moment(&self, site: usize, momentum: bool, rot: &[(T, T, T)], mean_t: &DVector<T>) -> T {
        let m = self.modes.len();
        // x_site(t) = Σ_k U_{site,k} x̃_k(t), expanded on x̃(0)
        let mut row = DVector::zeros(2 * m);
        for (k, &(c, sw, mws)) in rot.iter().enumerate() {
            let u = self.modes.u[(site, k)];
            if momentum {
                row[k] = u * mws;
                row[m + k] = u * c;
            } else {
                row[k] = u * c;
                row[m + k] = u * sw;
            }
        }
        let fluct = row.dot(&(&self.sigma0 * &row));
        let idx = if momentum { m + site } else { site };
        let mean = self.modes.from_modes(mean_t)[idx];
        fluct + mean * mean
    }

    fn rotated_mean(&self, rot: &[(T, T, T)]) -> DVector<T> {
        let m = self.modes.len();
        let mut mean_t = DVector::zeros(2 * m);
        for (k, &(c, sw, mws)) in rot.iter().enumerate() {
            mean_t[k] = c * self.mean0[k] + sw * self.mean0[m + k];
            mean_t[m + k] = mws * self.mean0[k] + c * self.mean0[m + k];
        }
        mean_t
    }

    fn ancillas_at(&self, rot: &[(T, T, T)], mean_t: &DVector<T>) -> (T, T) {
        let occ = |site: usize| {
            let q2 = self.site_second_moment(site, false, rot, mean_t);
            let p2 = self.site_second_moment(site, true, rot, mean_t);
            occupation_from(q2, p2, self.omega)
        };
        (occ(self.sender), occ(self.receiver))
    }

    /// `(n_S, n_R)` at time `t`, at O(M²) cost.
    pub fn ancilla_occupations(&self, t: T) -> (T, T) {
        let rot = self.modes.rotation(t);
        let mean_t = self.rotated_mean(&rot);
        self.ancillas_at(&rot, &mean_t)
    }

    pub fn sample(&self, t: T) -> TransferSample<T> {
        let m = self.modes.len();
        let rot = self.modes.rotation(t);
        let mean_t = self.rotated_mean(&rot);
        let (n_sender, n_receiver) = self.ancillas_at(&rot, &mean_t);
        let sigma_t = rotate_moments(&self.sigma0, &rot);
        let half = T::c(0.5);
        let mut tr = T::zero();
        for a in 0..2 * m {
            tr += self.chain_kernel.row(a).dot(&sigma_t.column(a).transpose());
        }
        let mean_kernel = mean_t.dot(&(&self.chain_kernel * &mean_t));
        let n_chain = half * (tr + mean_kernel) - half * T::from_count(self.n_sites);
        let mut energy = T::zero();
        for (k, &w) in self.modes.freqs.iter().enumerate() {
            let q2 = sigma_t[(k, k)] + mean_t[k] * mean_t[k];
            let p2 = sigma_t[(m + k, m + k)] + mean_t[m + k] * mean_t[m + k];
            energy += half * (p2 + w * w * q2);
        }
        TransferSample {
            n_sender,
            n_receiver,
            n_chain,
            energy,
        }
    }
}

/// Occupations of S, R and the chain, and ⟨H⟩, every `dt_record` up to
/// `t_final`. Samples are evaluated in parallel.
pub fn transfer_run<T: Real>(config: &HarmonicSystemConfig<T>, t_final: f64, dt_record: f64) -> Result<TransferTrace> {
    let times = record_times(t_final, dt_record)?;
    transfer_run_at(config, &times)
}

/// As [`transfer_run`] on an explicit, strictly increasing time grid.
pub fn transfer_run_at<T: Real>(config: &HarmonicSystemConfig<T>, times: &[f64]) -> Result<TransferTrace> {
    let sampler = TransferSampler::new(config)?;
    let samples: Vec<TransferSample<T>> = times.par_iter().map(|&t| sampler.sample(T::c(t))).collect();
    let mut kv = config.to_kv();
    if let (Some(first), Some(last)) = (times.first(), times.last()) {
        kv.insert("t_start", format_f64(*first));
        kv.insert("t_final", format_f64(*last));
        kv.insert("samples", times.len());
    }
    let mut trace = TransferTrace::new(
        "gaussian",
        kv,
        &[trace::N_S, trace::N_R, trace::N_CHAIN, trace::ENERGY],
    );
    let mut max_drift = 0.0f64;
    let e0 = samples.first().map(|s| s.energy.as_f64());
    for (&t, s) in times.iter().zip(&samples) {
        let e = s.energy.as_f64();
        if let Some(e0) = e0 {
            max_drift = max_drift.max(((e - e0) / e0).abs());
        }
        trace.push(
            t,
            &[s.n_sender.as_f64(), s.n_receiver.as_f64(), s.n_chain.as_f64(), e],
        )?;
    }
    trace.diagnostics.insert("energy_drift", format_f64(max_drift));
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::master::correlation_q;
    use crate::model::Boundary;
    use approx::assert_relative_eq;

    fn cfg(n: usize, onsite: f64, omega: f64, ja: f64) -> HarmonicSystemConfig<f64> {
        HarmonicSystemConfig {
            n_sites: n,
            omega_coupling: 1.0,
            omega_onsite: onsite,
            omega_ancilla: omega,
            j_ancilla: ja,
            m_sender: n / 2 - 4,
            m_receiver: n / 2 + 5,
            boundary: Boundary::Periodic,
        }
    }

    #[test]
    fn single_mode_ground_state() {
        let form = QuadraticForm {
            n_sites: 1,
            v: DMatrix::from_row_slice(3, 3, &[0.49, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
        };
        let g = chain_ground_moments(&form).unwrap();
        assert_relative_eq!(g.q2(0), 1.0 / 1.4, epsilon = 1e-14);
        assert_relative_eq!(g.p2(0), 0.35, epsilon = 1e-14);
    }

    #[test]
    fn chain_modes_are_empty_in_ground_state() {
        let c = HarmonicSystemConfig { m_sender: 1, m_receiver: 3, ..cfg(12, 0.7, 0.5, 0.0) };
        let form = build_quadratic_form(&c).unwrap();
        let g = chain_ground_moments(&form).unwrap();
        let eig = form.chain_block().symmetric_eigen();
        for k in 0..12 {
            let u = eig.eigenvectors.column(k);
            let w = eig.eigenvalues[k].sqrt();
            let q2 = u.dot(&(g.moments.view((0, 0), (12, 12)) * u));
            let p2 = u.dot(&(g.moments.view((12, 12), (12, 12)) * u));
            assert!(occupation_from(q2, p2, w).abs() < 1e-10);
        }
        assert!(g.satisfies_uncertainty(1e-10));
    }

    #[test]
    fn ground_moments_match_correlation_integral() {
        let c = cfg(100, 0.7, 0.5, 0.0);
        let form = build_quadratic_form(&c).unwrap();
        let g = chain_ground_moments(&form).unwrap();
        for d in 0..=10 {
            let want = correlation_q(d, 0.0f64, 1.0, 0.7).unwrap().re;
            assert!((g.moments[(20, 20 + d)] - want).abs() < 1e-6, "d={d}");
        }
    }

    #[test]
    fn gapless_chain_is_rejected() {
        let c = cfg(20, 0.0, 0.5, 0.0);
        assert!(matches!(initial_transfer_state(&c), Err(Error::GaplessChain(_))));
        let coupled = cfg(20, 0.0, 0.5, 0.05);
        assert!(matches!(
            initial_transfer_state(&coupled),
            Err(Error::UnstableHamiltonian { .. })
        ));
    }

    #[test]
    fn initial_occupations_and_energy() {
        let c = cfg(40, 0.7, 0.5, 0.05);
        let s = initial_transfer_state(&c).unwrap();
        assert_relative_eq!(occupation(&s, 40, 0.5, false).unwrap(), 1.0, epsilon = 1e-14);
        assert!(occupation(&s, 41, 0.5, false).unwrap().abs() < 1e-14);
        let sampler = TransferSampler::new(&c).unwrap();
        let s0 = sampler.sample(0.0);
        assert!(s0.n_chain.abs() < 1e-10);
        let form = build_quadratic_form(&c).unwrap();
        let e_chain: f64 = form.chain_block().symmetric_eigenvalues().iter().map(|l| 0.5 * l.sqrt()).sum();
        // ⟨H_I⟩ vanishes: no ancilla–chain correlations initially
        assert_relative_eq!(s0.energy, e_chain + 0.5 * 2.0, max_relative = 1e-12);
    }

    #[test]
    fn occupation_definitions() {
        let w = 0.8f64;
        let vac = SecondMomentState {
            mean: DVector::from_vec(vec![0.3, -0.2]),
            moments: DMatrix::from_row_slice(2, 2, &[0.5 / w, 0.0, 0.0, 0.5 * w]),
        };
        assert!(occupation(&vac, 0, w, false).unwrap().abs() < 1e-15);
        let alpha2 = (w * 0.09 + 0.04 / w) / 2.0;
        assert_relative_eq!(occupation(&vac, 0, w, true).unwrap(), alpha2, epsilon = 1e-15);
        assert!(occupation(&vac, 0, 0.0, false).is_err());
    }

    #[test]
    fn propagation_is_symplectic_and_starts_at_identity() {
        let c = cfg(30, 0.7, 0.5, 0.05);
        let form = build_quadratic_form(&c).unwrap();
        let modes = NormalModes::new(&form).unwrap();
        let p0 = SymplecticPropagator::new(&modes, 0.0);
        assert!((p0.s.clone() - DMatrix::identity(64, 64)).amax() < 1e-12);
        let p = SymplecticPropagator::new(&modes, 1e5);
        assert!(p.symplectic_defect() < 1e-10);
        let s = initial_transfer_state(&c).unwrap();
        let direct = propagate(&s, &form, 13.7).unwrap();
        let st = SymplecticPropagator::new(&modes, 13.7).s;
        let via = &st * &s.moments * st.transpose();
        assert!((direct.moments - via).amax() < 1e-12);
    }

    #[test]
    fn decoupled_sender_keeps_its_quantum() {
        let c = cfg(30, 0.7, 0.5, 0.0);
        let tr = transfer_run(&c, 500.0, 50.0).unwrap();
        for (s, r) in tr.require(trace::N_S).unwrap().iter().zip(tr.require(trace::N_R).unwrap()) {
            assert!((s - 1.0).abs() < 1e-10 && r.abs() < 1e-10);
        }
    }

    #[test]
    fn energy_is_conserved() {
        let c = cfg(60, 0.2, 0.5, 0.05);
        let tr = transfer_run(&c, 2000.0, 100.0).unwrap();
        let e = tr.require(trace::ENERGY).unwrap();
        for x in e {
            assert!(((x - e[0]) / e[0]).abs() < 1e-8);
        }
        let total: Vec<f64> = (0..tr.len())
            .map(|i| {
                tr.require(trace::N_S).unwrap()[i] + tr.require(trace::N_R).unwrap()[i]
                    + tr.require(trace::N_CHAIN).unwrap()[i]
            })
            .collect();
        // excitation number is nearly conserved at weak coupling
        assert!(total.iter().all(|x| (x - 1.0).abs() < 0.05), "{total:?}");
    }

    #[test]
    fn sampler_matches_full_propagation() {
        let c = cfg(24, 0.5, 0.9, 0.1);
        let form = build_quadratic_form(&c).unwrap();
        let s0 = initial_transfer_state(&c).unwrap();
        let sampler = TransferSampler::new(&c).unwrap();
        for t in [0.0, 3.0, 41.0] {
            let st = propagate(&s0, &form, t).unwrap();
            let smp = sampler.sample(t);
            assert_relative_eq!(smp.n_sender, occupation(&st, 24, 0.9, true).unwrap(), epsilon = 1e-11);
            assert_relative_eq!(smp.n_receiver, occupation(&st, 25, 0.9, true).unwrap(), epsilon = 1e-11);
            assert_eq!(sampler.ancilla_occupations(t), (smp.n_sender, smp.n_receiver));
        }
    }
}
