//! Exact diagonalization of the spin chain plus ancillas.
//!
//! Basis convention: bit `i` of a basis index is spin `i` in the
//! (chain 1..N, S, R) ordering, with 1 meaning up (σ^z = +1). The chain-only
//! Hilbert space uses bits 0..N−1; the full system adds S as bit N and R as
//! bit N+1.

use nalgebra::{DMatrix, DVector};
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::format_f64;
use crate::error::{Error, Result};
use crate::model::{build_spin_terms, Pauli, SpinSystemConfig, SpinTerms};
use crate::scalar::{Complex, Real};
use crate::trace::{self, TransferTrace};

/// Largest number of spins held as a dense state vector.
pub const MAX_SPINS: usize = 14;

const DENSE_LIMIT: usize = 512;
const LANCZOS_TOL: f64 = 1e-11;
const KRYLOV_TOL: f64 = 1e-10;
const KRYLOV_MAX_DIM: usize = 40;
const LANCZOS_SEED: u64 = 0x5eed_0f_ed;

/// Real symmetric Hamiltonian in compressed sparse row form.
#[derive(Debug, Clone)]
pub struct SparseHamiltonian<T> {
    n_spins: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<T>,
}

/// Action of a Pauli on basis bit `b`: new bit and phase.
fn pauli_on<T: Real>(p: Pauli, up: bool) -> (bool, Complex<T>) {
    match p {
        Pauli::X => (!up, Complex::new(T::one(), T::zero())),
        // σy|↑⟩ = i|↓⟩, σy|↓⟩ = −i|↑⟩
        Pauli::Y => (!up, Complex::new(T::zero(), if up { T::one() } else { -T::one() })),
        Pauli::Z => (up, Complex::new(if up { T::one() } else { -T::one() }, T::zero())),
    }
}

impl<T: Real> SparseHamiltonian<T> {
    /// Assembles the terms on `n_spins` spins. Every site index in `terms`
    /// must be below `n_spins`.
    pub fn from_terms(terms: &SpinTerms<T>, n_spins: usize) -> Result<Self> {
        if n_spins > MAX_SPINS {
            return Err(Error::TooLarge {
                spins: n_spins,
                limit: MAX_SPINS,
            });
        }
        let n = terms.n_sites;
        let index = |s: crate::model::Site| -> Result<usize> {
            let i = s.index(n);
            if i >= n_spins {
                return Err(Error::InvalidArgument(format!(
                    "term on {s:?} outside a {n_spins}-spin register"
                )));
            }
            Ok(i)
        };
        let fields: Vec<(usize, Pauli, T)> = terms
            .fields
            .iter()
            .map(|f| Ok((index(f.site)?, f.pauli, f.coeff)))
            .collect::<Result<_>>()?;
        let bonds: Vec<(usize, usize, Pauli, Pauli, T)> = terms
            .bonds
            .iter()
            .map(|b| Ok((index(b.sites.0)?, index(b.sites.1)?, b.paulis.0, b.paulis.1, b.coeff)))
            .collect::<Result<_>>()?;

        let dim = 1usize << n_spins;
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut row: Vec<(usize, T)> = Vec::new();
        row_ptr.push(0);
        for state in 0..dim {
            row.clear();
            let bit = |i: usize| state >> i & 1 == 1;
            let mut diag = T::zero();
            let mut push = |target: usize, amp: Complex<T>| -> Result<()> {
                if amp.im != T::zero() {
                    return Err(Error::InvalidArgument(
                        "Hamiltonian with complex matrix elements is not supported".into(),
                    ));
                }
                if target == state {
                    diag += amp.re;
                } else {
                    row.push((target, amp.re));
                }
                Ok(())
            };
            for &(i, p, c) in &fields {
                let (nb, ph) = pauli_on::<T>(p, bit(i));
                let target = if nb == bit(i) { state } else { state ^ (1 << i) };
                push(target, ph * c)?;
            }
            for &(i, j, pi, pj, c) in &bonds {
                let (bi, phi) = pauli_on::<T>(pi, bit(i));
                let (bj, phj) = pauli_on::<T>(pj, bit(j));
                let mut target = state;
                if bi != bit(i) {
                    target ^= 1 << i;
                }
                if bj != bit(j) {
                    target ^= 1 << j;
                }
                push(target, phi * phj * c)?;
            }
            // `matrix[target][state]` is the amplitude; H is symmetric, so
            // storing it as row `state` is the same operator.
            row.sort_by_key(|e| e.0);
            if diag != T::zero() {
                row.push((state, diag));
            }
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for &(c, v) in row.iter() {
                if last == Some(c) {
                    *vals.last_mut().expect("entry exists") += v;
                } else {
                    cols.push(c as u32);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n_spins,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn apply_real(&self, x: &[T], y: &mut [T]) {
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            *out = acc;
        }
    }

    pub fn apply(&self, x: &[Complex<T>], y: &mut [Complex<T>]) {
        for (r, out) in y.iter_mut().enumerate() {
            let (mut re, mut im) = (T::zero(), T::zero());
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.vals[k];
                let z = x[self.cols[k] as usize];
                re += v * z.re;
                im += v * z.im;
            }
            *out = Complex::new(re, im);
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for r in 0..d {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.cols[k] as usize)] += self.vals[k];
            }
        }
        m
    }

    /// Largest absolute row sum, an upper bound on the spectral radius.
    pub fn norm_bound(&self) -> T {
        (0..self.dim())
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .fold(T::zero(), |a, k| a + self.vals[k].abs())
            })
            .fold(T::zero(), |a, b| a.max(b))
    }
}

/// Hamiltonian of the chain alone on N spins.
pub fn chain_hamiltonian<T: Real>(config: &SpinSystemConfig<T>) -> Result<SparseHamiltonian<T>> {
    let terms = build_spin_terms(config)?.chain_only();
    SparseHamiltonian::from_terms(&terms, config.n_sites)
}

/// Hamiltonian of chain plus ancillas on N + 2 spins.
pub fn full_hamiltonian<T: Real>(config: &SpinSystemConfig<T>) -> Result<SparseHamiltonian<T>> {
    let terms = build_spin_terms(config)?;
    SparseHamiltonian::from_terms(&terms, config.n_sites + 2)
}

/// State vector over `n_spins` spins in the crate's bit convention.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseState<T> {
    pub n_spins: usize,
    pub amplitudes: Vec<Complex<T>>,
}

impl<T: Real> DenseState<T> {
    /// Product state with the given basis index.
    pub fn basis(n_spins: usize, index: usize) -> Result<Self> {
        if n_spins > MAX_SPINS {
            return Err(Error::TooLarge {
                spins: n_spins,
                limit: MAX_SPINS,
            });
        }
        let mut amplitudes = vec![Complex::zero(); 1 << n_spins];
        amplitudes[index] = Complex::new(T::one(), T::zero());
        Ok(Self { n_spins, amplitudes })
    }

    pub fn from_real(n_spins: usize, v: &DVector<T>) -> Self {
        Self {
            n_spins,
            amplitudes: v.iter().map(|&x| Complex::new(x, T::zero())).collect(),
        }
    }

    pub fn norm(&self) -> T {
        norm(&self.amplitudes)
    }

    pub fn inner(&self, other: &Self) -> Complex<T> {
        dot(&self.amplitudes, &other.amplitudes)
    }

    /// `self ⊗ |s⟩_S ⊗ |r⟩_R` with `true` meaning up.
    pub fn with_ancillas(&self, sender_up: bool, receiver_up: bool) -> Result<Self> {
        let n = self.n_spins;
        if n + 2 > MAX_SPINS {
            return Err(Error::TooLarge {
                spins: n + 2,
                limit: MAX_SPINS,
            });
        }
        let offset = (usize::from(sender_up) << n) | (usize::from(receiver_up) << (n + 1));
        let mut amplitudes = vec![Complex::zero(); 1 << (n + 2)];
        for (i, a) in self.amplitudes.iter().enumerate() {
            amplitudes[i | offset] = *a;
        }
        Ok(Self {
            n_spins: n + 2,
            amplitudes,
        })
    }

    /// Reduced density matrix of the last two spins (S, R), basis index
    /// `2·s + r`.
    pub fn ancilla_density(&self) -> [[Complex<T>; 4]; 4] {
        let n = self.n_spins - 2;
        let block = 1usize << n;
        let mut rho = [[Complex::zero(); 4]; 4];
        for a in 0..4 {
            for b in a..4 {
                // basis index 2s + r ↦ bits (S = bit n, R = bit n+1)
                let off = |k: usize| ((k >> 1) << n) | ((k & 1) << (n + 1));
                let (oa, ob) = (off(a), off(b));
                let mut acc = Complex::zero();
                for c in 0..block {
                    acc += self.amplitudes[c | oa] * self.amplitudes[c | ob].conj();
                }
                rho[a][b] = acc;
                rho[b][a] = acc.conj();
            }
        }
        rho
    }
}

fn dot<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter()
        .zip(b)
        .fold(Complex::zero(), |acc, (x, y)| acc + x.conj() * y)
}

fn norm<T: Real>(a: &[Complex<T>]) -> T {
    a.iter()
        .fold(T::zero(), |acc, z| acc + z.re * z.re + z.im * z.im)
        .sqrt()
}

/// Ground state of the chain with its degeneracy.
#[derive(Debug, Clone)]
pub struct GroundState<T> {
    pub state: DenseState<T>,
    pub energy: T,
    /// Number of levels within the degeneracy tolerance of the ground energy.
    pub degeneracy: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSummary<T> {
    pub ground_energy: T,
    /// `lowest_levels[1] − lowest_levels[0]`.
    pub gap: T,
    pub lowest_levels: Vec<T>,
}

fn degeneracy_tol<T: Real>(e: T) -> T {
    T::c(1e-8) * e.abs().max(T::one())
}

/// Smallest `count` eigenpairs, ascending. Small problems are solved densely;
/// larger ones by Lanczos with full reorthogonalization, finding one pair at a
/// time and locking it out of later Krylov spaces.
pub fn lowest_eigenpairs<T: Real>(
    h: &SparseHamiltonian<T>,
    count: usize,
) -> Result<(Vec<T>, Vec<DVector<T>>)> {
    let dim = h.dim();
    let count = count.min(dim);
    if dim <= DENSE_LIMIT {
        let eig = h.to_dense().symmetric_eigen();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let vals = order[..count].iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs = order[..count]
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect();
        return Ok((vals, vecs));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(LANCZOS_SEED);
    let mut vals = Vec::with_capacity(count);
    let mut vecs: Vec<DVector<T>> = Vec::with_capacity(count);
    for _ in 0..count {
        let start = DVector::from_fn(dim, |_, _| T::c(rng.random::<f64>() - 0.5));
        let (e, v) = lanczos_lowest(h, &vecs, start)?;
        vals.push(e);
        vecs.push(v);
    }
    // locking finds levels in nondecreasing order up to round-off
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
    Ok((
        order.iter().map(|&i| vals[i]).collect(),
        order.iter().map(|&i| vecs[i].clone()).collect(),
    ))
}

fn project_out<T: Real>(v: &mut DVector<T>, basis: &[DVector<T>]) {
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(v);
            v.axpy(-c, b, T::one());
        }
    }
}

fn lanczos_lowest<T: Real>(
    h: &SparseHamiltonian<T>,
    locked: &[DVector<T>],
    mut start: DVector<T>,
) -> Result<(T, DVector<T>)> {
    let dim = h.dim();
    let max_krylov = (dim - locked.len()).min(300);
    let tol = T::c(LANCZOS_TOL);
    for _restart in 0..50 {
        project_out(&mut start, locked);
        let nrm = start.norm();
        if nrm.is_zero() {
            return Err(Error::NoConvergence {
                what: "Lanczos",
                detail: "start vector lies in the locked subspace".into(),
            });
        }
        start /= nrm;
        let mut basis = vec![start.clone()];
        let mut alpha: Vec<T> = Vec::new();
        let mut beta: Vec<T> = Vec::new();
        let mut w = DVector::zeros(dim);
        let mut ritz: Option<(T, DVector<T>, T)> = None;
        for j in 0..max_krylov {
            h.apply_real(basis[j].as_slice(), w.as_mut_slice());
            project_out(&mut w, locked);
            let a = basis[j].dot(&w);
            alpha.push(a);
            project_out(&mut w, &basis);
            let b = w.norm();
            let m = alpha.len();
            let exhausted = b <= T::c(1e-12) * a.abs().max(T::one()) || j + 1 == max_krylov;
            if m % 8 == 0 || exhausted {
                let t = DMatrix::from_fn(m, m, |r, c| {
                    if r == c {
                        alpha[r]
                    } else if r == c + 1 {
                        beta[c]
                    } else if c == r + 1 {
                        beta[r]
                    } else {
                        T::zero()
                    }
                });
                let eig = t.symmetric_eigen();
                let (imin, &emin) = eig
                    .eigenvalues
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .expect("nonempty");
                let y = eig.eigenvectors.column(imin).into_owned();
                let residual = b * y[m - 1].abs();
                if residual <= tol * emin.abs().max(T::one()) || exhausted {
                    let mut x = DVector::zeros(dim);
                    for (k, v) in basis.iter().enumerate() {
                        x.axpy(y[k], v, T::one());
                    }
                    project_out(&mut x, locked);
                    let nx = x.norm();
                    x /= nx;
                    ritz = Some((emin, x, residual));
                    if residual <= tol * emin.abs().max(T::one()) {
                        break;
                    }
                }
                if exhausted {
                    break;
                }
            }
            beta.push(b);
            basis.push(&w / b);
        }
        let (e, x, residual) = ritz.expect("Ritz pair computed");
        // confirm with the true residual
        let mut hx = DVector::zeros(dim);
        h.apply_real(x.as_slice(), hx.as_mut_slice());
        let true_res = (&hx - &x * e).norm();
        if true_res <= T::c(10.0) * tol * e.abs().max(T::one()) || residual.is_zero() {
            return Ok((e, x));
        }
        start = x;
    }
    Err(Error::NoConvergence {
        what: "Lanczos",
        detail: "residual above tolerance after 50 restarts".into(),
    })
}

/// Ground state of the chain-only Hamiltonian. A degenerate ground space is
/// reported through `degeneracy`; the returned vector is the normalized
/// projection of the all-down product state onto it (or its first basis
/// vector if that projection vanishes).
pub fn ground_state_chain<T: Real>(config: &SpinSystemConfig<T>) -> Result<GroundState<T>> {
    let h = chain_hamiltonian(config)?;
    let dim = h.dim();
    let mut count = 2.min(dim);
    let (vals, vecs) = loop {
        let (vals, vecs) = lowest_eigenpairs(&h, count)?;
        let tol = degeneracy_tol(vals[0]);
        let deg = vals.iter().filter(|&&e| e - vals[0] <= tol).count();
        if deg < count || count == dim {
            break (vals, vecs);
        }
        count = (count * 2).min(dim);
    };
    let e0 = vals[0];
    let tol = degeneracy_tol(e0);
    let degeneracy = vals.iter().filter(|&&e| e - e0 <= tol).count();
    let ground = &vecs[..degeneracy];
    // all-down product state is basis index 0
    let mut v = DVector::zeros(dim);
    for g in ground {
        v.axpy(g[0], g, T::one());
    }
    let nv = v.norm();
    let v = if nv > T::c(1e-8) { v / nv } else { ground[0].clone() };
    // fix the global sign so the largest component is positive
    let imax = v.iamax();
    let v = if v[imax] < T::zero() { -v } else { v };
    Ok(GroundState {
        state: DenseState::from_real(config.n_sites, &v),
        energy: e0,
        degeneracy,
    })
}

/// Lowest `n_levels` eigenvalues of the chain-only Hamiltonian (at least 2).
pub fn chain_spectrum<T: Real>(config: &SpinSystemConfig<T>, n_levels: usize) -> Result<SpectrumSummary<T>> {
    let h = chain_hamiltonian(config)?;
    let (levels, _) = lowest_eigenpairs(&h, n_levels.max(2))?;
    Ok(SpectrumSummary {
        ground_energy: levels[0],
        gap: levels[1] - levels[0],
        lowest_levels: levels,
    })
}

/// Chain ground state ⊗ |↑⟩_S ⊗ |↓⟩_R.
pub fn initial_transfer_state<T: Real>(config: &SpinSystemConfig<T>) -> Result<DenseState<T>> {
    if config.n_sites + 2 > MAX_SPINS {
        return Err(Error::TooLarge {
            spins: config.n_sites + 2,
            limit: MAX_SPINS,
        });
    }
    ground_state_chain(config)?.state.with_ancillas(true, false)
}

/// Step statistics of a Krylov propagation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KrylovStats {
    pub steps: usize,
    pub matvecs: usize,
    pub error_bound: f64,
}

/// Time stepping `ψ ↦ e^{−iHτ} ψ` in Krylov subspaces of adaptive dimension
/// (at most 40) and step size, with an a-posteriori error bound of 1e-10
/// per step.
pub struct KrylovPropagator<'a, T: Real> {
    h: &'a SparseHamiltonian<T>,
    tol: T,
    next_step: T,
    pub stats: KrylovStats,
}

impl<'a, T: Real> KrylovPropagator<'a, T> {
    pub fn new(h: &'a SparseHamiltonian<T>) -> Self {
        let scale = h.norm_bound().max(T::c(1e-12));
        Self {
            h,
            tol: T::c(KRYLOV_TOL),
            next_step: T::c(10.0) / scale,
            stats: KrylovStats::default(),
        }
    }

    /// Advances `psi` by time `t ≥ 0`.
    pub fn advance(&mut self, psi: &mut [Complex<T>], t: T) -> Result<()> {
        let mut remaining = t;
        while remaining > T::zero() {
            let tau = self.next_step.min(remaining);
            let used = self.step(psi, tau)?;
            remaining -= used;
            if used >= tau && tau == self.next_step {
                self.next_step = self.next_step * T::c(1.5);
            }
        }
        Ok(())
    }

    /// One Krylov step of length at most `tau`; returns the length taken.
    fn step(&mut self, psi: &mut [Complex<T>], tau: T) -> Result<T> {
        let dim = psi.len();
        let beta0 = norm(psi);
        if beta0.is_zero() {
            return Ok(tau);
        }
        let inv = T::one() / beta0;
        let mut basis: Vec<Vec<Complex<T>>> = vec![psi.iter().map(|z| z * inv).collect()];
        let mut alpha: Vec<T> = Vec::new();
        let mut beta: Vec<T> = Vec::new();
        let mut w = vec![Complex::zero(); dim];
        let max_dim = KRYLOV_MAX_DIM.min(dim);
        let mut tau = tau;
        loop {
            let j = basis.len() - 1;
            self.h.apply(&basis[j], &mut w);
            self.stats.matvecs += 1;
            let a = dot(&basis[j], &w).re;
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(v, &w);
                    for (wi, vi) in w.iter_mut().zip(v) {
                        *wi -= c * vi;
                    }
                }
            }
            alpha.push(a);
            let b = norm(&w);
            let m = alpha.len();
            let happy = b <= T::c(1e-13) * (a.abs().max(T::one()));
            if m >= 4 || happy || m == max_dim {
                // try the requested step, shrinking it if the basis is full
                loop {
                    let (coef, err) = krylov_exp(&alpha, &beta, b, tau);
                    let err = if happy { T::zero() } else { err };
                    if err <= self.tol || (m == max_dim && tau <= T::c(1e-12)) {
                        for x in psi.iter_mut() {
                            *x = Complex::zero();
                        }
                        for (k, v) in basis.iter().enumerate() {
                            let ck = coef[k] * beta0;
                            for (x, vi) in psi.iter_mut().zip(v) {
                                *x += ck * vi;
                            }
                        }
                        self.stats.steps += 1;
                        self.stats.error_bound += err.as_f64();
                        if m == max_dim || happy {
                            self.next_step = tau;
                        }
                        return Ok(tau);
                    }
                    if m < max_dim && !happy {
                        break;
                    }
                    tau = tau / T::c(2.0);
                }
            }
            beta.push(b);
            let inv = T::one() / b;
            basis.push(w.iter().map(|z| z * inv).collect());
        }
    }
}

/// `e^{−iTτ} e₁` for the Lanczos tridiagonal T and the error estimate
/// `β_m |[e^{−iTτ} e₁]_m|`.
fn krylov_exp<T: Real>(alpha: &[T], beta: &[T], b_next: T, tau: T) -> (Vec<Complex<T>>, T) {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |r, c| {
        if r == c {
            alpha[r]
        } else if r == c + 1 {
            beta[c]
        } else if c == r + 1 {
            beta[r]
        } else {
            T::zero()
        }
    });
    let eig = t.symmetric_eigen();
    let mut coef = vec![Complex::zero(); m];
    for k in 0..m {
        let q0 = eig.eigenvectors[(0, k)];
        let ph = eig.eigenvalues[k] * tau;
        let e = Complex::new(ph.cos(), -ph.sin()) * q0;
        for (r, c) in coef.iter_mut().enumerate() {
            *c += e * eig.eigenvectors[(r, k)];
        }
    }
    let last: Complex<T> = coef[m - 1];
    let err = b_next * (last.re * last.re + last.im * last.im).sqrt();
    (coef, err)
}

/// ⟨H^n⟩ for n = 1..=max_n (max_n ≤ 4), computed as ⟨H^a ψ | H^b ψ⟩.
pub fn moments_with<T: Real>(state: &DenseState<T>, h: &SparseHamiltonian<T>, max_n: usize) -> Result<Vec<T>> {
    if max_n > 4 {
        return Err(Error::InvalidArgument("moments beyond the fourth are ill-conditioned".into()));
    }
    if state.amplitudes.len() != h.dim() {
        return Err(Error::InvalidArgument("state and Hamiltonian dimensions differ".into()));
    }
    let mut powers = vec![state.amplitudes.clone()];
    for k in 0..max_n.div_ceil(2) {
        let mut next = vec![Complex::zero(); h.dim()];
        h.apply(&powers[k], &mut next);
        powers.push(next);
    }
    let nn = dot(&state.amplitudes, &state.amplitudes).re;
    Ok((1..=max_n)
        .map(|n| {
            let a = n / 2;
            dot(&powers[a], &powers[n - a]).re / nn
        })
        .collect())
}

/// ⟨H^n⟩ of the full system Hamiltonian for n = 1..=max_n.
pub fn hamiltonian_moments<T: Real>(
    state: &DenseState<T>,
    config: &SpinSystemConfig<T>,
    max_n: usize,
) -> Result<Vec<T>> {
    let h = full_hamiltonian(config)?;
    moments_with(state, &h, max_n)
}

/// Evaluates the recorded observables of a full-system state.
fn record_values<T: Real>(psi: &DenseState<T>, h: &SparseHamiltonian<T>, hpsi: &mut [Complex<T>]) -> Vec<f64> {
    let rho = psi.ancilla_density();
    let rho64 = rho.map(|row| row.map(|z| Complex::new(z.re.as_f64(), z.im.as_f64())));
    let mut out = trace::density_values(&rho64);
    h.apply(&psi.amplitudes, hpsi);
    let nn = dot(&psi.amplitudes, &psi.amplitudes).re;
    let e = dot(&psi.amplitudes, hpsi).re / nn;
    let e2 = dot(hpsi, hpsi).re / nn;
    out.push(e.as_f64());
    out.push(e2.as_f64());
    out
}

/// Channel list of ED traces: the ancilla density matrix, ⟨H⟩ and ⟨H²⟩.
pub fn trace_channels() -> Vec<String> {
    let mut c = trace::density_channels();
    c.push(trace::ENERGY.to_string());
    c.push(trace::ENERGY_SQ.to_string());
    c
}

/// Number of record intervals for `t_final` at spacing `dt_record`.
pub fn record_count(t_final: f64, dt_record: f64) -> Result<usize> {
    if !(t_final >= 0.0) || !t_final.is_finite() {
        return Err(Error::InvalidArgument("t_final must be finite and nonnegative".into()));
    }
    if t_final == 0.0 {
        return Ok(0);
    }
    if !(dt_record > 0.0) {
        return Err(Error::InvalidArgument("dt_record must be positive".into()));
    }
    let n = (t_final / dt_record - 1e-9).ceil();
    Ok(n.max(1.0) as usize)
}

/// Record times `k·dt_record` for k = 0..=n, the last one clamped to `t_final`.
pub fn record_times(t_final: f64, dt_record: f64) -> Result<Vec<f64>> {
    let n = record_count(t_final, dt_record)?;
    Ok((0..=n)
        .map(|k| if k == n { t_final } else { k as f64 * dt_record })
        .collect())
}

/// Exact Schrödinger evolution of `state` under the full Hamiltonian,
/// recorded every `dt_record` up to `t_final`.
pub fn evolve_exact<T: Real>(
    state: &DenseState<T>,
    config: &SpinSystemConfig<T>,
    t_final: f64,
    dt_record: f64,
) -> Result<TransferTrace> {
    let h = full_hamiltonian(config)?;
    if state.amplitudes.len() != h.dim() {
        return Err(Error::InvalidArgument(format!(
            "state has {} spins, system has {}",
            state.n_spins,
            h.n_spins()
        )));
    }
    let times = record_times(t_final, dt_record)?;
    let mut kv = config.to_kv();
    kv.insert("t_final", format_f64(t_final));
    kv.insert("dt_record", format_f64(dt_record));
    let mut trace = TransferTrace::new("ed", kv, &trace_channels());
    let mut psi = state.clone();
    let mut hpsi = vec![Complex::zero(); h.dim()];
    let mut prop = KrylovPropagator::new(&h);
    let mut t_prev = 0.0;
    let initial_norm = psi.norm();
    for &t in &times {
        prop.advance(&mut psi.amplitudes, T::c(t - t_prev))?;
        t_prev = t;
        trace.push(t, &record_values(&psi, &h, &mut hpsi))?;
    }
    trace.diagnostics.insert("krylov_steps", prop.stats.steps);
    trace.diagnostics.insert("krylov_error_bound", format_f64(prop.stats.error_bound));
    trace.diagnostics.insert(
        "norm_drift",
        format_f64((psi.norm() - initial_norm).abs().as_f64()),
    );
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Boundary;
    use approx::assert_relative_eq;

    fn cfg(n: usize, b: f64, jx: f64, jy: f64, jz: f64) -> SpinSystemConfig<f64> {
        SpinSystemConfig {
            n_sites: n,
            b_field: b,
            j_x: jx,
            j_y: jy,
            j_z: jz,
            b_ancilla: 0.6,
            j_ancilla: 0.05,
            m_sender: (n / 2).max(1),
            m_receiver: (n / 2 + 1).min(n),
            boundary: Boundary::Open,
            allow_off_centre: true,
        }
    }

    #[test]
    fn free_spins_ground_state_is_all_down() {
        let c = cfg(6, 1.0, 0.0, 0.0, 0.0);
        let g = ground_state_chain(&c).unwrap();
        assert_eq!(g.energy, -6.0);
        assert_eq!(g.degeneracy, 1);
        assert_relative_eq!(g.state.amplitudes[0].re, 1.0, epsilon = 1e-12);
        let s = chain_spectrum(&c, 3).unwrap();
        assert_relative_eq!(s.gap, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn two_site_ising_degeneracy() {
        let c = cfg(2, 0.0, 1.0, 0.0, 0.0);
        let g = ground_state_chain(&c).unwrap();
        assert_relative_eq!(g.energy, -1.0, epsilon = 1e-12);
        assert_eq!(g.degeneracy, 2);
        // tie-break: projection of |↓↓⟩ onto the ground space, (|↓↓⟩ − |↑↑⟩)/√2
        let a = &g.state.amplitudes;
        assert_relative_eq!(a[0].re.abs(), 0.5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(a[3].re, -a[0].re, epsilon = 1e-12);
    }

    #[test]
    fn yy_matrix_elements() {
        // σyσy on two spins: ⟨↑↑|σyσy|↓↓⟩ = −1, ⟨↑↓|σyσy|↓↑⟩ = +1
        let c = cfg(2, 0.0, 0.0, 1.0, 0.0);
        let h = chain_hamiltonian(&c).unwrap().to_dense();
        assert_eq!(h[(3, 0)], -1.0);
        assert_eq!(h[(1, 2)], 1.0);
        assert_eq!(h[(0, 0)], 0.0);
    }

    #[test]
    fn lanczos_matches_dense_solve() {
        // N = 10 (1024 states) exercises the Lanczos path
        let c = cfg(10, 1.0, 0.3, 0.0, 0.0);
        let h = chain_hamiltonian(&c).unwrap();
        let dense = h.to_dense().symmetric_eigenvalues();
        let mut d: Vec<f64> = dense.iter().copied().collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (vals, vecs) = lowest_eigenpairs(&h, 4).unwrap();
        for k in 0..4 {
            assert_relative_eq!(vals[k], d[k], epsilon = 1e-10);
        }
        let g = ground_state_chain(&c).unwrap();
        assert_relative_eq!(g.energy, d[0], epsilon = 1e-10);
        let overlap = vecs[0].dot(&DVector::from_iterator(1024, g.state.amplitudes.iter().map(|z| z.re)));
        assert_relative_eq!(overlap.abs(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn lanczos_resolves_degenerate_levels() {
        let c = cfg(10, 0.0, 1.0, 0.0, 0.0);
        let h = chain_hamiltonian(&c).unwrap();
        let (vals, _) = lowest_eigenpairs(&h, 3).unwrap();
        assert_relative_eq!(vals[0], -9.0, epsilon = 1e-10);
        assert_relative_eq!(vals[1], -9.0, epsilon = 1e-10);
        assert!(vals[2] > -9.0 + 1.0);
        assert_eq!(ground_state_chain(&c).unwrap().degeneracy, 2);
    }

    #[test]
    fn weak_coupling_gap_tends_to_twice_field() {
        let c = cfg(8, 1.0, 1e-7, 0.0, 0.0);
        let s = chain_spectrum(&c, 2).unwrap();
        assert!((s.gap - 2.0).abs() < 1e-6);
        let c = cfg(8, -1.5, 0.0, 0.0, 0.0);
        assert_relative_eq!(chain_spectrum(&c, 2).unwrap().gap, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn krylov_matches_dense_exponential() {
        let mut c = cfg(6, 1.0, 0.3, 0.2, 0.1);
        c.m_sender = 2;
        c.m_receiver = 4;
        let psi0 = initial_transfer_state(&c).unwrap();
        let h = full_hamiltonian(&c).unwrap();
        let dense = h.to_dense();
        let eig = dense.clone().symmetric_eigen();
        let t = 37.3;
        let mut psi = psi0.amplitudes.clone();
        KrylovPropagator::new(&h).advance(&mut psi, t).unwrap();
        // dense reference: U e^{−iDt} Uᵀ ψ0
        let u = &eig.eigenvectors;
        let d = h.dim();
        for r in (0..d).step_by(7) {
            let mut acc = Complex::new(0.0, 0.0);
            for k in 0..d {
                let mut proj = Complex::new(0.0, 0.0);
                for s in 0..d {
                    proj += psi0.amplitudes[s] * u[(s, k)];
                }
                let ph = eig.eigenvalues[k] * t;
                acc += proj * Complex::new(ph.cos(), -ph.sin()) * u[(r, k)];
            }
            assert!((acc - psi[r]).norm() < 1e-9, "row {r}");
        }
    }

    #[test]
    fn decoupled_ancillas_keep_probabilities() {
        let mut c = cfg(6, 1.0, 0.3, 0.0, 0.0);
        c.j_ancilla = 0.0;
        let psi = initial_transfer_state(&c).unwrap();
        let tr = evolve_exact(&psi, &c, 50.0, 5.0).unwrap();
        assert_eq!(tr.len(), 11);
        for p in tr.require(trace::P_UD).unwrap() {
            assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_duration_gives_single_record() {
        let c = cfg(6, 1.0, 0.3, 0.0, 0.0);
        let psi = initial_transfer_state(&c).unwrap();
        let tr = evolve_exact(&psi, &c, 0.0, 1.0).unwrap();
        assert_eq!(tr.len(), 1);
        assert_relative_eq!(tr.require(trace::P_UD).unwrap()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eigenstate_has_zero_variance() {
        let mut c = cfg(6, 1.0, 0.3, 0.0, 0.0);
        c.j_ancilla = 0.0;
        let psi = initial_transfer_state(&c).unwrap();
        let m = hamiltonian_moments(&psi, &c, 2).unwrap();
        assert!((m[1] - m[0] * m[0]).abs() < 1e-9);
    }

    #[test]
    fn too_large_is_rejected() {
        let c = cfg(13, 1.0, 0.3, 0.0, 0.0);
        assert!(matches!(initial_transfer_state(&c), Err(Error::TooLarge { .. })));
        let c = cfg(15, 1.0, 0.3, 0.0, 0.0);
        assert!(matches!(chain_spectrum(&c, 2), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn record_grid() {
        assert_eq!(record_times(1.0, 0.25).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(record_times(1.0, 0.3).unwrap().last(), Some(&1.0));
        assert_eq!(record_times(0.0, 0.3).unwrap(), vec![0.0]);
    }
}
