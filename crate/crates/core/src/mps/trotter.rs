use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::layout::{embed_ancillas, ExtendedLayout};
use super::{CMatrix, MatrixProductState, Truncation};
use crate::error::{Error, Result};
use crate::model::{build_spin_terms, Pauli, SpinSystemConfig, SpinTerms};
use crate::scalar::{Complex, Real};

/// Hermitian term on layout positions `left ≤ right` (`right − left ≤ 2`).
/// Two-site matrices are 4×4 with index `2·s_left + s_right`; single-site
/// terms (`left == right`) are 2×2.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTerm<T: Real> {
    pub left: usize,
    pub right: usize,
    pub matrix: DMatrix<T>,
}

impl<T: Real> LocalTerm<T> {
    pub fn is_single_site(&self) -> bool {
        self.left == self.right
    }
}

fn pauli<T: Real>(p: Pauli) -> CMatrix<T> {
    let (z, o, i) = (
        Complex::new(T::zero(), T::zero()),
        Complex::new(T::one(), T::zero()),
        Complex::new(T::zero(), T::one()),
    );
    // basis (down, up)
    match p {
        Pauli::X => CMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        Pauli::Y => CMatrix::from_row_slice(2, 2, &[z, i, -i, z]),
        Pauli::Z => CMatrix::from_row_slice(2, 2, &[-o, z, z, o]),
    }
}

fn real_part<T: Real>(m: &CMatrix<T>) -> Result<DMatrix<T>> {
    let imag = m.iter().fold(T::zero(), |a, z| a.max(z.im.abs()));
    if imag > T::c(1e-14) {
        return Err(Error::InvalidArgument("term matrix is not real".into()));
    }
    Ok(m.map(|z| z.re))
}

/// Groups the Hamiltonian into one term per pair of layout positions. Each
/// field is folded into the first pair containing its site; sites without
/// any bond keep a single-site term.
pub fn local_terms<T: Real>(terms: &SpinTerms<T>, layout: &ExtendedLayout) -> Result<Vec<LocalTerm<T>>> {
    let pos = |s| {
        layout
            .position(s)
            .ok_or_else(|| Error::InvalidArgument(format!("site {s:?} missing from layout")))
    };
    let mut pairs: BTreeMap<(usize, usize), CMatrix<T>> = BTreeMap::new();
    for b in &terms.bonds {
        let (mut p, mut q) = (pos(b.sites.0)?, pos(b.sites.1)?);
        let (mut a, mut c) = b.paulis;
        if p > q {
            std::mem::swap(&mut p, &mut q);
            std::mem::swap(&mut a, &mut c);
        }
        if q - p > 2 || p == q {
            return Err(Error::InvalidArgument(format!("bond between positions {p} and {q} is not local")));
        }
        let m = pauli::<T>(a).kronecker(&pauli::<T>(c)) * Complex::new(b.coeff, T::zero());
        *pairs.entry((p, q)).or_insert_with(|| CMatrix::zeros(4, 4)) += m;
    }
    let mut singles: BTreeMap<usize, CMatrix<T>> = BTreeMap::new();
    let id = CMatrix::<T>::identity(2, 2);
    for f in &terms.fields {
        let p = pos(f.site)?;
        let op = pauli::<T>(f.pauli) * Complex::new(f.coeff, T::zero());
        if let Some((&(l, _), m)) = pairs.iter_mut().find(|((l, r), _)| *l == p || *r == p) {
            *m += if l == p { op.kronecker(&id) } else { id.kronecker(&op) };
        } else {
            *singles.entry(p).or_insert_with(|| CMatrix::zeros(2, 2)) += op;
        }
    }
    let mut out: Vec<LocalTerm<T>> = Vec::with_capacity(pairs.len() + singles.len());
    for ((l, r), m) in pairs {
        out.push(LocalTerm {
            left: l,
            right: r,
            matrix: real_part(&m)?,
        });
    }
    for (p, m) in singles {
        out.push(LocalTerm {
            left: p,
            right: p,
            matrix: real_part(&m)?,
        });
    }
    out.sort_by_key(|t| (t.left, t.right));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateOp {
    /// Exponential of term `term`, acting on `(pos, pos + 1)` or on `pos`
    /// alone for single-site terms.
    Gate { term: usize, pos: usize },
    /// Exchange of the states on `(pos, pos + 1)`.
    Swap { pos: usize },
}

/// Second-order Trotter step: every term is exponentiated for `dt/2` in a
/// left-to-right sweep and again in the mirrored sweep. Terms on positions
/// two apart are applied between a swap of the middle site with its right
/// neighbour and the swap back.
#[derive(Debug, Clone)]
pub struct TrotterPlan<T: Real> {
    pub layout: ExtendedLayout,
    pub dt: T,
    pub truncation: Truncation,
    pub terms: Vec<LocalTerm<T>>,
    half: Vec<GateOp>,
}

impl<T: Real> TrotterPlan<T> {
    pub fn new(layout: ExtendedLayout, terms: Vec<LocalTerm<T>>, dt: T, truncation: Truncation) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::InvalidArgument("Trotter step must be positive".into()));
        }
        if truncation.chi_max < 1 || !(truncation.cutoff >= 0.0) {
            return Err(Error::InvalidArgument("invalid truncation settings".into()));
        }
        let mut half = Vec::with_capacity(terms.len() + 4);
        for (k, t) in terms.iter().enumerate() {
            match t.right - t.left {
                0 | 1 => half.push(GateOp::Gate { term: k, pos: t.left }),
                2 => {
                    half.push(GateOp::Swap { pos: t.left + 1 });
                    half.push(GateOp::Gate { term: k, pos: t.left });
                    half.push(GateOp::Swap { pos: t.left + 1 });
                }
                _ => return Err(Error::InvalidArgument("term spans more than three sites".into())),
            }
        }
        Ok(Self {
            layout,
            dt,
            truncation,
            terms,
            half,
        })
    }

    /// Plan for the full system (chain plus ancillas) of `config`.
    pub fn for_system(config: &SpinSystemConfig<T>, dt: Option<T>, truncation: Truncation) -> Result<Self> {
        let layout = embed_ancillas(config)?;
        let terms = local_terms(&build_spin_terms(config)?, &layout)?;
        Self::new(layout, terms, dt.unwrap_or_else(|| Self::default_dt(config)), truncation)
    }

    /// Plan for the chain alone.
    pub fn for_chain(config: &SpinSystemConfig<T>, dt: T, truncation: Truncation) -> Result<Self> {
        let layout = ExtendedLayout::chain(config.n_sites);
        let terms = local_terms(&build_spin_terms(config)?.chain_only(), &layout)?;
        Self::new(layout, terms, dt, truncation)
    }

    /// `0.05 / J_max`, the largest coupling constant of the configuration.
    pub fn default_dt(config: &SpinSystemConfig<T>) -> T {
        let j = config.max_coupling();
        if j > T::zero() {
            T::c(0.05) / j
        } else {
            T::c(0.05)
        }
    }

    /// Operations of the first half step; the second half is its mirror.
    pub fn half_step(&self) -> &[GateOp] {
        &self.half
    }

    /// The complete step as one palindromic sequence.
    pub fn schedule(&self) -> Vec<GateOp> {
        self.half.iter().chain(self.half.iter().rev()).copied().collect()
    }
}

/// Exponentiated terms for one step size.
#[derive(Debug, Clone)]
pub struct GateSet<T: Real> {
    pub gates: Vec<CMatrix<T>>,
    swap: CMatrix<T>,
}

impl<T: Real> GateSet<T> {
    /// `exp(−i h τ/2)` for every term.
    pub fn real_time(plan: &TrotterPlan<T>, tau: T) -> Self {
        Self::build(plan, |lambda| {
            let (s, c) = (-lambda * tau / T::c(2.0)).sin_cos();
            Complex::new(c, s)
        })
    }

    /// `exp(−h τ/2)` for every term.
    pub fn imaginary_time(plan: &TrotterPlan<T>, tau: T) -> Self {
        Self::build(plan, |lambda| Complex::new((-lambda * tau / T::c(2.0)).exp(), T::zero()))
    }

    fn build(plan: &TrotterPlan<T>, f: impl Fn(T) -> Complex<T>) -> Self {
        let gates = plan
            .terms
            .iter()
            .map(|t| {
                let eig = t.matrix.clone().symmetric_eigen();
                let v = eig.eigenvectors.map(|x| Complex::new(x, T::zero()));
                let d = CMatrix::from_diagonal(&eig.eigenvalues.map(&f));
                &v * d * v.transpose()
            })
            .collect();
        let (z, o) = (Complex::new(T::zero(), T::zero()), Complex::new(T::one(), T::zero()));
        #[rustfmt::skip]
        let swap = CMatrix::from_row_slice(4, 4, &[
            o, z, z, z,
            z, z, o, z,
            z, o, z, z,
            z, z, z, o,
        ]);
        Self { gates, swap }
    }

    /// One full second-order step; returns the discarded weight.
    pub fn step(&self, psi: &mut MatrixProductState<T>, plan: &TrotterPlan<T>) -> Result<T> {
        let mut discarded = T::zero();
        for (ops, right) in [(plan.half.as_slice(), true), (plan.half.as_slice(), false)] {
            let apply = |op: &GateOp, psi: &mut MatrixProductState<T>| -> Result<T> {
                match *op {
                    GateOp::Gate { term, pos } => {
                        if plan.terms[term].is_single_site() {
                            psi.apply_one_site(pos, &self.gates[term]);
                            Ok(T::zero())
                        } else {
                            psi.apply_two_site(pos, &self.gates[term], &plan.truncation, right)
                        }
                    }
                    GateOp::Swap { pos } => psi.apply_two_site(pos, &self.swap, &plan.truncation, right),
                }
            };
            if right {
                for op in ops {
                    discarded += apply(op, psi)?;
                }
            } else {
                for op in ops.iter().rev() {
                    discarded += apply(op, psi)?;
                }
            }
        }
        Ok(discarded)
    }
}

/// `Σ_k ⟨h_k⟩` over the plan's terms.
pub(crate) fn energy<T: Real>(psi: &mut MatrixProductState<T>, plan: &TrotterPlan<T>) -> T {
    let mut e = T::zero();
    for t in &plan.terms {
        let rho = if t.is_single_site() {
            psi.site_density(t.left)
        } else {
            psi.reduced_density(t.left, t.right)
        };
        let n = rho.nrows();
        for a in 0..n {
            for b in 0..n {
                e += (rho[(a, b)] * t.matrix[(b, a)]).re;
            }
        }
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ed::{full_hamiltonian, DenseState};
    use crate::model::{Boundary, Site};

    fn fig(n: usize, ms: usize, mr: usize) -> SpinSystemConfig<f64> {
        SpinSystemConfig {
            n_sites: n,
            b_field: 1.0,
            j_x: 0.5,
            j_y: 0.2,
            j_z: 0.1,
            b_ancilla: 0.6,
            j_ancilla: 0.05,
            m_sender: ms,
            m_receiver: mr,
            boundary: Boundary::Open,
            allow_off_centre: true,
        }
    }

    /// Dense matrix of the local terms in ED bit order.
    fn assemble(plan: &TrotterPlan<f64>, n: usize) -> DMatrix<f64> {
        let bit: Vec<usize> = plan.layout.order().iter().map(|s| s.index(n)).collect();
        let dim = 1 << (n + 2);
        let mut h = DMatrix::zeros(dim, dim);
        for t in &plan.terms {
            for col in 0..dim {
                if t.is_single_site() {
                    let b = bit[t.left];
                    let x = (col >> b) & 1;
                    for y in 0..2 {
                        let row = (col & !(1 << b)) | (y << b);
                        h[(row, col)] += t.matrix[(y, x)];
                    }
                } else {
                    let (bl, br) = (bit[t.left], bit[t.right]);
                    let x = 2 * ((col >> bl) & 1) + ((col >> br) & 1);
                    for y in 0..4 {
                        let row = (col & !(1 << bl) & !(1 << br)) | ((y >> 1) << bl) | ((y & 1) << br);
                        h[(row, col)] += t.matrix[(y, x)];
                    }
                }
            }
        }
        h
    }

    #[test]
    fn local_terms_sum_to_the_hamiltonian() {
        for (ms, mr) in [(3, 5), (1, 8), (4, 5), (2, 8)] {
            let c = fig(8, ms, mr);
            let plan = TrotterPlan::for_system(&c, None, Truncation::default()).unwrap();
            let dense = full_hamiltonian(&c).unwrap().to_dense();
            assert!((assemble(&plan, 8) - dense).amax() < 1e-14, "({ms},{mr})");
        }
    }

    #[test]
    fn every_term_once_per_half_step_and_palindromic() {
        let c = fig(20, 9, 11);
        let plan = TrotterPlan::for_system(&c, None, Truncation::default()).unwrap();
        let mut seen = vec![0; plan.terms.len()];
        let mut swaps = 0;
        for op in plan.half_step() {
            match op {
                GateOp::Gate { term, .. } => seen[*term] += 1,
                GateOp::Swap { .. } => swaps += 1,
            }
        }
        assert!(seen.iter().all(|&k| k == 1));
        assert_eq!(swaps, 4);
        let s = plan.schedule();
        assert!(s.iter().eq(s.iter().rev()));
        assert!((plan.dt - 0.05).abs() < 1e-15);
    }

    #[test]
    fn decoupled_ancilla_keeps_single_site_term() {
        let c = SpinSystemConfig { j_ancilla: 0.0, ..fig(6, 2, 5) };
        let plan = TrotterPlan::for_system(&c, None, Truncation::default()).unwrap();
        let s = plan.layout.position(Site::Sender).unwrap();
        assert!(plan.terms.iter().any(|t| t.is_single_site() && t.left == s));
    }

    #[test]
    fn trotter_step_error_is_second_order() {
        let c = fig(6, 2, 5);
        let h = full_hamiltonian(&c).unwrap();
        let bits: Vec<usize> = {
            let plan = TrotterPlan::for_system(&c, Some(0.1), Truncation::default()).unwrap();
            plan.layout.order().iter().map(|s| s.index(6)).collect()
        };
        let init = [true, false, false, true, false, true, true, false];
        let mut spins = vec![false; 8];
        for (p, &b) in bits.iter().enumerate() {
            spins[p] = init[b];
        }
        let index: usize = init.iter().enumerate().map(|(b, &u)| usize::from(u) << b).sum();
        let exact = {
            let mut psi = DenseState::<f64>::basis(8, index).unwrap();
            let mut prop = crate::ed::KrylovPropagator::new(&h);
            prop.advance(&mut psi.amplitudes, 1.0).unwrap();
            psi.amplitudes
        };
        let mut errs = Vec::new();
        for steps in [10, 20] {
            let dt = 1.0 / steps as f64;
            let exact_trunc = Truncation { chi_max: 64, cutoff: 0.0 };
            let plan = TrotterPlan::for_system(&c, Some(dt), exact_trunc).unwrap();
            let gates = GateSet::real_time(&plan, dt);
            let mut psi = MatrixProductState::product(&spins).unwrap();
            for _ in 0..steps {
                gates.step(&mut psi, &plan).unwrap();
                assert!(psi.isometry_defect() < 1e-10);
            }
            let v = psi.to_dense().unwrap();
            let mut err: f64 = 0.0;
            for (idx, a) in v.iter().enumerate() {
                let ed_idx: usize = bits.iter().enumerate().map(|(p, &b)| ((idx >> p) & 1) << b).sum();
                err = err.max((a - exact[ed_idx]).norm());
            }
            errs.push(err);
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.5 && ratio < 4.5, "{errs:?}");
    }
}
