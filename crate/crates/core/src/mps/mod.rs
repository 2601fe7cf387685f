//! Matrix product states with second-order Trotter TEBD for the spin chain and
//! its ancillas.
//!
//! Each site tensor is stored as two `χ_l × χ_r` matrices, one per physical
//! state (index 0 = down, 1 = up). Two-site operators use the index
//! `2·s_left + s_right`. Sites left of the orthogonality centre are
//! left-isometric, sites right of it right-isometric.

mod checkpoint;
mod layout;
mod svd;
mod tebd;
mod trotter;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use layout::{embed_ancillas, ExtendedLayout};
pub use tebd::{
    critical_gap_estimate, ground_state_itebd, initial_transfer_state, stability_check, tebd_run,
    trace_channels, GroundStateSettings, ItebdResult, StabilityReport, DEFAULT_STABILITY_TOL,
};
pub use trotter::{local_terms, GateOp, GateSet, LocalTerm, TrotterPlan};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{Complex, Real};

pub type CMatrix<T> = DMatrix<Complex<T>>;

pub const DEFAULT_CHI: usize = 10;
pub const DEFAULT_CUTOFF: f64 = 1e-10;

/// Singular values kept after a two-site update: at most `chi_max`, and none
/// below `cutoff` times the largest. With `cutoff = 0` every numerically
/// nonzero value must fit into `chi_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    pub chi_max: usize,
    pub cutoff: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            chi_max: DEFAULT_CHI,
            cutoff: DEFAULT_CUTOFF,
        }
    }
}

/// Relative size below which a singular value counts as zero when no cutoff
/// is set.
const EXACT_ZERO: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixProductState<T: Real> {
    tensors: Vec<[CMatrix<T>; 2]>,
    center: usize,
}

fn one<T: Real>() -> Complex<T> {
    Complex::new(T::one(), T::zero())
}

impl<T: Real> MatrixProductState<T> {
    /// Product state with bond dimension 1; `true` means spin up.
    pub fn product(spins_up: &[bool]) -> Result<Self> {
        if spins_up.is_empty() {
            return Err(Error::InvalidArgument("empty product state".into()));
        }
        let tensors = spins_up
            .iter()
            .map(|&up| {
                let mut a = [CMatrix::zeros(1, 1), CMatrix::zeros(1, 1)];
                a[usize::from(up)][(0, 0)] = one();
                a
            })
            .collect();
        Ok(Self { tensors, center: 0 })
    }

    /// Builds a state from raw tensors and an asserted orthogonality centre.
    pub fn from_tensors(tensors: Vec<[CMatrix<T>; 2]>, center: usize) -> Result<Self> {
        if tensors.is_empty() || center >= tensors.len() {
            return Err(Error::InvalidArgument("bad tensor list or centre".into()));
        }
        for (i, t) in tensors.iter().enumerate() {
            if t[0].shape() != t[1].shape() {
                return Err(Error::InvalidArgument(format!("site {i}: physical slices differ in shape")));
            }
            if i + 1 < tensors.len() && t[0].ncols() != tensors[i + 1][0].nrows() {
                return Err(Error::InvalidArgument(format!("bond {i}: dimensions do not match")));
            }
        }
        if tensors[0][0].nrows() != 1 || tensors[tensors.len() - 1][0].ncols() != 1 {
            return Err(Error::InvalidArgument("boundary bonds must have dimension 1".into()));
        }
        Ok(Self { tensors, center })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn tensor(&self, i: usize) -> &[CMatrix<T>; 2] {
        &self.tensors[i]
    }

    /// Dimensions of the `len − 1` internal bonds.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.len() - 1].iter().map(|t| t[0].ncols()).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Inserts a site in a definite spin state before position `pos`. The new
    /// tensor is the identity on the bond it splits, hence isometric from both
    /// sides.
    pub fn insert_site(&mut self, pos: usize, up: bool) -> Result<()> {
        if pos > self.len() {
            return Err(Error::InvalidArgument(format!("insert position {pos} out of range")));
        }
        let chi = if pos == 0 { 1 } else { self.tensors[pos - 1][0].ncols() };
        let mut a = [CMatrix::zeros(chi, chi), CMatrix::zeros(chi, chi)];
        a[usize::from(up)] = CMatrix::identity(chi, chi);
        self.tensors.insert(pos, a);
        if self.center >= pos {
            self.center += 1;
        }
        Ok(())
    }

    /// `[A⁰; A¹]`, shape `2χ_l × χ_r`.
    fn stacked_rows(&self, i: usize) -> CMatrix<T> {
        let [a0, a1] = &self.tensors[i];
        let (dl, dr) = a0.shape();
        let mut m = CMatrix::zeros(2 * dl, dr);
        m.view_mut((0, 0), (dl, dr)).copy_from(a0);
        m.view_mut((dl, 0), (dl, dr)).copy_from(a1);
        m
    }

    /// `[A⁰ A¹]`, shape `χ_l × 2χ_r`.
    fn stacked_cols(&self, i: usize) -> CMatrix<T> {
        let [a0, a1] = &self.tensors[i];
        let (dl, dr) = a0.shape();
        let mut m = CMatrix::zeros(dl, 2 * dr);
        m.view_mut((0, 0), (dl, dr)).copy_from(a0);
        m.view_mut((0, dr), (dl, dr)).copy_from(a1);
        m
    }

    /// Shifts the orthogonality centre to `to` by QR (rightwards) or LQ
    /// (leftwards) factorizations; the state is unchanged.
    pub fn move_center(&mut self, to: usize) {
        assert!(to < self.len(), "centre {to} out of range");
        while self.center < to {
            let c = self.center;
            let m = self.stacked_rows(c);
            let dl = self.tensors[c][0].nrows();
            let qr = m.qr();
            let (q, r) = (qr.q(), qr.r());
            let k = q.ncols();
            self.tensors[c] = [q.rows(0, dl).into_owned(), q.rows(dl, dl).into_owned()];
            for s in 0..2 {
                self.tensors[c + 1][s] = &r * &self.tensors[c + 1][s];
            }
            debug_assert_eq!(self.tensors[c][0].ncols(), k);
            self.center += 1;
        }
        while self.center > to {
            let c = self.center;
            let m = self.stacked_cols(c);
            let dr = self.tensors[c][0].ncols();
            let qr = m.adjoint().qr();
            let (q, r) = (qr.q(), qr.r());
            // m = r† q†
            let qa = q.adjoint();
            self.tensors[c] = [qa.columns(0, dr).into_owned(), qa.columns(dr, dr).into_owned()];
            let ra = r.adjoint();
            for s in 0..2 {
                self.tensors[c - 1][s] = &self.tensors[c - 1][s] * &ra;
            }
            self.center -= 1;
        }
    }

    pub fn norm(&self) -> T {
        let [a0, a1] = &self.tensors[self.center];
        (a0.norm_squared() + a1.norm_squared()).sqrt()
    }

    /// Largest deviation from the isometry conditions implied by the centre.
    pub fn isometry_defect(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.len() {
            if i == self.center {
                continue;
            }
            let [a0, a1] = &self.tensors[i];
            let g = if i < self.center {
                a0.adjoint() * a0 + a1.adjoint() * a1
            } else {
                a0 * a0.adjoint() + a1 * a1.adjoint()
            };
            let n = g.nrows();
            let d = g - CMatrix::identity(n, n);
            worst = worst.max(d.iter().fold(T::zero(), |m, z| m.max((z.re * z.re + z.im * z.im).sqrt())));
        }
        worst
    }

    /// Applies a 2×2 operator to site `pos` and restores unit norm.
    pub fn apply_one_site(&mut self, pos: usize, gate: &CMatrix<T>) {
        self.move_center(pos);
        let [a0, a1] = self.tensors[pos].clone();
        for s in 0..2 {
            self.tensors[pos][s] = &a0 * gate[(s, 0)] + &a1 * gate[(s, 1)];
        }
        let n = self.norm();
        if n > T::zero() {
            for s in 0..2 {
                self.tensors[pos][s] /= Complex::new(n, T::zero());
            }
        }
    }

    /// Applies a 4×4 operator to sites `(pos, pos + 1)`, truncates and
    /// renormalizes. The centre ends on `pos + 1` when `sweep_right`, else on
    /// `pos`. Returns the discarded weight.
    pub fn apply_two_site(&mut self, pos: usize, gate: &CMatrix<T>, trunc: &Truncation, sweep_right: bool) -> Result<T> {
        if pos + 1 >= self.len() {
            return Err(Error::InvalidArgument(format!("no bond at position {pos}")));
        }
        if self.center < pos {
            self.move_center(pos);
        } else if self.center > pos + 1 {
            self.move_center(pos + 1);
        }
        let dl = self.tensors[pos][0].nrows();
        let dr = self.tensors[pos + 1][0].ncols();
        let mut theta: [[CMatrix<T>; 2]; 2] = Default::default();
        for (a, row) in theta.iter_mut().enumerate() {
            for (b, slot) in row.iter_mut().enumerate() {
                *slot = &self.tensors[pos][a] * &self.tensors[pos + 1][b];
            }
        }
        let mut m = CMatrix::zeros(2 * dl, 2 * dr);
        for a in 0..2 {
            for b in 0..2 {
                let mut block = CMatrix::zeros(dl, dr);
                for c in 0..2 {
                    for d in 0..2 {
                        let g = gate[(2 * a + b, 2 * c + d)];
                        if g != Complex::new(T::zero(), T::zero()) {
                            block += &theta[c][d] * g;
                        }
                    }
                }
                m.view_mut((a * dl, b * dr), (dl, dr)).copy_from(&block);
            }
        }
        let svd::Svd { u, singular_values: sv, v_t: vt } = svd::svd(&m);
        let mut order: Vec<usize> = (0..sv.len()).collect();
        order.sort_by(|&i, &j| sv[j].partial_cmp(&sv[i]).unwrap_or(std::cmp::Ordering::Equal));
        let s0 = sv[order[0]];
        if !(s0 > T::zero()) || !s0.is_finite() {
            return Err(Error::NoConvergence {
                what: "two-site update",
                detail: format!("degenerate singular values at bond {pos}"),
            });
        }
        let total: T = sv.iter().fold(T::zero(), |acc, &x| acc + x * x);
        let keep = if trunc.cutoff > 0.0 {
            let thr = T::c(trunc.cutoff) * s0;
            order.iter().take_while(|&&i| sv[i] > thr).count().clamp(1, trunc.chi_max.max(1))
        } else {
            let thr = T::c(EXACT_ZERO) * s0;
            let needed = order.iter().take_while(|&&i| sv[i] > thr).count().max(1);
            if needed > trunc.chi_max {
                return Err(Error::BondOverflow {
                    bond: pos,
                    needed,
                    chi_max: trunc.chi_max,
                });
            }
            needed
        };
        let kept: T = order[..keep].iter().fold(T::zero(), |acc, &i| acc + sv[i] * sv[i]);
        let scale = kept.sqrt();
        let mut left = [CMatrix::zeros(dl, keep), CMatrix::zeros(dl, keep)];
        let mut right = [CMatrix::zeros(keep, dr), CMatrix::zeros(keep, dr)];
        for (k, &i) in order[..keep].iter().enumerate() {
            let s = sv[i] / scale;
            let (wl, wr) = if sweep_right { (T::one(), s) } else { (s, T::one()) };
            for a in 0..2 {
                for l in 0..dl {
                    left[a][(l, k)] = u[(a * dl + l, i)] * wl;
                }
                for r in 0..dr {
                    right[a][(k, r)] = vt[(i, a * dr + r)] * wr;
                }
            }
        }
        self.tensors[pos] = left;
        self.tensors[pos + 1] = right;
        self.center = if sweep_right { pos + 1 } else { pos };
        Ok((total - kept).max(T::zero()) / total)
    }

    /// Reduced density matrix of sites `p < q`, index `2·s_p + s_q`, with
    /// `ρ[(x,y),(x',y')] = Σ ψ_{..x..y..} ψ*_{..x'..y'..}`.
    pub fn reduced_density(&mut self, p: usize, q: usize) -> CMatrix<T> {
        assert!(p < q && q < self.len(), "need p < q < len");
        self.move_center(p);
        let mut env: Vec<CMatrix<T>> = Vec::with_capacity(4);
        for x in 0..2 {
            for xp in 0..2 {
                env.push(self.tensors[p][x].transpose() * self.tensors[p][xp].conjugate());
            }
        }
        for site in (p + 1)..q {
            let [b0, b1] = &self.tensors[site];
            let (b0c, b1c) = (b0.conjugate(), b1.conjugate());
            for e in env.iter_mut() {
                *e = b0.transpose() * &*e * &b0c + b1.transpose() * &*e * &b1c;
            }
        }
        let mut rho = CMatrix::zeros(4, 4);
        for x in 0..2 {
            for xp in 0..2 {
                let e = &env[2 * x + xp];
                for y in 0..2 {
                    for yp in 0..2 {
                        let m = self.tensors[q][y].transpose() * e * self.tensors[q][yp].conjugate();
                        rho[(2 * x + y, 2 * xp + yp)] = m.trace();
                    }
                }
            }
        }
        rho
    }

    /// Reduced density matrix of one site.
    pub fn site_density(&mut self, p: usize) -> CMatrix<T> {
        self.move_center(p);
        let mut rho = CMatrix::zeros(2, 2);
        for x in 0..2 {
            for xp in 0..2 {
                rho[(x, xp)] = self.tensors[p][xp].dotc(&self.tensors[p][x]);
            }
        }
        rho
    }

    /// Full amplitude vector; site `i` is bit `i` of the index.
    pub fn to_dense(&self) -> Result<Vec<Complex<T>>> {
        if self.len() > 24 {
            return Err(Error::TooLarge {
                spins: self.len(),
                limit: 24,
            });
        }
        // rows: configurations of the sites contracted so far
        let mut acc: Vec<CMatrix<T>> = vec![self.tensors[0][0].clone(), self.tensors[0][1].clone()];
        for site in 1..self.len() {
            let mut next = Vec::with_capacity(acc.len() * 2);
            for s in 0..2 {
                for a in &acc {
                    next.push(a * &self.tensors[site][s]);
                }
            }
            acc = next;
        }
        Ok(acc.into_iter().map(|m| m[(0, 0)]).collect())
    }
}
