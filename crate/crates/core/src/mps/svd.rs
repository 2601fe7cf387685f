//! One-sided Jacobi singular value decomposition for complex matrices.

use num_traits::Zero;

use super::CMatrix;
use crate::scalar::{Complex, Real};

const MAX_SWEEPS: usize = 80;

pub(crate) struct Svd<T: Real> {
    pub u: CMatrix<T>,
    pub singular_values: Vec<T>,
    pub v_t: CMatrix<T>,
}

/// Thin decomposition `a = u · diag(s) · v_t`; singular values are unordered.
pub(crate) fn svd<T: Real>(a: &CMatrix<T>) -> Svd<T> {
    if a.nrows() < a.ncols() {
        let Svd { u, singular_values, v_t } = svd_tall(a.adjoint());
        return Svd {
            u: v_t.adjoint(),
            singular_values,
            v_t: u.adjoint(),
        };
    }
    svd_tall(a.clone())
}

fn svd_tall<T: Real>(mut w: CMatrix<T>) -> Svd<T> {
    let (m, n) = w.shape();
    let mut v = CMatrix::<T>::identity(n, n);
    let eps = T::machine_eps();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let mut alpha = T::zero();
                let mut beta = T::zero();
                let mut gamma = Complex::<T>::zero();
                for i in 0..m {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    alpha += x.norm_sqr();
                    beta += y.norm_sqr();
                    gamma += x.conj() * y;
                }
                let g = gamma.norm_sqr().sqrt();
                if g <= eps * (alpha * beta).sqrt() || g.is_zero() {
                    continue;
                }
                rotated = true;
                let phase = gamma / Complex::new(g, T::zero());
                let zeta = (beta - alpha) / (g + g);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let (cc, sc) = (Complex::new(c, T::zero()), Complex::new(s, T::zero()));
                let rot = |mat: &mut CMatrix<T>| {
                    for i in 0..mat.nrows() {
                        let x = mat[(i, p)];
                        let y = mat[(i, q)] * phase.conj();
                        mat[(i, p)] = cc * x - sc * y;
                        mat[(i, q)] = sc * x + cc * y;
                    }
                };
                rot(&mut w);
                rot(&mut v);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut singular_values = Vec::with_capacity(n);
    for j in 0..n {
        let sigma = w.column(j).iter().fold(T::zero(), |acc, z| acc + z.norm_sqr()).sqrt();
        singular_values.push(sigma);
        if sigma > T::zero() {
            let inv = Complex::new(T::one() / sigma, T::zero());
            w.column_mut(j).iter_mut().for_each(|z| *z *= inv);
        }
    }
    Svd {
        u: w,
        singular_values,
        v_t: v.adjoint(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(d: &Svd<f64>) -> CMatrix<f64> {
        let s = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            d.singular_values.len(),
            d.singular_values.iter().map(|&x| Complex::new(x, 0.0)),
        ));
        &d.u * s * &d.v_t
    }

    fn max_abs(m: &CMatrix<f64>) -> f64 {
        m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn reconstructs_wide_tall_and_rank_deficient() {
        let mk = |r: usize, c: usize| {
            CMatrix::<f64>::from_fn(r, c, |i, j| {
                Complex::new(((3 * i + 7 * j) % 5) as f64 - 2.0, ((i * j) % 3) as f64 * 0.5)
            })
        };
        let low = {
            let a = mk(6, 1);
            let b = mk(1, 5);
            a * b
        };
        for a in [mk(2, 8), mk(8, 2), mk(5, 5), low] {
            let d = svd(&a);
            assert!(max_abs(&(reconstruct(&d) - &a)) < 1e-12);
            let k = d.singular_values.len();
            assert_eq!(k, a.nrows().min(a.ncols()));
            let nz: Vec<usize> = (0..k).filter(|&i| d.singular_values[i] > 1e-12).collect();
            for &i in &nz {
                for &j in &nz {
                    let uij = d.u.column(i).dotc(&d.u.column(j));
                    let vij = d.v_t.row(j).dotc(&d.v_t.row(i));
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((uij - want).norm() < 1e-12);
                    assert!((vij - want).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn singular_values_match_known_spectrum() {
        let a = CMatrix::<f64>::from_fn(3, 3, |i, j| {
            if i == j {
                Complex::new([3.0, 1.0, 0.5][i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            }
        });
        let phases = CMatrix::<f64>::from_fn(3, 3, |i, j| {
            if i == j {
                Complex::from_polar(1.0, i as f64)
            } else {
                Complex::new(0.0, 0.0)
            }
        });
        let mut s = svd(&(phases * a)).singular_values;
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (x, y) in s.iter().zip([3.0, 1.0, 0.5]) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
