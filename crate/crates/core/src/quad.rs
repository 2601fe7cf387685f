//! One-dimensional quadrature: globally adaptive Gauss–Kronrod (7/15 points)
//! and fixed composite Gauss–Legendre for strongly oscillatory integrands.

use std::collections::BinaryHeap;
use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::{Complex, Real};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

const INITIAL_SEGMENTS: usize = 4;

/// Integrand values that the adaptive rule can sum: real or complex scalars.
pub trait QuadValue<T: Real>: Copy + std::ops::Add<Output = Self> + std::ops::Sub<Output = Self> {
    fn zero() -> Self;
    fn scale(self, w: T) -> Self;
    fn magnitude(self) -> T;
}

impl<T: Real> QuadValue<T> for T {
    fn zero() -> Self {
        T::zero()
    }
    fn scale(self, w: T) -> Self {
        self * w
    }
    fn magnitude(self) -> T {
        self.abs()
    }
}

impl<T: Real> QuadValue<T> for Complex<T> {
    fn zero() -> Self {
        Complex::new(T::zero(), T::zero())
    }
    fn scale(self, w: T) -> Self {
        Complex::new(self.re * w, self.im * w)
    }
    fn magnitude(self) -> T {
        (self.re * self.re + self.im * self.im).sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Integral<V> {
    pub value: V,
    pub error: f64,
    pub evaluations: usize,
}

fn gk15<T: Real, V: QuadValue<T>>(f: &mut impl FnMut(T) -> V, a: T, b: T) -> (V, T) {
    let half = (b - a) / T::c(2.0);
    let centre = (a + b) / T::c(2.0);
    let fc = f(centre);
    let mut kronrod = fc.scale(T::c(WGK[7]));
    let mut gauss = fc.scale(T::c(WG[3]));
    for i in 0..7 {
        let dx = half * T::c(XGK[i]);
        let s = f(centre - dx) + f(centre + dx);
        kronrod = kronrod + s.scale(T::c(WGK[i]));
        if i % 2 == 1 {
            gauss = gauss + s.scale(T::c(WG[i / 2]));
        }
    }
    // QUADPACK-style estimate: |K − G| rescaled by the spread of f about
    // its mean, which penalises panels where both rules agree by accident
    let mean = kronrod.scale(T::c(0.5));
    let mut spread = (fc - mean).magnitude() * T::c(WGK[7]);
    for i in 0..7 {
        let dx = half * T::c(XGK[i]);
        spread += ((f(centre - dx) - mean).magnitude() + (f(centre + dx) - mean).magnitude())
            * T::c(WGK[i]);
    }
    let spread = spread * half.abs();
    let value = kronrod.scale(half);
    let mut err = (kronrod - gauss).scale(half).magnitude();
    if spread > T::zero() && err > T::zero() {
        err = spread * T::one().min((T::c(200.0) * err / spread).powf(T::c(1.5)));
    }
    (value, err)
}

struct Segment<T, V> {
    a: T,
    b: T,
    value: V,
    error: T,
}

impl<T: Real, V> PartialEq for Segment<T, V> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<T: Real, V> Eq for Segment<T, V> {}
impl<T: Real, V> PartialOrd for Segment<T, V> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Real, V> Ord for Segment<T, V> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.partial_cmp(&other.error).unwrap_or(Ordering::Equal)
    }
}

/// Adaptive integration of `f` over `[a, b]` until the estimated absolute
/// error drops below `max(abs_tol, rel_tol·|I|)`.
pub fn adaptive<T: Real, V: QuadValue<T>>(
    mut f: impl FnMut(T) -> V,
    a: T,
    b: T,
    abs_tol: T,
    rel_tol: T,
    max_segments: usize,
) -> Result<Integral<V>> {
    if a == b {
        return Ok(Integral {
            value: V::zero(),
            error: 0.0,
            evaluations: 0,
        });
    }
    let mut heap = BinaryHeap::new();
    let mut total = V::zero();
    let mut total_err = T::zero();
    let width = (b - a) / T::from_count(INITIAL_SEGMENTS);
    for i in 0..INITIAL_SEGMENTS {
        let lo = a + width * T::from_count(i);
        let hi = if i + 1 == INITIAL_SEGMENTS { b } else { lo + width };
        let (value, error) = gk15(&mut f, lo, hi);
        total = total + value;
        total_err += error;
        heap.push(Segment { a: lo, b: hi, value, error });
    }
    let mut evaluations = 30 * INITIAL_SEGMENTS;
    loop {
        let tol = abs_tol.max(rel_tol * total.magnitude());
        if !total_err.is_finite() {
            return Err(Error::Quadrature("integrand is not finite".into()));
        }
        if total_err <= tol {
            break;
        }
        if heap.len() >= max_segments {
            return Err(Error::Quadrature(format!(
                "error estimate {:e} above tolerance {:e} after {} segments",
                total_err.as_f64(),
                tol.as_f64(),
                heap.len()
            )));
        }
        let worst = heap.pop().expect("nonempty");
        let mid = (worst.a + worst.b) / T::c(2.0);
        if mid <= worst.a || mid >= worst.b {
            return Err(Error::Quadrature(format!(
                "interval [{}, {}] cannot be bisected further",
                worst.a, worst.b
            )));
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        evaluations += 60;
        total = total - worst.value + v1 + v2;
        total_err = total_err - worst.error + e1 + e2;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
    }
    // re-sum to shed accumulated cancellation in the running totals
    let mut value = V::zero();
    let mut error = T::zero();
    for s in heap.iter() {
        value = value + s.value;
        error += s.error;
    }
    Ok(Integral {
        value,
        error: error.as_f64(),
        evaluations,
    })
}

/// Ten-point Gauss–Legendre nodes on [-1, 1] (positive half) and weights.
const GL10_X: [f64; 5] = [
    0.148874338981631210884826001129720,
    0.433395394129247190799265943165784,
    0.679409568299024406234327365114874,
    0.865063366688984510732096688423493,
    0.973906528517171720077964012084452,
];
const GL10_W: [f64; 5] = [
    0.295524224714752870173892994651338,
    0.269266719309996355091226921569469,
    0.219086362515982043995534934228163,
    0.149451349150580593145776339657697,
    0.066671344308688137593568255717220,
];

/// Composite ten-point Gauss–Legendre with `panels` equal panels.
pub fn composite_gauss<T: Real, V: QuadValue<T>>(
    mut f: impl FnMut(T) -> V,
    a: T,
    b: T,
    panels: usize,
) -> V {
    let h = (b - a) / T::from_count(panels);
    let mut acc = V::zero();
    for p in 0..panels {
        let lo = a + h * T::from_count(p);
        let c = lo + h / T::c(2.0);
        let half = h / T::c(2.0);
        let mut panel = V::zero();
        for i in 0..5 {
            let dx = half * T::c(GL10_X[i]);
            panel = panel + (f(c - dx) + f(c + dx)).scale(T::c(GL10_W[i]));
        }
        acc = acc + panel.scale(half);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_exact() {
        let r = adaptive(|x: f64| x.powi(5) - 3.0 * x * x, -1.0, 2.0, 1e-14, 0.0, 10).unwrap();
        assert_relative_eq!(r.value, 10.5 - 9.0, epsilon = 1e-13);
    }

    #[test]
    fn endpoint_sqrt_singularity() {
        let r = adaptive(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, 1e-10, 0.0, 500).unwrap();
        assert_relative_eq!(r.value, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn complex_oscillatory() {
        let r = adaptive(
            |x: f64| Complex::new((10.0 * x).cos(), -(10.0 * x).sin()),
            0.0,
            PI,
            1e-12,
            0.0,
            200,
        )
        .unwrap();
        // ∫ e^{-10ix} dx over [0, π] = (1 - e^{-10iπ}) / (10 i) = 0
        assert!(r.value.norm() < 1e-12);
    }

    #[test]
    fn composite_matches_adaptive() {
        let f = |x: f64| (x * 50.0).sin().powi(2) / (1.0 + x);
        let a = adaptive(f, 0.0, 3.0, 1e-13, 0.0, 1000).unwrap().value;
        let c: f64 = composite_gauss(f, 0.0, 3.0, 200);
        assert_relative_eq!(a, c, epsilon = 1e-12);
    }

    #[test]
    fn reports_failure() {
        let r = adaptive(|x: f64| 1.0 / x, 0.0, 1.0, 1e-12, 0.0, 50);
        assert!(r.is_err());
    }
}
