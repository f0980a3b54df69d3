//! Small dense complex linear algebra: matrix exponential, LU solves and
//! a handful of helpers shared by the single-particle and Fock-space code.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = Array2<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };
pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    Array2::eye(n)
}

pub fn dagger(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

pub fn trace(a: &CMat) -> C64 {
    a.diag().sum()
}

/// Tr(a b) without forming the product.
pub fn trace_product(a: ArrayView2<C64>, b: ArrayView2<C64>) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for k in 0..n {
            acc += a[[i, k]] * b[[k, i]];
        }
    }
    acc
}

/// Induced 1-norm (maximum absolute column sum).
pub fn norm_one(a: &CMat) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest entry modulus.
pub fn norm_max(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Hermiticity defect ‖a − a†‖ in the max-entry norm.
pub fn hermiticity_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut d: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            d = d.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    d
}

/// Kronecker product a ⊗ b.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = CMat::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let s = a[[i, j]];
            if s == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = s * b[[k, l]];
                }
            }
        }
    }
    out
}

/// LU factorization with partial pivoting, stored in place.
pub struct Lu {
    lu: CMat,
    piv: Vec<usize>,
}

impl Lu {
    /// Returns `None` when a pivot vanishes.
    pub fn new(mut a: CMat) -> Option<Lu> {
        let n = a.nrows();
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, a[[i, k]].norm()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax == 0.0 {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.swap([k, j], [p, j]);
                }
                piv.swap(k, p);
            }
            let inv = ONE / a[[k, k]];
            for i in (k + 1)..n {
                let f = a[[i, k]] * inv;
                a[[i, k]] = f;
                if f == ZERO {
                    continue;
                }
                for j in (k + 1)..n {
                    let akj = a[[k, j]];
                    a[[i, j]] -= f * akj;
                }
            }
        }
        Some(Lu { lu: a, piv })
    }

    /// Solves a x = b for a matrix right-hand side.
    pub fn solve(&self, b: &CMat) -> CMat {
        let n = self.lu.nrows();
        let m = b.ncols();
        let mut x = CMat::zeros((n, m));
        for i in 0..n {
            for j in 0..m {
                x[[i, j]] = b[[self.piv[i], j]];
            }
        }
        for col in 0..m {
            for i in 0..n {
                let mut s = x[[i, col]];
                for k in 0..i {
                    s -= self.lu[[i, k]] * x[[k, col]];
                }
                x[[i, col]] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[[i, col]];
                for k in (i + 1)..n {
                    s -= self.lu[[i, k]] * x[[k, col]];
                }
                x[[i, col]] = s / self.lu[[i, i]];
            }
        }
        x
    }
}

/// Matrix exponential by scaling and squaring with a diagonal [8/8] Padé
/// approximant. The scaled norm is kept below 1/2, where the truncation
/// error of the approximant is far below 1e−13.
pub fn expm(a: &CMat) -> CMat {
    const Q: usize = 8;
    let n = a.nrows();
    let norm = norm_one(a);
    let mut s = 0i32;
    if norm > 0.5 {
        s = (norm / 0.5).log2().ceil() as i32;
    }
    let scaled = a.mapv(|z| z / 2f64.powi(s));

    // c_k = (2q−k)! q! / ((2q)! k! (q−k)!)
    let mut coef = vec![1.0f64; Q + 1];
    for k in 1..=Q {
        coef[k] = coef[k - 1] * ((Q - k + 1) as f64) / ((k * (2 * Q - k + 1)) as f64);
    }
    let mut num = identity(n);
    let mut den = identity(n);
    let mut power = identity(n);
    for (k, &ck) in coef.iter().enumerate().skip(1) {
        power = power.dot(&scaled);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        num.scaled_add(C64::from(ck), &power);
        den.scaled_add(C64::from(sign * ck), &power);
    }
    let mut r = Lu::new(den)
        .expect("Padé denominator is nonsingular for scaled norm below 1/2")
        .solve(&num);
    for _ in 0..s {
        r = r.dot(&r);
    }
    r
}

/// Cholesky test for positive semidefiniteness of a Hermitian matrix, with
/// a small diagonal shift absorbing rounding on singular states.
pub fn is_positive_semidefinite(a: &CMat, shift: f64) -> bool {
    let n = a.nrows();
    let mut l = CMat::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]].re + shift;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if d <= 0.0 {
            return false;
        }
        let djj = d.sqrt();
        l[[j, j]] = C64::from(djj);
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / djj;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expm_of_diagonal_matches_scalar_exponentials() {
        let mut a = CMat::zeros((3, 3));
        a[[0, 0]] = c(0.3, 2.0);
        a[[1, 1]] = c(-1.5, 0.0);
        a[[2, 2]] = c(0.0, -7.0);
        let e = expm(&a);
        for k in 0..3 {
            assert_relative_eq!((e[[k, k]] - a[[k, k]].exp()).norm(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn expm_rotation_generator() {
        // exp(θ [[0,-1],[1,0]]) = [[cos, -sin],[sin, cos]]
        let th = 2.7;
        let mut a = CMat::zeros((2, 2));
        a[[0, 1]] = c(-th, 0.0);
        a[[1, 0]] = c(th, 0.0);
        let e = expm(&a);
        assert_relative_eq!(e[[0, 0]].re, th.cos(), epsilon = 1e-14);
        assert_relative_eq!(e[[1, 0]].re, th.sin(), epsilon = 1e-14);
        assert_relative_eq!(e[[0, 1]].re, -th.sin(), epsilon = 1e-14);
    }

    #[test]
    fn lu_solves_random_system() {
        let a = ndarray::arr2(&[
            [c(1.0, 2.0), c(0.5, 0.0), c(0.0, -1.0)],
            [c(0.0, 0.0), c(3.0, 0.0), c(1.0, 1.0)],
            [c(2.0, 0.0), c(0.0, 0.3), c(-1.0, 0.0)],
        ]);
        let b = ndarray::arr2(&[[c(1.0, 0.0)], [c(0.0, 1.0)], [c(2.0, -1.0)]]);
        let x = Lu::new(a.clone()).unwrap().solve(&b);
        let r = a.dot(&x) - &b;
        assert!(norm_max(&r) < 1e-14);
    }
}
