//! Small dense linear algebra for the n <= 3 (occasionally a bit larger)
//! matrices that show up in observer and Lyapunov analysis.

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::scalar::{Field, Real};

/// Row-major square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Clone + Zero + One> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    /// Builds a matrix from rows. Panics if the rows are not all of length `rows.len()`.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), n, "matrix must be square");
            data.extend_from_slice(r);
        }
        Self { n, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j].clone()
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.n, rhs.n);
        let mut out = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let mut acc = T::zero();
                for k in 0..self.n {
                    acc = acc + self.get(i, k) * rhs.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn map<U, F: Fn(T) -> U>(&self, f: F) -> SquareMatrix<U> {
        SquareMatrix {
            n: self.n,
            data: self.data.iter().cloned().map(f).collect(),
        }
    }
}

impl<T: Real> SquareMatrix<T> {
    /// Largest absolute entry.
    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting on |a_ij|.
///
/// Returns `None` for a singular system. Works for exact fields as well as
/// floats; for floats "singular" means an exactly zero pivot.
pub fn solve_linear<F: Field>(a: &[Vec<F>], b: &[F]) -> Option<Vec<F>> {
    let n = b.len();
    assert_eq!(a.len(), n);
    let mut m: Vec<Vec<F>> = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            assert_eq!(row.len(), n);
            let mut r = row.clone();
            r.push(rhs.clone());
            r
        })
        .collect();

    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            m[i][col]
                .magnitude()
                .partial_cmp(&m[j][col].magnitude())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if m[pivot][col].is_zero() {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..n {
            if m[row][col].is_zero() {
                continue;
            }
            let factor = m[row][col].clone() / m[col][col].clone();
            for k in col..=n {
                let delta = factor.clone() * m[col][k].clone();
                m[row][k] = m[row][k].clone() - delta;
            }
        }
    }

    let mut x = vec![F::zero(); n];
    for row in (0..n).rev() {
        let mut acc = m[row][n].clone();
        for k in row + 1..n {
            acc = acc - m[row][k].clone() * x[k].clone();
        }
        x[row] = acc / m[row][row].clone();
    }
    Some(x)
}

/// Eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues<T: Real>(m: &SquareMatrix<T>) -> Vec<T> {
    let n = m.dim();
    let mut a = m.clone();
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j) * a.get(i, j))
            .sum();
        let diag: T = (0..n).map(|i| a.get(i, i) * a.get(i, i)).sum();
        if off <= eps * eps * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == T::zero() {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let mut ev: Vec<T> = (0..n).map(|i| a.get(i, i)).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

/// Coefficients `[c1, .., cn]` of the monic characteristic polynomial
/// `s^n + c1 s^(n-1) + .. + cn` (Faddeev-LeVerrier).
pub fn characteristic_polynomial<T: Real>(m: &SquareMatrix<T>) -> Vec<T> {
    let n = m.dim();
    let mut coeffs = Vec::with_capacity(n);
    let mut mk = SquareMatrix::<T>::zeros(n);
    let mut c_prev = T::one();
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{k-1} I
        let mut next = m.matmul(&mk);
        for i in 0..n {
            next.set(i, i, next.get(i, i) + c_prev);
        }
        mk = next;
        let am = m.matmul(&mk);
        let trace: T = (0..n).map(|i| am.get(i, i)).sum();
        let ck = -trace / T::from_usize_lossy(k);
        coeffs.push(ck);
        c_prev = ck;
    }
    coeffs
}

/// Roots of the monic polynomial `s^n + c1 s^(n-1) + .. + cn` by
/// Durand-Kerner iteration.
pub fn polynomial_roots<T: Real>(coeffs: &[T]) -> Vec<Complex<T>> {
    let n = coeffs.len();
    if n == 0 {
        return Vec::new();
    }
    let eval = |z: Complex<T>| {
        let mut acc = Complex::new(T::one(), T::zero());
        for c in coeffs {
            acc = acc * z + Complex::new(*c, T::zero());
        }
        acc
    };
    // Cauchy bound on root magnitude sets the initial circle.
    let radius = T::one() + coeffs.iter().fold(T::zero(), |m, c| m.max(c.abs()));
    let seed = Complex::new(T::lit(0.4), T::lit(0.9));
    let mut roots: Vec<Complex<T>> = (0..n)
        .map(|i| seed.powu(i as u32) * radius * T::lit(0.5))
        .collect();
    for _ in 0..2000 {
        let mut delta = T::zero();
        for i in 0..n {
            let zi = roots[i];
            let mut denom = Complex::new(T::one(), T::zero());
            for (j, zj) in roots.iter().enumerate() {
                if j != i {
                    denom *= zi - zj;
                }
            }
            if denom.norm() == T::zero() {
                continue;
            }
            let step = eval(zi) / denom;
            roots[i] = zi - step;
            delta = delta.max(step.norm());
        }
        if delta <= T::epsilon() * radius {
            break;
        }
    }
    roots
}

/// Eigenvalues of a general square matrix through its characteristic polynomial.
pub fn eigenvalues<T: Real>(m: &SquareMatrix<T>) -> Vec<Complex<T>> {
    polynomial_roots(&characteristic_polynomial(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use num_rational::Ratio;

    #[test]
    fn solve_small_system() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve_linear(&a, &[3.0, 5.0]).unwrap();
        assert_relative_eq!(x[0], 0.8, epsilon = 1e-14);
        assert_relative_eq!(x[1], 1.4, epsilon = 1e-14);
    }

    #[test]
    fn solve_exact_rational() {
        let r = |v: i64| Ratio::from_integer(v);
        let a = vec![vec![r(2), r(1)], vec![r(1), r(3)]];
        let x = solve_linear(&a, &[r(3), r(5)]).unwrap();
        assert_eq!(x, vec![Ratio::new(4, 5), Ratio::new(7, 5)]);
    }

    #[test]
    fn singular_system_is_none() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(solve_linear(&a, &[1.0, 2.0]).is_none());
    }

    #[test]
    fn jacobi_on_known_matrix() {
        // eigenvalues of [[3,1],[1,1]] are 2 -+ sqrt(2)
        let m = SquareMatrix::from_rows(&[[3.0, 1.0], [1.0, 1.0]]);
        let ev = symmetric_eigenvalues(&m);
        assert_relative_eq!(ev[0], 2.0 - 2f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(ev[1], 2.0 + 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn char_poly_of_companion() {
        let h = SquareMatrix::from_rows(&[[-6.0, 1.0, 0.0], [-11.0, 0.0, 1.0], [-6.0, 0.0, 0.0]]);
        let c = characteristic_polynomial(&h);
        assert_relative_eq!(c[0], 6.0, epsilon = 1e-12);
        assert_relative_eq!(c[1], 11.0, epsilon = 1e-12);
        assert_relative_eq!(c[2], 6.0, epsilon = 1e-12);
        let mut re: Vec<f64> = eigenvalues(&h).iter().map(|z| z.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(re[0], -3.0, epsilon = 1e-9);
        assert_relative_eq!(re[1], -2.0, epsilon = 1e-9);
        assert_relative_eq!(re[2], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn complex_pair_roots() {
        // s^2 + 2s + 5 -> -1 +- 2i
        let r = polynomial_roots(&[2.0f64, 5.0]);
        for z in r {
            assert_relative_eq!(z.re, -1.0, epsilon = 1e-10);
            assert_relative_eq!(z.im.abs(), 2.0, epsilon = 1e-10);
        }
    }
}
