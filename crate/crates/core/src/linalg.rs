//! Small dense matrices and the linear solvers used by the grid code:
//! Thomas elimination for tridiagonal systems and matrix-free conjugate
//! gradients for the symmetric positive (semi)definite grid operators.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Dense d-by-d matrix, row major. Dimensions here are tiny (d = 1 or 2 in
/// practice), so everything is done directly.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub d: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(d: usize) -> Self {
        Mat {
            d,
            data: vec![0.0; d * d],
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Mat::zeros(d);
        for i in 0..d {
            m.data[i * d + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let d = rows.len();
        let mut data = Vec::with_capacity(d * d);
        for r in rows {
            assert_eq!(r.len(), d, "matrix rows must be square");
            data.extend_from_slice(r);
        }
        Mat { d, data }
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Mat::zeros(entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m.data[i * m.d + i] = v;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.d + j] = v;
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.d, other.d);
        let mut out = Mat::zeros(self.d);
        for i in 0..self.d {
            for k in 0..self.d {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..self.d {
                    out.data[i * self.d + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.d);
        (0..self.d)
            .map(|i| (0..self.d).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn scale(&self, c: f64) -> Mat {
        Mat {
            d: self.d,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// Frobenius norm of self - other.
    pub fn frobenius_distance(&self, other: &Mat) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Maximum |a_ij - a_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.d {
            for j in (i + 1)..self.d {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Lower-triangular Cholesky factor L with self = L L^T.
    ///
    /// Fails with the index of the first non-positive leading principal
    /// minor when the matrix is not positive definite.
    pub fn cholesky_lower(&self) -> Result<Mat> {
        let d = self.d;
        let mut l = Mat::zeros(d);
        for i in 0..d {
            for j in 0..=i {
                let mut sum = self.get(i, j);
                for k in 0..j {
                    sum -= l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(Error::validation(format!(
                            "matrix is not positive definite: leading minor of order {} is non-positive",
                            i + 1
                        )));
                    }
                    l.set(i, j, sum.sqrt());
                } else {
                    l.set(i, j, sum / l.get(j, j));
                }
            }
        }
        Ok(l)
    }

    /// Inverse via Gauss-Jordan with partial pivoting. Matrices are tiny.
    pub fn inverse(&self) -> Result<Mat> {
        let d = self.d;
        let mut a = self.data.clone();
        let mut inv = Mat::identity(d);
        for col in 0..d {
            let mut pivot = col;
            for r in (col + 1)..d {
                if a[r * d + col].abs() > a[pivot * d + col].abs() {
                    pivot = r;
                }
            }
            if a[pivot * d + col].abs() < 1e-300 {
                return Err(Error::validation("singular matrix".to_string()));
            }
            if pivot != col {
                for j in 0..d {
                    a.swap(col * d + j, pivot * d + j);
                    inv.data.swap(col * d + j, pivot * d + j);
                }
            }
            let p = a[col * d + col];
            for j in 0..d {
                a[col * d + j] /= p;
                inv.data[col * d + j] /= p;
            }
            for r in 0..d {
                if r == col {
                    continue;
                }
                let f = a[r * d + col];
                if f == 0.0 {
                    continue;
                }
                for j in 0..d {
                    a[r * d + j] -= f * a[col * d + j];
                    inv.data[r * d + j] -= f * inv.data[col * d + j];
                }
            }
        }
        Ok(inv)
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
    pub fn eigenvalues_symmetric(&self) -> Vec<f64> {
        let d = self.d;
        let mut a = self.data.clone();
        for _sweep in 0..64 {
            let mut off = 0.0;
            for i in 0..d {
                for j in (i + 1)..d {
                    off += a[i * d + j] * a[i * d + j];
                }
            }
            if off.sqrt() < 1e-14 {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    let apq = a[p * d + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let akp = a[k * d + p];
                        let akq = a[k * d + q];
                        a[k * d + p] = c * akp - s * akq;
                        a[k * d + q] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let apk = a[p * d + k];
                        let aqk = a[q * d + k];
                        a[p * d + k] = c * apk - s * aqk;
                        a[q * d + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ev
    }
}

/// Precomputed forward elimination for a tridiagonal system with fixed
/// coefficients, reusable across many right-hand sides (one implicit time
/// step per solve).
pub struct TriFactor {
    /// Modified superdiagonal after forward elimination.
    c_prime: Vec<f64>,
    /// Reciprocal of the modified main diagonal.
    inv_diag: Vec<f64>,
    sub: Vec<f64>,
}

impl TriFactor {
    /// Factor a tridiagonal matrix given by sub/main/super diagonals.
    /// `sub[i]` couples row i+1 to i, `sup[i]` couples row i to i+1.
    pub fn new(sub: &[f64], diag: &[f64], sup: &[f64]) -> Result<Self> {
        let n = diag.len();
        assert!(n >= 1 && sub.len() == n - 1 && sup.len() == n - 1);
        let mut c_prime = vec![0.0; n - 1];
        let mut inv_diag = vec![0.0; n];
        let mut denom = diag[0];
        if denom == 0.0 {
            return Err(Error::validation("tridiagonal pivot is zero at row 0"));
        }
        inv_diag[0] = 1.0 / denom;
        for i in 0..n - 1 {
            c_prime[i] = sup[i] * inv_diag[i];
            denom = diag[i + 1] - sub[i] * c_prime[i];
            if denom == 0.0 {
                return Err(Error::validation(format!(
                    "tridiagonal pivot is zero at row {}",
                    i + 1
                )));
            }
            inv_diag[i + 1] = 1.0 / denom;
        }
        Ok(TriFactor {
            c_prime,
            inv_diag,
            sub: sub.to_vec(),
        })
    }

    /// Solve in place.
    pub fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        assert_eq!(n, self.inv_diag.len());
        rhs[0] *= self.inv_diag[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.sub[i - 1] * rhs[i - 1]) * self.inv_diag[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.c_prime[i] * rhs[i + 1];
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn rms(v: &[f64]) -> f64 {
    (dot(v, v) / v.len() as f64).sqrt()
}

pub fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn project_out_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// In-place linear operator y = A x (or preconditioner z = M^-1 r).
pub type LinearOp<'a> = &'a dyn Fn(&[f64], &mut [f64]);

pub struct CgOutcome {
    pub iterations: usize,
    pub residual_rms: f64,
}

/// Matrix-free preconditioned conjugate gradients.
///
/// `apply` computes y = A x for the symmetric positive (semi)definite
/// operator, `precond` an SPD approximation of A^-1. With `project_mean`
/// set, the constant nullspace of the periodic cell operator is projected
/// out of the iterates, which keeps CG well posed for the singular
/// mean-zero problem.
///
/// Stops when the residual RMS drops to `tol`, or errs after `max_iter`.
pub fn conjugate_gradient(
    apply: LinearOp<'_>,
    b: &[f64],
    x: &mut [f64],
    precond: Option<LinearOp<'_>>,
    project_mean: bool,
    tol: f64,
    max_iter: usize,
    context: &str,
) -> Result<CgOutcome> {
    let n = b.len();
    let mut r = vec![0.0; n];
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    for i in 0..n {
        r[i] = b[i] - ax[i];
    }
    if project_mean {
        project_out_mean(&mut r);
    }
    let mut z = vec![0.0; n];
    let apply_precond = |r: &[f64], z: &mut [f64]| match precond {
        Some(m) => m(r, z),
        None => z.copy_from_slice(r),
    };
    apply_precond(&r, &mut z);
    if project_mean {
        project_out_mean(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = rms(&r);
    if res <= tol {
        return Ok(CgOutcome {
            iterations: 0,
            residual_rms: res,
        });
    }
    for it in 1..=max_iter {
        apply(&p, &mut ax);
        let pap = dot(&p, &ax);
        if pap <= 0.0 {
            return Err(Error::validation(format!(
                "operator lost positive definiteness in CG ({context}); ellipticity violated numerically"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ax[i];
        }
        if project_mean && it % 32 == 0 {
            project_out_mean(&mut r);
        }
        res = rms(&r);
        if res <= tol {
            if project_mean {
                project_out_mean(x);
            }
            return Ok(CgOutcome {
                iterations: it,
                residual_rms: res,
            });
        }
        apply_precond(&r, &mut z);
        if project_mean {
            project_out_mean(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: res,
        tol,
        context: context.to_string(),
    })
}

/// In-place radix-2 FFT (forward for `inverse = false`). Length must be a
/// power of two; the inverse includes the 1/n normalization.
pub fn fft_pow2(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    assert!(n.is_power_of_two(), "fft_pow2 needs power-of-two length");
    if n <= 1 {
        return;
    }
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            data.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let wlen = Complex64::from_polar(1.0, ang);
        let mut i = 0;
        while i < n {
            let mut w = Complex64::new(1.0, 0.0);
            for k in 0..len / 2 {
                let u = data[i + k];
                let v = data[i + k + len / 2] * w;
                data[i + k] = u + v;
                data[i + k + len / 2] = u - v;
                w *= wlen;
            }
            i += len;
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Discrete Fourier transform of any length: radix-2 FFT when possible,
/// otherwise the naive O(n^2) sum (cell grids here are small).
pub fn fourier(input: &[Complex64], inverse: bool) -> Vec<Complex64> {
    if input.len().is_power_of_two() {
        let mut data = input.to_vec();
        fft_pow2(&mut data, inverse);
        data
    } else {
        dft(input, if inverse { 1.0 } else { -1.0 })
    }
}

/// Separable d-dimensional transform on a tensor grid with n points per
/// axis, row-major layout.
pub fn fourier_nd(data: &mut [Complex64], d: usize, n: usize, inverse: bool) {
    let len = data.len();
    assert_eq!(len, n.pow(d as u32));
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        for start in 0..len {
            if (start / stride) % n != 0 {
                continue;
            }
            for t in 0..n {
                line[t] = data[start + t * stride];
            }
            let transformed = fourier(&line, inverse);
            for t in 0..n {
                data[start + t * stride] = transformed[t];
            }
        }
    }
}

/// Naive DFT along a length-n sequence; n is a few hundred at most here so
/// the O(n^2) cost is irrelevant and the implementation stays dependency-free.
/// `sign` is -1 for the forward transform and +1 for the inverse (the inverse
/// also divides by n).
pub fn dft(input: &[Complex64], sign: f64) -> Vec<Complex64> {
    let n = input.len();
    let base = sign * 2.0 * std::f64::consts::PI / n as f64;
    let twiddle: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, base * k as f64))
        .collect();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, v) in input.iter().enumerate() {
            acc += v * twiddle[(k * j) % n];
        }
        if sign > 0.0 {
            acc /= n as f64;
        }
        out.push(acc);
    }
    out
}
