//! Periodic coefficient fields and their cell problems.
//!
//! The corrector chi_j for component j is the 1-periodic, mean-zero solution
//! of
//!
//! ```text
//! (d_s - div(A(y,s) grad)) chi_j = div(A(y,s) e_j)   on the unit cell,
//! ```
//!
//! so that chi_j + y_j is annihilated by the oscillating operator. Averaging
//! the corrected fluxes over the cell yields the constant effective tensor
//!
//! ```text
//! a^_ij = mean( a_ij + a_ik d chi_j / d y_k ).
//! ```
//!
//! Time-independent fields reduce to the elliptic cell problem; genuinely
//! time-dependent fields are handled by marching the periodic parabolic
//! problem over successive periods until the period map is a contraction
//! below tolerance.
//!
//! The module also solves the elliptic potential cell problem
//! `laplace psi = mean(V) - V` on the torus, used by the potential-equation
//! verification pipeline.

use crate::error::{Error, Result};
use crate::geometry::{factor_s, HomogenizedTensor};
use crate::linalg::{conjugate_gradient, fourier_nd, rms, Mat};
use num_complex::Complex64;
use std::cell::RefCell;
use std::sync::Arc;

/// Evaluator signature: writes the d*d row-major matrix A(y, s) into `out`.
pub type FieldEval = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;

/// A 1-periodic symmetric matrix field A(y, s) with ellipticity constant mu
/// and Hoelder data (tau, lambda).
#[derive(Clone)]
pub struct CoefficientField {
    pub d: usize,
    pub mu: f64,
    pub tau: f64,
    pub lambda: f64,
    pub time_dependent: bool,
    pub name: String,
    diagonal: bool,
    eval: Arc<FieldEval>,
}

impl std::fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientField")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("mu", &self.mu)
            .field("time_dependent", &self.time_dependent)
            .finish()
    }
}

impl CoefficientField {
    pub fn from_fn(
        name: impl Into<String>,
        d: usize,
        mu: f64,
        tau: f64,
        lambda: f64,
        time_dependent: bool,
        eval: Arc<FieldEval>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::validation("dimension must be at least 1"));
        }
        if !(mu > 0.0 && mu <= 1.0) {
            return Err(Error::validation(format!(
                "ellipticity constant must satisfy 0 < mu <= 1, got {mu}"
            )));
        }
        let mut field = CoefficientField {
            d,
            mu,
            tau,
            lambda,
            time_dependent,
            name: name.into(),
            diagonal: true,
            eval,
        };
        field.diagonal = field.sampled_diagonal();
        Ok(field)
    }

    /// A = I.
    pub fn identity(d: usize) -> Self {
        Self::from_fn(
            "identity",
            d,
            1.0,
            0.0,
            0.5,
            false,
            Arc::new(move |_y, _s, out: &mut [f64]| {
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = 1.0;
                }
            }),
        )
        .unwrap()
    }

    /// A = c I for a constant c > 0.
    pub fn constant(d: usize, c: f64) -> Result<Self> {
        if c <= 0.0 {
            return Err(Error::validation(format!(
                "constant coefficient must be positive, got {c}"
            )));
        }
        Self::from_fn(
            format!("constant({c})"),
            d,
            c.min(1.0 / c),
            0.0,
            0.5,
            false,
            Arc::new(move |_y, _s, out: &mut [f64]| {
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = c;
                }
            }),
        )
    }

    /// Laminate a(y) = 2 + sin(2 pi y_1) times the identity.
    pub fn laminate(d: usize) -> Self {
        Self::from_fn(
            "laminate",
            d,
            1.0 / 3.0,
            2.0 * std::f64::consts::PI,
            0.99,
            false,
            Arc::new(move |y: &[f64], _s, out: &mut [f64]| {
                let a = 2.0 + (2.0 * std::f64::consts::PI * y[0]).sin();
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = a;
                }
            }),
        )
        .unwrap()
    }

    /// Even laminate a(y) = 2 + cos(2 pi y_1), symmetric under y -> -y.
    pub fn laminate_cos(d: usize) -> Self {
        Self::from_fn(
            "laminate-cos",
            d,
            1.0 / 3.0,
            2.0 * std::f64::consts::PI,
            0.99,
            false,
            Arc::new(move |y: &[f64], _s, out: &mut [f64]| {
                let a = 2.0 + (2.0 * std::f64::consts::PI * y[0]).cos();
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = a;
                }
            }),
        )
        .unwrap()
    }

    /// Space-time laminate a(y, s) = 2 + sin(2 pi (y_1 + s)) times identity.
    pub fn laminate_time(d: usize) -> Self {
        Self::from_fn(
            "laminate-time",
            d,
            1.0 / 3.0,
            2.0 * std::f64::consts::PI,
            0.99,
            true,
            Arc::new(move |y: &[f64], s: f64, out: &mut [f64]| {
                let a = 2.0 + (2.0 * std::f64::consts::PI * (y[0] + s)).sin();
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = a;
                }
            }),
        )
        .unwrap()
    }

    /// Built-in field registry for config files.
    pub fn builtin(name: &str, d: usize, parameter: f64) -> Result<Self> {
        match name {
            "identity" => Ok(Self::identity(d)),
            "constant" => Self::constant(d, parameter),
            "laminate" => Ok(Self::laminate(d)),
            "laminate-cos" => Ok(Self::laminate_cos(d)),
            "laminate-time" => Ok(Self::laminate_time(d)),
            other => Err(Error::validation(format!(
                "unknown coefficient field '{other}' (expected identity | constant | laminate | laminate-cos | laminate-time)"
            ))),
        }
    }

    pub fn evaluate(&self, y: &[f64], s: f64, out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.d);
        debug_assert_eq!(out.len(), self.d * self.d);
        (self.eval)(y, s, out);
    }

    pub fn matrix(&self, y: &[f64], s: f64) -> Mat {
        let mut m = Mat::zeros(self.d);
        self.evaluate(y, s, &mut m.data);
        m
    }

    /// Diagonal entry a_kk(y, s) without heap traffic.
    #[inline]
    pub fn diag_entry(&self, axis: usize, y: &[f64], s: f64) -> f64 {
        debug_assert!(self.d <= 4, "stack scratch sized for d <= 4");
        let mut buf = [0.0f64; 16];
        (self.eval)(y, s, &mut buf[..self.d * self.d]);
        buf[axis * self.d + axis]
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// The field with time reversed, A~(y, s) = A(y, -s). Its correctors are
    /// the dual correctors entering the gradient asymptotics.
    pub fn time_reversed(&self) -> Self {
        let inner = Arc::clone(&self.eval);
        CoefficientField {
            d: self.d,
            mu: self.mu,
            tau: self.tau,
            lambda: self.lambda,
            time_dependent: self.time_dependent,
            name: format!("{}-reversed", self.name),
            diagonal: self.diagonal,
            eval: Arc::new(move |y: &[f64], s: f64, out: &mut [f64]| inner(y, -s, out)),
        }
    }

    fn sampled_diagonal(&self) -> bool {
        let d = self.d;
        let mut buf = vec![0.0; d * d];
        for p in 0..17 {
            let y: Vec<f64> = (0..d)
                .map(|k| ((p * (k + 3)) as f64 * 0.381966).fract())
                .collect();
            let s = (p as f64 * 0.2360679).fract();
            self.evaluate(&y, s, &mut buf);
            for i in 0..d {
                for j in 0..d {
                    if i != j && buf[i * d + j].abs() > 1e-14 {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Sampled check of symmetry, ellipticity, and 1-periodicity.
    pub fn check_invariants(&self) -> Result<()> {
        let d = self.d;
        let mut a = vec![0.0; d * d];
        let mut shifted = vec![0.0; d * d];
        for p in 0..40usize {
            let y: Vec<f64> = (0..d)
                .map(|k| ((p * (2 * k + 5)) as f64 * 0.6180339887).fract())
                .collect();
            let s = (p as f64 * 0.4142135).fract();
            self.evaluate(&y, s, &mut a);
            for i in 0..d {
                for j in 0..d {
                    if (a[i * d + j] - a[j * d + i]).abs() > 1e-12 {
                        return Err(Error::validation(format!(
                            "field '{}' is not symmetric at sampled point",
                            self.name
                        )));
                    }
                }
            }
            // Ellipticity on a few fixed directions.
            for dir in 0..(2 * d) {
                let mut xi = vec![0.0; d];
                if dir < d {
                    xi[dir] = 1.0;
                } else {
                    let inv = 1.0 / (d as f64).sqrt();
                    for (k, x) in xi.iter_mut().enumerate() {
                        *x = if (dir + k) % 2 == 0 { inv } else { -inv };
                    }
                }
                let axi: f64 = (0..d)
                    .map(|i| {
                        xi[i] * (0..d).map(|j| a[i * d + j] * xi[j]).sum::<f64>()
                    })
                    .sum();
                if axi < self.mu - 1e-9 || axi > 1.0 / self.mu + 1e-9 {
                    return Err(Error::validation(format!(
                        "field '{}' violates ellipticity bracket [{:.3}, {:.3}]: got {:.6}",
                        self.name,
                        self.mu,
                        1.0 / self.mu,
                        axi
                    )));
                }
            }
            // Periodicity under integer shifts.
            let mut yz: Vec<f64> = y.clone();
            for (k, v) in yz.iter_mut().enumerate() {
                *v += ((p + k) % 3) as f64;
            }
            self.evaluate(&yz, s + ((p % 2) + 1) as f64, &mut shifted);
            for idx in 0..d * d {
                if (a[idx] - shifted[idx]).abs() > 1e-9 {
                    return Err(Error::validation(format!(
                        "field '{}' is not 1-periodic at sampled shift",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Cell grid sizes for the corrector solves.
#[derive(Debug, Clone, Copy)]
pub struct CellResolution {
    pub n_space: usize,
    pub n_time: usize,
}

impl CellResolution {
    pub fn new(n_space: usize, n_time: usize) -> Self {
        CellResolution { n_space, n_time }
    }
}

/// Solved corrector: periodic grid samples of chi_j and of its face-centered
/// gradient, plus solve diagnostics.
#[derive(Debug, Clone)]
pub struct CorrectorField {
    pub component: usize,
    pub d: usize,
    pub n_space: usize,
    /// Number of stored time levels; 1 for time-independent fields.
    pub n_time: usize,
    pub time_dependent: bool,
    /// chi samples, level-major: values[level * n^d + flat].
    pub values: Vec<f64>,
    /// Face-centered gradient samples: gradient[(level*d + axis)*n^d + flat]
    /// holds d chi / d y_axis at the face between `flat` and its east
    /// neighbor along `axis`, i.e. at y + (h/2) e_axis.
    pub gradient: Vec<f64>,
    /// RMS residual of the discrete cell equation.
    pub residual: f64,
    /// Period-map iterations (0 for the elliptic reduction).
    pub periods: usize,
}

impl CorrectorField {
    fn torus(&self) -> Torus {
        Torus::new(self.d, self.n_space)
    }

    pub fn len_space(&self) -> usize {
        self.n_space.pow(self.d as u32)
    }

    /// Cell average of chi over all stored levels.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_gradient(&self) -> f64 {
        self.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()))
    }

    /// chi at an arbitrary point by periodic multilinear interpolation.
    pub fn value_at(&self, y: &[f64], s: f64) -> f64 {
        let torus = self.torus();
        self.time_interp(s, |level| {
            let base = level * self.len_space();
            torus.interp(&self.values[base..base + self.len_space()], y, 0.0)
        })
    }

    /// Gradient component d chi / d y_axis at an arbitrary point. Samples
    /// are staggered half a cell along `axis`.
    pub fn grad_component_at(&self, axis: usize, y: &[f64], s: f64) -> f64 {
        let torus = self.torus();
        let len = self.len_space();
        self.time_interp(s, |level| {
            let base = (level * self.d + axis) * len;
            let mut shifted = y.to_vec();
            shifted[axis] -= 0.5 * torus.h;
            torus.interp(&self.gradient[base..base + len], &shifted, 0.0)
        })
    }

    pub fn grad_at(&self, y: &[f64], s: f64) -> Vec<f64> {
        (0..self.d)
            .map(|axis| self.grad_component_at(axis, y, s))
            .collect()
    }

    fn time_interp(&self, s: f64, level_value: impl Fn(usize) -> f64) -> f64 {
        if !self.time_dependent || self.n_time == 1 {
            return level_value(0);
        }
        let pos = (s.rem_euclid(1.0)) * self.n_time as f64;
        let l0 = pos.floor() as usize % self.n_time;
        let frac = pos - pos.floor();
        let l1 = (l0 + 1) % self.n_time;
        (1.0 - frac) * level_value(l0) + frac * level_value(l1)
    }
}

/// Flat-indexed periodic tensor grid with n points per axis.
struct Torus {
    d: usize,
    n: usize,
    h: f64,
    len: usize,
    strides: Vec<usize>,
}

impl Torus {
    fn new(d: usize, n: usize) -> Self {
        let strides: Vec<usize> = (0..d).map(|k| n.pow((d - 1 - k) as u32)).collect();
        Torus {
            d,
            n,
            h: 1.0 / n as f64,
            len: n.pow(d as u32),
            strides,
        }
    }

    #[inline]
    fn coord(&self, flat: usize, axis: usize) -> usize {
        (flat / self.strides[axis]) % self.n
    }

    #[inline]
    fn east(&self, flat: usize, axis: usize) -> usize {
        let c = self.coord(flat, axis);
        if c + 1 < self.n {
            flat + self.strides[axis]
        } else {
            flat - (self.n - 1) * self.strides[axis]
        }
    }

    #[inline]
    fn west(&self, flat: usize, axis: usize) -> usize {
        let c = self.coord(flat, axis);
        if c > 0 {
            flat - self.strides[axis]
        } else {
            flat + (self.n - 1) * self.strides[axis]
        }
    }

    fn point(&self, flat: usize) -> Vec<f64> {
        (0..self.d)
            .map(|axis| self.coord(flat, axis) as f64 * self.h)
            .collect()
    }

    /// Periodic multilinear interpolation of node samples.
    fn interp(&self, values: &[f64], y: &[f64], _s: f64) -> f64 {
        let mut base = vec![0usize; self.d];
        let mut frac = vec![0.0f64; self.d];
        for k in 0..self.d {
            let pos = y[k].rem_euclid(1.0) * self.n as f64;
            let b = pos.floor();
            base[k] = (b as usize) % self.n;
            frac[k] = pos - b;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.d) {
            let mut flat = 0usize;
            let mut w = 1.0;
            for k in 0..self.d {
                let bit = (corner >> k) & 1;
                let idx = (base[k] + bit) % self.n;
                flat += idx * self.strides[k];
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
            }
            acc += w * values[flat];
        }
        acc
    }
}

/// Face-centered diagonal coefficients at one time level:
/// `coeff[axis][flat]` = a_axis,axis at the east face of `flat`.
fn face_coefficients(field: &CoefficientField, torus: &Torus, s: f64) -> Vec<Vec<f64>> {
    (0..torus.d)
        .map(|axis| {
            (0..torus.len)
                .map(|flat| {
                    let mut y = torus.point(flat);
                    y[axis] += 0.5 * torus.h;
                    field.diag_entry(axis, &y, s)
                })
                .collect()
        })
        .collect()
}

/// y = (shift + L) x with L = -div(a grad) in flux form.
fn apply_operator(torus: &Torus, coeff: &[Vec<f64>], shift: f64, x: &[f64], y: &mut [f64]) {
    let inv_h2 = 1.0 / (torus.h * torus.h);
    match torus.d {
        1 => {
            let n = torus.n;
            let c = &coeff[0];
            for i in 0..n {
                let e = if i + 1 < n { i + 1 } else { 0 };
                let w = if i > 0 { i - 1 } else { n - 1 };
                let flux_e = c[i] * (x[e] - x[i]);
                let flux_w = c[w] * (x[i] - x[w]);
                y[i] = shift * x[i] + (flux_w - flux_e) * inv_h2;
            }
        }
        2 => {
            let n = torus.n;
            let (c0, c1) = (&coeff[0], &coeff[1]);
            for i0 in 0..n {
                let north = if i0 + 1 < n { i0 + 1 } else { 0 } * n;
                let south = if i0 > 0 { i0 - 1 } else { n - 1 } * n;
                let row = i0 * n;
                for i1 in 0..n {
                    let f = row + i1;
                    let e1 = row + if i1 + 1 < n { i1 + 1 } else { 0 };
                    let w1 = row + if i1 > 0 { i1 - 1 } else { n - 1 };
                    let flux_e0 = c0[f] * (x[north + i1] - x[f]);
                    let flux_w0 = c0[south + i1] * (x[f] - x[south + i1]);
                    let flux_e1 = c1[f] * (x[e1] - x[f]);
                    let flux_w1 = c1[w1] * (x[f] - x[w1]);
                    y[f] = shift * x[f] + (flux_w0 - flux_e0 + flux_w1 - flux_e1) * inv_h2;
                }
            }
        }
        _ => {
            for f in 0..torus.len {
                let mut acc = shift * x[f];
                for axis in 0..torus.d {
                    let e = torus.east(f, axis);
                    let w = torus.west(f, axis);
                    let flux_e = coeff[axis][f] * (x[e] - x[f]);
                    let flux_w = coeff[axis][w] * (x[f] - x[w]);
                    acc += (flux_w - flux_e) * inv_h2;
                }
                y[f] = acc;
            }
        }
    }
}

/// Right-hand side div(A e_j) in flux form.
fn divergence_rhs(torus: &Torus, coeff: &[Vec<f64>], j: usize) -> Vec<f64> {
    let inv_h = 1.0 / torus.h;
    (0..torus.len)
        .map(|f| (coeff[j][f] - coeff[j][torus.west(f, j)]) * inv_h)
        .collect()
}

/// Spectral preconditioner: inverse of (shift + c0 * discrete Laplacian) on
/// the torus, applied through FFTs. For shift = 0 the zero mode is projected
/// out, matching the mean-zero cell problem.
struct SpectralPrecond {
    d: usize,
    n: usize,
    inv_symbol: Vec<f64>,
    work: RefCell<Vec<Complex64>>,
}

impl SpectralPrecond {
    fn new(torus: &Torus, c0: f64, shift: f64) -> Self {
        let (d, n, h) = (torus.d, torus.n, torus.h);
        let mut inv_symbol = vec![0.0; torus.len];
        for (f, slot) in inv_symbol.iter_mut().enumerate() {
            let mut lambda = 0.0;
            for axis in 0..d {
                let kappa = (f / torus.strides[axis]) % n;
                let s = (std::f64::consts::PI * kappa as f64 / n as f64).sin();
                lambda += 4.0 * s * s / (h * h);
            }
            let denom = shift + c0 * lambda;
            *slot = if denom.abs() < 1e-300 { 0.0 } else { 1.0 / denom };
        }
        SpectralPrecond {
            d,
            n,
            inv_symbol,
            work: RefCell::new(vec![Complex64::new(0.0, 0.0); torus.len]),
        }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let mut work = self.work.borrow_mut();
        for (w, &v) in work.iter_mut().zip(r) {
            *w = Complex64::new(v, 0.0);
        }
        fourier_nd(&mut work, self.d, self.n, false);
        for (w, &s) in work.iter_mut().zip(&self.inv_symbol) {
            *w *= s;
        }
        fourier_nd(&mut work, self.d, self.n, true);
        for (out, w) in z.iter_mut().zip(work.iter()) {
            *out = w.re;
        }
    }
}

fn mean_face_coefficient(coeff: &[Vec<f64>]) -> f64 {
    let total: f64 = coeff.iter().map(|c| c.iter().sum::<f64>()).sum();
    total / (coeff.len() * coeff[0].len()) as f64
}

fn validate_cell_inputs(field: &CoefficientField, j: usize, res: CellResolution, tol: f64) -> Result<()> {
    if j >= field.d {
        return Err(Error::validation(format!(
            "component index {j} out of range for d={}",
            field.d
        )));
    }
    if res.n_space < 8 || (field.time_dependent && res.n_time < 8) {
        return Err(Error::validation(
            "cell resolution must be at least 8 points per axis",
        ));
    }
    if tol <= 0.0 {
        return Err(Error::validation("tolerance must be positive"));
    }
    if !field.is_diagonal() {
        return Err(Error::validation(format!(
            "field '{}' has off-diagonal entries; the cell solver supports diagonal coefficient matrices",
            field.name
        )));
    }
    field.check_invariants()
}

/// Solve the corrector cell problem for component j.
pub fn solve_corrector(
    field: &CoefficientField,
    j: usize,
    resolution: CellResolution,
    tol: f64,
) -> Result<CorrectorField> {
    validate_cell_inputs(field, j, resolution, tol)?;
    if field.time_dependent {
        solve_corrector_parabolic(field, j, resolution, tol)
    } else {
        solve_corrector_elliptic(field, j, resolution, tol)
    }
}

/// Corrector of the time-reversed field A(y, -s); identical to
/// `solve_corrector` for time-independent fields.
pub fn solve_corrector_dual(
    field: &CoefficientField,
    j: usize,
    resolution: CellResolution,
    tol: f64,
) -> Result<CorrectorField> {
    solve_corrector(&field.time_reversed(), j, resolution, tol)
}

fn face_gradients(torus: &Torus, values: &[f64]) -> Vec<f64> {
    let inv_h = 1.0 / torus.h;
    let mut grad = vec![0.0; torus.d * torus.len];
    for axis in 0..torus.d {
        let base = axis * torus.len;
        for f in 0..torus.len {
            grad[base + f] = (values[torus.east(f, axis)] - values[f]) * inv_h;
        }
    }
    grad
}

fn solve_corrector_elliptic(
    field: &CoefficientField,
    j: usize,
    resolution: CellResolution,
    tol: f64,
) -> Result<CorrectorField> {
    let torus = Torus::new(field.d, resolution.n_space);
    let coeff = face_coefficients(field, &torus, 0.0);
    let rhs = divergence_rhs(&torus, &coeff, j);
    let precond = SpectralPrecond::new(&torus, mean_face_coefficient(&coeff), 0.0);
    let mut chi = vec![0.0; torus.len];
    let apply = |x: &[f64], y: &mut [f64]| apply_operator(&torus, &coeff, 0.0, x, y);
    let pre = |r: &[f64], z: &mut [f64]| precond.apply(r, z);
    let max_iter = 200 + 40 * resolution.n_space;
    conjugate_gradient(
        &apply,
        &rhs,
        &mut chi,
        Some(&pre),
        true,
        tol,
        max_iter,
        &format!("elliptic cell problem, field '{}', j={j}", field.name),
    )?;
    let mean = chi.iter().sum::<f64>() / chi.len() as f64;
    chi.iter_mut().for_each(|v| *v -= mean);
    // Recompute the residual of the normalized solution directly.
    let mut lx = vec![0.0; torus.len];
    apply_operator(&torus, &coeff, 0.0, &chi, &mut lx);
    let res: Vec<f64> = lx.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let gradient = face_gradients(&torus, &chi);
    Ok(CorrectorField {
        component: j,
        d: field.d,
        n_space: resolution.n_space,
        n_time: 1,
        time_dependent: false,
        values: chi,
        gradient,
        residual: rms(&res),
        periods: 0,
    })
}

fn solve_corrector_parabolic(
    field: &CoefficientField,
    j: usize,
    resolution: CellResolution,
    tol: f64,
) -> Result<CorrectorField> {
    let torus = Torus::new(field.d, resolution.n_space);
    let n_t = resolution.n_time;
    let k = 1.0 / n_t as f64;
    let shift = 1.0 / k;
    let max_periods = 64usize;
    let inner_tol = 0.2 * tol;
    // Stop the period iteration when the seam mismatch can no longer push
    // the wraparound residual above tol.
    let period_tol = 0.5 * tol * k;

    let mut start = vec![0.0; torus.len];
    let mut state = vec![0.0; torus.len];
    let mut periods = 0;
    let mut theta = f64::INFINITY;
    // Per-level data rebuilt each step; coefficients are time-periodic.
    let step = |state: &mut Vec<f64>, level: usize, record: Option<&mut [f64]>| -> Result<()> {
        let s = level as f64 * k;
        let coeff = face_coefficients(field, &torus, s);
        let mut rhs = divergence_rhs(&torus, &coeff, j);
        for (r, u) in rhs.iter_mut().zip(state.iter()) {
            *r += shift * u;
        }
        let precond = SpectralPrecond::new(&torus, mean_face_coefficient(&coeff), shift);
        let apply = |x: &[f64], y: &mut [f64]| apply_operator(&torus, &coeff, shift, x, y);
        let pre = |r: &[f64], z: &mut [f64]| precond.apply(r, z);
        conjugate_gradient(
            &apply,
            &rhs,
            state,
            Some(&pre),
            false,
            inner_tol,
            200 + 40 * resolution.n_space,
            &format!("parabolic cell step, field '{}', j={j}", field.name),
        )?;
        if let Some(slot) = record {
            slot.copy_from_slice(state);
        }
        Ok(())
    };

    while periods < max_periods {
        state.copy_from_slice(&start);
        for level in 1..=n_t {
            step(&mut state, level, None)?;
        }
        periods += 1;
        theta = start
            .iter()
            .zip(&state)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        start.copy_from_slice(&state);
        if theta <= period_tol {
            break;
        }
    }
    if theta > period_tol {
        return Err(Error::NoConvergence {
            iterations: periods,
            residual: theta,
            tol: period_tol,
            context: format!("period map for corrector of '{}', j={j}", field.name),
        });
    }

    // Record one more period; level 0 is the end-of-period state so the
    // wraparound equation is satisfied exactly.
    let len = torus.len;
    let mut values = vec![0.0; n_t * len];
    state.copy_from_slice(&start);
    for level in 1..=n_t {
        let slot = level % n_t;
        step(&mut state, level, Some(&mut values[slot * len..(slot + 1) * len]))?;
    }

    // Mean-zero normalization over the whole space-time cell.
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= mean);

    // Discrete space-time residual of the periodic implicit scheme.
    let mut sq_sum = 0.0;
    let mut lx = vec![0.0; len];
    for level in 1..=n_t {
        let cur = level % n_t;
        let prev = level - 1;
        let s = level as f64 * k;
        let coeff = face_coefficients(field, &torus, s);
        let rhs = divergence_rhs(&torus, &coeff, j);
        let cur_slice = &values[cur * len..(cur + 1) * len];
        let prev_slice = &values[prev * len..(prev + 1) * len];
        apply_operator(&torus, &coeff, 0.0, cur_slice, &mut lx);
        for f in 0..len {
            let r = (cur_slice[f] - prev_slice[f]) * shift + lx[f] - rhs[f];
            sq_sum += r * r;
        }
    }
    let residual = (sq_sum / (n_t * len) as f64).sqrt();
    if residual > tol {
        return Err(Error::NoConvergence {
            iterations: periods,
            residual,
            tol,
            context: format!("space-time residual for corrector of '{}', j={j}", field.name),
        });
    }

    let mut gradient = vec![0.0; n_t * field.d * len];
    for level in 0..n_t {
        let g = face_gradients(&torus, &values[level * len..(level + 1) * len]);
        gradient[level * field.d * len..(level + 1) * field.d * len].copy_from_slice(&g);
    }
    Ok(CorrectorField {
        component: j,
        d: field.d,
        n_space: resolution.n_space,
        n_time: n_t,
        time_dependent: true,
        values,
        gradient,
        residual,
        periods,
    })
}

/// Assemble the effective tensor from the solved correctors by averaging the
/// corrected fluxes over the cell. Fluxes are sampled at faces, matching the
/// discrete operator, so laminate fields reproduce the harmonic/arithmetic
/// means to spectral accuracy.
pub fn homogenize(
    field: &CoefficientField,
    correctors: &[CorrectorField],
) -> Result<HomogenizedTensor> {
    let d = field.d;
    if correctors.len() != d {
        return Err(Error::validation(format!(
            "need all {d} correctors, got {}",
            correctors.len()
        )));
    }
    let n = correctors[0].n_space;
    let n_t = correctors[0].n_time;
    for (j, c) in correctors.iter().enumerate() {
        if c.component != j || c.n_space != n || c.n_time != n_t || c.d != d {
            return Err(Error::validation(
                "correctors must cover components 0..d on a common cell grid",
            ));
        }
    }
    let torus = Torus::new(d, n);
    let len = torus.len;
    let mut raw = Mat::zeros(d);
    for level in 0..n_t {
        let s = level as f64 / n_t as f64;
        let coeff = face_coefficients(field, &torus, s);
        for j in 0..d {
            let chi = &correctors[j];
            for axis in 0..d {
                let gbase = (level * d + axis) * len;
                let mut acc = 0.0;
                let delta = if axis == j { 1.0 } else { 0.0 };
                for f in 0..len {
                    acc += coeff[axis][f] * (delta + chi.gradient[gbase + f]);
                }
                raw.set(axis, j, raw.get(axis, j) + acc / (len * n_t) as f64);
            }
        }
    }
    let defect = raw.asymmetry();
    let mut sym = Mat::zeros(d);
    for i in 0..d {
        for jj in 0..d {
            sym.set(i, jj, 0.5 * (raw.get(i, jj) + raw.get(jj, i)));
        }
    }
    let mu1 = 1.0 / field.mu;
    let ev = sym.eigenvalues_symmetric();
    if ev[0] < field.mu - 1e-8 {
        return Err(Error::validation(format!(
            "homogenized tensor violates ellipticity: min eigenvalue {:.6e} < mu {:.3}",
            ev[0], field.mu
        )));
    }
    for i in 0..d {
        for jj in 0..d {
            if sym.get(i, jj).abs() > mu1 + 1e-8 {
                return Err(Error::validation(format!(
                    "homogenized entry ({i},{jj}) = {:.6} exceeds bound mu1 = {:.3}",
                    sym.get(i, jj),
                    mu1
                )));
            }
        }
    }
    let mut tensor = factor_s(&sym, field.mu, mu1)?;
    tensor.asymmetry_defect = defect;
    Ok(tensor)
}

/// Solved potential cell problem: laplace psi = mean(V) - V, mean-zero psi.
#[derive(Debug, Clone)]
pub struct PotentialCell {
    pub d: usize,
    pub n: usize,
    pub v: Vec<f64>,
    pub mean_v: f64,
    pub psi: Vec<f64>,
    pub grad_psi: Vec<f64>,
    pub residual: f64,
}

impl PotentialCell {
    pub fn psi_mean(&self) -> f64 {
        self.psi.iter().sum::<f64>() / self.psi.len() as f64
    }

    pub fn psi_at(&self, z: &[f64]) -> f64 {
        Torus::new(self.d, self.n).interp(&self.psi, z, 0.0)
    }
}

/// Spectral Poisson solve on the torus. The true Fourier symbol |2 pi kappa|^2
/// is used, so single trigonometric modes are inverted exactly.
pub fn solve_potential_cell(
    v: &dyn Fn(&[f64]) -> f64,
    d: usize,
    n: usize,
    tol: f64,
) -> Result<PotentialCell> {
    if n < 8 {
        return Err(Error::validation("potential cell needs at least 8 points per axis"));
    }
    let torus = Torus::new(d, n);
    let samples: Vec<f64> = (0..torus.len).map(|f| v(&torus.point(f))).collect();
    let mean_v = samples.iter().sum::<f64>() / torus.len as f64;
    let mut hat: Vec<Complex64> = samples
        .iter()
        .map(|&s| Complex64::new(mean_v - s, 0.0))
        .collect();
    fourier_nd(&mut hat, d, n, false);

    let signed_freq = |kappa: usize| -> f64 {
        if kappa <= n / 2 {
            kappa as f64
        } else {
            kappa as f64 - n as f64
        }
    };
    let mut psi_hat = vec![Complex64::new(0.0, 0.0); torus.len];
    for f in 0..torus.len {
        let mut k2 = 0.0;
        for axis in 0..d {
            let kf = signed_freq((f / torus.strides[axis]) % n);
            k2 += kf * kf;
        }
        if k2 > 0.0 {
            let symbol = -(2.0 * std::f64::consts::PI).powi(2) * k2;
            psi_hat[f] = hat[f] / symbol;
        }
    }

    let mut psi_c = psi_hat.clone();
    fourier_nd(&mut psi_c, d, n, true);
    let psi: Vec<f64> = psi_c.iter().map(|c| c.re).collect();

    let two_pi = 2.0 * std::f64::consts::PI;
    let mut grad_psi = vec![0.0; d * torus.len];
    for axis in 0..d {
        let mut g_hat: Vec<Complex64> = (0..torus.len)
            .map(|f| {
                let kappa = (f / torus.strides[axis]) % n;
                if kappa == n / 2 && n % 2 == 0 {
                    // Nyquist derivative is ambiguous; drop it.
                    Complex64::new(0.0, 0.0)
                } else {
                    psi_hat[f] * Complex64::new(0.0, two_pi * signed_freq(kappa))
                }
            })
            .collect();
        fourier_nd(&mut g_hat, d, n, true);
        for f in 0..torus.len {
            grad_psi[axis * torus.len + f] = g_hat[f].re;
        }
    }

    // Residual of laplace psi - (mean V - V) in physical space.
    let mut lap_hat: Vec<Complex64> = (0..torus.len)
        .map(|f| {
            let mut k2 = 0.0;
            for axis in 0..d {
                let kf = signed_freq((f / torus.strides[axis]) % n);
                k2 += kf * kf;
            }
            psi_hat[f] * (-(two_pi * two_pi) * k2)
        })
        .collect();
    fourier_nd(&mut lap_hat, d, n, true);
    let res: Vec<f64> = lap_hat
        .iter()
        .zip(&samples)
        .map(|(l, &s)| l.re - (mean_v - s))
        .collect();
    let residual = rms(&res);
    if residual > tol {
        return Err(Error::NoConvergence {
            iterations: 1,
            residual,
            tol,
            context: "spectral potential cell solve".to_string(),
        });
    }
    Ok(PotentialCell {
        d,
        n,
        v: samples,
        mean_v,
        psi,
        grad_psi,
        residual,
    })
}
