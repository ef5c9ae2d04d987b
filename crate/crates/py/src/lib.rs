//! Python bindings: effective-tensor construction from the cell problems,
//! the homogenized kernel, Chebyshev extrapolation, the inequality
//! arithmetic, and the experiment harness.

use parhom::chebyshev;
use parhom::coeff_cell::{
    homogenize, solve_corrector, solve_potential_cell, CellResolution, CoefficientField,
};
use parhom::config::parse_config;
use parhom::geometry::{factor_s, HomogenizedTensor};
use parhom::harness::{run, RunFlags, Subcommand};
use parhom::kernels;
use parhom::linalg::Mat;
use parhom::smallness::{self, Radii};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use std::path::PathBuf;
use std::str::FromStr;

fn err(e: parhom::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn mat_from_rows(rows: Vec<Vec<f64>>) -> PyResult<Mat> {
    let d = rows.len();
    for r in &rows {
        if r.len() != d {
            return Err(PyValueError::new_err("matrix must be square"));
        }
    }
    Ok(Mat::from_rows(&rows))
}

fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.d)
        .map(|i| (0..m.d).map(|j| m.get(i, j)).collect())
        .collect()
}

/// Effective tensor with its normalizing factor S (S A S^T = I) and the
/// homogenized heat kernel in its ellipsoidal geometry.
#[pyclass(name = "EffectiveTensor")]
struct PyEffectiveTensor {
    inner: HomogenizedTensor,
}

#[pymethods]
impl PyEffectiveTensor {
    /// Factor a symmetric positive-definite matrix.
    #[new]
    #[pyo3(signature = (matrix, mu = 1.0, mu1 = 1.0))]
    fn new(matrix: Vec<Vec<f64>>, mu: f64, mu1: f64) -> PyResult<Self> {
        let m = mat_from_rows(matrix)?;
        Ok(PyEffectiveTensor {
            inner: factor_s(&m, mu, mu1).map_err(err)?,
        })
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        mat_to_rows(&self.inner.matrix)
    }

    fn factor(&self) -> Vec<Vec<f64>> {
        mat_to_rows(&self.inner.factor)
    }

    fn asymmetry_defect(&self) -> f64 {
        self.inner.asymmetry_defect
    }

    /// |S x|, the anisotropic norm defining the ellipsoids E_r = {|Sx| < r}.
    fn norm(&self, x: Vec<f64>) -> f64 {
        self.inner.anisotropic_norm(&x)
    }

    /// (sqrt(mu) r, sqrt(mu1) r): inscribed and circumscribed ball radii.
    fn inclusion_radii(&self, r: f64) -> (f64, f64) {
        let e = self.inner.ellipsoid(r);
        e.inclusion_radii()
    }

    /// Homogenized fundamental solution at (x, t; y, s), t > s.
    fn gamma0(&self, x: Vec<f64>, t: f64, y: Vec<f64>, s: f64) -> PyResult<f64> {
        kernels::gamma0(&self.inner, &x, t, &y, s).map_err(err)
    }

    /// Source gradient of the homogenized kernel.
    fn grad_gamma0(&self, x: Vec<f64>, t: f64, y: Vec<f64>, s: f64) -> PyResult<Vec<f64>> {
        kernels::grad_gamma0_y(&self.inner, &x, t, &y, s).map_err(err)
    }
}

/// Chebyshev-node extrapolation system for radii (r1, r2, r3) and order m.
#[pyclass(name = "ChebyshevSystem")]
struct PyChebyshevSystem {
    inner: chebyshev::ChebyshevSystem,
}

#[pymethods]
impl PyChebyshevSystem {
    #[new]
    fn new(r1: f64, r2: f64, r3: f64, m: usize) -> PyResult<Self> {
        Ok(PyChebyshevSystem {
            inner: chebyshev::build_system(r1, r2, r3, m).map_err(err)?,
        })
    }

    fn nodes(&self) -> Vec<f64> {
        self.inner.nodes.clone()
    }

    fn weights(&self) -> Vec<f64> {
        self.inner.weights.clone()
    }

    fn target(&self) -> f64 {
        self.inner.target
    }

    fn weight_bound(&self) -> f64 {
        self.inner.weight_bound
    }

    /// sum_i c_i samples[i], the extrapolated value at r2/r1.
    fn extrapolate(&self, samples: Vec<f64>) -> PyResult<f64> {
        self.inner.extrapolate(&samples).map_err(err)
    }

    /// |sum c_i h_i^k - (r2/r1)^k| in compensated arithmetic.
    fn moment_defect(&self, k: usize) -> f64 {
        self.inner.moment_defect(k)
    }

    /// (kernel, gradient) interpolation-error envelopes at elapsed time tau
    /// in dimension d.
    #[pyo3(signature = (tau, d, c_tilde = 1.0, c_exp = 0.125))]
    fn error_envelope(&self, tau: f64, d: usize, c_tilde: f64, c_exp: f64) -> (f64, f64) {
        self.inner
            .error_envelope(tau, d, &chebyshev::EnvelopeConstants { c_tilde, c_exp })
    }
}

/// Solve the corrector cell problems for a built-in coefficient field and
/// return the effective tensor.
#[pyfunction]
#[pyo3(signature = (name, d, resolution = 256, time_resolution = 64, tol = 1e-9, parameter = 1.0))]
fn homogenize_builtin(
    name: &str,
    d: usize,
    resolution: usize,
    time_resolution: usize,
    tol: f64,
    parameter: f64,
) -> PyResult<PyEffectiveTensor> {
    let field = CoefficientField::builtin(name, d, parameter).map_err(err)?;
    let res = CellResolution::new(resolution, time_resolution);
    let correctors = (0..d)
        .map(|j| solve_corrector(&field, j, res, tol))
        .collect::<parhom::Result<Vec<_>>>()
        .map_err(err)?;
    Ok(PyEffectiveTensor {
        inner: homogenize(&field, &correctors).map_err(err)?,
    })
}

/// Interpolation exponent log(r3/(4 r2)) / log(r3/(2 r1)).
#[pyfunction]
fn alpha(r1: f64, r2: f64, r3: f64) -> PyResult<f64> {
    smallness::alpha(&Radii::new(r1, r2, r3)).map_err(err)
}

/// Interpolation-order selection: returns ("CASE1" | "CASE2", m).
#[pyfunction]
fn select_m(
    delta: f64,
    cyl_sup: f64,
    eps: f64,
    r1: f64,
    r2: f64,
    r3: f64,
) -> PyResult<(String, usize)> {
    let (case, m) =
        smallness::select_m(delta, cyl_sup, eps, &Radii::new(r1, r2, r3)).map_err(err)?;
    Ok((case.to_string(), m))
}

/// Three-term bracket at order m with unit constant.
#[pyfunction]
fn bracket(delta: f64, cyl_sup: f64, eps: f64, r1: f64, r2: f64, r3: f64, m: usize) -> f64 {
    smallness::bracket(delta, cyl_sup, eps, &Radii::new(r1, r2, r3), m)
}

/// Right-hand side of the two-sphere one-cylinder inequality, unit constant.
#[pyfunction]
fn inequality_rhs(
    delta: f64,
    cyl_sup: f64,
    eps: f64,
    r1: f64,
    r2: f64,
    r3: f64,
) -> PyResult<f64> {
    smallness::inequality_rhs(delta, cyl_sup, eps, &Radii::new(r1, r2, r3)).map_err(err)
}

/// Solve laplace psi = mean(v) - v on the periodic unit interval from n
/// uniform samples of v; returns (mean, psi samples, residual).
#[pyfunction]
#[pyo3(signature = (samples, tol = 1e-8))]
fn potential_cell(samples: Vec<f64>, tol: f64) -> PyResult<(f64, Vec<f64>, f64)> {
    let n = samples.len();
    if n < 8 {
        return Err(PyValueError::new_err("need at least 8 samples"));
    }
    let v = move |z: &[f64]| {
        let idx = (z[0] * n as f64).round() as usize % n;
        samples[idx]
    };
    let cell = solve_potential_cell(&v, 1, n, tol).map_err(err)?;
    Ok((cell.mean_v, cell.psi.clone(), cell.residual))
}

/// Run a harness subcommand against a config text; returns the exit code
/// (0 all predicates pass, 2 otherwise).
#[pyfunction]
fn run_subcommand(name: &str, config_text: &str, out_dir: &str) -> PyResult<i32> {
    let sub = Subcommand::from_str(name).map_err(err)?;
    let cfg = parse_config(config_text).map_err(err)?;
    let outcome = run(sub, &cfg, &PathBuf::from(out_dir), &RunFlags::default()).map_err(err)?;
    Ok(outcome.exit_code)
}

#[pymodule]
fn parhom_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEffectiveTensor>()?;
    m.add_class::<PyChebyshevSystem>()?;
    m.add_function(wrap_pyfunction!(homogenize_builtin, m)?)?;
    m.add_function(wrap_pyfunction!(alpha, m)?)?;
    m.add_function(wrap_pyfunction!(select_m, m)?)?;
    m.add_function(wrap_pyfunction!(bracket, m)?)?;
    m.add_function(wrap_pyfunction!(inequality_rhs, m)?)?;
    m.add_function(wrap_pyfunction!(potential_cell, m)?)?;
    m.add_function(wrap_pyfunction!(run_subcommand, m)?)?;
    Ok(())
}
