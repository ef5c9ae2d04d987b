//! Homogenized-tensor geometry: the factor S with S A S^T = I and the
//! family of ellipsoids E_r = { x : <A^-1 x, x> < r^2 } = { |S x| < r } in
//! which the homogenized kernel is radial.

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// A constant symmetric positive-definite effective tensor together with its
/// normalizing factor S (upper triangular, positive diagonal, det S > 0) and
/// the ellipticity bracket (mu, mu1) inherited from the coefficient field.
#[derive(Debug, Clone)]
pub struct HomogenizedTensor {
    pub matrix: Mat,
    pub factor: Mat,
    pub mu: f64,
    pub mu1: f64,
    /// |a_ij - a_ji| of the raw cell averages before symmetrization.
    pub asymmetry_defect: f64,
}

/// Factor the tensor as A^-1 = S^T S with S upper triangular and positive
/// diagonal. The triangular convention makes the factor unique, hence
/// reproducible across runs.
pub fn factor_s(matrix: &Mat, mu: f64, mu1: f64) -> Result<HomogenizedTensor> {
    if matrix.asymmetry() > 1e-10 {
        return Err(Error::validation(format!(
            "tensor must be symmetric; asymmetry {:.3e}",
            matrix.asymmetry()
        )));
    }
    // Positive definiteness is checked by the Cholesky of A itself so the
    // error names the offending leading minor of the input, not its inverse.
    matrix.cholesky_lower()?;
    let inv = matrix.inverse()?;
    // A^-1 = L L^T with L lower triangular gives S = L^T upper triangular.
    let l = inv.cholesky_lower()?;
    let s = l.transpose();
    Ok(HomogenizedTensor {
        matrix: matrix.clone(),
        factor: s,
        mu,
        mu1,
        asymmetry_defect: 0.0,
    })
}

impl HomogenizedTensor {
    pub fn d(&self) -> usize {
        self.matrix.d
    }

    pub fn det_factor(&self) -> f64 {
        (0..self.d()).map(|i| self.factor.get(i, i)).product()
    }

    /// Ellipsoid of radius r centered at the origin.
    pub fn ellipsoid(&self, r: f64) -> Ellipsoid<'_> {
        Ellipsoid {
            tensor: self,
            radius: r,
            center: vec![0.0; self.d()],
        }
    }

    pub fn ellipsoid_at(&self, r: f64, center: Vec<f64>) -> Ellipsoid<'_> {
        assert_eq!(center.len(), self.d());
        Ellipsoid {
            tensor: self,
            radius: r,
            center,
        }
    }

    /// |S x| for a point x relative to the origin.
    pub fn anisotropic_norm(&self, x: &[f64]) -> f64 {
        let sx = self.factor.mul_vec(x);
        sx.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// E_r = { x : |S (x - center)| < r }.
#[derive(Debug, Clone)]
pub struct Ellipsoid<'a> {
    pub tensor: &'a HomogenizedTensor,
    pub radius: f64,
    pub center: Vec<f64>,
}

impl Ellipsoid<'_> {
    /// |S (x - center)|; membership is value < radius.
    pub fn norm(&self, x: &[f64]) -> f64 {
        let rel: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        self.tensor.anisotropic_norm(&rel)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.norm(x) < self.radius
    }

    /// Radii (sqrt(mu) r, sqrt(mu1) r) of the inscribed and circumscribed
    /// balls B_inner <= E_r <= B_outer.
    pub fn inclusion_radii(&self) -> (f64, f64) {
        (
            self.tensor.mu.sqrt() * self.radius,
            self.tensor.mu1.sqrt() * self.radius,
        )
    }
}
