//! Chebyshev-node Lagrange extrapolation along a ray.
//!
//! A value at the target abscissa `p = r2/r1` is extrapolated from samples at
//! the Chebyshev nodes `h_i = cos((2i-1)pi/(2m))` in (-1,1) via weights
//!
//! ```text
//! c_i = prod_{j != i} (p - h_j) / (h_i - h_j),
//! ```
//!
//! so that `f(p) ~ sum_i c_i f(h_i)` is exact for polynomials of degree < m.
//! The interpolation error of an analytic sample function admits a contour
//! representation over the circle |z| = r3/(3 r1), which this module also
//! evaluates by trapezoid quadrature as an independent cross-check.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Compensated (double-double) arithmetic for the weight products. The
/// weights grow like (2 r2/r1)^(m-1), so the partition-of-unity identity
/// sum c_i = 1 suffers catastrophic cancellation; carrying the products to
/// roughly 32 digits keeps the moment identities verifiable far below the
/// f64 cancellation floor.
mod dd {
    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct Dd {
        pub hi: f64,
        pub lo: f64,
    }

    #[inline]
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    #[inline]
    fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        (s, b - (s - a))
    }

    #[inline]
    fn two_prod(a: f64, b: f64) -> (f64, f64) {
        let p = a * b;
        (p, a.mul_add(b, -p))
    }

    impl Dd {
        pub fn from(x: f64) -> Dd {
            Dd { hi: x, lo: 0.0 }
        }

        pub fn add(self, o: Dd) -> Dd {
            let (s, e) = two_sum(self.hi, o.hi);
            let (hi, lo) = quick_two_sum(s, e + self.lo + o.lo);
            Dd { hi, lo }
        }

        pub fn sub(self, o: Dd) -> Dd {
            self.add(Dd {
                hi: -o.hi,
                lo: -o.lo,
            })
        }

        pub fn mul(self, o: Dd) -> Dd {
            let (p, e) = two_prod(self.hi, o.hi);
            let (hi, lo) = quick_two_sum(p, e + self.hi * o.lo + self.lo * o.hi);
            Dd { hi, lo }
        }

        pub fn div(self, o: Dd) -> Dd {
            let q1 = self.hi / o.hi;
            let r = self.sub(o.mul(Dd::from(q1)));
            let q2 = (r.hi + r.lo) / o.hi;
            let (hi, lo) = quick_two_sum(q1, q2);
            Dd { hi, lo }
        }

        pub fn value(self) -> f64 {
            self.hi + self.lo
        }
    }
}

/// Largest supported interpolation order. Above this the weights overflow
/// f64 for common radius ratios.
pub const MAX_ORDER: usize = 60;

/// Order at which weight products switch to log-magnitude accumulation.
const LOG_ACCUMULATION_ORDER: usize = 40;

/// Multiplicative constants of the certified interpolation-error envelopes.
/// The analysis fixes only the shape of the envelope; the constants are
/// calibration knobs, not asserted values.
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeConstants {
    pub c_tilde: f64,
    pub c_exp: f64,
}

impl Default for EnvelopeConstants {
    fn default() -> Self {
        EnvelopeConstants {
            c_tilde: 1.0,
            c_exp: 0.125,
        }
    }
}

/// Nodes, extrapolation weights, and error-bound data for one (r1, r2, r3, m).
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevSystem {
    pub m: usize,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    /// Target abscissa p = r2/r1.
    pub target: f64,
    /// Chebyshev nodes, strictly decreasing, all in (-1, 1).
    pub nodes: Vec<f64>,
    /// Extrapolation weights c_i.
    pub weights: Vec<f64>,
    /// Compensation terms: weights[i] + weights_lo[i] is the double-double
    /// value of c_i. Used by the identity diagnostics.
    weights_lo: Vec<f64>,
    /// Bound (1/m) (2 r2/r1)^(m-1) on every |c_i|.
    pub weight_bound: f64,
}

pub fn validate_radii(r1: f64, r2: f64, r3: f64) -> Result<()> {
    if !(r1 > 0.0 && r1 < r2 && r2 < r3 / 12.0) {
        return Err(Error::validation(format!(
            "radius ordering violated: need 0 < r1 < r2 < r3/12, got r1={r1}, r2={r2}, r3={r3}"
        )));
    }
    Ok(())
}

/// Build the extrapolation system for the given radii and order.
pub fn build_system(r1: f64, r2: f64, r3: f64, m: usize) -> Result<ChebyshevSystem> {
    validate_radii(r1, r2, r3)?;
    if m < 1 || m > MAX_ORDER {
        return Err(Error::validation(format!(
            "order m={m} outside supported range 1..={MAX_ORDER}"
        )));
    }
    let target = r2 / r1;
    // cos((2i-1)pi/(2m)) written through sin so the node set is exactly
    // antisymmetric and the middle node of odd orders is exactly zero.
    let nodes: Vec<f64> = (1..=m)
        .map(|i| {
            let num = m as isize + 1 - 2 * i as isize;
            (num as f64 * std::f64::consts::PI / (2.0 * m as f64)).sin()
        })
        .collect();
    let mut weights = vec![0.0; m];
    let mut weights_lo = vec![0.0; m];
    if m <= LOG_ACCUMULATION_ORDER {
        // Compensated pairwise-ordered products of the per-node ratios.
        let p = dd::Dd::from(target);
        for i in 0..m {
            let mut c = dd::Dd::from(1.0);
            for j in 0..m {
                if j != i {
                    let num = p.sub(dd::Dd::from(nodes[j]));
                    let den = dd::Dd::from(nodes[i]).sub(dd::Dd::from(nodes[j]));
                    c = c.mul(num).div(den);
                }
            }
            weights[i] = c.hi;
            weights_lo[i] = c.lo;
        }
    } else {
        // Log-magnitude plus sign accumulation for large m keeps the
        // intermediate products representable.
        for i in 0..m {
            let mut log_mag = 0.0f64;
            let mut sign = 1.0f64;
            for j in 0..m {
                if j != i {
                    let num = target - nodes[j];
                    let den = nodes[i] - nodes[j];
                    log_mag += num.abs().ln() - den.abs().ln();
                    sign *= num.signum() * den.signum();
                }
            }
            weights[i] = sign * log_mag.exp();
        }
    }
    let weight_bound = (2.0 * target).powi(m as i32 - 1) / m as f64;
    Ok(ChebyshevSystem {
        m,
        r1,
        r2,
        r3,
        target,
        nodes,
        weights,
        weights_lo,
        weight_bound,
    })
}

impl ChebyshevSystem {
    /// Extrapolated value sum_i c_i f(h_i) from samples f(h_i).
    /// Neumaier-compensated so the cancellation among the large weights does
    /// not eat the samples.
    pub fn extrapolate(&self, samples: &[f64]) -> Result<f64> {
        if samples.len() != self.m {
            return Err(Error::validation(format!(
                "expected {} samples, got {}",
                self.m,
                samples.len()
            )));
        }
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for (&c, &f) in self.weights.iter().zip(samples) {
            let term = c * f;
            let t = sum + term;
            comp += if sum.abs() >= term.abs() {
                (sum - t) + term
            } else {
                (term - t) + sum
            };
            sum = t;
        }
        Ok(sum + comp)
    }

    /// |sum_i c_i h_i^k - p^k| evaluated in double-double arithmetic, i.e.
    /// the defect of the k-th moment identity of the computed weights.
    /// Meaningful for the compensated product path (m <= 40).
    pub fn moment_defect(&self, k: usize) -> f64 {
        let mut acc = dd::Dd::from(0.0);
        for i in 0..self.m {
            let c = dd::Dd {
                hi: self.weights[i],
                lo: self.weights_lo[i],
            };
            let mut p = dd::Dd::from(1.0);
            for _ in 0..k {
                p = p.mul(dd::Dd::from(self.nodes[i]));
            }
            acc = acc.add(c.mul(p));
        }
        let mut target_pow = dd::Dd::from(1.0);
        for _ in 0..k {
            target_pow = target_pow.mul(dd::Dd::from(self.target));
        }
        acc.sub(target_pow).value().abs()
    }

    /// Monic nodal polynomial prod_i (z - h_i).
    pub fn nodal_poly(&self, z: Complex64) -> Complex64 {
        self.nodes
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, &h| acc * (z - h))
    }

    pub fn nodal_poly_real(&self, h: f64) -> f64 {
        self.nodes.iter().fold(1.0, |acc, &hj| acc * (h - hj))
    }

    /// Derivative of the nodal polynomial at node i: prod_{j != i} (h_i - h_j).
    pub fn nodal_poly_prime(&self, i: usize) -> f64 {
        let hi = self.nodes[i];
        self.nodes
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .fold(1.0, |acc, (_, &hj)| acc * (hi - hj))
    }

    /// Radius r3/(3 r1) of the contour used for the error representation.
    pub fn contour_radius(&self) -> f64 {
        self.r3 / (3.0 * self.r1)
    }

    /// Interpolation error of an analytic function at the target, computed
    /// both directly (f(p) - sum c_i f(h_i)) and by contour quadrature.
    ///
    /// Returns (direct, contour). Errs if the two routes disagree beyond
    /// 1e-6 relative, which signals a function that is not analytic on the
    /// contour disc or an under-resolved quadrature.
    pub fn residue_error_paths(
        &self,
        f: &dyn Fn(Complex64) -> Complex64,
        quad_nodes: usize,
    ) -> Result<(f64, f64)> {
        if quad_nodes < 512 {
            return Err(Error::validation(format!(
                "contour quadrature needs at least 512 nodes, got {quad_nodes}"
            )));
        }
        let p = Complex64::new(self.target, 0.0);
        let fp = f(p);
        let mut extrap = Complex64::new(0.0, 0.0);
        let mut magnitude_scale = fp.norm();
        for (i, &h) in self.nodes.iter().enumerate() {
            let term = f(Complex64::new(h, 0.0)) * self.weights[i];
            magnitude_scale += term.norm();
            extrap += term;
        }
        let direct = fp - extrap;

        let rho = self.contour_radius();
        let phi_p = self.nodal_poly(p);
        let mut contour = Complex64::new(0.0, 0.0);
        for k in 0..quad_nodes {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / quad_nodes as f64;
            let z = Complex64::from_polar(rho, theta);
            // dz = i z dtheta, and the 1/(2 pi i) prefactor cancels against
            // it, leaving a plain average of z * integrand over the circle.
            contour += z * phi_p * f(z) / ((z - p) * self.nodal_poly(z));
        }
        contour /= quad_nodes as f64;

        let diff = (direct - contour).norm();
        let tol = 1e-6 * direct.norm().max(contour.norm()) + 1e-12 * magnitude_scale.max(1e-300);
        if diff > tol {
            return Err(Error::Inconsistent(format!(
                "direct and contour interpolation errors disagree: {:.6e} vs {:.6e} (|diff| {:.3e})",
                direct.re, contour.re, diff
            )));
        }
        Ok((direct.re, contour.re))
    }

    /// Interpolation error at the target, cross-checked against the contour
    /// representation. Returns the direct value.
    pub fn residue_error(
        &self,
        f: &dyn Fn(Complex64) -> Complex64,
        quad_nodes: usize,
    ) -> Result<f64> {
        self.residue_error_paths(f, quad_nodes).map(|(d, _)| d)
    }

    /// Certified error envelopes for extrapolating the homogenized kernel
    /// (first component) and its gradient (second) at elapsed time t - s in
    /// dimension d:
    ///
    /// ```text
    /// kernel:    C~ 4^m r2^m r3^-m     (t-s)^(-d/2)   exp(-C r3^2/(t-s))
    /// gradient:  C~ 4^m r2^m r3^-(m-1) (t-s)^(-d/2-1) exp(-C r3^2/(t-s))
    /// ```
    pub fn error_envelope(&self, t_minus_s: f64, d: usize, consts: &EnvelopeConstants) -> (f64, f64) {
        let m = self.m as i32;
        let geom = (4.0 * self.r2 / self.r3).powi(m);
        let decay = (-consts.c_exp * self.r3 * self.r3 / t_minus_s).exp();
        let kernel = consts.c_tilde * geom * t_minus_s.powf(-(d as f64) / 2.0) * decay;
        let gradient =
            consts.c_tilde * geom * self.r3 * t_minus_s.powf(-(d as f64) / 2.0 - 1.0) * decay;
        (kernel, gradient)
    }
}
