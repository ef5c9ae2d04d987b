//! Verification engine for the approximate two-sphere one-cylinder
//! inequality: sup-norm extraction on ellipsoids and balls, the exponent
//!
//! ```text
//! alpha = log(r3/(4 r2)) / log(r3/(2 r1)),
//! ```
//!
//! the interpolation-order selection with its two-case dispatch, the
//! three-term bracket
//!
//! ```text
//! B(m) = (2r2/r1)^(m-1) delta + (4r2/r3)^m N
//!        + (2r2/r1)^m (eps/r3) log(2 + r3/eps) N,
//! ```
//!
//! and report assembly with the observed constant C_obs = L / rhs, where L
//! is the middle-ellipsoid sup and rhs the two-term right-hand side
//! delta^alpha N^(1-alpha) + (r3/r1) [ (eps/r3) log(2 + r3/eps) ]^alpha N.
//!
//! The inequality's constant is not explicit, so verification means
//! boundedness and stability of C_obs across ensembles and eps, never a
//! fixed target value.

use crate::chebyshev::build_system;
use crate::coeff_cell::CoefficientField;
use crate::error::{Error, Result};
use crate::geometry::HomogenizedTensor;
use crate::pdesolve::GridSolution;

/// Radii r1 < r2 < r3/12 of the inner/middle ellipsoids and the cylinder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Radii {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

impl Radii {
    pub fn new(r1: f64, r2: f64, r3: f64) -> Self {
        Radii { r1, r2, r3 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r1 > 0.0 && self.r1 < self.r2 && self.r2 < self.r3 / 12.0) {
            return Err(Error::validation(format!(
                "radius ordering violated: need 0 < r1 < r2 < r3/12, got ({}, {}, {})",
                self.r1, self.r2, self.r3
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, lambda: f64) -> Radii {
        Radii::new(self.r1 * lambda, self.r2 * lambda, self.r3 * lambda)
    }
}

/// Which term of the bracket absorbs which when the order is selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseTag {
    /// The eps term is absorbed by the geometric term at m0.
    Case1,
    /// The geometric term is absorbed by the eps term at m1.
    Case2,
}

impl std::fmt::Display for CaseTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CaseTag::Case1 => write!(f, "CASE1"),
            CaseTag::Case2 => write!(f, "CASE2"),
        }
    }
}

/// One verification outcome.
#[derive(Debug, Clone)]
pub struct InequalityReport {
    pub eps: f64,
    pub radii: Radii,
    pub t0: f64,
    /// sup over the inner region at time t0.
    pub delta: f64,
    /// sup over the middle region at time t0.
    pub mid_sup: f64,
    /// sup over the cylinder.
    pub cyl_sup: f64,
    pub alpha: f64,
    pub case: CaseTag,
    pub m: usize,
    /// Three-term bracket at the selected order, unit constant.
    pub bracket: f64,
    /// Interpolation right-hand side, unit constant.
    pub rhs: f64,
    /// Observed constant mid_sup / rhs.
    pub c_obs: f64,
    pub pass: bool,
    pub warnings: Vec<String>,
}

impl InequalityReport {
    pub fn warnings_joined(&self) -> String {
        self.warnings.join(";")
    }
}

/// Options shared by the verifiers.
#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Boundedness cap on the observed constant.
    pub c_obs_cap: f64,
    /// The ball version requires r2 < factor * mu * r3 / 12; the factor is a
    /// knob because the sharp constant of the radius condition is not
    /// pinned by the analysis.
    pub ball_condition_factor: f64,
    /// Conversion constant C1 of the ball exponent
    /// alpha = log(C1 r3/r2)/log(r3/(2 r1)); default 1/(4 sqrt(mu1)).
    pub corollary_c1: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            c_obs_cap: 100.0,
            ball_condition_factor: 1.0,
            corollary_c1: None,
        }
    }
}

/// sup of |u| over the ellipsoid of radius r at the stored time t0.
pub fn sup_slice(
    u: &GridSolution,
    tensor: &HomogenizedTensor,
    r: f64,
    t0: f64,
) -> Result<f64> {
    let level = u.time_level(t0)?;
    u.sup_on_ellipsoid(tensor, r, level)
}

/// Interpolation exponent alpha = log(r3/(4 r2)) / log(r3/(2 r1)), in (0,1).
pub fn alpha(radii: &Radii) -> Result<f64> {
    radii.validate()?;
    Ok((radii.r3 / (4.0 * radii.r2)).ln() / (radii.r3 / (2.0 * radii.r1)).ln())
}

/// The eps factor (eps/r3) log(2 + r3/eps); zero for eps = 0.
pub fn eps_factor(eps: f64, r3: f64) -> f64 {
    if eps > 0.0 {
        eps / r3 * (2.0 + r3 / eps).ln()
    } else {
        0.0
    }
}

/// Select the interpolation order minimizing the bracket: m0 balances the
/// delta and geometric terms; if the eps term cannot be absorbed at m0,
/// switch to m1 balancing the geometric and eps terms.
///
/// delta = 0 follows the documented degenerate path: Case 2 with m1 (the
/// balance log(N/delta) is infinite). eps = 0 always yields Case 1.
pub fn select_m(
    delta: f64,
    cyl_sup: f64,
    eps: f64,
    radii: &Radii,
) -> Result<(CaseTag, usize)> {
    if delta < 0.0 || cyl_sup <= 0.0 || delta > cyl_sup * (1.0 + 1e-12) {
        return Err(Error::validation(format!(
            "need 0 <= delta <= N with N > 0, got delta={delta}, N={cyl_sup}"
        )));
    }
    if eps < 0.0 {
        return Err(Error::validation("eps must be nonnegative"));
    }
    let e = eps_factor(eps, radii.r3);
    let q = 2.0 * radii.r2 / radii.r1;
    let s = 4.0 * radii.r2 / radii.r3;
    let m1 = || -> Result<usize> {
        if e <= 0.0 {
            return Err(Error::validation(
                "degenerate delta = 0 with eps = 0: order selection undefined",
            ));
        }
        let raw = e.ln() / (2.0 * radii.r1 / radii.r3).ln();
        Ok((raw.floor() as i64 + 1).clamp(1, 10_000) as usize)
    };
    if delta == 0.0 {
        return Ok((CaseTag::Case2, m1()?));
    }
    let m0_raw = (cyl_sup / delta).ln() / (radii.r3 / (2.0 * radii.r1)).ln();
    let m0 = (m0_raw.floor() as i64 + 1).clamp(1, 10_000) as usize;
    let lhs = e * q.powi(m0 as i32);
    let rhs = s.powi(m0 as i32);
    if lhs <= rhs {
        Ok((CaseTag::Case1, m0))
    } else {
        Ok((CaseTag::Case2, m1()?))
    }
}

/// The three-term bracket at order m with unit constant.
pub fn bracket(delta: f64, cyl_sup: f64, eps: f64, radii: &Radii, m: usize) -> f64 {
    let q = 2.0 * radii.r2 / radii.r1;
    let s = 4.0 * radii.r2 / radii.r3;
    let e = eps_factor(eps, radii.r3);
    q.powi(m as i32 - 1) * delta + s.powi(m as i32) * cyl_sup + q.powi(m as i32) * e * cyl_sup
}

/// Right-hand side of the inequality with unit constant:
/// delta^alpha N^(1-alpha) + (r3/r1) e(eps)^alpha N.
pub fn inequality_rhs(delta: f64, cyl_sup: f64, eps: f64, radii: &Radii) -> Result<f64> {
    let a = alpha(radii)?;
    let e = eps_factor(eps, radii.r3);
    let eps_term = if e > 0.0 {
        radii.r3 / radii.r1 * e.powf(a) * cyl_sup
    } else {
        0.0
    };
    Ok(delta.powf(a) * cyl_sup.powf(1.0 - a) + eps_term)
}

enum SupKind {
    Ellipsoid,
    Ball,
}

fn cylinder_sups(
    u: &GridSolution,
    tensor: &HomogenizedTensor,
    radii: &Radii,
    t0: f64,
    kind: &SupKind,
) -> Result<(f64, f64, f64)> {
    let t_lo = t0 - radii.r3 * radii.r3;
    if t_lo < u.t_start - 1e-12 {
        return Err(Error::validation(format!(
            "cylinder reaches back to {t_lo}, before the solved start {}",
            u.t_start
        )));
    }
    let level_t0 = u.time_level(t0)?;
    let sup_at = |r: f64, level: usize| -> Result<f64> {
        match kind {
            SupKind::Ellipsoid => u.sup_on_ellipsoid(tensor, r, level),
            SupKind::Ball => u.sup_on_ball(r, level),
        }
    };
    let delta = sup_at(radii.r1, level_t0)?;
    let mid = sup_at(radii.r2, level_t0)?;
    let mut cyl = mid;
    for (level, &t) in u.stored_times.iter().enumerate() {
        if t > t_lo + 1e-12 && t <= t0 + 1e-12 {
            cyl = cyl.max(sup_at(radii.r3, level)?);
        }
    }
    Ok((delta, mid, cyl))
}

fn assemble_report(
    eps: f64,
    radii: &Radii,
    t0: f64,
    alpha_value: f64,
    delta: f64,
    mid: f64,
    cyl: f64,
    options: &VerifyOptions,
    mut warnings: Vec<String>,
) -> Result<InequalityReport> {
    if eps > radii.r3 / 4.0 {
        warnings.push(format!(
            "eps={eps} exceeds r3/4={:.4}: oscillation scale comparable to the cylinder, inequality carries little content",
            radii.r3 / 4.0
        ));
    }
    // Degenerate inner sup: floor it at machine precision relative to the
    // cylinder sup so the order-selection logarithm stays finite.
    let mut delta_eff = delta;
    if cyl > 0.0 && delta < f64::EPSILON * cyl {
        delta_eff = f64::EPSILON * cyl;
        warnings.push("DEGENERATE: inner sup at machine floor".to_string());
    }
    if cyl == 0.0 {
        // Identically zero solution: nothing to verify.
        return Ok(InequalityReport {
            eps,
            radii: *radii,
            t0,
            delta,
            mid_sup: mid,
            cyl_sup: cyl,
            alpha: alpha_value,
            case: CaseTag::Case1,
            m: 1,
            bracket: 0.0,
            rhs: 0.0,
            c_obs: 0.0,
            pass: true,
            warnings,
        });
    }
    let (case, m) = select_m(delta_eff, cyl, eps, radii)?;
    let bracket_value = bracket(delta_eff, cyl, eps, radii, m);
    let e = eps_factor(eps, radii.r3);
    let eps_term = if e > 0.0 {
        radii.r3 / radii.r1 * e.powf(alpha_value) * cyl
    } else {
        0.0
    };
    let rhs = delta_eff.powf(alpha_value) * cyl.powf(1.0 - alpha_value) + eps_term;
    let c_obs = mid / rhs;
    Ok(InequalityReport {
        eps,
        radii: *radii,
        t0,
        delta,
        mid_sup: mid,
        cyl_sup: cyl,
        alpha: alpha_value,
        case,
        m,
        bracket: bracket_value,
        rhs,
        c_obs,
        pass: c_obs <= options.c_obs_cap,
        warnings,
    })
}

/// Verify the ellipsoidal two-sphere one-cylinder inequality on a solved
/// cylinder: sups on E_r1, E_r2 at t0 and on E_r3 x (t0 - r3^2, t0].
pub fn verify_two_sphere_one_cylinder(
    u: &GridSolution,
    tensor: &HomogenizedTensor,
    radii: &Radii,
    t0: f64,
    options: &VerifyOptions,
) -> Result<InequalityReport> {
    radii.validate()?;
    let a = alpha(radii)?;
    let (delta, mid, cyl) = cylinder_sups(u, tensor, radii, t0, &SupKind::Ellipsoid)?;
    assemble_report(u.eps, radii, t0, a, delta, mid, cyl, options, Vec::new())
}

/// Ball version: sups over B_r1, B_r2 and the cylinder B_r3 x (t0-r3^2, t0],
/// with the radius condition r2 < factor * mu * r3/12 and the exponent
/// alpha = log(C1 r3/r2)/log(r3/(2 r1)).
pub fn verify_two_sphere_one_cylinder_balls(
    u: &GridSolution,
    tensor: &HomogenizedTensor,
    radii: &Radii,
    t0: f64,
    options: &VerifyOptions,
) -> Result<InequalityReport> {
    let bound = options.ball_condition_factor * tensor.mu * radii.r3 / 12.0;
    if !(radii.r1 > 0.0 && radii.r1 < radii.r2 && radii.r2 < bound) {
        return Err(Error::validation(format!(
            "ball radius condition violated: need r1 < r2 < {:.6} (= factor * mu * r3/12), got ({}, {})",
            bound, radii.r1, radii.r2
        )));
    }
    let c1 = options
        .corollary_c1
        .unwrap_or(1.0 / (4.0 * tensor.mu1.sqrt()));
    let ratio = c1 * radii.r3 / radii.r2;
    if ratio <= 1.0 {
        return Err(Error::validation(format!(
            "ball exponent undefined: C1 r3 / r2 = {ratio:.4} <= 1"
        )));
    }
    let a = ratio.ln() / (radii.r3 / (2.0 * radii.r1)).ln();
    if !(0.0 < a && a < 1.0) {
        return Err(Error::validation(format!(
            "ball exponent alpha = {a:.4} outside (0, 1)"
        )));
    }
    let (delta, mid, cyl) = cylinder_sups(u, tensor, radii, t0, &SupKind::Ball)?;
    let warnings = vec![format!("C1={c1:.6}")];
    assemble_report(u.eps, radii, t0, a, delta, mid, cyl, options, warnings)
}

/// Potential-equation verification: gauge v = exp(mean(V) t) u, check the
/// transformed equation residual at interior probes, and verify the
/// inequality on v. Returns the report and the residual sup.
pub fn verify_with_potential(
    field: &CoefficientField,
    u: &GridSolution,
    tensor: &HomogenizedTensor,
    radii: &Radii,
    t0: f64,
    mean_v: f64,
    options: &VerifyOptions,
) -> Result<(InequalityReport, f64)> {
    if u.eps > radii.r3 {
        return Err(Error::validation(format!(
            "hypothesis eps <= r3 violated: eps={} > r3={}",
            u.eps, radii.r3
        )));
    }
    let pot = u.potential.as_ref().ok_or_else(|| {
        Error::validation("solution carries no potential record; solve with one")
    })?;
    let v = u.level_scaled(|t| (mean_v * t).exp());
    let residual = gauge_transform_residual_of(field, &v, pot.node_values.as_slice(), mean_v)?;
    let mut report = verify_two_sphere_one_cylinder(&v, tensor, radii, t0, options)?;
    report
        .warnings
        .push(format!("gauge_residual={residual:.3e}"));
    Ok((report, residual))
}

/// Gauge a potential-equation solution and measure the residual of the
/// transformed equation d_t v - div(A_eps grad v) = (mean(V) - V(x/eps)) v
/// at interior probes. The solve's O(k) error enters the residual, so a
/// small time step is needed for tight tolerances.
pub fn gauge_transform_residual(
    field: &CoefficientField,
    u: &GridSolution,
    mean_v: f64,
) -> Result<f64> {
    let pot = u.potential.as_ref().ok_or_else(|| {
        Error::validation("solution carries no potential record; solve with one")
    })?;
    let v = u.level_scaled(|t| (mean_v * t).exp());
    gauge_transform_residual_of(field, &v, pot.node_values.as_slice(), mean_v)
}

/// Centered-difference residual of d_t v - div(A_eps grad v) - (mean(V) -
/// V(x/eps)) v at interior probes on the stored grid.
fn gauge_transform_residual_of(
    field: &CoefficientField,
    v: &GridSolution,
    pot_nodes: &[f64],
    mean_v: f64,
) -> Result<f64> {
    if v.d != 1 {
        return Err(Error::validation(
            "gauge residual probes are implemented for d = 1",
        ));
    }
    if v.levels() < 3 {
        return Err(Error::validation(
            "need at least 3 stored levels for the residual probe",
        ));
    }
    let dt = v.k * v.stride as f64;
    let mut worst = 0.0f64;
    let n = v.n;
    let level_picks = [v.levels() / 3, v.levels() / 2, 2 * v.levels() / 3];
    for &level in &level_picks {
        if level == 0 || level + 1 >= v.levels() {
            continue;
        }
        let t = v.stored_times[level];
        let ts = if v.eps > 0.0 { t / (v.eps * v.eps) } else { t };
        let prev = v.level_values(level - 1);
        let cur = v.level_values(level);
        let next = v.level_values(level + 1);
        for frac in [4, 3, 2] {
            let i = n / frac;
            if i == 0 || i >= n {
                continue;
            }
            let x = v.axis_coord(i);
            let xw = x - 0.5 * v.h;
            let xe = x + 0.5 * v.h;
            let scale = |z: f64| if v.eps > 0.0 { z / v.eps } else { z };
            let aw = field.diag_entry(0, &[scale(xw)], ts);
            let ae = field.diag_entry(0, &[scale(xe)], ts);
            let div = (ae * (cur[i + 1] - cur[i]) - aw * (cur[i] - cur[i - 1])) / (v.h * v.h);
            let dtv = (next[i] - prev[i]) / (2.0 * dt);
            let r = dtv - div - (mean_v - pot_nodes[i]) * cur[i];
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// Where the extrapolation samples come from.
pub enum SolutionView<'a> {
    /// Closed-form solution (x, t) -> u, e.g. the homogenized kernel.
    Analytic(&'a dyn Fn(&[f64], f64) -> f64),
    /// A solved grid; samples are interpolated multilinearly.
    Grid(&'a GridSolution),
}

/// Extrapolation-identity diagnostic at one point: the target u(x0, t0),
/// the extrapolant sum_i c_i u(h_i x0 r1/r2, t0), their gap, and the
/// predicted bracket envelope when the sups are available.
#[derive(Debug, Clone)]
pub struct RepresentationRecord {
    pub x0: Vec<f64>,
    pub t0: f64,
    pub m: usize,
    pub target: f64,
    pub extrapolant: f64,
    pub residual: f64,
    /// Double-precision cancellation floor of the extrapolation sum,
    /// eps_mach * (|target| + sum |c_i f(h_i)|). Residuals below this are
    /// indistinguishable from rounding.
    pub rounding_floor: f64,
    /// bracket(delta, N, eps, radii, m) when computed from a grid solution.
    pub predicted_envelope: Option<f64>,
}

/// Evaluate the extrapolation identity u(x0, t0) ~ sum c_i u(x_i, t0) with
/// nodes x_i = h_i x0 r1/r2 on the ray through x0.
pub fn representation_decompose(
    source: &SolutionView<'_>,
    tensor: &HomogenizedTensor,
    x0: &[f64],
    t0: f64,
    radii: &Radii,
    eps: f64,
    m: usize,
) -> Result<RepresentationRecord> {
    radii.validate()?;
    let norm_x0 = tensor.anisotropic_norm(x0);
    if norm_x0 >= radii.r2 {
        return Err(Error::validation(format!(
            "x0 must lie in the middle ellipsoid: |S x0| = {norm_x0:.4} >= r2 = {}",
            radii.r2
        )));
    }
    let system = build_system(radii.r1, radii.r2, radii.r3, m)?;
    let ray_scale = radii.r1 / radii.r2;
    let nodes: Vec<Vec<f64>> = system
        .nodes
        .iter()
        .map(|&h| x0.iter().map(|&c| h * c * ray_scale).collect())
        .collect();

    let eval = |x: &[f64]| -> Result<f64> {
        match source {
            SolutionView::Analytic(f) => Ok(f(x, t0)),
            SolutionView::Grid(u) => {
                for (axis, &c) in x.iter().enumerate() {
                    let _ = axis;
                    if c.abs() > u.radius + 1e-12 {
                        return Err(Error::validation(format!(
                            "extrapolation node {x:?} is outside the solved box"
                        )));
                    }
                }
                let level = u.time_level(t0)?;
                Ok(u.value_at(x, level))
            }
        }
    };

    let target = eval(x0)?;
    let samples: Vec<f64> = nodes
        .iter()
        .map(|x| eval(x))
        .collect::<Result<Vec<f64>>>()?;
    let extrapolant = system.extrapolate(&samples)?;
    let residual = (target - extrapolant).abs();
    let rounding_floor = f64::EPSILON
        * (target.abs()
            + system
                .weights
                .iter()
                .zip(&samples)
                .map(|(c, f)| (c * f).abs())
                .sum::<f64>());

    let predicted_envelope = match source {
        SolutionView::Grid(u) => {
            let (delta, _mid, cyl) = cylinder_sups(u, tensor, radii, t0, &SupKind::Ellipsoid)?;
            let delta_eff = delta.max(f64::EPSILON * cyl);
            Some(bracket(delta_eff, cyl, eps, radii, m))
        }
        SolutionView::Analytic(_) => None,
    };

    Ok(RepresentationRecord {
        x0: x0.to_vec(),
        t0,
        m,
        target,
        extrapolant,
        residual,
        rounding_floor,
        predicted_envelope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::factor_s;
    use crate::kernels::gamma0;
    use crate::linalg::Mat;
    use crate::pdesolve::{solve_cylinder, BoundaryData, BoxDomain, GridSpec, PotentialSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn identity_tensor() -> HomogenizedTensor {
        factor_s(&Mat::identity(1), 1.0, 1.0).unwrap()
    }

    const RADII: Radii = Radii {
        r1: 1.0,
        r2: 2.0,
        r3: 25.0,
    };

    #[test]
    fn alpha_worked_value_and_properties() {
        let a = alpha(&RADII).unwrap();
        assert!((a - 0.451130).abs() < 1e-6, "{a}");
        // Scale invariance: ratios only.
        for lam in [0.05, 3.0, 117.0] {
            let s = alpha(&RADII.scaled(lam)).unwrap();
            assert!((s - a).abs() < 1e-12);
        }
        // alpha in (0,1) across admissible random radii.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let r1 = rng.gen_range(0.01..1.0);
            let r2 = r1 * rng.gen_range(1.01..4.0);
            let r3 = r2 * rng.gen_range(12.01..40.0);
            let a = alpha(&Radii::new(r1, r2, r3)).unwrap();
            assert!(a > 0.0 && a < 1.0);
        }
        assert!(alpha(&Radii::new(2.0, 1.0, 25.0)).is_err());
    }

    #[test]
    fn order_selection_reproduces_worked_examples() {
        // m0 = floor(log(100)/log(12.5)) + 1 = 2.
        let (case, m) = select_m(1.0, 100.0, 0.0, &RADII).unwrap();
        assert_eq!(case, CaseTag::Case1);
        assert_eq!(m, 2);
        // eps = 0.01: LHS ~ 0.0501 <= RHS 0.1024 -> Case 1.
        let (case, m) = select_m(1.0, 100.0, 0.01, &RADII).unwrap();
        assert_eq!((case, m), (CaseTag::Case1, 2));
        // eps = 0.05: LHS ~ 0.199 > 0.1024 -> Case 2.
        let (case, _m) = select_m(1.0, 100.0, 0.05, &RADII).unwrap();
        assert_eq!(case, CaseTag::Case2);
        // m1 arithmetic: eps = 0.01, r3 = 1, r1 = 0.1 gives
        // floor(log(0.04625)/log(0.2)) + 1 = 2. (The radius chain is not a
        // precondition of the order selection itself.)
        let radii = Radii::new(0.1, 0.3, 1.0);
        let e = eps_factor(0.01, 1.0);
        assert!((e - 0.04625).abs() < 1e-5);
        let (case, m) = select_m(1e-9, 1.0, 0.01, &radii).unwrap();
        assert_eq!(case, CaseTag::Case2);
        assert_eq!(m, 2);
        // delta = 0 degenerate path.
        let (case, m) = select_m(0.0, 1.0, 0.01, &radii).unwrap();
        assert_eq!((case, m), (CaseTag::Case2, 2));
        assert!(select_m(0.0, 1.0, 0.0, &radii).is_err());
        assert!(select_m(2.0, 1.0, 0.0, &radii).is_err());
    }

    #[test]
    fn selected_case_absorbs_the_right_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let n_sup = 10f64.powf(rng.gen_range(-2.0..2.0));
            let delta = n_sup * 10f64.powf(rng.gen_range(-12.0..0.0));
            let eps = if rng.gen_bool(0.2) {
                0.0
            } else {
                10f64.powf(rng.gen_range(-4.0..-0.5))
            };
            let (case, m) = select_m(delta, n_sup, eps, &RADII).unwrap();
            let q = 2.0 * RADII.r2 / RADII.r1;
            let s = 4.0 * RADII.r2 / RADII.r3;
            let e = eps_factor(eps, RADII.r3);
            let term2 = s.powi(m as i32) * n_sup;
            let term3 = q.powi(m as i32) * e * n_sup;
            match case {
                CaseTag::Case1 => assert!(term3 <= term2 * (1.0 + 1e-12)),
                CaseTag::Case2 => assert!(term2 <= term3 * (1.0 + 1e-12)),
            }
        }
    }

    #[test]
    fn selected_order_is_near_optimal() {
        // bracket(selected m) <= (2 r2/r1) * exhaustive minimum over m <= 60.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let q = 2.0 * RADII.r2 / RADII.r1;
        for _ in 0..100 {
            let n_sup = 10f64.powf(rng.gen_range(-2.0..2.0));
            let delta = n_sup * 10f64.powf(rng.gen_range(-12.0..0.0));
            let eps = if rng.gen_bool(0.25) {
                0.0
            } else {
                10f64.powf(rng.gen_range(-4.0..-0.5))
            };
            let (_case, m) = select_m(delta, n_sup, eps, &RADII).unwrap();
            let chosen = bracket(delta, n_sup, eps, &RADII, m);
            let best = (1..=60)
                .map(|mm| bracket(delta, n_sup, eps, &RADII, mm))
                .fold(f64::INFINITY, f64::min);
            assert!(
                chosen <= q * best * (1.0 + 1e-12),
                "delta={delta:.3e} N={n_sup:.3e} eps={eps:.3e}: chosen {chosen:.3e} vs best {best:.3e}"
            );
        }
    }

    #[test]
    fn bracket_collapses_at_order_one_without_eps() {
        let b = bracket(0.3, 2.0, 0.0, &RADII, 1);
        let expect = 0.3 + (4.0 * 2.0 / 25.0) * 2.0;
        assert!((b - expect).abs() < 1e-15);
    }

    #[test]
    fn rhs_worked_value_and_monotonicity() {
        // eps = 0, delta = N collapses to N.
        let r = inequality_rhs(5.0, 5.0, 0.0, &RADII).unwrap();
        assert!((r - 5.0).abs() < 1e-12);
        // delta=1, N=100: 100^(1-alpha) = 12.525 +- 0.01.
        let r = inequality_rhs(1.0, 100.0, 0.0, &RADII).unwrap();
        assert!((r - 12.525).abs() < 0.01, "{r}");
        // Strictly increasing in eps.
        let mut prev = r;
        for eps in [1e-4, 1e-3, 1e-2, 0.1, 1.0] {
            let v = inequality_rhs(1.0, 100.0, eps, &RADII).unwrap();
            assert!(v > prev, "eps={eps}: {v} <= {prev}");
            prev = v;
        }
    }

    #[test]
    fn sup_slice_constant_and_linear_profiles() {
        let tensor = identity_tensor();
        let field = CoefficientField::identity(1);
        let domain = BoxDomain::new(1.0, -0.1, 0.0);
        let cu = solve_cylinder(
            &field,
            0.0,
            None,
            &domain,
            &BoundaryData::constant(2.5),
            GridSpec::new(64, 16, 16),
        )
        .unwrap();
        let s = sup_slice(&cu, &tensor, 0.5, 0.0).unwrap();
        assert!((s - 2.5).abs() < 1e-9);

        // Linear profile u = x: the grid max over nodes inside (-0.5, 0.5)
        // sits within one cell of the continuum sup 0.5, and refinement
        // increases it monotonically toward 0.5.
        let linear = BoundaryData::new(
            "linear",
            Arc::new(|x: &[f64]| x[0]),
            Arc::new(|x: &[f64], _t: f64| x[0]),
        );
        let mut prev = 0.0f64;
        for n in [32usize, 64, 128] {
            let u = solve_cylinder(&field, 0.0, None, &domain, &linear, GridSpec::new(n, 16, 16))
                .unwrap();
            let s = sup_slice(&u, &tensor, 0.5, 0.0).unwrap();
            let h = u.h;
            assert!(s < 0.5 && s >= 0.5 - h - 1e-9, "n={n}: sup {s}");
            assert!(s >= prev - 1e-12, "refinement decreased the sup");
            prev = s;
        }

        // Too coarse for the inner region: an odd cell count leaves no node
        // near the origin, so the tiny ellipsoid is empty on the grid.
        let coarse = solve_cylinder(
            &field,
            0.0,
            None,
            &domain,
            &BoundaryData::constant(1.0),
            GridSpec::new(9, 16, 16),
        )
        .unwrap();
        assert!(sup_slice(&coarse, &tensor, 0.05, 0.0).is_err());
    }

    fn constant_solution(c: f64) -> GridSolution {
        let field = CoefficientField::identity(1);
        let domain = BoxDomain::new(1.0, -0.6, 0.0);
        solve_cylinder(
            &field,
            0.0,
            None,
            &domain,
            &BoundaryData::constant(c),
            GridSpec::new(256, 64, 4),
        )
        .unwrap()
    }

    const SMALL_RADII: Radii = Radii {
        r1: 0.02,
        r2: 0.04,
        r3: 0.6,
    };

    #[test]
    fn constant_solutions_have_bounded_observed_constant() {
        let u = constant_solution(3.0);
        let tensor = identity_tensor();
        let report =
            verify_two_sphere_one_cylinder(&u, &tensor, &SMALL_RADII, 0.0, &VerifyOptions::default())
                .unwrap();
        // The marched constant drifts by a few ulps per step.
        assert!((report.delta - 3.0).abs() < 1e-9);
        assert!((report.mid_sup - 3.0).abs() < 1e-9);
        assert!((report.cyl_sup - 3.0).abs() < 1e-9);
        assert!(report.c_obs <= 1.0 + 1e-9);
        assert!(report.pass);
        assert!(report.alpha > 0.0 && report.alpha < 1.0);
    }

    #[test]
    fn observed_constant_is_scale_invariant() {
        let u = constant_solution(1.3);
        let scaled = u.scaled(7.0);
        let tensor = identity_tensor();
        let opts = VerifyOptions::default();
        let a = verify_two_sphere_one_cylinder(&u, &tensor, &SMALL_RADII, 0.0, &opts).unwrap();
        let b = verify_two_sphere_one_cylinder(&scaled, &tensor, &SMALL_RADII, 0.0, &opts).unwrap();
        assert!(
            (a.c_obs - b.c_obs).abs() <= 1e-12 * a.c_obs.max(1.0),
            "{} vs {}",
            a.c_obs,
            b.c_obs
        );
    }

    #[test]
    fn ball_and_ellipsoid_reports_coincide_for_identity_tensor() {
        // With A^ = I and C1 = 1/4 the ball exponent equals the ellipsoid
        // exponent and E_r = B_r, so the reports agree to rounding.
        let field = CoefficientField::identity(1);
        let domain = BoxDomain::new(1.0, -0.6, 0.0);
        let data = crate::pdesolve::fourier_boundary_data(&domain, 1, 3, 0);
        let u = solve_cylinder(&field, 0.0, None, &domain, &data, GridSpec::new(512, 256, 8))
            .unwrap();
        let tensor = identity_tensor();
        let opts = VerifyOptions::default();
        let a = verify_two_sphere_one_cylinder(&u, &tensor, &SMALL_RADII, 0.0, &opts).unwrap();
        let b =
            verify_two_sphere_one_cylinder_balls(&u, &tensor, &SMALL_RADII, 0.0, &opts).unwrap();
        assert!((a.alpha - b.alpha).abs() < 1e-12);
        assert!((a.delta - b.delta).abs() < 1e-15);
        assert!((a.c_obs - b.c_obs).abs() <= 1e-12 * a.c_obs.max(1.0));
    }

    #[test]
    fn ball_radius_condition_is_enforced() {
        let u = constant_solution(1.0);
        let tensor = factor_s(&Mat::diag(&[3.0f64.sqrt()]), 1.0 / 3.0, 3.0).unwrap();
        // mu = 1/3: bound is r3/36, and r2 = 0.04 > 0.6/36.
        let err = verify_two_sphere_one_cylinder_balls(
            &u,
            &tensor,
            &SMALL_RADII,
            0.0,
            &VerifyOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("radius condition"), "{err}");
    }

    #[test]
    fn zero_potential_gauge_is_the_identity() {
        let field = CoefficientField::identity(1);
        let domain = BoxDomain::new(1.0, -0.6, 0.0);
        let zero_pot = PotentialSpec::builtin("zero", 0.0).unwrap();
        let data = BoundaryData::constant(2.0);
        let u = solve_cylinder(&field, 0.0, Some(&zero_pot), &domain, &data, GridSpec::new(256, 128, 4))
            .unwrap();
        let tensor = identity_tensor();
        let opts = VerifyOptions::default();
        let (report, residual) =
            verify_with_potential(&field, &u, &tensor, &SMALL_RADII, 0.0, 0.0, &opts).unwrap();
        let plain = verify_two_sphere_one_cylinder(&u, &tensor, &SMALL_RADII, 0.0, &opts).unwrap();
        assert!((report.c_obs - plain.c_obs).abs() <= 1e-14 * plain.c_obs.max(1.0));
        assert!(residual < 1e-10, "residual {residual}");
    }

    #[test]
    fn constant_potential_gauge_removes_the_potential() {
        // V = c: v = exp(ct) u solves the potential-free equation exactly.
        // The solver's O(k) error enters the measured residual, so the check
        // runs on a short window with a fine time step.
        let field = CoefficientField::identity(1);
        let domain = BoxDomain::new(1.0, -0.05, 0.0);
        let pot = PotentialSpec::builtin("constant", 1.0).unwrap();
        // u = (x^2 + 2t) e^{-t} solves u_t = u_xx - u; the gauge v = e^t u
        // is the plain caloric polynomial.
        let caloric = |x: f64, t: f64| (x * x + 2.0 * t) * (-t).exp();
        let data = BoundaryData::new(
            "caloric-decayed",
            Arc::new(move |x: &[f64]| caloric(x[0], -0.05)),
            Arc::new(move |x: &[f64], t: f64| caloric(x[0], t)),
        );
        let u = solve_cylinder(
            &field,
            0.0,
            Some(&pot),
            &domain,
            &data,
            GridSpec::new(512, 200_704, 512),
        )
        .unwrap();
        let residual = gauge_transform_residual(&field, &u, 1.0).unwrap();
        assert!(residual <= 1e-6, "gauge residual {residual}");
    }

    #[test]
    fn potential_hypothesis_eps_le_r3_is_enforced() {
        let field = CoefficientField::identity(1);
        let domain = BoxDomain::new(1.0, -0.6, 0.0);
        let pot = PotentialSpec::builtin("zero", 0.0).unwrap();
        let data = BoundaryData::constant(1.0);
        let mut u = solve_cylinder(&field, 0.0, Some(&pot), &domain, &data, GridSpec::new(64, 64, 4))
            .unwrap();
        u.eps = 10.0; // fake an eps larger than r3
        let err = verify_with_potential(
            &field,
            &u,
            &identity_tensor(),
            &SMALL_RADII,
            0.0,
            0.0,
            &VerifyOptions::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("eps <= r3"), "{err}");
    }

    #[test]
    fn representation_is_exact_on_low_degree_polynomials() {
        let tensor = identity_tensor();
        let poly = |x: &[f64], _t: f64| 1.5 + 2.0 * x[0] - 0.3 * x[0] * x[0] + 0.1 * x[0].powi(3);
        let view = SolutionView::Analytic(&poly);
        let record =
            representation_decompose(&view, &tensor, &[1.5], 0.0, &RADII, 0.0, 4).unwrap();
        assert!(
            record.residual <= 1e-10 * record.target.abs().max(1.0),
            "residual {}",
            record.residual
        );
    }

    #[test]
    fn representation_residual_decays_geometrically_for_remote_kernel_sources() {
        // u = G0(., t0; y*, s*) with y* just outside E_r3 and s* just below
        // t0 - r3^2, the geometry with the slowest decay allowed by the
        // hypotheses. The residual collapses much faster than the contour
        // bound's 4 r2/r3 rate and reaches the double-precision cancellation
        // floor around m = 7; below the floor the decay claim is vacuous.
        let tensor = factor_s(&Mat::diag(&[3.0f64.sqrt()]), 1.0 / 3.0, 3.0).unwrap();
        let y_star = vec![33.0]; // |S y*| = 25.08 >= r3
        let s_star = -627.0;
        let u = move |x: &[f64], t: f64| gamma0(&tensor, x, t, &y_star, s_star).unwrap();
        let tensor2 = factor_s(&Mat::diag(&[3.0f64.sqrt()]), 1.0 / 3.0, 3.0).unwrap();
        let view = SolutionView::Analytic(&u);
        assert!(tensor2.anisotropic_norm(&[33.0]) >= RADII.r3);
        let mut prev: Option<f64> = None;
        for m in 2..=8 {
            let record =
                representation_decompose(&view, &tensor2, &[2.4], 0.0, &RADII, 0.0, m).unwrap();
            if let Some(p) = prev {
                assert!(
                    record.residual <= (0.6 * p).max(4.0 * record.rounding_floor),
                    "m={m}: residual {} vs prev {p}, floor {}",
                    record.residual,
                    record.rounding_floor
                );
            }
            prev = Some(record.residual);
        }
    }

}
