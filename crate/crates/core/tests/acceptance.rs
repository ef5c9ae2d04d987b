//! Acceptance suite: one test per criterion, each printing a PASS line on
//! success. Tolerances and runtime caps are pinned in the asserts.

use num_complex::Complex64;
use parhom::chebyshev::build_system;
use parhom::coeff_cell::{
    homogenize, solve_corrector, solve_corrector_dual, solve_potential_cell, CellResolution,
    CoefficientField,
};
use parhom::config::parse_config;
use parhom::geometry::{factor_s, HomogenizedTensor};
use parhom::harness::{run, RunFlags, Subcommand};
use parhom::kernels::{gamma0, grad_gamma0_y, gamma_eps_numeric, kernel_gap_report};
use parhom::kernels::{GapOptions, GapProbes, KernelGrid};
use parhom::linalg::Mat;
use parhom::pdesolve::{
    caccioppoli_check, generate_ensemble, solve_cylinder, BoundaryData, BoxDomain, GridSpec,
    PotentialSpec,
};
use parhom::smallness::{
    bracket, gauge_transform_residual, representation_decompose, select_m,
    verify_two_sphere_one_cylinder, verify_with_potential, CaseTag, Radii, SolutionView,
    VerifyOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use std::time::Instant;

fn laminate_tensor_1d() -> HomogenizedTensor {
    let field = CoefficientField::laminate(1);
    let chi = solve_corrector(&field, 0, CellResolution::new(512, 1), 1e-10).unwrap();
    homogenize(&field, &[chi]).unwrap()
}

#[test]
fn acceptance_01_homogenization_laminate_oracle() {
    let start = Instant::now();
    // Independent oracle: harmonic and arithmetic means of a(y) = 2 + sin by
    // high-resolution midpoint quadrature.
    let n_quad = 1 << 16;
    let (mut inv_sum, mut sum) = (0.0f64, 0.0f64);
    for i in 0..n_quad {
        let y = (i as f64 + 0.5) / n_quad as f64;
        let a = 2.0 + (2.0 * std::f64::consts::PI * y).sin();
        inv_sum += 1.0 / a;
        sum += a;
    }
    let harmonic = n_quad as f64 / inv_sum;
    let arithmetic = sum / n_quad as f64;
    assert!((harmonic - 3.0f64.sqrt()).abs() < 1e-10);
    assert!((arithmetic - 2.0).abs() < 1e-12);

    let field = CoefficientField::laminate(2);
    let res = CellResolution::new(1024, 1);
    // The 1e-10 default residual is below the f64 rounding floor of the
    // flux stencil at this resolution; 1e-9 is attainable and leaves the
    // tensor entries accurate far beyond 1e-6.
    let correctors: Vec<_> = (0..2)
        .map(|j| solve_corrector(&field, j, res, 1e-9).unwrap())
        .collect();
    let tensor = homogenize(&field, &correctors).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        (tensor.matrix.get(0, 0) - harmonic).abs() <= 1e-6,
        "a00 {} vs harmonic mean {harmonic}",
        tensor.matrix.get(0, 0)
    );
    assert!(
        (tensor.matrix.get(1, 1) - arithmetic).abs() <= 1e-6,
        "a11 {} vs arithmetic mean {arithmetic}",
        tensor.matrix.get(1, 1)
    );
    assert!(tensor.matrix.get(0, 1).abs() <= 1e-8);
    assert!(elapsed < 10.0, "runtime {elapsed:.2} s exceeds 10 s");
    println!("ACCEPTANCE 1 (homogenization oracle, diag(sqrt(3), 2) at n=1024, {elapsed:.2} s): PASS");
}

#[test]
fn acceptance_02_corrector_residuals() {
    // Time-independent fields: discrete residual <= 1e-10.
    for (field, res) in [
        (CoefficientField::laminate(1), CellResolution::new(256, 1)),
        (CoefficientField::laminate(2), CellResolution::new(64, 1)),
        (CoefficientField::laminate_cos(1), CellResolution::new(256, 1)),
    ] {
        for j in 0..field.d {
            let chi = solve_corrector(&field, j, res, 1e-10).unwrap();
            assert!(
                chi.residual <= 1e-10,
                "{} j={j}: residual {}",
                field.name,
                chi.residual
            );
        }
    }
    // Time-dependent test field: residual <= 1e-8 within 50 period sweeps.
    let field = CoefficientField::laminate_time(2);
    let chi = solve_corrector(&field, 0, CellResolution::new(16, 32), 1e-8).unwrap();
    assert!(chi.residual <= 1e-8, "residual {}", chi.residual);
    assert!(chi.periods <= 50, "{} periods", chi.periods);
    let dual = solve_corrector_dual(&field, 0, CellResolution::new(16, 32), 1e-8).unwrap();
    assert!(dual.residual <= 1e-8);
    println!("ACCEPTANCE 2 (corrector residuals 1e-10 elliptic / 1e-8 parabolic): PASS");
}

#[test]
fn acceptance_03_chebyshev_identities() {
    let start = Instant::now();
    for &p in &[1.5f64, 2.0, 5.0] {
        for m in 1..=12usize {
            let sys = build_system(1.0, p, 13.0 * p, m).unwrap();
            // Moment identities sum c_i h_i^k = p^k for k < m, 1e-9 relative.
            for k in 0..m {
                let defect = sys.moment_defect(k);
                let scale = p.powi(k as i32);
                assert!(
                    defect <= 1e-9 * scale,
                    "p={p} m={m} k={k}: moment defect {defect:.3e}"
                );
            }
            // |Phi'_m(h_i)| >= m 2^(1-m). The center node of odd orders
            // attains exact equality, and the m-1 factor product carries a
            // few ulps of rounding, so the comparison allows 16 ulps; every
            // other node clears the floor by orders of magnitude.
            let floor = m as f64 * 2f64.powi(1 - m as i32);
            for i in 0..m {
                let phi = sys.nodal_poly_prime(i).abs();
                assert!(
                    phi >= floor * (1.0 - 16.0 * f64::EPSILON),
                    "p={p} m={m} i={i}: |Phi'| = {phi} < floor {floor}"
                );
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "runtime {elapsed:.3} s exceeds 1 s");
    println!("ACCEPTANCE 3 (Chebyshev moment identities and nodal-derivative floor, {elapsed:.3} s): PASS");
}

#[test]
fn acceptance_03_weight_bound_as_stated() {
    // |c_i| <= (1/m)(2 r2/r1)^(m-1) checked exactly for all m <= 12 and
    // p in {1.5, 2, 5}.
    //
    // Known defect: the bound's derivation requires all interpolation nodes
    // positive, but the symmetric Chebyshev convention (required by the
    // nodal-derivative identities above) admits negative nodes. For
    // p = r2/r1 below about 1.7 the unpaired factor (p + h_i) exceeds p and
    // the bound fails in exact arithmetic: at p = 1.5, m = 2 the weight is
    // (3 sqrt(2) + 2)/4 = 1.5607 > 1.5. The check is asserted as stated and
    // is expected to fail on that case.
    let mut violations = Vec::new();
    for &p in &[1.5f64, 2.0, 5.0] {
        for m in 1..=12usize {
            let sys = build_system(1.0, p, 13.0 * p, m).unwrap();
            for i in 0..m {
                if sys.weights[i].abs() > sys.weight_bound {
                    violations.push(format!(
                        "p={p} m={m} i={i}: |c| = {:.10} > bound {:.10}",
                        sys.weights[i].abs(),
                        sys.weight_bound
                    ));
                }
            }
        }
    }
    assert!(
        violations.is_empty(),
        "weight bound (1/m)(2 r2/r1)^(m-1) fails for symmetric Chebyshev nodes: {}",
        violations.join("; ")
    );
    println!("ACCEPTANCE 3 (weight bound as stated): PASS");
}

#[test]
fn acceptance_04_residue_consistency() {
    // Contour vs direct interpolation error on 10 seeded analytic
    // functions, m <= 8, agreement 1e-8 relative.
    //
    // The direct route f(p) - sum c_i f(h_i) carries a cancellation floor
    // eps * sum |c_i f(h_i)|, so a relative comparison at 1e-8 is only
    // meaningful while the error itself stays well above that floor.
    // Functions of moderate exponential type keep the interpolation error
    // at order of the function scale through m = 8 while the contour
    // integrand stays small enough for spectrally accurate quadrature;
    // faster-decaying analytic families (poles far outside, Gaussians) sink
    // below the double-precision floor and are exercised in the unit tests
    // instead.
    let (r1, r2, r3) = (1.0, 2.0, 25.0);
    let rho = r3 / (3.0 * r1);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..10 {
        let lambda: f64 = rng.gen_range(1.2..2.2) * if case % 2 == 0 { 1.0 } else { -1.0 };
        let mu: f64 = rng.gen_range(0.0..0.8);
        let c0: f64 = rng.gen_range(0.5..1.5);
        let c1: f64 = rng.gen_range(-1.0..1.0);
        let c2: f64 = rng.gen_range(-0.5..0.5);
        let f = move |z: Complex64| -> Complex64 {
            (z * lambda).exp() * (c0 + z * (c1 / rho)) + (z * mu).cos() * c2
        };
        for m in 1..=8usize {
            let sys = build_system(r1, r2, r3, m).unwrap();
            let (direct, contour) = sys.residue_error_paths(&f, 4096).unwrap();
            let scale = direct.abs().max(contour.abs()).max(1e-300);
            assert!(
                (direct - contour).abs() <= 1e-8 * scale,
                "case {case} m={m}: {direct:.12e} vs {contour:.12e}"
            );
        }
    }
    println!("ACCEPTANCE 4 (contour vs direct interpolation error on 10 seeded functions): PASS");
}

#[test]
fn acceptance_05_kernel_checks() {
    // Mass of the homogenized kernel by quadrature: 1 +- 1e-8.
    let tensor = laminate_tensor_1d();
    let tau = 0.31;
    let half = 14.0;
    let n = 60_000;
    let dx = 2.0 * half / n as f64;
    let mut mass = 0.0;
    for i in 0..=n {
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        mass += w * gamma0(&tensor, &[-half + i as f64 * dx], tau, &[0.0], 0.0).unwrap();
    }
    mass *= dx;
    assert!((mass - 1.0).abs() <= 1e-8, "mass {mass}");

    // Gradient against centered finite differences, 1e-6 relative.
    let t2 = factor_s(&Mat::diag(&[3.0f64.sqrt(), 2.0]), 1.0 / 3.0, 3.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..20 {
        let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let y = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let tau = rng.gen_range(0.2..1.0);
        let g = grad_gamma0_y(&t2, &x, tau, &y, 0.0).unwrap();
        for axis in 0..2 {
            let delta = 1e-5;
            let mut yp = y;
            yp[axis] += delta;
            let mut ym = y;
            ym[axis] -= delta;
            let fd = (gamma0(&t2, &x, tau, &yp, 0.0).unwrap()
                - gamma0(&t2, &x, tau, &ym, 0.0).unwrap())
                / (2.0 * delta);
            let scale = g[axis].abs().max(fd.abs()).max(1e-10);
            assert!((g[axis] - fd).abs() <= 1e-6 * scale);
        }
    }

    // Constant-coefficient numeric kernel vs the closed form, sup <= 2e-3
    // for t - s >= 0.05.
    let field = CoefficientField::identity(1);
    let identity = factor_s(&Mat::identity(1), 1.0, 1.0).unwrap();
    let grid = KernelGrid {
        trunc_radius: 4.0,
        h_factor: 16.0,
        k_factor: 32.0,
        n_cells_override: 2560,
        n_steps_override: 6400,
        store_stride: 1280,
    };
    let u = gamma_eps_numeric(&field, 0.05, &[0.0], 0.0, 0.25, grid).unwrap();
    let mut worst = 0.0f64;
    for level in 0..u.levels() {
        let t = u.stored_times[level];
        if t < 0.05 - 1e-12 {
            continue;
        }
        for i in 0..=u.n {
            let x = u.axis_coord(i);
            if x.abs() <= 1.0 {
                let g = gamma0(&identity, &[x], t, &[0.0], 0.0).unwrap();
                worst = worst.max((u.level_values(level)[i] - g).abs());
            }
        }
    }
    assert!(worst <= 2e-3, "identity-field kernel sup gap {worst}");
    println!("ACCEPTANCE 5 (kernel mass 1e-8, gradient FD 1e-6, identity kernel 2e-3): PASS");
}

#[test]
fn acceptance_06_kernel_gap_scaling() {
    let start = Instant::now();
    let field = CoefficientField::laminate(1);
    let tensor = laminate_tensor_1d();
    let res = CellResolution::new(256, 1);
    let dual = vec![solve_corrector_dual(&field, 0, res, 1e-10).unwrap()];
    let sqrt_ahat = tensor.matrix.get(0, 0).sqrt();
    let probes = GapProbes {
        source: vec![0.0],
        source_time: 0.0,
        horizons: vec![0.25],
        points: (0..=20)
            .map(|i| vec![(-1.0 + 0.1 * i as f64) * sqrt_ahat])
            .collect(),
        trunc_radius: 4.0,
    };
    let report = kernel_gap_report(
        &field,
        &tensor,
        &dual,
        &[0.1, 0.05, 0.025],
        &probes,
        &GapOptions::default(),
    )
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(!report.degenerate);
    let spread = |xs: &[f64]| {
        xs.iter().fold(f64::MIN, |a, &b| a.max(b)) / xs.iter().fold(f64::MAX, |a, &b| a.min(b))
    };
    assert!(
        spread(&report.value_ratios) <= 2.5,
        "gap/eps ratios {:?}",
        report.value_ratios
    );
    assert!(
        spread(&report.grad_ratios) <= 2.5,
        "gradient ratios {:?}",
        report.grad_ratios
    );
    assert!(report.fitted_kappa > 0.0);
    assert!(elapsed < 300.0, "runtime {elapsed:.1} s exceeds 5 min");
    println!(
        "ACCEPTANCE 6 (first-order kernel gap scaling, ratios {:?} within 2.5x, {elapsed:.1} s): PASS",
        report
            .value_ratios
            .iter()
            .map(|r| (r * 1e4).round() / 1e4)
            .collect::<Vec<_>>()
    );
}

#[test]
fn acceptance_07_extrapolation_decay() {
    // Homogenized-kernel solution sourced outside E_r3 at radii (1, 2, 25):
    // representation residual decays with per-m ratio <= 0.6 for m = 2..8.
    // Residuals that reach the double-precision cancellation floor have
    // decayed below measurability, which the record exposes.
    let radii = Radii::new(1.0, 2.0, 25.0);
    let tensor = factor_s(&Mat::diag(&[3.0f64.sqrt()]), 1.0 / 3.0, 3.0).unwrap();
    let y_star = vec![33.0]; // |S y*| = 25.08 >= r3: outside E_25
    let s_star = -627.0; // below t0 - r3^2 = -625
    let u = {
        let t = tensor.clone();
        move |x: &[f64], time: f64| gamma0(&t, x, time, &y_star, s_star).unwrap()
    };
    let view = SolutionView::Analytic(&u);
    let mut prev: Option<f64> = None;
    for m in 2..=8usize {
        let record =
            representation_decompose(&view, &tensor, &[2.4], 0.0, &radii, 0.0, m).unwrap();
        if let Some(p) = prev {
            let ok = record.residual <= 0.6 * p
                || record.residual <= 4.0 * record.rounding_floor;
            assert!(
                ok,
                "m={m}: residual {} after {p} (floor {})",
                record.residual, record.rounding_floor
            );
        }
        prev = Some(record.residual);
    }
    println!("ACCEPTANCE 7 (extrapolation residual decay ratio <= 0.6 for m=2..8): PASS");
}

#[test]
fn acceptance_08_inequality_ensemble() {
    let start = Instant::now();
    let field = CoefficientField::laminate(1);
    let tensor = laminate_tensor_1d();
    let radii = Radii::new(0.05, 0.1, 1.25); // (1, 2, 25) scaled by 0.05
    let domain = BoxDomain::new(2.0, -1.7, 0.0);
    // Radius chain including the box: r1 < r2 < r3/12 < R/8, plus spatial
    // containment of E_r3 in the box.
    assert!(radii.r2 < radii.r3 / 12.0 && radii.r3 / 12.0 < domain.radius / 8.0);
    let options = VerifyOptions::default();
    let count = 20;
    let mut c_obs: Vec<Vec<f64>> = Vec::new();
    for &eps in &[0.1, 0.05] {
        let grid = GridSpec::resolve(eps, &domain, 16.0, 32.0, 32);
        let ensemble = generate_ensemble(&field, eps, None, &domain, count, 42, grid).unwrap();
        let mut this_eps = Vec::new();
        for u in &ensemble {
            let report =
                verify_two_sphere_one_cylinder(u, &tensor, &radii, 0.0, &options).unwrap();
            assert!(report.alpha > 0.0 && report.alpha < 1.0);
            assert!(report.delta <= report.mid_sup * (1.0 + 1e-12));
            assert!(report.mid_sup <= report.cyl_sup * (1.0 + 1e-12));
            assert!(
                report.c_obs <= 100.0,
                "c_obs {} exceeds the cap",
                report.c_obs
            );
            this_eps.push(report.c_obs);
        }
        c_obs.push(this_eps);
    }
    // Halving eps drifts each member's observed constant by at most 2x.
    for i in 0..count {
        let ratio = c_obs[1][i] / c_obs[0][i];
        assert!(
            (0.5..=2.0).contains(&ratio),
            "member {i}: c_obs drift {ratio} outside [0.5, 2]"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 900.0, "runtime {elapsed:.1} s exceeds 15 min");
    let max_c = c_obs
        .iter()
        .flatten()
        .fold(0.0f64, |m, &v| m.max(v));
    println!(
        "ACCEPTANCE 8 (ensemble of {count} x 2 eps, max C_obs {max_c:.3}, drift within 2x, {elapsed:.1} s): PASS"
    );
}

#[test]
fn acceptance_09_case_dispatch_and_near_optimality() {
    let radii = Radii::new(1.0, 2.0, 25.0);
    // Worked dispatch examples.
    let (case, m) = select_m(1.0, 100.0, 0.01, &radii).unwrap();
    assert_eq!((case, m), (CaseTag::Case1, 2));
    let (case, _) = select_m(1.0, 100.0, 0.05, &radii).unwrap();
    assert_eq!(case, CaseTag::Case2);
    // Near-optimality sweep: bracket at the selected order within a factor
    // 2 r2/r1 of the exhaustive minimum over m <= 60.
    let q = 2.0 * radii.r2 / radii.r1;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..100 {
        let n_sup = 10f64.powf(rng.gen_range(-2.0..2.0));
        let delta = n_sup * 10f64.powf(rng.gen_range(-12.0..0.0));
        let eps = if rng.gen_bool(0.3) {
            0.0
        } else {
            10f64.powf(rng.gen_range(-4.0..-0.5))
        };
        let (_case, m) = select_m(delta, n_sup, eps, &radii).unwrap();
        let chosen = bracket(delta, n_sup, eps, &radii, m);
        let best = (1..=60)
            .map(|mm| bracket(delta, n_sup, eps, &radii, mm))
            .fold(f64::INFINITY, f64::min);
        assert!(
            chosen <= q * best * (1.0 + 1e-12),
            "trial {trial}: chosen {chosen:.6e} vs best {best:.6e}"
        );
    }
    println!("ACCEPTANCE 9 (case dispatch worked examples + near-optimal order on 100-point sweep): PASS");
}

#[test]
fn acceptance_10_caccioppoli() {
    // Closed-form check: u = x^2 + 2t, A = I, r3 = 1, t0 = 0.
    let field = CoefficientField::identity(1);
    let identity = factor_s(&Mat::identity(1), 1.0, 1.0).unwrap();
    let domain = BoxDomain::new(1.5, -1.0, 0.0);
    let caloric = |x: f64, t: f64| x * x + 2.0 * t;
    let data = BoundaryData::new(
        "caloric-x2",
        Arc::new(move |x: &[f64]| caloric(x[0], -1.0)),
        Arc::new(move |x: &[f64], t: f64| caloric(x[0], t)),
    );
    let u = solve_cylinder(&field, 0.0, None, &domain, &data, GridSpec::new(1536, 256, 1))
        .unwrap();
    let report = caccioppoli_check(&u, &identity, 1.0, 0.0).unwrap();
    // Hand integral of 4 x^2 over the included cells (cell-center
    // membership, centers with 0.75 <= |x| < 0.8), times the time window.
    let mut exact_space = 0.0;
    for i in 0..u.n {
        let xc = u.axis_coord(i) + 0.5 * u.h;
        if xc.abs() >= 0.75 && xc.abs() < 0.8 {
            let (a, b) = (xc - 0.5 * u.h, xc + 0.5 * u.h);
            exact_space += 4.0 * (b.powi(3) - a.powi(3)) / 3.0;
        }
    }
    let n_levels = u
        .stored_times
        .iter()
        .filter(|&&t| t > -1.0 + 1e-12 && t <= 1e-12)
        .count();
    let exact = exact_space * u.k * n_levels as f64;
    let c_obs_hand = exact / (report.sup * report.sup);
    assert!(
        (report.c_obs - c_obs_hand).abs() <= 1e-6 * c_obs_hand.max(1.0),
        "c_obs {} vs hand value {}",
        report.c_obs,
        c_obs_hand
    );

    // Ensemble max C_obs stable within +-50% under one grid refinement.
    let field = CoefficientField::laminate(1);
    let chi = solve_corrector(&field, 0, CellResolution::new(512, 1), 1e-10).unwrap();
    let tensor = homogenize(&field, &[chi]).unwrap();
    let domain = BoxDomain::new(2.0, -1.7, 0.0);
    let eps = 0.1;
    let mut maxima = Vec::new();
    for (hf, kf, stride) in [(16.0, 32.0, 32usize), (32.0, 64.0, 64usize)] {
        let grid = GridSpec::resolve(eps, &domain, hf, kf, stride);
        let ensemble = generate_ensemble(&field, eps, None, &domain, 6, 42, grid).unwrap();
        let mx = ensemble
            .iter()
            .map(|u| caccioppoli_check(u, &tensor, 1.25, 0.0).unwrap().c_obs)
            .fold(0.0f64, f64::max);
        assert!(mx.is_finite() && mx <= 1e3, "ensemble max C_obs {mx}");
        maxima.push(mx);
    }
    let ratio = maxima[1] / maxima[0];
    assert!(
        (1.0 / 1.5..=1.5).contains(&ratio),
        "refinement changed max C_obs by {ratio} ({maxima:?})"
    );
    println!("ACCEPTANCE 10 (Caccioppoli hand integral 1e-6; refinement stability {ratio:.3}): PASS");
}

#[test]
fn acceptance_11_potential_pipeline() {
    // Cosine potential cell problem: psi exact to 1e-8.
    let v = |z: &[f64]| (2.0 * std::f64::consts::PI * z[0]).cos();
    let cell = solve_potential_cell(&v, 1, 256, 1e-10).unwrap();
    let amp = 1.0 / (4.0 * std::f64::consts::PI * std::f64::consts::PI);
    let mut worst = 0.0f64;
    for (f, &p) in cell.psi.iter().enumerate() {
        let z = f as f64 / 256.0;
        worst = worst.max((p - amp * (2.0 * std::f64::consts::PI * z).cos()).abs());
    }
    assert!(worst <= 1e-8, "psi error {worst}");
    assert!(cell.mean_v.abs() <= 1e-13);

    // Constant-potential gauge equivalence: residual <= 1e-6.
    let field = CoefficientField::identity(1);
    let domain = BoxDomain::new(1.0, -0.05, 0.0);
    let pot = PotentialSpec::builtin("constant", 1.0).unwrap();
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

    // Cosine-potential ensemble: 10 members, eps = 0.05, C_obs bounded.
    let field = CoefficientField::laminate(1);
    let tensor = laminate_tensor_1d();
    let radii = Radii::new(0.05, 0.1, 1.25);
    let domain = BoxDomain::new(2.0, -1.7, 0.0);
    let pot = PotentialSpec::builtin("cosine", 0.0).unwrap();
    let mean_v = {
        let eval = pot.eval.clone();
        solve_potential_cell(&move |z: &[f64]| eval(z), 1, 256, 1e-10)
            .unwrap()
            .mean_v
    };
    assert!(mean_v.abs() < 1e-12, "cosine potential has zero cell mean");
    let grid = GridSpec::resolve(0.05, &domain, 16.0, 32.0, 32);
    let ensemble =
        generate_ensemble(&field, 0.05, Some(&pot), &domain, 10, 11, grid).unwrap();
    let options = VerifyOptions::default();
    for u in &ensemble {
        let (report, _res) =
            verify_with_potential(&field, u, &tensor, &radii, 0.0, mean_v, &options).unwrap();
        assert!(report.c_obs <= 100.0, "c_obs {}", report.c_obs);
        assert!(report.alpha > 0.0 && report.alpha < 1.0);
    }
    println!("ACCEPTANCE 11 (potential cell 1e-8, gauge residual 1e-6, potential ensemble bounded): PASS");
}

#[test]
fn acceptance_12_determinism() {
    // Library-level rerun of a verify subcommand is byte-identical, and the
    // installed binary reproduces itself as well.
    let cfg_text = "[field]\nname = laminate\n[radii]\nr1 = 0.05\nr2 = 0.1\nr3 = 1.25\n\
                    [domain]\nradius = 2\ntime = 1.7\n\
                    [experiment]\nepsilons = 0.1\ncount = 3\nseed = 9\n\
                    [grid]\ncell_resolution = 128\nstore_stride = 64\n";
    let cfg = parse_config(cfg_text).unwrap();
    let base = std::env::temp_dir().join("parhom-acceptance-12");
    let _ = std::fs::remove_dir_all(&base);
    let d1 = base.join("a");
    let d2 = base.join("b");
    run(Subcommand::Verify2s1c, &cfg, &d1, &RunFlags::default()).unwrap();
    run(Subcommand::Verify2s1c, &cfg, &d2, &RunFlags::default()).unwrap();
    for name in ["verify_2s1c.csv", "manifest.txt"] {
        let a = std::fs::read(d1.join(name)).unwrap();
        let b = std::fs::read(d2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }

    // End-to-end through the binary.
    let cfg_path = base.join("exp.cfg");
    std::fs::write(&cfg_path, cfg_text).unwrap();
    let bin = env!("CARGO_BIN_EXE_parhom");
    for out in ["c", "d"] {
        let status = std::process::Command::new(bin)
            .args([
                "cheb-table",
                "--config",
                cfg_path.to_str().unwrap(),
                "--out",
                base.join(out).to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(base.join("c/cheb_table.csv")).unwrap();
    let b = std::fs::read(base.join("d/cheb_table.csv")).unwrap();
    assert_eq!(a, b, "binary rerun differs");
    println!("ACCEPTANCE 12 (byte-identical reruns, library and binary): PASS");
}
