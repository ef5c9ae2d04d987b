//! Experiment harness: subcommand orchestration, deterministic CSV
//! artifacts, and run manifests. Exit code 0 means every acceptance
//! predicate of the subcommand held, 2 means at least one failed, and
//! errors surface as Err (exit 1 in the CLI).

use crate::coeff_cell::{
    solve_corrector, solve_corrector_dual, solve_potential_cell, CellResolution,
    CoefficientField, CorrectorField, PotentialCell,
};
use crate::config::{config_hash, render, ExperimentConfig};
use crate::error::{Error, Result};
use crate::geometry::HomogenizedTensor;
use crate::kernels::{kernel_gap_report, GapOptions, GapProbes};
use crate::pdesolve::{
    caccioppoli_check, generate_ensemble, member_seed, solve_cylinder, BoundaryData, BoxDomain,
    GridSolution, GridSpec, PotentialSpec,
};
use crate::smallness::{
    verify_two_sphere_one_cylinder, verify_two_sphere_one_cylinder_balls, verify_with_potential,
    InequalityReport, VerifyOptions,
};
use crate::{chebyshev, coeff_cell};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Homogenize,
    ChebTable,
    KernelGap,
    Verify2s1c,
    VerifyBall,
    VerifyPotential,
    Caccioppoli,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Homogenize => "homogenize",
            Subcommand::ChebTable => "cheb-table",
            Subcommand::KernelGap => "kernel-gap",
            Subcommand::Verify2s1c => "verify-2s1c",
            Subcommand::VerifyBall => "verify-ball",
            Subcommand::VerifyPotential => "verify-potential",
            Subcommand::Caccioppoli => "caccioppoli",
        }
    }
}

impl std::str::FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homogenize" => Ok(Subcommand::Homogenize),
            "cheb-table" => Ok(Subcommand::ChebTable),
            "kernel-gap" => Ok(Subcommand::KernelGap),
            "verify-2s1c" => Ok(Subcommand::Verify2s1c),
            "verify-ball" => Ok(Subcommand::VerifyBall),
            "verify-potential" => Ok(Subcommand::VerifyPotential),
            "caccioppoli" => Ok(Subcommand::Caccioppoli),
            other => Err(Error::validation(format!("unknown subcommand '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunFlags {
    pub dump: bool,
    pub plot_data: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
}

fn fmt_num(v: f64) -> String {
    format!("{v:.12e}")
}

fn fmt_point(x: &[f64]) -> String {
    x.iter()
        .map(|c| format!("{c:.12e}"))
        .collect::<Vec<_>>()
        .join(";")
}

struct ArtifactWriter {
    out_dir: PathBuf,
    artifacts: Vec<PathBuf>,
}

impl ArtifactWriter {
    fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir)?;
        Ok(ArtifactWriter {
            out_dir: out_dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, content: &str) -> Result<()> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, content)?;
        self.artifacts.push(path);
        Ok(())
    }
}

fn write_manifest(
    w: &mut ArtifactWriter,
    sub: Subcommand,
    cfg: &ExperimentConfig,
) -> Result<()> {
    let mut m = String::new();
    let _ = writeln!(m, "subcommand = {}", sub.name());
    let _ = writeln!(m, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(m, "config_hash = {:016x}", config_hash(cfg));
    let _ = writeln!(m, "seed = {}", cfg.seed);
    let _ = writeln!(m, "# full canonical config follows");
    m.push_str(&render(cfg));
    w.write("manifest.txt", &m)
}

fn build_field(cfg: &ExperimentConfig) -> Result<CoefficientField> {
    CoefficientField::builtin(&cfg.field_name, cfg.dimension, cfg.field_parameter)
}

fn cell_resolution(cfg: &ExperimentConfig) -> CellResolution {
    CellResolution::new(cfg.cell_resolution, cfg.cell_time_resolution)
}

fn solve_tensor(
    cfg: &ExperimentConfig,
    field: &CoefficientField,
) -> Result<(HomogenizedTensor, Vec<CorrectorField>)> {
    let res = cell_resolution(cfg);
    let correctors: Vec<CorrectorField> = (0..field.d)
        .map(|j| solve_corrector(field, j, res, cfg.cell_tol))
        .collect::<Result<Vec<_>>>()?;
    let tensor = coeff_cell::homogenize(field, &correctors)?;
    Ok((tensor, correctors))
}

fn verify_options(cfg: &ExperimentConfig) -> VerifyOptions {
    VerifyOptions {
        c_obs_cap: cfg.c_obs_cap,
        ball_condition_factor: cfg.ball_condition_factor,
        corollary_c1: if cfg.corollary_c1 > 0.0 {
            Some(cfg.corollary_c1)
        } else {
            None
        },
    }
}

fn solve_domain(cfg: &ExperimentConfig) -> BoxDomain {
    BoxDomain::new(cfg.domain_radius, cfg.t0 - cfg.domain_time, cfg.t0)
}

fn build_ensemble(
    cfg: &ExperimentConfig,
    field: &CoefficientField,
    eps: f64,
    potential: Option<&PotentialSpec>,
) -> Result<Vec<GridSolution>> {
    let domain = solve_domain(cfg);
    let grid = GridSpec::resolve(eps, &domain, cfg.h_factor, cfg.k_factor, cfg.store_stride);
    match cfg.ensemble.as_str() {
        "constant" => (0..cfg.count)
            .map(|i| {
                let c = (i + 1) as f64 / cfg.count as f64;
                solve_cylinder(field, eps, potential, &domain, &BoundaryData::constant(c), grid)
            })
            .collect(),
        _ => generate_ensemble(field, eps, potential, &domain, cfg.count, cfg.seed, grid),
    }
}

const VERIFY_HEADER: &str =
    "seed,eps,r1,r2,r3,t0,delta,L,N,alpha,case,m,bracket,rhs,c_obs,warnings";

fn verify_row(seed: u64, report: &InequalityReport) -> String {
    format!(
        "{seed},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        fmt_num(report.eps),
        fmt_num(report.radii.r1),
        fmt_num(report.radii.r2),
        fmt_num(report.radii.r3),
        fmt_num(report.t0),
        fmt_num(report.delta),
        fmt_num(report.mid_sup),
        fmt_num(report.cyl_sup),
        fmt_num(report.alpha),
        report.case,
        report.m,
        fmt_num(report.bracket),
        fmt_num(report.rhs),
        fmt_num(report.c_obs),
        report.warnings_joined().replace(',', " ")
    )
}

fn report_invariants_hold(report: &InequalityReport) -> bool {
    let nested = report.delta <= report.mid_sup * (1.0 + 1e-12)
        && report.mid_sup <= report.cyl_sup * (1.0 + 1e-12);
    let alpha_ok = report.alpha > 0.0 && report.alpha < 1.0;
    nested && alpha_ok && report.pass
}

fn dump_solution(
    w: &mut ArtifactWriter,
    prefix: &str,
    u: &GridSolution,
) -> Result<()> {
    for level in 0..u.levels() {
        let mut text = String::new();
        match u.d {
            1 => {
                text.push_str("x,value\n");
                for i in 0..=u.n {
                    let _ = writeln!(
                        text,
                        "{},{}",
                        fmt_num(u.axis_coord(i)),
                        fmt_num(u.level_values(level)[i])
                    );
                }
            }
            _ => {
                text.push_str("x0,x1,value\n");
                for flat in 0..u.nodes_total() {
                    let p = u.node_point(flat);
                    let _ = writeln!(
                        text,
                        "{},{},{}",
                        fmt_num(p[0]),
                        fmt_num(p[1]),
                        fmt_num(u.level_values(level)[flat])
                    );
                }
            }
        }
        w.write(&format!("{prefix}/t{level:05}.csv"), &text)?;
    }
    Ok(())
}

/// Run one subcommand against a parsed config, writing artifacts into
/// `out_dir`. Returns exit code 0 when every acceptance predicate held and
/// 2 otherwise.
pub fn run(
    sub: Subcommand,
    cfg: &ExperimentConfig,
    out_dir: &Path,
    flags: &RunFlags,
) -> Result<RunOutcome> {
    let mut w = ArtifactWriter::new(out_dir)?;
    write_manifest(&mut w, sub, cfg)?;
    let all_pass = match sub {
        Subcommand::Homogenize => run_homogenize(cfg, &mut w)?,
        Subcommand::ChebTable => run_cheb_table(cfg, &mut w)?,
        Subcommand::KernelGap => run_kernel_gap(cfg, &mut w, flags)?,
        Subcommand::Verify2s1c => run_verify(cfg, &mut w, flags, VerifyKind::Ellipsoid)?,
        Subcommand::VerifyBall => run_verify(cfg, &mut w, flags, VerifyKind::Ball)?,
        Subcommand::VerifyPotential => run_verify(cfg, &mut w, flags, VerifyKind::Potential)?,
        Subcommand::Caccioppoli => run_caccioppoli(cfg, &mut w)?,
    };
    Ok(RunOutcome {
        exit_code: if all_pass { 0 } else { 2 },
        artifacts: w.artifacts,
    })
}

fn run_homogenize(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> Result<bool> {
    let field = build_field(cfg)?;
    let (tensor, correctors) = solve_tensor(cfg, &field)?;
    let d = field.d;
    let mut header = vec!["d".to_string(), "resolution".to_string()];
    for i in 0..d {
        for j in 0..d {
            header.push(format!("a_{i}_{j}"));
        }
    }
    for i in 0..d {
        for j in 0..d {
            header.push(format!("s_{i}_{j}"));
        }
    }
    header.extend(
        ["defect", "mu", "mu1", "max_corrector_residual", "periods"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut row = vec![d.to_string(), cfg.cell_resolution.to_string()];
    for i in 0..d {
        for j in 0..d {
            row.push(fmt_num(tensor.matrix.get(i, j)));
        }
    }
    for i in 0..d {
        for j in 0..d {
            row.push(fmt_num(tensor.factor.get(i, j)));
        }
    }
    let max_res = correctors
        .iter()
        .map(|c| c.residual)
        .fold(0.0f64, f64::max);
    let periods = correctors.iter().map(|c| c.periods).max().unwrap_or(0);
    row.push(fmt_num(tensor.asymmetry_defect));
    row.push(fmt_num(tensor.mu));
    row.push(fmt_num(tensor.mu1));
    row.push(fmt_num(max_res));
    row.push(periods.to_string());
    w.write(
        "homogenize.csv",
        &format!("{}\n{}\n", header.join(","), row.join(",")),
    )?;
    Ok(tensor.asymmetry_defect <= 1e-6)
}

fn run_cheb_table(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> Result<bool> {
    let consts = chebyshev::EnvelopeConstants {
        c_tilde: cfg.envelope_c_tilde,
        c_exp: cfg.envelope_c_exp,
    };
    let mut text = String::from(
        "m,i,h_i,c_i,weight_bound,phi_prime_abs,phi_prime_floor,kernel_envelope,gradient_envelope\n",
    );
    let mut ok = true;
    let tau = cfg.radii.r3 * cfg.radii.r3;
    for m in 1..=cfg.cheb_m_max {
        let sys = chebyshev::build_system(cfg.radii.r1, cfg.radii.r2, cfg.radii.r3, m)?;
        let (ke, ge) = sys.error_envelope(tau, cfg.dimension, &consts);
        let floor = m as f64 * 2f64.powi(1 - m as i32);
        for i in 0..m {
            let phi_prime = sys.nodal_poly_prime(i).abs();
            ok &= sys.weights[i].abs() <= sys.weight_bound * (1.0 + 1e-12);
            ok &= phi_prime >= floor * (1.0 - 1e-12);
            let _ = writeln!(
                text,
                "{m},{i},{},{},{},{},{},{},{}",
                fmt_num(sys.nodes[i]),
                fmt_num(sys.weights[i]),
                fmt_num(sys.weight_bound),
                fmt_num(phi_prime),
                fmt_num(floor),
                fmt_num(ke),
                fmt_num(ge)
            );
        }
        for k in 0..m.min(12) {
            ok &= sys.moment_defect(k) <= 1e-9 * sys.target.powi(k as i32).max(1.0);
        }
    }
    w.write("cheb_table.csv", &text)?;
    Ok(ok)
}

fn run_kernel_gap(
    cfg: &ExperimentConfig,
    w: &mut ArtifactWriter,
    flags: &RunFlags,
) -> Result<bool> {
    let field = build_field(cfg)?;
    let (tensor, _) = solve_tensor(cfg, &field)?;
    let res = cell_resolution(cfg);
    let dual: Vec<CorrectorField> = (0..field.d)
        .map(|j| solve_corrector_dual(&field, j, res, cfg.cell_tol))
        .collect::<Result<Vec<_>>>()?;
    let count = cfg.kernel_probe_count.max(2);
    let points: Vec<Vec<f64>> = (0..count)
        .map(|i| {
            let frac = i as f64 / (count - 1) as f64;
            let x = (-1.0 + 2.0 * frac) * cfg.kernel_probe_radius * tensor.matrix.get(0, 0).sqrt();
            let mut p = vec![0.0; field.d];
            p[0] = x;
            p
        })
        .collect();
    let probes = GapProbes {
        source: vec![0.0; field.d],
        source_time: 0.0,
        horizons: vec![cfg.kernel_horizon],
        points,
        trunc_radius: cfg.kernel_trunc_radius,
    };
    let options = GapOptions {
        include_gradient: true,
        degenerate_floor: cfg.degenerate_gap_floor,
        h_factor: cfg.h_factor,
        k_factor: cfg.k_factor,
        ..Default::default()
    };
    let report = kernel_gap_report(&field, &tensor, &dual, &cfg.epsilons, &probes, &options)?;

    let mut text = String::from("eps,x,t,y,s,gamma_eps,gamma0,gap,bound_envelope\n");
    for row in &report.rows {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{}",
            fmt_num(row.eps),
            fmt_point(&row.x),
            fmt_num(row.t),
            fmt_point(&row.y),
            fmt_num(row.s),
            fmt_num(row.gamma_eps),
            fmt_num(row.gamma0),
            fmt_num(row.gap),
            fmt_num(row.envelope)
        );
    }
    w.write("kernel_gap.csv", &text)?;

    let mut summary = String::from(
        "eps,value_gap,grad_gap,value_ratio,grad_ratio,fitted_c,fitted_kappa,degenerate,pass\n",
    );
    for (i, &eps) in report.eps_list.iter().enumerate() {
        let vr = report.value_ratios.get(i).copied().unwrap_or(f64::NAN);
        let gr = report.grad_ratios.get(i).copied().unwrap_or(f64::NAN);
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{}",
            fmt_num(eps),
            fmt_num(report.value_gaps[i]),
            fmt_num(report.grad_gaps[i]),
            fmt_num(vr),
            fmt_num(gr),
            fmt_num(report.fitted_c),
            fmt_num(report.fitted_kappa),
            report.degenerate,
            report.pass
        );
    }
    w.write("kernel_gap_summary.csv", &summary)?;

    if flags.plot_data {
        let mut plot = String::new();
        for (i, &eps) in report.eps_list.iter().enumerate() {
            let _ = writeln!(plot, "{} {}", fmt_num(eps), fmt_num(report.value_gaps[i]));
        }
        w.write("plot/gap_vs_eps.dat", &plot)?;
    }
    Ok(report.pass)
}

enum VerifyKind {
    Ellipsoid,
    Ball,
    Potential,
}

fn run_verify(
    cfg: &ExperimentConfig,
    w: &mut ArtifactWriter,
    flags: &RunFlags,
    kind: VerifyKind,
) -> Result<bool> {
    let field = build_field(cfg)?;
    let (tensor, _) = solve_tensor(cfg, &field)?;
    let options = verify_options(cfg);

    let (potential, mean_v, potential_cell): (Option<PotentialSpec>, f64, Option<PotentialCell>) =
        match kind {
            VerifyKind::Potential => {
                let spec = PotentialSpec::builtin(&cfg.potential_name, cfg.potential_parameter)?;
                let eval = spec.eval.clone();
                let cell = solve_potential_cell(
                    &move |z: &[f64]| eval(z),
                    cfg.dimension,
                    cfg.cell_resolution,
                    1e-8,
                )?;
                let mean = cell.mean_v;
                (Some(spec), mean, Some(cell))
            }
            _ => (None, 0.0, None),
        };
    if let Some(cell) = &potential_cell {
        let mut text = String::from("d,resolution,mean_v,psi_residual,psi_mean\n");
        let _ = writeln!(
            text,
            "{},{},{},{},{}",
            cell.d,
            cell.n,
            fmt_num(cell.mean_v),
            fmt_num(cell.residual),
            fmt_num(cell.psi_mean())
        );
        w.write("potential_cell.csv", &text)?;
    }

    let mut rows = vec![VERIFY_HEADER.to_string()];
    let mut all_pass = true;
    for (eidx, &eps) in cfg.epsilons.iter().enumerate() {
        let ensemble = build_ensemble(cfg, &field, eps, potential.as_ref())?;
        let mut plot = String::new();
        for (midx, u) in ensemble.iter().enumerate() {
            let report = match kind {
                VerifyKind::Ellipsoid => {
                    verify_two_sphere_one_cylinder(u, &tensor, &cfg.radii, cfg.t0, &options)?
                }
                VerifyKind::Ball => {
                    verify_two_sphere_one_cylinder_balls(u, &tensor, &cfg.radii, cfg.t0, &options)?
                }
                VerifyKind::Potential => {
                    let (report, _residual) = verify_with_potential(
                        &field, u, &tensor, &cfg.radii, cfg.t0, mean_v, &options,
                    )?;
                    report
                }
            };
            all_pass &= report_invariants_hold(&report);
            rows.push(verify_row(member_seed(cfg.seed, midx as u64), &report));
            let _ = writeln!(plot, "{midx} {}", fmt_num(report.c_obs));
            if flags.dump {
                dump_solution(w, &format!("dump/eps{eidx}-member{midx}"), u)?;
            }
        }
        if flags.plot_data {
            w.write(&format!("plot/c_obs_eps{eidx}.dat"), &plot)?;
        }
    }
    let name = match kind {
        VerifyKind::Ellipsoid => "verify_2s1c.csv",
        VerifyKind::Ball => "verify_ball.csv",
        VerifyKind::Potential => "verify_potential.csv",
    };
    w.write(name, &(rows.join("\n") + "\n"))?;
    Ok(all_pass)
}

fn run_caccioppoli(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> Result<bool> {
    let field = build_field(cfg)?;
    let (tensor, _) = solve_tensor(cfg, &field)?;
    let mut text = String::from("seed,eps,r3,t0,energy,sup,c_obs,pass\n");
    let mut all_pass = true;
    for &eps in &cfg.epsilons {
        let ensemble = build_ensemble(cfg, &field, eps, None)?;
        for (midx, u) in ensemble.iter().enumerate() {
            let report = caccioppoli_check(u, &tensor, cfg.radii.r3, cfg.t0)?;
            let pass = report.c_obs <= cfg.caccioppoli_cap;
            all_pass &= pass;
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{},{}",
                member_seed(cfg.seed, midx as u64),
                fmt_num(eps),
                fmt_num(report.r3),
                fmt_num(report.t0),
                fmt_num(report.energy),
                fmt_num(report.sup),
                fmt_num(report.c_obs),
                pass
            );
        }
    }
    w.write("caccioppoli.csv", &text)?;
    Ok(all_pass)
}
