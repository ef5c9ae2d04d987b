//! Plain key-value experiment configuration.
//!
//! Grammar: `key = value` lines grouped under `[section]` headers, `#`
//! comments, UTF-8. Unknown keys are rejected by name so typos cannot
//! silently fall back to defaults.

use crate::error::{Error, Result};
use crate::smallness::Radii;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // [field]
    pub field_name: String,
    pub field_parameter: f64,
    pub dimension: usize,
    // [potential]
    pub potential_name: String,
    pub potential_parameter: f64,
    // [radii]
    pub radii: Radii,
    // [domain]
    pub domain_radius: f64,
    pub domain_time: f64,
    pub t0: f64,
    // [experiment]
    pub epsilons: Vec<f64>,
    pub count: usize,
    pub seed: u64,
    pub ensemble: String,
    // [grid]
    pub cell_resolution: usize,
    pub cell_time_resolution: usize,
    pub cell_tol: f64,
    pub h_factor: f64,
    pub k_factor: f64,
    pub store_stride: usize,
    pub cheb_m_max: usize,
    pub quad_nodes: usize,
    // [kernel]
    pub kernel_horizon: f64,
    pub kernel_probe_radius: f64,
    pub kernel_probe_count: usize,
    pub kernel_trunc_radius: f64,
    // [constants]
    pub c_obs_cap: f64,
    pub caccioppoli_cap: f64,
    pub envelope_c_tilde: f64,
    pub envelope_c_exp: f64,
    /// 0 means "derive 1/(4 sqrt(mu1)) from the field".
    pub corollary_c1: f64,
    pub ball_condition_factor: f64,
    pub degenerate_gap_floor: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            field_name: String::new(),
            field_parameter: 1.0,
            dimension: 1,
            potential_name: "zero".to_string(),
            potential_parameter: 0.0,
            radii: Radii::new(0.05, 0.1, 1.25),
            domain_radius: 2.0,
            domain_time: 1.7,
            t0: 0.0,
            epsilons: vec![0.1, 0.05],
            count: 20,
            seed: 42,
            ensemble: "fourier".to_string(),
            cell_resolution: 256,
            cell_time_resolution: 64,
            cell_tol: 1e-10,
            h_factor: 16.0,
            k_factor: 32.0,
            store_stride: 32,
            cheb_m_max: 8,
            quad_nodes: 1024,
            kernel_horizon: 0.25,
            kernel_probe_radius: 1.0,
            kernel_probe_count: 21,
            kernel_trunc_radius: 4.0,
            c_obs_cap: 100.0,
            caccioppoli_cap: 1e3,
            envelope_c_tilde: 1.0,
            envelope_c_exp: 0.125,
            corollary_c1: 0.0,
            ball_condition_factor: 1.0,
            degenerate_gap_floor: 1e-4,
        }
    }
}

fn parse_f64(value: &str, line: usize) -> Result<f64> {
    value.trim().parse::<f64>().map_err(|_| Error::Config {
        line,
        msg: format!("malformed number '{value}'"),
    })
}

fn parse_usize(value: &str, line: usize) -> Result<usize> {
    value.trim().parse::<usize>().map_err(|_| Error::Config {
        line,
        msg: format!("malformed integer '{value}'"),
    })
}

fn parse_u64(value: &str, line: usize) -> Result<u64> {
    value.trim().parse::<u64>().map_err(|_| Error::Config {
        line,
        msg: format!("malformed integer '{value}'"),
    })
}

/// Parse a config text into a validated ExperimentConfig with defaults
/// filled in.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut section = String::new();
    let mut unknown: Vec<String> = Vec::new();
    let mut first_unknown_line = 0usize;
    let mut saw_field_name = false;
    let mut saw_radii = [false; 3];

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(Error::Config {
                    line: line_no,
                    msg: format!("malformed section header '{line}'"),
                });
            }
            section = line[1..line.len() - 1].trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config {
                line: line_no,
                msg: format!("expected 'key = value', got '{line}'"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        let qualified = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        match qualified.as_str() {
            "field.name" => {
                cfg.field_name = value.to_string();
                saw_field_name = true;
            }
            "field.parameter" => cfg.field_parameter = parse_f64(value, line_no)?,
            "field.d" => cfg.dimension = parse_usize(value, line_no)?,
            "potential.name" => cfg.potential_name = value.to_string(),
            "potential.parameter" => cfg.potential_parameter = parse_f64(value, line_no)?,
            "radii.r1" => {
                cfg.radii.r1 = parse_f64(value, line_no)?;
                saw_radii[0] = true;
            }
            "radii.r2" => {
                cfg.radii.r2 = parse_f64(value, line_no)?;
                saw_radii[1] = true;
            }
            "radii.r3" => {
                cfg.radii.r3 = parse_f64(value, line_no)?;
                saw_radii[2] = true;
            }
            "domain.radius" => cfg.domain_radius = parse_f64(value, line_no)?,
            "domain.time" => cfg.domain_time = parse_f64(value, line_no)?,
            "domain.t0" => cfg.t0 = parse_f64(value, line_no)?,
            "experiment.epsilons" => {
                cfg.epsilons = value
                    .split(',')
                    .map(|v| parse_f64(v, line_no))
                    .collect::<Result<Vec<f64>>>()?;
            }
            "experiment.count" => cfg.count = parse_usize(value, line_no)?,
            "experiment.seed" => cfg.seed = parse_u64(value, line_no)?,
            "experiment.ensemble" => cfg.ensemble = value.to_string(),
            "grid.cell_resolution" => cfg.cell_resolution = parse_usize(value, line_no)?,
            "grid.cell_time_resolution" => {
                cfg.cell_time_resolution = parse_usize(value, line_no)?
            }
            "grid.cell_tol" => cfg.cell_tol = parse_f64(value, line_no)?,
            "grid.h_factor" => cfg.h_factor = parse_f64(value, line_no)?,
            "grid.k_factor" => cfg.k_factor = parse_f64(value, line_no)?,
            "grid.store_stride" => cfg.store_stride = parse_usize(value, line_no)?,
            "grid.cheb_m_max" => cfg.cheb_m_max = parse_usize(value, line_no)?,
            "grid.quad_nodes" => cfg.quad_nodes = parse_usize(value, line_no)?,
            "kernel.horizon" => cfg.kernel_horizon = parse_f64(value, line_no)?,
            "kernel.probe_radius" => cfg.kernel_probe_radius = parse_f64(value, line_no)?,
            "kernel.probe_count" => cfg.kernel_probe_count = parse_usize(value, line_no)?,
            "kernel.trunc_radius" => cfg.kernel_trunc_radius = parse_f64(value, line_no)?,
            "constants.c_obs_cap" => cfg.c_obs_cap = parse_f64(value, line_no)?,
            "constants.caccioppoli_cap" => cfg.caccioppoli_cap = parse_f64(value, line_no)?,
            "constants.envelope_c_tilde" => cfg.envelope_c_tilde = parse_f64(value, line_no)?,
            "constants.envelope_c_exp" => cfg.envelope_c_exp = parse_f64(value, line_no)?,
            "constants.corollary_c1" => cfg.corollary_c1 = parse_f64(value, line_no)?,
            "constants.ball_condition_factor" => {
                cfg.ball_condition_factor = parse_f64(value, line_no)?
            }
            "constants.degenerate_gap_floor" => {
                cfg.degenerate_gap_floor = parse_f64(value, line_no)?
            }
            _ => {
                if unknown.is_empty() {
                    first_unknown_line = line_no;
                }
                unknown.push(qualified);
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Config {
            line: first_unknown_line,
            msg: format!("unknown keys: {}", unknown.join(", ")),
        });
    }
    if !saw_field_name {
        return Err(Error::Config {
            line: 0,
            msg: "missing required key field.name".to_string(),
        });
    }
    if saw_radii != [true; 3] {
        return Err(Error::Config {
            line: 0,
            msg: "missing required keys radii.r1, radii.r2, radii.r3".to_string(),
        });
    }
    validate_config(&cfg)?;
    Ok(cfg)
}

fn validate_config(cfg: &ExperimentConfig) -> Result<()> {
    if !(cfg.radii.r1 > 0.0 && cfg.radii.r1 < cfg.radii.r2 && cfg.radii.r2 < cfg.radii.r3 / 12.0)
    {
        return Err(Error::Config {
            line: 0,
            msg: format!(
                "radius ordering violated: need r1 < r2 < r3/12, got ({}, {}, {})",
                cfg.radii.r1, cfg.radii.r2, cfg.radii.r3
            ),
        });
    }
    if cfg.epsilons.is_empty() {
        return Err(Error::Config {
            line: 0,
            msg: "epsilon list must not be empty".to_string(),
        });
    }
    for w in cfg.epsilons.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::Config {
                line: 0,
                msg: "epsilon list must be strictly descending".to_string(),
            });
        }
    }
    if cfg.epsilons.iter().any(|&e| e <= 0.0) {
        return Err(Error::Config {
            line: 0,
            msg: "epsilons must be positive".to_string(),
        });
    }
    if cfg.count < 1 {
        return Err(Error::Config {
            line: 0,
            msg: "ensemble count must be at least 1".to_string(),
        });
    }
    if cfg.dimension == 0 || cfg.dimension > 2 {
        return Err(Error::Config {
            line: 0,
            msg: "dimension must be 1 or 2".to_string(),
        });
    }
    match cfg.ensemble.as_str() {
        "fourier" | "constant" => {}
        other => {
            return Err(Error::Config {
                line: 0,
                msg: format!("unknown ensemble kind '{other}' (expected fourier | constant)"),
            })
        }
    }
    Ok(())
}

/// Canonical text form; parse(render(cfg)) reproduces cfg exactly.
pub fn render(cfg: &ExperimentConfig) -> String {
    let eps = cfg
        .epsilons
        .iter()
        .map(|e| format!("{e}"))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "[field]\n\
         name = {field_name}\n\
         parameter = {field_parameter}\n\
         d = {dimension}\n\
         \n[potential]\n\
         name = {potential_name}\n\
         parameter = {potential_parameter}\n\
         \n[radii]\n\
         r1 = {r1}\n\
         r2 = {r2}\n\
         r3 = {r3}\n\
         \n[domain]\n\
         radius = {domain_radius}\n\
         time = {domain_time}\n\
         t0 = {t0}\n\
         \n[experiment]\n\
         epsilons = {eps}\n\
         count = {count}\n\
         seed = {seed}\n\
         ensemble = {ensemble}\n\
         \n[grid]\n\
         cell_resolution = {cell_resolution}\n\
         cell_time_resolution = {cell_time_resolution}\n\
         cell_tol = {cell_tol}\n\
         h_factor = {h_factor}\n\
         k_factor = {k_factor}\n\
         store_stride = {store_stride}\n\
         cheb_m_max = {cheb_m_max}\n\
         quad_nodes = {quad_nodes}\n\
         \n[kernel]\n\
         horizon = {kernel_horizon}\n\
         probe_radius = {kernel_probe_radius}\n\
         probe_count = {kernel_probe_count}\n\
         trunc_radius = {kernel_trunc_radius}\n\
         \n[constants]\n\
         c_obs_cap = {c_obs_cap}\n\
         caccioppoli_cap = {caccioppoli_cap}\n\
         envelope_c_tilde = {envelope_c_tilde}\n\
         envelope_c_exp = {envelope_c_exp}\n\
         corollary_c1 = {corollary_c1}\n\
         ball_condition_factor = {ball_condition_factor}\n\
         degenerate_gap_floor = {degenerate_gap_floor}\n",
        field_name = cfg.field_name,
        field_parameter = cfg.field_parameter,
        dimension = cfg.dimension,
        potential_name = cfg.potential_name,
        potential_parameter = cfg.potential_parameter,
        r1 = cfg.radii.r1,
        r2 = cfg.radii.r2,
        r3 = cfg.radii.r3,
        domain_radius = cfg.domain_radius,
        domain_time = cfg.domain_time,
        t0 = cfg.t0,
        eps = eps,
        count = cfg.count,
        seed = cfg.seed,
        ensemble = cfg.ensemble,
        cell_resolution = cfg.cell_resolution,
        cell_time_resolution = cfg.cell_time_resolution,
        cell_tol = cfg.cell_tol,
        h_factor = cfg.h_factor,
        k_factor = cfg.k_factor,
        store_stride = cfg.store_stride,
        cheb_m_max = cfg.cheb_m_max,
        quad_nodes = cfg.quad_nodes,
        kernel_horizon = cfg.kernel_horizon,
        kernel_probe_radius = cfg.kernel_probe_radius,
        kernel_probe_count = cfg.kernel_probe_count,
        kernel_trunc_radius = cfg.kernel_trunc_radius,
        c_obs_cap = cfg.c_obs_cap,
        caccioppoli_cap = cfg.caccioppoli_cap,
        envelope_c_tilde = cfg.envelope_c_tilde,
        envelope_c_exp = cfg.envelope_c_exp,
        corollary_c1 = cfg.corollary_c1,
        ball_condition_factor = cfg.ball_condition_factor,
        degenerate_gap_floor = cfg.degenerate_gap_floor,
    )
}

/// FNV-1a hash of the canonical config text, for run manifests.
pub fn config_hash(cfg: &ExperimentConfig) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in render(cfg).as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let text = "[field]\nname = laminate\n[radii]\nr1 = 0.05\nr2 = 0.1\nr3 = 1.25\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.field_name, "laminate");
        assert_eq!(cfg.count, 20);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.epsilons, vec![0.1, 0.05]);
        // Deterministic echo.
        let again = parse_config(text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn misordered_radii_name_the_constraint() {
        let text = "[field]\nname = laminate\n[radii]\nr1 = 2\nr2 = 1\nr3 = 25\n";
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("r1 < r2 < r3/12"), "{err}");
    }

    #[test]
    fn unknown_keys_are_listed_with_line_number() {
        let text = "[field]\nname = laminate\nnosuch = 3\n[radii]\nr1 = 0.05\nr2 = 0.1\nr3 = 1.25\nwhat = 7\n";
        let err = parse_config(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("field.nosuch"), "{msg}");
        assert!(msg.contains("radii.what"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn missing_required_keys_are_reported() {
        let err = parse_config("[radii]\nr1 = 0.05\nr2 = 0.1\nr3 = 1.25\n").unwrap_err();
        assert!(err.to_string().contains("field.name"), "{err}");
        let err = parse_config("[field]\nname = laminate\n").unwrap_err();
        assert!(err.to_string().contains("radii"), "{err}");
    }

    #[test]
    fn malformed_numbers_carry_line_numbers() {
        let text = "[field]\nname = laminate\n[radii]\nr1 = zero point one\nr2 = 0.1\nr3 = 1.25\n";
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }

    #[test]
    fn render_parse_round_trip() {
        let mut cfg = ExperimentConfig {
            field_name: "laminate".to_string(),
            ..Default::default()
        };
        cfg.epsilons = vec![0.2, 0.1, 0.025];
        cfg.seed = 1234567;
        cfg.cell_tol = 3.5e-11;
        cfg.corollary_c1 = 0.19;
        cfg.t0 = -0.125;
        let text = render(&cfg);
        let parsed = parse_config(&text).unwrap();
        assert_eq!(cfg, parsed);
        // Hash is stable for identical configs.
        assert_eq!(config_hash(&cfg), config_hash(&parsed));
    }

    #[test]
    fn epsilons_must_descend() {
        let text =
            "[field]\nname = laminate\n[radii]\nr1 = 0.05\nr2 = 0.1\nr3 = 1.25\n[experiment]\nepsilons = 0.05, 0.1\n";
        assert!(parse_config(text).is_err());
    }
}
