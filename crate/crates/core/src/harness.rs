//! Experiment orchestration: sweeps, CSV and manifest output, path traces.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::estimate::{epsilon_sweep_detailed, SweepPoint};
use crate::limit::{control_mean, ControlMean};
use crate::noise::{solve_lyapunov, InvariantLaw, NoiseModel};
use crate::rng::{reference_root, sample_stream};
use crate::sim::simulate_coupled;

pub const CSV_HEADER: &str = "eps,nvar_over_eps,nvar_over_eps2,i_hat,j_hat,efu";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowSeed {
    pub eps: f64,
    pub seed: u64,
}

/// Everything needed to reproduce a sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub version: String,
    pub seeds: Vec<RowSeed>,
    pub control_seed: u64,
    pub control: ControlMean,
    pub wall_clock_seconds: f64,
    pub warnings: Vec<String>,
}

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::param("workers", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn build_noise(cfg: &RunConfig) -> Result<(NoiseModel, InvariantLaw)> {
    let model = cfg.noise.build()?;
    let law = solve_lyapunov(&model)?;
    Ok((model, law))
}

/// `E[F(U_T)]` for the configured system.
pub fn compute_control(cfg: &RunConfig) -> Result<ControlMean> {
    let (model, law) = build_noise(cfg)?;
    with_workers(cfg.workers, || {
        control_mean(
            &cfg.system,
            &model,
            &law,
            cfg.stepper(),
            cfg.control_method,
            cfg.n_ref,
            reference_root(cfg.seed),
        )
    })?
}

fn caution(cfg: &RunConfig, model: &NoiseModel, p: &SweepPoint) -> Option<String> {
    let eps = p.row.eps;
    let coarse = cfg.dt / (eps * eps);
    let mut parts = Vec::new();
    if coarse >= 1.0 {
        parts.push(format!(
            "dt/eps^2 = {coarse} >= 1, the noise is under-resolved"
        ));
    }
    if p.unstable {
        parts.push(format!(
            "dt*|A|/eps^2 = {} exceeds the explicit stability limit",
            model.stability_ratio(cfg.dt, eps)
        ));
    }
    if parts.is_empty() {
        None
    } else {
        Some(format!("eps = {eps}: {}", parts.join("; ")))
    }
}

/// Sweep CSV text plus the detailed points and manifest.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub csv: String,
    pub manifest: RunManifest,
    pub points: Vec<SweepPoint>,
}

pub fn run_sweep_detailed(cfg: &RunConfig) -> Result<SweepOutput> {
    let start = Instant::now();
    let (model, law) = build_noise(cfg)?;
    let control = compute_control(cfg)?;
    let points = with_workers(cfg.workers, || {
        epsilon_sweep_detailed(
            &cfg.system,
            &model,
            &law,
            cfg.stepper(),
            &cfg.eps_grid,
            cfg.n_samples,
            cfg.seed,
            control.value,
        )
    })??;

    let mut csv = String::new();
    let mut warnings = Vec::new();
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    for p in &points {
        if let Some(w) = caution(cfg, &model, p) {
            writeln!(csv, "# {w}").unwrap();
            warnings.push(w);
        }
        let r = &p.row;
        writeln!(
            csv,
            "{:e},{:e},{:e},{:e},{:e},{:e}",
            r.eps, r.nvar_over_eps, r.nvar_over_eps2, r.i_hat, r.j_hat, r.efu
        )
        .unwrap();
    }
    let manifest = RunManifest {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: points
            .iter()
            .map(|p| RowSeed {
                eps: p.row.eps,
                seed: p.seed,
            })
            .collect(),
        control_seed: reference_root(cfg.seed),
        control,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        warnings,
    };
    Ok(SweepOutput {
        csv,
        manifest,
        points,
    })
}

/// CSV document and manifest for a validated configuration.
pub fn run_sweep(cfg: &RunConfig) -> Result<(String, RunManifest)> {
    let out = run_sweep_detailed(cfg)?;
    Ok((out.csv, out.manifest))
}

/// `<output>.manifest.json` next to the CSV.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn write_sweep(output: &Path, csv: &str, manifest: &RunManifest) -> std::io::Result<()> {
    std::fs::write(output, csv)?;
    let json = serde_json::to_string_pretty(manifest).map_err(std::io::Error::other)?;
    std::fs::write(manifest_path(output), json + "\n")
}

/// One coupled path at `eps` as CSV: time, both states, driver components,
/// then impact events as comment lines.
pub fn simulate_trace(cfg: &RunConfig, eps: f64) -> Result<String> {
    let (model, law) = build_noise(cfg)?;
    let mut rng = sample_stream(cfg.seed, 0);
    let path = simulate_coupled(&cfg.system, &model, &law, eps, cfg.stepper(), &mut rng)?;
    let rows = cfg.system.state_dim() + cfg.system.constraint_dim();
    let labels: &[&str] = match (rows, cfg.system.constraint_dim()) {
        (1, _) => &["x"],
        (_, 1) => &["x", "z"],
        _ => &["x1", "x2"],
    };
    let mut out = String::from("t");
    for l in labels {
        write!(out, ",{l}").unwrap();
    }
    for l in labels {
        write!(out, ",u_{l}").unwrap();
    }
    for i in 0..model.dim() {
        write!(out, ",eta{i}").unwrap();
    }
    out.push('\n');
    for (k, t) in path.times.iter().enumerate() {
        write!(out, "{t:e}").unwrap();
        for v in &path.x_eps[k][..rows] {
            write!(out, ",{v:e}").unwrap();
        }
        for v in &path.u[k][..rows] {
            write!(out, ",{v:e}").unwrap();
        }
        for v in &path.eta[k] {
            write!(out, ",{v:e}").unwrap();
        }
        out.push('\n');
    }
    writeln!(out, "# f_x = {:e}, f_u = {:e}", path.f_x, path.f_u).unwrap();
    for ev in &path.events {
        writeln!(
            out,
            "# impact {:?} t = {:e} x1 = {:e} v_minus = {:e} v_plus = {:e}",
            ev.process, ev.time, ev.x1, ev.v_minus, ev.v_plus
        )
        .unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn small(extra: &str) -> RunConfig {
        parse_config(&format!(
            "dt = 1e-3\nn_samples = 200\neps_grid = [0.5, 0.25]\ncontrol.n_ref = 10000\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn two_rows_and_header() {
        let (csv, manifest) = run_sweep(&small("")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.iter().filter(|l| !l.starts_with('#')).count(), 3);
        assert_eq!(manifest.seeds.len(), 2);
        assert_eq!(manifest.seeds[1].seed, 1 + (1u64 << 32));
    }

    #[test]
    fn repeated_runs_are_identical() {
        let cfg = small("model.kind = \"impact\"");
        assert_eq!(run_sweep(&cfg).unwrap().0, run_sweep(&cfg).unwrap().0);
    }

    #[test]
    fn reflected_control_column() {
        let (csv, _) = run_sweep(&small("model.kind = \"reflected_integral\"")).unwrap();
        for line in csv.lines().skip(1).filter(|l| !l.starts_with('#')) {
            let efu: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert!((efu - 0.7978845608028654).abs() < 1e-15);
        }
    }

    #[test]
    fn coarse_rows_get_a_comment() {
        let cfg = parse_config("dt = 1e-2\nn_samples = 50\neps_grid = [1.0, 0.05]").unwrap();
        let (csv, manifest) = run_sweep(&cfg).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(!lines[1].starts_with('#'));
        assert!(lines[2].starts_with("# eps = 0.05"));
        assert!(lines[3].starts_with("5e-2,"));
        assert_eq!(manifest.warnings.len(), 1);
    }

    #[test]
    fn trace_has_one_line_per_step() {
        let cfg = small("model.kind = \"elasto_plastic\"");
        let trace = simulate_trace(&cfg, 0.3).unwrap();
        let mut lines = trace.lines();
        assert_eq!(lines.next().unwrap(), "t,x,z,u_x,u_z,eta0");
        assert_eq!(trace.lines().filter(|l| !l.starts_with('#')).count(), 1002);
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(
            manifest_path(Path::new("out/run.csv")),
            PathBuf::from("out/run.csv.manifest.json")
        );
    }
}
