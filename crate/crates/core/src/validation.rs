//! Executable acceptance checks. Each criterion yields a verdict with the
//! measured value and its threshold; failures never become errors.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_config, RunConfig};
use crate::error::Result;
use crate::estimate::{epsilon_sweep_detailed, fit_scaling_exponent, ols_slope, SweepPoint};
use crate::harness::run_sweep;
use crate::limit::{
    control_mean, friction_fd_mean, kolmogorov_fd_mean, massive_mc_mean, moment_ode_mean,
    reflected_mean, GridSpec, Terminal,
};
use crate::noise::{solve_lyapunov, InvariantLaw, NoiseModel};
use crate::rng::{reference_root, sample_stream};
use crate::sim::{penalization_gap, CoupledStepper, Coupling, ImpactEvent, StepperConfig};
use crate::systems::{limit_coefficients, FunctionalKind, SystemKind, SystemSpec};

/// `√(2/π)` to the six digits the reflected criterion asks for.
pub const REFLECTED_TARGET: f64 = 0.797884;

const RATE_GRID: [f64; 4] = [0.4, 0.2, 0.1, 0.05];
// The indicator band never separates X and U at small ε when started at rest,
// so the smooth-system criteria start from a displaced, moving state.
const RATE_X0: [f64; 2] = [1.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Quick,
    Full,
}

impl Level {
    /// Sample count for the criteria whose size scales with the level.
    pub fn samples(self) -> usize {
        match self {
            Level::Quick => 10_000,
            Level::Full => 100_000,
        }
    }

    /// Sample count for reference Monte Carlo means.
    pub fn reference_samples(self) -> usize {
        match self {
            Level::Quick => 100_000,
            Level::Full => 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub level: Level,
    /// How `U` obtains its increments in the simulated criteria. Only the
    /// shared coupling is correct; the independent one exists to show that
    /// the checks can fail.
    pub coupling: Coupling,
    pub seed: u64,
}

impl ValidationOptions {
    pub fn new(level: Level) -> Self {
        ValidationOptions {
            level,
            coupling: Coupling::Shared,
            seed: 20_240_601,
        }
    }

    fn stepper(&self) -> StepperConfig {
        StepperConfig {
            coupling: self.coupling,
            ..StepperConfig::new(1e-4, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    /// `NaN` (serialized as `null`) when the criterion could not be evaluated.
    #[serde(deserialize_with = "nan_from_null")]
    pub measured: f64,
    pub threshold: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} criterion {:>2} {}: measured {} (need {}) [{:.1}s] {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            if self.measured != 0.0 && self.measured.abs() < 1e-3 {
                format!("{:.3e}", self.measured)
            } else {
                format!("{:.6}", self.measured)
            },
            self.threshold,
            self.seconds,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub level: Level,
    pub results: Vec<CriterionResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

pub const CRITERIA: [u8; 11] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

pub fn run_validation_suite(level: Level) -> ValidationReport {
    run_validation_with(&ValidationOptions::new(level))
}

pub fn run_validation_with(opts: &ValidationOptions) -> ValidationReport {
    ValidationReport {
        level: opts.level,
        results: CRITERIA.iter().map(|&id| run_criterion(id, opts)).collect(),
    }
}

type Body = fn(&ValidationOptions) -> Result<Outcome>;

/// What a criterion body reports before timing is attached.
struct Outcome {
    measured: f64,
    passed: bool,
    detail: String,
}

fn outcome(measured: f64, passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        measured,
        passed,
        detail: detail.into(),
    }
}

/// Runs one criterion by number. Unknown numbers and internal errors are
/// reported as failed verdicts.
pub fn run_criterion(id: u8, opts: &ValidationOptions) -> CriterionResult {
    let (name, threshold, body): (&str, &str, Body) = match id {
        1 => (
            "lyapunov oracle",
            "error <= 1e-10 and < 1 ms",
            lyapunov_oracle,
        ),
        2 => ("smooth rate", "slope >= 1.7", smooth_rate),
        3 => ("indicator rate", "slope in [0.7, 1.5]", indicator_rate),
        4 => ("variance reduction", "ratio <= 0.05", variance_ratio),
        5 => (
            "unbiasedness",
            "all CIs overlap (failures = 0)",
            unbiasedness,
        ),
        6 => (
            "control-mean oracles",
            "worst |gap|/tolerance <= 1",
            control_oracles,
        ),
        7 => (
            "reflected model",
            "slope >= 1.6, efu and CI checks",
            reflected,
        ),
        8 => (
            "constrained rates",
            "friction >= 1.7, elasto-plastic >= 0.8",
            constrained_rates,
        ),
        9 => (
            "penalization rate",
            "decay slope in [0.7, 1.3]",
            penalization,
        ),
        10 => ("constraint invariants", "violations = 0", invariants),
        11 => (
            "determinism",
            "identical CSVs (differences = 0)",
            determinism,
        ),
        _ => ("unknown", "-", |_| {
            Ok(outcome(f64::NAN, false, "no such criterion"))
        }),
    };
    let start = Instant::now();
    let out = body(opts).unwrap_or_else(|e| outcome(f64::NAN, false, format!("error: {e}")));
    CriterionResult {
        id,
        name: name.to_string(),
        measured: out.measured,
        threshold: threshold.to_string(),
        passed: out.passed,
        detail: out.detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn ou() -> Result<(NoiseModel, InvariantLaw)> {
    let model = NoiseModel::ou(1.0, 1.0)?;
    let law = solve_lyapunov(&model)?;
    Ok((model, law))
}

fn sweep(
    system: &SystemSpec,
    opts: &ValidationOptions,
    grid: &[f64],
    n: usize,
    control: f64,
    stream: u64,
) -> Result<Vec<SweepPoint>> {
    let (model, law) = ou()?;
    epsilon_sweep_detailed(
        system,
        &model,
        &law,
        opts.stepper(),
        grid,
        n,
        opts.seed + stream,
        control,
    )
}

fn slope_of(points: &[SweepPoint]) -> Result<f64> {
    let rows: Vec<_> = points.iter().map(|p| p.row).collect();
    fit_scaling_exponent(&rows)
}

fn variances(points: &[SweepPoint]) -> String {
    let v: Vec<String> = points
        .iter()
        .map(|p| format!("{}:{:.3e}", p.row.eps, p.control.normalized_variance))
        .collect();
    format!("N·Var(Î) {}", v.join(" "))
}

fn lyapunov_oracle(_: &ValidationOptions) -> Result<Outcome> {
    let model = NoiseModel::langevin(1.0, 1.0, 1.0)?;
    // Warm once so the timing reflects the solve, not page faults.
    solve_lyapunov(&model)?;
    let start = Instant::now();
    let law = solve_lyapunov(&model)?;
    let elapsed = start.elapsed().as_secs_f64();
    let expected = [0.5, 0.0, 0.0, 0.5];
    let err = law
        .covariance()
        .iter()
        .zip(expected)
        .map(|(c, e)| (c - e).abs())
        .fold(0.0, f64::max);
    Ok(outcome(
        err,
        err <= 1e-10 && elapsed < 1e-3,
        format!("solve took {:.1} µs", elapsed * 1e6),
    ))
}

fn rate_system(functional: FunctionalKind) -> SystemSpec {
    SystemSpec::new(SystemKind::LinearTimedep)
        .with_x0(RATE_X0)
        .with_functional(functional)
}

fn rate_control(system: &SystemSpec) -> Result<f64> {
    let (model, law) = ou()?;
    Ok(control_mean(
        system,
        &model,
        &law,
        StepperConfig::new(1e-4, 1.0),
        None,
        0,
        0,
    )?
    .value)
}

fn smooth_rate(opts: &ValidationOptions) -> Result<Outcome> {
    let sys = rate_system(FunctionalKind::TerminalSquareNorm);
    let pts = sweep(&sys, opts, &RATE_GRID, 10_000, rate_control(&sys)?, 0)?;
    let s = slope_of(&pts)?;
    Ok(outcome(s, s >= 1.7, variances(&pts)))
}

fn indicator_rate(opts: &ValidationOptions) -> Result<Outcome> {
    let sys = rate_system(FunctionalKind::TerminalIndicatorBand);
    let pts = sweep(&sys, opts, &RATE_GRID, 10_000, rate_control(&sys)?, 1)?;
    let s = slope_of(&pts)?;
    Ok(outcome(s, (0.7..=1.5).contains(&s), variances(&pts)))
}

fn variance_ratio(opts: &ValidationOptions) -> Result<Outcome> {
    let sys = rate_system(FunctionalKind::TerminalSquareNorm);
    let pts = sweep(&sys, opts, &[0.1], 10_000, rate_control(&sys)?, 2)?;
    let p = &pts[0];
    let ratio = p.control.normalized_variance / p.brute.normalized_variance;
    Ok(outcome(
        ratio,
        ratio <= 0.05,
        format!(
            "N·Var(Î) = {:.4e}, N·Var(Ĵ) = {:.4e}",
            p.control.normalized_variance, p.brute.normalized_variance
        ),
    ))
}

fn unbiasedness(opts: &ValidationOptions) -> Result<Outcome> {
    let (model, law) = ou()?;
    let n = opts.level.samples();
    let mut failures = 0;
    let mut notes = Vec::new();
    for (k, kind) in SystemKind::ALL.into_iter().enumerate() {
        let sys = SystemSpec::new(kind);
        let control = control_mean(
            &sys,
            &model,
            &law,
            opts.stepper(),
            None,
            opts.level.reference_samples(),
            reference_root(opts.seed + 10 + k as u64),
        )?;
        let pts = sweep(&sys, opts, &[0.25], n, control.value, 10 + k as u64)?;
        let p = &pts[0];
        let ok = p.control.overlaps(&p.brute);
        if !ok {
            failures += 1;
        }
        let (lo, hi) = p.control.ci();
        let (blo, bhi) = p.brute.ci();
        notes.push(format!(
            "{}: Î [{lo:.5}, {hi:.5}] Ĵ [{blo:.5}, {bhi:.5}]{}",
            kind.name(),
            if ok { "" } else { " disjoint" }
        ));
    }
    Ok(outcome(failures as f64, failures == 0, notes.join("; ")))
}

fn control_oracles(opts: &ValidationOptions) -> Result<Outcome> {
    let (model, law) = ou()?;
    let cfg = StepperConfig::new(1e-4, 1.0);
    let n_ref = opts.level.reference_samples();
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();

    let mut free = SystemSpec::new(SystemKind::LinearTimedep);
    free.params.p = [0.0; 2];
    free.params.q = [0.0; 2];
    let free_gap = (moment_ode_mean(&free, 1.0, 1.0)?.value - 4.0 / 3.0).abs();
    notes.push(format!("free motion gap {free_gap:.2e}"));

    let cases: [(SystemKind, &str); 3] = [
        (SystemKind::LinearTimedep, "moment_ode"),
        (SystemKind::VanDerPol, "kolmogorov_fd"),
        (SystemKind::Friction, "friction_fd"),
    ];
    for (k, (kind, label)) in cases.into_iter().enumerate() {
        let sys = SystemSpec::new(kind);
        let c_eff = limit_coefficients(&sys, &model, &law).c_eff();
        let solved = match kind {
            SystemKind::LinearTimedep => moment_ode_mean(&sys, c_eff, 1.0)?,
            SystemKind::VanDerPol => kolmogorov_fd_mean(
                &sys,
                c_eff,
                1.0,
                &GridSpec::plane_default(),
                Terminal::SquareNorm,
            )?,
            _ => friction_fd_mean(
                sys.params.c_f,
                c_eff,
                &GridSpec::half_line_default(c_eff, 1.0),
                1.0,
                sys.x0[0],
            )?,
        };
        let mc = massive_mc_mean(
            &sys,
            &model,
            &law,
            cfg,
            n_ref,
            reference_root(opts.seed + 20 + k as u64),
        )?;
        let tol = (3.0 * mc.standard_error()).max(solved.error_estimate);
        let ratio = (solved.value - mc.value).abs() / tol;
        worst = worst.max(ratio);
        notes.push(format!(
            "{label} {:.5} vs mc {:.5} (tol {:.2e})",
            solved.value, mc.value, tol
        ));
    }
    Ok(outcome(
        worst,
        worst <= 1.0 && free_gap <= 1e-4,
        notes.join("; "),
    ))
}

fn reflected(opts: &ValidationOptions) -> Result<Outcome> {
    let (model, law) = ou()?;
    let sys = SystemSpec::new(SystemKind::ReflectedIntegral);
    let c_eff = limit_coefficients(&sys, &model, &law).c_eff();
    let efu = reflected_mean(c_eff, 1.0).value;
    let efu_ok = (efu - REFLECTED_TARGET).abs() < 5e-7;
    let pts = sweep(&sys, opts, &RATE_GRID, opts.level.samples(), efu, 30)?;
    let at = pts
        .iter()
        .find(|p| p.row.eps == 0.1)
        .expect("0.1 is on the grid");
    let covers = at.control.covers(REFLECTED_TARGET);
    let s = slope_of(&pts)?;
    let (lo, hi) = at.control.ci();
    Ok(outcome(
        s,
        efu_ok && covers && s >= 1.6,
        format!(
            "efu = {efu:.7}; Î(0.1) CI [{lo:.6}, {hi:.6}] {}; {}",
            if covers { "covers" } else { "misses" },
            variances(&pts)
        ),
    ))
}

fn constrained_rates(opts: &ValidationOptions) -> Result<Outcome> {
    let n = opts.level.samples();
    // Only the variances enter the fit, so the control mean is irrelevant.
    let friction = sweep(
        &SystemSpec::new(SystemKind::Friction),
        opts,
        &RATE_GRID,
        n,
        0.0,
        40,
    )?;
    let plastic = sweep(
        &SystemSpec::new(SystemKind::ElastoPlastic),
        opts,
        &RATE_GRID,
        n,
        0.0,
        41,
    )?;
    let sf = slope_of(&friction)?;
    let sp = slope_of(&plastic)?;
    Ok(outcome(
        sf,
        sf >= 1.7 && sp >= 0.8,
        format!(
            "friction slope {sf:.3} ({}); elasto-plastic slope {sp:.3} ({})",
            variances(&friction),
            variances(&plastic)
        ),
    ))
}

fn penalization(opts: &ValidationOptions) -> Result<Outcome> {
    let (model, law) = ou()?;
    let sys = SystemSpec::new(SystemKind::Friction);
    let penalties = [10.0, 100.0, 1000.0];
    let gaps = penalization_gap(
        &sys,
        &model,
        &law,
        0.5,
        opts.stepper(),
        &penalties,
        1000,
        opts.seed + 50,
    )?;
    let pts: Vec<(f64, f64)> = penalties
        .iter()
        .zip(&gaps)
        .map(|(p, g)| (p.ln(), g.ln()))
        .collect();
    let decay = -ols_slope(&pts)?;
    Ok(outcome(
        decay,
        (0.7..=1.3).contains(&decay),
        format!(
            "mean sup gaps {}",
            gaps.iter()
                .map(|g| format!("{g:.3e}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    ))
}

fn invariants(opts: &ValidationOptions) -> Result<Outcome> {
    let (model, law) = ou()?;
    let n = opts.level.samples();
    let cfg = opts.stepper();
    let eps = 0.25;

    let plastic = SystemSpec::new(SystemKind::ElastoPlastic);
    let c_ep = plastic.params.c_ep;
    let st = CoupledStepper::new(&plastic, &model, &law, eps, cfg)?;
    let plastic_bad: usize = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut bad = 0;
            st.visit_path(
                &mut sample_stream(opts.seed + 60, k as u64),
                None,
                |_, x, u, _| {
                    bad += usize::from(!(x[1].abs() <= c_ep)) + usize::from(!(u[1].abs() <= c_ep));
                },
            );
            bad
        })
        .sum();

    let refl = SystemSpec::new(SystemKind::ReflectedIntegral);
    let st = CoupledStepper::new(&refl, &model, &law, eps, cfg)?;
    let refl_bad: usize = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut bad = 0;
            st.visit_path(
                &mut sample_stream(opts.seed + 61, k as u64),
                None,
                |_, x, u, _| {
                    bad += usize::from(!(x[0] >= 0.0)) + usize::from(!(u[0] >= 0.0));
                },
            );
            bad
        })
        .sum();

    let impact = SystemSpec::new(SystemKind::Impact);
    let p_o = impact.params.p_o;
    let st = CoupledStepper::new(&impact, &model, &law, eps, cfg)?;
    let (events, impact_bad) = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut ev: Vec<ImpactEvent> = Vec::new();
            st.visit_path(
                &mut sample_stream(opts.seed + 62, k as u64),
                Some(&mut ev),
                |_, _, _, _| {},
            );
            let bad = ev.iter().filter(|e| e.x1.abs() != p_o).count();
            (ev.len(), bad)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));

    let total = plastic_bad + refl_bad + impact_bad;
    Ok(outcome(
        total as f64,
        total == 0 && events > 0,
        format!(
            "{n} paths each: |z| > c_ep {plastic_bad}, negative states {refl_bad}, \
             off-obstacle impacts {impact_bad} of {events}"
        ),
    ))
}

fn determinism_config(kind: &str, workers: usize) -> std::result::Result<RunConfig, String> {
    parse_config(&format!(
        "model.kind = \"{kind}\"\nn_samples = 2000\neps_grid = [0.5, 0.25, 0.1]\n\
         control.n_ref = 10000\nworkers = {workers}\n"
    ))
    .map_err(|e| e.to_string())
}

fn determinism(opts: &ValidationOptions) -> Result<Outcome> {
    let mut differences = 0;
    let mut notes = Vec::new();
    for kind in ["linear_timedep", "elasto_plastic", "impact"] {
        let mut csvs = Vec::new();
        for workers in [1, 4] {
            let mut cfg = determinism_config(kind, workers).map_err(crate::Error::Unsupported)?;
            cfg.seed = opts.seed;
            csvs.push(run_sweep(&cfg)?.0);
        }
        let same = csvs[0] == csvs[1];
        differences += usize::from(!same);
        notes.push(format!(
            "{kind}: {}",
            if same { "identical" } else { "differ" }
        ));
    }
    Ok(outcome(
        differences as f64,
        differences == 0,
        notes.join(", "),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_criterion_passes() {
        let r = run_criterion(1, &ValidationOptions::new(Level::Quick));
        assert!(r.passed, "{r}");
    }

    #[test]
    fn unknown_criterion_is_a_failed_verdict() {
        let r = run_criterion(42, &ValidationOptions::new(Level::Quick));
        assert!(!r.passed);
        assert!(r.to_string().starts_with("FAIL criterion 42"));
    }

    #[test]
    fn report_round_trips_as_json() {
        let report = ValidationReport {
            level: Level::Quick,
            results: vec![run_criterion(1, &ValidationOptions::new(Level::Quick))],
        };
        let back: ValidationReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back.results[0].id, 1);
        assert!(back.all_passed());

        let failed = ValidationReport {
            level: Level::Full,
            results: vec![run_criterion(0, &ValidationOptions::new(Level::Full))],
        };
        let back: ValidationReport = serde_json::from_str(&failed.to_json()).unwrap();
        assert!(back.results[0].measured.is_nan());
        assert!(!back.all_passed());
    }
}
