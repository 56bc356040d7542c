//! Brute-force and control-variate estimators, and the ε-sweep built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{InvariantLaw, NoiseModel};
use crate::rng::row_root;
use crate::sim::{batch_simulate, CoupledStepper, StepperConfig};
use crate::stats::{CoupledMoments, Welford};
use crate::systems::SystemSpec;

const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    BruteForce,
    ControlVariate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: Estimator,
    pub mean: f64,
    pub sample_variance: f64,
    pub n: u64,
    /// `N·Var` of the estimator, i.e. the sample variance of the summand.
    pub normalized_variance: f64,
    pub ci_half_width: f64,
}

impl EstimateReport {
    fn from_moments(estimator: Estimator, mean: f64, w: &Welford) -> Self {
        let var = w.variance();
        EstimateReport {
            estimator,
            mean,
            sample_variance: var,
            n: w.count(),
            normalized_variance: var,
            ci_half_width: Z95 * (var / w.count() as f64).sqrt(),
        }
    }

    pub fn ci(&self) -> (f64, f64) {
        (
            self.mean - self.ci_half_width,
            self.mean + self.ci_half_width,
        )
    }

    pub fn overlaps(&self, other: &EstimateReport) -> bool {
        let (a, b) = (self.ci(), other.ci());
        a.0 <= b.1 && b.0 <= a.1
    }

    pub fn covers(&self, value: f64) -> bool {
        (self.mean - value).abs() <= self.ci_half_width
    }
}

fn check_count(n: u64) -> Result<()> {
    if n < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: n as usize,
        });
    }
    Ok(())
}

pub fn brute_force_estimate(samples: impl IntoIterator<Item = f64>) -> Result<EstimateReport> {
    let w: Welford = samples.into_iter().collect();
    brute_force_from_moments(&w)
}

pub fn brute_force_from_moments(fx: &Welford) -> Result<EstimateReport> {
    check_count(fx.count())?;
    Ok(EstimateReport::from_moments(
        Estimator::BruteForce,
        fx.mean(),
        fx,
    ))
}

pub fn control_variate_estimate(
    samples: impl IntoIterator<Item = (f64, f64)>,
    control_mean: f64,
) -> Result<EstimateReport> {
    let w: Welford = samples.into_iter().map(|(fx, fu)| fx - fu).collect();
    control_variate_from_moments(&w, control_mean)
}

/// `diff` accumulates `f_x − f_u`.
pub fn control_variate_from_moments(diff: &Welford, control_mean: f64) -> Result<EstimateReport> {
    check_count(diff.count())?;
    Ok(EstimateReport::from_moments(
        Estimator::ControlVariate,
        control_mean + diff.mean(),
        diff,
    ))
}

/// One line of the sweep output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub nvar_over_eps: f64,
    pub nvar_over_eps2: f64,
    pub i_hat: f64,
    pub j_hat: f64,
    pub efu: f64,
}

impl SweepRow {
    /// `N·Var(Î)` recovered from the row.
    pub fn normalized_variance(&self) -> f64 {
        self.nvar_over_eps * self.eps
    }
}

/// A sweep row together with the full reports it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub row: SweepRow,
    pub brute: EstimateReport,
    pub control: EstimateReport,
    pub moments: CoupledMoments,
    pub seed: u64,
    pub unstable: bool,
}

/// Runs `n_samples` coupled paths per `ε` and builds both estimators around
/// the given control mean `E[F(U)]`. Row `i` draws from stream root
/// `seed + i·2³²`.
pub fn epsilon_sweep_detailed(
    system: &SystemSpec,
    model: &NoiseModel,
    law: &InvariantLaw,
    cfg: StepperConfig,
    eps_grid: &[f64],
    n_samples: usize,
    seed: u64,
    control_mean: f64,
) -> Result<Vec<SweepPoint>> {
    if eps_grid.is_empty() {
        return Err(Error::param("eps_grid", "must not be empty"));
    }
    if eps_grid.iter().any(|e| !(*e > 0.0)) || eps_grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::param(
            "eps_grid",
            "must be positive and strictly decreasing",
        ));
    }
    if n_samples < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: n_samples,
        });
    }
    let at = |eps: f64| {
        move |e: Error| Error::AtEpsilon {
            eps,
            source: Box::new(e),
        }
    };
    eps_grid
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            let root = row_root(seed, i);
            let stepper = CoupledStepper::new(system, model, law, eps, cfg).map_err(at(eps))?;
            let pairs = batch_simulate(&stepper, n_samples, root).map_err(at(eps))?;
            let mut moments = CoupledMoments::default();
            for &(fx, fu) in &pairs {
                moments.push(fx, fu);
            }
            let brute = brute_force_from_moments(&moments.fx)?;
            let control = control_variate_from_moments(&moments.diff, control_mean)?;
            let nvar_over_eps = control.normalized_variance / eps;
            Ok(SweepPoint {
                row: SweepRow {
                    eps,
                    nvar_over_eps,
                    nvar_over_eps2: nvar_over_eps / eps,
                    i_hat: control.mean,
                    j_hat: brute.mean,
                    efu: control_mean,
                },
                brute,
                control,
                moments,
                seed: root,
                unstable: stepper.unstable(),
            })
        })
        .collect()
}

pub fn epsilon_sweep(
    system: &SystemSpec,
    model: &NoiseModel,
    law: &InvariantLaw,
    cfg: StepperConfig,
    eps_grid: &[f64],
    n_samples: usize,
    seed: u64,
    control_mean: f64,
) -> Result<Vec<SweepRow>> {
    Ok(epsilon_sweep_detailed(
        system,
        model,
        law,
        cfg,
        eps_grid,
        n_samples,
        seed,
        control_mean,
    )?
    .into_iter()
    .map(|p| p.row)
    .collect())
}

/// Least-squares slope through `(x, y)` points.
pub fn ols_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::DegenerateFit("need at least two points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) || !sxy.is_finite() {
        return Err(Error::DegenerateFit("abscissae do not vary".into()));
    }
    Ok(sxy / sxx)
}

/// Slope of `log N·Var(Î)` against `log ε`.
pub fn fit_scaling_exponent(rows: &[SweepRow]) -> Result<f64> {
    if rows.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 rows, got {}",
            rows.len()
        )));
    }
    let mut pts = Vec::with_capacity(rows.len());
    for r in rows {
        let v = r.normalized_variance();
        if !(v > 0.0 && v.is_finite()) || !(r.eps > 0.0) {
            return Err(Error::DegenerateFit(format!(
                "non-positive variance at eps = {}",
                r.eps
            )));
        }
        pts.push((r.eps.ln(), v.ln()));
    }
    ols_slope(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sample_stream;
    use crate::systems::SystemKind;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn synthetic(grid: &[f64], f: impl Fn(f64) -> f64) -> Vec<SweepRow> {
        grid.iter()
            .map(|&e| SweepRow {
                eps: e,
                nvar_over_eps: f(e) / e,
                nvar_over_eps2: f(e) / (e * e),
                i_hat: 0.0,
                j_hat: 0.0,
                efu: 0.0,
            })
            .collect()
    }

    #[test]
    fn brute_force_examples() {
        let r = brute_force_estimate([2.5; 3]).unwrap();
        assert_eq!((r.mean, r.sample_variance), (2.5, 0.0));
        let r = brute_force_estimate([0.0, 2.0]).unwrap();
        assert_eq!((r.mean, r.sample_variance), (1.0, 2.0));
        assert_eq!(r.ci_half_width, 1.96);
        assert!(matches!(
            brute_force_estimate([1.0]),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn brute_force_gaussian_square() {
        // E[Z²] = 1, Var[Z²] = 2.
        let mut rng = sample_stream(17, 0);
        let r = brute_force_estimate(
            (0..100_000).map(|_| rng.sample::<f64, _>(StandardNormal).powi(2)),
        )
        .unwrap();
        assert!((r.mean - 1.0).abs() < 4.0 * (2.0f64 / 1e5).sqrt());
    }

    #[test]
    fn control_variate_examples() {
        let r = control_variate_estimate([(0.3, 0.3), (1.7, 1.7)], 4.0).unwrap();
        assert_eq!((r.mean, r.sample_variance), (4.0, 0.0));
        let r = control_variate_estimate([(1.0, 0.0), (3.0, 2.0)], 5.0).unwrap();
        assert_eq!((r.mean, r.sample_variance), (6.0, 0.0));
    }

    #[test]
    fn fitted_slopes() {
        let grid = [0.4, 0.2, 0.1, 0.05];
        assert!((fit_scaling_exponent(&synthetic(&grid, |e| e * e)).unwrap() - 2.0).abs() < 1e-12);
        assert!(
            (fit_scaling_exponent(&synthetic(&grid, |e| 3.0 * e)).unwrap() - 1.0).abs() < 1e-12
        );
        // ε²|log ε| on this grid: frozen from an independent least-squares evaluation.
        let s = fit_scaling_exponent(&synthetic(&grid, |e| e * e * e.ln().abs())).unwrap();
        assert!((s - 1.4356208355016693).abs() < 1e-10, "{s}");
        let grid = [0.1, 0.05, 0.025, 0.01];
        let s = fit_scaling_exponent(&synthetic(&grid, |e| e * e * e.ln().abs())).unwrap();
        assert!((s - 1.7011).abs() < 1e-4, "{s}");
    }

    #[test]
    fn degenerate_fits() {
        let grid = [0.4, 0.2, 0.1];
        assert!(matches!(
            fit_scaling_exponent(&synthetic(&grid, |_| 0.0)),
            Err(Error::DegenerateFit(_))
        ));
        assert!(fit_scaling_exponent(&synthetic(&grid[..2], |e| e)).is_err());
    }

    #[test]
    fn sweep_rows_are_consistent() {
        let m = NoiseModel::ou(1.0, 1.0).unwrap();
        let law = crate::noise::solve_lyapunov(&m).unwrap();
        let sys = SystemSpec::new(SystemKind::LinearTimedep);
        let rows = epsilon_sweep(
            &sys,
            &m,
            &law,
            StepperConfig::new(1e-3, 1.0),
            &[1.0],
            200,
            3,
            0.3,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        let r = rows[0];
        assert_eq!(r.nvar_over_eps2, r.nvar_over_eps / r.eps);
        assert_eq!(r.efu, 0.3);
        assert!(epsilon_sweep(
            &sys,
            &m,
            &law,
            StepperConfig::new(1e-3, 1.0),
            &[0.1, 0.2],
            10,
            3,
            0.0
        )
        .is_err());
    }

    #[test]
    fn sweep_errors_name_the_epsilon() {
        let m = NoiseModel::ou(1.0, 1.0).unwrap();
        let law = crate::noise::solve_lyapunov(&m).unwrap();
        let sys = SystemSpec::new(SystemKind::LinearTimedep);
        let mut cfg = StepperConfig::new(1e-2, 1.0);
        cfg.stability_policy = crate::sim::StabilityPolicy::Reject;
        let err = epsilon_sweep(&sys, &m, &law, cfg, &[1.0, 0.1], 10, 3, 0.0).unwrap_err();
        assert!(matches!(err, Error::AtEpsilon { eps, .. } if eps == 0.1));
    }

    proptest! {
        #[test]
        fn control_variate_is_unbiased_identity(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..300),
            control in -5.0f64..5.0,
        ) {
            let r = control_variate_estimate(pairs.iter().copied(), control).unwrap();
            let n = pairs.len() as f64;
            let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
            let mu = pairs.iter().map(|p| p.1).sum::<f64>() / n;
            let lhs = r.mean - control;
            prop_assert!((lhs - (mx - mu)).abs() <= 1e-12 * (1.0 + mx.abs() + mu.abs()) * 10.0);
            prop_assert!(r.sample_variance >= 0.0);
            prop_assert!((r.ci_half_width - 1.96 * (r.sample_variance / n).sqrt()).abs() <= 1e-15);
        }
    }
}
