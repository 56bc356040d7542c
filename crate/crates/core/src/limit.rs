//! Reference values `E[F(U_T)]` for the limit process.
//!
//! Each model gets the cheapest method that applies: moment ODEs for the
//! linear oscillator, a backward Kolmogorov finite-difference solve for the
//! Van der Pol oscillator, a half-line backward solve for friction, a closed
//! form for the reflected integral, and plain Monte Carlo on `U` otherwise.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::noise::{InvariantLaw, NoiseModel};
use crate::sim::{batch_limit, LimitStepper, StepperConfig};
use crate::stats::Welford;
use crate::systems::{limit_coefficients, FunctionalKind, SystemKind, SystemSpec};

/// Step of the moment ODE integrator.
pub const MOMENT_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMethod {
    MomentOde,
    KolmogorovFd,
    FrictionFd,
    ClosedForm,
    MassiveMc,
}

impl ControlMethod {
    pub const ALL: [ControlMethod; 5] = [
        ControlMethod::MomentOde,
        ControlMethod::KolmogorovFd,
        ControlMethod::FrictionFd,
        ControlMethod::ClosedForm,
        ControlMethod::MassiveMc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControlMethod::MomentOde => "moment_ode",
            ControlMethod::KolmogorovFd => "kolmogorov_fd",
            ControlMethod::FrictionFd => "friction_fd",
            ControlMethod::ClosedForm => "closed_form",
            ControlMethod::MassiveMc => "massive_mc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlMean {
    pub value: f64,
    pub method: ControlMethod,
    pub error_estimate: f64,
}

impl ControlMean {
    /// Monte Carlo standard error, or zero for deterministic methods.
    pub fn standard_error(&self) -> f64 {
        match self.method {
            ControlMethod::MassiveMc => self.error_estimate / 1.96,
            _ => 0.0,
        }
    }
}

/// Terminal condition of a backward solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Terminal {
    SquareNorm,
    IndicatorBand(f64),
    VelocitySquare,
    Constant(f64),
}

impl Terminal {
    pub fn of(system: &SystemSpec) -> Result<Terminal> {
        match system.functional.kind {
            FunctionalKind::TerminalSquareNorm => Ok(Terminal::SquareNorm),
            FunctionalKind::TerminalIndicatorBand => {
                Ok(Terminal::IndicatorBand(system.functional.band))
            }
            FunctionalKind::TerminalVelocitySquare => Ok(Terminal::VelocitySquare),
            k => Err(Error::Unsupported(format!(
                "no backward solver for the {} functional",
                k.name()
            ))),
        }
    }

    #[inline]
    fn eval(self, x1: f64, x2: f64) -> f64 {
        match self {
            Terminal::SquareNorm => x1 * x1 + x2 * x2,
            Terminal::IndicatorBand(b) => {
                if x1.abs() <= b {
                    1.0
                } else {
                    0.0
                }
            }
            Terminal::VelocitySquare => x2 * x2,
            Terminal::Constant(k) => k,
        }
    }
}

/// Rectangular grid for the backward solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: Vec<usize>,
    /// Target transport CFL number when `dt` is chosen automatically.
    pub cfl: f64,
    /// Fixed backward time step; must keep the transport CFL ≤ 1.
    pub dt: Option<f64>,
    /// Upper bound on the automatic time step.
    pub max_dt: f64,
}

impl GridSpec {
    /// `[−4, 4]²` with 401 nodes per axis.
    pub fn plane_default() -> Self {
        GridSpec {
            lo: vec![-4.0, -4.0],
            hi: vec![4.0, 4.0],
            nodes: vec![401, 401],
            cfl: 0.9,
            dt: None,
            max_dt: 1e-3,
        }
    }

    /// `(0, 6·C·√T)` with 1201 nodes.
    pub fn half_line_default(c_eff: f64, t_end: f64) -> Self {
        GridSpec {
            lo: vec![0.0],
            hi: vec![6.0 * c_eff.max(1e-3) * t_end.sqrt()],
            nodes: vec![1201],
            cfl: 0.9,
            dt: None,
            max_dt: 1e-4,
        }
    }

    /// Every spacing doubled (node count `(n−1)/2 + 1`) and `dt` doubled.
    pub fn coarsened(&self) -> Self {
        GridSpec {
            nodes: self.nodes.iter().map(|n| (n - 1) / 2 + 1).collect(),
            dt: self.dt.map(|d| 2.0 * d),
            max_dt: 2.0 * self.max_dt,
            ..self.clone()
        }
    }

    pub fn with_nodes(mut self, n: usize) -> Self {
        self.nodes.iter_mut().for_each(|v| *v = n);
        self
    }

    fn validate(&self, dims: usize) -> Result<()> {
        if self.lo.len() != dims || self.hi.len() != dims || self.nodes.len() != dims {
            return Err(Error::param("grid", format!("expected {dims} dimensions")));
        }
        for k in 0..dims {
            if !(self.hi[k] > self.lo[k]) || self.nodes[k] < 3 {
                return Err(Error::param(
                    "grid",
                    "each axis needs hi > lo and at least 3 nodes",
                ));
            }
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::param("grid.cfl", "must lie in (0, 1]"));
        }
        if !(self.max_dt > 0.0) || self.dt.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::param("grid.dt", "must be positive"));
        }
        Ok(())
    }

    fn spacing(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]) / (self.nodes[k] - 1) as f64
    }

    /// Number of backward steps and their length for a peak transport rate
    /// `rate = max(|a₁|/dx₁ + |a₂|/dx₂)`.
    fn time_steps(&self, t_end: f64, rate: f64) -> Result<(usize, f64)> {
        let (n, tau) = match self.dt {
            Some(dt) => {
                let n = (t_end / dt).round().max(1.0) as usize;
                (n, t_end / n as f64)
            }
            None => {
                let cap = if rate > 0.0 {
                    self.cfl / rate
                } else {
                    f64::INFINITY
                };
                let n = (t_end / cap.min(self.max_dt)).ceil().max(1.0) as usize;
                (n, t_end / n as f64)
            }
        };
        let cfl = tau * rate;
        if cfl > 1.0 + 1e-12 {
            return Err(Error::UnstableGrid(cfl));
        }
        Ok((n, tau))
    }
}

/// Solves `(1 + 2r)c_j − r(c_{j−1} + c_{j+1}) = d_j` with identity rows at both
/// ends, in place on `d`. `scratch` needs `d.len()` slots.
fn implicit_diffusion(d: &mut [f64], r: f64, scratch: &mut [f64]) {
    let n = d.len();
    // Thomas algorithm; row 0 is the identity so c'_0 = 0.
    scratch[0] = 0.0;
    let (a, b) = (-r, 1.0 + 2.0 * r);
    for j in 1..n - 1 {
        let m = b - a * scratch[j - 1];
        scratch[j] = a / m;
        d[j] = (d[j] - a * d[j - 1]) / m;
    }
    for j in (1..n - 1).rev() {
        d[j] -= scratch[j] * d[j + 1];
    }
}

fn check_linear(system: &SystemSpec) -> Result<()> {
    if system.kind != SystemKind::LinearTimedep {
        return Err(Error::Unsupported(format!(
            "moment equations only exist for linear_timedep, not {}",
            system.kind.name()
        )));
    }
    Ok(())
}

/// First and second moments `(m₁, m₂, M₁₁, M₁₂, M₂₂)` of the linear limit
/// oscillator at `t_end`, by classical RK4 with step `h`.
pub fn linear_moments(system: &SystemSpec, c_eff: f64, t_end: f64, h: f64) -> Result<[f64; 5]> {
    check_linear(system)?;
    if !(h > 0.0) || !(t_end >= 0.0) {
        return Err(Error::param(
            "T",
            "horizon must be non-negative and step positive",
        ));
    }
    let pp = system.params.p;
    let qq = system.params.q;
    let c2 = c_eff * c_eff;
    let rhs = |t: f64, y: &[f64; 5]| -> [f64; 5] {
        let p = pp[0] + pp[1] * t.cos();
        let q = qq[0] + qq[1] * t.sin();
        [
            y[1],
            -p * y[0] - q * y[1],
            2.0 * y[3],
            y[4] - p * y[2] - q * y[3],
            -2.0 * p * y[3] - 2.0 * q * y[4] + c2,
        ]
    };
    let [a, b] = system.x0;
    let mut y = [a, b, a * a, a * b, b * b];
    let n = (t_end / h).ceil() as usize;
    if n == 0 {
        return Ok(y);
    }
    let h = t_end / n as f64;
    let axpy = |y: &[f64; 5], k: &[f64; 5], s: f64| -> [f64; 5] {
        std::array::from_fn(|i| y[i] + s * k[i])
    };
    for step in 0..n {
        let t = step as f64 * h;
        let k1 = rhs(t, &y);
        let k2 = rhs(t + 0.5 * h, &axpy(&y, &k1, 0.5 * h));
        let k3 = rhs(t + 0.5 * h, &axpy(&y, &k2, 0.5 * h));
        let k4 = rhs(t + h, &axpy(&y, &k3, h));
        for i in 0..5 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(y)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn moment_functional(system: &SystemSpec, y: &[f64; 5]) -> Result<f64> {
    Ok(match system.functional.kind {
        FunctionalKind::TerminalSquareNorm => y[2] + y[4],
        FunctionalKind::TerminalVelocitySquare => y[4],
        FunctionalKind::TerminalValue => y[0],
        FunctionalKind::TerminalIndicatorBand => {
            let b = system.functional.band;
            let sd = (y[2] - y[0] * y[0]).max(0.0).sqrt();
            if sd == 0.0 {
                if y[0].abs() <= b {
                    1.0
                } else {
                    0.0
                }
            } else {
                normal_cdf((b - y[0]) / sd) - normal_cdf((-b - y[0]) / sd)
            }
        }
        k => {
            return Err(Error::Unsupported(format!(
                "{} has no moment closure",
                k.name()
            )))
        }
    })
}

/// `E[F(U_T)]` for the linear oscillator from its Gaussian moments; error
/// estimate is the change under step halving.
pub fn moment_ode_mean(system: &SystemSpec, c_eff: f64, t_end: f64) -> Result<ControlMean> {
    let coarse = moment_functional(system, &linear_moments(system, c_eff, t_end, MOMENT_STEP)?)?;
    let fine = moment_functional(
        system,
        &linear_moments(system, c_eff, t_end, 0.5 * MOMENT_STEP)?,
    )?;
    Ok(ControlMean {
        value: fine,
        method: ControlMethod::MomentOde,
        error_estimate: (fine - coarse).abs(),
    })
}

/// Single solve of `∂_τ c = (C²/2)∂²₂c + x₂∂₁c − h(x,t)∂₂c` backward from
/// `c(·, 0) = terminal`, evaluated at the initial condition.
fn kolmogorov_solve(
    system: &SystemSpec,
    c_eff: f64,
    t_end: f64,
    grid: &GridSpec,
    terminal: Terminal,
) -> Result<f64> {
    let (n1, n2) = (grid.nodes[0], grid.nodes[1]);
    let (dx1, dx2) = (grid.spacing(0), grid.spacing(1));
    let x1: Vec<f64> = (0..n1).map(|i| grid.lo[0] + i as f64 * dx1).collect();
    let x2: Vec<f64> = (0..n2).map(|j| grid.lo[1] + j as f64 * dx2).collect();

    // Peak transport rate over the grid and, for time-dependent h, over a
    // sampling of [0, T].
    let time_samples: Vec<f64> = if system.kind == SystemKind::LinearTimedep {
        (0..=32).map(|k| t_end * k as f64 / 32.0).collect()
    } else {
        vec![0.0]
    };
    let mut rate = 0.0f64;
    for &t in &time_samples {
        for &a in &x1 {
            for &b in &x2 {
                let r = b.abs() / dx1 + system.restoring(a, b, t).abs() / dx2;
                rate = rate.max(r);
            }
        }
    }
    let (steps, tau) = grid.time_steps(t_end, rate)?;
    let r = tau * 0.5 * c_eff * c_eff / (dx2 * dx2);

    let idx = |i: usize, j: usize| i * n2 + j;
    let mut c: Vec<f64> = (0..n1 * n2)
        .map(|k| terminal.eval(x1[k / n2], x2[k % n2]))
        .collect();
    let mut next = vec![0.0; n1 * n2];
    let mut scratch = vec![0.0; n2];
    for s in 0..steps {
        // Backward time: τ = s·dτ corresponds to physical time T − τ.
        let t = t_end - s as f64 * tau;
        for i in 0..n1 {
            for j in 0..n2 {
                let a1 = x2[j];
                let a2 = -system.restoring(x1[i], x2[j], t);
                let here = c[idx(i, j)];
                let d1 = if a1 > 0.0 {
                    if i + 1 < n1 {
                        (c[idx(i + 1, j)] - here) / dx1
                    } else {
                        0.0
                    }
                } else if i > 0 {
                    (here - c[idx(i - 1, j)]) / dx1
                } else {
                    0.0
                };
                let d2 = if a2 > 0.0 {
                    if j + 1 < n2 {
                        (c[idx(i, j + 1)] - here) / dx2
                    } else {
                        0.0
                    }
                } else if j > 0 {
                    (here - c[idx(i, j - 1)]) / dx2
                } else {
                    0.0
                };
                next[idx(i, j)] = here + tau * (a1 * d1 + a2 * d2);
            }
        }
        if r > 0.0 {
            for i in 0..n1 {
                implicit_diffusion(&mut next[i * n2..(i + 1) * n2], r, &mut scratch);
            }
        }
        std::mem::swap(&mut c, &mut next);
    }
    Ok(bilinear(&c, grid, system.x0))
}

fn bilinear(c: &[f64], grid: &GridSpec, at: [f64; 2]) -> f64 {
    let (n1, n2) = (grid.nodes[0], grid.nodes[1]);
    let locate = |k: usize, n: usize| {
        let s = ((at[k] - grid.lo[k]) / grid.spacing(k)).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        (i, s - i as f64)
    };
    let (i, u) = locate(0, n1);
    let (j, v) = locate(1, n2);
    let at = |i: usize, j: usize| c[i * n2 + j];
    (1.0 - u) * ((1.0 - v) * at(i, j) + v * at(i, j + 1))
        + u * ((1.0 - v) * at(i + 1, j) + v * at(i + 1, j + 1))
}

/// Backward Kolmogorov solve for a second-order smooth oscillator (Van der Pol,
/// or the linear one), with `|fine − coarse|` as the error estimate.
pub fn kolmogorov_fd_mean(
    system: &SystemSpec,
    c_eff: f64,
    t_end: f64,
    grid: &GridSpec,
    terminal: Terminal,
) -> Result<ControlMean> {
    if !matches!(
        system.kind,
        SystemKind::VanDerPol | SystemKind::LinearTimedep
    ) {
        return Err(Error::Unsupported(format!(
            "the plane Kolmogorov solver does not apply to {}",
            system.kind.name()
        )));
    }
    grid.validate(2)?;
    let margin = 4.0 * c_eff * t_end.sqrt();
    for k in 0..2 {
        if system.x0[k] - margin < grid.lo[k] - 1e-12 || system.x0[k] + margin > grid.hi[k] + 1e-12
        {
            return Err(Error::param(
                "grid",
                format!("initial condition needs a margin of {margin} inside the bounds"),
            ));
        }
    }
    let fine = kolmogorov_solve(system, c_eff, t_end, grid, terminal)?;
    let coarse = kolmogorov_solve(system, c_eff, t_end, &grid.coarsened(), terminal)?;
    Ok(ControlMean {
        value: fine,
        method: ControlMethod::KolmogorovFd,
        error_estimate: (fine - coarse).abs(),
    })
}

/// Half-line solve of `∂_τ c = (C²/2)∂²c − c_f∂c` on `(0, L)` with
/// `∂c(0) = 0`, `∂²c(L) = 0` and `c(·, 0) = x²`.
fn friction_solve(c_f: f64, c_eff: f64, t_end: f64, grid: &GridSpec, x0: f64) -> Result<f64> {
    let n = grid.nodes[0];
    let dx = grid.spacing(0);
    let (steps, tau) = grid.time_steps(t_end, c_f / dx)?;
    let r = tau * 0.5 * c_eff * c_eff / (dx * dx);
    let xs: Vec<f64> = (0..n).map(|i| grid.lo[0] + i as f64 * dx).collect();
    let mut c: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let mut next = vec![0.0; n];

    // Tridiagonal system: Neumann row at 0 from the ghost node c₋₁ = c₁,
    // identity row at L, interior rows centered.
    let (sub, diag, sup) = (-r, 1.0 + 2.0 * r, -r);
    let mut cp = vec![0.0; n];
    for _ in 0..steps {
        // Drift −c_f points toward the origin; upwind uses the left neighbour.
        next[0] = c[0];
        for i in 1..n {
            next[i] = c[i] - tau * c_f * (c[i] - c[i - 1]) / dx;
        }
        // Thomas sweep with the modified first row (1+2r)c₀ − 2r c₁.
        cp[0] = -2.0 * r / diag;
        next[0] /= diag;
        for i in 1..n - 1 {
            let m = diag - sub * cp[i - 1];
            cp[i] = sup / m;
            next[i] = (next[i] - sub * next[i - 1]) / m;
        }
        cp[n - 1] = 0.0;
        for i in (0..n - 1).rev() {
            next[i] -= cp[i] * next[i + 1];
        }
        std::mem::swap(&mut c, &mut next);
    }
    let s = ((x0.abs() - grid.lo[0]) / dx).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    let u = s - i as f64;
    Ok((1.0 - u) * c[i] + u * c[i + 1])
}

/// `E[U_T²]` for the friction limit `dU = −c_f sign(U)dt + C dW`, using the
/// even symmetry of the solution to work on the half-line.
pub fn friction_fd_mean(
    c_f: f64,
    c_eff: f64,
    grid: &GridSpec,
    t_end: f64,
    x0: f64,
) -> Result<ControlMean> {
    grid.validate(1)?;
    if !(c_f >= 0.0) {
        return Err(Error::param("model.c_f", "must be non-negative"));
    }
    if grid.lo[0] != 0.0 || x0.abs() >= grid.hi[0] {
        return Err(Error::param(
            "grid",
            "half-line grid must start at 0 and contain |x0|",
        ));
    }
    let fine = friction_solve(c_f, c_eff, t_end, grid, x0)?;
    let coarse = friction_solve(c_f, c_eff, t_end, &grid.coarsened(), x0)?;
    Ok(ControlMean {
        value: fine,
        method: ControlMethod::FrictionFd,
        error_estimate: (fine - coarse).abs(),
    })
}

/// `E[U_T] = C√(2T/π)` for Brownian motion reflected at 0 started at 0.
pub fn reflected_mean(c_eff: f64, t_end: f64) -> ControlMean {
    ControlMean {
        value: c_eff * (2.0 * t_end / std::f64::consts::PI).sqrt(),
        method: ControlMethod::ClosedForm,
        error_estimate: 0.0,
    }
}

/// Monte Carlo on the limit process alone; error estimate is `1.96·SE`.
pub fn massive_mc_mean(
    system: &SystemSpec,
    model: &NoiseModel,
    law: &InvariantLaw,
    cfg: StepperConfig,
    n_ref: usize,
    seed: u64,
) -> Result<ControlMean> {
    if n_ref < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: n_ref,
        });
    }
    let stepper = LimitStepper::new(system, model, law, cfg)?;
    let w: Welford = batch_limit(&stepper, n_ref, seed).into_iter().collect();
    Ok(ControlMean {
        value: w.mean(),
        method: ControlMethod::MassiveMc,
        error_estimate: 1.96 * (w.variance() / n_ref as f64).sqrt(),
    })
}

/// Checks that `method` can evaluate the system's functional.
pub fn check_method(system: &SystemSpec, method: ControlMethod) -> Result<()> {
    let f = system.functional.kind;
    let ok = match method {
        ControlMethod::MomentOde => {
            system.kind == SystemKind::LinearTimedep && f != FunctionalKind::BoundaryIndicator
        }
        ControlMethod::KolmogorovFd => {
            matches!(
                system.kind,
                SystemKind::VanDerPol | SystemKind::LinearTimedep
            ) && Terminal::of(system).is_ok()
        }
        ControlMethod::FrictionFd => {
            system.kind == SystemKind::Friction && f == FunctionalKind::TerminalSquareNorm
        }
        ControlMethod::ClosedForm => {
            system.kind == SystemKind::ReflectedIntegral
                && f == FunctionalKind::TerminalValue
                && system.x0[0] == 0.0
        }
        ControlMethod::MassiveMc => true,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Unsupported(format!(
            "{} cannot evaluate {} on {}",
            method.name(),
            f.name(),
            system.kind.name()
        )))
    }
}

/// The method used when none is requested.
pub fn default_method(system: &SystemSpec) -> ControlMethod {
    let preferred = match system.kind {
        SystemKind::LinearTimedep => ControlMethod::MomentOde,
        SystemKind::VanDerPol => ControlMethod::KolmogorovFd,
        SystemKind::Friction => ControlMethod::FrictionFd,
        SystemKind::ReflectedIntegral => ControlMethod::ClosedForm,
        SystemKind::ElastoPlastic | SystemKind::Impact => ControlMethod::MassiveMc,
    };
    if check_method(system, preferred).is_ok() {
        preferred
    } else {
        ControlMethod::MassiveMc
    }
}

/// `E[F(U_T)]` with the given or default method. `n_ref` and `seed` only
/// matter for Monte Carlo.
pub fn control_mean(
    system: &SystemSpec,
    model: &NoiseModel,
    law: &InvariantLaw,
    cfg: StepperConfig,
    method: Option<ControlMethod>,
    n_ref: usize,
    seed: u64,
) -> Result<ControlMean> {
    let method = method.unwrap_or_else(|| default_method(system));
    check_method(system, method)?;
    let c_eff = limit_coefficients(system, model, law).c_eff();
    let t_end = cfg.t_end;
    match method {
        ControlMethod::MomentOde => moment_ode_mean(system, c_eff, t_end),
        ControlMethod::KolmogorovFd => kolmogorov_fd_mean(
            system,
            c_eff,
            t_end,
            &GridSpec::plane_default(),
            Terminal::of(system)?,
        ),
        ControlMethod::FrictionFd => {
            let mut grid = GridSpec::half_line_default(c_eff, t_end);
            grid.hi[0] += system.x0[0].abs();
            friction_fd_mean(system.params.c_f, c_eff, &grid, t_end, system.x0[0])
        }
        ControlMethod::ClosedForm => Ok(reflected_mean(c_eff, t_end)),
        ControlMethod::MassiveMc => massive_mc_mean(system, model, law, cfg, n_ref, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::solve_lyapunov;
    use approx::assert_abs_diff_eq;

    fn linear(p: [f64; 2], q: [f64; 2], x0: [f64; 2]) -> SystemSpec {
        let mut s = SystemSpec::new(SystemKind::LinearTimedep).with_x0(x0);
        s.params.p = p;
        s.params.q = q;
        s
    }

    #[test]
    fn free_motion_moments() {
        let s = linear([0.0; 2], [0.0; 2], [0.0; 2]);
        let m = moment_ode_mean(&s, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(m.value, 4.0 / 3.0, epsilon = 1e-10);
        let y = linear_moments(&s, 1.0, 1.0, MOMENT_STEP).unwrap();
        assert_abs_diff_eq!(y[3], 0.5, epsilon = 1e-10);
        assert_eq!(moment_ode_mean(&s, 0.0, 3.0).unwrap().value, 0.0);
    }

    #[test]
    fn default_linear_oscillator_values() {
        // Frozen from an independent scipy solve of the same moment system.
        let s = linear([1.0, 1.0], [1.0, 1.0], [0.0; 2]);
        assert_abs_diff_eq!(
            moment_ode_mean(&s, 1.0, 1.0).unwrap().value,
            0.31958311252486377,
            epsilon = 1e-9
        );
        let s = linear([1.0, 1.0], [1.0, 1.0], [1.0, 1.0]);
        assert_abs_diff_eq!(
            moment_ode_mean(&s, 1.0, 1.0).unwrap().value,
            1.5718188991777127,
            epsilon = 1e-9
        );
        let s = s.with_functional(FunctionalKind::TerminalIndicatorBand);
        assert_abs_diff_eq!(
            moment_ode_mean(&s, 1.0, 1.0).unwrap().value,
            0.65643,
            epsilon = 1e-5
        );
        let s = linear([1.0, 1.0], [1.0, 1.0], [1.0, 0.0])
            .with_functional(FunctionalKind::TerminalIndicatorBand);
        assert_abs_diff_eq!(
            moment_ode_mean(&s, 1.0, 1.0).unwrap().value,
            0.96016,
            epsilon = 1e-5
        );
    }

    #[test]
    fn moments_reject_other_models() {
        assert!(moment_ode_mean(&SystemSpec::new(SystemKind::VanDerPol), 1.0, 1.0).is_err());
    }

    #[test]
    fn reflected_closed_form() {
        assert_abs_diff_eq!(
            reflected_mean(1.0, 1.0).value,
            0.7978845608028654,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            reflected_mean(2.0, 1.0).value,
            1.5957691216057308,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            reflected_mean(1.0, 4.0).value,
            1.5957691216057308,
            epsilon = 1e-15
        );
    }

    fn small_plane(n: usize) -> GridSpec {
        GridSpec::plane_default().with_nodes(n)
    }

    #[test]
    fn kolmogorov_preserves_constants() {
        let s = SystemSpec::new(SystemKind::VanDerPol).with_x0([0.3, -0.2]);
        let m =
            kolmogorov_fd_mean(&s, 0.5, 1.0, &small_plane(101), Terminal::Constant(2.5)).unwrap();
        assert!((m.value - 2.5).abs() <= 1e-8);
    }

    #[test]
    fn kolmogorov_null_dynamics() {
        let s = linear([0.0; 2], [0.0; 2], [0.0; 2]);
        let m = kolmogorov_fd_mean(&s, 0.0, 1.0, &small_plane(101), Terminal::SquareNorm).unwrap();
        assert!(m.value.abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_matches_moments_on_linear_oscillator() {
        let s = linear([1.0, 1.0], [1.0, 1.0], [0.0; 2]);
        let exact = moment_ode_mean(&s, 1.0, 1.0).unwrap().value;
        let m = kolmogorov_fd_mean(&s, 1.0, 1.0, &small_plane(201), Terminal::SquareNorm).unwrap();
        assert!(
            (m.value - exact).abs() <= m.error_estimate.max(1e-3),
            "{} vs {exact} ({})",
            m.value,
            m.error_estimate
        );
    }

    #[test]
    fn kolmogorov_rejects_large_steps() {
        let s = SystemSpec::new(SystemKind::VanDerPol);
        let mut g = small_plane(101);
        g.dt = Some(0.05);
        assert!(matches!(
            kolmogorov_fd_mean(&s, 1.0, 1.0, &g, Terminal::SquareNorm),
            Err(Error::UnstableGrid(_))
        ));
    }

    #[test]
    fn friction_without_drift_is_heat_equation() {
        let g = GridSpec::half_line_default(1.0, 1.0);
        let m = friction_fd_mean(0.0, 1.0, &g, 1.0, 0.0).unwrap();
        assert!((m.value - 1.0).abs() < 1e-3, "{}", m.value);
        let g = GridSpec::half_line_default(1.5, 2.0);
        let m = friction_fd_mean(0.0, 1.5, &g, 2.0, 0.0).unwrap();
        assert!((m.value - 4.5).abs() < 5e-3, "{}", m.value);
    }

    #[test]
    fn friction_value_falls_with_stronger_friction() {
        let g = GridSpec::half_line_default(1.0, 1.0);
        let v: Vec<f64> = [0.25, 1.0, 4.0]
            .iter()
            .map(|&cf| friction_fd_mean(cf, 1.0, &g, 1.0, 0.0).unwrap().value)
            .collect();
        assert!(v[0] > v[1] && v[1] > v[2], "{v:?}");
    }

    #[test]
    fn massive_mc_is_exact_without_noise() {
        let m = NoiseModel::ou(1.0, 0.0).unwrap();
        let law = solve_lyapunov(&m).unwrap();
        let s = SystemSpec::new(SystemKind::VanDerPol).with_x0([1.0, 0.0]);
        let cm = massive_mc_mean(&s, &m, &law, StepperConfig::new(1e-3, 1.0), 100, 1).unwrap();
        assert!(cm.error_estimate.abs() < 1e-12);
    }

    #[test]
    fn massive_mc_boundary_probability() {
        let m = NoiseModel::ou(1.0, 1.0).unwrap();
        let law = solve_lyapunov(&m).unwrap();
        let s = SystemSpec::new(SystemKind::ElastoPlastic)
            .with_functional(FunctionalKind::BoundaryIndicator);
        let cm = massive_mc_mean(&s, &m, &law, StepperConfig::new(1e-3, 1.0), 2000, 1).unwrap();
        assert!((0.0..=1.0).contains(&cm.value));
        assert!(cm.error_estimate > 0.0);
    }

    #[test]
    fn dispatcher_picks_method_by_model() {
        let expect = [
            (SystemKind::LinearTimedep, ControlMethod::MomentOde),
            (SystemKind::VanDerPol, ControlMethod::KolmogorovFd),
            (SystemKind::Friction, ControlMethod::FrictionFd),
            (SystemKind::ElastoPlastic, ControlMethod::MassiveMc),
            (SystemKind::Impact, ControlMethod::MassiveMc),
            (SystemKind::ReflectedIntegral, ControlMethod::ClosedForm),
        ];
        for (k, m) in expect {
            assert_eq!(default_method(&SystemSpec::new(k)), m, "{}", k.name());
        }
        let s = SystemSpec::new(SystemKind::ReflectedIntegral).with_x0([0.5, 0.0]);
        assert_eq!(default_method(&s), ControlMethod::MassiveMc);
    }
}
