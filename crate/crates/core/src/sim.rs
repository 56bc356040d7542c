//! Coupled simulation of `(X^ε, η)` and the limit process `U` on one Brownian path.
//!
//! At step `n` both processes read the same standard normal vector `ξ_n`. The
//! colored process is forced by `(δt/ε)·weights·η_n` and the driver then moves
//! with `(√δt/ε)·K·ξ_n`; the limit process is forced by `Γ·√δt·ξ_n`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{root_row_major, sample_with_root, InvariantLaw, NoiseModel, STABILITY_LIMIT};
use crate::rng::{sample_stream, SampleRng};
use crate::systems::{
    limit_coefficients, penalized_step_unchecked, project_interval, State, SystemKind, SystemSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityPolicy {
    Warn,
    Reject,
}

/// How the limit process obtains its Brownian increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Same increments as the driver of `X^ε`; the control-variate setting.
    Shared,
    /// Fresh increments. Only useful to show that the variance reduction
    /// disappears without the coupling.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    pub t_end: f64,
    pub stability_policy: StabilityPolicy,
    pub coupling: Coupling,
}

impl StepperConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        StepperConfig {
            dt,
            t_end,
            stability_policy: StabilityPolicy::Warn,
            coupling: Coupling::Shared,
        }
    }

    /// Number of base steps; `t_end` must be a positive integer multiple of `dt`.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", "must be positive"));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::param("T", "must be positive"));
        }
        let r = self.t_end / self.dt;
        let n = r.round();
        if n < 1.0 || (r - n).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::param(
                "T",
                format!("{} is not a multiple of dt = {}", self.t_end, self.dt),
            ));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Process {
    Colored,
    Limit,
}

/// One obstacle collision of the impact oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactEvent {
    pub process: Process,
    pub time: f64,
    pub x1: f64,
    pub v_minus: f64,
    pub v_plus: f64,
}

/// Stored trajectories on the base grid. States hold the `n` state rows
/// followed by the constraint row, as in [`State`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoupledPath {
    pub times: Vec<f64>,
    pub x_eps: Vec<State>,
    pub u: Vec<State>,
    pub eta: Vec<Vec<f64>>,
    pub f_x: f64,
    pub f_u: f64,
    pub events: Vec<ImpactEvent>,
    /// The driver step exceeded the explicit-Euler stability ratio.
    pub unstable: bool,
}

/// Fraction of the step at which `x₁` hits the obstacle on the side of `x1_next`.
///
/// A start on or beyond that obstacle returns 0.
pub fn impact_substep(x1_prev: f64, x1_next: f64, p_o: f64) -> Result<f64> {
    let no_crossing = Error::NoCrossing {
        prev: x1_prev,
        next: x1_next,
        barrier: p_o,
    };
    if !(x1_next.abs() > p_o) || x1_next == x1_prev {
        return Err(no_crossing);
    }
    let barrier = p_o.copysign(x1_next);
    let theta = (barrier - x1_prev) / (x1_next - x1_prev);
    if theta > 1.0 || theta.is_nan() {
        return Err(no_crossing);
    }
    Ok(theta.max(0.0))
}

#[inline]
pub fn apply_restitution(v_minus: f64, e: f64) -> f64 {
    -e * v_minus
}

/// Source of the forcing increment for one process. Constants for a full
/// base step are cached; impact sub-steps recompute them.
enum Drive<'a> {
    Colored {
        model: &'a NoiseModel,
        eps: f64,
        eta: Vec<f64>,
        scratch: Vec<f64>,
        dt: f64,
        /// `(δt/ε, δt/ε², √δt/ε)`.
        base: [f64; 3],
    },
    White {
        gamma: &'a [f64],
        dt: f64,
        /// `√δt·Γ`.
        base: Vec<f64>,
        /// Uniform draw in `(0, 1]` for the current step's bridge minimum.
        bridge: f64,
    },
}

impl<'a> Drive<'a> {
    fn eta(&self) -> &[f64] {
        match self {
            Drive::Colored { eta, .. } => eta,
            Drive::White { .. } => &[],
        }
    }

    fn colored(model: &'a NoiseModel, eps: f64, eta: Vec<f64>, dt: f64) -> Self {
        let d = model.dim();
        Drive::Colored {
            model,
            eps,
            eta,
            scratch: vec![0.0; d],
            dt,
            base: [dt / eps, dt / (eps * eps), dt.sqrt() / eps],
        }
    }

    fn white(gamma: &'a [f64], dt: f64) -> Self {
        Drive::White {
            gamma,
            dt,
            base: gamma.iter().map(|g| g * dt.sqrt()).collect(),
            bridge: 1.0,
        }
    }

    fn set_bridge(&mut self, v: f64) {
        if let Drive::White { bridge, .. } = self {
            *bridge = v;
        }
    }

    /// Forcing increment over a sub-step of length `h` starting now.
    #[inline]
    fn jump(&self, h: f64, xi: &[f64]) -> f64 {
        match self {
            Drive::Colored {
                model,
                eps,
                eta,
                dt,
                base,
                ..
            } => {
                let c = if h == *dt { base[0] } else { h / eps };
                c * model.output(eta)
            }
            Drive::White {
                gamma, dt, base, ..
            } => {
                if h == *dt {
                    base.iter().zip(xi).map(|(g, x)| g * x).sum()
                } else {
                    h.sqrt() * gamma.iter().zip(xi).map(|(g, x)| g * x).sum::<f64>()
                }
            }
        }
    }

    #[inline]
    fn advance(&mut self, h: f64, xi: &[f64]) {
        if let Drive::Colored {
            model,
            eps,
            eta,
            scratch,
            dt,
            base,
        } = self
        {
            let (decay, kick) = if h == *dt {
                (base[1], base[2])
            } else {
                (h / (*eps * *eps), h.sqrt() / *eps)
            };
            model.advance_scaled(eta, scratch, decay, kick, xi);
        }
    }
}

/// `h(x₁, x₂, t)` with the linear oscillator's coefficients taken from the
/// precomputed `(p(t_n), q(t_n))`.
#[inline]
fn restoring_at(sys: &SystemSpec, x1: f64, x2: f64, t: f64, pq: [f64; 2]) -> f64 {
    if sys.kind == SystemKind::LinearTimedep {
        pq[0] * x1 + pq[1] * x2
    } else {
        sys.restoring(x1, x2, t)
    }
}

/// `(p(t_n), q(t_n))` on the base grid, empty for other models.
fn coefficient_table(sys: &SystemSpec, dt: f64, n_steps: usize) -> Vec<[f64; 2]> {
    if sys.kind != SystemKind::LinearTimedep {
        return Vec::new();
    }
    let (p, q) = (sys.params.p, sys.params.q);
    (0..n_steps)
        .map(|n| {
            let t = n as f64 * dt;
            [p[0] + p[1] * t.cos(), q[0] + q[1] * t.sin()]
        })
        .collect()
}

/// Advances one process by one base step with the model's scheme.
#[inline]
#[allow(clippy::too_many_arguments)]
fn step_state(
    sys: &SystemSpec,
    s: &mut State,
    t: f64,
    pq: [f64; 2],
    dt: f64,
    drive: &mut Drive,
    xi: &[f64],
    process: Process,
    events: Option<&mut Vec<ImpactEvent>>,
) {
    let p = &sys.params;
    match sys.kind {
        SystemKind::LinearTimedep | SystemKind::VanDerPol => {
            let j = drive.jump(dt, xi);
            let (x1, x2) = (s[0], s[1]);
            s[0] = x1 + dt * x2;
            s[1] = x2 - dt * restoring_at(sys, x1, x2, t, pq) + j;
            drive.advance(dt, xi);
        }
        SystemKind::Friction => {
            // y − δt·proj(y/δt) written as y − proj(y) on the scaled interval,
            // which makes a stick exactly zero.
            let y = s[0] + drive.jump(dt, xi);
            s[0] = y - project_interval(y, p.c_f * dt);
            drive.advance(dt, xi);
        }
        SystemKind::ElastoPlastic => {
            let j = drive.jump(dt, xi);
            let (x, z) = (s[0], s[1]);
            s[1] = project_interval(z + dt * x, p.c_ep);
            s[0] = x - dt * z + j;
            drive.advance(dt, xi);
        }
        SystemKind::ReflectedIntegral => {
            let a = s[0];
            let b = a + drive.jump(dt, xi);
            s[0] = match drive {
                Drive::White { gamma, bridge, .. } => {
                    let var = dt * gamma.iter().map(|g| g * g).sum::<f64>();
                    reflect_with_bridge(a, b, var, *bridge)
                }
                Drive::Colored { .. } => b,
            }
            .max(0.0);
            drive.advance(dt, xi);
        }
        SystemKind::Impact => impact_step(sys, s, t, dt, drive, xi, process, events),
    }
}

/// Reflected Brownian step from `a` to the free endpoint `b`, adding the
/// push needed by the minimum of the Brownian bridge between them. The
/// bridge minimum is drawn from the uniform `v` by inverting its law, so the
/// push is exact for a step of variance `var` rather than only monitoring the
/// grid points (which biases `E[U_T]` low by about `0.58·√var`).
pub fn reflect_with_bridge(a: f64, b: f64, var: f64, v: f64) -> f64 {
    if var <= 0.0 {
        return b;
    }
    let d = b - a;
    let min = 0.5 * (a + b - (d * d - 2.0 * var * v.ln()).sqrt());
    b - min.min(0.0)
}

/// Impact oscillator step: at most one collision per base step. The collision
/// sub-step of length `θδt` and the remainder `(1−θ)δt` each reuse `ξ_n`
/// scaled by the square root of their own length.
#[allow(clippy::too_many_arguments)]
fn impact_step(
    sys: &SystemSpec,
    s: &mut State,
    t: f64,
    dt: f64,
    drive: &mut Drive,
    xi: &[f64],
    process: Process,
    events: Option<&mut Vec<ImpactEvent>>,
) {
    let p = &sys.params;
    let (x1, x2) = (s[0], s[1]);
    let candidate = x1 + dt * x2;
    let theta = if candidate.abs() > p.p_o {
        impact_substep(x1, candidate, p.p_o).ok()
    } else {
        None
    };
    let Some(theta) = theta else {
        let j = drive.jump(dt, xi);
        s[0] = candidate;
        s[1] = x2 - dt * sys.restoring(x1, x2, t) + j;
        drive.advance(dt, xi);
        return;
    };
    let h = theta * dt;
    let barrier = p.p_o.copysign(candidate);
    let v_minus = if h > 0.0 {
        let v = x2 - h * sys.restoring(x1, x2, t) + drive.jump(h, xi);
        drive.advance(h, xi);
        v
    } else {
        x2
    };
    let v_plus = apply_restitution(v_minus, p.restitution);
    if let Some(ev) = events {
        ev.push(ImpactEvent {
            process,
            time: t + h,
            x1: barrier,
            v_minus,
            v_plus,
        });
    }
    let r = dt - h;
    if r > 0.0 {
        let j = drive.jump(r, xi);
        s[0] = barrier + r * v_plus;
        s[1] = v_plus - r * sys.restoring(barrier, v_plus, t + h) + j;
        drive.advance(r, xi);
    } else {
        s[0] = barrier;
        s[1] = v_plus;
    }
}

/// Precomputed data for repeated coupled simulation at one `ε`.
#[derive(Debug, Clone)]
pub struct CoupledStepper {
    system: SystemSpec,
    model: NoiseModel,
    root: Vec<f64>,
    gamma: Vec<f64>,
    eps: f64,
    cfg: StepperConfig,
    n_steps: usize,
    unstable: bool,
    pq: Vec<[f64; 2]>,
}

impl CoupledStepper {
    pub fn new(
        system: &SystemSpec,
        model: &NoiseModel,
        law: &InvariantLaw,
        eps: f64,
        cfg: StepperConfig,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::param("eps", "must be positive"));
        }
        system.validate()?;
        let n_steps = cfg.n_steps()?;
        if law.dim() != model.dim() {
            return Err(Error::param(
                "law",
                "dimension does not match the noise model",
            ));
        }
        let ratio = model.stability_ratio(cfg.dt, eps);
        let unstable = ratio > STABILITY_LIMIT;
        if unstable && cfg.stability_policy == StabilityPolicy::Reject {
            return Err(Error::StepTooLarge {
                ratio,
                limit: STABILITY_LIMIT,
            });
        }
        Ok(CoupledStepper {
            system: system.clone(),
            model: model.clone(),
            root: root_row_major(law)?,
            gamma: limit_coefficients(system, model, law).gamma,
            eps,
            cfg,
            n_steps,
            unstable,
            pq: coefficient_table(system, cfg.dt, n_steps),
        })
    }

    pub fn system(&self) -> &SystemSpec {
        &self.system
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn unstable(&self) -> bool {
        self.unstable
    }

    fn colored_drive<R: Rng + ?Sized>(&self, rng: &mut R) -> Drive<'_> {
        let d = self.model.dim();
        let mut eta = vec![0.0; d];
        let mut xi = vec![0.0; d];
        sample_with_root(&self.root, rng, &mut xi, &mut eta);
        Drive::colored(&self.model, self.eps, eta, self.cfg.dt)
    }

    /// Runs one sample and calls `visit(t, x, u, η)` at every grid time,
    /// including `t = 0`. Impact events are appended to `events` when given.
    pub fn visit_path<R, V>(
        &self,
        rng: &mut R,
        mut events: Option<&mut Vec<ImpactEvent>>,
        mut visit: V,
    ) -> (f64, f64)
    where
        R: Rng + ?Sized,
        V: FnMut(f64, &State, &State, &[f64]),
    {
        let sys = &self.system;
        let dt = self.cfg.dt;
        let dp = self.model.noise_dim();
        let mut xd = self.colored_drive(rng);
        let mut ud = Drive::white(&self.gamma, dt);
        let mut x = sys.initial_state();
        let mut u = x;
        let mut xi = vec![0.0; dp];
        let mut xi_u = vec![0.0; dp];
        let independent = self.cfg.coupling == Coupling::Independent;
        let bridged = sys.kind == SystemKind::ReflectedIntegral;

        visit(0.0, &x, &u, xd.eta());
        for n in 0..self.n_steps {
            let t = n as f64 * dt;
            let pq = self.pq.get(n).copied().unwrap_or_default();
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            if independent {
                for v in xi_u.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
            }
            if bridged {
                ud.set_bridge(1.0 - rng.random::<f64>());
            }
            let xi_limit = if independent { &xi_u } else { &xi };
            step_state(
                sys,
                &mut x,
                t,
                pq,
                dt,
                &mut xd,
                &xi,
                Process::Colored,
                events.as_deref_mut(),
            );
            step_state(
                sys,
                &mut u,
                t,
                pq,
                dt,
                &mut ud,
                xi_limit,
                Process::Limit,
                events.as_deref_mut(),
            );
            visit((n + 1) as f64 * dt, &x, &u, xd.eta());
        }
        (sys.evaluate(&x), sys.evaluate(&u))
    }

    /// Full trajectories for one sample.
    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> CoupledPath {
        let cap = self.n_steps + 1;
        let mut path = CoupledPath {
            times: Vec::with_capacity(cap),
            x_eps: Vec::with_capacity(cap),
            u: Vec::with_capacity(cap),
            eta: Vec::with_capacity(cap),
            unstable: self.unstable,
            ..Default::default()
        };
        let mut events = Vec::new();
        let (fx, fu) = self.visit_path(rng, Some(&mut events), |t, x, u, eta| {
            path.times.push(t);
            path.x_eps.push(*x);
            path.u.push(*u);
            path.eta.push(eta.to_vec());
        });
        path.events = events;
        path.f_x = fx;
        path.f_u = fu;
        path
    }

    /// Functional values `(F(X^ε_T), F(U_T))` without storing the path.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        self.visit_path(rng, None, |_, _, _, _| {})
    }

    /// Terminal states `(X^ε_T, U_T)` of one sample.
    pub fn terminal_states<R: Rng + ?Sized>(&self, rng: &mut R) -> (State, State) {
        let mut last = ([0.0; 3], [0.0; 3]);
        self.visit_path(rng, None, |_, x, u, _| last = (*x, *u));
        last
    }
}

/// One coupled sample path.
pub fn simulate_coupled<R: Rng + ?Sized>(
    system: &SystemSpec,
    model: &NoiseModel,
    law: &InvariantLaw,
    eps: f64,
    cfg: StepperConfig,
    rng: &mut R,
) -> Result<CoupledPath> {
    Ok(CoupledStepper::new(system, model, law, eps, cfg)?.simulate(rng))
}

/// `(f_x, f_u)` for samples `0..n` in index order. Sample `k` uses the stream
/// `(seed, k)`, so the output does not depend on the rayon pool size.
pub fn batch_simulate(
    stepper: &CoupledStepper,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if n_samples == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let out: Vec<(f64, f64)> = (0..n_samples)
        .into_par_iter()
        .map(|k| stepper.sample(&mut sample_stream(seed, k as u64)))
        .collect();
    if let Some(k) = out
        .iter()
        .position(|(a, b)| !a.is_finite() || !b.is_finite())
    {
        return Err(Error::Sample {
            index: k,
            source: Box::new(Error::Unsupported("non-finite functional value".into())),
        });
    }
    Ok(out)
}

/// Simulation of the limit process alone, for reference means.
#[derive(Debug, Clone)]
pub struct LimitStepper {
    system: SystemSpec,
    gamma: Vec<f64>,
    dt: f64,
    n_steps: usize,
    pq: Vec<[f64; 2]>,
}

impl LimitStepper {
    pub fn new(
        system: &SystemSpec,
        model: &NoiseModel,
        law: &InvariantLaw,
        cfg: StepperConfig,
    ) -> Result<Self> {
        system.validate()?;
        let n_steps = cfg.n_steps()?;
        Ok(LimitStepper {
            system: system.clone(),
            gamma: limit_coefficients(system, model, law).gamma,
            dt: cfg.dt,
            n_steps,
            pq: coefficient_table(system, cfg.dt, n_steps),
        })
    }

    pub fn terminal_state<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let mut u = self.system.initial_state();
        let mut drive = Drive::white(&self.gamma, self.dt);
        let mut xi = vec![0.0; self.gamma.len()];
        for n in 0..self.n_steps {
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            if self.system.kind == SystemKind::ReflectedIntegral {
                drive.set_bridge(1.0 - rng.random::<f64>());
            }
            let pq = self.pq.get(n).copied().unwrap_or_default();
            step_state(
                &self.system,
                &mut u,
                n as f64 * self.dt,
                pq,
                self.dt,
                &mut drive,
                &xi,
                Process::Limit,
                None,
            );
        }
        u
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.system.evaluate(&self.terminal_state(rng))
    }
}

/// Values `F(U_T)` for samples `0..n` in index order.
pub fn batch_limit(stepper: &LimitStepper, n_samples: usize, seed: u64) -> Vec<f64> {
    (0..n_samples)
        .into_par_iter()
        .map(|k| stepper.sample(&mut sample_stream(seed, k as u64)))
        .collect()
}

/// Mean over samples of `sup_t |X^{ε,p}_t − X^ε_t|²` between the penalized
/// explicit scheme and the projection scheme, both driven by one `η` path.
/// Returns one value per entry of `penalties`.
pub fn penalization_gap(
    system: &SystemSpec,
    model: &NoiseModel,
    law: &InvariantLaw,
    eps: f64,
    cfg: StepperConfig,
    penalties: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !matches!(
        system.kind,
        SystemKind::Friction | SystemKind::ElastoPlastic | SystemKind::ReflectedIntegral
    ) {
        return Err(Error::Unsupported(format!(
            "penalization is not defined for {}",
            system.kind.name()
        )));
    }
    if let Some(&p) = penalties.iter().find(|&&p| !(p >= 1.0)) {
        return Err(Error::param("p", format!("penalization {p} is below 1")));
    }
    if n_samples == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let stepper = CoupledStepper::new(system, model, law, eps, cfg)?;
    let per_sample: Vec<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|k| stepper.penalized_sup_gaps(&mut sample_stream(seed, k as u64), penalties))
        .collect();
    let mut mean = vec![0.0; penalties.len()];
    for gaps in &per_sample {
        for (m, g) in mean.iter_mut().zip(gaps) {
            *m += g;
        }
    }
    Ok(mean.into_iter().map(|m| m / n_samples as f64).collect())
}

impl CoupledStepper {
    fn penalized_sup_gaps(&self, rng: &mut SampleRng, penalties: &[f64]) -> Vec<f64> {
        let sys = &self.system;
        let dt = self.cfg.dt;
        let mut drive = self.colored_drive(rng);
        let mut x = sys.initial_state();
        let mut pen = vec![x; penalties.len()];
        let mut sup = vec![0.0f64; penalties.len()];
        let mut xi = vec![0.0; self.model.noise_dim()];
        for n in 0..self.n_steps {
            let t = n as f64 * dt;
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let forcing = drive.jump(dt, &xi) / dt;
            for (s, &p) in pen.iter_mut().zip(penalties) {
                *s = penalized_step_unchecked(sys, p, s, forcing, dt, t);
            }
            step_state(
                sys,
                &mut x,
                t,
                [0.0; 2],
                dt,
                &mut drive,
                &xi,
                Process::Colored,
                None,
            );
            for (m, s) in sup.iter_mut().zip(&pen) {
                let gap: f64 = s.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
                *m = m.max(gap);
            }
        }
        sup
    }
}
