//! The six model systems, their limit-diffusion coefficients and the convex
//! machinery (projections, Moreau-Yosida gradients) used by the multivalued ones.
//!
//! Every system has at most two state components plus one constraint
//! component, so states are stored in a fixed `[f64; 3]`: the `n` state rows
//! first, then the `m` constraint rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{InvariantLaw, NoiseModel};

pub type State = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    LinearTimedep,
    VanDerPol,
    Friction,
    ElastoPlastic,
    Impact,
    ReflectedIntegral,
}

impl SystemKind {
    pub const ALL: [SystemKind; 6] = [
        SystemKind::LinearTimedep,
        SystemKind::VanDerPol,
        SystemKind::Friction,
        SystemKind::ElastoPlastic,
        SystemKind::Impact,
        SystemKind::ReflectedIntegral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::LinearTimedep => "linear_timedep",
            SystemKind::VanDerPol => "van_der_pol",
            SystemKind::Friction => "friction",
            SystemKind::ElastoPlastic => "elasto_plastic",
            SystemKind::Impact => "impact",
            SystemKind::ReflectedIntegral => "reflected_integral",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn state_dim(self) -> usize {
        match self {
            SystemKind::LinearTimedep | SystemKind::VanDerPol | SystemKind::Impact => 2,
            SystemKind::Friction | SystemKind::ElastoPlastic | SystemKind::ReflectedIntegral => 1,
        }
    }

    pub fn constraint_dim(self) -> usize {
        match self {
            SystemKind::ElastoPlastic => 1,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    /// `‖X_T‖²` over all state and constraint rows.
    TerminalSquareNorm,
    /// `1{|X_{1,T}| ≤ band}`.
    TerminalIndicatorBand,
    /// `1{|Z_T| = c_ep}`, exact equality.
    BoundaryIndicator,
    /// `(X_{2,T})²`.
    TerminalVelocitySquare,
    /// `X_T`.
    TerminalValue,
}

impl FunctionalKind {
    pub const ALL: [FunctionalKind; 5] = [
        FunctionalKind::TerminalSquareNorm,
        FunctionalKind::TerminalIndicatorBand,
        FunctionalKind::BoundaryIndicator,
        FunctionalKind::TerminalVelocitySquare,
        FunctionalKind::TerminalValue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FunctionalKind::TerminalSquareNorm => "terminal_square_norm",
            FunctionalKind::TerminalIndicatorBand => "terminal_indicator_band",
            FunctionalKind::BoundaryIndicator => "boundary_indicator",
            FunctionalKind::TerminalVelocitySquare => "terminal_velocity_square",
            FunctionalKind::TerminalValue => "terminal_value",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// True for functionals that are not Lipschitz-smooth in the state.
    pub fn is_indicator(self) -> bool {
        matches!(
            self,
            FunctionalKind::TerminalIndicatorBand | FunctionalKind::BoundaryIndicator
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSpec {
    pub kind: FunctionalKind,
    /// Half-width of the indicator band.
    pub band: f64,
}

impl FunctionalSpec {
    pub fn new(kind: FunctionalKind) -> Self {
        FunctionalSpec { kind, band: 1.0 }
    }
}

/// Model constants. Unused entries are ignored by systems that do not need them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// `p(t) = p[0] + p[1]·cos t`.
    pub p: [f64; 2],
    /// `q(t) = q[0] + q[1]·sin t`.
    pub q: [f64; 2],
    /// Van der Pol nonlinearity.
    pub nu: f64,
    pub c_f: f64,
    pub c_ep: f64,
    /// Obstacle position.
    pub p_o: f64,
    pub restitution: f64,
    /// Restoring force of the impact oscillator, `h = stiffness·x₁ + damping·x₂`.
    pub stiffness: f64,
    pub damping: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            p: [1.0, 1.0],
            q: [1.0, 1.0],
            nu: 1.0,
            c_f: 0.25,
            c_ep: 0.25,
            p_o: 0.25,
            restitution: 1.0,
            stiffness: 1.0,
            damping: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub params: SystemParams,
    pub x0: [f64; 2],
    pub z0: f64,
    pub functional: FunctionalSpec,
}

impl SystemSpec {
    /// Builds a system with default constants, zero initial condition and the
    /// model's canonical functional.
    pub fn new(kind: SystemKind) -> Self {
        let functional = match kind {
            SystemKind::LinearTimedep
            | SystemKind::VanDerPol
            | SystemKind::Friction
            | SystemKind::ElastoPlastic => FunctionalKind::TerminalSquareNorm,
            SystemKind::Impact => FunctionalKind::TerminalVelocitySquare,
            SystemKind::ReflectedIntegral => FunctionalKind::TerminalValue,
        };
        SystemSpec {
            kind,
            params: SystemParams::default(),
            x0: [0.0; 2],
            z0: 0.0,
            functional: FunctionalSpec::new(functional),
        }
    }

    pub fn with_functional(mut self, kind: FunctionalKind) -> Self {
        self.functional.kind = kind;
        self
    }

    pub fn with_x0(mut self, x0: [f64; 2]) -> Self {
        self.x0 = x0;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn constraint_dim(&self) -> usize {
        self.kind.constraint_dim()
    }

    /// Checks the parameter ranges and the functional/model compatibility.
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, "must be positive and finite"))
            }
        };
        match self.kind {
            SystemKind::Friction => positive("model.c_f", p.c_f)?,
            SystemKind::ElastoPlastic => {
                positive("model.c_ep", p.c_ep)?;
                if self.z0.abs() > p.c_ep {
                    return Err(Error::param("model.z0", "must lie in [-c_ep, c_ep]"));
                }
            }
            SystemKind::Impact => {
                positive("model.p_o", p.p_o)?;
                if !(0.0..=1.0).contains(&p.restitution) {
                    return Err(Error::param("model.restitution", "must lie in [0, 1]"));
                }
                if self.x0[0].abs() > p.p_o {
                    return Err(Error::param(
                        "model.x0",
                        "initial position must lie within the obstacles",
                    ));
                }
            }
            SystemKind::ReflectedIntegral => {
                if self.x0[0] < 0.0 {
                    return Err(Error::param("model.x0", "must be non-negative"));
                }
            }
            SystemKind::VanDerPol => positive("model.nu", p.nu)?,
            SystemKind::LinearTimedep => {}
        }
        let f = self.functional.kind;
        let ok = match f {
            FunctionalKind::TerminalSquareNorm | FunctionalKind::TerminalValue => true,
            FunctionalKind::TerminalIndicatorBand => {
                positive("model.band", self.functional.band)?;
                true
            }
            FunctionalKind::BoundaryIndicator => self.kind == SystemKind::ElastoPlastic,
            FunctionalKind::TerminalVelocitySquare => self.state_dim() == 2,
        };
        if !ok {
            return Err(Error::param(
                "model.functional",
                format!("{} is not defined for {}", f.name(), self.kind.name()),
            ));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> State {
        match self.kind {
            SystemKind::LinearTimedep | SystemKind::VanDerPol | SystemKind::Impact => {
                [self.x0[0], self.x0[1], 0.0]
            }
            SystemKind::ElastoPlastic => [self.x0[0], self.z0, 0.0],
            SystemKind::Friction | SystemKind::ReflectedIntegral => [self.x0[0], 0.0, 0.0],
        }
    }

    /// Restoring term `h(x₁, x₂, t)` of the second-order oscillators.
    #[inline]
    pub fn restoring(&self, x1: f64, x2: f64, t: f64) -> f64 {
        let p = &self.params;
        match self.kind {
            SystemKind::LinearTimedep => {
                (p.p[0] + p.p[1] * t.cos()) * x1 + (p.q[0] + p.q[1] * t.sin()) * x2
            }
            SystemKind::VanDerPol => x1 - p.nu * (1.0 - x1 * x1) * x2,
            SystemKind::Impact => p.stiffness * x1 + p.damping * x2,
            _ => 0.0,
        }
    }

    /// Single-valued drift `b(x, z, t)` (the subdifferential part excluded).
    pub fn drift(&self, s: &State, t: f64) -> State {
        match self.kind {
            SystemKind::LinearTimedep | SystemKind::VanDerPol | SystemKind::Impact => {
                [s[1], -self.restoring(s[0], s[1], t), 0.0]
            }
            SystemKind::ElastoPlastic => [-s[1], s[0], 0.0],
            SystemKind::Friction | SystemKind::ReflectedIntegral => [0.0; 3],
        }
    }

    /// Loading of the scalar colored forcing; only the last state row (velocity).
    pub fn sigma(&self) -> State {
        let mut s = [0.0; 3];
        s[self.state_dim() - 1] = 1.0;
        s
    }

    /// `jac[i][j] = ∂σ_j/∂u_i`; identically zero for every built-in system.
    pub fn sigma_jacobian(&self, _s: &State) -> [[f64; 3]; 3] {
        [[0.0; 3]; 3]
    }

    /// Convex potential acting on the state rows.
    pub fn state_potential(&self) -> ConvexPotential {
        match self.kind {
            SystemKind::Friction => ConvexPotential::Abs(self.params.c_f),
            SystemKind::ReflectedIntegral => ConvexPotential::HalfLine,
            _ => ConvexPotential::Zero,
        }
    }

    /// Convex potential acting on the constraint row.
    pub fn constraint_potential(&self) -> ConvexPotential {
        match self.kind {
            SystemKind::ElastoPlastic => ConvexPotential::Interval(self.params.c_ep),
            _ => ConvexPotential::Zero,
        }
    }

    /// Functional `F` evaluated on a terminal state.
    #[inline]
    pub fn evaluate(&self, s: &State) -> f64 {
        let n = self.state_dim() + self.constraint_dim();
        match self.functional.kind {
            FunctionalKind::TerminalSquareNorm => s[..n].iter().map(|v| v * v).sum(),
            FunctionalKind::TerminalIndicatorBand => indicator(s[0].abs() <= self.functional.band),
            FunctionalKind::BoundaryIndicator => indicator(s[1].abs() == self.params.c_ep),
            FunctionalKind::TerminalVelocitySquare => s[1] * s[1],
            FunctionalKind::TerminalValue => s[0],
        }
    }
}

#[inline]
fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// The built-in convex potentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConvexPotential {
    Zero,
    /// `c·|x|`.
    Abs(f64),
    /// Indicator of `[-c, c]`.
    Interval(f64),
    /// Indicator of `[0, ∞)`.
    HalfLine,
}

/// `min(max(x, −c), c)`.
#[inline]
pub fn project_interval(x: f64, c: f64) -> f64 {
    x.max(-c).min(c)
}

/// Gradient of the Moreau-Yosida regularization `F_p(x) = inf_z F(z) + (p/2)(x−z)²`.
///
/// For `c|x|` this is `p·x` inside `|x| ≤ c/p` and `c·sign(x)` outside; for an
/// indicator it is `p·(x − proj(x))`.
#[inline]
pub fn yosida_gradient(potential: ConvexPotential, p: f64, x: f64) -> f64 {
    match potential {
        ConvexPotential::Zero => 0.0,
        ConvexPotential::Abs(c) => {
            if x.abs() * p <= c {
                p * x
            } else {
                c * x.signum()
            }
        }
        ConvexPotential::Interval(c) => p * (x - project_interval(x, c)),
        ConvexPotential::HalfLine => p * x.min(0.0),
    }
}

/// One explicit Euler step of the penalized equation, with `forcing` the rate
/// of the colored forcing (`weights·η/ε`) applied along `σ`.
pub fn penalized_step(
    system: &SystemSpec,
    p: f64,
    state: &State,
    forcing: f64,
    dt: f64,
    t: f64,
) -> Result<State> {
    if !matches!(
        system.kind,
        SystemKind::Friction | SystemKind::ElastoPlastic | SystemKind::ReflectedIntegral
    ) {
        return Err(Error::Unsupported(format!(
            "penalization is not defined for {}",
            system.kind.name()
        )));
    }
    if !(p >= 1.0) {
        return Err(Error::param("p", "penalization must be at least 1"));
    }
    Ok(penalized_step_unchecked(system, p, state, forcing, dt, t))
}

#[inline]
pub(crate) fn penalized_step_unchecked(
    system: &SystemSpec,
    p: f64,
    s: &State,
    forcing: f64,
    dt: f64,
    t: f64,
) -> State {
    let b = system.drift(s, t);
    let sigma = system.sigma();
    let n = system.state_dim();
    let mut out = *s;
    let phi = system.state_potential();
    for i in 0..n {
        out[i] = s[i] + dt * (b[i] + sigma[i] * forcing - yosida_gradient(phi, p, s[i]));
    }
    if system.constraint_dim() == 1 {
        let psi = system.constraint_potential();
        out[n] = s[n] + dt * (b[n] - yosida_gradient(psi, p, s[n]));
    }
    out
}

/// Coefficients of the limit diffusion `dU = b̃(U)dt + Γ dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitCoefficients {
    system: SystemSpec,
    /// `weightsᵀA⁻¹K`, the row multiplying `dW` along `σ`.
    pub gamma: Vec<f64>,
    /// `wᵀA⁻¹Cw`, the scalar entering the drift correction.
    pub correction_scale: f64,
}

impl LimitCoefficients {
    /// Effective scalar diffusion constant `‖weightsᵀA⁻¹K‖`.
    pub fn c_eff(&self) -> f64 {
        self.gamma.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Full `Γ = σ·weightsᵀA⁻¹K` as `n×d'` rows.
    pub fn gamma_matrix(&self) -> Vec<Vec<f64>> {
        let sigma = self.system.sigma();
        (0..self.system.state_dim())
            .map(|i| self.gamma.iter().map(|g| sigma[i] * g).collect())
            .collect()
    }

    /// `b̃_j = b_j + Σ_i ((∂_iσ) A⁻¹ C σᵀ)_{ji}`.
    pub fn drift_tilde(&self, s: &State, t: f64) -> State {
        let mut b = self.system.drift(s, t);
        let sigma = self.system.sigma();
        let jac = self.system.sigma_jacobian(s);
        for (j, bj) in b.iter_mut().enumerate() {
            let corr: f64 = (0..3).map(|i| jac[i][j] * sigma[i]).sum();
            *bj += self.correction_scale * corr;
        }
        b
    }
}

pub fn limit_coefficients(
    system: &SystemSpec,
    model: &NoiseModel,
    law: &InvariantLaw,
) -> LimitCoefficients {
    let d = model.dim();
    let dp = model.noise_dim();
    let w = model.weights();
    let aik = law.a_inv_k();
    let gamma: Vec<f64> = (0..dp)
        .map(|j| (0..d).map(|i| w[i] * aik[i * dp + j]).sum())
        .collect();

    let a_inv_c = model
        .a_matrix()
        .lu()
        .solve(&law.covariance_matrix())
        .unwrap_or_else(|| nalgebra::DMatrix::zeros(d, d));
    let mut correction_scale = 0.0;
    for i in 0..d {
        for j in 0..d {
            correction_scale += w[i] * a_inv_c[(i, j)] * w[j];
        }
    }
    LimitCoefficients {
        system: system.clone(),
        gamma,
        correction_scale,
    }
}
