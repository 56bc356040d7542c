//! Fast mean-reverting Gaussian drivers.
//!
//! The driver solves `dη = -(A/ε²) η dt + (K/ε) dW` with `A` a `d×d` matrix whose
//! eigenvalues have positive real parts and `K` a `d×d'` loading. The scalar
//! forcing fed to a dynamical system is `weights · η`.
//!
//! Matrices are stored dense and row-major; `d` is small (a handful of spectral
//! components at most), so no sparse machinery is involved.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `dt·‖A‖∞/ε²` above this value triggers the explicit-Euler stability flag.
pub const STABILITY_LIMIT: f64 = 0.5;

const LYAPUNOV_RTOL: f64 = 1e-10;
const EIGEN_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    d: usize,
    d_prime: usize,
    a: Vec<f64>,
    k: Vec<f64>,
    weights: Vec<f64>,
}

/// Current value of the driver for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseState {
    pub eta: Vec<f64>,
    pub epsilon: f64,
}

impl NoiseState {
    pub fn new(eta: Vec<f64>, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::param("epsilon", "must be positive"));
        }
        Ok(NoiseState { eta, epsilon })
    }
}

/// Stationary covariance `C` of the unit-scale driver together with `A⁻¹K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantLaw {
    d: usize,
    d_prime: usize,
    c: Vec<f64>,
    a_inv_k: Vec<f64>,
}

/// Result of one explicit Euler step of the driver.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStep {
    pub eta: Vec<f64>,
    /// Set when `dt·‖A‖/ε²` exceeds [`STABILITY_LIMIT`].
    pub unstable: bool,
}

/// One Lorentzian spectral component `(σ, ΔΩ, ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdComponent {
    pub sigma: f64,
    pub bandwidth: f64,
    pub center: f64,
}

impl NoiseModel {
    /// Builds a model from row-major `A` (`d×d`), `K` (`d×d'`) and output weights.
    pub fn new(
        d: usize,
        d_prime: usize,
        a: Vec<f64>,
        k: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if d == 0 || d_prime == 0 {
            return Err(Error::param("noise", "dimensions must be positive"));
        }
        if a.len() != d * d {
            return Err(Error::param(
                "noise.A",
                format!("expected {} entries, got {}", d * d, a.len()),
            ));
        }
        if k.len() != d * d_prime {
            return Err(Error::param(
                "noise.K",
                format!("expected {} entries, got {}", d * d_prime, k.len()),
            ));
        }
        if weights.len() != d {
            return Err(Error::param(
                "noise.weights",
                format!("expected {d} entries"),
            ));
        }
        if a.iter().chain(&k).chain(&weights).any(|v| !v.is_finite()) {
            return Err(Error::param("noise", "entries must be finite"));
        }
        let model = NoiseModel {
            d,
            d_prime,
            a,
            k,
            weights,
        };
        let eig = model.a_matrix().complex_eigenvalues();
        if let Some(bad) = eig.iter().find(|z| !(z.re > 0.0)) {
            return Err(Error::UnstableNoise(format!(
                "eigenvalue {:.6}{:+.6}i does not have a positive real part",
                bad.re, bad.im
            )));
        }
        Ok(model)
    }

    /// Scalar Ornstein-Uhlenbeck driver `dη = -(A/ε²)η dt + (K/ε)dW`.
    pub fn ou(a: f64, k: f64) -> Result<Self> {
        Self::new(1, 1, vec![a], vec![k], vec![1.0])
    }

    /// Kanai-Tajimi / Langevin driver; the forcing is the position `η₁`.
    pub fn langevin(mu: f64, gamma: f64, k: f64) -> Result<Self> {
        if !(mu > 0.0 && gamma > 0.0) {
            return Err(Error::param(
                "noise",
                "langevin mu and gamma must be positive",
            ));
        }
        Self::new(
            2,
            1,
            vec![0.0, -1.0, mu, gamma],
            vec![0.0, k],
            vec![1.0, 0.0],
        )
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn noise_dim(&self) -> usize {
        self.d_prime
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.d, &self.a)
    }

    pub fn k_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.d_prime, &self.k)
    }

    /// Induced infinity norm of `A`.
    pub fn a_norm(&self) -> f64 {
        self.a
            .chunks(self.d)
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Stability ratio `dt·‖A‖/ε²` of the explicit update.
    pub fn stability_ratio(&self, dt: f64, eps: f64) -> f64 {
        dt * self.a_norm() / (eps * eps)
    }

    /// Scalar forcing `weights · η`.
    #[inline]
    pub fn output(&self, eta: &[f64]) -> f64 {
        self.weights.iter().zip(eta).map(|(w, e)| w * e).sum()
    }

    /// In-place explicit Euler update `η ← η − (h/ε²)Aη + (1/ε)K dw`.
    ///
    /// `dw` must already carry the `√h` scaling. `scratch` needs `d` slots.
    #[inline]
    pub fn advance(&self, eta: &mut [f64], scratch: &mut [f64], h: f64, eps: f64, dw: &[f64]) {
        self.advance_scaled(eta, scratch, h / (eps * eps), 1.0 / eps, dw);
    }

    /// `η ← η − decay·Aη + kick·K xi`, the form used in hot loops with the
    /// step constants computed once.
    #[inline]
    pub fn advance_scaled(
        &self,
        eta: &mut [f64],
        scratch: &mut [f64],
        decay: f64,
        kick: f64,
        xi: &[f64],
    ) {
        let d = self.d;
        if d == 1 && self.d_prime == 1 {
            eta[0] += -decay * self.a[0] * eta[0] + kick * self.k[0] * xi[0];
            return;
        }
        for i in 0..d {
            let a_row = &self.a[i * d..(i + 1) * d];
            let k_row = &self.k[i * self.d_prime..(i + 1) * self.d_prime];
            let drift: f64 = a_row.iter().zip(eta.iter()).map(|(a, e)| a * e).sum();
            let noise: f64 = k_row.iter().zip(xi).map(|(k, w)| k * w).sum();
            scratch[i] = eta[i] - decay * drift + kick * noise;
        }
        eta.copy_from_slice(&scratch[..d]);
    }
}

/// Lorentzian power spectrum to driver: centered components (`ω = 0`) give a
/// scalar channel with `A = K = ΔΩ`, non-centered ones a rotation block
/// `[[ΔΩ, −ω], [ω, ΔΩ]]` with `K = ΔΩ·I₂` and the weight on the first channel.
pub fn psd_to_noise_model(components: &[PsdComponent]) -> Result<NoiseModel> {
    if components.is_empty() {
        return Err(Error::param("noise.components", "empty component list"));
    }
    let mut blocks: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::with_capacity(components.len());
    for (i, c) in components.iter().enumerate() {
        if !(c.bandwidth > 0.0) {
            return Err(Error::param(
                format!("noise.components[{i}]"),
                "bandwidth must be positive",
            ));
        }
        if !(c.sigma >= 0.0) || !c.center.is_finite() {
            return Err(Error::param(
                format!("noise.components[{i}]"),
                "sigma must be non-negative and center finite",
            ));
        }
        if c.center == 0.0 {
            blocks.push((vec![c.bandwidth], vec![c.bandwidth], vec![c.sigma]));
        } else {
            let (b, w) = (c.bandwidth, c.center);
            blocks.push((vec![b, -w, w, b], vec![b, 0.0, 0.0, b], vec![c.sigma, 0.0]));
        }
    }
    let d: usize = blocks.iter().map(|b| b.2.len()).sum();
    let mut a = vec![0.0; d * d];
    let mut k = vec![0.0; d * d];
    let mut weights = Vec::with_capacity(d);
    let mut offset = 0;
    for (ab, kb, wb) in &blocks {
        let n = wb.len();
        for i in 0..n {
            for j in 0..n {
                a[(offset + i) * d + offset + j] = ab[i * n + j];
                k[(offset + i) * d + offset + j] = kb[i * n + j];
            }
        }
        weights.extend_from_slice(wb);
        offset += n;
    }
    NoiseModel::new(d, d, a, k, weights)
}

impl InvariantLaw {
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Row-major stationary covariance `C`.
    pub fn covariance(&self) -> &[f64] {
        &self.c
    }

    /// Row-major `A⁻¹K` (`d×d'`).
    pub fn a_inv_k(&self) -> &[f64] {
        &self.a_inv_k
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.d, &self.c)
    }

    /// Symmetric square root of `C` by spectral decomposition.
    ///
    /// Eigenvalues in `[-1e-12·scale, 0)` are clamped to zero; anything more
    /// negative is reported as an indefinite covariance.
    pub fn sqrt_factor(&self) -> Result<DMatrix<f64>> {
        let c = self.covariance_matrix();
        let eig = SymmetricEigen::new(c);
        let scale = eig.eigenvalues.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let mut roots = eig.eigenvalues.clone();
        for v in roots.iter_mut() {
            if *v < -EIGEN_CLAMP * scale {
                return Err(Error::Indefinite(*v));
            }
            *v = v.max(0.0).sqrt();
        }
        let q = &eig.eigenvectors;
        Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
    }

    /// `‖AC + CAᵀ − KKᵀ‖_F / ‖KKᵀ‖_F` (absolute residual when `KKᵀ = 0`).
    pub fn lyapunov_residual(&self, model: &NoiseModel) -> f64 {
        let a = model.a_matrix();
        let k = model.k_matrix();
        let c = self.covariance_matrix();
        let kkt = &k * k.transpose();
        let res = (&a * &c + &c * a.transpose() - &kkt).norm();
        let scale = kkt.norm();
        if scale > 0.0 {
            res / scale
        } else {
            res
        }
    }
}

/// Solves `AC + CAᵀ = KKᵀ` for the stationary covariance and returns it with `A⁻¹K`.
pub fn solve_lyapunov(model: &NoiseModel) -> Result<InvariantLaw> {
    let d = model.dim();
    let a = model.a_matrix();
    let k = model.k_matrix();
    let id = DMatrix::<f64>::identity(d, d);
    let system = id.kronecker(&a) + a.kronecker(&id);
    let kkt = &k * k.transpose();
    let rhs = DVector::from_column_slice(kkt.as_slice());
    let lu = system.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::UnstableNoise("Lyapunov operator is singular".into()))?;
    let mut c = DMatrix::from_column_slice(d, d, sol.as_slice());
    c = (&c + c.transpose()) * 0.5;

    let a_inv_k = a
        .clone()
        .lu()
        .solve(&k)
        .ok_or_else(|| Error::UnstableNoise("A is singular".into()))?;

    let law = InvariantLaw {
        d,
        d_prime: model.noise_dim(),
        c: row_major(&c),
        a_inv_k: row_major(&a_inv_k),
    };
    let residual = law.lyapunov_residual(model);
    if !(residual <= LYAPUNOV_RTOL) {
        return Err(Error::UnstableNoise(format!(
            "Lyapunov residual {residual:e} above tolerance"
        )));
    }
    Ok(law)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Draws `η ~ N(0, C)` through the symmetric square root of `C`.
pub fn stationary_sample<R: Rng + ?Sized>(
    model: &NoiseModel,
    law: &InvariantLaw,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if law.dim() != model.dim() {
        return Err(Error::param(
            "law",
            "dimension does not match the noise model",
        ));
    }
    let root = law.sqrt_factor()?;
    let root = row_major(&root);
    let mut out = vec![0.0; model.dim()];
    let mut xi = vec![0.0; model.dim()];
    sample_with_root(&root, rng, &mut xi, &mut out);
    Ok(out)
}

/// Hot-path variant of [`stationary_sample`] with a precomputed row-major root.
#[inline]
pub(crate) fn sample_with_root<R: Rng + ?Sized>(
    root: &[f64],
    rng: &mut R,
    xi: &mut [f64],
    out: &mut [f64],
) {
    let d = out.len();
    for v in xi.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    for i in 0..d {
        out[i] = root[i * d..(i + 1) * d]
            .iter()
            .zip(xi.iter())
            .map(|(r, x)| r * x)
            .sum();
    }
}

/// Row-major symmetric square root of `C`, for repeated sampling.
pub(crate) fn root_row_major(law: &InvariantLaw) -> Result<Vec<f64>> {
    Ok(row_major(&law.sqrt_factor()?))
}

/// One explicit Euler step of the driver: `η − (dt/ε²)Aη + (1/ε)K dW`.
pub fn step_noise(
    model: &NoiseModel,
    state: &NoiseState,
    dt: f64,
    dw: &[f64],
) -> Result<NoiseStep> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    if state.eta.len() != model.dim() || dw.len() != model.noise_dim() {
        return Err(Error::param(
            "noise",
            "state or increment has the wrong length",
        ));
    }
    let mut eta = state.eta.clone();
    let mut scratch = vec![0.0; model.dim()];
    model.advance(&mut eta, &mut scratch, dt, state.epsilon, dw);
    Ok(NoiseStep {
        eta,
        unstable: model.stability_ratio(dt, state.epsilon) > STABILITY_LIMIT,
    })
}
