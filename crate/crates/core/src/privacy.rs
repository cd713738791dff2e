//! Gaussian perturbation of raw data, uploaded gradients or aggregated
//! landmarks, plus the sensitivity and noise-calibration formulas for
//! (ε, δ)-differential privacy of the gradient mechanism.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::DataMatrix;
use crate::linalg::pairwise_sum;
use crate::rng::{self, purpose};

/// Where noise enters the federated loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyMode {
    #[default]
    None,
    /// Clients perturb their raw data once, before any round.
    DataPerturb,
    /// Clients perturb the gradient that leaves them.
    GradientPerturb,
    /// The server perturbs the aggregated landmarks after every round.
    VariablePerturb,
}

/// Bounds entering the gradient sensitivity `Δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityParams {
    /// Largest client column norm `max ‖x_j‖₂`.
    pub tau_x: f64,
    /// Spectral-norm bound on every local landmark iterate.
    pub tau_y: f64,
    /// Largest landmark-to-point distance.
    pub upsilon: f64,
    pub gamma: f64,
    pub n_p: usize,
    pub n_y: usize,
    pub rounds: usize,
}

/// Resolved noise source; exactly one is active per run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSource {
    /// Fixed standard deviation.
    Absolute { sigma: f64 },
    /// Standard deviation `β · sd(target)`.
    Relative { beta: f64 },
    /// Standard deviation from the (ε, δ) Gaussian-mechanism calibration.
    Calibrated { epsilon: f64, delta: f64 },
}

/// Privacy configuration as it appears in run configs.
///
/// Exactly one of `sigma`, `beta` or the `(epsilon, delta)` pair must be set
/// when `mode` is not `none`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySpec {
    #[serde(default)]
    pub mode: PrivacyMode,
    pub sigma: Option<f64>,
    pub beta: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    /// Calibrated mode: `max ‖x_j‖₂`; measured from the shards when absent.
    pub tau_x: Option<f64>,
    /// Calibrated mode: spectral-norm bound on the landmark iterates.
    pub tau_y: Option<f64>,
    /// Calibrated mode: a-priori bound on landmark-to-point distances.
    pub upsilon: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl PrivacySpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn gradient_beta(beta: f64, seed: u64) -> Self {
        Self {
            mode: PrivacyMode::GradientPerturb,
            beta: Some(beta),
            seed,
            ..Self::default()
        }
    }

    pub fn with_sigma(mode: PrivacyMode, sigma: f64, seed: u64) -> Self {
        Self {
            mode,
            sigma: Some(sigma),
            seed,
            ..Self::default()
        }
    }

    pub fn is_active(&self) -> bool {
        self.mode != PrivacyMode::None
    }

    /// Validates the settings and returns its single noise source (`None` when
    /// privacy is off).
    pub fn noise_source(&self) -> Result<Option<NoiseSource>> {
        if self.mode == PrivacyMode::None {
            return Ok(None);
        }
        let calibrated = self.epsilon.is_some() || self.delta.is_some();
        let active = [self.sigma.is_some(), self.beta.is_some(), calibrated]
            .iter()
            .filter(|&&b| b)
            .count();
        if active != 1 {
            return Err(Error::Config(format!(
                "privacy mode {:?} needs exactly one of sigma, beta or (epsilon, delta); {active} given",
                self.mode
            )));
        }
        if let Some(sigma) = self.sigma {
            check_nonneg("sigma", sigma)?;
            return Ok(Some(NoiseSource::Absolute { sigma }));
        }
        if let Some(beta) = self.beta {
            check_nonneg("beta", beta)?;
            return Ok(Some(NoiseSource::Relative { beta }));
        }
        let (epsilon, delta) = match (self.epsilon, self.delta) {
            (Some(e), Some(d)) => (e, d),
            _ => return Err(Error::Config("calibrated noise needs both epsilon and delta".into())),
        };
        check_eps_delta(epsilon, delta)?;
        if self.mode != PrivacyMode::GradientPerturb {
            return Err(Error::Config(
                "(epsilon, delta) calibration is defined for gradient perturbation only".into(),
            ));
        }
        if self.tau_y.is_none() || self.upsilon.is_none() {
            return Err(Error::Config("calibrated gradient noise needs tau_y and upsilon".into()));
        }
        Ok(Some(NoiseSource::Calibrated { epsilon, delta }))
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
    }
    Ok(())
}

fn check_eps_delta(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1], got {delta}")));
    }
    Ok(())
}

/// Population standard deviation over all entries.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (pairwise_sum(&dev) / n).sqrt()
}

fn add_gaussian(m: &DataMatrix, std: f64, seed: u64, tag: u64) -> DataMatrix {
    if std == 0.0 {
        return m.clone();
    }
    let mut rng = rng::stream(seed, &[tag]);
    let src = m.as_matrix();
    let noisy = DMatrix::from_iterator(
        src.nrows(),
        src.ncols(),
        src.iter().map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + std * z
        }),
    );
    DataMatrix::from_matrix_unchecked(noisy)
}

/// `X + E` with `E` i.i.d. `N(0, σ²)`.
pub fn perturb_data(x: &DataMatrix, sigma: f64, seed: u64) -> Result<DataMatrix> {
    check_nonneg("sigma", sigma)?;
    Ok(add_gaussian(x, sigma, seed, purpose::DATA_NOISE))
}

/// `g + E` with `E` i.i.d. `N(0, β² sd²(g))`, `sd` the population standard
/// deviation of all entries of `g`.
pub fn perturb_gradient(g: &DataMatrix, beta: f64, seed: u64) -> Result<DataMatrix> {
    check_nonneg("beta", beta)?;
    let sd = population_std(g.as_matrix().as_slice());
    Ok(add_gaussian(g, beta * sd, seed, purpose::GRADIENT_NOISE))
}

/// `g + E` with a fixed standard deviation.
pub fn perturb_gradient_abs(g: &DataMatrix, sigma: f64, seed: u64) -> Result<DataMatrix> {
    check_nonneg("sigma", sigma)?;
    Ok(add_gaussian(g, sigma, seed, purpose::GRADIENT_NOISE))
}

/// `Y + E` with `E` i.i.d. `N(0, σ²)`, applied to aggregated landmarks.
pub fn perturb_variable(y: &DataMatrix, sigma: f64, seed: u64) -> Result<DataMatrix> {
    check_nonneg("sigma", sigma)?;
    Ok(add_gaussian(y, sigma, seed, purpose::VARIABLE_NOISE))
}

/// Gradient sensitivity
/// `Δ = 8√n_y γ τ_X / (n_p n_y) · {1 + 2γ(τ_X + τ_Y)(τ_X + Υ)}`.
pub fn sensitivity_delta(p: &SensitivityParams) -> Result<f64> {
    if p.n_p == 0 || p.n_y == 0 {
        return Err(Error::InvalidArgument("n_p and n_y must be positive".into()));
    }
    for (name, v) in [("tau_x", p.tau_x), ("tau_y", p.tau_y), ("upsilon", p.upsilon), ("gamma", p.gamma)] {
        check_nonneg(name, v)?;
    }
    let (np, ny) = (p.n_p as f64, p.n_y as f64);
    let lead = 8.0 * ny.sqrt() * p.gamma * p.tau_x / (np * ny);
    Ok(lead * (1.0 + 2.0 * p.gamma * (p.tau_x + p.tau_y) * (p.tau_x + p.upsilon)))
}

/// Noise standard deviation `σ = √(8 S Δ² ln(e + ε/δ)) / ε` for `S`-fold
/// composition of the Gaussian gradient mechanism.
pub fn gaussian_sigma_for_dp(epsilon: f64, delta: f64, rounds: usize, sensitivity: f64) -> Result<f64> {
    check_eps_delta(epsilon, delta)?;
    if rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be >= 1".into()));
    }
    check_nonneg("sensitivity", sensitivity)?;
    let var = 8.0 * rounds as f64 * sensitivity * sensitivity * (std::f64::consts::E + epsilon / delta).ln();
    Ok(var.sqrt() / epsilon)
}

/// Outcome of the data-perturbation privacy condition `δ ≥ 2cτ_X/ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DataModeCheck {
    pub feasible: bool,
    /// Boundary value `c = √(2 ln(1.25/δ))`.
    pub c_threshold: f64,
    /// Implied noise scale `c Δ₂ / ε` with `Δ₂ = 2τ_X`.
    pub noise_scale: f64,
}

pub fn dp_check_data_mode(epsilon: f64, delta: f64, tau_x: f64) -> Result<DataModeCheck> {
    check_eps_delta(epsilon, delta)?;
    check_nonneg("tau_x", tau_x)?;
    let c = (2.0 * (1.25 / delta).ln()).sqrt();
    Ok(DataModeCheck {
        feasible: delta >= 2.0 * c * tau_x / epsilon,
        c_threshold: c,
        noise_scale: c * 2.0 * tau_x / epsilon,
    })
}
