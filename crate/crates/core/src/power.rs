//! Per-step power splitting across RISs.
//!
//! With a Kalman gain `K̃` frozen at the equal-power noise estimate, the
//! expected posterior error reduces to `Σ_k γ_k / β_k²` where
//! `γ_k = ξ_k π_k`, `ξ_k = σ²(1+α) Σ_{n∈I_k} ‖u_n‖²` and `π_k = E{1/P⁰_k}`.

use nalgebra::{DVector, Dyn, OMatrix, U6};

use crate::error::{Error, Result};
use crate::tracker::{index_sets, kalman_gain, Jacobian, State, StateCov};

pub type Gain = OMatrix<f64, U6, Dyn>;

/// Equal-power noise estimate: the per-RIS blocks of `R̃` rescaled by
/// `β_k² / (P_tx/K)`.
pub fn breve_blocks(r_tilde_blocks: &[f64], beta_prev: &[f64], p_tx: f64) -> Result<Vec<f64>> {
    if r_tilde_blocks.len() != beta_prev.len() {
        return Err(Error::Dimension(format!(
            "{} noise blocks vs {} weights",
            r_tilde_blocks.len(),
            beta_prev.len()
        )));
    }
    let share = p_tx / beta_prev.len() as f64;
    r_tilde_blocks
        .iter()
        .zip(beta_prev)
        .map(|(r, b)| {
            if *b == 0.0 {
                Err(Error::NumericDegenerate(
                    "previous power weight is zero".into(),
                ))
            } else {
                Ok(b * b / share * r)
            }
        })
        .collect()
}

/// `K̃ = ΣJᵀ(JΣJᵀ + R̆)⁻¹`.
pub fn fixed_kalman_gain(cov: &StateCov, jac: &Jacobian, r_breve: &DVector<f64>) -> Result<Gain> {
    Ok(kalman_gain(cov, jac, r_breve)?.0)
}

/// `ξ_k = σ²(1+α) Σ_{n∈I_k} ‖u_n‖²` with `u_n` the columns of `K̃`.
pub fn xi_weights(gain: &Gain, alpha: f64, sigma2: f64, n_ris: usize, z: usize) -> Vec<f64> {
    index_sets(n_ris, z)
        .iter()
        .map(|set| {
            sigma2
                * (1.0 + alpha)
                * set
                    .iter()
                    .map(|&n| gain.column(n).norm_squared())
                    .sum::<f64>()
        })
        .collect()
}

/// Sample mean of `1/P⁰`. Zero-power samples are floored at `min_{P⁰>0}/M`.
pub fn pi_value(powers: &[f64], m: f64) -> Result<f64> {
    let floor = powers
        .iter()
        .cloned()
        .filter(|p| *p > 0.0)
        .fold(f64::INFINITY, f64::min)
        / m;
    if !floor.is_finite() {
        return Err(Error::NumericDegenerate(
            "no sample receives power from this RIS".into(),
        ));
    }
    Ok(powers.iter().map(|p| 1.0 / p.max(floor)).sum::<f64>() / powers.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// Amplitude weights, `Σ β_k² = P_tx`.
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub gamma: Vec<f64>,
}

impl Allocation {
    pub fn uniform(n_ris: usize, p_tx: f64) -> Self {
        Self {
            beta: vec![(p_tx / n_ris as f64).sqrt(); n_ris],
            lambda: f64::NAN,
            gamma: vec![f64::NAN; n_ris],
        }
    }

    pub fn objective(&self) -> f64 {
        self.gamma
            .iter()
            .zip(&self.beta)
            .map(|(g, b)| g / (b * b))
            .sum()
    }
}

/// Closed-form KKT split `β_k² = √γ_k P_tx / Σ√γ`, with a floor of
/// `1e-6·√(P_tx/K)` on `β_k` and renormalization onto the budget.
pub fn allocate_power(gamma: &[f64], p_tx: f64) -> Result<Allocation> {
    if gamma.is_empty() {
        return Err(Error::InvalidConfig("no RIS to allocate power to".into()));
    }
    if let Some(g) = gamma.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
        return Err(Error::NumericDegenerate(format!(
            "allocation weight must be positive and finite (got {g})"
        )));
    }
    if !(p_tx > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "power budget must be positive (got {p_tx})"
        )));
    }
    let roots: Vec<f64> = gamma.iter().map(|g| g.sqrt()).collect();
    let total: f64 = roots.iter().sum();
    let floor2 = (1e-6 * (p_tx / gamma.len() as f64).sqrt()).powi(2);
    let mut beta2: Vec<f64> = roots
        .iter()
        .map(|r| (r * p_tx / total).max(floor2))
        .collect();
    let sum: f64 = beta2.iter().sum();
    for b in &mut beta2 {
        *b *= p_tx / sum;
    }
    Ok(Allocation {
        beta: beta2.iter().map(|b| b.sqrt()).collect(),
        lambda: total * total / (p_tx * p_tx),
        gamma: gamma.to_vec(),
    })
}

/// `Tr(K̃ diag(r) K̃ᵀ)`, the only part of the expected error that depends on
/// the transmission parameters.
pub fn reduced_cost(gain: &Gain, r_mean: &DVector<f64>) -> f64 {
    (0..gain.ncols())
        .map(|n| r_mean[n] * gain.column(n).norm_squared())
        .sum()
}

/// Squared error `‖Δs − K̃(JΔs + η)‖²` of the linearized update.
pub fn linearized_error(gain: &Gain, jac: &Jacobian, ds: &State, eta: &DVector<f64>) -> f64 {
    let v = jac * ds + eta;
    (ds - gain * v).norm_squared()
}
