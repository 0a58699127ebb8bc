//! Minimax concave penalty (MCP) and the thresholding rules built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm2;

/// Penalty levels and ADMM augmentation weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Concavity of the entrywise MCP.
    pub gamma: f64,
    /// Concavity of the group MCP.
    pub gamma2: f64,
    /// Entrywise penalty level.
    pub lambda1: f64,
    /// Group penalty level, multiplied by `sqrt(d)` for a group of size `d`.
    pub lambda2: f64,
    /// Augmentation weights. The default of 1 is calibrated for `‖G‖₂ ≤ 1`,
    /// as with `G = ŜŜᵀ`; for a general `G` scale both by `‖G‖₂`, otherwise
    /// the iteration can diverge.
    pub rho1: f64,
    pub rho2: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            gamma: 3.0,
            gamma2: 3.0,
            lambda1: 0.0,
            lambda2: 0.0,
            rho1: 1.0,
            rho2: 1.0,
        }
    }
}

impl PenaltyConfig {
    pub fn with_lambdas(self, lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.gamma,
            self.gamma2,
            self.lambda1,
            self.lambda2,
            self.rho1,
            self.rho2,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("penalty parameters must be finite".into()));
        }
        if self.gamma <= 1.0 || self.gamma2 <= 1.0 {
            return Err(Error::Config(format!(
                "concavity parameters must exceed 1 (gamma = {}, gamma2 = {})",
                self.gamma, self.gamma2
            )));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("penalty levels must be non-negative".into()));
        }
        if self.rho1 <= 0.0 || self.rho2 <= 0.0 {
            return Err(Error::Config(
                "augmentation weights must be positive".into(),
            ));
        }
        if self.gamma2 * self.rho2 <= 1.0 {
            return Err(Error::Config(format!(
                "gamma2 * rho2 = {} must exceed 1",
                self.gamma2 * self.rho2
            )));
        }
        Ok(())
    }
}

/// `λ|x| - x²/(2γ)` for `|x| ≤ γλ`, `γλ²/2` beyond.
pub fn mcp(x: f64, lambda: f64, gamma: f64) -> f64 {
    let a = x.abs();
    if a <= gamma * lambda {
        lambda * a - a * a / (2.0 * gamma)
    } else {
        0.5 * gamma * lambda * lambda
    }
}

#[inline]
pub fn soft_threshold(z: f64, threshold: f64) -> f64 {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}

/// Minimizer over `q` of `scale/2 (z - q)² + mcp(q, λ, γ)`.
pub fn mcp_prox(z: f64, lambda: f64, gamma: f64, scale: f64) -> Result<f64> {
    if !(scale > 0.0) || scale * gamma <= 1.0 {
        return Err(Error::Config(format!(
            "MCP proximal step needs scale * gamma > 1, got {}",
            scale * gamma
        )));
    }
    Ok(mcp_prox_unchecked(z, lambda, gamma, scale))
}

/// [`mcp_prox`] without the `scale·γ > 1` check.
#[inline]
pub(crate) fn mcp_prox_unchecked(z: f64, lambda: f64, gamma: f64, scale: f64) -> f64 {
    if z.abs() > gamma * lambda {
        z
    } else {
        soft_threshold(z, lambda / scale) / (1.0 - 1.0 / (scale * gamma))
    }
}

/// `(1 - t/‖u‖₂)₊ u`.
pub fn group_soft_threshold(u: &[f64], threshold: f64) -> Vec<f64> {
    let norm = norm2(u);
    if norm <= threshold || norm == 0.0 {
        return vec![0.0; u.len()];
    }
    let shrink = 1.0 - threshold / norm;
    u.iter().map(|x| x * shrink).collect()
}

/// Group MCP update of one block of size `d` at `u = q - v₂/ρ₂`.
///
/// With `λ₂ = 0` the block passes through unchanged.
pub fn group_mcp_update(u: &[f64], d: usize, cfg: &PenaltyConfig) -> Vec<f64> {
    let mut out = u.to_vec();
    group_mcp_update_in_place(&mut out, d, cfg);
    out
}

pub(crate) fn group_mcp_update_in_place(u: &mut [f64], d: usize, cfg: &PenaltyConfig) {
    if cfg.lambda2 == 0.0 {
        return;
    }
    let sqrt_d = (d as f64).sqrt();
    let norm = norm2(u);
    if norm > sqrt_d * cfg.gamma2 * cfg.lambda2 {
        return;
    }
    let threshold = sqrt_d * cfg.lambda2 / cfg.rho2;
    if norm <= threshold || norm == 0.0 {
        u.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let factor = (1.0 - threshold / norm) / (1.0 - 1.0 / (cfg.gamma2 * cfg.rho2));
    u.iter_mut().for_each(|x| *x *= factor);
}

/// Group-level MCP value `P_γ₂(‖u‖₂, sqrt(d) λ₂)`.
pub fn group_mcp(u: &[f64], d: usize, lambda2: f64, gamma2: f64) -> f64 {
    mcp(norm2(u), (d as f64).sqrt() * lambda2, gamma2)
}
