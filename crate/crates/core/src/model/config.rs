use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Result};

/// How a patcher updates the running median code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchRule {
    /// `m_i = p1 + m_{i-1}`
    Additive,
    /// `m_i = p1 + p2 * m_{i-1}`
    TwoStep,
}

/// How per-sample reconstruction error is reduced over observed features
/// inside the training losses. Reported errors are always the mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconReduction {
    Mean,
    /// Sum over features, mean over the batch (Gaussian log-likelihood scale).
    Sum,
}

/// Every architectural and loss hyperparameter of one model.
///
/// `n_latents` counts all latent variables: the first comes from Encoder0
/// (or is the label block in supervised mode) and the remaining
/// `n_latents - 1` are Encoder columns, each feeding one patch level. A model
/// therefore yields `n_latents` reconstructions, level `i` using the first
/// `i + 1` latents. The baseline VAE uses `n_latents` Encoder columns and a
/// single reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_latents: usize,
    pub n_observed: usize,
    pub supervised: bool,
    /// Width of the label block regressed by Encoder0 in supervised mode.
    pub label_dim: usize,
    pub median_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub nn_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub drop_ratio: f64,
    pub xi: f64,
    pub alpha: f64,
    pub beta: f64,
    pub patch_rule: PatchRule,
    pub baseline_vae: bool,
    pub linear_activation: bool,
    pub teacher_forcing: bool,
    /// Sample latents and penalize KL. When false the latents are the
    /// deterministic encoder means and no KL term is used (plain autoencoder).
    pub variational: bool,
    pub log_sigma_min: f64,
    pub log_sigma_max: f64,
    pub recon_reduction: ReconReduction,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_latents: 6,
            n_observed: 48,
            supervised: false,
            label_dim: 5,
            median_dim: 50,
            encoder_hidden: vec![64, 64],
            nn_hidden: vec![32, 32],
            decoder_hidden: vec![64, 64],
            drop_ratio: 0.2,
            xi: 1.0,
            alpha: 2.0 / 3.0,
            beta: 1.0,
            patch_rule: PatchRule::TwoStep,
            baseline_vae: false,
            linear_activation: false,
            teacher_forcing: true,
            variational: true,
            log_sigma_min: -6.0,
            log_sigma_max: 3.0,
            recon_reduction: ReconReduction::Sum,
        }
    }
}

impl ModelConfig {
    pub fn fe(n_latents: usize) -> Self {
        Self { n_latents, ..Self::default() }
    }

    pub fn vae(n_latents: usize) -> Self {
        Self { n_latents, baseline_vae: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_latents == 0 {
            return config_err("n_latents must be at least 1");
        }
        if self.median_dim <= self.n_latents {
            return config_err(format!("median_dim ({}) must exceed n_latents ({})", self.median_dim, self.n_latents));
        }
        if self.n_observed == 0 {
            return config_err("n_observed must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return config_err(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return config_err(format!("xi must be finite and >= 0, got {}", self.xi));
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return config_err(format!("beta must be finite and >= 1, got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.drop_ratio) {
            return config_err(format!("drop ratio {} outside [0, 1)", self.drop_ratio));
        }
        if self.supervised && self.label_dim == 0 {
            return config_err("supervised mode needs label_dim >= 1");
        }
        if self.supervised && self.baseline_vae {
            return config_err("the baseline VAE has no supervised head");
        }
        if self.log_sigma_min >= self.log_sigma_max {
            return config_err("log sigma clamp range is empty");
        }
        Ok(())
    }

    /// Number of Encoder columns.
    pub fn encoder_columns(&self) -> usize {
        if self.baseline_vae {
            self.n_latents
        } else {
            self.n_latents - 1
        }
    }

    /// Number of reconstructions produced per forward pass.
    pub fn levels(&self) -> usize {
        if self.baseline_vae {
            1
        } else {
            self.n_latents
        }
    }

    /// Width of the first latent block (`z0` or the label prediction).
    pub fn z0_dim(&self) -> usize {
        if self.supervised {
            self.label_dim
        } else {
            1
        }
    }

    /// Factor turning a mean squared error into the training reconstruction term.
    pub fn recon_scale(&self) -> f64 {
        match self.recon_reduction {
            ReconReduction::Mean => 1.0,
            ReconReduction::Sum => self.n_observed as f64,
        }
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Geometric loss multiplier `xi * (1 - alpha^i) / (1 - alpha) + 1`.
/// Level 0 evaluates the empty series and gets exactly 1.
pub fn weight_multiplier(level: usize, xi: f64, alpha: f64) -> Result<f64> {
    if alpha == 1.0 {
        return config_err("alpha = 1 makes the geometric multiplier undefined");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return config_err(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    Ok(xi * (1.0 - alpha.powi(level as i32)) / (1.0 - alpha) + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiplier_values() {
        assert_eq!(weight_multiplier(4, 0.0, 2.0 / 3.0).unwrap(), 1.0);
        assert!((weight_multiplier(1, 1.0, 2.0 / 3.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((weight_multiplier(200, 1.0, 2.0 / 3.0).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(weight_multiplier(0, 1.0, 2.0 / 3.0).unwrap(), 1.0);
        assert!(weight_multiplier(1, 1.0, 1.0).is_err());
    }

    #[test]
    fn multiplier_monotone_and_bounded() {
        let (xi, a) = (1.7, 0.6);
        let bound = 1.0 + xi / (1.0 - a);
        let mut prev = weight_multiplier(0, xi, a).unwrap();
        for i in 1..60 {
            let w = weight_multiplier(i, xi, a).unwrap();
            assert!(w > prev || (bound - w) < 1e-12);
            assert!(w <= bound + 1e-12);
            prev = w;
        }
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = [
            ModelConfig { n_latents: 0, ..ModelConfig::default() },
            ModelConfig { median_dim: 6, ..ModelConfig::default() },
            ModelConfig { alpha: 1.0, ..ModelConfig::default() },
            ModelConfig { xi: -0.1, ..ModelConfig::default() },
            ModelConfig { beta: 0.5, ..ModelConfig::default() },
            ModelConfig { drop_ratio: 1.0, ..ModelConfig::default() },
            ModelConfig { supervised: true, baseline_vae: true, ..ModelConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn level_counts() {
        assert_eq!(ModelConfig::fe(6).levels(), 6);
        assert_eq!(ModelConfig::fe(6).encoder_columns(), 5);
        assert_eq!(ModelConfig::vae(6).levels(), 1);
        assert_eq!(ModelConfig::vae(6).encoder_columns(), 6);
    }
}
