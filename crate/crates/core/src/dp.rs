//! Gaussian mechanism for general-model gradients: per-example L2 clipping to
//! norm `C`, summation, noise `N(0, sigma^2 C^2 I)` on the sum, then division
//! by the batch size.
//!
//! Each party privatizes its own batch before anything leaves it, so the
//! server never needs to be trusted.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::{check_dim, l2_norm};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    /// L2 bound `C` on each per-example gradient.
    pub clip_norm: f64,
    /// Noise multiplier `sigma`; noise std on the clipped sum is `sigma * C`.
    pub noise_multiplier: f64,
    /// When false, gradients pass through unclipped and noise-free.
    pub enabled: bool,
}

impl DpConfig {
    pub fn new(clip_norm: f64, noise_multiplier: f64) -> Result<Self> {
        let cfg = DpConfig {
            clip_norm,
            noise_multiplier,
            enabled: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn disabled() -> Self {
        DpConfig {
            clip_norm: f64::INFINITY,
            noise_multiplier: 0.0,
            enabled: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm", "must be > 0"));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(Error::config("noise_multiplier", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Standard deviation of the noise added to a batch sum.
    pub fn noise_std(&self) -> f64 {
        if self.enabled {
            self.noise_multiplier * self.clip_norm
        } else {
            0.0
        }
    }
}

/// The only payload a party ever sends to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyGradient {
    pub values: Vec<f64>,
    pub batch_size: usize,
}

/// Scales `g` by `min(1, C / ||g||)`.
pub fn clip(gradient: &[f64], clip_norm: f64) -> Result<Vec<f64>> {
    let mut out = gradient.to_vec();
    clip_in_place(&mut out, clip_norm)?;
    Ok(out)
}

pub fn clip_in_place(gradient: &mut [f64], clip_norm: f64) -> Result<()> {
    if !(clip_norm > 0.0) {
        return Err(Error::config("clip_norm", "must be > 0"));
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "gradient" });
    }
    let norm = l2_norm(gradient);
    if norm > clip_norm {
        let scale = clip_norm / norm;
        gradient.iter_mut().for_each(|g| *g *= scale);
    }
    Ok(())
}

/// Sum of clipped per-example gradients, before any noise. With DP disabled
/// the gradients are summed as-is.
pub fn clipped_sum(per_example: &[Vec<f64>], cfg: &DpConfig) -> Result<Vec<f64>> {
    let first = per_example.first().ok_or(Error::EmptyBatch)?;
    let dim = first.len();
    let mut sum = vec![0.0; dim];
    let mut scratch = vec![0.0; dim];
    for g in per_example {
        check_dim(dim, g.len())?;
        scratch.copy_from_slice(g);
        if cfg.enabled {
            clip_in_place(&mut scratch, cfg.clip_norm)?;
        } else if scratch.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "gradient" });
        }
        sum.iter_mut().zip(&scratch).for_each(|(s, v)| *s += v);
    }
    Ok(sum)
}

/// `(sum_i clip(g_i, C) + noise) / batch_size`.
///
/// No random numbers are drawn when the noise std is zero, so that path is
/// independent of `rng`.
pub fn privatize_batch<R: Rng + ?Sized>(
    per_example: &[Vec<f64>],
    cfg: &DpConfig,
    rng: &mut R,
) -> Result<NoisyGradient> {
    cfg.validate()?;
    let mut values = clipped_sum(per_example, cfg)?;
    let std = cfg.noise_std();
    if std > 0.0 {
        for v in values.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += std * z;
        }
    }
    let batch_size = per_example.len();
    let inv = 1.0 / batch_size as f64;
    values.iter_mut().for_each(|v| *v *= inv);
    Ok(NoisyGradient { values, batch_size })
}
