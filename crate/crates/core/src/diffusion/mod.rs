//! Denoising-diffusion inference machinery: cosine schedule, forward noising,
//! noise/image parameterization conversions, DDPM and DDIM reverse steps,
//! classifier-free guidance, and a pluggable denoiser contract with analytic
//! test denoisers.
//!
//! Arrays are `f32`; all per-element arithmetic runs in `f64` so the two
//! prediction parameterizations stay interchangeable to float precision.

mod denoiser;
mod sampler;
mod schedule;

pub use denoiser::{
    AffineNoiseDenoiser, Denoiser, ExternalPredictionDenoiser, ImageFromNoiseDenoiser,
    ScalarGaussianPosteriorDenoiser, SingleTargetDenoiser, ZeroDenoiser,
};
pub use sampler::{
    clamp_unit, ddim_step, ddim_timesteps, ddpm_step, forward_noise, guided_predict,
    noise_from_x0, sample, x0_from_noise,
};
pub use schedule::DiffusionSchedule;

use crate::error::{Error, Result};

/// What the denoiser predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionMode {
    /// The injected noise.
    Noise,
    /// The clean image.
    Image,
}

impl PredictionMode {
    pub fn name(self) -> &'static str {
        match self {
            PredictionMode::Noise => "noise",
            PredictionMode::Image => "image",
        }
    }
}

/// Which reverse-process stepping rule drives the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMethod {
    /// Timestep-skipping sampler with the eta stochasticity knob.
    Ddim,
    /// Full-length ancestral sampler; requires `steps == T`.
    Ddpm,
}

/// Inference parameters.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub mode: PredictionMode,
    pub method: SamplerMethod,
    /// Noise mixing: 0 = deterministic, 1 = fresh noise each step.
    pub eta: f64,
    /// Number of visited timesteps.
    pub steps: usize,
    /// Classifier-free guidance weight (0 disables the second model call).
    pub guidance_w: f64,
    /// Clamp the image estimate to [-1, 1] after each conversion.
    pub clamp_x0: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            mode: PredictionMode::Image,
            method: SamplerMethod::Ddim,
            eta: 1.0,
            steps: 20,
            guidance_w: 0.0,
            clamp_x0: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, schedule: &DiffusionSchedule) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidSamplerConfig {
                detail: format!("eta {} outside [0, 1]", self.eta),
            });
        }
        if self.steps < 1 || self.steps > schedule.t_max() {
            return Err(Error::InvalidSamplerConfig {
                detail: format!(
                    "steps {} outside [1, {}]",
                    self.steps,
                    schedule.t_max()
                ),
            });
        }
        if self.guidance_w < 0.0 || !self.guidance_w.is_finite() {
            return Err(Error::InvalidSamplerConfig {
                detail: format!("guidance w {} must be >= 0", self.guidance_w),
            });
        }
        if self.method == SamplerMethod::Ddpm && self.steps != schedule.t_max() {
            return Err(Error::InvalidSamplerConfig {
                detail: format!(
                    "DDPM visits every step: steps {} != T {}",
                    self.steps,
                    schedule.t_max()
                ),
            });
        }
        Ok(())
    }
}
