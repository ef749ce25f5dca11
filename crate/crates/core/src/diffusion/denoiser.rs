//! The pluggable denoiser contract and the built-in analytic denoisers used
//! to drive the sampler without a trained network.

use super::{DiffusionSchedule, PredictionMode};
use crate::error::{Error, Result};
use ndarray::ArrayD;
use std::path::PathBuf;
use std::sync::Arc;

/// A denoising model: maps the noised state (plus an optional condition
/// image) at a timestep to a prediction in its declared mode. Implementations
/// are pure functions of their inputs; any randomness belongs to the caller.
pub trait Denoiser {
    fn mode(&self) -> PredictionMode;

    /// Whether the model accepts the all-black condition used by
    /// classifier-free guidance.
    fn supports_unconditioned(&self) -> bool {
        false
    }

    fn predict(
        &self,
        x: &ArrayD<f32>,
        condition: Option<&ArrayD<f32>>,
        step: usize,
    ) -> Result<ArrayD<f32>>;
}

/// Knows the answer: predicts exactly the noise (or image) consistent with a
/// fixed target. Drives end-to-end pipeline tests where translation quality
/// must be limited by the pipeline, not the model.
pub struct SingleTargetDenoiser {
    target: ArrayD<f32>,
    mode: PredictionMode,
    sched: Option<Arc<DiffusionSchedule>>,
}

impl SingleTargetDenoiser {
    /// Noise mode: `eps_hat = (x_i - sqrt(ab_i) target) / sqrt(1 - ab_i)`.
    pub fn noise_mode(target: ArrayD<f32>, sched: Arc<DiffusionSchedule>) -> Self {
        SingleTargetDenoiser {
            target,
            mode: PredictionMode::Noise,
            sched: Some(sched),
        }
    }

    /// Image mode: always predicts the target itself.
    pub fn image_mode(target: ArrayD<f32>) -> Self {
        SingleTargetDenoiser {
            target,
            mode: PredictionMode::Image,
            sched: None,
        }
    }
}

impl Denoiser for SingleTargetDenoiser {
    fn mode(&self) -> PredictionMode {
        self.mode
    }

    fn supports_unconditioned(&self) -> bool {
        true
    }

    fn predict(
        &self,
        x: &ArrayD<f32>,
        _condition: Option<&ArrayD<f32>>,
        step: usize,
    ) -> Result<ArrayD<f32>> {
        if x.shape() != self.target.shape() {
            return Err(Error::ShapeMismatch {
                a: x.shape().to_vec(),
                b: self.target.shape().to_vec(),
            });
        }
        match self.mode {
            PredictionMode::Image => Ok(self.target.clone()),
            PredictionMode::Noise => {
                let sched = self.sched.as_ref().expect("noise mode carries a schedule");
                super::noise_from_x0(x, &self.target, step, sched)
            }
        }
    }
}

/// Predicts all zeros in its mode.
pub struct ZeroDenoiser {
    mode: PredictionMode,
    unconditioned: bool,
}

impl ZeroDenoiser {
    pub fn new(mode: PredictionMode) -> Self {
        ZeroDenoiser {
            mode,
            unconditioned: true,
        }
    }

    /// Variant that refuses unconditioned calls (for guidance error paths).
    pub fn without_unconditioned(mut self) -> Self {
        self.unconditioned = false;
        self
    }
}

impl Denoiser for ZeroDenoiser {
    fn mode(&self) -> PredictionMode {
        self.mode
    }

    fn supports_unconditioned(&self) -> bool {
        self.unconditioned
    }

    fn predict(
        &self,
        x: &ArrayD<f32>,
        _condition: Option<&ArrayD<f32>>,
        _step: usize,
    ) -> Result<ArrayD<f32>> {
        Ok(ArrayD::zeros(x.raw_dim()))
    }
}

/// Exact posterior-mean denoiser for the scalar toy problem where the data
/// distribution is N(mu, sigma0^2): the optimal image estimate is
/// `E[x0 | x_i] = (sqrt(ab) sigma0^2 x_i + (1-ab) mu) / (ab sigma0^2 + 1-ab)`.
pub struct ScalarGaussianPosteriorDenoiser {
    mu: f64,
    sigma0: f64,
    mode: PredictionMode,
    sched: Arc<DiffusionSchedule>,
}

impl ScalarGaussianPosteriorDenoiser {
    pub fn new(mu: f64, sigma0: f64, mode: PredictionMode, sched: Arc<DiffusionSchedule>) -> Self {
        ScalarGaussianPosteriorDenoiser {
            mu,
            sigma0,
            mode,
            sched,
        }
    }
}

impl Denoiser for ScalarGaussianPosteriorDenoiser {
    fn mode(&self) -> PredictionMode {
        self.mode
    }

    fn supports_unconditioned(&self) -> bool {
        true
    }

    fn predict(
        &self,
        x: &ArrayD<f32>,
        _condition: Option<&ArrayD<f32>>,
        step: usize,
    ) -> Result<ArrayD<f32>> {
        self.sched.check_step(step)?;
        let ab = self.sched.alpha_bar(step);
        let var = self.sigma0 * self.sigma0;
        let denom = ab * var + (1.0 - ab);
        let gain = ab.sqrt() * var / denom;
        let offset = (1.0 - ab) * self.mu / denom;
        let x0_hat = x.mapv(|v| (gain * v as f64 + offset) as f32);
        match self.mode {
            PredictionMode::Image => Ok(x0_hat),
            PredictionMode::Noise => super::noise_from_x0(x, &x0_hat, step, &self.sched),
        }
    }
}

/// Deterministic elementwise pseudo-network `w1 * x + w2` predicting noise;
/// exists so parameterization-symmetry can be checked against an arbitrary
/// (non-oracle) model.
pub struct AffineNoiseDenoiser {
    pub w1: f64,
    pub w2: f64,
}

impl Denoiser for AffineNoiseDenoiser {
    fn mode(&self) -> PredictionMode {
        PredictionMode::Noise
    }

    fn supports_unconditioned(&self) -> bool {
        true
    }

    fn predict(
        &self,
        x: &ArrayD<f32>,
        _condition: Option<&ArrayD<f32>>,
        _step: usize,
    ) -> Result<ArrayD<f32>> {
        Ok(x.mapv(|v| (self.w1 * v as f64 + self.w2) as f32))
    }
}

/// Algebraic image-mode twin of a noise-mode denoiser: converts the inner
/// noise prediction through the forward-formula inversion.
pub struct ImageFromNoiseDenoiser<D: Denoiser> {
    inner: D,
    sched: Arc<DiffusionSchedule>,
}

impl<D: Denoiser> ImageFromNoiseDenoiser<D> {
    pub fn new(inner: D, sched: Arc<DiffusionSchedule>) -> Result<Self> {
        if inner.mode() != PredictionMode::Noise {
            return Err(Error::InvalidSamplerConfig {
                detail: "ImageFromNoiseDenoiser wraps noise-mode denoisers".to_string(),
            });
        }
        Ok(ImageFromNoiseDenoiser { inner, sched })
    }
}

impl<D: Denoiser> Denoiser for ImageFromNoiseDenoiser<D> {
    fn mode(&self) -> PredictionMode {
        PredictionMode::Image
    }

    fn supports_unconditioned(&self) -> bool {
        self.inner.supports_unconditioned()
    }

    fn predict(
        &self,
        x: &ArrayD<f32>,
        condition: Option<&ArrayD<f32>>,
        step: usize,
    ) -> Result<ArrayD<f32>> {
        let eps = self.inner.predict(x, condition, step)?;
        super::x0_from_noise(x, &eps, step, &self.sched)
    }
}

/// Serves precomputed predictions from NIfTI files named `step_<i>.nii[.gz]`
/// in a directory, keyed by timestep. Lets an externally trained network be
/// driven through this sampler without linking any learning framework.
pub struct ExternalPredictionDenoiser {
    dir: PathBuf,
    mode: PredictionMode,
}

impl ExternalPredictionDenoiser {
    pub fn new(dir: impl Into<PathBuf>, mode: PredictionMode) -> Self {
        ExternalPredictionDenoiser {
            dir: dir.into(),
            mode,
        }
    }

    fn path_for(&self, step: usize) -> Result<PathBuf> {
        for name in [format!("step_{step}.nii"), format!("step_{step}.nii.gz")] {
            let p = self.dir.join(name);
            if p.exists() {
                return Ok(p);
            }
        }
        Err(Error::MissingPrediction {
            step,
            dir: self.dir.clone(),
        })
    }
}

impl Denoiser for ExternalPredictionDenoiser {
    fn mode(&self) -> PredictionMode {
        self.mode
    }

    fn predict(
        &self,
        x: &ArrayD<f32>,
        _condition: Option<&ArrayD<f32>>,
        step: usize,
    ) -> Result<ArrayD<f32>> {
        let path = self.path_for(step)?;
        let vol = crate::nifti::read_volume(&path)?;
        let mut pred = vol.data.into_dyn();
        // NIfTI volumes are 3D; drop trailing singleton axes so 2D tile
        // predictions (stored as [h, w, 1]) serve 2D sampling too.
        while pred.ndim() > x.ndim() && pred.shape().last() == Some(&1) {
            let last = pred.ndim() - 1;
            pred = pred.remove_axis(ndarray::Axis(last));
        }
        if pred.shape() != x.shape() {
            return Err(Error::ShapeMismatch {
                a: pred.shape().to_vec(),
                b: x.shape().to_vec(),
            });
        }
        Ok(pred)
    }
}
