//! Forward formula, parameterization conversions, reverse steps and the
//! sampling loop.

use super::{Denoiser, DiffusionSchedule, PredictionMode, SamplerConfig, SamplerMethod};
use crate::error::{Error, Result};
use ndarray::{ArrayD, IxDyn, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

fn check_shapes(a: &ArrayD<f32>, b: &ArrayD<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            a: a.shape().to_vec(),
            b: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Elementwise `ca*x + cb*y` with f64 accumulation.
fn lincomb(ca: f64, x: &ArrayD<f32>, cb: f64, y: &ArrayD<f32>) -> ArrayD<f32> {
    let mut out = ArrayD::zeros(x.raw_dim());
    Zip::from(&mut out)
        .and(x)
        .and(y)
        .for_each(|o, &a, &b| *o = (ca * a as f64 + cb * b as f64) as f32);
    out
}

fn randn_like(shape: &[usize], rng: &mut impl Rng) -> ArrayD<f32> {
    let mut out = ArrayD::zeros(IxDyn(shape));
    for v in out.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v = n as f32;
    }
    out
}

/// Clamp every element to [-1, 1].
pub fn clamp_unit(x: &ArrayD<f32>) -> ArrayD<f32> {
    x.mapv(|v| v.clamp(-1.0, 1.0))
}

/// Forward formula: `x_i = sqrt(alpha_bar_i) x0 + sqrt(1 - alpha_bar_i) eps`.
pub fn forward_noise(
    x0: &ArrayD<f32>,
    eps: &ArrayD<f32>,
    step: usize,
    sched: &DiffusionSchedule,
) -> Result<ArrayD<f32>> {
    sched.check_step(step)?;
    check_shapes(x0, eps)?;
    let ab = sched.alpha_bar(step);
    Ok(lincomb(ab.sqrt(), x0, (1.0 - ab).sqrt(), eps))
}

/// Solve the forward formula for the clean image:
/// `x0 = (x_i - sqrt(1 - alpha_bar_i) eps) / sqrt(alpha_bar_i)`.
pub fn x0_from_noise(
    x_i: &ArrayD<f32>,
    eps_hat: &ArrayD<f32>,
    step: usize,
    sched: &DiffusionSchedule,
) -> Result<ArrayD<f32>> {
    sched.check_step(step)?;
    check_shapes(x_i, eps_hat)?;
    let ab = sched.alpha_bar(step);
    if ab <= 0.0 {
        return Err(Error::InvalidSchedule {
            detail: format!("alpha_bar[{step}] = 0; cannot invert the forward formula"),
        });
    }
    let root = ab.sqrt();
    Ok(lincomb(1.0 / root, x_i, -(1.0 - ab).sqrt() / root, eps_hat))
}

/// Solve the forward formula for the noise:
/// `eps = (x_i - sqrt(alpha_bar_i) x0) / sqrt(1 - alpha_bar_i)`.
pub fn noise_from_x0(
    x_i: &ArrayD<f32>,
    x0_hat: &ArrayD<f32>,
    step: usize,
    sched: &DiffusionSchedule,
) -> Result<ArrayD<f32>> {
    sched.check_step(step)?;
    check_shapes(x_i, x0_hat)?;
    let ab = sched.alpha_bar(step);
    if ab >= 1.0 {
        return Err(Error::InvalidSchedule {
            detail: format!("alpha_bar[{step}] = 1; no noise component to solve for"),
        });
    }
    let root = (1.0 - ab).sqrt();
    Ok(lincomb(1.0 / root, x_i, -ab.sqrt() / root, x0_hat))
}

/// One ancestral step i -> i-1: posterior mean of `x_{i-1}` given `x_i` and
/// the image estimate, plus fresh noise at the posterior standard deviation.
/// The terminal step (i = 1) is deterministic.
pub fn ddpm_step(
    x_i: &ArrayD<f32>,
    x0_hat: &ArrayD<f32>,
    step: usize,
    sched: &DiffusionSchedule,
    rng: &mut impl Rng,
) -> Result<ArrayD<f32>> {
    sched.check_step(step)?;
    check_shapes(x_i, x0_hat)?;
    let ab_i = sched.alpha_bar(step);
    let ab_prev = sched.alpha_bar(step - 1);
    let alpha_i = sched.alpha(step);
    let beta_i = sched.beta(step);
    let denom = 1.0 - ab_i;
    let cx = alpha_i.sqrt() * (1.0 - ab_prev) / denom;
    let c0 = ab_prev.sqrt() * beta_i / denom;
    let mut out = lincomb(cx, x_i, c0, x0_hat);
    if step > 1 {
        let sigma = (beta_i * (1.0 - ab_prev) / denom).sqrt();
        let eps = randn_like(x_i.shape(), rng);
        out = lincomb(1.0, &out, sigma, &eps);
    }
    Ok(out)
}

/// One DDIM hop i -> j (j < i):
/// `x_j = sqrt(alpha_bar_j) x0_hat + c1 eps_fresh + c2 eps_hat` with
/// `c1 = eta * sqrt(((1-ab_j)/(1-ab_i)) * (1 - ab_i/ab_j))` and
/// `c2 = sqrt((1-ab_j) - c1^2)` (radicand clipped at 0). `j = 0` returns the
/// image estimate.
pub fn ddim_step(
    x0_hat: &ArrayD<f32>,
    eps_hat: &ArrayD<f32>,
    step_from: usize,
    step_to: usize,
    eta: f64,
    sched: &DiffusionSchedule,
    rng: &mut impl Rng,
) -> Result<ArrayD<f32>> {
    sched.check_step(step_from)?;
    if step_to >= step_from {
        return Err(Error::StepOutOfRange {
            step: step_to,
            t_max: step_from - 1,
        });
    }
    check_shapes(x0_hat, eps_hat)?;
    if step_to == 0 {
        return Ok(x0_hat.clone());
    }
    let ab_i = sched.alpha_bar(step_from);
    let ab_j = sched.alpha_bar(step_to);
    let c1 = eta * (((1.0 - ab_j) / (1.0 - ab_i)) * (1.0 - ab_i / ab_j)).max(0.0).sqrt();
    let c2 = ((1.0 - ab_j) - c1 * c1).max(0.0).sqrt();
    let mut out = lincomb(ab_j.sqrt(), x0_hat, c2, eps_hat);
    if c1 > 0.0 {
        let eps = randn_like(x0_hat.shape(), rng);
        out = lincomb(1.0, &out, c1, &eps);
    }
    Ok(out)
}

/// Classifier-free guidance: `w = 0` is a single conditioned call; otherwise
/// `(w+1) * pred(condition) - w * pred(black condition)` where black is an
/// all -1 image.
pub fn guided_predict(
    denoiser: &dyn Denoiser,
    x: &ArrayD<f32>,
    condition: Option<&ArrayD<f32>>,
    step: usize,
    w: f64,
) -> Result<ArrayD<f32>> {
    if w < 0.0 || !w.is_finite() {
        return Err(Error::InvalidSamplerConfig {
            detail: format!("guidance w {w} must be >= 0"),
        });
    }
    let cond_pred = denoiser.predict(x, condition, step)?;
    check_shapes(&cond_pred, x)?;
    if w == 0.0 {
        return Ok(cond_pred);
    }
    if !denoiser.supports_unconditioned() {
        return Err(Error::UnconditionedUnsupported { w });
    }
    let black = condition.map(|c| c.mapv(|_| -1.0f32));
    let uncond_pred = denoiser.predict(x, black.as_ref(), step)?;
    check_shapes(&uncond_pred, x)?;
    Ok(lincomb(w + 1.0, &cond_pred, -w, &uncond_pred))
}

/// Uniformly spaced descending timesteps over [1, T], always starting at T.
/// The sampling loop appends the terminal hop to 0.
pub fn ddim_timesteps(t_max: usize, steps: usize) -> Vec<usize> {
    let mut ts = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = ((t_max as f64) * ((steps - k) as f64) / steps as f64).round() as usize;
        let t = t.clamp(1, t_max);
        if ts.last() != Some(&t) {
            ts.push(t);
        }
    }
    ts
}

/// Run the full reverse process from unit-Gaussian noise.
///
/// At each visited index the prediction is converted into a consistent
/// (image estimate, noise estimate) pair: the image estimate is clamped when
/// configured, and the noise estimate is re-derived from the (possibly
/// clamped) image estimate, so noise-mode and image-mode denoisers advance
/// along identical trajectories.
pub fn sample(
    denoiser: &dyn Denoiser,
    condition: Option<&ArrayD<f32>>,
    shape: &[usize],
    cfg: &SamplerConfig,
    sched: &DiffusionSchedule,
    rng: &mut impl Rng,
) -> Result<ArrayD<f32>> {
    cfg.validate(sched)?;
    if denoiser.mode() != cfg.mode {
        return Err(Error::InvalidSamplerConfig {
            detail: format!(
                "denoiser predicts {} but config says {}",
                denoiser.mode().name(),
                cfg.mode.name()
            ),
        });
    }
    let mut x = randn_like(shape, rng);
    let visited = ddim_timesteps(sched.t_max(), cfg.steps);
    for (pos, &i) in visited.iter().enumerate() {
        let pred = guided_predict(denoiser, &x, condition, i, cfg.guidance_w)?;
        let x0_raw = match cfg.mode {
            PredictionMode::Noise => x0_from_noise(&x, &pred, i, sched)?,
            PredictionMode::Image => pred,
        };
        let x0_hat = if cfg.clamp_x0 {
            clamp_unit(&x0_raw)
        } else {
            x0_raw
        };
        let eps_hat = noise_from_x0(&x, &x0_hat, i, sched)?;
        let j = visited.get(pos + 1).copied().unwrap_or(0);
        x = match cfg.method {
            SamplerMethod::Ddpm => ddpm_step(&x, &x0_hat, i, sched, rng)?,
            SamplerMethod::Ddim => ddim_step(&x0_hat, &eps_hat, i, j, cfg.eta, sched, rng)?,
        };
    }
    Ok(x)
}
