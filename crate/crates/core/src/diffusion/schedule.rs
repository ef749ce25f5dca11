//! Cosine beta schedule.

use crate::error::{Error, Result};

/// Noise schedule tables indexed 0..=T with `alpha_bar[0] = 1`.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    s: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    /// Squared-cosine schedule: `alpha_bar(i) = f(i)/f(0)` with
    /// `f(u) = cos^2(((u/T + s)/(1 + s)) * pi/2)`, betas derived from the
    /// ratio of consecutive alpha_bar values and clipped to 0.999, then
    /// alpha_bar rebuilt as the running product of `1 - beta`.
    pub fn cosine(t_max: usize, s: f64) -> Result<Self> {
        if t_max < 1 {
            return Err(Error::InvalidSchedule {
                detail: "T must be >= 1".to_string(),
            });
        }
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidSchedule {
                detail: format!("cosine offset s = {s} must be > 0"),
            });
        }
        let f = |u: f64| -> f64 {
            let x = ((u / t_max as f64 + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let f0 = f(0.0);
        let mut beta = vec![0.0f64; t_max + 1];
        let mut alpha = vec![1.0f64; t_max + 1];
        let mut alpha_bar = vec![1.0f64; t_max + 1];
        let mut prev_raw = 1.0f64;
        for i in 1..=t_max {
            let raw = f(i as f64) / f0;
            beta[i] = (1.0 - raw / prev_raw).min(0.999);
            prev_raw = raw;
            alpha[i] = 1.0 - beta[i];
            alpha_bar[i] = alpha_bar[i - 1] * alpha[i];
        }
        Ok(DiffusionSchedule {
            s,
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn t_max(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn cosine_offset(&self) -> f64 {
        self.s
    }

    /// Valid for i in 1..=T.
    pub fn beta(&self, i: usize) -> f64 {
        self.beta[i]
    }

    /// Valid for i in 1..=T.
    pub fn alpha(&self, i: usize) -> f64 {
        self.alpha[i]
    }

    /// Valid for i in 0..=T.
    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.alpha_bar[i]
    }

    pub fn check_step(&self, i: usize) -> Result<()> {
        if i < 1 || i > self.t_max() {
            return Err(Error::StepOutOfRange {
                step: i,
                t_max: self.t_max(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_bar_zero_is_one_exactly() {
        for (t, s) in [(10, 0.008), (100, 0.008), (1000, 0.05)] {
            let sched = DiffusionSchedule::cosine(t, s).unwrap();
            assert_eq!(sched.alpha_bar(0), 1.0);
        }
    }

    #[test]
    fn strictly_decreasing_and_small_at_t() {
        let sched = DiffusionSchedule::cosine(1000, 0.008).unwrap();
        for i in 1..=1000 {
            assert!(sched.alpha_bar(i) < sched.alpha_bar(i - 1));
        }
        assert!(sched.alpha_bar(1000) < 0.01);
    }

    #[test]
    fn betas_in_clip_range() {
        for t in [100usize, 1000] {
            let sched = DiffusionSchedule::cosine(t, 0.008).unwrap();
            for i in 1..=t {
                assert!(sched.beta(i) > 0.0 && sched.beta(i) <= 0.999, "beta[{i}]");
            }
        }
    }

    #[test]
    fn matches_independent_scalar_recomputation() {
        // Independent scalar re-evaluation of the same closed form.
        let t = 1000usize;
        let s = 0.008f64;
        let sched = DiffusionSchedule::cosine(t, s).unwrap();
        let f = |u: f64| ((u / t as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
            .cos()
            .powi(2);
        let mut ab = 1.0f64;
        for i in 1..=t {
            let raw_ratio = f(i as f64) / f(i as f64 - 1.0);
            let b = (1.0 - raw_ratio).min(0.999);
            ab *= 1.0 - b;
            assert!(
                (sched.alpha_bar(i) - ab).abs() < 1e-12,
                "alpha_bar[{i}]: {} vs {ab}",
                sched.alpha_bar(i)
            );
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(DiffusionSchedule::cosine(0, 0.008).is_err());
        assert!(DiffusionSchedule::cosine(10, 0.0).is_err());
        assert!(DiffusionSchedule::cosine(10, -1.0).is_err());
    }
}
