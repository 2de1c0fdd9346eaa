use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// DDPM variance schedule. Steps are numbered `1..=T`; `alpha_bar(0) = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleFile", into = "ScheduleFile")]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    betas: Vec<f64>,
}

impl TryFrom<ScheduleFile> for NoiseSchedule {
    type Error = Error;
    fn try_from(f: ScheduleFile) -> Result<Self> {
        NoiseSchedule::from_betas(f.betas)
    }
}

impl From<NoiseSchedule> for ScheduleFile {
    fn from(s: NoiseSchedule) -> Self {
        ScheduleFile { betas: s.betas }
    }
}

impl Default for NoiseSchedule {
    /// Linear betas from 1e-4 to 0.2 over 100 steps.
    fn default() -> Self {
        Self::linear(100, 1e-4, 0.2).expect("valid default schedule")
    }
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::invalid("betas must lie in (0, 1)"));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        let betas = (0..steps)
            .map(|i| {
                let f = if steps == 1 {
                    0.0
                } else {
                    i as f64 / (steps - 1) as f64
                };
                beta_start + f * (beta_end - beta_start)
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::IndexOutOfRange {
                what: "diffusion step",
                index: t,
                len: self.steps(),
            })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Variance of the reverse step `q(a_{t-1} | a_t, a_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }

    /// Per-step loss weight `beta_t / (alpha_t (1 - alpha_bar_t))`, scaled
    /// to mean one over the schedule.
    pub fn likelihood_weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = (1..=self.steps())
            .map(|t| self.beta(t) / (self.alpha(t) * (1.0 - self.alpha_bar(t))))
            .collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        raw.into_iter().map(|w| w / mean).collect()
    }
}

/// `sqrt(alpha_bar) a0 + sqrt(1 - alpha_bar) noise`.
pub fn diffuse_with_alpha_bar(alpha_bar: f64, a0: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    check_dim("noise", a0.len(), noise.len())?;
    let (s, n) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(a0.iter().zip(noise).map(|(a, e)| s * a + n * e).collect())
}

/// Closed-form marginal `q(a_t | a_0)`. `t = 0` returns `a0`.
pub fn forward_diffuse(
    schedule: &NoiseSchedule,
    a0: &[f64],
    t: usize,
    noise: &[f64],
) -> Result<Vec<f64>> {
    if t != 0 {
        schedule.check_t(t)?;
    }
    diffuse_with_alpha_bar(schedule.alpha_bar(t), a0, noise)
}

/// `-eps / sqrt(1 - alpha_bar)`.
pub fn score_with_alpha_bar(eps_hat: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    let var = 1.0 - alpha_bar;
    if var <= 0.0 {
        return Err(Error::DivisionByZero("score at alpha_bar = 1"));
    }
    let k = -1.0 / var.sqrt();
    Ok(eps_hat.iter().map(|e| k * e).collect())
}

/// Score estimate `grad log q(a_t)` from a noise prediction.
pub fn score_from_eps(eps_hat: &[f64], schedule: &NoiseSchedule, t: usize) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    score_with_alpha_bar(eps_hat, schedule.alpha_bar(t))
}
