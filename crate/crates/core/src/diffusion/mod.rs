//! Noise schedules, forward noising and ancestral sampling with an
//! x0-predicting denoiser.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::Point;

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error("schedule needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("timestep {t} outside 0..{steps}")]
    TimestepOutOfRange { t: usize, steps: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("denoiser produced a non-finite value at timestep {t}")]
    NonFinite { t: usize },
    #[error("denoiser failed at timestep {t}: {reason}")]
    Denoiser { t: usize, reason: String },
    #[error("inpainting mask fixes every point; nothing to generate")]
    FullMask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(format!("unknown schedule `{other}` (expected linear or cosine)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<(), DiffusionError> {
        if t >= self.steps() {
            return Err(DiffusionError::TimestepOutOfRange {
                t,
                steps: self.steps(),
            });
        }
        Ok(())
    }

    /// Variance of q(x_{t-1} | x_t, x0) for `t >= 1`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.betas[t] * (1.0 - self.alpha_bars[t - 1]) / (1.0 - self.alpha_bars[t])
    }

    /// Coefficients `(c0, ct)` of the posterior mean `c0*x0 + ct*x_t` for `t >= 1`.
    pub fn posterior_mean_coefs(&self, t: usize) -> (f64, f64) {
        let denom = 1.0 - self.alpha_bars[t];
        (
            self.alpha_bars[t - 1].sqrt() * self.betas[t] / denom,
            self.alphas[t].sqrt() * (1.0 - self.alpha_bars[t - 1]) / denom,
        )
    }
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Linear ramps 1e-4 to 0.02 at 1000 steps; other step counts scale both
/// endpoints by 1000/T so the total noise stays comparable.
pub fn make_schedule(kind: ScheduleKind, steps: usize) -> Result<NoiseSchedule, DiffusionError> {
    if steps < 2 {
        return Err(DiffusionError::TooFewSteps(steps));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            let scale = 1000.0 / steps as f64;
            let start = 1e-4 * scale;
            let end = (0.02 * scale).min(MAX_BETA);
            (0..steps)
                .map(|i| start + (end - start) * i as f64 / (steps - 1) as f64)
                .collect()
        }
        ScheduleKind::Cosine => {
            let f = |t: f64| {
                ((t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2)
                    .cos()
                    .powi(2)
            };
            (0..steps)
                .map(|i| (1.0 - f((i + 1) as f64) / f(i as f64)).min(MAX_BETA))
                .collect()
        }
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        kind,
        betas,
        alphas,
        alpha_bars,
    })
}

/// `sqrt(abar[t]) * x0 + sqrt(1 - abar[t]) * noise`.
pub fn q_sample(
    x0: &[Point],
    t: usize,
    noise: &[Point],
    schedule: &NoiseSchedule,
) -> Result<Vec<Point>, DiffusionError> {
    schedule.check(t)?;
    if x0.len() != noise.len() {
        return Err(DiffusionError::Shape(format!(
            "{} points but {} noise rows",
            x0.len(),
            noise.len()
        )));
    }
    let a = schedule.alpha_bars[t].sqrt();
    let s = (1.0 - schedule.alpha_bars[t]).sqrt();
    Ok(x0
        .iter()
        .zip(noise)
        .map(|(p, e)| [0, 1, 2].map(|k| a * p[k] + s * e[k]))
        .collect())
}

/// One transition of the forward chain: `sqrt(1 - beta[t]) * x + sqrt(beta[t]) * noise`.
pub fn q_step(x: &[Point], t: usize, noise: &[Point], schedule: &NoiseSchedule) -> Vec<Point> {
    let a = schedule.alphas[t].sqrt();
    let s = schedule.betas[t].sqrt();
    x.iter()
        .zip(noise)
        .map(|(p, e)| [0, 1, 2].map(|k| a * p[k] + s * e[k]))
        .collect()
}

pub fn gaussian_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point> {
    (0..n)
        .map(|_| {
            [
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            ]
        })
        .collect()
}

/// Predicts the clean cloud from a noisy one. `timestep` is 1-based: the
/// state at schedule index `t` is passed as `t + 1`.
pub trait Denoiser {
    fn predict_x0(&self, x: &[Point], timestep: usize) -> Result<Vec<Point>, String>;
}

impl<F> Denoiser for F
where
    F: Fn(&[Point], usize) -> Result<Vec<Point>, String>,
{
    fn predict_x0(&self, x: &[Point], timestep: usize) -> Result<Vec<Point>, String> {
        self(x, timestep)
    }
}

fn predict(denoiser: &dyn Denoiser, x: &[Point], t: usize) -> Result<Vec<Point>, DiffusionError> {
    let out = denoiser
        .predict_x0(x, t + 1)
        .map_err(|reason| DiffusionError::Denoiser { t, reason })?;
    if out.len() != x.len() {
        return Err(DiffusionError::Shape(format!(
            "denoiser returned {} points for {}",
            out.len(),
            x.len()
        )));
    }
    if out.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DiffusionError::NonFinite { t });
    }
    Ok(out)
}

fn posterior_step(
    schedule: &NoiseSchedule,
    t: usize,
    x: &[Point],
    x0: &[Point],
    rng: &mut ChaCha8Rng,
) -> Vec<Point> {
    let (c0, ct) = schedule.posterior_mean_coefs(t);
    let sd = schedule.posterior_variance(t).sqrt();
    let z = gaussian_points(x.len(), rng);
    x.iter()
        .zip(x0)
        .zip(z)
        .map(|((xt, p0), e)| [0, 1, 2].map(|k| c0 * p0[k] + ct * xt[k] + sd * e[k]))
        .collect()
}

/// Ancestral sampling from pure noise; returns the final x0 prediction.
pub fn p_sample_loop(
    denoiser: &dyn Denoiser,
    n: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<Point>, DiffusionError> {
    run_loop(denoiser, n, schedule, seed, None)
}

/// Like [`p_sample_loop`], but after every step the rows where `mask` is
/// true are replaced by the known cloud noised to the current level.
pub fn inpaint_loop(
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    mask: &[bool],
    known: &[Point],
    seed: u64,
) -> Result<Vec<Point>, DiffusionError> {
    if mask.len() != known.len() {
        return Err(DiffusionError::Shape(format!(
            "mask has {} entries for {} known points",
            mask.len(),
            known.len()
        )));
    }
    if mask.iter().all(|m| *m) {
        return Err(DiffusionError::FullMask);
    }
    run_loop(denoiser, known.len(), schedule, seed, Some((mask, known)))
}

fn run_loop(
    denoiser: &dyn Denoiser,
    n: usize,
    schedule: &NoiseSchedule,
    seed: u64,
    inpaint: Option<(&[bool], &[Point])>,
) -> Result<Vec<Point>, DiffusionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut known_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_1a1a);
    let mut x = gaussian_points(n, &mut rng);
    for t in (0..schedule.steps()).rev() {
        let x0 = predict(denoiser, &x, t)?;
        x = if t == 0 {
            x0
        } else {
            posterior_step(schedule, t, &x, &x0, &mut rng)
        };
        if let Some((mask, known)) = inpaint {
            let noised = if t == 0 {
                known.to_vec()
            } else {
                let noise = gaussian_points(n, &mut known_rng);
                q_sample(known, t - 1, &noise, schedule)?
            };
            for ((row, fixed), m) in x.iter_mut().zip(noised).zip(mask) {
                if *m {
                    *row = fixed;
                }
            }
        }
    }
    Ok(x)
}
