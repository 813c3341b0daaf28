//! Executable checks of the reverse-kernel identity, the guiding-point
//! containment bound and the chi-squared concentration argument.

mod chain;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erf;
use statrs::function::gamma::gamma_lr;

pub use chain::{prop1_discrete_check, ChainError, DiscreteChainSpec, Prop1Report};

use crate::geometry::{dist2, ConvexHull, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainmentMode {
    /// One-dimensional form `(1 + erf(d0 / (sigma0 sqrt 2))) / 2`.
    PaperErf,
    /// Exact probability that an isotropic 3-d Gaussian lands within `d0`.
    ExactChi3,
}

pub fn containment_prob(d0: f64, sigma0: f64, mode: ContainmentMode) -> f64 {
    let z = d0 / sigma0;
    match mode {
        ContainmentMode::PaperErf => {
            if z.is_infinite() {
                1.0
            } else {
                0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
            }
        }
        ContainmentMode::ExactChi3 => {
            let x = 0.5 * z * z;
            if !x.is_finite() {
                1.0
            } else if x == 0.0 {
                0.0
            } else {
                gamma_lr(1.5, x)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConcentrationConfig {
    pub hull: ConvexHull,
    pub mu0: Point,
    pub sigma0: f64,
    /// Samples per trial.
    pub samples: usize,
    pub trials: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Prop2Report {
    pub d0: f64,
    pub sigma0: f64,
    /// Fraction of draws strictly inside the hull.
    pub hull_rate: f64,
    /// Fraction of draws within `d0` of `mu0`.
    pub ball_rate: f64,
    /// Binomial standard error of `hull_rate`.
    pub hull_se: f64,
    pub ball_se: f64,
    /// Mean over trials of `s^2 = (1/L) sum |r_i - mu0|^2`.
    pub mean_s2: f64,
    pub erf_bound_sigma: f64,
    pub chi3_bound_sigma: f64,
    /// Bounds with the realised `s` standing in for the scale.
    pub erf_bound_s: f64,
    pub chi3_bound_s: f64,
}

/// Monte Carlo containment of Gaussian draws around `mu0`.
pub fn prop2_mc(cfg: &ConcentrationConfig, seed: u64) -> Prop2Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d0 = cfg.hull.min_facet_distance(cfg.mu0);
    let d02 = d0 * d0;
    let (mut inside, mut in_ball, mut s2_total) = (0usize, 0usize, 0.0);
    for _ in 0..cfg.trials {
        let mut s2 = 0.0;
        for _ in 0..cfg.samples {
            let r: Point = [0, 1, 2].map(|k| {
                let e: f64 = StandardNormal.sample(&mut rng);
                cfg.mu0[k] + cfg.sigma0 * e
            });
            let d = dist2(r, cfg.mu0);
            s2 += d;
            if d < d02 {
                in_ball += 1;
            }
            if cfg.hull.contains(r) {
                inside += 1;
            }
        }
        s2_total += s2 / cfg.samples as f64;
    }
    let draws = (cfg.trials * cfg.samples) as f64;
    let hull_rate = inside as f64 / draws;
    let ball_rate = in_ball as f64 / draws;
    let mean_s2 = s2_total / cfg.trials as f64;
    let s = mean_s2.sqrt();
    Prop2Report {
        d0,
        sigma0: cfg.sigma0,
        hull_rate,
        ball_rate,
        hull_se: (hull_rate * (1.0 - hull_rate) / draws).sqrt(),
        ball_se: (ball_rate * (1.0 - ball_rate) / draws).sqrt(),
        mean_s2,
        erf_bound_sigma: containment_prob(d0, cfg.sigma0, ContainmentMode::PaperErf),
        chi3_bound_sigma: containment_prob(d0, cfg.sigma0, ContainmentMode::ExactChi3),
        erf_bound_s: containment_prob(d0, s, ContainmentMode::PaperErf),
        chi3_bound_s: containment_prob(d0, s, ContainmentMode::ExactChi3),
    }
}

/// Asymptotic Kolmogorov distribution tail with the usual small-sample correction.
pub fn ks_p_value(statistic: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * statistic;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sided KS statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct Chi2Report {
    pub samples: usize,
    pub dims: usize,
    /// KS against chi-squared with `dims * L` degrees of freedom.
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    /// KS against chi-squared with `L` degrees of freedom.
    pub ks_statistic_l_dof: f64,
    pub ks_p_value_l_dof: f64,
    /// `Pr(chi2 > C)` with `dims * L` degrees of freedom, and its complement.
    pub tail_probability: f64,
    pub tail_complement: f64,
}

/// Simulates `s^2 L / sigma0^2` over `trials` and tests it against
/// chi-squared laws; also evaluates the tail `Pr(. > c)`.
pub fn chi2_check(samples: usize, sigma0: f64, dims: usize, trials: usize, c: f64, seed: u64) -> Chi2Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<f64> = (0..trials)
        .map(|_| {
            let mut total = 0.0;
            for _ in 0..samples * dims {
                let e: f64 = StandardNormal.sample(&mut rng);
                total += (sigma0 * e).powi(2);
            }
            // s^2 L / sigma0^2 with s^2 = total / L.
            total / (sigma0 * sigma0)
        })
        .collect();
    let full = ChiSquared::new((dims * samples) as f64).expect("positive dof");
    let l_dof = ChiSquared::new(samples as f64).expect("positive dof");
    let d_full = ks_statistic(&mut values, |x| full.cdf(x));
    let d_l_dof = ks_statistic(&mut values, |x| l_dof.cdf(x));
    let lower = chi2_lower_tail((dims * samples) as f64, c);
    Chi2Report {
        samples,
        dims,
        ks_statistic: d_full,
        ks_p_value: ks_p_value(d_full, trials),
        ks_statistic_l_dof: d_l_dof,
        ks_p_value_l_dof: ks_p_value(d_l_dof, trials),
        tail_probability: 1.0 - lower,
        tail_complement: lower,
    }
}

/// `Pr(chi2_dof <= x)` via the regularized lower incomplete gamma.
pub fn chi2_lower_tail(dof: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * dof, 0.5 * x)
    }
}

/// Containment values on an even grid of `d0 / sigma0` ratios.
pub fn corollary_grid(points: usize, max_ratio: f64, mode: ContainmentMode) -> Vec<(f64, f64)> {
    (0..points)
        .map(|i| {
            let ratio = max_ratio * i as f64 / (points - 1).max(1) as f64;
            (ratio, containment_prob(ratio, 1.0, mode))
        })
        .collect()
}

/// One line of the verification report.
#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Runs the full theory suite with default sizes.
pub fn run_verification(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    let mut ok = true;
    for s in 0..20 {
        match prop1_discrete_check(&DiscreteChainSpec::random(5, 3, 3, seed + s)) {
            Ok(r) => worst = worst.max(r.max_deviation),
            Err(_) => ok = false,
        }
    }
    out.push(CheckOutcome {
        name: "reverse-kernel identity".into(),
        passed: ok && worst < 1e-10,
        detail: format!("max deviation {worst:.3e} over 20 random 5-state chains"),
    });

    let schedule = crate::diffusion::make_schedule(crate::diffusion::ScheduleKind::Cosine, 100)
        .expect("valid schedule");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0: Vec<Point> = (0..10_000)
        .map(|_| [0, 1, 2].map(|_| rand::Rng::gen_range(&mut rng, -0.5..0.5)))
        .collect();
    let noise = crate::diffusion::gaussian_points(x0.len(), &mut rng);
    let xt = crate::diffusion::q_sample(&x0, 99, &noise, &schedule).expect("in range");
    let (mean, var) = moments(&xt);
    out.push(CheckOutcome {
        name: "forward-process convergence".into(),
        passed: mean.iter().all(|m| m.abs() < 0.05) && var.iter().all(|v| (v - 1.0).abs() < 0.1),
        detail: format!("mean {mean:.4?}, variance {var:.4?}"),
    });

    let cube = unit_cube_hull();
    let mut cells = Vec::new();
    let mut prop2_ok = true;
    for c in [0.05, 0.1, 0.25] {
        let cfg = ConcentrationConfig {
            hull: cube.clone(),
            mu0: [0.0; 3],
            sigma0: c * 0.5,
            samples: 1000,
            trials: 1000,
        };
        let r = prop2_mc(&cfg, seed + 7);
        prop2_ok &= r.hull_rate >= r.chi3_bound_sigma - 3.0 * r.hull_se;
        cells.push(format!(
            "sigma0={:.4}: rate {:.6} chi3 {:.6} erf {:.6}",
            r.sigma0, r.hull_rate, r.chi3_bound_sigma, r.erf_bound_sigma
        ));
    }
    out.push(CheckOutcome {
        name: "containment bound".into(),
        passed: prop2_ok,
        detail: cells.join("; "),
    });

    let chi = chi2_check(64, 1.0, 1, 10_000, 1.0, seed + 11);
    let chi3 = chi2_check(64, 1.0, 3, 10_000, 1.0, seed + 12);
    let tail = chi2_lower_tail(21.0, 1.0);
    out.push(CheckOutcome {
        name: "chi-squared concentration".into(),
        passed: chi.ks_p_value > 0.01 && chi3.ks_p_value > 0.01 && tail < 1e-9,
        detail: format!(
            "1-d KS p {:.3}; 3-d KS p vs 3L dof {:.3}, vs L dof {:.3e}; Pr(chi2_21 <= 1) = {:.3e}",
            chi.ks_p_value, chi3.ks_p_value, chi3.ks_p_value_l_dof, tail
        ),
    });

    let grid = corollary_grid(50, 10.0, ContainmentMode::ExactChi3);
    let monotone = grid.windows(2).all(|w| w[1].1 >= w[0].1);
    let high = grid.iter().filter(|(r, _)| *r > 5.0).all(|(_, p)| *p > 0.999);
    out.push(CheckOutcome {
        name: "containment limit".into(),
        passed: monotone && high,
        detail: format!("monotone {monotone}, above 0.999 past ratio 5: {high}"),
    });
    out
}

fn moments(points: &[Point]) -> ([f64; 3], [f64; 3]) {
    let n = points.len() as f64;
    let mean = [0, 1, 2].map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n);
    let var = [0, 1, 2].map(|k| points.iter().map(|p| (p[k] - mean[k]).powi(2)).sum::<f64>() / n);
    (mean, var)
}

pub fn unit_cube_hull() -> ConvexHull {
    let mut corners = Vec::with_capacity(8);
    for i in 0..8 {
        corners.push([0, 1, 2].map(|k| if i >> k & 1 == 1 { 0.5 } else { -0.5 }));
    }
    ConvexHull::build(&corners).expect("cube is non-degenerate")
}
