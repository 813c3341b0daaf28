use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A finite-state forward chain `x_0 -> x_1 -> ... -> x_T` with an
/// observation `y` drawn from `q(y | x_0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteChainSpec {
    pub states: usize,
    pub conditions: usize,
    /// Initial distribution over states.
    pub initial: Vec<f64>,
    /// `transitions[t][a * states + b] = q(x_{t+1} = b | x_t = a)`.
    pub transitions: Vec<Vec<f64>>,
    /// `observation[a * conditions + j] = q(y = j | x_0 = a)`.
    pub observation: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
#[error("invalid chain: {0}")]
pub struct ChainError(pub String);

fn random_stochastic(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut m = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let row: Vec<f64> = (0..cols).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = row.iter().sum();
        m.extend(row.iter().map(|v| v / total));
    }
    m
}

impl DiscreteChainSpec {
    pub fn horizon(&self) -> usize {
        self.transitions.len()
    }

    /// Random strictly positive kernels.
    pub fn random(states: usize, conditions: usize, horizon: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            states,
            conditions,
            initial: random_stochastic(1, states, &mut rng),
            transitions: (0..horizon)
                .map(|_| random_stochastic(states, states, &mut rng))
                .collect(),
            observation: random_stochastic(states, conditions, &mut rng),
        }
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        let (k, j) = (self.states, self.conditions);
        if k == 0 || j == 0 || self.transitions.is_empty() {
            return Err(ChainError("empty state, condition or time axis".into()));
        }
        let stochastic = |m: &[f64], cols: usize, what: &str| -> Result<(), ChainError> {
            for (r, row) in m.chunks(cols).enumerate() {
                let s: f64 = row.iter().sum();
                if row.iter().any(|v| *v < 0.0 || !v.is_finite()) || (s - 1.0).abs() > 1e-12 {
                    return Err(ChainError(format!("{what} row {r} sums to {s}")));
                }
            }
            Ok(())
        };
        if self.initial.len() != k || self.observation.len() != k * j {
            return Err(ChainError("kernel sizes disagree with state counts".into()));
        }
        stochastic(&self.initial, k, "initial")?;
        stochastic(&self.observation, j, "observation")?;
        for (t, m) in self.transitions.iter().enumerate() {
            if m.len() != k * k {
                return Err(ChainError(format!("transition {t} has {} entries", m.len())));
            }
            stochastic(m, k, &format!("transition {t}"))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prop1Report {
    pub max_deviation: f64,
    pub checked: usize,
    /// Tuples whose conditioning event has zero probability.
    pub skipped: usize,
}

/// Compares the conditional reverse kernel obtained by enumerating every
/// path of the joint chain with the factorised form
/// `q(x_t | x_{t+1}) q(y | x_t) / q(y, x_{t+1}) * E[q(x_{t+1} | x_0)]`
/// built from marginals.
pub fn prop1_discrete_check(spec: &DiscreteChainSpec) -> Result<Prop1Report, ChainError> {
    spec.validate()?;
    let lhs = enumerate_reverse(spec);
    let rhs = factorised_reverse(spec);
    let mut report = Prop1Report {
        max_deviation: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (l, r) in lhs.iter().zip(&rhs) {
        match (l, r) {
            (Some(a), Some(b)) => {
                report.checked += 1;
                report.max_deviation = report.max_deviation.max((a - b).abs());
            }
            _ => report.skipped += 1,
        }
    }
    Ok(report)
}

/// Flat index over (t, x_t, x_{t+1}, y).
fn slot(spec: &DiscreteChainSpec, t: usize, a: usize, b: usize, y: usize) -> usize {
    let (k, j) = (spec.states, spec.conditions);
    ((t * k + a) * k + b) * j + y
}

fn enumerate_reverse(spec: &DiscreteChainSpec) -> Vec<Option<f64>> {
    let (k, j, horizon) = (spec.states, spec.conditions, spec.horizon());
    let size = horizon * k * k * j;
    // joint[t, a, b, y] = P(x_t = a, x_{t+1} = b, y), summed over full paths.
    let mut joint = vec![0.0; size];
    let mut path = vec![0usize; horizon + 1];
    let total_paths = k.pow(horizon as u32 + 1);
    for code in 0..total_paths {
        let mut c = code;
        for s in path.iter_mut() {
            *s = c % k;
            c /= k;
        }
        let mut p = spec.initial[path[0]];
        for t in 0..horizon {
            p *= spec.transitions[t][path[t] * k + path[t + 1]];
        }
        for y in 0..j {
            let py = p * spec.observation[path[0] * j + y];
            for t in 0..horizon {
                joint[slot(spec, t, path[t], path[t + 1], y)] += py;
            }
        }
    }
    let mut out = vec![None; size];
    for t in 0..horizon {
        for b in 0..k {
            for y in 0..j {
                let denom: f64 = (0..k).map(|a| joint[slot(spec, t, a, b, y)]).sum();
                if denom > 0.0 {
                    for a in 0..k {
                        out[slot(spec, t, a, b, y)] = Some(joint[slot(spec, t, a, b, y)] / denom);
                    }
                }
            }
        }
    }
    out
}

fn matmul(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        for l in 0..k {
            let ail = a[i * k + l];
            for m in 0..k {
                out[i * k + m] += ail * b[l * k + m];
            }
        }
    }
    out
}

fn factorised_reverse(spec: &DiscreteChainSpec) -> Vec<Option<f64>> {
    let (k, j, horizon) = (spec.states, spec.conditions, spec.horizon());
    // reach[t][x0 * k + x] = q(x_t = x | x_0), with reach[0] the identity.
    let mut reach = vec![(0..k * k).map(|i| if i / k == i % k { 1.0 } else { 0.0 }).collect::<Vec<f64>>()];
    for t in 0..horizon {
        let next = matmul(&reach[t], &spec.transitions[t], k);
        reach.push(next);
    }
    // E[q(x_t | x_0)] over q(x_0), i.e. the marginal of x_t.
    let marginal = |t: usize, x: usize| -> f64 {
        (0..k).map(|x0| spec.initial[x0] * reach[t][x0 * k + x]).sum()
    };
    // q(y | x_t) = sum_x0 q(x0 | x_t) q(y | x0).
    let cond_y = |t: usize, x: usize, y: usize| -> f64 {
        let m = marginal(t, x);
        if m == 0.0 {
            return 0.0;
        }
        (0..k)
            .map(|x0| spec.initial[x0] * reach[t][x0 * k + x] * spec.observation[x0 * j + y])
            .sum::<f64>()
            / m
    };
    let joint_y = |t: usize, x: usize, y: usize| -> f64 {
        (0..k)
            .map(|x0| spec.initial[x0] * spec.observation[x0 * j + y] * reach[t][x0 * k + x])
            .sum()
    };
    let mut out = vec![None; horizon * k * k * j];
    for t in 0..horizon {
        for b in 0..k {
            let m_next = marginal(t + 1, b);
            for y in 0..j {
                let denom = joint_y(t + 1, b, y);
                if denom == 0.0 || m_next == 0.0 {
                    continue;
                }
                for a in 0..k {
                    let reverse = spec.transitions[t][a * k + b] * marginal(t, a) / m_next;
                    let value = reverse * cond_y(t, a, y) / denom * m_next;
                    out[slot(spec, t, a, b, y)] = Some(value);
                }
            }
        }
    }
    out
}
