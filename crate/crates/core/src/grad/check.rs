use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Bindings, GradError, Graph, NodeId, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Entries sampled per parameter; smaller parameters are checked fully.
    pub max_entries: usize,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_entries: 64,
            floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `param[index]` of the worst entry.
    pub worst: String,
    pub checked: usize,
}

/// Compares analytic parameter gradients of `loss` with central differences.
/// Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradcheck(
    graph: &Graph,
    loss: NodeId,
    inputs: &Bindings,
    params: &ParamStore,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, GradError> {
    let (_, grads) = graph.gradients(loss, inputs, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for name in graph.param_names() {
        let analytic = grads.param(&name).expect("every parameter has a gradient").clone();
        let n = analytic.len();
        let indices: Vec<usize> = if n <= opts.max_entries {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.max_entries).into_vec()
        };
        for idx in indices {
            let original = work.get(&name).expect("bound parameter").data()[idx];
            let mut eval_at = |value: f64| -> Result<f64, GradError> {
                work.get_mut(&name).expect("bound parameter").data_mut()[idx] = value;
                Ok(graph.evaluate(inputs, &work)?.value(loss).item())
            };
            let plus = eval_at(original + opts.eps)?;
            let minus = eval_at(original - opts.eps)?;
            eval_at(original)?;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel >= report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{name}[{idx}]");
            }
        }
    }
    Ok(report)
}
