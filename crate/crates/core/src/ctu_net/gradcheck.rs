use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CtuNet, ForwardOptions, ForwardPass, ModelConfig, ModelError};
use crate::nn::{Graph, Tensor, Var};

/// Scalar objective appended to a recorded forward pass.
pub type LossFn<'a> = dyn Fn(&mut Graph<f64>, &ForwardPass<f64>) -> Var + 'a;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    /// Times a step was shrunk because the stencil crossed a ReLU or
    /// max-pool branch.
    pub reduced_steps: usize,
}

const MAX_STEP_REDUCTION: f64 = 4096.0;
const RIDDERS_SHRINK: f64 = 1.4;
const RIDDERS_TABLE: usize = 10;
const RIDDERS_SAFE: f64 = 2.0;

type Eval<'a> = dyn FnMut(f64) -> Result<(f64, bool), ModelError> + 'a;

/// Central difference at step `h`, or `None` if the stencil leaves the
/// current smooth piece.
fn central(eval: &mut Eval<'_>, h: f64) -> Result<Option<f64>, ModelError> {
    let (plus, sp) = eval(h)?;
    let (minus, sm) = eval(-h)?;
    Ok((sp && sm).then(|| (plus - minus) / (2.0 * h)))
}

fn ridders(eval: &mut Eval<'_>, epsilon: f64, reduced: &mut usize) -> Result<f64, ModelError> {
    let floor = epsilon / MAX_STEP_REDUCTION;
    let mut h = epsilon;
    let first = loop {
        match central(eval, h)? {
            Some(d) => break d,
            None if h / 4.0 >= floor => {
                h /= 4.0;
                *reduced += 1;
            }
            // Sitting on a branch boundary: report the plain difference.
            None => {
                let (plus, _) = eval(h)?;
                let (minus, _) = eval(-h)?;
                return Ok((plus - minus) / (2.0 * h));
            }
        }
    };
    let c2 = RIDDERS_SHRINK * RIDDERS_SHRINK;
    let mut table = vec![vec![0.0; RIDDERS_TABLE]; RIDDERS_TABLE];
    table[0][0] = first;
    let (mut best, mut err) = (first, f64::INFINITY);
    for i in 1..RIDDERS_TABLE {
        h /= RIDDERS_SHRINK;
        let Some(d) = central(eval, h)? else { break };
        table[0][i] = d;
        let mut fac = c2;
        for j in 1..=i {
            table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
            fac *= c2;
            let e = (table[j][i] - table[j - 1][i])
                .abs()
                .max((table[j][i] - table[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = table[j][i];
            }
        }
        if (table[i][i] - table[i - 1][i - 1]).abs() >= RIDDERS_SAFE * err {
            break;
        }
    }
    Ok(best)
}

/// Cross-entropy against fixed labels.
pub fn cross_entropy_loss(labels: Vec<usize>) -> impl Fn(&mut Graph<f64>, &ForwardPass<f64>) -> Var {
    move |g, pass| g.cross_entropy(pass.logits, &labels)
}

/// Compares analytic gradients with central differences on `samples`
/// randomly chosen scalar parameters of a freshly initialized model.
/// Batch statistics are used and dropout is off.
///
/// Each estimate is Ridders' extrapolation of central differences with
/// steps shrinking from `epsilon`. Stencils that land on a different ReLU or
/// max-pool branch than the unperturbed pass are discarded and the starting
/// step shrinks (down to `epsilon / 4096`).
pub fn gradient_check(
    config: &ModelConfig,
    loss: &LossFn<'_>,
    input: &Tensor<f64>,
    epsilon: f64,
    samples: usize,
) -> Result<GradCheckReport, ModelError> {
    let model = CtuNet::<f64>::new(config.clone())?;
    gradient_check_model(&model, loss, input, epsilon, samples, config.seed)
}

fn evaluate(model: &CtuNet<f64>, loss: &LossFn<'_>, input: &Tensor<f64>) -> Result<(ForwardPass<f64>, Var), ModelError> {
    let mut pass = model.forward(input, ForwardOptions::deterministic())?;
    let mut graph = std::mem::take(&mut pass.graph);
    let l = loss(&mut graph, &pass);
    pass.graph = graph;
    if pass.graph.value(l).len() != 1 {
        return Err(ModelError::Shape("loss must be a scalar".into()));
    }
    Ok((pass, l))
}

pub fn gradient_check_model(
    model: &CtuNet<f64>,
    loss: &LossFn<'_>,
    input: &Tensor<f64>,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(ModelError::Config(format!("epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    let (pass, l) = evaluate(model, loss, input)?;
    let grads = pass.graph.backward(l);

    // Flatten the parameters the pass actually used.
    let mut slots: Vec<(String, usize)> = Vec::new();
    for (name, &var) in &pass.params {
        let n = pass.graph.value(var).len();
        slots.extend((0..n).map(|i| (name.clone(), i)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = if slots.len() <= samples {
        (0..slots.len()).collect()
    } else {
        sample(&mut rng, slots.len(), samples).into_vec()
    };

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        reduced_steps: 0,
    };
    let base_signature = pass.graph.branch_signature();
    for idx in chosen {
        let (name, i) = &slots[idx];
        let analytic = grads
            .get(pass.params[name])
            .map(|g| g.data()[*i])
            .unwrap_or(0.0);
        if !analytic.is_finite() {
            return Err(ModelError::NonFinite(format!("gradient of {name}[{i}]")));
        }
        let orig = probe.store().param(name).unwrap().data()[*i];
        let mut eval = |delta: f64| -> Result<(f64, bool), ModelError> {
            probe.store_mut().param_mut(name).unwrap().data_mut()[*i] = orig + delta;
            let (p, l) = evaluate(&probe, loss, input)?;
            Ok((p.graph.value(l).data()[0], p.graph.branch_signature() == base_signature))
        };
        let fd = ridders(&mut eval, epsilon, &mut report.reduced_steps)?;
        probe.store_mut().param_mut(name).unwrap().data_mut()[*i] = orig;
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_param = name.clone();
            report.worst_index = *i;
        }
    }
    Ok(report)
}
