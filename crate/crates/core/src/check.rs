//! Gradient verification against central differences, and a generator of
//! randomized small networks to run it on.

use crate::error::Result;
use crate::grid::{Grid, Shape};
use crate::layers::{Activation, PoolKind, PoolSpec};
use crate::network::{init_params, Block, InitScheme, NetworkSpec, ParamVector};
use crate::rng::SplitMix64;
use crate::train::{backprop, finite_difference_grad, max_relative_error, LabeledSample, LossKind, Target};

/// Base finite-difference step, scaled per coordinate by `max(1, |θ_k|)`.
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

pub fn gradient_check(
    spec: &NetworkSpec,
    theta: &ParamVector,
    sample: &LabeledSample,
    kind: LossKind,
    step: f64,
) -> Result<GradCheckReport> {
    let analytic = backprop(spec, theta, sample, kind)?;
    let numeric = finite_difference_grad(spec, theta, sample, kind, step)?;
    let (max_rel_error, worst_index) = max_relative_error(&analytic, &numeric);
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}

/// A network, parameters, one sample and a loss to differentiate.
#[derive(Clone, Debug)]
pub struct Instance {
    pub spec: NetworkSpec,
    pub theta: ParamVector,
    pub sample: LabeledSample,
    pub loss: LossKind,
}

fn pick<T: Copy>(rng: &mut SplitMix64, items: &[T]) -> T {
    items[rng.below(items.len())]
}

/// Draws a small random architecture of the given rank (1 to 3) with one
/// or two conv blocks, optional pooling and hidden dense layer, a head
/// matching a randomly chosen loss, fan-scaled parameters and a random sample.
pub fn random_instance(seed: u64, rank: usize) -> Result<Instance> {
    let mut rng = SplitMix64::new(seed);
    let base = match rank {
        1 => 9 + rng.below(6),
        2 => 6 + rng.below(3),
        _ => 5 + rng.below(2),
    };
    let mut extents: Vec<usize> = (0..rank).map(|_| base + rng.below(2)).collect();
    let channels = 1 + rng.below(3);
    let input = Shape::new(extents.clone(), channels)?;
    let elementwise = Activation::ELEMENTWISE;

    let mut blocks = Vec::new();
    for _ in 0..1 + rng.below(2) {
        let kernel: Vec<usize> = (0..rank).map(|_| 2 + rng.below(2)).collect();
        let pad: Vec<usize> = (0..rank).map(|_| rng.below(2)).collect();
        let stride: Vec<usize> = (0..rank).map(|_| 1 + rng.below(2)).collect();
        let fits = extents
            .iter()
            .zip(&kernel)
            .zip(&pad)
            .all(|((&n, &k), &p)| n + 2 * p >= k);
        if !fits {
            break;
        }
        extents = extents
            .iter()
            .zip(&kernel)
            .zip(pad.iter().zip(&stride))
            .map(|((&n, &k), (&p, &s))| (n + 2 * p - k) / s + 1)
            .collect();
        blocks.push(Block::Conv {
            out_channels: 1 + rng.below(3),
            kernel,
            pad,
            stride,
            activation: pick(&mut rng, &elementwise),
        });
        if extents.iter().all(|&n| n >= 2) && rng.bernoulli(0.6) {
            let kind = if rng.bernoulli(0.5) { PoolKind::Max } else { PoolKind::Average };
            blocks.push(Block::Pool(PoolSpec::new(vec![2; rank], kind)?));
            extents.iter_mut().for_each(|n| *n /= 2);
        }
    }
    blocks.push(Block::Flatten);
    if rng.bernoulli(0.5) {
        blocks.push(Block::dense(2 + rng.below(3), pick(&mut rng, &elementwise)));
    }
    let loss = pick(
        &mut rng,
        &[LossKind::Mse, LossKind::Mse, LossKind::BinaryCrossEntropy, LossKind::CategoricalCrossEntropy],
    );
    let (n_out, head) = match loss {
        LossKind::Mse => (1 + rng.below(2), pick(&mut rng, &elementwise)),
        LossKind::BinaryCrossEntropy => (1, Activation::Sigmoid),
        LossKind::CategoricalCrossEntropy => (3, Activation::Softmax),
    };
    blocks.push(Block::dense(n_out, head));
    let spec = NetworkSpec::new(input, blocks)?;
    Ok(instance_for_spec(spec, rng.next_u64(), loss))
}

/// Fan-scaled parameters perturbed by small Gaussian noise, a Gaussian
/// input and a random target suited to `loss`.
pub fn instance_for_spec(spec: NetworkSpec, seed: u64, loss: LossKind) -> Instance {
    let mut rng = SplitMix64::new(seed);
    // scaled init keeps activations out of saturation, where differences of
    // the loss lose most of their significant digits
    let mut theta = init_params(&spec, rng.next_u64(), InitScheme::UniformScaled);
    theta.values_mut().iter_mut().for_each(|t| *t += 0.1 * rng.normal());
    let len = spec.input_shape().len();
    let x = Grid::new(spec.input_shape().clone(), (0..len).map(|_| rng.normal()).collect()).expect("finite");
    let n_out = spec.n_outputs();
    let target = match loss {
        LossKind::Mse => Target::Values((0..n_out).map(|_| rng.normal()).collect()),
        LossKind::BinaryCrossEntropy => Target::Class(rng.below(2)),
        LossKind::CategoricalCrossEntropy => Target::Class(rng.below(n_out)),
    };
    Instance {
        spec,
        theta,
        sample: LabeledSample::new(x, target),
        loss,
    }
}
