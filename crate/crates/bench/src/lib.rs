//! Seeded fixtures shared by the benchmarks.

use convgrid::network::{init_params, InitScheme};
use convgrid::{Grid, LabeledSample, NetworkSpec, OperatorBank, ParamVector, Shape, SplitMix64, Target};

pub fn random_grid(extents: &[usize], channels: usize, seed: u64) -> Grid {
    let shape = Shape::new(extents.to_vec(), channels).expect("valid shape");
    let mut rng = SplitMix64::new(seed);
    let values = (0..shape.len()).map(|_| rng.normal()).collect();
    Grid::new(shape, values).expect("finite")
}

pub fn random_bank(in_channels: usize, out_channels: usize, kernel: &[usize], seed: u64) -> OperatorBank {
    let mut rng = SplitMix64::new(seed);
    let n = in_channels * out_channels * kernel.iter().product::<usize>();
    OperatorBank::new(in_channels, out_channels, kernel.to_vec(), (0..n).map(|_| rng.normal()).collect())
        .expect("valid bank")
}

/// A network with initialized parameters and one regression sample.
pub fn network_case(spec: &str, seed: u64) -> (NetworkSpec, ParamVector, LabeledSample) {
    let spec: NetworkSpec = spec.parse().expect("valid spec");
    let theta = init_params(&spec, seed, InitScheme::UniformScaled);
    let shape = spec.input_shape();
    let x = random_grid(shape.extents(), shape.channels(), seed + 1);
    let target = Target::Values(vec![0.5; spec.n_outputs()]);
    (spec, theta, LabeledSample::new(x, target))
}
