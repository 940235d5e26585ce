use convgrid::operators::{binomial1d, derivative1d, gaussian3x3, laplacian2d, sobel2d, SobelDirection};
use convgrid::{convolve, cross_correlate, ConvGeometry, Grid, OperatorBank, Shape, SplitMix64};
use proptest::prelude::*;

/// Direct summation with bounds-checked zero padding. Returns values and
/// the matching sums of absolute terms.
fn naive(x: &Grid, bank: &OperatorBank, pad: &[usize], stride: &[usize], mirror: bool) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let ext = x.shape().extents().to_vec();
    let ker = bank.kernel_extents().to_vec();
    let rank = ext.len();
    let out_ext: Vec<usize> = (0..rank).map(|a| (ext[a] + 2 * pad[a] - ker[a]) / stride[a] + 1).collect();
    let positions = |extents: &[usize]| -> Vec<Vec<usize>> {
        let mut all = vec![vec![]];
        for &n in extents {
            all = all.into_iter().flat_map(|p| (0..n).map(move |i| [p.clone(), vec![i]].concat())).collect();
        }
        all
    };
    let mut vals = Vec::new();
    let mut mags = Vec::new();
    for j in 0..bank.out_channels() {
        for o in positions(&out_ext) {
            let (mut acc, mut mag) = (0.0, 0.0);
            for i in 0..bank.in_channels() {
                let kernel = bank.kernel(i, j);
                for k in positions(&ker) {
                    let src: Vec<isize> = (0..rank)
                        .map(|a| (o[a] * stride[a] + k[a]) as isize - pad[a] as isize)
                        .collect();
                    if (0..rank).any(|a| src[a] < 0 || src[a] >= ext[a] as isize) {
                        continue;
                    }
                    let src: Vec<usize> = src.iter().map(|&s| s as usize).collect();
                    let mut flat = 0;
                    for a in 0..rank {
                        let kk = if mirror { ker[a] - 1 - k[a] } else { k[a] };
                        flat = flat * ker[a] + kk;
                    }
                    let term = kernel[flat] * x.get(i, &src);
                    acc += term;
                    mag += term.abs();
                }
            }
            vals.push(acc);
            mags.push(mag);
        }
    }
    (out_ext, vals, mags)
}

fn random_case(rng: &mut SplitMix64, rank: usize, integer: bool) -> (Grid, OperatorBank, Vec<usize>, Vec<usize>) {
    let draw = |rng: &mut SplitMix64| if integer { rng.below(7) as f64 - 3.0 } else { rng.normal() };
    let ext: Vec<usize> = (0..rank).map(|_| 3 + rng.below(if rank == 3 { 4 } else { 7 })).collect();
    let ker: Vec<usize> = ext.iter().map(|&n| 1 + rng.below(n.min(4))).collect();
    let pad: Vec<usize> = (0..rank).map(|_| rng.below(3)).collect();
    let stride: Vec<usize> = (0..rank).map(|_| 1 + rng.below(3)).collect();
    let (p, q) = (1 + rng.below(3), 1 + rng.below(3));
    let shape = Shape::new(ext, p).unwrap();
    let x = Grid::new(shape.clone(), (0..shape.len()).map(|_| draw(rng)).collect()).unwrap();
    let nw = p * q * ker.iter().product::<usize>();
    let bank = OperatorBank::new(p, q, ker, (0..nw).map(|_| draw(rng)).collect()).unwrap();
    (x, bank, pad, stride)
}

fn assert_close(got: &Grid, want: &(Vec<usize>, Vec<f64>, Vec<f64>)) {
    assert_eq!(got.shape().extents(), &want.0[..]);
    for ((g, w), m) in got.values().iter().zip(&want.1).zip(&want.2) {
        assert!((g - w).abs() <= 1e-12 * m.max(f64::MIN_POSITIVE), "{g} vs {w}");
    }
}

#[test]
fn engine_matches_naive_oracle() {
    let mut rng = SplitMix64::new(2024);
    for rank in 1..=3 {
        let mut padded = 0;
        let mut strided = 0;
        for _ in 0..100 {
            let (x, bank, pad, stride) = random_case(&mut rng, rank, false);
            padded += usize::from(pad.iter().any(|&p| p > 0));
            strided += usize::from(stride.iter().any(|&s| s > 1));
            let geom = ConvGeometry::new(pad.clone(), stride.clone()).unwrap();
            assert_close(&cross_correlate(&x, &bank, &geom).unwrap(), &naive(&x, &bank, &pad, &stride, false));
            assert_close(&convolve(&x, &bank, &geom).unwrap(), &naive(&x, &bank, &pad, &stride, true));
        }
        assert!(padded > 20 && strided > 20);
    }
}

#[test]
fn mimo_is_channel_sum_of_siso() {
    let mut rng = SplitMix64::new(77);
    for rank in 1..=3 {
        for _ in 0..30 {
            // small integers keep every partial sum exact
            let (x, bank, pad, stride) = random_case(&mut rng, rank, true);
            let geom = ConvGeometry::new(pad, stride).unwrap();
            let full = cross_correlate(&x, &bank, &geom).unwrap();
            let vol = full.shape().volume();
            for j in 0..bank.out_channels() {
                let mut sum = vec![0.0; vol];
                for i in 0..bank.in_channels() {
                    let single = OperatorBank::single(bank.kernel_extents().to_vec(), bank.kernel(i, j).to_vec()).unwrap();
                    let part = cross_correlate(&x.channel_view(i).unwrap(), &single, &geom).unwrap();
                    for (s, v) in sum.iter_mut().zip(part.values()) {
                        *s += v;
                    }
                }
                assert_eq!(full.channel_slice(j), &sum[..]);
            }
        }
    }
}

#[test]
fn named_operators_are_exact() {
    assert_eq!(derivative1d().weights(), &[1.0, 0.0, -1.0]);
    assert_eq!(binomial1d().weights(), &[1.0, 2.0, 1.0]);
    assert_eq!(sobel2d(SobelDirection::Vertical).weights(), &[1.0, 2.0, 1.0, 0.0, 0.0, 0.0, -1.0, -2.0, -1.0]);
    assert_eq!(sobel2d(SobelDirection::Horizontal).weights(), &[1.0, 0.0, -1.0, 2.0, 0.0, -2.0, 1.0, 0.0, -1.0]);
    assert_eq!(laplacian2d().weights(), &[0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]);
    let g: Vec<f64> = [1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0].iter().map(|v| v / 16.0).collect();
    assert_eq!(gaussian3x3().weights(), &g[..]);
}

#[test]
fn sobel_is_separable() {
    // smoothing along columns then differencing along rows equals Sobel
    let mut rng = SplitMix64::new(5);
    let rows: Vec<Vec<f64>> = (0..9).map(|_| (0..11).map(|_| rng.normal()).collect()).collect();
    let img = Grid::matrix(&rows).unwrap();
    let valid = ConvGeometry::valid(2);
    let col_smooth = OperatorBank::single(vec![1, 3], binomial1d().weights().to_vec()).unwrap();
    let row_diff = OperatorBank::single(vec![3, 1], derivative1d().weights().to_vec()).unwrap();
    let staged = cross_correlate(&cross_correlate(&img, &col_smooth, &valid).unwrap(), &row_diff, &valid).unwrap();
    let direct = cross_correlate(&img, &sobel2d(SobelDirection::Vertical), &valid).unwrap();
    assert_eq!(staged.shape(), direct.shape());
    for (a, b) in staged.values().iter().zip(direct.values()) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

fn grid_strategy(rank: usize) -> impl Strategy<Value = (Grid, OperatorBank)> {
    (any::<u64>()).prop_map(move |seed| {
        let mut rng = SplitMix64::new(seed);
        let (x, bank, _, _) = random_case(&mut rng, rank, false);
        (x, bank)
    })
}

proptest! {
    #[test]
    fn correlation_is_linear_in_input((x, bank) in (1usize..=3).prop_flat_map(grid_strategy), a in -3.0f64..3.0) {
        let geom = ConvGeometry::valid(x.shape().rank());
        let scaled = Grid::new(x.shape().clone(), x.values().iter().map(|v| a * v).collect()).unwrap();
        let lhs = cross_correlate(&scaled, &bank, &geom).unwrap();
        let rhs = cross_correlate(&x, &bank, &geom).unwrap();
        for (l, r) in lhs.values().iter().zip(rhs.values()) {
            prop_assert!((l - a * r).abs() <= 1e-12 * (a * r).abs().max(1.0));
        }
        let doubled = Grid::new(x.shape().clone(), x.values().iter().map(|v| v + v).collect()).unwrap();
        let twice = cross_correlate(&doubled, &bank, &geom).unwrap();
        for (t, r) in twice.values().iter().zip(rhs.values()) {
            prop_assert_eq!(*t, 2.0 * r);
        }
    }

    #[test]
    fn convolution_is_rotated_correlation((x, bank) in (1usize..=3).prop_flat_map(grid_strategy)) {
        let geom = ConvGeometry::valid(x.shape().rank());
        prop_assert_eq!(convolve(&x, &bank, &geom).unwrap(), cross_correlate(&x, &bank.rotate180(), &geom).unwrap());
        prop_assert_eq!(bank.rotate180().rotate180(), bank.clone());
    }
}
