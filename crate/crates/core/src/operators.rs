//! Named finite-difference, smoothing and pattern operators.

use crate::conv::OperatorBank;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Orientation of a Sobel operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SobelDirection {
    /// First derivative along rows (responds to horizontal edges).
    Vertical,
    /// Transpose of the vertical operator.
    Horizontal,
}

/// Central difference `(1, 0, −1)`.
pub fn derivative1d() -> OperatorBank {
    OperatorBank::single(vec![3], vec![1.0, 0.0, -1.0]).expect("static kernel")
}

/// Binomial smoother `(1, 2, 1)`.
pub fn binomial1d() -> OperatorBank {
    OperatorBank::single(vec![3], vec![1.0, 2.0, 1.0]).expect("static kernel")
}

pub fn sobel2d(direction: SobelDirection) -> OperatorBank {
    #[rustfmt::skip]
    let vertical = vec![
         1.0,  2.0,  1.0,
         0.0,  0.0,  0.0,
        -1.0, -2.0, -1.0,
    ];
    let w = match direction {
        SobelDirection::Vertical => vertical,
        SobelDirection::Horizontal => (0..9).map(|k| vertical[(k % 3) * 3 + k / 3]).collect(),
    };
    OperatorBank::single(vec![3, 3], w).expect("static kernel")
}

/// Five-point Laplacian stencil.
pub fn laplacian2d() -> OperatorBank {
    #[rustfmt::skip]
    let w = vec![
        0.0,  1.0, 0.0,
        1.0, -4.0, 1.0,
        0.0,  1.0, 0.0,
    ];
    OperatorBank::single(vec![3, 3], w).expect("static kernel")
}

/// The exact `1/16 · [[1,2,1],[2,4,2],[1,2,1]]` blur.
pub fn gaussian3x3() -> OperatorBank {
    let w = [1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0]
        .iter()
        .map(|v| v / 16.0)
        .collect();
    OperatorBank::single(vec![3, 3], w).expect("static kernel")
}

/// Parameters of a sampled Gaussian kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSpec {
    pub size: Vec<usize>,
    pub sigma: f64,
}

impl GaussianSpec {
    pub fn new(size: Vec<usize>, sigma: f64) -> Result<Self> {
        if size.is_empty() || size.len() > 3 {
            return Err(Error::invalid("gaussian rank must be 1..=3"));
        }
        if size.iter().any(|&n| n % 2 == 0) {
            return Err(Error::invalid(format!("gaussian size must be odd, got {size:?}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { size, sigma })
    }

    pub fn isotropic(rank: usize, size: usize, sigma: f64) -> Result<Self> {
        Self::new(vec![size; rank], sigma)
    }
}

/// Samples the isotropic Gaussian density at integer offsets around the
/// center and renormalizes the weights to sum to one.
pub fn gaussian(spec: &GaussianSpec) -> Result<OperatorBank> {
    let spec = GaussianSpec::new(spec.size.clone(), spec.sigma)?;
    let n: usize = spec.size.iter().product();
    let two_s2 = 2.0 * spec.sigma * spec.sigma;
    let mut w = Vec::with_capacity(n);
    for flat in 0..n {
        let mut rem = flat;
        let mut r2 = 0.0;
        for &ext in spec.size.iter().rev() {
            let off = (rem % ext) as f64 - (ext / 2) as f64;
            r2 += off * off;
            rem /= ext;
        }
        w.push((-r2 / two_s2).exp());
    }
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    OperatorBank::single(spec.size, w)
}

/// Uses a binary mask as a matching kernel: over a binary input the
/// response peaks, at the count of ones in the mask, where the pattern occurs.
pub fn pattern_operator(mask: &Grid) -> Result<OperatorBank> {
    if let Some(v) = mask.values().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!("pattern mask must be binary, found {v}")));
    }
    OperatorBank::from_kernel_grid(mask)
}

/// Resolves a named operator id. `rank` selects the dimension of
/// `gaussian:<size>:<sigma>` kernels and is ignored otherwise.
pub fn named_operator(id: &str, rank: usize) -> Result<OperatorBank> {
    match id {
        "derivative1d" => Ok(derivative1d()),
        "binomial1d" => Ok(binomial1d()),
        "sobel-v" => Ok(sobel2d(SobelDirection::Vertical)),
        "sobel-h" => Ok(sobel2d(SobelDirection::Horizontal)),
        "laplacian" => Ok(laplacian2d()),
        "gaussian3x3" => Ok(gaussian3x3()),
        other => {
            let parts: Vec<&str> = other.split(':').collect();
            match parts.as_slice() {
                ["gaussian", size, sigma] => {
                    let size: usize = size
                        .parse()
                        .map_err(|_| Error::parse(format!("bad gaussian size in {other:?}")))?;
                    let sigma: f64 = sigma
                        .parse()
                        .map_err(|_| Error::parse(format!("bad gaussian sigma in {other:?}")))?;
                    gaussian(&GaussianSpec::isotropic(rank, size, sigma)?)
                }
                _ => Err(Error::parse(format!("unknown operator id {other:?}"))),
            }
        }
    }
}

/// Applies a single-kernel bank to each of `channels` channels separately.
pub fn depthwise(bank: &OperatorBank, channels: usize) -> Result<OperatorBank> {
    if bank.in_channels() != 1 || bank.out_channels() != 1 {
        return Err(Error::invalid("depthwise expansion needs a single-kernel bank"));
    }
    let kv = bank.kernel_volume();
    let mut w = vec![0.0; channels * channels * kv];
    for c in 0..channels {
        let start = (c * channels + c) * kv;
        w[start..start + kv].copy_from_slice(bank.weights());
    }
    OperatorBank::new(channels, channels, bank.kernel_extents().to_vec(), w)
}
