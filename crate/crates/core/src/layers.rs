//! Forward and backward passes of the individual network blocks.
//!
//! Each backward function receives the gradient of the loss with respect to
//! the block's output and returns gradients with respect to its parameters
//! and its input.

use std::fmt;
use std::str::FromStr;

use crate::conv::{self, ConvGeometry, Dims, OperatorBank};
use crate::error::{Error, Result};
use crate::grid::{as_rank3, Grid, Shape};

/// Elementwise (or, for softmax, vector-wise) activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Linear,
    /// Normalized exponential over a dense block's outputs. Only valid as
    /// the final activation of a network.
    Softmax,
}

impl Activation {
    pub const ELEMENTWISE: [Activation; 4] = [
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Relu,
        Activation::Linear,
    ];

    pub fn is_elementwise(self) -> bool {
        self != Activation::Softmax
    }

    /// Scalar activation. Softmax of a single value is 1.
    pub fn scalar(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Linear => z,
            Activation::Softmax => 1.0,
        }
    }

    pub fn apply(self, z: &[f64]) -> Vec<f64> {
        match self {
            Activation::Softmax => softmax(z),
            _ => z.iter().map(|&x| self.scalar(x)).collect(),
        }
    }

    /// Product of the activation Jacobian with `upstream`.
    ///
    /// `pre` holds pre-activation values and `post` the activated values.
    pub fn backward(self, pre: &[f64], post: &[f64], upstream: &[f64]) -> Vec<f64> {
        match self {
            Activation::Sigmoid | Activation::Tanh => post
                .iter()
                .zip(upstream)
                .map(|(&a, &g)| g * self.derivative_value(a))
                .collect(),
            Activation::Relu => pre
                .iter()
                .zip(upstream)
                .map(|(&z, &g)| g * self.derivative_value(z))
                .collect(),
            Activation::Linear => upstream.to_vec(),
            Activation::Softmax => {
                let dot: f64 = post.iter().zip(upstream).map(|(a, g)| a * g).sum();
                post.iter().zip(upstream).map(|(&a, &g)| a * (g - dot)).collect()
            }
        }
    }

    /// Scalar derivative. Sigmoid and tanh take the activated value, ReLU
    /// takes the pre-activation value; linear ignores its argument.
    fn derivative_value(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => x * (1.0 - x),
            Activation::Tanh => 1.0 - x * x,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear | Activation::Softmax => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::parse(format!("unknown activation {other:?}"))),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Elementwise activation of a grid.
pub fn activate(x: &Grid, kind: Activation) -> Result<Grid> {
    if !kind.is_elementwise() {
        return Err(Error::invalid("softmax cannot activate a feature map"));
    }
    Grid::from_parts(x.shape().clone(), kind.apply(x.values()))
}

/// Elementwise activation derivative under the value-form contract: the
/// activated values for sigmoid and tanh, pre-activation values for ReLU.
pub fn activate_derivative(x: &Grid, kind: Activation) -> Result<Grid> {
    if !kind.is_elementwise() {
        return Err(Error::invalid("softmax has no elementwise derivative"));
    }
    let d = x.values().iter().map(|&v| kind.derivative_value(v)).collect();
    Grid::from_parts(x.shape().clone(), d)
}

/// Operator bank, per-output-channel bias and geometry of a convolution block.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlockParams {
    pub bank: OperatorBank,
    pub bias: Vec<f64>,
    pub geom: ConvGeometry,
}

impl ConvBlockParams {
    pub fn new(bank: OperatorBank, bias: Vec<f64>, geom: ConvGeometry) -> Result<Self> {
        if bias.len() != bank.out_channels() {
            return Err(Error::shape(format!(
                "bias has {} entries for {} output channels",
                bias.len(),
                bank.out_channels()
            )));
        }
        Ok(Self { bank, bias, geom })
    }
}

/// Cross-correlation plus bias.
pub fn conv_forward(input: &Grid, params: &ConvBlockParams) -> Result<Grid> {
    let (dims, out_shape) = Dims::resolve(input.shape(), &params.bank, &params.geom)?;
    let x = conv::padded_values(input, &params.geom)?;
    let mut out = conv::correlate_padded(&x, params.bank.weights(), &dims);
    let vol = out_shape.volume();
    for (j, chunk) in out.chunks_exact_mut(vol).enumerate() {
        let b = params.bias[j];
        for v in chunk {
            *v += b;
        }
    }
    Grid::from_parts(out_shape, out)
}

/// Gradients of a convolution block.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    pub bank: OperatorBank,
    pub bias: Vec<f64>,
    pub input: Grid,
}

/// Given the gradient at the block output, returns gradients for the bank,
/// the bias and the block input. Strided outputs scatter their gradient
/// back to the window positions they read.
pub fn conv_backward(d_out: &Grid, input: &Grid, params: &ConvBlockParams) -> Result<ConvGrads> {
    let (bank, bias) = conv_param_grads(d_out, input, params)?;
    let (dims, _) = Dims::resolve(input.shape(), &params.bank, &params.geom)?;
    let dx_padded = conv::input_grad_padded(params.bank.weights(), d_out.values(), &dims);
    let dx = if params.geom.is_unpadded() {
        dx_padded
    } else {
        conv::crop(
            &dx_padded,
            &dims.input,
            &as_rank3(params.geom.pad(), 0).0,
            input.shape(),
        )
    };
    Ok(ConvGrads {
        bank,
        bias,
        input: Grid::from_parts(input.shape().clone(), dx)?,
    })
}

/// Kernel and bias gradients only, for a block whose input needs none.
pub fn conv_param_grads(d_out: &Grid, input: &Grid, params: &ConvBlockParams) -> Result<(OperatorBank, Vec<f64>)> {
    let (dims, out_shape) = Dims::resolve(input.shape(), &params.bank, &params.geom)?;
    if d_out.shape() != &out_shape {
        return Err(Error::shape(format!(
            "output gradient has shape {}, block output is {out_shape}",
            d_out.shape()
        )));
    }
    let x = conv::padded_values(input, &params.geom)?;
    let dw = conv::weight_grad_padded(&x, d_out.values(), &dims);
    let bias = d_out
        .values()
        .chunks_exact(out_shape.volume())
        .map(|c| c.iter().sum())
        .collect();
    let bank = &params.bank;
    let grad = OperatorBank::new(bank.in_channels(), bank.out_channels(), bank.kernel_extents().to_vec(), dw)?;
    Ok((grad, bias))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Max,
    Average,
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolKind::Max => "max",
            PoolKind::Average => "avg",
        })
    }
}

/// Non-overlapping pooling windows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: Vec<usize>,
    pub kind: PoolKind,
}

impl PoolSpec {
    pub fn new(window: Vec<usize>, kind: PoolKind) -> Result<Self> {
        if window.is_empty() || window.len() > 3 || window.contains(&0) {
            return Err(Error::invalid(format!("bad pooling window {window:?}")));
        }
        Ok(Self { window, kind })
    }

    /// `floor(n / n_p)` per axis.
    pub fn output_shape(&self, input: &Shape) -> Result<Shape> {
        if input.rank() != self.window.len() {
            return Err(Error::shape(format!(
                "pooling window {:?} does not match input rank {}",
                self.window,
                input.rank()
            )));
        }
        let ext = input
            .extents()
            .iter()
            .zip(&self.window)
            .map(|(&n, &w)| {
                if w > n {
                    Err(Error::shape(format!("pooling window {w} exceeds extent {n}")))
                } else {
                    Ok(n / w)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Shape::new(ext, input.channels())
    }
}

/// For each pooled element, the flat input index of the selected maximum.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArgmaxCache {
    pub indices: Vec<usize>,
}

struct PoolGeom {
    ie: [usize; 3],
    oe: [usize; 3],
    w: [usize; 3],
    channels: usize,
}

impl PoolGeom {
    fn new(input: &Shape, out: &Shape, spec: &PoolSpec) -> Self {
        Self {
            ie: as_rank3(input.extents(), 1).0,
            oe: as_rank3(out.extents(), 1).0,
            w: as_rank3(&spec.window, 1).0,
            channels: input.channels(),
        }
    }

    /// Calls `f(out_index, window_origin, row_offsets)`; each window row
    /// spans `w[2]` contiguous inputs starting at `origin + offset`, rows in
    /// row-major order.
    fn for_each_window_start(&self, mut f: impl FnMut(usize, usize, &[usize])) {
        let [_, i1, i2] = self.ie;
        let [o0, o1, o2] = self.oe;
        let [w0, w1, w2] = self.w;
        let in_vol: usize = self.ie.iter().product();
        let rows: Vec<usize> = (0..w0)
            .flat_map(|u| (0..w1).map(move |v| (u * i1 + v) * i2))
            .collect();
        let mut out = 0;
        for c in 0..self.channels {
            for a in 0..o0 {
                for b in 0..o1 {
                    let base = c * in_vol + ((a * w0) * i1 + b * w1) * i2;
                    for d in 0..o2 {
                        f(out, base + d * w2, &rows);
                        out += 1;
                    }
                }
            }
        }
    }

    /// Calls `f(out_index, input_indices_in_row_major_window_order)`.
    fn for_each_window(&self, mut f: impl FnMut(usize, &[usize])) {
        let [_, i1, i2] = self.ie;
        let [o0, o1, o2] = self.oe;
        let [w0, w1, w2] = self.w;
        let in_vol: usize = self.ie.iter().product();
        let mut idx = Vec::with_capacity(w0 * w1 * w2);
        let mut out = 0;
        for c in 0..self.channels {
            for a in 0..o0 {
                for b in 0..o1 {
                    for d in 0..o2 {
                        idx.clear();
                        for u in 0..w0 {
                            for v in 0..w1 {
                                let row = c * in_vol + ((a * w0 + u) * i1 + (b * w1 + v)) * i2;
                                for t in 0..w2 {
                                    idx.push(row + d * w2 + t);
                                }
                            }
                        }
                        f(out, &idx);
                        out += 1;
                    }
                }
            }
        }
    }
}

/// Pools each window; trailing elements past `n_p · floor(n / n_p)` are
/// dropped. Max pooling returns the argmax cache, ties going to the first
/// element in row-major window order.
pub fn pool_forward(input: &Grid, spec: &PoolSpec) -> Result<(Grid, Option<ArgmaxCache>)> {
    let out_shape = spec.output_shape(input.shape())?;
    let geom = PoolGeom::new(input.shape(), &out_shape, spec);
    let x = input.values();
    let mut out = vec![0.0; out_shape.len()];
    match spec.kind {
        PoolKind::Max => {
            let mut indices = vec![0; out_shape.len()];
            geom.for_each_window_start(|o, start, rows| {
                let mut best = start;
                for &r in rows {
                    for k in start + r..start + r + geom.w[2] {
                        if x[k] > x[best] {
                            best = k;
                        }
                    }
                }
                indices[o] = best;
                out[o] = x[best];
            });
            Ok((
                Grid::from_parts(out_shape, out)?,
                Some(ArgmaxCache { indices }),
            ))
        }
        PoolKind::Average => {
            geom.for_each_window(|o, win| {
                let s: f64 = win.iter().map(|&k| x[k]).sum();
                out[o] = s / win.len() as f64;
            });
            Ok((Grid::from_parts(out_shape, out)?, None))
        }
    }
}

/// Routes pooled gradients back to the pooling input.
pub fn pool_backward(
    d_out: &Grid,
    cache: Option<&ArgmaxCache>,
    spec: &PoolSpec,
    input_shape: &Shape,
) -> Result<Grid> {
    let out_shape = spec.output_shape(input_shape)?;
    if d_out.shape() != &out_shape {
        return Err(Error::shape(format!(
            "pooled gradient has shape {}, expected {out_shape}",
            d_out.shape()
        )));
    }
    let g = d_out.values();
    let mut dx = vec![0.0; input_shape.len()];
    match spec.kind {
        PoolKind::Max => {
            let cache = cache.ok_or_else(|| Error::invalid("max pooling backward needs the argmax cache"))?;
            if cache.indices.len() != g.len() {
                return Err(Error::shape("argmax cache does not match pooled gradient"));
            }
            for (&k, &gv) in cache.indices.iter().zip(g) {
                dx[k] += gv;
            }
        }
        PoolKind::Average => {
            let geom = PoolGeom::new(input_shape, &out_shape, spec);
            geom.for_each_window(|o, win| {
                let share = g[o] / win.len() as f64;
                for &k in win {
                    dx[k] += share;
                }
            });
        }
    }
    Grid::from_parts(input_shape.clone(), dx)
}

/// Affine map `d = W v + b` with `W` stored row-major as `n_out × n_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn new(n_in: usize, n_out: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != n_in * n_out || bias.len() != n_out {
            return Err(Error::shape(format!(
                "dense {n_in}->{n_out} needs {} weights and {n_out} biases, got {} and {}",
                n_in * n_out,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            n_in,
            n_out,
            weights,
            bias,
        })
    }
}

pub fn dense_forward(v: &[f64], params: &DenseParams) -> Result<Vec<f64>> {
    if v.len() != params.n_in {
        return Err(Error::shape(format!(
            "dense block expects {} inputs, got {}",
            params.n_in,
            v.len()
        )));
    }
    Ok(params
        .weights
        .chunks_exact(params.n_in)
        .zip(&params.bias)
        .map(|(row, &b)| row.iter().zip(v).map(|(w, x)| w * x).sum::<f64>() + b)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: Vec<f64>,
}

/// `dW[o,i] = dd[o]·v[i]`, `db = dd`, `dv[i] = Σ_o dd[o]·W[o,i]`.
pub fn dense_backward(dd: &[f64], v: &[f64], params: &DenseParams) -> Result<DenseGrads> {
    if dd.len() != params.n_out || v.len() != params.n_in {
        return Err(Error::shape("dense backward dimension mismatch"));
    }
    let mut weights = Vec::with_capacity(params.weights.len());
    for &g in dd {
        weights.extend(v.iter().map(|&x| g * x));
    }
    let mut input = vec![0.0; params.n_in];
    for (row, &g) in params.weights.chunks_exact(params.n_in).zip(dd) {
        if g == 0.0 {
            continue;
        }
        for (acc, &w) in input.iter_mut().zip(row) {
            *acc += g * w;
        }
    }
    Ok(DenseGrads {
        weights,
        bias: dd.to_vec(),
        input,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Sigmoid.scalar(0.0), 0.5);
        assert_eq!(Activation::Tanh.scalar(0.0), 0.0);
        assert_eq!(Activation::Relu.scalar(-2.0), 0.0);
        assert_eq!(Activation::Relu.scalar(3.0), 3.0);
        assert_eq!(Activation::Linear.scalar(-1.5), -1.5);
        for z in [-3.7, -0.2, 0.9, 12.0] {
            let s = sigmoid(z) + sigmoid(-z);
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn activation_derivative_contract() {
        let g = |v: f64, k| {
            activate_derivative(&Grid::vector(vec![v]).unwrap(), k).unwrap().values()[0]
        };
        assert_eq!(g(0.5, Activation::Sigmoid), 0.25);
        assert_eq!(g(0.0, Activation::Relu), 0.0);
        assert_eq!(g(0.0, Activation::Tanh), 1.0);
        assert_eq!(g(2.0, Activation::Relu), 1.0);
        assert!(activate(&Grid::vector(vec![1.0]).unwrap(), Activation::Softmax).is_err());
    }

    #[test]
    fn softmax_jacobian_matches_differences() {
        let z = [0.3, -1.2, 2.0];
        let up = [0.7, -0.1, 0.4];
        let post = softmax(&z);
        let jvp = Activation::Softmax.backward(&z, &post, &up);
        for k in 0..3 {
            let h = 1e-6;
            let mut zp = z;
            zp[k] += h;
            let mut zm = z;
            zm[k] -= h;
            let f = |zz: &[f64]| softmax(zz).iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            assert!((fd - jvp[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_bank_isolates_bias() {
        let x = Grid::vector(vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let p = ConvBlockParams::new(
            OperatorBank::zeros(1, 1, vec![2]).unwrap(),
            vec![7.0],
            ConvGeometry::valid(1),
        )
        .unwrap();
        let out = conv_forward(&x, &p).unwrap();
        assert_eq!(out.values(), &[7.0, 7.0, 7.0]);
        assert!(ConvBlockParams::new(
            OperatorBank::zeros(1, 2, vec![2]).unwrap(),
            vec![0.0],
            ConvGeometry::valid(1)
        )
        .is_err());
    }

    #[test]
    fn conv_block_shape_of_illustrated_example() {
        let x = Grid::zeros(Shape::new(vec![4, 4], 3).unwrap());
        let p = ConvBlockParams::new(
            OperatorBank::zeros(3, 2, vec![3, 3]).unwrap(),
            vec![0.0, 0.0],
            ConvGeometry::valid(2),
        )
        .unwrap();
        assert_eq!(conv_forward(&x, &p).unwrap().shape().to_string(), "2x2x2ch");
    }

    #[test]
    fn conv_backward_all_ones() {
        let x = Grid::vector(vec![1.0; 3]).unwrap();
        let p = ConvBlockParams::new(
            OperatorBank::single(vec![2], vec![0.3, -0.4]).unwrap(),
            vec![0.0],
            ConvGeometry::valid(1),
        )
        .unwrap();
        let g = conv_backward(&Grid::vector(vec![1.0; 2]).unwrap(), &x, &p).unwrap();
        assert_eq!(g.bank.weights(), &[2.0, 2.0]);
        assert_eq!(g.bias, vec![2.0]);
        let z = conv_backward(&Grid::vector(vec![0.0; 2]).unwrap(), &x, &p).unwrap();
        assert!(z.bank.weights().iter().chain(&z.bias).chain(z.input.values()).all(|&v| v == 0.0));
    }

    #[test]
    fn pooling_examples() {
        let a = Grid::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let max = PoolSpec::new(vec![2, 2], PoolKind::Max).unwrap();
        let avg = PoolSpec::new(vec![2, 2], PoolKind::Average).unwrap();
        let (p, cache) = pool_forward(&a, &max).unwrap();
        assert_eq!(p.values(), &[4.0]);
        assert_eq!(cache.as_ref().unwrap().indices, vec![3]);
        let (p, c) = pool_forward(&a, &avg).unwrap();
        assert_eq!(p.values(), &[2.5]);
        assert!(c.is_none());

        let rotor = Grid::zeros(Shape::new(vec![238], 64).unwrap());
        let (p, _) = pool_forward(&rotor, &PoolSpec::new(vec![2], PoolKind::Max).unwrap()).unwrap();
        assert_eq!(p.shape().extents(), &[119]);

        assert!(pool_forward(&a, &PoolSpec::new(vec![3, 1], PoolKind::Max).unwrap()).is_err());
    }

    #[test]
    fn pool_backward_routing() {
        // maximum in row 2, column 1 of the window
        let a = Grid::matrix(&[vec![0.0, 1.0], vec![5.0, 2.0]]).unwrap();
        let spec = PoolSpec::new(vec![2, 2], PoolKind::Max).unwrap();
        let (_, cache) = pool_forward(&a, &spec).unwrap();
        let d = pool_backward(&Grid::matrix(&[vec![0.75]]).unwrap(), cache.as_ref(), &spec, a.shape()).unwrap();
        assert_eq!(d.values(), &[0.0, 0.0, 0.75, 0.0]);
        assert!(pool_backward(&Grid::matrix(&[vec![0.75]]).unwrap(), None, &spec, a.shape()).is_err());

        let avg = PoolSpec::new(vec![2, 2], PoolKind::Average).unwrap();
        let d = pool_backward(&Grid::matrix(&[vec![4.0]]).unwrap(), None, &avg, a.shape()).unwrap();
        assert_eq!(d.values(), &[1.0; 4]);
    }

    #[test]
    fn max_pool_tie_goes_to_first() {
        let a = Grid::vector(vec![3.0, 3.0, 1.0, 1.0]).unwrap();
        let (_, cache) = pool_forward(&a, &PoolSpec::new(vec![2], PoolKind::Max).unwrap()).unwrap();
        assert_eq!(cache.unwrap().indices, vec![0, 2]);
    }

    #[test]
    fn truncated_elements_get_zero_gradient() {
        let a = Grid::vector(vec![1.0, 2.0, 3.0, 4.0, 9.0]).unwrap();
        for kind in [PoolKind::Max, PoolKind::Average] {
            let spec = PoolSpec::new(vec![2], kind).unwrap();
            let (p, cache) = pool_forward(&a, &spec).unwrap();
            assert_eq!(p.shape().extents(), &[2]);
            let d = pool_backward(&Grid::vector(vec![1.0, 1.0]).unwrap(), cache.as_ref(), &spec, a.shape()).unwrap();
            assert_eq!(d.values()[4], 0.0);
        }
    }

    #[test]
    fn dense_examples() {
        let p = DenseParams::new(2, 1, vec![1.0, -1.0], vec![0.5]).unwrap();
        assert_eq!(dense_forward(&[3.0, 2.0], &p).unwrap(), vec![1.5]);
        let z = DenseParams::new(2, 2, vec![0.0; 4], vec![0.1, 0.2]).unwrap();
        assert_eq!(dense_forward(&[3.0, 2.0], &z).unwrap(), vec![0.1, 0.2]);
        assert!(dense_forward(&[1.0], &p).is_err());

        // sigmoid head at 0.5 with target 0 and the halved squared error
        let delta = (0.5 - 0.0) * 0.5 * (1.0 - 0.5);
        assert_eq!(delta, 0.125);
        let g = dense_backward(&[delta], &[2.0, 4.0], &p).unwrap();
        assert_eq!(g.weights, vec![0.25, 0.5]);
        assert_eq!(g.bias, vec![0.125]);
        assert_eq!(g.input, vec![0.125, -0.125]);

        let g = dense_backward(&[0.0], &[2.0, 4.0], &p).unwrap();
        assert!(g.weights.iter().chain(&g.bias).chain(&g.input).all(|&v| v == 0.0));
    }
}
