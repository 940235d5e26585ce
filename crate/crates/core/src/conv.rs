//! Valid, zero-padded and strided cross-correlation over rank-1/2/3 grids.
//!
//! Cross-correlation is the primitive; true convolution is cross-correlation
//! with every kernel rotated by 180 degrees. Every rank is handled by one
//! kernel that views the data as rank 3 with leading unit axes.
//!
//! For input channel `i`, output channel `j` and output position `x`:
//!
//! ```text
//! out[j][x] = Σ_i Σ_k  w[j][i][k] · in_padded[i][x·s + k]
//! ```
//!
//! Accumulation within one output element runs over input channels first and
//! then over kernel offsets in row-major order, so results are reproducible
//! bit for bit.

use std::path::Path;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::grid::{as_rank3, Grid, Shape, MAX_RANK};

const BANK_MAGIC: &[u8; 4] = b"OPB1";

/// A `p × q` collection of spatial kernels.
///
/// Weights are stored with the output channel outermost, then the input
/// channel, then the kernel's spatial axes in row-major order. This is also
/// the on-disk order.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorBank {
    in_channels: usize,
    out_channels: usize,
    kernel: Vec<usize>,
    weights: Vec<f64>,
}

impl OperatorBank {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: Vec<usize>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::shape("operator bank needs p, q >= 1"));
        }
        if kernel.is_empty() || kernel.len() > MAX_RANK || kernel.contains(&0) {
            return Err(Error::shape(format!("bad kernel extents {kernel:?}")));
        }
        let expected = in_channels * out_channels * kernel.iter().product::<usize>();
        if weights.len() != expected {
            return Err(Error::shape(format!(
                "operator bank {in_channels}x{out_channels} with kernel {kernel:?} needs {expected} weights, got {}",
                weights.len()
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            weights,
        })
    }

    /// Single-input single-output bank wrapping one kernel.
    pub fn single(kernel: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        Self::new(1, 1, kernel, weights)
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: Vec<usize>) -> Result<Self> {
        let n = in_channels * out_channels * kernel.iter().product::<usize>();
        Self::new(in_channels, out_channels, kernel, vec![0.0; n])
    }

    /// Bank from a single-channel grid used as the only kernel.
    pub fn from_kernel_grid(kernel: &Grid) -> Result<Self> {
        if kernel.shape().channels() != 1 {
            return Err(Error::shape("kernel grid must have one channel"));
        }
        Self::single(kernel.shape().extents().to_vec(), kernel.values().to_vec())
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn rank(&self) -> usize {
        self.kernel.len()
    }

    pub fn kernel_extents(&self) -> &[usize] {
        &self.kernel
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Kernel linking input channel `i` to output channel `j`.
    pub fn kernel(&self, i: usize, j: usize) -> &[f64] {
        let kv = self.kernel_volume();
        let start = (j * self.in_channels + i) * kv;
        &self.weights[start..start + kv]
    }

    /// The `(i, j)` kernel as a single-channel grid.
    pub fn kernel_grid(&self, i: usize, j: usize) -> Grid {
        let shape = Shape::new(self.kernel.clone(), 1).expect("validated extents");
        Grid::from_parts(shape, self.kernel(i, j).to_vec()).expect("matching length")
    }

    /// Reverses every kernel along all of its spatial axes.
    pub fn rotate180(&self) -> OperatorBank {
        let kv = self.kernel_volume();
        let mut weights = Vec::with_capacity(self.weights.len());
        for chunk in self.weights.chunks_exact(kv) {
            weights.extend(chunk.iter().rev());
        }
        OperatorBank {
            weights,
            ..self.clone()
        }
    }

    /// Swaps the roles of input and output channels.
    pub fn transpose_channels(&self) -> OperatorBank {
        let kv = self.kernel_volume();
        let (p, q) = (self.in_channels, self.out_channels);
        let mut weights = Vec::with_capacity(self.weights.len());
        for i in 0..p {
            for j in 0..q {
                weights.extend_from_slice(self.kernel(i, j));
            }
        }
        debug_assert_eq!(weights.len(), p * q * kv);
        OperatorBank {
            in_channels: q,
            out_channels: p,
            kernel: self.kernel.clone(),
            weights,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(BANK_MAGIC);
        w.u8(self.rank() as u8);
        w.usize_as_u32(self.in_channels)?;
        w.usize_as_u32(self.out_channels)?;
        for &e in &self.kernel {
            w.usize_as_u32(e)?;
        }
        w.f64s(&self.weights);
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(BANK_MAGIC)?;
        let at = r.offset();
        let rank = r.u8("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::format(at, format!("bad rank {rank}")));
        }
        let p = r.u32("p")? as usize;
        let q = r.u32("q")? as usize;
        let mut kernel = Vec::with_capacity(rank);
        for _ in 0..rank {
            kernel.push(r.u32("kernel extent")? as usize);
        }
        let n = p
            .checked_mul(q)
            .and_then(|pq| pq.checked_mul(kernel.iter().product()))
            .ok_or_else(|| Error::format(at, "weight count overflow"))?;
        let weights = r.f64s(n, "weights")?;
        r.expect_end()?;
        if let Some(index) = weights.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index,
                value: weights[index],
            });
        }
        Self::new(p, q, kernel, weights).map_err(|e| Error::format(at, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Per-axis zero padding and stride.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pad: Vec<usize>,
    stride: Vec<usize>,
}

impl ConvGeometry {
    pub fn new(pad: Vec<usize>, stride: Vec<usize>) -> Result<Self> {
        if pad.len() != stride.len() || pad.is_empty() || pad.len() > MAX_RANK {
            return Err(Error::shape(format!(
                "pad {pad:?} and stride {stride:?} must have equal length in 1..=3"
            )));
        }
        if stride.contains(&0) {
            return Err(Error::invalid("stride must be >= 1"));
        }
        Ok(Self { pad, stride })
    }

    /// No padding, unit stride.
    pub fn valid(rank: usize) -> Self {
        Self {
            pad: vec![0; rank],
            stride: vec![1; rank],
        }
    }

    pub fn uniform(rank: usize, pad: usize, stride: usize) -> Result<Self> {
        Self::new(vec![pad; rank], vec![stride; rank])
    }

    pub fn rank(&self) -> usize {
        self.pad.len()
    }

    pub fn pad(&self) -> &[usize] {
        &self.pad
    }

    pub fn stride(&self) -> &[usize] {
        &self.stride
    }

    pub fn is_unpadded(&self) -> bool {
        self.pad.iter().all(|&p| p == 0)
    }

    /// Output extents for an input of `extents` under kernel `kernel`.
    pub fn output_extents(&self, extents: &[usize], kernel: &[usize]) -> Result<Vec<usize>> {
        if extents.len() != self.rank() || kernel.len() != self.rank() {
            return Err(Error::shape(format!(
                "rank mismatch: input {extents:?}, kernel {kernel:?}, geometry rank {}",
                self.rank()
            )));
        }
        (0..self.rank())
            .map(|k| output_extent(extents[k], kernel[k], self.pad[k], self.stride[k]))
            .collect()
    }
}

/// `floor((n_in + 2·pad − n_k) / stride) + 1`.
pub fn output_extent(n_in: usize, n_k: usize, pad: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    let padded = n_in + 2 * pad;
    if n_k == 0 || n_k > padded {
        return Err(Error::shape(format!(
            "kernel extent {n_k} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - n_k) / stride + 1)
}

/// Dimensions of one correlation, normalized to rank 3.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Dims {
    pub p: usize,
    pub q: usize,
    /// padded input extents
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub output: [usize; 3],
}

impl Dims {
    pub(crate) fn resolve(
        input: &Shape,
        bank: &OperatorBank,
        geom: &ConvGeometry,
    ) -> Result<(Dims, Shape)> {
        let rank = input.rank();
        if bank.rank() != rank || geom.rank() != rank {
            return Err(Error::shape(format!(
                "rank mismatch: input rank {rank}, kernel rank {}, geometry rank {}",
                bank.rank(),
                geom.rank()
            )));
        }
        if input.channels() != bank.in_channels() {
            return Err(Error::shape(format!(
                "input has {} channels, operator bank expects {}",
                input.channels(),
                bank.in_channels()
            )));
        }
        let out_ext = geom.output_extents(input.extents(), bank.kernel_extents())?;
        let padded: Vec<usize> = input
            .extents()
            .iter()
            .zip(geom.pad())
            .map(|(&n, &p)| n + 2 * p)
            .collect();
        let out_shape = Shape::new(out_ext.clone(), bank.out_channels())?;
        Ok((
            Dims {
                p: bank.in_channels(),
                q: bank.out_channels(),
                input: as_rank3(&padded, 1).0,
                kernel: as_rank3(bank.kernel_extents(), 1).0,
                stride: as_rank3(geom.stride(), 1).0,
                output: as_rank3(&out_ext, 1).0,
            },
            out_shape,
        ))
    }

    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }

    fn k_vol(&self) -> usize {
        self.kernel.iter().product()
    }
}

#[cfg(test)]
thread_local! {
    pub(crate) static MAC_COUNT: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

#[inline]
fn count_macs(_n: usize) {
    #[cfg(test)]
    MAC_COUNT.with(|c| c.set(c.get() + _n as u64));
}

/// Forward correlation on an already padded input buffer. The innermost
/// loop runs along the last output axis so unit strides vectorize; each
/// output still accumulates its terms in (channel, kernel) order.
pub(crate) fn correlate_padded(x: &[f64], w: &[f64], d: &Dims) -> Vec<f64> {
    let [_, i1, i2] = d.input;
    let [k0, k1, k2] = d.kernel;
    let [s0, s1, s2] = d.stride;
    let [o0, o1, o2] = d.output;
    let (in_vol, out_vol, kv) = (d.in_vol(), d.out_vol(), d.k_vol());
    let mut out = vec![0.0; d.q * out_vol];
    for j in 0..d.q {
        let out_j = &mut out[j * out_vol..(j + 1) * out_vol];
        for a in 0..o0 {
            for b in 0..o1 {
                let orow = (a * o1 + b) * o2;
                let row = &mut out_j[orow..orow + o2];
                for i in 0..d.p {
                    let xi = &x[i * in_vol..(i + 1) * in_vol];
                    let wij = &w[(j * d.p + i) * kv..(j * d.p + i + 1) * kv];
                    for u in 0..k0 {
                        for v in 0..k1 {
                            let xrow = ((a * s0 + u) * i1 + (b * s1 + v)) * i2;
                            for t in 0..k2 {
                                let wt = wij[(u * k1 + v) * k2 + t];
                                if s2 == 1 {
                                    let xs = &xi[xrow + t..xrow + t + o2];
                                    for (o, xv) in row.iter_mut().zip(xs) {
                                        *o += wt * xv;
                                    }
                                } else {
                                    for (c, o) in row.iter_mut().enumerate() {
                                        *o += wt * xi[xrow + c * s2 + t];
                                    }
                                }
                                count_macs(o2);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Dot product over four interleaved partial sums, combined in a fixed order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            lanes[l] += x[l] * y[l];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// Gradient of `Σ dout · correlate(x, w)` with respect to `w`.
pub(crate) fn weight_grad_padded(x: &[f64], dout: &[f64], d: &Dims) -> Vec<f64> {
    let [_, i1, i2] = d.input;
    let [k0, k1, k2] = d.kernel;
    let [s0, s1, s2] = d.stride;
    let [o0, o1, o2] = d.output;
    let (in_vol, out_vol, kv) = (d.in_vol(), d.out_vol(), d.k_vol());
    let mut dw = vec![0.0; d.q * d.p * kv];
    for j in 0..d.q {
        let dj = &dout[j * out_vol..(j + 1) * out_vol];
        for i in 0..d.p {
            let xi = &x[i * in_vol..(i + 1) * in_vol];
            let dwij = &mut dw[(j * d.p + i) * kv..(j * d.p + i + 1) * kv];
            for u in 0..k0 {
                for v in 0..k1 {
                    for t in 0..k2 {
                        let mut acc = 0.0;
                        for a in 0..o0 {
                            for b in 0..o1 {
                                let orow = (a * o1 + b) * o2;
                                let xrow = ((a * s0 + u) * i1 + (b * s1 + v)) * i2 + t;
                                if s2 == 1 {
                                    acc += dot(&dj[orow..orow + o2], &xi[xrow..xrow + o2]);
                                } else {
                                    for c in 0..o2 {
                                        acc += dj[orow + c] * xi[xrow + c * s2];
                                    }
                                }
                            }
                        }
                        dwij[(u * k1 + v) * k2 + t] = acc;
                    }
                }
            }
        }
    }
    dw
}

/// Gradient of `Σ dout · correlate(x, w)` with respect to the padded input.
pub(crate) fn input_grad_padded(w: &[f64], dout: &[f64], d: &Dims) -> Vec<f64> {
    let [_, i1, i2] = d.input;
    let [k0, k1, k2] = d.kernel;
    let [s0, s1, s2] = d.stride;
    let [o0, o1, o2] = d.output;
    let (in_vol, out_vol, kv) = (d.in_vol(), d.out_vol(), d.k_vol());
    let mut dx = vec![0.0; d.p * in_vol];
    for i in 0..d.p {
        let dxi = &mut dx[i * in_vol..(i + 1) * in_vol];
        for j in 0..d.q {
            let dj = &dout[j * out_vol..(j + 1) * out_vol];
            let wij = &w[(j * d.p + i) * kv..(j * d.p + i + 1) * kv];
            for a in 0..o0 {
                for b in 0..o1 {
                    let orow = (a * o1 + b) * o2;
                    let g = &dj[orow..orow + o2];
                    for u in 0..k0 {
                        for v in 0..k1 {
                            let xrow = ((a * s0 + u) * i1 + (b * s1 + v)) * i2;
                            for t in 0..k2 {
                                let wt = wij[(u * k1 + v) * k2 + t];
                                if s2 == 1 {
                                    let xs = &mut dxi[xrow + t..xrow + t + o2];
                                    for (xv, gv) in xs.iter_mut().zip(g) {
                                        *xv += gv * wt;
                                    }
                                } else {
                                    for (c, gv) in g.iter().enumerate() {
                                        dxi[xrow + c * s2 + t] += gv * wt;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Removes `pad` entries from both ends of every axis of every channel.
pub(crate) fn crop(padded: &[f64], padded_shape: &[usize; 3], pad: &[usize; 3], out: &Shape) -> Vec<f64> {
    let (oe, _) = as_rank3(out.extents(), 1);
    let pv: usize = padded_shape.iter().product();
    let ov = out.volume();
    let mut res = vec![0.0; out.len()];
    for ch in 0..out.channels() {
        let src = &padded[ch * pv..(ch + 1) * pv];
        let dst = &mut res[ch * ov..(ch + 1) * ov];
        for a in 0..oe[0] {
            for b in 0..oe[1] {
                let s = ((a + pad[0]) * padded_shape[1] + (b + pad[1])) * padded_shape[2] + pad[2];
                let t = (a * oe[1] + b) * oe[2];
                dst[t..t + oe[2]].copy_from_slice(&src[s..s + oe[2]]);
            }
        }
    }
    res
}

/// Input values after zero padding, borrowed when no padding is needed.
pub(crate) fn padded_values<'a>(
    input: &'a Grid,
    geom: &ConvGeometry,
) -> Result<std::borrow::Cow<'a, [f64]>> {
    if geom.is_unpadded() {
        Ok(std::borrow::Cow::Borrowed(input.values()))
    } else {
        Ok(std::borrow::Cow::Owned(input.zero_pad(geom.pad())?.into_values()))
    }
}

/// Multi-input multi-output cross-correlation. No bias is applied.
pub fn cross_correlate(input: &Grid, bank: &OperatorBank, geom: &ConvGeometry) -> Result<Grid> {
    let (dims, out_shape) = Dims::resolve(input.shape(), bank, geom)?;
    let x = padded_values(input, geom)?;
    let out = correlate_padded(&x, bank.weights(), &dims);
    Grid::from_parts(out_shape, out)
}

/// True convolution: cross-correlation with the rotated bank.
pub fn convolve(input: &Grid, bank: &OperatorBank, geom: &ConvGeometry) -> Result<Grid> {
    cross_correlate(input, &bank.rotate180(), geom)
}
