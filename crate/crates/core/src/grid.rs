//! Multi-channel grid objects over 1D, 2D and 3D lattices.
//!
//! A [`Grid`] stores `channels × Π extents` reals, channel-major and then
//! row-major over the spatial axes. For a rank-2 grid with extents
//! `[n1, n2]` the value at channel `c`, row `x1`, column `x2` (all 0-based)
//! sits at flat index `c·n1·n2 + x1·n2 + x2`.

use std::fmt;
use std::path::Path;

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const MAX_RANK: usize = 3;

const GRID_MAGIC: &[u8; 4] = b"GRD1";

/// Spatial extents plus channel count of a grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    extents: Vec<usize>,
    channels: usize,
}

impl Shape {
    pub fn new(extents: Vec<usize>, channels: usize) -> Result<Self> {
        if extents.is_empty() || extents.len() > MAX_RANK {
            return Err(Error::shape(format!(
                "rank must be in 1..={MAX_RANK}, got {}",
                extents.len()
            )));
        }
        if extents.contains(&0) {
            return Err(Error::shape(format!("zero extent in {extents:?}")));
        }
        if channels == 0 {
            return Err(Error::shape("channel count must be positive"));
        }
        Ok(Self { extents, channels })
    }

    /// Equal extent `n` on every one of `rank` axes.
    pub fn square(rank: usize, n: usize, channels: usize) -> Result<Self> {
        Self::new(vec![n; rank], channels)
    }

    pub fn rank(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of lattice sites in one channel.
    pub fn volume(&self) -> usize {
        self.extents.iter().product()
    }

    /// Total number of values, `channels × volume`.
    pub fn len(&self) -> usize {
        self.channels * self.volume()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn with_channels(&self, channels: usize) -> Result<Self> {
        Self::new(self.extents.clone(), channels)
    }

    /// Flat index of `(channel, position)`; `position` is 0-based per axis.
    pub fn index(&self, channel: usize, position: &[usize]) -> usize {
        debug_assert_eq!(position.len(), self.rank());
        let mut idx = channel;
        for (&x, &n) in position.iter().zip(&self.extents) {
            debug_assert!(x < n);
            idx = idx * n + x;
        }
        idx
    }

    pub(crate) fn encode(&self, w: &mut ByteWriter) -> Result<()> {
        w.u8(self.rank() as u8);
        w.usize_as_u32(self.channels)?;
        for &e in &self.extents {
            w.usize_as_u32(e)?;
        }
        Ok(())
    }

    pub(crate) fn decode(r: &mut ByteReader<'_>) -> Result<Self> {
        let at = r.offset();
        let rank = r.u8("rank")? as usize;
        let channels = r.u32("channel count")? as usize;
        let mut extents = Vec::with_capacity(rank.min(MAX_RANK));
        for _ in 0..rank.min(MAX_RANK + 1) {
            extents.push(r.u32("extent")? as usize);
        }
        Self::new(extents, channels).map_err(|e| Error::format(at, e.to_string()))
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, e) in self.extents.iter().enumerate() {
            if k > 0 {
                write!(f, "x")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, "x{}ch", self.channels)
    }
}

/// An immutable multi-channel real-valued grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    shape: Shape,
    values: Vec<f64>,
}

impl Grid {
    /// Builds a grid, rejecting length mismatches and non-finite values.
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Self::from_parts(shape, values)
    }

    /// Builds a grid without the finiteness scan. Intermediate feature maps
    /// use this; finiteness is checked where training inspects them.
    pub(crate) fn from_parts(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::shape(format!(
                "shape {shape} needs {} values, got {}",
                shape.len(),
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.len();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let n = shape.len();
        Self {
            shape,
            values: vec![value; n],
        }
    }

    /// Rank-1 single-channel grid holding `values`.
    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(vec![values.len()], 1)?;
        Self::new(shape, values)
    }

    /// Rank-2 single-channel grid from rows of equal length.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let n1 = rows.len();
        let n2 = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n2) {
            return Err(Error::shape("ragged matrix rows"));
        }
        let shape = Shape::new(vec![n1, n2], 1)?;
        Self::new(shape, rows.concat())
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, channel: usize, position: &[usize]) -> f64 {
        self.values[self.shape.index(channel, position)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Values of one channel as a slice.
    pub fn channel_slice(&self, channel: usize) -> &[f64] {
        let vol = self.shape.volume();
        &self.values[channel * vol..(channel + 1) * vol]
    }

    /// Single-channel copy of channel `channel` (0-based).
    pub fn channel_view(&self, channel: usize) -> Result<Grid> {
        if channel >= self.shape.channels() {
            return Err(Error::invalid(format!(
                "channel {channel} out of range for {} channels",
                self.shape.channels()
            )));
        }
        Ok(Grid {
            shape: self.shape.with_channels(1)?,
            values: self.channel_slice(channel).to_vec(),
        })
    }

    /// Embeds the grid in zeros, growing axis `k` by `2·pad[k]`.
    pub fn zero_pad(&self, pad: &[usize]) -> Result<Grid> {
        if pad.len() != self.shape.rank() {
            return Err(Error::shape(format!(
                "pad list has {} entries for rank {}",
                pad.len(),
                self.shape.rank()
            )));
        }
        let (ext, _) = as_rank3(self.shape.extents(), 1);
        let (p, _) = as_rank3(pad, 0);
        let new_ext: Vec<usize> = self
            .shape
            .extents()
            .iter()
            .zip(pad)
            .map(|(&n, &q)| n + 2 * q)
            .collect();
        let out_shape = Shape::new(new_ext, self.shape.channels())?;
        let (oext, _) = as_rank3(out_shape.extents(), 1);
        let mut out = vec![0.0; out_shape.len()];
        let in_vol = self.shape.volume();
        let out_vol = out_shape.volume();
        for c in 0..self.shape.channels() {
            let src = &self.values[c * in_vol..(c + 1) * in_vol];
            let dst = &mut out[c * out_vol..(c + 1) * out_vol];
            for a in 0..ext[0] {
                for b in 0..ext[1] {
                    let s = (a * ext[1] + b) * ext[2];
                    let d = ((a + p[0]) * oext[1] + (b + p[1])) * oext[2] + p[2];
                    dst[d..d + ext[2]].copy_from_slice(&src[s..s + ext[2]]);
                }
            }
        }
        Ok(Grid {
            shape: out_shape,
            values: out,
        })
    }

    /// Vectorizes the grid in storage order, remembering its shape.
    pub fn flatten(&self) -> FeatureVector {
        FeatureVector {
            values: self.values.clone(),
            origin_shape: Some(self.shape.clone()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(GRID_MAGIC);
        self.shape.encode(&mut w)?;
        w.f64s(&self.values);
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Grid> {
        let mut r = ByteReader::new(bytes);
        r.magic(GRID_MAGIC)?;
        let shape = Shape::decode(&mut r)?;
        let at = r.offset();
        let values = r.f64s(shape.len(), "grid values")?;
        r.expect_end()?;
        Grid::new(shape, values).map_err(|e| Error::format(at, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Grid> {
        Grid::from_bytes(&std::fs::read(path)?)
    }
}

/// A flattened grid. `origin_shape` is recorded by [`Grid::flatten`] and is
/// required to map the vector back onto a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    origin_shape: Option<Shape>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            origin_shape: None,
        }
    }

    pub fn with_origin(values: Vec<f64>, origin: Shape) -> Result<Self> {
        if values.len() != origin.len() {
            return Err(Error::shape(format!(
                "{} values cannot come from shape {origin}",
                values.len()
            )));
        }
        Ok(Self {
            values,
            origin_shape: Some(origin),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn origin_shape(&self) -> Option<&Shape> {
        self.origin_shape.as_ref()
    }

    /// Inverse of [`Grid::flatten`].
    pub fn unflatten(&self) -> Result<Grid> {
        let shape = self
            .origin_shape
            .clone()
            .ok_or_else(|| Error::invalid("feature vector has no origin shape"))?;
        Grid::from_parts(shape, self.values.clone())
    }
}

/// Left-pads a per-axis list to three entries with `fill`; returns the
/// padded array and the number of leading entries inserted.
pub(crate) fn as_rank3(v: &[usize], fill: usize) -> ([usize; 3], usize) {
    let lead = MAX_RANK - v.len();
    let mut out = [fill; 3];
    out[lead..].copy_from_slice(v);
    (out, lead)
}
