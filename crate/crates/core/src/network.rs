//! Block composition, parameter packing and the forward map.
//!
//! A network is an ordered list of blocks applied to a grid: convolution
//! units (cross-correlation, bias, activation), pooling, one flatten, and a
//! tail of dense blocks. All parameters live in one flat vector θ whose
//! layout is fixed by the block order: per convolution block the operator
//! bank (output channel, input channel, kernel offsets) followed by its bias;
//! per dense block the row-major weight matrix followed by its bias.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use crate::codec::{ByteReader, ByteWriter};
use crate::conv::{ConvGeometry, OperatorBank};
use crate::error::{Error, Result};
use crate::grid::{Grid, Shape};
use crate::layers::{self, Activation, ArgmaxCache, ConvBlockParams, DenseParams, PoolKind, PoolSpec};
use crate::rng::SplitMix64;

const CHECKPOINT_MAGIC: &[u8; 4] = b"CKP1";

/// One stage of a network.
#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Conv {
        out_channels: usize,
        kernel: Vec<usize>,
        pad: Vec<usize>,
        stride: Vec<usize>,
        activation: Activation,
    },
    Pool(PoolSpec),
    Flatten,
    Dense {
        n_out: usize,
        activation: Activation,
    },
}

impl Block {
    pub fn conv(out_channels: usize, kernel: Vec<usize>, activation: Activation) -> Block {
        let rank = kernel.len();
        Block::Conv {
            out_channels,
            kernel,
            pad: vec![0; rank],
            stride: vec![1; rank],
            activation,
        }
    }

    pub fn max_pool(window: Vec<usize>) -> Block {
        Block::Pool(PoolSpec {
            window,
            kind: PoolKind::Max,
        })
    }

    pub fn dense(n_out: usize, activation: Activation) -> Block {
        Block::Dense { n_out, activation }
    }
}

/// Output of a block: a grid before flattening, a vector after.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Layout {
    Grid(Shape),
    Vector(usize),
}

impl Layout {
    pub fn len(&self) -> usize {
        match self {
            Layout::Grid(s) => s.len(),
            Layout::Vector(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grid(&self) -> Option<&Shape> {
        match self {
            Layout::Grid(s) => Some(s),
            Layout::Vector(_) => None,
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layout::Grid(s) => write!(f, "{s}"),
            Layout::Vector(n) => write!(f, "vector[{n}]"),
        }
    }
}

/// What a parameter segment holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Kernel,
    ConvBias,
    DenseWeights,
    DenseBias,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSegment {
    pub block: usize,
    pub kind: SegmentKind,
    pub range: Range<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// A validated architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    input: Shape,
    blocks: Vec<Block>,
    layouts: Vec<Layout>,
    segments: Vec<ParamSegment>,
    n_params: usize,
}

impl NetworkSpec {
    /// Validates the shape chain and resolves the parameter layout.
    pub fn new(input: Shape, blocks: Vec<Block>) -> Result<Self> {
        let mut layouts = Vec::with_capacity(blocks.len());
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut current = Layout::Grid(input.clone());
        let mut flattened = false;
        let n_blocks = blocks.len();

        for (b, block) in blocks.iter().enumerate() {
            let fail = |msg: String| Error::shape(format!("block {b} ({}): {msg}", BlockDisplay(block)));
            current = match (block, &current) {
                (
                    Block::Conv {
                        out_channels,
                        kernel,
                        pad,
                        stride,
                        activation,
                    },
                    Layout::Grid(shape),
                ) => {
                    if !activation.is_elementwise() {
                        return Err(fail("softmax is only valid on the final dense block".into()));
                    }
                    if *out_channels == 0 {
                        return Err(fail("zero output channels".into()));
                    }
                    if kernel.len() != shape.rank() {
                        return Err(fail(format!("kernel rank {} vs input rank {}", kernel.len(), shape.rank())));
                    }
                    let geom = ConvGeometry::new(pad.clone(), stride.clone()).map_err(|e| fail(e.to_string()))?;
                    let out = geom
                        .output_extents(shape.extents(), kernel)
                        .map_err(|e| fail(e.to_string()))?;
                    let kv: usize = kernel.iter().product();
                    let nw = shape.channels() * out_channels * kv;
                    segments.push(ParamSegment {
                        block: b,
                        kind: SegmentKind::Kernel,
                        range: offset..offset + nw,
                        fan_in: shape.channels() * kv,
                        fan_out: out_channels * kv,
                    });
                    offset += nw;
                    segments.push(ParamSegment {
                        block: b,
                        kind: SegmentKind::ConvBias,
                        range: offset..offset + out_channels,
                        fan_in: shape.channels() * kv,
                        fan_out: out_channels * kv,
                    });
                    offset += out_channels;
                    Layout::Grid(Shape::new(out, *out_channels)?)
                }
                (Block::Pool(spec), Layout::Grid(shape)) => {
                    let spec = PoolSpec::new(spec.window.clone(), spec.kind).map_err(|e| fail(e.to_string()))?;
                    Layout::Grid(spec.output_shape(shape).map_err(|e| fail(e.to_string()))?)
                }
                (Block::Flatten, Layout::Grid(shape)) => {
                    flattened = true;
                    Layout::Vector(shape.len())
                }
                (Block::Dense { n_out, activation }, Layout::Vector(n_in)) => {
                    if *n_out == 0 {
                        return Err(fail("zero outputs".into()));
                    }
                    if *activation == Activation::Softmax && b + 1 != n_blocks {
                        return Err(fail("softmax is only valid on the final dense block".into()));
                    }
                    let nw = n_in * n_out;
                    segments.push(ParamSegment {
                        block: b,
                        kind: SegmentKind::DenseWeights,
                        range: offset..offset + nw,
                        fan_in: *n_in,
                        fan_out: *n_out,
                    });
                    offset += nw;
                    segments.push(ParamSegment {
                        block: b,
                        kind: SegmentKind::DenseBias,
                        range: offset..offset + n_out,
                        fan_in: *n_in,
                        fan_out: *n_out,
                    });
                    offset += n_out;
                    Layout::Vector(*n_out)
                }
                (Block::Dense { .. }, Layout::Grid(_)) => {
                    return Err(fail("dense block before flatten".into()));
                }
                (Block::Flatten, Layout::Vector(_)) => {
                    return Err(fail("more than one flatten".into()));
                }
                (_, Layout::Vector(_)) => {
                    return Err(fail("only dense blocks may follow flatten".into()));
                }
            };
            layouts.push(current.clone());
        }
        if !flattened {
            return Err(Error::shape("network has no flatten block"));
        }
        if !matches!(blocks.last(), Some(Block::Dense { .. })) {
            return Err(Error::shape("network must end with a dense block"));
        }
        Ok(Self {
            input,
            blocks,
            layouts,
            segments,
            n_params: offset,
        })
    }

    pub fn input_shape(&self) -> &Shape {
        &self.input
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Output layout of every block, in order.
    pub fn layouts(&self) -> &[Layout] {
        &self.layouts
    }

    pub fn segments(&self) -> &[ParamSegment] {
        &self.segments
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_outputs(&self) -> usize {
        self.layouts.last().map_or(0, Layout::len)
    }

    pub fn output_activation(&self) -> Activation {
        match self.blocks.last() {
            Some(Block::Dense { activation, .. }) => *activation,
            _ => unreachable!("validated spec ends in a dense block"),
        }
    }

    /// Length of the flattened feature vector.
    pub fn feature_length(&self) -> usize {
        self.blocks
            .iter()
            .position(|b| matches!(b, Block::Flatten))
            .map(|k| self.layouts[k].len())
            .expect("validated spec has a flatten block")
    }

    /// Human-readable shape chain, one line per block.
    pub fn shape_report(&self) -> Vec<String> {
        let mut lines = vec![format!("input: {}", self.input)];
        for (b, l) in self.blocks.iter().zip(&self.layouts) {
            lines.push(format!("{}: {l}", BlockDisplay(b)));
        }
        lines
    }

    /// Splits θ into per-block parameters; `None` for parameterless blocks.
    pub fn unpack(&self, theta: &ParamVector) -> Result<Vec<Option<BlockParams>>> {
        if theta.len() != self.n_params {
            return Err(Error::shape(format!(
                "parameter vector has {} entries, network needs {}",
                theta.len(),
                self.n_params
            )));
        }
        let th = theta.values();
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut seg = self.segments.iter();
        let mut in_layout = Layout::Grid(self.input.clone());
        for (b, block) in self.blocks.iter().enumerate() {
            let params = match block {
                Block::Conv {
                    out_channels,
                    kernel,
                    pad,
                    stride,
                    ..
                } => {
                    let w = seg.next().expect("kernel segment");
                    let bias = seg.next().expect("bias segment");
                    debug_assert_eq!(w.block, b);
                    let p = in_layout.grid().expect("grid input").channels();
                    Some(BlockParams::Conv(ConvBlockParams::new(
                        OperatorBank::new(p, *out_channels, kernel.clone(), th[w.range.clone()].to_vec())?,
                        th[bias.range.clone()].to_vec(),
                        ConvGeometry::new(pad.clone(), stride.clone())?,
                    )?))
                }
                Block::Dense { n_out, .. } => {
                    let w = seg.next().expect("weight segment");
                    let bias = seg.next().expect("bias segment");
                    Some(BlockParams::Dense(DenseParams::new(
                        in_layout.len(),
                        *n_out,
                        th[w.range.clone()].to_vec(),
                        th[bias.range.clone()].to_vec(),
                    )?))
                }
                Block::Pool(_) | Block::Flatten => None,
            };
            out.push(params);
            in_layout = self.layouts[b].clone();
        }
        Ok(out)
    }

    /// Inverse of [`NetworkSpec::unpack`].
    pub fn pack(&self, params: &[Option<BlockParams>]) -> Result<ParamVector> {
        if params.len() != self.blocks.len() {
            return Err(Error::shape("one entry per block required"));
        }
        let mut theta = Vec::with_capacity(self.n_params);
        for p in params.iter().flatten() {
            match p {
                BlockParams::Conv(c) => {
                    theta.extend_from_slice(c.bank.weights());
                    theta.extend_from_slice(&c.bias);
                }
                BlockParams::Dense(d) => {
                    theta.extend_from_slice(&d.weights);
                    theta.extend_from_slice(&d.bias);
                }
            }
        }
        if theta.len() != self.n_params {
            return Err(Error::shape(format!(
                "packed {} parameters, network needs {}",
                theta.len(),
                self.n_params
            )));
        }
        Ok(ParamVector::new(theta))
    }
}

struct BlockDisplay<'a>(&'a Block);

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl fmt::Display for BlockDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Block::Conv {
                out_channels,
                kernel,
                pad,
                stride,
                activation,
            } => write!(
                f,
                "conv:{out_channels}:{}:{}:{}:{activation}",
                join(kernel),
                join(pad),
                join(stride)
            ),
            Block::Pool(p) => write!(f, "pool:{}:{}", p.kind, join(&p.window)),
            Block::Flatten => write!(f, "flatten"),
            Block::Dense { n_out, activation } => write!(f, "dense:{n_out}:{activation}"),
        }
    }
}

/// Canonical architecture string, parseable by [`FromStr`].
impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "input:{}:{}:{}",
            self.input.rank(),
            join(self.input.extents()),
            self.input.channels()
        )?;
        for b in &self.blocks {
            write!(f, "; {}", BlockDisplay(b))?;
        }
        Ok(())
    }
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::parse(format!("{what}: expected a nonnegative integer, got {s:?}")))
}

/// Comma list of `rank` integers; a single value is repeated on every axis.
fn parse_list(s: &str, rank: usize, what: &str) -> Result<Vec<usize>> {
    let v = s
        .split(',')
        .map(|x| parse_usize(x, what))
        .collect::<Result<Vec<_>>>()?;
    match v.len() {
        1 => Ok(vec![v[0]; rank]),
        n if n == rank => Ok(v),
        n => Err(Error::parse(format!("{what}: {n} entries for rank {rank}"))),
    }
}

impl FromStr for NetworkSpec {
    type Err = Error;

    /// Parses `input:<rank>:<ext,...>:<channels>; conv:<q>:<k,...>:<pad,...>:<stride,...>:<act>;
    /// pool:<max|avg>:<n_p,...>; flatten; dense:<n_out>:<act>`. Whitespace is ignored.
    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let mut items = compact.split(';').filter(|x| !x.is_empty());
        let head = items
            .next()
            .ok_or_else(|| Error::parse("empty architecture string"))?;
        let f: Vec<&str> = head.split(':').collect();
        let input = match f.as_slice() {
            ["input", rank, ext, ch] => {
                let rank = parse_usize(rank, "input rank")?;
                if !(1..=3).contains(&rank) {
                    return Err(Error::parse(format!("input rank {rank} not in 1..=3")));
                }
                Shape::new(parse_list(ext, rank, "input extents")?, parse_usize(ch, "input channels")?)?
            }
            _ => return Err(Error::parse(format!("expected input:<rank>:<ext,...>:<channels>, got {head:?}"))),
        };
        let rank = input.rank();
        let mut blocks = Vec::new();
        for item in items {
            let f: Vec<&str> = item.split(':').collect();
            let block = match f.as_slice() {
                ["conv", q, k, pad, stride, act] => Block::Conv {
                    out_channels: parse_usize(q, "conv channels")?,
                    kernel: parse_list(k, rank, "conv kernel")?,
                    pad: parse_list(pad, rank, "conv pad")?,
                    stride: parse_list(stride, rank, "conv stride")?,
                    activation: act.parse()?,
                },
                ["pool", kind, window] => Block::Pool(PoolSpec {
                    kind: match *kind {
                        "max" => PoolKind::Max,
                        "avg" => PoolKind::Average,
                        other => return Err(Error::parse(format!("unknown pooling kind {other:?}"))),
                    },
                    window: parse_list(window, rank, "pool window")?,
                }),
                ["flatten"] => Block::Flatten,
                ["dense", n, act] => Block::Dense {
                    n_out: parse_usize(n, "dense outputs")?,
                    activation: act.parse()?,
                },
                _ => return Err(Error::parse(format!("unrecognized block {item:?}"))),
            };
            blocks.push(block);
        }
        NetworkSpec::new(input, blocks)
    }
}

/// Parameters of one block.
#[derive(Clone, Debug, PartialEq)]
pub enum BlockParams {
    Conv(ConvBlockParams),
    Dense(DenseParams),
}

/// The flat parameter vector θ.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    UniformScaled,
    Constant(f64),
}

/// Deterministic initialization from `seed`.
pub fn init_params(spec: &NetworkSpec, seed: u64, scheme: InitScheme) -> ParamVector {
    let mut theta = vec![0.0; spec.n_params()];
    match scheme {
        InitScheme::Constant(c) => theta.iter_mut().for_each(|v| *v = c),
        InitScheme::UniformScaled => {
            let mut rng = SplitMix64::new(seed);
            for seg in spec.segments() {
                if matches!(seg.kind, SegmentKind::Kernel | SegmentKind::DenseWeights) {
                    let bound = (6.0 / (seg.fan_in + seg.fan_out) as f64).sqrt();
                    for v in &mut theta[seg.range.clone()] {
                        *v = rng.uniform(-bound, bound);
                    }
                }
            }
        }
    }
    ParamVector::new(theta)
}

/// Intermediates of one block recorded during a forward pass.
#[derive(Clone, Debug)]
pub enum StageTrace {
    Conv { input: Grid, pre: Grid, post: Grid },
    Pool { input_shape: Shape, output: Grid, cache: Option<ArgmaxCache> },
    Flatten { origin: Shape, output: Vec<f64> },
    Dense { input: Vec<f64>, pre: Vec<f64>, post: Vec<f64> },
}

impl StageTrace {
    pub fn output_len(&self) -> usize {
        match self {
            StageTrace::Conv { post, .. } => post.values().len(),
            StageTrace::Pool { output, .. } => output.values().len(),
            StageTrace::Flatten { output, .. } => output.len(),
            StageTrace::Dense { post, .. } => post.len(),
        }
    }

    pub fn output_layout(&self) -> Layout {
        match self {
            StageTrace::Conv { post, .. } => Layout::Grid(post.shape().clone()),
            StageTrace::Pool { output, .. } => Layout::Grid(output.shape().clone()),
            StageTrace::Flatten { output, .. } => Layout::Vector(output.len()),
            StageTrace::Dense { post, .. } => Layout::Vector(post.len()),
        }
    }
}

/// Every block's cached intermediates, in block order.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub stages: Vec<StageTrace>,
}

impl ForwardTrace {
    pub fn prediction(&self) -> &[f64] {
        match self.stages.last() {
            Some(StageTrace::Dense { post, .. }) => post,
            _ => unreachable!("validated spec ends in a dense block"),
        }
    }

    /// Pre-activation output of the final dense block.
    pub fn evidence(&self) -> &[f64] {
        match self.stages.last() {
            Some(StageTrace::Dense { pre, .. }) => pre,
            _ => unreachable!("validated spec ends in a dense block"),
        }
    }
}

/// Where the backward pass is seeded.
#[derive(Clone, Debug, PartialEq)]
pub enum OutputGrad {
    /// Gradient with respect to the prediction ŷ.
    Prediction(Vec<f64>),
    /// Gradient with respect to the final evidence, bypassing the output
    /// activation (softmax with categorical cross-entropy).
    Evidence(Vec<f64>),
}

/// Result of a backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Option<Grid>,
}

/// A spec with θ unpacked into per-block parameters, ready for evaluation.
#[derive(Clone, Debug)]
pub struct Model {
    spec: NetworkSpec,
    params: Vec<Option<BlockParams>>,
}

impl Model {
    pub fn new(spec: NetworkSpec, theta: &ParamVector) -> Result<Self> {
        let params = spec.unpack(theta)?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn block_params(&self) -> &[Option<BlockParams>] {
        &self.params
    }

    fn check_input(&self, input: &Grid) -> Result<()> {
        if input.shape() != self.spec.input_shape() {
            return Err(Error::shape(format!(
                "input has shape {}, network expects {}",
                input.shape(),
                self.spec.input_shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Grid) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut grid = input.clone();
        let mut vector: Vec<f64> = Vec::new();
        for (block, params) in self.spec.blocks.iter().zip(&self.params) {
            match (block, params) {
                (Block::Conv { activation, .. }, Some(BlockParams::Conv(p))) => {
                    let pre = layers::conv_forward(&grid, p)?;
                    grid = layers::activate(&pre, *activation)?;
                }
                (Block::Pool(spec), None) => {
                    grid = layers::pool_forward(&grid, spec)?.0;
                }
                (Block::Flatten, None) => {
                    vector = std::mem::replace(&mut grid, Grid::zeros(Shape::new(vec![1], 1)?)).into_values();
                }
                (Block::Dense { activation, .. }, Some(BlockParams::Dense(p))) => {
                    let pre = layers::dense_forward(&vector, p)?;
                    vector = activation.apply(&pre);
                }
                _ => unreachable!("params were unpacked from this spec"),
            }
        }
        Ok(vector)
    }

    pub fn forward_traced(&self, input: &Grid) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut stages = Vec::with_capacity(self.spec.blocks.len());
        let mut grid = input.clone();
        let mut vector: Vec<f64> = Vec::new();
        for (block, params) in self.spec.blocks.iter().zip(&self.params) {
            match (block, params) {
                (Block::Conv { activation, .. }, Some(BlockParams::Conv(p))) => {
                    let pre = layers::conv_forward(&grid, p)?;
                    let post = layers::activate(&pre, *activation)?;
                    stages.push(StageTrace::Conv {
                        input: std::mem::replace(&mut grid, post.clone()),
                        pre,
                        post,
                    });
                }
                (Block::Pool(spec), None) => {
                    let (output, cache) = layers::pool_forward(&grid, spec)?;
                    stages.push(StageTrace::Pool {
                        input_shape: grid.shape().clone(),
                        output: output.clone(),
                        cache,
                    });
                    grid = output;
                }
                (Block::Flatten, None) => {
                    vector = grid.values().to_vec();
                    stages.push(StageTrace::Flatten {
                        origin: grid.shape().clone(),
                        output: vector.clone(),
                    });
                }
                (Block::Dense { activation, .. }, Some(BlockParams::Dense(p))) => {
                    let pre = layers::dense_forward(&vector, p)?;
                    let post = activation.apply(&pre);
                    stages.push(StageTrace::Dense {
                        input: std::mem::replace(&mut vector, post.clone()),
                        pre,
                        post,
                    });
                }
                _ => unreachable!("params were unpacked from this spec"),
            }
        }
        Ok(ForwardTrace { stages })
    }

    /// Reverse pass over `trace`. The parameter gradient uses the θ layout.
    /// The input gradient is computed only when `want_input` is set.
    pub fn backward(&self, trace: &ForwardTrace, seed: OutputGrad, want_input: bool) -> Result<Gradients> {
        let n_blocks = self.spec.blocks.len();
        if trace.stages.len() != n_blocks {
            return Err(Error::shape("trace does not belong to this network"));
        }
        let mut grads = vec![0.0; self.spec.n_params()];
        let mut segs = self.spec.segments.iter().rev();
        let mut upstream_vec: Vec<f64> = Vec::new();
        let mut upstream_grid: Option<Grid> = None;
        // Blocks before the first parameterized block need no gradient
        // unless the input gradient itself is requested.
        let first_param_block = self
            .spec
            .blocks
            .iter()
            .position(|b| matches!(b, Block::Conv { .. } | Block::Dense { .. }))
            .unwrap_or(0);

        for b in (0..n_blocks).rev() {
            let block = &self.spec.blocks[b];
            let stage = &trace.stages[b];
            let need_input_grad = want_input || b > first_param_block;
            match (block, stage, &self.params[b]) {
                (Block::Dense { activation, .. }, StageTrace::Dense { input, pre, post }, Some(BlockParams::Dense(p))) => {
                    let dd = if b + 1 == n_blocks {
                        match &seed {
                            OutputGrad::Prediction(g) => activation.backward(pre, post, g),
                            OutputGrad::Evidence(g) => g.clone(),
                        }
                    } else {
                        activation.backward(pre, post, &upstream_vec)
                    };
                    if dd.len() != p.n_out {
                        return Err(Error::shape("output gradient length mismatch"));
                    }
                    let g = layers::dense_backward(&dd, input, p)?;
                    let bias = segs.next().expect("bias segment");
                    let w = segs.next().expect("weight segment");
                    grads[bias.range.clone()].copy_from_slice(&g.bias);
                    grads[w.range.clone()].copy_from_slice(&g.weights);
                    upstream_vec = g.input;
                }
                (Block::Flatten, StageTrace::Flatten { origin, .. }, None) => {
                    upstream_grid = Some(Grid::from_parts(origin.clone(), std::mem::take(&mut upstream_vec))?);
                }
                (Block::Pool(spec), StageTrace::Pool { input_shape, cache, .. }, None) => {
                    let up = upstream_grid.take().expect("gradient flows from flatten");
                    upstream_grid = Some(layers::pool_backward(&up, cache.as_ref(), spec, input_shape)?);
                }
                (Block::Conv { activation, .. }, StageTrace::Conv { input, pre, post }, Some(BlockParams::Conv(p))) => {
                    let up = upstream_grid.take().expect("gradient flows from flatten");
                    let d_pre = activation.backward(pre.values(), post.values(), up.values());
                    let d_pre = Grid::from_parts(pre.shape().clone(), d_pre)?;
                    let bias = segs.next().expect("bias segment");
                    let w = segs.next().expect("kernel segment");
                    if !need_input_grad {
                        let (bank, db) = layers::conv_param_grads(&d_pre, input, p)?;
                        grads[bias.range.clone()].copy_from_slice(&db);
                        grads[w.range.clone()].copy_from_slice(bank.weights());
                        break;
                    }
                    let g = layers::conv_backward(&d_pre, input, p)?;
                    grads[bias.range.clone()].copy_from_slice(&g.bias);
                    grads[w.range.clone()].copy_from_slice(g.bank.weights());
                    upstream_grid = Some(g.input);
                }
                _ => return Err(Error::shape("trace does not belong to this network")),
            }
        }
        let input = if want_input {
            match upstream_grid {
                Some(g) => Some(g),
                // network starts with flatten; its gradient is still a vector
                None => Some(Grid::from_parts(self.spec.input_shape().clone(), upstream_vec)?),
            }
        } else {
            None
        };
        Ok(Gradients { params: grads, input })
    }
}

pub fn forward(spec: &NetworkSpec, theta: &ParamVector, input: &Grid) -> Result<Vec<f64>> {
    Model::new(spec.clone(), theta)?.forward(input)
}

pub fn forward_traced(spec: &NetworkSpec, theta: &ParamVector, input: &Grid) -> Result<(Vec<f64>, ForwardTrace)> {
    let trace = Model::new(spec.clone(), theta)?.forward_traced(input)?;
    Ok((trace.prediction().to_vec(), trace))
}

/// Class label of a prediction: threshold 0.5 (inclusive) for a single
/// output, otherwise the argmax with ties to the lowest index.
pub fn predict_class(y_hat: &[f64]) -> usize {
    if y_hat.len() == 1 {
        return usize::from(y_hat[0] >= 0.5);
    }
    let mut best = 0;
    for (k, &v) in y_hat.iter().enumerate().skip(1) {
        if v > y_hat[best] {
            best = k;
        }
    }
    best
}

/// Architecture plus parameters, as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn new(spec: NetworkSpec, params: ParamVector) -> Result<Self> {
        if params.len() != spec.n_params() {
            return Err(Error::shape(format!(
                "checkpoint has {} parameters, spec needs {}",
                params.len(),
                spec.n_params()
            )));
        }
        Ok(Self { spec, params })
    }

    /// `CKP1`, u32 LE byte length and UTF-8 spec string, u64 LE n_θ, θ as f64 LE.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let text = self.spec.to_string();
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.usize_as_u32(text.len())?;
        w.bytes(text.as_bytes());
        w.u64(self.params.len() as u64);
        w.f64s(self.params.values());
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let len = r.u32("spec length")? as usize;
        let at = r.offset();
        let text = std::str::from_utf8(r.bytes(len, "spec string")?)
            .map_err(|_| Error::format(at, "spec string is not UTF-8"))?;
        let spec: NetworkSpec = text.parse().map_err(|e: Error| Error::format(at, e.to_string()))?;
        let at = r.offset();
        let n = r.u64("parameter count")? as usize;
        if n != spec.n_params() {
            return Err(Error::format(
                at,
                format!("parameter count {n} does not match spec ({})", spec.n_params()),
            ));
        }
        let theta = r.f64s(n, "parameters")?;
        r.expect_end()?;
        Ok(Self {
            spec,
            params: ParamVector::new(theta),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
