//! Dataset container, seeded partitioning, synthetic generators with exact
//! labels, and grayscale image output.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::codec::{ByteReader, ByteWriter};
use crate::conv::{cross_correlate, ConvGeometry};
use crate::error::{Error, Result};
use crate::grid::{Grid, Shape};
use crate::operators::{sobel2d, SobelDirection};
use crate::rng::SplitMix64;
use crate::train::{LabeledSample, Target, Task};

const DATASET_MAGIC: &[u8; 4] = b"DST1";

/// Homogeneously shaped labeled samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    shape: Shape,
    task: Task,
    samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(shape: Shape, task: Task, samples: Vec<LabeledSample>) -> Result<Self> {
        match task {
            Task::Regression { n_out: 0 } => return Err(Error::invalid("regression needs at least one output")),
            Task::Classification { classes } if classes < 2 => {
                return Err(Error::invalid("classification needs at least two classes"))
            }
            _ => {}
        }
        for (k, s) in samples.iter().enumerate() {
            if s.input.shape() != &shape {
                return Err(Error::shape(format!(
                    "sample {k} has shape {}, dataset declares {shape}",
                    s.input.shape()
                )));
            }
            let ok = match (&s.target, task) {
                (Target::Values(v), Task::Regression { n_out }) => v.len() == n_out,
                (Target::Class(c), Task::Classification { classes }) => *c < classes,
                _ => false,
            };
            if !ok {
                return Err(Error::invalid(format!("sample {k} label {:?} invalid for {task:?}", s.target)));
            }
        }
        Ok(Self { shape, task, samples })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            shape: self.shape.clone(),
            task: self.task,
            samples: idx.iter().map(|&k| self.samples[k].clone()).collect(),
        }
    }

    /// Partitions a seeded permutation into parts sized in proportion to
    /// `ratios` (floors, remainder to the earliest parts). Each part keeps
    /// the original sample order.
    pub fn split(&self, ratios: &[usize], seed: u64) -> Result<Vec<Dataset>> {
        let total: usize = ratios.iter().sum();
        if ratios.is_empty() || total == 0 {
            return Err(Error::invalid("split ratios must have a positive sum"));
        }
        let n = self.len();
        let mut sizes: Vec<usize> = ratios.iter().map(|&r| n * r / total).collect();
        let mut rest = n - sizes.iter().sum::<usize>();
        for (s, &r) in sizes.iter_mut().zip(ratios) {
            if rest == 0 {
                break;
            }
            if r > 0 {
                *s += 1;
                rest -= 1;
            }
        }
        let perm = SplitMix64::new(seed).permutation(n);
        let mut parts = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for s in sizes {
            let mut idx = perm[start..start + s].to_vec();
            idx.sort_unstable();
            parts.push(self.subset(&idx));
            start += s;
        }
        Ok(parts)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(DATASET_MAGIC);
        match self.task {
            Task::Regression { n_out } => {
                w.u8(0);
                w.usize_as_u32(n_out)?;
            }
            Task::Classification { classes } => {
                w.u8(1);
                w.usize_as_u32(classes)?;
            }
        }
        w.u64(self.samples.len() as u64);
        self.shape.encode(&mut w)?;
        for s in &self.samples {
            w.f64s(s.input.values());
            match &s.target {
                Target::Values(v) => w.f64s(v),
                Target::Class(c) => w.usize_as_u32(*c)?,
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(DATASET_MAGIC)?;
        let tag_at = r.offset();
        let tag = r.u8("task tag")?;
        let arity = r.u32("output arity")? as usize;
        let task = match tag {
            0 => Task::Regression { n_out: arity },
            1 => Task::Classification { classes: arity },
            t => return Err(Error::format(tag_at, format!("unknown task tag {t}"))),
        };
        let count_at = r.offset();
        let count = r.u64("sample count")?;
        let shape = Shape::decode(&mut r)?;
        let per_sample = 8 * shape.len() + if tag == 0 { 8 * arity } else { 4 };
        let remaining = bytes.len() - r.offset();
        if (count as u128) * (per_sample as u128) > remaining as u128 {
            return Err(Error::format(
                count_at,
                format!("sample count {count} exceeds the {remaining} bytes that follow the header"),
            ));
        }
        let mut samples = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let at = r.offset();
            let values = r.f64s(shape.len(), "sample values")?;
            let input = Grid::new(shape.clone(), values).map_err(|e| Error::format(at, e.to_string()))?;
            let target = match task {
                Task::Regression { n_out } => Target::Values(r.f64s(n_out, "regression label")?),
                Task::Classification { .. } => Target::Class(r.u32("class label")? as usize),
            };
            samples.push(LabeledSample::new(input, target));
        }
        r.expect_end()?;
        Dataset::new(shape, task, samples).map_err(|e| Error::format(0, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Binary PGM (P5) with linear min-max scaling to 0..=255. Constant
/// matrices map to zero.
pub fn pgm_bytes(matrix: &Grid) -> Result<Vec<u8>> {
    let shape = matrix.shape();
    if shape.rank() != 2 || shape.channels() != 1 {
        return Err(Error::shape(format!("PGM output needs a single-channel matrix, got {shape}")));
    }
    let (h, w) = (shape.extents()[0], shape.extents()[1]);
    let v = matrix.values();
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let span = hi - lo;
    out.extend(v.iter().map(|&x| {
        if span > 0.0 {
            ((x - lo) / span * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn write_pgm(matrix: &Grid, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, pgm_bytes(matrix)?)?;
    Ok(())
}

/// Variable rows carrying fault signatures, one per non-normal class.
pub const FAULT_ROWS: [usize; 6] = [4, 15, 27, 38, 10, 46];

/// Synthetic data family and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    /// Multi-channel staircase series labeled by total variation.
    Series1d { length: usize, channels: usize, max_jumps: usize },
    /// Square images holding one step edge; class 1 vertical, 0 horizontal.
    Edges2d { size: usize, noise: f64 },
    /// Variables × time windows; class 0 is noise only, class `c ≥ 1`
    /// adds a step, drift or oscillation on row `FAULT_ROWS[c − 1]`.
    Faults2d { variables: usize, window: usize, classes: usize, noise: f64 },
    /// Three-channel Gaussian density fields labeled by pairwise overlap.
    Voxels3d { size: usize },
}

impl Generator {
    pub fn id(&self) -> &'static str {
        match self {
            Generator::Series1d { .. } => "series1d",
            Generator::Edges2d { .. } => "edges2d",
            Generator::Faults2d { .. } => "faults2d",
            Generator::Voxels3d { .. } => "voxels3d",
        }
    }

    pub fn default_for(id: &str) -> Result<Generator> {
        match id {
            "series1d" => Ok(Generator::Series1d {
                length: 240,
                channels: 9,
                max_jumps: 3,
            }),
            "edges2d" => Ok(Generator::Edges2d { size: 16, noise: 0.05 }),
            "faults2d" => Ok(Generator::Faults2d {
                variables: 52,
                window: 60,
                classes: 4,
                noise: 0.1,
            }),
            "voxels3d" => Ok(Generator::Voxels3d { size: 20 }),
            other => Err(Error::parse(format!("unknown generator {other:?}"))),
        }
    }

    pub fn shape(&self) -> Shape {
        let s = match *self {
            Generator::Series1d { length, channels, .. } => Shape::new(vec![length], channels),
            Generator::Edges2d { size, .. } => Shape::new(vec![size, size], 1),
            Generator::Faults2d { variables, window, .. } => Shape::new(vec![variables, window], 1),
            Generator::Voxels3d { size } => Shape::new(vec![size; 3], 3),
        };
        s.expect("validated generator")
    }

    pub fn task(&self) -> Task {
        match *self {
            Generator::Series1d { .. } | Generator::Voxels3d { .. } => Task::Regression { n_out: 1 },
            Generator::Edges2d { .. } => Task::Classification { classes: 2 },
            Generator::Faults2d { classes, .. } => Task::Classification { classes },
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Generator::Series1d { length, channels, .. } => length >= 2 && channels >= 1,
            Generator::Edges2d { size, noise } => size >= 8 && noise >= 0.0,
            Generator::Faults2d {
                variables,
                window,
                classes,
                noise,
            } => {
                (2..=FAULT_ROWS.len() + 1).contains(&classes)
                    && variables > FAULT_ROWS[..classes - 1].iter().max().copied().unwrap_or(0)
                    && window >= 12
                    && noise >= 0.0
            }
            Generator::Voxels3d { size } => size >= 4,
        };
        if !ok {
            return Err(Error::invalid(format!("invalid generator parameters {self:?}")));
        }
        Ok(())
    }

    fn sample(&self, index: usize, rng: &mut SplitMix64) -> LabeledSample {
        match *self {
            Generator::Series1d {
                length,
                channels,
                max_jumps,
            } => {
                // staircase references from rest that settle by two thirds of
                // the window; upward steps keep the label first-order in the
                // input, which a few hundred samples can actually pin down
                let settle = (2 * length / 3).max(2);
                let mut v = Vec::with_capacity(length * channels);
                for _ in 0..channels {
                    let mut steps: Vec<(usize, f64)> = (0..rng.below(max_jumps + 1))
                        .map(|_| (1 + rng.below(settle - 1), rng.uniform(0.25, 1.0)))
                        .collect();
                    steps.sort_by_key(|&(at, _)| at);
                    let mut level = 0.0;
                    let mut next = steps.iter().peekable();
                    for x in 0..length {
                        while let Some(&(_, dv)) = next.next_if(|&&(at, _)| at == x) {
                            level += dv;
                        }
                        v.push(level);
                    }
                }
                let input = Grid::new(self.shape(), v).expect("finite");
                let label = total_variation(&input);
                LabeledSample::new(input, Target::Values(vec![label]))
            }
            Generator::Edges2d { size, noise } => {
                let vertical = index % 2 == 1;
                let at = 3 + rng.below(size - 6);
                let amp = rng.uniform(0.5, 1.0);
                let flip = rng.bernoulli(0.5);
                let mut v = Vec::with_capacity(size * size);
                for r in 0..size {
                    for c in 0..size {
                        let beyond = if vertical { c >= at } else { r >= at };
                        let base = if beyond != flip { amp } else { 0.0 };
                        v.push(base + noise * rng.normal());
                    }
                }
                let input = Grid::new(self.shape(), v).expect("finite");
                LabeledSample::new(input, Target::Class(usize::from(vertical)))
            }
            Generator::Faults2d {
                variables,
                window,
                classes,
                noise,
            } => {
                let class = index % classes;
                let mut v: Vec<f64> = (0..variables * window).map(|_| noise * rng.normal()).collect();
                if class > 0 {
                    let row = FAULT_ROWS[class - 1];
                    let onset = window / 6 + rng.below(window / 3);
                    let amp = rng.uniform(1.0, 2.0);
                    let span = (window - onset) as f64;
                    for t in onset..window {
                        let dt = (t - onset) as f64;
                        v[row * window + t] += amp
                            * match (class - 1) % 3 {
                                0 => 1.0,
                                1 => 1.5 * dt / span,
                                _ => (std::f64::consts::TAU * dt / 8.0).sin(),
                            };
                    }
                }
                let input = Grid::new(self.shape(), v).expect("finite");
                LabeledSample::new(input, Target::Class(class))
            }
            Generator::Voxels3d { size } => {
                let mut v = Vec::with_capacity(3 * size * size * size);
                let lo = size as f64 * 0.2;
                let hi = size as f64 * 0.8;
                for _ in 0..3 {
                    let center = [rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)];
                    let width = rng.uniform(1.5, 3.0);
                    for x in 0..size {
                        for y in 0..size {
                            for z in 0..size {
                                let d = [x as f64 - center[0], y as f64 - center[1], z as f64 - center[2]];
                                let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                                v.push((-r2 / (2.0 * width * width)).exp());
                            }
                        }
                    }
                }
                let input = Grid::new(self.shape(), v).expect("finite");
                let label = channel_overlap(&input);
                LabeledSample::new(input, Target::Values(vec![label]))
            }
        }
    }

    /// Recomputes a label from a stored input by the generator's closed
    /// form. Exact for the regression families; the classification
    /// families are recovered exactly when generated without noise.
    pub fn relabel(&self, input: &Grid) -> Result<Target> {
        if input.shape() != &self.shape() {
            return Err(Error::shape(format!("{} does not match {}", input.shape(), self.shape())));
        }
        match *self {
            Generator::Series1d { .. } => Ok(Target::Values(vec![total_variation(input)])),
            Generator::Voxels3d { .. } => Ok(Target::Values(vec![channel_overlap(input)])),
            Generator::Edges2d { .. } => {
                let strength = |dir| -> Result<f64> {
                    let r = cross_correlate(input, &sobel2d(dir), &ConvGeometry::valid(2))?;
                    Ok(r.values().iter().map(|v| v.abs()).sum())
                };
                let rows = strength(SobelDirection::Vertical)?;
                let cols = strength(SobelDirection::Horizontal)?;
                Ok(Target::Class(usize::from(cols > rows)))
            }
            Generator::Faults2d { window, classes, .. } => {
                let energy = |row: usize| -> f64 {
                    input.values()[row * window..(row + 1) * window].iter().map(|v| v * v).sum()
                };
                let (best, e) = FAULT_ROWS[..classes - 1]
                    .iter()
                    .enumerate()
                    .map(|(k, &row)| (k + 1, energy(row)))
                    .fold((0, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
                let typical = input.values().iter().map(|v| v * v).sum::<f64>() / input.shape().extents()[0] as f64;
                // a signature row carries far more energy than the average row
                Ok(Target::Class(if e > 4.0 * typical { best } else { 0 }))
            }
        }
    }
}

/// `Σ_c Σ_x |v_c[x+1] − v_c[x]|` over a rank-1 grid.
pub fn total_variation(series: &Grid) -> f64 {
    let n = series.shape().extents()[0];
    (0..series.shape().channels())
        .map(|c| {
            let s = series.channel_slice(c);
            (0..n - 1).map(|x| (s[x + 1] - s[x]).abs()).sum::<f64>()
        })
        .sum()
}

/// Mean over voxels of the pairwise channel products of a 3-channel field.
pub fn channel_overlap(field: &Grid) -> f64 {
    let (a, b, c) = (field.channel_slice(0), field.channel_slice(1), field.channel_slice(2));
    let total: f64 = (0..a.len()).map(|k| a[k] * b[k] + b[k] * c[k] + a[k] * c[k]).sum();
    total / a.len() as f64
}

/// Generator, sample count and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub generator: Generator,
    pub n: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(generator: Generator, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("a synthetic dataset needs at least one sample"));
        }
        generator.validate()?;
        Ok(Self { generator, n, seed })
    }

    pub fn generate(&self) -> Dataset {
        let mut rng = SplitMix64::new(self.seed);
        let samples = (0..self.n).map(|k| self.generator.sample(k, &mut rng)).collect();
        Dataset::new(self.generator.shape(), self.generator.task(), samples).expect("generator output is valid")
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:n={},seed={}", self.generator.id(), self.n, self.seed)?;
        match &self.generator {
            Generator::Series1d {
                length,
                channels,
                max_jumps,
            } => write!(f, ",length={length},channels={channels},max_jumps={max_jumps}"),
            Generator::Edges2d { size, noise } => write!(f, ",size={size},noise={noise}"),
            Generator::Faults2d {
                variables,
                window,
                classes,
                noise,
            } => write!(f, ",variables={variables},window={window},classes={classes},noise={noise}"),
            Generator::Voxels3d { size } => write!(f, ",size={size}"),
        }
    }
}

/// `<generator>[:key=value,...]`; `n` defaults to 100 and `seed` to 0.
impl FromStr for SynthSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (id, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut generator = Generator::default_for(id.trim())?;
        let mut n = 100;
        let mut seed = 0;
        for item in rest.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("expected key=value, got {item:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let int = || value.parse::<usize>().map_err(|_| Error::parse(format!("{key}: bad integer {value:?}")));
            let real = || value.parse::<f64>().map_err(|_| Error::parse(format!("{key}: bad number {value:?}")));
            match (&mut generator, key) {
                (_, "n") => n = int()?,
                (_, "seed") => seed = value.parse().map_err(|_| Error::parse(format!("seed: bad integer {value:?}")))?,
                (Generator::Series1d { length, .. }, "length") => *length = int()?,
                (Generator::Series1d { channels, .. }, "channels") => *channels = int()?,
                (Generator::Series1d { max_jumps, .. }, "max_jumps") => *max_jumps = int()?,
                (Generator::Edges2d { size, .. }, "size") => *size = int()?,
                (Generator::Edges2d { noise, .. }, "noise") => *noise = real()?,
                (Generator::Faults2d { variables, .. }, "variables") => *variables = int()?,
                (Generator::Faults2d { window, .. }, "window") => *window = int()?,
                (Generator::Faults2d { classes, .. }, "classes") => *classes = int()?,
                (Generator::Faults2d { noise, .. }, "noise") => *noise = real()?,
                (Generator::Voxels3d { size }, "size") => *size = int()?,
                (g, k) => return Err(Error::parse(format!("unknown parameter {k:?} for {}", g.id()))),
            }
        }
        SynthSpec::new(generator, n, seed)
    }
}
