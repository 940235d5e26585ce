//! Input attributions: loss-gradient saliency, its channel-max mask,
//! integrated gradients and per-variable time averages.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, Shape};
use crate::network::{Model, NetworkSpec, ParamVector};
use crate::train::{sample_gradient, LabeledSample, LossKind};

/// Attribution over the input grid. Integrated gradients keep their sign
/// until [`SaliencyField::presentation`].
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyField {
    values: Grid,
    signed: bool,
}

impl SaliencyField {
    pub fn values(&self) -> &Grid {
        &self.values
    }

    /// Whether entries may still be negative.
    pub fn is_signed(&self) -> bool {
        self.signed
    }

    /// Sum of entries, meaningful on the signed field.
    pub fn sum(&self) -> f64 {
        self.values.values().iter().sum()
    }

    /// Nonnegative form.
    pub fn presentation(&self) -> Grid {
        if !self.signed {
            return self.values.clone();
        }
        let v = self.values.values().iter().map(|x| x.abs()).collect();
        Grid::from_parts(self.values.shape().clone(), v).expect("shape preserved")
    }
}

/// Reference input representing the absence of features.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineInput(pub Grid);

impl BaselineInput {
    pub fn zeros(shape: &Shape) -> Self {
        BaselineInput(Grid::zeros(shape.clone()))
    }
}

/// Signed `∂L/∂V` for one sample.
pub fn input_gradient(model: &Model, sample: &LabeledSample, kind: LossKind) -> Result<Grid> {
    let g = sample_gradient(model, sample, kind, true)?;
    Ok(g.input.expect("input gradient requested"))
}

/// `abs(∂L/∂V)`.
pub fn gradient_saliency(
    spec: &NetworkSpec,
    theta: &ParamVector,
    sample: &LabeledSample,
    kind: LossKind,
) -> Result<SaliencyField> {
    let model = Model::new(spec.clone(), theta)?;
    let g = input_gradient(&model, sample, kind)?;
    let v = g.values().iter().map(|x| x.abs()).collect();
    Ok(SaliencyField {
        values: Grid::from_parts(g.shape().clone(), v)?,
        signed: false,
    })
}

/// Elementwise maximum over channels of the presentation form.
pub fn saliency_mask(field: &SaliencyField) -> Grid {
    let g = field.presentation();
    let shape = g.shape();
    let vol = shape.volume();
    let mut mask = g.channel_slice(0).to_vec();
    for c in 1..shape.channels() {
        for (m, &v) in mask.iter_mut().zip(g.channel_slice(c)) {
            *m = m.max(v);
        }
    }
    debug_assert_eq!(mask.len(), vol);
    Grid::from_parts(shape.with_channels(1).expect("one channel"), mask).expect("volume matches")
}

pub const DEFAULT_IG_STEPS: usize = 50;

/// Midpoint Riemann approximation of the path integral from `baseline` to
/// the sample input: `(V − V̄) ⊙ (1/m) Σ_k ∂L/∂V` at `V̄ + (k − ½)/m · (V − V̄)`.
/// The result is signed.
pub fn integrated_gradients(
    spec: &NetworkSpec,
    theta: &ParamVector,
    sample: &LabeledSample,
    baseline: &BaselineInput,
    kind: LossKind,
    steps: usize,
) -> Result<SaliencyField> {
    if steps == 0 {
        return Err(Error::invalid("integrated gradients need at least one step"));
    }
    let input = &sample.input;
    if baseline.0.shape() != input.shape() {
        return Err(Error::shape(format!(
            "baseline {} does not match input {}",
            baseline.0.shape(),
            input.shape()
        )));
    }
    let model = Model::new(spec.clone(), theta)?;
    let base = baseline.0.values();
    let delta: Vec<f64> = input.values().iter().zip(base).map(|(x, b)| x - b).collect();
    let point_grad = |k: usize| -> Result<Grid> {
        let beta = (k as f64 + 0.5) / steps as f64;
        let v = base.iter().zip(&delta).map(|(b, d)| b + beta * d).collect();
        let on_path = LabeledSample::new(Grid::new(input.shape().clone(), v)?, sample.target.clone());
        input_gradient(&model, &on_path, kind)
    };
    let grads: Vec<Result<Grid>> = (0..steps).into_par_iter().map(point_grad).collect();
    let mut acc = vec![0.0; delta.len()];
    for g in grads {
        for (a, v) in acc.iter_mut().zip(g?.values()) {
            *a += v;
        }
    }
    let inv = 1.0 / steps as f64;
    let values = acc.iter().zip(&delta).map(|(a, d)| d * a * inv).collect();
    Ok(SaliencyField {
        values: Grid::from_parts(input.shape().clone(), values)?,
        signed: true,
    })
}

/// Mean of the presentation form over the time axis (and channels) for each
/// variable row of a variables × time field.
pub fn time_averaged_saliency(field: &SaliencyField) -> Result<Vec<f64>> {
    let g = field.presentation();
    let shape = g.shape();
    if shape.rank() != 2 {
        return Err(Error::shape(format!("time averaging needs a rank-2 field, got {shape}")));
    }
    let (rows, cols) = (shape.extents()[0], shape.extents()[1]);
    let denom = (cols * shape.channels()) as f64;
    let mut out = vec![0.0; rows];
    for c in 0..shape.channels() {
        for (r, row) in g.channel_slice(c).chunks(cols).enumerate() {
            out[r] += row.iter().sum::<f64>();
        }
    }
    for v in &mut out {
        *v /= denom;
    }
    Ok(out)
}

/// Indices ordered by descending value, ties broken by lower index.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}
