//! Losses, backpropagation over a whole network, the finite-difference
//! oracle, and the three gradient-descent variants.

use std::fmt;
use std::str::FromStr;
use std::sync::Once;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::layers::Activation;
use crate::network::{predict_class, ForwardTrace, Model, NetworkSpec, OutputGrad, ParamVector, StageTrace};
use crate::rng::SplitMix64;

/// Probabilities fed to cross-entropy are clamped to `[EPS, 1 − EPS]`.
pub const PROB_EPS: f64 = 1e-12;

static CLAMP_WARNING: Once = Once::new();

fn clamp_prob(p: f64) -> f64 {
    let c = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if c != p {
        CLAMP_WARNING.call_once(|| log::warn!("cross-entropy input {p} clamped to [{PROB_EPS}, 1-{PROB_EPS}]"));
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    Mse,
    BinaryCrossEntropy,
    /// Requires a softmax head.
    CategoricalCrossEntropy,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::BinaryCrossEntropy => "bce",
            LossKind::CategoricalCrossEntropy => "cce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "bce" | "binary-cross-entropy" => Ok(LossKind::BinaryCrossEntropy),
            "cce" | "categorical-cross-entropy" => Ok(LossKind::CategoricalCrossEntropy),
            other => Err(Error::parse(format!("unknown loss {other:?}"))),
        }
    }
}

impl LossKind {
    /// Default loss for a network head.
    pub fn for_head(head: Activation, n_out: usize) -> LossKind {
        match head {
            Activation::Softmax => LossKind::CategoricalCrossEntropy,
            Activation::Sigmoid if n_out == 1 => LossKind::BinaryCrossEntropy,
            _ => LossKind::Mse,
        }
    }

    fn check_head(self, head: Activation) -> Result<()> {
        if self == LossKind::CategoricalCrossEntropy && head != Activation::Softmax {
            return Err(Error::invalid("categorical cross-entropy requires a softmax head"));
        }
        Ok(())
    }
}

/// Supervision for one sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Values(Vec<f64>),
    Class(usize),
}

impl Target {
    /// Numeric target for a head with `n_out` outputs: a class index is
    /// used as-is for a single output and one-hot encoded otherwise.
    pub fn to_vector(&self, n_out: usize) -> Result<Vec<f64>> {
        match self {
            Target::Values(v) if v.len() == n_out => Ok(v.clone()),
            Target::Values(v) => Err(Error::shape(format!(
                "target has {} values for {n_out} outputs",
                v.len()
            ))),
            Target::Class(c) if n_out == 1 => {
                if *c > 1 {
                    return Err(Error::invalid(format!("class {c} needs more than one output")));
                }
                Ok(vec![*c as f64])
            }
            Target::Class(c) if *c < n_out => {
                let mut v = vec![0.0; n_out];
                v[*c] = 1.0;
                Ok(v)
            }
            Target::Class(c) => Err(Error::invalid(format!("class {c} out of range for {n_out} outputs"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub input: Grid,
    pub target: Target,
}

impl LabeledSample {
    pub fn new(input: Grid, target: Target) -> Self {
        Self { input, target }
    }
}

/// Dataset-level loss contribution of one sample: `Σ (y − ŷ)²` for MSE,
/// the binary or categorical cross-entropy otherwise.
pub fn loss(y_hat: &[f64], y: &[f64], kind: LossKind) -> f64 {
    match kind {
        LossKind::Mse => y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum(),
        LossKind::BinaryCrossEntropy => y
            .iter()
            .zip(y_hat)
            .map(|(&t, &p)| {
                let p = clamp_prob(p);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum(),
        LossKind::CategoricalCrossEntropy => y
            .iter()
            .zip(y_hat)
            .filter(|(&t, _)| t != 0.0)
            .map(|(&t, &p)| -t * clamp_prob(p).ln())
            .sum(),
    }
}

/// Per-sample objective that backpropagation differentiates. MSE uses the
/// halved form `½ Σ (ŷ − y)²`; cross-entropies are unchanged.
pub fn sample_loss(y_hat: &[f64], y: &[f64], kind: LossKind) -> f64 {
    match kind {
        LossKind::Mse => 0.5 * loss(y_hat, y, kind),
        _ => loss(y_hat, y, kind),
    }
}

/// Gradient of [`sample_loss`]. Categorical cross-entropy is differentiated
/// together with the softmax and seeds the evidence directly.
pub fn loss_grad(y_hat: &[f64], y: &[f64], kind: LossKind) -> OutputGrad {
    match kind {
        LossKind::Mse => OutputGrad::Prediction(y_hat.iter().zip(y).map(|(p, t)| p - t).collect()),
        LossKind::BinaryCrossEntropy => OutputGrad::Prediction(
            y_hat
                .iter()
                .zip(y)
                .map(|(&p, &t)| {
                    let p = clamp_prob(p);
                    (p - t) / (p * (1.0 - p))
                })
                .collect(),
        ),
        LossKind::CategoricalCrossEntropy => {
            OutputGrad::Evidence(y_hat.iter().zip(y).map(|(p, t)| p - t).collect())
        }
    }
}

fn first_non_finite_stage(trace: &ForwardTrace) -> Option<usize> {
    trace.stages.iter().position(|s| match s {
        StageTrace::Conv { post, .. } => !post.is_finite(),
        StageTrace::Pool { output, .. } => !output.is_finite(),
        StageTrace::Flatten { output, .. } => output.iter().any(|v| !v.is_finite()),
        StageTrace::Dense { post, .. } => post.iter().any(|v| !v.is_finite()),
    })
}

/// Loss and parameter gradient (and optionally input gradient) of one sample.
pub struct SampleGradient {
    pub loss: f64,
    pub params: Vec<f64>,
    pub input: Option<Grid>,
}

/// Forward pass, loss seed, reverse pass. Fails with a numerical error that
/// names the first block producing a non-finite value.
pub fn sample_gradient(
    model: &Model,
    sample: &LabeledSample,
    kind: LossKind,
    want_input: bool,
) -> Result<SampleGradient> {
    let spec = model.spec();
    kind.check_head(spec.output_activation())?;
    let y = sample.target.to_vector(spec.n_outputs())?;
    let trace = model.forward_traced(&sample.input)?;
    if let Some(b) = first_non_finite_stage(&trace) {
        return Err(Error::Numerical {
            location: format!("block {b} ({})", spec.shape_report()[b + 1]),
            message: "non-finite activation".into(),
        });
    }
    let y_hat = trace.prediction();
    let l = sample_loss(y_hat, &y, kind);
    if !l.is_finite() {
        return Err(Error::Numerical {
            location: "loss".into(),
            message: format!("loss evaluated to {l}"),
        });
    }
    let g = model.backward(&trace, loss_grad(y_hat, &y, kind), want_input)?;
    if let Some(k) = g.params.iter().position(|v| !v.is_finite()) {
        let seg = spec
            .segments()
            .iter()
            .find(|s| s.range.contains(&k))
            .expect("index within layout");
        return Err(Error::Numerical {
            location: format!("block {} gradient", seg.block),
            message: format!("non-finite gradient at parameter {k}"),
        });
    }
    Ok(SampleGradient {
        loss: l,
        params: g.params,
        input: g.input,
    })
}

/// ∇θ of the per-sample loss.
pub fn backprop(spec: &NetworkSpec, theta: &ParamVector, sample: &LabeledSample, kind: LossKind) -> Result<Vec<f64>> {
    let model = Model::new(spec.clone(), theta)?;
    Ok(sample_gradient(&model, sample, kind, false)?.params)
}

/// Central differences of `f` at `x` with per-coordinate step
/// `h · max(1, |x_k|)`.
pub fn central_differences<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let step = h * x[k].abs().max(1.0);
        probe[k] = x[k] + step;
        let up = f(&probe)?;
        probe[k] = x[k] - step;
        let down = f(&probe)?;
        probe[k] = x[k];
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Finite-difference estimate of the per-sample loss gradient.
pub fn finite_difference_grad(
    spec: &NetworkSpec,
    theta: &ParamVector,
    sample: &LabeledSample,
    kind: LossKind,
    h: f64,
) -> Result<Vec<f64>> {
    kind.check_head(spec.output_activation())?;
    let y = sample.target.to_vector(spec.n_outputs())?;
    central_differences(
        |th| {
            let model = Model::new(spec.clone(), &ParamVector::new(th.to_vec()))?;
            Ok(sample_loss(&model.forward(&sample.input)?, &y, kind))
        },
        theta.values(),
        h,
    )
}

/// Denominator floor of [`relative_error`]: absolute differences below
/// `1e-9` count as at most `1e-6` relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// `|a − b| / max(|a|, |b|, REL_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Largest elementwise [`relative_error`] and where it occurs.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> (f64, usize) {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y))
        .enumerate()
        .fold((0.0, 0), |(best, at), (k, e)| if e > best { (e, k) } else { (best, at) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimizer {
    /// One step per epoch on the full-dataset mean gradient.
    Gd,
    /// One step per sample in seeded random order.
    Sgd,
    /// One step per batch of a seeded shuffle split into contiguous batches.
    MiniBatch { batch_size: usize },
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Optimizer::Gd => write!(f, "gd"),
            Optimizer::Sgd => write!(f, "sgd"),
            Optimizer::MiniBatch { .. } => write!(f, "minibatch"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub loss: LossKind,
    pub seed: u64,
    /// Evaluate per-sample gradients on the rayon pool. Reduction order is
    /// fixed, so results do not depend on this flag.
    pub parallel: bool,
}

impl TrainConfig {
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if let Optimizer::MiniBatch { batch_size } = self.optimizer {
            if batch_size == 0 || batch_size > n_samples {
                return Err(Error::invalid(format!(
                    "batch size {batch_size} must be in 1..={n_samples}"
                )));
            }
        }
        Ok(())
    }
}

/// Samples whose gradients are held in memory at once during a reduction.
const REDUCE_CHUNK: usize = 32;

/// `(1/|idx|) Σ_{k ∈ idx} ∇L^(k)` with the sum taken in the order of `idx`,
/// plus the summed sample loss.
pub fn mean_gradient(
    model: &Model,
    samples: &[LabeledSample],
    idx: &[usize],
    kind: LossKind,
    parallel: bool,
) -> Result<(Vec<f64>, f64)> {
    let mut acc = vec![0.0; model.spec().n_params()];
    let mut total = 0.0;
    let eval = |&k: &usize| sample_gradient(model, &samples[k], kind, false);
    for chunk in idx.chunks(REDUCE_CHUNK) {
        let grads: Vec<Result<SampleGradient>> = if parallel {
            chunk.par_iter().map(eval).collect()
        } else {
            chunk.iter().map(eval).collect()
        };
        for g in grads {
            let g = g?;
            total += g.loss;
            for (a, v) in acc.iter_mut().zip(&g.params) {
                *a += v;
            }
        }
    }
    let inv = 1.0 / idx.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    Ok((acc, total))
}

fn step(theta: &mut ParamVector, grad: &[f64], lr: f64) {
    for (t, g) in theta.values_mut().iter_mut().zip(grad) {
        *t -= lr * g;
    }
}

fn check_nonempty(samples: &[LabeledSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    Ok(())
}

pub fn gd_epoch(
    spec: &NetworkSpec,
    theta: &mut ParamVector,
    samples: &[LabeledSample],
    lr: f64,
    kind: LossKind,
    parallel: bool,
) -> Result<()> {
    check_nonempty(samples)?;
    let model = Model::new(spec.clone(), theta)?;
    let idx: Vec<usize> = (0..samples.len()).collect();
    let (g, _) = mean_gradient(&model, samples, &idx, kind, parallel)?;
    step(theta, &g, lr);
    Ok(())
}

pub fn sgd_epoch(
    spec: &NetworkSpec,
    theta: &mut ParamVector,
    samples: &[LabeledSample],
    lr: f64,
    kind: LossKind,
    rng: &mut SplitMix64,
) -> Result<()> {
    check_nonempty(samples)?;
    for k in rng.permutation(samples.len()) {
        let model = Model::new(spec.clone(), theta)?;
        let g = sample_gradient(&model, &samples[k], kind, false)?;
        step(theta, &g.params, lr);
    }
    Ok(())
}

/// Batches are contiguous slices of a seeded permutation; the last batch
/// may be short. Within a batch gradients are summed in ascending sample
/// index.
pub fn minibatch_epoch(
    spec: &NetworkSpec,
    theta: &mut ParamVector,
    samples: &[LabeledSample],
    batch_size: usize,
    lr: f64,
    kind: LossKind,
    rng: &mut SplitMix64,
    parallel: bool,
) -> Result<()> {
    check_nonempty(samples)?;
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let order = rng.permutation(samples.len());
    for batch in order.chunks(batch_size) {
        let mut idx = batch.to_vec();
        idx.sort_unstable();
        let model = Model::new(spec.clone(), theta)?;
        let (g, _) = mean_gradient(&model, samples, &idx, kind, parallel)?;
        step(theta, &g, lr);
    }
    Ok(())
}

/// Loss and metric after one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub metric: f64,
}

/// Runs `config.epochs` epochs from `theta`, evaluating the training set
/// after each. The shuffle generator is seeded once from `config.seed`.
pub fn train(
    spec: &NetworkSpec,
    theta: &mut ParamVector,
    samples: &[LabeledSample],
    task: Task,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    check_nonempty(samples)?;
    config.validate(samples.len())?;
    config.loss.check_head(spec.output_activation())?;
    check_task(task, spec.n_outputs())?;
    let mut rng = SplitMix64::new(config.seed);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        match config.optimizer {
            Optimizer::Gd => gd_epoch(spec, theta, samples, config.learning_rate, config.loss, config.parallel)?,
            Optimizer::Sgd => sgd_epoch(spec, theta, samples, config.learning_rate, config.loss, &mut rng)?,
            Optimizer::MiniBatch { batch_size } => minibatch_epoch(
                spec,
                theta,
                samples,
                batch_size,
                config.learning_rate,
                config.loss,
                &mut rng,
                config.parallel,
            )?,
        }
        let model = Model::new(spec.clone(), theta)?;
        let preds = predictions(&model, samples, config.parallel)?;
        let loss = mean_loss_of(&preds, samples, config.loss)?;
        let metrics = metrics_of(preds, samples, task, spec.n_outputs())?;
        if !loss.is_finite() {
            return Err(Error::Numerical {
                location: format!("epoch {epoch}"),
                message: format!("training loss is {loss}"),
            });
        }
        let rec = EpochRecord {
            epoch,
            loss,
            metric: metrics.headline(),
        };
        on_epoch(&rec);
        log.push(rec);
    }
    Ok(log)
}

fn predictions(model: &Model, samples: &[LabeledSample], parallel: bool) -> Result<Vec<Vec<f64>>> {
    let f = |s: &LabeledSample| model.forward(&s.input);
    if parallel {
        samples.par_iter().map(f).collect()
    } else {
        samples.iter().map(f).collect()
    }
}

/// Dataset loss: the mean over samples of [`loss`].
pub fn mean_loss(model: &Model, samples: &[LabeledSample], kind: LossKind, parallel: bool) -> Result<f64> {
    check_nonempty(samples)?;
    mean_loss_of(&predictions(model, samples, parallel)?, samples, kind)
}

fn mean_loss_of(preds: &[Vec<f64>], samples: &[LabeledSample], kind: LossKind) -> Result<f64> {
    let n_out = preds.first().map_or(0, Vec::len);
    let mut total = 0.0;
    for (p, s) in preds.iter().zip(samples) {
        total += loss(p, &s.target.to_vector(n_out)?, kind);
    }
    Ok(total / samples.len() as f64)
}

/// Kind of supervision in a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Regression { n_out: usize },
    Classification { classes: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Metrics {
    Regression {
        rmse: f64,
        predictions: Vec<Vec<f64>>,
    },
    Classification {
        accuracy: f64,
        /// `confusion[predicted][true]`.
        confusion: Vec<Vec<usize>>,
        predictions: Vec<usize>,
    },
}

impl Metrics {
    /// RMSE for regression, accuracy for classification.
    pub fn headline(&self) -> f64 {
        match self {
            Metrics::Regression { rmse, .. } => *rmse,
            Metrics::Classification { accuracy, .. } => *accuracy,
        }
    }
}

pub fn evaluate(spec: &NetworkSpec, theta: &ParamVector, samples: &[LabeledSample], task: Task) -> Result<Metrics> {
    let model = Model::new(spec.clone(), theta)?;
    evaluate_model(&model, samples, task, false)
}

/// RMSE over all outputs, or accuracy and confusion matrix with rows
/// indexed by predicted class and columns by true class.
pub fn evaluate_model(model: &Model, samples: &[LabeledSample], task: Task, parallel: bool) -> Result<Metrics> {
    check_nonempty(samples)?;
    let n_out = model.spec().n_outputs();
    check_task(task, n_out)?;
    metrics_of(predictions(model, samples, parallel)?, samples, task, n_out)
}

fn check_task(task: Task, n_out: usize) -> Result<()> {
    match task {
        Task::Regression { n_out: want } => {
            if want != n_out {
                return Err(Error::invalid(format!(
                    "regression task has {want} outputs, network has {n_out}"
                )));
            }
            Ok(())
        }
        Task::Classification { classes } => {
            let head_ok = (n_out == 1 && classes == 2) || n_out == classes;
            if !head_ok {
                return Err(Error::invalid(format!(
                    "{classes}-class task does not match a {n_out}-output head"
                )));
            }
            Ok(())
        }
    }
}

fn metrics_of(preds: Vec<Vec<f64>>, samples: &[LabeledSample], task: Task, n_out: usize) -> Result<Metrics> {
    match task {
        Task::Regression { .. } => {
            let mut sq = 0.0;
            for (p, s) in preds.iter().zip(samples) {
                let y = s.target.to_vector(n_out)?;
                sq += p.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            Ok(Metrics::Regression {
                rmse: (sq / (samples.len() * n_out) as f64).sqrt(),
                predictions: preds,
            })
        }
        Task::Classification { classes } => {
            let mut confusion = vec![vec![0usize; classes]; classes];
            let mut labels = Vec::with_capacity(samples.len());
            let mut correct = 0;
            for (p, s) in preds.iter().zip(samples) {
                let truth = match &s.target {
                    Target::Class(c) if *c < classes => *c,
                    other => return Err(Error::invalid(format!("target {other:?} is not a valid class"))),
                };
                let guess = predict_class(p);
                confusion[guess][truth] += 1;
                correct += usize::from(guess == truth);
                labels.push(guess);
            }
            Ok(Metrics::Classification {
                accuracy: correct as f64 / samples.len() as f64,
                confusion,
                predictions: labels,
            })
        }
    }
}
