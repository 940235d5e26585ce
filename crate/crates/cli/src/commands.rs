use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use convgrid::check::{gradient_check, instance_for_spec, random_instance};
use convgrid::network::Model;
use convgrid::operators::depthwise;
use convgrid::saliency::rank_descending;
use convgrid::train::{self, Metrics};
use convgrid::{
    convolve as mirror_conv, cross_correlate, gradient_saliency, init_params, integrated_gradients, named_operator,
    saliency_mask, time_averaged_saliency, write_pgm, Activation, BaselineInput, Checkpoint, ConvGeometry, Dataset,
    Error, Grid, LabeledSample, LossKind, NetworkSpec, OperatorBank, SynthSpec, Target, TrainConfig,
};

use crate::config::TrainFile;
use crate::{ConvolveArgs, GradcheckArgs, SaliencyArgs};

pub enum CliError {
    Usage(String),
    Core(Error),
    GradcheckFailed { error: f64, tolerance: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(Error::Numerical { .. }) => 3,
            CliError::Core(_) => 2,
            CliError::GradcheckFailed { .. } => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::GradcheckFailed { error, tolerance } => {
                write!(f, "gradient check failed: {error:e} exceeds {tolerance:e}")
            }
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

type CliResult = Result<(), CliError>;

fn axis_list(raw: &str, rank: usize, what: &str) -> Result<Vec<usize>, CliError> {
    let vals: Vec<usize> = raw
        .split(',')
        .map(|t| t.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--{what}: expected comma-separated integers, got {raw:?}")))?;
    match vals.len() {
        1 => Ok(vec![vals[0]; rank]),
        n if n == rank => Ok(vals),
        n => Err(CliError::Usage(format!("--{what}: {n} values for a rank-{rank} input"))),
    }
}

fn parse_loss(raw: Option<&str>, spec: &NetworkSpec) -> Result<LossKind, CliError> {
    match raw {
        Some(s) => s.parse::<LossKind>().map_err(|e| CliError::Usage(e.to_string())),
        None => Ok(LossKind::for_head(spec.output_activation(), spec.n_outputs())),
    }
}

pub fn convolve(a: &ConvolveArgs) -> CliResult {
    let input = Grid::load(&a.input)?;
    let rank = input.shape().rank();
    let bank = if Path::new(&a.op).is_file() {
        OperatorBank::load(&a.op)?
    } else {
        let single = named_operator(&a.op, rank)?;
        // named operators act on every channel independently
        if input.shape().channels() > 1 {
            depthwise(&single, input.shape().channels())?
        } else {
            single
        }
    };
    let geom = ConvGeometry::new(axis_list(&a.pad, rank, "pad")?, axis_list(&a.stride, rank, "stride")?)?;
    let out = if a.mirror {
        mirror_conv(&input, &bank, &geom)?
    } else {
        cross_correlate(&input, &bank, &geom)?
    };
    out.save(&a.out)?;
    println!("{} -> {}", input.shape(), out.shape());
    Ok(())
}

pub fn synth(spec: &str, out: &Path) -> CliResult {
    let spec: SynthSpec = spec.parse()?;
    let data = spec.generate();
    data.save(out)?;
    println!("{spec}: {} samples of {}", data.len(), data.shape());
    Ok(())
}

pub fn split(dataset: &Path, ratios: &str, seed: u64, outs: &[PathBuf]) -> CliResult {
    let ratios: Vec<usize> = ratios
        .split(':')
        .map(|t| t.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--ratios: expected colon-separated integers, got {ratios:?}")))?;
    if ratios.len() != outs.len() {
        return Err(CliError::Usage(format!(
            "{} ratios but {} output files",
            ratios.len(),
            outs.len()
        )));
    }
    let data = Dataset::load(dataset)?;
    for (part, path) in data.split(&ratios, seed)?.iter().zip(outs) {
        part.save(path)?;
        println!("{}: {} samples", path.display(), part.len());
    }
    Ok(())
}

pub fn train(config: &Path) -> CliResult {
    let cfg = TrainFile::parse(&fs::read_to_string(config)?)?;
    let resolved = cfg.resolved();
    for line in resolved.lines() {
        log::info!("{line}");
    }
    let data = Dataset::load(&cfg.dataset)?;
    let spec = &cfg.spec;
    if data.shape() != spec.input_shape() {
        return Err(Error::Shape(format!(
            "dataset shape {} does not match network input {}",
            data.shape(),
            spec.input_shape()
        ))
        .into());
    }
    let mut theta = init_params(spec, cfg.init_seed, cfg.init);
    let tc = TrainConfig {
        optimizer: cfg.optimizer,
        learning_rate: cfg.lr,
        epochs: cfg.epochs,
        loss: cfg.loss(),
        seed: cfg.seed,
        parallel: cfg.parallel,
    };
    let mut csv = String::new();
    for line in resolved.lines() {
        csv.push_str("# ");
        csv.push_str(line);
        csv.push('\n');
    }
    csv.push_str("epoch,loss,metric\n");
    let result = train::train(spec, &mut theta, data.samples(), data.task(), &tc, |r| {
        log::info!("epoch {} loss {} metric {}", r.epoch, r.loss, r.metric);
        csv.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.metric));
    });
    fs::write(&cfg.log_out, &csv)?;
    let records = result?;
    Checkpoint::new(spec.clone(), theta)?.save(&cfg.checkpoint_out)?;
    match records.last() {
        Some(r) => println!("epoch {} loss {} metric {}", r.epoch, r.loss, r.metric),
        None => println!("no epochs run; checkpoint holds the initialization"),
    }
    Ok(())
}

pub fn eval(checkpoint: &Path, dataset: &Path) -> CliResult {
    let ck = Checkpoint::load(checkpoint)?;
    let data = Dataset::load(dataset)?;
    let metrics = train::evaluate(&ck.spec, &ck.params, data.samples(), data.task())?;
    let mut out = std::io::stdout().lock();
    match metrics {
        Metrics::Regression { rmse, .. } => writeln!(out, "rmse {rmse}")?,
        Metrics::Classification {
            accuracy, confusion, ..
        } => {
            writeln!(out, "accuracy {accuracy}")?;
            writeln!(out, "confusion (rows predicted, columns true)")?;
            for row in confusion {
                let cells: Vec<String> = row.iter().map(usize::to_string).collect();
                writeln!(out, "{}", cells.join(" "))?;
            }
        }
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult {
    let inst = match &a.spec {
        Some(text) => {
            let spec: NetworkSpec = text.parse()?;
            let loss = parse_loss(a.loss.as_deref(), &spec)?;
            instance_for_spec(spec, a.seed, loss)
        }
        None => {
            if !(1..=3).contains(&a.rank) {
                return Err(CliError::Usage(format!("--rank must be 1, 2 or 3, got {}", a.rank)));
            }
            random_instance(a.seed, a.rank)?
        }
    };
    let r = gradient_check(&inst.spec, &inst.theta, &inst.sample, inst.loss, a.step)?;
    println!("spec {}", inst.spec);
    println!("loss {} parameters {}", inst.loss, inst.theta.len());
    println!(
        "max_rel_error {:e} at parameter {} (analytic {:e}, numeric {:e})",
        r.max_rel_error,
        r.worst_index,
        r.analytic.get(r.worst_index).copied().unwrap_or(0.0),
        r.numeric.get(r.worst_index).copied().unwrap_or(0.0)
    );
    if !(r.max_rel_error <= a.tolerance) {
        return Err(CliError::GradcheckFailed {
            error: r.max_rel_error,
            tolerance: a.tolerance,
        });
    }
    Ok(())
}

fn parse_target(raw: &str, spec: &NetworkSpec, loss: LossKind) -> Result<Target, CliError> {
    let bad = || CliError::Usage(format!("--target: cannot parse {raw:?}"));
    let classify = loss != LossKind::Mse;
    if classify && !raw.contains(',') {
        return raw.trim().parse().map(Target::Class).map_err(|_| bad());
    }
    let v: Vec<f64> = raw.split(',').map(|t| t.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
    if v.len() != spec.n_outputs() {
        return Err(CliError::Usage(format!(
            "--target has {} values for {} outputs",
            v.len(),
            spec.n_outputs()
        )));
    }
    Ok(Target::Values(v))
}

pub fn saliency(a: &SaliencyArgs) -> CliResult {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let spec = &ck.spec;
    let input = Grid::load(&a.input)?;
    let loss = parse_loss(a.loss.as_deref(), spec)?;
    let target = match &a.target {
        Some(raw) => parse_target(raw, spec, loss)?,
        None => {
            let classify = matches!(spec.output_activation(), Activation::Softmax)
                || (spec.output_activation() == Activation::Sigmoid && spec.n_outputs() == 1);
            if !classify {
                return Err(CliError::Usage("--target is required for regression heads".into()));
            }
            let y_hat = Model::new(spec.clone(), &ck.params)?.forward(&input)?;
            Target::Class(convgrid::predict_class(&y_hat))
        }
    };
    let sample = LabeledSample::new(input, target);
    let field = if a.ig {
        let baseline = match &a.baseline {
            Some(p) => BaselineInput(Grid::load(p)?),
            None => BaselineInput::zeros(sample.input.shape()),
        };
        integrated_gradients(spec, &ck.params, &sample, &baseline, loss, a.steps)?
    } else {
        gradient_saliency(spec, &ck.params, &sample, loss)?
    };
    let shown = field.presentation();
    shown.save(&a.out)?;
    println!("saliency {} written to {}", shown.shape(), a.out.display());
    if field.is_signed() {
        println!("signed sum {}", field.sum());
    }
    if let Some(p) = &a.pgm {
        write_pgm(&saliency_mask(&field), p)?;
    }
    if a.rank_variables {
        let avg = time_averaged_saliency(&field)?;
        for (place, k) in rank_descending(&avg).iter().enumerate() {
            println!("{:>3} variable {k} {}", place + 1, avg[*k]);
        }
    }
    Ok(())
}
