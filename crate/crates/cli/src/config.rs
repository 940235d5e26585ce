//! `key=value` training configuration files.

use std::fmt::Write as _;
use std::path::PathBuf;

use convgrid::network::InitScheme;
use convgrid::{Error, LossKind, NetworkSpec, Optimizer, Result};

#[derive(Clone, Debug)]
pub struct TrainFile {
    pub spec: NetworkSpec,
    pub dataset: PathBuf,
    pub checkpoint_out: PathBuf,
    pub log_out: PathBuf,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub epochs: usize,
    /// `None` picks the loss matching the network head.
    pub loss: Option<LossKind>,
    pub seed: u64,
    pub init_seed: u64,
    pub init: InitScheme,
    pub parallel: bool,
}

fn value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Parse(format!("{key}: cannot parse {raw:?}")))
}

impl TrainFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = None;
        let mut dataset = None;
        let mut checkpoint_out = None;
        let mut log_out = None;
        let mut optimizer = "minibatch".to_string();
        let mut batch_size = None;
        let mut lr = 0.01;
        let mut epochs = 10;
        let mut loss = None;
        let mut seed = 0;
        let mut init_seed = None;
        let mut init = InitScheme::UniformScaled;
        let mut parallel = true;

        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", n + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            match key {
                "spec" => spec = Some(raw.parse::<NetworkSpec>()?),
                "dataset" => dataset = Some(PathBuf::from(raw)),
                "checkpoint_out" => checkpoint_out = Some(PathBuf::from(raw)),
                "log_out" => log_out = Some(PathBuf::from(raw)),
                "optimizer" => optimizer = raw.to_string(),
                "batch_size" => batch_size = Some(value::<usize>(key, raw)?),
                "lr" => lr = value(key, raw)?,
                "epochs" => epochs = value(key, raw)?,
                "loss" => loss = Some(raw.parse::<LossKind>()?),
                "seed" => seed = value(key, raw)?,
                "init_seed" => init_seed = Some(value(key, raw)?),
                "init" => {
                    init = match raw.split_once(':') {
                        None if raw == "uniform" => InitScheme::UniformScaled,
                        Some(("constant", c)) => InitScheme::Constant(value(key, c)?),
                        _ => return Err(Error::Parse(format!("init: expected uniform or constant:<c>, got {raw:?}"))),
                    }
                }
                "parallel" => parallel = value(key, raw)?,
                other => return Err(Error::Parse(format!("line {}: unknown key {other:?}", n + 1))),
            }
        }

        let optimizer = match (optimizer.as_str(), batch_size) {
            ("gd", _) => Optimizer::Gd,
            ("sgd", _) => Optimizer::Sgd,
            ("minibatch", Some(b)) => Optimizer::MiniBatch { batch_size: b },
            ("minibatch", None) => return Err(Error::Parse("minibatch needs batch_size".into())),
            (other, _) => return Err(Error::Parse(format!("unknown optimizer {other:?}"))),
        };
        let require = |v: Option<PathBuf>, key: &str| v.ok_or_else(|| Error::Parse(format!("missing key {key}")));
        let checkpoint_out = require(checkpoint_out, "checkpoint_out")?;
        let log_out = log_out.unwrap_or_else(|| {
            let mut p = checkpoint_out.clone().into_os_string();
            p.push(".csv");
            PathBuf::from(p)
        });
        if !(lr > 0.0) {
            return Err(Error::Parse(format!("lr must be positive, got {lr}")));
        }
        Ok(Self {
            spec: spec.ok_or_else(|| Error::Parse("missing key spec".into()))?,
            dataset: require(dataset, "dataset")?,
            checkpoint_out,
            log_out,
            optimizer,
            lr,
            epochs,
            loss,
            seed,
            init_seed: init_seed.unwrap_or(seed),
            init,
            parallel,
        })
    }

    pub fn loss(&self) -> LossKind {
        self.loss
            .unwrap_or_else(|| LossKind::for_head(self.spec.output_activation(), self.spec.n_outputs()))
    }

    /// Every setting after defaults, one `key=value` per line.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "spec={}", self.spec);
        let _ = writeln!(s, "dataset={}", self.dataset.display());
        let _ = writeln!(s, "checkpoint_out={}", self.checkpoint_out.display());
        let _ = writeln!(s, "log_out={}", self.log_out.display());
        let _ = writeln!(s, "optimizer={}", self.optimizer);
        if let Optimizer::MiniBatch { batch_size } = self.optimizer {
            let _ = writeln!(s, "batch_size={batch_size}");
        }
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "loss={}", self.loss());
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "init_seed={}", self.init_seed);
        match self.init {
            InitScheme::UniformScaled => s.push_str("init=uniform\n"),
            InitScheme::Constant(c) => {
                let _ = writeln!(s, "init=constant:{c}");
            }
        }
        let _ = writeln!(s, "parallel={}", self.parallel);
        s
    }
}
