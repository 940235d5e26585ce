//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use convgrid::network::{InitScheme, Layout, Model};
use convgrid::operators::{binomial1d, derivative1d};
use convgrid::train::sample_loss;
use convgrid::{
    convolve, cross_correlate, init_params, integrated_gradients, named_operator, pgm_bytes, BaselineInput,
    Checkpoint, ConvGeometry, Dataset, Grid, LabeledSample, LossKind, NetworkSpec, OperatorBank, Shape,
    SplitMix64, SynthSpec, Target,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn run(dir: &Path, threads: usize, args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_convgrid"))
        .current_dir(dir)
        .env("RAYON_NUM_THREADS", threads.to_string())
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

// ---- 1: gradient soundness through the binary -------------------------

fn gradient_soundness() -> Result<Verdict, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut seen = BTreeSet::new();
    let wanted = [
        "rank1", "rank2", "rank3", "conv1", "conv2", "pool:max", "pool:avg", "sigmoid", "tanh", "relu", "linear",
        "mse", "cross-entropy",
    ];
    let mut runs = 0;
    while runs < 24 || (runs < 90 && wanted.iter().any(|w| !seen.contains(*w))) {
        let rank = 1 + runs % 3;
        let seed = (runs / 3).to_string();
        let out = run(
            dir.path(),
            1,
            &["gradcheck", "--rank", &rank.to_string(), "--seed", &seed, "--tolerance", "1e-6"],
        )?;
        let spec = out.lines().find_map(|l| l.strip_prefix("spec ")).unwrap_or_default();
        let err: f64 = out
            .lines()
            .find_map(|l| l.strip_prefix("max_rel_error "))
            .and_then(|l| l.split_whitespace().next())
            .and_then(|v| v.parse().ok())
            .ok_or("unparsable gradcheck output")?;
        worst = worst.max(err);
        seen.insert(format!("rank{rank}"));
        seen.insert(format!("conv{}", spec.matches("conv:").count()));
        for tag in ["pool:max", "pool:avg", "sigmoid", "tanh", "relu", "linear"] {
            if spec.contains(tag) {
                seen.insert(tag.to_string());
            }
        }
        let loss = out.lines().find_map(|l| l.strip_prefix("loss ")).unwrap_or_default();
        seen.insert(if loss.starts_with("mse") { "mse" } else { "cross-entropy" }.to_string());
        runs += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let missing: Vec<&str> = wanted.iter().copied().filter(|w| !seen.contains(*w)).collect();
    Ok(verdict(
        worst <= 1e-6 && missing.is_empty() && secs < 60.0,
        format!("{runs} random specs, worst relative error {worst:.2e}, {secs:.1}s, uncovered {missing:?}"),
    ))
}

// ---- 2: convolution against direct summation --------------------------

fn direct_sum(x: &Grid, bank: &OperatorBank, pad: &[usize], stride: &[usize], mirror: bool) -> (Vec<f64>, Vec<f64>) {
    let ext = x.shape().extents();
    let ker = bank.kernel_extents();
    let rank = ext.len();
    let out: Vec<usize> = (0..rank).map(|a| (ext[a] + 2 * pad[a] - ker[a]) / stride[a] + 1).collect();
    let grid_positions = |e: &[usize]| {
        let mut all = vec![Vec::new()];
        for &n in e {
            all = all.into_iter().flat_map(|p: Vec<usize>| (0..n).map(move |i| [p.clone(), vec![i]].concat())).collect();
        }
        all
    };
    let (mut vals, mut mags) = (Vec::new(), Vec::new());
    for j in 0..bank.out_channels() {
        for o in grid_positions(&out) {
            let (mut acc, mut mag) = (0.0, 0.0);
            for i in 0..bank.in_channels() {
                for k in grid_positions(ker) {
                    let src: Option<Vec<usize>> = (0..rank)
                        .map(|a| (o[a] * stride[a] + k[a]).checked_sub(pad[a]).filter(|&s| s < ext[a]))
                        .collect();
                    let Some(src) = src else { continue };
                    let flat = (0..rank).fold(0, |f, a| f * ker[a] + if mirror { ker[a] - 1 - k[a] } else { k[a] });
                    let term = bank.kernel(i, j)[flat] * x.get(i, &src);
                    acc += term;
                    mag += term.abs();
                }
            }
            vals.push(acc);
            mags.push(mag);
        }
    }
    (vals, mags)
}

fn random_conv_case(rng: &mut SplitMix64, rank: usize, integer: bool) -> (Grid, OperatorBank, Vec<usize>, Vec<usize>) {
    let draw = |rng: &mut SplitMix64| if integer { rng.below(9) as f64 - 4.0 } else { rng.normal() };
    let ext: Vec<usize> = (0..rank).map(|_| 3 + rng.below(if rank == 3 { 3 } else { 6 })).collect();
    let ker: Vec<usize> = ext.iter().map(|&n| 1 + rng.below(n.min(3))).collect();
    let pad: Vec<usize> = (0..rank).map(|_| rng.below(3)).collect();
    let stride: Vec<usize> = (0..rank).map(|_| 1 + rng.below(2)).collect();
    let (p, q) = (1 + rng.below(3), 1 + rng.below(3));
    let shape = Shape::new(ext, p).unwrap();
    let x = Grid::new(shape.clone(), (0..shape.len()).map(|_| draw(rng)).collect()).unwrap();
    let n = p * q * ker.iter().product::<usize>();
    let bank = OperatorBank::new(p, q, ker, (0..n).map(|_| draw(rng)).collect()).unwrap();
    (x, bank, pad, stride)
}

fn oracle_equivalence() -> Result<Verdict, String> {
    let mut rng = SplitMix64::new(31);
    let mut worst: f64 = 0.0;
    let (mut padded, mut strided) = (0, 0);
    for rank in 1..=3 {
        for _ in 0..100 {
            let (x, bank, pad, stride) = random_conv_case(&mut rng, rank, false);
            padded += usize::from(pad.iter().any(|&p| p > 0));
            strided += usize::from(stride.iter().any(|&s| s > 1));
            let geom = ConvGeometry::new(pad.clone(), stride.clone()).map_err(|e| e.to_string())?;
            for mirror in [false, true] {
                let got = if mirror { convolve(&x, &bank, &geom) } else { cross_correlate(&x, &bank, &geom) }
                    .map_err(|e| e.to_string())?;
                let (want, mags) = direct_sum(&x, &bank, &pad, &stride, mirror);
                if got.values().len() != want.len() {
                    return Ok(verdict(false, "output size differs from the direct sum"));
                }
                for ((g, w), m) in got.values().iter().zip(&want).zip(&mags) {
                    worst = worst.max((g - w).abs() / m.max(f64::MIN_POSITIVE));
                }
            }
        }
    }
    let mut channel_sum_exact = true;
    for rank in 1..=3 {
        for _ in 0..30 {
            let (x, bank, pad, stride) = random_conv_case(&mut rng, rank, true);
            let geom = ConvGeometry::new(pad, stride).map_err(|e| e.to_string())?;
            let full = cross_correlate(&x, &bank, &geom).map_err(|e| e.to_string())?;
            for j in 0..bank.out_channels() {
                let mut sum = vec![0.0; full.shape().volume()];
                for i in 0..bank.in_channels() {
                    let single = OperatorBank::single(bank.kernel_extents().to_vec(), bank.kernel(i, j).to_vec())
                        .map_err(|e| e.to_string())?;
                    let part = cross_correlate(&x.channel_view(i).unwrap(), &single, &geom).map_err(|e| e.to_string())?;
                    sum.iter_mut().zip(part.values()).for_each(|(s, v)| *s += v);
                }
                channel_sum_exact &= full.channel_slice(j) == &sum[..];
            }
        }
    }
    Ok(verdict(
        worst <= 1e-12 && channel_sum_exact && padded > 50 && strided > 50,
        format!(
            "300 instances ({padded} padded, {strided} strided), worst relative error {worst:.1e}, \
             channel sums exact: {channel_sum_exact}"
        ),
    ))
}

// ---- 3: named operators ------------------------------------------------

fn operator_fidelity() -> Result<Verdict, String> {
    let expect: [(&str, Vec<f64>); 5] = [
        ("derivative1d", vec![1.0, 0.0, -1.0]),
        ("binomial1d", vec![1.0, 2.0, 1.0]),
        ("sobel-v", vec![1.0, 2.0, 1.0, 0.0, 0.0, 0.0, -1.0, -2.0, -1.0]),
        ("laplacian", vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]),
        ("gaussian3x3", [1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0].iter().map(|v| v / 16.0).collect()),
    ];
    let mut bad = Vec::new();
    for (id, w) in &expect {
        let op = named_operator(id, 2).map_err(|e| e.to_string())?;
        let bitwise = op.weights().len() == w.len() && op.weights().iter().zip(w).all(|(a, b)| a.to_bits() == b.to_bits());
        if !bitwise {
            bad.push(*id);
        }
    }
    let mut rng = SplitMix64::new(8);
    let rows: Vec<Vec<f64>> = (0..10).map(|_| (0..12).map(|_| rng.normal()).collect()).collect();
    let img = Grid::matrix(&rows).map_err(|e| e.to_string())?;
    let valid = ConvGeometry::valid(2);
    let smooth = OperatorBank::single(vec![1, 3], binomial1d().weights().to_vec()).unwrap();
    let diff = OperatorBank::single(vec![3, 1], derivative1d().weights().to_vec()).unwrap();
    let staged = cross_correlate(&cross_correlate(&img, &smooth, &valid).unwrap(), &diff, &valid).unwrap();
    let direct = cross_correlate(&img, &named_operator("sobel-v", 2).unwrap(), &valid).unwrap();
    let sep = staged
        .values()
        .iter()
        .zip(direct.values())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max);
    Ok(verdict(
        bad.is_empty() && sep <= 1e-12,
        format!("5 operators bitwise exact (mismatched {bad:?}), Sobel separability error {sep:.1e}"),
    ))
}

// ---- 4: shape audit ----------------------------------------------------

fn extents(spec: &NetworkSpec) -> Vec<Vec<usize>> {
    spec.layouts()
        .iter()
        .map(|l| match l {
            Layout::Grid(s) => s.extents().to_vec(),
            Layout::Vector(n) => vec![*n],
        })
        .collect()
}

fn shape_audit() -> Result<Verdict, String> {
    let parse = |s: &str| s.parse::<NetworkSpec>().map_err(|e| e.to_string());
    let rotor = parse(
        "input:1:240:9; conv:64:3:0:1:relu; pool:max:2; flatten; dense:32:relu; dense:32:relu; dense:1:linear",
    )?;
    let endo = parse("input:2:50,50:3; conv:64:3:0:1:relu; pool:max:2; flatten; dense:1:linear")?;
    let solvent = parse(
        "input:3:20,20,20:3; conv:8:3:0:1:relu; conv:16:3:0:1:relu; pool:max:2; conv:32:3:0:1:relu; \
         conv:64:3:0:1:relu; pool:max:2; flatten; dense:128:relu; dense:128:relu; dense:128:relu; dense:1:linear",
    )?;
    let te = parse(
        "input:2:52,60:1; conv:64:3:0:1:relu; pool:max:2; conv:64:3:0:1:relu; pool:max:2; flatten; \
         dense:128:relu; dense:64:relu; dense:20:softmax",
    )?;
    let r = extents(&rotor);
    let e = extents(&endo);
    let s = extents(&solvent);
    let cube = |n| vec![n; 3];
    let checks = [
        ("rotor 238/119/7616", r[0] == [238] && r[1] == [119] && r[2] == [7616]),
        ("endo 48/24", e[0] == [48, 48] && e[1] == [24, 24] && e[2] == [36864]),
        (
            "solvent 18/16/8/6/4/2/512",
            s[..6] == [cube(18), cube(16), cube(8), cube(6), cube(4), cube(2)] && s[6] == [512],
        ),
        ("te arity 20", te.n_outputs() == 20),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Ok(verdict(
        failed.is_empty(),
        format!("rotor, endo, solvent, te audited; endo flatten is 24*24*64 = 36864; failed {failed:?}"),
    ))
}

// ---- 5-7, 9: learning runs through the binary ---------------------------

struct Task {
    synth: &'static str,
    ratios: &'static str,
    config: String,
}

fn edges_task() -> Task {
    Task {
        synth: "edges2d:n=200,seed=11",
        ratios: "3:1",
        config: "spec=input:2:16,16:1; conv:8:3:0:1:tanh; pool:max:2; flatten; dense:1:sigmoid\n\
                 loss=bce\noptimizer=minibatch\nbatch_size=20\nlr=0.05\nepochs=200\nseed=3\n"
            .into(),
    }
}

fn series_task() -> Task {
    Task {
        synth: "series1d:n=300,seed=7",
        ratios: "4:1",
        config: "spec=input:1:240:9; conv:8:3:0:1:relu; pool:max:2; flatten; dense:1:linear\n\
                 loss=mse\noptimizer=minibatch\nbatch_size=5\nlr=0.001\nepochs=300\nseed=3\n"
            .into(),
    }
}

fn faults_task() -> Task {
    Task {
        synth: "faults2d:n=400,seed=5,classes=4",
        ratios: "3:1",
        config: "spec=input:2:52,60:1; conv:8:3:0:1:relu; pool:max:2; flatten; dense:16:relu; dense:4:softmax\n\
                 loss=cce\noptimizer=minibatch\nbatch_size=20\nlr=0.05\nepochs=60\nseed=3\n"
            .into(),
    }
}

/// Generates, splits, trains with parallel gradients and evaluates on the
/// held-out part. Returns wall time and the `eval` report.
fn learn(dir: &Path, task: &Task, threads: usize) -> Result<(f64, String), String> {
    let start = Instant::now();
    fs::write(
        dir.join("run.cfg"),
        format!("{}dataset=train.dst\ncheckpoint_out=model.ckp\nparallel=true\n", task.config),
    )
    .map_err(|e| e.to_string())?;
    run(dir, threads, &["synth", "--spec", task.synth, "--out", "all.dst"])?;
    run(
        dir,
        threads,
        &["split", "--dataset", "all.dst", "--ratios", task.ratios, "--seed", "1", "--out", "train.dst", "--out", "test.dst"],
    )?;
    run(dir, threads, &["train", "--config", "run.cfg"])?;
    let report = run(dir, threads, &["eval", "--checkpoint", "model.ckp", "--dataset", "test.dst"])?;
    Ok((start.elapsed().as_secs_f64(), report))
}

fn reported(report: &str, key: &str) -> Result<f64, String> {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| format!("no {key} in eval output"))
}

fn label_std(path: &Path) -> Result<f64, String> {
    let data = Dataset::load(path).map_err(|e| e.to_string())?;
    let labels: Vec<f64> = data
        .samples()
        .iter()
        .map(|s| match &s.target {
            Target::Values(v) => v[0],
            Target::Class(c) => *c as f64,
        })
        .collect();
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    Ok((labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / labels.len() as f64).sqrt())
}

// ---- 8: integrated gradients -------------------------------------------

fn smooth_network(seed: u64) -> (NetworkSpec, convgrid::ParamVector, LabeledSample, LossKind) {
    let mut rng = SplitMix64::new(seed);
    let act = |rng: &mut SplitMix64| ["sigmoid", "tanh"][rng.below(2)];
    let text = match rng.below(3) {
        0 => format!(
            "input:1:{}:2; conv:2:3:1:1:{}; pool:avg:2; flatten; dense:3:{}; dense:1:sigmoid",
            8 + rng.below(4),
            act(&mut rng),
            act(&mut rng)
        ),
        1 => format!(
            "input:2:6,{}:1; conv:3:3:0:1:{}; conv:2:2:0:1:{}; flatten; dense:1:sigmoid",
            5 + rng.below(3),
            act(&mut rng),
            act(&mut rng)
        ),
        _ => format!("input:3:4,4,4:2; conv:2:2:0:1:{}; flatten; dense:2:{}; dense:1:sigmoid", act(&mut rng), act(&mut rng)),
    };
    let spec: NetworkSpec = text.parse().unwrap();
    let theta = init_params(&spec, rng.next_u64(), InitScheme::UniformScaled);
    let len = spec.input_shape().len();
    let x = Grid::new(spec.input_shape().clone(), (0..len).map(|_| 1.5 * rng.normal()).collect()).unwrap();
    let (loss, target) = if rng.bernoulli(0.5) {
        (LossKind::BinaryCrossEntropy, Target::Class(rng.below(2)))
    } else {
        (LossKind::Mse, Target::Values(vec![rng.uniform(-1.0, 1.0)]))
    };
    (spec, theta, LabeledSample::new(x, target), loss)
}

fn ig_completeness() -> Result<Verdict, String> {
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for seed in 0..10 {
        let (spec, theta, sample, loss) = smooth_network(seed);
        let model = Model::new(spec.clone(), &theta).map_err(|e| e.to_string())?;
        let y = sample.target.to_vector(1).map_err(|e| e.to_string())?;
        let baseline = BaselineInput::zeros(sample.input.shape());
        let at = |g: &Grid| model.forward(g).map(|p| sample_loss(&p, &y, loss)).map_err(|e| e.to_string());
        let gap = at(&sample.input)? - at(&baseline.0)?;
        let mut last = f64::INFINITY;
        for m in [8, 16, 32, 64, 128, 256] {
            let field = integrated_gradients(&spec, &theta, &sample, &baseline, loss, m).map_err(|e| e.to_string())?;
            let residual = (field.sum() - gap).abs();
            monotone &= residual <= last || residual < 1e-12;
            last = residual;
        }
        worst = worst.max(last);
    }
    Ok(verdict(
        worst <= 1e-3 && monotone,
        format!("10 smooth networks, worst residual at m=256 {worst:.1e}, shrinking with m: {monotone}"),
    ))
}

// ---- 10: formats -------------------------------------------------------

fn format_round_trips() -> Result<Verdict, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let e = |x: convgrid::Error| x.to_string();
    let mut rng = SplitMix64::new(12);
    let mut ok = Vec::new();

    let g = Grid::new(Shape::new(vec![3, 4, 2], 2).unwrap(), (0..48).map(|_| rng.normal()).collect()).unwrap();
    g.save(dir.path().join("g.grd")).map_err(e)?;
    let disk = fs::read(dir.path().join("g.grd")).map_err(|x| x.to_string())?;
    let back = Grid::load(dir.path().join("g.grd")).map_err(e)?;
    ok.push(("grid", back == g && back.to_bytes().map_err(e)? == disk));

    let b = OperatorBank::new(2, 3, vec![2, 3], (0..36).map(|_| rng.normal()).collect()).map_err(e)?;
    b.save(dir.path().join("b.opb")).map_err(e)?;
    let disk = fs::read(dir.path().join("b.opb")).map_err(|x| x.to_string())?;
    ok.push(("bank", OperatorBank::load(dir.path().join("b.opb")).map_err(e)?.to_bytes().map_err(e)? == disk));

    for spec in ["faults2d:n=6,seed=2", "series1d:n=4,seed=2"] {
        let d = spec.parse::<SynthSpec>().map_err(e)?.generate();
        d.save(dir.path().join("d.dst")).map_err(e)?;
        let disk = fs::read(dir.path().join("d.dst")).map_err(|x| x.to_string())?;
        ok.push(("dataset", Dataset::load(dir.path().join("d.dst")).map_err(e)?.to_bytes().map_err(e)? == disk));
    }

    let spec: NetworkSpec = "input:2:6,6:2; conv:3:3:1:2:relu; pool:avg:2; flatten; dense:2:softmax".parse().map_err(e)?;
    let ck = Checkpoint::new(spec.clone(), init_params(&spec, 4, InitScheme::UniformScaled)).map_err(e)?;
    ck.save(dir.path().join("c.ckp")).map_err(e)?;
    let disk = fs::read(dir.path().join("c.ckp")).map_err(|x| x.to_string())?;
    let back = Checkpoint::load(dir.path().join("c.ckp")).map_err(e)?;
    ok.push(("checkpoint", back.params == ck.params && back.to_bytes().map_err(e)? == disk));

    let m = Grid::matrix(&[vec![0.0, 1.0, 2.0], vec![3.0, 4.0, 6.0]]).unwrap();
    let pgm = pgm_bytes(&m).map_err(e)?;
    let mut want = b"P5\n3 2\n255\n".to_vec();
    want.extend([0, 43, 85, 128, 170, 255]);
    ok.push(("pgm", pgm == want));

    let failed: Vec<&str> = ok.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Ok(verdict(failed.is_empty(), format!("{} byte-identical round trips, failed {failed:?}", ok.len())))
}

fn main() -> ExitCode {
    let mut all_pass = true;
    let mut report = |n: usize, name: &str, v: Result<Verdict, String>| {
        let v = v.unwrap_or_else(|msg| verdict(false, format!("error: {msg}")));
        all_pass &= v.pass;
        println!("{} criterion {n} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };
    report(1, "gradient soundness", gradient_soundness());
    report(2, "convolution oracle", oracle_equivalence());
    report(3, "named operators", operator_fidelity());
    report(4, "shape audit", shape_audit());

    let tasks = [edges_task(), series_task(), faults_task()];
    let first: Vec<_> = tasks.iter().map(|_| tempfile::tempdir().unwrap()).collect();
    let outcomes: Vec<_> = tasks.iter().zip(&first).map(|(t, d)| learn(d.path(), t, 4)).collect();

    report(
        5,
        "edges2d classification",
        outcomes[0].clone().and_then(|(secs, out)| {
            let acc = reported(&out, "accuracy")?;
            Ok(verdict(acc >= 0.95 && secs < 60.0, format!("held-out accuracy {acc:.3}, {secs:.1}s")))
        }),
    );
    report(
        6,
        "series1d regression",
        outcomes[1].clone().and_then(|(secs, out)| {
            let rmse = reported(&out, "rmse")?;
            let std = label_std(&first[1].path().join("test.dst"))?;
            Ok(verdict(
                rmse <= 0.1 * std && secs < 120.0,
                format!("held-out rmse {rmse:.4} vs label std {std:.4} (ratio {:.3}), {secs:.1}s", rmse / std),
            ))
        }),
    );
    report(
        7,
        "faults2d classification",
        outcomes[2].clone().and_then(|(secs, out)| {
            let acc = reported(&out, "accuracy")?;
            let matrix: Vec<&str> = out.lines().skip_while(|l| !l.starts_with("confusion")).collect();
            for line in &matrix {
                println!("    {line}");
            }
            Ok(verdict(
                acc >= 0.9 && matrix.len() == 5 && secs < 180.0,
                format!("held-out accuracy {acc:.3}, {secs:.1}s"),
            ))
        }),
    );
    report(8, "integrated gradients completeness", ig_completeness());

    let determinism = (|| {
        let mut same = Vec::new();
        for (t, d) in tasks.iter().zip(&first) {
            let again = tempfile::tempdir().map_err(|e| e.to_string())?;
            learn(again.path(), t, 1)?;
            for file in ["model.ckp", "model.ckp.csv"] {
                let a = fs::read(d.path().join(file)).map_err(|e| e.to_string())?;
                let b = fs::read(again.path().join(file)).map_err(|e| e.to_string())?;
                same.push(a == b);
            }
        }
        Ok(verdict(
            same.iter().all(|&s| s),
            format!("checkpoints and logs of 3 reruns on 1 vs 4 threads identical: {same:?}"),
        ))
    })();
    report(9, "determinism", determinism);
    report(10, "format round trips", format_round_trips());

    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
